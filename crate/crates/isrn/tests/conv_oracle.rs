//! Cross-checks the production convolution against a brute-force
//! direct-summation oracle over hundreds of randomized shapes covering
//! stride, padding, grouping, rectangular kernels and batching.

mod common;

use common::{conv2d_oracle, max_rel_err, random_conv_case};
use isrn::tensor::{conv2d, GradCell, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn conv2d_matches_brute_force_oracle_on_200_random_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DE);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let (x, w, b, spec) = random_conv_case(&mut rng);
        let expect = conv2d_oracle(&x, &w, &b, spec);

        let vx = Var::constant(x.clone());
        let vw = Var::constant(w.clone());
        let vb = Var::constant(b.clone());
        let got = conv2d(None, &vx, &vw, Some(&vb), spec)
            .unwrap_or_else(|e| panic!("case {case}: {spec:?} rejected: {e}"));

        let err = max_rel_err(got.value(), &expect);
        assert!(
            err < 1e-5,
            "case {case}: rel err {err:.3e} for {spec:?} on input {:?}",
            x.shape()
        );
        worst = worst.max(err);
    }
    println!("conv2d vs oracle: 200 cases, worst relative error {worst:.3e}");
}

#[test]
fn conv2d_without_bias_matches_oracle_with_zero_bias() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xB1A5);
    for case in 0..40 {
        let (x, w, b, spec) = random_conv_case(&mut rng);
        let zero_bias = b.map(|_| 0.0);
        let expect = conv2d_oracle(&x, &w, &zero_bias, spec);

        let got = conv2d(None, &Var::constant(x), &Var::constant(w), None, spec).unwrap();
        let err = max_rel_err(got.value(), &expect);
        assert!(err < 1e-5, "case {case}: rel err {err:.3e} for {spec:?}");
    }
}

#[test]
fn conv2d_taped_forward_matches_untaped() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let (x, w, b, spec) = random_conv_case(&mut rng);
        let plain = conv2d(
            None,
            &Var::constant(x.clone()),
            &Var::constant(w.clone()),
            Some(&Var::constant(b.clone())),
            spec,
        )
        .unwrap();

        let tape = Tape::new();
        let tx = tape.leaf(x.clone(), GradCell::new(x.shape()));
        let tw = tape.leaf(w.clone(), GradCell::new(w.shape()));
        let tb = tape.leaf(b.clone(), GradCell::new(b.shape()));
        let taped = conv2d(Some(&tape), &tx, &tw, Some(&tb), spec).unwrap();
        assert_eq!(plain.value().data(), taped.value().data());
    }
}
