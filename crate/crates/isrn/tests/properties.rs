//! Property tests for the structural invariants the rest of the system
//! leans on: sub-pixel shuffling is a bijection, the flip/rotation views
//! form a group with exact inverses, resampling weights are a partition of
//! unity, degraded outputs stay in range, and the metrics behave like
//! metrics.

use proptest::prelude::*;

use isrn::degrade::{bicubic_resize, degrade, DegradationSpec};
use isrn::metrics::{psnr, rmse, ssim};
use isrn::tensor::{pixel_shuffle_raw, pixel_unshuffle_raw, Dihedral, Shape, Tensor};

fn arb_tensor(c_max: usize, hw_max: usize) -> impl Strategy<Value = Tensor<f64>> {
    (1..=c_max, 1..=hw_max, 1..=hw_max)
        .prop_flat_map(|(c, h, w)| {
            proptest::collection::vec(0.0f64..1.0, c * h * w)
                .prop_map(move |data| Tensor::new(Shape::new(1, c, h, w), data).unwrap())
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pixel_shuffle_round_trips(r in 1usize..=4, t in arb_tensor(4, 6)) {
        // Give the tensor r*r times the channels so the shuffle is defined.
        let s = t.shape();
        let wide = Tensor::from_fn(Shape::new(s.n, s.c * r * r, s.h, s.w), |n, c, y, x| {
            t.at(n, c % s.c, y, x) + (c / s.c) as f64
        });
        let there = pixel_shuffle_raw(&wide, r).unwrap();
        prop_assert_eq!(there.shape(), Shape::new(s.n, s.c, s.h * r, s.w * r));
        let back = pixel_unshuffle_raw(&there, r).unwrap();
        prop_assert_eq!(back.data(), wide.data());
    }

    #[test]
    fn dihedral_inverse_is_exact(t in arb_tensor(3, 7), which in 0usize..8) {
        let d = Dihedral::all()[which];
        let viewed = t.dihedral(d);
        let back = viewed.dihedral(d.inverse());
        prop_assert_eq!(back.shape(), t.shape());
        prop_assert_eq!(back.data(), t.data());
    }

    #[test]
    fn resize_to_the_same_size_is_identity(t in arb_tensor(3, 7)) {
        let s = t.shape();
        let same = bicubic_resize(&t, s.h, s.w, false).unwrap();
        for (a, b) in t.data().iter().zip(same.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn degraded_images_stay_in_range(t in arb_tensor(3, 12), kind in 0usize..3) {
        // Channel count must be 3 and extents divisible by the scale.
        let s = t.shape();
        let spec = match kind {
            0 => DegradationSpec::bicubic(2),
            1 => DegradationSpec::blur_down(),
            _ => DegradationSpec::down_noise(),
        };
        let side = (s.h.max(4)).next_multiple_of(spec.scale).max(spec.scale * 2);
        let img = Tensor::from_fn(Shape::new(1, 3, side, side), |_, c, y, x| {
            t.at(0, c % s.c, y % s.h, x % s.w)
        });
        let lr = degrade(&img, &spec).unwrap();
        let (lo, hi) = lr.min_max();
        prop_assert!(lo >= 0.0 && hi <= 1.0, "out of range: [{}, {}]", lo, hi);
        prop_assert_eq!(lr.shape(), Shape::new(1, 3, side / spec.scale, side / spec.scale));
    }

    #[test]
    fn metrics_are_extremal_exactly_at_equality(
        pick in (0usize..2, 17usize..=24, 17usize..=24, any::<u64>()),
    ) {
        let (ci, h, w, seed) = pick;
        let c = [1, 3][ci];
        let mut state = seed;
        let mut next = move || {
            // SplitMix64 keeps the generator dependency-free here.
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            (z ^ (z >> 31)) as f64 / u64::MAX as f64
        };
        let t = Tensor::from_fn(Shape::new(1, c, h, w), |_, _, _, _| next());

        let p = psnr(&t, &t, 2).unwrap();
        prop_assert!(p.is_infinite() && p > 0.0);
        let v = ssim(&t, &t, 2).unwrap();
        prop_assert!((v - 1.0).abs() < 1e-12);
        prop_assert_eq!(rmse(&t, &t).unwrap(), 0.0);

        // Any perturbation strictly degrades all three.
        let other = t.map(|v| (v + 0.21).rem_euclid(1.0));
        let pd = psnr(&other, &t, 2).unwrap();
        prop_assert!(pd.is_finite());
        prop_assert!(rmse(&other, &t).unwrap() > 0.0);
    }
}
