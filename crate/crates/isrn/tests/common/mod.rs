//! Shared helpers for the integration tests: a brute-force convolution
//! oracle written as plain nested loops (no im2col, no GEMM, nothing shared
//! with the library's kernel) and a generator of small randomized
//! convolution cases.

use rand::Rng;

use isrn::tensor::{ConvSpec, Shape, Tensor};

/// Direct-summation cross-correlation. Deliberately the naive definition:
/// for every output element, loop over the group's input channels and the
/// kernel window, reading zeros outside the padded input.
pub fn conv2d_oracle(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    spec: ConvSpec,
) -> Tensor<f64> {
    let xs = x.shape();
    let (oh, ow) = spec.out_dims(xs.h, xs.w).expect("window fits");
    let icg = spec.in_ch / spec.groups;
    let ocg = spec.out_ch / spec.groups;
    Tensor::from_fn(Shape::new(xs.n, spec.out_ch, oh, ow), |n, oc, oy, ox| {
        let g = oc / ocg;
        let mut acc = b.at(0, oc, 0, 0);
        for ic in 0..icg {
            for ky in 0..spec.kh {
                for kx in 0..spec.kw {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                    if iy < 0 || ix < 0 || iy >= xs.h as isize || ix >= xs.w as isize {
                        continue;
                    }
                    acc += x.at(n, g * icg + ic, iy as usize, ix as usize)
                        * w.at(oc, ic, ky, kx);
                }
            }
        }
        acc
    })
}

/// One randomized case: a valid spec with every extent at most 8, plus
/// matching input, weight and bias tensors filled with signed values.
pub fn random_conv_case(rng: &mut impl Rng) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>, ConvSpec) {
    loop {
        let groups = [1, 1, 1, 2, 4][rng.random_range(0..5)];
        let icg = rng.random_range(1..=8 / groups);
        let ocg = rng.random_range(1..=8 / groups);
        let kh = rng.random_range(1..=5);
        let kw = rng.random_range(1..=5);
        let spec = ConvSpec {
            in_ch: groups * icg,
            out_ch: groups * ocg,
            kh,
            kw,
            stride: rng.random_range(1..=kh.min(kw).min(3)),
            pad: rng.random_range(0..=2),
            groups,
        };
        if spec.validate().is_err() {
            continue;
        }
        let n = rng.random_range(1..=2);
        let h = rng.random_range(1..=8);
        let w = rng.random_range(1..=8);
        if spec.out_dims(h, w).is_err() {
            continue;
        }
        let mut fill = |shape: Shape| {
            let data: Vec<f64> = (0..shape.numel()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            Tensor::new(shape, data).expect("sized")
        };
        let x = fill(Shape::new(n, spec.in_ch, h, w));
        let wt = fill(spec.weight_shape());
        let bias = fill(spec.bias_shape());
        return (x, wt, bias, spec);
    }
}

/// Largest relative elementwise difference, with an absolute floor of 1 in
/// the denominator so near-zero values compare absolutely.
pub fn max_rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| (p - q).abs() / 1.0f64.max(p.abs()).max(q.abs()))
        .fold(0.0, f64::max)
}
