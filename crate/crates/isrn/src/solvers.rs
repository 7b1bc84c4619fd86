//! The four sub-networks the iteration loop is assembled from.
//!
//! * [`SolverSr`] — maps the running low-resolution state to a
//!   high-resolution estimate. One deep feature trunk plus a shallow
//!   learned-interpolation bypass; both end in a sub-pixel shuffle.
//! * [`DownSampler`] — a learned projection of a high-resolution estimate
//!   back onto the low-resolution grid.
//! * [`SolverLr`] — refines the running low-resolution state from the
//!   projected estimate and the original observation.
//! * [`SolverMle`] — fuses the per-iteration high-resolution estimates into
//!   the final image.
//!
//! Every convolution is 3x3 except the bypass and the layers that run after
//! the sub-pixel shuffle, which are 5x5 to keep a useful receptive field at
//! the finer pixel pitch.

use std::sync::Arc;

use rand::Rng;

use crate::blocks::{Conv2d, FnGroup};
use crate::error::{Error, Result};
use crate::tensor::{
    concat_channels, pixel_shuffle, relu, var_add, ConvSpec, Element, Parameter, Tape, Var,
};

/// Deep solver producing a high-resolution proposal from the current
/// low-resolution state. Shared across all iterations of the loop.
pub struct SolverSr<E: Element> {
    head: Conv2d<E>,
    groups: Vec<FnGroup<E>>,
    tail1: Conv2d<E>,
    tail2: Conv2d<E>,
    post: Conv2d<E>,
    bypass1: Conv2d<E>,
    bypass2: Conv2d<E>,
    scale: usize,
}

impl<E: Element> SolverSr<E> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        path: &str,
        scale: usize,
        channels: usize,
        n_blocks: usize,
        n_groups: usize,
        enable_fn: bool,
        enable_padding: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let up = 3 * scale * scale;
        let groups = (0..n_groups)
            .map(|i| {
                FnGroup::new(
                    &format!("{path}.group{i}"),
                    channels,
                    n_blocks,
                    enable_fn,
                    enable_padding,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SolverSr {
            head: Conv2d::new(&format!("{path}.head"), ConvSpec::same(3, channels, 3), rng)?,
            groups,
            tail1: Conv2d::new(&format!("{path}.tail1"), ConvSpec::same(channels, channels, 3), rng)?,
            tail2: Conv2d::new(&format!("{path}.tail2"), ConvSpec::same(channels, up, 3), rng)?,
            post: Conv2d::new(&format!("{path}.post"), ConvSpec::same(3, 3, 5), rng)?,
            bypass1: Conv2d::new(&format!("{path}.bypass1"), ConvSpec::same(3, up, 5), rng)?,
            bypass2: Conv2d::new(&format!("{path}.bypass2"), ConvSpec::same(3, 3, 5), rng)?,
            scale,
        })
    }

    /// `(n, 3, h, w)` → `(n, 3, scale*h, scale*w)`.
    pub fn forward(&self, tape: Option<&Tape<E>>, u: &Var<E>) -> Result<Var<E>> {
        let mut f = self.head.forward(tape, u)?;
        for group in &self.groups {
            f = group.forward(tape, &f)?;
        }
        let mut t = self.tail1.forward(tape, &f)?;
        t = self.tail2.forward(tape, &t)?;
        t = pixel_shuffle(tape, &t, self.scale)?;
        t = self.post.forward(tape, &t)?;

        let mut b = self.bypass1.forward(tape, u)?;
        b = pixel_shuffle(tape, &b, self.scale)?;
        b = self.bypass2.forward(tape, &b)?;
        var_add(tape, &t, &b)
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn collect_params(&self, out: &mut Vec<Arc<Parameter<E>>>) {
        self.head.collect_params(out);
        for g in &self.groups {
            g.collect_params(out);
        }
        for c in [&self.tail1, &self.tail2, &self.post, &self.bypass1, &self.bypass2] {
            c.collect_params(out);
        }
    }

    pub fn param_count(&self) -> usize {
        self.head.param_count()
            + self.groups.iter().map(|g| g.param_count()).sum::<usize>()
            + self.tail1.param_count()
            + self.tail2.param_count()
            + self.post.param_count()
            + self.bypass1.param_count()
            + self.bypass2.param_count()
    }

    /// Forward-pass multiply-accumulates for an `h x w` low-resolution
    /// input. Mirrors `forward` layer by layer: the trunk runs at the input
    /// resolution, `post` and `bypass2` after the shuffle.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (sh, sw) = (h * self.scale, w * self.scale);
        let mut total = self.head.spec().macs(h, w);
        for g in &self.groups {
            total += g.macs(h, w);
        }
        total += self.tail1.spec().macs(h, w) + self.tail2.spec().macs(h, w);
        total += self.post.spec().macs(sh, sw);
        total += self.bypass1.spec().macs(h, w) + self.bypass2.spec().macs(sh, sw);
        total
    }
}

/// Learned projection from the high-resolution estimate back to the
/// low-resolution grid: two feature extractors (a composed 5x5 receptive
/// field), then two strided convolutions that realize the decimation. The
/// final layer is linear so the simulated observation keeps full range.
pub struct DownSampler<E: Element> {
    conv1: Conv2d<E>,
    conv2: Conv2d<E>,
    conv3: Conv2d<E>,
    conv4: Conv2d<E>,
    scale: usize,
}

impl<E: Element> DownSampler<E> {
    /// Stride split per scale: x2 and x3 decimate entirely on the first
    /// strided layer; x4 splits into 2 * 2.
    fn strides(scale: usize) -> Result<(usize, usize)> {
        match scale {
            2 => Ok((2, 1)),
            3 => Ok((3, 1)),
            4 => Ok((2, 2)),
            _ => Err(Error::InvalidArgument(format!(
                "unsupported down-sampling scale {scale}"
            ))),
        }
    }

    pub fn new(path: &str, scale: usize, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        let (s3, s4) = Self::strides(scale)?;
        Ok(DownSampler {
            conv1: Conv2d::new(&format!("{path}.conv1"), ConvSpec::same(3, channels, 3), rng)?,
            conv2: Conv2d::new(&format!("{path}.conv2"), ConvSpec::same(channels, channels, 3), rng)?,
            conv3: Conv2d::new(
                &format!("{path}.conv3"),
                ConvSpec::same(channels, channels, 3).with_stride(s3),
                rng,
            )?,
            conv4: Conv2d::new(
                &format!("{path}.conv4"),
                ConvSpec::same(channels, 3, 3).with_stride(s4),
                rng,
            )?,
            scale,
        })
    }

    /// `(n, 3, scale*h, scale*w)` → `(n, 3, h, w)`.
    pub fn forward(&self, tape: Option<&Tape<E>>, x: &Var<E>) -> Result<Var<E>> {
        let s = x.value().shape();
        if !s.h.is_multiple_of(self.scale) || !s.w.is_multiple_of(self.scale) {
            return Err(Error::InvalidArgument(format!(
                "down-sampler by {} needs extents divisible by it, got {s}",
                self.scale
            )));
        }
        let mut h = self.conv1.forward(tape, x)?;
        h = self.conv2.forward(tape, &h)?;
        h = self.conv3.forward(tape, &h)?;
        h = relu(tape, &h)?;
        self.conv4.forward(tape, &h)
    }

    pub fn collect_params(&self, out: &mut Vec<Arc<Parameter<E>>>) {
        for c in [&self.conv1, &self.conv2, &self.conv3, &self.conv4] {
            c.collect_params(out);
        }
    }

    pub fn param_count(&self) -> usize {
        [&self.conv1, &self.conv2, &self.conv3, &self.conv4]
            .iter()
            .map(|c| c.param_count())
            .sum()
    }

    /// MACs for a `sh x sw` high-resolution input (must be divisible by the
    /// scale). Spatial extents shrink at the strided layers.
    pub fn macs(&self, sh: usize, sw: usize) -> u64 {
        let (s3, s4) = Self::strides(self.scale).expect("validated at construction");
        let mut total = self.conv1.spec().macs(sh, sw) + self.conv2.spec().macs(sh, sw);
        let (h3, w3) = (sh / s3, sw / s3);
        total += self.conv3.spec().macs(h3, w3);
        total += self.conv4.spec().macs(h3 / s4, w3 / s4);
        total
    }
}

/// Corrector for the running low-resolution state. Input is the projected
/// estimate stacked with the original observation (6 channels).
pub struct SolverLr<E: Element> {
    conv1: Conv2d<E>,
    conv2: Conv2d<E>,
    conv3: Conv2d<E>,
}

impl<E: Element> SolverLr<E> {
    pub fn new(path: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(SolverLr {
            conv1: Conv2d::new(&format!("{path}.conv1"), ConvSpec::same(6, channels, 3), rng)?,
            conv2: Conv2d::new(&format!("{path}.conv2"), ConvSpec::same(channels, channels, 3), rng)?,
            conv3: Conv2d::new(&format!("{path}.conv3"), ConvSpec::same(channels, 3, 3), rng)?,
        })
    }

    /// `(n, 3, h, w)` projected estimate + `(n, 3, h, w)` observation →
    /// `(n, 3, h, w)` refined state.
    pub fn forward(
        &self,
        tape: Option<&Tape<E>>,
        projected: &Var<E>,
        observation: &Var<E>,
    ) -> Result<Var<E>> {
        let x = concat_channels(tape, &[projected.clone(), observation.clone()])?;
        let mut h = self.conv1.forward(tape, &x)?;
        h = self.conv2.forward(tape, &h)?;
        h = relu(tape, &h)?;
        self.conv3.forward(tape, &h)
    }

    pub fn collect_params(&self, out: &mut Vec<Arc<Parameter<E>>>) {
        for c in [&self.conv1, &self.conv2, &self.conv3] {
            c.collect_params(out);
        }
    }

    pub fn param_count(&self) -> usize {
        [&self.conv1, &self.conv2, &self.conv3]
            .iter()
            .map(|c| c.param_count())
            .sum()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        [&self.conv1, &self.conv2, &self.conv3]
            .iter()
            .map(|c| c.spec().macs(h, w))
            .sum()
    }
}

/// Fusion head: combines the `k` per-iteration estimates (stacked along
/// channels) into the output image. Its input width hard-wires `k`, which
/// is why the iteration count of a trained model is fixed.
pub struct SolverMle<E: Element> {
    conv1: Conv2d<E>,
    conv2: Conv2d<E>,
    iterations: usize,
}

impl<E: Element> SolverMle<E> {
    pub fn new(path: &str, iterations: usize, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(SolverMle {
            conv1: Conv2d::new(
                &format!("{path}.conv1"),
                ConvSpec::same(3 * iterations, channels, 3),
                rng,
            )?,
            conv2: Conv2d::new(&format!("{path}.conv2"), ConvSpec::same(channels, 3, 3), rng)?,
            iterations,
        })
    }

    pub fn forward(&self, tape: Option<&Tape<E>>, estimates: &[Var<E>]) -> Result<Var<E>> {
        if estimates.len() != self.iterations {
            return Err(Error::ShapeMismatch(format!(
                "fusion head was built for {} estimates, got {}",
                self.iterations,
                estimates.len()
            )));
        }
        let x = concat_channels(tape, estimates)?;
        let mut h = self.conv1.forward(tape, &x)?;
        h = relu(tape, &h)?;
        self.conv2.forward(tape, &h)
    }

    pub fn collect_params(&self, out: &mut Vec<Arc<Parameter<E>>>) {
        self.conv1.collect_params(out);
        self.conv2.collect_params(out);
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv1.spec().macs(h, w) + self.conv2.spec().macs(h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Shape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    #[test]
    fn solver_sr_parameter_count_at_full_width() {
        // head 1_792 + 6 groups * 521_472 + tail 36_928 + 27_696 + post 228
        // + bypass 3_648 + 228 = 3_199_352 for x4.
        let s = SolverSr::<f32>::new("sr", 4, 64, 6, 6, true, true, &mut rng()).unwrap();
        assert_eq!(s.param_count(), 3_199_352);
        let mut params = Vec::new();
        s.collect_params(&mut params);
        assert_eq!(params.iter().map(|p| p.numel()).sum::<usize>(), 3_199_352);
    }

    #[test]
    fn solver_sr_upscales_by_its_scale() {
        for scale in [2, 3, 4] {
            let s = SolverSr::<f32>::new("sr", scale, 8, 1, 1, true, true, &mut rng()).unwrap();
            let x = Var::constant(Tensor::zeros(Shape::new(1, 3, 6, 5)));
            let y = s.forward(None, &x).unwrap();
            assert_eq!(y.value().shape(), Shape::new(1, 3, 6 * scale, 5 * scale));
        }
    }

    #[test]
    fn down_sampler_parameter_count_and_shapes() {
        // 3->32: 896, 32->32: 9_248 twice, 32->3: 867 — total 20_259.
        let d = DownSampler::<f32>::new("d", 4, 32, &mut rng()).unwrap();
        assert_eq!(d.param_count(), 20_259);
        for scale in [2, 3, 4] {
            let d = DownSampler::<f32>::new("d", scale, 8, &mut rng()).unwrap();
            let x = Var::constant(Tensor::zeros(Shape::new(1, 3, 12 * scale, 24 * scale)));
            let y = d.forward(None, &x).unwrap();
            assert_eq!(y.value().shape(), Shape::new(1, 3, 12, 24), "scale {scale}");
        }
        // Extents not divisible by the scale are rejected up front.
        let d3 = DownSampler::<f32>::new("d", 3, 8, &mut rng()).unwrap();
        let bad = Var::constant(Tensor::<f32>::zeros(Shape::new(1, 3, 10, 9)));
        assert!(d3.forward(None, &bad).is_err());
        assert!(DownSampler::<f32>::new("d", 5, 8, &mut rng()).is_err());
    }

    #[test]
    fn lr_solver_and_fusion_head_counts() {
        // 6*64*9+64 + 64*64*9+64 + 64*3*9+3 = 42_179.
        let lr = SolverLr::<f32>::new("lr", 64, &mut rng()).unwrap();
        assert_eq!(lr.param_count(), 42_179);
        // 15*64*9+64 + 64*3*9+3 = 10_435 for five iterations.
        let mle = SolverMle::<f32>::new("mle", 5, 64, &mut rng()).unwrap();
        assert_eq!(mle.param_count(), 10_435);
    }

    #[test]
    fn fusion_head_rejects_the_wrong_number_of_estimates() {
        let mle = SolverMle::<f32>::new("mle", 3, 8, &mut rng()).unwrap();
        let est = Var::constant(Tensor::<f32>::zeros(Shape::new(1, 3, 4, 4)));
        assert!(mle.forward(None, &[est.clone(), est.clone()]).is_err());
        let y = mle.forward(None, &[est.clone(), est.clone(), est]).unwrap();
        assert_eq!(y.value().shape(), Shape::new(1, 3, 4, 4));
    }

    #[test]
    fn lr_solver_consumes_estimate_and_observation() {
        let lr = SolverLr::<f32>::new("lr", 8, &mut rng()).unwrap();
        let a = Var::constant(Tensor::<f32>::zeros(Shape::new(2, 3, 5, 7)));
        let b = Var::constant(Tensor::<f32>::zeros(Shape::new(2, 3, 5, 7)));
        let y = lr.forward(None, &a, &b).unwrap();
        assert_eq!(y.value().shape(), Shape::new(2, 3, 5, 7));
    }
}
