//! Building blocks of the solver networks: plain convolutions, the
//! feature-normalization layer, the residual block built from it, the
//! padding unit and the long-skip group.
//!
//! Feature normalization (FN) replaces batch-style statistics with a
//! learned per-channel affine map: each feature map is filtered by its own
//! small kernel, shifted by a per-channel bias, and added back onto itself.
//! With the kernel and bias initialized to zero the layer starts as an
//! exact identity, so stacking many of them never destabilizes early
//! training.

use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::tensor::{
    conv2d, kaiming_uniform, relu, var_add, ConvSpec, Element, Parameter, Tape, Tensor, Var,
};

/// Kernel extent of the feature-normalization filter. Removing one FN layer
/// therefore saves exactly `channels * (FN_KERNEL^2 + 1)` parameters.
pub const FN_KERNEL: usize = 3;

/// A convolution layer: weight + per-channel bias + geometry.
pub struct Conv2d<E: Element> {
    weight: Arc<Parameter<E>>,
    bias: Arc<Parameter<E>>,
    spec: ConvSpec,
}

impl<E: Element> Conv2d<E> {
    /// Kaiming-uniform weight (fan-in of one output tap), zero bias.
    pub fn new(path: &str, spec: ConvSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.in_ch / spec.groups * spec.kh * spec.kw;
        Ok(Conv2d {
            weight: Parameter::new(
                format!("{path}.weight"),
                kaiming_uniform(rng, spec.weight_shape(), fan_in),
            ),
            bias: Parameter::new(format!("{path}.bias"), Tensor::zeros(spec.bias_shape())),
            spec,
        })
    }

    /// All-zero weight and bias; the FN layer starts life this way.
    pub fn zeroed(path: &str, spec: ConvSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Conv2d {
            weight: Parameter::new(
                format!("{path}.weight"),
                Tensor::zeros(spec.weight_shape()),
            ),
            bias: Parameter::new(format!("{path}.bias"), Tensor::zeros(spec.bias_shape())),
            spec,
        })
    }

    pub fn forward(&self, tape: Option<&Tape<E>>, x: &Var<E>) -> Result<Var<E>> {
        conv2d(
            tape,
            x,
            &self.weight.var(tape),
            Some(&self.bias.var(tape)),
            self.spec,
        )
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn collect_params(&self, out: &mut Vec<Arc<Parameter<E>>>) {
        out.push(self.weight.clone());
        out.push(self.bias.clone());
    }

    pub fn param_count(&self) -> usize {
        self.spec.param_count()
    }
}

// Every layer in this module is a stride-1, same-padded convolution, so
// spatial extents pass through unchanged and the MACs of a stack are just
// the sum over layers at the input resolution.

impl<E: Element> FnLayer<E> {
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.filter.spec().macs(h, w)
    }
}

impl<E: Element> FnBlock<E> {
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv1.spec().macs(h, w)
            + self.conv2.spec().macs(h, w)
            + self.fn_layer.as_ref().map_or(0, |f| f.macs(h, w))
    }
}

impl<E: Element> PaddingUnit<E> {
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv1.spec().macs(h, w)
            + self.conv2.spec().macs(h, w)
            + self.fn_layer.as_ref().map_or(0, |f| f.macs(h, w))
    }
}

impl<E: Element> FnGroup<E> {
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.blocks.iter().map(|b| b.macs(h, w)).sum::<u64>()
            + self.padding.as_ref().map_or(0, |p| p.macs(h, w))
    }
}

/// Feature normalization: `out = depthwise(x) + bias + x`. The depthwise
/// filter gives every channel its own `FN_KERNEL x FN_KERNEL` kernel
/// (channels never mix), and the trailing `+ x` makes the zero
/// initialization an identity.
pub struct FnLayer<E: Element> {
    filter: Conv2d<E>,
}

impl<E: Element> FnLayer<E> {
    pub fn new(path: &str, channels: usize) -> Result<Self> {
        Ok(FnLayer {
            filter: Conv2d::zeroed(path, ConvSpec::depthwise(channels, FN_KERNEL))?,
        })
    }

    pub fn forward(&self, tape: Option<&Tape<E>>, x: &Var<E>) -> Result<Var<E>> {
        let filtered = self.filter.forward(tape, x)?;
        var_add(tape, &filtered, x)
    }

    pub fn collect_params(&self, out: &mut Vec<Arc<Parameter<E>>>) {
        self.filter.collect_params(out);
    }

    pub fn param_count(&self) -> usize {
        self.filter.param_count()
    }
}

/// Residual block: conv → ReLU → conv → FN, added back onto the input.
/// `enable_fn: false` drops the FN layer (ablation switch).
pub struct FnBlock<E: Element> {
    conv1: Conv2d<E>,
    conv2: Conv2d<E>,
    fn_layer: Option<FnLayer<E>>,
}

impl<E: Element> FnBlock<E> {
    pub fn new(path: &str, channels: usize, enable_fn: bool, rng: &mut impl Rng) -> Result<Self> {
        Ok(FnBlock {
            conv1: Conv2d::new(&format!("{path}.conv1"), ConvSpec::same(channels, channels, 3), rng)?,
            conv2: Conv2d::new(&format!("{path}.conv2"), ConvSpec::same(channels, channels, 3), rng)?,
            fn_layer: enable_fn
                .then(|| FnLayer::new(&format!("{path}.fn"), channels))
                .transpose()?,
        })
    }

    pub fn forward(&self, tape: Option<&Tape<E>>, x: &Var<E>) -> Result<Var<E>> {
        let mut h = self.conv1.forward(tape, x)?;
        h = relu(tape, &h)?;
        h = self.conv2.forward(tape, &h)?;
        if let Some(fn_layer) = &self.fn_layer {
            h = fn_layer.forward(tape, &h)?;
        }
        var_add(tape, &h, x)
    }

    pub fn collect_params(&self, out: &mut Vec<Arc<Parameter<E>>>) {
        self.conv1.collect_params(out);
        self.conv2.collect_params(out);
        if let Some(f) = &self.fn_layer {
            f.collect_params(out);
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.conv2.param_count()
            + self.fn_layer.as_ref().map_or(0, |f| f.param_count())
    }
}

/// Tail unit of a group: the same conv → ReLU → conv → FN stack as a block
/// but without the block-level skip (the group's long skip bypasses it).
/// Because FN itself ends in `+ input`, a zero-initialized padding unit
/// still passes its input's filtered features straight through.
pub struct PaddingUnit<E: Element> {
    conv1: Conv2d<E>,
    conv2: Conv2d<E>,
    fn_layer: Option<FnLayer<E>>,
}

impl<E: Element> PaddingUnit<E> {
    pub fn new(path: &str, channels: usize, enable_fn: bool, rng: &mut impl Rng) -> Result<Self> {
        Ok(PaddingUnit {
            conv1: Conv2d::new(&format!("{path}.conv1"), ConvSpec::same(channels, channels, 3), rng)?,
            conv2: Conv2d::new(&format!("{path}.conv2"), ConvSpec::same(channels, channels, 3), rng)?,
            fn_layer: enable_fn
                .then(|| FnLayer::new(&format!("{path}.fn"), channels))
                .transpose()?,
        })
    }

    pub fn forward(&self, tape: Option<&Tape<E>>, x: &Var<E>) -> Result<Var<E>> {
        let mut h = self.conv1.forward(tape, x)?;
        h = relu(tape, &h)?;
        h = self.conv2.forward(tape, &h)?;
        match &self.fn_layer {
            Some(fn_layer) => fn_layer.forward(tape, &h),
            None => Ok(h),
        }
    }

    pub fn collect_params(&self, out: &mut Vec<Arc<Parameter<E>>>) {
        self.conv1.collect_params(out);
        self.conv2.collect_params(out);
        if let Some(f) = &self.fn_layer {
            f.collect_params(out);
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.conv2.param_count()
            + self.fn_layer.as_ref().map_or(0, |f| f.param_count())
    }
}

/// `n` residual blocks, an optional padding unit, and a long skip from the
/// group input to its output.
pub struct FnGroup<E: Element> {
    blocks: Vec<FnBlock<E>>,
    padding: Option<PaddingUnit<E>>,
}

impl<E: Element> FnGroup<E> {
    pub fn new(
        path: &str,
        channels: usize,
        n_blocks: usize,
        enable_fn: bool,
        enable_padding: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let blocks = (0..n_blocks)
            .map(|i| FnBlock::new(&format!("{path}.block{i}"), channels, enable_fn, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(FnGroup {
            blocks,
            padding: enable_padding
                .then(|| PaddingUnit::new(&format!("{path}.padding"), channels, enable_fn, rng))
                .transpose()?,
        })
    }

    pub fn forward(&self, tape: Option<&Tape<E>>, x: &Var<E>) -> Result<Var<E>> {
        let mut h = x.clone();
        for block in &self.blocks {
            h = block.forward(tape, &h)?;
        }
        if let Some(padding) = &self.padding {
            h = padding.forward(tape, &h)?;
        }
        var_add(tape, &h, x)
    }

    pub fn collect_params(&self, out: &mut Vec<Arc<Parameter<E>>>) {
        for b in &self.blocks {
            b.collect_params(out);
        }
        if let Some(p) = &self.padding {
            p.collect_params(out);
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.param_count()).sum::<usize>()
            + self.padding.as_ref().map_or(0, |p| p.param_count())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn random_input(c: usize) -> Var<f64> {
        let mut r = ChaCha8Rng::seed_from_u64(9);
        Var::constant(Tensor::from_fn(Shape::new(1, c, 5, 6), |_, _, _, _| {
            r.random::<f64>() - 0.3
        }))
    }

    /// Set every parameter of a submodule to zero.
    fn zero_all(params: &[Arc<Parameter<f64>>]) {
        for p in params {
            p.set_value(Tensor::zeros(p.shape())).unwrap();
        }
    }

    #[test]
    fn block_and_group_parameter_counts_match_the_closed_form() {
        // Two 64->64 3x3 convs with bias plus one FN layer:
        // 2*(64*64*9 + 64) + 64*(9 + 1) = 74_496.
        let b = FnBlock::<f32>::new("b", 64, true, &mut rng()).unwrap();
        assert_eq!(b.param_count(), 74_496);
        // Dropping FN saves exactly channels*(k^2+1) = 640.
        let b_no_fn = FnBlock::<f32>::new("b", 64, false, &mut rng()).unwrap();
        assert_eq!(b.param_count() - b_no_fn.param_count(), 64 * (FN_KERNEL * FN_KERNEL + 1));
        // The padding unit has the same stack, so the same count.
        let p = PaddingUnit::<f32>::new("p", 64, true, &mut rng()).unwrap();
        assert_eq!(p.param_count(), 74_496);
        // Six blocks + padding unit: 7 * 74_496 = 521_472.
        let g = FnGroup::<f32>::new("g", 64, 6, true, true, &mut rng()).unwrap();
        assert_eq!(g.param_count(), 521_472);
        // collect_params agrees with the closed-form count.
        let mut params = Vec::new();
        g.collect_params(&mut params);
        assert_eq!(params.iter().map(|p| p.numel()).sum::<usize>(), 521_472);
    }

    #[test]
    fn fn_layer_is_an_exact_identity_at_initialization() {
        let layer = FnLayer::<f64>::new("fn", 4).unwrap();
        let x = random_input(4);
        let y = layer.forward(None, &x).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn fn_layer_keeps_channels_independent() {
        let layer = FnLayer::<f64>::new("fn", 3).unwrap();
        let mut params = Vec::new();
        layer.collect_params(&mut params);
        // Give every channel a distinct nonzero kernel and bias.
        let mut r = rng();
        for p in &params {
            let shape = p.shape();
            p.set_value(Tensor::from_fn(shape, |_, _, _, _| r.random::<f64>())).unwrap();
        }
        let a = random_input(3);
        // Perturb only channel 1.
        let b = Var::constant(Tensor::from_fn(a.value().shape(), |n, c, y, x| {
            a.value().at(n, c, y, x) + if c == 1 { 0.5 } else { 0.0 }
        }));
        let ya = layer.forward(None, &a).unwrap();
        let yb = layer.forward(None, &b).unwrap();
        let shape = ya.value().shape();
        for c in 0..shape.c {
            let changed = (0..shape.h).any(|y| {
                (0..shape.w).any(|x| ya.value().at(0, c, y, x) != yb.value().at(0, c, y, x))
            });
            assert_eq!(changed, c == 1, "channel {c} leaked across the depthwise filter");
        }
    }

    #[test]
    fn zeroed_block_passes_its_input_through() {
        let block = FnBlock::<f64>::new("b", 4, true, &mut rng()).unwrap();
        let mut params = Vec::new();
        block.collect_params(&mut params);
        zero_all(&params);
        let x = random_input(4);
        let y = block.forward(None, &x).unwrap();
        assert_eq!(y.value().data(), x.value().data());
    }

    #[test]
    fn zeroed_group_reduces_to_its_long_skip_plus_bias_path() {
        let group = FnGroup::<f64>::new("g", 4, 2, true, true, &mut rng()).unwrap();
        let mut params = Vec::new();
        group.collect_params(&mut params);
        zero_all(&params);
        let x = random_input(4);
        // All-zero weights: blocks pass through, the padding unit emits
        // zero, and the long skip returns x exactly.
        let y = group.forward(None, &x).unwrap();
        assert_eq!(y.value().data(), x.value().data());
        // A nonzero bias in the padding unit's last conv rides on top of
        // the skip: output = x + bias (FN is still an identity).
        let bias = params
            .iter()
            .find(|p| p.path() == "g.padding.conv2.bias")
            .unwrap();
        bias.set_value(Tensor::full(bias.shape(), 0.125)).unwrap();
        let y2 = group.forward(None, &x).unwrap();
        let expect = x.value().map(|v| v + 0.125);
        assert_eq!(y2.value().data(), expect.data());
    }

    #[test]
    fn group_output_shape_matches_input() {
        let group = FnGroup::<f32>::new("g", 8, 2, true, true, &mut rng()).unwrap();
        let x = Var::constant(Tensor::<f32>::zeros(Shape::new(2, 8, 7, 9)));
        let y = group.forward(None, &x).unwrap();
        assert_eq!(y.value().shape(), Shape::new(2, 8, 7, 9));
    }
}
