//! Differentiable operations: convolution, ReLU, sub-pixel shuffle, channel
//! concatenation, residual addition and the l1 objective.
//!
//! Each operation computes its value eagerly, and — when a tape is supplied
//! and at least one input is tracked — appends a node whose closure turns
//! the output gradient into input gradients. Convolution is the only
//! non-trivial kernel: it lowers every `(sample, group)` pair to an im2col
//! matrix so both directions become small GEMMs. Parallelism is only over
//! disjoint output rows, so results are bit-identical regardless of thread
//! count.

use rayon::prelude::*;

use super::{Element, Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Geometry of a 2-D cross-correlation.
///
/// Weights are laid out `(out_ch, in_ch / groups, kh, kw)`; the bias is one
/// value per output channel, stored as a `1 x out_ch x 1 x 1` tensor.
/// Padding is zero-filled and applied symmetrically.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Square `k x k` kernel, stride 1, "same" zero padding, one group —
    /// the shape of almost every convolution in the model.
    pub fn same(in_ch: usize, out_ch: usize, k: usize) -> Self {
        ConvSpec {
            in_ch,
            out_ch,
            kh: k,
            kw: k,
            stride: 1,
            pad: k / 2,
            groups: 1,
        }
    }

    /// Depthwise variant: every channel is filtered independently.
    pub fn depthwise(channels: usize, k: usize) -> Self {
        ConvSpec {
            in_ch: channels,
            out_ch: channels,
            kh: k,
            kw: k,
            stride: 1,
            pad: k / 2,
            groups: channels,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.in_ch == 0 || self.out_ch == 0 || self.kh == 0 || self.kw == 0 {
            return bad(format!("degenerate convolution spec {self:?}"));
        }
        if self.groups == 0 || !self.in_ch.is_multiple_of(self.groups) || !self.out_ch.is_multiple_of(self.groups) {
            return bad(format!(
                "groups={} must divide in_ch={} and out_ch={}",
                self.groups, self.in_ch, self.out_ch
            ));
        }
        if self.stride == 0 {
            return bad("stride must be at least 1".into());
        }
        // A stride beyond the kernel extent would skip input pixels entirely.
        if self.stride > self.kh.max(self.kw) {
            return bad(format!(
                "stride {} exceeds kernel {}x{}",
                self.stride, self.kh, self.kw
            ));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(self.out_ch, self.in_ch / self.groups, self.kh, self.kw)
    }

    pub fn bias_shape(&self) -> Shape {
        Shape::new(1, self.out_ch, 1, 1)
    }

    /// Output extents for an `ih x iw` input, or an error if the window
    /// never fits.
    pub fn out_dims(&self, ih: usize, iw: usize) -> Result<(usize, usize)> {
        let span_h = ih + 2 * self.pad;
        let span_w = iw + 2 * self.pad;
        if span_h < self.kh || span_w < self.kw {
            return Err(Error::InvalidArgument(format!(
                "input {ih}x{iw} with padding {} is smaller than the {}x{} kernel",
                self.pad, self.kh, self.kw
            )));
        }
        Ok((
            (span_h - self.kh) / self.stride + 1,
            (span_w - self.kw) / self.stride + 1,
        ))
    }

    /// Multiply-accumulate count for one forward pass producing `oh x ow`
    /// output: every output element reads `in_ch/groups * kh * kw` taps.
    pub fn macs(&self, oh: usize, ow: usize) -> u64 {
        (self.out_ch * oh * ow) as u64 * (self.in_ch / self.groups * self.kh * self.kw) as u64
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().numel() + self.out_ch
    }
}

// ---------------------------------------------------------------------------
// GEMM kernels. Row-major, `c += a * b`, parallel only across rows of `c`
// so the accumulation order per element never depends on thread count.
// ---------------------------------------------------------------------------

const PAR_GEMM_WORK: usize = 1 << 18;

fn gemm<E: Element>(m: usize, k: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let row = |crow: &mut [E], arow: &[E]| {
        for (p, &av) in arow.iter().enumerate() {
            if av == E::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if m > 1 && m * k * n >= PAR_GEMM_WORK {
        c.par_chunks_mut(n)
            .zip(a.par_chunks(k))
            .for_each(|(crow, arow)| row(crow, arow));
    } else {
        for (crow, arow) in c.chunks_mut(n).zip(a.chunks(k)) {
            row(crow, arow);
        }
    }
}

/// `c += a * b^T` where both `a` (`m x p`) and `b` (`n x p`) are row-major:
/// each output element is a dot product of two contiguous rows.
fn gemm_abt<E: Element>(m: usize, p: usize, n: usize, a: &[E], b: &[E], c: &mut [E]) {
    debug_assert_eq!(a.len(), m * p);
    debug_assert_eq!(b.len(), n * p);
    debug_assert_eq!(c.len(), m * n);
    let row = |crow: &mut [E], arow: &[E]| {
        for (cv, brow) in crow.iter_mut().zip(b.chunks(p)) {
            let mut acc = E::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *cv += acc;
        }
    };
    if m > 1 && m * p * n >= PAR_GEMM_WORK {
        c.par_chunks_mut(n)
            .zip(a.par_chunks(p))
            .for_each(|(crow, arow)| row(crow, arow));
    } else {
        for (crow, arow) in c.chunks_mut(n).zip(a.chunks(p)) {
            row(crow, arow);
        }
    }
}

// ---------------------------------------------------------------------------
// im2col lowering.
// ---------------------------------------------------------------------------

/// Write the unrolled patch matrix for `(sample n, group g)` into `cols`,
/// shaped `(cin_g * kh * kw) x (oh * ow)` row-major. Out-of-image taps stay
/// zero (the caller hands in a zeroed buffer).
fn im2col<E: Element>(
    x: &Tensor<E>,
    n: usize,
    g: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    cols: &mut [E],
) {
    let s = x.shape();
    let (ih, iw) = (s.h, s.w);
    let cin_g = spec.in_ch / spec.groups;
    let ohw = oh * ow;
    let data = x.data();
    for ci in 0..cin_g {
        let channel = g * cin_g + ci;
        for ky in 0..spec.kh {
            for kx in 0..spec.kw {
                let row = ((ci * spec.kh + ky) * spec.kw + kx) * ohw;
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    let src_row = s.index(n, channel, iy as usize, 0);
                    let dst_row = row + oy * ow;
                    if spec.stride == 1 {
                        // Contiguous span: ox and ix advance in lockstep.
                        let ox_lo = spec.pad.saturating_sub(kx);
                        let ox_hi = ow.min(iw + spec.pad - kx);
                        if ox_lo < ox_hi {
                            let ix_lo = ox_lo + kx - spec.pad;
                            cols[dst_row + ox_lo..dst_row + ox_hi].copy_from_slice(
                                &data[src_row + ix_lo..src_row + ix_lo + (ox_hi - ox_lo)],
                            );
                        }
                    } else {
                        for ox in 0..ow {
                            let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                            if ix >= 0 && ix < iw as isize {
                                cols[dst_row + ox] = data[src_row + ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the column matrix back onto the input image — the adjoint of
/// [`im2col`].
#[allow(clippy::too_many_arguments)]
fn col2im_add<E: Element>(
    cols: &[E],
    grad_sample: &mut [E], // one sample: in_ch * ih * iw
    g: usize,
    spec: &ConvSpec,
    ih: usize,
    iw: usize,
    oh: usize,
    ow: usize,
) {
    let cin_g = spec.in_ch / spec.groups;
    let ohw = oh * ow;
    for ci in 0..cin_g {
        let channel = g * cin_g + ci;
        for ky in 0..spec.kh {
            for kx in 0..spec.kw {
                let row = ((ci * spec.kh + ky) * spec.kw + kx) * ohw;
                for oy in 0..oh {
                    let iy = (oy * spec.stride + ky) as isize - spec.pad as isize;
                    if iy < 0 || iy >= ih as isize {
                        continue;
                    }
                    let dst_row = (channel * ih + iy as usize) * iw;
                    let src_row = row + oy * ow;
                    for ox in 0..ow {
                        let ix = (ox * spec.stride + kx) as isize - spec.pad as isize;
                        if ix >= 0 && ix < iw as isize {
                            grad_sample[dst_row + ix as usize] += cols[src_row + ox];
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Convolution forward and its three adjoints.
// ---------------------------------------------------------------------------

fn conv_forward<E: Element>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    b: Option<&Tensor<E>>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    let xs = x.shape();
    if xs.c != spec.in_ch {
        return Err(Error::ShapeMismatch(format!(
            "convolution expects {} input channels, got {}",
            spec.in_ch, xs
        )));
    }
    if w.shape() != spec.weight_shape() {
        return Err(Error::ShapeMismatch(format!(
            "weight {} does not match spec {} for {:?}",
            w.shape(),
            spec.weight_shape(),
            spec
        )));
    }
    if let Some(b) = b {
        if b.shape() != spec.bias_shape() {
            return Err(Error::ShapeMismatch(format!(
                "bias {} does not match {}",
                b.shape(),
                spec.bias_shape()
            )));
        }
    }
    let (oh, ow) = spec.out_dims(xs.h, xs.w)?;
    let (cin_g, cout_g) = (spec.in_ch / spec.groups, spec.out_ch / spec.groups);
    let kdim = cin_g * spec.kh * spec.kw;
    let ohw = oh * ow;
    let out_shape = Shape::new(xs.n, spec.out_ch, oh, ow);
    let mut out = vec![E::zero(); out_shape.numel()];
    let wdata = w.data();

    // Each (sample, group) pair owns one contiguous output block, so the
    // blocks can be filled independently.
    out.par_chunks_mut(cout_g * ohw)
        .enumerate()
        .for_each(|(job, block)| {
            let (n, g) = (job / spec.groups, job % spec.groups);
            let mut cols = vec![E::zero(); kdim * ohw];
            im2col(x, n, g, spec, oh, ow, &mut cols);
            let wg = &wdata[g * cout_g * kdim..(g + 1) * cout_g * kdim];
            gemm(cout_g, kdim, ohw, wg, &cols, block);
            if let Some(b) = b {
                for (oc, row) in block.chunks_mut(ohw).enumerate() {
                    let bv = b.data()[g * cout_g + oc];
                    for v in row.iter_mut() {
                        *v += bv;
                    }
                }
            }
        });
    Tensor::new(out_shape, out)
}

fn conv_grad_input<E: Element>(
    grad_out: &Tensor<E>,
    w: &Tensor<E>,
    spec: &ConvSpec,
    in_shape: Shape,
) -> Result<Tensor<E>> {
    let (oh, ow) = spec.out_dims(in_shape.h, in_shape.w)?;
    let (cin_g, cout_g) = (spec.in_ch / spec.groups, spec.out_ch / spec.groups);
    let kdim = cin_g * spec.kh * spec.kw;
    let ohw = oh * ow;
    let wdata = w.data();

    // Transpose each group's weight block once: `kdim x cout_g`.
    let mut wt = vec![E::zero(); spec.groups * kdim * cout_g];
    for g in 0..spec.groups {
        let src = &wdata[g * cout_g * kdim..(g + 1) * cout_g * kdim];
        let dst = &mut wt[g * kdim * cout_g..(g + 1) * kdim * cout_g];
        for oc in 0..cout_g {
            for kidx in 0..kdim {
                dst[kidx * cout_g + oc] = src[oc * kdim + kidx];
            }
        }
    }

    let godata = grad_out.data();
    let mut grad_x = vec![E::zero(); in_shape.numel()];
    let sample_len = in_shape.c * in_shape.h * in_shape.w;
    grad_x
        .par_chunks_mut(sample_len)
        .enumerate()
        .for_each(|(n, sample)| {
            let mut gcols = vec![E::zero(); kdim * ohw];
            for g in 0..spec.groups {
                for v in gcols.iter_mut() {
                    *v = E::zero();
                }
                let go = &godata[(n * spec.out_ch + g * cout_g) * ohw..][..cout_g * ohw];
                let wtg = &wt[g * kdim * cout_g..(g + 1) * kdim * cout_g];
                gemm(kdim, cout_g, ohw, wtg, go, &mut gcols);
                col2im_add(&gcols, sample, g, spec, in_shape.h, in_shape.w, oh, ow);
            }
        });
    Tensor::new(in_shape, grad_x)
}

fn conv_grad_weight<E: Element>(
    grad_out: &Tensor<E>,
    x: &Tensor<E>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    let xs = x.shape();
    let (oh, ow) = spec.out_dims(xs.h, xs.w)?;
    let (cin_g, cout_g) = (spec.in_ch / spec.groups, spec.out_ch / spec.groups);
    let kdim = cin_g * spec.kh * spec.kw;
    let ohw = oh * ow;
    let wnumel = spec.weight_shape().numel();
    let godata = grad_out.data();

    // Per-sample partials computed in parallel, then reduced in sample
    // order so the floating-point sum is reproducible.
    let partials: Vec<Vec<E>> = (0..xs.n)
        .into_par_iter()
        .map(|n| {
            let mut gw = vec![E::zero(); wnumel];
            let mut cols = vec![E::zero(); kdim * ohw];
            for g in 0..spec.groups {
                for v in cols.iter_mut() {
                    *v = E::zero();
                }
                im2col(x, n, g, spec, oh, ow, &mut cols);
                let go = &godata[(n * spec.out_ch + g * cout_g) * ohw..][..cout_g * ohw];
                let gwg = &mut gw[g * cout_g * kdim..(g + 1) * cout_g * kdim];
                gemm_abt(cout_g, ohw, kdim, go, &cols, gwg);
            }
            gw
        })
        .collect();
    let mut gw = vec![E::zero(); wnumel];
    for partial in partials {
        for (acc, v) in gw.iter_mut().zip(partial) {
            *acc += v;
        }
    }
    Tensor::new(spec.weight_shape(), gw)
}

fn conv_grad_bias<E: Element>(grad_out: &Tensor<E>, spec: &ConvSpec) -> Result<Tensor<E>> {
    let gs = grad_out.shape();
    let mut gb = vec![E::zero(); spec.out_ch];
    let hw = gs.h * gs.w;
    for n in 0..gs.n {
        for (c, acc) in gb.iter_mut().enumerate() {
            let base = gs.index(n, c, 0, 0);
            for &v in &grad_out.data()[base..base + hw] {
                *acc += v;
            }
        }
    }
    Tensor::new(spec.bias_shape(), gb)
}

/// 2-D cross-correlation with stride, zero padding and channel groups.
pub fn conv2d<E: Element>(
    tape: Option<&Tape<E>>,
    x: &Var<E>,
    w: &Var<E>,
    b: Option<&Var<E>>,
    spec: ConvSpec,
) -> Result<Var<E>> {
    spec.validate()?;
    let y = conv_forward(x.value(), w.value(), b.map(|v| v.value()), &spec)?;
    let mut parents = Vec::new();
    let (mut need_x, mut need_w, mut need_b) = (false, false, false);
    if let Some(id) = x.id {
        parents.push(id);
        need_x = true;
    }
    if let Some(id) = w.id {
        parents.push(id);
        need_w = true;
    }
    if let Some(Some(id)) = b.map(|b| b.id) {
        parents.push(id);
        need_b = true;
    }
    let Some(tape) = tape.filter(|_| !parents.is_empty()) else {
        return Ok(Var::constant(y));
    };
    let (xv, wv) = (x.value().clone(), w.value().clone());
    let in_shape = xv.shape();
    Ok(tape.push_op(
        y,
        parents,
        Box::new(move |g| {
            let mut grads = Vec::new();
            if need_x {
                grads.push(conv_grad_input(g, &wv, &spec, in_shape)?);
            }
            if need_w {
                grads.push(conv_grad_weight(g, &xv, &spec)?);
            }
            if need_b {
                grads.push(conv_grad_bias(g, &spec)?);
            }
            Ok(grads)
        }),
    ))
}

// ---------------------------------------------------------------------------
// Pointwise and layout operations.
// ---------------------------------------------------------------------------

/// `max(x, 0)`, with subgradient 0 at the kink.
pub fn relu<E: Element>(tape: Option<&Tape<E>>, x: &Var<E>) -> Result<Var<E>> {
    let y = x.value().map(|v| if v > E::zero() { v } else { E::zero() });
    match (tape, x.id) {
        (Some(tape), Some(id)) => {
            let xv = x.value().clone();
            Ok(tape.push_op(
                y,
                vec![id],
                Box::new(move |g| {
                    Ok(vec![g.zip(&xv, |gv, xv| {
                        if xv > E::zero() {
                            gv
                        } else {
                            E::zero()
                        }
                    })?])
                }),
            ))
        }
        _ => Ok(Var::constant(y)),
    }
}

/// Rearrange `(n, c*r^2, h, w)` into `(n, c, h*r, w*r)`: output pixel
/// `(r*y + dy, r*x + dx)` of channel `c` reads input channel
/// `c*r^2 + dy*r + dx` at `(y, x)`.
pub fn pixel_shuffle_raw<E: Element>(x: &Tensor<E>, r: usize) -> Result<Tensor<E>> {
    let s = x.shape();
    if r == 0 || !s.c.is_multiple_of(r * r) {
        return Err(Error::InvalidArgument(format!(
            "pixel shuffle by {r} needs channels divisible by {}, got {}",
            r * r,
            s
        )));
    }
    let out = Shape::new(s.n, s.c / (r * r), s.h * r, s.w * r);
    let mut data = vec![E::zero(); out.numel()];
    for n in 0..s.n {
        for oc in 0..out.c {
            for y in 0..s.h {
                for x_ in 0..s.w {
                    for dy in 0..r {
                        for dx in 0..r {
                            let ic = oc * r * r + dy * r + dx;
                            data[out.index(n, oc, r * y + dy, r * x_ + dx)] =
                                x.at(n, ic, y, x_);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out, data)
}

/// Exact inverse of [`pixel_shuffle_raw`].
pub fn pixel_unshuffle_raw<E: Element>(x: &Tensor<E>, r: usize) -> Result<Tensor<E>> {
    let s = x.shape();
    if r == 0 || !s.h.is_multiple_of(r) || !s.w.is_multiple_of(r) {
        return Err(Error::InvalidArgument(format!(
            "pixel unshuffle by {r} needs spatial extents divisible by {r}, got {s}"
        )));
    }
    let out = Shape::new(s.n, s.c * r * r, s.h / r, s.w / r);
    let mut data = vec![E::zero(); out.numel()];
    for n in 0..s.n {
        for oc in 0..s.c {
            for y in 0..out.h {
                for x_ in 0..out.w {
                    for dy in 0..r {
                        for dx in 0..r {
                            data[out.index(n, oc * r * r + dy * r + dx, y, x_)] =
                                x.at(n, oc, r * y + dy, r * x_ + dx);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(out, data)
}

pub fn pixel_shuffle<E: Element>(tape: Option<&Tape<E>>, x: &Var<E>, r: usize) -> Result<Var<E>> {
    let y = pixel_shuffle_raw(x.value(), r)?;
    match (tape, x.id) {
        (Some(tape), Some(id)) => Ok(tape.push_op(
            y,
            vec![id],
            Box::new(move |g| Ok(vec![pixel_unshuffle_raw(g, r)?])),
        )),
        _ => Ok(Var::constant(y)),
    }
}

fn concat_values<E: Element>(parts: &[&Tensor<E>]) -> Result<Tensor<E>> {
    let first = parts[0].shape();
    let mut total_c = 0;
    for p in parts {
        let s = p.shape();
        if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
            return Err(Error::ShapeMismatch(format!(
                "concat inputs disagree: {} vs {}",
                first, s
            )));
        }
        total_c += s.c;
    }
    let out = Shape::new(first.n, total_c, first.h, first.w);
    let mut data = Vec::with_capacity(out.numel());
    let chw = |s: Shape| s.c * s.h * s.w;
    for n in 0..first.n {
        for p in parts {
            let len = chw(p.shape());
            data.extend_from_slice(&p.data()[n * len..(n + 1) * len]);
        }
    }
    Tensor::new(out, data)
}

/// Slice channels `[c0, c0+len)` out of a tensor (used by the concat
/// adjoint and by tests).
fn slice_channels<E: Element>(x: &Tensor<E>, c0: usize, len: usize) -> Result<Tensor<E>> {
    let s = x.shape();
    if c0 + len > s.c {
        return Err(Error::ShapeMismatch(format!(
            "channel slice [{c0}, {}) exceeds {}",
            c0 + len,
            s
        )));
    }
    let out = Shape::new(s.n, len, s.h, s.w);
    let mut data = Vec::with_capacity(out.numel());
    for n in 0..s.n {
        let base = s.index(n, c0, 0, 0);
        data.extend_from_slice(&x.data()[base..base + len * s.h * s.w]);
    }
    Tensor::new(out, data)
}

/// Stack tensors along the channel axis; batch and spatial extents must
/// agree.
pub fn concat_channels<E: Element>(tape: Option<&Tape<E>>, parts: &[Var<E>]) -> Result<Var<E>> {
    if parts.is_empty() {
        return Err(Error::InvalidArgument("concat of zero tensors".into()));
    }
    let values: Vec<&Tensor<E>> = parts.iter().map(|p| p.value()).collect();
    let y = concat_values(&values)?;
    // Channel offset and width of every tracked part, for the adjoint.
    let mut parents = Vec::new();
    let mut tracked: Vec<(usize, usize)> = Vec::new();
    let mut c0 = 0;
    for p in parts {
        if let Some(id) = p.id {
            parents.push(id);
            tracked.push((c0, p.value().shape().c));
        }
        c0 += p.value().shape().c;
    }
    let Some(tape) = tape.filter(|_| !parents.is_empty()) else {
        return Ok(Var::constant(y));
    };
    Ok(tape.push_op(
        y,
        parents,
        Box::new(move |g| {
            tracked
                .iter()
                .map(|&(c0, len)| slice_channels(g, c0, len))
                .collect()
        }),
    ))
}

/// Element-wise sum of two equally shaped tensors (residual connections).
pub fn var_add<E: Element>(tape: Option<&Tape<E>>, a: &Var<E>, b: &Var<E>) -> Result<Var<E>> {
    let y = a.value().add(b.value())?;
    let mut parents = Vec::new();
    let (mut need_a, mut need_b) = (false, false);
    if let Some(id) = a.id {
        parents.push(id);
        need_a = true;
    }
    if let Some(id) = b.id {
        parents.push(id);
        need_b = true;
    }
    let Some(tape) = tape.filter(|_| !parents.is_empty()) else {
        return Ok(Var::constant(y));
    };
    Ok(tape.push_op(
        y,
        parents,
        Box::new(move |g| {
            let mut grads = Vec::new();
            if need_a {
                grads.push(g.clone());
            }
            if need_b {
                grads.push(g.clone());
            }
            Ok(grads)
        }),
    ))
}

/// Mean absolute deviation, the training objective. Returns a scalar; the
/// gradient towards the prediction is `sign(pred - target) / numel` (zero
/// exactly at ties).
pub fn l1_loss<E: Element>(
    tape: Option<&Tape<E>>,
    pred: &Var<E>,
    target: &Var<E>,
) -> Result<Var<E>> {
    let diff = pred.value().sub(target.value())?;
    let numel = diff.numel();
    let mean: f64 = diff.data().iter().map(|v| v.into_f64().abs()).sum::<f64>() / numel as f64;
    let y = Tensor::scalar_value(E::from_f64(mean));
    let mut parents = Vec::new();
    let (mut need_p, mut need_t) = (false, false);
    if let Some(id) = pred.id {
        parents.push(id);
        need_p = true;
    }
    if let Some(id) = target.id {
        parents.push(id);
        need_t = true;
    }
    let Some(tape) = tape.filter(|_| !parents.is_empty()) else {
        return Ok(Var::constant(y));
    };
    Ok(tape.push_op(
        y,
        parents,
        Box::new(move |g| {
            let gs = g.scalar()?;
            let unit = gs / E::from_f64(numel as f64);
            let d = diff.map(|v| {
                if v > E::zero() {
                    unit
                } else if v < E::zero() {
                    -unit
                } else {
                    E::zero()
                }
            });
            let mut grads = Vec::new();
            if need_p {
                grads.push(d.clone());
            }
            if need_t {
                grads.push(d.map(|v| -v));
            }
            Ok(grads)
        }),
    ))
}

/// `sum(x * coeffs)` with constant coefficients — a linear probe that turns
/// any output into a scalar with an exact, kink-free backward rule. The
/// gradient-check harness uses it to exercise full Jacobians in one pass.
pub fn weighted_sum<E: Element>(
    tape: Option<&Tape<E>>,
    x: &Var<E>,
    coeffs: &Tensor<E>,
) -> Result<Var<E>> {
    if x.value().shape() != coeffs.shape() {
        return Err(Error::ShapeMismatch(format!(
            "weighted_sum: value {} vs coefficients {}",
            x.value().shape(),
            coeffs.shape()
        )));
    }
    let total: f64 = x
        .value()
        .data()
        .iter()
        .zip(coeffs.data())
        .map(|(&v, &c)| v.into_f64() * c.into_f64())
        .sum();
    let y = Tensor::scalar_value(E::from_f64(total));
    match (tape, x.id) {
        (Some(tape), Some(id)) => {
            let coeffs = coeffs.clone();
            Ok(tape.push_op(
                y,
                vec![id],
                Box::new(move |g| {
                    let gs = g.scalar()?;
                    Ok(vec![coeffs.map(|c| c * gs)])
                }),
            ))
        }
        _ => Ok(Var::constant(y)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::GradCell;

    fn t<E: Element>(shape: Shape, data: Vec<E>) -> Tensor<E> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn conv_matches_a_hand_computed_row() {
        // 1x1x1x4 input, kernel [1, 2, 3], pad 1: plain sliding dot product.
        // Padding is symmetric, so the 1-pixel-high input also gains a zero
        // row above and below — those output rows are pure padding.
        let x = Var::constant(t(Shape::new(1, 1, 1, 4), vec![1.0f64, 2.0, 3.0, 4.0]));
        let spec = ConvSpec {
            in_ch: 1,
            out_ch: 1,
            kh: 1,
            kw: 3,
            stride: 1,
            pad: 1,
            groups: 1,
        };
        let w = Var::constant(t(spec.weight_shape(), vec![1.0, 2.0, 3.0]));
        let y = conv2d(None, &x, &w, None, spec).unwrap();
        assert_eq!(y.value().shape(), Shape::new(1, 1, 3, 4));
        // Row [0 1 2 3 4 0] (padded) dotted with [1 2 3] at each offset.
        assert_eq!(
            y.value().data(),
            &[0.0, 0.0, 0.0, 0.0, 8.0, 14.0, 20.0, 11.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn bias_adds_one_value_per_output_channel() {
        let x = Var::constant(Tensor::<f64>::zeros(Shape::new(1, 1, 2, 2)));
        let spec = ConvSpec::same(1, 2, 1);
        let w = Var::constant(t(spec.weight_shape(), vec![1.0, 1.0]));
        let b = Var::constant(t(spec.bias_shape(), vec![0.5, -1.5]));
        let y = conv2d(None, &x, &w, Some(&b), spec).unwrap();
        assert_eq!(
            y.value().data(),
            &[0.5, 0.5, 0.5, 0.5, -1.5, -1.5, -1.5, -1.5]
        );
    }

    #[test]
    fn stride_two_keeps_every_other_column() {
        let x = Var::constant(t(
            Shape::new(1, 1, 1, 6),
            vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0],
        ));
        let spec = ConvSpec {
            in_ch: 1,
            out_ch: 1,
            kh: 1,
            kw: 2,
            stride: 2,
            pad: 0,
            groups: 1,
        };
        let w = Var::constant(t(spec.weight_shape(), vec![1.0, 10.0]));
        let y = conv2d(None, &x, &w, None, spec).unwrap();
        assert_eq!(y.value().data(), &[21.0, 43.0, 65.0]);
    }

    #[test]
    fn depthwise_groups_never_mix_channels() {
        let x = Var::constant(Tensor::<f64>::from_fn(Shape::new(1, 2, 2, 2), |_, c, y, x| {
            if c == 0 {
                (y * 2 + x) as f64
            } else {
                100.0
            }
        }));
        let spec = ConvSpec::depthwise(2, 1);
        let w = Var::constant(t(spec.weight_shape(), vec![2.0, 3.0]));
        let y = conv2d(None, &x, &w, None, spec).unwrap();
        assert_eq!(y.value().data(), &[0.0, 2.0, 4.0, 6.0, 300.0, 300.0, 300.0, 300.0]);
    }

    #[test]
    fn spec_validation_rejects_bad_geometry() {
        assert!(ConvSpec::same(3, 8, 3).with_stride(4).validate().is_err());
        assert!(ConvSpec::same(3, 8, 3).with_stride(0).validate().is_err());
        let mut odd_groups = ConvSpec::same(3, 8, 3);
        odd_groups.groups = 2; // 2 does not divide 3
        assert!(odd_groups.validate().is_err());
        // Output would be zero-sized: kernel larger than padded input.
        assert!(ConvSpec {
            in_ch: 1,
            out_ch: 1,
            kh: 5,
            kw: 5,
            stride: 1,
            pad: 0,
            groups: 1
        }
        .out_dims(3, 3)
        .is_err());
    }

    #[test]
    fn conv_gradients_flow_to_input_weight_and_bias() {
        // y = conv(x, w) + b summed against ones: analytic gradients have
        // closed forms small enough to check by hand.
        let tape = Tape::<f64>::new();
        let xs = Shape::new(1, 1, 1, 3);
        let spec = ConvSpec {
            in_ch: 1,
            out_ch: 1,
            kh: 1,
            kw: 1,
            stride: 1,
            pad: 0,
            groups: 1,
        };
        let (xc, wc, bc) = (
            GradCell::new(xs),
            GradCell::new(spec.weight_shape()),
            GradCell::new(spec.bias_shape()),
        );
        let x = tape.leaf(t(xs, vec![1.0, 2.0, 3.0]), xc.clone());
        let w = tape.leaf(t(spec.weight_shape(), vec![5.0]), wc.clone());
        let b = tape.leaf(t(spec.bias_shape(), vec![0.25]), bc.clone());
        let y = conv2d(Some(&tape), &x, &w, Some(&b), spec).unwrap();
        let loss = weighted_sum(Some(&tape), &y, &Tensor::full(xs, 1.0)).unwrap();
        assert_eq!(loss.value().scalar().unwrap(), 5.0 + 10.0 + 15.0 + 0.75);
        tape.backward(&loss).unwrap();
        assert_eq!(xc.get().data(), &[5.0, 5.0, 5.0]); // d/dx = w
        assert_eq!(wc.get().data(), &[6.0]); // d/dw = sum(x)
        assert_eq!(bc.get().data(), &[3.0]); // d/db = count
    }

    #[test]
    fn pixel_shuffle_places_channels_on_the_subpixel_grid() {
        let x = t(
            Shape::new(1, 4, 1, 2),
            vec![
                0.0f64, 1.0, // channel 0 -> (dy 0, dx 0)
                10.0, 11.0, // channel 1 -> (dy 0, dx 1)
                20.0, 21.0, // channel 2 -> (dy 1, dx 0)
                30.0, 31.0, // channel 3 -> (dy 1, dx 1)
            ],
        );
        let y = pixel_shuffle_raw(&x, 2).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 1, 2, 4));
        assert_eq!(y.data(), &[0.0, 10.0, 1.0, 11.0, 20.0, 30.0, 21.0, 31.0]);
        let back = pixel_unshuffle_raw(&y, 2).unwrap();
        assert_eq!(back.data(), x.data());
        assert!(pixel_shuffle_raw(&x.crop(0, 0, 1, 1).unwrap(), 3).is_err());
    }

    #[test]
    fn concat_stacks_channels_and_routes_gradients() {
        let tape = Tape::<f64>::new();
        let sa = Shape::new(1, 1, 1, 2);
        let sb = Shape::new(1, 2, 1, 2);
        let ca = GradCell::new(sa);
        let a = tape.leaf(t(sa, vec![1.0, 2.0]), ca.clone());
        let b = Var::constant(t(sb, vec![3.0, 4.0, 5.0, 6.0]));
        let y = concat_channels(Some(&tape), &[a, b]).unwrap();
        assert_eq!(y.value().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let coeffs = t(Shape::new(1, 3, 1, 2), vec![1.0, 2.0, 4.0, 8.0, 16.0, 32.0]);
        let loss = weighted_sum(Some(&tape), &y, &coeffs).unwrap();
        tape.backward(&loss).unwrap();
        // Only the first channel block flows back into `a`.
        assert_eq!(ca.get().data(), &[1.0, 2.0]);
    }

    #[test]
    fn l1_loss_value_and_sign_gradient() {
        let tape = Tape::<f64>::new();
        let s = Shape::new(1, 1, 1, 4);
        let c = GradCell::new(s);
        let pred = tape.leaf(t(s, vec![1.0, 2.0, 3.0, 4.0]), c.clone());
        let target = Var::constant(t(s, vec![2.0, 2.0, 1.0, 8.0]));
        let loss = l1_loss(Some(&tape), &pred, &target).unwrap();
        assert_eq!(loss.value().scalar().unwrap(), (1.0 + 0.0 + 2.0 + 4.0) / 4.0);
        tape.backward(&loss).unwrap();
        // sign(diff)/numel, with the tie contributing exactly zero.
        assert_eq!(c.get().data(), &[-0.25, 0.0, 0.25, -0.25]);
    }

    #[test]
    fn residual_add_passes_gradients_to_both_sides() {
        let tape = Tape::<f64>::new();
        let s = Shape::new(1, 1, 1, 2);
        let (ca, cb) = (GradCell::new(s), GradCell::new(s));
        let a = tape.leaf(t(s, vec![1.0, 2.0]), ca.clone());
        let b = tape.leaf(t(s, vec![3.0, 4.0]), cb.clone());
        let y = var_add(Some(&tape), &a, &b).unwrap();
        let loss = weighted_sum(Some(&tape), &y, &t(s, vec![2.0, 3.0])).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(ca.get().data(), &[2.0, 3.0]);
        assert_eq!(cb.get().data(), &[2.0, 3.0]);
        assert!(var_add(None, &a, &Var::constant(Tensor::zeros(Shape::new(1, 1, 2, 2)))).is_err());
    }
}
