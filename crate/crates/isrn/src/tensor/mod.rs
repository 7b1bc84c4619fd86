//! Dense `NCHW` tensors and the scalar trait the whole crate computes with.
//!
//! Tensors are immutable values: every operation allocates its result, and
//! cloning only bumps an `Arc`, so activations can be stashed for the
//! backward pass or shared across threads without copies or locks. All
//! shapes are rank-4 `(batch, channels, height, width)`; scalars travel as
//! `1x1x1x1` tensors.

mod autograd;
mod ops;
mod param;

pub use autograd::{GradCell, Tape, Var};
pub use ops::{
    concat_channels, conv2d, l1_loss, pixel_shuffle, pixel_shuffle_raw, pixel_unshuffle_raw,
    relu, var_add, weighted_sum, ConvSpec,
};
pub use param::{kaiming_uniform, Parameter};

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Scalar types the engine runs on. `f32` is the workhorse for training and
/// inference; `f64` exists so analytic gradients can be compared against
/// central differences without drowning in rounding noise.
pub trait Element:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + Send
    + Sync
    + fmt::Debug
    + fmt::Display
    + Default
    + 'static
{
    /// Bit width of the type; the checkpoint format only accepts 32.
    const BITS: u32;
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Element for f32 {
    const BITS: u32 = 32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const BITS: u32 = 64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
}

/// Extents of a rank-4 tensor in `NCHW` order.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Flat offset of element `(n, c, y, x)` in row-major `NCHW` layout.
    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// One of the eight symmetries of the square: an optional horizontal mirror
/// followed by `rot` quarter-turns. Used both for training-time augmentation
/// and for the eight-view ensemble at inference.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Dihedral {
    /// Quarter-turns (counter-clockwise), 0..4.
    pub rot: u8,
    /// Mirror along the width axis, applied before the rotation.
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { rot: 0, flip: false };

    /// All eight group elements, identity first.
    pub fn all() -> [Dihedral; 8] {
        let mut out = [Dihedral::IDENTITY; 8];
        for (i, d) in out.iter_mut().enumerate() {
            *d = Dihedral {
                rot: (i % 4) as u8,
                flip: i >= 4,
            };
        }
        out
    }

    /// The element that undoes `self` (mirror conjugation reverses the
    /// rotation direction, so flipped elements are their own rotation).
    pub fn inverse(self) -> Dihedral {
        Dihedral {
            rot: if self.flip { self.rot } else { (4 - self.rot) % 4 },
            flip: self.flip,
        }
    }
}

/// Immutable rank-4 tensor with shared storage.
#[derive(Clone)]
pub struct Tensor<E: Element = f32> {
    shape: Shape,
    data: Arc<[E]>,
}

impl<E: Element> Tensor<E> {
    pub fn new(shape: Shape, data: Vec<E>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::ShapeMismatch(format!(
                "buffer of {} elements cannot form a {} tensor",
                data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape,
            data: data.into(),
        })
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![E::zero(); shape.numel()].into(),
        }
    }

    pub fn full(shape: Shape, v: E) -> Self {
        Tensor {
            shape,
            data: vec![v; shape.numel()].into(),
        }
    }

    /// Build from a function of the `(n, c, y, x)` coordinate.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> E) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for y in 0..shape.h {
                    for x in 0..shape.w {
                        data.push(f(n, c, y, x));
                    }
                }
            }
        }
        Tensor {
            shape,
            data: data.into(),
        }
    }

    pub fn scalar_value(v: E) -> Self {
        Tensor {
            shape: Shape::new(1, 1, 1, 1),
            data: vec![v].into(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> E {
        self.data[self.shape.index(n, c, y, x)]
    }

    /// The single element of a `1x1x1x1` tensor.
    pub fn scalar(&self) -> Result<E> {
        if self.numel() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected a scalar, got {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn map(&self, f: impl Fn(E) -> E) -> Tensor<E> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Element-wise combination; shapes must match exactly (no broadcasting).
    pub fn zip(&self, other: &Tensor<E>, f: impl Fn(E, E) -> E) -> Result<Tensor<E>> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "cannot combine {} with {}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, k: E) -> Tensor<E> {
        self.map(|v| v * k)
    }

    pub fn clamp(&self, lo: E, hi: E) -> Tensor<E> {
        self.map(|v| v.max(lo).min(hi))
    }

    pub fn min_max(&self) -> (E, E) {
        let mut lo = E::infinity();
        let mut hi = E::neg_infinity();
        for &v in self.data.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    /// Mean over every element, accumulated in f64 for stability.
    pub fn mean_f64(&self) -> f64 {
        let sum: f64 = self.data.iter().map(|&v| v.into_f64()).sum();
        sum / self.numel() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!(
                "{context} produced a NaN or infinity (shape {})",
                self.shape
            )))
        }
    }

    /// Convert between scalar types through f64 (used by the f64 gradient
    /// harness and by image io).
    pub fn cast<T: Element>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| T::from_f64(v.into_f64())).collect(),
        }
    }

    /// Spatial crop of `h x w` starting at `(y0, x0)`, all channels kept.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Tensor<E>> {
        let s = self.shape;
        if y0 + h > s.h || x0 + w > s.w || h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "crop {h}x{w}@({y0},{x0}) exceeds tensor {s}"
            )));
        }
        let out_shape = Shape::new(s.n, s.c, h, w);
        let mut data = Vec::with_capacity(out_shape.numel());
        for n in 0..s.n {
            for c in 0..s.c {
                for y in 0..h {
                    let row = s.index(n, c, y0 + y, x0);
                    data.extend_from_slice(&self.data[row..row + w]);
                }
            }
        }
        Ok(Tensor {
            shape: out_shape,
            data: data.into(),
        })
    }

    /// Reflect-pad the spatial extent (border row/column is not repeated,
    /// i.e. `abcd` padded by 2 on the left reads `cbabcd`).
    pub fn pad_reflect(&self, pad_h: usize, pad_w: usize) -> Result<Tensor<E>> {
        let s = self.shape;
        if pad_h >= s.h || pad_w >= s.w {
            return Err(Error::InvalidArgument(format!(
                "reflect padding ({pad_h},{pad_w}) needs extents larger than the pad, got {s}"
            )));
        }
        let reflect = |i: isize, len: usize| -> usize {
            let last = (len - 1) as isize;
            let mut i = i;
            if i < 0 {
                i = -i;
            }
            if i > last {
                i = 2 * last - i;
            }
            i as usize
        };
        let out = Shape::new(s.n, s.c, s.h + 2 * pad_h, s.w + 2 * pad_w);
        Ok(Tensor::from_fn(out, |n, c, y, x| {
            let sy = reflect(y as isize - pad_h as isize, s.h);
            let sx = reflect(x as isize - pad_w as isize, s.w);
            self.at(n, c, sy, sx)
        }))
    }

    /// Mirror along the width axis.
    pub fn flip_w(&self) -> Tensor<E> {
        let s = self.shape;
        Tensor::from_fn(s, |n, c, y, x| self.at(n, c, y, s.w - 1 - x))
    }

    /// One quarter-turn counter-clockwise; height and width swap.
    pub fn rot90(&self) -> Tensor<E> {
        let s = self.shape;
        let out = Shape::new(s.n, s.c, s.w, s.h);
        Tensor::from_fn(out, |n, c, y, x| self.at(n, c, x, s.w - 1 - y))
    }

    /// Apply a square symmetry (mirror first, then quarter-turns).
    pub fn dihedral(&self, d: Dihedral) -> Tensor<E> {
        let mut t = if d.flip { self.flip_w() } else { self.clone() };
        for _ in 0..d.rot {
            t = t.rot90();
        }
        t
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor<{}>({}", std::any::type_name::<E>(), self.shape)?;
        if self.numel() <= 8 {
            write!(f, ", {:?}", self.data())?;
        }
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(shape: Shape) -> Tensor<f64> {
        let mut i = 0.0;
        Tensor::from_fn(shape, |_, _, _, _| {
            i += 1.0;
            i
        })
    }

    #[test]
    fn shape_indexing_is_row_major() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.index(0, 0, 0, 0), 0);
        assert_eq!(s.index(0, 0, 0, 1), 1);
        assert_eq!(s.index(0, 0, 1, 0), 5);
        assert_eq!(s.index(0, 1, 0, 0), 20);
        assert_eq!(s.index(1, 0, 0, 0), 60);
        assert_eq!(s.numel(), 120);
    }

    #[test]
    fn new_rejects_wrong_buffer_length() {
        assert!(Tensor::<f32>::new(Shape::new(1, 1, 2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn crop_takes_the_requested_window() {
        let t = seq(Shape::new(1, 1, 3, 3));
        let c = t.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[5.0, 6.0, 8.0, 9.0]);
        assert!(t.crop(2, 0, 2, 3).is_err());
    }

    #[test]
    fn reflect_padding_mirrors_without_repeating_the_border() {
        let t = Tensor::<f64>::new(Shape::new(1, 1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = t.pad_reflect(0, 2).unwrap();
        assert_eq!(p.data(), &[3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn rot90_four_times_is_identity() {
        let t = seq(Shape::new(1, 2, 3, 4));
        let r = t.rot90();
        assert_eq!(r.shape(), Shape::new(1, 2, 4, 3));
        let back = r.rot90().rot90().rot90();
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn every_dihedral_element_is_undone_by_its_inverse() {
        let t = seq(Shape::new(2, 3, 4, 5));
        for d in Dihedral::all() {
            let round = t.dihedral(d).dihedral(d.inverse());
            assert_eq!(round.shape(), t.shape(), "element {d:?}");
            assert_eq!(round.data(), t.data(), "element {d:?}");
        }
    }

    #[test]
    fn dihedral_elements_are_pairwise_distinct() {
        let t = seq(Shape::new(1, 1, 2, 3));
        let views: Vec<Vec<f64>> = Dihedral::all()
            .iter()
            .map(|&d| t.dihedral(d).data().to_vec())
            .collect();
        for i in 0..8 {
            for j in (i + 1)..8 {
                assert_ne!(views[i], views[j], "elements {i} and {j} coincide");
            }
        }
    }

    #[test]
    fn finite_check_spots_nans() {
        let t = Tensor::<f32>::new(Shape::new(1, 1, 1, 2), vec![1.0, f32::NAN]).unwrap();
        assert!(t.check_finite("test").is_err());
        assert!(Tensor::<f32>::zeros(Shape::new(1, 1, 1, 2))
            .check_finite("test")
            .is_ok());
    }
}
