//! Trainable parameters: a named value plus its gradient accumulator.
//!
//! Values sit behind an `RwLock` so frozen models can serve inference from
//! many threads, while the (externally serialized) training step takes the
//! write lock only inside the optimizer update.

use std::sync::{Arc, RwLock};

use rand::Rng;

use super::{Element, GradCell, Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};

pub struct Parameter<E: Element> {
    /// Hierarchical name, e.g. `solver_sr.group0.block1.conv1.weight`;
    /// doubles as the checkpoint key.
    path: String,
    value: RwLock<Tensor<E>>,
    grad: Arc<GradCell<E>>,
}

impl<E: Element> Parameter<E> {
    pub fn new(path: impl Into<String>, value: Tensor<E>) -> Arc<Self> {
        let grad = GradCell::new(value.shape());
        Arc::new(Parameter {
            path: path.into(),
            value: RwLock::new(value),
            grad,
        })
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    pub fn shape(&self) -> Shape {
        self.value.read().unwrap().shape()
    }

    pub fn numel(&self) -> usize {
        self.shape().numel()
    }

    /// Snapshot of the current value (cheap: shares the buffer).
    pub fn value(&self) -> Tensor<E> {
        self.value.read().unwrap().clone()
    }

    /// Replace the value, e.g. from an optimizer step or a checkpoint.
    /// The shape is fixed at construction.
    pub fn set_value(&self, t: Tensor<E>) -> Result<()> {
        let mut v = self.value.write().unwrap();
        if t.shape() != v.shape() {
            return Err(Error::ShapeMismatch(format!(
                "parameter {} is {}, cannot assign {}",
                self.path,
                v.shape(),
                t.shape()
            )));
        }
        *v = t;
        Ok(())
    }

    pub fn grad(&self) -> Tensor<E> {
        self.grad.get()
    }

    pub fn zero_grad(&self) {
        self.grad.zero();
    }

    /// Use the parameter in a forward pass. With a tape this registers a
    /// leaf whose gradient lands in this parameter; without one it is a
    /// plain constant (inference). A parameter used several times on one
    /// tape — the shared solver runs once per iteration — simply
    /// accumulates all of its paths.
    pub fn var(self: &Arc<Self>, tape: Option<&Tape<E>>) -> Var<E> {
        match tape {
            Some(tape) => tape.leaf(self.value(), self.grad.clone()),
            None => Var::constant(self.value()),
        }
    }
}

/// Kaiming-uniform fill for convolution weights with
/// `fan_in = in_ch/groups * kh * kw`, in the leaky-slope `a = sqrt(5)`
/// parameterization most deep-learning frameworks default to for
/// convolutions: bound `sqrt(6 / ((1 + a^2) * fan_in)) = 1 / sqrt(fan_in)`.
/// The gentler bound keeps a deep residual trunk's output near the input
/// scale at initialization, which a pure-ReLU gain does not.
pub fn kaiming_uniform<E: Element, R: Rng>(rng: &mut R, shape: Shape, fan_in: usize) -> Tensor<E> {
    assert!(fan_in > 0, "fan-in must be positive");
    let bound = (1.0 / fan_in as f64).sqrt();
    let data: Vec<E> = (0..shape.numel())
        .map(|_| E::from_f64(rng.random::<f64>() * 2.0 * bound - bound))
        .collect();
    Tensor::new(shape, data).expect("shape/data length agree by construction")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn set_value_keeps_the_shape_contract() {
        let p = Parameter::new("w", Tensor::<f32>::zeros(Shape::new(1, 1, 2, 2)));
        assert!(p.set_value(Tensor::zeros(Shape::new(1, 1, 2, 2))).is_ok());
        assert!(p.set_value(Tensor::zeros(Shape::new(1, 1, 2, 3))).is_err());
    }

    #[test]
    fn kaiming_fill_is_bounded_and_seeded() {
        let shape = Shape::new(8, 4, 3, 3);
        let fan_in = 4 * 9;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a: Tensor<f32> = kaiming_uniform(&mut rng, shape, fan_in);
        let bound = (1.0 / fan_in as f64).sqrt() as f32;
        let (lo, hi) = a.min_max();
        assert!(lo >= -bound && hi < bound, "values outside [{}, {})", -bound, bound);
        // Same seed, same tensor — initialization is reproducible.
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let b: Tensor<f32> = kaiming_uniform(&mut rng2, shape, fan_in);
        assert_eq!(a.data(), b.data());
        // And the spread actually uses the range (not all tiny values).
        assert!(hi > bound * 0.5 || lo < -bound * 0.5);
    }
}
