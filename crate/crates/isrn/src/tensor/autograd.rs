//! Reverse-mode differentiation on a flat tape.
//!
//! Every tracked operation appends one node holding the indices of its
//! tracked inputs plus a closure that turns the output gradient into input
//! gradients. Because nodes are appended in execution order, the tape is
//! already topologically sorted and the backward pass is a single reverse
//! sweep — no graph search, no reference cycles. `backward` consumes the
//! tape, so the graph is provably released afterwards; keeping it alive is
//! opt-in by cloning values before the call.

use std::cell::RefCell;
use std::sync::{Arc, Mutex};

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Where a leaf's gradient accumulates. Parameters own one of these; the
/// gradient-check harness hands them out for plain inputs too.
pub struct GradCell<E: Element> {
    grad: Mutex<Tensor<E>>,
}

impl<E: Element> GradCell<E> {
    pub fn new(shape: super::Shape) -> Arc<Self> {
        Arc::new(GradCell {
            grad: Mutex::new(Tensor::zeros(shape)),
        })
    }

    pub fn get(&self) -> Tensor<E> {
        self.grad.lock().unwrap().clone()
    }

    pub fn zero(&self) {
        let mut g = self.grad.lock().unwrap();
        *g = Tensor::zeros(g.shape());
    }

    fn accumulate(&self, delta: &Tensor<E>) -> Result<()> {
        let mut g = self.grad.lock().unwrap();
        *g = g.add(delta)?;
        Ok(())
    }
}

type BackFn<E> = Box<dyn Fn(&Tensor<E>) -> Result<Vec<Tensor<E>>>>;

struct Node<E: Element> {
    /// Tape indices of the tracked inputs, in the order the backward
    /// closure returns their gradients.
    parents: Vec<usize>,
    /// Maps the output gradient to one gradient per parent. Leaves have
    /// none.
    back: Option<BackFn<E>>,
    /// Leaf destination: gradients reaching this node are added here.
    sink: Option<Arc<GradCell<E>>>,
}

/// Records one forward pass. Create a fresh tape per training step.
pub struct Tape<E: Element> {
    nodes: RefCell<Vec<Node<E>>>,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Register a differentiable leaf. Gradients flowing into it are added
    /// to `sink` during [`Tape::backward`].
    pub fn leaf(&self, value: Tensor<E>, sink: Arc<GradCell<E>>) -> Var<E> {
        let id = self.push(Node {
            parents: Vec::new(),
            back: None,
            sink: Some(sink),
        });
        Var {
            value,
            id: Some(id),
        }
    }

    pub(super) fn push_op(
        &self,
        value: Tensor<E>,
        parents: Vec<usize>,
        back: BackFn<E>,
    ) -> Var<E> {
        debug_assert!(value.is_finite(), "operation produced non-finite values");
        let id = self.push(Node {
            parents,
            back: Some(back),
            sink: None,
        });
        Var {
            value,
            id: Some(id),
        }
    }

    fn push(&self, node: Node<E>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Propagate `d loss / d node` from a scalar loss back to every leaf
    /// sink. Consumes the tape: adjoints and closures are dropped on return,
    /// so a second pass over the same graph is impossible by construction.
    pub fn backward(self, loss: &Var<E>) -> Result<()> {
        let seed_id = loss.id.ok_or_else(|| {
            Error::InvalidArgument("backward on a constant: nothing is tracked".into())
        })?;
        if loss.value.numel() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "backward needs a scalar loss, got {}",
                loss.value.shape()
            )));
        }
        let nodes = self.nodes.into_inner();
        let mut grads: Vec<Option<Tensor<E>>> = (0..nodes.len()).map(|_| None).collect();
        grads[seed_id] = Some(Tensor::full(loss.value.shape(), E::one()));

        // The tape is in execution order, so walking it backwards visits
        // every node after all of its consumers.
        for (id, node) in nodes.iter().enumerate().rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            if let Some(sink) = &node.sink {
                sink.accumulate(&grad)?;
            }
            if let Some(back) = &node.back {
                let parent_grads = back(&grad)?;
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                    grads[pid] = Some(match grads[pid].take() {
                        // A value used twice receives the sum of both paths.
                        Some(existing) => existing.add(&pg)?,
                        None => pg,
                    });
                }
            }
        }
        Ok(())
    }
}

/// A tensor plus its (optional) position on a tape. Constants carry no
/// position and contribute no nodes, which is what inference uses.
#[derive(Clone)]
pub struct Var<E: Element> {
    pub(super) value: Tensor<E>,
    pub(super) id: Option<usize>,
}

impl<E: Element> Var<E> {
    /// An untracked value; gradients never flow into it.
    pub fn constant(value: Tensor<E>) -> Self {
        Var { value, id: None }
    }

    pub fn value(&self) -> &Tensor<E> {
        &self.value
    }

    pub fn into_value(self) -> Tensor<E> {
        self.value
    }

    pub fn is_tracked(&self) -> bool {
        self.id.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{weighted_sum, Shape};

    #[test]
    fn leaf_gradient_of_a_weighted_sum_is_the_coefficients() {
        let tape = Tape::<f64>::new();
        let shape = Shape::new(1, 1, 2, 2);
        let cell = GradCell::new(shape);
        let x = tape.leaf(Tensor::from_fn(shape, |_, _, y, x| (y + x) as f64), cell.clone());
        let coeffs = Tensor::new(shape, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let loss = weighted_sum(Some(&tape), &x, &coeffs).unwrap();
        tape.backward(&loss).unwrap();
        assert_eq!(cell.get().data(), coeffs.data());
    }

    #[test]
    fn gradients_accumulate_across_separate_passes() {
        let shape = Shape::new(1, 1, 1, 3);
        let cell = GradCell::<f64>::new(shape);
        let coeffs = Tensor::new(shape, vec![1.0, -1.0, 2.0]).unwrap();
        for _ in 0..2 {
            let tape = Tape::new();
            let x = tape.leaf(Tensor::full(shape, 0.5), cell.clone());
            let loss = weighted_sum(Some(&tape), &x, &coeffs).unwrap();
            tape.backward(&loss).unwrap();
        }
        // Two backward passes without zeroing: exactly double the gradient.
        assert_eq!(cell.get().data(), &[2.0, -2.0, 4.0]);
        cell.zero();
        assert_eq!(cell.get().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_losses() {
        let tape = Tape::<f64>::new();
        let shape = Shape::new(1, 1, 1, 3);
        let x = tape.leaf(Tensor::zeros(shape), GradCell::new(shape));
        assert!(tape.backward(&x).is_err());
    }

    #[test]
    fn backward_rejects_constants() {
        let tape = Tape::<f64>::new();
        let loss = Var::constant(Tensor::scalar_value(1.0));
        assert!(tape.backward(&loss).is_err());
    }
}
