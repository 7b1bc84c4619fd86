//! Self-ensemble inference: run the model on all eight dihedral views of the
//! input (four rotations, with and without mirroring), undo each transform
//! on the corresponding output, and average in pixel space. A translation-
//! equivariant model gains robustness at 8x the inference cost.

use super::IsrnModel;
use crate::error::Result;
use crate::tensor::{Dihedral, Element, Tensor};

/// Core of the ensemble, generic over the forward function so stubs and
/// alternative models can reuse it: average of `undo(f(view))` over all
/// eight dihedral views.
pub fn ensemble_with<E, F>(lr_img: &Tensor<E>, mut f: F) -> Result<Tensor<E>>
where
    E: Element,
    F: FnMut(&Tensor<E>) -> Result<Tensor<E>>,
{
    let mut acc: Option<Tensor<E>> = None;
    for d in Dihedral::all() {
        let out = f(&lr_img.dihedral(d))?;
        let restored = out.dihedral(d.inverse());
        acc = Some(match acc {
            Some(sum) => sum.add(&restored)?,
            None => restored,
        });
    }
    Ok(acc.expect("eight views").scale(E::from_f64(0.125)))
}

/// Ensemble forward pass of the full model (the "+" evaluation mode).
pub fn self_ensemble_forward<E: Element>(
    model: &IsrnModel<E>,
    lr_img: &Tensor<E>,
) -> Result<Tensor<E>> {
    ensemble_with(lr_img, |view| model.forward_infer(view).map(|(sr, _)| sr))
}
