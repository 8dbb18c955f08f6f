//! Matching scores between left and right feature maps.

pub mod head;
pub mod psi;
pub mod volume;


pub use head::{
    learned_scores, learned_scores_backward, learned_scores_factored, learned_scores_factored_backward,
    learned_scores_forward, CorrHead, HeadActivations, HeadGrads, HEAD_CONTEXT,
};
pub use psi::{build_psi, PsiVolume};
pub(crate) use psi::{build_psi_rows, psi_backward};
pub(crate) use volume::inner_product_rows;
pub use volume::{inner_product_backward, inner_product_volume, CostVolume, Pairing};
