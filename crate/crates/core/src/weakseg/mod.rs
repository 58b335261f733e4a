//! Box-supervised 2.5D segmentation.
//!
//! A residual UNet reads three neighboring slices and predicts the central
//! one. Supervision comes only from per-slice boxes, through [`loss`].

pub mod loss;
mod model;
mod train;

pub use loss::{
    band_ranges, barrier, barrier_grad, emptiness_loss, size_constraints, tightness_bands,
    tightness_constraints, total_loss, total_loss_with_grad, Band, ConstraintConfig, LossTerms,
    PredictionSlice, PROB_EPS,
};
pub use model::{ResUnet, SegmenterArch};
pub use train::{predict_mask, train_segmenter, EpochLog, Segmenter, SegmenterConfig, Validation};
