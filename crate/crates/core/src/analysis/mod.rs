//! Geometry and vocabulary diagnostics of steered states.

mod pca;
mod token_shift;

pub use pca::{centroids, pca_displacement, PcaFit, PcaProjection, ProjectedPoint};
pub use token_shift::{
    token_shift, SentenceShift, TokenCount, TokenDelta, TokenShiftReport, ZERO_DELTA,
};
