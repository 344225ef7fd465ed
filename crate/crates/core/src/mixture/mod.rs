//! Named architectures and the mixture routing.
//!
//! Every actor gets the Stage-1 forecast plus at most one residual
//! forecast: from its local block model if the block is local, otherwise
//! from the global model fitted on all actors (or none, depending on the
//! architecture).

mod fit;
mod prepared;
mod single_stage;
mod spec;

pub use fit::{fit_architecture, forecast_architecture, LocalFit, MixtureFit, Route, Stage1Fit, TwoStageFit};
pub use prepared::{cacheable, forecast_origin, prepare_origin, PreparedOrigin};
pub use single_stage::{design_row, single_stage_block_dummy_ridge, SingleStageRidge};
pub use spec::{local_rank, ArchitectureKind, ArchitectureSpec};
