//! Placebo permutation tests, block selection protocols and partition
//! perturbation drivers.
//!
//! Every driver compares a mixture architecture against a baseline through
//! a [`DeltaHarness`], which caches the partition-independent fits once per
//! forecast origin.

mod harness;
mod perturb;
mod placebo;
mod selection;
mod sweep;

pub use harness::{blocks_with_local, DeltaHarness, DeltaSummary};
pub use perturb::{perturbation_suite, Perturbation, VariantResult};
pub use placebo::{permute_blocks, placebo_test, PlaceboOptions, PlaceboResult};
pub use selection::{
    candidate_scan, candidate_scan_windows, freeze_threshold, held_out_freeze, lowo_block_selection,
    scan_markdown, select_non_overlapping, Candidate, CandidateScore, FreezeResult, LowoResult, LowoWindow,
    SelectionRule,
};
pub use sweep::{sweep, sweep_markdown, SweepCell, SweepGrid};
