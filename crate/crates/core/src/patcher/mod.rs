//! Patch-level augmentation: grids and masks, semantic patch scoring and
//! selection, tail-to-head grafting, standard augmentations and the
//! head/tail balancing loop.

pub mod augment;
pub mod balance;
pub mod compose;
pub mod grid;
pub mod images;
pub mod select;

pub use augment::{apply_augment, standard_augment, AugmentOp, AugmentParams};
pub use balance::{
    balance_task, class_counts, head_tail_gap, partition_head_tail, BalanceConfig, BalanceFooter,
    BalanceInputs, BalanceLog, BalanceOutcome, BalanceStatus, Partition, SynthesisRecord,
};
pub use compose::{aligned_reference, compose_sample, AugmentedSample, ComposeMode, PatchOrigin};
pub use grid::{build_mask, partition_patches, reassemble, saturating_add, BinaryMask, Patch, PatchGrid};
pub use images::{FileImages, ImageSource, SyntheticImages};
pub use select::{score_patches, scores_against, select_patches};
