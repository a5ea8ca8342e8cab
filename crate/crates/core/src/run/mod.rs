//! End-to-end runs driven by one [`RunConfig`]: stream construction,
//! baseline and augmented evaluation, reports and output handling.

pub mod config;
pub mod output;
pub mod pipeline;
pub mod report;

pub use config::{EvalSection, ImageKind, ImageSection, PatcherSection, RunConfig, SmootherSection, StreamSection};
pub use output::{replace_dir, write_atomic, OutputLock};
pub use pipeline::{build_stream, load_manifest, PandaRun, Session};
pub use report::{compare_reports, ClassResult, Comparison, EvalReport, EvalResults, Variant};
