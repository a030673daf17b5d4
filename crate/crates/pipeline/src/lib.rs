//! IO and orchestration companion to `ssrepl-core`: MAT-file Level 5
//! reading/writing, table and artifact formats, the pipeline runner and
//! the `ssrepl` command-line interface.

pub mod cli;
pub mod formats;
pub mod matio;
pub mod parallel;
pub mod pipeline;

pub use pipeline::{run_pipeline, PipelineConfig, PipelineError, RunManifest};
