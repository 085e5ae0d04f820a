//! Closed-set speaker-identification experiments over WAV corpora: corpus
//! manifests, train/test splits, noise conditions, repeated trials,
//! reports, electrodogram plots and a synthetic test corpus.

// `!(x > y)` is used deliberately so NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backend;
pub mod config;
pub mod error;
pub mod experiment;
pub mod features;
pub mod manifest;
pub mod plot;
pub mod report;
pub mod split;
pub mod synth;

pub use config::{load_config, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use experiment::{evaluate, evaluate_corpus, run_experiment, run_trial};
pub use manifest::{load_manifest, CorpusManifest};
pub use plot::plot_electrodogram;
pub use report::{parse_report_csv, render_report, EvaluationReport, ReportFormat};
pub use split::split_train_test;
pub use synth::{synth_corpus, SynthConfig};
