//! Bias measurement (LMB), held-out perplexity (LMP) and the downstream
//! dialog-state-tracking and response-generation probes.

mod downstream;
mod lmb;
mod metrics;
mod report;

pub use downstream::{
    crg_train_eval, dst_train_eval, f1_accuracy, lmp_evaluate, read_reference_file, DownstreamConfig, DownstreamReport,
    Task,
};
pub use lmb::{lmb_evaluate, BiasDirection, BiasReport, LmbOptions, PerplexityPair, PerplexityPairSet};
pub use metrics::{bleu4, corpus_bleu4, dist_n, entropy_n};
pub use report::{DownstreamSummary, EvalReport};
