use serde::{Deserialize, Serialize};

use super::downstream::{DownstreamReport, Task};
use super::lmb::{BiasDirection, BiasReport};
use crate::biasspec::BiasType;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DownstreamSummary {
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub bleu4: Option<f64>,
    pub dist2: Option<f64>,
    pub entropy4: Option<f64>,
    pub lmp: Option<f64>,
}

impl DownstreamSummary {
    pub fn from_reports(reports: &[DownstreamReport]) -> Self {
        let mut s = DownstreamSummary::default();
        for r in reports {
            match r.task {
                Task::Dst => {
                    s.f1 = r.metric("f1");
                    s.accuracy = r.metric("accuracy");
                }
                Task::Crg => {
                    s.bleu4 = r.metric("bleu4");
                    s.dist2 = r.metric("dist2");
                    s.entropy4 = r.metric("entropy4");
                }
                Task::Lmp => s.lmp = r.metric("perplexity"),
            }
        }
        s
    }
}

/// One evaluation cell: a model (base or debiased by `method`) measured on
/// one bias type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bias_type: BiasType,
    pub model_tag: String,
    pub method: String,
    pub t: f64,
    pub p: f64,
    pub n: usize,
    pub removed: usize,
    pub significant: bool,
    pub direction: BiasDirection,
    pub downstream: DownstreamSummary,
}

impl EvalReport {
    pub fn new(
        model_tag: impl Into<String>,
        method: impl Into<String>,
        bias: &BiasReport,
        downstream: &[DownstreamReport],
    ) -> Self {
        EvalReport {
            bias_type: bias.bias_type,
            model_tag: model_tag.into(),
            method: method.into(),
            t: bias.t_value,
            p: bias.p_value,
            n: bias.n_retained,
            removed: bias.n_removed,
            significant: bias.significant,
            direction: bias.direction,
            downstream: DownstreamSummary::from_reports(downstream),
        }
    }
}
