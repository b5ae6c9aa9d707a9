use log::warn;
use serde::{Deserialize, Serialize};

use super::AnnotatedInstance;
use crate::biasspec::{build_counterfactual, BiasSpecification, Direction};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CdaOutput {
    /// Each original phrase followed by its counterfactual, when one exists.
    pub utterances: Vec<String>,
    /// Phrases in which no pair term could be rewritten; kept once.
    pub unrewritten: Vec<String>,
}

/// Counterfactual data augmentation: every biased training phrase is kept
/// and joined by a copy whose minoritized target terms are replaced by
/// their dominant-group pairs.
pub fn cda_augment(train: &[AnnotatedInstance], spec: &BiasSpecification) -> CdaOutput {
    let mut out = CdaOutput::default();
    for inst in train {
        out.utterances.push(inst.phrase.clone());
        let cf = build_counterfactual(&inst.phrase, &spec.pairs, Direction::Forward);
        if cf.replacements > 0 {
            out.utterances.push(cf.text);
        } else {
            out.unrewritten.push(inst.phrase.clone());
        }
    }
    if !out.unrewritten.is_empty() {
        warn!(
            "{} of {} phrases had no rewritable target term",
            out.unrewritten.len(),
            train.len()
        );
    }
    out
}
