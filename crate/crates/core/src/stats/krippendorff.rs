use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Units × annotators grid of nominal labels; `None` marks a missing label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationMatrix {
    labels: Vec<Vec<Option<u32>>>,
}

impl AnnotationMatrix {
    /// `labels[u][a]` is annotator `a`'s label for unit `u`. Requires at
    /// least two annotators and one unit labelled at least twice.
    pub fn new(labels: Vec<Vec<Option<u32>>>) -> Result<Self> {
        let annotators = labels.first().map_or(0, Vec::len);
        if annotators < 2 {
            return Err(Error::invalid("annotation matrix", "need at least 2 annotators"));
        }
        if labels.iter().any(|row| row.len() != annotators) {
            return Err(Error::invalid("annotation matrix", "ragged rows"));
        }
        if !labels.iter().any(|row| row.iter().flatten().count() >= 2) {
            return Err(Error::invalid("annotation matrix", "no unit has two or more labels"));
        }
        Ok(AnnotationMatrix { labels })
    }

    pub fn units(&self) -> usize {
        self.labels.len()
    }

    pub fn annotators(&self) -> usize {
        self.labels[0].len()
    }

    pub fn rows(&self) -> &[Vec<Option<u32>>] {
        &self.labels
    }
}

/// Krippendorff's α for nominal data, `1 - D_o / D_e`, built from the
/// coincidence matrix over pairable values (units with ≥ 2 labels).
///
/// When every pairable value agrees the result is exactly `1.0`, even if
/// only one category occurs and `D_e` vanishes.
pub fn krippendorff_alpha_nominal(matrix: &AnnotationMatrix) -> Result<f64> {
    let mut coincidence: BTreeMap<(u32, u32), f64> = BTreeMap::new();
    for row in matrix.rows() {
        let values: Vec<u32> = row.iter().flatten().copied().collect();
        let m = values.len();
        if m < 2 {
            continue;
        }
        let w = 1.0 / (m as f64 - 1.0);
        for (i, &c) in values.iter().enumerate() {
            for (j, &k) in values.iter().enumerate() {
                if i != j {
                    *coincidence.entry((c, k)).or_default() += w;
                }
            }
        }
    }

    let mut marginals: BTreeMap<u32, f64> = BTreeMap::new();
    for (&(c, _), &v) in &coincidence {
        *marginals.entry(c).or_default() += v;
    }
    let n: f64 = marginals.values().sum();
    if n < 2.0 {
        return Err(Error::Stats("fewer than 2 pairable values".into()));
    }

    let observed: f64 = coincidence.iter().filter(|((c, k), _)| c != k).map(|(_, v)| v).sum();
    if observed == 0.0 {
        return Ok(1.0);
    }
    let total: f64 = marginals.values().sum::<f64>().powi(2);
    let same: f64 = marginals.values().map(|v| v * v).sum();
    let expected_pairs = total - same;
    Ok(1.0 - (n - 1.0) * observed / expected_pairs)
}
