//! Debiasing: the three auxiliary losses plugged into LM training, and
//! counterfactual augmentation followed by plain fine-tuning.

mod losses;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use losses::{
    add_loss, attribute_positions, attribute_sequences, build_pair_vocab, combined_loss, hd_loss, lmd_loss,
    EmbeddingPairs, PairVocab,
};

use crate::biasspec::BiasSpecification;
use crate::corpus::{cda_augment, DataSplit};
use crate::error::{Error, Result};
use crate::lm::tape::{Tape, Var};
use crate::lm::{encode_corpus, train_lm, Batch, CausalLM, Forward, LmObjective, Objective, TrainConfig};
use crate::stats::bias_subspace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Lmd,
    Add,
    Hd,
    Cda,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Lmd, Method::Add, Method::Hd, Method::Cda];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Lmd => "lmd",
            Method::Add => "add",
            Method::Hd => "hd",
            Method::Cda => "cda",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid("method", format!("unknown method `{s}` (lmd, add, hd, cda)")))
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DebiasConfig {
    pub method: Method,
    pub lambda_lm: f64,
    pub lambda_d: f64,
    /// Explained-variance fraction that fixes the number of bias directions.
    pub hd_threshold: f64,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        DebiasConfig {
            method: Method::Cda,
            lambda_lm: 0.01,
            lambda_d: 50.0,
            hd_threshold: 0.5,
        }
    }
}

impl DebiasConfig {
    pub fn new(method: Method) -> Self {
        DebiasConfig {
            method,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_lm.is_nan() || self.lambda_d.is_nan() || self.lambda_lm < 0.0 || self.lambda_d < 0.0 {
            return Err(Error::invalid("lambda", "loss weights must be non-negative"));
        }
        if !(self.hd_threshold > 0.0 && self.hd_threshold <= 1.0) {
            return Err(Error::invalid("hd_threshold", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// The `(λ_LM, λ_D)` combinations searched during tuning.
pub fn lambda_grid() -> Vec<(f64, f64)> {
    let mut grid = Vec::new();
    for lm in [0.001, 0.01] {
        for d in [10.0, 50.0, 100.0] {
            grid.push((lm, d));
        }
    }
    grid
}

/// Training objective for the loss-based methods.
pub struct DebiasObjective {
    config: DebiasConfig,
    pair_vocab: Option<PairVocab>,
    embedding_pairs: Option<EmbeddingPairs>,
    averaging: Option<(Array2<f64>, Array2<f64>)>,
    attributes: Vec<Vec<usize>>,
    directions: Option<Array2<f64>>,
    /// Number of bias directions used in each epoch (hard debiasing).
    pub subspace_k: Vec<usize>,
    pub warnings: Vec<String>,
}

impl DebiasObjective {
    pub fn new(model: &CausalLM, spec: &BiasSpecification, config: &DebiasConfig) -> Result<Self> {
        config.validate()?;
        let mut warnings = Vec::new();
        let mut obj = DebiasObjective {
            config: config.clone(),
            pair_vocab: None,
            embedding_pairs: None,
            averaging: None,
            attributes: Vec::new(),
            directions: None,
            subspace_k: Vec::new(),
            warnings: Vec::new(),
        };
        match config.method {
            Method::Lmd => {
                let pv = build_pair_vocab(spec, &model.tokenizer)?;
                warnings.extend(
                    pv.excluded
                        .iter()
                        .map(|(a, b)| format!("pair ({a}, {b}) excluded: not single-token")),
                );
                obj.pair_vocab = Some(pv);
            }
            Method::Add | Method::Hd => {
                let ep = EmbeddingPairs::build(spec, &model.tokenizer)?;
                warnings.extend(
                    ep.excluded
                        .iter()
                        .map(|(a, b)| format!("pair ({a}, {b}) excluded: unknown token")),
                );
                let (attrs, skipped) = attribute_sequences(&spec.a1.without_markers(), &model.tokenizer);
                warnings.extend(
                    skipped
                        .iter()
                        .map(|a| format!("attribute `{a}` skipped: unknown token")),
                );
                if attrs.is_empty() {
                    return Err(Error::invalid("a1", "no attribute term is in the vocabulary"));
                }
                obj.averaging = Some(ep.averaging(model.config.vocab_size));
                obj.embedding_pairs = Some(ep);
                obj.attributes = attrs;
            }
            Method::Cda => return Err(Error::invalid("method", "cda has no auxiliary loss")),
        }
        obj.warnings = warnings;
        Ok(obj)
    }

    /// The debiasing term for one batch, or `None` if nothing triggers it.
    pub fn debias_term(&self, tape: &mut Tape, model: &CausalLM, batch: &Batch, fwd: &Forward) -> Result<Option<Var>> {
        Ok(match self.config.method {
            Method::Lmd => {
                let pv = self.pair_vocab.as_ref().expect("pair vocabulary");
                let targets: Vec<(usize, usize)> = batch
                    .segments
                    .iter()
                    .flat_map(|s| (s.start..s.end.saturating_sub(1)).map(|r| (r, batch.ids[r + 1])))
                    .collect();
                lmd_loss(tape, fwd.logits, &targets, pv)
            }
            Method::Add => {
                let rows = attribute_positions(&batch.ids, &batch.segments, &self.attributes);
                if rows.is_empty() {
                    return Ok(None);
                }
                let (m1, m2) = self.averaging.as_ref().expect("averaging matrices");
                let w = model.output_weight(tape);
                let (m1, m2) = (tape.constant(m1.clone()), tape.constant(m2.clone()));
                let t1 = tape.matmul(m1, w);
                let t2 = tape.matmul(m2, w);
                add_loss(tape, fwd.hidden, &rows, t1, t2)
            }
            Method::Hd => {
                let rows = attribute_positions(&batch.ids, &batch.segments, &self.attributes);
                let dirs = self
                    .directions
                    .as_ref()
                    .ok_or_else(|| Error::Model("bias subspace not computed".into()))?;
                hd_loss(tape, fwd.hidden, &rows, dirs)
            }
            Method::Cda => None,
        })
    }

    /// Recomputes the bias directions from the current output embeddings.
    pub fn refresh_subspace(&mut self, model: &CausalLM) -> Result<()> {
        let ep = self.embedding_pairs.as_ref().expect("embedding pairs");
        let diffs = ep.half_differences(model.output_weight_value());
        let sub = bias_subspace(diffs.view(), self.config.hd_threshold)?;
        self.subspace_k.push(sub.k);
        self.directions = Some(sub.directions);
        Ok(())
    }
}

impl Objective for DebiasObjective {
    fn start_epoch(&mut self, model: &CausalLM, _epoch: usize) -> Result<()> {
        if self.config.method == Method::Hd {
            self.refresh_subspace(model)?;
        }
        Ok(())
    }

    fn loss(
        &mut self,
        tape: &mut Tape,
        model: &CausalLM,
        batch: &Batch,
        fwd: &Forward,
        lm_loss: Var,
    ) -> Result<(Var, bool)> {
        let term = self.debias_term(tape, model, batch, fwd)?;
        let triggered = term.is_some();
        Ok((
            combined_loss(tape, lm_loss, term, self.config.lambda_lm, self.config.lambda_d),
            triggered,
        ))
    }
}

/// Everything needed to audit one debiasing run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebiasRecord {
    pub method: Method,
    /// Absent for augmentation, which uses the plain LM loss.
    pub lambda_lm: Option<f64>,
    pub lambda_d: Option<f64>,
    pub seed: u64,
    pub epochs: usize,
    pub training_utterances: usize,
    pub losses: Vec<f64>,
    pub lm_losses: Vec<f64>,
    pub triggered_batches: usize,
    pub batches: usize,
    /// Bias directions per epoch (hard debiasing only).
    pub subspace_k: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Fine-tunes `model` on the training portion of `split` with the chosen
/// method. Augmentation trains on each phrase plus its counterfactual; the
/// loss-based methods train on the phrases with the auxiliary term.
pub fn run_debias(
    model: &mut CausalLM,
    split: &DataSplit,
    spec: &BiasSpecification,
    config: &DebiasConfig,
    train: &TrainConfig,
) -> Result<DebiasRecord> {
    config.validate()?;
    let phrases: Vec<String> = split.train.iter().map(|i| i.phrase.clone()).collect();
    let mut warnings = Vec::new();
    let (texts, report, subspace_k) = if config.method == Method::Cda {
        let out = cda_augment(&split.train, spec);
        warnings.extend(out.unrewritten.iter().map(|p| format!("no counterfactual for `{p}`")));
        let corpus = encode_corpus(model, &out.utterances);
        let report = run_training(model, &corpus, train, &mut LmObjective)?;
        (out.utterances.len(), report, Vec::new())
    } else {
        let mut objective = DebiasObjective::new(model, spec, config)?;
        let corpus = encode_corpus(model, &phrases);
        let report = run_training(model, &corpus, train, &mut objective)?;
        warnings.append(&mut objective.warnings);
        (phrases.len(), report, objective.subspace_k)
    };
    let lambdas = config.method != Method::Cda;
    Ok(DebiasRecord {
        method: config.method,
        lambda_lm: lambdas.then_some(config.lambda_lm),
        lambda_d: lambdas.then_some(config.lambda_d),
        seed: train.seed,
        epochs: train.epochs,
        training_utterances: texts,
        losses: report.losses,
        lm_losses: report.lm_losses,
        triggered_batches: report.triggered_batches,
        batches: report.batches,
        subspace_k,
        warnings,
    })
}

fn run_training(
    model: &mut CausalLM,
    corpus: &[Vec<usize>],
    train: &TrainConfig,
    objective: &mut dyn Objective,
) -> Result<crate::lm::TrainReport> {
    if train.epochs == 0 {
        return Ok(Default::default());
    }
    train_lm(model, corpus, train, objective)
}

/// One grid cell: the λ pair, its record and the selection score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda_lm: f64,
    pub lambda_d: f64,
    pub score: f64,
    pub record: DebiasRecord,
}

/// Runs every λ combination from a copy of `model` and keeps the one with
/// the lowest `score` (for instance, |t| of the bias test on the dev
/// portion). Returns the chosen model and all cells in grid order.
pub fn grid_search<F>(
    model: &CausalLM,
    split: &DataSplit,
    spec: &BiasSpecification,
    config: &DebiasConfig,
    train: &TrainConfig,
    mut score: F,
) -> Result<(CausalLM, Vec<GridCell>)>
where
    F: FnMut(&CausalLM) -> Result<f64>,
{
    if config.method == Method::Cda {
        return Err(Error::invalid("method", "augmentation has no loss weights to tune"));
    }
    let mut best: Option<(f64, CausalLM)> = None;
    let mut cells = Vec::new();
    for (lambda_lm, lambda_d) in lambda_grid() {
        let cfg = DebiasConfig {
            lambda_lm,
            lambda_d,
            ..config.clone()
        };
        let mut m = model.clone();
        let record = run_debias(&mut m, split, spec, &cfg, train)?;
        let s = score(&m)?;
        if best.as_ref().is_none_or(|(b, _)| s < *b) {
            best = Some((s, m));
        }
        cells.push(GridCell {
            lambda_lm,
            lambda_d,
            score: s,
            record,
        });
    }
    Ok((best.expect("non-empty grid").1, cells))
}
