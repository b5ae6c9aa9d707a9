use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{round_to_f32, Batch, CausalLM, Forward};
use super::tape::{ParamGrads, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_accum_steps: usize,
    pub seed: u64,
    /// Decay the learning rate linearly to zero over the run.
    pub linear_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            epochs: 2,
            batch_size: 16,
            grad_accum_steps: 1,
            seed: 0,
            linear_decay: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(Error::invalid("lr", "must be positive"));
        }
        if self.batch_size == 0 || self.grad_accum_steps == 0 {
            return Err(Error::invalid(
                "batch_size",
                "batch size and accumulation steps must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("beta", "must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 || self.epsilon <= 0.0 {
            return Err(Error::invalid(
                "weight_decay",
                "weight decay ≥ 0 and epsilon > 0 required",
            ));
        }
        Ok(())
    }
}

/// Training-time objective. The default is the plain causal LM loss; the
/// debiasing methods plug in extra terms here.
pub trait Objective {
    /// Called before each epoch with the current parameters.
    fn start_epoch(&mut self, _model: &CausalLM, _epoch: usize) -> Result<()> {
        Ok(())
    }

    /// Builds the batch loss from the forward pass and the LM loss node.
    /// Returns the loss and whether any extra term was active.
    fn loss(
        &mut self,
        tape: &mut Tape,
        model: &CausalLM,
        batch: &Batch,
        fwd: &Forward,
        lm_loss: Var,
    ) -> Result<(Var, bool)>;
}

/// Plain causal language modelling.
pub struct LmObjective;

impl Objective for LmObjective {
    fn loss(&mut self, _: &mut Tape, _: &CausalLM, _: &Batch, _: &Forward, lm_loss: Var) -> Result<(Var, bool)> {
        Ok((lm_loss, false))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Objective value per optimizer step (mean over accumulated batches).
    pub losses: Vec<f64>,
    /// LM-loss component per optimizer step.
    pub lm_losses: Vec<f64>,
    /// Batches on which an extra objective term was active.
    pub triggered_batches: usize,
    pub batches: usize,
}

/// Adam with bias correction and decoupled weight decay.
pub struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: u64,
}

impl Adam {
    /// Zero moment estimates shaped like `params`.
    pub fn new(params: &[Array2<f64>]) -> Self {
        let zeros = || params.iter().map(|p| Array2::zeros(p.raw_dim())).collect();
        Adam {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// One update of `params` from `grads` (missing gradients count as zero).
    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Option<Array2<f64>>], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let Some(g) = &grads[i] else {
                if cfg.weight_decay == 0.0 && self.m[i].iter().all(|&x| x == 0.0) {
                    continue;
                }
                let zero = Array2::zeros(p.raw_dim());
                update(p, &mut self.m[i], &mut self.v[i], &zero, cfg, bc1, bc2);
                continue;
            };
            update(p, &mut self.m[i], &mut self.v[i], g, cfg, bc1, bc2);
        }
    }
}

fn update(
    p: &mut Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    g: &Array2<f64>,
    cfg: &TrainConfig,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(&mut *p)
        .and(m)
        .and(v)
        .and(g)
        .for_each(|p, m, v, &g| {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let step = (*m / bc1) / ((*v / bc2).sqrt() + cfg.epsilon);
            *p -= cfg.lr * (step + cfg.weight_decay * *p);
        });
    round_to_f32(p);
}

pub(crate) fn add_grads(acc: &mut ParamGrads, g: ParamGrads) {
    for (a, g) in acc.iter_mut().zip(g) {
        match (a.as_mut(), g) {
            (Some(a), Some(g)) => *a += &g,
            (None, Some(g)) => *a = Some(g),
            _ => {}
        }
    }
}

/// Encodes texts as `bos + tokens + eos` sequences, dropping texts without
/// tokens.
pub fn encode_corpus<S: AsRef<str>>(model: &CausalLM, texts: &[S]) -> Vec<Vec<usize>> {
    texts
        .iter()
        .filter_map(|t| model.encode_text(t.as_ref()).ok())
        .collect()
}

/// Trains `model` on `corpus` (token id sequences) with Adam.
///
/// Each epoch visits the corpus in a seeded random order, in batches of
/// `batch_size`; gradients of `grad_accum_steps` consecutive batches are
/// averaged before each optimizer step. A non-finite loss aborts training.
pub fn train_lm(
    model: &mut CausalLM,
    corpus: &[Vec<usize>],
    cfg: &TrainConfig,
    objective: &mut dyn Objective,
) -> Result<TrainReport> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("corpus", "no training sequences"));
    }
    let mut adam = Adam::new(model.params.values());
    let mut report = TrainReport::default();
    let n_params = model.params.len();
    let steps_per_epoch = corpus.len().div_ceil(cfg.batch_size).div_ceil(cfg.grad_accum_steps);
    let total_steps = (steps_per_epoch * cfg.epochs) as f64;
    let mut step_cfg = cfg.clone();
    for epoch in 0..cfg.epochs {
        objective.start_epoch(model, epoch)?;
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        ));
        let batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        for group in batches.chunks(cfg.grad_accum_steps) {
            let mut acc: ParamGrads = vec![None; n_params];
            let (mut loss_sum, mut lm_sum) = (0.0, 0.0);
            for idx in group {
                let seqs: Vec<&[usize]> = idx.iter().map(|&i| corpus[i].as_slice()).collect();
                let batch = Batch::new(&seqs);
                let mut tape = Tape::new();
                let fwd = model.forward(&mut tape, &batch)?;
                let lm = model.lm_loss(&mut tape, &batch, &fwd);
                let (loss, triggered) = objective.loss(&mut tape, model, &batch, &fwd, lm)?;
                let value = tape.scalar_value(loss);
                if !value.is_finite() {
                    return Err(Error::Diverged {
                        step: model.steps as usize,
                        loss: value,
                    });
                }
                loss_sum += value;
                lm_sum += tape.scalar_value(lm);
                report.batches += 1;
                report.triggered_batches += usize::from(triggered);
                add_grads(&mut acc, tape.backward(loss, n_params));
            }
            let k = group.len() as f64;
            for g in acc.iter_mut().flatten() {
                *g /= k;
            }
            if cfg.linear_decay {
                step_cfg.lr = cfg.lr * (1.0 - report.losses.len() as f64 / total_steps);
            }
            adam.step(model.params.values_mut(), &acc, &step_cfg);
            model.steps += 1;
            report.losses.push(loss_sum / k);
            report.lm_losses.push(lm_sum / k);
        }
    }
    Ok(report)
}
