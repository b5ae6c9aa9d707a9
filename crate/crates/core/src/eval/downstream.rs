use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::metrics::{corpus_bleu4, dist_n, entropy_n};
use crate::corpus::{CrgDataset, DstDataset, DstExample};
use crate::error::{Error, Result};
use crate::lm::{
    generate, split_words, Adam, Batch, CausalLM, Decoding, ParamGrads, Tape, TrainConfig, Var, BOS_ID, EOS_ID,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Dst,
    Crg,
    Lmp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamReport {
    pub task: Task,
    pub metrics: BTreeMap<String, f64>,
}

impl DownstreamReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }
}

/// Fine-tuning settings for the downstream probes. Batch sizes follow the
/// DST (48) and response-generation (80) setups; learning rates are sized
/// for the toy model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownstreamConfig {
    pub dst_lr: f64,
    pub dst_batch: usize,
    pub dst_epochs: usize,
    pub crg_lr: f64,
    pub crg_batch: usize,
    pub crg_epochs: usize,
    pub max_response: usize,
    pub seed: u64,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        DownstreamConfig {
            dst_lr: 1e-3,
            dst_batch: 48,
            dst_epochs: 1,
            crg_lr: 1e-3,
            crg_batch: 80,
            crg_epochs: 1,
            max_response: 20,
            seed: 0,
        }
    }
}

/// Mean per-utterance perplexity over a reference set.
pub fn lmp_evaluate<S: AsRef<str>>(model: &CausalLM, references: &[S]) -> Result<DownstreamReport> {
    if references.is_empty() {
        return Err(Error::invalid("references", "no reference utterances"));
    }
    let pps = model.perplexities(references)?;
    let mean = pps.iter().sum::<f64>() / pps.len() as f64;
    Ok(DownstreamReport {
        task: Task::Lmp,
        metrics: BTreeMap::from([("perplexity".to_string(), mean)]),
    })
}

/// Non-blank lines of a plain-text file.
pub fn read_reference_file(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let lines: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if lines.is_empty() {
        return Err(Error::invalid("references", format!("{} is empty", path.display())));
    }
    Ok(lines)
}

/// F1 of the positive class and accuracy. F1 is 1 when there are neither
/// gold nor predicted positives.
pub fn f1_accuracy(predicted: &[bool], gold: &[bool]) -> (f64, f64) {
    let (mut tp, mut fp, mut fneg, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &g) in predicted.iter().zip(gold) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
        correct += usize::from(p == g);
    }
    let f1 = if tp + fp + fneg == 0 {
        1.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };
    (f1, correct as f64 / gold.len().max(1) as f64)
}

/// Feed-forward head over the hidden state of the final input token.
struct DstHead {
    params: Vec<Array2<f64>>,
}

impl DstHead {
    fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let mut w = |r, c| Array2::from_shape_fn((r, c), |_| normal.sample(&mut rng));
        DstHead {
            params: vec![w(dim, dim), Array2::zeros((1, dim)), w(dim, 1), Array2::zeros((1, 1))],
        }
    }

    /// n×1 logits for the packed `batch`.
    fn logits(&self, tape: &mut Tape, model: &CausalLM, batch: &Batch) -> Result<Var> {
        let offset = model.params.len();
        let hidden = model.forward_hidden(tape, batch)?;
        let last: Vec<usize> = batch.segments.iter().map(|s| s.end - 1).collect();
        let h = tape.select_rows(hidden, last);
        let p: Vec<Var> = (0..4).map(|i| tape.param(offset + i, &self.params[i])).collect();
        let z = tape.matmul(h, p[0]);
        let z = tape.add_row(z, p[1]);
        let z = tape.gelu(z);
        let z = tape.matmul(z, p[2]);
        Ok(tape.add_row(z, p[3]))
    }
}

fn dst_input(model: &CausalLM, ex: &DstExample) -> Vec<usize> {
    let mut ids = vec![BOS_ID];
    ids.extend(model.tokenizer.encode(&ex.input_text()));
    ids.truncate(model.config.max_seq);
    ids
}

/// Fine-tunes a copy of `model` jointly with a binary classification head
/// on the DST train split and reports F1 and accuracy on the test split.
pub fn dst_train_eval(model: &CausalLM, data: &DstDataset, cfg: &DownstreamConfig) -> Result<DownstreamReport> {
    let has = |label| data.train.iter().any(|e| e.label == label);
    if !has(true) || !has(false) || data.test.is_empty() {
        return Err(Error::invalid(
            "dst data",
            "training data must contain both labels and a test split",
        ));
    }
    let mut lm = model.clone();
    let mut head = DstHead::new(lm.config.model_dim, cfg.seed);
    let train_cfg = TrainConfig {
        lr: cfg.dst_lr,
        ..TrainConfig::default()
    };
    let mut adam_lm = Adam::new(lm.params.values());
    let mut adam_head = Adam::new(&head.params);
    let n_lm = lm.params.len();
    let inputs: Vec<Vec<usize>> = data.train.iter().map(|e| dst_input(&lm, e)).collect();
    for epoch in 0..cfg.dst_epochs {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(epoch as u64)));
        for chunk in order.chunks(cfg.dst_batch.max(1)) {
            let seqs: Vec<&[usize]> = chunk.iter().map(|&i| inputs[i].as_slice()).collect();
            let labels = chunk
                .iter()
                .map(|&i| if data.train[i].label { 1.0 } else { 0.0 })
                .collect();
            let batch = Batch::new(&seqs);
            let mut tape = Tape::new();
            let z = head.logits(&mut tape, &lm, &batch)?;
            let loss = tape.bce_with_logits(z, labels);
            let value = tape.scalar_value(loss);
            if !value.is_finite() {
                return Err(Error::Diverged { step: 0, loss: value });
            }
            let mut grads: ParamGrads = tape.backward(loss, n_lm + 4);
            let head_grads = grads.split_off(n_lm);
            adam_lm.step(lm.params.values_mut(), &grads, &train_cfg);
            adam_head.step(&mut head.params, &head_grads, &train_cfg);
        }
    }

    let mut predicted = Vec::with_capacity(data.test.len());
    for chunk in data.test.chunks(64) {
        let seqs: Vec<Vec<usize>> = chunk.iter().map(|e| dst_input(&lm, e)).collect();
        let mut tape = Tape::new();
        let z = head.logits(&mut tape, &lm, &Batch::new(&seqs))?;
        predicted.extend(tape.value(z).iter().map(|&v| v > 0.0));
    }
    let gold: Vec<bool> = data.test.iter().map(|e| e.label).collect();
    let (f1, accuracy) = f1_accuracy(&predicted, &gold);
    Ok(DownstreamReport {
        task: Task::Dst,
        metrics: BTreeMap::from([("f1".to_string(), f1), ("accuracy".to_string(), accuracy)]),
    })
}

/// `bos + context + eos`, the prompt for response generation.
fn crg_prompt(model: &CausalLM, context: &str) -> Vec<usize> {
    let mut ids = vec![BOS_ID];
    ids.extend(model.tokenizer.encode(context));
    ids.push(EOS_ID);
    ids
}

/// Fine-tunes a copy of `model` on context→response pairs (loss on the
/// response tokens), decodes test responses greedily and scores them with
/// corpus BLEU-4, Dist-2 and Entropy-4.
pub fn crg_train_eval(model: &CausalLM, data: &CrgDataset, cfg: &DownstreamConfig) -> Result<DownstreamReport> {
    if data.test.is_empty() {
        return Err(Error::invalid("crg data", "empty test split"));
    }
    let mut lm = model.clone();
    let max_seq = lm.config.max_seq;
    // (sequence, index of the eos that ends the context)
    let mut train: Vec<(Vec<usize>, usize)> = Vec::new();
    for ex in &data.train {
        let mut ids = crg_prompt(&lm, &ex.context);
        let split = ids.len() - 1;
        ids.extend(lm.tokenizer.encode(&ex.references[0]));
        ids.push(EOS_ID);
        ids.truncate(max_seq);
        if ids.len() > split + 1 {
            train.push((ids, split));
        }
    }
    let train_cfg = TrainConfig {
        lr: cfg.crg_lr,
        ..TrainConfig::default()
    };
    let mut adam = Adam::new(lm.params.values());
    let n = lm.params.len();
    for epoch in 0..cfg.crg_epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            cfg.seed.wrapping_add(1000 + epoch as u64),
        ));
        for chunk in order.chunks(cfg.crg_batch.max(1)) {
            let seqs: Vec<&[usize]> = chunk.iter().map(|&i| train[i].0.as_slice()).collect();
            let batch = Batch::new(&seqs);
            let mut tape = Tape::new();
            let fwd = lm.forward(&mut tape, &batch)?;
            let mut targets = Vec::new();
            for (seg, &i) in batch.segments.iter().zip(chunk) {
                let first = seg.start + train[i].1;
                let w = 1.0 / ((seg.end - 1 - first) as f64 * chunk.len() as f64);
                for r in first..seg.end - 1 {
                    targets.push((r, batch.ids[r + 1], w));
                }
            }
            let loss = tape.cross_entropy(fwd.logits, targets);
            let value = tape.scalar_value(loss);
            if !value.is_finite() {
                return Err(Error::Diverged { step: 0, loss: value });
            }
            let grads = tape.backward(loss, n);
            adam.step(lm.params.values_mut(), &grads, &train_cfg);
        }
    }

    let mut outputs: Vec<Vec<String>> = Vec::with_capacity(data.test.len());
    let mut references: Vec<Vec<Vec<String>>> = Vec::with_capacity(data.test.len());
    for ex in &data.test {
        let mut prompt = crg_prompt(&lm, &ex.context);
        prompt.truncate(max_seq - 1);
        let ids = generate(&lm, &prompt, cfg.max_response, Decoding::Greedy)?;
        outputs.push(
            ids.iter()
                .filter_map(|&i| lm.tokenizer.word(i))
                .map(String::from)
                .collect(),
        );
        references.push(ex.references.iter().map(|r| split_words(r)).collect());
    }
    Ok(DownstreamReport {
        task: Task::Crg,
        metrics: BTreeMap::from([
            ("bleu4".to_string(), corpus_bleu4(&outputs, &references)?),
            ("dist2".to_string(), dist_n(&outputs, 2)?),
            ("entropy4".to_string(), entropy_n(&outputs, 4)?),
        ]),
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;

    #[test]
    fn f1_cases() {
        assert_eq!(f1_accuracy(&[true, true], &[true, true]), (1.0, 1.0));
        let (f1, acc) = f1_accuracy(&[true, false, true, false], &[true, true, false, false]);
        assert!((f1 - 0.5).abs() < 1e-12 && (acc - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_predictor_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gold: Vec<bool> = (0..1000).map(|i| i % 2 == 0).collect();
        let pred: Vec<bool> = (0..1000).map(|_| rng.random()).collect();
        let (_, acc) = f1_accuracy(&pred, &gold);
        assert!((acc - 0.5).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn reference_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("refs.txt");
        std::fs::write(&p, "hello there\n\n  how are you \n").unwrap();
        assert_eq!(read_reference_file(&p).unwrap(), ["hello there", "how are you"]);
        std::fs::write(&p, "\n \n").unwrap();
        assert!(read_reference_file(&p).is_err());
    }
}
