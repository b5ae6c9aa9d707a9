use std::ops::Range;
use std::rc::Rc;

use ndarray::{Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tokenizer::{Tokenizer, UNK_ID};
use crate::error::{Error, Result};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LMConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub max_seq: usize,
    pub vocab_size: usize,
    pub tied_embeddings: bool,
}

impl LMConfig {
    /// 4 layers, width 128, 4 heads, feed-forward 512, 128 positions.
    pub fn toy(vocab_size: usize) -> Self {
        LMConfig {
            layers: 4,
            model_dim: 128,
            heads: 4,
            ffn_dim: 512,
            max_seq: 128,
            vocab_size,
            tied_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_dim == 0 || self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(
                "model_dim",
                format!("{} is not divisible by {} heads", self.model_dim, self.heads),
            ));
        }
        if self.max_seq < 2 {
            return Err(Error::invalid("max_seq", "must be at least 2"));
        }
        if self.vocab_size <= super::tokenizer::EOS_ID {
            return Err(Error::invalid("vocab_size", "too small for the special tokens"));
        }
        if self.ffn_dim == 0 {
            return Err(Error::invalid("ffn_dim", "must be positive"));
        }
        Ok(())
    }

    /// Parameter names and shapes in storage order.
    pub fn param_shapes(&self) -> Vec<(String, (usize, usize))> {
        let (d, f, v) = (self.model_dim, self.ffn_dim, self.vocab_size);
        let mut out = vec![
            ("tok_emb".to_string(), (v, d)),
            ("pos_emb".to_string(), (self.max_seq, d)),
        ];
        for i in 0..self.layers {
            for (name, shape) in [
                ("ln1.gamma", (1, d)),
                ("ln1.beta", (1, d)),
                ("attn.qkv.weight", (d, 3 * d)),
                ("attn.qkv.bias", (1, 3 * d)),
                ("attn.out.weight", (d, d)),
                ("attn.out.bias", (1, d)),
                ("ln2.gamma", (1, d)),
                ("ln2.beta", (1, d)),
                ("ffn.up.weight", (d, f)),
                ("ffn.up.bias", (1, f)),
                ("ffn.down.weight", (f, d)),
                ("ffn.down.bias", (1, d)),
            ] {
                out.push((format!("layers.{i}.{name}"), shape));
            }
        }
        out.push(("ln_f.gamma".to_string(), (1, d)));
        out.push(("ln_f.beta".to_string(), (1, d)));
        if !self.tied_embeddings {
            out.push(("lm_head".to_string(), (v, d)));
        }
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.param_shapes().iter().map(|(_, (r, c))| r * c).sum()
    }
}

const PER_LAYER: usize = 12;

/// Named parameter tensors, all f32-representable.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new(names: Vec<String>, values: Vec<Array2<f64>>) -> Self {
        assert_eq!(names.len(), values.len());
        ParamStore { names, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.values
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.index(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.index(name).map(|i| &mut self.values[i])
    }
}

/// Round every entry to the nearest f32 so checkpoints are lossless.
pub(crate) fn round_to_f32(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| v as f32 as f64);
}

/// Several token sequences packed row-wise for one forward pass.
#[derive(Debug, Clone)]
pub struct Batch {
    pub ids: Rc<[usize]>,
    pub positions: Rc<[usize]>,
    pub segments: Rc<[Range<usize>]>,
}

impl Batch {
    pub fn new<S: AsRef<[usize]>>(seqs: &[S]) -> Self {
        let mut ids = Vec::new();
        let mut positions = Vec::new();
        let mut segments = Vec::with_capacity(seqs.len());
        for s in seqs {
            let s = s.as_ref();
            let start = ids.len();
            ids.extend_from_slice(s);
            positions.extend(0..s.len());
            segments.push(start..ids.len());
        }
        Batch {
            ids: ids.into(),
            positions: positions.into(),
            segments: segments.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn sequence(&self, i: usize) -> &[usize] {
        &self.ids[self.segments[i].clone()]
    }
}

/// Nodes produced by one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Forward {
    /// Final-layer (post layer norm) hidden states, T×d.
    pub hidden: Var,
    /// Next-token scores, T×V.
    pub logits: Var,
}

/// Decoder-only transformer with learned positions and pre-norm blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalLM {
    pub config: LMConfig,
    pub tokenizer: Tokenizer,
    pub params: ParamStore,
    /// Optimizer steps taken so far.
    pub steps: u64,
}

impl CausalLM {
    /// Random initialization: N(0, 0.02) weights, residual output projections
    /// scaled by 1/sqrt(2·layers), zero biases, unit layer-norm gains.
    pub fn new(config: LMConfig, tokenizer: Tokenizer, seed: u64) -> Result<Self> {
        config.validate()?;
        if tokenizer.len() != config.vocab_size {
            return Err(Error::invalid(
                "vocab_size",
                format!("config says {}, tokenizer has {}", config.vocab_size, tokenizer.len()),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let residual_scale = 1.0 / ((2 * config.layers.max(1)) as f64).sqrt();
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (name, shape) in config.param_shapes() {
            let mut value = if name.ends_with("gamma") {
                Array2::ones(shape)
            } else if name.ends_with("bias") || name.ends_with("beta") {
                Array2::zeros(shape)
            } else {
                let scale = if name.ends_with("attn.out.weight") || name.ends_with("ffn.down.weight") {
                    residual_scale
                } else {
                    1.0
                };
                Array2::from_shape_fn(shape, |_| normal.sample(&mut rng) * scale)
            };
            round_to_f32(&mut value);
            names.push(name);
            values.push(value);
        }
        Ok(CausalLM {
            config,
            tokenizer,
            params: ParamStore::new(names, values),
            steps: 0,
        })
    }

    fn p(&self, tape: &mut Tape, id: usize) -> Var {
        tape.param(id, &self.params.values[id])
    }

    fn layer_param(&self, tape: &mut Tape, layer: usize, k: usize) -> Var {
        self.p(tape, 2 + layer * PER_LAYER + k)
    }

    /// Matrix whose rows are the output (LM-head) embeddings.
    pub fn output_weight(&self, tape: &mut Tape) -> Var {
        let id = if self.config.tied_embeddings {
            0
        } else {
            self.params.len() - 1
        };
        self.p(tape, id)
    }

    pub fn output_weight_value(&self) -> &Array2<f64> {
        if self.config.tied_embeddings {
            &self.params.values[0]
        } else {
            &self.params.values[self.params.len() - 1]
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        for seg in batch.segments.iter() {
            if seg.is_empty() {
                return Err(Error::Model("empty sequence".into()));
            }
            if seg.len() > self.config.max_seq {
                return Err(Error::Model(format!(
                    "sequence of {} tokens exceeds max_seq {}",
                    seg.len(),
                    self.config.max_seq
                )));
            }
        }
        if let Some(&bad) = batch.ids.iter().find(|&&i| i >= self.config.vocab_size) {
            return Err(Error::Model(format!("token id {bad} outside the vocabulary")));
        }
        Ok(())
    }

    /// Final hidden states only (no vocabulary projection).
    pub fn forward_hidden(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        self.check_batch(batch)?;
        let d = self.config.model_dim;
        let tok = self.p(tape, 0);
        let pos = self.p(tape, 1);
        let te = tape.gather(tok, batch.ids.clone());
        let pe = tape.gather(pos, batch.positions.clone());
        let mut x = tape.add(te, pe);
        for l in 0..self.config.layers {
            let lp = |tape: &mut Tape, k| self.layer_param(tape, l, k);
            let (g1, b1) = (lp(tape, 0), lp(tape, 1));
            let h = tape.layer_norm(x, g1, b1, LN_EPS);
            let (wqkv, bqkv) = (lp(tape, 2), lp(tape, 3));
            let qkv = tape.matmul(h, wqkv);
            let qkv = tape.add_row(qkv, bqkv);
            let a = tape.attention(qkv, self.config.heads, batch.segments.clone());
            debug_assert_eq!(tape.value(a).ncols(), d);
            let (wo, bo) = (lp(tape, 4), lp(tape, 5));
            let a = tape.matmul(a, wo);
            let a = tape.add_row(a, bo);
            x = tape.add(x, a);
            let (g2, b2) = (lp(tape, 6), lp(tape, 7));
            let h = tape.layer_norm(x, g2, b2, LN_EPS);
            let (wu, bu, wd, bd) = (lp(tape, 8), lp(tape, 9), lp(tape, 10), lp(tape, 11));
            let u = tape.matmul(h, wu);
            let u = tape.add_row(u, bu);
            let u = tape.gelu(u);
            let u = tape.matmul(u, wd);
            let u = tape.add_row(u, bd);
            x = tape.add(x, u);
        }
        let base = 2 + self.config.layers * PER_LAYER;
        let (gf, bf) = (self.p(tape, base), self.p(tape, base + 1));
        Ok(tape.layer_norm(x, gf, bf, LN_EPS))
    }

    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<Forward> {
        let hidden = self.forward_hidden(tape, batch)?;
        let w = self.output_weight(tape);
        let logits = tape.matmul_t(hidden, w);
        Ok(Forward { hidden, logits })
    }

    /// Causal LM loss: per-sequence mean next-token cross-entropy, averaged
    /// over the sequences of the batch. Single-token sequences contribute
    /// nothing.
    pub fn lm_loss(&self, tape: &mut Tape, batch: &Batch, fwd: &Forward) -> Var {
        let scored = batch.segments.iter().filter(|s| s.len() >= 2).count().max(1) as f64;
        let mut targets = Vec::with_capacity(batch.len());
        for seg in batch.segments.iter().filter(|s| s.len() >= 2) {
            let w = 1.0 / ((seg.len() - 1) as f64 * scored);
            for r in seg.start..seg.end - 1 {
                targets.push((r, batch.ids[r + 1], w));
            }
        }
        tape.cross_entropy(fwd.logits, targets)
    }

    /// Pre-softmax next-token scores for every position of one sequence.
    pub fn forward_logits(&self, ids: &[usize]) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, &Batch::new(&[ids]))?;
        Ok(tape.value(fwd.logits).clone())
    }

    /// Mean next-token negative log-likelihood (natural log) of each id
    /// sequence, computed in packed batches.
    pub fn sequence_nlls_ids<S: AsRef<[usize]>>(&self, seqs: &[S]) -> Result<Vec<f64>> {
        const CHUNK: usize = 64;
        let mut out = Vec::with_capacity(seqs.len());
        for chunk in seqs.chunks(CHUNK) {
            if let Some(short) = chunk.iter().find(|s| s.as_ref().len() < 2) {
                return Err(Error::Model(format!(
                    "need at least 2 tokens to score, got {}",
                    short.as_ref().len()
                )));
            }
            let batch = Batch::new(chunk);
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, &batch)?;
            let logits = tape.value(fwd.logits);
            for seg in batch.segments.iter() {
                let mut total = 0.0;
                for r in seg.start..seg.end - 1 {
                    let row = logits.row(r);
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    let lse = max + row.mapv(|v| (v - max).exp()).sum().ln();
                    total += lse - row[batch.ids[r + 1]];
                }
                out.push(total / (seg.len() - 1) as f64);
            }
        }
        Ok(out)
    }

    /// `bos + tokens + eos`, truncated to `max_seq`.
    pub fn encode_text(&self, text: &str) -> Result<Vec<usize>> {
        let mut ids = self.tokenizer.encode_sequence(text);
        if ids.len() == 2 {
            return Err(Error::Model(format!("`{text}` has no tokens")));
        }
        ids.truncate(self.config.max_seq);
        Ok(ids)
    }

    pub fn sequence_nll(&self, text: &str) -> Result<f64> {
        let ids = self.encode_text(text)?;
        Ok(self.sequence_nlls_ids(&[ids])?[0])
    }

    pub fn perplexity(&self, text: &str) -> Result<f64> {
        Ok(self.sequence_nll(text)?.exp())
    }

    /// Perplexity of each text.
    pub fn perplexities<S: AsRef<str>>(&self, texts: &[S]) -> Result<Vec<f64>> {
        let seqs = texts
            .iter()
            .map(|t| self.encode_text(t.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.sequence_nlls_ids(&seqs)?.into_iter().map(f64::exp).collect())
    }

    /// Token ids of `term` (no bos/eos); errors if every token is unknown.
    pub fn term_ids(&self, term: &str) -> Result<Vec<usize>> {
        let ids = self.tokenizer.encode(term);
        if ids.is_empty() || ids.iter().all(|&i| i == UNK_ID) {
            return Err(Error::Model(format!("`{term}` is not in the vocabulary")));
        }
        Ok(ids)
    }

    /// Output-layer embedding of `term`, averaged over its tokens.
    pub fn output_embedding(&self, term: &str) -> Result<Array1<f64>> {
        let ids = self.term_ids(term)?;
        Ok(self
            .output_weight_value()
            .select(Axis(0), &ids)
            .mean_axis(Axis(0))
            .expect("non-empty"))
    }

    /// Final-layer hidden state at `position` of `ids`.
    pub fn contextual_vector(&self, ids: &[usize], position: usize) -> Result<Array1<f64>> {
        if position >= ids.len() {
            return Err(Error::Model(format!(
                "position {position} outside a sequence of {}",
                ids.len()
            )));
        }
        let mut tape = Tape::new();
        let h = self.forward_hidden(&mut tape, &Batch::new(&[ids]))?;
        Ok(tape.value(h).row(position).to_owned())
    }
}
