use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::CausalLM;
use super::tokenizer::EOS_ID;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decoding {
    Greedy,
    /// Sample from the `k` highest-scoring tokens.
    TopK {
        k: usize,
        seed: u64,
    },
}

/// Autoregressive continuation of `context`. Stops after `max_new` tokens,
/// when eos is produced (eos is not returned) or when the sequence reaches
/// `max_seq`.
pub fn generate(model: &CausalLM, context: &[usize], max_new: usize, mode: Decoding) -> Result<Vec<usize>> {
    if context.is_empty() || context.len() >= model.config.max_seq {
        return Err(Error::Model(format!(
            "context of {} tokens must be non-empty and shorter than max_seq {}",
            context.len(),
            model.config.max_seq
        )));
    }
    let mut rng = match mode {
        Decoding::TopK { k: 0, .. } => return Err(Error::invalid("k", "must be positive")),
        Decoding::TopK { seed, .. } => Some(ChaCha8Rng::seed_from_u64(seed)),
        Decoding::Greedy => None,
    };
    let mut seq = context.to_vec();
    let mut out = Vec::new();
    while out.len() < max_new && seq.len() < model.config.max_seq {
        let logits = model.forward_logits(&seq)?;
        let last = logits.row(seq.len() - 1);
        let next = match (mode, rng.as_mut()) {
            (Decoding::TopK { k, .. }, Some(rng)) if k > 1 => {
                let mut ranked: Vec<(usize, f64)> = last.iter().copied().enumerate().collect();
                ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
                ranked.truncate(k);
                let max = ranked[0].1;
                let weights: Vec<f64> = ranked.iter().map(|(_, s)| (s - max).exp()).collect();
                let mut u = rng.random::<f64>() * weights.iter().sum::<f64>();
                let mut pick = ranked[ranked.len() - 1].0;
                for ((id, _), w) in ranked.iter().zip(&weights) {
                    if u < *w {
                        pick = *id;
                        break;
                    }
                    u -= w;
                }
                pick
            }
            _ => argmax(last.iter().copied()),
        };
        if next == EOS_ID {
            break;
        }
        out.push(next);
        seq.push(next);
    }
    Ok(out)
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::model::LMConfig;
    use crate::lm::tokenizer::{Tokenizer, BOS_ID};

    fn model() -> CausalLM {
        let tok = Tokenizer::build(&["one two three four five six"], 100).unwrap();
        let config = LMConfig {
            layers: 1,
            model_dim: 8,
            heads: 2,
            ffn_dim: 16,
            max_seq: 10,
            vocab_size: tok.len(),
            tied_embeddings: true,
        };
        CausalLM::new(config, tok, 9).unwrap()
    }

    #[test]
    fn greedy_deterministic_and_topk1() {
        let m = model();
        let a = generate(&m, &[BOS_ID, 4], 5, Decoding::Greedy).unwrap();
        let b = generate(&m, &[BOS_ID, 4], 5, Decoding::Greedy).unwrap();
        assert_eq!(a, b);
        let c = generate(&m, &[BOS_ID, 4], 5, Decoding::TopK { k: 1, seed: 3 }).unwrap();
        assert_eq!(a, c);
        assert!(a.len() <= 5);
    }

    /// Makes every position's scores equal to column 0 of the embedding.
    fn constant_scores(m: &mut CausalLM, scores: &[(usize, f64)]) {
        m.params.get_mut("ln_f.gamma").unwrap().fill(0.0);
        let beta = m.params.get_mut("ln_f.beta").unwrap();
        beta.fill(0.0);
        beta[[0, 0]] = 1.0;
        let w = m.params.get_mut("tok_emb").unwrap();
        w.column_mut(0).fill(0.0);
        for &(id, s) in scores {
            w[[id, 0]] = s;
        }
    }

    #[test]
    fn eos_first_gives_empty() {
        let mut m = model();
        constant_scores(&mut m, &[(EOS_ID, 1.0)]);
        assert!(generate(&m, &[BOS_ID], 5, Decoding::Greedy).unwrap().is_empty());
    }

    #[test]
    fn stops_at_max_seq() {
        let mut m = model();
        constant_scores(&mut m, &[(5, 2.0), (EOS_ID, -5.0)]);
        let out = generate(&m, &[BOS_ID, 4, 5], 50, Decoding::Greedy).unwrap();
        assert_eq!(out, vec![5; 7]);
        assert_eq!(generate(&m, &[BOS_ID], 2, Decoding::Greedy).unwrap().len(), 2);
        assert!(generate(&m, &[4; 10], 1, Decoding::Greedy).is_err());
    }
}
