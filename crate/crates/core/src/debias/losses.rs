use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::biasspec::BiasSpecification;
use crate::error::{Error, Result};
use crate::lm::tape::{Tape, Var};
use crate::lm::{Tokenizer, UNK_ID};

/// Target pairs whose two sides are single vocabulary tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairVocab {
    /// `(t1_id, t2_id)` per retained pair.
    pub pairs: Vec<(usize, usize)>,
    /// Sorted ids of every pair member.
    pub membership: Vec<usize>,
    /// Pair indices each member token participates in.
    pub pairs_of: BTreeMap<usize, Vec<usize>>,
    /// Pairs left out because a side is unknown or spans several tokens.
    pub excluded: Vec<(String, String)>,
}

impl PairVocab {
    pub fn contains(&self, id: usize) -> bool {
        self.pairs_of.contains_key(&id)
    }

    /// Column of `id` within `membership`.
    fn column(&self, id: usize) -> usize {
        self.membership.binary_search(&id).expect("pair member")
    }
}

fn single_token(tokenizer: &Tokenizer, term: &str) -> Option<usize> {
    match tokenizer.encode(term).as_slice() {
        [id] if *id != UNK_ID => Some(*id),
        _ => None,
    }
}

/// Collects the single-token pairs of `spec` under `tokenizer`.
pub fn build_pair_vocab(spec: &BiasSpecification, tokenizer: &Tokenizer) -> Result<PairVocab> {
    let mut pairs = Vec::new();
    let mut excluded = Vec::new();
    for p in &spec.pairs {
        match (
            single_token(tokenizer, &p.minoritized),
            single_token(tokenizer, &p.dominant),
        ) {
            (Some(a), Some(b)) if a != b => {
                if !pairs.contains(&(a, b)) {
                    pairs.push((a, b));
                }
            }
            _ => excluded.push((p.minoritized.clone(), p.dominant.clone())),
        }
    }
    if pairs.is_empty() {
        return Err(Error::invalid("pairs", "no pair has two single-token sides"));
    }
    if !excluded.is_empty() {
        log::warn!(
            "{} pairs are not single-token on both sides and were excluded",
            excluded.len()
        );
    }
    let mut pairs_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &(a, b)) in pairs.iter().enumerate() {
        pairs_of.entry(a).or_default().push(i);
        pairs_of.entry(b).or_default().push(i);
    }
    let membership = pairs_of.keys().copied().collect();
    Ok(PairVocab {
        pairs,
        membership,
        pairs_of,
        excluded,
    })
}

/// Pair sides as (possibly multi-token) term ids, for the embedding-based
/// losses.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingPairs {
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
    /// Pairs with an unknown token on either side.
    pub excluded: Vec<(String, String)>,
}

impl EmbeddingPairs {
    pub fn build(spec: &BiasSpecification, tokenizer: &Tokenizer) -> Result<Self> {
        let known = |t: &str| {
            let ids = tokenizer.encode(t);
            (!ids.is_empty() && !ids.contains(&UNK_ID)).then_some(ids)
        };
        let mut pairs = Vec::new();
        let mut excluded = Vec::new();
        for p in &spec.pairs {
            match (known(&p.minoritized), known(&p.dominant)) {
                (Some(a), Some(b)) if a != b => pairs.push((a, b)),
                _ => excluded.push((p.minoritized.clone(), p.dominant.clone())),
            }
        }
        if pairs.is_empty() {
            return Err(Error::invalid("pairs", "no pair is fully in the vocabulary"));
        }
        Ok(EmbeddingPairs { pairs, excluded })
    }

    /// Averaging matrices `(M1, M2)`, each `P × V`, so that `M·W` stacks
    /// the mean output embedding of every pair side.
    pub fn averaging(&self, vocab_size: usize) -> (Array2<f64>, Array2<f64>) {
        let mut m1 = Array2::zeros((self.pairs.len(), vocab_size));
        let mut m2 = Array2::zeros((self.pairs.len(), vocab_size));
        for (i, (a, b)) in self.pairs.iter().enumerate() {
            for &id in a {
                m1[[i, id]] += 1.0 / a.len() as f64;
            }
            for &id in b {
                m2[[i, id]] += 1.0 / b.len() as f64;
            }
        }
        (m1, m2)
    }

    /// Half-differences `(t1 − t2)/2` of the current output embeddings.
    pub fn half_differences(&self, output_weight: &Array2<f64>) -> Array2<f64> {
        let (m1, m2) = self.averaging(output_weight.nrows());
        (m1 - m2).dot(output_weight) * 0.5
    }
}

/// Token sequences of the attribute terms, skipping those with unknown
/// tokens.
pub fn attribute_sequences(terms: &[String], tokenizer: &Tokenizer) -> (Vec<Vec<usize>>, Vec<String>) {
    let mut seqs = BTreeSet::new();
    let mut skipped = Vec::new();
    for t in terms {
        let ids = tokenizer.encode(t);
        if ids.is_empty() || ids.contains(&UNK_ID) {
            skipped.push(t.clone());
        } else {
            seqs.insert(ids);
        }
    }
    (seqs.into_iter().collect(), skipped)
}

/// Rows of `ids` at which an attribute term ends. Matches never cross a
/// segment boundary.
pub fn attribute_positions(
    ids: &[usize],
    segments: &[std::ops::Range<usize>],
    attributes: &[Vec<usize>],
) -> Vec<usize> {
    let mut rows = Vec::new();
    for seg in segments {
        let s = &ids[seg.clone()];
        for end in 0..s.len() {
            let hit = attributes
                .iter()
                .any(|a| a.len() <= end + 1 && s[end + 1 - a.len()..=end] == a[..]);
            if hit {
                rows.push(seg.start + end);
            }
        }
    }
    rows
}

/// Language-model debiasing term.
///
/// `targets` lists `(row, gold)` next-token positions. At each position
/// whose gold token is a pair member, the logits are renormalized over the
/// pair members only and the absolute log-ratio of every pair containing
/// the gold token is averaged. The result is the mean over those
/// positions, or `None` when no gold token is a pair member.
pub fn lmd_loss(tape: &mut Tape, logits: Var, targets: &[(usize, usize)], pv: &PairVocab) -> Option<Var> {
    let hits: Vec<(usize, usize)> = targets.iter().copied().filter(|&(_, g)| pv.contains(g)).collect();
    if hits.is_empty() {
        return None;
    }
    let rows = tape.select_rows(logits, hits.iter().map(|&(r, _)| r).collect());
    let members = tape.select_cols(rows, pv.membership.clone());
    let logp = tape.log_softmax(members);
    // signed selector: column i of `d` is +1 at t1_i and −1 at t2_i
    let mut d = Array2::zeros((pv.membership.len(), pv.pairs.len()));
    for (i, &(a, b)) in pv.pairs.iter().enumerate() {
        d[[pv.column(a), i]] = 1.0;
        d[[pv.column(b), i]] = -1.0;
    }
    let d = tape.constant(d);
    let ratios = tape.matmul(logp, d);
    let ratios = tape.abs(ratios);
    let mut w = Array2::zeros((hits.len(), pv.pairs.len()));
    for (k, &(_, g)) in hits.iter().enumerate() {
        let own = &pv.pairs_of[&g];
        for &i in own {
            w[[k, i]] = 1.0 / (own.len() * hits.len()) as f64;
        }
    }
    let w = tape.constant(w);
    let weighted = tape.mul(ratios, w);
    Some(tape.sum(weighted))
}

/// Attribute-distance term: for each attribute row of `hidden`, the summed
/// absolute gap `|cos(t1, a) − cos(t2, a)|` over all pairs, averaged over
/// the rows. `t1` and `t2` stack the pair-side embeddings (`P × d`).
pub fn add_loss(tape: &mut Tape, hidden: Var, rows: &[usize], t1: Var, t2: Var) -> Option<Var> {
    if rows.is_empty() {
        return None;
    }
    let n_pairs = tape.value(t1).nrows();
    let sides: Vec<(Var, Var)> = (0..n_pairs)
        .map(|j| (tape.select_rows(t1, vec![j]), tape.select_rows(t2, vec![j])))
        .collect();
    let mut total: Option<Var> = None;
    for &r in rows {
        let a = tape.select_rows(hidden, vec![r]);
        for &(e1, e2) in &sides {
            let c1 = tape.cosine(e1, a);
            let c2 = tape.cosine(e2, a);
            let gap = tape.sub(c1, c2);
            let gap = tape.abs(gap);
            total = Some(match total {
                Some(t) => tape.add(t, gap),
                None => gap,
            });
        }
    }
    let total = total.expect("at least one row and pair");
    Some(tape.scale(total, 1.0 / rows.len() as f64))
}

/// Hard-debiasing term: for each attribute row `a` of `hidden`,
/// `Σ_j |⟨a, b_j⟩|` over the unit bias directions (rows of `directions`),
/// averaged over the rows. The directions are constants.
pub fn hd_loss(tape: &mut Tape, hidden: Var, rows: &[usize], directions: &Array2<f64>) -> Option<Var> {
    if rows.is_empty() || directions.nrows() == 0 {
        return None;
    }
    let a = tape.select_rows(hidden, rows.to_vec());
    let b = tape.constant(directions.clone());
    let proj = tape.matmul_t(a, b);
    let proj = tape.abs(proj);
    let total = tape.sum(proj);
    Some(tape.scale(total, 1.0 / rows.len() as f64))
}

/// `λ_LM·L_LM + λ_D·L_D` when the debiasing term is active, else `L_LM`.
pub fn combined_loss(tape: &mut Tape, lm: Var, debias: Option<Var>, lambda_lm: f64, lambda_d: f64) -> Var {
    match debias {
        None => lm,
        Some(d) => {
            let l = tape.scale(lm, lambda_lm);
            let d = tape.scale(d, lambda_d);
            tape.add(l, d)
        }
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn pv(pairs: &[(usize, usize)]) -> PairVocab {
        let mut pairs_of: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &(a, b)) in pairs.iter().enumerate() {
            pairs_of.entry(a).or_default().push(i);
            pairs_of.entry(b).or_default().push(i);
        }
        PairVocab {
            pairs: pairs.to_vec(),
            membership: pairs_of.keys().copied().collect(),
            pairs_of,
            excluded: vec![],
        }
    }

    fn lmd(logits: Array2<f64>, targets: &[(usize, usize)], v: &PairVocab) -> Option<f64> {
        let mut tape = Tape::new();
        let l = tape.constant(logits);
        lmd_loss(&mut tape, l, targets, v).map(|x| tape.scalar_value(x))
    }

    #[test]
    fn lmd_cases() {
        let v = pv(&[(1, 2)]);
        // equal logits on the pair
        assert_eq!(lmd(array![[0.3, 1.0, 1.0, 5.0]], &[(0, 1)], &v), Some(0.0));
        // unit log-ratio
        let l = lmd(array![[0.0, 1.0, 0.0, 9.0]], &[(0, 2)], &v).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
        // gold token outside the pairs
        assert_eq!(lmd(array![[0.0, 1.0, 0.0, 9.0]], &[(0, 3)], &v), None);
    }

    #[test]
    fn lmd_swap_symmetric_and_ignores_other_logits() {
        let v = pv(&[(1, 2), (3, 4), (1, 4)]);
        let logits = array![[0.1, -0.7, 1.3, 0.4, -2.0, 3.0], [1.0, 0.2, -0.5, 2.2, 0.9, -1.0]];
        let targets = [(0, 1), (1, 4)];
        let base = lmd(logits.clone(), &targets, &v).unwrap();
        let swapped = pv(&[(2, 1), (4, 3), (4, 1)]);
        assert!((lmd(logits.clone(), &targets, &swapped).unwrap() - base).abs() < 1e-12);
        let mut other = logits.clone();
        other[[0, 0]] += 5.0;
        other[[1, 5]] -= 3.0;
        assert!((lmd(other, &targets, &v).unwrap() - base).abs() < 1e-12);
        // token 1 is in two pairs
        assert_eq!(v.pairs_of[&1].len(), 2);
    }

    fn run_add(h: Array2<f64>, rows: &[usize], t1: Array2<f64>, t2: Array2<f64>) -> Option<f64> {
        let mut tape = Tape::new();
        let (h, t1, t2) = (tape.constant(h), tape.constant(t1), tape.constant(t2));
        add_loss(&mut tape, h, rows, t1, t2).map(|x| tape.scalar_value(x))
    }

    #[test]
    fn add_cases() {
        let h = array![[1.0, 0.0], [0.3, 0.4]];
        assert_eq!(run_add(h.clone(), &[], array![[1.0, 0.0]], array![[0.0, 1.0]]), None);
        assert_eq!(
            run_add(h.clone(), &[0, 1], array![[0.5, 0.5]], array![[0.5, 0.5]]),
            Some(0.0)
        );
        let l = run_add(h, &[0], array![[1.0, 0.0]], array![[0.0, 1.0]]).unwrap();
        assert!((l - 1.0).abs() < 1e-12);
    }

    fn run_hd(h: Array2<f64>, rows: &[usize], b: &Array2<f64>) -> Option<f64> {
        let mut tape = Tape::new();
        let h = tape.constant(h);
        hd_loss(&mut tape, h, rows, b).map(|x| tape.scalar_value(x))
    }

    #[test]
    fn hd_cases() {
        let b = array![[1.0, 0.0, 0.0]];
        assert_eq!(run_hd(array![[0.0, 2.0, -1.0]], &[0], &b), Some(0.0));
        assert_eq!(run_hd(array![[1.0, 0.0, 0.0]], &[0], &b), Some(1.0));
        let flipped = array![[-1.0, 0.0, 0.0]];
        assert_eq!(run_hd(array![[0.7, 2.0, -1.0]], &[0], &flipped), Some(0.7));
        // complete orthonormal basis: l1 norm of the coefficients
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let basis = array![[s, s, 0.0], [s, -s, 0.0], [0.0, 0.0, 1.0]];
        let a = array![[0.2, -1.4, 0.5]];
        let coeffs = a.dot(&basis.t());
        let l1: f64 = coeffs.iter().map(|c| c.abs()).sum();
        assert!((run_hd(a, &[0], &basis).unwrap() - l1).abs() < 1e-12);
    }

    #[test]
    fn combined_arithmetic() {
        let mut tape = Tape::new();
        let lm = tape.constant(array![[2.0]]);
        let d = tape.constant(array![[0.5]]);
        let c = combined_loss(&mut tape, lm, Some(d), 0.01, 10.0);
        assert!((tape.scalar_value(c) - 5.02).abs() < 1e-12);
        let c = combined_loss(&mut tape, lm, Some(d), 0.01, 0.0);
        assert!((tape.scalar_value(c) - 0.02).abs() < 1e-12);
        let c = combined_loss(&mut tape, lm, None, 0.01, 10.0);
        assert_eq!(tape.scalar_value(c), 2.0);
    }

    #[test]
    fn attribute_matching() {
        let attrs = vec![vec![7], vec![8, 9]];
        let ids = [2, 7, 8, 9, 3, 2, 8, 3, 9];
        let segs = [0..5, 5..8, 8..9];
        // the last `9` starts a new segment so `8 9` does not match there
        assert_eq!(attribute_positions(&ids, &segs, &attrs), vec![1, 3]);
    }
}
