use std::collections::HashMap;

use crate::error::{Error, Result};

const SMOOTHING: f64 = 1e-9;

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
    }
    counts
}

/// Corpus-level BLEU-4 with uniform weights.
///
/// Clipped n-gram matches use the maximum count over each instance's
/// references; the brevity penalty uses, per instance, the reference length
/// closest to the candidate (shorter wins ties). A zero match count is
/// replaced by 1e-9 so short outputs still receive a score.
pub fn corpus_bleu4<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<Vec<S>>]) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::invalid("candidates", "no candidates to score"));
    }
    if candidates.len() != references.len() {
        return Err(Error::invalid(
            "references",
            "one reference list per candidate required",
        ));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::invalid("references", "every candidate needs a reference"));
        }
        cand_len += cand.len();
        ref_len += refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .expect("non-empty");
        for n in 1..=4 {
            let c = ngrams(cand, n);
            let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
            for r in refs {
                for (g, k) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            matches[n - 1] += c
                .iter()
                .map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            totals[n - 1] += c.values().sum::<usize>();
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let log_p: f64 = (0..4)
        .map(|i| {
            let m = if matches[i] == 0 { SMOOTHING } else { matches[i] as f64 };
            (m / totals[i].max(1) as f64).ln()
        })
        .sum::<f64>()
        / 4.0;
    let bp = if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok((bp * log_p.exp()).clamp(0.0, 1.0))
}

/// BLEU-4 of a single candidate against its references.
pub fn bleu4<S: AsRef<str> + Clone>(candidate: &[S], references: &[Vec<S>]) -> Result<f64> {
    corpus_bleu4(&[candidate.to_vec()], &[references.to_vec()])
}

fn pooled_ngrams<S: AsRef<str>>(corpus: &[Vec<S>], n: usize) -> Result<HashMap<Vec<&str>, usize>> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    if corpus.is_empty() {
        return Err(Error::invalid("corpus", "no outputs"));
    }
    let mut all: HashMap<Vec<&str>, usize> = HashMap::new();
    for out in corpus {
        for (g, k) in ngrams(out, n) {
            *all.entry(g).or_insert(0) += k;
        }
    }
    Ok(all)
}

/// Distinct n-grams over total n-grams across all outputs (0 when no
/// output is long enough).
pub fn dist_n<S: AsRef<str>>(corpus: &[Vec<S>], n: usize) -> Result<f64> {
    let all = pooled_ngrams(corpus, n)?;
    let total: usize = all.values().sum();
    Ok(if total == 0 {
        0.0
    } else {
        all.len() as f64 / total as f64
    })
}

/// Shannon entropy (nats) of the pooled n-gram distribution.
pub fn entropy_n<S: AsRef<str>>(corpus: &[Vec<S>], n: usize) -> Result<f64> {
    let all = pooled_ngrams(corpus, n)?;
    let total: usize = all.values().sum();
    if total == 0 {
        return Ok(0.0);
    }
    let mut counts: Vec<usize> = all.into_values().collect();
    counts.sort_unstable();
    let h = counts
        .iter()
        .map(|&k| {
            let p = k as f64 / total as f64;
            -p * p.ln()
        })
        .sum::<f64>();
    Ok(h.max(0.0))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn identical_is_one() {
        let c = toks("the museum opens at nine");
        assert_eq!(bleu4(&c, std::slice::from_ref(&c)).unwrap(), 1.0);
        let refs = vec![toks("it opens at ten"), c.clone()];
        assert_eq!(bleu4(&c, &refs).unwrap(), 1.0);
    }

    #[test]
    fn hand_computed_bleu() {
        // candidate "a b c d e", reference "a b c d f":
        // p1 = 4/5, p2 = 3/4, p3 = 2/3, p4 = 1/2, BP = 1
        let b = bleu4(&toks("a b c d e"), &[toks("a b c d f")]).unwrap();
        let expected = (0.8f64 * 0.75 * (2.0 / 3.0) * 0.5).powf(0.25);
        assert!((b - expected).abs() < 1e-12);
        // shorter candidate: BP = exp(1 - 6/5)
        let b = bleu4(&toks("a b c d e"), &[toks("a b c d e f")]).unwrap();
        assert!((b - (1.0 - 6.0f64 / 5.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn short_candidate_smoothed() {
        let b = bleu4(&toks("a b"), &[toks("a b")]).unwrap();
        assert!(b > 0.0 && b < 1e-3);
    }

    #[test]
    fn clipping() {
        // "the the the the" vs "the cat": p1 = 1/4
        let b = corpus_bleu4(&[toks("the the the the")], &[vec![toks("the cat")]]).unwrap();
        let expected = (0.25f64 * SMOOTHING / 3.0 * SMOOTHING / 2.0 * SMOOTHING).powf(0.25);
        assert!((b - expected).abs() < 1e-12);
    }

    #[test]
    fn dist_and_entropy() {
        assert!((dist_n(&[toks("a b a b")], 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        let e = entropy_n(&[toks("a b"), toks("c d")], 2).unwrap();
        assert!((e - 2f64.ln()).abs() < 1e-12);
        let same = vec![toks("x y z w"); 5];
        assert_eq!(entropy_n(&same, 4).unwrap(), 0.0);
        // identical outputs of length 4: 3 distinct bigrams out of 15
        assert!((dist_n(&same, 2).unwrap() - 3.0 / 15.0).abs() < 1e-12);
        assert!(dist_n::<String>(&[], 2).is_err());
        assert!(entropy_n(&same, 0).is_err());
        assert!(corpus_bleu4::<String>(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn bleu_in_unit_interval(
            c in proptest::collection::vec("[a-c]", 0..8),
            r in proptest::collection::vec("[a-c]", 1..8),
        ) {
            let b = bleu4(&c, &[r]).unwrap();
            prop_assert!((0.0..=1.0).contains(&b));
        }

        #[test]
        fn dist_non_increasing_under_duplication(
            outs in proptest::collection::vec(proptest::collection::vec("[a-d]", 2..6), 1..5),
        ) {
            let d1 = dist_n(&outs, 2).unwrap();
            let mut doubled = outs.clone();
            doubled.extend(outs.clone());
            let d2 = dist_n(&doubled, 2).unwrap();
            prop_assert!(d1 > 0.0 && d1 <= 1.0);
            prop_assert!(d2 <= d1 + 1e-15);
        }
    }
}
