//! Statistics, metrics and scoring checked against independent references:
//! statrs for the t distribution, nalgebra for the SVD, a direct
//! pairwise-disagreement form of Krippendorff's alpha, and hand-computed
//! perplexities.

use convbias_core::eval::{bleu4, dist_n, entropy_n, lmp_evaluate};
use convbias_core::lm::{CausalLM, LMConfig, Tokenizer};
use convbias_core::stats::{
    bias_subspace, krippendorff_alpha_nominal, outlier_bounds, outlier_pairs, paired_t_test, AnnotationMatrix,
    OutlierPooling,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn reference_t_test(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let m = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let t = m / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, n - 1.0).unwrap();
    (t, 2.0 * (1.0 - dist.cdf(t.abs())))
}

#[test]
fn t_test_worked_example() {
    let r = paired_t_test(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.0]).unwrap();
    assert!((r.t_value + 2.0).abs() < 1e-9, "{}", r.t_value);
    let (_, p) = reference_t_test(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.0]);
    assert!((r.p_value - p).abs() < 1e-4);
    assert!((r.p_value - 0.1835).abs() < 1e-4, "{}", r.p_value);
}

#[test]
fn t_test_matches_statrs_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..200 {
        let n = rng.random_range(2..60);
        let shift = rng.random_range(-1.0..1.0);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + shift + rng.random_range(-2.0..2.0)).collect();
        let r = paired_t_test(&x, &y).unwrap();
        let (t, p) = reference_t_test(&x, &y);
        assert!(
            (r.t_value - t).abs() < 1e-6 * t.abs().max(1.0),
            "case {case}: t {} vs {t}",
            r.t_value
        );
        assert!((r.p_value - p).abs() < 1e-6, "case {case}: p {} vs {p}", r.p_value);
    }
}

#[test]
fn outlier_rule_on_pooled_scores() {
    let mut x = vec![10.0; 10];
    let mut y = vec![10.0; 10];
    y[3] = 1000.0;
    let pooled: Vec<f64> = x.iter().chain(&y).copied().collect();
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let sd = (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let b = outlier_bounds(&pooled).unwrap();
    assert!((b.low - (mean - 3.0 * sd)).abs() < 1e-9);
    assert!((b.high - (mean + 3.0 * sd)).abs() < 1e-9);
    assert!((b.low + 604.7).abs() < 0.1 && (b.high - 723.7).abs() < 0.1, "{b:?}");
    assert_eq!(outlier_pairs(&x, &y, OutlierPooling::Combined).unwrap(), vec![3]);
    x[3] = 10.0;
    y[3] = 10.0;
    assert!(outlier_pairs(&x, &y, OutlierPooling::Combined).unwrap().is_empty());
}

#[test]
fn svd_rank_rule_cases() {
    let a = Array2::from_shape_vec((2, 2), vec![2.0, 0.0, 0.0, 1.0]).unwrap();
    let r = bias_subspace(a.view(), 0.5).unwrap();
    assert_eq!(r.k, 1);
    assert!((r.directions[[0, 0]].abs() - 1.0).abs() < 1e-6);
    assert!(r.directions[[0, 1]].abs() < 1e-6);
    let eye = Array2::<f64>::eye(4);
    assert_eq!(bias_subspace(eye.view(), 0.5).unwrap().k, 2);
}

#[test]
fn svd_matches_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..30 {
        let (rows, cols) = (rng.random_range(2..12), rng.random_range(2..10));
        let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = Array2::from_shape_vec((rows, cols), data.clone()).unwrap();
        let r = bias_subspace(a.view(), 1.0).unwrap();
        let m = nalgebra::DMatrix::from_row_slice(rows, cols, &data);
        let svd = m.clone().svd(false, true);
        let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        for (i, s) in sv.iter().enumerate() {
            assert!(
                (r.singular_values[i] - s).abs() < 1e-6,
                "{:?} vs {sv:?}",
                r.singular_values
            );
        }
        // each kept direction v satisfies |A v| = sigma
        for (i, s) in sv.iter().enumerate().take(r.k) {
            let v = nalgebra::DVector::from_iterator(cols, r.directions.row(i).iter().copied());
            assert!(((&m * v).norm() - s).abs() < 1e-6);
        }
    }
}

/// Alpha from the pairwise-disagreement form, with category totals counted
/// directly from the pairable labels.
fn reference_alpha(rows: &[Vec<Option<u32>>]) -> f64 {
    let mut totals = std::collections::HashMap::<u32, f64>::new();
    let mut disagreement = 0.0;
    for row in rows {
        let vals: Vec<u32> = row.iter().flatten().copied().collect();
        if vals.len() < 2 {
            continue;
        }
        for v in &vals {
            *totals.entry(*v).or_default() += 1.0;
        }
        let mut unequal = 0.0;
        for i in 0..vals.len() {
            for j in 0..vals.len() {
                if i != j && vals[i] != vals[j] {
                    unequal += 1.0;
                }
            }
        }
        disagreement += unequal / (vals.len() as f64 - 1.0);
    }
    let n: f64 = totals.values().sum();
    let cats: Vec<f64> = totals.values().copied().collect();
    let mut expected = 0.0;
    for (i, a) in cats.iter().enumerate() {
        for (j, b) in cats.iter().enumerate() {
            if i != j {
                expected += a * b;
            }
        }
    }
    1.0 - (n - 1.0) * disagreement / expected
}

#[test]
fn krippendorff_published_example() {
    // nominal reliability data with missing values, alpha = 0.743
    let coder = |s: &str| -> Vec<Option<u32>> { s.split(' ').map(|v| v.parse().ok()).collect() };
    let coders = [
        coder("1 2 3 3 2 1 4 1 2 . . ."),
        coder("1 2 3 3 2 2 4 1 2 5 . 3"),
        coder(". 3 3 3 2 3 4 2 2 5 1 ."),
        coder("1 2 3 3 2 4 4 1 2 5 1 ."),
    ];
    let rows: Vec<Vec<Option<u32>>> = (0..12).map(|u| coders.iter().map(|c| c[u]).collect()).collect();
    let alpha = krippendorff_alpha_nominal(&AnnotationMatrix::new(rows).unwrap()).unwrap();
    assert!((alpha - 0.743).abs() < 5e-4, "{alpha}");
}

#[test]
fn krippendorff_matches_reference_on_random_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..50 {
        let rows: Vec<Vec<Option<u32>>> = (0..20)
            .map(|_| {
                (0..3)
                    .map(|_| {
                        if rng.random_bool(0.1) {
                            None
                        } else {
                            Some(rng.random_range(0..3))
                        }
                    })
                    .collect()
            })
            .collect();
        let alpha = krippendorff_alpha_nominal(&AnnotationMatrix::new(rows.clone()).unwrap()).unwrap();
        let reference = reference_alpha(&rows);
        assert!((alpha - reference).abs() < 1e-6, "case {case}: {alpha} vs {reference}");
    }
    let perfect: Vec<Vec<Option<u32>>> = (0..20).map(|u| vec![Some(u % 3); 3]).collect();
    assert_eq!(
        krippendorff_alpha_nominal(&AnnotationMatrix::new(perfect).unwrap()).unwrap(),
        1.0
    );
}

#[test]
fn generation_metrics_closed_forms() {
    let c = vec!["the", "cat", "sat", "on", "the", "mat"];
    assert!((bleu4(&c, std::slice::from_ref(&c)).unwrap() - 1.0).abs() < 1e-12);
    assert!((dist_n(&[vec!["a", "b", "a", "b"]], 2).unwrap() - 2.0 / 3.0).abs() < 1e-12);
    let two = vec![vec!["a", "b"], vec!["c", "d"]];
    assert!((entropy_n(&two, 2).unwrap() - 2f64.ln()).abs() < 1e-12);
}

fn small_model(seed: u64) -> CausalLM {
    let tok = Tokenizer::build(&["a b c d e f g h"], 100).unwrap();
    let config = LMConfig {
        layers: 1,
        model_dim: 8,
        heads: 2,
        ffn_dim: 16,
        max_seq: 16,
        vocab_size: tok.len(),
        tied_embeddings: true,
    };
    CausalLM::new(config, tok, seed).unwrap()
}

#[test]
fn uniform_model_perplexity_is_vocabulary_size() {
    let mut m = small_model(1);
    // zero output embeddings make every logit zero
    m.params.values_mut()[0].fill(0.0);
    let v = m.config.vocab_size as f64;
    let r = lmp_evaluate(&m, &["a", "b c d", "h g"]).unwrap();
    assert!((r.metric("perplexity").unwrap() - v).abs() < 1e-9);
}

#[test]
fn batched_perplexity_matches_per_sequence_softmax() {
    let m = small_model(3);
    let texts = ["a b c", "d e f g h", "b"];
    let batched = m.perplexities(&texts).unwrap();
    for (text, pp) in texts.iter().zip(batched) {
        let ids = m.encode_text(text).unwrap();
        let logits = m.forward_logits(&ids).unwrap();
        let mut nll = 0.0;
        for r in 0..ids.len() - 1 {
            let row = logits.row(r);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            nll -= (row[ids[r + 1]].exp() / z).ln();
        }
        let expected = (nll / (ids.len() - 1) as f64).exp();
        assert!((pp - expected).abs() < 1e-9 * expected, "{text}: {pp} vs {expected}");
    }
}
