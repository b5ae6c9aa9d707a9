use serde::{Deserialize, Serialize};

use super::{beta::student_t_two_tailed_p, mean, sample_sd};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub t_value: f64,
    /// Two-tailed.
    pub p_value: f64,
    pub df: usize,
    pub n: usize,
    /// The differences have zero variance; `t` is `0` or `±inf`.
    pub degenerate: bool,
}

/// Paired two-tailed Student's t-test on `x - y`.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<TTestResult> {
    if x.len() != y.len() {
        return Err(Error::Stats(format!(
            "paired samples differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Stats(format!("paired t-test needs n >= 2, got {n}")));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let m = mean(&d);
    let sd = sample_sd(&d);
    let df = n - 1;

    if sd == 0.0 || !sd.is_finite() {
        let (t_value, p_value) = if m == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(m), 0.0)
        };
        return Ok(TTestResult {
            t_value,
            p_value,
            df,
            n,
            degenerate: true,
        });
    }

    let t_value = m / (sd / (n as f64).sqrt());
    Ok(TTestResult {
        t_value,
        p_value: student_t_two_tailed_p(t_value, df as f64),
        df,
        n,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn identical_samples() {
        let x = [1.0, 2.0, 5.0];
        let r = paired_t_test(&x, &x).unwrap();
        assert_eq!(r.t_value, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn hand_computed_case() {
        let r = paired_t_test(&[1.0, 2.0, 3.0], &[1.5, 2.5, 3.0]).unwrap();
        assert!((r.t_value + 2.0).abs() < 1e-9, "t = {}", r.t_value);
        assert_eq!(r.df, 2);
        // df = 2 closed form: p = 1 - |t| / sqrt(2 + t^2) = 1 - 2/sqrt(6)
        let want = 1.0 - 2.0 / 6f64.sqrt();
        assert!((r.p_value - want).abs() < 1e-12);
        assert!((r.p_value - 0.1835).abs() < 1e-4);
    }

    #[test]
    fn constant_difference_is_degenerate() {
        let r = paired_t_test(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(r.degenerate);
        assert!(r.t_value > 0.0);
        assert_eq!(r.p_value, 0.0);
    }

    #[test]
    fn errors() {
        assert!(paired_t_test(&[1.0, 2.0], &[1.0]).is_err());
        assert!(paired_t_test(&[1.0], &[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn swap_negates_t(
            pairs in proptest::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 2..40)
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = paired_t_test(&x, &y).unwrap();
            let b = paired_t_test(&y, &x).unwrap();
            prop_assert!((a.t_value + b.t_value).abs() <= 1e-9 * (1.0 + a.t_value.abs()));
            prop_assert!((a.p_value - b.p_value).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.p_value));
        }

        #[test]
        fn shift_invariant(
            pairs in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 3..30),
            shift in -50.0f64..50.0,
        ) {
            let (x, y): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let xs: Vec<f64> = x.iter().map(|v| v + shift).collect();
            let ys: Vec<f64> = y.iter().map(|v| v + shift).collect();
            let a = paired_t_test(&x, &y).unwrap();
            let b = paired_t_test(&xs, &ys).unwrap();
            prop_assume!(!a.degenerate);
            prop_assert!((a.t_value - b.t_value).abs() < 1e-9 * (1.0 + a.t_value.abs()));
        }
    }
}
