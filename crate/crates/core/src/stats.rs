//! Sample moments, delete-1 jackknife and Gaussian reference values.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, Normal};

/// Two-sided 95% normal quantile used for all confidence intervals.
pub const Z95: f64 = 1.959_963_984_540_054;

/// A point estimate with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    #[serde(with = "nonfinite")]
    pub value: f64,
    #[serde(with = "nonfinite")]
    pub stderr: f64,
}

/// JSON-safe `f64`: NaN as `null`, infinities as `"inf"` / `"-inf"`.
pub mod nonfinite {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_none()
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
        Null(()),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Null(()) => Ok(f64::NAN),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(serde::de::Error::custom(format!("invalid number `{other}`"))),
            },
        }
    }
}

impl Estimate {
    pub fn ci_halfwidth(&self) -> f64 {
        Z95 * self.stderr
    }

    /// True when the 95% interval lies strictly on one side of zero.
    pub fn excludes_zero(&self) -> bool {
        self.value.abs() > self.ci_halfwidth()
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    covariance(xs, xs)
}

/// Unbiased sample covariance.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Mean vector and unbiased covariance matrix of a set of observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub count: usize,
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// Column-major observations: `columns[c][k]` is variable `c` of sample `k`.
#[derive(Debug, Clone)]
pub struct Columns {
    columns: Vec<Vec<f64>>,
    // Centered cross products Σ (x − x̄)(y − ȳ).
    cross: Vec<Vec<f64>>,
    mean: Vec<f64>,
}

impl Columns {
    pub fn new(columns: Vec<Vec<f64>>) -> Self {
        let d = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        assert!(columns.iter().all(|c| c.len() == n));
        let mean: Vec<f64> = columns.iter().map(|c| mean(c)).collect();
        let mut cross = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in i..d {
                let s: f64 = columns[i]
                    .iter()
                    .zip(&columns[j])
                    .map(|(x, y)| (x - mean[i]) * (y - mean[j]))
                    .sum();
                cross[i][j] = s;
                cross[j][i] = s;
            }
        }
        Self { columns, cross, mean }
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn moments(&self) -> Moments {
        let n = self.len() as f64;
        Moments {
            count: self.len(),
            mean: self.mean.clone(),
            cov: self
                .cross
                .iter()
                .map(|row| row.iter().map(|c| c / (n - 1.0)).collect())
                .collect(),
        }
    }

    /// Moments with observation `k` removed (rank-one downdate).
    pub fn moments_without(&self, k: usize) -> Moments {
        let n = self.len() as f64;
        let d = self.dim();
        let dev: Vec<f64> = (0..d).map(|c| self.columns[c][k] - self.mean[c]).collect();
        let mean = (0..d)
            .map(|c| (n * self.mean[c] - self.columns[c][k]) / (n - 1.0))
            .collect();
        let factor = n / (n - 1.0);
        let cov = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| (self.cross[i][j] - factor * dev[i] * dev[j]) / (n - 2.0))
                    .collect()
            })
            .collect();
        Moments {
            count: self.len() - 1,
            mean,
            cov,
        }
    }

    /// Delete-1 jackknife of any statistic of the sample moments.
    pub fn jackknife(&self, stat: impl Fn(&Moments) -> f64) -> Estimate {
        let value = stat(&self.moments());
        let n = self.len();
        if n < 3 {
            return Estimate {
                value,
                stderr: f64::NAN,
            };
        }
        let leave: Vec<f64> = (0..n).map(|k| stat(&self.moments_without(k))).collect();
        let m = mean(&leave);
        let ss: f64 = leave.iter().map(|v| (v - m).powi(2)).sum();
        Estimate {
            value,
            stderr: ((n as f64 - 1.0) / n as f64 * ss).sqrt(),
        }
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// `P[|N(0,1)| ≤ δ] = 2Φ(δ) − 1`.
pub fn gaussian_acceptance(delta: f64) -> f64 {
    2.0 * normal_cdf(delta) - 1.0
}

/// `P[|N(0,1)| ≥ s]`.
pub fn gaussian_two_sided_tail(s: f64) -> f64 {
    2.0 * (1.0 - normal_cdf(s))
}

/// Standardized skewness and excess kurtosis (population moments); `None`
/// for a degenerate sample.
pub fn skewness_kurtosis(xs: &[f64]) -> Option<(f64, f64)> {
    let n = xs.len() as f64;
    let m = mean(xs);
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    if !(m2 > 0.0) {
        return None;
    }
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - m).powi(4)).sum::<f64>() / n;
    Some((m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0))
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    covariance(xs, ys) / variance(xs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn downdate_matches_recomputation() {
        let a = vec![1.0, 4.0, 2.0, 8.0, 5.0, 7.0];
        let b = vec![0.5, 1.0, -2.0, 3.0, 2.5, 0.0];
        let cols = Columns::new(vec![a.clone(), b.clone()]);
        for k in 0..a.len() {
            let ra: Vec<f64> = a.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| *v).collect();
            let rb: Vec<f64> = b.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| *v).collect();
            let m = cols.moments_without(k);
            assert_relative_eq!(m.mean[0], mean(&ra), epsilon = 1e-12);
            assert_relative_eq!(m.cov[0][1], covariance(&ra, &rb), epsilon = 1e-12);
            assert_relative_eq!(m.cov[1][1], variance(&rb), epsilon = 1e-12);
        }
    }

    #[test]
    fn jackknife_of_mean_is_classical_stderr() {
        let a: Vec<f64> = (0..50).map(|k| ((k * 37) % 11) as f64).collect();
        let est = Columns::new(vec![a.clone()]).jackknife(|m| m.mean[0]);
        let classical = (variance(&a) / a.len() as f64).sqrt();
        assert_relative_eq!(est.stderr, classical, epsilon = 1e-12);
    }

    #[test]
    fn nonfinite_round_trip() {
        for v in [1.5, f64::INFINITY, f64::NEG_INFINITY] {
            let e = Estimate { value: v, stderr: 0.25 };
            let back: Estimate = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
            assert_eq!(back, e);
        }
        let e = Estimate {
            value: 1.0,
            stderr: f64::NAN,
        };
        let json = serde_json::to_string(&e).unwrap();
        assert_eq!(json, r#"{"value":1.0,"stderr":null}"#);
        let back: Estimate = serde_json::from_str(&json).unwrap();
        assert!(back.stderr.is_nan());
    }

    #[test]
    fn moments_of_symmetric_two_point_law() {
        let (skew, kurt) = skewness_kurtosis(&[0.0, 1.0, 0.0, 1.0]).unwrap();
        assert_relative_eq!(skew, 0.0);
        assert_relative_eq!(kurt, -2.0);
        assert!(skewness_kurtosis(&[2.0; 5]).is_none());
    }

    #[test]
    fn gaussian_reference_values() {
        assert!((gaussian_acceptance(0.5) - 0.382_924_922_548_026).abs() < 1e-12);
        assert!((gaussian_two_sided_tail(1.959_963_984_540_054) - 0.05).abs() < 1e-9);
        assert_relative_eq!(ls_slope(&[1.0, 2.0, 3.0], &[2.0, 0.0, -2.0]), -2.0);
    }
}
