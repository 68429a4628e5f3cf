//! Cell formula, statistical quantities and the selection criterion.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fieldgen::{Axis, ScalarField};
use crate::pde::{edge_coefficients, AuxSolution, CellSolver, CorrectorSolution};

/// Largest admissible condition number of a calibration covariance.
pub const MAX_CONDITION: f64 = 1e12;

/// Approximate effective conductivity `a^RVE` (2×2, symmetric).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveMatrix {
    pub entries: [[f64; 2]; 2],
}

impl EffectiveMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i][j]
    }

    pub fn trace(&self) -> f64 {
        self.entries[0][0] + self.entries[1][1]
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let [[a, b], [c, d]] = self.entries;
        let off = 0.5 * (b + c);
        let mid = 0.5 * (a + d);
        let rad = (0.25 * (a - d).powi(2) + off * off).sqrt();
        [mid - rad, mid + rad]
    }
}

/// Discrete energy form
/// `a_ij = n⁻² Σ_edges a_edge (e_i + Dφ_i)·(e_j + Dφ_j)`.
pub fn cell_formula(field: &ScalarField, correctors: &[CorrectorSolution; 2]) -> Result<EffectiveMatrix> {
    let n = field.n();
    for c in correctors {
        if c.n != n {
            return Err(Error::GeometryMismatch {
                field: n,
                solution: c.n,
            });
        }
    }
    if correctors[0].direction != Axis::X || correctors[1].direction != Axis::Y {
        return Err(Error::InvalidInput("correctors must be ordered (x, y)".into()));
    }
    let edges = edge_coefficients(field);
    let mut entries = [[0.0; 2]; 2];
    for axis in [Axis::X, Axis::Y] {
        let a = edges.along(axis);
        let gi = correctors[0].grad_phi.along(axis);
        let gj = correctors[1].grad_phi.along(axis);
        let shift = |dir: usize| if dir == axis.index() { 1.0 } else { 0.0 };
        let (s0, s1) = (shift(0), shift(1));
        let (mut e00, mut e01, mut e11) = (0.0, 0.0, 0.0);
        for k in 0..a.len() {
            let u = s0 + gi[k];
            let w = s1 + gj[k];
            e00 += a[k] * u * u;
            e01 += a[k] * u * w;
            e11 += a[k] * w * w;
        }
        entries[0][0] += e00;
        entries[0][1] += e01;
        entries[1][1] += e11;
    }
    let norm = (n * n) as f64;
    entries[0][0] /= norm;
    entries[0][1] /= norm;
    entries[1][1] /= norm;
    entries[1][0] = entries[0][1];
    Ok(EffectiveMatrix { entries })
}

pub fn f_avg(field: &ScalarField) -> f64 {
    field.mean()
}

/// `(F_2pt)_ij = −n⁻² Σ_edges a_edge (Dv_i)·e_j`.
pub fn f_two_point(field: &ScalarField, aux: &[AuxSolution; 2]) -> Result<[[f64; 2]; 2]> {
    let n = field.n();
    for s in aux {
        if s.n != n {
            return Err(Error::GeometryMismatch {
                field: n,
                solution: s.n,
            });
        }
    }
    let edges = edge_coefficients(field);
    let norm = (n * n) as f64;
    let mut out = [[0.0; 2]; 2];
    for (i, sol) in aux.iter().enumerate() {
        if sol.direction.index() != i {
            return Err(Error::InvalidInput("auxiliary solutions must be ordered (x, y)".into()));
        }
        for j in 0..2 {
            let axis = Axis::from_index(j);
            let s: f64 = edges
                .along(axis)
                .iter()
                .zip(sol.grad_v.along(axis))
                .map(|(a, g)| a * g)
                .sum();
            out[i][j] = -s / norm;
        }
    }
    Ok(out)
}

/// One statistical quantity of a coefficient field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Quantity {
    Avg,
    /// `(F_2pt)_{ij}` with zero-based indices.
    TwoPoint(usize, usize),
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Quantity::Avg => write!(f, "avg"),
            Quantity::TwoPoint(i, j) => write!(f, "2pt_{}{}", i + 1, j + 1),
        }
    }
}

impl FromStr for Quantity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parsed = match s {
            "avg" => Some(Quantity::Avg),
            _ => s.strip_prefix("2pt_").and_then(|ij| {
                let b = ij.as_bytes();
                match b {
                    [i @ b'1'..=b'2', j @ b'1'..=b'2'] => {
                        Some(Quantity::TwoPoint((i - b'1') as usize, (j - b'1') as usize))
                    }
                    _ => None,
                }
            }),
        };
        parsed.ok_or_else(|| {
            Error::InvalidInput(format!(
                "unknown statistical quantity `{s}` (expected avg, 2pt_11, 2pt_12, 2pt_21 or 2pt_22)"
            ))
        })
    }
}

impl TryFrom<String> for Quantity {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Quantity> for String {
    fn from(q: Quantity) -> String {
        q.to_string()
    }
}

fn check_labels(labels: &[Quantity]) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::InvalidInput(
            "at least one statistical quantity is required".into(),
        ));
    }
    for (k, q) in labels.iter().enumerate() {
        if labels[..k].contains(q) {
            return Err(Error::InvalidInput(format!("duplicate statistical quantity `{q}`")));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FVector {
    pub labels: Vec<Quantity>,
    pub components: Vec<f64>,
}

impl FVector {
    pub fn get(&self, q: Quantity) -> Option<f64> {
        self.labels.iter().position(|l| *l == q).map(|k| self.components[k])
    }
}

/// Evaluate the requested quantities; the auxiliary FFT solve only runs when
/// a two-point component is requested.
pub fn compute_f(field: &ScalarField, labels: &[Quantity], solver: &mut CellSolver) -> Result<FVector> {
    check_labels(labels)?;
    let two_point = if labels.iter().any(|q| matches!(q, Quantity::TwoPoint(..))) {
        let aux = solver.solve_aux_pair(field)?;
        Some(f_two_point(field, &aux)?)
    } else {
        None
    };
    let components = labels
        .iter()
        .map(|q| match q {
            Quantity::Avg => f_avg(field),
            Quantity::TwoPoint(i, j) => two_point.expect("computed above")[*i][*j],
        })
        .collect();
    Ok(FVector {
        labels: labels.to_vec(),
        components,
    })
}

/// Selection criterion with its calibration statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSpec {
    pub labels: Vec<Quantity>,
    pub delta: f64,
    pub calib_mean: Vec<f64>,
    pub calib_cov: Vec<Vec<f64>>,
}

impl SelectionSpec {
    pub fn new(labels: Vec<Quantity>, delta: f64, calib_mean: Vec<f64>, calib_cov: Vec<Vec<f64>>) -> Result<Self> {
        let spec = Self {
            labels,
            delta,
            calib_mean,
            calib_cov,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        check_labels(&self.labels)?;
        if !(self.delta > 0.0) {
            return Err(Error::InvalidSelection(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        let n = self.labels.len();
        if self.calib_mean.len() != n || self.calib_cov.len() != n || self.calib_cov.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidSelection(
                "calibration dimensions do not match the labels".into(),
            ));
        }
        check_covariance(&self.labels, &self.calib_cov)
    }

    /// `|D^{-1/2}(F − mean)|` with `D` the diagonal of the calibration covariance.
    pub fn standardized_distance(&self, f: &FVector) -> Result<f64> {
        if f.labels != self.labels {
            return Err(Error::InvalidInput(format!(
                "quantity labels {:?} do not match the selection labels {:?}",
                f.labels, self.labels
            )));
        }
        let mut s = 0.0;
        for (k, (x, m)) in f.components.iter().zip(&self.calib_mean).enumerate() {
            let var = self.calib_cov[k][k];
            if !(var > 0.0) {
                return Err(Error::SingularCovariance {
                    component: self.labels[k].to_string(),
                    detail: format!("calibrated variance {var} is not positive"),
                });
            }
            s += (x - m).powi(2) / var;
        }
        Ok(s.sqrt())
    }
}

/// Rejects non-positive variances, indefinite matrices and condition numbers
/// above [`MAX_CONDITION`].
pub fn check_covariance(labels: &[Quantity], cov: &[Vec<f64>]) -> Result<()> {
    for (k, row) in cov.iter().enumerate() {
        if !(row[k] > 0.0) || !row[k].is_finite() {
            return Err(Error::SingularCovariance {
                component: labels[k].to_string(),
                detail: format!("variance {} is not positive", row[k]),
            });
        }
    }
    let kappa = condition_number(cov);
    if !(kappa <= MAX_CONDITION) {
        // Name the component most explained by the others.
        let worst = worst_component(cov);
        return Err(Error::SingularCovariance {
            component: labels[worst].to_string(),
            detail: format!("condition number {kappa:.3e} exceeds {MAX_CONDITION:e}"),
        });
    }
    Ok(())
}

fn to_matrix(m: &[Vec<f64>]) -> DMatrix<f64> {
    let n = m.len();
    DMatrix::from_fn(n, n, |i, j| m[i][j])
}

/// Ratio of extreme eigenvalues of a symmetric matrix (infinite when the
/// smallest is not positive).
pub fn condition_number(m: &[Vec<f64>]) -> f64 {
    let eig = to_matrix(m).symmetric_eigenvalues();
    let lo = eig.min();
    let hi = eig.max();
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn worst_component(cov: &[Vec<f64>]) -> usize {
    let n = cov.len();
    if n == 1 {
        return 0;
    }
    let eig = to_matrix(cov).symmetric_eigen();
    let (idx, _) = eig.eigenvalues.argmin();
    let v = eig.eigenvectors.column(idx);
    (0..n).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap_or(0)
}

pub fn accept(sample_f: &FVector, spec: &SelectionSpec) -> Result<bool> {
    Ok(spec.standardized_distance(sample_f)? <= spec.delta)
}

/// Fraction of `Var a` explained by the best linear combination of `F`:
/// `cᵀ V⁻¹ c / var_a`, clamped to `[0, 1 + 1e-9]`.
pub fn rho_squared(cov_af: &[f64], var_f: &[Vec<f64>], var_a: f64) -> Result<f64> {
    if !(var_a > 0.0) {
        return Err(Error::InvalidInput(format!("Var a must be positive, got {var_a}")));
    }
    let n = cov_af.len();
    if var_f.len() != n || var_f.iter().any(|r| r.len() != n) {
        return Err(Error::InvalidInput("dimension mismatch in rho_squared".into()));
    }
    let kappa = condition_number(var_f);
    if !(kappa <= MAX_CONDITION) {
        return Err(Error::SingularCovariance {
            component: format!("#{}", worst_component(var_f)),
            detail: format!("condition number {kappa:.3e}"),
        });
    }
    let chol = to_matrix(var_f).cholesky().ok_or_else(|| Error::SingularCovariance {
        component: "F".into(),
        detail: "not positive definite".into(),
    })?;
    let c = DVector::from_column_slice(cov_af);
    let explained = c.dot(&chol.solve(&c));
    Ok((explained / var_a).clamp(0.0, 1.0 + 1e-9))
}
