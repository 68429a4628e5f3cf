//! Ground truths: laminate closed forms, the zero-covariance search for the
//! counterexample family, and exhaustive checks of the covariance lemma for
//! monotone functions of independent variables.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{cell_formula, EffectiveMatrix, Quantity};
use crate::experiment::{
    calibrate, compare, evaluate_sample, par_map, run_plain, run_selected, thread_pool, CompareReport, EnsembleStats,
    Entry, ExperimentPlan, RveSample, SelectionSkeleton, PROBE_OFFSET,
};
use crate::fieldgen::{
    generate, mu_star, render_micro_tile, sigma_window, Axis, GeneratorSpec, GridGeometry, Orientation, ScalarField,
};
use crate::pde::{CellSolver, CorrectorSolution};
use crate::rng::SampleSeed;
use crate::stats::{Columns, Estimate};

fn diag(x: f64, y: f64) -> EffectiveMatrix {
    EffectiveMatrix {
        entries: [[x, 0.0], [0.0, y]],
    }
}

/// Horizontal stripes of `v1` and `v2` with equal volume fractions:
/// arithmetic mean along the stripes, harmonic mean across.
pub fn laminate_effective_first_order(v1: f64, v2: f64) -> EffectiveMatrix {
    diag(0.5 * (v1 + v2), 2.0 * v1 * v2 / (v1 + v2))
}

/// Vertical stripes of `mu` alternating with a horizontal `{1, λ}` laminate.
pub fn laminate_effective_second_order(lambda: f64, mu: f64) -> EffectiveMatrix {
    diag(
        2.0 * mu * (1.0 + lambda) / (2.0 * mu + 1.0 + lambda),
        lambda / (1.0 + lambda) + 0.5 * mu,
    )
}

/// `|a_11 − a_22| / max(a_11, a_22)` of a diagonal tensor.
pub fn anisotropy(a: &EffectiveMatrix) -> f64 {
    (a.get(0, 0) - a.get(1, 1)).abs() / a.get(0, 0).max(a.get(1, 1))
}

/// Signature of a cell-formula implementation, injectable for mutation tests.
pub type CellFormula = dyn Fn(&ScalarField, &[CorrectorSolution; 2]) -> Result<EffectiveMatrix> + Sync;

fn solve_with(field: &ScalarField, cell: &CellFormula) -> Result<EffectiveMatrix> {
    let mut solver = CellSolver::new(field.n());
    let c = solver.solve_correctors(field, 1e-10, 40 * field.n())?;
    cell(field, &c)
}

/// Effective matrix of one laminate tile at `m×m` pixels, computed by the
/// corrector solver on a periodic 2×2 repetition of the tile.
pub fn solve_laminate_tile(lambda: f64, mu: f64, tau: f64, m: usize, cell: &CellFormula) -> Result<EffectiveMatrix> {
    let tile = render_micro_tile(m, tau, lambda, mu, Orientation::IDENTITY)?;
    let geom = GridGeometry::new(2, m)?;
    let field = ScalarField::from_fn(geom, |ix, iy| tile[(iy % m) * m + ix % m]);
    solve_with(&field, cell)
}

/// For each `λ` on the grid, whether the admissible `σ` window is non-empty.
pub fn sigma_window_ordering(lambdas: &[f64]) -> Result<Vec<(f64, bool)>> {
    lambdas
        .iter()
        .map(|&l| sigma_window(l).map(|(lo, hi)| (l, lo < hi)))
        .collect()
}

/// One covariance probe of the zero-covariance search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceProbe {
    pub kappa: f64,
    /// `Cov[a_11 + a_22, F_avg]`.
    pub cov: Estimate,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KappaSearch {
    pub kappa_star: f64,
    /// Final bracket around `kappa_star`.
    pub bracket: (f64, f64),
    pub probes: Vec<CovarianceProbe>,
}

/// Trace covariance with `F_avg` over the common probe index set at a given
/// interpolation parameter.
pub fn covariance_probe(base: &ExperimentPlan, kappa: f64, n_samples: usize) -> Result<CovarianceProbe> {
    let generator = base.generator.with_kappa(kappa)?;
    let mut plan = base.clone();
    plan.generator = generator.clone();
    plan.validate()?;
    let pool = thread_pool(plan.workers)?;
    let indices: Vec<u64> = (0..n_samples as u64).map(|k| PROBE_OFFSET + k).collect();
    let samples = par_map(&pool, plan.geometry.n(), &indices, |solver, i| {
        evaluate_sample(&plan, &generator, &[Quantity::Avg], solver, i, true)
    })?;
    let cov = trace_covariance(&samples);
    Ok(CovarianceProbe { kappa, cov, n_samples })
}

fn trace_covariance(samples: &[RveSample]) -> Estimate {
    let trace = samples.iter().map(|s| s.a_rve.expect("solved").trace()).collect();
    let favg = samples.iter().map(|s| s.f.components[0]).collect();
    Columns::new(vec![trace, favg]).jackknife(|m| m.cov[0][1])
}

/// Bisection on `κ ∈ [0, 1]` for a zero of `Cov[a_11 + a_22, F_avg]` with
/// common random numbers across probes, finished by linear interpolation
/// inside the last bracket.
pub fn find_zero_covariance_kappa(
    base: &ExperimentPlan,
    tol_cov: f64,
    n_per_probe: usize,
    max_bisections: usize,
) -> Result<KappaSearch> {
    let mut probes = Vec::new();
    let mut lo = covariance_probe(base, 0.0, n_per_probe)?;
    let mut hi = covariance_probe(base, 1.0, n_per_probe)?;
    probes.push(lo.clone());
    probes.push(hi.clone());
    if lo.cov.value.signum() == hi.cov.value.signum() {
        return Err(Error::SameSignEndpoints {
            cov_at_zero: lo.cov.value,
            cov_at_one: hi.cov.value,
        });
    }
    if !lo.cov.excludes_zero() || !hi.cov.excludes_zero() {
        return Err(Error::InvalidInput(format!(
            "endpoint covariances {:.3e} ± {:.1e} and {:.3e} ± {:.1e} are not resolved; increase n_per_probe",
            lo.cov.value,
            lo.cov.ci_halfwidth(),
            hi.cov.value,
            hi.cov.ci_halfwidth()
        )));
    }
    for _ in 0..max_bisections {
        let mid = covariance_probe(base, 0.5 * (lo.kappa + hi.kappa), n_per_probe)?;
        probes.push(mid.clone());
        if mid.cov.value.abs() <= tol_cov {
            return Ok(KappaSearch {
                kappa_star: mid.kappa,
                bracket: (lo.kappa, hi.kappa),
                probes,
            });
        }
        if mid.cov.value.signum() == lo.cov.value.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let t = lo.cov.value / (lo.cov.value - hi.cov.value);
    Ok(KappaSearch {
        kappa_star: lo.kappa + t * (hi.kappa - lo.kappa),
        bracket: (lo.kappa, hi.kappa),
        probes,
    })
}

/// Sizes of the zero-covariance search and of the runs at the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleSettings {
    pub n_per_probe: usize,
    pub max_bisections: usize,
    pub tol_cov: f64,
    /// Fresh plain samples and accepted samples at `κ*`.
    pub n_confirm: usize,
    pub delta: f64,
}

impl Default for CounterexampleSettings {
    fn default() -> Self {
        Self {
            n_per_probe: 1000,
            max_bisections: 4,
            tol_cov: 0.0,
            n_confirm: 1000,
            delta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub search: KappaSearch,
    /// Correlation of `(a_11 + a_22)/2` with `F_avg` on fresh samples at `κ*`.
    pub rho_hat: Estimate,
    pub var_f_avg: Estimate,
    pub var_a_iso: Estimate,
    pub plain: EnsembleStats,
    pub selected: EnsembleStats,
    pub compare: CompareReport,
    /// `vrf` of `(a_11 + a_22)/2`.
    pub vrf: Estimate,
}

/// Locates `κ*`, then runs an independent plain ensemble and a selected
/// ensemble there.
pub fn counterexample_study(base: &ExperimentPlan, settings: &CounterexampleSettings) -> Result<CounterexampleReport> {
    let search = find_zero_covariance_kappa(base, settings.tol_cov, settings.n_per_probe, settings.max_bisections)?;
    let mut plan = base.clone();
    plan.generator = base.generator.with_kappa(search.kappa_star)?;
    plan.selection = Some(SelectionSkeleton {
        labels: vec![Quantity::Avg],
        delta: settings.delta,
    });
    plan.n_plain = settings.n_confirm;
    plan.n_selected = settings.n_confirm;
    plan.shared_sample_range = false;
    let (plain_samples, plain) = run_plain(&plan)?;
    let iso: Vec<f64> = plain_samples
        .iter()
        .map(|s| Entry::Iso.value(&s.a_rve.expect("solved")))
        .collect();
    let favg: Vec<f64> = plain_samples.iter().map(|s| s.f.components[0]).collect();
    let table = Columns::new(vec![iso, favg]);
    let rho_hat = table.jackknife(|m| m.cov[0][1] / (m.cov[0][0] * m.cov[1][1]).sqrt());
    let var_a_iso = table.jackknife(|m| m.cov[0][0]);
    let var_f_avg = table.jackknife(|m| m.cov[1][1]);
    let spec = calibrate(&plan)?;
    let (_, selected) = run_selected(&plan, &spec)?;
    let compare = compare(&plain, &selected)?;
    let vrf = compare.entry(Entry::Iso).vrf;
    Ok(CounterexampleReport {
        search,
        rho_hat,
        var_f_avg,
        var_a_iso,
        plain,
        selected,
        compare,
        vrf,
    })
}

/// Finite independent variables `X_1..X_N` and two tabulated functions on
/// their product space (first variable fastest).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteRV {
    pub values: Vec<Vec<f64>>,
    pub probs: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovBounds {
    pub cov: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
    pub holds: bool,
}

pub const LEMMA_SLACK: f64 = 1e-12;
const MAX_OUTCOMES: usize = 1_000_000;

impl DiscreteRV {
    /// Uniform probabilities on each variable.
    pub fn uniform(values: Vec<Vec<f64>>, f: impl Fn(&[f64]) -> f64, g: impl Fn(&[f64]) -> f64) -> Self {
        let probs = values.iter().map(|v| vec![1.0 / v.len() as f64; v.len()]).collect();
        let mut rv = Self {
            values,
            probs,
            f: Vec::new(),
            g: Vec::new(),
        };
        let size = rv.size();
        let mut point = vec![0.0; rv.values.len()];
        for idx in 0..size {
            rv.fill_point(idx, &mut point);
            rv.f.push(f(&point));
            rv.g.push(g(&point));
        }
        rv
    }

    fn size(&self) -> usize {
        self.values.iter().map(Vec::len).product()
    }

    fn strides(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.values.len());
        let mut acc = 1;
        for v in &self.values {
            s.push(acc);
            acc *= v.len();
        }
        s
    }

    fn digits(&self, mut idx: usize) -> Vec<usize> {
        self.values
            .iter()
            .map(|v| {
                let d = idx % v.len();
                idx /= v.len();
                d
            })
            .collect()
    }

    fn fill_point(&self, idx: usize, point: &mut [f64]) {
        for (k, d) in self.digits(idx).into_iter().enumerate() {
            point[k] = self.values[k][d];
        }
    }

    fn prob(&self, idx: usize) -> f64 {
        self.digits(idx)
            .into_iter()
            .enumerate()
            .map(|(k, d)| self.probs[k][d])
            .product()
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.values.len() != self.probs.len() {
            return Err(Error::InvalidInput("variables and probabilities do not match".into()));
        }
        for (k, (v, p)) in self.values.iter().zip(&self.probs).enumerate() {
            if v.is_empty() || v.len() != p.len() {
                return Err(Error::InvalidInput(format!(
                    "variable {k} has mismatched value/probability lists"
                )));
            }
            if v.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::InvalidInput(format!(
                    "values of variable {k} must be strictly increasing"
                )));
            }
            let total: f64 = p.iter().sum();
            if p.iter().any(|&q| q < 0.0) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!(
                    "probabilities of variable {k} must be non-negative and sum to 1"
                )));
            }
        }
        let size = self.size();
        if self.f.len() != size || self.g.len() != size {
            return Err(Error::InvalidInput(format!("tables must have {size} entries")));
        }
        if size.saturating_mul(size) > MAX_OUTCOMES {
            return Err(Error::InvalidInput(format!(
                "{} joint outcomes exceed the limit of {MAX_OUTCOMES}",
                size * size
            )));
        }
        self.check_monotone()
    }

    /// Per coordinate, `f` and `g` must both be nondecreasing or both
    /// nonincreasing.
    fn check_monotone(&self) -> Result<()> {
        let strides = self.strides();
        for (k, v) in self.values.iter().enumerate() {
            let (mut up, mut down) = (true, true);
            for idx in 0..self.size() {
                if self.digits(idx)[k] + 1 == v.len() {
                    continue;
                }
                let next = idx + strides[k];
                for t in [&self.f, &self.g] {
                    up &= t[next] >= t[idx];
                    down &= t[next] <= t[idx];
                }
            }
            if !(up || down) {
                return Err(Error::NotMonotone(format!(
                    "f and g are not jointly monotone in variable {}",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// Exact `Cov[f(X), g(X)]` and the lemma's lower and upper bounds.
pub fn cov_bounds_bruteforce(rv: &DiscreteRV) -> Result<CovBounds> {
    rv.validate()?;
    let size = rv.size();
    let strides = rv.strides();
    let probs: Vec<f64> = (0..size).map(|i| rv.prob(i)).collect();
    let ef: f64 = (0..size).map(|i| probs[i] * rv.f[i]).sum();
    let eg: f64 = (0..size).map(|i| probs[i] * rv.g[i]).sum();
    let cov: f64 = (0..size).map(|i| probs[i] * (rv.f[i] - ef) * (rv.g[i] - eg)).sum();

    let (mut lower, mut upper) = (0.0, 0.0);
    for (k, var_probs) in rv.probs.iter().enumerate() {
        let (mut e_sqrt_h, mut e_h_big) = (0.0, 0.0);
        for idx in 0..size {
            let d = rv.digits(idx)[k];
            let base = idx - d * strides[k];
            for (e, &py) in var_probs.iter().enumerate() {
                let other = base + e * strides[k];
                let df = rv.f[idx] - rv.f[other];
                let dg = rv.g[idx] - rv.g[other];
                let w = probs[idx] * py;
                e_sqrt_h += w * (df.abs() * dg.abs()).sqrt();
                e_h_big += w * 0.5 * (df * df + dg * dg);
            }
        }
        lower += 0.5 * e_sqrt_h * e_sqrt_h;
        upper += 0.5 * e_h_big;
    }
    Ok(CovBounds {
        cov,
        lower_bound: lower,
        upper_bound: upper,
        holds: lower <= cov + LEMMA_SLACK && cov <= upper + LEMMA_SLACK,
    })
}

/// Random monotone table on `≤ 3` variables with `≤ 3` values each.
pub fn random_monotone_rv(rng: &mut impl Rng) -> DiscreteRV {
    let vars = rng.random_range(1..=3);
    let mut values = Vec::with_capacity(vars);
    let mut probs = Vec::with_capacity(vars);
    for _ in 0..vars {
        let k = rng.random_range(1..=3);
        let mut v: Vec<f64> = Vec::with_capacity(k);
        let mut x = rng.random_range(-1.0..1.0);
        for _ in 0..k {
            v.push(x);
            x += rng.random_range(0.05..1.0);
        }
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = w.iter().sum();
        let mut p: Vec<f64> = w.iter().map(|x| x / total).collect();
        let rest: f64 = p[1..].iter().sum();
        p[0] = 1.0 - rest;
        values.push(v);
        probs.push(p);
    }
    let mut rv = DiscreteRV {
        values,
        probs,
        f: Vec::new(),
        g: Vec::new(),
    };
    let size = rv.size();
    let strides = rv.strides();
    let directions: Vec<bool> = (0..vars).map(|_| rng.random_bool(0.5)).collect();
    let make = |rng: &mut dyn rand::RngCore| {
        let mut t: Vec<f64> = (0..size).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Running maximum along each axis makes the table nondecreasing.
        for (k, v) in rv.values.iter().enumerate() {
            for idx in 0..size {
                if rv.digits(idx)[k] + 1 < v.len() {
                    let next = idx + strides[k];
                    t[next] = t[next].max(t[idx]);
                }
            }
        }
        t
    };
    let mut f = make(rng);
    let mut g = make(rng);
    // Flip chosen coordinates for both tables so that each is nonincreasing there.
    for (k, &flip) in directions.iter().enumerate() {
        if flip {
            let len = rv.values[k].len();
            let remap = |t: &[f64]| -> Vec<f64> {
                (0..size)
                    .map(|idx| {
                        let d = rv.digits(idx)[k];
                        t[idx + (len - 1 - d) * strides[k] - d * strides[k]]
                    })
                    .collect()
            };
            f = remap(&f);
            g = remap(&g);
        }
    }
    if rng.random_bool(0.1) {
        // Occasionally a constant function.
        let c = f[0];
        f.iter_mut().for_each(|x| *x = c);
    }
    let mut order = [0, 1];
    order.shuffle(rng);
    if order[0] == 1 {
        std::mem::swap(&mut f, &mut g);
    }
    rv.f = f;
    rv.g = g;
    rv
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryReport {
    pub n_tables: usize,
    pub n_failed: usize,
    /// Smallest of `cov − lower` and `upper − cov` over the battery.
    pub worst_margin: f64,
}

pub fn lemma_battery(n_tables: usize, seed: u64) -> Result<BatteryReport> {
    let mut rng = SampleSeed::new(seed, 0).rng(0);
    let mut n_failed = 0;
    let mut worst = f64::INFINITY;
    for _ in 0..n_tables {
        let rv = random_monotone_rv(&mut rng);
        let b = cov_bounds_bruteforce(&rv)?;
        if !b.holds {
            n_failed += 1;
        }
        worst = worst.min(b.cov - b.lower_bound).min(b.upper_bound - b.cov);
    }
    Ok(BatteryReport {
        n_tables,
        n_failed,
        worst_margin: worst,
    })
}

/// The three worked examples: constant `f` (and `g`), `f = g = X₁` and
/// `f = g = X₁ + X₂` with uniform `{0, 1}` variables.
pub fn lemma_worked_examples() -> Result<[(CovBounds, [f64; 3]); 3]> {
    let bit = vec![0.0, 1.0];
    let constant = DiscreteRV::uniform(vec![bit.clone()], |_| 2.0, |_| -1.0);
    let single = DiscreteRV::uniform(vec![bit.clone()], |x| x[0], |x| x[0]);
    let pair = DiscreteRV::uniform(vec![bit.clone(), bit], |x| x[0] + x[1], |x| x[0] + x[1]);
    Ok([
        (cov_bounds_bruteforce(&constant)?, [0.0, 0.0, 0.0]),
        (cov_bounds_bruteforce(&single)?, [0.25, 0.125, 0.25]),
        (cov_bounds_bruteforce(&pair)?, [0.5, 0.25, 0.5]),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsotropyReport {
    pub n_samples: usize,
    /// `Cov[a_ij, F_avg]`.
    pub cov: [[Estimate; 2]; 2],
    /// `Cov[a_11, F_avg] − Cov[a_22, F_avg]`.
    pub diagonal_difference: Estimate,
    pub isotropic: bool,
}

pub const MIN_ISOTROPY_SAMPLES: usize = 1000;

/// Checks that `Cov[a^RVE, F_avg]` is a multiple of the identity within
/// three standard errors.
pub fn isotropy_check(samples: &[RveSample]) -> Result<IsotropyReport> {
    if samples.len() < MIN_ISOTROPY_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "isotropy check needs at least {MIN_ISOTROPY_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let k_avg = samples[0]
        .f
        .labels
        .iter()
        .position(|q| *q == Quantity::Avg)
        .ok_or_else(|| Error::InvalidInput("samples do not carry F_avg".into()))?;
    let mut cols: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(samples.len())).collect();
    for s in samples {
        let a = s
            .a_rve
            .ok_or_else(|| Error::InvalidInput(format!("sample {} was not solved", s.seed.sample_index)))?;
        cols[0].push(a.get(0, 0));
        cols[1].push(a.get(0, 1));
        cols[2].push(a.get(1, 0));
        cols[3].push(a.get(1, 1));
        cols[4].push(s.f.components[k_avg]);
    }
    let table = Columns::new(cols);
    let c = |k: usize| table.jackknife(|m| m.cov[k][4]);
    let cov = [[c(0), c(1)], [c(2), c(3)]];
    let diagonal_difference = table.jackknife(|m| m.cov[0][4] - m.cov[3][4]);
    let within = |e: &Estimate| e.value.abs() <= 3.0 * e.stderr;
    let isotropic = within(&cov[0][1]) && within(&cov[1][0]) && within(&diagonal_difference);
    Ok(IsotropyReport {
        n_samples: samples.len(),
        cov,
        diagonal_difference,
        isotropic,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &str, pass: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        pass,
        detail,
    }
}

fn rel_err(a: &EffectiveMatrix, b: &EffectiveMatrix) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let scale = b.get(i, i).abs().max(b.get(j, j).abs());
            worst = worst.max((a.get(i, j) - b.get(i, j)).abs() / scale);
        }
    }
    worst
}

/// Full oracle suite with the library cell formula.
pub fn verify_suite() -> Vec<CheckResult> {
    verify_suite_with(&cell_formula)
}

/// Oracle suite with an injectable cell formula.
pub fn verify_suite_with(cell: &CellFormula) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let fail = |name: &str, e: Error| check(name, false, format!("error: {e}"));

    for (name, axis, expected) in [
        ("layered exactness (x)", Axis::X, diag(2.0 / 3.0, 0.75)),
        ("layered exactness (y)", Axis::Y, diag(0.75, 2.0 / 3.0)),
    ] {
        let r = GridGeometry::new(4, 6)
            .and_then(|g| generate(&GeneratorSpec::layered(axis, 1.0, 0.5), &g, SampleSeed::new(0, 0)))
            .and_then(|f| solve_with(&f, cell));
        out.push(match r {
            Ok(a) => {
                let err = (0..2)
                    .flat_map(|i| (0..2).map(move |j| (i, j)))
                    .map(|(i, j)| (a.get(i, j) - expected.get(i, j)).abs())
                    .fold(0.0, f64::max);
                check(name, err <= 1e-9, format!("max abs error {err:.2e}"))
            }
            Err(e) => fail(name, e),
        });
    }

    let name = "first-order laminate (1, 1/4)";
    let r = GridGeometry::new(4, 4)
        .and_then(|g| generate(&GeneratorSpec::layered(Axis::Y, 0.25, 1.0), &g, SampleSeed::new(0, 0)))
        .and_then(|f| solve_with(&f, cell));
    out.push(match r {
        Ok(a) => {
            let expected = laminate_effective_first_order(1.0, 0.25);
            let err = rel_err(&a, &expected);
            let closed_ok = (expected.get(0, 0) - 0.625).abs() < 1e-15 && (expected.get(1, 1) - 0.4).abs() < 1e-15;
            check(name, err <= 1e-9 && closed_ok, format!("relative error {err:.2e}"))
        }
        Err(e) => fail(name, e),
    });

    let name = "second-order laminate tile (m=64, tau=1/4, lambda=1/4)";
    let r = mu_star(0.25).and_then(|mu| {
        solve_laminate_tile(0.25, mu, 0.25, 64, cell).map(|a| (a, laminate_effective_second_order(0.25, mu)))
    });
    out.push(match r {
        Ok((a, expected)) => {
            let err = rel_err(&a, &expected);
            check(name, err <= 0.02, format!("relative error {err:.2e}"))
        }
        Err(e) => fail(name, e),
    });

    let name = "isotropy of the tuned laminate";
    out.push(match mu_star(0.25) {
        Ok(mu) => {
            let an = anisotropy(&laminate_effective_second_order(0.25, mu));
            check(name, an <= 1e-12, format!("anisotropy {an:.2e}"))
        }
        Err(e) => fail(name, e),
    });

    let name = "laminate Voigt-Reuss bounds (20x20 grid)";
    let mut violations = 0;
    for i in 1..=20 {
        for j in 1..=20 {
            let (lambda, mu) = (0.1 * i as f64, 0.1 * j as f64);
            let a = laminate_effective_second_order(lambda, mu);
            let vals = [mu, 1.0, lambda];
            let weights = [0.5, 0.25, 0.25];
            let arith: f64 = vals.iter().zip(&weights).map(|(v, w)| v * w).sum();
            let harm = 1.0 / vals.iter().zip(&weights).map(|(v, w)| w / v).sum::<f64>();
            for k in 0..2 {
                let x = a.get(k, k);
                if x < harm * (1.0 - 1e-12) || x > arith * (1.0 + 1e-12) {
                    violations += 1;
                }
            }
        }
    }
    out.push(check(name, violations == 0, format!("{violations} violations")));

    let name = "covariance lemma worked examples";
    out.push(match lemma_worked_examples() {
        Ok(examples) => {
            let ok = examples.iter().all(|(b, [c, lo, hi])| {
                (b.cov - c).abs() <= 1e-15
                    && (b.lower_bound - lo).abs() <= 1e-15
                    && (b.upper_bound - hi).abs() <= 1e-15
                    && b.holds
            });
            check(name, ok, format!("{} examples", examples.len()))
        }
        Err(e) => fail(name, e),
    });

    let name = "covariance lemma battery (1000 tables)";
    out.push(match lemma_battery(1000, 2024) {
        Ok(r) => check(
            name,
            r.n_failed == 0,
            format!("{} failures, worst margin {:.2e}", r.n_failed, r.worst_margin),
        ),
        Err(e) => fail(name, e),
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn first_order_examples() {
        assert_eq!(laminate_effective_first_order(1.0, 1.0), diag(1.0, 1.0));
        assert_eq!(laminate_effective_first_order(1.0, 0.25), diag(0.625, 0.4));
    }

    #[test]
    fn second_order_examples() {
        assert_eq!(laminate_effective_second_order(1.0, 1.0), diag(1.0, 1.0));
        let mu = mu_star(0.25).unwrap();
        let a = laminate_effective_second_order(0.25, mu);
        assert!(anisotropy(&a) <= 1e-12);
        assert!((a.get(0, 0) - 0.8398).abs() < 1e-4);
    }

    #[test]
    fn laminate_tile_matches_closed_form() {
        let mu = mu_star(0.25).unwrap();
        let a = solve_laminate_tile(0.25, mu, 0.25, 64, &cell_formula).unwrap();
        let expected = laminate_effective_second_order(0.25, mu);
        assert!(rel_err(&a, &expected) <= 0.02, "{a:?} vs {expected:?}");
    }

    #[test]
    fn sigma_window_nonempty_on_grid() {
        let grid: Vec<f64> = (1..=90).map(|k| 0.01 * k as f64).collect();
        let ordering = sigma_window_ordering(&grid).unwrap();
        let violations: Vec<f64> = ordering.iter().filter(|(_, ok)| !ok).map(|(l, _)| *l).collect();
        assert!(violations.is_empty(), "window empty for lambda in {violations:?}");
    }

    #[test]
    fn worked_examples_are_exact() {
        let [(c, _), (s, _), (p, _)] = lemma_worked_examples().unwrap();
        assert_eq!((c.cov, c.lower_bound, c.upper_bound), (0.0, 0.0, 0.0));
        assert_eq!((s.cov, s.lower_bound, s.upper_bound), (0.25, 0.125, 0.25));
        assert_eq!((p.cov, p.lower_bound, p.upper_bound), (0.5, 0.25, 0.5));
        let only_f_constant = DiscreteRV::uniform(vec![vec![0.0, 1.0]], |_| 1.0, |x| x[0]);
        let b = cov_bounds_bruteforce(&only_f_constant).unwrap();
        assert_eq!((b.cov, b.lower_bound), (0.0, 0.0));
        assert!(b.holds);
    }

    #[test]
    fn non_monotone_tables_are_rejected() {
        let rv = DiscreteRV::uniform(vec![vec![0.0, 1.0, 2.0]], |x| (x[0] - 1.0).powi(2), |x| x[0]);
        assert!(matches!(cov_bounds_bruteforce(&rv), Err(Error::NotMonotone(_))));
        let opposite = DiscreteRV::uniform(vec![vec![0.0, 1.0]], |x| x[0], |x| -x[0]);
        assert!(matches!(cov_bounds_bruteforce(&opposite), Err(Error::NotMonotone(_))));
    }

    #[test]
    fn battery_holds() {
        let r = lemma_battery(1000, 7).unwrap();
        assert_eq!(r.n_failed, 0, "{r:?}");
    }

    proptest! {
        #[test]
        fn random_tables_are_monotone_and_satisfy_the_lemma(seed in any::<u64>()) {
            let mut rng = SampleSeed::new(seed, 0).rng(1);
            let rv = random_monotone_rv(&mut rng);
            let b = cov_bounds_bruteforce(&rv).unwrap();
            prop_assert!(b.holds);
            prop_assert!(b.cov >= -LEMMA_SLACK);
        }

        #[test]
        fn laminate_entries_within_voigt_reuss(lambda in 0.01f64..10.0, mu in 0.01f64..10.0) {
            let a = laminate_effective_second_order(lambda, mu);
            let arith = 0.5 * mu + 0.25 + 0.25 * lambda;
            let harm = 1.0 / (0.5 / mu + 0.25 + 0.25 / lambda);
            for k in 0..2 {
                prop_assert!(a.get(k, k) >= harm * (1.0 - 1e-12) && a.get(k, k) <= arith * (1.0 + 1e-12));
            }
            let first = laminate_effective_first_order(lambda, mu);
            prop_assert!((first.get(0, 0) * first.get(1, 1) - lambda * mu).abs() <= 1e-12 * lambda * mu);
        }
    }

    #[test]
    fn verify_suite_passes() {
        let results = verify_suite();
        for r in &results {
            assert!(r.pass, "{}: {}", r.name, r.detail);
        }
    }

    #[test]
    fn verify_suite_detects_sign_flip() {
        let flipped = |field: &ScalarField, c: &[CorrectorSolution; 2]| {
            let mut c = c.clone();
            for s in &mut c {
                s.grad_phi.x.iter_mut().for_each(|v| *v = -*v);
                s.grad_phi.y.iter_mut().for_each(|v| *v = -*v);
            }
            cell_formula(field, &c)
        };
        let results = verify_suite_with(&flipped);
        let laminate_failures = results
            .iter()
            .filter(|r| r.name.contains("laminate") && !r.pass)
            .count();
        assert!(laminate_failures >= 2, "{results:?}");
    }

    fn counterexample_plan(kappa: f64, randomize: bool) -> ExperimentPlan {
        let mut g = GeneratorSpec::counterexample(0.25, 0.9, 0.5, kappa).unwrap();
        if let crate::fieldgen::Variant::Counterexample {
            randomize_orientation, ..
        } = &mut g.variant
        {
            *randomize_orientation = randomize;
        }
        let mut p = ExperimentPlan::new(g, GridGeometry::new(4, 4).unwrap());
        p.n_plain = 1200;
        p.master_seed = 11;
        p
    }

    #[test]
    fn orientation_randomized_ensemble_is_isotropic() {
        let (samples, stats) = run_plain(&counterexample_plan(1.0, true)).unwrap();
        let report = isotropy_check(&samples).unwrap();
        assert!(report.isotropic, "{report:?}");
        assert!(stats.entry(Entry::A11).var.excludes_zero());
        assert!(isotropy_check(&samples[..10]).is_err());
    }

    #[test]
    fn covariance_probe_is_deterministic() {
        let mut p = counterexample_plan(0.0, true);
        p.workers = 1;
        let a = covariance_probe(&p, 0.3, 50).unwrap();
        p.workers = 3;
        let b = covariance_probe(&p, 0.3, 50).unwrap();
        assert_eq!(a, b);
        assert_relative_eq!(a.kappa, 0.3);
    }

    #[test]
    fn zero_covariance_search_on_small_grid() {
        let mut p = counterexample_plan(0.0, true);
        p.workers = 2;
        let search = find_zero_covariance_kappa(&p, 0.0, 300, 4).unwrap();
        assert!(search.probes[0].cov.value > 0.0);
        assert!(search.probes[1].cov.value < 0.0);
        let (lo, hi) = search.bracket;
        assert!(lo <= search.kappa_star && search.kappa_star <= hi);
    }

    #[test]
    fn counterexample_study_on_small_grid() {
        let mut p = counterexample_plan(0.0, true);
        p.n_calibration = 500;
        let settings = CounterexampleSettings {
            n_per_probe: 200,
            max_bisections: 2,
            n_confirm: 200,
            ..Default::default()
        };
        let r = counterexample_study(&p, &settings).unwrap();
        assert_eq!(r.plain.n_samples, 200);
        assert_eq!(r.selected.n_samples, 200);
        assert_eq!(r.search.probes.len(), 4);
        assert!(r.var_f_avg.value > 0.0 && r.var_a_iso.value > 0.0);
        assert!(r.rho_hat.value.abs() <= 1.0);
    }

    #[test]
    fn same_sign_endpoints_are_reported() {
        // Only the counterexample family has an interpolation parameter.
        let p = ExperimentPlan::new(
            GeneratorSpec::checkerboard(0.5, 1.0, 0.5),
            GridGeometry::new(4, 4).unwrap(),
        );
        assert!(find_zero_covariance_kappa(&p, 0.0, 10, 1).is_err());
    }
}
