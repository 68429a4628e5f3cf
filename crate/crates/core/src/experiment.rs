//! Monte Carlo harness: calibration, plain and selected ensembles, and the
//! statistics used to judge them.
//!
//! Every sample is a pure function of `(master_seed, sample_index)`, and all
//! reductions run in sample-index order, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    accept, cell_formula, check_covariance, compute_f, condition_number, rho_squared, EffectiveMatrix, FVector,
    Quantity, SelectionSpec,
};
use crate::fieldgen::{generate, GeneratorSpec, GridGeometry};
use crate::pde::{default_max_iter, CellSolver, DEFAULT_TOL};
use crate::rng::SampleSeed;
use crate::stats::{self, nonfinite, Columns, Estimate, Moments};

/// Disjoint sample-index ranges, one per ensemble.
pub const CALIBRATION_OFFSET: u64 = 0;
pub const PLAIN_OFFSET: u64 = 1 << 40;
pub const SELECTED_OFFSET: u64 = 2 << 40;
pub const PROBE_OFFSET: u64 = 3 << 40;

/// Candidates screened before an acceptance rate below
/// [`MIN_ACCEPTANCE_RATE`] aborts a selected run.
pub const MAX_CANDIDATES_BEFORE_ABORT: u64 = 1_000_000;
pub const MIN_ACCEPTANCE_RATE: f64 = 1e-4;

/// One realization with its statistical quantities and, when solved, its
/// effective matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RveSample {
    pub seed: SampleSeed,
    pub f: FVector,
    pub accepted: bool,
    pub a_rve: Option<EffectiveMatrix>,
    pub solver_iters: usize,
}

/// Quantities of interest derived from `a^RVE`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entry {
    A11,
    A12,
    A21,
    A22,
    /// `(a_11 + a_22) / 2`, the rotation-averaged scalar.
    Iso,
}

impl Entry {
    pub const ALL: [Entry; 5] = [Entry::A11, Entry::A12, Entry::A21, Entry::A22, Entry::Iso];

    pub fn name(self) -> &'static str {
        match self {
            Entry::A11 => "a_11",
            Entry::A12 => "a_12",
            Entry::A21 => "a_21",
            Entry::A22 => "a_22",
            Entry::Iso => "a_iso",
        }
    }

    pub fn value(self, a: &EffectiveMatrix) -> f64 {
        match self {
            Entry::A11 => a.get(0, 0),
            Entry::A12 => a.get(0, 1),
            Entry::A21 => a.get(1, 0),
            Entry::A22 => a.get(1, 1),
            Entry::Iso => 0.5 * a.trace(),
        }
    }
}

/// Statistics of one entry of `a^RVE` jointly with `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryStats {
    pub name: String,
    pub mean: Estimate,
    pub var: Estimate,
    pub cov_af: Vec<Estimate>,
    /// Explained variance; absent when `Var a` or `Var F` is degenerate.
    pub rho2: Option<Estimate>,
    /// Condition number of the joint covariance of `(a_ij, F)`.
    pub kappa: Option<f64>,
    /// `L^{-2} / Var a_ij`; absent for a degenerate (constant) entry.
    pub r_var: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub n_samples: usize,
    pub n_candidates: u64,
    pub acceptance_rate: f64,
    pub delta: Option<f64>,
    pub labels: Vec<Quantity>,
    pub mean_f: Vec<Estimate>,
    pub cov_f: Vec<Vec<f64>>,
    pub entries: Vec<EntryStats>,
}

impl EnsembleStats {
    pub fn entry(&self, e: Entry) -> &EntryStats {
        &self.entries[Entry::ALL.iter().position(|x| *x == e).expect("entry exists")]
    }
}

/// Labels and threshold of a selection criterion, before calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionSkeleton {
    pub labels: Vec<Quantity>,
    pub delta: f64,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub generator: GeneratorSpec,
    pub geometry: GridGeometry,
    pub selection: Option<SelectionSkeleton>,
    pub n_calibration: usize,
    pub n_plain: usize,
    /// Number of accepted samples to collect.
    pub n_selected: usize,
    pub master_seed: u64,
    /// Thread count; excluded from serialized output because results do not
    /// depend on it.
    #[serde(skip, default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    /// Defaults to `20·n` iterations.
    #[serde(default)]
    pub max_iter: Option<usize>,
    /// Draw plain and selected ensembles from the same index range.
    #[serde(default)]
    pub shared_sample_range: bool,
}

impl ExperimentPlan {
    pub fn new(generator: GeneratorSpec, geometry: GridGeometry) -> Self {
        Self {
            generator,
            geometry,
            selection: None,
            n_calibration: 2000,
            n_plain: 400,
            n_selected: 400,
            master_seed: 0,
            workers: 1,
            tol: DEFAULT_TOL,
            max_iter: None,
            shared_sample_range: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate_for(&self.geometry)?;
        for (name, count) in [
            ("n_calibration", self.n_calibration),
            ("n_plain", self.n_plain),
            ("n_selected", self.n_selected),
            ("workers", self.workers),
        ] {
            if count < 1 {
                return Err(Error::InvalidInput(format!("{name} must be at least 1")));
            }
        }
        if let Some(sel) = &self.selection {
            if !(sel.delta > 0.0) {
                return Err(Error::InvalidSelection(format!(
                    "delta must be positive, got {}",
                    sel.delta
                )));
            }
            if sel.labels.is_empty() {
                return Err(Error::InvalidSelection("selection needs at least one quantity".into()));
            }
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidInput(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }

    pub fn max_iter(&self) -> usize {
        self.max_iter.unwrap_or_else(|| default_max_iter(self.geometry.n()))
    }

    /// Quantities recorded for every sample.
    pub fn labels(&self) -> Vec<Quantity> {
        self.selection
            .as_ref()
            .map_or_else(|| vec![Quantity::Avg], |s| s.labels.clone())
    }

    fn selected_offset(&self) -> u64 {
        if self.shared_sample_range {
            PLAIN_OFFSET
        } else {
            SELECTED_OFFSET
        }
    }
}

pub(crate) fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidInput(format!("cannot start worker pool: {e}")))
}

/// Maps `job` over `indices` on the pool, one solver per worker. The first
/// failure in index order is returned.
pub(crate) fn par_map<T: Send>(
    pool: &rayon::ThreadPool,
    n: usize,
    indices: &[u64],
    job: impl Fn(&mut CellSolver, u64) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = pool.install(|| {
        indices
            .par_iter()
            .map_init(|| CellSolver::new(n), |solver, &i| job(solver, i))
            .collect()
    });
    results.into_iter().collect()
}

fn wrap(seed: SampleSeed) -> impl FnOnce(Error) -> Error {
    move |e| Error::SampleFailed {
        seed,
        source: Box::new(e),
    }
}

/// Draws and evaluates one sample; solves the corrector problem if `solve`.
pub fn evaluate_sample(
    plan: &ExperimentPlan,
    generator: &GeneratorSpec,
    labels: &[Quantity],
    solver: &mut CellSolver,
    sample_index: u64,
    solve: bool,
) -> Result<RveSample> {
    let seed = SampleSeed::new(plan.master_seed, sample_index);
    let mut run = || -> Result<RveSample> {
        let field = generate(generator, &plan.geometry, seed)?;
        let f = compute_f(&field, labels, solver)?;
        let (a_rve, solver_iters) = if solve {
            let c = solver.solve_correctors(&field, plan.tol, plan.max_iter())?;
            let iters = c[0].iterations.max(c[1].iterations);
            (Some(cell_formula(&field, &c)?), iters)
        } else {
            (None, 0)
        };
        Ok(RveSample {
            seed,
            f,
            accepted: solve,
            a_rve,
            solver_iters,
        })
    };
    run().map_err(wrap(seed))
}

fn index_range(offset: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|k| offset + k).collect()
}

/// Estimates `E[F]` and `Cov F` from `n_calibration` samples (F only).
pub fn calibrate(plan: &ExperimentPlan) -> Result<SelectionSpec> {
    plan.validate()?;
    let skeleton = plan
        .selection
        .as_ref()
        .ok_or_else(|| Error::InvalidSelection("plan has no selection criterion".into()))?;
    let pool = thread_pool(plan.workers)?;
    let labels = skeleton.labels.clone();
    let indices = index_range(CALIBRATION_OFFSET, plan.n_calibration);
    let samples = par_map(&pool, plan.geometry.n(), &indices, |solver, i| {
        evaluate_sample(plan, &plan.generator, &labels, solver, i, false)
    })?;
    let columns = f_columns(&samples, labels.len());
    let moments = Columns::new(columns).moments();
    let mut mean = moments.mean;
    if let Some(m) = plan.generator.analytic_mean_f_avg {
        if let Some(k) = labels.iter().position(|q| *q == Quantity::Avg) {
            mean[k] = m;
        }
    }
    check_covariance(&labels, &moments.cov)?;
    SelectionSpec::new(labels, skeleton.delta, mean, moments.cov)
}

fn f_columns(samples: &[RveSample], dim: usize) -> Vec<Vec<f64>> {
    (0..dim)
        .map(|k| samples.iter().map(|s| s.f.components[k]).collect())
        .collect()
}

/// `n_plain` independent solved samples.
pub fn run_plain(plan: &ExperimentPlan) -> Result<(Vec<RveSample>, EnsembleStats)> {
    plan.validate()?;
    let pool = thread_pool(plan.workers)?;
    let labels = plan.labels();
    let indices = index_range(PLAIN_OFFSET, plan.n_plain);
    let samples = par_map(&pool, plan.geometry.n(), &indices, |solver, i| {
        evaluate_sample(plan, &plan.generator, &labels, solver, i, true)
    })?;
    let n = samples.len() as u64;
    let stats = ensemble_stats(&samples, plan.geometry.cells, n, None)?;
    Ok((samples, stats))
}

/// Screens candidates in index order and solves only the first
/// `n_selected` accepted ones. Returns every screened candidate (rejected
/// ones without `a_rve`).
pub fn run_selected(plan: &ExperimentPlan, spec: &SelectionSpec) -> Result<(Vec<RveSample>, EnsembleStats)> {
    plan.validate()?;
    spec.validate()?;
    let pool = thread_pool(plan.workers)?;
    let n = plan.geometry.n();
    let offset = plan.selected_offset();
    let batch = (64 * plan.workers).max(256) as u64;
    let mut screened: Vec<RveSample> = Vec::new();
    let mut accepted_positions: Vec<usize> = Vec::new();
    let mut next = 0u64;
    while accepted_positions.len() < plan.n_selected {
        let indices: Vec<u64> = (next..next + batch).map(|k| offset + k).collect();
        next += batch;
        let mut candidates = par_map(&pool, n, &indices, |solver, i| {
            let mut s = evaluate_sample(plan, &plan.generator, &spec.labels, solver, i, false)?;
            s.accepted = accept(&s.f, spec).map_err(wrap(s.seed))?;
            Ok(s)
        })?;
        for s in candidates.drain(..) {
            if accepted_positions.len() == plan.n_selected {
                break;
            }
            if s.accepted {
                accepted_positions.push(screened.len());
            }
            screened.push(s);
        }
        let total = screened.len() as u64;
        if total >= MAX_CANDIDATES_BEFORE_ABORT
            && (accepted_positions.len() as f64) < MIN_ACCEPTANCE_RATE * total as f64
        {
            return Err(Error::AcceptanceTooLow {
                candidates: total,
                accepted: accepted_positions.len() as u64,
            });
        }
    }
    let to_solve: Vec<u64> = accepted_positions
        .iter()
        .map(|&p| screened[p].seed.sample_index)
        .collect();
    let solved = par_map(&pool, n, &to_solve, |solver, i| {
        evaluate_sample(plan, &plan.generator, &spec.labels, solver, i, true)
    })?;
    for (&p, s) in accepted_positions.iter().zip(solved) {
        screened[p] = s;
    }
    let accepted: Vec<RveSample> = screened.iter().filter(|s| s.accepted).cloned().collect();
    let stats = ensemble_stats(&accepted, plan.geometry.cells, screened.len() as u64, Some(spec.delta))?;
    Ok((screened, stats))
}

/// Screening only: how many of `n_candidates` fresh candidates are accepted.
pub fn acceptance_count(plan: &ExperimentPlan, spec: &SelectionSpec, n_candidates: usize) -> Result<usize> {
    plan.validate()?;
    let pool = thread_pool(plan.workers)?;
    let indices = index_range(plan.selected_offset(), n_candidates);
    let flags = par_map(&pool, plan.geometry.n(), &indices, |solver, i| {
        let s = evaluate_sample(plan, &plan.generator, &spec.labels, solver, i, false)?;
        accept(&s.f, spec).map_err(wrap(s.seed))
    })?;
    Ok(flags.into_iter().filter(|&b| b).count())
}

/// Marks precomputed samples accepted or rejected under `spec`.
pub fn select_precomputed(samples: &[RveSample], spec: &SelectionSpec) -> Result<Vec<RveSample>> {
    samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.accepted = accept(&s.f, spec)?;
            Ok(s)
        })
        .collect()
}

/// Statistics of solved samples; `n_candidates` is the number screened to
/// obtain them.
pub fn ensemble_stats(
    samples: &[RveSample],
    cells: usize,
    n_candidates: u64,
    delta: Option<f64>,
) -> Result<EnsembleStats> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidInput("no samples to aggregate".into()))?;
    let labels = first.f.labels.clone();
    let mut matrices = Vec::with_capacity(samples.len());
    for s in samples {
        if s.f.labels != labels {
            return Err(Error::InvalidInput("samples carry different quantity labels".into()));
        }
        matrices.push(
            s.a_rve
                .ok_or_else(|| Error::InvalidInput(format!("sample {} was not solved", s.seed.sample_index)))?,
        );
    }
    let dim = labels.len();
    let f_cols = f_columns(samples, dim);
    let f_table = Columns::new(f_cols.clone());
    let f_moments = f_table.moments();
    let mean_f = (0..dim).map(|k| f_table.jackknife(|m| m.mean[k])).collect();
    let area = (cells * cells) as f64;

    let entries = Entry::ALL
        .iter()
        .map(|&e| {
            let mut cols = vec![matrices.iter().map(|a| e.value(a)).collect::<Vec<f64>>()];
            cols.extend(f_cols.iter().cloned());
            let table = Columns::new(cols);
            let moments = table.moments();
            let var_a = moments.cov[0][0];
            let degenerate = !(var_a.sqrt() > 1e-12 * moments.mean[0].abs());
            let rho2 = if degenerate {
                None
            } else {
                let est = table.jackknife(rho2_of);
                est.value.is_finite().then_some(est)
            };
            EntryStats {
                name: e.name().to_string(),
                mean: table.jackknife(|m| m.mean[0]),
                var: table.jackknife(|m| m.cov[0][0]),
                cov_af: (0..dim).map(|k| table.jackknife(|m| m.cov[0][k + 1])).collect(),
                rho2,
                kappa: (!degenerate)
                    .then(|| condition_number(&moments.cov))
                    .filter(|k| k.is_finite()),
                r_var: (!degenerate).then(|| 1.0 / (area * var_a)),
            }
        })
        .collect();

    Ok(EnsembleStats {
        n_samples: samples.len(),
        n_candidates,
        acceptance_rate: samples.len() as f64 / n_candidates.max(1) as f64,
        delta,
        labels,
        mean_f,
        cov_f: f_moments.cov,
        entries,
    })
}

/// `ρ²` of column 0 against the remaining columns; NaN when undefined.
fn rho2_of(m: &Moments) -> f64 {
    let cov_af: Vec<f64> = m.cov[0][1..].to_vec();
    let var_f: Vec<Vec<f64>> = m.cov[1..].iter().map(|r| r[1..].to_vec()).collect();
    rho_squared(&cov_af, &var_f, m.cov[0][0]).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareEntry {
    pub name: String,
    /// `Var sel / Var plain`.
    pub vrf: Estimate,
    #[serde(with = "nonfinite")]
    pub rho2_plain: f64,
    /// `1 − (1 − δ²)·ρ̂²` with `ρ̂²` from the plain ensemble.
    #[serde(with = "nonfinite")]
    pub predicted_bound: f64,
    /// Three combined standard errors of `vrf − bound`.
    #[serde(with = "nonfinite")]
    pub bound_slack: f64,
    #[serde(with = "nonfinite")]
    pub mean_shift: f64,
    #[serde(with = "nonfinite")]
    pub mean_shift_stderr: f64,
    pub vrf_within_bound: bool,
    pub unbiased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub delta: f64,
    pub entries: Vec<CompareEntry>,
    pub pass: bool,
}

impl CompareReport {
    pub fn entry(&self, e: Entry) -> &CompareEntry {
        &self.entries[Entry::ALL.iter().position(|x| *x == e).expect("entry exists")]
    }
}

pub fn compare(plain: &EnsembleStats, selected: &EnsembleStats) -> Result<CompareReport> {
    if plain.labels != selected.labels {
        return Err(Error::InvalidInput("ensembles use different quantities".into()));
    }
    let delta = selected
        .delta
        .ok_or_else(|| Error::InvalidInput("second ensemble is not a selected run".into()))?;
    let shrink = 1.0 - delta * delta;
    let entries: Vec<CompareEntry> = plain
        .entries
        .iter()
        .zip(&selected.entries)
        .map(|(p, s)| {
            let vrf = s.var.value / p.var.value;
            let vrf_se = vrf * ((s.var.stderr / s.var.value).powi(2) + (p.var.stderr / p.var.value).powi(2)).sqrt();
            let (rho2, rho2_se) = p.rho2.map_or((0.0, 0.0), |r| (r.value, r.stderr));
            let bound = 1.0 - shrink * rho2;
            let slack = 3.0 * (vrf_se.powi(2) + (shrink * rho2_se).powi(2)).sqrt();
            let shift = s.mean.value - p.mean.value;
            let shift_se = (s.mean.stderr.powi(2) + p.mean.stderr.powi(2)).sqrt();
            let degenerate = p.r_var.is_none();
            CompareEntry {
                name: p.name.clone(),
                vrf: Estimate {
                    value: vrf,
                    stderr: vrf_se,
                },
                rho2_plain: rho2,
                predicted_bound: bound,
                bound_slack: slack,
                mean_shift: shift,
                mean_shift_stderr: shift_se,
                vrf_within_bound: degenerate || vrf <= bound + slack,
                unbiased: shift.abs() <= 3.0 * shift_se || shift == 0.0,
            }
        })
        .collect();
    let pass = entries.iter().all(|e| e.vrf_within_bound && e.unbiased);
    Ok(CompareReport { delta, entries, pass })
}

/// Everything produced by one `run` of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub selection: Option<SelectionSpec>,
    pub plain: EnsembleStats,
    pub selected: Option<EnsembleStats>,
    pub compare: Option<CompareReport>,
    #[serde(skip)]
    pub plain_samples: Vec<RveSample>,
    #[serde(skip)]
    pub selected_samples: Vec<RveSample>,
}

/// calibrate → plain → selected → compare.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentOutput> {
    let (plain_samples, plain) = run_plain(plan)?;
    let mut out = ExperimentOutput {
        selection: None,
        plain,
        selected: None,
        compare: None,
        plain_samples,
        selected_samples: Vec::new(),
    };
    if plan.selection.is_some() {
        let spec = calibrate(plan)?;
        let (selected_samples, selected) = run_selected(plan, &spec)?;
        out.compare = Some(compare(&out.plain, &selected)?);
        out.selection = Some(spec);
        out.selected = Some(selected);
        out.selected_samples = selected_samples;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingQuantity {
    /// `a^RVE_11` (corrector solves).
    A11,
    /// `F_avg` (no solves).
    FAvg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub cells: usize,
    pub variance: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub quantity: ScalingQuantity,
    pub points: Vec<ScalingPoint>,
    /// Least-squares slope of `log Var` against `log L`; `None` when some
    /// variance vanishes.
    pub slope: Option<f64>,
}

pub fn variance_scaling_study(
    generator: &GeneratorSpec,
    cells: &[usize],
    pixels_per_cell: usize,
    n_per_size: usize,
    quantity: ScalingQuantity,
    master_seed: u64,
    workers: usize,
) -> Result<ScalingReport> {
    if cells.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "variance scaling needs at least 3 sizes, got {}",
            cells.len()
        )));
    }
    if n_per_size < 3 {
        return Err(Error::InvalidInput(
            "variance scaling needs at least 3 samples per size".into(),
        ));
    }
    let mut points = Vec::with_capacity(cells.len());
    for &l in cells {
        let mut plan = ExperimentPlan::new(generator.clone(), GridGeometry::new(l, pixels_per_cell)?);
        plan.master_seed = master_seed;
        plan.workers = workers;
        plan.n_plain = n_per_size;
        plan.validate()?;
        let pool = thread_pool(workers)?;
        let solve = quantity == ScalingQuantity::A11;
        let values = par_map(
            &pool,
            plan.geometry.n(),
            &index_range(PLAIN_OFFSET, n_per_size),
            |solver, i| {
                let s = evaluate_sample(&plan, generator, &[Quantity::Avg], solver, i, solve)?;
                Ok(match quantity {
                    ScalingQuantity::A11 => s.a_rve.expect("solved").get(0, 0),
                    ScalingQuantity::FAvg => s.f.components[0],
                })
            },
        )?;
        points.push(ScalingPoint {
            cells: l,
            variance: Columns::new(vec![values]).jackknife(|m| m.cov[0][0]),
        });
    }
    let slope = if points.iter().all(|p| p.variance.value > 0.0) {
        let xs: Vec<f64> = points.iter().map(|p| (p.cells as f64).ln()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.variance.value.ln()).collect();
        Some(stats::ls_slope(&xs, &ys))
    } else {
        None
    };
    Ok(ScalingReport {
        quantity,
        points,
        slope,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentDiagnostic {
    pub name: String,
    /// `None` for a constant column.
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianityReport {
    pub n_samples: usize,
    pub moments: Vec<MomentDiagnostic>,
    /// Correlation matrix of the columns; `None` entries where undefined.
    pub correlation: Vec<Vec<Option<f64>>>,
}

pub const MIN_GAUSSIANITY_SAMPLES: usize = 200;

/// Skewness, excess kurtosis and correlations of named columns.
pub fn gaussianity_diagnostics(columns: &[(String, Vec<f64>)]) -> Result<GaussianityReport> {
    let n = columns.first().map_or(0, |c| c.1.len());
    if n < MIN_GAUSSIANITY_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "gaussianity diagnostics need at least {MIN_GAUSSIANITY_SAMPLES} samples, got {n}"
        )));
    }
    let moments = columns
        .iter()
        .map(|(name, xs)| {
            let sk = stats::skewness_kurtosis(xs);
            MomentDiagnostic {
                name: name.clone(),
                skewness: sk.map(|v| v.0),
                excess_kurtosis: sk.map(|v| v.1),
            }
        })
        .collect();
    let cov = Columns::new(columns.iter().map(|c| c.1.clone()).collect())
        .moments()
        .cov;
    let correlation = (0..columns.len())
        .map(|i| {
            (0..columns.len())
                .map(|j| {
                    let d = (cov[i][i] * cov[j][j]).sqrt();
                    (d > 0.0).then(|| cov[i][j] / d)
                })
                .collect()
        })
        .collect();
    Ok(GaussianityReport {
        n_samples: n,
        moments,
        correlation,
    })
}

/// Diagnostics of `a_11` and every `F` component of solved samples.
pub fn sample_gaussianity(samples: &[RveSample]) -> Result<GaussianityReport> {
    let solved: Vec<&RveSample> = samples.iter().filter(|s| s.a_rve.is_some()).collect();
    let mut columns = vec![(
        "a_11".to_string(),
        solved.iter().map(|s| s.a_rve.expect("filtered").get(0, 0)).collect(),
    )];
    if let Some(first) = solved.first() {
        for (k, label) in first.f.labels.iter().enumerate() {
            columns.push((label.to_string(), solved.iter().map(|s| s.f.components[k]).collect()));
        }
    }
    gaussianity_diagnostics(&columns)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub s: f64,
    pub p_plain: Estimate,
    pub p_selected: Estimate,
    /// `P[|N(0,1)| ≥ s]`.
    pub gaussian_plain: f64,
    /// Gaussian tail at the reduced variance `(1 − (1−δ²)ρ̂²)·Var`.
    pub gaussian_selected: f64,
    pub ratio_plain: f64,
    pub ratio_selected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub mean_plain: f64,
    pub sd_plain: f64,
    pub reduced_variance_factor: f64,
    pub rows: Vec<TailRow>,
}

pub const MIN_TAIL_SAMPLES: usize = 1000;

/// Empirical `P[|x − mean_plain| ≥ s·sd_plain]` for both ensembles against
/// Gaussian references.
pub fn tail_comparison(plain: &[f64], selected: &[f64], s_list: &[f64], delta: f64, rho2: f64) -> Result<TailReport> {
    if plain.len() < MIN_TAIL_SAMPLES || selected.len() < MIN_TAIL_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "tail comparison needs at least {MIN_TAIL_SAMPLES} samples per ensemble, got {} and {}",
            plain.len(),
            selected.len()
        )));
    }
    let mean = stats::mean(plain);
    let sd = stats::variance(plain).sqrt();
    let factor = 1.0 - (1.0 - delta * delta) * rho2;
    let tail = |xs: &[f64], s: f64| {
        let hits = xs.iter().filter(|x| (*x - mean).abs() >= s * sd).count();
        let p = hits as f64 / xs.len() as f64;
        Estimate {
            value: p,
            stderr: (p * (1.0 - p) / xs.len() as f64).sqrt(),
        }
    };
    let rows = s_list
        .iter()
        .map(|&s| {
            let p_plain = tail(plain, s);
            let p_selected = tail(selected, s);
            let gaussian_plain = stats::gaussian_two_sided_tail(s);
            let gaussian_selected = stats::gaussian_two_sided_tail(s / factor.max(0.0).sqrt());
            TailRow {
                s,
                p_plain,
                p_selected,
                gaussian_plain,
                gaussian_selected,
                ratio_plain: p_plain.value / gaussian_plain,
                ratio_selected: p_selected.value / gaussian_selected,
            }
        })
        .collect();
    Ok(TailReport {
        mean_plain: mean,
        sd_plain: sd,
        reduced_variance_factor: factor,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn plan(generator: GeneratorSpec, l: usize, m: usize) -> ExperimentPlan {
        let mut p = ExperimentPlan::new(generator, GridGeometry::new(l, m).unwrap());
        p.master_seed = 7;
        p
    }

    fn avg_selection(delta: f64) -> Option<SelectionSkeleton> {
        Some(SelectionSkeleton {
            labels: vec![Quantity::Avg],
            delta,
        })
    }

    #[test]
    fn calibration_of_checkerboard_average() {
        let mut p = plan(GeneratorSpec::checkerboard(0.5, 1.0, 0.5), 8, 1);
        p.selection = avg_selection(0.5);
        p.n_calibration = 4000;
        let spec = calibrate(&p).unwrap();
        assert_eq!(spec.calib_mean, vec![0.75]);
        let expected = 0.0625 / 64.0;
        // Var of a sample variance ≈ 2σ⁴/(n−1) (cell values are nearly Gaussian in aggregate).
        let se = expected * (2.0 / 3999.0f64).sqrt();
        assert!(
            (spec.calib_cov[0][0] - expected).abs() < 4.0 * se,
            "{}",
            spec.calib_cov[0][0]
        );

        p.workers = 3;
        assert_eq!(calibrate(&p).unwrap(), spec);
    }

    #[test]
    fn constant_generator_fails_calibration() {
        let mut p = plan(GeneratorSpec::checkerboard(1.0, 1.0, 0.5), 4, 2);
        p.selection = avg_selection(0.5);
        p.n_calibration = 50;
        match calibrate(&p) {
            Err(Error::SingularCovariance { component, .. }) => assert_eq!(component, "avg"),
            other => panic!("expected singular covariance, got {other:?}"),
        }
    }

    #[test]
    fn plain_run_on_constant_field() {
        let mut p = plan(GeneratorSpec::checkerboard(1.3, 1.3, 0.5), 4, 2);
        p.n_plain = 10;
        let (samples, stats) = run_plain(&p).unwrap();
        assert_eq!(samples.len(), 10);
        let a11 = stats.entry(Entry::A11);
        assert!(a11.var.value < 1e-24);
        assert!((a11.mean.value - 1.3).abs() < 1e-12);
        assert!(stats.entry(Entry::A12).mean.value.abs() < 1e-12);
        assert!(a11.rho2.is_none() && a11.r_var.is_none());
    }

    #[test]
    fn plain_run_variance_and_ci_scaling() {
        let mut p = plan(GeneratorSpec::checkerboard(0.5, 1.0, 0.5), 8, 2);
        p.n_plain = 2000;
        p.workers = 2;
        let (_, big) = run_plain(&p).unwrap();
        let v = big.entry(Entry::A11).var;
        assert!(v.excludes_zero(), "{v:?}");
        p.n_plain = 1000;
        let (_, small) = run_plain(&p).unwrap();
        let ratio = (v.ci_halfwidth() / small.entry(Entry::A11).var.ci_halfwidth()).powi(2);
        assert!((0.3..=0.7).contains(&ratio), "{ratio}");
        // Monotone field: Cov[a_11, F_avg] > 0.
        assert!(big.entry(Entry::A11).cov_af[0].value > 0.0);
        assert!(big.entry(Entry::A11).cov_af[0].excludes_zero());
    }

    #[test]
    fn vacuous_selection_reproduces_plain_run() {
        let mut p = plan(GeneratorSpec::checkerboard(0.5, 1.0, 0.5), 4, 2);
        p.selection = avg_selection(1e6);
        p.n_plain = 40;
        p.n_selected = 40;
        p.n_calibration = 40;
        p.shared_sample_range = true;
        let (plain_samples, plain) = run_plain(&p).unwrap();
        let spec = calibrate(&p).unwrap();
        let (sel_samples, sel) = run_selected(&p, &spec).unwrap();
        assert_eq!(sel.acceptance_rate, 1.0);
        assert_eq!(sel_samples, plain_samples);
        assert_eq!(sel.entries, plain.entries);
        let report = compare(&plain, &sel).unwrap();
        assert!(report
            .entries
            .iter()
            .all(|e| e.vrf.value == 1.0 || e.vrf.value.is_nan()));
    }

    #[test]
    fn selected_run_budget_and_acceptance() {
        let mut p = plan(GeneratorSpec::checkerboard(0.5, 1.0, 0.5), 8, 1);
        p.selection = avg_selection(0.5);
        p.n_calibration = 2000;
        p.n_selected = 300;
        let spec = calibrate(&p).unwrap();
        let (samples, stats) = run_selected(&p, &spec).unwrap();
        let solved = samples.iter().filter(|s| s.a_rve.is_some()).count();
        assert_eq!(solved, 300);
        assert_eq!(stats.n_samples, 300);
        assert!(samples.iter().all(|s| s.accepted == s.a_rve.is_some()));
        assert!(samples.last().unwrap().accepted);
        // Lattice-valued F_avg at L = 8: only a loose check here.
        assert!((0.2..0.6).contains(&stats.acceptance_rate), "{}", stats.acceptance_rate);

        p.workers = 4;
        let (again, _) = run_selected(&p, &spec).unwrap();
        assert_eq!(again, samples);
    }

    fn synthetic(n: usize, seed: u64, rho: f64) -> Vec<RveSample> {
        let mut rng = SampleSeed::new(seed, 0).rng(9);
        (0..n)
            .map(|k| {
                let f: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                let a = 1.0 + 0.1 * (rho * f + (1.0 - rho * rho).sqrt() * e);
                RveSample {
                    seed: SampleSeed::new(seed, k as u64),
                    f: FVector {
                        labels: vec![Quantity::Avg],
                        components: vec![f],
                    },
                    accepted: true,
                    a_rve: Some(EffectiveMatrix {
                        entries: [[a, 0.0], [0.0, a]],
                    }),
                    solver_iters: 0,
                }
            })
            .collect()
    }

    #[test]
    fn perfect_statistic_removes_variance() {
        let samples = synthetic(4000, 1, 1.0);
        let plain = ensemble_stats(&samples[..2000], 8, 2000, None).unwrap();
        let spec = SelectionSpec::new(vec![Quantity::Avg], 0.05, vec![0.0], vec![vec![1.0]]).unwrap();
        let chosen: Vec<RveSample> = select_precomputed(&samples, &spec)
            .unwrap()
            .into_iter()
            .filter(|s| s.accepted)
            .collect();
        assert!(chosen.len() > 50);
        let sel = ensemble_stats(&chosen, 8, 4000, Some(0.05)).unwrap();
        let report = compare(&plain, &sel).unwrap();
        assert!(report.entry(Entry::A11).vrf.value < 0.01);
        assert!(report.entry(Entry::A11).vrf_within_bound);
    }

    #[test]
    fn uncorrelated_statistic_keeps_variance() {
        let samples = synthetic(6000, 2, 0.0);
        let plain = ensemble_stats(&samples[..3000], 8, 3000, None).unwrap();
        let spec = SelectionSpec::new(vec![Quantity::Avg], 0.5, vec![0.0], vec![vec![1.0]]).unwrap();
        let chosen: Vec<RveSample> = select_precomputed(&samples[3000..], &spec)
            .unwrap()
            .into_iter()
            .filter(|s| s.accepted)
            .collect();
        let sel = ensemble_stats(&chosen, 8, 3000, Some(0.5)).unwrap();
        let report = compare(&plain, &sel).unwrap();
        let e = report.entry(Entry::A11);
        assert!((e.predicted_bound - 1.0).abs() < 0.01);
        assert!((e.vrf.value - 1.0).abs() < 3.0 * e.vrf.stderr);
        assert!(report.pass);
    }

    #[test]
    fn scaling_of_iid_average() {
        let report = variance_scaling_study(
            &GeneratorSpec::checkerboard(0.5, 1.0, 0.5),
            &[4, 8, 16],
            1,
            3000,
            ScalingQuantity::FAvg,
            3,
            1,
        )
        .unwrap();
        let slope = report.slope.unwrap();
        assert!((slope + 2.0).abs() <= 0.2, "{slope}");

        let flat = variance_scaling_study(
            &GeneratorSpec::checkerboard(1.0, 1.0, 0.5),
            &[2, 3, 4],
            1,
            10,
            ScalingQuantity::FAvg,
            3,
            1,
        )
        .unwrap();
        assert!(flat.slope.is_none());
        assert!(variance_scaling_study(
            &GeneratorSpec::checkerboard(0.5, 1.0, 0.5),
            &[4, 8],
            1,
            10,
            ScalingQuantity::FAvg,
            3,
            1
        )
        .is_err());
    }

    #[test]
    fn gaussianity_of_synthetic_and_constant_data() {
        let samples = synthetic(2000, 4, 0.6);
        let report = sample_gaussianity(&samples).unwrap();
        let bound = 4.0 * (6.0 / 2000.0f64).sqrt();
        for m in &report.moments {
            assert!(m.skewness.unwrap().abs() <= bound, "{m:?}");
        }
        let corr = report.correlation[0][1].unwrap();
        assert!((corr - 0.6).abs() < 0.06);

        let constant = vec![("c".to_string(), vec![1.0; 300])];
        let r = gaussianity_diagnostics(&constant).unwrap();
        assert!(r.moments[0].skewness.is_none() && r.correlation[0][0].is_none());
        assert!(gaussianity_diagnostics(&[("x".into(), vec![0.0; 10])]).is_err());
    }

    #[test]
    fn tail_comparison_against_gaussian_double() {
        let rho = 0.8f64;
        let delta = 0.2;
        let samples = synthetic(30_000, 5, rho);
        let values = |s: &[RveSample]| s.iter().map(|s| s.a_rve.unwrap().get(0, 0)).collect::<Vec<f64>>();
        let plain = values(&samples[..2000]);
        let spec = SelectionSpec::new(vec![Quantity::Avg], delta, vec![0.0], vec![vec![1.0]]).unwrap();
        let chosen: Vec<RveSample> = select_precomputed(&samples[2000..], &spec)
            .unwrap()
            .into_iter()
            .filter(|s| s.accepted)
            .collect();
        let selected = values(&chosen);
        assert!(selected.len() >= 1000);
        let report = tail_comparison(&plain, &selected, &[0.0, 1.0, 2.0], delta, rho * rho).unwrap();
        assert_eq!(report.rows[0].p_plain.value, 1.0);
        assert_eq!(report.rows[0].p_selected.value, 1.0);
        for row in &report.rows[1..] {
            assert!((row.p_plain.value - row.gaussian_plain).abs() <= 3.0 * row.p_plain.stderr.max(1e-3));
            assert!((row.p_selected.value - row.gaussian_selected).abs() <= 3.0 * row.p_selected.stderr.max(1e-3));
        }
        let s2 = &report.rows[2];
        assert!(s2.p_selected.value <= s2.p_plain.value + 2.0 * s2.p_plain.stderr);
        assert!(tail_comparison(&plain[..10], &selected, &[1.0], delta, 0.5).is_err());
    }

    #[test]
    fn plan_serialization_skips_workers() {
        let mut p = plan(GeneratorSpec::checkerboard(0.5, 1.0, 0.5), 4, 2);
        p.workers = 8;
        let json = serde_json::to_string(&p).unwrap();
        assert!(!json.contains("workers"));
        let back: ExperimentPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back.workers, 1);
        assert_eq!(back.generator, p.generator);
    }
}
