//! Subcommand implementations. Each returns whether its checks passed.

use std::path::{Path, PathBuf};

use rve_core::estimators::{Quantity, SelectionSpec};
use rve_core::experiment::{
    self, CompareReport, EnsembleStats, Entry, ExperimentOutput, ExperimentPlan, GaussianityReport, RveSample,
    ScalingReport, TailReport,
};
use rve_core::oracles::{self, CheckResult, CounterexampleReport};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::{output, plots, CliError, CliResult};

pub const SUMMARY_FILE: &str = "summary.json";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const SCALING_FILE: &str = "scaling.json";
pub const COUNTEREXAMPLE_FILE: &str = "counterexample.json";

const MAX_ABS_RHO: f64 = 0.1;
const VRF_WINDOW: (f64, f64) = (0.85, 1.15);
const HISTOGRAM_BINS: usize = 30;

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, config: &mut Config) {
        if let Some(seed) = self.seed {
            config.plan.master_seed = seed;
        }
        if let Some(workers) = self.workers {
            config.plan.workers = workers;
        }
        if let Some(out) = &self.out {
            config.out_dir = out.clone();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub plan: ExperimentPlan,
    pub selection: Option<SelectionSpec>,
    pub plain: EnsembleStats,
    pub selected: Option<EnsembleStats>,
    pub compare: Option<CompareReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussianity: Option<GaussianityReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tails: Option<TailReport>,
}

fn a11(samples: &[RveSample]) -> Vec<f64> {
    samples.iter().filter_map(|s| s.a_rve).map(|a| a.get(0, 0)).collect()
}

fn summarize(config: &Config, out: &ExperimentOutput) -> CliResult<RunSummary> {
    let gaussianity = if config.diagnostics.gaussianity {
        Some(experiment::sample_gaussianity(&out.plain_samples)?)
    } else {
        None
    };
    let tails = match (&out.selected, config.diagnostics.tail_s.is_empty()) {
        (Some(selected), false) => {
            let accepted: Vec<RveSample> = out.selected_samples.iter().filter(|s| s.accepted).cloned().collect();
            let rho2 = out.plain.entry(Entry::A11).rho2.map_or(0.0, |r| r.value);
            Some(experiment::tail_comparison(
                &a11(&out.plain_samples),
                &a11(&accepted),
                &config.diagnostics.tail_s,
                selected.delta.unwrap_or_default(),
                rho2,
            )?)
        }
        _ => None,
    };
    Ok(RunSummary {
        plan: config.plan.clone(),
        selection: out.selection.clone(),
        plain: out.plain.clone(),
        selected: out.selected.clone(),
        compare: out.compare.clone(),
        gaussianity,
        tails,
    })
}

/// Marginal acceptance interval on `F_avg`.
fn avg_band(spec: &SelectionSpec) -> Option<(f64, f64)> {
    let k = spec.labels.iter().position(|q| *q == Quantity::Avg)?;
    let half = spec.delta * spec.calib_cov[k][k].sqrt();
    Some((spec.calib_mean[k] - half, spec.calib_mean[k] + half))
}

fn write_run_plots(dir: &Path, out: &ExperimentOutput) -> CliResult<()> {
    let plot_dir = dir.join("plots");
    output::create_dir(&plot_dir)?;
    let accepted: Vec<RveSample> = out.selected_samples.iter().filter(|s| s.accepted).cloned().collect();
    output::write_text(
        &plot_dir.join("a11_histogram.svg"),
        &plots::histogram(&a11(&out.plain_samples), &a11(&accepted), HISTOGRAM_BINS),
    )?;
    let pairs = |samples: &[RveSample]| -> Vec<(f64, f64)> {
        samples
            .iter()
            .filter_map(|s| Some((s.f.get(Quantity::Avg)?, s.a_rve?.get(0, 0))))
            .collect()
    };
    let band = out.selection.as_ref().and_then(avg_band);
    output::write_text(
        &plot_dir.join("favg_vs_a11.svg"),
        &plots::scatter(&pairs(&out.plain_samples), &pairs(&accepted), band),
    )
}

/// Runs calibration, plain and selected ensembles and writes all artifacts.
/// Passes when every entry is within its predicted bound and unbiased.
pub fn run(config: &Config) -> CliResult<bool> {
    let out = experiment::run_experiment(&config.plan)?;
    let dir = &config.out_dir;
    output::create_dir(dir)?;
    output::write_samples_csv(&dir.join(SAMPLES_FILE), &out.plain_samples, &out.selected_samples)?;
    let summary = summarize(config, &out)?;
    output::write_json(&dir.join(SUMMARY_FILE), &summary)?;
    if config.plots {
        write_run_plots(dir, &out)?;
    }
    if let Some(cmp) = &out.compare {
        for e in &cmp.entries {
            eprintln!(
                "{:<5} vrf {:.4} ± {:.4}  bound {:.4}  shift {:+.3e} ± {:.1e}  {}",
                e.name,
                e.vrf.value,
                e.vrf.stderr,
                e.predicted_bound,
                e.mean_shift,
                e.mean_shift_stderr,
                if e.vrf_within_bound && e.unbiased { "ok" } else { "FAIL" }
            );
        }
    }
    Ok(out.compare.as_ref().is_none_or(|c| c.pass))
}

pub fn format_checks(checks: &[CheckResult]) -> String {
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
    checks
        .iter()
        .map(|c| {
            format!(
                "{:<width$}  {}  {}\n",
                c.name,
                if c.pass { "PASS" } else { "FAIL" },
                c.detail
            )
        })
        .collect()
}

/// Oracle suite: prints one line per check.
pub fn verify() -> bool {
    let checks = oracles::verify_suite();
    print!("{}", format_checks(&checks));
    checks.iter().all(|c| c.pass)
}

pub fn scaling(config: &Config) -> CliResult<ScalingReport> {
    let s = &config.scaling;
    let report = experiment::variance_scaling_study(
        &config.plan.generator,
        &s.cells,
        config.plan.geometry.pixels_per_cell,
        s.n_per_size,
        s.quantity,
        config.plan.master_seed,
        config.plan.workers,
    )?;
    let dir = &config.out_dir;
    output::create_dir(dir)?;
    output::write_json(&dir.join(SCALING_FILE), &report)?;
    if config.plots {
        let plot_dir = dir.join("plots");
        output::create_dir(&plot_dir)?;
        let points: Vec<(f64, f64)> = report
            .points
            .iter()
            .map(|p| (p.cells as f64, p.variance.value))
            .collect();
        let label = serde_json::to_value(s.quantity)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        output::write_text(
            &plot_dir.join("variance_scaling.svg"),
            &plots::variance_scaling(&points, report.slope, &label),
        )?;
    }
    match report.slope {
        Some(slope) => println!("fitted log-log slope: {slope:.4}"),
        None => println!("fitted log-log slope: undefined"),
    }
    Ok(report)
}

/// Whether the counterexample shows no correlation, no variance reduction
/// and nondegenerate variances.
pub fn counterexample_holds(report: &CounterexampleReport) -> bool {
    report.rho_hat.value.abs() <= MAX_ABS_RHO
        && (VRF_WINDOW.0..=VRF_WINDOW.1).contains(&report.vrf.value)
        && report.var_a_iso.excludes_zero()
        && report.var_f_avg.excludes_zero()
}

pub fn counterexample(config: &Config) -> CliResult<bool> {
    if !matches!(config.plan.generator.variant, rve_core::Variant::Counterexample { .. }) {
        return Err(CliError::Config(
            "the counterexample command needs a counterexample generator".into(),
        ));
    }
    let report = oracles::counterexample_study(&config.plan, &config.counterexample)?;
    let dir = &config.out_dir;
    output::create_dir(dir)?;
    output::write_json(&dir.join(COUNTEREXAMPLE_FILE), &report)?;
    println!(
        "kappa* {:.4}  rho_hat {:+.4} ± {:.4}  vrf {:.4} ± {:.4}",
        report.search.kappa_star, report.rho_hat.value, report.rho_hat.stderr, report.vrf.value, report.vrf.stderr
    );
    Ok(counterexample_holds(&report))
}
