//! TOML experiment configuration with named presets.

use std::path::{Path, PathBuf};

use rve_core::estimators::Quantity;
use rve_core::experiment::{ExperimentPlan, ScalingQuantity, SelectionSkeleton};
use rve_core::fieldgen::{GeneratorSpec, GridGeometry, Variant};
use rve_core::oracles::CounterexampleSettings;
use serde::{Deserialize, Serialize};

use crate::{CliError, CliResult};

pub const DEFAULT_PIXELS_PER_CELL: usize = 8;
pub const DEFAULT_N_CALIBRATION: usize = 2000;
pub const DEFAULT_N_PLAIN: usize = 400;
pub const DEFAULT_N_SELECTED: usize = 400;
pub const DEFAULT_OUT_DIR: &str = "rve-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Checkerboard {1, 0.5}, L = 8, m = 8, F = avg, δ = 0.5.
    CheckerboardC2,
    /// Checkerboard {1, 0.2}, L = 8, m = 8, F = avg, δ = 0.5.
    CheckerboardC5,
    /// Hard-core Poisson disks (r = 0.25, values 0.2 in / 1 out), L = 8,
    /// m = 8, F = (avg, 2pt_11, 2pt_22), δ = 0.5.
    Poisson,
    /// Laminate-tile counterexample (λ = 0.25, σ = 0.9, τ = 0.25), L = 8,
    /// m = 32, F = avg, δ = 0.5.
    Counterexample,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub cells: usize,
    #[serde(default)]
    pub pixels_per_cell: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub plots: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default)]
    pub gaussianity: bool,
    /// Thresholds `s` (in plain standard deviations) for the tail comparison.
    #[serde(default)]
    pub tail_s: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingConfig {
    #[serde(default = "default_scaling_cells")]
    pub cells: Vec<usize>,
    #[serde(default = "default_scaling_n")]
    pub n_per_size: usize,
    #[serde(default = "default_scaling_quantity")]
    pub quantity: ScalingQuantity,
}

fn default_scaling_cells() -> Vec<usize> {
    vec![4, 8, 16]
}

fn default_scaling_n() -> usize {
    300
}

fn default_scaling_quantity() -> ScalingQuantity {
    ScalingQuantity::A11
}

impl Default for ScalingConfig {
    fn default() -> Self {
        Self {
            cells: default_scaling_cells(),
            n_per_size: default_scaling_n(),
            quantity: default_scaling_quantity(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub n_per_probe: Option<usize>,
    pub max_bisections: Option<usize>,
    pub tol_cov: Option<f64>,
    pub n_confirm: Option<usize>,
    pub delta: Option<f64>,
}

/// The file as written; every key optional so presets can fill gaps.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub preset: Option<Preset>,
    pub master_seed: Option<u64>,
    pub n_calibration: Option<usize>,
    pub n_plain: Option<usize>,
    pub n_selected: Option<usize>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub generator: Option<Variant>,
    pub geometry: Option<GeometryConfig>,
    pub selection: Option<SelectionSkeleton>,
    pub output: Option<OutputConfig>,
    pub diagnostics: Option<DiagnosticsConfig>,
    pub scaling: Option<ScalingConfig>,
    pub counterexample: Option<CounterexampleConfig>,
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub plan: ExperimentPlan,
    pub out_dir: PathBuf,
    pub plots: bool,
    pub diagnostics: DiagnosticsConfig,
    pub scaling: ScalingConfig,
    pub counterexample: CounterexampleSettings,
}

struct PresetValues {
    generator: Variant,
    geometry: GeometryConfig,
    selection: SelectionSkeleton,
}

fn preset_values(p: Preset) -> PresetValues {
    let checkerboard = |lo: f64| Variant::Checkerboard {
        value_lo: lo,
        value_hi: 1.0,
        p_hi: 0.5,
    };
    let geometry = |m: usize| GeometryConfig {
        cells: 8,
        pixels_per_cell: Some(m),
        epsilon: None,
    };
    let avg = SelectionSkeleton {
        labels: vec![Quantity::Avg],
        delta: 0.5,
    };
    match p {
        Preset::CheckerboardC2 => PresetValues {
            generator: checkerboard(0.5),
            geometry: geometry(8),
            selection: avg,
        },
        Preset::CheckerboardC5 => PresetValues {
            generator: checkerboard(0.2),
            geometry: geometry(8),
            selection: avg,
        },
        Preset::Poisson => PresetValues {
            generator: Variant::PoissonInclusions {
                intensity: 2.0,
                radius: 0.25,
                value_in: 0.2,
                value_out: 1.0,
            },
            geometry: geometry(8),
            selection: SelectionSkeleton {
                labels: vec![Quantity::Avg, Quantity::TwoPoint(0, 0), Quantity::TwoPoint(1, 1)],
                delta: 0.5,
            },
        },
        Preset::Counterexample => PresetValues {
            generator: Variant::Counterexample {
                lambda: 0.25,
                sigma: 0.9,
                tau: 0.25,
                kappa: 0.0,
                randomize_orientation: true,
            },
            geometry: geometry(32),
            selection: avg,
        },
    }
}

/// Attaches the closed-form `E[F_avg]` where one exists.
pub fn generator_spec(variant: Variant) -> CliResult<GeneratorSpec> {
    let spec = match &variant {
        Variant::Checkerboard {
            value_lo,
            value_hi,
            p_hi,
        } => GeneratorSpec::checkerboard(*value_lo, *value_hi, *p_hi),
        Variant::Counterexample {
            lambda,
            sigma,
            tau,
            kappa,
            ..
        } => {
            let mut spec = GeneratorSpec::counterexample(*lambda, *sigma, *tau, *kappa)
                .map_err(|e| CliError::Config(e.to_string()))?;
            spec.variant = variant;
            spec
        }
        _ => GeneratorSpec::new(variant),
    };
    Ok(spec)
}

pub fn parse_str(text: &str) -> CliResult<Config> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    resolve(raw)
}

pub fn parse_config(path: &Path) -> CliResult<Config> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_str(&text).map_err(|e| match e {
        CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

fn resolve(raw: RawConfig) -> CliResult<Config> {
    let preset = raw.preset.map(preset_values);
    let generator = raw
        .generator
        .or_else(|| preset.as_ref().map(|p| p.generator.clone()))
        .ok_or_else(|| CliError::Config("missing [generator] table (or a preset)".into()))?;
    let geometry = raw
        .geometry
        .or_else(|| preset.as_ref().map(|p| p.geometry.clone()))
        .ok_or_else(|| CliError::Config("missing [geometry] table (or a preset)".into()))?;
    let selection = raw.selection.or_else(|| preset.as_ref().map(|p| p.selection.clone()));

    let geometry = GridGeometry {
        cells: geometry.cells,
        pixels_per_cell: geometry.pixels_per_cell.unwrap_or(DEFAULT_PIXELS_PER_CELL),
        epsilon: geometry.epsilon.unwrap_or(1.0),
    };
    let mut plan = ExperimentPlan::new(generator_spec(generator)?, geometry);
    plan.selection = selection;
    plan.master_seed = raw.master_seed.unwrap_or(0);
    plan.n_calibration = raw.n_calibration.unwrap_or(DEFAULT_N_CALIBRATION);
    plan.n_plain = raw.n_plain.unwrap_or(DEFAULT_N_PLAIN);
    plan.n_selected = raw.n_selected.unwrap_or(DEFAULT_N_SELECTED);
    if let Some(tol) = raw.tol {
        plan.tol = tol;
    }
    plan.max_iter = raw.max_iter;
    plan.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let diagnostics = raw.diagnostics.unwrap_or_default();
    if !diagnostics.tail_s.is_empty() {
        let min = rve_core::experiment::MIN_TAIL_SAMPLES;
        if plan.selection.is_none() || plan.n_plain < min || plan.n_selected < min {
            return Err(CliError::Config(format!(
                "diagnostics.tail_s needs a selection criterion and n_plain, n_selected >= {min}"
            )));
        }
    }
    if diagnostics.gaussianity && plan.n_plain < rve_core::experiment::MIN_GAUSSIANITY_SAMPLES {
        return Err(CliError::Config(format!(
            "diagnostics.gaussianity needs n_plain >= {}",
            rve_core::experiment::MIN_GAUSSIANITY_SAMPLES
        )));
    }

    let defaults = CounterexampleSettings::default();
    let cx = raw.counterexample.unwrap_or_default();
    let counterexample = CounterexampleSettings {
        n_per_probe: cx.n_per_probe.unwrap_or(defaults.n_per_probe),
        max_bisections: cx.max_bisections.unwrap_or(defaults.max_bisections),
        tol_cov: cx.tol_cov.unwrap_or(defaults.tol_cov),
        n_confirm: cx.n_confirm.unwrap_or(defaults.n_confirm),
        delta: cx
            .delta
            .or_else(|| plan.selection.as_ref().map(|s| s.delta))
            .unwrap_or(defaults.delta),
    };
    let output = raw.output.unwrap_or_default();
    Ok(Config {
        plan,
        out_dir: output.dir.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
        plots: output.plots.unwrap_or(true),
        diagnostics,
        scaling: raw.scaling.unwrap_or_default(),
        counterexample,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_str(
            "[generator]\nkind = \"checkerboard\"\nvalue_lo = 0.5\nvalue_hi = 1.0\np_hi = 0.5\n[geometry]\ncells = 8\n",
        )
        .unwrap();
        assert_eq!(cfg.plan.geometry.pixels_per_cell, DEFAULT_PIXELS_PER_CELL);
        assert_eq!(cfg.plan.n_calibration, DEFAULT_N_CALIBRATION);
        assert_eq!(cfg.plan.generator.analytic_mean_f_avg, Some(0.75));
        assert!(cfg.plan.selection.is_none());
        assert!(cfg.plots);
    }

    #[test]
    fn presets_resolve() {
        for name in ["checkerboard-c2", "checkerboard-c5", "poisson", "counterexample"] {
            let cfg = parse_str(&format!("preset = \"{name}\"\n")).unwrap();
            assert!(cfg.plan.selection.is_some(), "{name}");
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = parse_str("preset = \"poisson\"\nn_samples = 3\n").unwrap_err();
        assert!(err.to_string().contains("n_samples"), "{err}");
        let err = parse_str("preset = \"poisson\"\n[geometry]\ncells = 4\nsize = 2\n").unwrap_err();
        assert!(err.to_string().contains("size"), "{err}");
        let err = parse_str("[generator]\nkind = \"checkerboard\"\nvalue_lo = 0.5\nvalue_hi = 1.0\np_hi = 0.5\ncontrast = 2\n[geometry]\ncells = 8\n").unwrap_err();
        assert!(err.to_string().contains("contrast"), "{err}");
        let err = parse_str("preset = \"checkerboard-c9\"\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn sigma_outside_window_quotes_bounds() {
        let err = parse_str(
            "preset = \"counterexample\"\n[generator]\nkind = \"counterexample\"\nlambda = 0.25\nsigma = 0.99\ntau = 0.25\nkappa = 0.0\nrandomize_orientation = true\n",
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("0.8398") && msg.contains("0.9523"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn syntax_errors_report_line() {
        let err = parse_str("preset = \"poisson\"\nn_plain = = 3\n").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
