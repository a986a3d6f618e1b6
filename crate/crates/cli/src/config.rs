//! JSON scenario configuration: parsing, overrides, validation and
//! conversion into a core [`Scenario`].

use std::fs;
use std::path::{Path, PathBuf};

use breakcoag_core::daughter::{DaughterSpec, ProbSpec};
use breakcoag_core::grid::{Grid, InitialCondition};
use breakcoag_core::kernels::{KernelFamily, KernelSpec};
use breakcoag_core::solver::{Method, StepControl, TruncationMode};
use breakcoag_core::Scenario;
use serde::Deserialize;
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Run,
    Verify,
    Contraction,
    Gel,
    Sweep,
    Dlvp,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x_min: f64,
    pub x_max: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Smoluchowski,
    SumProduct,
    BgRatio,
    Product,
    Additive,
    Constant,
    Table,
}

/// Family plus whichever parameters it needs. Declared constants
/// (`alpha`, `k1`, `k2`) override the family defaults.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub family: KernelKind,
    pub zeta: Option<f64>,
    pub eta: Option<f64>,
    pub sigma: Option<f64>,
    pub c: Option<f64>,
    pub path: Option<PathBuf>,
    pub alpha: Option<f64>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaughterKind {
    PowerTotal,
    PowerEach,
    Uniform,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DaughterConfig {
    pub family: DaughterKind,
    pub nu: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbKind {
    Constant,
    SmallVolumeFloor,
    Table,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbConfig {
    pub form: ProbKind,
    pub value: Option<f64>,
    pub e_small: Option<f64>,
    pub e_large: Option<f64>,
    pub cut: Option<f64>,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Exponential,
    PowerCutoff,
    PointMassSmeared,
    Tabulated,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub family: InitialKind,
    pub lambda: Option<f64>,
    pub p: Option<f64>,
    pub x_c: Option<f64>,
    pub x0: Option<f64>,
    pub w: Option<f64>,
    pub path: Option<PathBuf>,
    /// Total mass; optional for `exponential` (defaults to `1/lambda`) and
    /// `tabulated` (defaults to the table's own mass).
    pub mass: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    #[default]
    Rk4,
    HeunAdaptive,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default)]
    pub method: MethodName,
    pub t_end: Option<f64>,
    pub output_every: Option<f64>,
    pub output_times: Option<Vec<f64>>,
    pub dt_max: Option<f64>,
    pub dt_min: Option<f64>,
    pub rtol: Option<f64>,
    pub atol: Option<f64>,
    pub cfl: Option<f64>,
    /// Write a density snapshot every this many output times.
    pub snapshot_stride: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationConfig {
    #[serde(default)]
    pub mode: TruncationMode,
    pub n_trunc: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionConfig {
    /// The second run starts from this multiple of the initial condition.
    #[serde(default = "default_perturbation")]
    pub perturbation: f64,
}

impl Default for ContractionConfig {
    fn default() -> Self {
        ContractionConfig {
            perturbation: default_perturbation(),
        }
    }
}

fn default_perturbation() -> f64 {
    1.01
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GelConfig {
    #[serde(default = "default_gel_threshold")]
    pub threshold: f64,
    /// When given, the onset must fall inside `[lo, hi]`.
    pub window: Option<[f64; 2]>,
}

impl Default for GelConfig {
    fn default() -> Self {
        GelConfig {
            threshold: default_gel_threshold(),
            window: None,
        }
    }
}

fn default_gel_threshold() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub e_values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DlvpConfig {
    /// `"exponential"` for `e^{-x}`, otherwise a two-column CSV path.
    #[serde(default = "default_profile")]
    pub profile: String,
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_max_m")]
    pub max_m: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

impl Default for DlvpConfig {
    fn default() -> Self {
        DlvpConfig {
            profile: default_profile(),
            theta: default_theta(),
            max_m: default_max_m(),
            samples: default_samples(),
        }
    }
}

fn default_profile() -> String {
    "exponential".into()
}

fn default_theta() -> f64 {
    0.5
}

fn default_max_m() -> usize {
    25
}

fn default_samples() -> usize {
    1000
}

fn default_experiments() -> Vec<Experiment> {
    vec![Experiment::Run]
}

fn default_mass_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub grid: GridConfig,
    pub kernel: KernelConfig,
    pub daughter: DaughterConfig,
    pub prob: ProbConfig,
    pub initial: InitialConfig,
    #[serde(default)]
    pub control: ControlConfig,
    /// Shorthand for `control.t_end`.
    pub t_end: Option<f64>,
    #[serde(default)]
    pub truncation: TruncationConfig,
    #[serde(default = "default_experiments")]
    pub experiments: Vec<Experiment>,
    #[serde(default)]
    pub contraction: ContractionConfig,
    #[serde(default)]
    pub gel: GelConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub dlvp: DlvpConfig,
    #[serde(default = "default_mass_tol")]
    pub mass_tol: f64,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// SHA-256 of the canonical JSON after overrides.
    #[serde(skip)]
    pub hash: String,
}

fn need<T: Copy>(value: Option<T>, key: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
}

/// Applies `key.path=value` to a JSON tree. The value is parsed as JSON
/// and falls back to a plain string.
pub fn apply_override(root: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not of the form key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("override key `{key}` has an empty segment")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("override `{key}`: `{part}` is not inside an object")))?;
        node = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("override `{key}`: parent is not an object")))?;
    obj.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses a JSON config text with overrides applied.
pub fn parse_config_str(text: &str, overrides: &[String], base_dir: &Path) -> Result<ScenarioConfig, CliError> {
    let mut root: Value =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid JSON: {e}")))?;
    if !root.is_object() {
        return Err(CliError::Config("config must be a JSON object".into()));
    }
    for o in overrides {
        apply_override(&mut root, o)?;
    }
    let canonical = serde_json::to_string(&root).expect("JSON value serializes");
    let mut cfg: ScenarioConfig = serde_path_error(root)?;
    cfg.base_dir = base_dir.to_path_buf();
    cfg.hash = format!("{:x}", Sha256::digest(canonical.as_bytes()));
    cfg.validate()?;
    Ok(cfg)
}

fn serde_path_error(root: Value) -> Result<ScenarioConfig, CliError> {
    // serde_json reports the offending field name for unknown or missing keys
    serde_json::from_value(root).map_err(|e| CliError::Config(format!("config: {e}")))
}

pub fn parse_config(path: &Path, overrides: &[String]) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config_str(&text, overrides, &base)
}

impl ScenarioConfig {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn t_end(&self) -> Result<f64, CliError> {
        match (self.control.t_end, self.t_end) {
            (Some(a), Some(b)) if a != b => Err(CliError::Config(format!(
                "`t_end` ({b}) and `control.t_end` ({a}) disagree"
            ))),
            (Some(t), _) | (None, Some(t)) => Ok(t),
            (None, None) => Err(CliError::Config("missing required key `control.t_end`".into())),
        }
    }

    /// Checks ranges and cross-field constraints; every message names the
    /// offending key.
    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        if !(g.x_min > 0.0) || !(g.x_max > g.x_min) || !g.x_max.is_finite() {
            return Err(CliError::Config(format!(
                "grid.x_min/grid.x_max must satisfy 0 < x_min < x_max, got {} and {}",
                g.x_min, g.x_max
            )));
        }
        if g.cells < 2 {
            return Err(CliError::Config(format!("grid.cells must be at least 2, got {}", g.cells)));
        }
        let t_end = self.t_end()?;
        if !(t_end > 0.0) {
            return Err(CliError::Config(format!("control.t_end must be positive, got {t_end}")));
        }
        if let Some(every) = self.control.output_every {
            if !(every > 0.0) {
                return Err(CliError::Config(format!("control.output_every must be positive, got {every}")));
            }
            if self.control.output_times.is_some() {
                return Err(CliError::Config(
                    "control.output_every and control.output_times are mutually exclusive".into(),
                ));
            }
        }
        if self.control.snapshot_stride == Some(0) {
            return Err(CliError::Config("control.snapshot_stride must be at least 1".into()));
        }
        if !(self.mass_tol > 0.0) {
            return Err(CliError::Config(format!("mass_tol must be positive, got {}", self.mass_tol)));
        }
        if !(self.contraction.perturbation > 0.0) || self.contraction.perturbation == 1.0 {
            return Err(CliError::Config(format!(
                "contraction.perturbation must be positive and differ from 1, got {}",
                self.contraction.perturbation
            )));
        }
        if !(self.gel.threshold > 0.0 && self.gel.threshold < 1.0) {
            return Err(CliError::Config(format!("gel.threshold must lie in (0, 1), got {}", self.gel.threshold)));
        }
        if self.experiments.contains(&Experiment::Sweep) && self.sweep.e_values.is_empty() {
            return Err(CliError::Config("sweep.e_values must be non-empty when `sweep` is requested".into()));
        }
        if !(self.dlvp.theta > 0.0 && self.dlvp.theta < 1.0) {
            return Err(CliError::Config(format!("dlvp.theta must lie in (0, 1), got {}", self.dlvp.theta)));
        }
        // builds every component, which range-checks the family parameters
        let kernel = self.kernel_spec()?;
        let daughter = self.daughter_spec()?;
        self.prob_spec()?;
        self.initial_condition()?.validate()?;
        if matches!(daughter, DaughterSpec::PowerEach { .. }) && kernel.alpha() > 0.0 {
            return Err(CliError::Config(format!(
                "daughter.family: power_each is only supported with a kernel of alpha = 0, got alpha = {}",
                kernel.alpha()
            )));
        }
        self.step_control()?.validate()?;
        Ok(())
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec, CliError> {
        let k = &self.kernel;
        let family = match k.family {
            KernelKind::Smoluchowski => KernelFamily::Smoluchowski,
            KernelKind::SumProduct => KernelFamily::SumProduct {
                zeta: need(k.zeta, "kernel.zeta")?,
                eta: need(k.eta, "kernel.eta")?,
            },
            KernelKind::BgRatio => KernelFamily::BgRatio {
                sigma: need(k.sigma, "kernel.sigma")?,
                eta: need(k.eta, "kernel.eta")?,
            },
            KernelKind::Product => KernelFamily::Product,
            KernelKind::Additive => KernelFamily::Additive,
            KernelKind::Constant => KernelFamily::Constant {
                c: need(k.c, "kernel.c")?,
            },
            KernelKind::Table => {
                let path = k.path.as_ref().ok_or_else(|| CliError::Config("missing required key `kernel.path`".into()))?;
                return self.kernel_overrides(KernelSpec::from_table_csv(self.resolve(path))?);
            }
        };
        self.kernel_overrides(KernelSpec::new(family)?)
    }

    fn kernel_overrides(&self, mut spec: KernelSpec) -> Result<KernelSpec, CliError> {
        if let Some(a) = self.kernel.alpha {
            spec = spec.with_alpha(a)?;
        }
        if let Some(k1) = self.kernel.k1 {
            spec = spec.with_k1(k1)?;
        }
        if let Some(k2) = self.kernel.k2 {
            spec = spec.with_k2(Some(k2));
        }
        Ok(spec)
    }

    pub fn daughter_spec(&self) -> Result<DaughterSpec, CliError> {
        let d = &self.daughter;
        Ok(match d.family {
            DaughterKind::PowerTotal => DaughterSpec::power_total(need(d.nu, "daughter.nu")?)?,
            DaughterKind::PowerEach => DaughterSpec::power_each(need(d.nu, "daughter.nu")?)?,
            DaughterKind::Uniform => DaughterSpec::Uniform,
        })
    }

    pub fn prob_spec(&self) -> Result<ProbSpec, CliError> {
        let p = &self.prob;
        let spec = match p.form {
            ProbKind::Constant => {
                let e = need(p.value, "prob.value")?;
                if !(0.0..=1.0).contains(&e) {
                    return Err(CliError::Config(format!("prob.value must lie in [0, 1], got {e}")));
                }
                ProbSpec::constant(e)?
            }
            ProbKind::SmallVolumeFloor => {
                let spec = ProbSpec::SmallVolumeFloor {
                    e_small: need(p.e_small, "prob.e_small")?,
                    e_large: need(p.e_large, "prob.e_large")?,
                    cut: p.cut.unwrap_or(1.0),
                };
                spec.validate()?;
                spec
            }
            ProbKind::Table => {
                let path = p.path.as_ref().ok_or_else(|| CliError::Config("missing required key `prob.path`".into()))?;
                ProbSpec::from_table_csv(self.resolve(path))?
            }
        };
        Ok(spec)
    }

    pub fn initial_condition(&self) -> Result<InitialCondition, CliError> {
        let i = &self.initial;
        Ok(match i.family {
            InitialKind::Exponential => {
                let lambda = need(i.lambda, "initial.lambda")?;
                InitialCondition::Exponential {
                    lambda,
                    mass: i.mass.unwrap_or(1.0 / lambda),
                }
            }
            InitialKind::PowerCutoff => InitialCondition::PowerCutoff {
                p: need(i.p, "initial.p")?,
                x_c: need(i.x_c, "initial.x_c")?,
                mass: need(i.mass, "initial.mass")?,
            },
            InitialKind::PointMassSmeared => InitialCondition::PointMassSmeared {
                x0: need(i.x0, "initial.x0")?,
                w: need(i.w, "initial.w")?,
                mass: need(i.mass, "initial.mass")?,
            },
            InitialKind::Tabulated => {
                let path = i.path.as_ref().ok_or_else(|| CliError::Config("missing required key `initial.path`".into()))?;
                InitialCondition::from_csv(self.resolve(path), i.mass)?
            }
        })
    }

    pub fn step_control(&self) -> Result<StepControl, CliError> {
        let c = &self.control;
        let method = match c.method {
            MethodName::Rk4 => Method::Rk4,
            MethodName::HeunAdaptive => Method::HeunAdaptive,
        };
        let t_end = self.t_end()?;
        let mut ctl = StepControl::new(method, t_end);
        if let Some(every) = c.output_every {
            ctl = ctl.with_outputs_every(every);
        }
        if let Some(times) = &c.output_times {
            ctl.output_times = times.clone();
        }
        if let Some(v) = c.dt_max {
            ctl.dt_max = v;
        }
        if let Some(v) = c.dt_min {
            ctl.dt_min = v;
        }
        if let Some(v) = c.rtol {
            ctl.rtol = v;
        }
        if let Some(v) = c.atol {
            ctl.atol_rel = v;
        }
        if let Some(v) = c.cfl {
            ctl.cfl = v;
        }
        Ok(ctl)
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        let g = &self.grid;
        let grid = Grid::new(g.x_min, g.x_max, g.cells)?;
        let mut sc = Scenario::new(
            grid,
            self.kernel_spec()?,
            self.daughter_spec()?,
            self.prob_spec()?,
            self.initial_condition()?,
            self.step_control()?,
        )
        .with_mode(self.truncation.mode);
        if let Some(n) = self.truncation.n_trunc {
            sc.n_trunc = n;
        }
        Ok(sc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "grid": {"x_min": 1e-3, "x_max": 100, "cells": 40},
        "kernel": {"family": "constant", "c": 1},
        "daughter": {"family": "uniform"},
        "prob": {"form": "constant", "value": 1},
        "initial": {"family": "exponential", "lambda": 1},
        "t_end": 4
    }"#;

    fn parse(over: &[&str]) -> Result<ScenarioConfig, CliError> {
        let o: Vec<String> = over.iter().map(|s| s.to_string()).collect();
        parse_config_str(MINIMAL, &o, Path::new("."))
    }

    #[test]
    fn minimal_config_is_valid() {
        let cfg = parse(&[]).unwrap();
        assert_eq!(cfg.t_end().unwrap(), 4.0);
        assert_eq!(cfg.experiments, vec![Experiment::Run]);
        assert_eq!(cfg.hash.len(), 64);
    }

    #[test]
    fn probability_above_one_is_rejected() {
        let err = parse(&["prob.value=1.5"]).unwrap_err();
        assert!(err.to_string().contains("prob.value"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn per_particle_daughter_needs_alpha_zero() {
        let err = parse(&[
            r#"kernel={"family":"sum_product","zeta":-0.25,"eta":0.5}"#,
            r#"daughter={"family":"power_each","nu":0}"#,
        ])
        .unwrap_err();
        assert!(err.to_string().contains("daughter.family"), "{err}");
    }

    #[test]
    fn unknown_and_missing_keys_are_named() {
        let err = parse(&["grid.spacing=2"]).unwrap_err();
        assert!(err.to_string().contains("spacing"), "{err}");
        let err = parse(&[r#"kernel={"family":"sum_product","zeta":0}"#]).unwrap_err();
        assert!(err.to_string().contains("kernel.eta"), "{err}");
        let err = parse(&["t_end=null"]).unwrap_err();
        assert!(err.to_string().contains("control.t_end"), "{err}");
    }

    #[test]
    fn overrides_change_the_hash() {
        let a = parse(&[]).unwrap();
        let b = parse(&["control.output_every=0.5"]).unwrap();
        assert_ne!(a.hash, b.hash);
        assert_eq!(b.step_control().unwrap().output_times.len(), 8);
        assert!(parse(&["novalue"]).is_err());
    }
}
