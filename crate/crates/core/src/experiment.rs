//! Experiment specs, single runs and parameter sweeps.
//!
//! A spec is a TOML document with the sections `[grid]`, `[potential]`,
//! `[control]`, `[initial]`, `[feedback]`, `[integrator]`, `[sweep]`,
//! `[output]` and `[conditions]`. A run is a pure function of its spec.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{check_conditions, GenericityReport, DEFAULT_EPS_COUPLING, DEFAULT_EPS_GAP};
use crate::error::{Error, Result};
use crate::feedback::{alpha_star, lyapunov, FeedbackParams};
use crate::integrator::{evolve_closed_loop, IntegratorConfig, TrajectoryRecord, TrajectorySummary, UEval};
use crate::operators::ControlOperator;
use crate::spectral::{read_samples, Grid, Potential, SpectralBasis, State};

/// Successful sweep rows must keep `max |‖z‖ - 1|` below this.
pub const SWEEP_NORM_TOL: f64 = 1e-10;

/// Every recognized spec key with a one-line description.
pub const SPEC_KEYS: &[(&str, &str)] = &[
    ("scenario", "run name (string)"),
    ("seed", "seed for random initial states (integer, default 0)"),
    ("grid.a", "left end of the interval (default 0)"),
    ("grid.b", "right end of the interval (default 1)"),
    ("grid.m_points", "number of interior grid nodes"),
    ("grid.k_modes", "number of retained eigenmodes K (>= 2)"),
    ("potential.kind", "zero | constant | x | x2 | gaussian | cosine | file"),
    ("potential.value", "constant: value"),
    ("potential.amplitude", "gaussian, cosine: amplitude"),
    ("potential.center", "gaussian: center"),
    ("potential.rate", "gaussian: amplitude * exp(-rate (x - center)^2)"),
    ("potential.wavenumber", "cosine: amplitude * cos(wavenumber x + phase)"),
    ("potential.phase", "cosine: phase (default 0)"),
    ("potential.path", "file: one value per interior node"),
    ("control.kind", "x | x2 | zero | constant | gaussian | cosine | file"),
    ("control.value", "constant: value"),
    ("control.amplitude", "gaussian, cosine: amplitude"),
    ("control.center", "gaussian: center"),
    ("control.rate", "gaussian: rate"),
    ("control.wavenumber", "cosine: wavenumber"),
    ("control.phase", "cosine: phase (default 0)"),
    ("control.path", "file: one value per interior node"),
    ("initial.kind", "modes | random | file"),
    ("initial.re", "modes: real parts of c_1, c_2, ..."),
    ("initial.im", "modes: imaginary parts (default 0)"),
    ("initial.n_modes", "random: number of lowest modes drawn (default K)"),
    ("initial.path", "file: one 're [im]' line per mode"),
    ("feedback.alpha", "positive number or \"auto\""),
    ("feedback.alpha_fraction", "alpha / alpha* when alpha = \"auto\" (default 0.5)"),
    ("feedback.delta", "feedback gain (default 1)"),
    ("integrator.dt", "time step"),
    ("integrator.t_final", "final time"),
    ("integrator.record_stride", "record every n-th step (default 1)"),
    ("integrator.u_eval", "half_step_midpoint | start_of_step"),
    ("sweep.alpha", "list of absolute alpha values"),
    ("sweep.alpha_fraction", "list of alpha / alpha* values"),
    ("sweep.delta", "list of delta values"),
    ("sweep.dt", "list of dt values"),
    ("sweep.k_modes", "list of K values"),
    ("sweep.workers", "maximum concurrent runs (default: all cores)"),
    ("output.dir", "artifact directory (default runs/<scenario>)"),
    ("conditions.eps_coupling", "coupling threshold (default 1e-8)"),
    ("conditions.eps_gap", "relative resonance threshold (default 1e-6)"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridSpec,
    #[serde(default)]
    pub potential: FunctionSpec,
    pub control: FunctionSpec,
    pub initial: InitialSpec,
    #[serde(default)]
    pub feedback: FeedbackSpec,
    pub integrator: IntegratorSpec,
    #[serde(default, skip_serializing_if = "SweepSpec::is_empty")]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub conditions: ConditionsSpec,
    /// Directory that relative input paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default)]
    pub a: f64,
    #[serde(default = "one")]
    pub b: f64,
    pub m_points: usize,
    pub k_modes: usize,
}

fn one() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

fn unit_stride() -> usize {
    1
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    #[default]
    Zero,
    Constant,
    X,
    X2,
    Gaussian,
    Cosine,
    File,
}

/// A real function on the interval, used for both `V` and `Q`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSpec {
    pub kind: FunctionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavenumber: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

enum Sampled {
    Closed(Box<dyn Fn(f64) -> f64>),
    Samples(Vec<f64>),
}

impl FunctionSpec {
    fn need(&self, section: &str, name: &str, v: Option<f64>) -> Result<f64> {
        v.ok_or_else(|| {
            Error::Spec(format!("{section}.kind = {:?} requires {section}.{name}", self.kind_name()))
        })
    }

    fn kind_name(&self) -> &'static str {
        match self.kind {
            FunctionKind::Zero => "zero",
            FunctionKind::Constant => "constant",
            FunctionKind::X => "x",
            FunctionKind::X2 => "x2",
            FunctionKind::Gaussian => "gaussian",
            FunctionKind::Cosine => "cosine",
            FunctionKind::File => "file",
        }
    }

    /// Rejects parameters that the selected kind does not use.
    fn check_extras(&self, section: &str, allowed: &[&str]) -> Result<()> {
        let present = [
            ("value", self.value.is_some()),
            ("amplitude", self.amplitude.is_some()),
            ("center", self.center.is_some()),
            ("rate", self.rate.is_some()),
            ("wavenumber", self.wavenumber.is_some()),
            ("phase", self.phase.is_some()),
            ("path", self.path.is_some()),
        ];
        for (name, set) in present {
            if set && !allowed.contains(&name) {
                return Err(Error::Spec(format!(
                    "{section}.{name} is not used by {section}.kind = {:?}",
                    self.kind_name()
                )));
            }
        }
        Ok(())
    }

    fn resolve(&self, section: &str, base_dir: &Path, grid: &Grid) -> Result<Sampled> {
        let finite = |name: &str, v: f64| -> Result<f64> {
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Spec(format!("{section}.{name} must be finite")))
            }
        };
        Ok(match self.kind {
            FunctionKind::Zero => {
                self.check_extras(section, &[])?;
                Sampled::Closed(Box::new(|_| 0.0))
            }
            FunctionKind::Constant => {
                self.check_extras(section, &["value"])?;
                let v = finite("value", self.need(section, "value", self.value)?)?;
                Sampled::Closed(Box::new(move |_| v))
            }
            FunctionKind::X => {
                self.check_extras(section, &[])?;
                Sampled::Closed(Box::new(|x| x))
            }
            FunctionKind::X2 => {
                self.check_extras(section, &[])?;
                Sampled::Closed(Box::new(|x| x * x))
            }
            FunctionKind::Gaussian => {
                self.check_extras(section, &["amplitude", "center", "rate"])?;
                let amp = finite("amplitude", self.need(section, "amplitude", self.amplitude)?)?;
                let c = finite("center", self.need(section, "center", self.center)?)?;
                let r = finite("rate", self.need(section, "rate", self.rate)?)?;
                Sampled::Closed(Box::new(move |x| amp * (-r * (x - c) * (x - c)).exp()))
            }
            FunctionKind::Cosine => {
                self.check_extras(section, &["amplitude", "wavenumber", "phase"])?;
                let amp = finite("amplitude", self.need(section, "amplitude", self.amplitude)?)?;
                let w = finite("wavenumber", self.need(section, "wavenumber", self.wavenumber)?)?;
                let ph = finite("phase", self.phase.unwrap_or(0.0))?;
                Sampled::Closed(Box::new(move |x| amp * (w * x + ph).cos()))
            }
            FunctionKind::File => {
                self.check_extras(section, &["path"])?;
                let path = self
                    .path
                    .as_ref()
                    .ok_or_else(|| Error::Spec(format!("{section}.kind = \"file\" requires {section}.path")))?;
                Sampled::Samples(read_samples(&base_dir.join(path), grid.m_points())?)
            }
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Modes,
    Random,
    File,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    pub kind: InitialKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub re: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub im: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_modes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Value(f64),
    Auto(AutoKeyword),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoKeyword {
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeedbackSpec {
    #[serde(default = "auto_alpha")]
    pub alpha: AlphaSpec,
    #[serde(default = "half")]
    pub alpha_fraction: f64,
    #[serde(default = "one")]
    pub delta: f64,
}

fn auto_alpha() -> AlphaSpec {
    AlphaSpec::Auto(AutoKeyword::Auto)
}

impl Default for FeedbackSpec {
    fn default() -> Self {
        Self {
            alpha: auto_alpha(),
            alpha_fraction: 0.5,
            delta: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "unit_stride")]
    pub record_stride: usize,
    #[serde(default)]
    pub u_eval: UEval,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alpha_fraction: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub delta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dt: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k_modes: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl SweepSpec {
    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
            && self.alpha_fraction.is_empty()
            && self.delta.is_empty()
            && self.dt.is_empty()
            && self.k_modes.is_empty()
            && self.workers.is_none()
    }

    pub fn has_axes(&self) -> bool {
        !(self.alpha.is_empty()
            && self.alpha_fraction.is_empty()
            && self.delta.is_empty()
            && self.dt.is_empty()
            && self.k_modes.is_empty())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsSpec {
    #[serde(default = "default_eps_coupling")]
    pub eps_coupling: f64,
    #[serde(default = "default_eps_gap")]
    pub eps_gap: f64,
}

fn default_eps_coupling() -> f64 {
    DEFAULT_EPS_COUPLING
}

fn default_eps_gap() -> f64 {
    DEFAULT_EPS_GAP
}

impl Default for ConditionsSpec {
    fn default() -> Self {
        Self {
            eps_coupling: DEFAULT_EPS_COUPLING,
            eps_gap: DEFAULT_EPS_GAP,
        }
    }
}

/// Sets `section.key = value` inside a parsed TOML document. The value is
/// read as a TOML literal when possible and as a bare string otherwise.
fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Spec(format!("override '{assignment}' is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    if !SPEC_KEYS.iter().any(|(k, _)| *k == key) {
        return Err(Error::Spec(format!("unknown spec key '{key}'")));
    }
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("non-empty key");
    let mut table = doc;
    for part in parts {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Spec(format!("'{part}' is not a section")))?;
    }
    table.insert(leaf.to_string(), value);
    Ok(())
}

impl ExperimentSpec {
    /// Parses a spec, applies `key=value` overrides and validates the result.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Spec(format!("malformed spec: {}", e.message())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let spec: ExperimentSpec = doc
            .try_into()
            .map_err(|e: toml::de::Error| Error::Spec(format!("invalid spec: {}", e.message())))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Like [`ExperimentSpec::from_toml_str`]; relative input paths resolve
    /// against the spec file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Spec(format!("cannot read spec {}: {e}", path.display())))?;
        let mut spec = Self::from_toml_str(&text, overrides)?;
        spec.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(spec)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Spec(msg));
        if self.scenario.trim().is_empty() {
            return bad("scenario must be a non-empty name".into());
        }
        let g = &self.grid;
        if !(g.a.is_finite() && g.b.is_finite() && g.a < g.b) {
            return bad(format!("grid needs finite a < b, got a = {}, b = {}", g.a, g.b));
        }
        if g.m_points < 3 {
            return bad(format!("grid.m_points must be >= 3, got {}", g.m_points));
        }
        let ks = std::iter::once(g.k_modes).chain(self.sweep.k_modes.iter().copied());
        for k in ks {
            if k < 2 || k > g.m_points {
                return bad(format!("k_modes must lie in 2..={}, got {k}", g.m_points));
            }
        }
        match self.feedback.alpha {
            AlphaSpec::Value(a) if !(a > 0.0 && a.is_finite()) => {
                return bad(format!("feedback.alpha must be > 0 or \"auto\", got {a}"));
            }
            _ => {}
        }
        check_fraction("feedback.alpha_fraction", self.feedback.alpha_fraction)?;
        check_positive("feedback.delta", self.feedback.delta)?;
        check_positive("integrator.dt", self.integrator.dt)?;
        check_positive("integrator.t_final", self.integrator.t_final)?;
        if self.integrator.record_stride == 0 {
            return bad("integrator.record_stride must be >= 1".into());
        }
        let s = &self.sweep;
        if !s.alpha.is_empty() && !s.alpha_fraction.is_empty() {
            return bad("sweep.alpha and sweep.alpha_fraction are mutually exclusive".into());
        }
        for &a in &s.alpha {
            check_positive("sweep.alpha", a)?;
        }
        for &f in &s.alpha_fraction {
            check_fraction("sweep.alpha_fraction", f)?;
        }
        for &d in &s.delta {
            check_positive("sweep.delta", d)?;
        }
        for &d in &s.dt {
            check_positive("sweep.dt", d)?;
        }
        if s.workers == Some(0) {
            return bad("sweep.workers must be >= 1".into());
        }
        check_positive("conditions.eps_coupling", self.conditions.eps_coupling)?;
        check_positive("conditions.eps_gap", self.conditions.eps_gap)?;
        let init = &self.initial;
        match init.kind {
            InitialKind::Modes => {
                if init.re.is_empty() {
                    return bad("initial.kind = \"modes\" requires initial.re".into());
                }
                if init.im.len() > init.re.len() {
                    return bad("initial.im is longer than initial.re".into());
                }
                if init.n_modes.is_some() || init.path.is_some() {
                    return bad("initial.kind = \"modes\" takes only re and im".into());
                }
            }
            InitialKind::Random => {
                if !init.re.is_empty() || !init.im.is_empty() || init.path.is_some() {
                    return bad("initial.kind = \"random\" takes only n_modes".into());
                }
                if init.n_modes == Some(0) {
                    return bad("initial.n_modes must be >= 1".into());
                }
            }
            InitialKind::File => {
                if init.path.is_none() {
                    return bad("initial.kind = \"file\" requires initial.path".into());
                }
                if !init.re.is_empty() || !init.im.is_empty() || init.n_modes.is_some() {
                    return bad("initial.kind = \"file\" takes only path".into());
                }
            }
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .dir
            .clone()
            .unwrap_or_else(|| Path::new("runs").join(&self.scenario))
    }

    pub fn integrator_config(&self) -> Result<IntegratorConfig> {
        let i = &self.integrator;
        IntegratorConfig::new(i.dt, i.t_final, i.record_stride, i.u_eval)
    }

    pub fn build_grid(&self) -> Result<Grid> {
        Grid::new(self.grid.a, self.grid.b, self.grid.m_points)
    }

    pub fn build_basis(&self) -> Result<SpectralBasis> {
        let grid = self.build_grid()?;
        let potential = match self.potential.resolve("potential", &self.base_dir, &grid)? {
            Sampled::Closed(f) => Potential::from_fn(&grid, f)?,
            Sampled::Samples(v) => Potential::new(v)?,
        };
        SpectralBasis::build(grid, &potential, self.grid.k_modes)
    }

    pub fn build_control(&self, basis: &SpectralBasis) -> Result<ControlOperator> {
        let grid = *basis.grid();
        match self.control.resolve("control", &self.base_dir, &grid)? {
            Sampled::Closed(f) => {
                let values = grid.sample(&f);
                ControlOperator::assemble_with_boundary(&values, (f(grid.a()), f(grid.b())), basis)
            }
            Sampled::Samples(v) => ControlOperator::assemble(&v, basis),
        }
    }

    /// The normalized initial state. Random states are drawn mode by mode so
    /// that the leading coefficients do not depend on `K`; when `alpha` is a
    /// number the tail is shrunk until `|c_1|² >= 2 alpha Σ λ_k² |c_k|²`,
    /// which gives `V(z_0) < 1`.
    pub fn initial_state(&self, basis: &SpectralBasis) -> Result<State> {
        let k = basis.k_modes();
        let init = &self.initial;
        let mut coeffs = vec![Complex64::new(0.0, 0.0); k];
        match init.kind {
            InitialKind::Modes => {
                if init.re.len() > k {
                    return Err(Error::Spec(format!(
                        "initial.re has {} entries but only {k} modes are retained",
                        init.re.len()
                    )));
                }
                for (i, &re) in init.re.iter().enumerate() {
                    coeffs[i] = Complex64::new(re, init.im.get(i).copied().unwrap_or(0.0));
                }
            }
            InitialKind::File => {
                let path = self.base_dir.join(init.path.as_ref().expect("validated"));
                let loaded = read_coefficients(&path)?;
                if loaded.len() > k {
                    return Err(Error::Spec(format!(
                        "{}: {} coefficients but only {k} modes are retained",
                        path.display(),
                        loaded.len()
                    )));
                }
                coeffs[..loaded.len()].copy_from_slice(&loaded);
            }
            InitialKind::Random => {
                let n = init.n_modes.unwrap_or(k).min(k);
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                for c in coeffs.iter_mut().take(n) {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    *c = Complex64::new(re, im);
                }
                let state = State::normalized_from(coeffs)?;
                return match self.feedback.alpha {
                    AlphaSpec::Value(alpha) => Ok(reweight_ground(state, basis.eigenvalues(), alpha)),
                    AlphaSpec::Auto(_) => Ok(state),
                };
            }
        }
        State::normalized_from(coeffs)
    }
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Spec(format!("{name} must be > 0, got {v}")))
    }
}

fn check_fraction(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::Spec(format!("{name} must lie in (0, 1), got {v}")))
    }
}

/// Scales the excited modes by `s` (and the ground mode to keep unit norm)
/// with `s² = min(1, 1 / (T + 2 alpha P))`, where `T` and `P` are the excited
/// mass and weighted energy.
fn reweight_ground(state: State, lam: &[f64], alpha: f64) -> State {
    let c = state.coeffs();
    let tail: f64 = c[1..].iter().map(|z| z.norm_sqr()).sum();
    let energy: f64 = c[1..].iter().zip(&lam[1..]).map(|(z, l)| l * l * z.norm_sqr()).sum();
    let s2 = (1.0 / (tail + 2.0 * alpha * energy)).min(1.0);
    if s2 == 1.0 {
        return state;
    }
    let s = s2.sqrt();
    let ground = (1.0 - s2 * tail).max(0.0).sqrt();
    let c1 = if c[0].norm() > 0.0 {
        c[0] / c[0].norm()
    } else {
        Complex64::new(1.0, 0.0)
    };
    let mut out: Vec<Complex64> = c.iter().map(|z| z * s).collect();
    out[0] = c1 * ground;
    State::normalized_from(out).expect("nonzero")
}

/// One `re [im]` pair per line; `#` starts a comment line.
fn read_coefficients(path: &Path) -> Result<Vec<Complex64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).collect();
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| {
                Error::Spec(format!("{}:{}: cannot parse '{s}'", path.display(), lineno + 1))
            })
        };
        let z = match fields.as_slice() {
            [re] => Complex64::new(parse(re)?, 0.0),
            [re, im] => Complex64::new(parse(re)?, parse(im)?),
            _ => {
                return Err(Error::Spec(format!(
                    "{}:{}: expected 're' or 're im'",
                    path.display(),
                    lineno + 1
                )))
            }
        };
        out.push(z);
    }
    if out.is_empty() {
        return Err(Error::Spec(format!("{}: no coefficients", path.display())));
    }
    Ok(out)
}

/// Summary of one run: the integrator summary plus the audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    /// `"generic"` or `"non-generic"`.
    pub verdict: String,
    pub alpha_star: Option<f64>,
    #[serde(flatten)]
    pub trajectory: TrajectorySummary,
    pub conditions: GenericityReport,
}

impl RunSummary {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub record: TrajectoryRecord,
    pub eigenvalues: Vec<f64>,
}

/// Runs a spec without touching the file system.
pub fn execute(spec: &ExperimentSpec) -> Result<RunOutcome> {
    spec.validate()?;
    let config = spec.integrator_config()?;
    let basis = spec.build_basis()?;
    let control = spec.build_control(&basis)?;
    let report = check_conditions(&basis, &control, spec.conditions.eps_coupling, spec.conditions.eps_gap)?;
    let state0 = spec.initial_state(&basis)?;

    let a_star = alpha_star(&state0, &basis).ok();
    let alpha = match spec.feedback.alpha {
        AlphaSpec::Value(a) => a,
        AlphaSpec::Auto(_) => {
            spec.feedback.alpha_fraction * alpha_star(&state0, &basis)?
        }
    };
    let params = FeedbackParams::new(alpha, spec.feedback.delta)?;

    let mut warnings = Vec::new();
    let v0 = lyapunov(&state0, &basis, &params)?;
    if v0 >= 1.0 {
        warnings.push(format!("V(z0) = {v0:.6} >= 1; the initial state is outside the convergence region for this alpha"));
    }
    if !report.passed() {
        warnings.push("genericity audit failed; convergence to the ground state is not expected".into());
    }

    let record = evolve_closed_loop(&state0, &params, &config, &basis, &control)?;
    let mut trajectory = record.summary(&params, &basis);
    trajectory.warnings.extend(warnings);
    let verdict = if report.passed() { "generic" } else { "non-generic" };
    Ok(RunOutcome {
        summary: RunSummary {
            scenario: spec.scenario.clone(),
            verdict: verdict.into(),
            alpha_star: a_star,
            trajectory,
            conditions: report,
        },
        record,
        eigenvalues: basis.eigenvalues().to_vec(),
    })
}

/// Runs a spec and writes `trajectory.csv`, `summary.json`,
/// `conditions.json`, `basis.csv` and the resolved `spec.toml` into `out_dir`.
pub fn run_into(spec: &ExperimentSpec, out_dir: &Path) -> Result<RunOutcome> {
    let outcome = execute(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let write = |name: &str, body: &str| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    };
    outcome.record.write_csv(&out_dir.join("trajectory.csv"))?;
    write("summary.json", &(outcome.summary.to_json() + "\n"))?;
    write("conditions.json", &(outcome.summary.conditions.to_json() + "\n"))?;
    write("spec.toml", &spec.to_toml_string())?;
    let mut basis_csv = String::from("k,lambda_k\n");
    for (i, l) in outcome.eigenvalues.iter().enumerate() {
        let _ = writeln!(basis_csv, "{},{}", i + 1, crate::fmt_f64(*l));
    }
    write("basis.csv", &basis_csv)?;
    Ok(outcome)
}

/// [`run_into`] the experiment's own output directory.
pub fn run(spec: &ExperimentSpec) -> Result<RunOutcome> {
    run_into(spec, &spec.output_dir())
}

/// One row of an aggregated sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub index: usize,
    /// Absolute alpha; `NaN` when an automatic alpha could not be resolved.
    pub alpha: f64,
    pub delta: f64,
    pub dt: f64,
    #[serde(rename = "K")]
    pub k: usize,
    /// `"generic"`, `"non-generic"` or `"error: <message>"`.
    pub verdict: String,
    pub summary: Option<RunSummary>,
    pub wall_time_s: f64,
}

impl SweepRow {
    pub fn succeeded(&self) -> bool {
        self.summary.is_some()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub scenario: String,
    pub rows: Vec<SweepRow>,
}

pub const SWEEP_CSV_HEADER: &str =
    "alpha,delta,dt,K,verdict,final_overlap,final_lyapunov,max_norm_drift,cum_u2,wall_time_s";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\"").replace(['\n', '\r'], " "))
    } else {
        s.to_string()
    }
}

impl SweepReport {
    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| !r.succeeded()).count()
    }

    pub fn to_csv_string(&self) -> String {
        let f = crate::fmt_f64;
        let mut out = String::from(SWEEP_CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let (ov, ly, dr, cu) = match &r.summary {
                Some(s) => (
                    f(s.trajectory.final_overlap),
                    f(s.trajectory.final_lyapunov),
                    f(s.trajectory.max_norm_drift),
                    f(s.trajectory.cum_u2),
                ),
                None => Default::default(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{ov},{ly},{dr},{cu},{}",
                f(r.alpha),
                f(r.delta),
                f(r.dt),
                r.k,
                csv_field(&r.verdict),
                f(r.wall_time_s)
            );
        }
        out
    }

    /// Compact JSON: per-row coordinates and summary fields.
    pub fn to_json(&self) -> String {
        let rows: Vec<BTreeMap<&str, serde_json::Value>> = self
            .rows
            .iter()
            .map(|r| {
                let mut m = BTreeMap::new();
                m.insert("run", serde_json::json!(format!("run_{:03}", r.index)));
                m.insert("alpha", serde_json::json!(finite_or_null(r.alpha)));
                m.insert("delta", serde_json::json!(r.delta));
                m.insert("dt", serde_json::json!(r.dt));
                m.insert("K", serde_json::json!(r.k));
                m.insert("verdict", serde_json::json!(r.verdict));
                if let Some(s) = &r.summary {
                    m.insert("final_overlap", serde_json::json!(s.trajectory.final_overlap));
                    m.insert("final_lyapunov", serde_json::json!(s.trajectory.final_lyapunov));
                    m.insert("max_norm_drift", serde_json::json!(s.trajectory.max_norm_drift));
                    m.insert("cum_u2", serde_json::json!(s.trajectory.cum_u2));
                }
                m.insert("wall_time_s", serde_json::json!(r.wall_time_s));
                m
            })
            .collect();
        serde_json::to_string_pretty(&serde_json::json!({
            "scenario": self.scenario,
            "runs": self.rows.len(),
            "failed": self.failed(),
            "rows": rows,
        }))
        .expect("sweep serializes")
    }
}

fn finite_or_null(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Clone, Copy, Debug)]
enum AlphaAxis {
    Absolute(f64),
    Fraction(f64),
    Base,
}

/// The Cartesian product of the sweep axes, one derived spec per point.
/// Axes left empty keep the base value.
pub fn expand_sweep(spec: &ExperimentSpec) -> Result<Vec<ExperimentSpec>> {
    spec.validate()?;
    let s = &spec.sweep;
    if !s.has_axes() {
        return Err(Error::Spec("sweep needs at least one non-empty axis".into()));
    }
    let alphas: Vec<AlphaAxis> = if !s.alpha.is_empty() {
        s.alpha.iter().map(|&a| AlphaAxis::Absolute(a)).collect()
    } else if !s.alpha_fraction.is_empty() {
        s.alpha_fraction.iter().map(|&f| AlphaAxis::Fraction(f)).collect()
    } else {
        vec![AlphaAxis::Base]
    };
    let or_base = |v: &[f64], base: f64| if v.is_empty() { vec![base] } else { v.to_vec() };
    let deltas = or_base(&s.delta, spec.feedback.delta);
    let dts = or_base(&s.dt, spec.integrator.dt);
    let ks = if s.k_modes.is_empty() {
        vec![spec.grid.k_modes]
    } else {
        s.k_modes.clone()
    };

    let mut out = Vec::with_capacity(alphas.len() * deltas.len() * dts.len() * ks.len());
    for &a in &alphas {
        for &d in &deltas {
            for &dt in &dts {
                for &k in &ks {
                    let mut child = spec.clone();
                    child.sweep = SweepSpec::default();
                    match a {
                        AlphaAxis::Absolute(v) => child.feedback.alpha = AlphaSpec::Value(v),
                        AlphaAxis::Fraction(f) => {
                            child.feedback.alpha = auto_alpha();
                            child.feedback.alpha_fraction = f;
                        }
                        AlphaAxis::Base => {}
                    }
                    child.feedback.delta = d;
                    child.integrator.dt = dt;
                    child.grid.k_modes = k;
                    out.push(child);
                }
            }
        }
    }
    Ok(out)
}

fn run_row(index: usize, child: &ExperimentSpec, out_dir: &Path) -> SweepRow {
    let started = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run_into(child, out_dir)))
        .unwrap_or_else(|_| Err(Error::InvalidParameter("run panicked".into())));
    let wall_time_s = started.elapsed().as_secs_f64();
    let base_alpha = match child.feedback.alpha {
        AlphaSpec::Value(a) => a,
        AlphaSpec::Auto(_) => f64::NAN,
    };
    let mut row = SweepRow {
        index,
        alpha: base_alpha,
        delta: child.feedback.delta,
        dt: child.integrator.dt,
        k: child.grid.k_modes,
        verdict: String::new(),
        summary: None,
        wall_time_s,
    };
    match result {
        Ok(outcome) => {
            let s = outcome.summary;
            row.alpha = s.trajectory.alpha;
            row.verdict = s.verdict.clone();
            row.summary = Some(s);
            if let Some(msg) = invariant_violation(&row) {
                row.verdict = format!("error: {msg}");
                row.summary = None;
            }
        }
        Err(e) => row.verdict = format!("error: {e}"),
    }
    row
}

/// Re-checks the per-run invariants on a successful row.
fn invariant_violation(row: &SweepRow) -> Option<String> {
    let t = &row.summary.as_ref()?.trajectory;
    if t.monotonicity_violations > 0 {
        return Some(format!("{} monotonicity violations", t.monotonicity_violations));
    }
    if !(t.max_norm_drift <= SWEEP_NORM_TOL) {
        return Some(format!("norm drift {:e} exceeds {SWEEP_NORM_TOL:e}", t.max_norm_drift));
    }
    None
}

/// Runs every point of the sweep (concurrently, at most `sweep.workers` at a
/// time) and writes `run_XXX/` artifacts plus `sweep.csv` into `out_dir`.
/// A failing run is recorded in its row and does not stop the others.
pub fn sweep_into(spec: &ExperimentSpec, out_dir: &Path) -> Result<SweepReport> {
    let children = expand_sweep(spec)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = spec.sweep.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        children
            .par_iter()
            .enumerate()
            .map(|(i, child)| run_row(i, child, &out_dir.join(format!("run_{i:03}"))))
            .collect()
    });
    debug_assert_eq!(rows.len(), children.len());
    let report = SweepReport {
        scenario: spec.scenario.clone(),
        rows,
    };
    let csv_path = out_dir.join("sweep.csv");
    std::fs::write(&csv_path, report.to_csv_string()).map_err(|e| Error::io(&csv_path, e))?;
    Ok(report)
}

/// [`sweep_into`] the experiment's own output directory.
pub fn sweep(spec: &ExperimentSpec) -> Result<SweepReport> {
    sweep_into(spec, &spec.output_dir())
}
