//! Run configuration: a single JSON document, patched by command-line flags.
//! Precedence is flags, then file, then built-in defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use zeno::dynamics::EffectiveParams;
use zeno::fit::{FitParameter, FreeParameter, NelderMead};
use zeno::joint::JointParams;
use zeno::master::IntegratorSettings;
use zeno::tomography::{Axis, Convention, GridSpec};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config field `{field}`: {reason}")]
    Field { field: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config file {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
}

fn field(field: impl Into<String>, reason: impl ToString) -> ConfigError {
    ConfigError::Field {
        field: field.into(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Wigner,
    ValidateJoint,
    Fit,
    Scan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_max: f64,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WignerConfig {
    pub grid: GridSpec,
    pub convention: Convention,
}

impl Default for WignerConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            convention: Convention::Parity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// `t_us,k,p,weight` file; without it a synthetic data set is generated
    /// from the effective parameters.
    pub observations: Option<PathBuf>,
    pub free: Vec<FreeParameter>,
    /// Starting point, one value per free parameter. Defaults to the
    /// effective parameter values.
    pub guess: Option<Vec<f64>>,
    pub output_step: f64,
    pub optimizer: NelderMead,
    /// Synthetic data: per-point Gaussian noise, applied only with a seed.
    pub noise_sigma: f64,
    /// Synthetic data: sampling interval, µs.
    pub sample_dt: f64,
    /// Synthetic data: time window, µs. Defaults to one oscillation period.
    pub window_us: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            observations: None,
            free: vec![
                FreeParameter::new(FitParameter::EpsilonD, 2.0, 4.0),
                FreeParameter::new(FitParameter::Detuning, -0.6, 0.4),
                FreeParameter::new(FitParameter::Lambda, -0.3, 0.2),
            ],
            guess: None,
            output_step: 0.01,
            optimizer: NelderMead::default(),
            noise_sigma: 0.017,
            sample_dt: 0.02,
            window_us: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub n_values: Vec<usize>,
    pub t_max: f64,
    pub dt: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            n_values: vec![2, 3, 4, 5],
            t_max: 3.0,
            dt: 0.005,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateConfig {
    /// Exit nonzero if `max_t P_N` in the joint model exceeds this.
    pub leakage_threshold: f64,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            leakage_threshold: zeno::joint::DEFAULT_PARASITIC,
        }
    }
}

fn default_n() -> usize {
    3
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

/// The file format. Parameter blocks are partial: any field left out takes
/// the operating-point default for the chosen `N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(rename = "N", default = "default_n")]
    pub blocked: usize,
    #[serde(default)]
    pub effective: Option<Value>,
    #[serde(default)]
    pub joint: Option<Value>,
    #[serde(default)]
    pub integrator: IntegratorSettings,
    /// Explicit output times, µs.
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    /// Uniform output times, used when `times` is absent.
    #[serde(default)]
    pub time_grid: Option<TimeGrid>,
    #[serde(default)]
    pub wigner: WignerConfig,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub validate: ValidateConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub format: Format,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

/// Command-line values that override the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub times: Option<Vec<f64>>,
    pub grid: Option<Axis>,
    pub seed: Option<u64>,
}

pub fn parse_times(list: &str) -> Result<Vec<f64>, ConfigError> {
    list.split(',')
        .map(|s| {
            let s = s.trim();
            s.parse::<f64>()
                .ok()
                .filter(|t| t.is_finite())
                .ok_or_else(|| field("times", format!("`{s}` is not a time in µs")))
        })
        .collect()
}

/// Fully resolved configuration; this is what every output file echoes, and
/// feeding it back through `--config` reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub mode: Mode,
    #[serde(rename = "N")]
    pub blocked: usize,
    pub effective: EffectiveParams,
    pub joint: JointParams,
    pub integrator: IntegratorSettings,
    pub times: Vec<f64>,
    pub wigner: WignerConfig,
    pub fit: FitConfig,
    pub scan: ScanConfig,
    pub validate: ValidateConfig,
    pub out_dir: PathBuf,
    pub format: Format,
    pub seed: Option<u64>,
}

impl Resolved {
    /// The echo as a loadable config document.
    pub fn echo(&self) -> Value {
        serde_json::to_value(self).expect("resolved config serializes")
    }
}

pub fn load(path: Option<&Path>) -> Result<RunConfig, ConfigError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_owned(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
        path: path.to_owned(),
        source,
    })
}

/// Overlays `patch` on the defaults; unknown keys are rejected by name.
fn patch_params<P: Serialize + for<'de> Deserialize<'de>>(
    block: &str,
    defaults: P,
    patch: Option<&Value>,
) -> Result<P, ConfigError> {
    let mut base = serde_json::to_value(defaults).expect("parameter structs serialize");
    if let Some(patch) = patch {
        let Value::Object(entries) = patch else {
            return Err(field(block, "must be a JSON object"));
        };
        let target: &mut Map<String, Value> = base.as_object_mut().expect("parameter structs are objects");
        for (k, v) in entries {
            if !target.contains_key(k) {
                return Err(field(format!("{block}.{k}"), "unknown field"));
            }
            target.insert(k.clone(), v.clone());
        }
    }
    serde_json::from_value(base).map_err(|e| field(block, e))
}

fn default_times(mode: Mode) -> TimeGrid {
    match mode {
        // one oscillation period at N = 3
        Mode::ValidateJoint => TimeGrid { t_max: 1.25, dt: 0.01 },
        _ => TimeGrid { t_max: 2.0, dt: 0.01 },
    }
}

pub fn resolve(mode: Mode, mut cfg: RunConfig, flags: Overrides) -> Result<Resolved, ConfigError> {
    if let Some(file_mode) = cfg.mode {
        if file_mode != mode {
            log::warn!("config names mode {file_mode:?}; the subcommand {mode:?} takes precedence");
        }
    }
    if let Some(out) = flags.out {
        cfg.out_dir = out;
    }
    if let Some(f) = flags.format {
        cfg.format = f;
    }
    if let Some(t) = flags.times {
        cfg.times = Some(t);
    }
    if let Some(axis) = flags.grid {
        cfg.wigner.grid = GridSpec::square(axis);
    }
    if flags.seed.is_some() {
        cfg.seed = flags.seed;
    }

    if !(2..=zeno::fock::MAX_DIM).contains(&cfg.blocked) {
        return Err(field("N", "must be at least 2"));
    }
    let n = cfg.blocked;
    let effective = patch_params("effective", EffectiveParams::operating_point(n), cfg.effective.as_ref())?;
    effective.validate().map_err(|e| field("effective", e))?;
    let joint = patch_params("joint", JointParams::operating_point(n), cfg.joint.as_ref())?;
    joint.validate().map_err(|e| field("joint", e))?;
    cfg.integrator.validate().map_err(|e| field("integrator", e))?;

    let times = match (&cfg.times, cfg.time_grid) {
        (Some(t), _) => t.clone(),
        (None, grid) if mode == Mode::Wigner && grid.is_none() => vec![0.0],
        (None, grid) => {
            let g = grid.unwrap_or_else(|| default_times(mode));
            zeno::master::uniform_times::<f64>(g.t_max, g.dt).map_err(|e| field("time_grid", e))?
        }
    };
    if times.is_empty() {
        return Err(field("times", "empty"));
    }
    if times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(field("times", "must be non-negative and strictly increasing"));
    }

    let g = cfg.wigner.grid;
    Axis::new(g.re.min, g.re.max, g.re.step).map_err(|e| field("wigner.grid.re", e))?;
    Axis::new(g.im.min, g.im.max, g.im.step).map_err(|e| field("wigner.grid.im", e))?;

    let fit = &cfg.fit;
    if mode == Mode::Fit {
        if fit.free.is_empty() {
            return Err(field("fit.free", "at least one free parameter is required"));
        }
        for f in &fit.free {
            if !(f.lower.is_finite() && f.upper.is_finite() && f.lower < f.upper) {
                return Err(field("fit.free", format!("{}: bounds must be finite with lower < upper", f.param.name())));
            }
        }
        let guess = fit
            .guess
            .clone()
            .unwrap_or_else(|| fit.free.iter().map(|f| f.param.get(&effective)).collect());
        if guess.len() != fit.free.len() {
            return Err(field("fit.guess", format!("expected {} values", fit.free.len())));
        }
        for (f, v) in fit.free.iter().zip(&guess) {
            if !(*v >= f.lower && *v <= f.upper) {
                return Err(field(
                    "fit.guess",
                    format!("{} = {v} outside [{}, {}]", f.param.name(), f.lower, f.upper),
                ));
            }
        }
        if !(fit.noise_sigma >= 0.0 && fit.sample_dt > 0.0 && fit.output_step > 0.0) {
            return Err(field("fit", "noise_sigma must be >= 0, sample_dt and output_step > 0"));
        }
        cfg.fit.guess = Some(guess);
    }
    if mode == Mode::Scan && (cfg.scan.n_values.is_empty() || cfg.scan.n_values.iter().any(|&k| k < 2)) {
        return Err(field("scan.n_values", "need at least one N >= 2"));
    }
    if !(cfg.validate.leakage_threshold >= 0.0) {
        return Err(field("validate.leakage_threshold", "must be non-negative"));
    }

    Ok(Resolved {
        mode,
        blocked: n,
        effective,
        joint,
        integrator: cfg.integrator,
        times,
        wigner: cfg.wigner,
        fit: cfg.fit,
        scan: cfg.scan,
        validate: cfg.validate,
        out_dir: cfg.out_dir,
        format: cfg.format,
        seed: cfg.seed,
    })
}
