//! Run configuration: schema, defaults and validation.

use std::f64::consts::TAU;
use std::fmt;
use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thermbath_core::allaser::{effective_rates, red_rabi_for_steady_state, StochasticDriveSpec};
use thermbath_core::hilbert::thermal_populations;
use thermbath_core::lindblad::DEFAULT_STEP_BUDGET;
use thermbath_core::lvc::{default_cutoff, initial_donor_state, LvcModel};
use thermbath_core::transfer::{default_intervals, default_t_sim};
use thermbath_core::Error as CoreError;

/// Thermal tail allowed beyond a bath cutoff.
const BATH_TAIL: f64 = 1e-6;
const BATH_HEADROOM: f64 = 1.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandKind {
    BathRelax,
    SteadyState,
    TransferSpectrum,
    TransferDynamics,
    TwoModeSpectrum,
    ProbeFit,
    Allaser,
    Fgr,
    Marcus,
    Surfaces,
    Resonances,
}

/// The document a run starts from. `params` is checked against the schema of
/// `command`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub command: CommandKind,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub dump_state: Option<bool>,
    pub params: serde_json::Value,
}

#[derive(Debug)]
pub struct ConfigError {
    pub message: String,
    /// JSON path of the offending field.
    pub path: Option<String>,
    pub hint: Option<String>,
}

impl ConfigError {
    fn new(message: impl Into<String>) -> Self {
        Self { message: message.into(), path: None, hint: None }
    }

    fn at(path: &str, message: impl Into<String>) -> Self {
        Self { message: message.into(), path: Some(path.into()), hint: None }
    }

    fn hint(mut self, hint: impl Into<String>) -> Self {
        self.hint = Some(hint.into());
        self
    }

    fn from_core(path: &str, e: CoreError) -> Self {
        let hint = match &e {
            CoreError::CutoffTooSmall { mass, .. } => {
                Some(format!("raise the cutoff; {mass:e} of the state lies beyond it (omit `cutoffs` for the default)"))
            }
            CoreError::NbarTooLarge { .. } => Some("raise the cutoff or lower the occupation".into()),
            CoreError::NonEquilibrating { .. } => {
                Some("increase omega_r or decrease omega_b so that gamma_r > gamma_b".into())
            }
            CoreError::InvalidParameter { name, requirement, .. } => Some(format!("`{name}` must be {requirement}")),
            _ => None,
        };
        Self { message: e.to_string(), path: Some(path.into()), hint }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.path {
            write!(f, "{p}: ")?;
        }
        write!(f, "{}", self.message)?;
        if let Some(h) = &self.hint {
            write!(f, " (hint: {h})")?;
        }
        Ok(())
    }
}

/// Inclusive arithmetic grid `start, start + step, …, ≤ stop`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl RangeSpec {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.start + k as f64 * self.step).collect()
    }

    fn check(&self, path: &str) -> Result<(), ConfigError> {
        if !(self.step > 0.0) || !(self.stop >= self.start) || !self.start.is_finite() || !self.stop.is_finite() {
            return Err(ConfigError::at(path, "range needs step > 0 and stop >= start"));
        }
        if (self.stop - self.start) / self.step > 1e6 {
            return Err(ConfigError::at(path, "range has more than a million points"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InitialOccupation {
    /// Thermal state with mean `n0`.
    #[default]
    Thermal,
    /// Fock state `|n0⟩`.
    Fock,
}

/// Pure-bath relaxation. Rates in 1/ms, times in ms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathRelaxParams {
    pub gamma_c: f64,
    pub gamma_h: f64,
    pub n0: f64,
    pub t_max: f64,
    #[serde(default)]
    pub initial: Option<InitialOccupation>,
    #[serde(default)]
    pub cutoff: Option<usize>,
    /// Output intervals on `[0, t_max]`.
    #[serde(default)]
    pub checkpoints: Option<usize>,
    #[serde(default)]
    pub step_budget: Option<f64>,
}

/// Steady state of the pure bath, optionally with `H = ω a†a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyStateParams {
    pub gamma_c: f64,
    pub gamma_h: f64,
    #[serde(default)]
    pub omega: Option<f64>,
    #[serde(default)]
    pub cutoff: Option<usize>,
}

/// k_T over a ΔE grid. Energies in units of ω (ω₁ for two modes).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumParams {
    pub model: LvcModel,
    pub delta_e: RangeSpec,
    #[serde(default)]
    pub t_sim: Option<f64>,
    #[serde(default)]
    pub intervals: Option<usize>,
    #[serde(default)]
    pub step_budget: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsParams {
    pub model: LvcModel,
    #[serde(default)]
    pub t_sim: Option<f64>,
    #[serde(default)]
    pub intervals: Option<usize>,
    #[serde(default)]
    pub step_budget: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PopulationSpec {
    Thermal(f64),
    Free(Vec<f64>),
}

/// Synthetic blue-sideband thermometry. Ω in rad/ms, times in ms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeFitParams {
    pub population: PopulationSpec,
    #[serde(default)]
    pub omega_rabi: Option<f64>,
    #[serde(default)]
    pub gamma_d: Option<f64>,
    #[serde(default)]
    pub points: Option<usize>,
    /// Probe window in units of π/Ω.
    #[serde(default)]
    pub window: Option<f64>,
    #[serde(default)]
    pub shots: Option<u32>,
    #[serde(default)]
    pub rabi_jitter: Option<f64>,
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub constraint_scale: Option<f64>,
}

/// All-laser bath. Frequencies in 2π·kHz (as quoted for experiments), times in ms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllaserParams {
    pub omega_b: f64,
    pub gamma_decay: f64,
    pub tau: f64,
    /// Target occupation; sets `omega_r` when that is absent.
    #[serde(default)]
    pub n_ss: Option<f64>,
    #[serde(default)]
    pub omega_r: Option<f64>,
    pub n0: f64,
    #[serde(default)]
    pub cutoff: Option<usize>,
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub trajectories: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FgrParams {
    pub v: f64,
    pub g: f64,
    #[serde(default)]
    pub omega: Option<f64>,
    pub nbar: Vec<f64>,
    pub delta_e: RangeSpec,
    #[serde(default)]
    pub prefactor_a: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarcusParams {
    pub v: f64,
    pub k_bt: f64,
    /// Reorganization energy; derived as g²/ω from `g` when absent.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub g: Option<f64>,
    #[serde(default)]
    pub omega: Option<f64>,
    pub delta_e: RangeSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfacesParams {
    pub model: LvcModel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonanceParams {
    pub v: f64,
    pub omega1: f64,
    pub omega2: f64,
    #[serde(default)]
    pub l_max: Option<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    BathRelax(BathRelaxParams),
    SteadyState(SteadyStateParams),
    TransferSpectrum(SpectrumParams),
    TransferDynamics(DynamicsParams),
    TwoModeSpectrum(SpectrumParams),
    ProbeFit(ProbeFitParams),
    Allaser(AllaserParams),
    Fgr(FgrParams),
    Marcus(MarcusParams),
    Surfaces(SurfacesParams),
    Resonances(ResonanceParams),
}

/// A config with every default filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub config: RunConfig,
    pub params: Params,
}

pub const DEFAULT_OUT_DIR: &str = "out";

/// Overrides from the command line; they win over the document.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub workers: Option<usize>,
    pub dump_state: bool,
}

fn from_json<T: DeserializeOwned>(value: &serde_json::Value, prefix: &str) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let inner = e.path().to_string();
        let path = if inner == "." { prefix.to_string() } else { format!("{prefix}.{inner}") };
        ConfigError::at(&path, e.into_inner().to_string())
    })
}

/// Parses a config document, or the `config` field of a run manifest.
pub fn parse_config(document: &str) -> Result<RunConfig, ConfigError> {
    let value: serde_json::Value =
        serde_json::from_str(document).map_err(|e| ConfigError::new(format!("not valid JSON: {e}")))?;
    let is_manifest = value.get("config").is_some() && value.get("outputs").is_some();
    if is_manifest {
        from_json(&value["config"], "config")
    } else {
        from_json(&value, "$")
    }
}

fn positive(path: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::at(path, format!("must be finite and > 0, got {v}")))
    }
}

fn non_negative(path: &str, v: f64) -> Result<(), ConfigError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::at(path, format!("must be finite and >= 0, got {v}")))
    }
}

/// Smallest cutoff with thermal tail below 1e-6 at `nbar`, with headroom.
fn bath_cutoff(nbar: f64) -> usize {
    let ratio = nbar / (nbar + 1.0);
    let minimal = if ratio > 0.0 { (BATH_TAIL.ln() / ratio.ln()).ceil() as usize } else { 1 };
    ((minimal as f64 * BATH_HEADROOM).ceil() as usize).max(4)
}

fn check_thermal_fits(path: &str, nbar: f64, cutoff: usize) -> Result<(), ConfigError> {
    let (_, tail) = thermal_populations(nbar, cutoff).map_err(|e| ConfigError::from_core(path, e))?;
    if tail >= BATH_TAIL {
        return Err(ConfigError::at(path, format!("thermal tail {tail:e} beyond cutoff {cutoff} at n = {nbar}"))
            .hint(format!("use cutoff >= {} or omit it", bath_cutoff(nbar))));
    }
    Ok(())
}

fn resolve_model(model: &LvcModel, path: &str) -> Result<LvcModel, ConfigError> {
    let model = model.resolved().map_err(|e| ConfigError::from_core(path, e))?;
    initial_donor_state(&model).map_err(|e| {
        let minimal: Vec<usize> = model.modes.iter().filter_map(|m| default_cutoff(m).ok()).collect();
        ConfigError::from_core(&format!("{path}.cutoffs"), e)
            .hint(format!("default cutoffs for this model are {minimal:?}"))
    })?;
    Ok(model)
}

fn resolve_spectrum(mut p: SpectrumParams, two_mode: bool) -> Result<SpectrumParams, ConfigError> {
    if two_mode && p.model.modes.len() != 2 {
        return Err(ConfigError::at("params.model.modes", "two-mode-spectrum needs exactly two modes"));
    }
    p.delta_e.check("params.delta_e")?;
    p.model = resolve_model(&p.model, "params.model")?;
    let t_sim = match p.t_sim {
        Some(t) => t,
        None => default_t_sim(&p.model).map_err(|e| ConfigError::from_core("params.t_sim", e))?,
    };
    positive("params.t_sim", t_sim)?;
    p.t_sim = Some(t_sim);
    let widest = p.delta_e.points().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    p.intervals = Some(p.intervals.unwrap_or_else(|| default_intervals(&p.model.with_delta_e(widest), t_sim)));
    if p.intervals == Some(0) {
        return Err(ConfigError::at("params.intervals", "must be positive"));
    }
    p.step_budget = Some(p.step_budget.unwrap_or(DEFAULT_STEP_BUDGET));
    positive("params.step_budget", p.step_budget.unwrap_or_default())?;
    Ok(p)
}

/// Drive spec in rad/ms built from an all-laser parameter block.
pub fn drive_spec(p: &AllaserParams, seed: u64) -> StochasticDriveSpec {
    StochasticDriveSpec {
        omega_r: TAU * p.omega_r.unwrap_or_default(),
        omega_b: TAU * p.omega_b,
        gamma_decay: TAU * p.gamma_decay,
        tau: p.tau,
        cutoff: p.cutoff.unwrap_or_default(),
        seed,
    }
}

fn resolve_params(kind: CommandKind, raw: &serde_json::Value) -> Result<Params, ConfigError> {
    Ok(match kind {
        CommandKind::BathRelax => {
            let mut p: BathRelaxParams = from_json(raw, "params")?;
            positive("params.gamma_c", p.gamma_c)?;
            non_negative("params.gamma_h", p.gamma_h)?;
            non_negative("params.n0", p.n0)?;
            positive("params.t_max", p.t_max)?;
            let initial = *p.initial.get_or_insert(InitialOccupation::Thermal);
            if initial == InitialOccupation::Fock && p.n0.fract() != 0.0 {
                return Err(ConfigError::at("params.n0", "a Fock initial state needs an integer n0"));
            }
            let n_ss = p.gamma_h / p.gamma_c;
            let cutoff = *p.cutoff.get_or_insert_with(|| match initial {
                InitialOccupation::Thermal => bath_cutoff(p.n0.max(n_ss)),
                InitialOccupation::Fock => bath_cutoff(n_ss).max(p.n0 as usize + 1).max(bath_cutoff(p.n0)),
            });
            match initial {
                InitialOccupation::Thermal => check_thermal_fits("params.cutoff", p.n0, cutoff)?,
                InitialOccupation::Fock if p.n0 as usize >= cutoff => {
                    return Err(ConfigError::at("params.cutoff", format!("Fock level {} needs cutoff > {}", p.n0, p.n0)));
                }
                InitialOccupation::Fock => {}
            }
            check_thermal_fits("params.cutoff", n_ss, cutoff)?;
            p.checkpoints = Some(p.checkpoints.unwrap_or(20));
            if p.checkpoints == Some(0) {
                return Err(ConfigError::at("params.checkpoints", "must be positive"));
            }
            p.step_budget = Some(p.step_budget.unwrap_or(DEFAULT_STEP_BUDGET));
            positive("params.step_budget", p.step_budget.unwrap_or_default())?;
            Params::BathRelax(p)
        }
        CommandKind::SteadyState => {
            let mut p: SteadyStateParams = from_json(raw, "params")?;
            positive("params.gamma_c", p.gamma_c)?;
            non_negative("params.gamma_h", p.gamma_h)?;
            let n_ss = p.gamma_h / p.gamma_c;
            p.omega = Some(p.omega.unwrap_or(0.0));
            non_negative("params.omega", p.omega.unwrap_or_default())?;
            let cutoff = *p.cutoff.get_or_insert_with(|| bath_cutoff(n_ss));
            check_thermal_fits("params.cutoff", n_ss, cutoff)?;
            Params::SteadyState(p)
        }
        CommandKind::TransferSpectrum => Params::TransferSpectrum(resolve_spectrum(from_json(raw, "params")?, false)?),
        CommandKind::TwoModeSpectrum => Params::TwoModeSpectrum(resolve_spectrum(from_json(raw, "params")?, true)?),
        CommandKind::TransferDynamics => {
            let mut p: DynamicsParams = from_json(raw, "params")?;
            p.model = resolve_model(&p.model, "params.model")?;
            let t_sim = match p.t_sim {
                Some(t) => t,
                None => default_t_sim(&p.model).map_err(|e| ConfigError::from_core("params.t_sim", e))?,
            };
            positive("params.t_sim", t_sim)?;
            p.t_sim = Some(t_sim);
            p.intervals = Some(p.intervals.unwrap_or_else(|| default_intervals(&p.model, t_sim)));
            if p.intervals == Some(0) {
                return Err(ConfigError::at("params.intervals", "must be positive"));
            }
            p.step_budget = Some(p.step_budget.unwrap_or(DEFAULT_STEP_BUDGET));
            positive("params.step_budget", p.step_budget.unwrap_or_default())?;
            Params::TransferDynamics(p)
        }
        CommandKind::ProbeFit => {
            let mut p: ProbeFitParams = from_json(raw, "params")?;
            match &p.population {
                PopulationSpec::Thermal(n) => non_negative("params.population.thermal", *n)?,
                PopulationSpec::Free(v) => {
                    let sum: f64 = v.iter().sum();
                    if v.is_empty() || v.iter().any(|x| !(*x >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                        return Err(ConfigError::at("params.population.free", "populations must be >= 0 and sum to 1"));
                    }
                }
            }
            p.omega_rabi = Some(p.omega_rabi.unwrap_or(TAU * 10.0));
            positive("params.omega_rabi", p.omega_rabi.unwrap_or_default())?;
            p.gamma_d = Some(p.gamma_d.unwrap_or(0.0));
            non_negative("params.gamma_d", p.gamma_d.unwrap_or_default())?;
            p.points = Some(p.points.unwrap_or(thermbath_core::probe::DEFAULT_PROBE_POINTS));
            p.window = Some(p.window.unwrap_or(thermbath_core::probe::DEFAULT_PROBE_WINDOW));
            positive("params.window", p.window.unwrap_or_default())?;
            p.shots = Some(p.shots.unwrap_or(200));
            if p.shots == Some(0) {
                return Err(ConfigError::at("params.shots", "must be positive"));
            }
            p.rabi_jitter = Some(p.rabi_jitter.unwrap_or(0.0));
            non_negative("params.rabi_jitter", p.rabi_jitter.unwrap_or_default())?;
            p.n_max = Some(p.n_max.unwrap_or(15));
            p.constraint_scale = Some(p.constraint_scale.unwrap_or(500.0));
            positive("params.constraint_scale", p.constraint_scale.unwrap_or_default())?;
            let points = p.points.unwrap_or_default();
            if points < p.n_max.unwrap_or_default() + 4 {
                return Err(ConfigError::at("params.points", format!("{points} points cannot constrain n_max + 3 parameters"))
                    .hint("raise `points` or lower `n_max`"));
            }
            Params::ProbeFit(p)
        }
        CommandKind::Allaser => {
            let mut p: AllaserParams = from_json(raw, "params")?;
            positive("params.omega_b", p.omega_b)?;
            positive("params.gamma_decay", p.gamma_decay)?;
            positive("params.tau", p.tau)?;
            non_negative("params.n0", p.n0)?;
            p.omega_r = match (p.omega_r, p.n_ss) {
                (Some(r), _) => Some(r),
                (None, Some(n)) => Some(
                    red_rabi_for_steady_state(n, TAU * p.omega_b, TAU * p.gamma_decay, p.tau)
                        .map_err(|e| ConfigError::from_core("params.n_ss", e))?
                        / TAU,
                ),
                (None, None) => return Err(ConfigError::at("params", "give either `n_ss` or `omega_r`")),
            };
            non_negative("params.omega_r", p.omega_r.unwrap_or_default())?;
            p.cutoff = Some(p.cutoff.unwrap_or(40));
            let spec = drive_spec(&p, 0);
            let rates = effective_rates(&spec).map_err(|e| ConfigError::from_core("params.omega_r", e))?;
            if let Some(n) = p.n_ss {
                if (rates.n_ss - n).abs() > 1e-9 * n.max(1.0) {
                    return Err(ConfigError::at("params.n_ss", format!("omega_r gives n_ss = {}, not {n}", rates.n_ss)));
                }
            }
            p.n_ss = Some(rates.n_ss);
            let t_end = p.t_end.unwrap_or_else(|| ((5.0 / rates.gamma_prime) / p.tau).ceil() * p.tau);
            positive("params.t_end", t_end)?;
            let holds = t_end / p.tau;
            if (holds - holds.round()).abs() > 1e-9 * holds {
                return Err(ConfigError::at("params.t_end", "must be a whole number of tau intervals"));
            }
            p.t_end = Some(t_end);
            p.trajectories = Some(p.trajectories.unwrap_or(50));
            if p.trajectories.unwrap_or_default() < 2 {
                return Err(ConfigError::at("params.trajectories", "need at least 2 trajectories"));
            }
            Params::Allaser(p)
        }
        CommandKind::Fgr => {
            let mut p: FgrParams = from_json(raw, "params")?;
            p.delta_e.check("params.delta_e")?;
            let omega = *p.omega.get_or_insert(1.0);
            positive("params.omega", omega)?;
            p.prefactor_a = Some(p.prefactor_a.unwrap_or(1.18));
            for (i, n) in p.nbar.iter().enumerate() {
                non_negative(&format!("params.nbar[{i}]"), *n)?;
            }
            if p.nbar.is_empty() {
                return Err(ConfigError::at("params.nbar", "needs at least one occupation"));
            }
            for de in p.delta_e.points() {
                let l = de / omega;
                if (l - l.round()).abs() > 1e-9 || l.round() < 1.0 {
                    return Err(ConfigError::at("params.delta_e", format!("ΔE = {de} is not a whole number of quanta"))
                        .hint("use a grid whose start and step are multiples of omega"));
                }
            }
            Params::Fgr(p)
        }
        CommandKind::Marcus => {
            let mut p: MarcusParams = from_json(raw, "params")?;
            p.delta_e.check("params.delta_e")?;
            positive("params.k_bt", p.k_bt)?;
            let omega = *p.omega.get_or_insert(1.0);
            positive("params.omega", omega)?;
            let lambda = match (p.lambda, p.g) {
                (Some(l), _) => l,
                (None, Some(g)) => g * g / omega,
                (None, None) => return Err(ConfigError::at("params", "give either `lambda` or `g`")),
            };
            positive("params.lambda", lambda)?;
            p.lambda = Some(lambda);
            Params::Marcus(p)
        }
        CommandKind::Surfaces => {
            let mut p: SurfacesParams = from_json(raw, "params")?;
            p.model = p.model.resolved().map_err(|e| ConfigError::from_core("params.model", e))?;
            Params::Surfaces(p)
        }
        CommandKind::Resonances => {
            let mut p: ResonanceParams = from_json(raw, "params")?;
            positive("params.omega1", p.omega1)?;
            positive("params.omega2", p.omega2)?;
            if !p.v.is_finite() {
                return Err(ConfigError::at("params.v", "must be finite"));
            }
            p.l_max = Some(p.l_max.unwrap_or(3));
            Params::Resonances(p)
        }
    })
}

fn params_json(params: &Params) -> serde_json::Value {
    let v = match params {
        Params::BathRelax(p) => serde_json::to_value(p),
        Params::SteadyState(p) => serde_json::to_value(p),
        Params::TransferSpectrum(p) | Params::TwoModeSpectrum(p) => serde_json::to_value(p),
        Params::TransferDynamics(p) => serde_json::to_value(p),
        Params::ProbeFit(p) => serde_json::to_value(p),
        Params::Allaser(p) => serde_json::to_value(p),
        Params::Fgr(p) => serde_json::to_value(p),
        Params::Marcus(p) => serde_json::to_value(p),
        Params::Surfaces(p) => serde_json::to_value(p),
        Params::Resonances(p) => serde_json::to_value(p),
    };
    v.expect("parameter blocks serialize")
}

/// Applies overrides, validates and fills every default.
pub fn resolve(config: &RunConfig, overrides: &Overrides) -> Result<Resolved, ConfigError> {
    let params = resolve_params(config.command, &config.params)?;
    let workers = overrides.workers.or(config.workers);
    if workers == Some(0) {
        return Err(ConfigError::at("workers", "must be positive"));
    }
    let config = RunConfig {
        command: config.command,
        seed: Some(overrides.seed.or(config.seed).unwrap_or(0)),
        out_dir: Some(overrides.out_dir.clone().or_else(|| config.out_dir.clone()).unwrap_or(DEFAULT_OUT_DIR.into())),
        workers,
        dump_state: Some(overrides.dump_state || config.dump_state.unwrap_or(false)),
        params: params_json(&params),
    };
    Ok(Resolved { config, params })
}
