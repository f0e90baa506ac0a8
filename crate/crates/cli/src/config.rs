//! Run configuration: one TOML file, optionally patched with
//! `--set path.to.key=value` overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use skewlab::convergence::LadderConfig;
use skewlab::flows::{
    Benchmark, BenchmarkParams, Bounds, Coupling, DefaultF0, FastField, LinearDecay, Lorenz, LorenzParams, Observable,
    Projection, TanhRelaxation, ZeroCoupling, ZeroField, ZeroObservable,
};
use skewlab::limit_laws::GreenKuboConfig;
use skewlab::measure::MuSampler;
use skewlab::ode::{Formulation, IntegratorConfig, Method};
use skewlab::FlowSystem;

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub root_seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub system: SystemConfig,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub sigma: SigmaSection,
    #[serde(default)]
    pub drift: DriftSection,
    #[serde(default)]
    pub ldp: LdpSection,
    #[serde(default)]
    pub ladder: LadderSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("skewlab-out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub d: usize,
    pub eps: f64,
    pub fast_flow: FastFlowConfig,
    pub f0: F0Config,
    pub f: CouplingConfig,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            d: 2,
            eps: 0.25,
            fast_flow: FastFlowConfig::default(),
            f0: F0Config::default(),
            f: CouplingConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum FastFlowConfig {
    Lorenz {
        sigma: f64,
        rho: f64,
        beta: f64,
        trap_radius: f64,
    },
    LinearDecay {
        ell: usize,
        rate: f64,
    },
    Zero {
        ell: usize,
    },
}

impl Default for FastFlowConfig {
    fn default() -> Self {
        let p = LorenzParams::default();
        FastFlowConfig::Lorenz {
            sigma: p.sigma,
            rho: p.rho,
            beta: p.beta,
            trap_radius: p.trap_radius,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centering {
    /// Use `f0` as given.
    None,
    /// Subtract its time average over `center_horizon` before use.
    Runtime,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F0Kind {
    Default,
    Projection,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct F0Config {
    pub name: F0Kind,
    pub center: Centering,
    pub center_horizon: f64,
    /// Bound on `|f0|_inf`; defaults to the trapping radius when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sup: Option<f64>,
}

impl Default for F0Config {
    fn default() -> Self {
        F0Config {
            name: F0Kind::Default,
            center: Centering::None,
            center_horizon: 10_000.0,
            sup: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum CouplingConfig {
    Benchmark { c: f64, kappa: f64 },
    TanhRelaxation { c: f64 },
    Zero,
}

impl Default for CouplingConfig {
    fn default() -> Self {
        let p = BenchmarkParams::default();
        CouplingConfig::Benchmark { c: p.c, kappa: p.kappa }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSection {
    pub h_tau: f64,
    pub record_stride: usize,
    pub max_values: usize,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        let c = IntegratorConfig::default();
        IntegratorSection {
            h_tau: c.h_tau,
            record_stride: c.record_stride,
            max_values: c.max_values,
        }
    }
}

impl IntegratorSection {
    pub fn to_config(&self) -> IntegratorConfig {
        IntegratorConfig {
            h_tau: self.h_tau,
            method: Method::Rk4,
            record_stride: self.record_stride,
            max_values: self.max_values,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub burn_in: f64,
    pub spacing: f64,
    pub seed_radius: f64,
}

impl Default for SamplerSection {
    fn default() -> Self {
        let s = MuSampler::default();
        SamplerSection {
            burn_in: s.burn_in,
            spacing: s.spacing,
            seed_radius: s.seed_radius,
        }
    }
}

impl SamplerSection {
    pub fn to_sampler(&self, seed: u64) -> MuSampler {
        MuSampler {
            burn_in: self.burn_in,
            spacing: self.spacing,
            seed_radius: self.seed_radius,
            seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulationName {
    FastTime,
    SlowTime,
}

impl From<FormulationName> for Formulation {
    fn from(f: FormulationName) -> Self {
        match f {
            FormulationName::FastTime => Formulation::FastTime,
            FormulationName::SlowTime => Formulation::SlowTime,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub horizon: f64,
    /// Initial slow state; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    /// Initial fast state; drawn from `mu` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<Vec<f64>>,
    pub formulation: FormulationName,
}

impl Default for SimulateSection {
    fn default() -> Self {
        SimulateSection {
            horizon: 1.0,
            xi: None,
            eta: None,
            formulation: FormulationName::FastTime,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMethodName {
    Ensemble,
    GreenKubo,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSection {
    pub method: SigmaMethodName,
    pub n: f64,
    pub ensemble: usize,
    pub t_corr: f64,
    pub t_run: f64,
    pub sample_interval: f64,
    pub blocks: usize,
}

impl Default for SigmaSection {
    fn default() -> Self {
        let gk = GreenKuboConfig::default();
        SigmaSection {
            method: SigmaMethodName::Both,
            n: 200.0,
            ensemble: 2000,
            t_corr: gk.t_corr,
            t_run: gk.t_run,
            sample_interval: gk.sample_interval,
            blocks: gk.blocks,
        }
    }
}

impl SigmaSection {
    pub fn green_kubo(&self) -> GreenKuboConfig {
        GreenKuboConfig {
            t_corr: self.t_corr,
            t_run: self.t_run,
            sample_interval: self.sample_interval,
            blocks: self.blocks,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// Closed form for the registered couplings, with the `mu`-mean of the
    /// forcing term computed once.
    Analytic,
    /// `F_hat` tabulated on a grid and interpolated.
    Grid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub mode: DriftMode,
    /// Averaging time for each `F_hat(x)`.
    pub horizon: f64,
    /// Tabulation box; the ladder derives one from a pilot run when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    pub points: usize,
    /// Relative padding of a pilot-derived box.
    pub pad: f64,
}

impl Default for DriftSection {
    fn default() -> Self {
        DriftSection {
            mode: DriftMode::Analytic,
            horizon: 1000.0,
            lo: None,
            hi: None,
            points: 9,
            pad: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LdpSection {
    /// Slow states at which the tail is estimated; more than one gives the
    /// x-uniformity spread. Defaults to `k (1, ..., 1)`, `k = -2..=2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xs: Option<Vec<Vec<f64>>>,
    pub a_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub n_windows: usize,
    pub f_horizon: f64,
    pub check_a: f64,
    pub check_t: f64,
    pub check_ensemble: usize,
    pub check_shift: usize,
}

impl Default for LdpSection {
    fn default() -> Self {
        LdpSection {
            xs: None,
            a_grid: vec![0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 4.5],
            t_grid: vec![10.0, 40.0, 160.0, 640.0],
            n_windows: 400,
            f_horizon: 10_000.0,
            check_a: 0.1,
            check_t: 100.0,
            check_ensemble: 400,
            check_shift: 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSource {
    GreenKubo,
    Ensemble,
    Given,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderSection {
    pub eps_ladder: Vec<f64>,
    pub ensemble: usize,
    pub horizon: f64,
    pub eval_times: Vec<f64>,
    pub delta_exponent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<Vec<f64>>,
    pub sde_step: f64,
    pub oracle_count: usize,
    pub sigma_source: SigmaSource,
    /// Row-major `Sigma` for `sigma_source = "given"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<Vec<f64>>>,
    /// Write every trajectory's marginals to `ladder_marginals.csv`.
    pub keep_marginals: bool,
}

impl Default for LadderSection {
    fn default() -> Self {
        let l = LadderConfig::new(1);
        LadderSection {
            eps_ladder: l.eps_ladder,
            ensemble: l.ensemble,
            horizon: l.horizon,
            eval_times: l.eval_times,
            delta_exponent: l.delta_exponent,
            xi: None,
            sde_step: l.sde_step,
            oracle_count: l.oracle_count,
            sigma_source: SigmaSource::GreenKubo,
            sigma: None,
            keep_marginals: false,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            root_seed: 0,
            output_dir: default_output_dir(),
            system: SystemConfig::default(),
            integrator: IntegratorSection::default(),
            sampler: SamplerSection::default(),
            simulate: SimulateSection::default(),
            sigma: SigmaSection::default(),
            drift: DriftSection::default(),
            ldp: LdpSection::default(),
            ladder: LadderSection::default(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parses a `--set` value as a TOML value, falling back to a bare string.
fn parse_override_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `path.to.key=value` to a parsed document, creating tables as
/// needed.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not of the form key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(config_err(format!("bad override path `{path}`")));
    }
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| config_err(format!("override path `{path}` crosses a non-table at `{k}`")))?;
    }
    table.insert(keys[keys.len() - 1].to_string(), parse_override_value(raw.trim()));
    Ok(())
}

impl RunConfig {
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, overrides)
    }

    /// Defaults patched by overrides; used when no config file is given.
    pub fn from_overrides(overrides: &[String]) -> Result<Self, CliError> {
        Self::from_toml(&Self::default().to_toml()?, overrides)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> Result<String, CliError> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let s = &self.system;
        let d = s.d;
        if d == 0 {
            return Err(config_err("system.d must be at least 1"));
        }
        let ell = self.ell();
        let need = |what: &str, v: &Option<Vec<f64>>, len: usize| -> Result<(), CliError> {
            match v {
                Some(v) if v.len() != len => Err(config_err(format!("{what} must have length {len}, got {}", v.len()))),
                Some(v) if v.iter().any(|a| !a.is_finite()) => Err(config_err(format!("{what} has non-finite entries"))),
                _ => Ok(()),
            }
        };
        need("simulate.xi", &self.simulate.xi, d)?;
        need("simulate.eta", &self.simulate.eta, ell)?;
        need("ladder.xi", &self.ladder.xi, d)?;
        need("drift.lo", &self.drift.lo, d)?;
        need("drift.hi", &self.drift.hi, d)?;
        if !(self.simulate.horizon > 0.0) {
            return Err(config_err("simulate.horizon must be positive"));
        }
        if self.system.f0.center == Centering::Runtime && !(self.system.f0.center_horizon > 0.0) {
            return Err(config_err("system.f0.center_horizon must be positive"));
        }
        if self.drift.points < 2 || !(self.drift.horizon > 0.0) || !(self.drift.pad >= 0.0) {
            return Err(config_err("drift needs points >= 2, horizon > 0 and pad >= 0"));
        }
        if self.ldp_xs().is_empty() || self.ldp_xs().iter().any(|x| x.len() != d || x.iter().any(|v| !v.is_finite())) {
            return Err(config_err(format!("ldp.xs must be a nonempty list of length-{d} vectors")));
        }
        if let (SigmaSource::Given, None) = (self.ladder.sigma_source, &self.ladder.sigma) {
            return Err(config_err("ladder.sigma_source = \"given\" requires ladder.sigma"));
        }
        if let Some(m) = &self.ladder.sigma {
            if m.len() != d || m.iter().any(|r| r.len() != d) {
                return Err(config_err(format!("ladder.sigma must be {d}x{d}")));
            }
        }
        self.integrator.to_config().validate().map_err(CliError::from)?;
        self.sampler.to_sampler(0).validate().map_err(CliError::from)?;
        self.ladder_config().validate(d).map_err(CliError::from)?;
        self.build_system()?;
        Ok(())
    }

    pub fn ldp_xs(&self) -> Vec<Vec<f64>> {
        match &self.ldp.xs {
            Some(xs) => xs.clone(),
            None => (-2..=2).map(|k| vec![k as f64; self.system.d]).collect(),
        }
    }

    pub fn ell(&self) -> usize {
        match self.system.fast_flow {
            FastFlowConfig::Lorenz { .. } => 3,
            FastFlowConfig::LinearDecay { ell, .. } | FastFlowConfig::Zero { ell } => ell,
        }
    }

    pub fn trap_radius(&self) -> f64 {
        match self.system.fast_flow {
            FastFlowConfig::Lorenz { trap_radius, .. } => trap_radius,
            _ => f64::INFINITY,
        }
    }

    /// Builds the uncentered system at `system.eps`.
    pub fn build_system(&self) -> Result<FlowSystem, CliError> {
        let s = &self.system;
        let d = s.d;
        let g: Arc<dyn FastField> = match s.fast_flow {
            FastFlowConfig::Lorenz {
                sigma,
                rho,
                beta,
                trap_radius,
            } => {
                let p = LorenzParams {
                    sigma,
                    rho,
                    beta,
                    trap_radius,
                };
                p.validate()?;
                Arc::new(Lorenz(p))
            }
            FastFlowConfig::LinearDecay { ell, rate } => Arc::new(LinearDecay { dim: ell, rate }),
            FastFlowConfig::Zero { ell } => Arc::new(ZeroField { dim: ell }),
        };
        let f0: Arc<dyn Observable> = match s.f0.name {
            F0Kind::Default => Arc::new(DefaultF0::new(d)?),
            F0Kind::Projection => Arc::new(Projection { d }),
            F0Kind::Zero => Arc::new(ZeroObservable { dim: d }),
        };
        let (f, f_sup, lip): (Arc<dyn Coupling>, f64, f64) = match s.f {
            CouplingConfig::Benchmark { c, kappa } => {
                let b = Benchmark::new(d, BenchmarkParams { c, kappa })?;
                let (sup, lip) = (b.sup_bound(), b.lipschitz());
                (Arc::new(b), sup, lip)
            }
            CouplingConfig::TanhRelaxation { c } => (Arc::new(TanhRelaxation { d, c }), c.abs(), c.abs()),
            CouplingConfig::Zero => (Arc::new(ZeroCoupling { d }), 0.0, 0.0),
        };
        let f0_sup = match (s.f0.sup, s.f0.name) {
            (Some(v), _) => v,
            (None, F0Kind::Zero) => 0.0,
            (None, _) => self.trap_radius(),
        };
        let bounds = Bounds {
            f_sup,
            f0_sup,
            lip_f: lip,
        };
        Ok(FlowSystem::new(g, f0, f, s.eps, bounds)?)
    }

    pub fn ladder_config(&self) -> LadderConfig {
        let l = &self.ladder;
        LadderConfig {
            eps_ladder: l.eps_ladder.clone(),
            ensemble: l.ensemble,
            horizon: l.horizon,
            eval_times: l.eval_times.clone(),
            delta_exponent: l.delta_exponent,
            xi: l.xi.clone().unwrap_or_else(|| vec![0.0; self.system.d]),
            sde_step: l.sde_step,
            oracle_count: l.oracle_count,
            root_seed: self.root_seed,
        }
    }
}
