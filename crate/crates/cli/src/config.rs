//! Project configuration files and the bundled presets.
//!
//! The grammar is documented in `CONFIG.md` at the crate root.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ccm_core::poly::{PolyError, Polynomial};
use ccm_core::sim::{limit_cycle_state, Integrator, SimConfig};
use ccm_core::synth::{ModelSpec, SynthParams, SystemModel};
use nalgebra::DVector;
use serde::Deserialize;
use toml::Spanned;

pub const PRESETS: [(&str, &str); 3] = [
    ("mg-slow", include_str!("../presets/mg-slow.toml")),
    ("mg-medium", include_str!("../presets/mg-medium.toml")),
    ("mg-fast", include_str!("../presets/mg-fast.toml")),
];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub model: ModelSection,
    pub controller: RoleSection,
    pub observer: RoleSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub states: Vec<String>,
    pub f: Vec<Spanned<String>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleSection {
    pub lambda: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    #[serde(default = "default_rho_degree")]
    pub rho_degree: u32,
}

fn default_rho_degree() -> u32 {
    2
}

impl RoleSection {
    pub fn params(&self) -> SynthParams {
        SynthParams { rho_degree: self.rho_degree, ..SynthParams::new(self.lambda, self.alpha1, self.alpha2) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntegratorName {
    Rk4,
    Rk45,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Point(Vec<f64>),
    Named(String),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    pub integrator: IntegratorName,
    pub rtol: f64,
    pub atol: f64,
    pub noise_std: f64,
    pub seed: u64,
    pub x0: InitialState,
    pub xhat0: Option<Vec<f64>>,
    /// open-loop settling time used by `x0 = "limit-cycle"`
    pub settle: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            dt: 1e-3,
            horizon: 60.0,
            integrator: IntegratorName::Rk4,
            rtol: 1e-9,
            atol: 1e-9,
            noise_std: 0.0,
            seed: 0,
            x0: InitialState::Named("limit-cycle".into()),
            xhat0: None,
            settle: 30.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out") }
    }
}

/// A parsed configuration together with the text it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub source: String,
    pub config: ProjectConfig,
    pub model: SystemModel,
}

/// Reads `arg` as a file path, falling back to a bundled preset name.
pub fn load(arg: &str) -> Result<LoadedConfig> {
    let path = Path::new(arg);
    let (source, text) = if path.exists() {
        (arg.to_string(), std::fs::read_to_string(path).with_context(|| format!("reading {arg}"))?)
    } else if let Some((name, text)) = PRESETS.iter().find(|(name, _)| *name == arg) {
        (format!("preset {name}"), text.to_string())
    } else {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
        bail!("{arg}: no such file, and not a preset (available: {})", names.join(", "));
    };
    parse(&source, &text)
}

pub fn parse(source: &str, text: &str) -> Result<LoadedConfig> {
    let config: ProjectConfig = toml::from_str(text).map_err(|e| anyhow!("{source}: {e}"))?;
    let model = build_model(source, text, &config.model)?;
    Ok(LoadedConfig { source: source.to_string(), config, model })
}

/// 1-based line and column of byte `offset` in `text`.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, col)
}

fn build_model(source: &str, text: &str, m: &ModelSection) -> Result<SystemModel> {
    if m.f.len() != m.states.len() {
        bail!("{source}: model has {} states but {} vector field entries", m.states.len(), m.f.len());
    }
    for entry in &m.f {
        if let Err(PolyError::Parse { column, message }) = Polynomial::parse(entry.get_ref(), &m.states) {
            // the span covers the opening quote, so the string body starts one byte later
            let start = entry.span().start + 1;
            let offset = entry.get_ref().char_indices().nth(column - 1).map_or(entry.get_ref().len(), |(i, _)| i);
            let (line, col) = line_col(text, start + offset);
            bail!("{source}:{line}:{col}: polynomial error: {message}");
        }
    }
    let spec = ModelSpec {
        names: m.states.clone(),
        f: m.f.iter().map(|s| s.get_ref().clone()).collect(),
        b: m.b.clone(),
        c: m.c.clone(),
    };
    spec.build().map_err(|e| anyhow!("{source}: model: {e}"))
}

impl LoadedConfig {
    /// Simulation settings with optional command-line overrides.
    pub fn sim_config(&self, noise: Option<f64>, seed: Option<u64>) -> Result<SimConfig> {
        let s = &self.config.sim;
        let n = self.model.n();
        let x0 = match &s.x0 {
            InitialState::Point(v) if v.len() == n => DVector::from_vec(v.clone()),
            InitialState::Point(v) => bail!("{}: sim.x0 has {} entries for a {n}-state model", self.source, v.len()),
            InitialState::Named(name) if name == "limit-cycle" => limit_cycle_state(&self.model, s.settle, s.dt)?,
            InitialState::Named(name) => bail!("{}: sim.x0 = {name:?}; expected a list or \"limit-cycle\"", self.source),
        };
        let xhat0 = match &s.xhat0 {
            None => DVector::zeros(n),
            Some(v) if v.len() == n => DVector::from_vec(v.clone()),
            Some(v) => bail!("{}: sim.xhat0 has {} entries for a {n}-state model", self.source, v.len()),
        };
        let mut cfg = SimConfig::new(x0, xhat0, s.horizon);
        cfg.dt = s.dt;
        cfg.integrator = match s.integrator {
            IntegratorName::Rk4 => Integrator::Rk4,
            IntegratorName::Rk45 => Integrator::Rk45 { rtol: s.rtol, atol: s.atol },
        };
        cfg.noise_std = noise.unwrap_or(s.noise_std);
        cfg.seed = seed.unwrap_or(s.seed);
        Ok(cfg)
    }
}
