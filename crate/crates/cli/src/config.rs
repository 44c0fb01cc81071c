//! Experiment configuration: one JSON document with a section per command.
//! Missing keys take their defaults; `--set a.b=value` overrides single keys.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use burgers_core::{GridSpec, WeightSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub grid: GridConfig,
    pub seed: u64,
    pub profile: ProfileConfig,
    pub spectrum: SpectrumConfig,
    pub growth: GrowthConfig,
    pub evolve: EvolveConfig,
    pub verify: VerifyConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_r: usize,
    pub n_max: usize,
    pub r_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { n_r: 64, n_max: 8, r_max: 20.0 }
    }
}

impl GridConfig {
    pub fn spec(&self) -> GridSpec {
        GridSpec { n_r: self.n_r, n_max: self.n_max, r_max: self.r_max }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileConfig {
    /// Largest sampled radius.
    pub radius: f64,
    pub samples: usize,
}

impl Default for ProfileConfig {
    fn default() -> Self {
        ProfileConfig { radius: 10.0, samples: 201 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumConfig {
    pub alphas: Vec<f64>,
    pub weight: String,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig { alphas: vec![0.0, 1.0, 10.0, 100.0], weight: "inf".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrowthConfig {
    pub alphas: Vec<f64>,
    pub k0s: Vec<f64>,
    pub t_end: f64,
    pub dt_out: f64,
    pub weight: String,
    pub tol: f64,
    pub mean_zero: bool,
}

impl Default for GrowthConfig {
    fn default() -> Self {
        GrowthConfig {
            alphas: vec![0.0, 10.0, 100.0],
            k0s: vec![1.0],
            t_end: 40.0,
            dt_out: 0.5,
            weight: "inf".into(),
            tol: 1e-9,
            mean_zero: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvolveModel {
    Linear2d,
    Stretched,
    Nonlinear2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolveConfig {
    pub model: EvolveModel,
    pub alpha: f64,
    pub k0: f64,
    pub t_end: f64,
    pub dt: f64,
    pub dt_out: f64,
    pub weight: String,
    /// `L^2(inf)` norm of the initial perturbation.
    pub amplitude: f64,
    /// Largest Hermite order in the random initial data.
    pub order: usize,
    /// Window of the reported rate fit; empty for none.
    pub fit_window: Vec<f64>,
    pub snapshots: Vec<f64>,
}

impl Default for EvolveConfig {
    fn default() -> Self {
        EvolveConfig {
            model: EvolveModel::Nonlinear2d,
            alpha: 1.0,
            k0: 0.0,
            t_end: 12.0,
            dt: 0.01,
            dt_out: 0.1,
            weight: "inf".into(),
            amplitude: 1e-3,
            order: 4,
            fit_window: vec![5.0, 12.0],
            snapshots: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Criterion numbers to run; empty runs all.
    pub criteria: Vec<u8>,
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s).context("parsing configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Applies `key=value` overrides; `value` is read as JSON, else as a string.
    pub fn with_overrides<S: AsRef<str>>(&self, sets: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self)?;
        for s in sets {
            let s = s.as_ref();
            let (key, raw) = s.split_once('=').ok_or_else(|| anyhow!("override {s:?} is not key=value"))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        let cfg: ExperimentConfig = serde_json::from_value(doc).context("applying overrides")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                bail!("{name} must be positive, got {v}")
            }
        };
        positive("grid.r_max", self.grid.r_max)?;
        positive("profile.radius", self.profile.radius)?;
        positive("growth.t_end", self.growth.t_end)?;
        positive("growth.dt_out", self.growth.dt_out)?;
        positive("growth.tol", self.growth.tol)?;
        positive("evolve.t_end", self.evolve.t_end)?;
        positive("evolve.dt", self.evolve.dt)?;
        positive("evolve.dt_out", self.evolve.dt_out)?;
        positive("evolve.amplitude", self.evolve.amplitude)?;
        if self.profile.samples < 2 {
            bail!("profile.samples must be at least 2");
        }
        for w in [&self.spectrum.weight, &self.growth.weight, &self.evolve.weight] {
            WeightSpec::parse(w)?;
        }
        if !self.evolve.fit_window.is_empty() && self.evolve.fit_window.len() != 2 {
            bail!("evolve.fit_window must be empty or [t_a, t_b]");
        }
        if let Some(c) = self.verify.criteria.iter().find(|c| !(1..=12).contains(*c)) {
            bail!("verify.criteria: no criterion {c}");
        }
        Ok(())
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = node
            .as_object_mut()
            .ok_or_else(|| anyhow!("{key}: {} is not a section", parts[..i].join(".")))?;
        if !map.contains_key(*part) {
            bail!("unknown configuration key {key}");
        }
        if i + 1 == parts.len() {
            // string-typed keys keep the raw text, so `weight=4` stays "4"
            let value = match (&map[*part], value) {
                (Value::String(_), v @ Value::Number(_)) => Value::String(v.to_string()),
                (_, v) => v,
            };
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.get_mut(*part).expect("checked above");
    }
    bail!("empty configuration key")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn partial_documents_take_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"seed": 9, "grid": {"n_r": 32}}"#).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.grid.n_r, 32);
        assert_eq!(cfg.grid.n_max, 8);
        assert!(ExperimentConfig::from_json(r#"{"sede": 9}"#).is_err());
    }

    #[test]
    fn dotted_overrides() {
        let cfg = ExperimentConfig::default()
            .with_overrides(&["grid.n_max=4", "evolve.model=stretched", "growth.alphas=[1, 2]", "evolve.weight=4"])
            .unwrap();
        assert_eq!(cfg.grid.n_max, 4);
        assert_eq!(cfg.evolve.model, EvolveModel::Stretched);
        assert_eq!(cfg.growth.alphas, vec![1.0, 2.0]);
        assert_eq!(cfg.evolve.weight, "4");
        assert!(ExperimentConfig::default().with_overrides(&["grid.nr=4"]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["seed.x=4"]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["evolve.dt=-1"]).is_err());
        assert!(ExperimentConfig::default().with_overrides(&["evolve.weight=0.5"]).is_err());
    }
}
