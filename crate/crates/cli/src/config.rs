//! Experiment specification, loaded from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use encludl::datagen::ScenarioConfig;
use encludl::dlasso::InferenceConfig;
use encludl::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "cludl")]
    Cludl,
    #[serde(rename = "dlasso-full")]
    DlassoFull,
    #[serde(rename = "encludl")]
    Encludl,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Cludl => "cludl",
            Method::DlassoFull => "dlasso-full",
            Method::Encludl => "encludl",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cludl" => Ok(Method::Cludl),
            "dlasso-full" => Ok(Method::DlassoFull),
            "encludl" => Ok(Method::Encludl),
            other => Err(Error::Config(format!(
                "unknown method {other:?} (expected cludl, dlasso-full or encludl)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    SigmaEps,
    N,
    Rho,
    H,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::SigmaEps => "sigma_eps",
            SweepParameter::N => "n",
            SweepParameter::Rho => "rho",
            SweepParameter::H => "h",
        }
    }

    /// Copy of `base` with this parameter set to `value`.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut s = base.clone();
        let as_count = |v: f64| -> Result<usize> {
            if v >= 1.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(Error::Config(format!("{} must be a positive integer, got {v}", self.name())))
            }
        };
        match self {
            SweepParameter::SigmaEps => s.sigma_eps = value,
            SweepParameter::N => s.n_samples = as_count(value)?,
            SweepParameter::Rho => s.rho = value,
            SweepParameter::H => s.region_width = as_count(value)?,
        }
        s.validate()?;
        Ok(s)
    }
}

impl FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigma_eps" => Ok(SweepParameter::SigmaEps),
            "n" => Ok(SweepParameter::N),
            "rho" => Ok(SweepParameter::Rho),
            "h" => Ok(SweepParameter::H),
            other => Err(Error::Config(format!(
                "unknown sweep parameter {other:?} (expected sigma_eps, n, rho or h)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: ScenarioConfig,
    pub methods: Vec<Method>,
    #[serde(rename = "C_grid")]
    pub c_grid: Vec<usize>,
    pub alpha: f64,
    pub n_seeds: usize,
    /// Master seed; repetition seeds are derived from it.
    pub seed: u64,
    #[serde(rename = "B")]
    pub n_bootstraps: usize,
    pub gamma: f64,
    pub subsample_fraction: f64,
    pub inference: InferenceConfig,
    pub sweep: Option<Sweep>,
    pub output_dir: PathBuf,
    /// Worker threads; all available cores when unset.
    pub workers: Option<usize>,
    pub keep_pvalues: bool,
    /// Record wall-clock times in the summary. Disable for byte-stable output.
    pub timing: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            methods: vec![Method::Encludl],
            c_grid: vec![200],
            alpha: 0.1,
            n_seeds: 100,
            seed: 0,
            n_bootstraps: 25,
            gamma: 0.5,
            subsample_fraction: encludl::cluster::DEFAULT_SUBSAMPLE_FRACTION,
            inference: InferenceConfig::default(),
            sweep: None,
            output_dir: PathBuf::from("out"),
            workers: None,
            keep_pvalues: false,
            timing: true,
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.inference.validate()?;
        if self.methods.is_empty() {
            return Err(Error::Config("no methods selected".into()));
        }
        let mut sorted = self.methods.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.methods.len() {
            return Err(Error::Config("methods listed more than once".into()));
        }
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.n_bootstraps == 0 {
            return Err(Error::Config("B must be at least 1".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "subsample_fraction must lie in (0, 1], got {}",
                self.subsample_fraction
            )));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        let clustered = self.methods.iter().any(|m| *m != Method::DlassoFull);
        if clustered {
            let p = self.scenario.edge * self.scenario.edge;
            if self.c_grid.is_empty() {
                return Err(Error::Config("C_grid is empty".into()));
            }
            if let Some(bad) = self.c_grid.iter().find(|&&c| c < 2 || c > p) {
                return Err(Error::Config(format!("cluster count {bad} outside [2, {p}]")));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep has no values".into()));
            }
            for &v in &sweep.values {
                sweep.parameter.apply(&self.scenario, v)?;
            }
        }
        Ok(())
    }

    /// SHA-256 over the settings that determine the numerical results.
    pub fn config_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        canonical.workers = None;
        canonical.keep_pvalues = false;
        canonical.timing = false;
        let text = serde_json::to_string(&canonical).expect("spec serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
