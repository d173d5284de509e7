//! Run configuration shared by every subcommand.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stfm::design::ORDER;
use stfm::model::{sha256_hex, PriorConfig};
use stfm::predict::PredictionTarget;
use stfm::sampler::{FitSettings, McmcConfig};
use stfm::selection::GridOptions;
use stfm::simulate::SimConfig;
use stfm::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisCounts {
    pub k_mu: usize,
    pub k_zeta: usize,
    pub k_gamma: usize,
}

impl Default for BasisCounts {
    fn default() -> Self {
        Self {
            k_mu: 9,
            k_zeta: 5,
            k_gamma: 7,
        }
    }
}

impl BasisCounts {
    pub fn tuple(self) -> (usize, usize, usize) {
        (self.k_mu, self.k_zeta, self.k_gamma)
    }

    fn validate(self) -> Result<()> {
        for k in [self.k_mu, self.k_zeta, self.k_gamma] {
            if k < ORDER {
                return Err(Error::InvalidOrder(k));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSetting {
    pub label: String,
    pub priors: PriorConfig,
}

/// Inputs of the `study` subcommand. Chains use the top-level `mcmc`,
/// `priors`, `kappa_grid` and `level`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    pub replicates: usize,
    pub sim: SimConfig,
    pub prior_grid: Vec<PriorSetting>,
    pub n_grid: Vec<usize>,
    pub tau_grid: Vec<usize>,
    pub j_grid: Vec<Vec<usize>>,
    pub true_kappas: Vec<f64>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self {
            replicates: 20,
            sim: SimConfig::default(),
            prior_grid: Vec::new(),
            n_grid: Vec::new(),
            tau_grid: Vec::new(),
            j_grid: Vec::new(),
            true_kappas: vec![0.2, 2.0],
        }
    }
}

fn default_kappa() -> f64 {
    0.2
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Input CSV for `fit`, `select` and `predict`.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    /// Parse the time column as month names (Oct..Mar → 1..6).
    #[serde(default)]
    pub month_names: bool,
    #[serde(default)]
    pub basis: BasisCounts,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub kappa_grid: Vec<f64>,
    #[serde(default)]
    pub basis_grid: Vec<BasisCounts>,
    #[serde(default)]
    pub priors: PriorConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
    /// Overrides every seed in the file when present.
    #[serde(default)]
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub selection: GridOptions,
    #[serde(default = "default_level")]
    pub level: f64,
    #[serde(default)]
    pub targets: Vec<PredictionTarget>,
    #[serde(default)]
    pub simulate: Option<SimConfig>,
    #[serde(default)]
    pub study: Option<StudySection>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("config file: {e}")))
    }

    /// Reads `path`, applies `seed` and validates.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if seed.is_some() {
            cfg.seed = seed;
        }
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_seed(&mut self) {
        if let Some(s) = self.seed {
            self.mcmc.seed = s;
            if let Some(sim) = &mut self.simulate {
                sim.seed = s;
            }
            if let Some(st) = &mut self.study {
                st.sim.seed = s;
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        for b in &self.basis_grid {
            b.validate()?;
        }
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::Config(format!(
                "kappa must be > 0, got {}",
                self.kappa
            )));
        }
        if let Some(k) = self
            .kappa_grid
            .iter()
            .find(|k| !(**k > 0.0 && k.is_finite()))
        {
            return Err(Error::Config(format!("kappa grid value {k} must be > 0")));
        }
        self.priors.validate(self.basis.k_mu.pow(3))?;
        self.mcmc.validate()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config("level must lie in (0, 1)".into()));
        }
        for m in [self.fit.spatial_margin, self.fit.time_margin] {
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::Config("margins must be >= 0".into()));
            }
        }
        if let Some(sim) = &self.simulate {
            sim.validate()?;
        }
        if let Some(st) = &self.study {
            st.sim.validate()?;
            if st.replicates == 0 {
                return Err(Error::Config("study needs at least one replicate".into()));
            }
        }
        Ok(())
    }

    /// Stable hash of the resolved configuration.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_string(self).expect("plain data serialises");
        sha256_hex(canonical.as_bytes())
    }

    pub fn require_dataset(&self) -> Result<&Path> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::Config("config has no dataset path".into()))
    }

    /// Candidate smoothness values for `select`: `kappa_grid`, or `kappa`.
    pub fn kappas(&self) -> Vec<f64> {
        if self.kappa_grid.is_empty() {
            vec![self.kappa]
        } else {
            self.kappa_grid.clone()
        }
    }

    pub fn bases(&self) -> Vec<(usize, usize, usize)> {
        if self.basis_grid.is_empty() {
            vec![self.basis.tuple()]
        } else {
            self.basis_grid.iter().map(|b| b.tuple()).collect()
        }
    }
}
