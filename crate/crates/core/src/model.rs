//! Observations, parameter state, priors and the conditional likelihood
//!
//! `Y_ij = M β + P Θ⁽ⁱ⁾ + N ϑ⁽ⁱ⁾ + ε_ij`, `ε_ij ~ N(0, ω² Σ_S ⊗ Σ_T)`,
//! independently over blocks `i` and repetitions `j`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::{
    build_error_cov, DistanceMetric, KroneckerCov, MaternParams, TemporalParams,
};
use crate::design::DesignSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub station_id: String,
    pub lat: f64,
    pub lon: f64,
}

/// Complete, balanced observations: every (block, rep, location, time) cell
/// is present. `y` is ordered (block, rep, location, time), time fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub reps: Vec<usize>,
    pub locations: Vec<Location>,
    pub times: Vec<f64>,
    pub y: Vec<f64>,
}

impl Dataset {
    pub fn new(
        reps: Vec<usize>,
        locations: Vec<Location>,
        times: Vec<f64>,
        y: Vec<f64>,
    ) -> Result<Self> {
        if reps.is_empty() {
            return Err(Error::Config("dataset needs at least one block".into()));
        }
        if let Some(i) = reps.iter().position(|&j| j == 0) {
            return Err(Error::Config(format!("block {} has no repetitions", i + 1)));
        }
        if locations.is_empty() || times.is_empty() {
            return Err(Error::Config("dataset needs locations and times".into()));
        }
        let expected = reps.iter().sum::<usize>() * locations.len() * times.len();
        if y.len() != expected {
            return Err(Error::Dimension(format!(
                "expected {expected} observations, got {}",
                y.len()
            )));
        }
        if let Some(k) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::Ingest(format!(
                "non-finite observation at position {k}"
            )));
        }
        for (a, la) in locations.iter().enumerate() {
            if !(la.lat.is_finite() && la.lon.is_finite()) {
                return Err(Error::Ingest(format!(
                    "non-finite coordinates for {}",
                    la.station_id
                )));
            }
            for lb in &locations[a + 1..] {
                if la.lat == lb.lat && la.lon == lb.lon {
                    return Err(Error::Ingest(format!(
                        "stations {} and {} share coordinates",
                        la.station_id, lb.station_id
                    )));
                }
            }
        }
        Ok(Self {
            reps,
            locations,
            times,
            y,
        })
    }

    pub fn n_blocks(&self) -> usize {
        self.reps.len()
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn total_reps(&self) -> usize {
        self.reps.iter().sum()
    }

    pub fn lats(&self) -> Vec<f64> {
        self.locations.iter().map(|l| l.lat).collect()
    }

    pub fn lons(&self) -> Vec<f64> {
        self.locations.iter().map(|l| l.lon).collect()
    }

    pub fn coords(&self) -> Vec<(f64, f64)> {
        self.locations.iter().map(|l| (l.lat, l.lon)).collect()
    }

    /// Index of the first observation of slice `(i, j)` in `y`.
    fn slice_offset(&self, i: usize, j: usize) -> usize {
        let before: usize = self.reps[..i].iter().sum();
        (before + j) * self.n_locations() * self.n_times()
    }

    /// Observations of block `i`, rep `j` as an `n × τ` matrix.
    pub fn slice(&self, i: usize, j: usize) -> DMatrix<f64> {
        let (n, tau) = (self.n_locations(), self.n_times());
        let off = self.slice_offset(i, j);
        DMatrix::from_row_slice(n, tau, &self.y[off..off + n * tau])
    }

    /// `(block, rep)` pairs in storage order.
    pub fn slice_ids(&self) -> Vec<(usize, usize)> {
        self.reps
            .iter()
            .enumerate()
            .flat_map(|(i, &j)| (0..j).map(move |jj| (i, jj)))
            .collect()
    }

    pub fn variance(&self) -> f64 {
        let m = self.y.len() as f64;
        let mean = self.y.iter().sum::<f64>() / m;
        self.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0)
    }

    /// SHA-256 over the layout, coordinates and observation bits.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for &j in &self.reps {
            h.update((j as u64).to_le_bytes());
        }
        for l in &self.locations {
            h.update(l.station_id.as_bytes());
            h.update(l.lat.to_le_bytes());
            h.update(l.lon.to_le_bytes());
        }
        for t in &self.times {
            h.update(t.to_le_bytes());
        }
        for v in &self.y {
            h.update(v.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Lower-case hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamState {
    pub beta: DVector<f64>,
    pub theta: Vec<DVector<f64>>,
    pub vartheta: Vec<DVector<f64>>,
    pub sigma2_theta: Vec<f64>,
    pub sigma2_vartheta: Vec<f64>,
    pub omega2: f64,
    pub phi: f64,
    pub varphi: f64,
    pub kappa: f64,
}

impl ParamState {
    /// All coefficients zero, unit variances.
    pub fn zeros(designs: &DesignSet, n_blocks: usize, kappa: f64) -> Self {
        let spec = &designs.spec;
        Self {
            beta: DVector::zeros(spec.beta_len()),
            theta: vec![DVector::zeros(spec.theta_len()); n_blocks],
            vartheta: vec![DVector::zeros(spec.vartheta_len()); n_blocks],
            sigma2_theta: vec![1.0; n_blocks],
            sigma2_vartheta: vec![1.0; n_blocks],
            omega2: 1.0,
            phi: 1.0,
            varphi: 1.0,
            kappa,
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.theta.len()
    }

    pub fn matern(&self) -> Result<MaternParams> {
        MaternParams::new(self.kappa, self.phi)
    }

    pub fn temporal(&self) -> Result<TemporalParams> {
        TemporalParams::new(self.varphi)
    }

    /// Checks dimensions against `designs` and positivity of every variance
    /// and range component.
    pub fn validate(&self, designs: &DesignSet, n_blocks: usize) -> Result<()> {
        let spec = &designs.spec;
        if self.beta.len() != spec.beta_len() {
            return Err(Error::Dimension(format!(
                "beta has length {}, expected {}",
                self.beta.len(),
                spec.beta_len()
            )));
        }
        for (name, v, k) in [
            ("theta", &self.theta, spec.theta_len()),
            ("vartheta", &self.vartheta, spec.vartheta_len()),
        ] {
            if v.len() != n_blocks || v.iter().any(|x| x.len() != k) {
                return Err(Error::Dimension(format!(
                    "{name} needs {n_blocks} vectors of length {k}"
                )));
            }
        }
        if self.sigma2_theta.len() != n_blocks || self.sigma2_vartheta.len() != n_blocks {
            return Err(Error::Dimension("one variance per block required".into()));
        }
        let positives = self
            .sigma2_theta
            .iter()
            .chain(&self.sigma2_vartheta)
            .chain([&self.omega2, &self.phi, &self.varphi, &self.kappa]);
        for &p in positives {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Domain(format!(
                    "variance and range components must be positive, got {p}"
                )));
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().all(|v| v.is_finite())
            && self.theta.iter().flatten().all(|v| v.is_finite())
            && self.vartheta.iter().flatten().all(|v| v.is_finite())
            && self
                .sigma2_theta
                .iter()
                .chain(&self.sigma2_vartheta)
                .chain([&self.omega2, &self.phi, &self.varphi])
                .all(|v| v.is_finite() && *v > 0.0)
    }
}

/// Prior on a variance component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum VariancePrior {
    /// Density ∝ x^{-a-1} e^{-b/x}.
    InverseGamma { a: f64, b: f64 },
    /// Scaled inverse chi-square with `v` degrees of freedom and scale `s2`.
    ScaledInvChiSq { v: f64, s2: f64 },
}

impl VariancePrior {
    /// Equivalent inverse-gamma `(shape, rate)`.
    pub fn as_inverse_gamma(&self) -> (f64, f64) {
        match *self {
            VariancePrior::InverseGamma { a, b } => (a, b),
            VariancePrior::ScaledInvChiSq { v, s2 } => (v / 2.0, v * s2 / 2.0),
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let (a, b) = self.as_inverse_gamma();
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::Config(format!(
                "{name} prior hyperparameters must be > 0"
            )));
        }
        Ok(())
    }
}

impl Default for VariancePrior {
    fn default() -> Self {
        VariancePrior::InverseGamma { a: 0.01, b: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl GammaPrior {
    fn validate(&self, name: &str) -> Result<()> {
        if !(self.shape > 0.0
            && self.scale > 0.0
            && self.shape.is_finite()
            && self.scale.is_finite())
        {
            return Err(Error::Config(format!(
                "{name} prior shape and scale must be > 0"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    /// Prior mean of β; `None` means zero.
    pub beta_mean: Option<Vec<f64>>,
    pub beta_var: f64,
    pub sigma2_theta: VariancePrior,
    pub sigma2_vartheta: VariancePrior,
    pub omega2: VariancePrior,
    pub phi: GammaPrior,
    pub varphi: GammaPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            beta_mean: None,
            beta_var: 1e3,
            sigma2_theta: VariancePrior::default(),
            sigma2_vartheta: VariancePrior::default(),
            omega2: VariancePrior::default(),
            phi: GammaPrior {
                shape: 1.0,
                scale: 1000.0,
            },
            varphi: GammaPrior {
                shape: 1.0,
                scale: 100.0,
            },
        }
    }
}

impl PriorConfig {
    pub fn validate(&self, beta_len: usize) -> Result<()> {
        if !(self.beta_var > 0.0 && self.beta_var.is_finite()) {
            return Err(Error::Config("beta prior variance must be > 0".into()));
        }
        if let Some(m) = &self.beta_mean {
            if m.len() != beta_len {
                return Err(Error::Config(format!(
                    "beta prior mean has length {}, expected {beta_len}",
                    m.len()
                )));
            }
        }
        self.sigma2_theta.validate("sigma2_theta")?;
        self.sigma2_vartheta.validate("sigma2_vartheta")?;
        self.omega2.validate("omega2")?;
        self.phi.validate("phi")?;
        self.varphi.validate("varphi")
    }

    pub fn beta_mean_vec(&self, beta_len: usize) -> DVector<f64> {
        match &self.beta_mean {
            Some(m) => DVector::from_column_slice(m),
            None => DVector::zeros(beta_len),
        }
    }
}

/// Which part of the data a residual covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    Block(usize),
    Slice(usize, usize),
}

fn check_dims(ds: &Dataset, designs: &DesignSet, st: &ParamState) -> Result<()> {
    if designs.n_locations != ds.n_locations() || designs.n_times != ds.n_times() {
        return Err(Error::Dimension(format!(
            "design is {}×{}, dataset is {}×{}",
            designs.n_locations,
            designs.n_times,
            ds.n_locations(),
            ds.n_times()
        )));
    }
    st.validate(designs, ds.n_blocks())
}

/// Fitted surface `Mβ + PΘ⁽ⁱ⁾ + Nϑ⁽ⁱ⁾` for block `i` as an `n × τ` matrix.
pub fn block_fit(designs: &DesignSet, st: &ParamState, i: usize) -> DMatrix<f64> {
    let mut f = designs.mean_surface(&st.beta);
    let s = designs.spatial_effect(&st.theta[i]);
    let t = designs.temporal_effect(&st.vartheta[i]);
    for r in 0..f.nrows() {
        for c in 0..f.ncols() {
            f[(r, c)] += s[r] + t[c];
        }
    }
    f
}

/// `n × τ` residual matrices for every slice in the scope, in storage order.
pub fn residual_slices(
    ds: &Dataset,
    designs: &DesignSet,
    st: &ParamState,
    scope: Scope,
) -> Result<Vec<DMatrix<f64>>> {
    check_dims(ds, designs, st)?;
    let ids: Vec<(usize, usize)> = match scope {
        Scope::All => ds.slice_ids(),
        Scope::Block(i) => {
            if i >= ds.n_blocks() {
                return Err(Error::Domain(format!("block {i} out of range")));
            }
            (0..ds.reps[i]).map(|j| (i, j)).collect()
        }
        Scope::Slice(i, j) => {
            if i >= ds.n_blocks() || j >= ds.reps[i] {
                return Err(Error::Domain(format!("slice ({i}, {j}) out of range")));
            }
            vec![(i, j)]
        }
    };
    let mut fits: Vec<Option<DMatrix<f64>>> = vec![None; ds.n_blocks()];
    Ok(ids
        .into_iter()
        .map(|(i, j)| {
            let fit = fits[i].get_or_insert_with(|| block_fit(designs, st, i));
            ds.slice(i, j) - &*fit
        })
        .collect())
}

/// `y − Xβ − QΘ − Rϑ` over the scope, flattened in (block, rep, location,
/// time) order.
pub fn residual(
    ds: &Dataset,
    designs: &DesignSet,
    st: &ParamState,
    scope: Scope,
) -> Result<DVector<f64>> {
    let slices = residual_slices(ds, designs, st, scope)?;
    let mut out = Vec::with_capacity(slices.iter().map(|s| s.len()).sum());
    for s in &slices {
        out.extend(s.transpose().iter());
    }
    Ok(DVector::from_vec(out))
}

/// Error covariance for the current state.
pub fn state_cov(ds: &Dataset, st: &ParamState, metric: DistanceMetric) -> Result<KroneckerCov> {
    build_error_cov(
        &ds.coords(),
        &ds.times,
        st.omega2,
        &st.matern()?,
        &st.temporal()?,
        metric,
    )
}

/// Per-slice Gaussian log-likelihood given a prebuilt covariance, in
/// storage order.
pub fn slice_logliks_with(
    ds: &Dataset,
    designs: &DesignSet,
    st: &ParamState,
    cov: &KroneckerCov,
) -> Result<Vec<f64>> {
    let res = residual_slices(ds, designs, st, Scope::All)?;
    Ok(res.iter().map(|r| cov.log_density(r)).collect())
}

pub fn slice_logliks(
    ds: &Dataset,
    designs: &DesignSet,
    st: &ParamState,
    metric: DistanceMetric,
) -> Result<Vec<f64>> {
    let cov = state_cov(ds, st, metric)?;
    slice_logliks_with(ds, designs, st, &cov)
}

/// Σᵢ Σⱼ log N(y_ij | Mβ + PΘ⁽ⁱ⁾ + Nϑ⁽ⁱ⁾, ω² Σ_S ⊗ Σ_T).
pub fn conditional_loglik(
    ds: &Dataset,
    designs: &DesignSet,
    st: &ParamState,
    metric: DistanceMetric,
) -> Result<f64> {
    Ok(slice_logliks(ds, designs, st, metric)?.iter().sum())
}
