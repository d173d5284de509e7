//! Correlation kernels and the separable error covariance
//! `Σ_ε = ω² Σ_S(κ, φ) ⊗ Σ_T(varphi)`.
//!
//! [`KroneckerCov`] never forms the `nτ × nτ` matrix for solves: with a
//! residual laid out as an `n × τ` matrix `R` (rows = locations),
//! `(S ⊗ T)⁻¹ vec(R) = vec(S⁻¹ R T⁻¹)`.

pub mod bessel;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::design::DesignSet;
use crate::error::{Error, Result};
use crate::model::ParamState;

pub use bessel::{bessel_k, bessel_k_scaled, ln_bessel_k};

/// Default smoothness grid for model selection.
pub const DEFAULT_KAPPA_GRID: [f64; 8] = [0.2, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5];

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub kappa: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemporalParams {
    pub varphi: f64,
}

impl MaternParams {
    pub fn new(kappa: f64, phi: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Config(format!(
                "Matérn smoothness must be > 0, got {kappa}"
            )));
        }
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::Config(format!(
                "Matérn range must be > 0, got {phi}"
            )));
        }
        Ok(Self { kappa, phi })
    }
}

impl TemporalParams {
    pub fn new(varphi: f64) -> Result<Self> {
        if !(varphi > 0.0 && varphi.is_finite()) {
            return Err(Error::Config(format!(
                "temporal range must be > 0, got {varphi}"
            )));
        }
        Ok(Self { varphi })
    }
}

/// Matérn correlation `{2^{κ-1} Γ(κ)}⁻¹ (d/φ)^κ K_κ(d/φ)`, exactly 1 at `d = 0`.
pub fn matern_corr(d: f64, p: &MaternParams) -> f64 {
    if d <= 0.0 {
        return 1.0;
    }
    let x = d / p.phi;
    if !x.is_finite() {
        return 0.0;
    }
    let kappa = p.kappa;
    // x > 0 and finite, so the scaled Bessel value exists.
    let ks = bessel_k_scaled(kappa, x).expect("x > 0");
    let ln_rho =
        kappa * x.ln() + ks.ln() - x - (kappa - 1.0) * std::f64::consts::LN_2 - ln_gamma(kappa);
    ln_rho.exp().min(1.0)
}

/// Exponential correlation `exp(-|dt| / varphi)`.
pub fn temporal_corr(dt: f64, p: &TemporalParams) -> f64 {
    (-dt.abs() / p.varphi).exp()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Euclidean distance on (lat, lon) in decimal degrees.
    #[default]
    Euclidean,
    /// Great-circle distance in kilometres.
    Haversine,
}

impl DistanceMetric {
    pub fn distance(&self, a: (f64, f64), b: (f64, f64)) -> f64 {
        match self {
            DistanceMetric::Euclidean => ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt(),
            DistanceMetric::Haversine => {
                const EARTH_RADIUS_KM: f64 = 6371.0;
                let (la1, lo1) = (a.0.to_radians(), a.1.to_radians());
                let (la2, lo2) = (b.0.to_radians(), b.1.to_radians());
                let h = ((la2 - la1) / 2.0).sin().powi(2)
                    + la1.cos() * la2.cos() * ((lo2 - lo1) / 2.0).sin().powi(2);
                2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
            }
        }
    }

    pub fn matrix(&self, coords: &[(f64, f64)]) -> DMatrix<f64> {
        let n = coords.len();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = self.distance(coords[i], coords[j]);
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        d
    }
}

/// Spatial correlation matrix from a precomputed distance matrix.
pub fn matern_matrix(dist: &DMatrix<f64>, p: &MaternParams) -> DMatrix<f64> {
    let n = dist.nrows();
    let mut s = DMatrix::identity(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = matern_corr(dist[(i, j)], p);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    s
}

pub fn temporal_matrix(times: &[f64], p: &TemporalParams) -> DMatrix<f64> {
    let tau = times.len();
    DMatrix::from_fn(tau, tau, |a, b| temporal_corr(times[a] - times[b], p))
}

/// Cholesky factor with the diagonal jitter (absolute) that was needed.
#[derive(Debug, Clone)]
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    pub jitter: f64,
}

impl Factor {
    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn logdet(&self) -> f64 {
        let l = self.chol.l_dirty();
        2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
    }
}

/// Cholesky with a jitter ladder: plain first, then `1e-10 · mean(diag)`
/// escalating by ×10 up to `1e-6 · mean(diag)`.
pub fn factor_with_jitter(a: &DMatrix<f64>) -> Result<Factor> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok(Factor { chol, jitter: 0.0 });
    }
    let n = a.nrows();
    let mean_diag = a.diagonal().mean();
    let mut rel = JITTER_START;
    while rel <= JITTER_MAX * (1.0 + 1e-9) {
        let jitter = rel * mean_diag;
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(b) {
            return Ok(Factor { chol, jitter });
        }
        rel *= 10.0;
    }
    let mut max_off: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                max_off = max_off.max(a[(i, j)].abs());
            }
        }
    }
    Err(Error::NotPositiveDefinite {
        size: n,
        jitter: JITTER_MAX * mean_diag,
        min_diag: a.diagonal().min(),
        max_offdiag: max_off,
    })
}

/// `ω² S ⊗ T` with cached Cholesky factors of `S` and `T`.
#[derive(Debug, Clone)]
pub struct KroneckerCov {
    pub omega2: f64,
    pub s: DMatrix<f64>,
    pub t: DMatrix<f64>,
    pub chol_s: Factor,
    pub chol_t: Factor,
}

impl KroneckerCov {
    pub fn new(omega2: f64, s: DMatrix<f64>, t: DMatrix<f64>) -> Result<Self> {
        if !(omega2 > 0.0 && omega2.is_finite()) {
            return Err(Error::Config(format!("ω² must be > 0, got {omega2}")));
        }
        let chol_s = factor_with_jitter(&s)?;
        let chol_t = factor_with_jitter(&t)?;
        Ok(Self {
            omega2,
            s,
            t,
            chol_s,
            chol_t,
        })
    }

    /// Reuse the cached factors with a different scale.
    pub fn with_omega2(&self, omega2: f64) -> Self {
        let mut c = self.clone();
        c.omega2 = omega2;
        c
    }

    pub fn n(&self) -> usize {
        self.s.nrows()
    }

    pub fn tau(&self) -> usize {
        self.t.nrows()
    }

    /// `S⁻¹ R T⁻¹` (no ω² scaling) for an `n × τ` residual matrix.
    pub fn solve_unscaled(&self, r: &DMatrix<f64>) -> DMatrix<f64> {
        let left = self.chol_s.chol.solve(r);
        self.chol_t.chol.solve(&left.transpose()).transpose()
    }

    /// `(ω² S ⊗ T)⁻¹ v` for `v` in (location, time) order, time fastest.
    pub fn kron_solve(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let (n, tau) = (self.n(), self.tau());
        if v.len() != n * tau {
            return Err(Error::Dimension(format!(
                "vector of length {} against covariance of size {}",
                v.len(),
                n * tau
            )));
        }
        let r = DMatrix::from_row_slice(n, tau, v.as_slice());
        let x = self.solve_unscaled(&r) / self.omega2;
        Ok(DVector::from_iterator(
            n * tau,
            x.transpose().iter().copied(),
        ))
    }

    /// `vec(R)ᵀ (S ⊗ T)⁻¹ vec(R)` via the whitened residual.
    pub fn quad_form_unscaled(&self, r: &DMatrix<f64>) -> f64 {
        let ls = self.chol_s.chol.l_dirty();
        let lt = self.chol_t.chol.l_dirty();
        let w = ls
            .solve_lower_triangular(r)
            .expect("Cholesky factor has a positive diagonal");
        let z = lt
            .solve_lower_triangular(&w.transpose())
            .expect("Cholesky factor has a positive diagonal");
        z.norm_squared()
    }

    /// `log det(ω² S ⊗ T) = nτ log ω² + τ log det S + n log det T`.
    pub fn logdet(&self) -> f64 {
        let (n, tau) = (self.n() as f64, self.tau() as f64);
        n * tau * self.omega2.ln() + tau * self.chol_s.logdet() + n * self.chol_t.logdet()
    }

    /// Log density of one `n × τ` residual slice.
    pub fn log_density(&self, r: &DMatrix<f64>) -> f64 {
        let dim = (self.n() * self.tau()) as f64;
        -0.5 * (dim * (2.0 * std::f64::consts::PI).ln()
            + self.logdet()
            + self.quad_form_unscaled(r) / self.omega2)
    }

    /// Dense `ω² S ⊗ T` (jitter included), for oracles and small problems.
    pub fn dense(&self) -> DMatrix<f64> {
        let mut s = self.s.clone();
        let mut t = self.t.clone();
        for i in 0..s.nrows() {
            s[(i, i)] += self.chol_s.jitter;
        }
        for i in 0..t.nrows() {
            t[(i, i)] += self.chol_t.jitter;
        }
        crate::design::kron(&s, &t) * self.omega2
    }

    /// One draw of the error surface as an `n × τ` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let z = DMatrix::from_fn(self.n(), self.tau(), |_, _| {
            rng.sample::<f64, _>(StandardNormal)
        });
        let ls = self.chol_s.chol.l();
        let lt = self.chol_t.chol.l();
        (ls * z * lt.transpose()) * self.omega2.sqrt()
    }
}

/// Build the error covariance from coordinates and times.
pub fn build_error_cov(
    coords: &[(f64, f64)],
    times: &[f64],
    omega2: f64,
    mp: &MaternParams,
    tp: &TemporalParams,
    metric: DistanceMetric,
) -> Result<KroneckerCov> {
    if coords.is_empty() || times.is_empty() {
        return Err(Error::Dimension("empty coordinates or times".into()));
    }
    let dist = metric.matrix(coords);
    KroneckerCov::new(omega2, matern_matrix(&dist, mp), temporal_matrix(times, tp))
}

/// Position of one scalar observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ObsIndex {
    pub block: usize,
    pub rep: usize,
    pub loc: usize,
    pub time: usize,
}

/// Marginal covariance between two observations after integrating out the
/// random effects:
/// `σ²_θᵢ P_r P_pᵀ 1{i=i'} + σ²_ϑᵢ N_s N_qᵀ 1{i=i'} + ω² S_rp T_sq 1{i=i'} 1{j=j'}`.
pub fn marginal_cov(
    designs: &DesignSet,
    state: &ParamState,
    cov: &KroneckerCov,
    a: ObsIndex,
    b: ObsIndex,
) -> Result<f64> {
    let n_blocks = state.sigma2_theta.len();
    for idx in [a, b] {
        if idx.block >= n_blocks || idx.loc >= designs.n_locations || idx.time >= designs.n_times {
            return Err(Error::Domain(format!(
                "observation index {idx:?} out of range"
            )));
        }
    }
    if a.block != b.block {
        return Ok(0.0);
    }
    let i = a.block;
    let zs = &designs.zeta_space;
    let gt = &designs.gamma_time;
    let spatial = zs.row(a.loc).dot(&zs.row(b.loc));
    let temporal = gt.row(a.time).dot(&gt.row(b.time));
    let mut v = state.sigma2_theta[i] * spatial + state.sigma2_vartheta[i] * temporal;
    if a.rep == b.rep {
        v += cov.omega2 * cov.s[(a.loc, b.loc)] * cov.t[(a.time, b.time)];
    }
    Ok(v)
}
