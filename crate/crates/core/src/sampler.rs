//! Gibbs sampler with Metropolis-Hastings steps for the two range parameters.
//!
//! Scan order per iteration: β, Θ⁽ⁱ⁾, ϑ⁽ⁱ⁾, σ²_θᵢ, σ²_ϑᵢ, ω², φ, varphi.
//!
//! Two interchangeable backends compute the same full conditionals.
//! [`Backend::Kronecker`] works with the factors of `S ⊗ T` and of the mean
//! design `M = L_μ ⊗ B_μ`, so the β precision
//! `(J/ω²)(A_s ⊗ A_t) + σ_β⁻² I` is diagonalised by the eigenvectors of the
//! two small matrices `A_s = L_μᵀS⁻¹L_μ` and `A_t = B_μᵀT⁻¹B_μ`.
//! [`Backend::Dense`] assembles `ω² S ⊗ T` and the `K_μ³ × K_μ³` precision
//! explicitly and serves as the reference implementation.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::covariance::{
    factor_with_jitter, matern_matrix, temporal_matrix, DistanceMetric, Factor, MaternParams,
    TemporalParams,
};
use crate::design::{kron, BasisSpec, DesignSet};
use crate::distributions::{logpdf_gamma, sample_inverse_gamma, standard_normals, RngStream};
use crate::error::{Error, Result};
use crate::model::{block_fit, hex, Dataset, GammaPrior, ParamState, PriorConfig};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Kronecker,
    Dense,
}

/// Starting values for one chain. Coefficient vectors start at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitValues {
    pub omega2: f64,
    pub sigma2_theta: f64,
    pub sigma2_vartheta: f64,
    pub phi: f64,
    pub varphi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub seed: u64,
    /// Initial log-scale random-walk SD for φ.
    pub mh_step_phi: f64,
    /// Initial log-scale random-walk SD for varphi.
    pub mh_step_varphi: f64,
    /// Robbins-Monro step adaptation during burn-in.
    pub adapt: bool,
    pub target_accept: f64,
    pub backend: Backend,
    /// Explicit starting values, one per chain. When absent, chains start
    /// from a dispersed default set.
    pub init: Option<Vec<InitValues>>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            n_iter: 150_000,
            burn_in: 120_000,
            thin: 100,
            n_chains: 2,
            seed: 20_240_601,
            mh_step_phi: 0.5,
            mh_step_varphi: 0.5,
            adapt: true,
            target_accept: 0.35,
            backend: Backend::Kronecker,
            init: None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 {
            return Err(Error::Config("n_iter must be positive".into()));
        }
        if self.burn_in > self.n_iter {
            return Err(Error::Config(format!(
                "burn_in ({}) exceeds n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.n_chains == 0 {
            return Err(Error::Config("n_chains must be at least 1".into()));
        }
        for (name, s) in [
            ("mh_step_phi", self.mh_step_phi),
            ("mh_step_varphi", self.mh_step_varphi),
        ] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must lie in (0, 1)".into()));
        }
        if let Some(init) = &self.init {
            if init.len() != self.n_chains {
                return Err(Error::Config(format!(
                    "{} initial value sets for {} chains",
                    init.len(),
                    self.n_chains
                )));
            }
            for v in init {
                for x in [v.omega2, v.sigma2_theta, v.sigma2_vartheta, v.phi, v.varphi] {
                    if !(x > 0.0 && x.is_finite()) {
                        return Err(Error::Config("initial values must be > 0".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_kept(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }
}

/// Dispersed starting values: chain 1 low, chain 2 high, further chains
/// geometrically in between. ω² is scaled by the data variance.
pub fn default_init(chain: usize, n_chains: usize, data_var: f64) -> InitValues {
    let f = if n_chains <= 1 {
        0.0
    } else {
        chain as f64 / (n_chains - 1) as f64
    };
    let geo = |lo: f64, hi: f64| lo * (hi / lo).powf(f);
    let v = if data_var > 0.0 && data_var.is_finite() {
        data_var
    } else {
        1.0
    };
    InitValues {
        omega2: geo(0.01 * v, 10.0 * v),
        sigma2_theta: geo(0.01, 10.0),
        sigma2_vartheta: geo(0.01, 10.0),
        phi: geo(10.0, 1000.0),
        varphi: geo(0.1, 100.0),
    }
}

pub fn init_state(designs: &DesignSet, n_blocks: usize, kappa: f64, v: &InitValues) -> ParamState {
    let mut st = ParamState::zeros(designs, n_blocks, kappa);
    st.omega2 = v.omega2;
    st.sigma2_theta = vec![v.sigma2_theta; n_blocks];
    st.sigma2_vartheta = vec![v.sigma2_vartheta; n_blocks];
    st.phi = v.phi;
    st.varphi = v.varphi;
    st
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Acceptance {
    pub phi: f64,
    pub varphi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub chain: usize,
    pub seed: u64,
    pub stream: u64,
    pub config_digest: String,
    pub dataset_digest: String,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub kappa: f64,
    pub backend: Backend,
    pub metric: DistanceMetric,
    pub final_step_phi: f64,
    pub final_step_varphi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    /// Iteration index (1-based) of each kept draw.
    pub iters: Vec<usize>,
    pub draws: Vec<ParamState>,
    /// Total conditional log-likelihood of each kept draw.
    pub loglik: Vec<f64>,
    /// Per-(block, rep) log-likelihoods of each kept draw, storage order.
    pub slice_loglik: Vec<Vec<f64>>,
    pub acceptance: Acceptance,
    pub meta: ChainMeta,
}

impl ChainSamples {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Everything a chain needs that does not change between iterations.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub ds: &'a Dataset,
    pub designs: &'a DesignSet,
    pub priors: &'a PriorConfig,
    pub metric: DistanceMetric,
    pub kappa: f64,
}

/// Quantities that depend on φ only.
#[derive(Debug, Clone)]
struct SpaceCache {
    phi: f64,
    factor: Factor,
    /// `S⁻¹ L_μ`
    sinv_lmu: DMatrix<f64>,
    /// eigenpairs of `L_μᵀ S⁻¹ L_μ`
    eig_vecs: DMatrix<f64>,
    eig_vals: DVector<f64>,
    /// `S⁻¹ L_ζ`
    sinv_lzeta: DMatrix<f64>,
    /// `L_ζᵀ S⁻¹ L_ζ`
    zeta_gram: DMatrix<f64>,
    /// `S⁻¹ 1`
    sinv_one: DVector<f64>,
    one_sinv_one: f64,
}

/// Quantities that depend on varphi only.
#[derive(Debug, Clone)]
struct TimeCache {
    varphi: f64,
    factor: Factor,
    tinv_bmu: DMatrix<f64>,
    eig_vecs: DMatrix<f64>,
    eig_vals: DVector<f64>,
    tinv_bgamma: DMatrix<f64>,
    gamma_gram: DMatrix<f64>,
    tinv_one: DVector<f64>,
    one_tinv_one: f64,
}

/// Dense `S ⊗ T` pieces (reference backend), keyed on (φ, varphi).
#[derive(Debug, Clone)]
struct DenseCache {
    phi: f64,
    varphi: f64,
    chol: Cholesky<f64, Dyn>,
    logdet: f64,
    /// `C⁻¹ M`, `C⁻¹ P`, `C⁻¹ N` with `C = S ⊗ T`
    cinv_m: DMatrix<f64>,
    cinv_p: DMatrix<f64>,
    cinv_n: DMatrix<f64>,
    mtcm: DMatrix<f64>,
    ptcp: DMatrix<f64>,
    ntcn: DMatrix<f64>,
}

/// Per-chain sampler state: problem data plus caches.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    pub problem: Problem<'a>,
    pub backend: Backend,
    dist: DMatrix<f64>,
    slices: Vec<Vec<DMatrix<f64>>>,
    block_sums: Vec<DMatrix<f64>>,
    beta_mean: DVector<f64>,
    space: Option<SpaceCache>,
    time: Option<TimeCache>,
    dense: Option<DenseCache>,
}

fn sym(a: DMatrix<f64>) -> DMatrix<f64> {
    (&a + a.transpose()) * 0.5
}

fn vec_row_major(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(m.len(), m.transpose().iter().copied())
}

/// Draw from `N(P⁻¹ b, P⁻¹)` given the precision `P` and `b`.
fn sample_from_precision<R: Rng + ?Sized>(
    prec: DMatrix<f64>,
    b: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let f = factor_with_jitter(&sym(prec))?;
    let mean = f.chol.solve(b);
    let z = standard_normals(b.len(), rng);
    let dev = f
        .chol
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::Numerical("singular precision factor".into()))?;
    Ok(mean + dev)
}

fn moments_from_precision(
    prec: DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let f = factor_with_jitter(&sym(prec))?;
    let mean = f.chol.solve(b);
    Ok((mean, f.chol.inverse()))
}

fn eig_clamped(a: DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let e = SymmetricEigen::new(sym(a));
    (e.eigenvectors, e.eigenvalues.map(|v| v.max(0.0)))
}

/// `‖L_S⁻¹ R L_T⁻ᵀ‖²_F`.
fn whitened_quad(ls: &DMatrix<f64>, lt: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    let w = ls
        .solve_lower_triangular(r)
        .expect("positive Cholesky diagonal");
    let z = lt
        .solve_lower_triangular(&w.transpose())
        .expect("positive Cholesky diagonal");
    z.norm_squared()
}

impl<'a> Sampler<'a> {
    pub fn new(problem: Problem<'a>, backend: Backend) -> Result<Self> {
        let ds = problem.ds;
        let designs = problem.designs;
        if designs.n_locations != ds.n_locations() || designs.n_times != ds.n_times() {
            return Err(Error::Dimension("design does not match dataset".into()));
        }
        problem.priors.validate(designs.spec.beta_len())?;
        MaternParams::new(problem.kappa, 1.0)?;
        let dist = problem.metric.matrix(&ds.coords());
        let slices: Vec<Vec<DMatrix<f64>>> = (0..ds.n_blocks())
            .map(|i| (0..ds.reps[i]).map(|j| ds.slice(i, j)).collect())
            .collect();
        let block_sums = slices
            .iter()
            .map(|b| {
                b.iter()
                    .fold(DMatrix::zeros(ds.n_locations(), ds.n_times()), |acc, s| {
                        acc + s
                    })
            })
            .collect();
        let beta_mean = problem.priors.beta_mean_vec(designs.spec.beta_len());
        Ok(Self {
            problem,
            backend,
            dist,
            slices,
            block_sums,
            beta_mean,
            space: None,
            time: None,
            dense: None,
        })
    }

    fn ds(&self) -> &'a Dataset {
        self.problem.ds
    }

    fn designs(&self) -> &'a DesignSet {
        self.problem.designs
    }

    fn spatial_factor(&self, phi: f64) -> Result<Factor> {
        let s = matern_matrix(&self.dist, &MaternParams::new(self.problem.kappa, phi)?);
        factor_with_jitter(&s)
    }

    fn temporal_factor(&self, varphi: f64) -> Result<Factor> {
        let t = temporal_matrix(&self.ds().times, &TemporalParams::new(varphi)?);
        factor_with_jitter(&t)
    }

    fn build_space(&self, phi: f64, factor: Factor) -> SpaceCache {
        let d = self.designs();
        let n = d.n_locations;
        let sinv_lmu = factor.chol.solve(&d.mu_space);
        let (eig_vecs, eig_vals) = eig_clamped(d.mu_space.transpose() * &sinv_lmu);
        let sinv_lzeta = factor.chol.solve(&d.zeta_space);
        let zeta_gram = sym(d.zeta_space.transpose() * &sinv_lzeta);
        let sinv_one = factor.chol.solve(&DVector::from_element(n, 1.0));
        let one_sinv_one = sinv_one.sum();
        SpaceCache {
            phi,
            factor,
            sinv_lmu,
            eig_vecs,
            eig_vals,
            sinv_lzeta,
            zeta_gram,
            sinv_one,
            one_sinv_one,
        }
    }

    fn build_time(&self, varphi: f64, factor: Factor) -> TimeCache {
        let d = self.designs();
        let tau = d.n_times;
        let tinv_bmu = factor.chol.solve(&d.mu_time);
        let (eig_vecs, eig_vals) = eig_clamped(d.mu_time.transpose() * &tinv_bmu);
        let tinv_bgamma = factor.chol.solve(&d.gamma_time);
        let gamma_gram = sym(d.gamma_time.transpose() * &tinv_bgamma);
        let tinv_one = factor.chol.solve(&DVector::from_element(tau, 1.0));
        let one_tinv_one = tinv_one.sum();
        TimeCache {
            varphi,
            factor,
            tinv_bmu,
            eig_vecs,
            eig_vals,
            tinv_bgamma,
            gamma_gram,
            tinv_one,
            one_tinv_one,
        }
    }

    fn dense_cov(fs: &Factor, ft: &Factor) -> DMatrix<f64> {
        let s = fs.chol.l() * fs.chol.l().transpose();
        let t = ft.chol.l() * ft.chol.l().transpose();
        sym(kron(&s, &t))
    }

    fn build_dense(&self, phi: f64, varphi: f64, fs: &Factor, ft: &Factor) -> Result<DenseCache> {
        let d = self.designs();
        let c = Self::dense_cov(fs, ft);
        let f = factor_with_jitter(&c)?;
        let cinv_m = f.chol.solve(&d.m);
        let cinv_p = f.chol.solve(&d.p);
        let cinv_n = f.chol.solve(&d.n);
        Ok(DenseCache {
            phi,
            varphi,
            logdet: f.logdet(),
            mtcm: sym(d.m.transpose() * &cinv_m),
            ptcp: sym(d.p.transpose() * &cinv_p),
            ntcn: sym(d.n.transpose() * &cinv_n),
            chol: f.chol,
            cinv_m,
            cinv_p,
            cinv_n,
        })
    }

    /// Make the caches agree with the range parameters of `st`.
    pub fn prepare(&mut self, st: &ParamState) -> Result<()> {
        if self.space.as_ref().map(|c| c.phi) != Some(st.phi) {
            let f = self.spatial_factor(st.phi)?;
            self.space = Some(self.build_space(st.phi, f));
        }
        if self.time.as_ref().map(|c| c.varphi) != Some(st.varphi) {
            let f = self.temporal_factor(st.varphi)?;
            self.time = Some(self.build_time(st.varphi, f));
        }
        if self.backend == Backend::Dense
            && self.dense.as_ref().map(|c| (c.phi, c.varphi)) != Some((st.phi, st.varphi))
        {
            let sc = self.space.as_ref().expect("built above");
            let tc = self.time.as_ref().expect("built above");
            self.dense = Some(self.build_dense(st.phi, st.varphi, &sc.factor, &tc.factor)?);
        }
        Ok(())
    }

    fn caches(&self) -> (&SpaceCache, &TimeCache) {
        (
            self.space.as_ref().expect("prepare() not called"),
            self.time.as_ref().expect("prepare() not called"),
        )
    }

    fn dense(&self) -> &DenseCache {
        self.dense.as_ref().expect("prepare() not called")
    }

    /// `Σⱼ Σᵢ (y_ij − PΘ⁽ⁱ⁾ − Nϑ⁽ⁱ⁾)` as an `n × τ` matrix.
    fn beta_residual_sum(&self, st: &ParamState) -> DMatrix<f64> {
        let d = self.designs();
        let mut acc = DMatrix::zeros(d.n_locations, d.n_times);
        for (i, ysum) in self.block_sums.iter().enumerate() {
            let j = self.ds().reps[i] as f64;
            let s = d.spatial_effect(&st.theta[i]);
            let t = d.temporal_effect(&st.vartheta[i]);
            acc += ysum;
            for r in 0..acc.nrows() {
                for c in 0..acc.ncols() {
                    acc[(r, c)] -= j * (s[r] + t[c]);
                }
            }
        }
        acc
    }

    /// `Σⱼ (y_ij − Mβ − Nϑ⁽ⁱ⁾)` for block `i`.
    fn theta_residual_sum(&self, st: &ParamState, i: usize) -> DMatrix<f64> {
        let d = self.designs();
        let j = self.ds().reps[i] as f64;
        let mut acc = &self.block_sums[i] - d.mean_surface(&st.beta) * j;
        let t = d.temporal_effect(&st.vartheta[i]);
        for r in 0..acc.nrows() {
            for c in 0..acc.ncols() {
                acc[(r, c)] -= j * t[c];
            }
        }
        acc
    }

    /// `Σⱼ (y_ij − Mβ − PΘ⁽ⁱ⁾)` for block `i`.
    fn vartheta_residual_sum(&self, st: &ParamState, i: usize) -> DMatrix<f64> {
        let d = self.designs();
        let j = self.ds().reps[i] as f64;
        let mut acc = &self.block_sums[i] - d.mean_surface(&st.beta) * j;
        let s = d.spatial_effect(&st.theta[i]);
        for r in 0..acc.nrows() {
            for c in 0..acc.ncols() {
                acc[(r, c)] -= j * s[r];
            }
        }
        acc
    }

    /// Full residual slices `y_ij − Mβ − PΘ⁽ⁱ⁾ − Nϑ⁽ⁱ⁾`, storage order.
    pub fn residuals(&self, st: &ParamState) -> Vec<DMatrix<f64>> {
        let d = self.designs();
        let mut out = Vec::with_capacity(self.ds().total_reps());
        for (i, block) in self.slices.iter().enumerate() {
            let fit = block_fit(d, st, i);
            for y in block {
                out.push(y - &fit);
            }
        }
        out
    }

    fn beta_prior_precision(&self) -> f64 {
        1.0 / self.problem.priors.beta_var
    }

    /// Mean and covariance of the β full conditional (covariance is dense;
    /// intended for checks on small problems).
    pub fn beta_conditional(&mut self, st: &ParamState) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.prepare(st)?;
        let rsum = self.beta_residual_sum(st);
        match self.backend {
            Backend::Kronecker => {
                let (sc, tc) = self.caches();
                let (rot, e) = self.beta_rotated_rhs(st, &rsum);
                let k2 = sc.eig_vals.len();
                let kt = tc.eig_vals.len();
                let mean_rot = DMatrix::from_fn(k2, kt, |a, b| rot[(a, b)] / e[(a, b)]);
                let mean = vec_row_major(&(&sc.eig_vecs * mean_rot * tc.eig_vecs.transpose()));
                let u = kron(&sc.eig_vecs, &tc.eig_vecs);
                let inv_e = DVector::from_iterator(k2 * kt, e.transpose().iter().map(|v| 1.0 / v));
                let cov = &u * DMatrix::from_diagonal(&inv_e) * u.transpose();
                Ok((mean, cov))
            }
            Backend::Dense => {
                let (prec, b) = self.beta_dense_system(st, &rsum);
                moments_from_precision(prec, &b)
            }
        }
    }

    /// Rotated right-hand side and precision eigenvalues, both `K_μ² × K_μ`.
    fn beta_rotated_rhs(
        &self,
        st: &ParamState,
        rsum: &DMatrix<f64>,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let (sc, tc) = self.caches();
        let lambda = self.beta_prior_precision();
        let c = self.ds().total_reps() as f64 / st.omega2;
        let k2 = sc.eig_vals.len();
        let kt = tc.eig_vals.len();
        let prior = DMatrix::from_row_slice(k2, kt, self.beta_mean.as_slice()) * lambda;
        let rhs = sc.sinv_lmu.transpose() * rsum * &tc.tinv_bmu / st.omega2 + prior;
        let rot = sc.eig_vecs.transpose() * rhs * &tc.eig_vecs;
        let e = DMatrix::from_fn(k2, kt, |a, b| c * sc.eig_vals[a] * tc.eig_vals[b] + lambda);
        (rot, e)
    }

    fn beta_dense_system(
        &self,
        st: &ParamState,
        rsum: &DMatrix<f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let dc = self.dense();
        let lambda = self.beta_prior_precision();
        let jtot = self.ds().total_reps() as f64;
        let k = self.designs().spec.beta_len();
        let prec = &dc.mtcm * (jtot / st.omega2) + DMatrix::identity(k, k) * lambda;
        let b = dc.cinv_m.transpose() * vec_row_major(rsum) / st.omega2 + &self.beta_mean * lambda;
        (prec, b)
    }

    pub fn update_beta<R: Rng + ?Sized>(&mut self, st: &mut ParamState, rng: &mut R) -> Result<()> {
        self.prepare(st)?;
        let rsum = self.beta_residual_sum(st);
        st.beta = match self.backend {
            Backend::Kronecker => {
                let (sc, tc) = self.caches();
                let (rot, e) = self.beta_rotated_rhs(st, &rsum);
                let (k2, kt) = rot.shape();
                let z = DMatrix::from_fn(k2, kt, |_, _| rng.sample::<f64, _>(StandardNormal));
                let x = DMatrix::from_fn(k2, kt, |a, b| {
                    let ev = e[(a, b)];
                    rot[(a, b)] / ev + z[(a, b)] / ev.sqrt()
                });
                vec_row_major(&(&sc.eig_vecs * x * tc.eig_vecs.transpose()))
            }
            Backend::Dense => {
                let (prec, b) = self.beta_dense_system(st, &rsum);
                sample_from_precision(prec, &b, rng)?
            }
        };
        Ok(())
    }

    fn theta_system(&self, st: &ParamState, i: usize) -> (DMatrix<f64>, DVector<f64>) {
        let j = self.ds().reps[i] as f64;
        let k = self.designs().spec.theta_len();
        let rsum = self.theta_residual_sum(st, i);
        let prior = DMatrix::identity(k, k) / st.sigma2_theta[i];
        match self.backend {
            Backend::Kronecker => {
                let (sc, tc) = self.caches();
                let prec = &sc.zeta_gram * (j * tc.one_tinv_one / st.omega2) + prior;
                let b = sc.sinv_lzeta.transpose() * (rsum * &tc.tinv_one) / st.omega2;
                (prec, b)
            }
            Backend::Dense => {
                let dc = self.dense();
                let prec = &dc.ptcp * (j / st.omega2) + prior;
                let b = dc.cinv_p.transpose() * vec_row_major(&rsum) / st.omega2;
                (prec, b)
            }
        }
    }

    fn vartheta_system(&self, st: &ParamState, i: usize) -> (DMatrix<f64>, DVector<f64>) {
        let j = self.ds().reps[i] as f64;
        let k = self.designs().spec.vartheta_len();
        let rsum = self.vartheta_residual_sum(st, i);
        let prior = DMatrix::identity(k, k) / st.sigma2_vartheta[i];
        match self.backend {
            Backend::Kronecker => {
                let (sc, tc) = self.caches();
                let prec = &tc.gamma_gram * (j * sc.one_sinv_one / st.omega2) + prior;
                let b = tc.tinv_bgamma.transpose() * (rsum.transpose() * &sc.sinv_one) / st.omega2;
                (prec, b)
            }
            Backend::Dense => {
                let dc = self.dense();
                let prec = &dc.ntcn * (j / st.omega2) + prior;
                let b = dc.cinv_n.transpose() * vec_row_major(&rsum) / st.omega2;
                (prec, b)
            }
        }
    }

    pub fn theta_conditional(
        &mut self,
        st: &ParamState,
        i: usize,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_block(i)?;
        self.prepare(st)?;
        let (p, b) = self.theta_system(st, i);
        moments_from_precision(p, &b)
    }

    pub fn vartheta_conditional(
        &mut self,
        st: &ParamState,
        i: usize,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_block(i)?;
        self.prepare(st)?;
        let (p, b) = self.vartheta_system(st, i);
        moments_from_precision(p, &b)
    }

    fn check_block(&self, i: usize) -> Result<()> {
        if i >= self.ds().n_blocks() {
            return Err(Error::Domain(format!("block {i} out of range")));
        }
        Ok(())
    }

    pub fn update_theta_block<R: Rng + ?Sized>(
        &mut self,
        st: &mut ParamState,
        i: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.check_block(i)?;
        self.prepare(st)?;
        let (p, b) = self.theta_system(st, i);
        st.theta[i] = sample_from_precision(p, &b, rng)?;
        Ok(())
    }

    pub fn update_vartheta_block<R: Rng + ?Sized>(
        &mut self,
        st: &mut ParamState,
        i: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.check_block(i)?;
        self.prepare(st)?;
        let (p, b) = self.vartheta_system(st, i);
        st.vartheta[i] = sample_from_precision(p, &b, rng)?;
        Ok(())
    }

    /// Inverse-gamma `(shape, rate)` of the σ²_θᵢ full conditional.
    pub fn sigma2_theta_conditional(&self, st: &ParamState, i: usize) -> (f64, f64) {
        let (a, b) = self.problem.priors.sigma2_theta.as_inverse_gamma();
        let th = &st.theta[i];
        (th.len() as f64 / 2.0 + a, th.norm_squared() / 2.0 + b)
    }

    pub fn sigma2_vartheta_conditional(&self, st: &ParamState, i: usize) -> (f64, f64) {
        let (a, b) = self.problem.priors.sigma2_vartheta.as_inverse_gamma();
        let v = &st.vartheta[i];
        (v.len() as f64 / 2.0 + a, v.norm_squared() / 2.0 + b)
    }

    pub fn update_sigma2_theta<R: Rng + ?Sized>(
        &self,
        st: &mut ParamState,
        i: usize,
        rng: &mut R,
    ) -> Result<()> {
        let (a, b) = self.sigma2_theta_conditional(st, i);
        st.sigma2_theta[i] = sample_inverse_gamma(a, b, rng)?;
        Ok(())
    }

    pub fn update_sigma2_vartheta<R: Rng + ?Sized>(
        &self,
        st: &mut ParamState,
        i: usize,
        rng: &mut R,
    ) -> Result<()> {
        let (a, b) = self.sigma2_vartheta_conditional(st, i);
        st.sigma2_vartheta[i] = sample_inverse_gamma(a, b, rng)?;
        Ok(())
    }

    /// `Σᵢⱼ vec(R_ij)ᵀ (S ⊗ T)⁻¹ vec(R_ij)`, the ω²-free quadratic form.
    fn quad_sum(&self, residuals: &[DMatrix<f64>]) -> f64 {
        match self.backend {
            Backend::Kronecker => {
                let (sc, tc) = self.caches();
                let ls = sc.factor.chol.l_dirty();
                let lt = tc.factor.chol.l_dirty();
                residuals.iter().map(|r| whitened_quad(ls, lt, r)).sum()
            }
            Backend::Dense => {
                let l = self.dense().chol.l_dirty();
                residuals
                    .iter()
                    .map(|r| {
                        l.solve_lower_triangular(&vec_row_major(r))
                            .expect("positive Cholesky diagonal")
                            .norm_squared()
                    })
                    .sum()
            }
        }
    }

    /// Inverse-gamma `(shape, rate)` of the ω² full conditional.
    pub fn omega2_conditional(&mut self, st: &ParamState) -> Result<(f64, f64)> {
        self.prepare(st)?;
        let residuals = self.residuals(st);
        Ok(self.omega2_conditional_from(&residuals))
    }

    fn omega2_conditional_from(&self, residuals: &[DMatrix<f64>]) -> (f64, f64) {
        let (a, b) = self.problem.priors.omega2.as_inverse_gamma();
        let d = self.designs();
        let count = (d.n_locations * d.n_times * self.ds().total_reps()) as f64;
        let q = self.quad_sum(residuals);
        (count / 2.0 + a, q / 2.0 + b)
    }

    pub fn update_omega2<R: Rng + ?Sized>(
        &mut self,
        st: &mut ParamState,
        rng: &mut R,
    ) -> Result<()> {
        let (a, b) = self.omega2_conditional(st)?;
        st.omega2 = sample_inverse_gamma(a, b, rng)?;
        Ok(())
    }

    /// Σ log N over all slices from the given residuals and factors.
    fn loglik_from(
        &self,
        omega2: f64,
        residuals: &[DMatrix<f64>],
        fs: &Factor,
        ft: &Factor,
    ) -> Vec<f64> {
        let d = self.designs();
        let (n, tau) = (d.n_locations as f64, d.n_times as f64);
        let logdet = n * tau * omega2.ln() + tau * fs.logdet() + n * ft.logdet();
        let ls = fs.chol.l_dirty();
        let lt = ft.chol.l_dirty();
        residuals
            .iter()
            .map(|r| -0.5 * (n * tau * LN_2PI + logdet + whitened_quad(ls, lt, r) / omega2))
            .collect()
    }

    fn loglik_dense(
        &self,
        omega2: f64,
        residuals: &[DMatrix<f64>],
        dc_chol: &Cholesky<f64, Dyn>,
        logdet_c: f64,
    ) -> Vec<f64> {
        let d = self.designs();
        let dim = (d.n_locations * d.n_times) as f64;
        let logdet = dim * omega2.ln() + logdet_c;
        let l = dc_chol.l_dirty();
        residuals
            .iter()
            .map(|r| {
                let q = l
                    .solve_lower_triangular(&vec_row_major(r))
                    .expect("positive Cholesky diagonal")
                    .norm_squared();
                -0.5 * (dim * LN_2PI + logdet + q / omega2)
            })
            .collect()
    }

    /// Per-slice log-likelihood at the current state, storage order.
    pub fn slice_logliks(&mut self, st: &ParamState) -> Result<Vec<f64>> {
        self.prepare(st)?;
        let residuals = self.residuals(st);
        Ok(self.slice_logliks_from(st, &residuals))
    }

    fn slice_logliks_from(&self, st: &ParamState, residuals: &[DMatrix<f64>]) -> Vec<f64> {
        match self.backend {
            Backend::Kronecker => {
                let (sc, tc) = self.caches();
                self.loglik_from(st.omega2, residuals, &sc.factor, &tc.factor)
            }
            Backend::Dense => {
                let dc = self.dense();
                self.loglik_dense(st.omega2, residuals, &dc.chol, dc.logdet)
            }
        }
    }

    /// Log-likelihood (summed) with one range parameter replaced; `None`
    /// when the covariance cannot be factorised.
    fn loglik_at(
        &self,
        st: &ParamState,
        which: RangeParam,
        value: f64,
        residuals: &[DMatrix<f64>],
    ) -> Option<f64> {
        let (sc, tc) = self.caches();
        let (fs, ft) = match which {
            RangeParam::Phi => (self.spatial_factor(value).ok()?, tc.factor.clone()),
            RangeParam::Varphi => (sc.factor.clone(), self.temporal_factor(value).ok()?),
        };
        let ll: f64 = match self.backend {
            Backend::Kronecker => self
                .loglik_from(st.omega2, residuals, &fs, &ft)
                .iter()
                .sum(),
            Backend::Dense => {
                let c = Self::dense_cov(&fs, &ft);
                let f = factor_with_jitter(&c).ok()?;
                self.loglik_dense(st.omega2, residuals, &f.chol, f.logdet())
                    .iter()
                    .sum()
            }
        };
        ll.is_finite().then_some(ll)
    }

    fn range_prior(&self, which: RangeParam) -> GammaPrior {
        match which {
            RangeParam::Phi => self.problem.priors.phi,
            RangeParam::Varphi => self.problem.priors.varphi,
        }
    }

    /// Log target on the log scale: loglik + Gamma log-prior + log x.
    fn log_target(
        &self,
        st: &ParamState,
        which: RangeParam,
        x: f64,
        residuals: &[DMatrix<f64>],
    ) -> Option<f64> {
        let p = self.range_prior(which);
        let ll = self.loglik_at(st, which, x, residuals)?;
        Some(ll + logpdf_gamma(x, p.shape, p.scale) + x.ln())
    }

    /// One random-walk Metropolis-Hastings step on `log φ` or `log varphi`.
    /// Returns whether the proposal was accepted.
    pub fn mh_update_range<R: Rng + ?Sized>(
        &mut self,
        st: &mut ParamState,
        which: RangeParam,
        step: f64,
        rng: &mut R,
    ) -> Result<bool> {
        self.prepare(st)?;
        let residuals = self.residuals(st);
        self.mh_update_range_with(st, which, step, &residuals, rng)
    }

    fn mh_update_range_with<R: Rng + ?Sized>(
        &mut self,
        st: &mut ParamState,
        which: RangeParam,
        step: f64,
        residuals: &[DMatrix<f64>],
        rng: &mut R,
    ) -> Result<bool> {
        let current = match which {
            RangeParam::Phi => st.phi,
            RangeParam::Varphi => st.varphi,
        };
        let z: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.gen();
        let proposal = current * (step * z).exp();
        if !(proposal > 0.0 && proposal.is_finite()) {
            return Ok(false);
        }
        let cur = self
            .log_target(st, which, current, residuals)
            .ok_or_else(|| {
                Error::Numerical("current range parameter has no finite density".into())
            })?;
        let accepted = match self.log_target(st, which, proposal, residuals) {
            Some(prop) => u.ln() < prop - cur,
            None => false,
        };
        if accepted {
            match which {
                RangeParam::Phi => st.phi = proposal,
                RangeParam::Varphi => st.varphi = proposal,
            }
            self.prepare(st)?;
        }
        Ok(accepted)
    }

    /// One full systematic scan. Returns MH acceptance flags (φ, varphi)
    /// and the residual slices at the final state.
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        st: &mut ParamState,
        steps: (f64, f64),
        rng: &mut R,
    ) -> Result<(bool, bool, Vec<DMatrix<f64>>)> {
        let blocks = self.ds().n_blocks();
        self.update_beta(st, rng)?;
        for i in 0..blocks {
            self.update_theta_block(st, i, rng)?;
        }
        for i in 0..blocks {
            self.update_vartheta_block(st, i, rng)?;
        }
        for i in 0..blocks {
            self.update_sigma2_theta(st, i, rng)?;
        }
        for i in 0..blocks {
            self.update_sigma2_vartheta(st, i, rng)?;
        }
        let residuals = self.residuals(st);
        let (a, b) = self.omega2_conditional_from(&residuals);
        st.omega2 = sample_inverse_gamma(a, b, rng)?;
        let acc_phi = self.mh_update_range_with(st, RangeParam::Phi, steps.0, &residuals, rng)?;
        let acc_varphi =
            self.mh_update_range_with(st, RangeParam::Varphi, steps.1, &residuals, rng)?;
        Ok((acc_phi, acc_varphi, residuals))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangeParam {
    Phi,
    Varphi,
}

/// SHA-256 of the canonical JSON of everything that determines a chain.
pub fn config_digest(problem: &Problem<'_>, cfg: &McmcConfig) -> String {
    let v = serde_json::json!({
        "mcmc": cfg,
        "priors": problem.priors,
        "basis": problem.designs.spec,
        "metric": problem.metric,
        "kappa": problem.kappa,
    });
    let canonical = serde_json::to_string(&v).expect("plain data serialises");
    hex(&Sha256::digest(canonical.as_bytes()))
}

/// Run chain `chain` (0-based) of `cfg`.
pub fn run_chain(problem: &Problem<'_>, cfg: &McmcConfig, chain: usize) -> Result<ChainSamples> {
    cfg.validate()?;
    let ds = problem.ds;
    let init = match &cfg.init {
        Some(v) => *v
            .get(chain)
            .ok_or_else(|| Error::Config(format!("no initial values for chain {}", chain + 1)))?,
        None => default_init(chain, cfg.n_chains, ds.variance()),
    };
    let mut st = init_state(problem.designs, ds.n_blocks(), problem.kappa, &init);
    let mut sampler = Sampler::new(problem.clone(), cfg.backend)?;
    let mut rng = RngStream::new(cfg.seed, chain as u64);

    let mut out = ChainSamples {
        iters: Vec::with_capacity(cfg.n_kept()),
        draws: Vec::with_capacity(cfg.n_kept()),
        loglik: Vec::with_capacity(cfg.n_kept()),
        slice_loglik: Vec::with_capacity(cfg.n_kept()),
        acceptance: Acceptance::default(),
        meta: ChainMeta {
            chain: chain + 1,
            seed: cfg.seed,
            stream: chain as u64,
            config_digest: config_digest(problem, cfg),
            dataset_digest: ds.digest(),
            n_iter: cfg.n_iter,
            burn_in: cfg.burn_in,
            thin: cfg.thin,
            kappa: problem.kappa,
            backend: cfg.backend,
            metric: problem.metric,
            final_step_phi: cfg.mh_step_phi,
            final_step_varphi: cfg.mh_step_varphi,
        },
    };

    let mut log_steps = (cfg.mh_step_phi.ln(), cfg.mh_step_varphi.ln());
    let mut accepted = (0usize, 0usize);
    let mut counted = 0usize;
    let mut all_accepted = (0usize, 0usize);

    for it in 0..cfg.n_iter {
        let steps = (log_steps.0.exp(), log_steps.1.exp());
        let outcome = sampler.step(&mut st, steps, &mut rng).and_then(|r| {
            if st.is_finite() {
                Ok(r)
            } else {
                Err(Error::Numerical("non-finite parameter value".into()))
            }
        });
        let (acc_phi, acc_varphi, residuals) = match outcome {
            Ok(r) => r,
            Err(e) => {
                out.meta.final_step_phi = steps.0;
                out.meta.final_step_varphi = steps.1;
                return Err(Error::Diverged {
                    iteration: it + 1,
                    reason: e.to_string(),
                    partial: Box::new(out),
                });
            }
        };
        all_accepted.0 += acc_phi as usize;
        all_accepted.1 += acc_varphi as usize;
        if it < cfg.burn_in {
            if cfg.adapt {
                let gain = ((it + 1) as f64).powf(-0.6);
                log_steps.0 += gain * (acc_phi as u8 as f64 - cfg.target_accept);
                log_steps.1 += gain * (acc_varphi as u8 as f64 - cfg.target_accept);
                log_steps.0 = log_steps.0.clamp(-10.0, 3.0);
                log_steps.1 = log_steps.1.clamp(-10.0, 3.0);
            }
            continue;
        }
        counted += 1;
        accepted.0 += acc_phi as usize;
        accepted.1 += acc_varphi as usize;
        if (it + 1 - cfg.burn_in).is_multiple_of(cfg.thin) {
            let sl = sampler.slice_logliks_from(&st, &residuals);
            out.iters.push(it + 1);
            out.loglik.push(sl.iter().sum());
            out.slice_loglik.push(sl);
            out.draws.push(st.clone());
        }
    }
    out.acceptance = if counted > 0 {
        Acceptance {
            phi: accepted.0 as f64 / counted as f64,
            varphi: accepted.1 as f64 / counted as f64,
        }
    } else {
        Acceptance {
            phi: all_accepted.0 as f64 / cfg.n_iter as f64,
            varphi: all_accepted.1 as f64 / cfg.n_iter as f64,
        }
    };
    out.meta.final_step_phi = log_steps.0.exp();
    out.meta.final_step_varphi = log_steps.1.exp();
    Ok(out)
}

/// Run all chains of `cfg` concurrently; results are in chain order and do
/// not depend on the thread count.
pub fn run_chains(problem: &Problem<'_>, cfg: &McmcConfig) -> Result<Vec<ChainSamples>> {
    cfg.validate()?;
    (0..cfg.n_chains)
        .into_par_iter()
        .map(|c| run_chain(problem, cfg, c))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// How basis domains and distances are derived from a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    /// Fraction of the observed lat/lon span added on each side.
    pub spatial_margin: f64,
    /// Fraction of the observed time span added on each side.
    pub time_margin: f64,
    pub metric: DistanceMetric,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            spatial_margin: 0.1,
            time_margin: 0.0,
            metric: DistanceMetric::Euclidean,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fit {
    pub designs: DesignSet,
    pub chains: Vec<ChainSamples>,
}

/// Build designs on a fixed basis layout and run every chain.
pub fn fit_with_spec(
    ds: &Dataset,
    spec: &BasisSpec,
    kappa: f64,
    priors: &PriorConfig,
    cfg: &McmcConfig,
    metric: DistanceMetric,
) -> Result<Fit> {
    let designs = DesignSet::build(spec, &ds.lats(), &ds.lons(), &ds.times)?;
    let problem = Problem {
        ds,
        designs: &designs,
        priors,
        metric,
        kappa,
    };
    let chains = run_chains(&problem, cfg)?;
    Ok(Fit { designs, chains })
}

/// Basis domains from the observed coordinates, then [`fit_with_spec`].
pub fn fit_dataset(
    ds: &Dataset,
    counts: (usize, usize, usize),
    kappa: f64,
    priors: &PriorConfig,
    cfg: &McmcConfig,
    settings: &FitSettings,
) -> Result<Fit> {
    let spec = BasisSpec::from_coords(
        &ds.lats(),
        &ds.lons(),
        &ds.times,
        counts,
        settings.spatial_margin,
        settings.time_margin,
    )?;
    fit_with_spec(ds, &spec, kappa, priors, cfg, settings.metric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Location;

    fn toy(reps: Vec<usize>) -> (Dataset, DesignSet) {
        let locations: Vec<Location> = (0..4)
            .map(|k| Location {
                station_id: format!("s{k}"),
                lat: -15.0 + (k % 2) as f64 * 1.3,
                lon: -50.0 + (k / 2) as f64 * 0.9 + k as f64 * 0.1,
            })
            .collect();
        let times = vec![1.0, 2.0, 3.0, 4.0];
        let total: usize = reps.iter().sum();
        let y = (0..total * 16)
            .map(|k| ((k * 7 % 13) as f64 - 6.0) * 0.4)
            .collect();
        let ds = Dataset::new(reps, locations, times, y).unwrap();
        let spec =
            BasisSpec::from_coords(&ds.lats(), &ds.lons(), &ds.times, (4, 4, 4), 0.1, 0.0).unwrap();
        let d = DesignSet::build(&spec, &ds.lats(), &ds.lons(), &ds.times).unwrap();
        (ds, d)
    }

    fn state(d: &DesignSet, blocks: usize) -> ParamState {
        let mut st = ParamState::zeros(d, blocks, 0.5);
        st.beta = DVector::from_fn(64, |k, _| ((k as f64) * 0.37).sin());
        for i in 0..blocks {
            st.theta[i] = DVector::from_fn(16, |k, _| ((k + i) as f64 * 0.21).cos() * 0.3);
            st.vartheta[i] = DVector::from_fn(4, |k, _| (k as f64 - 1.5) * 0.2);
        }
        st.omega2 = 1.7;
        st.phi = 1.2;
        st.varphi = 1.5;
        st
    }

    fn max_abs(a: &DMatrix<f64>) -> f64 {
        a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    #[test]
    fn backends_agree_on_conditionals() {
        let (ds, d) = toy(vec![2, 1]);
        let priors = PriorConfig::default();
        let problem = Problem {
            ds: &ds,
            designs: &d,
            priors: &priors,
            metric: DistanceMetric::Euclidean,
            kappa: 0.5,
        };
        let st = state(&d, 2);
        let mut k = Sampler::new(problem.clone(), Backend::Kronecker).unwrap();
        let mut dn = Sampler::new(problem, Backend::Dense).unwrap();
        let (mk, ck) = k.beta_conditional(&st).unwrap();
        let (md, cd) = dn.beta_conditional(&st).unwrap();
        assert!(
            (&mk - &md).amax() < 1e-6 * md.amax().max(1.0),
            "{}",
            (&mk - &md).amax()
        );
        assert!(max_abs(&(&ck - &cd)) < 1e-6 * max_abs(&cd));
        for i in 0..2 {
            let (a, _) = k.theta_conditional(&st, i).unwrap();
            let (b, _) = dn.theta_conditional(&st, i).unwrap();
            assert!((a - b).amax() < 1e-9);
            let (a, _) = k.vartheta_conditional(&st, i).unwrap();
            let (b, _) = dn.vartheta_conditional(&st, i).unwrap();
            assert!((a - b).amax() < 1e-9);
        }
        let (a1, b1) = k.omega2_conditional(&st).unwrap();
        let (a2, b2) = dn.omega2_conditional(&st).unwrap();
        assert_eq!(a1, a2);
        assert!((b1 - b2).abs() < 1e-9 * b2);
        let l1: f64 = k.slice_logliks(&st).unwrap().iter().sum();
        let l2: f64 = dn.slice_logliks(&st).unwrap().iter().sum();
        assert!((l1 - l2).abs() < 1e-8);
    }

    #[test]
    fn zero_theta_gives_prior_update() {
        let (ds, d) = toy(vec![1]);
        let priors = PriorConfig::default();
        let problem = Problem {
            ds: &ds,
            designs: &d,
            priors: &priors,
            metric: DistanceMetric::Euclidean,
            kappa: 0.5,
        };
        let s = Sampler::new(problem, Backend::Kronecker).unwrap();
        let mut st = state(&d, 1);
        st.theta[0] = DVector::zeros(16);
        assert_eq!(s.sigma2_theta_conditional(&st, 0), (8.0 + 0.01, 0.01));
    }

    #[test]
    fn zero_step_accepts_self() {
        let (ds, d) = toy(vec![1]);
        let priors = PriorConfig::default();
        let problem = Problem {
            ds: &ds,
            designs: &d,
            priors: &priors,
            metric: DistanceMetric::Euclidean,
            kappa: 0.5,
        };
        let mut s = Sampler::new(problem, Backend::Kronecker).unwrap();
        let mut st = state(&d, 1);
        let mut rng = RngStream::new(3, 0);
        for _ in 0..5 {
            assert!(s
                .mh_update_range(&mut st, RangeParam::Phi, 0.0, &mut rng)
                .unwrap());
            assert_eq!(st.phi, 1.2);
        }
    }

    #[test]
    fn chain_lengths_and_determinism() {
        let (ds, d) = toy(vec![2, 1]);
        let priors = PriorConfig::default();
        let problem = Problem {
            ds: &ds,
            designs: &d,
            priors: &priors,
            metric: DistanceMetric::Euclidean,
            kappa: 0.5,
        };
        let cfg = McmcConfig {
            n_iter: 40,
            burn_in: 10,
            thin: 4,
            n_chains: 2,
            ..Default::default()
        };
        let a = run_chains(&problem, &cfg).unwrap();
        let b = run_chains(&problem, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].len(), 7);
        assert_eq!(a[0].iters[0], 14);
        assert_ne!(a[0].draws, a[1].draws);
        for c in &a {
            assert!((0.0..=1.0).contains(&c.acceptance.phi));
        }
        let empty = McmcConfig {
            n_iter: 10,
            burn_in: 10,
            ..cfg.clone()
        };
        let e = run_chain(&problem, &empty, 0).unwrap();
        assert!(e.is_empty());
        assert_eq!(e.meta.n_iter, 10);
    }

    #[test]
    fn config_validation() {
        let bad = McmcConfig {
            n_iter: 5,
            burn_in: 6,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = McmcConfig {
            thin: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = McmcConfig {
            mh_step_phi: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(McmcConfig::default().n_kept(), 300);
    }

    #[test]
    fn dispersed_inits() {
        let lo = default_init(0, 2, 4.0);
        let hi = default_init(1, 2, 4.0);
        assert!((lo.omega2 - 0.04).abs() < 1e-12 && (hi.omega2 - 40.0).abs() < 1e-9);
        assert!((lo.phi - 10.0).abs() < 1e-12 && (hi.phi - 1000.0).abs() < 1e-9);
        assert!((lo.varphi - 0.1).abs() < 1e-12 && (hi.varphi - 100.0).abs() < 1e-9);
    }
}
