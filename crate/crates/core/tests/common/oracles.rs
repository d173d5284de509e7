//! Closed-form full conditionals computed densely from scratch, and Monte
//! Carlo checks of the sampler's updates against them.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, InverseGamma};
use stfm::covariance::{
    matern_matrix, temporal_matrix, DistanceMetric, MaternParams, TemporalParams,
};
use stfm::design::{kron, BasisSpec, DesignSet, Interval};
use stfm::distributions::{sample_inverse_gamma, sample_scaled_inv_chisq, RngStream};
use stfm::model::{Dataset, Location, ParamState, PriorConfig, VariancePrior};
use stfm::sampler::{Backend, Problem, Sampler};

use super::{ks_test, sample_cov};

pub struct Toy {
    pub ds: Dataset,
    pub designs: DesignSet,
    pub priors: PriorConfig,
    pub state: ParamState,
}

/// Three stations, three times, blocks with 2 and 1 repetitions.
pub fn toy() -> Toy {
    let mut rng = RngStream::new(99, 0);
    let locations = vec![
        Location {
            station_id: "a".into(),
            lat: -15.0,
            lon: -50.0,
        },
        Location {
            station_id: "b".into(),
            lat: -13.5,
            lon: -47.0,
        },
        Location {
            station_id: "c".into(),
            lat: -18.0,
            lon: -52.0,
        },
    ];
    let times = vec![1.0, 2.0, 4.0];
    let y: Vec<f64> = (0..27).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let ds = Dataset::new(vec![2, 1], locations, times.clone(), y).unwrap();
    let spec = BasisSpec {
        k_mu: 4,
        k_zeta: 4,
        k_gamma: 5,
        lat: Interval::new(-20.0, -12.0),
        lon: Interval::new(-53.0, -45.0),
        time: Interval::new(1.0, 4.0),
    };
    let designs = DesignSet::build(&spec, &ds.lats(), &ds.lons(), &times).unwrap();
    let priors = PriorConfig {
        beta_var: 4.0,
        sigma2_theta: VariancePrior::InverseGamma { a: 2.0, b: 0.5 },
        sigma2_vartheta: VariancePrior::InverseGamma { a: 1.5, b: 0.3 },
        omega2: VariancePrior::InverseGamma { a: 0.5, b: 1.0 },
        ..PriorConfig::default()
    };
    let mut state = ParamState::zeros(&designs, 2, 0.5);
    state.beta = DVector::from_fn(64, |_, _| rng.gen_range(-1.0..1.0));
    for t in state.theta.iter_mut().chain(state.vartheta.iter_mut()) {
        t.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    }
    state.sigma2_theta = vec![0.4, 1.3];
    state.sigma2_vartheta = vec![0.8, 0.25];
    state.omega2 = 1.7;
    state.phi = 3.0;
    state.varphi = 1.5;
    Toy {
        ds,
        designs,
        priors,
        state,
    }
}

impl Toy {
    pub fn problem(&self) -> Problem<'_> {
        Problem {
            ds: &self.ds,
            designs: &self.designs,
            priors: &self.priors,
            metric: DistanceMetric::Euclidean,
            kappa: self.state.kappa,
        }
    }

    /// `S ⊗ T` built directly from the kernels.
    fn unscaled_cov(&self) -> DMatrix<f64> {
        let coords = self.ds.coords();
        let s = matern_matrix(
            &DistanceMetric::Euclidean.matrix(&coords),
            &MaternParams::new(self.state.kappa, self.state.phi).unwrap(),
        );
        let t = temporal_matrix(
            &self.ds.times,
            &TemporalParams::new(self.state.varphi).unwrap(),
        );
        kron(&s, &t)
    }

    fn y_vec(&self, i: usize, j: usize) -> DVector<f64> {
        let s = self.ds.slice(i, j);
        DVector::from_iterator(s.len(), s.transpose().iter().copied())
    }

    fn slices(&self) -> Vec<(usize, usize)> {
        self.ds.slice_ids()
    }
}

fn moments(prec: DMatrix<f64>, rhs: DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let cov = prec.try_inverse().unwrap();
    let cov = (&cov + cov.transpose()) * 0.5;
    (&cov * rhs, cov)
}

pub fn beta_moments(t: &Toy) -> (DVector<f64>, DMatrix<f64>) {
    let ci = t.unscaled_cov().try_inverse().unwrap() / t.state.omega2;
    let (m, p, n) = (&t.designs.m, &t.designs.p, &t.designs.n);
    let k = m.ncols();
    let mut prec = DMatrix::identity(k, k) / t.priors.beta_var;
    let mut rhs = DVector::zeros(k);
    for (i, j) in t.slices() {
        let r = t.y_vec(i, j) - p * &t.state.theta[i] - n * &t.state.vartheta[i];
        prec += m.transpose() * &ci * m;
        rhs += m.transpose() * &ci * r;
    }
    moments(prec, rhs)
}

pub fn theta_moments(t: &Toy, i: usize) -> (DVector<f64>, DMatrix<f64>) {
    let ci = t.unscaled_cov().try_inverse().unwrap() / t.state.omega2;
    let (m, p, n) = (&t.designs.m, &t.designs.p, &t.designs.n);
    let k = p.ncols();
    let mut prec = DMatrix::identity(k, k) / t.state.sigma2_theta[i];
    let mut rhs = DVector::zeros(k);
    for j in 0..t.ds.reps[i] {
        let r = t.y_vec(i, j) - m * &t.state.beta - n * &t.state.vartheta[i];
        prec += p.transpose() * &ci * p;
        rhs += p.transpose() * &ci * r;
    }
    moments(prec, rhs)
}

pub fn vartheta_moments(t: &Toy, i: usize) -> (DVector<f64>, DMatrix<f64>) {
    let ci = t.unscaled_cov().try_inverse().unwrap() / t.state.omega2;
    let (m, p, n) = (&t.designs.m, &t.designs.p, &t.designs.n);
    let k = n.ncols();
    let mut prec = DMatrix::identity(k, k) / t.state.sigma2_vartheta[i];
    let mut rhs = DVector::zeros(k);
    for j in 0..t.ds.reps[i] {
        let r = t.y_vec(i, j) - m * &t.state.beta - p * &t.state.theta[i];
        prec += n.transpose() * &ci * n;
        rhs += n.transpose() * &ci * r;
    }
    moments(prec, rhs)
}

/// Inverse-gamma (shape, rate) of the ω² conditional.
pub fn omega2_params(t: &Toy) -> (f64, f64) {
    let ci = t.unscaled_cov().try_inverse().unwrap();
    let (m, p, n) = (&t.designs.m, &t.designs.p, &t.designs.n);
    let mut q = 0.0;
    for (i, j) in t.slices() {
        let r =
            t.y_vec(i, j) - m * &t.state.beta - p * &t.state.theta[i] - n * &t.state.vartheta[i];
        q += (r.transpose() * &ci * &r)[0];
    }
    let (a, b) = t.priors.omega2.as_inverse_gamma();
    let count = (t.ds.y.len()) as f64;
    (count / 2.0 + a, q / 2.0 + b)
}

#[derive(Debug)]
pub struct GaussianCheck {
    /// Joint MC mean error: `n (m̄ − μ)ᵀ Σ⁻¹ (m̄ − μ)` standardized against
    /// its χ²ₖ reference, in standard errors.
    pub mean_z: f64,
    /// Largest per-coordinate |MC mean − mean| in MC standard errors.
    pub max_mean_z: f64,
    /// Largest |MC cov − cov| relative to `sqrt(cov_aa cov_bb)`.
    pub max_cov_err: f64,
}

impl GaussianCheck {
    pub fn passed(&self) -> bool {
        self.mean_z < 3.0 && self.max_cov_err < 0.05
    }
}

pub fn check_gaussian(
    draws: &[Vec<f64>],
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
) -> GaussianCheck {
    let (m, c) = sample_cov(draws);
    let n = draws.len() as f64;
    let k = mean.len();
    let mut z: f64 = 0.0;
    let mut e: f64 = 0.0;
    for a in 0..k {
        z = z.max((m[a] - mean[a]).abs() / (cov[(a, a)] / n).sqrt());
        for b in 0..k {
            e = e.max((c[a][b] - cov[(a, b)]).abs() / (cov[(a, a)] * cov[(b, b)]).sqrt());
        }
    }
    let d = DVector::from_iterator(k, (0..k).map(|a| m[a] - mean[a]));
    let q = n * d.dot(&(cov.clone().cholesky().expect("SPD").solve(&d)));
    let mean_z = (q - k as f64) / (2.0 * k as f64).sqrt();
    GaussianCheck {
        mean_z,
        max_mean_z: z,
        max_cov_err: e,
    }
}

#[derive(Debug)]
pub struct ScalarCheck {
    pub mean_z: f64,
    pub ks_p: f64,
}

impl ScalarCheck {
    pub fn passed(&self) -> bool {
        self.mean_z < 3.0 && self.ks_p > 0.01
    }
}

/// Draws against an inverse-gamma(shape, rate) with finite variance.
pub fn check_inverse_gamma(draws: &[f64], shape: f64, rate: f64) -> ScalarCheck {
    let dist = InverseGamma::new(shape, rate).unwrap();
    let mean = rate / (shape - 1.0);
    let var = rate * rate / ((shape - 1.0).powi(2) * (shape - 2.0));
    let n = draws.len() as f64;
    let mc = draws.iter().sum::<f64>() / n;
    ScalarCheck {
        mean_z: (mc - mean).abs() / (var / n).sqrt(),
        ks_p: ks_test(draws, |x| dist.cdf(x)).1,
    }
}

pub struct OracleLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

fn gaussian_line(name: &str, c: GaussianCheck) -> OracleLine {
    OracleLine {
        name: name.into(),
        passed: c.passed(),
        detail: format!(
            "joint mean z {:.2} (< 3), max coordinate z {:.2}, max cov err {:.4} (< 0.05)",
            c.mean_z, c.max_mean_z, c.max_cov_err
        ),
    }
}

fn scalar_line(name: &str, c: ScalarCheck) -> OracleLine {
    OracleLine {
        name: name.into(),
        passed: c.passed(),
        detail: format!("mean z {:.2} (< 3), KS p {:.3} (> 0.01)", c.mean_z, c.ks_p),
    }
}

/// Every conjugate update in isolation, `m` draws each, against the dense
/// closed form.
pub fn conjugate_oracles(m: usize, seed: u64, backend: Backend) -> Vec<OracleLine> {
    let t = toy();
    let mut sampler = Sampler::new(t.problem(), backend).unwrap();
    let mut rng = RngStream::new(seed, 0);
    let mut out = Vec::new();

    let (mean, cov) = beta_moments(&t);
    let draws: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let mut st = t.state.clone();
            sampler.update_beta(&mut st, &mut rng).unwrap();
            st.beta.as_slice().to_vec()
        })
        .collect();
    out.push(gaussian_line("beta", check_gaussian(&draws, &mean, &cov)));

    for i in 0..2 {
        let (mean, cov) = theta_moments(&t, i);
        let draws: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let mut st = t.state.clone();
                sampler.update_theta_block(&mut st, i, &mut rng).unwrap();
                st.theta[i].as_slice().to_vec()
            })
            .collect();
        out.push(gaussian_line(
            &format!("theta_{}", i + 1),
            check_gaussian(&draws, &mean, &cov),
        ));

        let (mean, cov) = vartheta_moments(&t, i);
        let draws: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                let mut st = t.state.clone();
                sampler.update_vartheta_block(&mut st, i, &mut rng).unwrap();
                st.vartheta[i].as_slice().to_vec()
            })
            .collect();
        out.push(gaussian_line(
            &format!("vartheta_{}", i + 1),
            check_gaussian(&draws, &mean, &cov),
        ));

        let (a, b) = t.priors.sigma2_theta.as_inverse_gamma();
        let th = &t.state.theta[i];
        let (shape, rate) = (th.len() as f64 / 2.0 + a, th.norm_squared() / 2.0 + b);
        let draws: Vec<f64> = (0..m)
            .map(|_| {
                let mut st = t.state.clone();
                sampler.update_sigma2_theta(&mut st, i, &mut rng).unwrap();
                st.sigma2_theta[i]
            })
            .collect();
        out.push(scalar_line(
            &format!("sigma2_theta_{}", i + 1),
            check_inverse_gamma(&draws, shape, rate),
        ));

        let (a, b) = t.priors.sigma2_vartheta.as_inverse_gamma();
        let v = &t.state.vartheta[i];
        let (shape, rate) = (v.len() as f64 / 2.0 + a, v.norm_squared() / 2.0 + b);
        let draws: Vec<f64> = (0..m)
            .map(|_| {
                let mut st = t.state.clone();
                sampler
                    .update_sigma2_vartheta(&mut st, i, &mut rng)
                    .unwrap();
                st.sigma2_vartheta[i]
            })
            .collect();
        out.push(scalar_line(
            &format!("sigma2_vartheta_{}", i + 1),
            check_inverse_gamma(&draws, shape, rate),
        ));
    }

    let (shape, rate) = omega2_params(&t);
    let draws: Vec<f64> = (0..m)
        .map(|_| {
            let mut st = t.state.clone();
            sampler.update_omega2(&mut st, &mut rng).unwrap();
            st.omega2
        })
        .collect();
    out.push(scalar_line(
        "omega2",
        check_inverse_gamma(&draws, shape, rate),
    ));

    // Scaled-Inv-χ²(v, s²) is inverse-gamma(v/2, v s²/2).
    let (v, s2) = (7.0, 0.6);
    let draws: Vec<f64> = (0..m)
        .map(|_| sample_scaled_inv_chisq(v, s2, &mut rng).unwrap())
        .collect();
    out.push(scalar_line(
        "scaled_inv_chisq_identity",
        check_inverse_gamma(&draws, v / 2.0, v * s2 / 2.0),
    ));
    let draws: Vec<f64> = (0..m)
        .map(|_| sample_inverse_gamma(3.5, 2.0, &mut rng).unwrap())
        .collect();
    out.push(scalar_line(
        "inverse_gamma_sampler",
        check_inverse_gamma(&draws, 3.5, 2.0),
    ));
    out
}
