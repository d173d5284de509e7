//! Random variates and log-densities, plus a seedable per-chain RNG stream.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// ChaCha20 keyed by `seed`, one independent stream per `stream_id`.
#[derive(Debug, Clone)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

pub fn standard_normals<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(k, |_, _| rng.sample(StandardNormal))
}

/// `mean + L z`, `z` iid standard normal.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov_chol: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let k = mean.len();
    if cov_chol.nrows() != k || cov_chol.ncols() != k {
        return Err(Error::Dimension(format!(
            "mean of length {k} with a {}×{} factor",
            cov_chol.nrows(),
            cov_chol.ncols()
        )));
    }
    let z = standard_normals(k, rng);
    Ok(mean + cov_chol * z)
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be > 0, got {v}")))
    }
}

/// Gamma variate with mean `shape · scale`.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    check_positive("gamma shape", shape)?;
    check_positive("gamma scale", scale)?;
    let g = Gamma::new(shape, scale).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(g.sample(rng))
}

/// Inverse-gamma variate, density ∝ x^{-a-1} e^{-b/x}.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    check_positive("inverse-gamma shape", a)?;
    check_positive("inverse-gamma rate", b)?;
    let g = sample_gamma(a, 1.0, rng)?;
    let x = b / g;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(Error::Numerical(format!(
            "inverse-gamma draw overflowed (a={a}, b={b})"
        )))
    }
}

/// Scaled inverse chi-square, identical to `InverseGamma(v/2, v s²/2)`.
pub fn sample_scaled_inv_chisq<R: Rng + ?Sized>(v: f64, s2: f64, rng: &mut R) -> Result<f64> {
    check_positive("degrees of freedom", v)?;
    check_positive("scale", s2)?;
    sample_inverse_gamma(v / 2.0, v * s2 / 2.0, rng)
}

pub fn logpdf_gamma(x: f64, shape: f64, scale: f64) -> f64 {
    if x.is_nan() || x <= 0.0 || x.is_infinite() {
        return f64::NEG_INFINITY;
    }
    (shape - 1.0) * x.ln() - x / scale - ln_gamma(shape) - shape * scale.ln()
}

pub fn logpdf_inverse_gamma(x: f64, a: f64, b: f64) -> f64 {
    if x.is_nan() || x <= 0.0 || x.is_infinite() {
        return f64::NEG_INFINITY;
    }
    a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
}

pub fn logpdf_scaled_inv_chisq(x: f64, v: f64, s2: f64) -> f64 {
    logpdf_inverse_gamma(x, v / 2.0, v * s2 / 2.0)
}

pub fn logpdf_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

pub fn logpdf_mvn(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let k = x.len();
    if mean.len() != k || cov.nrows() != k || cov.ncols() != k {
        return Err(Error::Dimension("logpdf_mvn dimensions disagree".into()));
    }
    let chol = cov.clone().cholesky().ok_or(Error::NotPositiveDefinite {
        size: k,
        jitter: 0.0,
        min_diag: cov.diagonal().min(),
        max_offdiag: f64::NAN,
    })?;
    let d = x - mean;
    let w = chol
        .l_dirty()
        .solve_lower_triangular(&d)
        .expect("positive Cholesky diagonal");
    let logdet = 2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>();
    Ok(-0.5 * (k as f64 * LN_2PI + logdet + w.norm_squared()))
}
