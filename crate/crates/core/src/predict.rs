//! Posterior predictive draws for a new repetition or a new location.
//!
//! For each stored draw the mean surface and block effects are evaluated at
//! the target and a fresh error vector `ε ~ N(0, ω² Σ_T)` is added; the
//! mixture over draws is the posterior predictive distribution.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::covariance::{factor_with_jitter, temporal_matrix, TemporalParams};
use crate::design::{eval_basis, BasisSpec};
use crate::diagnostics::quantile_sorted;
use crate::distributions::standard_normals;
use crate::error::{Error, Result};
use crate::model::{Dataset, ParamState};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictMode {
    /// Another repetition of block `block` at a training station.
    #[default]
    NewRepExistingBlock,
    /// A location not in the training set.
    NewLocation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionTarget {
    /// 0-based block index.
    pub block: usize,
    pub lat: f64,
    pub lon: f64,
    pub times: Vec<f64>,
    #[serde(default)]
    pub mode: PredictMode,
}

impl PredictionTarget {
    /// Checks the block index, the basis domain, and for
    /// [`PredictMode::NewRepExistingBlock`] that the coordinates belong to a
    /// training station.
    pub fn validate(&self, spec: &BasisSpec, n_blocks: usize, ds: Option<&Dataset>) -> Result<()> {
        if self.block >= n_blocks {
            return Err(Error::Domain(format!(
                "block {} out of range (model has {n_blocks})",
                self.block + 1
            )));
        }
        if self.times.is_empty() {
            return Err(Error::Config(
                "prediction target needs at least one time".into(),
            ));
        }
        let inside = |v: f64, lo: f64, hi: f64| v >= lo && v <= hi;
        if !inside(self.lat, spec.lat.min, spec.lat.max)
            || !inside(self.lon, spec.lon.min, spec.lon.max)
        {
            return Err(Error::Domain(format!(
                "target ({}, {}) lies outside the basis domain lat [{}, {}], lon [{}, {}]",
                self.lat, self.lon, spec.lat.min, spec.lat.max, spec.lon.min, spec.lon.max
            )));
        }
        if let Some(t) = self
            .times
            .iter()
            .find(|&&t| !inside(t, spec.time.min, spec.time.max))
        {
            return Err(Error::Domain(format!(
                "time {t} outside [{}, {}]",
                spec.time.min, spec.time.max
            )));
        }
        if let (PredictMode::NewRepExistingBlock, Some(ds)) = (self.mode, ds) {
            if !ds
                .locations
                .iter()
                .any(|l| l.lat == self.lat && l.lon == self.lon)
            {
                return Err(Error::Domain(format!(
                    "({}, {}) is not a training station; use new_location mode",
                    self.lat, self.lon
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDraws {
    pub times: Vec<f64>,
    /// `q × τ*`, one row per posterior draw.
    pub draws: DMatrix<f64>,
}

/// Basis rows of the target, shared by every draw.
struct TargetBasis {
    mu_space: DVector<f64>,
    mu_time: DMatrix<f64>,
    zeta_space: DVector<f64>,
    gamma_time: DMatrix<f64>,
}

fn target_basis(spec: &BasisSpec, t: &PredictionTarget) -> Result<TargetBasis> {
    let k = spec.bases()?;
    let mu_space = k.mu_space(&[t.lat], &[t.lon])?.row(0).transpose();
    let zeta_space = k.zeta_space(&[t.lat], &[t.lon])?.row(0).transpose();
    Ok(TargetBasis {
        mu_space,
        mu_time: eval_basis(&k.mu_time, &t.times)?,
        zeta_space,
        gamma_time: eval_basis(&k.gamma_time, &t.times)?,
    })
}

/// Noise-free predictive mean `Mβ + PΘ⁽ⁱ⁾ + Nϑ⁽ⁱ⁾` at the target for one draw.
fn target_mean(tb: &TargetBasis, st: &ParamState, block: usize) -> DVector<f64> {
    let k2 = tb.mu_space.len();
    let kt = tb.mu_time.ncols();
    let b = DMatrix::from_row_slice(k2, kt, st.beta.as_slice());
    let space = b.transpose() * &tb.mu_space;
    let mut m = &tb.mu_time * space;
    let s = tb.zeta_space.dot(&st.theta[block]);
    m += &tb.gamma_time * &st.vartheta[block];
    m.add_scalar_mut(s);
    m
}

/// One predictive draw per stored posterior draw.
pub fn posterior_predictive<R: Rng + ?Sized>(
    draws: &[ParamState],
    spec: &BasisSpec,
    target: &PredictionTarget,
    rng: &mut R,
) -> Result<PredictiveDraws> {
    if draws.is_empty() {
        return Err(Error::InsufficientData("no posterior draws".into()));
    }
    target.validate(spec, draws[0].n_blocks(), None)?;
    let tb = target_basis(spec, target)?;
    let tau = target.times.len();
    let mut out = DMatrix::zeros(draws.len(), tau);
    for (h, st) in draws.iter().enumerate() {
        let mean = target_mean(&tb, st, target.block);
        let t = temporal_matrix(&target.times, &TemporalParams::new(st.varphi)?);
        let f = factor_with_jitter(&t)?;
        let z = standard_normals(tau, rng);
        let y = mean + f.chol.l() * z * st.omega2.sqrt();
        out.set_row(h, &y.transpose());
    }
    Ok(PredictiveDraws {
        times: target.times.clone(),
        draws: out,
    })
}

/// Equal-tailed level-`level` interval per column (type-7 quantiles).
pub fn predictive_interval(draws: &DMatrix<f64>, level: f64) -> Result<Vec<(f64, f64)>> {
    if !(level > 0.0 && level <= 1.0) {
        return Err(Error::Config(format!(
            "interval level must lie in (0, 1], got {level}"
        )));
    }
    if draws.nrows() == 0 {
        return Err(Error::InsufficientData("no predictive draws".into()));
    }
    let a = (1.0 - level) / 2.0;
    Ok(draws
        .column_iter()
        .map(|c| {
            let mut s: Vec<f64> = c.iter().copied().collect();
            s.sort_by(|x, y| x.total_cmp(y));
            (quantile_sorted(&s, a), quantile_sorted(&s, 1.0 - a))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub time: f64,
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

pub fn summarize_predictive(p: &PredictiveDraws, level: f64) -> Result<Vec<PredictionRow>> {
    let iv = predictive_interval(&p.draws, level)?;
    Ok(p.times
        .iter()
        .zip(iv)
        .zip(p.draws.column_iter())
        .map(|((&time, (lo, hi)), c)| PredictionRow {
            time,
            mean: c.mean(),
            lo,
            hi,
        })
        .collect())
}
