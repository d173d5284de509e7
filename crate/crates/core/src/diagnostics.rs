//! Convergence diagnostics, posterior summaries and coverage.
//!
//! Quantiles use linear interpolation between order statistics
//! (`h = (N − 1) p`, Hyndman–Fan type 7).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::covariance::factor_with_jitter;
use crate::error::{Error, Result};
use crate::model::ParamState;
use crate::sampler::ChainSamples;

/// Threshold on R̂ used for the convergence verdict.
pub const RHAT_THRESHOLD: f64 = 1.1;

const MIN_DRAWS: usize = 10;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

fn check_chains<T: AsRef<[f64]>>(chains: &[T]) -> Result<usize> {
    if chains.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 chains, got {}",
            chains.len()
        )));
    }
    let n = chains.iter().map(|c| c.as_ref().len()).min().unwrap_or(0);
    if n < MIN_DRAWS {
        return Err(Error::InsufficientData(format!(
            "need at least {MIN_DRAWS} draws per chain, got {n}"
        )));
    }
    Ok(n)
}

/// Potential scale reduction factor `√((W(n−1)/n + B/n) / W)`. Chains of
/// unequal length are truncated to the shortest.
pub fn gelman_rubin<T: AsRef<[f64]>>(chains: &[T]) -> Result<f64> {
    let n = check_chains(chains)?;
    let m = chains.len() as f64;
    let nf = n as f64;
    let seqs: Vec<&[f64]> = chains.iter().map(|c| &c.as_ref()[..n]).collect();
    let means: Vec<f64> = seqs.iter().map(|s| mean(s)).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nf * means.iter().map(|v| (v - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let w = seqs.iter().map(|s| var(s)).sum::<f64>() / m;
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok(((w * (nf - 1.0) / nf + b / nf) / w).sqrt())
}

/// Brooks–Gelman multivariate PSRF. `chains[c][t]` is the parameter vector
/// of chain `c` at draw `t`. Components that are constant across all draws
/// are dropped.
pub fn multivariate_psrf(chains: &[Vec<Vec<f64>>]) -> Result<f64> {
    let n = check_chains(
        &chains
            .iter()
            .map(|c| vec![0.0; c.len()])
            .collect::<Vec<_>>(),
    )?;
    let m = chains.len();
    let p_all = chains[0][0].len();
    if chains.iter().any(|c| c.iter().any(|d| d.len() != p_all)) {
        return Err(Error::Dimension(
            "parameter vectors differ in length".into(),
        ));
    }
    let keep: Vec<usize> = (0..p_all)
        .filter(|&k| {
            let first = chains[0][0][k];
            chains.iter().any(|c| c[..n].iter().any(|d| d[k] != first))
        })
        .collect();
    if keep.is_empty() {
        return Ok(1.0);
    }
    let p = keep.len();
    let (nf, mf) = (n as f64, m as f64);
    let chain_means: Vec<Vec<f64>> = chains
        .iter()
        .map(|c| {
            keep.iter()
                .map(|&k| c[..n].iter().map(|d| d[k]).sum::<f64>() / nf)
                .collect()
        })
        .collect();
    let grand: Vec<f64> = (0..p)
        .map(|a| chain_means.iter().map(|cm| cm[a]).sum::<f64>() / mf)
        .collect();
    let mut w = DMatrix::zeros(p, p);
    for (c, cm) in chains.iter().zip(&chain_means) {
        for d in &c[..n] {
            for a in 0..p {
                let da = d[keep[a]] - cm[a];
                for b in 0..p {
                    w[(a, b)] += da * (d[keep[b]] - cm[b]);
                }
            }
        }
    }
    w /= mf * (nf - 1.0);
    let mut b_over_n = DMatrix::zeros(p, p);
    for cm in &chain_means {
        for a in 0..p {
            for b in 0..p {
                b_over_n[(a, b)] += (cm[a] - grand[a]) * (cm[b] - grand[b]);
            }
        }
    }
    b_over_n /= mf - 1.0;
    // Largest eigenvalue of W⁻¹ B/n via the symmetric form L⁻¹ (B/n) L⁻ᵀ.
    let f = factor_with_jitter(&w)?;
    let l = f.chol.l();
    let x = l
        .solve_lower_triangular(&b_over_n)
        .ok_or_else(|| Error::Numerical("singular within-chain covariance".into()))?;
    let y = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| Error::Numerical("singular within-chain covariance".into()))?;
    let sym = (&y + y.transpose()) * 0.5;
    let lambda = sym.symmetric_eigenvalues().max();
    Ok(((nf - 1.0) / nf + (mf + 1.0) / mf * lambda).sqrt())
}

/// Sample autocorrelation at `lag` (biased normalisation, lag 0 gives 1).
pub fn autocorr(series: &[f64], lag: usize) -> f64 {
    let n = series.len();
    if lag >= n {
        return 0.0;
    }
    let m = mean(series);
    let c0: f64 = series.iter().map(|v| (v - m).powi(2)).sum();
    if c0 == 0.0 {
        return if lag == 0 { 1.0 } else { 0.0 };
    }
    let ck: f64 = (0..n - lag)
        .map(|t| (series[t] - m) * (series[t + lag] - m))
        .sum();
    ck / c0
}

/// Effective sample size with Geyer's initial monotone positive sequence,
/// capped at the series length.
pub fn ess(series: &[f64]) -> f64 {
    let n = series.len();
    if n < 4 {
        return n as f64;
    }
    let m = mean(series);
    if series.iter().all(|v| *v == m) {
        return n as f64;
    }
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while k + 1 < n {
        let pair = autocorr(series, k) + autocorr(series, k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 2;
    }
    let tau = -1.0 + 2.0 * sum;
    (n as f64 / tau.max(1e-12)).min(n as f64)
}

/// Type-7 quantile of unsorted data.
pub fn quantile(x: &[f64], p: f64) -> f64 {
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&s, p)
}

pub fn quantile_sorted(s: &[f64], p: f64) -> f64 {
    assert!(!s.is_empty(), "quantile of empty data");
    let h = (s.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    s[lo] + (h - lo as f64) * (s[hi] - s[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub q025: f64,
    pub q975: f64,
    /// `None` with fewer than two chains.
    pub rhat: Option<f64>,
    pub ess: f64,
}

/// Summary of one scalar parameter across chains (draws pooled).
pub fn summarize_param<T: AsRef<[f64]>>(name: &str, chains: &[T]) -> Result<ParamSummary> {
    let pooled: Vec<f64> = chains
        .iter()
        .flat_map(|c| c.as_ref().iter().copied())
        .collect();
    if pooled.is_empty() {
        return Err(Error::InsufficientData(format!("no draws for {name}")));
    }
    let mut sorted = pooled.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let m = mean(&pooled);
    let sd = if pooled.len() > 1 {
        var(&pooled).sqrt()
    } else {
        0.0
    };
    let rhat = gelman_rubin(chains).ok();
    let ess = chains.iter().map(|c| ess(c.as_ref())).sum();
    Ok(ParamSummary {
        name: name.to_string(),
        mean: m,
        median: quantile_sorted(&sorted, 0.5),
        sd,
        q025: quantile_sorted(&sorted, 0.025),
        q975: quantile_sorted(&sorted, 0.975),
        rhat,
        ess,
    })
}

/// Names of the scalar (variance and range) parameters for `n_blocks`.
pub fn scalar_names(n_blocks: usize) -> Vec<String> {
    let mut v: Vec<String> = (1..=n_blocks)
        .map(|i| format!("sigma2_theta_{i}"))
        .collect();
    v.extend((1..=n_blocks).map(|i| format!("sigma2_vartheta_{i}")));
    v.extend(["omega2", "phi", "varphi"].map(String::from));
    v
}

pub fn scalar_values(st: &ParamState) -> Vec<f64> {
    let mut v = st.sigma2_theta.clone();
    v.extend(&st.sigma2_vartheta);
    v.extend([st.omega2, st.phi, st.varphi]);
    v
}

/// `traces[k][c]` is the trace of scalar parameter `k` in chain `c`.
pub fn scalar_traces(chains: &[ChainSamples]) -> Vec<Vec<Vec<f64>>> {
    let Some(first) = chains.iter().find_map(|c| c.draws.first()) else {
        return Vec::new();
    };
    let p = scalar_values(first).len();
    (0..p)
        .map(|k| {
            chains
                .iter()
                .map(|c| c.draws.iter().map(|d| scalar_values(d)[k]).collect())
                .collect()
        })
        .collect()
}

/// Summaries of every scalar parameter.
pub fn summarize(chains: &[ChainSamples]) -> Result<Vec<ParamSummary>> {
    let first = chains
        .iter()
        .find_map(|c| c.draws.first())
        .ok_or_else(|| Error::InsufficientData("no draws".into()))?;
    let names = scalar_names(first.n_blocks());
    scalar_traces(chains)
        .iter()
        .zip(&names)
        .map(|(tr, name)| summarize_param(name, tr))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub config_digest: String,
    pub n_chains: usize,
    pub draws_per_chain: Vec<usize>,
    pub rhat: Vec<(String, f64)>,
    pub max_rhat: f64,
    pub multivariate_psrf: Option<f64>,
    pub threshold: f64,
    pub converged: bool,
}

/// Errors when the chains carry different config digests.
pub fn convergence(chains: &[ChainSamples]) -> Result<ConvergenceReport> {
    if let Some(c) = chains
        .iter()
        .find(|c| c.meta.config_digest != chains[0].meta.config_digest)
    {
        return Err(Error::Config(format!(
            "chains come from different configs ({} vs {})",
            chains[0].meta.config_digest, c.meta.config_digest
        )));
    }
    let summaries = summarize(chains)?;
    let mut rhat = Vec::new();
    for s in &summaries {
        let r = s.rhat.ok_or_else(|| {
            Error::InsufficientData("R̂ needs at least 2 chains with 10 draws each".into())
        })?;
        rhat.push((s.name.clone(), r));
    }
    let max_rhat = rhat
        .iter()
        .map(|(_, r)| *r)
        .fold(f64::NEG_INFINITY, f64::max);
    let vectors: Vec<Vec<Vec<f64>>> = chains
        .iter()
        .map(|c| c.draws.iter().map(scalar_values).collect())
        .collect();
    let mpsrf = multivariate_psrf(&vectors).ok();
    Ok(ConvergenceReport {
        config_digest: chains[0].meta.config_digest.clone(),
        n_chains: chains.len(),
        draws_per_chain: chains.iter().map(|c| c.len()).collect(),
        rhat,
        max_rhat,
        multivariate_psrf: mpsrf,
        threshold: RHAT_THRESHOLD,
        converged: max_rhat < RHAT_THRESHOLD,
    })
}

/// Fraction of intervals containing their truth (closed intervals).
pub fn coverage(intervals: &[(f64, f64)], truths: &[f64]) -> Result<f64> {
    if intervals.len() != truths.len() {
        return Err(Error::Dimension(format!(
            "{} intervals for {} truths",
            intervals.len(),
            truths.len()
        )));
    }
    if intervals.is_empty() {
        return Err(Error::InsufficientData("no intervals".into()));
    }
    let hits = intervals
        .iter()
        .zip(truths)
        .filter(|((lo, hi), t)| lo <= *t && *t <= hi)
        .count();
    Ok(hits as f64 / truths.len() as f64)
}
