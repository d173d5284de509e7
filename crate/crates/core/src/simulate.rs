//! Synthetic data and the scripted simulation studies.
//!
//! A study fixes the station geometry and the mean coefficients once
//! ([`draw_truth`], RNG stream 0 of the study seed); replicate `r` draws its
//! random effects and errors from stream `r + 1`.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{build_error_cov, DistanceMetric, MaternParams, TemporalParams};
use crate::design::{BasisSpec, DesignSet, Interval};
use crate::diagnostics::{
    gelman_rubin, quantile_sorted, scalar_names, scalar_traces, scalar_values, RHAT_THRESHOLD,
};
use crate::distributions::{standard_normals, RngStream};
use crate::error::{Error, Result};
use crate::model::{block_fit, Dataset, Location, ParamState, PriorConfig};
use crate::predict::{posterior_predictive, predictive_interval, PredictMode, PredictionTarget};
use crate::sampler::{fit_with_spec, ChainSamples, McmcConfig};
use crate::selection::{dic7, lpml};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub n: usize,
    pub tau: usize,
    pub reps: Vec<usize>,
    pub k_mu: usize,
    pub k_zeta: usize,
    pub k_gamma: usize,
    pub omega2: f64,
    pub sigma2_theta: Vec<f64>,
    pub sigma2_vartheta: Vec<f64>,
    pub phi: f64,
    pub varphi: f64,
    pub kappa: f64,
    /// Standard deviation of the iid normal mean coefficients.
    pub beta_sd: f64,
    /// Rectangle for uniform station coordinates; also the basis domain.
    pub lat: Interval,
    pub lon: Interval,
    pub metric: DistanceMetric,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n: 15,
            tau: 6,
            reps: vec![3, 2, 2],
            k_mu: 9,
            k_zeta: 5,
            k_gamma: 7,
            omega2: 11.02,
            sigma2_theta: vec![0.09, 0.06, 0.10],
            sigma2_vartheta: vec![0.62, 0.18, 1.05],
            phi: 705.0,
            varphi: 2.04,
            kappa: 0.2,
            beta_sd: 1.0,
            lat: Interval::new(-19.5, -12.5),
            lon: Interval::new(-53.0, -46.0),
            metric: DistanceMetric::Euclidean,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.tau == 0 {
            return Err(Error::Config(
                "need at least one location and one time".into(),
            ));
        }
        if self.reps.is_empty() || self.reps.contains(&0) {
            return Err(Error::Config(
                "every block needs at least one repetition".into(),
            ));
        }
        let blocks = self.reps.len();
        if self.sigma2_theta.len() != blocks || self.sigma2_vartheta.len() != blocks {
            return Err(Error::Config(format!(
                "{blocks} blocks but {} / {} block variances",
                self.sigma2_theta.len(),
                self.sigma2_vartheta.len()
            )));
        }
        let variances = self
            .sigma2_theta
            .iter()
            .chain(&self.sigma2_vartheta)
            .chain([&self.omega2, &self.beta_sd]);
        for &v in variances {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("variances must be >= 0, got {v}")));
            }
        }
        MaternParams::new(self.kappa, self.phi)?;
        TemporalParams::new(self.varphi)?;
        if !(self.lat.min < self.lat.max && self.lon.min < self.lon.max) {
            return Err(Error::Config("empty coordinate rectangle".into()));
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        (1..=self.tau).map(|t| t as f64).collect()
    }

    pub fn basis_spec(&self) -> BasisSpec {
        let time = if self.tau > 1 {
            Interval::new(1.0, self.tau as f64)
        } else {
            Interval::new(0.5, 1.5)
        };
        BasisSpec {
            k_mu: self.k_mu,
            k_zeta: self.k_zeta,
            k_gamma: self.k_gamma,
            lat: self.lat,
            lon: self.lon,
            time,
        }
    }
}

/// Quantities held fixed across the replicates of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTruth {
    pub spec: BasisSpec,
    pub locations: Vec<Location>,
    pub times: Vec<f64>,
    pub beta: DVector<f64>,
}

pub fn draw_truth(cfg: &SimConfig) -> Result<SimTruth> {
    cfg.validate()?;
    let mut rng = RngStream::new(cfg.seed, 0);
    let locations = (0..cfg.n)
        .map(|k| Location {
            station_id: format!("S{:03}", k + 1),
            lat: rng.gen_range(cfg.lat.min..cfg.lat.max),
            lon: rng.gen_range(cfg.lon.min..cfg.lon.max),
        })
        .collect();
    let spec = cfg.basis_spec();
    let beta = standard_normals(spec.beta_len(), &mut rng) * cfg.beta_sd;
    Ok(SimTruth {
        spec,
        locations,
        times: cfg.times(),
        beta,
    })
}

/// Replicate `r` of the study: random effects, errors and the true state.
pub fn generate_replicate(
    cfg: &SimConfig,
    truth: &SimTruth,
    r: usize,
) -> Result<(Dataset, ParamState)> {
    cfg.validate()?;
    let mut rng = RngStream::new(cfg.seed, r as u64 + 1);
    let lats: Vec<f64> = truth.locations.iter().map(|l| l.lat).collect();
    let lons: Vec<f64> = truth.locations.iter().map(|l| l.lon).collect();
    let designs = DesignSet::build(&truth.spec, &lats, &lons, &truth.times)?;
    let blocks = cfg.reps.len();
    let theta: Vec<DVector<f64>> = (0..blocks)
        .map(|i| standard_normals(truth.spec.theta_len(), &mut rng) * cfg.sigma2_theta[i].sqrt())
        .collect();
    let vartheta: Vec<DVector<f64>> = (0..blocks)
        .map(|i| {
            standard_normals(truth.spec.vartheta_len(), &mut rng) * cfg.sigma2_vartheta[i].sqrt()
        })
        .collect();
    let state = ParamState {
        beta: truth.beta.clone(),
        theta,
        vartheta,
        sigma2_theta: cfg.sigma2_theta.clone(),
        sigma2_vartheta: cfg.sigma2_vartheta.clone(),
        omega2: cfg.omega2,
        phi: cfg.phi,
        varphi: cfg.varphi,
        kappa: cfg.kappa,
    };
    let coords: Vec<(f64, f64)> = truth.locations.iter().map(|l| (l.lat, l.lon)).collect();
    let cov = if cfg.omega2 > 0.0 {
        Some(build_error_cov(
            &coords,
            &truth.times,
            cfg.omega2,
            &MaternParams::new(cfg.kappa, cfg.phi)?,
            &TemporalParams::new(cfg.varphi)?,
            cfg.metric,
        )?)
    } else {
        None
    };
    let mut y = Vec::with_capacity(cfg.reps.iter().sum::<usize>() * cfg.n * cfg.tau);
    for (i, &j) in cfg.reps.iter().enumerate() {
        let fit = block_fit(&designs, &state, i);
        for _ in 0..j {
            let slice = match &cov {
                Some(c) => &fit + c.sample(&mut rng),
                None => fit.clone(),
            };
            y.extend(slice.transpose().iter());
        }
    }
    let ds = Dataset::new(
        cfg.reps.clone(),
        truth.locations.clone(),
        truth.times.clone(),
        y,
    )?;
    Ok((ds, state))
}

/// Replicate 0 of a fresh study.
pub fn generate_dataset(cfg: &SimConfig) -> Result<(Dataset, ParamState, BasisSpec)> {
    let truth = draw_truth(cfg)?;
    let (ds, st) = generate_replicate(cfg, &truth, 0)?;
    Ok((ds, st, truth.spec))
}

/// A CSV-ready table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    fn markdown(&self) -> String {
        let mut s = format!("| {} |\n|", self.header.join(" | "));
        s.push_str(&"---|".repeat(self.header.len()));
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(s, "| {} |", r.join(" | "));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub study: String,
    /// Per-replicate detail.
    pub detail: Table,
    /// Aggregated rows (coverage, accuracy).
    pub summary: Table,
    pub notes: Vec<String>,
}

impl StudyReport {
    pub fn markdown(&self) -> String {
        let mut s = format!("# {}\n\n", self.study);
        for n in &self.notes {
            let _ = writeln!(s, "- {n}");
        }
        if !self.notes.is_empty() {
            s.push('\n');
        }
        s.push_str(&self.summary.markdown());
        s
    }

    /// Writes `<study>_detail.csv`, `<study>_summary.csv` and `<study>.md`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join(format!("{}_detail.csv", self.study)),
            self.detail.to_csv()?,
        )?;
        std::fs::write(
            dir.join(format!("{}_summary.csv", self.study)),
            self.summary.to_csv()?,
        )?;
        std::fs::write(dir.join(format!("{}.md", self.study)), self.markdown())?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub sim: SimConfig,
    pub mcmc: McmcConfig,
    pub priors: PriorConfig,
    pub replicates: usize,
    /// Credible / prediction interval level.
    pub level: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            mcmc: desk_mcmc(),
            priors: PriorConfig::default(),
            replicates: 20,
            level: 0.95,
        }
    }
}

/// Chain settings used for desk-scale studies.
pub fn desk_mcmc() -> McmcConfig {
    McmcConfig {
        n_iter: 6000,
        burn_in: 3000,
        thin: 5,
        n_chains: 1,
        ..McmcConfig::default()
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.mcmc.validate()?;
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config("level must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn mcmc_for(&self, r: usize) -> McmcConfig {
        McmcConfig {
            seed: self.mcmc.seed.wrapping_add(r as u64),
            ..self.mcmc.clone()
        }
    }
}

fn f(v: f64) -> String {
    format!("{v}")
}

/// Posterior interval summary of every scalar parameter of one fit.
struct ScalarEstimate {
    name: String,
    truth: f64,
    median: f64,
    lo: f64,
    hi: f64,
    rhat: Option<f64>,
}

fn scalar_estimates(
    chains: &[ChainSamples],
    truth: &ParamState,
    level: f64,
) -> Result<Vec<ScalarEstimate>> {
    let traces = scalar_traces(chains);
    if traces.is_empty() {
        return Err(Error::InsufficientData("fit produced no draws".into()));
    }
    let names = scalar_names(truth.n_blocks());
    let truths = scalar_values(truth);
    let a = (1.0 - level) / 2.0;
    Ok(traces
        .iter()
        .zip(names)
        .zip(truths)
        .map(|((tr, name), t)| {
            let mut pooled: Vec<f64> = tr.iter().flatten().copied().collect();
            pooled.sort_by(|x, y| x.total_cmp(y));
            ScalarEstimate {
                name,
                truth: t,
                median: quantile_sorted(&pooled, 0.5),
                lo: quantile_sorted(&pooled, a),
                hi: quantile_sorted(&pooled, 1.0 - a),
                rhat: gelman_rubin(tr).ok(),
            }
        })
        .collect())
}

fn fit_replicate(
    cfg: &StudyConfig,
    sim: &SimConfig,
    truth: &SimTruth,
    r: usize,
    priors: &PriorConfig,
) -> Result<(ParamState, Vec<ScalarEstimate>)> {
    let (ds, st) = generate_replicate(sim, truth, r)?;
    let fit = fit_with_spec(
        &ds,
        &truth.spec,
        sim.kappa,
        priors,
        &cfg.mcmc_for(r),
        sim.metric,
    )?;
    let est = scalar_estimates(&fit.chains, &st, cfg.level)?;
    Ok((st, est))
}

const ESTIMATE_HEADER: [&str; 8] = [
    "replicate",
    "parameter",
    "truth",
    "median",
    "lo",
    "hi",
    "covered",
    "rhat",
];

fn estimate_row(prefix: &[String], r: usize, e: &ScalarEstimate) -> Vec<String> {
    let mut row = prefix.to_vec();
    row.extend([
        (r + 1).to_string(),
        e.name.clone(),
        f(e.truth),
        f(e.median),
        f(e.lo),
        f(e.hi),
        (e.lo <= e.truth && e.truth <= e.hi).to_string(),
        e.rhat.map(f).unwrap_or_default(),
    ]);
    row
}

/// Coverage and median summaries from per-replicate estimates of one cell.
fn coverage_rows(
    prefix: &[String],
    results: &[Result<(ParamState, Vec<ScalarEstimate>)>],
) -> Vec<Vec<String>> {
    let ok: Vec<&Vec<ScalarEstimate>> = results
        .iter()
        .filter_map(|r| r.as_ref().ok().map(|x| &x.1))
        .collect();
    let failed = results.len() - ok.len();
    let Some(first) = ok.first() else {
        let mut row = prefix.to_vec();
        row.extend([
            "all".into(),
            String::new(),
            String::new(),
            String::new(),
            "0".into(),
            failed.to_string(),
            "true".into(),
        ]);
        return vec![row];
    };
    let mut out = Vec::new();
    for (k, e0) in first.iter().enumerate() {
        let est: Vec<&ScalarEstimate> = ok.iter().map(|v| &v[k]).collect();
        let covered = est
            .iter()
            .filter(|e| e.lo <= e.truth && e.truth <= e.hi)
            .count();
        let mut med: Vec<f64> = est.iter().map(|e| e.median).collect();
        med.sort_by(|a, b| a.total_cmp(b));
        let iqr = quantile_sorted(&med, 0.75) - quantile_sorted(&med, 0.25);
        let unconverged = est
            .iter()
            .any(|e| e.rhat.is_some_and(|r| r >= RHAT_THRESHOLD));
        let mut row = prefix.to_vec();
        row.extend([
            e0.name.clone(),
            f(covered as f64 / est.len() as f64),
            f(quantile_sorted(&med, 0.5)),
            f(iqr),
            est.len().to_string(),
            failed.to_string(),
            (failed > 0 || unconverged).to_string(),
        ]);
        out.push(row);
    }
    out
}

const COVERAGE_HEADER: [&str; 7] = [
    "parameter",
    "coverage",
    "median_of_medians",
    "iqr_of_medians",
    "replicates",
    "failed",
    "flagged",
];

fn header(prefix: &[&str], rest: &[&str]) -> Vec<String> {
    prefix.iter().chain(rest).map(|s| s.to_string()).collect()
}

/// Parameter recovery under each prior setting.
pub fn run_prior_sensitivity(
    cfg: &StudyConfig,
    priors: &[(String, PriorConfig)],
) -> Result<StudyReport> {
    cfg.validate()?;
    if priors.is_empty() {
        return Err(Error::Config("no prior settings given".into()));
    }
    let truth = draw_truth(&cfg.sim)?;
    let mut detail = Table::new("detail", &[]);
    detail.header = header(&["prior"], &ESTIMATE_HEADER);
    let mut summary = Table::new("summary", &[]);
    summary.header = header(&["prior"], &COVERAGE_HEADER);
    let mut notes = vec![format!(
        "{} replicates, level {}, beta drawn once from N(0, {}²)",
        cfg.replicates, cfg.level, cfg.sim.beta_sd
    )];
    for (label, p) in priors {
        p.validate(truth.spec.beta_len())?;
        let results: Vec<_> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| fit_replicate(cfg, &cfg.sim, &truth, r, p))
            .collect();
        let prefix = vec![label.clone()];
        for (r, res) in results.iter().enumerate() {
            match res {
                Ok((_, est)) => detail
                    .rows
                    .extend(est.iter().map(|e| estimate_row(&prefix, r, e))),
                Err(e) => notes.push(format!("prior {label}, replicate {}: {e}", r + 1)),
            }
        }
        summary.rows.extend(coverage_rows(&prefix, &results));
    }
    Ok(StudyReport {
        study: "prior_sensitivity".into(),
        detail,
        summary,
        notes,
    })
}

/// One cell of the size grid: locations, times, repetitions per block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeCell {
    pub n: usize,
    pub tau: usize,
    pub reps: Vec<usize>,
}

/// Cross product of the three grids, `n` slowest.
pub fn size_cells(n_grid: &[usize], tau_grid: &[usize], j_grid: &[Vec<usize>]) -> Vec<SizeCell> {
    let mut out = Vec::new();
    for &n in n_grid {
        for &tau in tau_grid {
            for reps in j_grid {
                out.push(SizeCell {
                    n,
                    tau,
                    reps: reps.clone(),
                });
            }
        }
    }
    out
}

/// Recovery over a grid of sample sizes. Failed or unconverged cells are
/// flagged, not fatal.
pub fn run_size_sensitivity(
    cfg: &StudyConfig,
    n_grid: &[usize],
    tau_grid: &[usize],
    j_grid: &[Vec<usize>],
) -> Result<StudyReport> {
    cfg.validate()?;
    let cells = size_cells(n_grid, tau_grid, j_grid);
    if cells.is_empty() {
        return Err(Error::Config("empty size grid".into()));
    }
    let mut detail = Table::new("detail", &[]);
    detail.header = header(&["n", "tau", "reps"], &ESTIMATE_HEADER);
    let mut summary = Table::new("summary", &[]);
    summary.header = header(&["n", "tau", "reps"], &COVERAGE_HEADER);
    let mut notes = vec![format!(
        "{} replicates per cell, level {}",
        cfg.replicates, cfg.level
    )];
    for cell in &cells {
        let sim = SimConfig {
            n: cell.n,
            tau: cell.tau,
            reps: cell.reps.clone(),
            ..cfg.sim.clone()
        };
        let prefix = vec![
            cell.n.to_string(),
            cell.tau.to_string(),
            cell.reps
                .iter()
                .map(|j| j.to_string())
                .collect::<Vec<_>>()
                .join("-"),
        ];
        let truth = match draw_truth(&sim) {
            Ok(t) => t,
            Err(e) => {
                notes.push(format!("cell {}: {e}", prefix.join("/")));
                continue;
            }
        };
        let results: Vec<_> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| fit_replicate(cfg, &sim, &truth, r, &cfg.priors))
            .collect();
        for (r, res) in results.iter().enumerate() {
            match res {
                Ok((_, est)) => detail
                    .rows
                    .extend(est.iter().map(|e| estimate_row(&prefix, r, e))),
                Err(e) => notes.push(format!(
                    "cell {}, replicate {}: {e}",
                    prefix.join("/"),
                    r + 1
                )),
            }
        }
        summary.rows.extend(coverage_rows(&prefix, &results));
    }
    Ok(StudyReport {
        study: "size_sensitivity".into(),
        detail,
        summary,
        notes,
    })
}

/// For each true smoothness, simulate replicates, fit every candidate in
/// `kappa_grid` and record which one each criterion picks.
pub fn run_kappa_recovery(
    cfg: &StudyConfig,
    true_kappas: &[f64],
    kappa_grid: &[f64],
) -> Result<StudyReport> {
    cfg.validate()?;
    if kappa_grid.is_empty() || true_kappas.is_empty() {
        return Err(Error::Config("empty smoothness grid".into()));
    }
    let mut detail = Table::new(
        "detail",
        &[
            "true_kappa",
            "replicate",
            "candidate_kappa",
            "lpml",
            "dic7",
            "error",
        ],
    );
    let mut summary = Table::new(
        "summary",
        &[
            "true_kappa",
            "replicates",
            "accuracy_lpml",
            "accuracy_dic7",
            "failed",
        ],
    );
    let notes = vec![format!(
        "{} replicates per true smoothness, candidates {:?}",
        cfg.replicates, kappa_grid
    )];
    for &true_kappa in true_kappas {
        let sim = SimConfig {
            kappa: true_kappa,
            ..cfg.sim.clone()
        };
        let truth = draw_truth(&sim)?;
        let per_rep: Vec<Vec<Result<(f64, f64)>>> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let (ds, _) = match generate_replicate(&sim, &truth, r) {
                    Ok(x) => x,
                    Err(e) => return vec![Err(e)],
                };
                kappa_grid
                    .iter()
                    .map(|&cand| {
                        let fit = fit_with_spec(
                            &ds,
                            &truth.spec,
                            cand,
                            &cfg.priors,
                            &cfg.mcmc_for(r),
                            sim.metric,
                        )?;
                        Ok((lpml(&fit.chains)?, dic7(&fit.chains)?))
                    })
                    .collect()
            })
            .collect();
        let (mut hit_l, mut hit_d, mut failed) = (0usize, 0usize, 0usize);
        for (r, scores) in per_rep.iter().enumerate() {
            for (k, s) in scores.iter().enumerate() {
                let cand = kappa_grid.get(k).copied().unwrap_or(f64::NAN);
                match s {
                    Ok((l, d)) => detail.rows.push(vec![
                        f(true_kappa),
                        (r + 1).to_string(),
                        f(cand),
                        f(*l),
                        f(*d),
                        String::new(),
                    ]),
                    Err(e) => detail.rows.push(vec![
                        f(true_kappa),
                        (r + 1).to_string(),
                        f(cand),
                        String::new(),
                        String::new(),
                        e.to_string(),
                    ]),
                }
            }
            if scores.len() != kappa_grid.len() || scores.iter().any(|s| s.is_err()) {
                failed += 1;
                continue;
            }
            let vals: Vec<(f64, f64)> = scores
                .iter()
                .map(|s| *s.as_ref().expect("checked"))
                .collect();
            let best_l = (0..vals.len())
                .max_by(|&a, &b| vals[a].0.total_cmp(&vals[b].0).then(b.cmp(&a)))
                .expect("non-empty");
            let best_d = (0..vals.len())
                .min_by(|&a, &b| vals[a].1.total_cmp(&vals[b].1).then(a.cmp(&b)))
                .expect("non-empty");
            hit_l += (kappa_grid[best_l] == true_kappa) as usize;
            hit_d += (kappa_grid[best_d] == true_kappa) as usize;
        }
        let n = cfg.replicates as f64;
        summary.rows.push(vec![
            f(true_kappa),
            cfg.replicates.to_string(),
            f(hit_l as f64 / n),
            f(hit_d as f64 / n),
            failed.to_string(),
        ]);
    }
    Ok(StudyReport {
        study: "kappa_recovery".into(),
        detail,
        summary,
        notes,
    })
}

/// Split a replicate into training data (last station and last repetition
/// of every block removed) and the held-out surfaces.
pub fn holdout_split(ds: &Dataset) -> Result<(Dataset, Vec<DMatrix<f64>>)> {
    if ds.n_locations() < 2 || ds.reps.iter().any(|&j| j < 2) {
        return Err(Error::Config(
            "holdout needs at least 2 stations and 2 repetitions per block".into(),
        ));
    }
    let n = ds.n_locations();
    let reps: Vec<usize> = ds.reps.iter().map(|j| j - 1).collect();
    let mut y = Vec::new();
    let mut held = Vec::new();
    for (i, &j) in ds.reps.iter().enumerate() {
        for jj in 0..j {
            let s = ds.slice(i, jj);
            if jj + 1 == j {
                held.push(s);
            } else {
                y.extend(s.rows(0, n - 1).transpose().iter());
            }
        }
    }
    let train = Dataset::new(reps, ds.locations[..n - 1].to_vec(), ds.times.clone(), y)?;
    Ok((train, held))
}

/// Held-out repetition and held-out station: empirical coverage of
/// predictive intervals.
pub fn run_prediction_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let truth = draw_truth(&cfg.sim)?;
    let mut detail = Table::new(
        "detail",
        &[
            "replicate",
            "block",
            "station",
            "mode",
            "time",
            "truth",
            "mean",
            "lo",
            "hi",
            "covered",
        ],
    );
    let mut summary = Table::new("summary", &["block", "points", "coverage"]);
    let blocks = cfg.sim.reps.len();
    let results: Vec<Result<Vec<Vec<String>>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let (ds, _) = generate_replicate(&cfg.sim, &truth, r)?;
            let (train, held) = holdout_split(&ds)?;
            let fit = fit_with_spec(
                &train,
                &truth.spec,
                cfg.sim.kappa,
                &cfg.priors,
                &cfg.mcmc_for(r),
                cfg.sim.metric,
            )?;
            let draws: Vec<ParamState> = fit
                .chains
                .iter()
                .flat_map(|c| c.draws.iter().cloned())
                .collect();
            let mut rng = RngStream::new(cfg.mcmc.seed.wrapping_add(r as u64), 1 << 32);
            let mut rows = Vec::new();
            for (i, surface) in held.iter().enumerate() {
                for (k, loc) in ds.locations.iter().enumerate() {
                    let mode = if k + 1 == ds.n_locations() {
                        PredictMode::NewLocation
                    } else {
                        PredictMode::NewRepExistingBlock
                    };
                    let target = PredictionTarget {
                        block: i,
                        lat: loc.lat,
                        lon: loc.lon,
                        times: ds.times.clone(),
                        mode,
                    };
                    let p = posterior_predictive(&draws, &truth.spec, &target, &mut rng)?;
                    let iv = predictive_interval(&p.draws, cfg.level)?;
                    for (t, (lo, hi)) in iv.into_iter().enumerate() {
                        let y = surface[(k, t)];
                        rows.push(vec![
                            (r + 1).to_string(),
                            (i + 1).to_string(),
                            loc.station_id.clone(),
                            match mode {
                                PredictMode::NewLocation => "new_location",
                                PredictMode::NewRepExistingBlock => "new_rep",
                            }
                            .to_string(),
                            f(ds.times[t]),
                            f(y),
                            f(p.draws.column(t).mean()),
                            f(lo),
                            f(hi),
                            (lo <= y && y <= hi).to_string(),
                        ]);
                    }
                }
            }
            Ok(rows)
        })
        .collect();
    let mut notes = vec![format!(
        "{} replicates, level {}",
        cfg.replicates, cfg.level
    )];
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(rows) => detail.rows.extend(rows),
            Err(e) => notes.push(format!("replicate {}: {e}", r + 1)),
        }
    }
    let mut all = (0usize, 0usize);
    for i in 0..blocks {
        let rows: Vec<&Vec<String>> = detail
            .rows
            .iter()
            .filter(|r| r[1] == (i + 1).to_string())
            .collect();
        let hits = rows.iter().filter(|r| r[9] == "true").count();
        all.0 += hits;
        all.1 += rows.len();
        let cov = if rows.is_empty() {
            f64::NAN
        } else {
            hits as f64 / rows.len() as f64
        };
        summary
            .rows
            .push(vec![(i + 1).to_string(), rows.len().to_string(), f(cov)]);
    }
    let cov = if all.1 == 0 {
        f64::NAN
    } else {
        all.0 as f64 / all.1 as f64
    };
    summary
        .rows
        .push(vec!["all".into(), all.1.to_string(), f(cov)]);
    Ok(StudyReport {
        study: "prediction".into(),
        detail,
        summary,
        notes,
    })
}

/// Overall coverage reported by [`run_prediction_study`].
pub fn prediction_coverage(report: &StudyReport) -> Option<f64> {
    report
        .summary
        .rows
        .iter()
        .find(|r| r[0] == "all")
        .and_then(|r| r[2].parse().ok())
}
