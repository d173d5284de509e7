//! Subcommand implementations. Each writes only under `output_dir` and
//! returns a short JSON summary for stdout.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use stfm::design::{BasisSpec, DesignSet};
use stfm::diagnostics::{convergence, summarize, ParamSummary};
use stfm::distributions::RngStream;
use stfm::model::ParamState;
use stfm::predict::{posterior_predictive, summarize_predictive, PredictMode};
use stfm::sampler::{run_chain, ChainSamples, Problem};
use stfm::selection::grid_select;
use stfm::simulate::{
    generate_dataset, run_kappa_recovery, run_prediction_study, run_prior_sensitivity,
    run_size_sensitivity, StudyConfig,
};
use stfm::{Error, Result};

use crate::chains::{read_run, write_chain, ChainStatus};
use crate::config::RunConfig;
use crate::ingest::{ingest_path, LabeledDataset};

pub const STUDIES: [&str; 4] = [
    "prior_sensitivity",
    "size_sensitivity",
    "kappa_recovery",
    "prediction",
];
const DEFAULT_KAPPA_CANDIDATES: [f64; 5] = [0.2, 0.5, 1.0, 1.5, 2.0];

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

/// `run_<command>.json`: the resolved config and its digest.
fn write_run_record(cfg: &RunConfig, command: &str) -> Result<String> {
    std::fs::create_dir_all(&cfg.output_dir)?;
    let digest = cfg.digest();
    write_json(
        &cfg.output_dir
            .join(format!("run_{}.json", command.replace(' ', "_"))),
        &json!({ "command": command, "config_digest": digest, "config": cfg }),
    )?;
    Ok(digest)
}

fn load_dataset(cfg: &RunConfig) -> Result<LabeledDataset> {
    ingest_path(cfg.require_dataset()?, cfg.month_names)
}

fn basis_spec(
    cfg: &RunConfig,
    ld: &LabeledDataset,
    counts: (usize, usize, usize),
) -> Result<BasisSpec> {
    let ds = &ld.data;
    BasisSpec::from_coords(
        &ds.lats(),
        &ds.lons(),
        &ds.times,
        counts,
        cfg.fit.spatial_margin,
        cfg.fit.time_margin,
    )
}

fn summary_csv(rows: &[ParamSummary]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "parameter",
        "mean",
        "median",
        "sd",
        "q025",
        "q975",
        "rhat",
        "ess",
    ])?;
    for s in rows {
        w.write_record([
            s.name.clone(),
            s.mean.to_string(),
            s.median.to_string(),
            s.sd.to_string(),
            s.q025.to_string(),
            s.q975.to_string(),
            s.rhat.map(|r| r.to_string()).unwrap_or_default(),
            s.ess.to_string(),
        ])?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Summary table and, with two or more chains, the convergence verdict.
fn write_diagnostics(dir: &Path, chains: &[ChainSamples]) -> Result<Value> {
    let rows = summarize(chains)?;
    std::fs::write(dir.join("summary.csv"), summary_csv(&rows)?)?;
    match convergence(chains) {
        Ok(rep) => {
            write_json(&dir.join("convergence.json"), &rep)?;
            Ok(json!({ "converged": rep.converged, "max_rhat": rep.max_rhat }))
        }
        Err(Error::InsufficientData(msg)) => Ok(json!({ "converged": null, "note": msg })),
        Err(e) => Err(e),
    }
}

pub fn simulate(cfg: &RunConfig) -> Result<Value> {
    let sim = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("config has no `simulate` section".into()))?;
    let digest = write_run_record(cfg, "simulate")?;
    let (ds, truth, spec) = generate_dataset(sim)?;
    let path = cfg.output_dir.join("dataset.csv");
    LabeledDataset::unlabeled(ds.clone()).export_path(&path)?;
    write_json(
        &cfg.output_dir.join("truth.json"),
        &json!({ "config_digest": digest, "basis": spec, "state": truth }),
    )?;
    Ok(json!({ "dataset": path, "observations": ds.y.len(), "config_digest": digest }))
}

pub fn fit(cfg: &RunConfig) -> Result<Value> {
    let ld = load_dataset(cfg)?;
    let ds = &ld.data;
    let spec = basis_spec(cfg, &ld, cfg.basis.tuple())?;
    let designs = DesignSet::build(&spec, &ds.lats(), &ds.lons(), &ds.times)?;
    cfg.priors.validate(spec.beta_len())?;
    let digest = write_run_record(cfg, "fit")?;
    let problem = Problem {
        ds,
        designs: &designs,
        priors: &cfg.priors,
        metric: cfg.fit.metric,
        kappa: cfg.kappa,
    };
    let results: Vec<Result<ChainSamples>> = (0..cfg.mcmc.n_chains)
        .into_par_iter()
        .map(|c| run_chain(&problem, &cfg.mcmc, c))
        .collect();
    let mut chains = Vec::new();
    let mut failures = Vec::new();
    for r in results {
        match r {
            Ok(mut c) => {
                c.meta.config_digest = digest.clone();
                write_chain(&cfg.output_dir, &c, &ds.reps, &spec, None)?;
                chains.push(c);
            }
            Err(Error::Diverged {
                iteration,
                reason,
                mut partial,
            }) => {
                partial.meta.config_digest = digest.clone();
                let msg = format!(
                    "chain {} diverged at iteration {iteration}: {reason}",
                    partial.meta.chain
                );
                write_chain(
                    &cfg.output_dir,
                    &partial,
                    &ds.reps,
                    &spec,
                    Some(msg.clone()),
                )?;
                failures.push(msg);
            }
            Err(e) => return Err(e),
        }
    }
    if !failures.is_empty() {
        return Err(Error::Numerical(failures.join("; ")));
    }
    let verdict = write_diagnostics(&cfg.output_dir, &chains)?;
    Ok(json!({
        "config_digest": digest,
        "chains": chains.len(),
        "draws_per_chain": chains.iter().map(|c| c.len()).collect::<Vec<_>>(),
        "convergence": verdict,
    }))
}

pub fn select(cfg: &RunConfig) -> Result<Value> {
    let ld = load_dataset(cfg)?;
    let digest = write_run_record(cfg, "select")?;
    let rep = grid_select(
        &ld.data,
        &cfg.priors,
        &cfg.mcmc,
        &cfg.fit,
        &cfg.kappas(),
        &cfg.bases(),
        &cfg.selection,
    )?;
    let mut buf = Vec::new();
    rep.write_csv(&mut buf)?;
    std::fs::write(cfg.output_dir.join("selection.csv"), buf)?;
    let pick = |r: Option<&stfm::selection::SelectionRow>| {
        r.map(|r| json!({ "kappa": r.kappa, "k_mu": r.k_mu, "k_zeta": r.k_zeta, "k_gamma": r.k_gamma }))
    };
    let out = json!({
        "config_digest": digest,
        "chosen_lpml": pick(rep.chosen_lpml()),
        "chosen_dic7": pick(rep.chosen_dic7()),
        "failures": rep.failures,
    });
    write_json(&cfg.output_dir.join("selection.json"), &out)?;
    Ok(out)
}

/// Diagnostics for the chains stored in `run_dir` (default `output_dir`).
pub fn diagnose(cfg: &RunConfig, run_dir: Option<&Path>) -> Result<Value> {
    let dir = run_dir.unwrap_or(&cfg.output_dir);
    let run = read_run(dir)?;
    let chains: Vec<ChainSamples> = run.iter().map(|(c, _)| c.clone()).collect();
    let failed: Vec<usize> = run
        .iter()
        .filter(|(_, s)| s.status == ChainStatus::Failed)
        .map(|(c, _)| c.meta.chain)
        .collect();
    let rep = convergence(&chains)?;
    write_run_record(cfg, "diagnose")?;
    std::fs::write(
        cfg.output_dir.join("summary.csv"),
        summary_csv(&summarize(&chains)?)?,
    )?;
    write_json(&cfg.output_dir.join("convergence.json"), &rep)?;
    Ok(json!({
        "config_digest": rep.config_digest,
        "converged": rep.converged,
        "max_rhat": rep.max_rhat,
        "failed_chains": failed,
    }))
}

pub fn predict(cfg: &RunConfig, run_dir: Option<&Path>) -> Result<Value> {
    if cfg.targets.is_empty() {
        return Err(Error::Config("config lists no prediction targets".into()));
    }
    let dir = run_dir.unwrap_or(&cfg.output_dir);
    let run = read_run(dir)?;
    let spec = run[0].1.basis.clone();
    let training = match &cfg.dataset {
        Some(_) => Some(load_dataset(cfg)?),
        None => None,
    };
    let draws: Vec<ParamState> = run
        .iter()
        .filter(|(_, s)| s.status == ChainStatus::Complete)
        .flat_map(|(c, _)| c.draws.iter().cloned())
        .collect();
    let n_blocks = draws
        .first()
        .map(|d| d.n_blocks())
        .ok_or_else(|| Error::InsufficientData("no complete chains with draws".into()))?;
    for t in &cfg.targets {
        t.validate(&spec, n_blocks, training.as_ref().map(|l| &l.data))?;
    }
    let digest = write_run_record(cfg, "predict")?;
    let mut rng = RngStream::new(cfg.mcmc.seed, 1 << 32);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "target", "block", "lat", "lon", "mode", "time", "mean", "lo", "hi",
    ])?;
    for (k, t) in cfg.targets.iter().enumerate() {
        let p = posterior_predictive(&draws, &spec, t, &mut rng)?;
        let mode = match t.mode {
            PredictMode::NewRepExistingBlock => "new_rep",
            PredictMode::NewLocation => "new_location",
        };
        for r in summarize_predictive(&p, cfg.level)? {
            w.write_record([
                (k + 1).to_string(),
                (t.block + 1).to_string(),
                t.lat.to_string(),
                t.lon.to_string(),
                mode.to_string(),
                r.time.to_string(),
                r.mean.to_string(),
                r.lo.to_string(),
                r.hi.to_string(),
            ])?;
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    std::fs::write(cfg.output_dir.join("predictions.csv"), bytes)?;
    Ok(json!({ "config_digest": digest, "targets": cfg.targets.len(), "draws": draws.len() }))
}

pub fn study(cfg: &RunConfig, name: &str) -> Result<Value> {
    if !STUDIES.contains(&name) {
        return Err(Error::Config(format!(
            "unknown study '{name}', expected one of {}",
            STUDIES.join(", ")
        )));
    }
    let s = cfg
        .study
        .as_ref()
        .ok_or_else(|| Error::Config("config has no `study` section".into()))?;
    let sc = StudyConfig {
        sim: s.sim.clone(),
        mcmc: cfg.mcmc.clone(),
        priors: cfg.priors.clone(),
        replicates: s.replicates,
        level: cfg.level,
    };
    sc.validate()?;
    let digest = write_run_record(cfg, &format!("study {name}"))?;
    let report = match name {
        "prior_sensitivity" => {
            let grid: Vec<(String, _)> = if s.prior_grid.is_empty() {
                vec![("default".into(), cfg.priors.clone())]
            } else {
                s.prior_grid
                    .iter()
                    .map(|p| (p.label.clone(), p.priors.clone()))
                    .collect()
            };
            run_prior_sensitivity(&sc, &grid)?
        }
        "size_sensitivity" => {
            let or = |v: &Vec<usize>, d: usize| if v.is_empty() { vec![d] } else { v.clone() };
            let j = if s.j_grid.is_empty() {
                vec![s.sim.reps.clone()]
            } else {
                s.j_grid.clone()
            };
            run_size_sensitivity(
                &sc,
                &or(&s.n_grid, s.sim.n),
                &or(&s.tau_grid, s.sim.tau),
                &j,
            )?
        }
        "kappa_recovery" => {
            let cand = if cfg.kappa_grid.is_empty() {
                DEFAULT_KAPPA_CANDIDATES.to_vec()
            } else {
                cfg.kappa_grid.clone()
            };
            run_kappa_recovery(&sc, &s.true_kappas, &cand)?
        }
        _ => run_prediction_study(&sc)?,
    };
    report.write(&cfg.output_dir)?;
    Ok(json!({
        "config_digest": digest,
        "study": report.study,
        "summary_rows": report.summary.rows.len(),
        "notes": report.notes,
    }))
}
