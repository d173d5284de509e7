//! Chain CSV files and their JSON sidecars.
//!
//! `chain_<k>.csv` holds one row per kept draw; `chain_<k>.json` holds the
//! metadata, acceptance rates and basis layout. A chain that aborted
//! mid-run keeps its partial draws and is marked `"status": "failed"`, with
//! an empty `FAILED` file next to it.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use stfm::design::BasisSpec;
use stfm::model::ParamState;
use stfm::sampler::{Acceptance, ChainMeta, ChainSamples};
use stfm::{Error, Result};

pub const FAILED_MARKER: &str = "FAILED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainStatus {
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSidecar {
    pub status: ChainStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
    pub n_draws: usize,
    pub acceptance: Acceptance,
    pub meta: ChainMeta,
    pub basis: BasisSpec,
}

pub fn csv_path(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("chain_{chain}.csv"))
}

pub fn sidecar_path(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("chain_{chain}.json"))
}

pub fn header(st: &ParamState, n_slices: usize, reps: &[usize]) -> Vec<String> {
    let mut h = vec!["iter".to_string()];
    h.extend((1..=st.beta.len()).map(|k| format!("beta_{k}")));
    for (i, t) in st.theta.iter().enumerate() {
        h.extend((1..=t.len()).map(|k| format!("theta_{}_{k}", i + 1)));
    }
    for (i, t) in st.vartheta.iter().enumerate() {
        h.extend((1..=t.len()).map(|k| format!("vartheta_{}_{k}", i + 1)));
    }
    let blocks = st.n_blocks();
    h.extend((1..=blocks).map(|i| format!("sigma2_theta_{i}")));
    h.extend((1..=blocks).map(|i| format!("sigma2_vartheta_{i}")));
    h.extend(["omega2", "phi", "varphi", "loglik"].map(String::from));
    debug_assert_eq!(reps.iter().sum::<usize>(), n_slices);
    for (i, &j) in reps.iter().enumerate() {
        h.extend((1..=j).map(|r| format!("loglik_{}_{r}", i + 1)));
    }
    h
}

/// Chain CSV bytes. Floats use the shortest representation that parses
/// back to the same value.
pub fn to_csv(c: &ChainSamples, reps: &[usize]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(first) = c.draws.first() {
        w.write_record(header(first, reps.iter().sum(), reps))?;
    } else {
        w.write_record(["iter"])?;
    }
    for (k, st) in c.draws.iter().enumerate() {
        let mut row = vec![c.iters[k].to_string()];
        row.extend(st.beta.iter().map(f64::to_string));
        for t in st.theta.iter().chain(&st.vartheta) {
            row.extend(t.iter().map(f64::to_string));
        }
        row.extend(
            st.sigma2_theta
                .iter()
                .chain(&st.sigma2_vartheta)
                .map(f64::to_string),
        );
        row.extend([st.omega2, st.phi, st.varphi, c.loglik[k]].map(|v| v.to_string()));
        row.extend(c.slice_loglik[k].iter().map(f64::to_string));
        w.write_record(&row)?;
    }
    w.into_inner()
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

/// Writes the CSV and sidecar of chain `meta.chain` into `dir`.
pub fn write_chain(
    dir: &Path,
    c: &ChainSamples,
    reps: &[usize],
    basis: &BasisSpec,
    failure: Option<String>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let k = c.meta.chain;
    std::fs::write(csv_path(dir, k), to_csv(c, reps)?)?;
    let side = ChainSidecar {
        status: if failure.is_some() {
            ChainStatus::Failed
        } else {
            ChainStatus::Complete
        },
        failure,
        n_draws: c.len(),
        acceptance: c.acceptance,
        meta: c.meta.clone(),
        basis: basis.clone(),
    };
    std::fs::write(
        sidecar_path(dir, k),
        serde_json::to_string_pretty(&side)? + "\n",
    )?;
    if side.status == ChainStatus::Failed {
        std::fs::write(dir.join(FAILED_MARKER), b"")?;
    }
    Ok(())
}

fn count_prefixed(h: &[String], prefix: &str) -> usize {
    h.iter().filter(|s| s.starts_with(prefix)).count()
}

/// Per-block column counts of `theta_<i>_<k>` style headers.
fn block_lengths(h: &[String], prefix: &str) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    for s in h {
        let Some(rest) = s.strip_prefix(prefix) else {
            continue;
        };
        let Some((i, _)) = rest.split_once('_') else {
            continue;
        };
        if let Ok(i) = i.parse::<usize>() {
            if i > out.len() {
                out.resize(i, 0);
            }
            out[i - 1] += 1;
        }
    }
    out
}

/// Reads a chain back from its CSV and sidecar.
pub fn read_chain(csv_file: &Path, sidecar_file: &Path) -> Result<(ChainSamples, ChainSidecar)> {
    let side: ChainSidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_file)?)?;
    let mut rd = csv::Reader::from_path(csv_file)?;
    let h: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    let k_beta = count_prefixed(&h, "beta_");
    let theta_len = block_lengths(&h, "theta_");
    let vartheta_len = block_lengths(&h, "vartheta_");
    let blocks = theta_len.len();
    let n_slices = count_prefixed(&h, "loglik_");
    let expected = 1
        + k_beta
        + theta_len.iter().sum::<usize>()
        + vartheta_len.iter().sum::<usize>()
        + 2 * blocks
        + 4
        + n_slices;
    if h.len() > 1 && (h.len() != expected || vartheta_len.len() != blocks) {
        return Err(Error::Ingest(format!(
            "{}: unrecognised chain header",
            csv_file.display()
        )));
    }
    let mut c = ChainSamples {
        iters: Vec::new(),
        draws: Vec::new(),
        loglik: Vec::new(),
        slice_loglik: Vec::new(),
        acceptance: side.acceptance,
        meta: side.meta.clone(),
    };
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Ingest(format!("{} line {line}: {e}", csv_file.display())))?;
        let mut at = 1;
        let mut take = |n: usize| {
            let s = &v[at..at + n];
            at += n;
            s.to_vec()
        };
        let beta = DVector::from_vec(take(k_beta));
        let theta = theta_len
            .iter()
            .map(|&n| DVector::from_vec(take(n)))
            .collect();
        let vartheta = vartheta_len
            .iter()
            .map(|&n| DVector::from_vec(take(n)))
            .collect();
        let sigma2_theta = take(blocks);
        let sigma2_vartheta = take(blocks);
        let tail = take(4);
        let slices = take(n_slices);
        c.iters.push(v[0] as usize);
        c.draws.push(ParamState {
            beta,
            theta,
            vartheta,
            sigma2_theta,
            sigma2_vartheta,
            omega2: tail[0],
            phi: tail[1],
            varphi: tail[2],
            kappa: side.meta.kappa,
        });
        c.loglik.push(tail[3]);
        c.slice_loglik.push(slices);
    }
    if c.len() != side.n_draws {
        return Err(Error::Ingest(format!(
            "{}: {} rows but sidecar records {}",
            csv_file.display(),
            c.len(),
            side.n_draws
        )));
    }
    Ok((c, side))
}

/// All `chain_<k>` pairs in `dir`, in chain order.
pub fn read_run(dir: &Path) -> Result<Vec<(ChainSamples, ChainSidecar)>> {
    let mut out = Vec::new();
    let mut k = 1;
    while csv_path(dir, k).exists() {
        out.push(read_chain(&csv_path(dir, k), &sidecar_path(dir, k))?);
        k += 1;
    }
    if out.is_empty() {
        return Err(Error::Ingest(format!(
            "no chain files in {}",
            dir.display()
        )));
    }
    Ok(out)
}
