//! Model comparison by LPML and DIC7, and the smoothness / basis-size grid.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::DesignSet;
use crate::distributions::logpdf_normal;
use crate::error::{Error, Result};
use crate::model::{block_fit, Dataset, PriorConfig};
use crate::sampler::{fit_dataset, ChainSamples, FitSettings, McmcConfig};

/// Default lower bound on pooled draws for criteria inside [`grid_select`].
pub const MIN_SELECTION_DRAWS: usize = 100;

fn logsumexp(x: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = x.clone().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + x.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// LPML from per-draw, per-unit log-likelihoods `ll[h][k]`:
/// `Σ_k −log( (1/H) Σ_h exp(−ll[h][k]) )`.
pub fn lpml_from_logliks(ll: &[Vec<f64>]) -> Result<f64> {
    let h = ll.len();
    if h == 0 {
        return Err(Error::InsufficientData(
            "LPML needs at least one draw".into(),
        ));
    }
    let units = ll[0].len();
    if ll.iter().any(|r| r.len() != units) {
        return Err(Error::Dimension(
            "draws carry different numbers of units".into(),
        ));
    }
    let log_h = (h as f64).ln();
    let mut total = 0.0;
    for k in 0..units {
        let lse = logsumexp(ll.iter().map(move |r| -r[k]));
        total += log_h - lse;
    }
    Ok(total)
}

/// `−4 · mean(ℓ) + 2 · max(ℓ)` over per-draw total log-likelihoods.
pub fn dic7_from_logliks(ll: &[f64]) -> Result<f64> {
    if ll.is_empty() {
        return Err(Error::InsufficientData(
            "DIC7 needs at least one draw".into(),
        ));
    }
    let mean = ll.iter().sum::<f64>() / ll.len() as f64;
    let max = ll.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(-4.0 * mean + 2.0 * max)
}

/// Unit of the conditional predictive ordinate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpoUnit {
    /// One CPO per repeated-measure surface `y_ij`.
    #[default]
    Rep,
    /// One CPO per scalar observation, using its marginal `N(fit, ω²)`.
    Scalar,
}

/// LPML over the pooled draws of `chains`.
pub fn lpml(chains: &[ChainSamples]) -> Result<f64> {
    let ll: Vec<Vec<f64>> = chains
        .iter()
        .flat_map(|c| c.slice_loglik.iter().cloned())
        .collect();
    lpml_from_logliks(&ll)
}

/// LPML with one CPO per scalar observation.
pub fn lpml_scalar(chains: &[ChainSamples], ds: &Dataset, designs: &DesignSet) -> Result<f64> {
    let ll: Vec<Vec<f64>> = chains
        .iter()
        .flat_map(|c| c.draws.iter())
        .map(|st| {
            let mut out = Vec::with_capacity(ds.y.len());
            for i in 0..ds.n_blocks() {
                let fit = block_fit(designs, st, i);
                for j in 0..ds.reps[i] {
                    let y = ds.slice(i, j);
                    for r in 0..y.nrows() {
                        for c in 0..y.ncols() {
                            out.push(logpdf_normal(y[(r, c)], fit[(r, c)], st.omega2));
                        }
                    }
                }
            }
            out
        })
        .collect();
    lpml_from_logliks(&ll)
}

pub fn dic7(chains: &[ChainSamples]) -> Result<f64> {
    let ll: Vec<f64> = chains
        .iter()
        .flat_map(|c| c.loglik.iter().copied())
        .collect();
    dic7_from_logliks(&ll)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub kappa: f64,
    #[serde(rename = "K_mu")]
    pub k_mu: usize,
    #[serde(rename = "K_zeta")]
    pub k_zeta: usize,
    #[serde(rename = "K_gamma")]
    pub k_gamma: usize,
    pub lpml: f64,
    pub dic7: f64,
    pub rank_lpml: usize,
    pub rank_dic7: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub kappa: f64,
    pub k_mu: usize,
    pub k_zeta: usize,
    pub k_gamma: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub rows: Vec<SelectionRow>,
    pub failures: Vec<CellFailure>,
}

fn ranks(values: &[f64], higher_is_better: bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        let o = values[a].total_cmp(&values[b]);
        if higher_is_better { o.reverse() } else { o }.then(a.cmp(&b))
    });
    let mut r = vec![0; values.len()];
    for (pos, &i) in idx.iter().enumerate() {
        r[i] = pos + 1;
    }
    r
}

impl SelectionReport {
    /// Rank rows (1 = best): LPML descending, DIC7 ascending; ties keep grid
    /// order.
    pub fn from_scores(mut rows: Vec<SelectionRow>, failures: Vec<CellFailure>) -> Self {
        let l: Vec<f64> = rows.iter().map(|r| r.lpml).collect();
        let d: Vec<f64> = rows.iter().map(|r| r.dic7).collect();
        let (rl, rd) = (ranks(&l, true), ranks(&d, false));
        for (k, row) in rows.iter_mut().enumerate() {
            row.rank_lpml = rl[k];
            row.rank_dic7 = rd[k];
        }
        Self { rows, failures }
    }

    pub fn chosen_lpml(&self) -> Option<&SelectionRow> {
        self.rows.iter().find(|r| r.rank_lpml == 1)
    }

    pub fn chosen_dic7(&self) -> Option<&SelectionRow> {
        self.rows.iter().find(|r| r.rank_dic7 == 1)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        if self.rows.is_empty() {
            wr.write_record([
                "kappa",
                "K_mu",
                "K_zeta",
                "K_gamma",
                "lpml",
                "dic7",
                "rank_lpml",
                "rank_dic7",
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd
            .deserialize()
            .collect::<std::result::Result<Vec<SelectionRow>, _>>()?;
        Ok(Self {
            rows,
            failures: Vec::new(),
        })
    }
}

/// Settings for a selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridOptions {
    pub min_draws: usize,
    pub cpo_unit: CpoUnit,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            min_draws: MIN_SELECTION_DRAWS,
            cpo_unit: CpoUnit::Rep,
        }
    }
}

/// Score a single configuration.
pub fn score_cell(
    ds: &Dataset,
    priors: &PriorConfig,
    cfg: &McmcConfig,
    settings: &FitSettings,
    kappa: f64,
    counts: (usize, usize, usize),
    opts: &GridOptions,
) -> Result<(f64, f64)> {
    let fit = fit_dataset(ds, counts, kappa, priors, cfg, settings)?;
    let draws: usize = fit.chains.iter().map(|c| c.len()).sum();
    if draws < opts.min_draws {
        return Err(Error::InsufficientData(format!(
            "{draws} pooled draws, criteria need at least {}",
            opts.min_draws
        )));
    }
    let l = match opts.cpo_unit {
        CpoUnit::Rep => lpml(&fit.chains)?,
        CpoUnit::Scalar => lpml_scalar(&fit.chains, ds, &fit.designs)?,
    };
    Ok((l, dic7(&fit.chains)?))
}

/// Fit every (κ, basis counts) combination and rank by both criteria.
/// Cells that fail are reported and excluded.
pub fn grid_select(
    ds: &Dataset,
    priors: &PriorConfig,
    cfg: &McmcConfig,
    settings: &FitSettings,
    kappa_grid: &[f64],
    basis_grid: &[(usize, usize, usize)],
    opts: &GridOptions,
) -> Result<SelectionReport> {
    if kappa_grid.is_empty() || basis_grid.is_empty() {
        return Err(Error::Config("empty selection grid".into()));
    }
    let cells: Vec<(f64, (usize, usize, usize))> = kappa_grid
        .iter()
        .flat_map(|&k| basis_grid.iter().map(move |&b| (k, b)))
        .collect();
    let results: Vec<_> = cells
        .par_iter()
        .map(|&(kappa, counts)| score_cell(ds, priors, cfg, settings, kappa, counts, opts))
        .collect();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (&(kappa, (k_mu, k_zeta, k_gamma)), res) in cells.iter().zip(results) {
        match res {
            Ok((lpml, dic7)) if lpml.is_finite() && dic7.is_finite() => rows.push(SelectionRow {
                kappa,
                k_mu,
                k_zeta,
                k_gamma,
                lpml,
                dic7,
                rank_lpml: 0,
                rank_dic7: 0,
            }),
            Ok(_) => failures.push(CellFailure {
                kappa,
                k_mu,
                k_zeta,
                k_gamma,
                reason: "non-finite criterion".into(),
            }),
            Err(e) => failures.push(CellFailure {
                kappa,
                k_mu,
                k_zeta,
                k_gamma,
                reason: e.to_string(),
            }),
        }
    }
    Ok(SelectionReport::from_scores(rows, failures))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_draw_lpml_is_loglik() {
        let ll = vec![vec![-1.5, -2.25, -0.5]];
        assert_eq!(lpml_from_logliks(&ll).unwrap(), -4.25);
    }

    #[test]
    fn duplicated_draws_leave_lpml_unchanged() {
        let ll = vec![vec![-1.0, -3.0], vec![-2.0, -0.5], vec![-4.0, -1.0]];
        let mut twice = ll.clone();
        twice.extend(ll.clone());
        let a = lpml_from_logliks(&ll).unwrap();
        let b = lpml_from_logliks(&twice).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn degenerate_dic7() {
        assert_eq!(dic7_from_logliks(&[-3.0; 4]).unwrap(), 6.0);
        let base = [-3.0, -1.0, -2.5];
        let shifted: Vec<f64> = base.iter().map(|v| v + 1.75).collect();
        let d0 = dic7_from_logliks(&base).unwrap();
        let d1 = dic7_from_logliks(&shifted).unwrap();
        assert!((d1 - (d0 - 3.5)).abs() < 1e-12);
    }

    #[test]
    fn ranks_follow_criteria() {
        let mk = |lpml, dic7| SelectionRow {
            kappa: 0.5,
            k_mu: 4,
            k_zeta: 4,
            k_gamma: 4,
            lpml,
            dic7,
            rank_lpml: 0,
            rank_dic7: 0,
        };
        let rep = SelectionReport::from_scores(
            vec![mk(-10.0, 5.0), mk(-3.0, 9.0), mk(-7.0, 1.0)],
            vec![],
        );
        let rl: Vec<usize> = rep.rows.iter().map(|r| r.rank_lpml).collect();
        let rd: Vec<usize> = rep.rows.iter().map(|r| r.rank_dic7).collect();
        assert_eq!(rl, vec![3, 1, 2]);
        assert_eq!(rd, vec![2, 3, 1]);
        assert_eq!(rep.chosen_lpml().unwrap().lpml, -3.0);
        assert_eq!(rep.chosen_dic7().unwrap().dic7, 1.0);
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(lpml_from_logliks(&[]).is_err());
        assert!(dic7_from_logliks(&[]).is_err());
    }
}
