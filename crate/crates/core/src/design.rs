//! Clamped cubic B-spline bases and the tensor-product design matrices of
//! the model.
//!
//! Rows of every per-repetition design are indexed by `(location, time)` with
//! time varying fastest. Stacked designs repeat that layout per repetition
//! within a block, blocks outermost: `(block, rep, location, time)`.
//!
//! Besides the dense matrices, [`DesignSet`] keeps the small factors the dense
//! matrices are built from:
//!
//! * `M = L_mu ⊗ B_mu` where `L_mu` holds the `n × K_mu²` spatial tensor rows
//!   and `B_mu` the `τ × K_mu` time basis;
//! * `P = L_zeta ⊗ 1_τ`;
//! * `N = 1_n ⊗ B_gamma`.
//!
//! The sampler works exclusively with the factors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cubic splines throughout.
pub const SPLINE_DEGREE: usize = 3;
pub const ORDER: usize = SPLINE_DEGREE + 1;

/// Rows are evaluation points, columns are basis functions.
pub type BasisMatrix = DMatrix<f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnotVector {
    pub domain_min: f64,
    pub domain_max: f64,
    pub num_bases: usize,
    pub knots: Vec<f64>,
}

impl KnotVector {
    /// Interior knots only (between the two 4-fold boundary knots).
    pub fn interior(&self) -> &[f64] {
        &self.knots[ORDER..self.knots.len() - ORDER]
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.domain_min && x <= self.domain_max
    }

    /// Index `mu` with `knots[mu] <= x < knots[mu + 1]`, clamped so the right
    /// endpoint falls in the last non-degenerate span.
    fn span(&self, x: f64) -> usize {
        let last = self.num_bases - 1;
        if x >= self.knots[last + 1] {
            return last;
        }
        // knots[ORDER - 1..=last + 1] is sorted; find the span by bisection.
        let (mut lo, mut hi) = (SPLINE_DEGREE, last + 1);
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if x < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values of the (at most 4) nonzero basis functions at `x`, together with
    /// the index of the first of them.
    pub fn nonzero_at(&self, x: f64) -> Result<(usize, [f64; ORDER])> {
        if !x.is_finite() || !self.contains(x) {
            return Err(Error::Domain(format!(
                "point {x} outside basis domain [{}, {}]",
                self.domain_min, self.domain_max
            )));
        }
        let mu = self.span(x);
        let t = &self.knots;
        // Cox–de Boor, triangular form.
        let mut n = [0.0; ORDER];
        let mut left = [0.0; ORDER];
        let mut right = [0.0; ORDER];
        n[0] = 1.0;
        for j in 1..ORDER {
            left[j] = x - t[mu + 1 - j];
            right[j] = t[mu + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom > 0.0 { n[r] / denom } else { 0.0 };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((mu - SPLINE_DEGREE, n))
    }

    /// One row of the basis matrix.
    pub fn row(&self, x: f64) -> Result<DVector<f64>> {
        let (first, vals) = self.nonzero_at(x)?;
        let mut row = DVector::zeros(self.num_bases);
        for (k, v) in vals.iter().enumerate() {
            row[first + k] = *v;
        }
        Ok(row)
    }
}

/// Clamped knot vector with `k - 4` equally spaced interior knots.
pub fn make_knots(domain_min: f64, domain_max: f64, k: usize) -> Result<KnotVector> {
    if k < ORDER {
        return Err(Error::InvalidOrder(k));
    }
    if !(domain_min.is_finite() && domain_max.is_finite()) || domain_max <= domain_min {
        return Err(Error::Domain(format!(
            "degenerate basis domain [{domain_min}, {domain_max}]"
        )));
    }
    let n_interior = k - ORDER;
    let step = (domain_max - domain_min) / (n_interior + 1) as f64;
    let mut knots = Vec::with_capacity(k + ORDER);
    knots.extend(std::iter::repeat_n(domain_min, ORDER));
    knots.extend((1..=n_interior).map(|i| domain_min + step * i as f64));
    knots.extend(std::iter::repeat_n(domain_max, ORDER));
    Ok(KnotVector {
        domain_min,
        domain_max,
        num_bases: k,
        knots,
    })
}

/// Evaluate every basis function at every point. No extrapolation.
pub fn eval_basis(kv: &KnotVector, points: &[f64]) -> Result<BasisMatrix> {
    let mut out = DMatrix::zeros(points.len(), kv.num_bases);
    for (i, &x) in points.iter().enumerate() {
        let (first, vals) = kv.nonzero_at(x)?;
        for (k, v) in vals.iter().enumerate() {
            out[(i, first + k)] = *v;
        }
    }
    Ok(out)
}

/// Row-wise Kronecker product ("face-splitting"): row `r` of the result is
/// `a[r,] ⊗ b[r,]`.
pub fn row_kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    assert_eq!(a.nrows(), b.nrows());
    let (ka, kb) = (a.ncols(), b.ncols());
    DMatrix::from_fn(a.nrows(), ka * kb, |r, c| a[(r, c / kb)] * b[(r, c % kb)])
}

/// Closed interval used as a basis domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    /// Observed range of `values`, widened by `margin` times its span on each
    /// side. A zero-width range is widened by `margin` (or 0.5 when the
    /// margin is zero) in absolute units so a basis can still be built.
    pub fn covering(values: &[f64], margin: f64) -> Result<Self> {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::Domain("empty or non-finite coordinate set".into()));
        }
        let span = max - min;
        let pad = if span > 0.0 {
            margin * span
        } else if margin > 0.0 {
            margin
        } else {
            0.5
        };
        Ok(Self::new(min - pad, max + pad))
    }
}

/// Basis counts and domains; everything needed to rebuild design rows for
/// arbitrary coordinates (used again at prediction time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub k_mu: usize,
    pub k_zeta: usize,
    pub k_gamma: usize,
    pub lat: Interval,
    pub lon: Interval,
    pub time: Interval,
}

impl BasisSpec {
    /// Domains from observed coordinates; `spatial_margin` widens latitude and
    /// longitude, `time_margin` the time axis (fractions of each span).
    pub fn from_coords(
        lats: &[f64],
        lons: &[f64],
        times: &[f64],
        counts: (usize, usize, usize),
        spatial_margin: f64,
        time_margin: f64,
    ) -> Result<Self> {
        Ok(Self {
            k_mu: counts.0,
            k_zeta: counts.1,
            k_gamma: counts.2,
            lat: Interval::covering(lats, spatial_margin)?,
            lon: Interval::covering(lons, spatial_margin)?,
            time: Interval::covering(times, time_margin)?,
        })
    }

    pub fn bases(&self) -> Result<BasisKnots> {
        Ok(BasisKnots {
            mu_lat: make_knots(self.lat.min, self.lat.max, self.k_mu)?,
            mu_lon: make_knots(self.lon.min, self.lon.max, self.k_mu)?,
            mu_time: make_knots(self.time.min, self.time.max, self.k_mu)?,
            zeta_lat: make_knots(self.lat.min, self.lat.max, self.k_zeta)?,
            zeta_lon: make_knots(self.lon.min, self.lon.max, self.k_zeta)?,
            gamma_time: make_knots(self.time.min, self.time.max, self.k_gamma)?,
        })
    }

    pub fn beta_len(&self) -> usize {
        self.k_mu.pow(3)
    }

    pub fn theta_len(&self) -> usize {
        self.k_zeta.pow(2)
    }

    pub fn vartheta_len(&self) -> usize {
        self.k_gamma
    }
}

#[derive(Debug, Clone)]
pub struct BasisKnots {
    pub mu_lat: KnotVector,
    pub mu_lon: KnotVector,
    pub mu_time: KnotVector,
    pub zeta_lat: KnotVector,
    pub zeta_lon: KnotVector,
    pub gamma_time: KnotVector,
}

impl BasisKnots {
    /// Spatial tensor rows for the mean (`n × K_mu²`).
    pub fn mu_space(&self, lats: &[f64], lons: &[f64]) -> Result<DMatrix<f64>> {
        check_coords(lats, lons)?;
        Ok(row_kron(
            &eval_basis(&self.mu_lat, lats)?,
            &eval_basis(&self.mu_lon, lons)?,
        ))
    }

    /// Spatial tensor rows for the spatial random effect (`n × K_zeta²`).
    pub fn zeta_space(&self, lats: &[f64], lons: &[f64]) -> Result<DMatrix<f64>> {
        check_coords(lats, lons)?;
        Ok(row_kron(
            &eval_basis(&self.zeta_lat, lats)?,
            &eval_basis(&self.zeta_lon, lons)?,
        ))
    }
}

fn check_coords(lats: &[f64], lons: &[f64]) -> Result<()> {
    if lats.is_empty() || lats.len() != lons.len() {
        return Err(Error::Dimension(format!(
            "need equally many (nonzero) latitudes and longitudes, got {} and {}",
            lats.len(),
            lons.len()
        )));
    }
    Ok(())
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    DMatrix::from_fn(ra * rb, ca * cb, |r, c| {
        a[(r / rb, c / cb)] * b[(r % rb, c % cb)]
    })
}

/// Per-repetition design matrices and the factors they are built from.
#[derive(Debug, Clone)]
pub struct DesignSet {
    pub spec: BasisSpec,
    pub n_locations: usize,
    pub n_times: usize,
    /// `n × K_mu²`
    pub mu_space: DMatrix<f64>,
    /// `τ × K_mu`
    pub mu_time: DMatrix<f64>,
    /// `n × K_zeta²`
    pub zeta_space: DMatrix<f64>,
    /// `τ × K_gamma`
    pub gamma_time: DMatrix<f64>,
    /// `(n·τ) × K_mu³`
    pub m: DMatrix<f64>,
    /// `(n·τ) × K_zeta²`
    pub p: DMatrix<f64>,
    /// `(n·τ) × K_gamma`
    pub n: DMatrix<f64>,
}

impl DesignSet {
    pub fn build(spec: &BasisSpec, lats: &[f64], lons: &[f64], times: &[f64]) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Dimension("empty time sequence".into()));
        }
        let knots = spec.bases()?;
        let mu_space = knots.mu_space(lats, lons)?;
        let mu_time = eval_basis(&knots.mu_time, times)?;
        let zeta_space = knots.zeta_space(lats, lons)?;
        let gamma_time = eval_basis(&knots.gamma_time, times)?;
        let n = lats.len();
        let tau = times.len();
        let m = kron(&mu_space, &mu_time);
        let p = kron(&zeta_space, &DMatrix::from_element(tau, 1, 1.0));
        let nn = kron(&DMatrix::from_element(n, 1, 1.0), &gamma_time);
        Ok(Self {
            spec: spec.clone(),
            n_locations: n,
            n_times: tau,
            mu_space,
            mu_time,
            zeta_space,
            gamma_time,
            m,
            p,
            n: nn,
        })
    }

    pub fn rows(&self) -> usize {
        self.n_locations * self.n_times
    }

    /// `M β` as an `n × τ` matrix, computed from the factors.
    pub fn mean_surface(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let k2 = self.mu_space.ncols();
        let kt = self.mu_time.ncols();
        // β is ordered (lat, lon, time) with time fastest: reshape row-major
        // into K_mu² × K_mu.
        let b = DMatrix::from_row_slice(k2, kt, beta.as_slice());
        &self.mu_space * b * self.mu_time.transpose()
    }

    /// `P Θ` as an `n`-vector (constant over time).
    pub fn spatial_effect(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.zeta_space * theta
    }

    /// `N ϑ` as a `τ`-vector (constant over locations).
    pub fn temporal_effect(&self, vartheta: &DVector<f64>) -> DVector<f64> {
        &self.gamma_time * vartheta
    }
}

/// Build `M` directly from coordinates (convenience for callers that do not
/// need the whole set).
pub fn build_mean_design(
    spec: &BasisSpec,
    lats: &[f64],
    lons: &[f64],
    times: &[f64],
) -> Result<DMatrix<f64>> {
    let knots = spec.bases()?;
    Ok(kron(
        &knots.mu_space(lats, lons)?,
        &eval_basis(&knots.mu_time, times)?,
    ))
}

pub fn build_spatial_design(
    spec: &BasisSpec,
    lats: &[f64],
    lons: &[f64],
    n_times: usize,
) -> Result<DMatrix<f64>> {
    let knots = spec.bases()?;
    Ok(kron(
        &knots.zeta_space(lats, lons)?,
        &DMatrix::from_element(n_times, 1, 1.0),
    ))
}

pub fn build_temporal_design(spec: &BasisSpec, n: usize, times: &[f64]) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::Dimension("zero locations".into()));
    }
    let knots = spec.bases()?;
    Ok(kron(
        &DMatrix::from_element(n, 1, 1.0),
        &eval_basis(&knots.gamma_time, times)?,
    ))
}

/// Stacked designs `X`, `Q`, `R` over all blocks and repetitions.
#[derive(Debug, Clone)]
pub struct FullDesign {
    pub x: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

pub fn assemble_full(
    m: &DMatrix<f64>,
    p: &DMatrix<f64>,
    n: &DMatrix<f64>,
    block_reps: &[usize],
) -> Result<FullDesign> {
    if block_reps.is_empty() {
        return Err(Error::Config("empty block list".into()));
    }
    if let Some(i) = block_reps.iter().position(|&j| j == 0) {
        return Err(Error::Config(format!("block {i} has no repetitions")));
    }
    let rows = m.nrows();
    if p.nrows() != rows || n.nrows() != rows {
        return Err(Error::Dimension(format!(
            "M, P, N row counts differ: {}, {}, {}",
            rows,
            p.nrows(),
            n.nrows()
        )));
    }
    let total: usize = block_reps.iter().sum();
    let n_blocks = block_reps.len();
    let mut x = DMatrix::zeros(total * rows, m.ncols());
    let mut q = DMatrix::zeros(total * rows, n_blocks * p.ncols());
    let mut r = DMatrix::zeros(total * rows, n_blocks * n.ncols());
    let mut row0 = 0;
    for (i, &reps) in block_reps.iter().enumerate() {
        for _ in 0..reps {
            x.view_mut((row0, 0), m.shape()).copy_from(m);
            q.view_mut((row0, i * p.ncols()), p.shape()).copy_from(p);
            r.view_mut((row0, i * n.ncols()), n.shape()).copy_from(n);
            row0 += rows;
        }
    }
    Ok(FullDesign { x, q, r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn spec(k: (usize, usize, usize)) -> BasisSpec {
        BasisSpec {
            k_mu: k.0,
            k_zeta: k.1,
            k_gamma: k.2,
            lat: Interval::new(-20.0, -12.0),
            lon: Interval::new(-53.0, -45.0),
            time: Interval::new(1.0, 6.0),
        }
    }

    #[test]
    fn knots_without_interior() {
        let kv = make_knots(0.0, 1.0, 4).unwrap();
        assert_eq!(kv.knots, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
        assert!(kv.interior().is_empty());
    }

    #[test]
    fn knots_interior_uniform() {
        assert_eq!(make_knots(0.0, 1.0, 5).unwrap().interior(), &[0.5]);
        let kv = make_knots(0.0, 2.0, 6).unwrap();
        assert_abs_diff_eq!(kv.interior()[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(kv.interior()[1], 4.0 / 3.0, epsilon = 1e-15);
        assert_eq!(kv.knots.len(), 10);
    }

    #[test]
    fn knot_errors() {
        assert!(matches!(
            make_knots(0.0, 1.0, 3),
            Err(Error::InvalidOrder(3))
        ));
        assert!(matches!(make_knots(1.0, 1.0, 5), Err(Error::Domain(_))));
        assert!(matches!(make_knots(2.0, 1.0, 5), Err(Error::Domain(_))));
    }

    #[test]
    fn clamped_endpoints() {
        let kv = make_knots(-1.0, 3.0, 7).unwrap();
        let b = eval_basis(&kv, &[-1.0, 3.0]).unwrap();
        assert_eq!(b[(0, 0)], 1.0);
        assert_eq!(b.row(0).sum(), 1.0);
        assert_eq!(b[(1, 6)], 1.0);
        assert_eq!(b.row(1).sum(), 1.0);
    }

    #[test]
    fn outside_domain_is_an_error() {
        let kv = make_knots(0.0, 1.0, 6).unwrap();
        assert!(matches!(
            eval_basis(&kv, &[1.0 + 1e-12]),
            Err(Error::Domain(_))
        ));
        assert!(matches!(eval_basis(&kv, &[-0.1]), Err(Error::Domain(_))));
        assert!(matches!(
            eval_basis(&kv, &[f64::NAN]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn local_support_and_partition() {
        let kv = make_knots(0.0, 10.0, 9).unwrap();
        let pts: Vec<f64> = (0..=200).map(|i| i as f64 * 0.05).collect();
        let b = eval_basis(&kv, &pts).unwrap();
        for r in 0..b.nrows() {
            let row = b.row(r);
            assert!((row.sum() - 1.0).abs() < 1e-12);
            let nz: Vec<usize> = (0..9).filter(|&c| row[c] != 0.0).collect();
            assert!(nz.len() <= 4);
            assert!(nz.windows(2).all(|w| w[1] == w[0] + 1));
            assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn temporal_design_repeats_time_block() {
        let s = spec((4, 4, 7));
        let n = build_temporal_design(&s, 2, &[1.0, 3.5, 6.0]).unwrap();
        assert_eq!(n.shape(), (6, 7));
        assert_eq!(n.rows(0, 3), n.rows(3, 3));
        for r in 0..6 {
            assert_abs_diff_eq!(n.row(r).sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn spatial_design_constant_in_time() {
        let s = spec((4, 5, 4));
        let p =
            build_spatial_design(&s, &[-19.0, -15.0, -13.0], &[-50.0, -47.0, -52.0], 2).unwrap();
        assert_eq!(p.shape(), (6, 25));
        for r in 0..3 {
            assert_eq!(p.row(2 * r), p.row(2 * r + 1));
            assert_abs_diff_eq!(p.row(2 * r).sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_point_mean_row_is_triple_kron() {
        let s = spec((5, 4, 4));
        let m = build_mean_design(&s, &[-16.0], &[-49.0], &[2.5]).unwrap();
        let k = s.bases().unwrap();
        let a = k.mu_lat.row(-16.0).unwrap();
        let b = k.mu_lon.row(-49.0).unwrap();
        let c = k.mu_time.row(2.5).unwrap();
        let as_row = |v: &DVector<f64>| DMatrix::from_row_slice(1, v.len(), v.as_slice());
        let expect = kron(&kron(&as_row(&a), &as_row(&b)), &as_row(&c));
        assert_eq!(m.shape(), (1, 125));
        assert!((m - expect).abs().max() < 1e-15);
    }

    #[test]
    fn assemble_identity_case() {
        let s = spec((4, 4, 4));
        let d = DesignSet::build(&s, &[-15.0, -13.0], &[-50.0, -46.0], &[1.0, 2.0, 6.0]).unwrap();
        let f = assemble_full(&d.m, &d.p, &d.n, &[1]).unwrap();
        assert_eq!(f.x, d.m);
        assert_eq!(f.q, d.p);
        assert_eq!(f.r, d.n);

        let f = assemble_full(&d.m, &d.p, &d.n, &[2, 1]).unwrap();
        assert_eq!(f.x.nrows(), 3 * 6);
        assert_eq!(f.q.ncols(), 2 * 16);
        // off-diagonal blocks of Q vanish
        assert_eq!(f.q.view((0, 16), (12, 16)).abs().max(), 0.0);
        assert_eq!(f.q.view((12, 0), (6, 16)).abs().max(), 0.0);
    }

    #[test]
    fn assemble_rejects_bad_blocks() {
        let m = DMatrix::zeros(2, 1);
        assert!(matches!(
            assemble_full(&m, &m, &m, &[]),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            assemble_full(&m, &m, &m, &[1, 0]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn factored_effects_match_dense() {
        let s = spec((5, 4, 6));
        let d = DesignSet::build(
            &s,
            &[-19.0, -15.5, -12.5],
            &[-52.0, -47.0, -45.5],
            &[1.0, 2.0, 3.0, 4.5],
        )
        .unwrap();
        let beta = DVector::from_fn(125, |i, _| ((i * 37) % 11) as f64 - 5.0);
        let dense = &d.m * &beta;
        let surf = d.mean_surface(&beta);
        for r in 0..3 {
            for t in 0..4 {
                assert_abs_diff_eq!(surf[(r, t)], dense[r * 4 + t], epsilon = 1e-12);
            }
        }
        let theta = DVector::from_fn(16, |i, _| i as f64 * 0.1);
        let pt = &d.p * &theta;
        let eff = d.spatial_effect(&theta);
        for r in 0..3 {
            for t in 0..4 {
                assert_abs_diff_eq!(pt[r * 4 + t], eff[r], epsilon = 1e-12);
            }
        }
        let vt = DVector::from_fn(6, |i, _| 1.0 - i as f64);
        let nv = &d.n * &vt;
        let eff = d.temporal_effect(&vt);
        for r in 0..3 {
            for t in 0..4 {
                assert_abs_diff_eq!(nv[r * 4 + t], eff[t], epsilon = 1e-12);
            }
        }
    }
}
