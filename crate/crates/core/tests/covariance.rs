#![allow(clippy::excessive_precision)]

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use stfm::covariance::{
    bessel_k, build_error_cov, marginal_cov, matern_corr, matern_matrix, temporal_matrix,
    DistanceMetric, KroneckerCov, MaternParams, ObsIndex, TemporalParams,
};
use stfm::design::{assemble_full, kron, BasisSpec, DesignSet, Interval};
use stfm::distributions::RngStream;
use stfm::model::ParamState;

/// K_ν(x) computed with mpmath at 30 digits.
const BESSEL_K: [(f64, f64, f64); 42] = [
    (0.2, 0.001, 9.8606209510981592),
    (0.2, 0.05, 3.4116262252967345),
    (0.2, 0.7, 0.67329657107801736),
    (0.2, 2.0, 0.11484187551823622),
    (0.2, 9.0, 5.0988856323152811e-5),
    (0.2, 40.0, 8.3970074571696628e-19),
    (0.5, 0.001, 39.593659513116643),
    (0.5, 0.05, 5.3316325691057585),
    (0.5, 0.7, 0.74388325232069379),
    (0.5, 2.0, 0.11993777196806145),
    (0.5, 9.0, 5.1557084048390559e-5),
    (0.5, 40.0, 8.4188091949489054e-19),
    (1.0, 0.001, 999.99623815608555),
    (1.0, 0.05, 19.909674325882505),
    (1.0, 0.7, 1.050283535312918),
    (1.0, 2.0, 0.13986588181652243),
    (1.0, 9.0, 5.3637016379451945e-5),
    (1.0, 40.0, 8.4971319548610387e-19),
    (1.5, 0.001, 39633.253172629759),
    (1.5, 0.05, 111.96428395122092),
    (1.5, 0.7, 1.8065736127788278),
    (1.5, 2.0, 0.17990665795209217),
    (1.5, 9.0, 5.7285648942656177e-5),
    (1.5, 40.0, 8.629279424822628e-19),
    (2.0, 0.001, 1999999.5000009716),
    (2.0, 0.05, 799.50120706477216),
    (2.0, 0.7, 3.6613299608091533),
    (2.0, 2.0, 0.25375975456605586),
    (2.0, 9.0, 6.2800649929670791e-5),
    (2.0, 40.0, 8.817717697842619e-19),
    (2.5, 0.001, 118899799.11154879),
    (2.5, 0.05, 6723.1886696423608),
    (2.5, 0.7, 8.486341592801385),
    (2.5, 2.0, 0.3897977588961997),
    (2.5, 9.0, 7.0652300362609285e-5),
    (2.5, 40.0, 9.0660051518106025e-19),
    (3.5, 0.001, 594499035190.9971),
    (3.5, 0.05, 672430.83124818726),
    (3.5, 0.7, 62.423299275645867),
    (3.5, 2.0, 1.1544010551925914),
    (3.5, 9.0, 9.6536926921883557e-5),
    (3.5, 40.0, 9.7625300687989534e-19),
];

#[test]
fn bessel_matches_reference_table() {
    for &(nu, x, want) in &BESSEL_K {
        let got = bessel_k(nu, x).unwrap();
        assert!(
            ((got - want) / want).abs() < 1e-12,
            "K_{nu}({x}) = {got}, want {want}"
        );
    }
}

#[test]
fn matern_half_integer_closed_forms() {
    let phi = 3.7;
    for i in 1..=1000 {
        let d = 0.01 * phi * i as f64;
        let r = d / phi;
        let m05 = matern_corr(d, &MaternParams::new(0.5, phi).unwrap());
        let m15 = matern_corr(d, &MaternParams::new(1.5, phi).unwrap());
        let m25 = matern_corr(d, &MaternParams::new(2.5, phi).unwrap());
        assert!((m05 - (-r).exp()).abs() < 1e-10);
        assert!((m15 - (1.0 + r) * (-r).exp()).abs() < 1e-10);
        assert!((m25 - (1.0 + r + r * r / 3.0) * (-r).exp()).abs() < 1e-10);
    }
}

#[test]
fn haversine_one_degree_on_equator() {
    let d = DistanceMetric::Haversine.distance((0.0, 0.0), (0.0, 1.0));
    assert!((d - 6371.0 * std::f64::consts::PI / 180.0).abs() < 1e-9);
    let e = DistanceMetric::Euclidean.distance((-15.0, -50.0), (-12.0, -46.0));
    assert_eq!(e, 5.0);
}

fn random_spd<R: Rng>(k: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(k, k, |_, _| rng.gen_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(k, k) * 0.5
}

#[test]
fn kron_solve_and_logdet_match_dense() {
    let mut rng = RngStream::new(3, 0);
    for _ in 0..200 {
        let n = rng.gen_range(1..=6);
        let tau = rng.gen_range(1..=6);
        let omega2 = rng.gen_range(0.1..20.0);
        let c =
            KroneckerCov::new(omega2, random_spd(n, &mut rng), random_spd(tau, &mut rng)).unwrap();
        let dense = c.dense();
        let v = DVector::from_fn(n * tau, |_, _| rng.gen_range(-3.0..3.0));
        let want = dense.clone().cholesky().unwrap().solve(&v);
        let got = c.kron_solve(&v).unwrap();
        assert!((&got - &want).norm() / want.norm() < 1e-8);
        let ld = 2.0 * dense.cholesky().unwrap().l().diagonal().map(f64::ln).sum();
        assert!(((c.logdet() - ld) / ld.abs().max(1.0)).abs() < 1e-8);
    }
}

#[test]
fn marginal_cov_matches_dense_assembly() {
    let spec = BasisSpec {
        k_mu: 4,
        k_zeta: 4,
        k_gamma: 5,
        lat: Interval::new(-20.0, -12.0),
        lon: Interval::new(-53.0, -45.0),
        time: Interval::new(1.0, 4.0),
    };
    let lats = [-15.0, -13.5, -18.0];
    let lons = [-50.0, -47.0, -52.0];
    let times = [1.0, 2.5, 4.0];
    let d = DesignSet::build(&spec, &lats, &lons, &times).unwrap();
    let reps = [2usize, 1];
    let st = ParamState {
        sigma2_theta: vec![0.3, 1.1],
        sigma2_vartheta: vec![0.7, 0.2],
        omega2: 2.5,
        ..ParamState::zeros(&d, 2, 0.5)
    };
    let coords: Vec<(f64, f64)> = lats.iter().copied().zip(lons).collect();
    let cov = build_error_cov(
        &coords,
        &times,
        st.omega2,
        &MaternParams::new(0.5, 4.0).unwrap(),
        &TemporalParams::new(2.0).unwrap(),
        DistanceMetric::Euclidean,
    )
    .unwrap();
    let full = assemble_full(&d.m, &d.p, &d.n, &reps).unwrap();
    let rows = d.rows();
    let total = reps.iter().sum::<usize>() * rows;
    let mut sigma_theta = DMatrix::zeros(2 * d.p.ncols(), 2 * d.p.ncols());
    let mut sigma_vartheta = DMatrix::zeros(2 * d.n.ncols(), 2 * d.n.ncols());
    for i in 0..2 {
        for k in 0..d.p.ncols() {
            sigma_theta[(i * d.p.ncols() + k, i * d.p.ncols() + k)] = st.sigma2_theta[i];
        }
        for k in 0..d.n.ncols() {
            sigma_vartheta[(i * d.n.ncols() + k, i * d.n.ncols() + k)] = st.sigma2_vartheta[i];
        }
    }
    let slice_cov = kron(&cov.s, &cov.t) * st.omega2;
    let mut dense =
        &full.q * sigma_theta * full.q.transpose() + &full.r * sigma_vartheta * full.r.transpose();
    for s in 0..3 {
        let mut v = dense.view_mut((s * rows, s * rows), (rows, rows));
        v += &slice_cov;
    }
    let index = |row: usize| {
        let slice = row / rows;
        let (block, rep) = if slice < 2 { (0, slice) } else { (1, 0) };
        ObsIndex {
            block,
            rep,
            loc: (row % rows) / times.len(),
            time: row % times.len(),
        }
    };
    for a in 0..total {
        for b in 0..total {
            let m = marginal_cov(&d, &st, &cov, index(a), index(b)).unwrap();
            assert!(
                (m - dense[(a, b)]).abs() < 1e-10,
                "({a},{b}) {m} vs {}",
                dense[(a, b)]
            );
        }
    }
}

proptest! {
    #[test]
    fn bessel_recurrence(nu in 0.05f64..4.0, x in 0.01f64..50.0) {
        // K_{ν+1}(x) = K_{ν-1}(x) + (2ν/x) K_ν(x), with K_{-ν} = K_ν.
        let lhs = bessel_k(nu + 1.0, x).unwrap();
        let rhs = bessel_k((nu - 1.0).abs(), x).unwrap() + 2.0 * nu / x * bessel_k(nu, x).unwrap();
        prop_assert!(((lhs - rhs) / lhs).abs() < 1e-9);
    }

    #[test]
    fn matern_is_monotone_and_bounded(kappa in 0.1f64..3.5, phi in 0.1f64..1000.0, d in 0.0f64..100.0, h in 1e-6f64..10.0) {
        let p = MaternParams::new(kappa, phi).unwrap();
        let a = matern_corr(d, &p);
        let b = matern_corr(d + h, &p);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a + 1e-12);
    }

    #[test]
    fn correlation_matrices_are_pd(kappa in 0.1f64..2.5, phi in 0.5f64..50.0, varphi in 0.1f64..10.0, seed in 0u64..1000) {
        let mut rng = RngStream::new(seed, 0);
        let coords: Vec<(f64, f64)> = (0..6).map(|_| (rng.gen_range(-20.0..-12.0), rng.gen_range(-53.0..-45.0))).collect();
        let s = matern_matrix(&DistanceMetric::Euclidean.matrix(&coords), &MaternParams::new(kappa, phi).unwrap());
        let t = temporal_matrix(&[1.0, 2.0, 3.0, 4.0], &TemporalParams::new(varphi).unwrap());
        prop_assert!(KroneckerCov::new(1.0, s, t).is_ok());
    }
}
