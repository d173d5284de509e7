use nalgebra::DMatrix;
use stfm::covariance::{build_error_cov, marginal_cov, MaternParams, ObsIndex, TemporalParams};
use stfm::design::DesignSet;
use stfm::model::PriorConfig;
use stfm::sampler::fit_with_spec;
use stfm::simulate::{
    desk_mcmc, draw_truth, generate_dataset, generate_replicate, holdout_split, SimConfig,
};

fn small(n: usize, tau: usize, reps: Vec<usize>) -> SimConfig {
    let blocks = reps.len();
    SimConfig {
        n,
        tau,
        reps,
        k_mu: 4,
        k_zeta: 4,
        k_gamma: 4,
        omega2: 1.5,
        sigma2_theta: vec![0.8; blocks],
        sigma2_vartheta: vec![0.5; blocks],
        phi: 3.0,
        varphi: 1.2,
        kappa: 1.5,
        beta_sd: 0.0,
        seed: 31,
        ..SimConfig::default()
    }
}

fn mc_cov(samples: &[Vec<f64>]) -> DMatrix<f64> {
    let d = samples[0].len();
    let n = samples.len() as f64;
    let mean: Vec<f64> = (0..d)
        .map(|a| samples.iter().map(|s| s[a]).sum::<f64>() / n)
        .collect();
    DMatrix::from_fn(d, d, |a, b| {
        samples
            .iter()
            .map(|s| (s[a] - mean[a]) * (s[b] - mean[b]))
            .sum::<f64>()
            / (n - 1.0)
    })
}

#[test]
fn error_covariance_matches_kronecker_form() {
    let cfg = SimConfig {
        sigma2_theta: vec![0.0; 2],
        sigma2_vartheta: vec![0.0; 2],
        ..small(3, 3, vec![4, 4])
    };
    let truth = draw_truth(&cfg).unwrap();
    // Every slice of a replicate is an independent error surface.
    let samples: Vec<Vec<f64>> = (0..500)
        .flat_map(|r| {
            let y = generate_replicate(&cfg, &truth, r).unwrap().0.y;
            y.chunks(9).map(<[f64]>::to_vec).collect::<Vec<_>>()
        })
        .collect();
    let coords: Vec<(f64, f64)> = truth.locations.iter().map(|l| (l.lat, l.lon)).collect();
    let target = build_error_cov(
        &coords,
        &truth.times,
        cfg.omega2,
        &MaternParams::new(cfg.kappa, cfg.phi).unwrap(),
        &TemporalParams::new(cfg.varphi).unwrap(),
        cfg.metric,
    )
    .unwrap()
    .dense();
    // Entrywise, on the correlation scale.
    let emp = mc_cov(&samples);
    for a in 0..9 {
        for b in 0..9 {
            let scale = (target[(a, a)] * target[(b, b)]).sqrt();
            let err = (emp[(a, b)] - target[(a, b)]).abs() / scale;
            assert!(
                err < 0.10,
                "({a}, {b}): {} vs {}",
                emp[(a, b)],
                target[(a, b)]
            );
        }
    }
}

#[test]
fn marginal_covariance_matches_monte_carlo() {
    let cfg = small(3, 2, vec![2, 1]);
    let truth = draw_truth(&cfg).unwrap();
    let m = 20_000;
    let samples: Vec<Vec<f64>> = (0..m)
        .map(|r| generate_replicate(&cfg, &truth, r).unwrap().0.y)
        .collect();
    let emp = mc_cov(&samples);

    let lats: Vec<f64> = truth.locations.iter().map(|l| l.lat).collect();
    let lons: Vec<f64> = truth.locations.iter().map(|l| l.lon).collect();
    let designs = DesignSet::build(&truth.spec, &lats, &lons, &truth.times).unwrap();
    let (_, state) = generate_replicate(&cfg, &truth, 0).unwrap();
    let coords: Vec<(f64, f64)> = truth.locations.iter().map(|l| (l.lat, l.lon)).collect();
    let kc = build_error_cov(
        &coords,
        &truth.times,
        cfg.omega2,
        &state.matern().unwrap(),
        &state.temporal().unwrap(),
        cfg.metric,
    )
    .unwrap();
    let mut index = Vec::new();
    for (block, &j) in cfg.reps.iter().enumerate() {
        for rep in 0..j {
            for loc in 0..cfg.n {
                for time in 0..cfg.tau {
                    index.push(ObsIndex {
                        block,
                        rep,
                        loc,
                        time,
                    });
                }
            }
        }
    }
    let d = index.len();
    let exact = DMatrix::from_fn(d, d, |a, b| {
        marginal_cov(&designs, &state, &kc, index[a], index[b]).unwrap()
    });
    for a in 0..d {
        for b in 0..d {
            let se = ((exact[(a, a)] * exact[(b, b)] + exact[(a, b)].powi(2)) / m as f64).sqrt();
            let z = (emp[(a, b)] - exact[(a, b)]).abs() / se;
            assert!(
                z < 4.5,
                "({a}, {b}): MC {}, exact {}, z {z}",
                emp[(a, b)],
                exact[(a, b)]
            );
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = small(4, 3, vec![2, 1]);
    assert_eq!(
        generate_dataset(&cfg).unwrap(),
        generate_dataset(&cfg).unwrap()
    );
    let other = SimConfig {
        seed: 32,
        ..cfg.clone()
    };
    assert_ne!(
        generate_dataset(&cfg).unwrap().0.y,
        generate_dataset(&other).unwrap().0.y
    );

    let truth = draw_truth(&cfg).unwrap();
    let (a, _) = generate_replicate(&cfg, &truth, 3).unwrap();
    let (b, _) = generate_replicate(&cfg, &truth, 4).unwrap();
    assert_eq!(a.locations, b.locations);
    assert_ne!(a.y, b.y);
}

#[test]
fn holdout_drops_last_station_and_rep() {
    let cfg = small(4, 3, vec![3, 2]);
    let (ds, _, _) = generate_dataset(&cfg).unwrap();
    let (train, held) = holdout_split(&ds).unwrap();
    assert_eq!(train.reps, vec![2, 1]);
    assert_eq!(train.n_locations(), 3);
    assert_eq!(held.len(), 2);
    assert_eq!(held[0], ds.slice(0, 2));
    assert_eq!(held[1], ds.slice(1, 1));
    assert_eq!(train.slice(1, 0), ds.slice(1, 0).rows(0, 3).into_owned());
    assert!(holdout_split(&generate_dataset(&small(4, 3, vec![1])).unwrap().0).is_err());
}

#[test]
fn adapted_acceptance_is_moderate() {
    let cfg = SimConfig::default();
    let (ds, _, spec) = generate_dataset(&cfg).unwrap();
    let fit = fit_with_spec(
        &ds,
        &spec,
        cfg.kappa,
        &PriorConfig::default(),
        &desk_mcmc(),
        cfg.metric,
    )
    .unwrap();
    let acc = fit.chains[0].acceptance;
    for a in [acc.phi, acc.varphi] {
        assert!((0.15..=0.6).contains(&a), "acceptance {acc:?}");
    }
}
