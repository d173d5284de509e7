//! Statistical helpers shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod oracles;

/// Kolmogorov distribution tail `P(K > λ)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test; returns (D, p-value).
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut x = samples.to_vec();
    x.sort_by(|a, b| a.total_cmp(b));
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sn = n.sqrt();
    (d, kolmogorov_q((sn + 0.12 + 0.11 / sn) * d))
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Sample covariance of the rows of `draws` (one draw per row).
pub fn sample_cov(draws: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = draws[0].len();
    let n = draws.len() as f64;
    let mut m = vec![0.0; k];
    for d in draws {
        for (a, v) in m.iter_mut().zip(d) {
            *a += v / n;
        }
    }
    let mut c = vec![vec![0.0; k]; k];
    for d in draws {
        for a in 0..k {
            let da = d[a] - m[a];
            for b in a..k {
                c[a][b] += da * (d[b] - m[b]) / (n - 1.0);
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            c[a][b] = c[b][a];
        }
    }
    (m, c)
}
