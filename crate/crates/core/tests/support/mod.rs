//! Reference computations shared by the integration and acceptance tests.
#![allow(dead_code)]

use diffsync::NoiseSchedule;

/// Composite Simpson weights for `n` (even) intervals.
pub fn simpson_weights(n: usize) -> Vec<f64> {
    (0..=n)
        .map(|i| {
            if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        })
        .collect()
}

/// `E[x0 | x_t]` by numerical integration of prior times likelihood, one
/// component at a time on a box around that component's posterior bulk.
pub fn quadrature_posterior_mean(
    weights: &[f64],
    means: &[Vec<f64>],
    variances: &[f64],
    x_t: &[f64],
    a: f64,
    n: usize,
) -> Vec<f64> {
    let d = x_t.len();
    assert!(d == 1 || d == 2);
    let noise = 1.0 - a;
    let sa = a.sqrt();
    let sw = simpson_weights(n);
    let mut log_mass = Vec::new();
    let mut cond_means = Vec::new();
    for k in 0..weights.len() {
        let s2 = variances[k];
        let tau2 = 1.0 / (1.0 / s2 + a / noise);
        let tau = tau2.sqrt();
        let centre: Vec<f64> = (0..d)
            .map(|j| tau2 * (means[k][j] / s2 + sa * x_t[j] / noise))
            .collect();
        let half = 10.0 * tau;
        let h = 2.0 * half / n as f64;
        let log_integrand = |x: &[f64]| {
            let mut l = weights[k].ln() - 0.5 * d as f64 * (2.0 * std::f64::consts::PI * s2).ln();
            for j in 0..d {
                l -= 0.5 * (x[j] - means[k][j]).powi(2) / s2;
                l -= 0.5 * (x_t[j] - sa * x[j]).powi(2) / noise;
            }
            l
        };
        let grid = |i: usize, j: usize| centre[j] - half + i as f64 * h;
        let peak = log_integrand(&centre);
        let mut mass = 0.0;
        let mut first = vec![0.0; d];
        let mut edge: f64 = 0.0;
        if d == 1 {
            for (i, wi) in sw.iter().enumerate() {
                let x = [grid(i, 0)];
                let v = (log_integrand(&x) - peak).exp();
                if i == 0 || i == n {
                    edge = edge.max(v);
                }
                mass += wi * v;
                first[0] += wi * v * x[0];
            }
        } else {
            for i in 0..=n {
                for l in 0..=n {
                    let x = [grid(i, 0), grid(l, 1)];
                    let v = (log_integrand(&x) - peak).exp();
                    if i == 0 || i == n || l == 0 || l == n {
                        edge = edge.max(v);
                    }
                    let w = sw[i] * sw[l];
                    mass += w * v;
                    first[0] += w * v * x[0];
                    first[1] += w * v * x[1];
                }
            }
        }
        assert!(edge < 1e-20, "integration box too small: edge {edge}");
        let cell = (h / 3.0).powi(d as i32);
        log_mass.push(peak + (mass * cell).ln());
        cond_means.push(first.iter().map(|f| f / mass).collect::<Vec<_>>());
    }
    let top = log_mass.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let r: Vec<f64> = log_mass.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = r.iter().sum();
    (0..d)
        .map(|j| {
            r.iter()
                .zip(&cond_means)
                .map(|(r, m)| r * m[j])
                .sum::<f64>()
                / total
        })
        .collect()
}

/// Scalar affine composition of the full deterministic sampling loop for a
/// single Gaussian prior `N(mu, s2)`: returns `(slope, intercept)`.
pub fn affine_sampler(mu: f64, s2: f64, sched: &NoiseSchedule) -> (f64, f64) {
    let (mut slope, mut intercept) = (1.0, 0.0);
    for (t, tp) in sched.transitions() {
        let a = sched.alphas_bar()[t];
        let ap = sched.alphas_bar()[tp];
        let g = a.sqrt() * s2 / (a * s2 + 1.0 - a);
        // x0 = mu (1 - g sqrt(a)) + g x
        let (x0s, x0c) = (g, mu * (1.0 - g * a.sqrt()));
        let r = ((1.0 - ap) / (1.0 - a)).sqrt();
        // x' = sqrt(ap) x0 + r (x - sqrt(a) x0)
        let s = ap.sqrt() * x0s + r * (1.0 - a.sqrt() * x0s);
        let c = ap.sqrt() * x0c - r * a.sqrt() * x0c;
        intercept = s * intercept + c;
        slope *= s;
    }
    (slope, intercept)
}

/// Canonical source of every instance pixel by exhaustive search: the grid
/// point closest to the inverse-rotated position, smallest `(i, j)` on ties.
pub fn brute_force_rotation(n: usize, angle_deg: f64) -> Vec<usize> {
    let c = (n as f64 - 1.0) / 2.0;
    let th = (-angle_deg).to_radians();
    let (cos, sin) = if angle_deg % 90.0 == 0.0 {
        let k = ((-angle_deg / 90.0).rem_euclid(4.0)) as i32;
        [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][k as usize]
    } else {
        (th.cos(), th.sin())
    };
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let (di, dj) = (i as f64 - c, j as f64 - c);
            if di * di + dj * dj > c * c {
                out.push(i * n + j);
                continue;
            }
            let (si, sj) = (c + cos * di - sin * dj, c + sin * di + cos * dj);
            let mut best = (f64::INFINITY, 0);
            for gi in 0..n {
                for gj in 0..n {
                    let d = (gi as f64 - si).powi(2) + (gj as f64 - sj).powi(2);
                    if d < best.0 - 1e-9 {
                        best = (d, gi * n + gj);
                    }
                }
            }
            out.push(best.1);
        }
    }
    out
}
