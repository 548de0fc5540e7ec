//! Independent reference computations checked against the library.

use diffsync::{
    ddim_step, gaussian_noise_stream, run_case, tweedie, CaseId, Field, GaussianMixture,
    MixtureLayout, NoisePredictor, NoiseSchedule, ProjectionOperator,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod support;
use support::{affine_sampler, brute_force_rotation, quadrature_posterior_mean};

fn random_case(rng: &mut ChaCha8Rng, d: usize) -> (Vec<f64>, Vec<Vec<f64>>, Vec<f64>) {
    let k = rng.random_range(1..=3usize);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let means = (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let variances = (0..k).map(|_| rng.random_range(0.01..1.5)).collect();
    (weights, means, variances)
}

fn check_quadrature(d: usize, seed: u64, n: usize) {
    let sched = NoiseSchedule::linear(1000, 1000, 1e-4, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (w, m, v) = random_case(&mut rng, d);
        let mut w = w;
        let last = w.len() - 1;
        w[last] = 1.0 - w[..last].iter().sum::<f64>();
        let fields = m
            .iter()
            .map(|mu| Field::new(vec![d], mu.clone()).unwrap())
            .collect();
        let gmm = GaussianMixture::new(w.clone(), fields, v.clone(), MixtureLayout::Joint).unwrap();
        let t = rng.random_range(1..=1000usize);
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let a = sched.alpha_bar(t).unwrap();
        let oracle = quadrature_posterior_mean(&w, &m, &v, &x, a, n);
        let got = gmm
            .posterior_mean(&Field::new(vec![d], x).unwrap(), t, &sched)
            .unwrap();
        for (o, g) in oracle.iter().zip(got.values()) {
            worst = worst.max((o - g).abs());
        }
    }
    assert!(worst < 1e-6, "{d}-D quadrature disagreement {worst}");
}

#[test]
fn posterior_mean_matches_quadrature_1d() {
    check_quadrature(1, 17, 4000);
}

#[test]
fn posterior_mean_matches_quadrature_2d() {
    check_quadrature(2, 23, 400);
}

#[test]
fn quadrature_oracle_reproduces_conjugate_gaussian() {
    // Single component: E[x0|x] = mu + sqrt(a) s2 / (a s2 + 1 - a) (x - sqrt(a) mu).
    let (mu, s2, a, x): (f64, f64, f64, f64) = (0.7, 0.4, 0.3, -1.2);
    let got = quadrature_posterior_mean(&[1.0], &[vec![mu]], &[s2], &[x], a, 2000)[0];
    let expect = mu + a.sqrt() * s2 / (a * s2 + 1.0 - a) * (x - a.sqrt() * mu);
    assert!((got - expect).abs() < 1e-12);
}

#[test]
fn full_loop_matches_affine_composition() {
    let sched = NoiseSchedule::linear(1000, 30, 1e-4, 0.02).unwrap();
    let shape = [5];
    let (mu, s2) = (0.35, 0.6);
    let gmm = GaussianMixture::gaussian(
        Field::filled(&shape, mu).unwrap(),
        s2,
        MixtureLayout::Pixelwise,
    )
    .unwrap();
    let ops = vec![ProjectionOperator::identity(&shape).unwrap()];
    let (slope, intercept) = affine_sampler(mu, s2, &sched);
    for seed in 0..5 {
        let z_t = gaussian_noise_stream(&shape, seed, 0).unwrap();
        let r = run_case(CaseId::Case(2), &ops, &gmm, &sched, seed).unwrap();
        for (x, y) in z_t
            .values()
            .iter()
            .zip(r.final_canonical.slabs()[0].values())
        {
            assert!((slope * x + intercept - y).abs() < 1e-10);
        }
    }
}

#[test]
fn schedule_step_pairs_follow_subsequence() {
    let sched = NoiseSchedule::linear(1000, 30, 1e-4, 0.02).unwrap();
    let steps = sched.steps().to_vec();
    let expect: Vec<usize> = (1..=30).map(|k| k * 1000 / 30).collect();
    assert_eq!(steps, expect);
    let tr = sched.transitions();
    assert_eq!(tr[0], (1000, 966));
    assert_eq!(*tr.last().unwrap(), (33, 0));
    // alpha_bar from the cumulative product of 1 - beta with linear betas.
    let beta = |t: usize| 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0;
    let mut prod = 1.0;
    for t in 1..=1000 {
        prod *= 1.0 - beta(t);
        assert!((sched.alphas_bar()[t] - prod).abs() < 1e-14);
    }
}

#[test]
fn rotation_table_matches_brute_force() {
    for n in [7, 8, 16] {
        for k in 0..14 {
            let angle = 45.0 + 130.0 * k as f64 / 13.0;
            let op = ProjectionOperator::inner_rotation(&[n, n], angle).unwrap();
            assert_eq!(
                op.forward_map(),
                brute_force_rotation(n, angle).as_slice(),
                "n={n} angle={angle}"
            );
        }
        for angle in [0.0, 90.0, 180.0, 270.0] {
            let op = ProjectionOperator::inner_rotation(&[n, n], angle).unwrap();
            assert_eq!(op.forward_map(), brute_force_rotation(n, angle).as_slice());
        }
    }
}

#[test]
fn exact_predictor_tweedie_is_posterior_mean() {
    let sched = NoiseSchedule::linear(1000, 30, 1e-4, 0.02).unwrap();
    let gmm =
        GaussianMixture::homogeneous(&[3], vec![0.25, 0.75], &[-1.0, 2.0], vec![0.3, 0.1]).unwrap();
    let x = gaussian_noise_stream(&[3], 4, 0).unwrap();
    for t in [1, 10, 500, 1000] {
        let eps = gmm.predict(&x, t, &sched).unwrap();
        let x0 = tweedie(&x, &eps, t, &sched).unwrap();
        let pm = gmm.posterior_mean(&x, t, &sched).unwrap();
        assert!(x0.linf_distance(&pm).unwrap() < 1e-9);
        let back = ddim_step(&x, &x0, t, 0, &sched).unwrap();
        assert!(back.linf_distance(&x0).unwrap() < 1e-12);
    }
}
