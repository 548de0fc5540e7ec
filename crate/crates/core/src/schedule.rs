//! Noise schedules and the three deterministic DDIM layers: noise
//! prediction feeds the Tweedie estimate of the clean sample, which feeds the
//! deterministic posterior-mean step.

use crate::error::{ensure_shape, Error, Result};
use crate::field::Field;

/// Smallest value used for `1 - alpha_bar` when it appears as a divisor.
pub const MIN_NOISE_LEVEL: f64 = 1e-12;

/// Cumulative signal levels `alpha_bar[t]` for `t = 0..=train_steps` together
/// with the timestep subsequence visited by the sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alphas_bar: Vec<f64>,
    steps: Vec<usize>,
}

impl NoiseSchedule {
    /// Linear-beta schedule with `num_steps` sampling timesteps spaced as
    /// `floor(k * T / S)` for `k = 1..=S`, so the last one is always `T`.
    pub fn linear(
        train_steps: usize,
        num_steps: usize,
        beta_min: f64,
        beta_max: f64,
    ) -> Result<Self> {
        if train_steps == 0 {
            return Err(Error::Config("train_steps must be positive".into()));
        }
        if num_steps == 0 || num_steps > train_steps {
            return Err(Error::Config(format!(
                "num_steps must be in 1..={train_steps}, got {num_steps}"
            )));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::Config(format!(
                "beta range must satisfy 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            )));
        }

        let mut alphas_bar = Vec::with_capacity(train_steps + 1);
        alphas_bar.push(1.0);
        let mut prod = 1.0;
        for t in 1..=train_steps {
            let beta = if train_steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * (t - 1) as f64 / (train_steps - 1) as f64
            };
            prod *= 1.0 - beta;
            alphas_bar.push(prod);
        }

        let steps = (1..=num_steps)
            .map(|k| k * train_steps / num_steps)
            .collect();
        Self::from_parts(alphas_bar, steps)
    }

    /// Builds a schedule from explicit levels and timesteps, checking every
    /// invariant.
    pub fn from_parts(alphas_bar: Vec<f64>, steps: Vec<usize>) -> Result<Self> {
        if alphas_bar.len() < 2 {
            return Err(Error::Config(
                "schedule needs at least one training step".into(),
            ));
        }
        if alphas_bar[0] != 1.0 {
            return Err(Error::Config("alpha_bar[0] must be exactly 1".into()));
        }
        for (t, pair) in alphas_bar.windows(2).enumerate() {
            if !(pair[1] > 0.0 && pair[1] < pair[0]) {
                return Err(Error::Config(format!(
                    "alpha_bar must be strictly decreasing and positive (t = {})",
                    t + 1
                )));
            }
        }
        let train_steps = alphas_bar.len() - 1;
        if steps.is_empty() {
            return Err(Error::Config("sampling steps must be nonempty".into()));
        }
        if steps[0] == 0 || steps.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "sampling steps must be strictly increasing and start at 1 or later".into(),
            ));
        }
        if *steps.last().unwrap() != train_steps {
            return Err(Error::Config(format!(
                "last sampling step must be {train_steps}"
            )));
        }
        Ok(Self { alphas_bar, steps })
    }

    pub fn train_steps(&self) -> usize {
        self.alphas_bar.len() - 1
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn alphas_bar(&self) -> &[f64] {
        &self.alphas_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alphas_bar.get(t).copied().ok_or_else(|| {
            Error::Contract(format!("timestep {t} outside 0..={}", self.train_steps()))
        })
    }

    /// `(t, t_prev)` pairs in sampling order, from `T` down to the final
    /// transition into `t_prev = 0`.
    pub fn transitions(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.steps.len());
        for k in (0..self.steps.len()).rev() {
            let prev = if k == 0 { 0 } else { self.steps[k - 1] };
            out.push((self.steps[k], prev));
        }
        out
    }
}

/// `sqrt(alpha_bar) * x0 + sqrt(1 - alpha_bar) * eps`.
pub fn forward_diffuse(x0: &Field, eps: &Field, t: usize, sched: &NoiseSchedule) -> Result<Field> {
    let a = sched.alpha_bar(t)?;
    x0.lin_comb(a.sqrt(), eps, (1.0 - a).sqrt())
}

/// Tweedie estimate of the clean sample from a noisy one and predicted noise.
pub fn tweedie(x_t: &Field, eps_pred: &Field, t: usize, sched: &NoiseSchedule) -> Result<Field> {
    if t == 0 {
        return Err(Error::Contract("tweedie requires t >= 1".into()));
    }
    ensure_shape(x_t.shape(), eps_pred.shape())?;
    let a = sched.alpha_bar(t)?;
    let sa = a.sqrt();
    let sn = (1.0 - a).sqrt();
    x_t.zip_map(eps_pred, |x, e| (x - sn * e) / sa)
}

/// Deterministic DDIM update (zero stochasticity) from `t` to `t_prev`.
pub fn ddim_step(
    x_t: &Field,
    x0_hat: &Field,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<Field> {
    if t_prev >= t {
        return Err(Error::Contract(format!(
            "ddim step needs t_prev < t, got t = {t}, t_prev = {t_prev}"
        )));
    }
    ensure_shape(x_t.shape(), x0_hat.shape())?;
    let a = sched.alpha_bar(t)?;
    let a_prev = sched.alpha_bar(t_prev)?;
    let sa = a.sqrt();
    let sa_prev = a_prev.sqrt();
    let ratio = ((1.0 - a_prev) / (1.0 - a).max(MIN_NOISE_LEVEL)).sqrt();
    x0_hat.zip_map(x_t, |x0, x| sa_prev * x0 + ratio * (x - sa * x0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> NoiseSchedule {
        NoiseSchedule::linear(1000, 30, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn step_counts() {
        assert_eq!(sched().steps().len(), 30);
        let s50 = NoiseSchedule::linear(1000, 50, 1e-4, 0.02).unwrap();
        assert_eq!(s50.steps().len(), 50);
        assert_eq!(*s50.steps().last().unwrap(), 1000);
        assert_eq!(s50.steps()[0], 20);
    }

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::linear(1, 1, 0.3, 0.3).unwrap();
        assert_eq!(s.alphas_bar(), &[1.0, 1.0 - 0.3]);
        assert_eq!(s.steps(), &[1]);
    }

    #[test]
    fn invalid_configuration() {
        assert!(matches!(
            NoiseSchedule::linear(10, 11, 1e-4, 0.02),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            NoiseSchedule::linear(10, 5, 0.0, 0.02),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            NoiseSchedule::linear(10, 5, 0.03, 0.02),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            NoiseSchedule::linear(10, 5, 1e-4, 1.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            NoiseSchedule::linear(10, 0, 1e-4, 0.02),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn alpha_bar_invariants() {
        let s = sched();
        assert_eq!(s.alphas_bar()[0], 1.0);
        assert!(s.alphas_bar().windows(2).all(|w| w[1] < w[0] && w[1] > 0.0));
        assert!(s.steps().windows(2).all(|w| w[0] < w[1]));
        let tr = s.transitions();
        assert_eq!(tr.first(), Some(&(1000, s.steps()[28])));
        assert_eq!(tr.last(), Some(&(s.steps()[0], 0)));
    }

    #[test]
    fn forward_at_zero_is_identity() {
        let x0 = Field::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let eps = Field::new(vec![3], vec![0.3, 0.1, -0.7]).unwrap();
        assert_eq!(forward_diffuse(&x0, &eps, 0, &sched()).unwrap(), x0);
    }

    #[test]
    fn forward_of_zero_signal() {
        let s = sched();
        let x0 = Field::zeros(&[2]).unwrap();
        let eps = Field::new(vec![2], vec![1.5, -0.25]).unwrap();
        let a = s.alpha_bar(400).unwrap();
        let out = forward_diffuse(&x0, &eps, 400, &s).unwrap();
        assert_eq!(
            out.values(),
            &[(1.0 - a).sqrt() * 1.5, (1.0 - a).sqrt() * -0.25]
        );
    }

    #[test]
    fn tweedie_with_zero_noise() {
        let s = sched();
        let x = Field::new(vec![2], vec![0.4, -1.0]).unwrap();
        let out = tweedie(&x, &Field::zeros(&[2]).unwrap(), 500, &s).unwrap();
        let sa = s.alpha_bar(500).unwrap().sqrt();
        assert!((out.values()[0] - 0.4 / sa).abs() < 1e-15);
        assert!((out.values()[1] + 1.0 / sa).abs() < 1e-15);
        assert!(tweedie(&x, &x, 0, &s).is_err());
    }

    #[test]
    fn ddim_to_zero_returns_estimate() {
        let s = sched();
        let x = Field::new(vec![2], vec![3.0, -4.0]).unwrap();
        let x0 = Field::new(vec![2], vec![0.25, 0.5]).unwrap();
        assert_eq!(ddim_step(&x, &x0, 33, 0, &s).unwrap(), x0);
    }

    #[test]
    fn ddim_consistent_on_exact_prediction() {
        let s = sched();
        let x0 = Field::new(vec![3], vec![0.9, -0.3, 0.0]).unwrap();
        let eps = Field::new(vec![3], vec![-1.2, 0.4, 2.2]).unwrap();
        let xt = forward_diffuse(&x0, &eps, 700, &s).unwrap();
        let stepped = ddim_step(&xt, &x0, 700, 433, &s).unwrap();
        let expect = forward_diffuse(&x0, &eps, 433, &s).unwrap();
        assert!(stepped.linf_distance(&expect).unwrap() < 1e-14);
    }

    #[test]
    fn ddim_rejects_non_decreasing_time() {
        let s = sched();
        let x = Field::zeros(&[1]).unwrap();
        assert!(matches!(
            ddim_step(&x, &x, 10, 10, &s),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            ddim_step(&x, &x, 10, 20, &s),
            Err(Error::Contract(_))
        ));
    }
}
