//! Noise predictors.
//!
//! [`GaussianMixture`] supplies an exact predictor: under the forward model
//! the noisy marginal of an isotropic mixture component `N(mu_k, s_k^2 I)` is
//! `N(sqrt(a) mu_k, (a s_k^2 + 1 - a) I)` with `a = alpha_bar[t]`, and the
//! conditional clean-sample mean of that component is
//!
//! ```text
//! mu_k + sqrt(a) s_k^2 / (a s_k^2 + 1 - a) * (x_t - sqrt(a) mu_k)
//! ```
//!
//! Mixing those with the log-domain responsibilities gives `E[x0 | x_t]`,
//! and the returned noise is the one for which the Tweedie estimate
//! reproduces that posterior mean.

use crate::error::{ensure_shape, Error, Result};
use crate::field::Field;
use crate::schedule::{NoiseSchedule, MIN_NOISE_LEVEL};

/// A deterministic noise-prediction model evaluated in an instance space.
pub trait NoisePredictor: Sync {
    fn predict(&self, x_t: &Field, t: usize, sched: &NoiseSchedule) -> Result<Field>;

    /// The only input shape the predictor accepts, if it has one.
    fn input_shape(&self) -> Option<&[usize]> {
        None
    }
}

/// How mixture components couple the elements of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixtureLayout {
    /// The whole field is one draw from the mixture; responsibilities are shared.
    Joint,
    /// Every element is an independent 1-D mixture with its own component means.
    Pixelwise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Field>,
    variances: Vec<f64>,
    layout: MixtureLayout,
}

impl GaussianMixture {
    pub fn new(
        weights: Vec<f64>,
        means: Vec<Field>,
        variances: Vec<f64>,
        layout: MixtureLayout,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::Config("mixture needs at least one component".into()));
        }
        if means.len() != k || variances.len() != k {
            return Err(Error::Config(format!(
                "mixture has {k} weights but {} means and {} variances",
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("mixture weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!(
                "mixture weights must sum to 1 (got {total})"
            )));
        }
        if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("mixture variances must be positive".into()));
        }
        for m in &means[1..] {
            if m.shape() != means[0].shape() {
                return Err(Error::Config(format!(
                    "component means disagree on shape: {:?} vs {:?}",
                    means[0].shape(),
                    m.shape()
                )));
            }
        }
        Ok(Self {
            weights,
            means,
            variances,
            layout,
        })
    }

    /// Single isotropic Gaussian.
    pub fn gaussian(mean: Field, variance: f64, layout: MixtureLayout) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![variance], layout)
    }

    /// Pixelwise mixture whose component means are constant over `shape`.
    pub fn homogeneous(
        shape: &[usize],
        weights: Vec<f64>,
        means: &[f64],
        variances: Vec<f64>,
    ) -> Result<Self> {
        let fields = means
            .iter()
            .map(|&m| Field::filled(shape, m))
            .collect::<Result<Vec<_>>>()?;
        Self::new(weights, fields, variances, MixtureLayout::Pixelwise)
    }

    pub fn shape(&self) -> &[usize] {
        self.means[0].shape()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Field] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn layout(&self) -> MixtureLayout {
        self.layout
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    /// `E[x0 | x_t]` under the forward model.
    pub fn posterior_mean(&self, x_t: &Field, t: usize, sched: &NoiseSchedule) -> Result<Field> {
        ensure_shape(self.shape(), x_t.shape())?;
        if t == 0 {
            return Err(Error::Contract(
                "mixture posterior is undefined at t = 0".into(),
            ));
        }
        let a = sched.alpha_bar(t)?;
        let sa = a.sqrt();
        let noise = 1.0 - a;
        let comps: Vec<Component> = (0..self.num_components())
            .map(|k| {
                let s2 = self.variances[k];
                let v = a * s2 + noise;
                Component {
                    log_weight: self.weights[k].ln(),
                    marginal_var: v,
                    gain: sa * s2 / v,
                }
            })
            .collect();

        let values = match self.layout {
            MixtureLayout::Joint => self.joint_posterior(x_t, sa, &comps),
            MixtureLayout::Pixelwise => self.pixelwise_posterior(x_t, sa, &comps),
        };
        Ok(Field::from_parts(x_t.shape().to_vec(), values))
    }

    fn joint_posterior(&self, x_t: &Field, sa: f64, comps: &[Component]) -> Vec<f64> {
        let d = x_t.len() as f64;
        let logits: Vec<f64> = comps
            .iter()
            .zip(&self.means)
            .map(|(c, mu)| {
                let dist2: f64 = x_t
                    .values()
                    .iter()
                    .zip(mu.values())
                    .map(|(x, m)| (x - sa * m) * (x - sa * m))
                    .sum();
                c.log_weight - 0.5 * d * c.marginal_var.ln() - 0.5 * dist2 / c.marginal_var
            })
            .collect();
        let resp = softmax(&logits);

        let mut out = vec![0.0; x_t.len()];
        for ((r, c), mu) in resp.iter().zip(comps).zip(&self.means) {
            for ((o, &x), &m) in out.iter_mut().zip(x_t.values()).zip(mu.values()) {
                *o += r * (m + c.gain * (x - sa * m));
            }
        }
        out
    }

    fn pixelwise_posterior(&self, x_t: &Field, sa: f64, comps: &[Component]) -> Vec<f64> {
        let k = comps.len();
        let mut logits = vec![0.0; k];
        x_t.values()
            .iter()
            .enumerate()
            .map(|(p, &x)| {
                for (j, c) in comps.iter().enumerate() {
                    let r = x - sa * self.means[j].values()[p];
                    logits[j] =
                        c.log_weight - 0.5 * c.marginal_var.ln() - 0.5 * r * r / c.marginal_var;
                }
                let resp = softmax(&logits);
                let mut acc = 0.0;
                for (j, c) in comps.iter().enumerate() {
                    let m = self.means[j].values()[p];
                    acc += resp[j] * (m + c.gain * (x - sa * m));
                }
                acc
            })
            .collect()
    }

    /// Noise prediction whose Tweedie estimate is the exact posterior mean.
    pub fn predict_eps(&self, x_t: &Field, t: usize, sched: &NoiseSchedule) -> Result<Field> {
        let x0 = self.posterior_mean(x_t, t, sched)?;
        let a = sched.alpha_bar(t)?;
        let sa = a.sqrt();
        let sn = (1.0 - a).max(MIN_NOISE_LEVEL).sqrt();
        x_t.zip_map(&x0, |x, m| (x - sa * m) / sn)
    }

    /// Mean of element `p` under the prior.
    pub fn element_mean(&self, p: usize) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .map(|(w, m)| w * m.values()[p])
            .sum()
    }

    /// Variance of element `p` under the prior.
    pub fn element_variance(&self, p: usize) -> f64 {
        let mean = self.element_mean(p);
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), s2)| {
                let d = m.values()[p] - mean;
                w * (s2 + d * d)
            })
            .sum()
    }

    /// Fourth central moment of element `p` under the prior.
    pub fn element_fourth_moment(&self, p: usize) -> f64 {
        let mean = self.element_mean(p);
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.variances)
            .map(|((w, m), s2)| {
                let d = m.values()[p] - mean;
                w * (d.powi(4) + 6.0 * d * d * s2 + 3.0 * s2 * s2)
            })
            .sum()
    }

    /// Index of the component with the highest prior density at `value` for
    /// element `p`.
    pub fn classify_element(&self, p: usize, value: f64) -> usize {
        let mut best = 0;
        let mut best_logit = f64::NEG_INFINITY;
        for k in 0..self.num_components() {
            let s2 = self.variances[k];
            let r = value - self.means[k].values()[p];
            let logit = self.weights[k].ln() - 0.5 * s2.ln() - 0.5 * r * r / s2;
            if logit > best_logit {
                best_logit = logit;
                best = k;
            }
        }
        best
    }
}

impl NoisePredictor for GaussianMixture {
    fn predict(&self, x_t: &Field, t: usize, sched: &NoiseSchedule) -> Result<Field> {
        self.predict_eps(x_t, t, sched)
    }

    fn input_shape(&self) -> Option<&[usize]> {
        Some(self.shape())
    }
}

struct Component {
    log_weight: f64,
    marginal_var: f64,
    gain: f64,
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
