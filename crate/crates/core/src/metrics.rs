//! Quantitative probes over run results.

use crate::denoiser::GaussianMixture;
use crate::error::{ensure_shape, Error, Result};
use crate::field::Field;
use crate::spaces::{CanonicalState, ProjectionOperator};
use crate::sync::SyncRunResult;

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub name: String,
    pub value: f64,
    pub context: String,
    pub series: Option<Vec<f64>>,
}

impl MetricReport {
    pub fn new(name: impl Into<String>, value: f64, context: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::Contract(format!(
                "metric {name} is not finite: {value}"
            )));
        }
        Ok(Self {
            name,
            value,
            context: context.into(),
            series: None,
        })
    }

    pub fn with_series(mut self, series: Vec<f64>) -> Self {
        self.series = Some(series);
        self
    }
}

/// Max pairwise L-infinity distance between final canonical states.
pub fn case_divergence(results: &[SyncRunResult]) -> Result<f64> {
    if results.len() < 2 {
        return Err(Error::Contract(
            "case divergence needs at least two results".into(),
        ));
    }
    Ok(divergence_matrix(results)?
        .iter()
        .flatten()
        .fold(0.0, |a: f64, &b| a.max(b)))
}

/// Pairwise L-infinity distances between final canonical states.
pub fn divergence_matrix(results: &[SyncRunResult]) -> Result<Vec<Vec<f64>>> {
    let n = results.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = results[i]
                .final_canonical
                .linf_distance(&results[j].final_canonical)?;
            m[i][j] = d;
            m[j][i] = d;
        }
    }
    Ok(m)
}

/// `sum_i ||w_i - f_i(z)||^2 / N` for the final instances and canonical state.
pub fn cross_view_consistency(result: &SyncRunResult, ops: &[ProjectionOperator]) -> Result<f64> {
    if ops.len() != result.final_instances.len() {
        return Err(Error::Contract(format!(
            "{} operators for {} instance fields",
            ops.len(),
            result.final_instances.len()
        )));
    }
    let mut total = 0.0;
    for (op, w) in ops.iter().zip(&result.final_instances) {
        total += w.squared_distance(&op.project(&result.final_canonical)?)?;
    }
    Ok(total / ops.len() as f64)
}

/// Mean over views of each traced step's instance variance.
pub fn variance_series(result: &SyncRunResult) -> Result<Vec<f64>> {
    let trace = result
        .trace
        .as_ref()
        .ok_or_else(|| Error::Usage("variance series needs a run with tracing enabled".into()))?;
    Ok(trace
        .iter()
        .map(|step| step.view_variances.iter().sum::<f64>() / step.view_variances.len() as f64)
        .collect())
}

/// Compares samples to the mixture's per-element moments. The report value is
/// the largest standardized deviation of a sample mean or sample variance;
/// multiplane states are reduced to their plane mean first.
pub fn prior_moment_check(
    samples: &[CanonicalState],
    gmm: &GaussianMixture,
) -> Result<MetricReport> {
    let fields: Vec<Field> = samples.iter().map(CanonicalState::mean_plane).collect();
    prior_moment_check_fields(&fields, gmm)
}

pub fn prior_moment_check_fields(samples: &[Field], gmm: &GaussianMixture) -> Result<MetricReport> {
    let n = samples.len();
    if n < 2 {
        return Err(Error::Contract(
            "moment check needs at least two samples".into(),
        ));
    }
    for s in samples {
        ensure_shape(gmm.shape(), s.shape())?;
    }
    let nf = n as f64;
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for p in 0..samples[0].len() {
        let mu = gmm.element_mean(p);
        let var = gmm.element_variance(p);
        let m4 = gmm.element_fourth_moment(p);
        let mean = samples.iter().map(|s| s.values()[p]).sum::<f64>() / nf;
        let svar = samples
            .iter()
            .map(|s| (s.values()[p] - mean).powi(2))
            .sum::<f64>()
            / (nf - 1.0);
        worst_mean = worst_mean.max((mean - mu).abs() / (var / nf).sqrt());
        let var_se = ((m4 - var * var) / nf).max(f64::MIN_POSITIVE).sqrt();
        worst_var = worst_var.max((svar - var).abs() / var_se);
    }
    let occupancy = component_occupancy(samples, gmm);
    let occ_dev = occupancy
        .iter()
        .zip(gmm.weights())
        .fold(0.0, |a: f64, (o, w)| a.max((o - w).abs()));
    MetricReport::new(
        "prior_moment",
        worst_mean.max(worst_var),
        format!(
            "n={n} max_z_mean={worst_mean:.4} max_z_var={worst_var:.4} occupancy={occupancy:?} occupancy_dev={occ_dev:.4}"
        ),
    )
}

/// Fraction of sample elements closest (by prior density) to each component.
pub fn component_occupancy(samples: &[Field], gmm: &GaussianMixture) -> Vec<f64> {
    let mut counts = vec![0usize; gmm.num_components()];
    let mut total = 0usize;
    for s in samples {
        for (p, &v) in s.values().iter().enumerate() {
            counts[gmm.classify_element(p, v)] += 1;
            total += 1;
        }
    }
    counts
        .into_iter()
        .map(|c| c as f64 / total.max(1) as f64)
        .collect()
}
