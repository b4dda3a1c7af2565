//! Finite-difference validation of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{RecModel, SeqRecError};
use crate::corpus::EntityId;

/// Absolute floor on the denominator of [`relative_error`].
pub const GRADIENT_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub tensors_covered: usize,
    /// `(tensor, coordinate, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// `|a − b| / max(|a|, |b|, floor)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(GRADIENT_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Central difference `(f(θ+ε) − f(θ−ε)) / 2ε` for one coordinate of one tensor.
pub fn numeric_gradient(
    model: &RecModel<f64>,
    input: &[usize],
    label: EntityId,
    tensor: usize,
    coord: usize,
    epsilon: f64,
) -> Result<f64, SeqRecError> {
    let mut probe = model.clone();
    let original = probe.params.tensors_mut()[tensor][coord];
    probe.params.tensors_mut()[tensor][coord] = original + epsilon;
    let plus = probe.loss(input, label)?;
    probe.params.tensors_mut()[tensor][coord] = original - epsilon;
    let minus = probe.loss(input, label)?;
    Ok((plus - minus) / (2.0 * epsilon))
}

/// Compares analytic and numeric gradients on `samples` coordinates. Every
/// tensor receives at least one sample; the rest are spread uniformly over
/// tensors, then over coordinates.
pub fn gradient_check(
    model: &RecModel<f64>,
    input: &[usize],
    label: EntityId,
    epsilon: f64,
    samples: usize,
    seed: u64,
) -> Result<GradCheckReport, SeqRecError> {
    let (_, grads) = model.loss_and_grad(input, label)?;
    let views = grads.views();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picks: Vec<(usize, usize)> = (0..views.len()).map(|t| (t, rng.random_range(0..views[t].data.len()))).collect();
    while picks.len() < samples {
        let t = rng.random_range(0..views.len());
        picks.push((t, rng.random_range(0..views[t].data.len())));
    }

    let mut report = GradCheckReport { max_relative_error: 0.0, checked: 0, tensors_covered: views.len(), worst: None };
    for (t, c) in picks {
        let analytic = views[t].data[c];
        let numeric = numeric_gradient(model, input, label, t, c, epsilon)?;
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_relative_error || report.worst.is_none() {
            report.max_relative_error = report.max_relative_error.max(err);
            report.worst = Some((views[t].name.clone(), c, analytic, numeric));
        }
    }
    Ok(report)
}
