//! Central finite-difference audit of the analytic gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::model::CnnModel;
use super::network::{backward, forward, poisson_objective, Regularization};
use crate::error::Result;
use crate::stimulus::{sample_frame, Frame};

/// Finite-difference step.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Probes redrawn because the perturbation flipped a ReLU.
    pub skipped_kinks: usize,
    pub max_relative_error: f64,
    /// Tensor name and offset of the worst probe.
    pub worst: Option<(&'static str, usize)>,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Checks `n_probes` randomly chosen parameters of `model` on a random frame
/// with label 2 and the default penalties.
pub fn grad_check(model: &CnnModel, n_probes: usize, tolerance: f64, seed: u64) -> Result<GradCheckReport> {
    let frame = sample_frame(seed, 0, model.arch.input_width, model.arch.input_height)?;
    let reg = Regularization::default();
    let analytic = backward(model, &frame, 2, &reg)?;
    check_against(model, &frame, 2, &reg, &analytic, n_probes, tolerance, seed)
}

/// Compares a supplied gradient with finite differences at random parameters.
#[allow(clippy::too_many_arguments)]
pub fn check_against(
    model: &CnnModel,
    frame: &Frame,
    label: u8,
    reg: &Regularization,
    analytic: &CnnModel,
    n_probes: usize,
    tolerance: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let n = model.num_params();
    let mut report = empty_report(tolerance);
    let max_attempts = 50 * n_probes.max(1);
    let mut attempts = 0;
    while report.checked < n_probes && attempts < max_attempts {
        attempts += 1;
        let idx = rng.gen_range(0..n);
        probe(model, frame, label, reg, analytic, idx, &mut report)?;
    }
    report.passed = report.checked == n_probes.max(1) && report.max_relative_error < tolerance;
    Ok(report)
}

/// Compares a supplied gradient with finite differences at the given flat
/// parameter indices. Indices whose perturbation crosses a ReLU kink are
/// counted as skipped.
pub fn check_indices(
    model: &CnnModel,
    frame: &Frame,
    label: u8,
    reg: &Regularization,
    analytic: &CnnModel,
    indices: &[usize],
    tolerance: f64,
) -> Result<GradCheckReport> {
    let mut report = empty_report(tolerance);
    for &idx in indices {
        probe(model, frame, label, reg, analytic, idx, &mut report)?;
    }
    report.passed = report.checked > 0 && report.max_relative_error < tolerance;
    Ok(report)
}

fn empty_report(tolerance: f64) -> GradCheckReport {
    GradCheckReport {
        checked: 0,
        skipped_kinks: 0,
        max_relative_error: 0.0,
        worst: None,
        tolerance,
        passed: false,
    }
}

fn probe(
    model: &CnnModel,
    frame: &Frame,
    label: u8,
    reg: &Regularization,
    analytic: &CnnModel,
    idx: usize,
    report: &mut GradCheckReport,
) -> Result<()> {
    let mask = |m: &CnnModel| -> Result<(f64, Vec<bool>)> {
        let (rate, cache) = forward(m, frame)?;
        let loss = poisson_objective(rate, label, m, reg, &cache.act2)?;
        let pattern = cache.pre1.iter().chain(&cache.pre2).map(|&v| v > 0.0).collect();
        Ok((loss, pattern))
    };
    let (_, base) = mask(model)?;
    let mut shifted = model.clone();
    let orig = model.param(idx);
    *shifted.param_mut(idx) = orig + FD_STEP;
    let (plus, plus_mask) = mask(&shifted)?;
    *shifted.param_mut(idx) = orig - FD_STEP;
    let (minus, minus_mask) = mask(&shifted)?;
    if plus_mask != base || minus_mask != base {
        report.skipped_kinks += 1;
        return Ok(());
    }
    let numeric = (plus - minus) / (2.0 * FD_STEP);
    let err = relative_error(analytic.param(idx), numeric);
    report.checked += 1;
    if err > report.max_relative_error || report.worst.is_none() {
        report.max_relative_error = report.max_relative_error.max(err);
        report.worst = Some(model.param_name(idx));
    }
    Ok(())
}
