use super::{mean_loss, Differentiable, LossTape, ParameterSet};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;

/// Per-parameter outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: Option<String>,
    /// Analytic and numeric derivative at the worst entry.
    pub worst_analytic: f64,
    pub worst_numeric: f64,
    pub checked: usize,
}

/// Compares analytic gradients of the mean cross-entropy over `examples`
/// with central finite differences.
///
/// Returns the max over all parameter entries of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
/// The forward pass runs without dropout.
pub fn gradient_check<M: Differentiable>(
    model: &M,
    params: &mut ParameterSet,
    examples: &[(M::Input, usize)],
) -> Result<f64> {
    Ok(gradient_check_report(model, params, examples)?.max_rel_error)
}

pub fn gradient_check_report<M: Differentiable>(
    model: &M,
    params: &mut ParameterSet,
    examples: &[(M::Input, usize)],
) -> Result<GradCheckReport> {
    params.zero_grad();
    let mut tape = LossTape::new(model);
    for (input, gold) in examples {
        tape.forward(params, input, *gold, None)?;
    }
    tape.backward(params)?;
    let analytic: Vec<Vec<f64>> = params
        .entries()
        .iter()
        .map(|p| p.grad.values().to_vec())
        .collect();
    params.zero_grad();

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: None,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
        checked: 0,
    };
    let ids: Vec<_> = params.ids().collect();
    for (pi, id) in ids.into_iter().enumerate() {
        let (cols, frozen) = {
            let p = &params.entries()[pi];
            (p.value.cols(), p.frozen_rows.clone())
        };
        for k in 0..analytic[pi].len() {
            if frozen.contains(&(k / cols.max(1))) {
                continue;
            }
            let orig = params.value(id).values()[k];
            params.value_mut(id).values_mut()[k] = orig + FD_STEP;
            let plus = mean_loss(model, params, examples)?;
            params.value_mut(id).values_mut()[k] = orig - FD_STEP;
            let minus = mean_loss(model, params, examples)?;
            params.value_mut(id).values_mut()[k] = orig;

            let numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[pi][k];
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = Some(format!("{}[{k}]", params.entries()[pi].name));
                report.worst_analytic = a;
                report.worst_numeric = numeric;
            }
        }
    }
    Ok(report)
}
