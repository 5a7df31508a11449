//! Central finite-difference gradient checking.
//!
//! The numeric derivative (f(x+h) - f(x-h)) / 2h is an independent oracle
//! for every analytic gradient the tape produces. Checks perturb parameter
//! entries in place and restore them afterwards.

use super::Params;

/// Tolerances for comparing analytic and numeric derivatives.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckTolerance {
    /// Perturbation half-step.
    pub eps: f64,
    /// Maximum allowed relative error, with |values| clamped to at least 1.
    pub rel_tol: f64,
}

impl Default for GradCheckTolerance {
    fn default() -> Self {
        GradCheckTolerance {
            eps: 1e-5,
            rel_tol: 1e-4,
        }
    }
}

/// Relative error with the denominator clamped to 1, so near-zero gradients
/// compare absolutely.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Central finite difference of `loss` with respect to one parameter entry.
pub fn central_difference<F>(
    params: &mut Params,
    name: &str,
    index: usize,
    eps: f64,
    mut loss: F,
) -> f64
where
    F: FnMut(&Params) -> f64,
{
    let original = params.get(name).expect("parameter exists").value.data()[index];
    params.get_mut(name).unwrap().value.data_mut()[index] = original + eps;
    let up = loss(params);
    params.get_mut(name).unwrap().value.data_mut()[index] = original - eps;
    let down = loss(params);
    params.get_mut(name).unwrap().value.data_mut()[index] = original;
    (up - down) / (2.0 * eps)
}

/// One checked coordinate: the analytic gradient already accumulated in
/// `params` against the central difference of `loss`.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Check the listed (parameter, index) coordinates. The caller must have run
/// backward first so `params` holds analytic gradients; `loss` must rebuild
/// the same forward pass from current parameter values.
pub fn check_entries<F>(
    params: &mut Params,
    entries: &[(String, usize)],
    tol: GradCheckTolerance,
    mut loss: F,
) -> Vec<GradCheckEntry>
where
    F: FnMut(&Params) -> f64,
{
    let mut out = Vec::with_capacity(entries.len());
    for (name, index) in entries {
        let analytic = params.get(name).expect("parameter exists").grad.data()[*index];
        let numeric = central_difference(params, name, *index, tol.eps, &mut loss);
        out.push(GradCheckEntry {
            name: name.clone(),
            index: *index,
            analytic,
            numeric,
            rel_err: relative_error(analytic, numeric),
        });
    }
    out
}

/// Every coordinate of every parameter, for small models.
pub fn all_entries(params: &Params) -> Vec<(String, usize)> {
    let mut out = Vec::new();
    for p in params.iter() {
        for i in 0..p.value.len() {
            out.push((p.name.clone(), i));
        }
    }
    out
}
