//! Central finite-difference checks of analytic gradients.

use super::{EncoderParams, GradientTape};

/// Central-difference gradient of `loss` at `params`, coordinate by
/// coordinate.
pub fn numeric_gradient(
    params: &EncoderParams,
    step: f64,
    mut loss: impl FnMut(&EncoderParams) -> f64,
) -> GradientTape {
    let mut out = GradientTape::for_params(params);
    let mut p = params.clone();
    for g in 0..5 {
        for i in 0..params.groups()[g].len() {
            let orig = p.groups()[g][i];
            p.groups_mut()[g][i] = orig + step;
            let up = loss(&p);
            p.groups_mut()[g][i] = orig - step;
            let down = loss(&p);
            p.groups_mut()[g][i] = orig;
            out.groups_mut()[g][i] = (up - down) / (2.0 * step);
        }
    }
    out
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over all coordinates.
pub fn max_relative_error(analytic: &GradientTape, numeric: &GradientTape, floor: f64) -> f64 {
    analytic
        .groups()
        .iter()
        .zip(numeric.groups())
        .flat_map(|(a, n)| a.iter().zip(n.iter()))
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
