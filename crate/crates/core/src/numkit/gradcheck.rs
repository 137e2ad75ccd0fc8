//! Central finite differences, used as the gradient oracle in tests and in `selftest`.

use crate::error::{Error, Result};

/// `(f(p + h e_i) - f(p - h e_i)) / 2h` for every coordinate `i`.
pub fn finite_diff_grad<F>(mut objective: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::invalid("h", "step must be positive"));
    }
    let mut p = params.to_vec();
    let mut out = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let fp = objective(&p);
        p[i] = orig - h;
        let fm = objective(&p);
        p[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!("objective near coordinate {i}")));
        }
        out.push((fp - fm) / (2.0 * h));
    }
    Ok(out)
}

/// Largest per-entry relative error `|a - b| / max(|a|, |b|, 1e-6)`.
///
/// The floor keeps entries that are analytically zero (dead rectifier units)
/// from dividing finite-difference round-off by zero.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
