//! Standard normal helpers used by quantizer design.

use statrs::function::erf::{erfc, erfc_inv};
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

/// Density of N(0, 1). Zero at ±∞.
pub fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Lower tail P(X ≤ x).
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail P(X > x), accurate for large positive x.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Quantile function of N(0, 1) for p in (0, 1).
pub fn quantile(p: f64) -> f64 {
    let x = -SQRT_2 * erfc_inv(2.0 * p);
    // one Newton step polishes the inverse to full precision
    let d = pdf(x);
    if d > 1e-300 && x.is_finite() {
        x - (cdf(x) - p) / d
    } else {
        x
    }
}

/// Probability of the cell (a, b] without cancellation in either tail.
pub fn cell_mass(a: f64, b: f64) -> f64 {
    if a >= 0.0 {
        sf(a) - sf(b)
    } else if b <= 0.0 {
        cdf(b) - cdf(a)
    } else {
        1.0 - cdf(a) - sf(b)
    }
}

/// Zeroth, first and second partial moments of N(0, 1) over (a, b].
///
/// Returns `(P, E[X·1], E[X²·1])`.
pub fn partial_moments(a: f64, b: f64) -> (f64, f64, f64) {
    let p = cell_mass(a, b);
    let (pa, pb) = (pdf(a), pdf(b));
    let m1 = pa - pb;
    let xa = if a.is_infinite() { 0.0 } else { a * pa };
    let xb = if b.is_infinite() { 0.0 } else { b * pb };
    let m2 = p + xa - xb;
    (p, m1, m2)
}
