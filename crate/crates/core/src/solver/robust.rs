//! Robust penalties and their IRLS weights.

/// Cauchy loss `λ² log(1 + s²/λ²)`.
#[inline]
pub fn cauchy_loss(s: f64, lambda: f64) -> f64 {
    lambda * lambda * (s * s / (lambda * lambda)).ln_1p()
}

/// `φ′_λ(r) / r = 2 / (1 + r²/λ²)`, with the limit 2 at `r = 0`.
#[inline]
pub fn cauchy_weight(r: f64, lambda: f64) -> f64 {
    2.0 / (1.0 + r * r / (lambda * lambda))
}

/// Huber penalty of a gradient magnitude: quadratic `g²/2γ` below `γ`,
/// linear `g − γ/2` above.
#[inline]
pub fn huber_loss(g: f64, gamma: f64) -> f64 {
    if g <= gamma {
        g * g / (2.0 * gamma)
    } else {
        g - gamma / 2.0
    }
}

/// `1 / max(γ, g)`.
#[inline]
pub fn huber_weight(g: f64, gamma: f64) -> f64 {
    1.0 / gamma.max(g)
}
