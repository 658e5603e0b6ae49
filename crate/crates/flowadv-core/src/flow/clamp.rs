use std::f32::consts::FRAC_2_PI;

/// Soft clamp for coupling log-scales: s̃ = α·(2/π)·arctan(s/α).
///
/// Odd, monotone, |s̃| < α for all finite s, and s̃ ≈ s near zero, so the
/// per-coordinate log-scale of every coupling stays in (−α, α) and exp never
/// overflows.
pub fn clamp_scale(s: f32, alpha: f32) -> f32 {
    alpha * FRAC_2_PI * (s / alpha).atan()
}

/// d s̃ / d s = 1 / (1 + (s/α)²) · (2/π)
pub fn clamp_scale_deriv(s: f32, alpha: f32) -> f32 {
    let r = s / alpha;
    FRAC_2_PI / (1.0 + r * r)
}
