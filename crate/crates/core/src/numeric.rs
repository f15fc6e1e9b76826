//! Scalar helpers shared by the forward and backward passes.

/// `ln(1 + e^z)` without overflow.
///
/// Above 30 the correction term `ln(1 + e^-z)` is below 1e-13 relative to
/// `z`; below -30 the first-order expansion `e^z` is exact to double
/// precision.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else if z < -30.0 {
        z.exp()
    } else {
        z.max(0.0) + (-z.abs()).exp().ln_1p()
    }
}

/// Logistic function, evaluated on the side that cannot overflow.
#[inline]
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
