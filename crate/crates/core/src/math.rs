//! Small numeric kernels shared by the scoring and training paths.

/// Largest `f64` strictly below 1.0.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Logistic function, evaluated on the branch that cannot overflow and
/// clamped to the open interval (0, 1).
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

/// `ln(1 + e^z)` without overflow for large `|z|`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Infinity norm over a vector plus one extra scalar component.
pub(crate) fn inf_norm_with(v: &[f64], extra: f64) -> f64 {
    v.iter().fold(extra.abs(), |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_reference_points() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(1.0) - 0.7310585786300049).abs() < 1e-15);
        assert!((sigmoid(-1.0) - 0.2689414213699951).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_stays_open() {
        for z in [40.0, 1e3, 1e300, f64::INFINITY] {
            let p = sigmoid(z);
            assert!(p < 1.0 && p > 1.0 - 1e-12, "{z} -> {p}");
        }
        for z in [-40.0, -1e3, -1e300, f64::NEG_INFINITY] {
            let p = sigmoid(z);
            assert!(p > 0.0 && p < 1e-12, "{z} -> {p}");
        }
    }

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for z in [-20.0, -3.0, -0.5, 0.0, 0.5, 3.0, 20.0] {
            let naive = (1.0 + f64::exp(z)).ln();
            assert!((softplus(z) - naive).abs() < 1e-12);
        }
        assert_eq!(softplus(1e4), 1e4);
        assert_eq!(softplus(-1e4), 0.0);
    }
}
