//! The fixed smooth cutoff used for every localization.

/// Smooth bump equal to 1 on `|s| <= 1`, 0 on `|s| >= 2`, with a C-infinity
/// monotone taper in between.
pub fn phi0(s: f64) -> f64 {
    let a = s.abs();
    if a <= 1.0 {
        1.0
    } else if a >= 2.0 {
        0.0
    } else {
        let t = a - 1.0;
        let f = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
        let up = f(1.0 - t);
        up / (up + f(t))
    }
}

/// Derivative of [`phi0`].
pub fn phi0_derivative(s: f64) -> f64 {
    let a = s.abs();
    if a <= 1.0 || a >= 2.0 {
        return 0.0;
    }
    let t = a - 1.0;
    let f = |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 };
    let df = |x: f64| if x > 0.0 { f(x) / (x * x) } else { 0.0 };
    let (up, down) = (f(1.0 - t), f(t));
    let total = up + down;
    -s.signum() * (df(1.0 - t) * down + up * df(t)) / (total * total)
}

/// Cutoff of the (periodic) offset `d` at radius `r`: `phi0(d / r)`.
pub fn phi0_scaled(d: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return if d == 0.0 { 1.0 } else { 0.0 };
    }
    phi0(d / r)
}

/// Human-readable description recorded in run manifests.
pub const PHI0_DESCRIPTION: &str =
    "phi0(s)=1 for |s|<=1, 0 for |s|>=2, taper f(2-|s|)/(f(2-|s|)+f(|s|-1)) with f(x)=exp(-1/x)";

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn plateau_and_support() {
        assert_eq!(phi0(0.0), 1.0);
        assert_eq!(phi0(-1.0), 1.0);
        assert_eq!(phi0(2.0), 0.0);
        assert_eq!(phi0(-7.0), 0.0);
        assert!((phi0(1.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_differences() {
        for s in [-1.9, -1.3, 1.01, 1.2, 1.5, 1.77, 1.99] {
            let h = 1e-6;
            let fd = (phi0(s + h) - phi0(s - h)) / (2.0 * h);
            assert!((phi0_derivative(s) - fd).abs() < 1e-7, "{s}");
        }
        assert_eq!(phi0_derivative(0.5), 0.0);
    }

    proptest! {
        #[test]
        fn bounded_even_and_monotone(s in 0.0f64..3.0, ds in 0.0f64..0.5) {
            let v = phi0(s);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v, phi0(-s));
            prop_assert!(phi0(s + ds) <= v + 1e-15);
        }
    }
}
