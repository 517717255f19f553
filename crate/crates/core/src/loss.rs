//! Scalar losses.

/// `max(0, 1 - u)`.
pub fn hinge(u: f64) -> f64 {
    (1.0 - u).max(0.0)
}

const GATE_TOL: f64 = 1e-9;

/// Gate loss: 1 at 0, 0 at ±1, and `1 - |u|` in between (clamped to [0, 1]).
pub fn l01(u: f64) -> f64 {
    let a = u.abs();
    if a <= GATE_TOL {
        1.0
    } else if a >= 1.0 - GATE_TOL {
        0.0
    } else {
        1.0 - a
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hinge_values() {
        assert_eq!(hinge(1.0), 0.0);
        assert_eq!(hinge(0.0), 1.0);
        assert_eq!(hinge(-1.0), 2.0);
    }

    #[test]
    fn gate_values() {
        assert_eq!(l01(0.0), 1.0);
        assert_eq!(l01(1.0), 0.0);
        assert_eq!(l01(-1.0), 0.0);
        assert_eq!(l01(0.5), 0.5);
        assert_eq!(l01(3.0), 0.0);
    }

    proptest! {
        #[test]
        fn hinge_is_midpoint_convex(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            prop_assert!(hinge(0.5 * (a + b)) <= 0.5 * (hinge(a) + hinge(b)) + 1e-12);
        }

        #[test]
        fn gate_is_even(u in -5.0f64..5.0) {
            prop_assert_eq!(l01(u), l01(-u));
        }
    }
}
