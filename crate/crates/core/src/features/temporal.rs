use std::f64::consts::PI;

/// `(sin(2πv/p), cos(2πv/p))`.
pub fn cyclical_encode(value: f64, period: f64) -> (f64, f64) {
    let angle = 2.0 * PI * value / period;
    (angle.sin(), angle.cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_angles() {
        assert_eq!(cyclical_encode(0.0, 24.0), (0.0, 1.0));
        let (s, c) = cyclical_encode(6.0, 24.0);
        assert!((s - 1.0).abs() < 1e-12 && c.abs() < 1e-12);
        let (s, c) = cyclical_encode(12.0, 12.0);
        assert!(s.abs() < 1e-12 && (c - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn unit_circle(v in -1e4f64..1e4, p in 0.1f64..1e3) {
            let (s, c) = cyclical_encode(v, p);
            prop_assert!((s * s + c * c - 1.0).abs() < 1e-9);
        }
    }
}
