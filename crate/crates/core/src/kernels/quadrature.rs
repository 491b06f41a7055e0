use crate::error::{Error, Result};

/// Composite Simpson rule on a finite interval with an odd number of nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    points: usize,
    lo: f64,
    hi: f64,
}

impl QuadratureSpec {
    pub const DEFAULT_POINTS: usize = 4001;
    pub const MIN_POINTS: usize = 1001;

    pub fn new(points: usize, lo: f64, hi: f64) -> Result<Self> {
        if points < Self::MIN_POINTS || points.is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "quadrature needs an odd number of points >= {}, got {points}",
                Self::MIN_POINTS
            )));
        }
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Validation(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(QuadratureSpec { points, lo, hi })
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        simpson(f, self.lo, self.hi, self.points)
    }
}

/// Composite Simpson over `[lo, hi]` with `points` nodes (odd, >= 3).
/// Returns 0 for an empty or reversed interval.
pub fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize) -> f64 {
    debug_assert!(points >= 3 && points % 2 == 1);
    if !(hi > lo) {
        return 0.0;
    }
    let n = points - 1;
    let h = (hi - lo) / n as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for i in 1..n {
        let v = f(lo + i as f64 * h);
        if i % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    (f(lo) + f(hi) + 4.0 * odd + 2.0 * even) * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_cubics() {
        let v = simpson(|x| x * x * x - 2.0 * x + 1.0, -1.0, 2.0, 3);
        // antiderivative x^4/4 - x^2 + x on [-1, 2]
        let exact = (4.0 - 4.0 + 2.0) - (0.25 - 1.0 - 1.0);
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn spec_validation() {
        assert!(QuadratureSpec::new(1000, 0.0, 1.0).is_err());
        assert!(QuadratureSpec::new(999, 0.0, 1.0).is_err());
        assert!(QuadratureSpec::new(1001, 1.0, 1.0).is_err());
        let q = QuadratureSpec::new(1001, 0.0, std::f64::consts::PI).unwrap();
        assert!((q.integrate(f64::sin) - 2.0).abs() < 1e-10);
    }
}
