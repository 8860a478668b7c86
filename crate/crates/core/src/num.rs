//! Scalar abstraction for scheduler weights: f32, f64 or exact rationals.

use std::fmt::Debug;

use num_rational::Rational64;
use num_traits::{Num, Signed, ToPrimitive};

/// Numeric type a scheduler weight can be stored in.
pub trait Weight: Num + Copy + PartialOrd + Debug + Send + Sync + 'static {
    /// Tolerance on `|Σx_i − 1|` this representation can honour.
    const SUM_TOLERANCE: f64;

    /// `num / den` in this representation.
    fn ratio(num: u64, den: u64) -> Self;

    /// `round(self · budget)`, halves away from zero.
    fn scale_round(self, budget: u64) -> u64;

    fn to_f64(self) -> f64;
}

impl Weight for f64 {
    const SUM_TOLERANCE: f64 = 1e-9;

    fn ratio(num: u64, den: u64) -> Self {
        num as f64 / den as f64
    }

    fn scale_round(self, budget: u64) -> u64 {
        (self * budget as f64).round().max(0.0) as u64
    }

    fn to_f64(self) -> f64 {
        self
    }
}

impl Weight for f32 {
    const SUM_TOLERANCE: f64 = 1e-4;

    fn ratio(num: u64, den: u64) -> Self {
        (num as f64 / den as f64) as f32
    }

    fn scale_round(self, budget: u64) -> u64 {
        (self as f64 * budget as f64).round().max(0.0) as u64
    }

    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Weight for Rational64 {
    const SUM_TOLERANCE: f64 = 0.0;

    fn ratio(num: u64, den: u64) -> Self {
        Rational64::new(num as i64, den as i64)
    }

    fn scale_round(self, budget: u64) -> u64 {
        (self * Rational64::from_integer(budget as i64))
            .abs()
            .round()
            .to_integer() as u64
    }

    fn to_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

/// `|Σ weights − 1| ≤ W::SUM_TOLERANCE`, evaluated in `W` itself.
pub fn sums_to_one<W: Weight>(weights: impl IntoIterator<Item = W>) -> bool {
    let sum = weights.into_iter().fold(W::zero(), |a, b| a + b);
    (sum.to_f64() - 1.0).abs() <= W::SUM_TOLERANCE
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(0.5f64.scale_round(5), 3);
        assert_eq!(Rational64::new(1, 2).scale_round(5), 3);
        assert_eq!(0.5f32.scale_round(5), 3);
        assert_eq!(Rational64::new(2, 3).scale_round(60), 40);
        assert_eq!((2.0f64 / 3.0).scale_round(60), 40);
    }

    #[test]
    fn exact_sum() {
        let w = [Rational64::new(1, 2), Rational64::new(1, 3), Rational64::new(1, 6)];
        assert!(sums_to_one(w));
        assert!(!sums_to_one([Rational64::new(1, 2)]));
    }
}
