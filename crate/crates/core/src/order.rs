//! Puiseux exponents `p*alpha + k` and partial-sum bookkeeping.

use std::fmt;

/// The exponent `p * alpha + k` with `p` in {0, 1}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Exponent {
    pub p: u8,
    pub k: i32,
}

impl Exponent {
    pub const fn new(p: u8, k: i32) -> Self {
        Exponent { p, k }
    }

    pub fn value(&self, alpha: f64) -> f64 {
        self.p as f64 * alpha + self.k as f64
    }

    /// The exponent one step lower in the same family.
    pub fn prev(&self) -> Exponent {
        Exponent::new(self.p, self.k - 1)
    }

    pub fn next(&self) -> Exponent {
        Exponent::new(self.p, self.k + 1)
    }

    pub fn shift(&self, by: i32) -> Exponent {
        Exponent::new(self.p, self.k + by)
    }

    /// The lowest exponent of the family: `alpha - 1` or `0`.
    pub fn family_base(p: u8) -> Exponent {
        if p == 1 {
            Exponent::new(1, -1)
        } else {
            Exponent::new(0, 0)
        }
    }

    pub fn is_base(&self) -> bool {
        *self == Self::family_base(self.p)
    }

    /// True for coefficients that exist: index at least `alpha - 1` in the
    /// fractional family and non-negative in the integer family.
    pub fn exists(&self) -> bool {
        self.k >= Self::family_base(self.p).k
    }

    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.p, self.k) {
            (0, k) => write!(f, "{k}"),
            (_, 0) => write!(f, "a"),
            (_, k) if k > 0 => write!(f, "a+{k}"),
            (_, k) => write!(f, "a{k}"),
        }
    }
}

/// Exponents of the partial sum of order `m`: `alpha + k - 1` for
/// `k = 0..=m` and `k - 1` for `k = 1..=m + floor(alpha)`, in that order.
pub fn partial_sum_exponents(floor_alpha: i64, m: usize) -> Vec<Exponent> {
    let mut out: Vec<Exponent> = (0..=m as i32).map(|k| Exponent::new(1, k - 1)).collect();
    let top = m as i64 + floor_alpha;
    for k in 1..=top {
        out.push(Exponent::new(0, k as i32 - 1));
    }
    out
}

/// The principal part: the first `1 - floor(alpha)` fractional exponents.
pub fn principal_part(floor_alpha: i64) -> Vec<Exponent> {
    (0..=(-floor_alpha) as i32)
        .map(|k| Exponent::new(1, k - 1))
        .collect()
}

/// Highest exponent of each family present in the partial sum of order `m`.
pub fn family_tops(floor_alpha: i64, m: usize) -> Vec<Exponent> {
    let mut tops = vec![Exponent::new(1, m as i32 - 1)];
    let top = m as i64 + floor_alpha;
    if top >= 1 {
        tops.push(Exponent::new(0, top as i32 - 1));
    }
    tops
}

/// Smallest admissible truncation order: `M > 3/2 (1 - floor(alpha))`.
pub fn min_order(floor_alpha: i64) -> usize {
    let bound = 1.5 * (1 - floor_alpha) as f64;
    (bound.floor() as usize) + 1
}

/// The order `P = floor(gamma (M + floor(alpha) - 1)) + 1 - floor(alpha)` of
/// the partial sum that the sup-norm estimate controls.
pub fn estimate_order(gamma: f64, floor_alpha: i64, m: usize) -> usize {
    let g = gamma * (m as i64 + floor_alpha - 1) as f64;
    (g.floor() as i64 + 1 - floor_alpha).max(0) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_approximation_inventory() {
        let e = partial_sum_exponents(0, 1);
        assert_eq!(e, vec![Exponent::new(1, -1), Exponent::new(1, 0), Exponent::new(0, 0)]);
        let labels: Vec<String> = partial_sum_exponents(0, 2).iter().map(|e| e.label()).collect();
        assert_eq!(labels, ["a-1", "a", "a+1", "0", "1"]);
    }

    #[test]
    fn principal_part_negative_alpha() {
        let alpha = -0.5f64;
        let fl = alpha.floor() as i64;
        let pp: Vec<f64> = principal_part(fl).iter().map(|e| e.value(alpha)).collect();
        assert_eq!(pp, vec![-1.5, -0.5]);
        let all: Vec<f64> = partial_sum_exponents(fl, 3).iter().map(|e| e.value(alpha)).collect();
        assert_eq!(all, vec![-1.5, -0.5, 0.5, 1.5, 0.0, 1.0]);
    }

    #[test]
    fn order_bounds() {
        assert_eq!(min_order(0), 2);
        assert_eq!(min_order(-1), 4);
        assert_eq!(estimate_order(0.85, 0, 2), 1);
    }
}
