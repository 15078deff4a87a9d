//! Truncated Taylor arithmetic in one variable.
//!
//! A [`Jet`] holds the Taylor coefficients `c[k] = f^(k)(s) / k!` up to order
//! `JET_ORDER - 1`, which is enough to differentiate data expressions and
//! cut-off functions to the orders the recurrences need.

use std::ops::{Add, Div, Mul, Neg, Sub};

pub const JET_ORDER: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub c: [f64; JET_ORDER],
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        let mut c = [0.0; JET_ORDER];
        c[0] = v;
        Jet { c }
    }

    /// The independent variable seeded at `s`.
    pub fn variable(s: f64) -> Self {
        let mut c = [0.0; JET_ORDER];
        c[0] = s;
        c[1] = 1.0;
        Jet { c }
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// n-th derivative.
    pub fn deriv(&self, n: usize) -> f64 {
        if n >= JET_ORDER {
            return f64::NAN;
        }
        let mut f = 1.0;
        for k in 2..=n {
            f *= k as f64;
        }
        self.c[n] * f
    }

    pub fn exp(self) -> Self {
        let mut r = [0.0; JET_ORDER];
        r[0] = self.c[0].exp();
        for k in 1..JET_ORDER {
            let mut s = 0.0;
            for j in 1..=k {
                s += j as f64 * self.c[j] * r[k - j];
            }
            r[k] = s / k as f64;
        }
        Jet { c: r }
    }

    pub fn ln(self) -> Self {
        let mut r = [0.0; JET_ORDER];
        let a0 = self.c[0];
        r[0] = a0.ln();
        for k in 1..JET_ORDER {
            let mut s = self.c[k] * k as f64;
            for j in 1..k {
                s -= j as f64 * r[j] * self.c[k - j];
            }
            r[k] = s / (k as f64 * a0);
        }
        Jet { c: r }
    }

    pub fn sin_cos(self) -> (Self, Self) {
        let mut s = [0.0; JET_ORDER];
        let mut c = [0.0; JET_ORDER];
        s[0] = self.c[0].sin();
        c[0] = self.c[0].cos();
        for k in 1..JET_ORDER {
            let mut ss = 0.0;
            let mut cc = 0.0;
            for j in 1..=k {
                let t = j as f64 * self.c[j];
                ss += t * c[k - j];
                cc -= t * s[k - j];
            }
            s[k] = ss / k as f64;
            c[k] = cc / k as f64;
        }
        (Jet { c: s }, Jet { c })
    }

    pub fn sin(self) -> Self {
        self.sin_cos().0
    }

    pub fn cos(self) -> Self {
        self.sin_cos().1
    }

    pub fn sqrt(self) -> Self {
        let mut r = [0.0; JET_ORDER];
        r[0] = self.c[0].sqrt();
        for k in 1..JET_ORDER {
            let mut s = self.c[k];
            for j in 1..k {
                s -= r[j] * r[k - j];
            }
            r[k] = s / (2.0 * r[0]);
        }
        Jet { c: r }
    }

    /// Power with a constant real exponent (base must be positive unless the
    /// exponent is a small non-negative integer).
    pub fn powf(self, p: f64) -> Self {
        if p.fract() == 0.0 && (0.0..=16.0).contains(&p) {
            let mut r = Jet::constant(1.0);
            for _ in 0..(p as usize) {
                r = r * self;
            }
            return r;
        }
        let mut r = [0.0; JET_ORDER];
        let a0 = self.c[0];
        r[0] = a0.powf(p);
        for k in 1..JET_ORDER {
            let mut s = 0.0;
            for j in 1..=k {
                s += (p * j as f64 - (k - j) as f64) * self.c[j] * r[k - j];
            }
            r[k] = s / (k as f64 * a0);
        }
        Jet { c: r }
    }

    pub fn abs(self) -> Self {
        if self.c[0] < 0.0 {
            -self
        } else {
            self
        }
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(mut self, o: Jet) -> Jet {
        for k in 0..JET_ORDER {
            self.c[k] += o.c[k];
        }
        self
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(mut self, o: Jet) -> Jet {
        for k in 0..JET_ORDER {
            self.c[k] -= o.c[k];
        }
        self
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(mut self) -> Jet {
        for k in 0..JET_ORDER {
            self.c[k] = -self.c[k];
        }
        self
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut r = [0.0; JET_ORDER];
        for i in 0..JET_ORDER {
            if self.c[i] == 0.0 {
                continue;
            }
            for j in 0..JET_ORDER - i {
                r[i + j] += self.c[i] * o.c[j];
            }
        }
        Jet { c: r }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        let mut r = [0.0; JET_ORDER];
        for k in 0..JET_ORDER {
            let mut s = self.c[k];
            for j in 1..=k {
                s -= o.c[j] * r[k - j];
            }
            r[k] = s / o.c[0];
        }
        Jet { c: r }
    }
}

/// C-infinity step: 0 for s <= 0, 1 for s >= 1, built from exp(-1/s).
pub fn smooth_step(s: Jet) -> Jet {
    let x = s.value();
    if x <= 0.0 {
        return Jet::constant(0.0);
    }
    if x >= 1.0 {
        return Jet::constant(1.0);
    }
    let one = Jet::constant(1.0);
    let g = |u: Jet| (-(one / u)).exp();
    let a = g(s);
    let b = g(one - s);
    a / (a + b)
}

/// C-infinity bump supported in (0, 1) with value 1 at s = 1/2.
pub fn smooth_bump(s: Jet) -> Jet {
    let x = s.value();
    if x <= 0.0 || x >= 1.0 {
        return Jet::constant(0.0);
    }
    let one = Jet::constant(1.0);
    (Jet::constant(4.0) - one / (s * (one - s))).exp()
}

pub fn step_f64(s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    if s >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / s).exp();
    let b = (-1.0 / (1.0 - s)).exp();
    a / (a + b)
}

pub fn bump_f64(s: f64) -> f64 {
    if s <= 0.0 || s >= 1.0 {
        return 0.0;
    }
    (4.0 - 1.0 / (s * (1.0 - s))).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_derivatives() {
        let j = Jet::variable(0.3).exp();
        for n in 0..JET_ORDER {
            assert!((j.deriv(n) - 0.3f64.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn sin_and_div() {
        let x = Jet::variable(0.7);
        let s = x.sin();
        assert!((s.deriv(1) - 0.7f64.cos()).abs() < 1e-14);
        assert!((s.deriv(3) + 0.7f64.cos()).abs() < 1e-12);
        let q = Jet::constant(1.0) / x;
        assert!((q.deriv(2) - 2.0 / 0.7f64.powi(3)).abs() < 1e-10);
        let p = x.powf(2.5);
        assert!((p.deriv(1) - 2.5 * 0.7f64.powf(1.5)).abs() < 1e-12);
        let r = x.sqrt();
        assert!((r.deriv(1) - 0.5 / 0.7f64.sqrt()).abs() < 1e-12);
        let l = x.ln();
        assert!((l.deriv(2) + 1.0 / 0.49).abs() < 1e-12);
    }

    #[test]
    fn step_plateaus() {
        assert_eq!(step_f64(0.0), 0.0);
        assert_eq!(step_f64(1.0), 1.0);
        assert!((step_f64(0.5) - 0.5).abs() < 1e-15);
        let j = smooth_step(Jet::variable(0.5));
        let h = 1e-5;
        let fd = (step_f64(0.5 + h) - step_f64(0.5 - h)) / (2.0 * h);
        assert!((j.deriv(1) - fd).abs() < 1e-8);
        assert!((smooth_bump(Jet::constant(0.5)).value() - 1.0).abs() < 1e-15);
    }
}
