//! Boundary-layer terms near the outflow bases: `Pi = P(eta, t) exp(-v eta)`
//! with `P'' - v P' = d/dt P_prev` and `P(0, t) = Phi(t)`.

use crate::error::{Error, Result};
use crate::geometry::cutoff_chi_delta;
use crate::grid::TimeSignal;
use crate::order::Exponent;

#[derive(Clone, Debug)]
pub struct LayerTerm {
    pub edge: usize,
    pub order: Exponent,
    /// `a_j(t)`, `P = sum_j a_j eta^j`.
    pub coeffs: Vec<TimeSignal>,
    /// `d a_j / dt`.
    pub dcoeffs: Vec<TimeSignal>,
    pub v_end: f64,
}

impl LayerTerm {
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn decay_margin(&self) -> f64 {
        0.5 * self.v_end
    }

    fn poly(coeffs: &[TimeSignal], eta: f64, t: f64) -> [f64; 3] {
        let mut p = [0.0; 3];
        for a in coeffs.iter().rev() {
            let c = a.at(t);
            p[2] = p[2] * eta + 2.0 * p[1];
            p[1] = p[1] * eta + p[0];
            p[0] = p[0] * eta + c;
        }
        p
    }

    /// `Pi(eta, t)`.
    pub fn value(&self, eta: f64, t: f64) -> f64 {
        Self::poly(&self.coeffs, eta, t)[0] * (-self.v_end * eta).exp()
    }

    /// `Pi(eta, t)` with `a_0(t)` replaced by `datum`.
    pub fn value_with_datum(&self, eta: f64, t: f64, datum: f64) -> f64 {
        let p = Self::poly(&self.coeffs[1..], eta, t)[0];
        (datum + eta * p) * (-self.v_end * eta).exp()
    }

    /// `d Pi / d eta`.
    pub fn d_eta(&self, eta: f64, t: f64) -> f64 {
        let p = Self::poly(&self.coeffs, eta, t);
        (p[1] - self.v_end * p[0]) * (-self.v_end * eta).exp()
    }

    /// `d^2 Pi / d eta^2`.
    pub fn d_eta2(&self, eta: f64, t: f64) -> f64 {
        let p = Self::poly(&self.coeffs, eta, t);
        let v = self.v_end;
        (p[2] - 2.0 * v * p[1] + v * v * p[0]) * (-v * eta).exp()
    }

    pub fn d_t(&self, eta: f64, t: f64) -> f64 {
        Self::poly(&self.dcoeffs, eta, t)[0] * (-self.v_end * eta).exp()
    }

    /// `Pi'' + v Pi' - d/dt Pi_prev` at `(eta, t)`.
    pub fn ode_residual(&self, prev: Option<&LayerTerm>, eta: f64, t: f64) -> f64 {
        let src = prev.map(|p| p.d_t(eta, t)).unwrap_or(0.0);
        self.d_eta2(eta, t) + self.v_end * self.d_eta(eta, t) - src
    }
}

/// Builds `Pi` for `order` from the base datum `Phi` and the previous term of
/// the same family (absent for the base orders).
pub fn build_layer_term(
    edge: usize,
    order: Exponent,
    prev: Option<&LayerTerm>,
    base_datum: &TimeSignal,
    v_end: f64,
) -> Result<LayerTerm> {
    if v_end <= 0.0 {
        return Err(Error::NonpositiveOutflowSpeed { speed: v_end });
    }
    let grid = base_datum.grid;
    let mut coeffs = vec![base_datum.clone()];
    if let Some(prev) = prev {
        // P'' - v P' = Q with Q = sum_j b_j eta^j, solved from the top degree
        let q = &prev.dcoeffs;
        let m = q.len() - 1;
        let mut a: Vec<Vec<f64>> = vec![vec![0.0; grid.len()]; m + 3];
        for n in 0..grid.len() {
            for j in (0..=m).rev() {
                let b = q[j].vals[n];
                let hi = (j + 2) as f64 * (j + 1) as f64 * a[j + 2][n];
                a[j + 1][n] = (hi - b) / (v_end * (j + 1) as f64);
            }
        }
        for vals in a.into_iter().skip(1).take(m + 1) {
            coeffs.push(TimeSignal { grid, vals });
        }
    }
    let dcoeffs = coeffs.iter().map(|c| c.derivative()).collect();
    Ok(LayerTerm {
        edge,
        order,
        coeffs,
        dcoeffs,
        v_end,
    })
}

/// `chi_delta(x) * Pi((ell - x) / eps, t)`.
pub fn eval_layer(term: &LayerTerm, x: f64, t: f64, eps: f64, ell: f64, delta: f64) -> f64 {
    let chi = cutoff_chi_delta(x, ell, delta);
    if chi == 0.0 {
        return 0.0;
    }
    chi * term.value((ell - x) / eps, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Uniform;
    use crate::jet::step_f64;

    fn sig(f: impl Fn(f64) -> f64) -> TimeSignal {
        TimeSignal::from_fn(Uniform::new(0.0, 1.0, 200), f)
    }

    #[test]
    fn base_and_first_terms_match_closed_forms() {
        let v = 1.5;
        let phi_m1 = sig(|t| step_f64(t / 0.4));
        let phi_a = sig(|t| t * t * t);
        let p0 = build_layer_term(1, Exponent::new(1, -1), None, &phi_m1, v).unwrap();
        let p1 = build_layer_term(1, Exponent::new(1, 0), Some(&p0), &phi_a, v).unwrap();
        assert_eq!(p1.degree(), 1);
        let dphi = phi_m1.derivative();
        for &(eta, t) in &[(0.0, 0.3), (0.7, 0.55), (3.0, 0.9)] {
            let e = (-v * eta).exp();
            assert!((p0.value(eta, t) - phi_m1.at(t) * e).abs() < 1e-15);
            let closed = (phi_a.at(t) - dphi.at(t) / v * eta) * e;
            assert!((p1.value(eta, t) - closed).abs() < 1e-14);
            assert!(p1.ode_residual(Some(&p0), eta, t).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_data_zero_term() {
        let z = sig(|_| 0.0);
        let p0 = build_layer_term(2, Exponent::new(0, 0), None, &z, 1.0).unwrap();
        let p1 = build_layer_term(2, Exponent::new(0, 1), Some(&p0), &z, 1.0).unwrap();
        assert_eq!(p1.value(0.4, 0.5), 0.0);
        assert!(matches!(
            build_layer_term(2, Exponent::new(0, 0), None, &z, -1.0),
            Err(Error::NonpositiveOutflowSpeed { .. })
        ));
    }

    #[test]
    fn layer_cutoff_and_trace() {
        let phi = sig(|t| t * t);
        let p = build_layer_term(1, Exponent::new(0, 0), None, &phi, 1.0).unwrap();
        let (eps, ell, delta) = (0.1, 1.0, 0.1);
        assert!((eval_layer(&p, ell, 0.5, eps, ell, delta) - 0.25).abs() < 1e-15);
        assert_eq!(eval_layer(&p, ell - 2.0 * delta, 0.5, eps, ell, delta), 0.0);
        let inner = eval_layer(&p, ell - eps, 0.5, eps, ell, delta);
        assert!((inner - 0.25 * (-1.0f64).exp()).abs() < 1e-14);
    }
}
