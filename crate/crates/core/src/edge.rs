//! Hyperbolic transport on the three edges of the limit graph, solved along
//! characteristics, and the vertex coupling of the limit problems.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::grid::{gauss_legendre, Field2, TimeSignal, Uniform};
use crate::order::Exponent;
use crate::velocity::EdgeVelocity;

/// A source term `f(x, t)`.
pub type SpaceTimeFn<'a> = dyn Fn(f64, f64) -> f64 + Sync + 'a;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeGrid {
    pub nx: usize,
    pub nt: usize,
    /// Characteristic-time samples per output time step.
    pub refine: usize,
    /// Gauss points per cell for the source integral.
    pub gauss: usize,
    pub spot_checks: usize,
}

impl Default for EdgeGrid {
    fn default() -> Self {
        EdgeGrid {
            nx: 400,
            nt: 400,
            refine: 4,
            gauss: 4,
            spot_checks: 10,
        }
    }
}

/// `w(x, t)` on one edge with its x-derivatives up to third order.
#[derive(Clone, Debug)]
pub struct EdgeField {
    pub edge: usize,
    pub order: Exponent,
    /// `derivs[n]` holds `d^n w / dx^n`.
    pub derivs: Vec<Field2>,
    dt: Field2,
    /// Largest deviation between the grid solution and independent RK4
    /// integration along sampled characteristics, relative to `max(1, |w|)`.
    pub spot_check: f64,
}

impl EdgeField {
    pub const DERIVATIVES: usize = 3;

    pub fn from_values(edge: usize, order: Exponent, w: Field2) -> Self {
        let mut derivs = vec![w];
        for _ in 0..Self::DERIVATIVES {
            let d = derivs.last().unwrap().d_x();
            derivs.push(d);
        }
        let dt = derivs[0].d_t();
        EdgeField {
            edge,
            order,
            derivs,
            dt,
            spot_check: 0.0,
        }
    }

    pub fn zeros(edge: usize, order: Exponent, xg: Uniform, tg: Uniform) -> Self {
        Self::from_values(edge, order, Field2::zeros(xg, tg))
    }

    pub fn xg(&self) -> Uniform {
        self.derivs[0].xg
    }

    pub fn tg(&self) -> Uniform {
        self.derivs[0].tg
    }

    pub fn values(&self) -> &Field2 {
        &self.derivs[0]
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        self.derivs[0].at(x, t)
    }

    /// `d^n w / dx^n (x, t)` for `n <= 3`.
    pub fn dx(&self, n: usize, x: f64, t: f64) -> f64 {
        self.derivs[n].at(x, t)
    }

    pub fn dt(&self, x: f64, t: f64) -> f64 {
        self.dt.at(x, t)
    }

    /// `d^n w / dx^n (0, t)` on the time grid.
    pub fn vertex(&self, n: usize) -> TimeSignal {
        self.derivs[n].column(0)
    }

    /// `w(ell, t)` on the time grid.
    pub fn end_trace(&self) -> TimeSignal {
        self.derivs[0].column(self.xg().n)
    }

    pub fn max_abs(&self) -> f64 {
        self.derivs[0].max_abs()
    }

    pub fn to_csv(&self) -> String {
        let w = &self.derivs[0];
        let mut s = String::from("x,t,w\n");
        for n in 0..w.tg.len() {
            for j in 0..w.xg.len() {
                s.push_str(&format!("{},{},{:e}\n", w.xg.node(j), w.tg.node(n), w.get(j, n)));
            }
        }
        s
    }
}

/// Travel time along one edge measured from its inflow end.
struct TravelTime<'a> {
    vel: &'a EdgeVelocity,
    x_in: f64,
    cum: Vec<f64>,
    xg: Uniform,
    gx: Vec<f64>,
    gw: Vec<f64>,
}

impl<'a> TravelTime<'a> {
    fn new(vel: &'a EdgeVelocity, xg: Uniform, positive: bool) -> Self {
        let (gx, gw) = gauss_legendre(8);
        let x_in = if positive { xg.a } else { xg.b };
        let mut tt = TravelTime {
            vel,
            x_in,
            cum: vec![0.0; xg.len()],
            xg,
            gx,
            gw,
        };
        for j in 1..xg.len() {
            let seg = tt.segment(xg.node(j - 1), xg.node(j));
            tt.cum[j] = tt.cum[j - 1] + seg;
        }
        if !positive {
            let total = tt.cum[xg.n];
            for c in tt.cum.iter_mut() {
                *c = total - *c;
            }
        }
        tt
    }

    /// `int_a^b ds / |v|` (non-negative for `a <= b`).
    fn segment(&self, a: f64, b: f64) -> f64 {
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        (0..self.gx.len())
            .map(|k| self.gw[k] / self.vel.v(c + h * self.gx[k]).abs())
            .sum::<f64>()
            * h
    }

    fn at(&self, x: f64) -> f64 {
        let u = ((x - self.xg.a) / self.xg.step()).floor().clamp(0.0, (self.xg.n - 1) as f64) as usize;
        let x0 = self.xg.node(u);
        if self.x_in <= self.xg.a {
            self.cum[u] + self.segment(x0, x)
        } else {
            self.cum[u] - self.segment(x0, x)
        }
    }

    /// The point at travel time `tau` from the inflow end.
    fn position(&self, tau: f64) -> f64 {
        let (mut lo, mut hi) = (self.xg.a, self.xg.b);
        let increasing = self.x_in <= self.xg.a;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let f = self.at(mid);
            if (f < tau) == increasing {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Solves `d_t w + (v w)' = rhs` on `[0, ell] x [0, t_final]` with zero
/// initial data and `w = inflow(t)` at the inflow end (`x = 0` when `v > 0`,
/// `x = ell` when `v < 0`).
#[allow(clippy::too_many_arguments)]
pub fn solve_edge_hyperbolic(
    edge: usize,
    order: Exponent,
    vel: &EdgeVelocity,
    ell: f64,
    t_final: f64,
    rhs: &SpaceTimeFn,
    inflow: &dyn Fn(f64) -> f64,
    grid: EdgeGrid,
    seed: u64,
) -> Result<EdgeField> {
    let xg = Uniform::new(0.0, ell, grid.nx);
    let tg = Uniform::new(0.0, t_final, grid.nt);
    let xs = xg.nodes();
    let vs: Vec<f64> = xs.iter().map(|&x| vel.v(x)).collect();
    let positive = vs[0] > 0.0;
    if vs.iter().any(|&v| v == 0.0 || (v > 0.0) != positive) {
        return Err(Error::WrongSign { edge: edge + 1 });
    }
    let scale_rhs = xs
        .iter()
        .map(|&x| rhs(x, 0.0).abs())
        .fold(0.0, f64::max);
    let g0 = inflow(0.0);
    if g0.abs() > 1e-12 || scale_rhs > 1e-12 {
        return Err(Error::MatchingViolated(format!(
            "edge {}: inflow datum {g0:e} or source {scale_rhs:e} nonzero at t = 0",
            edge + 1
        )));
    }
    let tt = TravelTime::new(vel, xg, positive);
    let t_max = if positive { tt.cum[grid.nx] } else { tt.cum[0] };
    let ds = tg.step() / grid.refine as f64;
    let below = (t_max / ds).ceil() as usize + 4;
    let above = grid.refine * grid.nt;
    let sg = Uniform::new(-(below as f64) * ds, t_final, below + above);
    let sigmas = sg.nodes();
    let ns = sigmas.len();
    // columns ordered from the inflow end
    let col = |k: usize| if positive { k } else { grid.nx - k };
    let (gx, gw) = gauss_legendre(grid.gauss);
    let mut m = vec![vec![0.0; ns]; grid.nx + 1];
    let v_in = vs[col(0)];
    for (i, &s) in sigmas.iter().enumerate() {
        if s > 0.0 {
            m[0][i] = v_in * inflow(s);
        }
    }
    let mut nodes = vec![(0.0, 0.0, 0.0); grid.gauss];
    for k in 0..grid.nx {
        let (xa, xb) = (xs[col(k)], xs[col(k + 1)]);
        let h = 0.5 * (xb - xa);
        let c = 0.5 * (xa + xb);
        for (q, node) in nodes.iter_mut().enumerate() {
            let s = c + h * gx[q];
            *node = (s, gw[q] * h, tt.at(s));
        }
        let (prev, next) = m.split_at_mut(k + 1);
        let (src, dst) = (&prev[k], &mut next[0]);
        for i in 0..ns {
            let mut acc = src[i];
            for &(s, w, tau) in &nodes {
                let t = sigmas[i] + tau;
                if t > 0.0 {
                    acc += w * rhs(s, t);
                }
            }
            dst[i] = acc;
        }
    }
    let mut w = Field2::zeros(xg, tg);
    for k in 0..=grid.nx {
        let j = col(k);
        let tau = tt.cum[j];
        for n in 0..tg.len() {
            let t = tg.node(n);
            let sigma = t - tau;
            let val = if (sigma / ds - (sigma / ds).round()).abs() < 1e-9 {
                let i = ((sigma - sg.a) / ds).round() as usize;
                m[k][i.min(ns - 1)]
            } else {
                sg.interp(&m[k], sigma)
            };
            w.vals[n * xg.len() + j] = val / vs[j];
        }
    }
    let mut field = EdgeField::from_values(edge, order, w);
    field.spot_check = spot_check(&field, vel, &tt, rhs, inflow, positive, grid.spot_checks, seed);
    Ok(field)
}

#[allow(clippy::too_many_arguments)]
fn spot_check(
    field: &EdgeField,
    vel: &EdgeVelocity,
    tt: &TravelTime,
    rhs: &SpaceTimeFn,
    inflow: &dyn Fn(f64) -> f64,
    positive: bool,
    count: usize,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xg = field.xg();
    let tg = field.tg();
    let scale = field.max_abs().max(1.0);
    let mut worst = 0.0f64;
    let f = |x: f64, t: f64, w: f64| -> (f64, f64) {
        let x = x.clamp(xg.a, xg.b);
        (vel.v(x), -vel.dv(x, 1) * w + if t > 0.0 { rhs(x, t) } else { 0.0 })
    };
    for _ in 0..count {
        let j = rng.gen_range(0..xg.len());
        let n = rng.gen_range(1..tg.len());
        let t1 = tg.node(n);
        let sigma = t1 - tt.cum[j];
        let (mut x, mut t, mut w) = if sigma >= 0.0 {
            (if positive { xg.a } else { xg.b }, sigma, inflow(sigma))
        } else {
            (tt.position(-sigma), 0.0, 0.0)
        };
        let steps = 2000;
        let dt = (t1 - t) / steps as f64;
        if dt > 0.0 {
            for _ in 0..steps {
                let (a1, b1) = f(x, t, w);
                let (a2, b2) = f(x + 0.5 * dt * a1, t + 0.5 * dt, w + 0.5 * dt * b1);
                let (a3, b3) = f(x + 0.5 * dt * a2, t + 0.5 * dt, w + 0.5 * dt * b2);
                let (a4, b4) = f(x + dt * a3, t + dt, w + dt * b3);
                x += dt / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
                w += dt / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4);
                t += dt;
            }
        }
        worst = worst.max((w - field.values().get(j, n)).abs() / scale);
    }
    worst
}

/// `(1 / (pi h^2)) * oint phi ds` over the circle of radius `h`, by the
/// trapezoidal rule on `nodes` points.
pub fn average_lateral_interaction(phi: &Expr, h: f64, x: f64, t: f64, nodes: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..nodes {
        let th = 2.0 * std::f64::consts::PI * k as f64 / nodes as f64;
        s += phi.eval(&expr::vars(x, h * th.cos(), h * th.sin(), t, th, h));
    }
    s * (2.0 * std::f64::consts::PI * h / nodes as f64) / (std::f64::consts::PI * h * h)
}

/// Data of the limit problems: Dirichlet signals and averaged lateral
/// interactions sampled on space-time grids.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    pub q: [Expr; 3],
    pub phi_hat: [Field2; 3],
}

impl BoundaryData {
    pub fn new(q: [Expr; 3], phi: &[Expr; 3], h: [f64; 3], ell: [f64; 3], t_final: f64, nx: usize, nt: usize) -> Self {
        let phi_hat = std::array::from_fn(|i| {
            let xg = Uniform::new(0.0, ell[i], nx);
            let tg = Uniform::new(0.0, t_final, nt);
            if phi[i].is_zero() {
                return Field2::zeros(xg, tg);
            }
            Field2::from_fn(xg, tg, |x, t| average_lateral_interaction(&phi[i], h[i], x, t, 256))
        });
        BoundaryData { q, phi_hat }
    }

    pub fn q_at(&self, i: usize, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.q[i].eval(&expr::vars(0.0, 0.0, 0.0, t, 0.0, 0.0))
    }

    /// Checks `q_i(0) = q_i'(0) = 0`, `phi_hat(., 0) = 0`, and higher-order
    /// flatness of `q` up to `order`.
    pub fn check_matching(&self, order: usize) -> Result<()> {
        for i in 0..3 {
            let v0 = expr::vars(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for n in 0..=order.max(1) {
                let d = self.q[i].deriv(&v0, expr::T, n);
                if d.abs() > 1e-12 {
                    let err = format!("q{}: derivative {n} at t = 0 is {d:e}", i + 1);
                    return Err(if n <= 1 { Error::MatchingViolated(err) } else { Error::InsufficientMatching(err) });
                }
            }
            let ph = &self.phi_hat[i];
            let worst = (0..ph.xg.len()).map(|j| ph.get(j, 0).abs()).fold(0.0, f64::max);
            if worst > 1e-12 {
                return Err(Error::MatchingViolated(format!("phi{} nonzero at t = 0", i + 1)));
            }
        }
        Ok(())
    }
}

/// The three edge fields of one order with the vertex datum `d(t)`.
#[derive(Clone, Debug)]
pub struct GraphField {
    pub order: Exponent,
    pub edges: Vec<EdgeField>,
    pub d: TimeSignal,
}

impl GraphField {
    /// Largest `|sum v_i h_i^2 w_i(0, t) - d(t)|` over the time grid.
    pub fn kirchhoff_defect(&self, v: [f64; 3], h: [f64; 3]) -> f64 {
        let tg = self.edges[0].tg();
        (0..tg.len())
            .map(|n| {
                let s: f64 = (0..3).map(|i| v[i] * h[i] * h[i] * self.edges[i].values().get(0, n)).sum();
                (s - self.d.at(tg.node(n))).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest spread of `w_i(0, t)` across the edges.
    pub fn continuity_defect(&self) -> f64 {
        let tg = self.edges[0].tg();
        (0..tg.len())
            .map(|n| {
                let w: Vec<f64> = (0..3).map(|i| self.edges[i].values().get(0, n)).collect();
                (w[0] - w[1]).abs().max((w[0] - w[2]).abs())
            })
            .fold(0.0, f64::max)
    }

    pub fn max_spot_check(&self) -> f64 {
        self.edges.iter().map(|e| e.spot_check).fold(0.0, f64::max)
    }
}

/// Solver for the limit problems on the three-edge graph. Edge 1 carries
/// the inflow datum at `x = ell_1`; edges 2 and 3 take their datum at the
/// vertex.
#[derive(Clone, Debug)]
pub struct GraphSolver {
    pub ell: [f64; 3],
    pub h: [f64; 3],
    pub t_final: f64,
    pub vel: [EdgeVelocity; 3],
    pub grid: EdgeGrid,
    pub seed: u64,
}

impl GraphSolver {
    fn vconst(&self) -> [f64; 3] {
        [
            self.vel[0].const_near_node,
            self.vel[1].const_near_node,
            self.vel[2].const_near_node,
        ]
    }

    fn edge1(&self, order: Exponent, rhs: &SpaceTimeFn, inflow: &dyn Fn(f64) -> f64) -> Result<EdgeField> {
        solve_edge_hyperbolic(0, order, &self.vel[0], self.ell[0], self.t_final, rhs, inflow, self.grid, self.seed)
    }

    fn outflow_edges(
        &self,
        order: Exponent,
        first: EdgeField,
        rhs: [&SpaceTimeFn; 2],
        datum: impl Fn(usize, f64) -> f64,
    ) -> Result<Vec<EdgeField>> {
        let mut edges = vec![first];
        for i in 1..3 {
            let g = |t: f64| datum(i, t);
            edges.push(solve_edge_hyperbolic(
                i,
                order,
                &self.vel[i],
                self.ell[i],
                self.t_final,
                rhs[i - 1],
                &g,
                self.grid,
                self.seed.wrapping_add(i as u64),
            )?);
        }
        Ok(edges)
    }

    /// Base orders: `d = 0`, continuity at the vertex.
    pub fn solve_base(&self, order: Exponent, rhs: [&SpaceTimeFn; 3], q1: &dyn Fn(f64) -> f64) -> Result<GraphField> {
        let e1 = self.edge1(order, rhs[0], q1)?;
        let vtx = e1.vertex(0);
        let tg = e1.tg();
        let edges = self.outflow_edges(order, e1, [rhs[1], rhs[2]], |_, t| vtx.at(t))?;
        Ok(GraphField {
            order,
            edges,
            d: TimeSignal::zeros(tg),
        })
    }

    /// General order: `rhs_i = w_prev''` and the weighted vertex split
    /// `w_i(0) = (d - v_1 h_1^2 w_1(0)) / (2 v_i h_i^2)` for `i = 2, 3`.
    pub fn solve_general(&self, order: Exponent, prev: &GraphField, d: &TimeSignal) -> Result<GraphField> {
        let d0 = d.at(d.grid.a);
        if d0.abs() > 1e-8 * (1.0 + d.max_abs()) {
            return Err(Error::MatchingViolated(format!("order {order}: d(0) = {d0:e}")));
        }
        let rhs: Vec<Box<SpaceTimeFn>> = (0..3)
            .map(|i| {
                let f = &prev.edges[i].derivs[2];
                Box::new(move |x: f64, t: f64| f.at(x, t)) as Box<SpaceTimeFn>
            })
            .collect();
        let e1 = self.edge1(order, rhs[0].as_ref(), &|_| 0.0)?;
        let vtx = e1.vertex(0);
        let v = self.vconst();
        let h = self.h;
        let edges = self.outflow_edges(order, e1, [rhs[1].as_ref(), rhs[2].as_ref()], |i, t| {
            if t <= 0.0 {
                return 0.0;
            }
            (d.at(t) - v[0] * h[0] * h[0] * vtx.at(t)) / (2.0 * v[i] * h[i] * h[i])
        })?;
        let tg = edges[0].tg();
        Ok(GraphField {
            order,
            edges,
            d: TimeSignal::from_fn(tg, |t| d.at(t)),
        })
    }
}

/// The two base problems: `w_{alpha-1}` driven by `-phi_hat` with zero
/// inflow, and `w_0` driven by `q_1`.
pub fn solve_limit_problem_negative_orders(solver: &GraphSolver, data: &BoundaryData) -> Result<(GraphField, GraphField)> {
    let src: Vec<Box<SpaceTimeFn>> = (0..3)
        .map(|i| {
            let f = &data.phi_hat[i];
            Box::new(move |x: f64, t: f64| -f.at(x, t)) as Box<SpaceTimeFn>
        })
        .collect();
    let zero = |_: f64, _: f64| 0.0;
    let wm1 = solver.solve_base(
        Exponent::new(1, -1),
        [src[0].as_ref(), src[1].as_ref(), src[2].as_ref()],
        &|_| 0.0,
    )?;
    let q1 = |t: f64| data.q_at(0, t);
    let w0 = solver.solve_base(Exponent::new(0, 0), [&zero, &zero, &zero], &q1)?;
    Ok((wm1, w0))
}
