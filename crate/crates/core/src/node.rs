//! Node-layer problems on the truncated rescaled junction, gluing constants
//! and decay fits.
//!
//! Every source term is a linear combination of a few fixed spatial
//! profiles with time-dependent coefficients, plus the node boundary
//! interaction, which is sampled in time. Solutions are kept in the same
//! form: coefficient signals times cached basis solutions, and per-sample
//! fields for the boundary-interaction part.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::geometry::{build_node_core, build_rescaled_node, chi_ell0_jet, cutoff_chi_ell0, NetworkSpec, Patch, Region, VoxelMesh};
use crate::grid::{fd_derivative, gauss_legendre, linear_fit, TimeSignal, Uniform};
use crate::jet::Jet;
use crate::krylov::{bicgstab, Csr};
use crate::order::Exponent;
use crate::velocity::{solve_node_potential, NodePotential};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DerivativeMode {
    /// Re-solve with time-differentiated data.
    Resolve,
    /// Finite differences across the time samples.
    FiniteDifference,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeOptions {
    pub spacing: f64,
    pub trunc_len: f64,
    /// Number of time intervals; the samples are `T k / samples`.
    pub samples: usize,
    pub rtol: f64,
    pub max_iter: usize,
    /// Cap magnitude relative to the field maximum above which
    /// [`Error::TruncationError`] is raised.
    pub cap_threshold: f64,
    pub solvability_tol: f64,
    pub mode: DerivativeMode,
}

impl NodeOptions {
    pub fn for_spec(spec: &NetworkSpec) -> Self {
        let hmin = spec.h.iter().cloned().fold(f64::INFINITY, f64::min);
        NodeOptions {
            spacing: hmin / 8.0,
            trunc_len: 10.0 * spec.ell0,
            samples: 40,
            rtol: 1e-12,
            max_iter: 40000,
            cap_threshold: 1e-2,
            solvability_tol: 1e-6,
            mode: DerivativeMode::Resolve,
        }
    }
}

/// A fixed source profile in stub `edge`: `j = 0` is the vertex-value
/// profile `chi'' - v chi'`; `j >= 1` comes from the monomial `xi^j / j!`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StubKey {
    pub edge: usize,
    pub j: usize,
}

#[derive(Clone, Debug)]
pub struct BasisTerm {
    pub coef: TimeSignal,
    pub key: StubKey,
    /// Number of extra inverse applications of the operator.
    pub depth: usize,
    values: Arc<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct SampledTerm {
    pub sign: f64,
    pub depth: usize,
    /// Order of the time derivative of the boundary interaction.
    pub dt: usize,
    values: Arc<Vec<Vec<f64>>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayFit {
    /// Fitted rate; infinite when the stub field is below the noise floor
    /// past the source region.
    pub beta0: f64,
    /// Standard error of the slope.
    pub stderr: f64,
    pub points: usize,
}

/// `N~(xi, t)` with its polynomial asymptotics.
#[derive(Clone, Debug)]
pub struct NodeField {
    pub order: Exponent,
    pub t_grid: Uniform,
    pub terms: Vec<BasisTerm>,
    pub sampled: Vec<SampledTerm>,
    /// Per-sample values from finite differencing.
    pub raw: Option<Arc<Vec<Vec<f64>>>>,
    /// `w^(i)(0, t)`.
    pub vertex_values: [TimeSignal; 3],
    /// `psi[j - 1][i]` is the coefficient of `xi_i^j / j!` in `Psi^(i)`.
    pub psi: Vec<[TimeSignal; 3]>,
    pub beta0: [DecayFit; 3],
    pub cap_ratio: f64,
    pub max_abs: f64,
    pub solvability_defect: f64,
    pub mode: DerivativeMode,
    mesh: Arc<VoxelMesh>,
    ell0: f64,
}

/// The discretized node problem: mesh, velocity and operator.
pub struct NodeSolver {
    pub ell0: f64,
    pub h: [f64; 3],
    pub v: [f64; 3],
    pub options: NodeOptions,
    pub mesh: Arc<VoxelMesh>,
    pub potential: NodePotential,
    pub phi0: Expr,
    pub t_grid: Uniform,
    matrix: Csr,
    cache: HashMap<(StubKey, usize), Arc<Vec<f64>>>,
    sampled_cache: HashMap<(usize, usize), Arc<Vec<Vec<f64>>>>,
    pub solves: usize,
}

impl std::fmt::Debug for NodeSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NodeSolver")
            .field("cells", &self.mesh.cells.len())
            .field("solves", &self.solves)
            .finish()
    }
}

fn chi_derivs(s: f64, ell0: f64) -> [f64; 3] {
    let j = chi_ell0_jet(Jet::variable(s), ell0);
    [j.value(), j.deriv(1), j.deriv(2)]
}

fn factorial(j: usize) -> f64 {
    (1..=j).map(|k| k as f64).product()
}

/// `int (psi_j' - v psi_j) chi' dxi` over the stub for `psi_j = xi^j / j!`.
pub fn psi_chi_integral(j: usize, v: f64, ell0: f64) -> f64 {
    let (gx, gw) = gauss_legendre(16);
    let (a, b) = (2.0 * ell0, 3.0 * ell0);
    let mut acc = 0.0;
    for panel in 0..8 {
        let lo = a + (b - a) * panel as f64 / 8.0;
        let hi = lo + (b - a) / 8.0;
        for (x, w) in gx.iter().zip(&gw) {
            let s = 0.5 * (lo + hi) + 0.5 * (hi - lo) * x;
            let psi = s.powi(j as i32) / factorial(j);
            let dpsi = if j == 0 { 0.0 } else { s.powi(j as i32 - 1) / factorial(j - 1) };
            acc += 0.5 * (hi - lo) * w * (dpsi - v * psi) * chi_derivs(s, ell0)[1];
        }
    }
    acc
}

impl NodeSolver {
    pub fn new(spec: &NetworkSpec, v: [f64; 3], phi0: Expr, options: NodeOptions) -> Result<Self> {
        let mesh = build_rescaled_node(spec, options.trunc_len, options.spacing)?;
        let core = build_node_core(spec, options.spacing)?;
        let potential = solve_node_potential(&core, v)?;
        if (potential.spacing - mesh.spacing).abs() > 1e-12 * mesh.spacing {
            return Err(Error::GridMismatch("potential and node mesh spacings differ".into()));
        }
        let n = mesh.cells.len();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(7); n];
        for f in &mesh.faces {
            let (ca, cb) = (&mesh.cells[f.a], &mesh.cells[f.b]);
            let u = match (ca.region, cb.region) {
                (Region::Node, Region::Node) => potential
                    .interior_face_velocity(cb.ijk, f.axis)
                    .ok_or_else(|| Error::GridMismatch("node face without potential".into()))?,
                (Region::Node, Region::Cyl(i)) | (Region::Cyl(i), Region::Node) => {
                    if i == f.axis {
                        v[i]
                    } else {
                        0.0
                    }
                }
                (Region::Cyl(i), Region::Cyl(_)) => {
                    if i == f.axis {
                        v[i]
                    } else {
                        0.0
                    }
                }
            };
            let g = f.area / f.dist;
            let c = 0.5 * u * f.area;
            rows[f.a].push((f.a, g + c));
            rows[f.a].push((f.b, -g + c));
            rows[f.b].push((f.b, g - c));
            rows[f.b].push((f.a, -g - c));
        }
        for bf in &mesh.bfaces {
            if let Patch::Cap(i) = bf.patch {
                if v[i] > 0.0 {
                    rows[bf.cell].push((bf.cell, v[i] * bf.area));
                }
            }
        }
        let matrix = Csr::from_rows(rows);
        let t_grid = Uniform::new(0.0, spec.t_final, options.samples);
        Ok(NodeSolver {
            ell0: spec.ell0,
            h: spec.h,
            v,
            options,
            mesh: Arc::new(mesh),
            potential,
            phi0,
            t_grid,
            matrix,
            cache: HashMap::new(),
            sampled_cache: HashMap::new(),
            solves: 0,
        })
    }

    fn solve_rhs(&mut self, b: &[f64], guess: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut x = match guess {
            Some(g) => g.to_vec(),
            None => vec![0.0; b.len()],
        };
        bicgstab(&self.matrix, b, &mut x, self.options.rtol, self.options.max_iter)?;
        self.solves += 1;
        Ok(x)
    }

    /// Discrete source `S V` of a stub profile, integrated exactly along
    /// the stub axis over each cell.
    pub fn stub_source(&self, key: StubKey) -> Vec<f64> {
        let v = self.v[key.edge];
        let (gx, gw) = gauss_legendre(4);
        let hs = 0.5 * self.mesh.spacing;
        let (lo, hi) = (2.0 * self.ell0, 3.0 * self.ell0);
        let f = |s: f64| {
            let [_, d1, d2] = chi_derivs(s, self.ell0);
            if key.j == 0 {
                d2 - v * d1
            } else {
                let psi = s.powi(key.j as i32) / factorial(key.j);
                let dpsi = s.powi(key.j as i32 - 1) / factorial(key.j - 1);
                2.0 * dpsi * d1 + psi * d2 - v * psi * d1
            }
        };
        self.mesh
            .cells
            .iter()
            .map(|c| {
                if c.region != Region::Cyl(key.edge) {
                    return 0.0;
                }
                let s = c.center[key.edge];
                if s + hs <= lo || s - hs >= hi {
                    return 0.0;
                }
                let mean: f64 = gx.iter().zip(&gw).map(|(x, w)| 0.5 * w * f(s + hs * x)).sum();
                mean * c.volume
            })
            .collect()
    }

    /// Neumann contribution `-g A` of `d^dt phi0 / dt^dt` on the node surface.
    pub fn phi_source(&self, dt: usize, t: f64) -> Vec<f64> {
        let mut b = vec![0.0; self.mesh.cells.len()];
        if self.phi0.is_zero() || t <= 0.0 {
            return b;
        }
        for bf in &self.mesh.bfaces {
            if bf.patch == Patch::NodeSurface {
                let c = bf.center;
                let vars = expr::vars(c[0], c[1], c[2], t, 0.0, 0.0);
                let g = if dt == 0 { self.phi0.eval(&vars) } else { self.phi0.deriv(&vars, expr::T, dt) };
                b[bf.cell] -= g * bf.area;
            }
        }
        b
    }

    /// `int_{Gamma_0} d^dt phi0 / dt^dt` on the time samples.
    pub fn phi_integral(&self, dt: usize) -> TimeSignal {
        TimeSignal::from_fn(self.t_grid, |t| -self.phi_source(dt, t).iter().sum::<f64>())
    }

    fn weighted(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mesh.cells).map(|(v, c)| v * c.volume).collect()
    }

    pub fn integral(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.mesh.cells).map(|(v, c)| v * c.volume).sum()
    }

    /// `(L^{-1})^{depth + 1}` applied to the stub profile.
    pub fn basis(&mut self, key: StubKey, depth: usize) -> Result<Arc<Vec<f64>>> {
        if let Some(v) = self.cache.get(&(key, depth)) {
            return Ok(v.clone());
        }
        let b = if depth == 0 {
            self.stub_source(key)
        } else {
            let prev = self.basis(key, depth - 1)?;
            self.weighted(&prev)
        };
        let x = Arc::new(self.solve_rhs(&b, None)?);
        self.cache.insert((key, depth), x.clone());
        Ok(x)
    }

    /// `(L^{-1})^depth G(d^dt phi0)` on every time sample.
    pub fn sampled(&mut self, depth: usize, dt: usize) -> Result<Arc<Vec<Vec<f64>>>> {
        if let Some(v) = self.sampled_cache.get(&(depth, dt)) {
            return Ok(v.clone());
        }
        let prev = if depth > 0 { Some(self.sampled(depth - 1, dt)?) } else { None };
        let mut out: Vec<Vec<f64>> = Vec::with_capacity(self.t_grid.len());
        for n in 0..self.t_grid.len() {
            let b = match &prev {
                Some(p) => self.weighted(&p[n]),
                None => self.phi_source(dt, self.t_grid.node(n)),
            };
            let guess = out.last().cloned();
            let x = self.solve_rhs(&b, guess.as_deref())?;
            out.push(x);
        }
        let out = Arc::new(out);
        self.sampled_cache.insert((depth, dt), out.clone());
        Ok(out)
    }

    fn zero_signals(&self, tg: Uniform) -> [TimeSignal; 3] {
        std::array::from_fn(|_| TimeSignal::zeros(tg))
    }

    fn finish(&self, mut field: NodeField) -> Result<NodeField> {
        let samples: Vec<Vec<f64>> = (0..self.t_grid.len()).map(|n| field.sample(n)).collect();
        let mut best = 0;
        let mut max_abs = 0.0f64;
        for (n, s) in samples.iter().enumerate() {
            let m = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if m > max_abs {
                max_abs = m;
                best = n;
            }
        }
        field.max_abs = max_abs;
        let mut cap = 0.0f64;
        for bf in &self.mesh.bfaces {
            if let Patch::Cap(_) = bf.patch {
                for s in &samples {
                    cap = cap.max(s[bf.cell].abs());
                }
            }
        }
        field.cap_ratio = if max_abs > 0.0 { cap / max_abs } else { 0.0 };
        field.beta0 = std::array::from_fn(|i| self.fit_decay(&samples[best], i, max_abs));
        Ok(field)
    }

    /// Cross-section means of `|x - offset|` per layer of stub `i` as
    /// `(xi, mean)`.
    pub fn stub_profile(&self, x: &[f64], i: usize, offset: f64) -> Vec<(f64, f64)> {
        let mut layers: HashMap<i32, (f64, f64, f64)> = HashMap::new();
        for (c, cell) in self.mesh.cells.iter().enumerate() {
            if cell.region == Region::Cyl(i) {
                let e = layers.entry(cell.ijk[i]).or_insert((cell.center[i], 0.0, 0.0));
                e.1 += (x[c] - offset).abs() * cell.volume;
                e.2 += cell.volume;
            }
        }
        let mut out: Vec<(f64, f64)> = layers.values().map(|&(xi, s, v)| (xi, s / v)).collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// Signed cross-section mean over the outermost layer of stub `i`.
    fn cap_mean(&self, x: &[f64], i: usize) -> f64 {
        let top = self
            .mesh
            .cells
            .iter()
            .filter(|c| c.region == Region::Cyl(i))
            .map(|c| c.ijk[i])
            .max();
        let (mut s, mut v) = (0.0, 0.0);
        for (c, cell) in self.mesh.cells.iter().enumerate() {
            if cell.region == Region::Cyl(i) && Some(cell.ijk[i]) == top {
                s += x[c] * cell.volume;
                v += cell.volume;
            }
        }
        if v > 0.0 {
            s / v
        } else {
            0.0
        }
    }

    /// Rate of approach to the far-field level beyond the stub sources,
    /// fitted on the inner half of the source-free part of the stub.
    fn fit_decay(&self, x: &[f64], i: usize, max_abs: f64) -> DecayFit {
        let far = self.cap_mean(x, i);
        let prof = self.stub_profile(x, i, far);
        let lo = 3.0 * self.ell0;
        let hi = lo + 0.5 * (self.options.trunc_len - lo);
        let floor = 1e-9 * max_abs;
        let pts: Vec<(f64, f64)> = prof
            .iter()
            .filter(|(xi, m)| *xi > lo && *xi <= hi && *m > floor)
            .map(|&(xi, m)| (xi, m.ln()))
            .collect();
        if pts.len() < 3 {
            return DecayFit {
                beta0: f64::INFINITY,
                stderr: 0.0,
                points: pts.len(),
            };
        }
        let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let (slope, _, _) = linear_fit(&xs, &ys);
        let n = xs.len() as f64;
        let xm = xs.iter().sum::<f64>() / n;
        let ym = ys.iter().sum::<f64>() / n;
        let icpt = ym - slope * xm;
        let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - icpt - slope * x).powi(2)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - xm).powi(2)).sum();
        let stderr = if n > 2.0 { (sse / (n - 2.0) / sxx).sqrt() } else { 0.0 };
        DecayFit {
            beta0: -slope,
            stderr,
            points: xs.len(),
        }
    }

    /// Discrete right-hand side total `sum_c b_c(t)` on the time samples.
    fn source_total(&mut self, field: &NodeField, prev_dt: Option<&NodeField>, with_phi: bool) -> Result<TimeSignal> {
        let tg = self.t_grid;
        let mut tot = vec![0.0; tg.len()];
        for term in field.terms.iter().filter(|t| t.depth == 0) {
            let s: f64 = self.stub_source(term.key).iter().sum();
            for (n, v) in tot.iter_mut().enumerate() {
                *v += term.coef.at(tg.node(n)) * s;
            }
        }
        if let Some(p) = prev_dt {
            for n in 0..tg.len() {
                tot[n] -= self.integral(&p.sample(n));
            }
        }
        if with_phi {
            let phi = self.phi_integral(0);
            for (n, v) in tot.iter_mut().enumerate() {
                *v -= phi.vals[n];
            }
        }
        Ok(TimeSignal { grid: tg, vals: tot })
    }

    /// Solves for `N~` of exponent `order`: stub profiles weighted by the
    /// vertex values `w^(i)(0, t)` and by the coefficients of `Psi`, the
    /// term `-d_t N~_prev`, and the Neumann data `phi0` when `with_phi`.
    pub fn solve_node_problem(
        &mut self,
        order: Exponent,
        vertex: [TimeSignal; 3],
        psi: Vec<[TimeSignal; 3]>,
        prev_dt: Option<&NodeField>,
        with_phi: bool,
    ) -> Result<NodeField> {
        let mut terms = Vec::new();
        for i in 0..3 {
            if vertex[i].max_abs() > 0.0 {
                let key = StubKey { edge: i, j: 0 };
                terms.push(BasisTerm {
                    coef: vertex[i].clone(),
                    key,
                    depth: 0,
                    values: self.basis(key, 0)?,
                });
            }
            for (j, row) in psi.iter().enumerate() {
                if row[i].max_abs() > 0.0 {
                    let key = StubKey { edge: i, j: j + 1 };
                    terms.push(BasisTerm {
                        coef: row[i].clone(),
                        key,
                        depth: 0,
                        values: self.basis(key, 0)?,
                    });
                }
            }
        }
        let mut sampled = Vec::new();
        if with_phi && !self.phi0.is_zero() {
            sampled.push(SampledTerm {
                sign: 1.0,
                depth: 0,
                dt: 0,
                values: self.sampled(0, 0)?,
            });
        }
        let mut raw = None;
        if let Some(p) = prev_dt {
            for t in &p.terms {
                let coef = t.coef.scale_add(-1.0, &t.coef, 0.0);
                terms.push(BasisTerm {
                    coef,
                    key: t.key,
                    depth: t.depth + 1,
                    values: self.basis(t.key, t.depth + 1)?,
                });
            }
            for s in &p.sampled {
                sampled.push(SampledTerm {
                    sign: -s.sign,
                    depth: s.depth + 1,
                    dt: s.dt,
                    values: self.sampled(s.depth + 1, s.dt)?,
                });
            }
            if let Some(r) = &p.raw {
                let mut out: Vec<Vec<f64>> = Vec::with_capacity(r.len());
                for sample in r.iter() {
                    let b: Vec<f64> = self.weighted(sample).into_iter().map(|v| -v).collect();
                    let guess = out.last().cloned();
                    out.push(self.solve_rhs(&b, guess.as_deref())?);
                }
                raw = Some(Arc::new(out));
            }
        }
        let mut field = NodeField {
            order,
            t_grid: self.t_grid,
            terms,
            sampled,
            raw,
            vertex_values: vertex,
            psi,
            beta0: [DecayFit {
                beta0: f64::INFINITY,
                stderr: 0.0,
                points: 0,
            }; 3],
            cap_ratio: 0.0,
            max_abs: 0.0,
            solvability_defect: 0.0,
            mode: self.options.mode,
            mesh: self.mesh.clone(),
            ell0: self.ell0,
        };
        let total = self.source_total(&field, prev_dt, with_phi && !self.phi0.is_zero())?;
        let scale = 1.0 + self.solvability_scale(&field, prev_dt);
        field.solvability_defect = total.max_abs() / scale;
        if field.solvability_defect > self.options.solvability_tol {
            return Err(Error::SolvabilityDefect {
                defect: field.solvability_defect,
            });
        }
        let field = self.finish(field)?;
        if field.cap_ratio > self.options.cap_threshold {
            return Err(Error::TruncationError { ratio: field.cap_ratio });
        }
        Ok(field)
    }

    fn solvability_scale(&mut self, field: &NodeField, prev_dt: Option<&NodeField>) -> f64 {
        let tg = self.t_grid;
        let mut m = 0.0f64;
        for n in 0..tg.len() {
            let t = tg.node(n);
            let mut s = 0.0;
            for term in field.terms.iter().filter(|t| t.depth == 0) {
                let src = self.stub_source(term.key);
                s += term.coef.at(t).abs() * src.iter().map(|v| v.abs()).sum::<f64>();
            }
            if let Some(p) = prev_dt {
                s += p.sample(n).iter().zip(&self.mesh.cells).map(|(v, c)| v.abs() * c.volume).sum::<f64>();
            }
            m = m.max(s);
        }
        m
    }

    /// Gluing constant `d(t)` on `tg`.
    pub fn compute_gluing_constant(
        &mut self,
        order: Exponent,
        prev_dt: Option<&NodeField>,
        psi: &[[TimeSignal; 3]],
        with_phi: bool,
        tg: Uniform,
    ) -> Result<TimeSignal> {
        if order.is_base() {
            return Ok(TimeSignal::zeros(tg));
        }
        let pi = std::f64::consts::PI;
        let mut vals = vec![0.0; tg.len()];
        if with_phi && !self.phi0.is_zero() {
            for (n, v) in vals.iter_mut().enumerate() {
                *v += self.phi_source(0, tg.node(n)).iter().sum::<f64>() / pi;
            }
        }
        if let Some(p) = prev_dt {
            for t in &p.terms {
                let integ = self.integral(&t.values);
                for (n, v) in vals.iter_mut().enumerate() {
                    *v -= t.coef.at(tg.node(n)) * integ / pi;
                }
            }
            let mut extra = vec![0.0; self.t_grid.len()];
            for s in &p.sampled {
                for (n, e) in extra.iter_mut().enumerate() {
                    *e += s.sign * self.integral(&s.values[n]);
                }
            }
            if let Some(r) = &p.raw {
                for (n, e) in extra.iter_mut().enumerate() {
                    *e += self.integral(&r[n]);
                }
            }
            let extra = TimeSignal { grid: self.t_grid, vals: extra };
            for (n, v) in vals.iter_mut().enumerate() {
                *v -= extra.at(tg.node(n)) / pi;
            }
        }
        for (j, row) in psi.iter().enumerate() {
            for i in 0..3 {
                let integ = self.h[i] * self.h[i] * psi_chi_integral(j + 1, self.v[i], self.ell0);
                for (n, v) in vals.iter_mut().enumerate() {
                    *v += row[i].at(tg.node(n)) * integ;
                }
            }
        }
        Ok(TimeSignal { grid: tg, vals })
    }

    /// `d_t N~` by re-solving with differentiated data or by finite
    /// differences across the samples.
    pub fn time_derivative_field(&mut self, field: &NodeField, mode: DerivativeMode) -> Result<NodeField> {
        let vertex = field.vertex_values.clone().map(|s| s.derivative());
        let psi: Vec<[TimeSignal; 3]> = field.psi.iter().map(|r| r.clone().map(|s| s.derivative())).collect();
        let mut out = NodeField {
            order: field.order,
            t_grid: field.t_grid,
            terms: Vec::new(),
            sampled: Vec::new(),
            raw: None,
            vertex_values: vertex,
            psi,
            beta0: field.beta0,
            cap_ratio: field.cap_ratio,
            max_abs: 0.0,
            solvability_defect: field.solvability_defect,
            mode,
            mesh: field.mesh.clone(),
            ell0: field.ell0,
        };
        match mode {
            DerivativeMode::Resolve if field.raw.is_none() => {
                for t in &field.terms {
                    out.terms.push(BasisTerm {
                        coef: t.coef.derivative(),
                        ..t.clone()
                    });
                }
                for s in &field.sampled {
                    out.sampled.push(SampledTerm {
                        sign: s.sign,
                        depth: s.depth,
                        dt: s.dt + 1,
                        values: self.sampled(s.depth, s.dt + 1)?,
                    });
                }
            }
            _ => {
                out.mode = DerivativeMode::FiniteDifference;
                let samples: Vec<Vec<f64>> = (0..field.t_grid.len()).map(|n| field.sample(n)).collect();
                let nc = self.mesh.cells.len();
                let mut d = vec![vec![0.0; nc]; samples.len()];
                let mut col = vec![0.0; samples.len()];
                for c in 0..nc {
                    for (n, s) in samples.iter().enumerate() {
                        col[n] = s[c];
                    }
                    for (n, v) in fd_derivative(&col, field.t_grid.step()).into_iter().enumerate() {
                        d[n][c] = v;
                    }
                }
                out.raw = Some(Arc::new(d));
            }
        }
        out.max_abs = (0..out.t_grid.len())
            .map(|n| out.sample(n).iter().fold(0.0f64, |a, v| a.max(v.abs())))
            .fold(0.0, f64::max);
        Ok(out)
    }

    /// A field identically zero with the given asymptotic data.
    pub fn zero_field(&self, order: Exponent, tg: Uniform) -> NodeField {
        NodeField {
            order,
            t_grid: self.t_grid,
            terms: Vec::new(),
            sampled: Vec::new(),
            raw: None,
            vertex_values: self.zero_signals(tg),
            psi: Vec::new(),
            beta0: [DecayFit {
                beta0: f64::INFINITY,
                stderr: 0.0,
                points: 0,
            }; 3],
            cap_ratio: 0.0,
            max_abs: 0.0,
            solvability_defect: 0.0,
            mode: self.options.mode,
            mesh: self.mesh.clone(),
            ell0: self.ell0,
        }
    }
}

impl NodeField {
    pub fn mesh(&self) -> &VoxelMesh {
        &self.mesh
    }

    /// Cell values of `N~` at time sample `n`.
    pub fn sample(&self, n: usize) -> Vec<f64> {
        let t = self.t_grid.node(n);
        let mut out = vec![0.0; self.mesh.cells.len()];
        for term in &self.terms {
            let c = term.coef.at(t);
            if c != 0.0 {
                for (o, v) in out.iter_mut().zip(term.values.iter()) {
                    *o += c * v;
                }
            }
        }
        for s in &self.sampled {
            for (o, v) in out.iter_mut().zip(&s.values[n]) {
                *o += s.sign * v;
            }
        }
        if let Some(r) = &self.raw {
            for (o, v) in out.iter_mut().zip(&r[n]) {
                *o += v;
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty() && self.sampled.is_empty() && self.raw.is_none()
    }

    /// Trilinear interpolation weights of the cell-centred field at `xi`,
    /// falling back to the containing cell near boundaries.
    fn stencil(&self, xi: [f64; 3]) -> Option<Vec<(usize, f64)>> {
        let s = self.mesh.spacing;
        let mut base = [0i32; 3];
        let mut f = [0.0; 3];
        for a in 0..3 {
            let u = xi[a] / s - 0.5;
            base[a] = u.floor() as i32;
            f[a] = u - base[a] as f64;
        }
        let mut out = Vec::with_capacity(8);
        for corner in 0..8 {
            let mut ijk = base;
            let mut w = 1.0;
            for a in 0..3 {
                let bit = (corner >> a) & 1;
                ijk[a] += bit as i32;
                w *= if bit == 1 { f[a] } else { 1.0 - f[a] };
            }
            match self.mesh.index_of(ijk) {
                Some(c) => {
                    let cc = self.mesh.cells[c].center;
                    let regular = (0..3).all(|a| (cc[a] - (ijk[a] as f64 + 0.5) * s).abs() < 1e-9 * s);
                    if !regular {
                        out.clear();
                        break;
                    }
                    out.push((c, w));
                }
                None => {
                    out.clear();
                    break;
                }
            }
        }
        if out.len() == 8 {
            return Some(out);
        }
        self.mesh.cell_at(xi).map(|c| vec![(c, 1.0)])
    }

    fn time_weights(&self, t: f64) -> (usize, [f64; 4], usize) {
        let (s, w) = self.t_grid.stencil(t);
        let m = if self.t_grid.n < 3 { 2 } else { 4 };
        (s, w, m)
    }

    /// `N~(xi, t)`; zero outside the truncated domain and for `t <= 0`.
    pub fn tilde(&self, xi: [f64; 3], t: f64) -> f64 {
        if t <= 0.0 || self.is_zero() {
            return 0.0;
        }
        let Some(st) = self.stencil(xi) else {
            return 0.0;
        };
        let mut acc = 0.0;
        for term in &self.terms {
            let c = term.coef.at(t);
            if c != 0.0 {
                acc += c * st.iter().map(|&(k, w)| w * term.values[k]).sum::<f64>();
            }
        }
        let (s0, tw, m) = self.time_weights(t);
        for s in &self.sampled {
            for q in 0..m {
                let v: f64 = st.iter().map(|&(k, w)| w * s.values[s0 + q][k]).sum();
                acc += s.sign * tw[q] * v;
            }
        }
        if let Some(r) = &self.raw {
            for q in 0..m {
                acc += tw[q] * st.iter().map(|&(k, w)| w * r[s0 + q][k]).sum::<f64>();
            }
        }
        acc
    }

    /// `d N~ / d xi_axis` by central differences of the interpolant.
    pub fn tilde_grad(&self, xi: [f64; 3], t: f64, axis: usize) -> f64 {
        let d = 0.5 * self.mesh.spacing;
        let mut a = xi;
        let mut b = xi;
        a[axis] -= d;
        b[axis] += d;
        (self.tilde(b, t) - self.tilde(a, t)) / (2.0 * d)
    }

    /// Polynomial asymptote `w^(i)(0, t) + Psi^(i)(xi_i, t)` in stub `i`.
    pub fn asymptote(&self, i: usize, s: f64, t: f64) -> f64 {
        let mut acc = self.vertex_values[i].at(t);
        for (j, row) in self.psi.iter().enumerate() {
            let k = j + 1;
            acc += row[i].at(t) * s.powi(k as i32) / factorial(k);
        }
        acc
    }

    /// `d/ds` of the asymptote.
    pub fn asymptote_ds(&self, i: usize, s: f64, t: f64) -> f64 {
        let mut acc = 0.0;
        for (j, row) in self.psi.iter().enumerate() {
            let k = j + 1;
            acc += row[i].at(t) * s.powi(k as i32 - 1) / factorial(k - 1);
        }
        acc
    }

    /// The stub containing `xi` and the axial coordinate, if outside the
    /// node cube.
    pub fn stub_of(&self, xi: [f64; 3]) -> Option<(usize, f64)> {
        (0..3).find(|&a| xi[a] > self.ell0).map(|a| (a, xi[a]))
    }

    /// `N(xi, t) = sum_i (w^(i)(0, t) + Psi^(i)) chi(xi_i) + N~`.
    pub fn value(&self, xi: [f64; 3], t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        let mut acc = self.tilde(xi, t);
        if let Some((i, s)) = self.stub_of(xi) {
            let chi = cutoff_chi_ell0(s, self.ell0);
            if chi != 0.0 {
                acc += chi * self.asymptote(i, s, t);
            }
        }
        acc
    }

    /// `d_{xi_i} N` along the stub axis.
    pub fn value_ds(&self, xi: [f64; 3], t: f64) -> f64 {
        let Some((i, s)) = self.stub_of(xi) else {
            return 0.0;
        };
        let [chi, dchi, _] = chi_derivs(s, self.ell0);
        self.tilde_grad(xi, t, i) + dchi * self.asymptote(i, s, t) + chi * self.asymptote_ds(i, s, t)
    }

    pub fn csv(&self, n: usize) -> String {
        self.mesh.ascii_dump(Some(&self.sample(n)))
    }
}
