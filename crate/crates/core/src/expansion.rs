//! Assembly of the partial sums over the four zones of the junction:
//! node region, blend shells, far cylinder parts and base layers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::disk::{build_corrector, CorrectorInputs, DiskField, DiskGrid, DiskSolver};
use crate::edge::{solve_limit_problem_negative_orders, BoundaryData, EdgeGrid, GraphField, GraphSolver};
use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::geometry::{cutoff_chi_delta, cutoff_chi_ell0, transverse_axes, NetworkSpec};
use crate::grid::{TimeSignal, Uniform};
use crate::layer::{build_layer_term, LayerTerm};
use crate::node::{NodeField, NodeOptions, NodeSolver};
use crate::order::{family_tops, partial_sum_exponents, Exponent};
use crate::velocity::{check_conservation, EdgeVelocity, NodePotential};

/// Boundary data of the problem: Dirichlet signals on the bases, lateral
/// interactions on the cylinders and the node interaction.
#[derive(Clone, Debug)]
pub struct ProblemData {
    pub q: [Expr; 3],
    pub phi: [Expr; 3],
    pub phi0: Expr,
}

impl ProblemData {
    pub fn zero() -> Self {
        let z = || Expr::constant(0.0);
        ProblemData {
            q: [z(), z(), z()],
            phi: [z(), z(), z()],
            phi0: z(),
        }
    }

    pub fn q_at(&self, i: usize, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.q[i].eval(&expr::vars(0.0, 0.0, 0.0, t, 0.0, 0.0))
    }
}

#[derive(Clone, Debug)]
pub struct BuildOptions {
    pub m: usize,
    pub edge: EdgeGrid,
    pub disk: DiskGrid,
    pub node: NodeOptions,
    /// Width of the base cut-off `chi_delta`.
    pub delta: f64,
    pub seed: u64,
}

impl BuildOptions {
    pub fn for_spec(spec: &NetworkSpec, m: usize) -> Self {
        BuildOptions {
            m,
            edge: EdgeGrid::default(),
            disk: DiskGrid::default(),
            node: NodeOptions::for_spec(spec),
            delta: spec.ell.iter().cloned().fold(f64::INFINITY, f64::min) / 10.0,
            seed: 0,
        }
    }
}

/// All coefficients of one exponent.
#[derive(Clone, Debug)]
pub struct Coefficient {
    pub order: Exponent,
    pub graph: GraphField,
    pub disks: Vec<DiskField>,
    pub node: NodeField,
    /// Boundary layers of edges 2 and 3.
    pub layers: Vec<LayerTerm>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Zone {
    NodeRegion,
    Blend(usize),
    CylFar(usize),
    BaseLayer(usize),
}

impl Zone {
    pub fn label(&self) -> String {
        match self {
            Zone::NodeRegion => "node".into(),
            Zone::Blend(i) => format!("blend{}", i + 1),
            Zone::CylFar(i) => format!("cyl{}", i + 1),
            Zone::BaseLayer(i) => format!("base{}", i + 1),
        }
    }
}

/// One edge of the dependency graph of the recurrence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dependency {
    pub target: String,
    pub source: String,
}

/// The coefficient set of the partial sum of order `m` with the geometry it
/// is evaluated on. Coefficients do not depend on `eps`, so one set serves
/// every `eps` through [`ExpansionOrderSet::with_eps`].
#[derive(Clone, Debug)]
pub struct ExpansionOrderSet {
    pub spec: NetworkSpec,
    pub m: usize,
    pub delta: f64,
    pub exponents: Vec<Exponent>,
    pub coeffs: Arc<BTreeMap<Exponent, Coefficient>>,
    pub audit: Vec<Dependency>,
    pub data: ProblemData,
    pub vel: [EdgeVelocity; 3],
    pub disk_solvers: Arc<Vec<DiskSolver>>,
    /// Rescaled node velocity potential.
    pub potential: Arc<NodePotential>,
}

fn name(sym: &str, e: Exponent) -> String {
    format!("{sym}_{}", e.label())
}

/// Builds every coefficient of the partial sum of order `opts.m`.
pub fn build_expansion(spec: &NetworkSpec, vel: &[EdgeVelocity; 3], data: &ProblemData, opts: &BuildOptions) -> Result<ExpansionOrderSet> {
    spec.validate()?;
    let fl = spec.floor_alpha();
    if opts.m == 0 {
        return Err(Error::MOrderTooSmall {
            m: 0,
            bound: 1.5 * (1 - fl) as f64,
        });
    }
    let vconst = [vel[0].const_near_node, vel[1].const_near_node, vel[2].const_near_node];
    check_conservation(&spec.h, &vconst)?;
    let exponents = partial_sum_exponents(fl, opts.m);
    let tops = family_tops(fl, opts.m);
    let bdata = BoundaryData::new(
        data.q.clone(),
        &data.phi,
        spec.h,
        spec.ell,
        spec.t_final,
        opts.edge.nx,
        opts.edge.nt,
    );
    bdata.check_matching(opts.m + 1)?;
    let graph = GraphSolver {
        ell: spec.ell,
        h: spec.h,
        t_final: spec.t_final,
        vel: vel.clone(),
        grid: opts.edge,
        seed: opts.seed,
    };
    let tg = Uniform::new(0.0, spec.t_final, opts.edge.nt);
    let (wm1, w0) = solve_limit_problem_negative_orders(&graph, &bdata)?;
    let mut node = NodeSolver::new(spec, vconst, data.phi0.clone(), opts.node)?;
    let disk_solvers: Vec<DiskSolver> = spec.h.iter().map(|&h| DiskSolver::default_for(h)).collect();
    let mut coeffs = BTreeMap::new();
    let mut audit = Vec::new();
    let mut dep = |t: String, s: String| audit.push(Dependency { target: t, source: s });
    for top in tops {
        let base = Exponent::family_base(top.p);
        let mut graphs: Vec<GraphField> = Vec::new();
        let mut disks: Vec<Vec<DiskField>> = Vec::new();
        let mut nodes: Vec<NodeField> = Vec::new();
        let mut layers: Vec<Vec<LayerTerm>> = Vec::new();
        let mut e = base;
        while e <= top {
            let k = (e.k - base.k) as usize;
            let alpha_order = e == Exponent::new(1, 0);
            // psi[j - 1][i] = d^j w^(i)_{e - j} / dx^j at the vertex
            let mut psi: Vec<[TimeSignal; 3]> = Vec::new();
            for j in 1..=k {
                if j > crate::edge::EdgeField::DERIVATIVES {
                    return Err(Error::InvalidParameter(format!(
                        "order {e} needs {j} vertex derivatives; at most {} are available",
                        crate::edge::EdgeField::DERIVATIVES
                    )));
                }
                let g = &graphs[k - j];
                psi.push(std::array::from_fn(|i| g.edges[i].vertex(j)));
                dep(name("N", e), format!("d^{j}w_{}(0)", g.order.label()));
            }
            let prev_dt = match nodes.last() {
                Some(prev) => {
                    dep(name("N", e), name("dtN", prev.order));
                    Some(node.time_derivative_field(prev, opts.node.mode)?)
                }
                None => None,
            };
            let g = if k == 0 {
                if e.p == 1 {
                    dep(name("w", e), "phi_hat".into());
                    wm1.clone()
                } else {
                    dep(name("w", e), "q1".into());
                    w0.clone()
                }
            } else {
                let d = node.compute_gluing_constant(e, prev_dt.as_ref(), &psi, alpha_order, tg)?;
                dep(name("d", e), name("dtN", e.prev()));
                if alpha_order {
                    dep(name("d", e), "phi0".into());
                }
                dep(name("w", e), name("d", e));
                dep(name("w", e), name("w", e.prev()));
                graph.solve_general(e, &graphs[k - 1], &d)?
            };
            let vertex: [TimeSignal; 3] = std::array::from_fn(|i| g.edges[i].vertex(0));
            dep(name("N", e), name("w", e));
            let nf = node.solve_node_problem(e, vertex, psi, prev_dt.as_ref(), alpha_order)?;
            let mut dk = Vec::with_capacity(3);
            for i in 0..3 {
                let inputs = CorrectorInputs {
                    order: e,
                    w_prev: graphs.last().map(|p| &p.edges[i]),
                    u_prev: disks.last().map(|d| &d[i]),
                    u_prev2: if k >= 2 { disks.get(k - 2).map(|d| &d[i]) } else { None },
                    vel: &vel[i],
                    phi: &data.phi[i],
                    h: spec.h[i],
                    ell: spec.ell[i],
                    t_final: spec.t_final,
                };
                dk.push(build_corrector(&inputs, &disk_solvers[i], opts.disk)?);
            }
            if k >= 1 {
                dep(name("u", e), name("u", e.prev()));
            }
            if alpha_order {
                dep(name("u", e), "phi".into());
            }
            let mut lk = Vec::with_capacity(2);
            for i in 1..3 {
                let end = g.edges[i].end_trace();
                let datum = if e == Exponent::new(0, 0) {
                    TimeSignal::from_fn(end.grid, |t| data.q_at(i, t)).scale_add(1.0, &end, -1.0)
                } else {
                    end.scale_add(-1.0, &end, 0.0)
                };
                let prev = layers.last().map(|l| &l[i - 1]);
                let v_end = vel[i].v(spec.ell[i]);
                lk.push(build_layer_term(i, e, prev, &datum, v_end)?);
            }
            dep(name("Pi", e), name("w", e));
            if k >= 1 {
                dep(name("Pi", e), name("Pi", e.prev()));
            }
            graphs.push(g);
            disks.push(dk);
            nodes.push(nf);
            layers.push(lk);
            e = e.next();
        }
        for (((g, d), n), l) in graphs.into_iter().zip(disks).zip(nodes).zip(layers) {
            coeffs.insert(
                g.order,
                Coefficient {
                    order: g.order,
                    graph: g,
                    disks: d,
                    node: n,
                    layers: l,
                },
            );
        }
    }
    Ok(ExpansionOrderSet {
        spec: spec.clone(),
        m: opts.m,
        delta: opts.delta,
        exponents,
        coeffs: Arc::new(coeffs),
        audit,
        data: data.clone(),
        vel: vel.clone(),
        disk_solvers: Arc::new(disk_solvers),
        potential: Arc::new(node.potential.clone()),
    })
}

impl ExpansionOrderSet {
    /// The same coefficients on the junction of thickness `eps`.
    pub fn with_eps(&self, eps: f64) -> Self {
        let mut out = self.clone();
        out.spec.eps = eps;
        out
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        let mut out = self.clone();
        out.spec.gamma = gamma;
        out
    }

    pub fn coefficient(&self, e: Exponent) -> Option<&Coefficient> {
        self.coeffs.get(&e)
    }

    /// Abscissae `2 ell0 eps^gamma` and `3 ell0 eps^gamma` bounding the blend shells.
    pub fn blend_bounds(&self) -> (f64, f64) {
        let r = self.spec.ell0 * self.spec.eps.powf(self.spec.gamma);
        (2.0 * r, 3.0 * r)
    }

    pub fn classify(&self, x: [f64; 3]) -> Result<Zone> {
        let region = self.spec.region_of(x)?;
        if region == 0 {
            return Ok(Zone::NodeRegion);
        }
        let i = region - 1;
        let s = x[i];
        let (b2, b3) = self.blend_bounds();
        Ok(if s < b2 {
            Zone::NodeRegion
        } else if s < b3 {
            Zone::Blend(i)
        } else if i > 0 && s >= self.spec.ell[i] - 2.0 * self.delta {
            Zone::BaseLayer(i)
        } else {
            Zone::CylFar(i)
        })
    }

    /// Velocity and its divergence at a physical point of the junction.
    pub fn velocity(&self, x: [f64; 3]) -> Result<([f64; 3], f64)> {
        let eps = self.spec.eps;
        let region = self.spec.region_of(x)?;
        if region == 0 {
            let xi = x.map(|c| c / eps);
            return Ok((self.potential.velocity_at(xi).unwrap_or([0.0; 3]), 0.0));
        }
        let i = region - 1;
        let vel = &self.vel[i];
        let (a, b) = transverse_axes(i);
        let xi = [x[a] / eps, x[b] / eps];
        let vb = vel.vbar(x[i], xi);
        let mut v = [0.0; 3];
        v[i] = vel.v(x[i]);
        v[a] = eps * vb[0];
        v[b] = eps * vb[1];
        Ok((v, vel.dv(x[i], 1) + vel.div_vbar(x[i], xi)))
    }

    /// `w + u` of exponent `e` on cylinder `i`.
    pub fn regular(&self, c: &Coefficient, i: usize, x: [f64; 3], t: f64) -> f64 {
        let s = x[i].clamp(0.0, self.spec.ell[i]);
        let mut v = c.graph.edges[i].value(s, t);
        let u = &c.disks[i];
        if !u.is_zero() {
            let (a, b) = transverse_axes(i);
            v += u.value(&self.disk_solvers[i], s, x[a] / self.spec.eps, x[b] / self.spec.eps, t);
        }
        v
    }

    /// `chi_delta Pi` of exponent `e` on cylinder `i`, with the base datum
    /// evaluated exactly.
    pub fn layer(&self, c: &Coefficient, i: usize, s: f64, t: f64) -> f64 {
        if i == 0 || t <= 0.0 {
            return 0.0;
        }
        let ell = self.spec.ell[i];
        let chi = cutoff_chi_delta(s, ell, self.delta);
        if chi == 0.0 {
            return 0.0;
        }
        let term = &c.layers[i - 1];
        let eta = (ell - s) / self.spec.eps;
        let mut datum = -c.graph.edges[i].value(ell, t);
        if c.order == Exponent::new(0, 0) {
            datum += self.data.q_at(i, t);
        }
        chi * term.value_with_datum(eta, t, datum)
    }

    /// Per-exponent values (already multiplied by `eps^e`) at `(x, t)`.
    pub fn evaluate_terms(&self, x: [f64; 3], t: f64, upto: &[Exponent]) -> Result<(Zone, Vec<(Exponent, f64)>)> {
        if t < 0.0 || t > self.spec.t_final * (1.0 + 1e-12) {
            return Err(Error::OutOfDomain);
        }
        let zone = self.classify(x)?;
        let eps = self.spec.eps;
        let xi = x.map(|c| c / eps);
        let mut out = Vec::with_capacity(upto.len());
        for &e in upto {
            let Some(c) = self.coeffs.get(&e) else {
                return Err(Error::InvalidParameter(format!("exponent {e} not built")));
            };
            let val = match zone {
                Zone::NodeRegion => c.node.value(xi, t),
                Zone::Blend(i) => {
                    let chi = cutoff_chi_ell0(x[i] / eps.powf(self.spec.gamma), self.spec.ell0);
                    (1.0 - chi) * c.node.value(xi, t) + chi * self.regular(c, i, x, t)
                }
                Zone::CylFar(i) | Zone::BaseLayer(i) => self.regular(c, i, x, t) + self.layer(c, i, x[i], t),
            };
            out.push((e, eps.powf(e.value(self.spec.alpha)) * val));
        }
        Ok((zone, out))
    }

    /// The partial sum restricted to the exponents `upto`.
    pub fn evaluate_partial(&self, x: [f64; 3], t: f64, upto: &[Exponent]) -> Result<f64> {
        Ok(self.evaluate_terms(x, t, upto)?.1.iter().map(|p| p.1).sum())
    }

    /// The full partial sum of order `m`.
    pub fn evaluate(&self, x: [f64; 3], t: f64) -> Result<f64> {
        self.evaluate_partial(x, t, &self.exponents)
    }

    /// Batch evaluation: reads `x,y,z,t` rows (a header line is skipped) and
    /// writes `x,y,z,t,value,zone` followed by one column per exponent.
    pub fn evaluate_csv(&self, input: &str) -> Result<String> {
        let mut out = String::from("x,y,z,t,value,zone");
        for e in &self.exponents {
            let _ = write!(out, ",eps^{}", e.label());
        }
        out.push('\n');
        for (ln, line) in input.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with('x') {
                continue;
            }
            let nums: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            let nums = nums.map_err(|e| Error::Parse {
                line: ln + 1,
                msg: e.to_string(),
            })?;
            if nums.len() != 4 {
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: format!("expected 4 columns, found {}", nums.len()),
                });
            }
            let (zone, terms) = self.evaluate_terms([nums[0], nums[1], nums[2]], nums[3], &self.exponents)?;
            let total: f64 = terms.iter().map(|p| p.1).sum();
            let _ = write!(out, "{},{},{},{},{:.15e},{}", nums[0], nums[1], nums[2], nums[3], total, zone.label());
            for (_, v) in terms {
                let _ = write!(out, ",{v:.15e}");
            }
            out.push('\n');
        }
        Ok(out)
    }

    /// Exponents of the partial sum of order `m` as realized in the set.
    pub fn realized(&self, m: usize) -> Vec<Exponent> {
        partial_sum_exponents(self.spec.floor_alpha(), m)
            .into_iter()
            .filter(|e| self.coeffs.contains_key(e))
            .collect()
    }

    /// Inventory `sym_label` of every nonzero-capable coefficient handle.
    pub fn inventory(&self) -> Vec<String> {
        let mut out = Vec::new();
        for e in &self.exponents {
            for sym in ["w", "u", "N", "Pi"] {
                if sym == "u" && e.is_base() {
                    continue;
                }
                out.push(name(sym, *e));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use std::sync::OnceLock;

    fn coarse(spec: &NetworkSpec, m: usize) -> BuildOptions {
        let mut o = BuildOptions::for_spec(spec, m);
        o.disk.nx = 40;
        o.disk.nt = 16;
        o.node.spacing = 0.05;
        o.node.samples = 8;
        o.node.solvability_tol = 1e-3;
        o
    }

    fn default_set() -> &'static ExpansionOrderSet {
        static SET: OnceLock<ExpansionOrderSet> = OnceLock::new();
        SET.get_or_init(|| {
            let cfg = RunConfig::default();
            let spec = NetworkSpec { eps: 0.2, ..cfg.spec.clone() };
            build_expansion(&spec, &cfg.vel, &cfg.data, &coarse(&spec, 2)).unwrap()
        })
    }

    fn at(i: usize, s: f64, r: f64, th: f64) -> [f64; 3] {
        let (a, b) = transverse_axes(i);
        let mut x = [0.0; 3];
        x[i] = s;
        x[a] = r * th.cos();
        x[b] = r * th.sin();
        x
    }

    #[test]
    fn zero_data_zero_sum() {
        let cfg = RunConfig::default();
        let spec = NetworkSpec { eps: 0.2, ..cfg.spec.clone() };
        let set = build_expansion(&spec, &cfg.vel, &ProblemData::zero(), &coarse(&spec, 1)).unwrap();
        for x in [[0.0, 0.0, 0.0], at(0, 0.1, 0.01, 0.3), at(1, 0.5, 0.02, 1.0), at(2, 0.97, 0.0, 0.0)] {
            for t in [0.0, 0.3, 1.0] {
                assert_eq!(set.evaluate(x, t).unwrap(), 0.0);
            }
        }
        let inv = set.inventory();
        let want = ["w_a-1", "N_a-1", "Pi_a-1", "w_a", "u_a", "N_a", "Pi_a", "w_0", "N_0", "Pi_0"];
        assert_eq!(inv, want);
    }

    #[test]
    fn m_zero_rejected() {
        let cfg = RunConfig::default();
        let r = build_expansion(&cfg.spec, &cfg.vel, &cfg.data, &coarse(&cfg.spec, 0));
        assert!(matches!(r, Err(Error::MOrderTooSmall { .. })));
    }

    #[test]
    fn exponent_bookkeeping() {
        let set = default_set();
        assert_eq!(set.exponents, partial_sum_exponents(0, 2));
        assert_eq!(set.realized(1), vec![Exponent::new(1, -1), Exponent::new(1, 0), Exponent::new(0, 0)]);
        let x = at(0, 0.6, 0.0, 0.0);
        let a = set.evaluate_terms(x, 0.7, &set.exponents).unwrap();
        let other = set.with_eps(0.1);
        let b = other.evaluate_terms(x, 0.7, &set.exponents).unwrap();
        for ((e, va), (_, vb)) in a.1.iter().zip(&b.1) {
            let ca = va / 0.2f64.powf(e.value(0.5));
            let cb = vb / 0.1f64.powf(e.value(0.5));
            assert!((ca - cb).abs() <= 1e-12 * (1.0 + ca.abs()), "{e}: {ca} {cb}");
        }
        assert_eq!(a.0, Zone::CylFar(0));
    }

    #[test]
    fn dirichlet_repair_at_outflow_bases() {
        let set = default_set();
        for i in 1..3 {
            for t in [0.13, 0.41, 0.777, 1.0] {
                for (r, th) in [(0.0, 0.0), (0.03, 1.1), (0.039, 4.0)] {
                    let u = set.evaluate(at(i, 1.0, r, th), t).unwrap();
                    let q = set.data.q_at(i, t);
                    assert!((u - q).abs() < 1e-12 * (1.0 + q.abs()), "{i} {t} {u} {q}");
                }
            }
        }
    }

    #[test]
    fn inflow_base_matches_at_grid_times() {
        let set = default_set();
        let tg = set.coefficient(Exponent::new(0, 0)).unwrap().graph.edges[0].tg();
        for n in [5, 33, 80] {
            let t = tg.node(n);
            let u = set.evaluate(at(0, 1.0, 0.01, 0.5), t).unwrap();
            assert!((u - set.data.q_at(0, t)).abs() < 1e-10, "{t} {u}");
        }
    }

    #[test]
    fn vanishes_at_initial_time() {
        let set = default_set();
        for x in [[0.0, 0.0, 0.0], [0.05, -0.05, 0.02], at(0, 0.1, 0.03, 0.3), at(1, 0.5, 0.02, 1.0), at(2, 0.95, 0.0, 0.0)] {
            assert_eq!(set.evaluate(x, 0.0).unwrap(), 0.0);
        }
    }

    #[test]
    fn zone_partition() {
        let set = default_set();
        let (b2, b3) = set.blend_bounds();
        assert_eq!(set.classify([0.0, 0.0, 0.0]).unwrap(), Zone::NodeRegion);
        assert_eq!(set.classify(at(1, 0.5 * (set.spec.eps * 0.3 + b2), 0.0, 0.0)).unwrap(), Zone::NodeRegion);
        assert_eq!(set.classify(at(1, 0.5 * (b2 + b3), 0.0, 0.0)).unwrap(), Zone::Blend(1));
        assert_eq!(set.classify(at(0, 0.5, 0.0, 0.0)).unwrap(), Zone::CylFar(0));
        assert_eq!(set.classify(at(0, 0.95, 0.0, 0.0)).unwrap(), Zone::CylFar(0));
        assert_eq!(set.classify(at(2, 0.85, 0.0, 0.0)).unwrap(), Zone::BaseLayer(2));
        assert_eq!(set.classify(at(2, 0.75, 0.0, 0.0)).unwrap(), Zone::CylFar(2));
        assert!(set.classify(at(2, 0.5, 0.05, 0.0)).is_err());
        assert!(matches!(set.evaluate([0.0; 3], -0.1), Err(Error::OutOfDomain)));
        assert!(matches!(set.evaluate([0.0; 3], 1.5), Err(Error::OutOfDomain)));
    }

    #[test]
    fn blend_is_continuous_across_shells() {
        let set = default_set();
        let (b2, b3) = set.blend_bounds();
        for b in [b2, b3] {
            let lo = set.evaluate(at(1, b * (1.0 - 1e-9), 0.01, 0.2), 0.6).unwrap();
            let hi = set.evaluate(at(1, b * (1.0 + 1e-9), 0.01, 0.2), 0.6).unwrap();
            assert!((lo - hi).abs() < 1e-6 * (1.0 + lo.abs()), "{b} {lo} {hi}");
        }
    }

    #[test]
    fn csv_batch_evaluation() {
        let set = default_set();
        let out = set.evaluate_csv("x,y,z,t\n0,0,0,0.5\n0.5,0,0,0.25\n").unwrap();
        let lines: Vec<&str> = out.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("x,y,z,t,value,zone"));
        let v: f64 = lines[2].split(',').nth(4).unwrap().parse().unwrap();
        let direct = set.evaluate([0.5, 0.0, 0.0], 0.25).unwrap();
        assert!((v - direct).abs() <= 1e-14 * (1.0 + direct.abs()));
    }
}
