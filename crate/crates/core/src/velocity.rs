//! Convective field: node potential, conservation check and edge velocities.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::geometry::{disc_rect_area, transverse_axes, NetworkSpec, Patch, Region, VoxelMesh};
use crate::krylov::{cg, Csr};

/// Fails unless `sum h_i^2 v_i = 0` within 1e-12 relative.
pub fn check_conservation(h: &[f64; 3], v: &[f64; 3]) -> Result<()> {
    let terms: Vec<f64> = (0..3).map(|i| h[i] * h[i] * v[i]).collect();
    let defect: f64 = terms.iter().sum();
    let scale: f64 = terms.iter().map(|t| t.abs()).sum::<f64>();
    if defect.abs() > 1e-12 * scale.max(f64::MIN_POSITIVE) && defect != 0.0 {
        return Err(Error::ConservationViolated { defect });
    }
    Ok(())
}

/// Velocity on one edge: axial profile `v(x)` and the transverse pair
/// `Vbar(x, y, z)` where `(y, z)` are the rescaled transverse coordinates.
#[derive(Clone, Debug)]
pub struct EdgeVelocity {
    pub edge: usize,
    pub axial: Expr,
    pub transverse: [Expr; 2],
    pub delta: f64,
    pub const_near_node: f64,
}

impl EdgeVelocity {
    pub fn new(edge: usize, axial: Expr, transverse: [Expr; 2], delta: f64) -> Self {
        let v0 = axial.eval(&expr::vars(0.0, 0.0, 0.0, 0.0, 0.0, 0.0));
        EdgeVelocity {
            edge,
            axial,
            transverse,
            delta,
            const_near_node: v0,
        }
    }

    pub fn constant(edge: usize, v: f64) -> Self {
        Self::new(edge, Expr::constant(v), [Expr::constant(0.0), Expr::constant(0.0)], 0.1)
    }

    pub fn v(&self, x: f64) -> f64 {
        self.axial.eval(&expr::vars(x, 0.0, 0.0, 0.0, 0.0, 0.0))
    }

    /// n-th derivative of the axial profile.
    pub fn dv(&self, x: f64, n: usize) -> f64 {
        self.axial.deriv(&expr::vars(x, 0.0, 0.0, 0.0, 0.0, 0.0), expr::X, n)
    }

    pub fn has_transverse(&self) -> bool {
        !(self.transverse[0].is_zero() && self.transverse[1].is_zero())
    }

    pub fn vbar(&self, x: f64, xi: [f64; 2]) -> [f64; 2] {
        if !self.has_transverse() {
            return [0.0; 2];
        }
        let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        let th = xi[1].atan2(xi[0]);
        let vars = expr::vars(x, xi[0], xi[1], 0.0, th, r);
        [self.transverse[0].eval(&vars), self.transverse[1].eval(&vars)]
    }

    /// `div_xi Vbar` by exact jet differentiation.
    pub fn div_vbar(&self, x: f64, xi: [f64; 2]) -> f64 {
        if !self.has_transverse() {
            return 0.0;
        }
        let r = (xi[0] * xi[0] + xi[1] * xi[1]).sqrt();
        let th = xi[1].atan2(xi[0]);
        let vars = expr::vars(x, xi[0], xi[1], 0.0, th, r);
        self.transverse[0].deriv(&vars, expr::Y, 1) + self.transverse[1].deriv(&vars, expr::Z, 1)
    }

    /// Checks one-signedness, the constant plateau near the node and the
    /// vanishing of `Vbar` there.
    pub fn validate(&self, ell: f64, h: f64) -> Result<()> {
        let sign = if self.edge == 0 { -1.0 } else { 1.0 };
        let n = 400;
        for k in 0..=n {
            let x = ell * k as f64 / n as f64;
            if self.v(x) * sign <= 0.0 {
                return Err(Error::WrongSign { edge: self.edge + 1 });
            }
        }
        for k in 0..=20 {
            let x = self.delta * k as f64 / 20.0;
            if (self.v(x) - self.const_near_node).abs() > 1e-12 * self.const_near_node.abs() {
                return Err(Error::SupportViolation(format!(
                    "axial velocity on edge {} is not constant on [0, {}]",
                    self.edge + 1,
                    self.delta
                )));
            }
            for a in 0..8 {
                let th = a as f64 * std::f64::consts::FRAC_PI_4;
                let p = [0.9 * h * th.cos(), 0.9 * h * th.sin()];
                let vb = self.vbar(x, p);
                if vb[0] != 0.0 || vb[1] != 0.0 {
                    return Err(Error::SupportViolation(format!(
                        "transverse velocity on edge {} does not vanish near the node",
                        self.edge + 1
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Discrete potential of the node field with face velocities.
#[derive(Clone, Debug)]
pub struct NodePotential {
    pub spacing: f64,
    pub half: f64,
    pub v: [f64; 3],
    pub port_radii: [f64; 3],
    /// Cell values keyed by lattice index.
    pub p: HashMap<[i32; 3], f64>,
    pub iterations: usize,
}

impl NodePotential {
    fn n(&self) -> i32 {
        (self.half / self.spacing).round() as i32
    }

    /// Normal velocity `dp/dxi_axis` on the face between node cells
    /// `ijk - e_axis` and `ijk`; `None` unless both are node cells.
    pub fn interior_face_velocity(&self, ijk: [i32; 3], axis: usize) -> Option<f64> {
        let mut lo = ijk;
        lo[axis] -= 1;
        let pb = self.p.get(&ijk)?;
        let pa = self.p.get(&lo)?;
        Some((pb - pa) / self.spacing)
    }

    /// Face-averaged normal velocity on the `+e_axis` (`up = true`) or
    /// `-e_axis` face of node cell `ijk`.
    fn face_mean(&self, ijk: [i32; 3], axis: usize, up: bool) -> f64 {
        let s = self.spacing;
        if up {
            let nb = step(ijk, axis, 1);
            if let Some(u) = self.interior_face_velocity(nb, axis) {
                return u;
            }
            if ijk[axis] == self.n() - 1 {
                let (a, b) = transverse_axes(axis);
                let x0 = ijk[a] as f64 * s;
                let y0 = ijk[b] as f64 * s;
                let frac = disc_rect_area(x0, x0 + s, y0, y0 + s, self.port_radii[axis]) / (s * s);
                return self.v[axis] * frac;
            }
            0.0
        } else {
            self.interior_face_velocity(ijk, axis).unwrap_or(0.0)
        }
    }

    /// Cell-centred velocity `grad p` at a rescaled point of the node.
    pub fn velocity_at(&self, xi: [f64; 3]) -> Option<[f64; 3]> {
        let s = self.spacing;
        let n = self.n();
        let mut ijk = [0i32; 3];
        for a in 0..3 {
            if xi[a].abs() > self.half * (1.0 + 1e-12) {
                return None;
            }
            ijk[a] = ((xi[a] / s).floor() as i32).clamp(-n, n - 1);
        }
        let mut out = [0.0; 3];
        for a in 0..3 {
            out[a] = 0.5 * (self.face_mean(ijk, a, true) + self.face_mean(ijk, a, false));
        }
        Some(out)
    }

    /// Max over node cells of the discrete divergence `sum_faces u A / V`.
    pub fn max_divergence(&self, mesh: &VoxelMesh) -> f64 {
        let mut div = vec![0.0; mesh.cells.len()];
        for f in &mesh.faces {
            let u = self
                .interior_face_velocity(mesh.cells[f.b].ijk, f.axis)
                .unwrap_or(0.0);
            div[f.a] += u * f.area;
            div[f.b] -= u * f.area;
        }
        for bf in &mesh.bfaces {
            if let Patch::Port(i) = bf.patch {
                div[bf.cell] += self.v[i] * bf.area;
            }
        }
        div.iter()
            .zip(&mesh.cells)
            .map(|(d, c)| (d / c.volume).abs())
            .fold(0.0, f64::max)
    }

    /// Net outward flux through the node boundary.
    pub fn boundary_flux(&self, mesh: &VoxelMesh) -> f64 {
        mesh.bfaces
            .iter()
            .map(|bf| match bf.patch {
                Patch::Port(i) => self.v[i] * bf.area,
                _ => 0.0,
            })
            .sum()
    }

    /// Max of a compact 27-point Laplacian of `p` over cells at least
    /// `margin` inside the node, scaled by `1 / spacing^2`.
    pub fn interior_harmonicity(&self, margin: f64) -> f64 {
        let s = self.spacing;
        let mut worst = 0.0f64;
        for (ijk, &p0) in &self.p {
            let inside = (0..3).all(|a| ((ijk[a] as f64 + 0.5) * s).abs() <= self.half - margin);
            if !inside {
                continue;
            }
            let mut acc = -128.0 * p0;
            let mut ok = true;
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let k = (dx as i32).abs() + (dy as i32).abs() + (dz as i32).abs();
                        if k == 0 {
                            continue;
                        }
                        let w = match k {
                            1 => 14.0,
                            2 => 3.0,
                            _ => 1.0,
                        };
                        match self.p.get(&[ijk[0] + dx, ijk[1] + dy, ijk[2] + dz]) {
                            Some(v) => acc += w * v,
                            None => ok = false,
                        }
                    }
                }
            }
            if ok {
                worst = worst.max((acc / (30.0 * s * s)).abs());
            }
        }
        worst
    }
}

fn step(mut ijk: [i32; 3], axis: usize, d: i32) -> [i32; 3] {
    ijk[axis] += d;
    ijk
}

/// Solves the Neumann Laplace problem on the node core mesh with flux `v_i`
/// through port `i`, normalized to zero mean.
pub fn solve_node_potential(mesh: &VoxelMesh, v: [f64; 3]) -> Result<NodePotential> {
    let port_area: Vec<f64> = (0..3)
        .map(|i| mesh.patch_area(|p| p == Patch::Port(i)))
        .collect();
    let h2: [f64; 3] = [port_area[0], port_area[1], port_area[2]];
    check_conservation(&[1.0; 3], &[h2[0] * v[0], h2[1] * v[1], h2[2] * v[2]])?;
    let n = mesh.cells.len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(7); n];
    for f in &mesh.faces {
        let g = f.area / f.dist;
        rows[f.a].push((f.a, g));
        rows[f.a].push((f.b, -g));
        rows[f.b].push((f.b, g));
        rows[f.b].push((f.a, -g));
    }
    let mut b = vec![0.0; n];
    for bf in &mesh.bfaces {
        if let Patch::Port(i) = bf.patch {
            b[bf.cell] += v[i] * bf.area;
        }
    }
    for (c, r) in rows.iter_mut().enumerate() {
        if r.is_empty() {
            r.push((c, 1.0));
        }
    }
    let a = Csr::from_rows(rows);
    // cell volume weights
    let w: Vec<f64> = mesh.cells.iter().map(|c| c.volume).collect();
    let mut x = vec![0.0; n];
    let mut iterations = 0;
    if b.iter().any(|e| *e != 0.0) {
        // make the right-hand side exactly compatible
        let tot: f64 = b.iter().sum();
        let nc = n as f64;
        for e in b.iter_mut() {
            *e -= tot / nc;
        }
        iterations = cg(&a, &b, &mut x, Some(&w), 1e-13, 20 * n + 100)?.iterations;
    }
    let p = mesh
        .cells
        .iter()
        .zip(&x)
        .filter(|(c, _)| c.region == Region::Node)
        .map(|(c, v)| (c.ijk, *v))
        .collect();
    Ok(NodePotential {
        spacing: mesh.spacing,
        half: mesh.half,
        v,
        port_radii: mesh.radii,
        p,
        iterations,
    })
}

/// Structured velocity field of the junction.
#[derive(Clone, Debug)]
pub struct VelocityField {
    pub edges: [EdgeVelocity; 3],
    pub node: Option<NodePotential>,
}

impl VelocityField {
    pub fn node_constants(&self) -> [f64; 3] {
        [
            self.edges[0].const_near_node,
            self.edges[1].const_near_node,
            self.edges[2].const_near_node,
        ]
    }
}

/// Velocity at a physical point of the named part (0 = node, i = cylinder i).
pub fn eval_velocity(spec: &NetworkSpec, field: &VelocityField, region: usize, x: [f64; 3]) -> Result<[f64; 3]> {
    let actual = spec.region_of(x).map_err(|_| Error::OutOfRegion { region })?;
    if actual != region {
        return Err(Error::OutOfRegion { region });
    }
    if region == 0 {
        let nc = field.node_constants();
        if nc.iter().all(|v| *v == 0.0) {
            return Ok([0.0; 3]);
        }
        let pot = field
            .node
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("node potential not solved".into()))?;
        let xi = x.map(|c| c / spec.eps);
        return pot.velocity_at(xi).ok_or(Error::OutOfRegion { region });
    }
    let i = region - 1;
    let ev = &field.edges[i];
    let (a, b) = transverse_axes(i);
    let mut out = [0.0; 3];
    out[i] = ev.v(x[i]);
    let vb = ev.vbar(x[i], [x[a] / spec.eps, x[b] / spec.eps]);
    out[a] = spec.eps * vb[0];
    out[b] = spec.eps * vb[1];
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_node_core;

    #[test]
    fn conservation_examples() {
        assert!(check_conservation(&[1.0; 3], &[-2.0, 1.0, 1.0]).is_ok());
        assert!(check_conservation(&[1.0, 2.0, 1.0], &[-5.0, 1.0, 1.0]).is_ok());
        assert_eq!(
            check_conservation(&[1.0; 3], &[-1.0, 1.0, 1.0]),
            Err(Error::ConservationViolated { defect: 1.0 })
        );
    }

    #[test]
    fn zero_flux_gives_zero_potential() {
        let spec = NetworkSpec::default();
        let mesh = build_node_core(&spec, 0.05).unwrap();
        let pot = solve_node_potential(&mesh, [0.0; 3]).unwrap();
        assert!(pot.p.values().all(|v| *v == 0.0));
    }

    #[test]
    fn node_flux_balance_and_divergence() {
        let spec = NetworkSpec::default();
        let mesh = build_node_core(&spec, 0.05).unwrap();
        let pot = solve_node_potential(&mesh, [-2.0, 1.0, 1.0]).unwrap();
        assert!(pot.boundary_flux(&mesh).abs() < 1e-8);
        assert!(pot.max_divergence(&mesh) < 1e-8, "{}", pot.max_divergence(&mesh));
        let mean: f64 = mesh.cells.iter().map(|c| pot.p[&c.ijk] * c.volume).sum();
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn harmonicity_improves_with_refinement() {
        let spec = NetworkSpec::default();
        let r = |s: f64| {
            let mesh = build_node_core(&spec, s).unwrap();
            solve_node_potential(&mesh, [-2.0, 1.0, 1.0])
                .unwrap()
                .interior_harmonicity(0.1)
        };
        let (a, b) = (r(0.05), r(0.025));
        assert!(a / b >= 2.0, "{a} {b}");
    }

    #[test]
    fn cylinder_velocity_structure() {
        let spec = NetworkSpec::default();
        let field = VelocityField {
            edges: [
                EdgeVelocity::constant(0, -2.0),
                EdgeVelocity::new(
                    1,
                    Expr::constant(1.0),
                    [Expr::parse("-y*step((x-0.3)/0.2)").unwrap(), Expr::parse("0").unwrap()],
                    0.1,
                ),
                EdgeVelocity::constant(2, 1.0),
            ],
            node: None,
        };
        let v = eval_velocity(&spec, &field, 1, [0.05, 0.0, 0.001]).unwrap();
        assert_eq!(v, [-2.0, 0.0, 0.0]);
        assert!(matches!(
            eval_velocity(&spec, &field, 2, [0.05, 0.0, 0.001]),
            Err(Error::OutOfRegion { region: 2 })
        ));
        // finite-difference divergence against v' + div Vbar
        let x = [0.001, 0.6, 0.005];
        let hstep = 1e-5;
        let mut div = 0.0;
        for a in 0..3 {
            let mut p = x;
            let mut m = x;
            p[a] += hstep;
            m[a] -= hstep;
            let vp = eval_velocity(&spec, &field, 2, p).unwrap();
            let vm = eval_velocity(&spec, &field, 2, m).unwrap();
            div += (vp[a] - vm[a]) / (2.0 * hstep);
        }
        let xi = [x[0] / spec.eps, x[2] / spec.eps];
        let expect = field.edges[1].dv(0.6, 1) + field.edges[1].div_vbar(0.6, xi);
        assert!((div - expect).abs() < 1e-6, "{div} {expect}");
        let node_field = VelocityField { node: None, ..field.clone() };
        assert!(eval_velocity(&spec, &node_field, 0, [0.0; 3]).is_err());
    }

    #[test]
    fn sign_and_plateau_validation() {
        let bad = EdgeVelocity::new(1, Expr::parse("x - 0.5").unwrap(), [Expr::constant(0.0), Expr::constant(0.0)], 0.1);
        assert_eq!(bad.validate(1.0, 0.2), Err(Error::WrongSign { edge: 2 }));
        let ok = EdgeVelocity::new(
            1,
            Expr::parse("1 + step((x - 0.2)/0.3)").unwrap(),
            [Expr::constant(0.0), Expr::constant(0.0)],
            0.15,
        );
        assert!(ok.validate(1.0, 0.2).is_ok());
    }
}
