//! Direct finite-volume solver for the full problem on the voxelized
//! junction: implicit time stepping, central fluxes, flux boundary
//! conditions on the lateral and node surfaces and Dirichlet bases.

use std::sync::Arc;

use crate::config::{ReferenceOptions, TimeScheme};
use crate::error::{Error, Result};
use crate::expansion::ProblemData;
use crate::expr::{self, Expr};
use crate::geometry::{build_node_core, build_thin_junction, transverse_axes, NetworkSpec, Patch, Region, VoxelMesh};
use crate::krylov::{bicgstab, Csr};
use crate::velocity::{check_conservation, solve_node_potential, EdgeVelocity};

/// Mass balance of one time step: `rate = lateral + dirichlet` up to `defect`
/// (relative to the largest of the three terms).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassRecord {
    pub t: f64,
    pub mass: f64,
    pub rate: f64,
    pub lateral: f64,
    pub dirichlet: f64,
    pub defect: f64,
}

#[derive(Clone, Debug)]
pub struct ReferenceSolution {
    pub eps: f64,
    pub mesh: Arc<VoxelMesh>,
    pub dt: f64,
    /// Stored snapshot times, starting with `t = 0`.
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub ledger: Vec<MassRecord>,
    /// Relative deviation of the voxel surface area from the analytic one.
    pub surface_area_defect: f64,
    /// Largest local temporal error indicator relative to `max |u|`.
    pub temporal_error: f64,
    pub accuracy_warning: bool,
    pub min_value: f64,
    pub iterations: usize,
}

impl ReferenceSolution {
    pub fn max_ledger_defect(&self) -> f64 {
        self.ledger.iter().map(|r| r.defect).fold(0.0, f64::max)
    }

    /// Snapshots as CSV rows `t,x,y,z,u`.
    pub fn snapshot_csv(&self, k: usize) -> String {
        let mut s = String::from("t,x,y,z,u\n");
        for (c, cell) in self.mesh.cells.iter().enumerate() {
            let p = cell.center;
            s.push_str(&format!("{},{},{},{},{:.12e}\n", self.times[k], p[0], p[1], p[2], self.values[k][c]));
        }
        s
    }

    /// Cell value at `x` at snapshot `k`.
    pub fn probe(&self, x: [f64; 3], k: usize) -> Option<f64> {
        self.mesh.cell_at(x).map(|c| self.values[k][c])
    }
}

/// Voxel mesh of the junction with `cells_per_radius` cells across the
/// thinnest cylinder radius.
pub fn reference_mesh(spec: &NetworkSpec, cells_per_radius: f64) -> Result<VoxelMesh> {
    let hmin = spec.h.iter().cloned().fold(f64::INFINITY, f64::min);
    build_thin_junction(spec, spec.eps * hmin / cells_per_radius)
}

fn analytic_surface(spec: &NetworkSpec) -> f64 {
    let pi = std::f64::consts::PI;
    let half = spec.eps * spec.ell0;
    let mut area = 6.0 * (2.0 * half).powi(2);
    for i in 0..3 {
        let r = spec.eps * spec.h[i];
        area += 2.0 * pi * r * (spec.ell[i] - half) - pi * r * r;
    }
    area
}

struct Boundary {
    cell: usize,
    area: f64,
    kind: BKind,
}

enum BKind {
    /// Prescribed outward flux `eps^alpha phi`; `phi` is evaluated at the
    /// given variables with `t` filled in per step.
    Flux { phi: usize, vars: [f64; 6] },
    /// Dirichlet base of edge `i`: conductance `eps / dist` and outward
    /// normal velocity.
    Base { edge: usize, g: f64, vn: f64 },
}

/// Solves the full problem on `mesh` up to `spec.t_final`, keeping
/// `snapshots` equally spaced states (plus the initial one).
pub fn solve_reference(
    spec: &NetworkSpec,
    vel: &[EdgeVelocity; 3],
    data: &ProblemData,
    mesh: Arc<VoxelMesh>,
    opts: &ReferenceOptions,
    snapshots: usize,
) -> Result<ReferenceSolution> {
    let eps = spec.eps;
    let vconst = [vel[0].const_near_node, vel[1].const_near_node, vel[2].const_near_node];
    check_conservation(&spec.h, &vconst)?;
    let n = mesh.cells.len();
    let node_cells = mesh.cells.iter().any(|c| c.region == Region::Node);
    let potential = if node_cells && vconst.iter().any(|v| *v != 0.0) {
        let core = build_node_core(spec, mesh.spacing / eps)?;
        Some(solve_node_potential(&core, vconst)?)
    } else {
        None
    };
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(7); n];
    for f in &mesh.faces {
        let (ca, cb) = (&mesh.cells[f.a], &mesh.cells[f.b]);
        let w = match (ca.region, cb.region) {
            (Region::Node, Region::Node) => match &potential {
                Some(p) => p
                    .interior_face_velocity(cb.ijk, f.axis)
                    .ok_or_else(|| Error::GridMismatch("node face without potential value".into()))?,
                None => 0.0,
            },
            (Region::Cyl(i), _) | (_, Region::Cyl(i)) => {
                if f.axis == i {
                    vel[i].v(f.center[i])
                } else {
                    let (a, b) = transverse_axes(i);
                    let vb = vel[i].vbar(f.center[i], [f.center[a] / eps, f.center[b] / eps]);
                    eps * if f.axis == a { vb[0] } else { vb[1] }
                }
            }
        };
        let g = eps * f.area / f.dist;
        let c = 0.5 * w * f.area;
        rows[f.a].push((f.a, g + c));
        rows[f.a].push((f.b, -g + c));
        rows[f.b].push((f.b, g - c));
        rows[f.b].push((f.a, -g - c));
    }
    let mut phis: Vec<&Expr> = data.phi.iter().collect();
    phis.push(&data.phi0);
    let mut bnd = Vec::new();
    for bf in &mesh.bfaces {
        let kind = match bf.patch {
            Patch::Lateral(i) => {
                if data.phi[i].is_zero() {
                    continue;
                }
                let (a, b) = transverse_axes(i);
                let th = bf.center[b].atan2(bf.center[a]);
                let h = spec.h[i];
                BKind::Flux {
                    phi: i,
                    vars: expr::vars(bf.center[i], h * th.cos(), h * th.sin(), 0.0, th, h),
                }
            }
            Patch::NodeSurface => {
                if data.phi0.is_zero() {
                    continue;
                }
                let xi = bf.center.map(|c| c / eps);
                BKind::Flux {
                    phi: 3,
                    vars: expr::vars(xi[0], xi[1], xi[2], 0.0, 0.0, 0.0),
                }
            }
            Patch::Base(i) => {
                let g = eps / bf.dist;
                let vn = vel[i].v(spec.ell[i]) * bf.normal[i];
                rows[bf.cell].push((bf.cell, g * bf.area));
                BKind::Base { edge: i, g, vn }
            }
            _ => continue,
        };
        bnd.push(Boundary {
            cell: bf.cell,
            area: bf.area,
            kind,
        });
    }
    let vol: Vec<f64> = mesh.cells.iter().map(|c| c.volume).collect();
    let steps = opts.steps;
    let dt = spec.t_final / steps as f64;
    let with_diag = |rows: &Vec<Vec<(usize, f64)>>, c0: f64| {
        let mut r = rows.clone();
        for (c, row) in r.iter_mut().enumerate() {
            row.push((c, c0 * vol[c] / dt));
        }
        Csr::from_rows(r)
    };
    let a_be = with_diag(&rows, 1.0);
    let a_bdf = match opts.scheme {
        TimeScheme::Bdf2 => Some(with_diag(&rows, 1.5)),
        TimeScheme::BackwardEuler => None,
    };
    let alpha_scale = eps.powf(spec.alpha);
    // boundary forcing: rhs contribution and the two ledger terms at time t
    let forcing = |t: f64, rhs: &mut [f64]| -> (f64, Vec<(usize, f64, f64)>) {
        let mut lateral = 0.0;
        let mut bases = Vec::new();
        for b in &bnd {
            match &b.kind {
                BKind::Flux { phi, vars } => {
                    let mut v = *vars;
                    v[expr::T] = t;
                    let flux = alpha_scale * phis[*phi].eval(&v) * b.area;
                    rhs[b.cell] -= flux;
                    lateral -= flux;
                }
                BKind::Base { edge, g, vn } => {
                    let q = data.q_at(*edge, t);
                    rhs[b.cell] += (g - vn) * b.area * q;
                    bases.push((b.cell, *g * b.area, (vn - g) * b.area * q));
                }
            }
        }
        (lateral, bases)
    };
    let mut u_prev = vec![0.0; n];
    let mut u = vec![0.0; n];
    let every = (steps / snapshots.max(1)).max(1);
    let mut times = vec![0.0];
    let mut values = vec![u.clone()];
    let mut ledger = Vec::with_capacity(steps);
    let mut mass_prev = 0.0;
    let mut mass = 0.0;
    let mut iterations = 0;
    let mut temporal = 0.0f64;
    let mut umax = 0.0f64;
    let mut min_value = 0.0f64;
    let mut rhs = vec![0.0; n];
    for s in 1..=steps {
        let t = s as f64 * dt;
        let bdf = a_bdf.is_some() && s >= 2;
        for c in 0..n {
            rhs[c] = if bdf {
                vol[c] * (4.0 * u[c] - u_prev[c]) / (2.0 * dt)
            } else {
                vol[c] * u[c] / dt
            };
        }
        let (lateral, bases) = forcing(t, &mut rhs);
        let guess: Vec<f64> = if s >= 2 { u.iter().zip(&u_prev).map(|(a, b)| 2.0 * a - b).collect() } else { u.clone() };
        let mut x = guess.clone();
        let a = if bdf { a_bdf.as_ref().unwrap() } else { &a_be };
        let stats = bicgstab(a, &rhs, &mut x, opts.rtol, opts.max_iter).map_err(|e| Error::LinearSolveFailure(format!("step {s}: {e}")))?;
        iterations += stats.iterations;
        if s >= 2 {
            let err = x.iter().zip(&guess).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            temporal = temporal.max(err / 3.0);
        }
        let new_mass: f64 = x.iter().zip(&vol).map(|(a, b)| a * b).sum();
        let rate = if bdf {
            (3.0 * new_mass - 4.0 * mass + mass_prev) / (2.0 * dt)
        } else {
            (new_mass - mass) / dt
        };
        let dirichlet: f64 = -bases.iter().map(|&(c, g, known)| g * x[c] + known).sum::<f64>();
        let scale = rate.abs().max(lateral.abs()).max(dirichlet.abs());
        let defect = if scale > 0.0 { (rate - lateral - dirichlet).abs() / scale } else { 0.0 };
        ledger.push(MassRecord {
            t,
            mass: new_mass,
            rate,
            lateral,
            dirichlet,
            defect,
        });
        mass_prev = mass;
        mass = new_mass;
        u_prev = std::mem::replace(&mut u, x);
        for &v in &u {
            umax = umax.max(v.abs());
            min_value = min_value.min(v);
        }
        if s % every == 0 || s == steps {
            times.push(t);
            values.push(u.clone());
        }
    }
    let temporal_error = if umax > 0.0 { temporal / umax } else { 0.0 };
    let surface: f64 = mesh
        .bfaces
        .iter()
        .filter(|b| !matches!(b.patch, Patch::Base(_)))
        .map(|b| b.area)
        .sum();
    let analytic = analytic_surface(spec);
    Ok(ReferenceSolution {
        eps,
        mesh,
        dt,
        times,
        values,
        ledger,
        surface_area_defect: (surface - analytic).abs() / analytic,
        temporal_error,
        accuracy_warning: temporal_error > 1e-2,
        min_value,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ReferenceOptions, TimeScheme};

    fn vel() -> [EdgeVelocity; 3] {
        [
            EdgeVelocity::constant(0, -2.0),
            EdgeVelocity::constant(1, 1.0),
            EdgeVelocity::constant(2, 1.0),
        ]
    }

    fn spec() -> NetworkSpec {
        NetworkSpec {
            eps: 0.3,
            ..NetworkSpec::default()
        }
    }

    fn opts(steps: usize) -> ReferenceOptions {
        ReferenceOptions {
            cells_per_radius: 4.0,
            steps,
            scheme: TimeScheme::Bdf2,
            rtol: 1e-12,
            max_iter: 5000,
        }
    }

    fn data() -> ProblemData {
        let e = |s: &str| Expr::parse(s).unwrap();
        ProblemData {
            q: [e("step(t/0.4)"), e("0.5*step(t/0.4)"), e("0")],
            phi: [e("step(t/0.4)*bump((x-0.3)/0.4)*(1+0.5*cos(theta))"), e("0"), e("0")],
            phi0: e("step(t/0.4)*step((-x-0.24)/0.06)"),
        }
    }

    #[test]
    fn zero_data_zero_solution() {
        let s = spec();
        let mesh = Arc::new(reference_mesh(&s, 4.0).unwrap());
        let r = solve_reference(&s, &vel(), &ProblemData::zero(), mesh, &opts(5), 5).unwrap();
        assert!(r.values.iter().all(|v| v.iter().all(|x| *x == 0.0)));
        assert_eq!(r.max_ledger_defect(), 0.0);
    }

    #[test]
    fn mass_ledger_closes() {
        let s = spec();
        let mesh = Arc::new(reference_mesh(&s, 4.0).unwrap());
        let r = solve_reference(&s, &vel(), &data(), mesh, &opts(20), 4).unwrap();
        assert!(r.values.last().unwrap().iter().any(|v| v.abs() > 1e-3));
        assert!(r.max_ledger_defect() < 1e-8, "{}", r.max_ledger_defect());
        assert_eq!(r.times.len(), 5);
    }

    #[test]
    fn linear_in_data() {
        let s = spec();
        let mesh = Arc::new(reference_mesh(&s, 4.0).unwrap());
        let d = data();
        let e = |x: &str| Expr::parse(x).unwrap();
        let mut d1 = ProblemData::zero();
        d1.q = d.q.clone();
        let mut d2 = ProblemData::zero();
        d2.phi = d.phi.clone();
        d2.phi0 = d.phi0.clone();
        d2.q[2] = e("0");
        let a = solve_reference(&s, &vel(), &d, mesh.clone(), &opts(8), 2).unwrap();
        let b = solve_reference(&s, &vel(), &d1, mesh.clone(), &opts(8), 2).unwrap();
        let c = solve_reference(&s, &vel(), &d2, mesh, &opts(8), 2).unwrap();
        let k = a.values.len() - 1;
        let scale = a.values[k].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let worst = (0..a.values[k].len())
            .map(|i| (a.values[k][i] - b.values[k][i] - c.values[k][i]).abs())
            .fold(0.0, f64::max);
        assert!(worst < 1e-8 * scale, "{worst} {scale}");
    }

    #[test]
    fn dirichlet_only_stays_nonnegative() {
        let s = spec();
        let mesh = Arc::new(reference_mesh(&s, 4.0).unwrap());
        let mut d = ProblemData::zero();
        d.q[0] = Expr::parse("step(t/0.4)").unwrap();
        let r = solve_reference(&s, &vel(), &d, mesh, &opts(10), 2).unwrap();
        let m = r.values.last().unwrap().iter().fold(0.0f64, |m, v| m.max(*v));
        assert!(r.min_value > -1e-6 * m, "{}", r.min_value);
        assert!(r.surface_area_defect < 0.1, "{}", r.surface_area_defect);
    }
}
