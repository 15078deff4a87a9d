//! Thin three-arm junction, its limit graph, the rescaled node domain and
//! their cut-cell voxel discretizations.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::jet::{smooth_step, Jet};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeShape {
    /// Axis-aligned cube `[-ell0, ell0]^3` with ports on the three positive faces.
    Cube,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub ell0: f64,
    pub ell: [f64; 3],
    pub h: [f64; 3],
    pub eps: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub t_final: f64,
    pub node_shape: NodeShape,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        let alpha = 0.5;
        NetworkSpec {
            ell0: 0.3,
            ell: [1.0; 3],
            h: [0.2; 3],
            eps: 0.1,
            alpha,
            gamma: default_gamma(alpha),
            t_final: 1.0,
            node_shape: NodeShape::Cube,
        }
    }
}

/// Open window `(lo, 1)` of admissible matching exponents.
pub fn gamma_window(alpha: f64) -> (f64, f64) {
    let fl = alpha.floor();
    let lo = (2.0f64 / 3.0).max(1.0 - (alpha - fl) / (1.0 - fl));
    (lo, 1.0)
}

pub fn default_gamma(alpha: f64) -> f64 {
    let (lo, hi) = gamma_window(alpha);
    0.5 * (lo + hi)
}

impl NetworkSpec {
    pub fn floor_alpha(&self) -> i64 {
        self.alpha.floor() as i64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.ell0 > 0.0 && self.ell0 < 1.0 / 3.0) {
            return bad(format!("ell0 = {} must lie in (0, 1/3)", self.ell0));
        }
        for i in 0..3 {
            if !(self.ell[i] >= 1.0) {
                return bad(format!("ell[{}] = {} must be >= 1", i + 1, self.ell[i]));
            }
            if !(self.h[i] > 0.0) {
                return bad(format!("h[{}] = {} must be positive", i + 1, self.h[i]));
            }
            if self.h[i] >= self.ell0 {
                return Err(Error::GeometryOverlap { edge: i + 1 });
            }
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad(format!("eps = {} must lie in (0, 1)", self.eps));
        }
        if !(self.t_final > 0.0) {
            return bad(format!("T = {} must be positive", self.t_final));
        }
        if !(self.alpha < 1.0) || self.alpha.fract() == 0.0 || !self.alpha.is_finite() {
            return bad(format!("alpha = {} must be a non-integer below 1", self.alpha));
        }
        let (lo, hi) = gamma_window(self.alpha);
        if !(self.gamma > lo && self.gamma < hi) {
            return Err(Error::GammaOutOfWindow { gamma: self.gamma, lo });
        }
        Ok(())
    }

    /// Part of the physical junction containing `x`: 0 for the node, `i` for
    /// cylinder `i`.
    pub fn region_of(&self, x: [f64; 3]) -> Result<usize> {
        let half = self.eps * self.ell0;
        let tol = 1e-12;
        if x.iter().all(|c| c.abs() <= half + tol) {
            return Ok(0);
        }
        for i in 0..3 {
            let (a, b) = transverse_axes(i);
            let r2 = x[a] * x[a] + x[b] * x[b];
            let r = self.eps * self.h[i];
            if x[i] > half && x[i] <= self.ell[i] + tol && r2 <= r * r * (1.0 + 1e-12) {
                return Ok(i + 1);
            }
        }
        Err(Error::OutOfDomain)
    }

    /// Lebesgue measure of the junction.
    pub fn volume(&self) -> f64 {
        let half = self.eps * self.ell0;
        let mut v = (2.0 * half).powi(3);
        for i in 0..3 {
            let r = self.eps * self.h[i];
            v += std::f64::consts::PI * r * r * (self.ell[i] - half);
        }
        v
    }
}

/// Transverse coordinate axes of cylinder `i` (0-based), in increasing order.
pub fn transverse_axes(i: usize) -> (usize, usize) {
    match i {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

/// `chi_ell0` evaluated on a jet in `s`.
pub fn chi_ell0_jet(s: Jet, ell0: f64) -> Jet {
    smooth_step((s - Jet::constant(2.0 * ell0)) * Jet::constant(1.0 / ell0))
}

/// Smooth cut-off: 0 for `s <= 2 ell0`, 1 for `s >= 3 ell0`.
pub fn cutoff_chi_ell0(s: f64, ell0: f64) -> f64 {
    chi_ell0_jet(Jet::constant(s), ell0).value()
}

pub fn chi_delta_jet(x: Jet, ell: f64, delta: f64) -> Jet {
    smooth_step((x - Jet::constant(ell - 2.0 * delta)) * Jet::constant(1.0 / delta))
}

/// Smooth cut-off near the base of an edge: 1 for `x >= ell - delta`, 0 for
/// `x <= ell - 2 delta`.
pub fn cutoff_chi_delta(x: f64, ell: f64, delta: f64) -> f64 {
    chi_delta_jet(Jet::constant(x), ell, delta).value()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Node,
    Cyl(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Patch {
    /// Lateral surface of cylinder `i` (0-based).
    Lateral(usize),
    NodeSurface,
    /// Dirichlet base of cylinder `i`.
    Base(usize),
    /// Truncation cap of stub `i`.
    Cap(usize),
    /// Port disk of the node core when meshed alone.
    Port(usize),
}

#[derive(Clone, Debug)]
pub struct Cell {
    pub ijk: [i32; 3],
    pub center: [f64; 3],
    pub volume: f64,
    pub region: Region,
}

/// Interior face between cells `a` and `b`, normal `+e_axis` pointing from a to b.
#[derive(Clone, Debug)]
pub struct Face {
    pub a: usize,
    pub b: usize,
    pub axis: usize,
    pub area: f64,
    pub dist: f64,
    pub center: [f64; 3],
}

#[derive(Clone, Debug)]
pub struct BoundaryFace {
    pub cell: usize,
    pub normal: [f64; 3],
    pub area: f64,
    pub dist: f64,
    pub center: [f64; 3],
    pub patch: Patch,
}

#[derive(Clone, Debug)]
pub struct VoxelMesh {
    pub spacing: f64,
    pub half: f64,
    pub radii: [f64; 3],
    pub ends: [f64; 3],
    pub cells: Vec<Cell>,
    pub faces: Vec<Face>,
    pub bfaces: Vec<BoundaryFace>,
    lookup: HashMap<[i32; 3], usize>,
}

/// Exact area of the disc `x^2 + y^2 < r^2` inside `[x0,x1] x [y0,y1]`.
pub fn disc_rect_area(x0: f64, x1: f64, y0: f64, y1: f64, r: f64) -> f64 {
    let a = x0.max(-r);
    let b = x1.min(r);
    if b <= a || y1 <= y0 {
        return 0.0;
    }
    let c = |x: f64| ((r - x) * (r + x)).max(0.0).sqrt();
    let prim = |x: f64| {
        let cx = c(x);
        0.5 * (x * cx + r * r * x.atan2(cx))
    };
    let mut bp = vec![a, b];
    for y in [y0, y1] {
        if y.abs() < r {
            let xx = c(y);
            bp.push(xx);
            bp.push(-xx);
        }
    }
    bp.retain(|&x| x >= a && x <= b);
    bp.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mut area = 0.0;
    for w in bp.windows(2) {
        let (p, q) = (w[0], w[1]);
        if q <= p {
            continue;
        }
        let m = 0.5 * (p + q);
        let cm = c(m);
        // top = ta * c + tb, bottom = ba * c + bb
        let (ta, tb) = if cm < y1 { (1.0, 0.0) } else { (0.0, y1) };
        let (ba, bb) = if -cm > y0 { (-1.0, 0.0) } else { (0.0, y0) };
        let lm = ta * cm + tb - (ba * cm + bb);
        if lm <= 0.0 {
            continue;
        }
        area += (ta - ba) * (prim(q) - prim(p)) + (tb - bb) * (q - p);
    }
    area
}

/// Length of the circle of radius `r` inside `[x0,x1] x [y0,y1]` together with
/// the angle of the arc midpoint (angle of the longest piece).
pub fn circle_rect_arc(x0: f64, x1: f64, y0: f64, y1: f64, r: f64) -> (f64, f64) {
    use std::f64::consts::PI;
    let mut th = vec![-PI, PI];
    for x in [x0, x1] {
        if x.abs() < r {
            let a = ((r - x) * (r + x)).sqrt().atan2(x);
            th.push(a);
            th.push(-a);
        }
    }
    for y in [y0, y1] {
        if y.abs() < r {
            let a = y.atan2(((r - y) * (r + y)).sqrt());
            th.push(a);
            th.push(if a >= 0.0 { PI - a } else { -PI - a });
        }
    }
    th.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let mut len = 0.0;
    let mut best = (0.0, 0.0);
    for w in th.windows(2) {
        let (p, q) = (w[0], w[1]);
        if q <= p {
            continue;
        }
        let m = 0.5 * (p + q);
        let (px, py) = (r * m.cos(), r * m.sin());
        if px > x0 && px < x1 && py > y0 && py < y1 {
            len += r * (q - p);
            if q - p > best.0 {
                best = (q - p, m);
            }
        }
    }
    (len, best.1)
}

fn chord(x: f64, y0: f64, y1: f64, r: f64) -> f64 {
    if x.abs() >= r {
        return 0.0;
    }
    let c = ((r - x) * (r + x)).sqrt();
    (y1.min(c) - y0.max(-c)).max(0.0)
}

struct Builder {
    s: f64,
    cells: Vec<Cell>,
    lookup: HashMap<[i32; 3], usize>,
    // per cell: axial length (along its own axis) for cylinder cells
    len: Vec<f64>,
}

impl Builder {
    fn add(&mut self, ijk: [i32; 3], center: [f64; 3], volume: f64, region: Region, len: f64) {
        self.lookup.insert(ijk, self.cells.len());
        self.cells.push(Cell {
            ijk,
            center,
            volume,
            region,
        });
        self.len.push(len);
    }
}

/// Voxelizes the cube `[-half, half]^3` plus three cylinders of radii `radii`
/// along the positive axes, reaching `ends[i]`; the end faces are tagged with
/// `end_patch(i)`.
pub fn build_mesh(
    half: f64,
    radii: [f64; 3],
    ends: [f64; 3],
    spacing: f64,
    end_patch: fn(usize) -> Patch,
) -> VoxelMesh {
    let n = (half / spacing - 1e-9).ceil().max(1.0) as i32;
    let s = half / n as f64;
    // radii within roundoff of a grid line are snapped onto it
    let mut radii = radii;
    for r in radii.iter_mut() {
        let k = (*r / s).round();
        if (*r / s - k).abs() < 1e-9 {
            *r = k * s;
        }
    }
    let mut b = Builder {
        s,
        cells: Vec::new(),
        lookup: HashMap::new(),
        len: Vec::new(),
    };
    for i in -n..n {
        for j in -n..n {
            for k in -n..n {
                let c = [
                    (i as f64 + 0.5) * s,
                    (j as f64 + 0.5) * s,
                    (k as f64 + 0.5) * s,
                ];
                b.add([i, j, k], c, s * s * s, Region::Node, s);
            }
        }
    }
    let mut cross: [Vec<(i32, i32, f64)>; 3] = Default::default();
    for cyl in 0..3 {
        let r = radii[cyl];
        let m = (r / s - 1e-12).ceil() as i32;
        for a in -m..m {
            for c in -m..m {
                let (x0, x1) = (a as f64 * s, (a + 1) as f64 * s);
                let (y0, y1) = (c as f64 * s, (c + 1) as f64 * s);
                let ar = disc_rect_area(x0, x1, y0, y1, r);
                if ar > 1e-14 * s * s {
                    cross[cyl].push((a, c, ar));
                }
            }
        }
        let total = ends[cyl] - half;
        let nax = (total / s - 1e-9).ceil().max(1.0) as i32;
        let (ta, tb) = transverse_axes(cyl);
        for l in 0..nax {
            let z0 = half + l as f64 * s;
            let z1 = if l == nax - 1 { ends[cyl] } else { z0 + s };
            for &(a, c, ar) in &cross[cyl] {
                let mut ijk = [0i32; 3];
                ijk[cyl] = n + l;
                ijk[ta] = a;
                ijk[tb] = c;
                let mut center = [0.0; 3];
                center[cyl] = 0.5 * (z0 + z1);
                center[ta] = (a as f64 + 0.5) * s;
                center[tb] = (c as f64 + 0.5) * s;
                b.add(ijk, center, ar * (z1 - z0), Region::Cyl(cyl), z1 - z0);
            }
        }
    }
    let mut faces = Vec::new();
    let mut bfaces = Vec::new();
    let cells = &b.cells;
    for (id, cell) in cells.iter().enumerate() {
        for axis in 0..3 {
            for dir in [-1i32, 1] {
                let mut nb = cell.ijk;
                nb[axis] += dir;
                let other = b.lookup.get(&nb).copied();
                let mut fc = cell.center;
                let half_len = match cell.region {
                    Region::Cyl(c) if c == axis => 0.5 * b.len[id],
                    _ => 0.5 * s,
                };
                fc[axis] += dir as f64 * half_len;
                let mut normal = [0.0; 3];
                normal[axis] = dir as f64;
                let (area, open) = face_geometry(&b, cell, axis, dir, &fc, radii, half);
                if let Some(o) = other {
                    if dir == 1 && area > 0.0 {
                        let oh = match cells[o].region {
                            Region::Cyl(c) if c == axis => 0.5 * b.len[o],
                            _ => 0.5 * s,
                        };
                        faces.push(Face {
                            a: id,
                            b: o,
                            axis,
                            area,
                            dist: half_len + oh,
                            center: fc,
                        });
                    }
                    // closed remainder of a shared face (node side of a port)
                    let closed = open - area;
                    if closed > 1e-14 * s * s {
                        bfaces.push(BoundaryFace {
                            cell: id,
                            normal,
                            area: closed,
                            dist: half_len,
                            center: fc,
                            patch: Patch::NodeSurface,
                        });
                    }
                } else if open > 1e-14 * s * s {
                    let patch = match cell.region {
                        Region::Node => Patch::NodeSurface,
                        Region::Cyl(c) if c == axis && dir == 1 => end_patch(c),
                        Region::Cyl(c) if c == axis => {
                            // cylinder face adjacent to the node plane outside the node: impossible
                            Patch::Lateral(c)
                        }
                        Region::Cyl(c) => Patch::Lateral(c),
                    };
                    if let Patch::Lateral(_) = patch {
                        // flat lateral pieces never occur with exact cut cells
                        continue;
                    }
                    bfaces.push(BoundaryFace {
                        cell: id,
                        normal,
                        area: open,
                        dist: half_len,
                        center: fc,
                        patch,
                    });
                }
            }
        }
        if let Region::Cyl(c) = cell.region {
            let (ta, tb) = transverse_axes(c);
            let x0 = cell.center[ta] - 0.5 * s;
            let y0 = cell.center[tb] - 0.5 * s;
            let (arc, th) = circle_rect_arc(x0, x0 + s, y0, y0 + s, radii[c]);
            if arc > 1e-14 * s {
                let mut normal = [0.0; 3];
                normal[ta] = th.cos();
                normal[tb] = th.sin();
                let mut fc = cell.center;
                fc[ta] = radii[c] * th.cos();
                fc[tb] = radii[c] * th.sin();
                let d = (fc[ta] - cell.center[ta]) * normal[ta] + (fc[tb] - cell.center[tb]) * normal[tb];
                bfaces.push(BoundaryFace {
                    cell: id,
                    normal,
                    area: arc * b.len[id],
                    dist: d.abs().max(0.05 * s),
                    center: fc,
                    patch: Patch::Lateral(c),
                });
            }
        }
    }
    VoxelMesh {
        spacing: s,
        half,
        radii,
        ends,
        cells: b.cells,
        faces,
        bfaces,
        lookup: b.lookup,
    }
}

/// Area of the open part of a cell face (`open`) and the part shared with the
/// neighbour (`area`).
fn face_geometry(
    b: &Builder,
    cell: &Cell,
    axis: usize,
    dir: i32,
    fc: &[f64; 3],
    radii: [f64; 3],
    half: f64,
) -> (f64, f64) {
    let s = b.s;
    match cell.region {
        Region::Node => {
            let full = s * s;
            // node face on a port plane
            if dir == 1 && (fc[axis] - half).abs() < 1e-9 * s {
                let (ta, tb) = transverse_axes(axis);
                let x0 = fc[ta] - 0.5 * s;
                let y0 = fc[tb] - 0.5 * s;
                let ar = disc_rect_area(x0, x0 + s, y0, y0 + s, radii[axis]);
                (ar, full)
            } else {
                let mut nb = cell.ijk;
                nb[axis] += dir;
                if b.lookup.contains_key(&nb) {
                    (full, full)
                } else {
                    (0.0, full)
                }
            }
        }
        Region::Cyl(c) => {
            let (ta, tb) = transverse_axes(c);
            let len = {
                let id = b.lookup[&cell.ijk];
                b.len[id]
            };
            if axis == c {
                let x0 = cell.center[ta] - 0.5 * s;
                let y0 = cell.center[tb] - 0.5 * s;
                let ar = disc_rect_area(x0, x0 + s, y0, y0 + s, radii[c]);
                (ar, ar)
            } else {
                // transverse face: chord of the disc across the face
                let (pos, other) = if axis == ta { (fc[ta], tb) } else { (fc[tb], ta) };
                let o0 = cell.center[other] - 0.5 * s;
                let ch = chord(pos, o0, o0 + s, radii[c]) * len;
                let mut nb = cell.ijk;
                nb[axis] += dir;
                if b.lookup.contains_key(&nb) {
                    (ch, ch)
                } else {
                    (0.0, ch)
                }
            }
        }
    }
}

impl VoxelMesh {
    pub fn cell_at(&self, x: [f64; 3]) -> Option<usize> {
        let s = self.spacing;
        let mut ijk = [0i32; 3];
        for a in 0..3 {
            ijk[a] = (x[a] / s).floor() as i32;
        }
        if let Some(&c) = self.lookup.get(&ijk) {
            return Some(c);
        }
        // short last layer of a cylinder
        for a in 0..3 {
            if (x[a] - self.ends[a]).abs() < 1e-9 && x[a] > self.half {
                let mut k = ijk;
                k[a] -= 1;
                if let Some(&c) = self.lookup.get(&k) {
                    return Some(c);
                }
            }
        }
        None
    }

    pub fn index_of(&self, ijk: [i32; 3]) -> Option<usize> {
        self.lookup.get(&ijk).copied()
    }

    pub fn total_volume(&self) -> f64 {
        self.cells.iter().map(|c| c.volume).sum()
    }

    pub fn patch_area(&self, pred: impl Fn(Patch) -> bool) -> f64 {
        self.bfaces.iter().filter(|f| pred(f.patch)).map(|f| f.area).sum()
    }

    /// Indices of cells of one region.
    pub fn region_cells(&self, r: Region) -> Vec<usize> {
        (0..self.cells.len()).filter(|&c| self.cells[c].region == r).collect()
    }

    /// Plain-text dump: one line per cell `i j k region volume`.
    pub fn ascii_dump(&self, values: Option<&[f64]>) -> String {
        let mut out = String::from("# i j k region volume value\n");
        for (c, cell) in self.cells.iter().enumerate() {
            let r = match cell.region {
                Region::Node => 0,
                Region::Cyl(i) => i + 1,
            };
            let v = values.map(|v| v[c]).unwrap_or(0.0);
            let _ = writeln!(
                out,
                "{} {} {} {} {:.6e} {:.9e}",
                cell.ijk[0], cell.ijk[1], cell.ijk[2], r, cell.volume, v
            );
        }
        out
    }
}

/// Voxel mesh of the physical junction.
pub fn build_thin_junction(spec: &NetworkSpec, spacing: f64) -> Result<VoxelMesh> {
    let hmin = spec.h.iter().cloned().fold(f64::INFINITY, f64::min);
    let limit = spec.eps * hmin / 4.0;
    if spacing > limit * (1.0 + 1e-12) {
        return Err(Error::SpacingTooCoarse { spacing, limit });
    }
    check_ports(spec)?;
    let radii = spec.h.map(|h| spec.eps * h);
    Ok(build_mesh(spec.eps * spec.ell0, radii, spec.ell, spacing, Patch::Base))
}

/// Voxel mesh of the rescaled node domain with stubs truncated at `trunc_len`.
pub fn build_rescaled_node(spec: &NetworkSpec, trunc_len: f64, spacing: f64) -> Result<VoxelMesh> {
    let min = 5.0 * spec.ell0;
    if trunc_len < min {
        return Err(Error::TruncationTooShort { trunc_len, min });
    }
    check_ports(spec)?;
    Ok(build_mesh(spec.ell0, spec.h, [trunc_len; 3], spacing, Patch::Cap))
}

/// Voxel mesh of the node cube alone (ports are boundary faces).
pub fn build_node_core(spec: &NetworkSpec, spacing: f64) -> Result<VoxelMesh> {
    check_ports(spec)?;
    let mut m = build_mesh(spec.ell0, spec.h, [spec.ell0 + spacing; 3], spacing, Patch::Cap);
    let keep: Vec<bool> = m.cells.iter().map(|c| c.region == Region::Node).collect();
    let mut faces = Vec::new();
    let mut bfaces = Vec::new();
    for f in m.faces.drain(..) {
        if keep[f.a] && keep[f.b] {
            faces.push(f);
        } else if keep[f.a] {
            let mut normal = [0.0; 3];
            normal[f.axis] = 1.0;
            bfaces.push(BoundaryFace {
                cell: f.a,
                normal,
                area: f.area,
                dist: 0.5 * m.spacing,
                center: f.center,
                patch: Patch::Port(f.axis),
            });
        }
    }
    for f in m.bfaces.drain(..) {
        if keep[f.cell] {
            bfaces.push(f);
        }
    }
    let n = keep.iter().filter(|k| **k).count();
    m.cells.truncate(n);
    m.lookup.retain(|_, v| *v < n);
    m.faces = faces;
    m.bfaces = bfaces;
    Ok(m)
}

fn check_ports(spec: &NetworkSpec) -> Result<()> {
    match spec.node_shape {
        NodeShape::Cube => {
            for i in 0..3 {
                if spec.h[i] >= spec.ell0 {
                    return Err(Error::GeometryOverlap { edge: i + 1 });
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn disc_area_pieces_sum_to_disc() {
        let r = 0.7;
        let s = 0.1;
        let mut tot = 0.0;
        for a in -8..8 {
            for b in -8..8 {
                tot += disc_rect_area(a as f64 * s, (a + 1) as f64 * s, b as f64 * s, (b + 1) as f64 * s, r);
            }
        }
        assert!((tot - PI * r * r).abs() < 1e-13);
        assert!((disc_rect_area(0.0, 2.0, 0.0, 2.0, 1.0) - PI / 4.0).abs() < 1e-14);
        assert!((disc_rect_area(-0.5, 0.5, -0.1, 0.1, 1.0) - 0.2).abs() < 1e-14);
    }

    #[test]
    fn arc_pieces_sum_to_circumference() {
        let r = 0.63;
        let s = 0.1;
        let mut tot = 0.0;
        for a in -8..8 {
            for b in -8..8 {
                tot += circle_rect_arc(a as f64 * s, (a + 1) as f64 * s, b as f64 * s, (b + 1) as f64 * s, r).0;
            }
        }
        assert!((tot - 2.0 * PI * r).abs() < 1e-12);
    }

    #[test]
    fn junction_volume_matches_monte_carlo() {
        let spec = NetworkSpec::default();
        let m = build_thin_junction(&spec, 0.005).unwrap();
        // independent Monte-Carlo estimate of the node and cylinder volumes
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let half = spec.eps * spec.ell0;
        let box_v = (2.0 * half).powi(3);
        let mut hits = 0;
        let n = 20000;
        for _ in 0..n {
            let p = [
                rng.gen_range(-half..half),
                rng.gen_range(-half..half),
                rng.gen_range(-half..half),
            ];
            if spec.region_of(p) == Ok(0) {
                hits += 1;
            }
        }
        let node_v = box_v * hits as f64 / n as f64;
        let r = spec.eps * 0.2;
        let analytic = 3.0 * PI * r * r * (1.0 - half) + node_v;
        let ratio = m.total_volume() / analytic;
        assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
        let lat = m.patch_area(|p| matches!(p, Patch::Lateral(_)));
        assert!((lat - 3.0 * 2.0 * PI * r * (1.0 - half)).abs() < 1e-10, "{lat}");
    }

    #[test]
    fn spacing_and_overlap_errors() {
        let spec = NetworkSpec::default();
        assert!(matches!(build_thin_junction(&spec, 0.006), Err(Error::SpacingTooCoarse { .. })));
        let mut bad = spec.clone();
        bad.h[0] = 0.3;
        assert_eq!(build_thin_junction(&bad, 0.001).unwrap_err(), Error::GeometryOverlap { edge: 1 });
        assert!(matches!(build_rescaled_node(&spec, 0.6, 0.025), Err(Error::TruncationTooShort { .. })));
    }

    #[test]
    fn rescaled_node_stub_volumes() {
        let spec = NetworkSpec::default();
        let m = build_rescaled_node(&spec, 3.0, 0.025).unwrap();
        for i in 0..3 {
            let v: f64 = m.region_cells(Region::Cyl(i)).iter().map(|&c| m.cells[c].volume).sum();
            let exact = PI * 0.04 * (3.0 - 0.3);
            assert!((v - exact).abs() < 1e-10 * exact, "{v} {exact}");
            let cap = m.patch_area(|p| p == Patch::Cap(i));
            assert!((cap - PI * 0.04).abs() < 1e-12);
        }
        let g0 = m.patch_area(|p| p == Patch::NodeSurface);
        let exact = 6.0 * 0.36 - 3.0 * PI * 0.04;
        assert!((g0 - exact).abs() < 1e-10);
        let m2 = build_rescaled_node(&spec, 3.0, 0.0125).unwrap();
        let g02 = m2.patch_area(|p| p == Patch::NodeSurface);
        assert!((g02 - g0).abs() / g0 < 0.03);
    }

    #[test]
    fn every_cell_face_is_closed() {
        // sum of signed face areas around each cell is the discrete Gauss identity
        let spec = NetworkSpec::default();
        let m = build_rescaled_node(&spec, 1.5, 0.05).unwrap();
        let mut acc = vec![[0.0f64; 3]; m.cells.len()];
        for f in &m.faces {
            acc[f.a][f.axis] += f.area;
            acc[f.b][f.axis] -= f.area;
        }
        for f in &m.bfaces {
            for a in 0..3 {
                acc[f.cell][a] += f.area * f.normal[a];
            }
        }
        for (c, v) in acc.iter().enumerate() {
            let lateral = m.cells[c].region != Region::Node;
            let tol = if lateral { 0.05 * 0.05 * 0.3 } else { 1e-12 };
            assert!(v.iter().all(|x| x.abs() < tol), "cell {c}: {v:?}");
        }
    }

    #[test]
    fn cutoff_plateaus() {
        let l0 = 0.3;
        assert_eq!(cutoff_chi_ell0(2.0 * l0, l0), 0.0);
        assert_eq!(cutoff_chi_ell0(3.0 * l0, l0), 1.0);
        let (ell, d) = (1.0, 0.1);
        let mid = cutoff_chi_delta(ell - 1.5 * d, ell, d);
        assert!(mid > 0.0 && mid < 1.0);
        assert_eq!(cutoff_chi_delta(ell - 2.0 * d, ell, d), 0.0);
        assert_eq!(cutoff_chi_delta(ell, ell, d), 1.0);
        for s in [2.0 * l0, 3.0 * l0] {
            let j = chi_ell0_jet(Jet::variable(s), l0);
            assert!(j.deriv(1).abs() < 1e-15 && j.deriv(2).abs() < 1e-15);
        }
        let mut prev = 0.0;
        for k in 0..=100 {
            let v = cutoff_chi_ell0(2.0 * l0 + l0 * k as f64 / 100.0, l0);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn validation_rules() {
        let mut s = NetworkSpec::default();
        assert!(s.validate().is_ok());
        s.gamma = 0.4;
        assert!(matches!(s.validate(), Err(Error::GammaOutOfWindow { .. })));
        s.gamma = 0.85;
        s.alpha = 1.0;
        assert!(s.validate().is_err());
        let (lo, _) = gamma_window(-0.5);
        // floor = -1: 1 - 0.5 / 2 = 0.75
        assert!((lo - 0.75).abs() < 1e-15);
    }
}
