//! Neumann problems on the disk cross-section and the correctors `u`.
//!
//! The disk solver uses a Fourier expansion in `theta` and Chebyshev
//! collocation in `r` on `[-h, h]` folded by the parity of each mode, so
//! the origin is never a collocation point.

use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::edge::EdgeField;
use crate::error::{Error, Result};
use crate::expr::{self, Expr};
use crate::grid::{fd_derivative, gauss_legendre, Field2, Uniform};
use crate::order::Exponent;
use crate::velocity::EdgeVelocity;

/// Dense LU with partial pivoting.
#[derive(Clone, Debug)]
struct Lu {
    n: usize,
    a: Vec<f64>,
    perm: Vec<usize>,
}

impl Lu {
    fn new(n: usize, mut a: Vec<f64>) -> Self {
        let mut perm: Vec<usize> = (0..n).collect();
        for c in 0..n {
            let p = (c..n)
                .max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs()))
                .unwrap();
            if p != c {
                for k in 0..n {
                    a.swap(p * n + k, c * n + k);
                }
                perm.swap(p, c);
            }
            let piv = a[c * n + c];
            for i in c + 1..n {
                let f = a[i * n + c] / piv;
                a[i * n + c] = f;
                for k in c + 1..n {
                    a[i * n + k] -= f * a[c * n + k];
                }
            }
        }
        Lu { n, a, perm }
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for k in 0..i {
                x[i] -= self.a[i * n + k] * x[k];
            }
        }
        for i in (0..n).rev() {
            for k in i + 1..n {
                x[i] -= self.a[i * n + k] * x[k];
            }
            x[i] /= self.a[i * n + i];
        }
        x
    }
}

/// Modal representation of one disk function: `c_m(r_j)` for
/// `m = 0..modes`, `j = 0..radial`, stored as `[re, im]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiskSlice {
    pub modes: Vec<[f64; 2]>,
}

pub struct DiskSolver {
    pub h: f64,
    /// Chebyshev degree on `[-h, h]` (odd).
    pub n: usize,
    pub n_theta: usize,
    /// Positive collocation radii, `r[0] = h`.
    pub r: Vec<f64>,
    xfull: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
    lus: Vec<Lu>,
    mean_weights: Vec<f64>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for DiskSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiskSolver")
            .field("h", &self.h)
            .field("n", &self.n)
            .field("n_theta", &self.n_theta)
            .finish()
    }
}

impl DiskSolver {
    pub fn new(h: f64, n: usize, n_theta: usize) -> Self {
        assert!(n % 2 == 1 && n >= 3 && n_theta >= 4 && n_theta % 2 == 0);
        let np = n + 1;
        let xfull: Vec<f64> = (0..np).map(|j| h * (PI * j as f64 / n as f64).cos()).collect();
        let c = |j: usize| if j == 0 || j == n { 2.0 } else { 1.0 };
        let mut d1 = vec![0.0; np * np];
        for i in 0..np {
            let mut row = 0.0;
            for j in 0..np {
                if i != j {
                    let s = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                    let v = c(i) / c(j) * s / (xfull[i] - xfull[j]);
                    d1[i * np + j] = v;
                    row += v;
                }
            }
            d1[i * np + i] = -row;
        }
        let mut d2 = vec![0.0; np * np];
        for i in 0..np {
            for j in 0..np {
                d2[i * np + j] = (0..np).map(|k| d1[i * np + k] * d1[k * np + j]).sum();
            }
        }
        let p = np / 2;
        let r: Vec<f64> = xfull[..p].to_vec();
        let modes = n_theta / 2;
        let mut lus = Vec::with_capacity(modes);
        for m in 0..modes {
            let s = if m % 2 == 0 { 1.0 } else { -1.0 };
            let mut a = vec![0.0; p * p];
            for k in 0..p {
                a[k] = if m == 0 {
                    if k == 0 {
                        1.0
                    } else {
                        0.0
                    }
                } else {
                    d1[k] + s * d1[n - k]
                };
            }
            for j in 1..p {
                for k in 0..p {
                    let l = |kk: usize| d2[j * np + kk] + d1[j * np + kk] / r[j];
                    a[j * p + k] = l(k) + s * l(n - k);
                }
                a[j * p + j] -= (m * m) as f64 / (r[j] * r[j]);
            }
            lus.push(Lu::new(p, a));
        }
        let mut solver = DiskSolver {
            h,
            n,
            n_theta,
            r,
            xfull,
            d1,
            d2,
            lus,
            mean_weights: vec![0.0; p],
            fwd: FftPlanner::new().plan_fft_forward(n_theta),
            inv: FftPlanner::new().plan_fft_inverse(n_theta),
        };
        let (gx, gw) = gauss_legendre(n + 1);
        let mut q = vec![0.0; p];
        for (g, wg) in gx.iter().zip(&gw) {
            let rr = 0.5 * h * (g + 1.0);
            let lam = solver.folded_weights(rr, 1.0);
            for k in 0..p {
                q[k] += 0.5 * h * wg * rr * lam[k];
            }
        }
        solver.mean_weights = q;
        solver
    }

    pub fn default_for(h: f64) -> Self {
        Self::new(h, 23, 16)
    }

    pub fn radial(&self) -> usize {
        self.r.len()
    }

    pub fn modes(&self) -> usize {
        self.n_theta / 2
    }

    pub fn slice_len(&self) -> usize {
        self.modes() * self.radial()
    }

    pub fn theta(&self, k: usize) -> f64 {
        2.0 * PI * k as f64 / self.n_theta as f64
    }

    /// Barycentric interpolation weights at `r` folded onto the positive
    /// nodes with parity `s`.
    fn folded_weights(&self, r: f64, s: f64) -> Vec<f64> {
        let np = self.n + 1;
        let p = self.radial();
        let mut lam = vec![0.0; np];
        let mut exact = None;
        let mut total = 0.0;
        for k in 0..np {
            let dx = r - self.xfull[k];
            if dx == 0.0 {
                exact = Some(k);
                break;
            }
            let mut w = if k % 2 == 0 { 1.0 } else { -1.0 };
            if k == 0 || k == self.n {
                w *= 0.5;
            }
            lam[k] = w / dx;
            total += lam[k];
        }
        if let Some(k) = exact {
            lam.iter_mut().for_each(|l| *l = 0.0);
            lam[k] = 1.0;
            total = 1.0;
        }
        let mut out = vec![0.0; p];
        for k in 0..np {
            let l = lam[k] / total;
            if k < p {
                out[k] += l;
            } else {
                out[self.n - k] += s * l;
            }
        }
        out
    }

    fn parity(m: usize) -> f64 {
        if m % 2 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    fn forward(&self, vals: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = vals.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        let scale = 1.0 / self.n_theta as f64;
        buf.iter().take(self.modes()).map(|c| c * scale).collect()
    }

    fn inverse(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let nt = self.n_theta;
        let mut buf = vec![Complex64::new(0.0, 0.0); nt];
        buf[0] = coeffs[0];
        for m in 1..self.modes() {
            buf[m] = coeffs[m];
            buf[nt - m] = coeffs[m].conj();
        }
        self.inv.process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// Polar collocation points `(r_j, theta_k)`, row-major in `j`.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut out = Vec::with_capacity(self.radial() * self.n_theta);
        for &r in &self.r {
            for k in 0..self.n_theta {
                out.push((r, self.theta(k)));
            }
        }
        out
    }

    /// Solves `Lap u = rhs`, `d_r u = flux` on `r = h`, zero mean, from
    /// samples at [`DiskSolver::points`] and at `theta_k` on the circle.
    /// Returns the slice and the compatibility defect
    /// `int rhs - oint flux`.
    pub fn solve_sampled(&self, rhs: &[f64], flux: &[f64]) -> Result<(DiskSlice, f64)> {
        let p = self.radial();
        let nt = self.n_theta;
        let nm = self.modes();
        let fr: Vec<Vec<Complex64>> = (0..p).map(|j| self.forward(&rhs[j * nt..(j + 1) * nt])).collect();
        let g = self.forward(flux);
        let mut modes = vec![[0.0; 2]; nm * p];
        let mut defect = 0.0;
        for m in 0..nm {
            let mut bre = vec![0.0; p];
            let mut bim = vec![0.0; p];
            if m > 0 {
                bre[0] = g[m].re;
                bim[0] = g[m].im;
            }
            for j in 1..p {
                bre[j] = fr[j][m].re;
                bim[j] = fr[j][m].im;
            }
            let ure = self.lus[m].solve(&bre);
            let uim = self.lus[m].solve(&bim);
            for j in 0..p {
                modes[m * p + j] = [ure[j], uim[j]];
            }
            if m == 0 {
                let du: f64 = (0..p).map(|k| (self.d1[k] + self.d1[self.n - k]) * ure[k]).sum();
                defect = 2.0 * PI * self.h * (du - g[0].re);
            }
        }
        let mut slice = DiskSlice { modes };
        let mean = self.mean(&slice);
        for j in 0..p {
            slice.modes[j][0] -= mean;
        }
        Ok((slice, defect))
    }

    /// As [`DiskSolver::solve_sampled`], raising `IncompatibleData` when the
    /// defect exceeds `1e-9` relative to the size of the data.
    pub fn solve_checked(&self, rhs: &[f64], flux: &[f64]) -> Result<DiskSlice> {
        let (slice, defect) = self.solve_sampled(rhs, flux)?;
        let area = PI * self.h * self.h;
        let scale = 1.0
            + area * rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            + 2.0 * PI * self.h * flux.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if defect.abs() > 1e-9 * scale {
            return Err(Error::IncompatibleData { defect: defect.abs() });
        }
        Ok(slice)
    }

    /// Solves with callable data `rhs(r, theta)` and `flux(theta)`.
    pub fn solve(&self, rhs: impl Fn(f64, f64) -> f64, flux: impl Fn(f64) -> f64) -> Result<DiskSlice> {
        let f: Vec<f64> = self.points().into_iter().map(|(r, th)| rhs(r, th)).collect();
        let g: Vec<f64> = (0..self.n_theta).map(|k| flux(self.theta(k))).collect();
        self.solve_checked(&f, &g)
    }

    /// Mean over the disk.
    pub fn mean(&self, s: &DiskSlice) -> f64 {
        let q: f64 = (0..self.radial()).map(|j| self.mean_weights[j] * s.modes[j][0]).sum();
        2.0 * q / (self.h * self.h)
    }

    pub fn eval(&self, s: &DiskSlice, r: f64, theta: f64) -> f64 {
        let r = r.min(self.h);
        let p = self.radial();
        let even = self.folded_weights(r, 1.0);
        let odd = self.folded_weights(r, -1.0);
        let mut acc = 0.0;
        for m in 0..self.modes() {
            let lam = if m % 2 == 0 { &even } else { &odd };
            let (mut re, mut im) = (0.0, 0.0);
            for j in 0..p {
                re += lam[j] * s.modes[m * p + j][0];
                im += lam[j] * s.modes[m * p + j][1];
            }
            let (sn, cs) = (m as f64 * theta).sin_cos();
            let a = if m == 0 { 1.0 } else { 2.0 };
            acc += a * (re * cs - im * sn);
        }
        acc
    }

    /// Value at rescaled transverse coordinates `(y, z)`.
    pub fn eval_xy(&self, s: &DiskSlice, y: f64, z: f64) -> f64 {
        self.eval(s, (y * y + z * z).sqrt(), z.atan2(y))
    }

    /// Values at [`DiskSolver::points`].
    pub fn nodal(&self, s: &DiskSlice) -> Vec<f64> {
        let p = self.radial();
        let mut out = Vec::with_capacity(p * self.n_theta);
        for j in 0..p {
            let c: Vec<Complex64> = (0..self.modes())
                .map(|m| Complex64::new(s.modes[m * p + j][0], s.modes[m * p + j][1]))
                .collect();
            out.extend(self.inverse(&c));
        }
        out
    }

    /// `(d_y u, d_z u)` at [`DiskSolver::points`].
    pub fn nodal_gradient(&self, s: &DiskSlice) -> Vec<[f64; 2]> {
        let p = self.radial();
        let np = self.n + 1;
        let nm = self.modes();
        let mut dr = vec![Complex64::new(0.0, 0.0); nm * p];
        let mut dth = vec![Complex64::new(0.0, 0.0); nm * p];
        for m in 0..nm {
            let sg = Self::parity(m);
            for j in 0..p {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..p {
                    let w = self.d1[j * np + k] + sg * self.d1[j * np + self.n - k];
                    acc += w * Complex64::new(s.modes[m * p + k][0], s.modes[m * p + k][1]);
                }
                dr[m * p + j] = acc;
                dth[m * p + j] = Complex64::new(0.0, m as f64) * Complex64::new(s.modes[m * p + j][0], s.modes[m * p + j][1]);
            }
        }
        let mut out = Vec::with_capacity(p * self.n_theta);
        for j in 0..p {
            let a: Vec<Complex64> = (0..nm).map(|m| dr[m * p + j]).collect();
            let b: Vec<Complex64> = (0..nm).map(|m| dth[m * p + j]).collect();
            let ur = self.inverse(&a);
            let ut = self.inverse(&b);
            for k in 0..self.n_theta {
                let (sn, cs) = self.theta(k).sin_cos();
                let r = self.r[j];
                out.push([cs * ur[k] - sn * ut[k] / r, sn * ur[k] + cs * ut[k] / r]);
            }
        }
        out
    }

    /// Collocation residual of `Lap u = rhs` at interior nodes and of the
    /// Neumann condition on the circle.
    pub fn residual(&self, s: &DiskSlice, rhs: &[f64], flux: &[f64]) -> f64 {
        let p = self.radial();
        let np = self.n + 1;
        let nt = self.n_theta;
        let nm = self.modes();
        let mut worst = 0.0f64;
        let mut lap = vec![Complex64::new(0.0, 0.0); nm * p];
        for m in 0..nm {
            let sg = Self::parity(m);
            for j in 0..p {
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..p {
                    let c = Complex64::new(s.modes[m * p + k][0], s.modes[m * p + k][1]);
                    let w = if j == 0 {
                        self.d1[k] + sg * self.d1[self.n - k]
                    } else {
                        let l = |kk: usize| self.d2[j * np + kk] + self.d1[j * np + kk] / self.r[j];
                        l(k) + sg * l(self.n - k)
                    };
                    acc += w * c;
                }
                if j > 0 {
                    acc -= (m * m) as f64 / (self.r[j] * self.r[j]) * Complex64::new(s.modes[m * p + j][0], s.modes[m * p + j][1]);
                }
                lap[m * p + j] = acc;
            }
        }
        for j in 0..p {
            let c: Vec<Complex64> = (0..nm).map(|m| lap[m * p + j]).collect();
            let vals = self.inverse(&c);
            let target = if j == 0 { flux } else { &rhs[j * nt..(j + 1) * nt] };
            // the dropped Nyquist mode of the data is not representable
            let proj = self.inverse(&self.forward(target));
            for k in 0..nt {
                worst = worst.max((vals[k] - proj[k]).abs());
            }
        }
        worst
    }

    pub fn slice_csv(&self, s: &DiskSlice) -> String {
        let mut out = String::from("r,theta,u\n");
        for ((r, th), u) in self.points().into_iter().zip(self.nodal(s)) {
            out.push_str(&format!("{r},{th},{u:e}\n"));
        }
        out
    }
}

/// A corrector `u(x, y, z, t)` on one edge, stored as disk slices on a
/// space-time grid covering its support in `x`.
#[derive(Clone, Debug)]
pub struct DiskField {
    pub edge: usize,
    pub order: Exponent,
    pub h: f64,
    /// `None` when `u` vanishes identically.
    pub grid: Option<(Uniform, Uniform)>,
    slices: Vec<f64>,
    /// `|<u>|` per slice.
    pub mean_defect: Option<Field2>,
    /// Largest compatibility defect over the slices.
    pub compat_defect: f64,
}

impl DiskField {
    pub fn zero(edge: usize, order: Exponent, h: f64) -> Self {
        DiskField {
            edge,
            order,
            h,
            grid: None,
            slices: Vec::new(),
            mean_defect: None,
            compat_defect: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.grid.is_none()
    }

    fn stride(&self) -> usize {
        match self.grid {
            Some((xg, tg)) => self.slices.len() / (xg.len() * tg.len()),
            None => 0,
        }
    }

    pub fn slice(&self, j: usize, n: usize) -> DiskSlice {
        let (xg, _) = self.grid.expect("nonzero field");
        let st = self.stride();
        let off = (n * xg.len() + j) * st;
        DiskSlice {
            modes: self.slices[off..off + st].chunks(2).map(|c| [c[0], c[1]]).collect(),
        }
    }

    /// Interpolated slice at `(x, t)`; `None` outside the support.
    pub fn slice_at(&self, x: f64, t: f64) -> Option<DiskSlice> {
        let (xg, tg) = self.grid?;
        if x < xg.a || x > xg.b || t <= 0.0 {
            return None;
        }
        let st = self.stride();
        let (sx, wx) = xg.stencil(x);
        let (s_t, wt) = tg.stencil(t);
        let mx = if xg.n < 3 { 2 } else { 4 };
        let mt = if tg.n < 3 { 2 } else { 4 };
        let mut acc = vec![0.0; st];
        for b in 0..mt {
            for a in 0..mx {
                let w = wx[a] * wt[b];
                let off = ((s_t + b) * xg.len() + sx + a) * st;
                for (o, v) in acc.iter_mut().zip(&self.slices[off..off + st]) {
                    *o += w * v;
                }
            }
        }
        Some(DiskSlice {
            modes: acc.chunks(2).map(|c| [c[0], c[1]]).collect(),
        })
    }

    pub fn value(&self, solver: &DiskSolver, x: f64, y: f64, z: f64, t: f64) -> f64 {
        match self.slice_at(x, t) {
            Some(s) => solver.eval_xy(&s, y, z),
            None => 0.0,
        }
    }

    fn map_slices(&self, along_x: bool) -> DiskField {
        let Some((xg, tg)) = self.grid else {
            return self.clone();
        };
        let st = self.stride();
        let nx = xg.len();
        let mut out = vec![0.0; self.slices.len()];
        if along_x {
            let mut row = vec![0.0; nx];
            for n in 0..tg.len() {
                for c in 0..st {
                    for (j, r) in row.iter_mut().enumerate() {
                        *r = self.slices[(n * nx + j) * st + c];
                    }
                    for (j, d) in fd_derivative(&row, xg.step()).into_iter().enumerate() {
                        out[(n * nx + j) * st + c] = d;
                    }
                }
            }
        } else {
            let mut col = vec![0.0; tg.len()];
            for j in 0..nx {
                for c in 0..st {
                    for (n, r) in col.iter_mut().enumerate() {
                        *r = self.slices[(n * nx + j) * st + c];
                    }
                    for (n, d) in fd_derivative(&col, tg.step()).into_iter().enumerate() {
                        out[(n * nx + j) * st + c] = d;
                    }
                }
            }
        }
        DiskField {
            slices: out,
            mean_defect: None,
            compat_defect: 0.0,
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> DiskField {
        DiskField {
            edge: self.edge,
            order: self.order,
            h: self.h,
            grid: self.grid,
            slices: Vec::new(),
            mean_defect: None,
            compat_defect: 0.0,
        }
    }

    /// `d u / dx` on the same grid.
    pub fn d_x(&self) -> DiskField {
        self.map_slices(true)
    }

    /// `d u / dt` on the same grid.
    pub fn d_t(&self) -> DiskField {
        self.map_slices(false)
    }

    pub fn max_abs(&self, solver: &DiskSolver) -> f64 {
        let Some((xg, tg)) = self.grid else {
            return 0.0;
        };
        let mut m = 0.0f64;
        for n in 0..tg.len() {
            for j in 0..xg.len() {
                for v in solver.nodal(&self.slice(j, n)) {
                    m = m.max(v.abs());
                }
            }
        }
        m
    }

    pub fn max_mean_defect(&self) -> f64 {
        self.mean_defect.as_ref().map_or(0.0, |f| f.max_abs())
    }
}

/// Grid resolution for correctors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiskGrid {
    pub nx: usize,
    pub nt: usize,
    pub n_r: usize,
    pub n_theta: usize,
}

impl Default for DiskGrid {
    fn default() -> Self {
        DiskGrid {
            nx: 120,
            nt: 64,
            n_r: 23,
            n_theta: 16,
        }
    }
}

/// The smallest interval containing the support in `x` of the lateral
/// data and of the transverse velocity, padded by `pad`.
pub fn corrector_support(phi: &Expr, vel: &EdgeVelocity, h: f64, ell: f64, t_final: f64, pad: f64) -> Option<(f64, f64)> {
    let nx = 800;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for j in 0..=nx {
        let x = ell * j as f64 / nx as f64;
        let mut hit = false;
        'probe: for a in 0..8 {
            let th = 2.0 * PI * a as f64 / 8.0;
            let (y, z) = (h * th.cos(), h * th.sin());
            if vel.has_transverse() {
                let vb = vel.vbar(x, [0.5 * y, 0.5 * z]);
                let vb2 = vel.vbar(x, [y, z]);
                if vb.iter().chain(&vb2).any(|v| *v != 0.0) {
                    hit = true;
                    break 'probe;
                }
            }
            if !phi.is_zero() {
                for b in 1..=8 {
                    let t = t_final * b as f64 / 8.0;
                    if phi.eval(&expr::vars(x, y, z, t, th, h)) != 0.0 {
                        hit = true;
                        break 'probe;
                    }
                }
            }
        }
        if hit {
            lo = lo.min(x);
            hi = hi.max(x);
        }
    }
    if lo > hi {
        return None;
    }
    Some(((lo - ell / nx as f64 - pad).max(0.0), (hi + ell / nx as f64 + pad).min(ell)))
}

/// Inputs of the corrector `u_e` of exponent `order`: with `p = order - 1`,
/// `Lap u_e = d_t(w_p + u_p) + (v (w_p + u_p))' - (w_{p-1} + u_{p-1})''
/// + div(Vbar (w_p + u_p))` and `d_r u_e = (w_p + u_p) Vbar.nu - [e = alpha] phi`.
pub struct CorrectorInputs<'a> {
    pub order: Exponent,
    pub w_prev: Option<&'a EdgeField>,
    pub u_prev: Option<&'a DiskField>,
    pub u_prev2: Option<&'a DiskField>,
    pub vel: &'a EdgeVelocity,
    pub phi: &'a Expr,
    pub h: f64,
    pub ell: f64,
    pub t_final: f64,
}

/// Builds the corrector of exponent `inputs.order` slice by slice. The
/// `w` contribution to the right-hand side is the constant fixed by the
/// edge equation, `-[e = alpha] phi_hat`.
pub fn build_corrector(inputs: &CorrectorInputs, solver: &DiskSolver, grid: DiskGrid) -> Result<DiskField> {
    let order = inputs.order;
    let edge = inputs.vel.edge;
    let prev = order.prev();
    if !prev.exists() {
        return Ok(DiskField::zero(edge, order, inputs.h));
    }
    let with_phi = order == Exponent::new(1, 0);
    let phi_zero = Expr::constant(0.0);
    let phi = if with_phi { inputs.phi } else { &phi_zero };
    let u_prev = inputs.u_prev.filter(|u| !u.is_zero());
    let u_prev2 = inputs.u_prev2.filter(|u| !u.is_zero());
    let transverse = inputs.vel.has_transverse();
    let w_active = transverse && inputs.w_prev.is_some_and(|w| w.max_abs() > 0.0);
    if phi.is_zero() && u_prev.is_none() && u_prev2.is_none() && !w_active {
        return Ok(DiskField::zero(edge, order, inputs.h));
    }
    let support = match corrector_support(inputs.phi, inputs.vel, inputs.h, inputs.ell, inputs.t_final, 0.02 * inputs.ell) {
        Some(s) => s,
        None => return Ok(DiskField::zero(edge, order, inputs.h)),
    };
    let (xg, tg) = match u_prev.or(u_prev2).and_then(|u| u.grid) {
        Some(g) => g,
        None => (
            Uniform::new(support.0, support.1, grid.nx),
            Uniform::new(0.0, inputs.t_final, grid.nt),
        ),
    };
    let du_t = u_prev.map(|u| u.d_t());
    let du_x = u_prev.map(|u| u.d_x());
    let du_xx = u_prev2.map(|u| u.d_x().d_x());
    let pts = solver.points();
    let nt = solver.n_theta;
    let h = inputs.h;
    let vel = inputs.vel;
    let nslices = xg.len() * tg.len();
    let results: Vec<Result<(DiskSlice, f64, f64)>> = (0..nslices)
        .into_par_iter()
        .map(|idx| {
            let (j, n) = (idx % xg.len(), idx / xg.len());
            let (x, t) = (xg.node(j), tg.node(n));
            let mut rhs = vec![0.0; pts.len()];
            let mut flux = vec![0.0; nt];
            let mut phi_hat = 0.0;
            if !phi.is_zero() && t > 0.0 {
                for (k, f) in flux.iter_mut().enumerate() {
                    let th = solver.theta(k);
                    let val = phi.eval(&expr::vars(x, h * th.cos(), h * th.sin(), t, th, h));
                    *f = -val;
                    phi_hat += val;
                }
                phi_hat *= 2.0 / (h * nt as f64);
            }
            let v = vel.v(x);
            let dv = vel.dv(x, 1);
            let add = |rhs: &mut Vec<f64>, f: Option<&DiskField>, c: f64| {
                if let Some(f) = f {
                    for (r, val) in rhs.iter_mut().zip(solver.nodal(&f.slice(j, n))) {
                        *r += c * val;
                    }
                }
            };
            add(&mut rhs, du_t.as_ref(), 1.0);
            add(&mut rhs, du_x.as_ref(), v);
            add(&mut rhs, u_prev, dv);
            add(&mut rhs, du_xx.as_ref(), -1.0);
            for r in rhs.iter_mut() {
                *r -= phi_hat;
            }
            if transverse {
                let w = inputs.w_prev.map_or(0.0, |w| w.value(x, t));
                let (uvals, ugrad) = match u_prev {
                    Some(u) => {
                        let s = u.slice(j, n);
                        (solver.nodal(&s), solver.nodal_gradient(&s))
                    }
                    None => (vec![0.0; pts.len()], vec![[0.0; 2]; pts.len()]),
                };
                for (q, &(r, th)) in pts.iter().enumerate() {
                    let xi = [r * th.cos(), r * th.sin()];
                    let vb = vel.vbar(x, xi);
                    let f = w + uvals[q];
                    rhs[q] += f * vel.div_vbar(x, xi) + vb[0] * ugrad[q][0] + vb[1] * ugrad[q][1];
                }
                for (k, fl) in flux.iter_mut().enumerate() {
                    let th = solver.theta(k);
                    let (sn, cs) = th.sin_cos();
                    let vb = vel.vbar(x, [h * cs, h * sn]);
                    // row 0 of the polar grid is the circle r = h
                    *fl += (w + uvals[k]) * (vb[0] * cs + vb[1] * sn);
                }
            }
            let s = solver.solve_checked(&rhs, &flux)?;
            let (_, defect) = solver.solve_sampled(&rhs, &flux)?;
            let mean = solver.mean(&s).abs();
            Ok((s, defect.abs(), mean))
        })
        .collect();
    let st = solver.slice_len() * 2;
    let mut slices = vec![0.0; nslices * st];
    let mut means = Field2::zeros(xg, tg);
    let mut compat = 0.0f64;
    for (idx, res) in results.into_iter().enumerate() {
        let (s, defect, mean) = res?;
        for (m, c) in s.modes.iter().enumerate() {
            slices[idx * st + 2 * m] = c[0];
            slices[idx * st + 2 * m + 1] = c[1];
        }
        means.vals[idx] = mean;
        compat = compat.max(defect);
    }
    Ok(DiskField {
        edge,
        order,
        h,
        grid: Some((xg, tg)),
        slices,
        mean_defect: Some(means),
        compat_defect: compat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_data_gives_zero() {
        let s = DiskSolver::default_for(0.2);
        let u = s.solve(|_, _| 0.0, |_| 0.0).unwrap();
        assert!(u.modes.iter().all(|c| c[0] == 0.0 && c[1] == 0.0));
    }

    #[test]
    fn radial_closed_form() {
        let h = 0.2;
        let s = DiskSolver::default_for(h);
        let u = s.solve(|_, _| 4.0, |_| 2.0 * h).unwrap();
        for &(r, th) in &[(0.0, 0.0), (0.05, 1.0), (0.13, 2.5), (0.2, 4.0)] {
            let exact = r * r - h * h / 2.0;
            assert!((s.eval(&u, r, th) - exact).abs() < 1e-12);
        }
        assert!(s.mean(&u).abs() < 1e-14);
    }

    #[test]
    fn fourier_modes_closed_form() {
        let h = 0.3;
        let s = DiskSolver::default_for(h);
        let u = s.solve(|_, _| 0.0, |th| th.cos() + (2.0 * th).sin()).unwrap();
        for &(r, th) in &[(0.01f64, 0.3f64), (0.1, 1.7), (0.25, 3.0), (0.3, 5.5)] {
            let exact = r * th.cos() + r * r * (2.0 * th).sin() / (2.0 * h);
            assert!((s.eval(&u, r, th) - exact).abs() < 1e-12);
        }
        let g = s.nodal_gradient(&u);
        for (q, &(r, th)) in s.points().iter().enumerate() {
            let (y, z) = (r * th.cos(), r * th.sin());
            // r^2 sin(2 theta) / (2h) = y z / h
            assert!((g[q][0] - (1.0 + z / h)).abs() < 1e-10);
            assert!((g[q][1] - y / h).abs() < 1e-10);
        }
    }

    #[test]
    fn incompatible_data() {
        let h = 0.2;
        let s = DiskSolver::default_for(h);
        let (_, defect) = s.solve_sampled(&vec![1.0; s.points().len()], &vec![0.0; s.n_theta]).unwrap();
        assert!((defect - PI * h * h).abs() < 1e-12);
        assert!(matches!(s.solve(|_, _| 1.0, |_| 0.0), Err(Error::IncompatibleData { .. })));
    }

    #[test]
    fn spectral_accuracy_smooth_mode() {
        let h = 0.2;
        let s = DiskSolver::default_for(h);
        // u = (r/h)^3 cos(3 theta) exp-free polynomial: Lap u = 0, d_r u = 3/h cos 3theta
        let u = s.solve(|_, _| 0.0, |th| 3.0 / h * (3.0 * th).cos()).unwrap();
        let exact = |r: f64, th: f64| (r / h).powi(3) * (3.0 * th).cos();
        assert!((s.eval(&u, 0.17, 0.4) - exact(0.17, 0.4)).abs() < 1e-12);
        let rhs: Vec<f64> = vec![0.0; s.points().len()];
        let flux: Vec<f64> = (0..s.n_theta).map(|k| 3.0 / h * (3.0 * s.theta(k)).cos()).collect();
        assert!(s.residual(&u, &rhs, &flux) < 1e-9);
    }

    fn bump_case(order: Exponent) -> (DiskField, DiskSolver) {
        let h = 0.2;
        let vel = EdgeVelocity::constant(1, 1.0);
        let phi = Expr::parse("step(t/0.4)*bump((x-0.3)/0.4)*(1+0.5*cos(theta))").unwrap();
        let solver = DiskSolver::default_for(h);
        let inputs = CorrectorInputs {
            order,
            w_prev: None,
            u_prev: None,
            u_prev2: None,
            vel: &vel,
            phi: &phi,
            h,
            ell: 1.0,
            t_final: 1.0,
        };
        let grid = DiskGrid { nx: 40, nt: 16, ..DiskGrid::default() };
        (build_corrector(&inputs, &solver, grid).unwrap(), solver)
    }

    #[test]
    fn corrector_alpha_closed_form() {
        let (u, s) = bump_case(Exponent::new(1, 0));
        let h = 0.2;
        let (xg, tg) = u.grid.unwrap();
        assert!(xg.a > 0.2 && xg.b < 0.8);
        assert!(u.max_mean_defect() < 1e-12);
        assert!(u.compat_defect < 1e-12);
        for &(x, t) in &[(xg.node(10), tg.node(8)), (xg.node(20), tg.node(16))] {
            let c = crate::jet::step_f64(t / 0.4) * crate::jet::bump_f64((x - 0.3) / 0.4);
            for &(r, th) in &[(0.0f64, 0.0f64), (0.1, 1.0), (0.2, 2.0)] {
                let exact = -(c / (2.0 * h)) * (r * r - h * h / 2.0) - 0.5 * c * r * th.cos();
                let got = u.value(&s, x, r * th.cos(), r * th.sin(), t);
                assert!((got - exact).abs() < 1e-12, "{got} {exact}");
            }
        }
        assert_eq!(u.value(&s, 0.1, 0.0, 0.0, 0.5), 0.0);
        assert_eq!(u.value(&s, 0.9, 0.0, 0.0, 0.5), 0.0);
    }

    #[test]
    fn base_correctors_vanish() {
        assert!(bump_case(Exponent::new(1, -1)).0.is_zero());
        assert!(bump_case(Exponent::new(0, 0)).0.is_zero());
        assert!(bump_case(Exponent::new(0, 1)).0.is_zero());
    }

    #[test]
    fn next_corrector_is_compatible() {
        let (ua, s) = bump_case(Exponent::new(1, 0));
        let vel = EdgeVelocity::constant(1, 1.0);
        let phi = Expr::parse("step(t/0.4)*bump((x-0.3)/0.4)*(1+0.5*cos(theta))").unwrap();
        let inputs = CorrectorInputs {
            order: Exponent::new(1, 1),
            w_prev: None,
            u_prev: Some(&ua),
            u_prev2: None,
            vel: &vel,
            phi: &phi,
            h: 0.2,
            ell: 1.0,
            t_final: 1.0,
        };
        let u = build_corrector(&inputs, &s, DiskGrid::default()).unwrap();
        assert!(!u.is_zero());
        assert!(u.max_mean_defect() < 1e-12);
        assert!(u.compat_defect < 1e-9);
    }
}
