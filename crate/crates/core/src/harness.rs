//! Residuals of the assembled partial sum, errors against the reference
//! solver and log-log rate fits over an `eps` sweep.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::expansion::{build_expansion, ExpansionOrderSet, Zone};
use crate::expr;
use crate::geometry::{transverse_axes, NetworkSpec, Region};
use crate::grid::linear_fit;
use crate::order::Exponent;
use crate::reference::{reference_mesh, solve_reference, ReferenceSolution};

/// Exponents of `eps` the residuals are predicted to scale with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictedOrders {
    pub regular: f64,
    pub node: f64,
    pub lateral: f64,
    pub blend: f64,
}

pub fn predicted_orders(m: usize, alpha: f64, gamma: f64) -> PredictedOrders {
    let fl = alpha.floor();
    let m = m as f64;
    PredictedOrders {
        regular: m + fl - 1.0,
        node: alpha + m - 1.0,
        lateral: (m + fl).min(alpha + m),
        blend: gamma * (m + fl - 1.0),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZoneResidual {
    pub zone: String,
    pub samples: usize,
    pub sup: f64,
    pub predicted: f64,
    /// `sup / eps^predicted`.
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualReport {
    pub m: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub eps: f64,
    pub interior: Vec<ZoneResidual>,
    pub lateral: ZoneResidual,
}

impl ResidualReport {
    pub fn zone(&self, name: &str) -> Option<&ZoneResidual> {
        self.interior.iter().find(|z| z.zone == name)
    }

    /// Largest residual over the zones whose label starts with `prefix`.
    pub fn sup_over(&self, prefix: &str) -> f64 {
        self.interior
            .iter()
            .filter(|z| z.zone.starts_with(prefix))
            .map(|z| z.sup)
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ResidualOptions {
    pub samples: usize,
    pub seed: u64,
    /// Spatial difference step relative to `eps`.
    pub step_x: f64,
    pub step_t: f64,
}

impl Default for ResidualOptions {
    fn default() -> Self {
        ResidualOptions {
            samples: 10_000,
            seed: 0,
            step_x: 0.025,
            step_t: 1e-3,
        }
    }
}

fn zones(spec: &NetworkSpec) -> Vec<Zone> {
    let mut z = vec![Zone::NodeRegion];
    for i in 0..3 {
        z.push(Zone::Blend(i));
        z.push(Zone::CylFar(i));
        if i > 0 && spec.ell[i] > 0.0 {
            z.push(Zone::BaseLayer(i));
        }
    }
    z
}

fn disk_point(rng: &mut ChaCha8Rng, i: usize, s: f64, rmax: f64) -> [f64; 3] {
    let (a, b) = transverse_axes(i);
    let r = rmax * rng.gen::<f64>().sqrt();
    let th = rng.gen::<f64>() * std::f64::consts::TAU;
    let mut x = [0.0; 3];
    x[i] = s;
    x[a] = r * th.cos();
    x[b] = r * th.sin();
    x
}

fn zone_point(set: &ExpansionOrderSet, zone: Zone, d: f64, rng: &mut ChaCha8Rng) -> [f64; 3] {
    let spec = &set.spec;
    let eps = spec.eps;
    let (b2, b3) = set.blend_bounds();
    let span = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| lo + (hi - lo) * rng.gen::<f64>();
    match zone {
        Zone::NodeRegion => {
            let half = eps * spec.ell0;
            if rng.gen::<f64>() < 0.5 {
                [0, 1, 2].map(|_| span(rng, -half + d, half - d))
            } else {
                let i = rng.gen_range(0..3);
                let s = span(rng, half, b2);
                disk_point(rng, i, s, eps * spec.h[i] - 2.0 * d)
            }
        }
        Zone::Blend(i) => {
            let s = span(rng, b2, b3);
            disk_point(rng, i, s, eps * spec.h[i] - 2.0 * d)
        }
        Zone::CylFar(i) => {
            let hi = if i > 0 { spec.ell[i] - 2.0 * set.delta } else { spec.ell[i] - 2.0 * d };
            let s = span(rng, b3, hi);
            disk_point(rng, i, s, eps * spec.h[i] - 2.0 * d)
        }
        Zone::BaseLayer(i) => {
            let s = span(rng, spec.ell[i] - 2.0 * set.delta, spec.ell[i] - 2.0 * d);
            disk_point(rng, i, s, eps * spec.h[i] - 2.0 * d)
        }
    }
}

fn shift(x: [f64; 3], axis: usize, by: f64) -> [f64; 3] {
    let mut y = x;
    y[axis] += by;
    y
}

/// `|dU/dt - eps Lap U + div(V U)|` at `(x, t)` by central differences.
fn interior_residual(set: &ExpansionOrderSet, upto: &[Exponent], x: [f64; 3], t: f64, d: f64, ht: f64) -> Result<f64> {
    let u = |p: [f64; 3], s: f64| set.evaluate_partial(p, s, upto);
    let u0 = u(x, t)?;
    let ut = (u(x, t + ht)? - u(x, t - ht)?) / (2.0 * ht);
    let (v, div) = set.velocity(x)?;
    let mut lap = 0.0;
    let mut adv = 0.0;
    for a in 0..3 {
        let up = u(shift(x, a, d), t)?;
        let um = u(shift(x, a, -d), t)?;
        lap += (up - 2.0 * u0 + um) / (d * d);
        adv += v[a] * (up - um) / (2.0 * d);
    }
    Ok((ut - set.spec.eps * lap + adv + div * u0).abs())
}

/// `|-eps dU/dnu + U V.nu - eps^alpha phi|` on the lateral surface of edge
/// `i` at abscissa `s` and angle `th`.
fn lateral_residual(set: &ExpansionOrderSet, upto: &[Exponent], i: usize, s: f64, th: f64, t: f64, d: f64) -> Result<f64> {
    let spec = &set.spec;
    let eps = spec.eps;
    let (a, b) = transverse_axes(i);
    let at = |r: f64| {
        let mut x = [0.0; 3];
        x[i] = s;
        x[a] = r * th.cos();
        x[b] = r * th.sin();
        x
    };
    let rh = eps * spec.h[i] * (1.0 - 1e-12);
    let u0 = set.evaluate_partial(at(rh), t, upto)?;
    let u1 = set.evaluate_partial(at(rh - d), t, upto)?;
    let u2 = set.evaluate_partial(at(rh - 2.0 * d), t, upto)?;
    let dnu = (3.0 * u0 - 4.0 * u1 + u2) / (2.0 * d);
    let (v, _) = set.velocity(at(rh))?;
    let vn = v[a] * th.cos() + v[b] * th.sin();
    let h = spec.h[i];
    let phi = set.data.phi[i].eval(&expr::vars(s, h * th.cos(), h * th.sin(), t, th, h));
    Ok((-eps * dnu + u0 * vn - eps.powf(spec.alpha) * phi).abs())
}

fn finish(zone: String, sups: &[f64], predicted: f64, eps: f64) -> ZoneResidual {
    let sup = sups.iter().cloned().fold(0.0, f64::max);
    ZoneResidual {
        zone,
        samples: sups.len(),
        sup,
        predicted,
        ratio: sup / eps.powf(predicted),
    }
}

/// Sup estimates of the residuals of the partial sum over `upto`, by
/// stratified random sampling of every zone and of the lateral surfaces.
pub fn measure_residuals(set: &ExpansionOrderSet, upto: &[Exponent], m: usize, opts: &ResidualOptions) -> Result<ResidualReport> {
    let spec = &set.spec;
    let eps = spec.eps;
    let d = opts.step_x * eps;
    let ht = opts.step_t * spec.t_final;
    let pred = predicted_orders(m, spec.alpha, spec.gamma);
    let zs = zones(spec);
    let per = (opts.samples / (zs.len() + 1)).max(1);
    let mut interior = Vec::with_capacity(zs.len());
    for (k, &zone) in zs.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(k as u64));
        let mut pts = Vec::with_capacity(per);
        let mut tries = 0;
        while pts.len() < per && tries < 50 * per {
            tries += 1;
            let x = zone_point(set, zone, d, &mut rng);
            let t = ht + (spec.t_final - 2.0 * ht) * rng.gen::<f64>();
            if set.classify(x).ok() != Some(zone) {
                continue;
            }
            let inside = (0..3).all(|a| spec.region_of(shift(x, a, d)).is_ok() && spec.region_of(shift(x, a, -d)).is_ok());
            if inside {
                pts.push((x, t));
            }
        }
        let sups: Vec<f64> = pts
            .par_iter()
            .map(|&(x, t)| interior_residual(set, upto, x, t, d, ht))
            .collect::<Result<_>>()?;
        let p = match zone {
            Zone::NodeRegion => pred.node,
            Zone::Blend(_) => pred.blend,
            _ => pred.regular,
        };
        interior.push(finish(zone.label(), &sups, p, eps));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(1000));
    let (_, b3) = set.blend_bounds();
    let pts: Vec<(usize, f64, f64, f64)> = (0..per)
        .map(|_| {
            let i = rng.gen_range(0..3);
            let s = b3 + (spec.ell[i] - d - b3) * rng.gen::<f64>();
            let th = rng.gen::<f64>() * std::f64::consts::TAU;
            let t = spec.t_final * rng.gen::<f64>();
            (i, s, th, t)
        })
        .collect();
    let lat: Vec<f64> = pts
        .par_iter()
        .map(|&(i, s, th, t)| lateral_residual(set, upto, i, s, th, t, d))
        .collect::<Result<_>>()?;
    Ok(ResidualReport {
        m,
        alpha: spec.alpha,
        gamma: spec.gamma,
        eps,
        interior,
        lateral: finish("lateral".into(), &lat, pred.lateral, eps),
    })
}

/// Moves a cell centre of a cut voxel onto the closure of its region.
fn project(spec: &NetworkSpec, region: Region, x: [f64; 3]) -> [f64; 3] {
    let mut y = x;
    match region {
        Region::Node => {
            let half = spec.eps * spec.ell0 * (1.0 - 1e-12);
            for c in &mut y {
                *c = c.clamp(-half, half);
            }
        }
        Region::Cyl(i) => {
            let (a, b) = transverse_axes(i);
            let r = (y[a] * y[a] + y[b] * y[b]).sqrt();
            let rmax = spec.eps * spec.h[i] * (1.0 - 1e-12);
            if r > rmax {
                y[a] *= rmax / r;
                y[b] *= rmax / r;
            }
            y[i] = y[i].clamp(spec.eps * spec.ell0, spec.ell[i]);
        }
    }
    y
}

/// Sup-norm and scaled energy-norm difference between one `eps` sample and
/// the reference solution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorSample {
    pub eps: f64,
    pub sup: f64,
    pub energy: f64,
}

/// Values of the partial sum over `upto` at every reference cell centre at
/// every stored time.
pub fn expansion_on_mesh(set: &ExpansionOrderSet, upto: &[Exponent], r: &ReferenceSolution) -> Result<Vec<Vec<f64>>> {
    if (r.eps - set.spec.eps).abs() > 1e-14 * r.eps {
        return Err(Error::GridMismatch(format!("reference eps {} vs expansion eps {}", r.eps, set.spec.eps)));
    }
    if (r.mesh.half - set.spec.eps * set.spec.ell0).abs() > 1e-12 {
        return Err(Error::GridMismatch("reference node size differs from the expansion geometry".into()));
    }
    if r.times.iter().any(|t| *t < 0.0 || *t > set.spec.t_final * (1.0 + 1e-12)) {
        return Err(Error::GridMismatch("reference time grid leaves [0, T]".into()));
    }
    let pts: Vec<[f64; 3]> = r.mesh.cells.iter().map(|c| project(&set.spec, c.region, c.center)).collect();
    r.times
        .iter()
        .map(|&t| pts.par_iter().map(|&x| set.evaluate_partial(x, t, upto)).collect::<Result<Vec<f64>>>())
        .collect()
}

/// Error of the partial sum over `upto` against `r`: sup over all cells and
/// stored times, and the time-integrated gradient norm scaled by
/// `|Omega_eps|^{-1/2}`.
pub fn measure_errors(set: &ExpansionOrderSet, upto: &[Exponent], r: &ReferenceSolution) -> Result<ErrorSample> {
    let approx = expansion_on_mesh(set, upto, r)?;
    Ok(errors_from_values(set.spec.eps, &set.spec, &approx, r))
}

/// Errors of precomputed expansion values against the reference.
pub fn errors_from_values(eps: f64, spec: &NetworkSpec, approx: &[Vec<f64>], r: &ReferenceSolution) -> ErrorSample {
    let mesh = &r.mesh;
    let mut sup = 0.0f64;
    let mut grad = Vec::with_capacity(r.times.len());
    for (k, vals) in r.values.iter().enumerate() {
        let e: Vec<f64> = vals.iter().zip(&approx[k]).map(|(u, a)| u - a).collect();
        sup = sup.max(e.iter().fold(0.0f64, |m, v| m.max(v.abs())));
        let mut g = 0.0;
        for f in &mesh.faces {
            let de = e[f.b] - e[f.a];
            g += f.area * de * de / f.dist;
        }
        for b in &mesh.bfaces {
            if let crate::geometry::Patch::Base(_) = b.patch {
                g += b.area * e[b.cell] * e[b.cell] / b.dist;
            }
        }
        grad.push(g);
    }
    let mut integral = 0.0;
    for k in 1..r.times.len() {
        integral += 0.5 * (grad[k] + grad[k - 1]) * (r.times[k] - r.times[k - 1]);
    }
    ErrorSample {
        eps,
        sup,
        energy: (integral / spec.volume()).sqrt(),
    }
}

/// Log-log regression slope with a 95% confidence interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Slope {
    pub slope: f64,
    pub stderr: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Fits `log y = slope log eps + c`. Needs at least three points.
pub fn fit_slope(eps: &[f64], y: &[f64]) -> Option<Slope> {
    if eps.len() < 3 || eps.len() != y.len() || y.iter().any(|v| *v <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|e| e.ln()).collect();
    let (slope, _, se) = linear_fit(&lx, &ly);
    let q = StudentsT::new(0.0, 1.0, (eps.len() - 2) as f64).ok()?.inverse_cdf(0.975);
    Some(Slope {
        slope,
        stderr: se,
        lo: slope - q * se,
        hi: slope + q * se,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub m: usize,
    pub eps_list: Vec<f64>,
    pub sup_errors: Vec<f64>,
    pub energy_errors: Vec<f64>,
    pub sup_slope: Option<Slope>,
    pub energy_slope: Option<Slope>,
}

impl ConvergenceReport {
    pub fn from_samples(m: usize, samples: &[ErrorSample]) -> Self {
        let eps_list: Vec<f64> = samples.iter().map(|s| s.eps).collect();
        let sup_errors: Vec<f64> = samples.iter().map(|s| s.sup).collect();
        let energy_errors: Vec<f64> = samples.iter().map(|s| s.energy).collect();
        ConvergenceReport {
            m,
            sup_slope: fit_slope(&eps_list, &sup_errors),
            energy_slope: fit_slope(&eps_list, &energy_errors),
            eps_list,
            sup_errors,
            energy_errors,
        }
    }
}

/// Everything produced by a sweep over `eps_list x m_list`.
#[derive(Clone, Debug, Default)]
pub struct SweepReport {
    pub residuals: Vec<ResidualReport>,
    pub convergence: Vec<ConvergenceReport>,
    /// Per `eps`: surface-area defect and worst mass-ledger defect of the
    /// reference run.
    pub reference: Vec<(f64, f64, f64)>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x:.6e}"))
}

impl SweepReport {
    /// Columns `M,alpha,gamma,eps,zone,samples,sup,predicted,ratio`.
    pub fn residual_csv(&self) -> String {
        let mut s = String::from("M,alpha,gamma,eps,zone,samples,sup,predicted,ratio\n");
        for r in &self.residuals {
            for z in r.interior.iter().chain(std::iter::once(&r.lateral)) {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{:.6e},{},{:.6e}",
                    r.m, r.alpha, r.gamma, r.eps, z.zone, z.samples, z.sup, z.predicted, z.ratio
                );
            }
        }
        s
    }

    /// Columns `M,eps,sup_error,energy_error`, then one `slope` row per M
    /// with `kind,slope,stderr,lo,hi` (empty below three `eps` values).
    pub fn convergence_csv(&self) -> String {
        let mut s = String::from("M,eps,sup_error,energy_error\n");
        for c in &self.convergence {
            for k in 0..c.eps_list.len() {
                let _ = writeln!(s, "{},{},{:.6e},{:.6e}", c.m, c.eps_list[k], c.sup_errors[k], c.energy_errors[k]);
            }
        }
        s.push_str("M,kind,slope,stderr,lo,hi\n");
        for c in &self.convergence {
            for (kind, sl) in [("sup", c.sup_slope), ("energy", c.energy_slope)] {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    c.m,
                    kind,
                    opt(sl.map(|x| x.slope)),
                    opt(sl.map(|x| x.stderr)),
                    opt(sl.map(|x| x.lo)),
                    opt(sl.map(|x| x.hi))
                );
            }
        }
        s
    }

    /// Log-log data `eps sup energy` per M, blank-line separated blocks.
    pub fn gnuplot(&self) -> String {
        let mut s = String::new();
        for c in &self.convergence {
            let _ = writeln!(s, "# M = {}", c.m);
            for k in 0..c.eps_list.len() {
                let _ = writeln!(s, "{} {:.6e} {:.6e}", c.eps_list[k], c.sup_errors[k], c.energy_errors[k]);
            }
            s.push_str("\n\n");
        }
        s
    }
}

/// Runs residual measurements (and, with `with_reference`, reference
/// solves and error measurements) for every `eps` in the config and every
/// order in its `m_list`.
pub fn sweep(cfg: &RunConfig, with_reference: bool) -> Result<SweepReport> {
    let mut out = SweepReport::default();
    if cfg.eps_list.is_empty() {
        return Ok(out);
    }
    let mut build = cfg.numerics.build.clone();
    build.m = cfg.m;
    build.seed = cfg.seed;
    let base = build_expansion(&cfg.spec, &cfg.vel, &cfg.data, &build)?;
    let m_list: Vec<usize> = if cfg.m_list.is_empty() { vec![cfg.m] } else { cfg.m_list.clone() };
    let mut samples: Vec<Vec<ErrorSample>> = vec![Vec::new(); m_list.len()];
    for (k, &eps) in cfg.eps_list.iter().enumerate() {
        let set = base.with_eps(eps);
        let ropts = ResidualOptions {
            samples: cfg.numerics.residual_samples,
            seed: cfg.seed.wrapping_add(7919 * k as u64),
            ..ResidualOptions::default()
        };
        for &m in &m_list {
            out.residuals.push(measure_residuals(&set, &set.realized(m), m, &ropts)?);
        }
        if with_reference {
            let mesh = Arc::new(reference_mesh(&set.spec, cfg.numerics.reference.cells_per_radius)?);
            let r = solve_reference(&set.spec, &cfg.vel, &cfg.data, mesh, &cfg.numerics.reference, 20)?;
            out.reference.push((eps, r.surface_area_defect, r.max_ledger_defect()));
            for (j, &m) in m_list.iter().enumerate() {
                samples[j].push(measure_errors(&set, &set.realized(m), &r)?);
            }
        }
    }
    if with_reference {
        out.convergence = m_list.iter().zip(&samples).map(|(&m, s)| ConvergenceReport::from_samples(m, s)).collect();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicted_orders_default() {
        let p = predicted_orders(2, 0.5, 0.85);
        assert_eq!(p.regular, 1.0);
        assert_eq!(p.node, 1.5);
        assert_eq!(p.lateral, 2.0);
        assert!((p.blend - 0.85).abs() < 1e-15);
    }

    #[test]
    fn slope_of_exact_power() {
        let eps = [0.3, 0.2, 0.15, 0.1];
        let y: Vec<f64> = eps.iter().map(|e: &f64| 2.0 * e.powf(1.7)).collect();
        let s = fit_slope(&eps, &y).unwrap();
        assert!((s.slope - 1.7).abs() < 1e-12);
        assert!(s.hi - s.lo < 1e-9);
        assert!(fit_slope(&eps[..2], &y[..2]).is_none());
    }

    #[test]
    fn slope_interval_covers_noisy_fit() {
        let eps = [0.3, 0.2, 0.15];
        let y = [0.3f64.powf(0.9) * 1.1, 0.2f64.powf(0.9), 0.15f64.powf(0.9) * 0.95];
        let s = fit_slope(&eps, &y).unwrap();
        assert!(s.lo < s.slope && s.slope < s.hi);
        // 95% two-sided t quantile for one degree of freedom
        let q = (s.hi - s.slope) / s.stderr;
        assert!((q - 12.706204736).abs() < 1e-6, "{q}");
    }

    #[test]
    fn empty_sweep() {
        let mut cfg = RunConfig::default();
        cfg.eps_list.clear();
        let r = sweep(&cfg, true).unwrap();
        assert!(r.residuals.is_empty() && r.convergence.is_empty());
    }
}
