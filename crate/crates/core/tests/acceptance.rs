use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;
use thinnet::config::RunConfig;
use thinnet::disk::DiskSolver;
use thinnet::edge::{solve_edge_hyperbolic, EdgeGrid};
use thinnet::expansion::{build_expansion, ExpansionOrderSet};
use thinnet::expr::Expr;
use thinnet::geometry::transverse_axes;
use thinnet::harness::{fit_slope, measure_errors, measure_residuals, ResidualOptions};
use thinnet::order::Exponent;
use thinnet::reference::{reference_mesh, solve_reference};
use thinnet::velocity::EdgeVelocity;

type Outcome = Result<String, String>;

fn at(i: usize, s: f64, r: f64, th: f64) -> [f64; 3] {
    let (a, b) = transverse_axes(i);
    let mut x = [0.0; 3];
    x[i] = s;
    x[a] = r * th.cos();
    x[b] = r * th.sin();
    x
}

fn sci(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3e}")).collect::<Vec<_>>().join(", ")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn e(err: thinnet::error::Error) -> String {
    err.to_string()
}

fn trivial_correctors(set: &ExpansionOrderSet) -> Outcome {
    let mut worst_u = 0.0f64;
    let mut worst_d = 0.0f64;
    for order in [Exponent::new(1, -1), Exponent::new(0, 0)] {
        let c = set.coefficient(order).ok_or(format!("missing order {order}"))?;
        for (i, d) in c.disks.iter().enumerate() {
            worst_u = worst_u.max(d.max_abs(&set.disk_solvers[i]));
        }
        worst_d = worst_d.max(c.graph.d.max_abs());
    }
    check(worst_u == 0.0 && worst_d == 0.0, format!("max |u| = {worst_u:e}, max |d| = {worst_d:e}"))
}

fn vertex_conditions(set: &ExpansionOrderSet) -> Outcome {
    let v = set.vel.clone().map(|v| v.const_near_node);
    let h = set.spec.h;
    let mut ok = true;
    let mut out = Vec::new();
    for order in [Exponent::new(1, -1), Exponent::new(0, 0)] {
        let g = &set.coefficient(order).ok_or("missing base order")?.graph;
        let kd = g.kirchhoff_defect(v, h);
        let scale = g.edges.iter().map(|e| e.max_abs()).fold(0.0, f64::max);
        let cd = g.continuity_defect();
        let grid_err = g.max_spot_check().max(1e-12 * (1.0 + scale));
        ok &= kd <= 1e-10 && cd <= grid_err;
        out.push(format!("{order}: kirchhoff {kd:.1e}, continuity {cd:.1e} (grid {grid_err:.1e})"));
    }
    let g = &set.coefficient(Exponent::new(1, 0)).ok_or("missing order a")?.graph;
    let kd = g.kirchhoff_defect(v, h);
    ok &= kd <= 1e-8 && g.d.max_abs() > 0.0;
    out.push(format!("a: |sum - d_a| {kd:.1e}, max |d_a| {:.3}", g.d.max_abs()));
    check(ok, out.join("; "))
}

fn layer_exactness(set: &ExpansionOrderSet) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t_final = set.spec.t_final;
    let mut worst = 0.0f64;
    let mut base_worst = 0.0f64;
    let mut count = 0;
    for (order, c) in set.coeffs.iter() {
        for (k, term) in c.layers.iter().enumerate() {
            let i = k + 1;
            let prev = if order.is_base() {
                None
            } else {
                Some(&set.coefficient(order.prev()).ok_or("missing previous layer")?.layers[k])
            };
            let scale = 1.0 + term.coeffs.iter().map(|a| a.max_abs()).fold(0.0, f64::max);
            for _ in 0..100 {
                let eta: f64 = rng.gen_range(0.0..8.0);
                let t: f64 = rng.gen_range(0.0..t_final);
                worst = worst.max(term.ode_residual(prev, eta, t).abs() / scale);
                if order.is_base() {
                    let closed = term.coeffs[0].at(t) * (-term.v_end * eta).exp();
                    base_worst = base_worst.max((term.value(eta, t) - closed).abs());
                }
            }
            if order.is_base() {
                if term.degree() != 0 {
                    return Err(format!("base layer {order} on edge {} has degree {}", i + 1, term.degree()));
                }
                let a0 = &term.coeffs[0];
                let w = &c.graph.edges[i];
                let nx = w.xg().len() - 1;
                for n in 0..a0.grid.len() {
                    let t = a0.grid.node(n);
                    let end = w.values().get(nx, n);
                    let datum = if *order == Exponent::new(0, 0) { set.data.q_at(i, t) - end } else { -end };
                    base_worst = base_worst.max((a0.vals[n] - datum).abs());
                }
            }
            count += 1;
        }
    }
    check(
        worst <= 1e-12 && base_worst <= 1e-12,
        format!("{count} terms, ode residual {worst:.1e}, base closed forms {base_worst:.1e}"),
    )
}

fn node_decay(set: &ExpansionOrderSet) -> Outcome {
    let mut ok = true;
    let mut min_beta = f64::INFINITY;
    let mut cap = 0.0f64;
    let mut solv = 0.0f64;
    for c in set.coeffs.values() {
        let n = &c.node;
        if n.max_abs == 0.0 {
            continue;
        }
        for f in &n.beta0 {
            ok &= f.beta0 > 0.0;
            min_beta = min_beta.min(f.beta0);
        }
        cap = cap.max(n.cap_ratio);
        solv = solv.max(n.solvability_defect);
    }
    ok &= cap <= 1e-4 && solv <= 1e-6;
    check(ok, format!("min beta0 {min_beta:.3}, cap/max {cap:.1e}, solvability {solv:.1e}"))
}

fn base_repair(set: &ExpansionOrderSet) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let eps = set.spec.eps;
    let mut outflow = 0.0f64;
    for i in 1..3 {
        for _ in 0..50 {
            let t = rng.gen_range(0.0..set.spec.t_final);
            let r = rng.gen_range(0.0..eps * set.spec.h[i]);
            let th = rng.gen_range(0.0..2.0 * PI);
            let u = set.evaluate(at(i, set.spec.ell[i], r, th), t).map_err(e)?;
            let q = set.data.q_at(i, t);
            outflow = outflow.max((u - q).abs() / (1.0 + q.abs()));
        }
    }
    let tg = set.coefficient(Exponent::new(0, 0)).ok_or("missing order 0")?.graph.edges[0].tg();
    let mut inflow = 0.0f64;
    for n in (0..tg.len()).step_by(7) {
        let t = tg.node(n);
        let u = set.evaluate(at(0, set.spec.ell[0], 0.5 * eps * set.spec.h[0], 0.7), t).map_err(e)?;
        let q = set.data.q_at(0, t);
        inflow = inflow.max((u - q).abs() / (1.0 + q.abs()));
    }
    let mut initial = 0.0f64;
    for _ in 0..200 {
        let i = rng.gen_range(0..3);
        let s = rng.gen_range(0.0..set.spec.ell[i]);
        let r = rng.gen_range(0.0..eps * set.spec.h[i]);
        let x = at(i, s, r, rng.gen_range(0.0..2.0 * PI));
        if let Ok(u) = set.evaluate(x, 0.0) {
            initial = initial.max(u.abs());
        }
    }
    check(
        outflow <= 1e-12 && inflow <= 1e-12 && initial == 0.0,
        format!("outflow bases {outflow:.1e}, inflow base at grid times {inflow:.1e}, t = 0 {initial:.1e}"),
    )
}

fn residual_scaling(set: &ExpansionOrderSet) -> Outcome {
    let eps_list = [0.3, 0.2, 0.15, 0.1];
    let mut out = Vec::new();
    let mut slopes = Vec::new();
    for m in [1usize, 2] {
        let mut sup = Vec::new();
        for (k, &eps) in eps_list.iter().enumerate() {
            let s = set.with_eps(eps);
            let opts = ResidualOptions {
                seed: 11 + k as u64,
                ..ResidualOptions::default()
            };
            let rep = measure_residuals(&s, &s.realized(m), m, &opts).map_err(e)?;
            sup.push(rep.sup_over("blend"));
        }
        let fit = fit_slope(&eps_list, &sup).ok_or("slope fit failed")?;
        out.push(format!("M={m}: blend sup [{}], slope {:.3} [{:.2}, {:.2}]", sci(&sup), fit.slope, fit.lo, fit.hi));
        slopes.push(fit.slope);
    }
    check(slopes[0] >= 0.60, format!("{} (threshold 0.60 on M=1)", out.join("; ")))
}

struct Convergence {
    sup_slope: f64,
    energy_slope: f64,
    detail: String,
}

fn convergence(set: &ExpansionOrderSet, cfg: &RunConfig) -> Result<Convergence, String> {
    let eps_list = [0.3, 0.2, 0.15];
    let upto = set.realized(1);
    let mut sup = Vec::new();
    let mut energy = Vec::new();
    let mut ledger = 0.0f64;
    let mut doubling = String::new();
    for &eps in &eps_list {
        let s = set.with_eps(eps);
        let mesh = Arc::new(reference_mesh(&s.spec, cfg.numerics.reference.cells_per_radius).map_err(e)?);
        let r = solve_reference(&s.spec, &cfg.vel, &cfg.data, mesh, &cfg.numerics.reference, 20).map_err(e)?;
        ledger = ledger.max(r.max_ledger_defect());
        let err = measure_errors(&s, &upto, &r).map_err(e)?;
        if eps == eps_list[0] {
            let fine = Arc::new(reference_mesh(&s.spec, 2.0 * cfg.numerics.reference.cells_per_radius).map_err(e)?);
            let rf = solve_reference(&s.spec, &cfg.vel, &cfg.data, fine, &cfg.numerics.reference, 20).map_err(e)?;
            let ef = measure_errors(&s, &upto, &rf).map_err(e)?;
            let change = ((err.sup - ef.sup) / ef.sup).abs().max(((err.energy - ef.energy) / ef.energy).abs());
            doubling = format!("doubling at eps {eps}: change {:.1}%", 100.0 * change);
            if change >= 0.2 {
                return Err(format!("reference not resolved: {doubling}"));
            }
        }
        sup.push(err.sup);
        energy.push(err.energy);
    }
    let fs = fit_slope(&eps_list, &sup).ok_or("sup fit failed")?;
    let fe = fit_slope(&eps_list, &energy).ok_or("energy fit failed")?;
    Ok(Convergence {
        sup_slope: fs.slope,
        energy_slope: fe.slope,
        detail: format!(
            "sup [{}], energy [{}], {doubling}, ledger {ledger:.1e}, sup slope {:.3}, energy slope {:.3}",
            sci(&sup),
            sci(&energy),
            fs.slope,
            fe.slope
        ),
    })
}

fn edge_manufactured() -> Result<f64, String> {
    let v = EdgeVelocity::new(1, Expr::parse("1 + 0.5*x*x").map_err(e)?, [Expr::constant(0.0), Expr::constant(0.0)], 0.0);
    let exact = |x: f64, t: f64| (PI * t).sin().powi(2) * (PI * x).sin();
    let rhs = |x: f64, t: f64| {
        let vv = 1.0 + 0.5 * x * x;
        PI * (2.0 * PI * t).sin() * (PI * x).sin() + (PI * t).sin().powi(2) * (x * (PI * x).sin() + vv * PI * (PI * x).cos())
    };
    let err = |n: usize| -> Result<f64, String> {
        let grid = EdgeGrid {
            nx: n,
            nt: n,
            refine: 1,
            ..EdgeGrid::default()
        };
        let f = solve_edge_hyperbolic(1, Exponent::new(0, 0), &v, 1.0, 1.0, &rhs, &|_| 0.0, grid, 3).map_err(e)?;
        let mut m = 0.0f64;
        for j in 0..=n {
            for k in 0..=n {
                let (x, t) = (f.xg().node(j), f.tg().node(k));
                m = m.max((f.values().get(j, k) - exact(x, t)).abs());
            }
        }
        Ok(m)
    };
    let errs = [err(20)?, err(40)?, err(80)?];
    Ok((errs[0] / errs[2]).log2() / 2.0)
}

fn disk_spectral() -> Result<(f64, f64, f64), String> {
    let h = 0.2;
    let rho = 0.5;
    let exact = |r: f64, th: f64| {
        let s = rho * r / h;
        -h * (1.0 - 2.0 * s * th.cos() + s * s).ln()
    };
    let err = |nt: usize| -> Result<f64, String> {
        let s = DiskSolver::new(h, 2 * nt + 1, nt);
        let aliased_mean = (1.0 + rho.powi(nt as i32)) / (1.0 - rho.powi(nt as i32));
        let flux = |th: f64| (1.0 - rho * rho) / (1.0 - 2.0 * rho * th.cos() + rho * rho) - aliased_mean;
        let u = s.solve(|_, _| 0.0, flux).map_err(e)?;
        let mut m = 0.0f64;
        for &(r, th) in &[(0.0, 0.0), (0.05, 0.4), (0.11, 2.2), (0.17, 3.9), (0.2, 0.0), (0.2, 5.1)] {
            m = m.max((s.eval(&u, r, th) - exact(r, th)).abs());
        }
        Ok(m)
    };
    let gain = err(16)? / err(32)?;
    let band = DiskSolver::new(h, 33, 16);
    let u = band.solve(|_, _| 0.0, |th| (3.0 * th).cos() + (5.0 * th).sin()).map_err(e)?;
    let exact_band = |r: f64, th: f64| {
        h / 3.0 * (r / h).powi(3) * (3.0 * th).cos() + h / 5.0 * (r / h).powi(5) * (5.0 * th).sin()
    };
    let fine = [(0.0, 0.0), (0.05, 0.4), (0.11, 2.2), (0.17, 3.9), (0.2, 0.0), (0.2, 5.1)]
        .iter()
        .map(|&(r, th)| (band.eval(&u, r, th) - exact_band(r, th)).abs())
        .fold(0.0, f64::max);
    let rad = DiskSolver::default_for(h);
    let u = rad.solve(|_, _| 4.0, |_| 2.0 * h).map_err(e)?;
    let radial = [(0.0, 0.0), (0.07, 1.0), (0.2, 4.0)]
        .iter()
        .map(|&(r, th)| (rad.eval(&u, r, th) - (r * r - h * h / 2.0)).abs())
        .fold(0.0, f64::max);
    Ok((gain, fine, radial))
}

fn oracles(cfg: &RunConfig) -> Outcome {
    let order = edge_manufactured()?;
    let (gain, fine, radial) = disk_spectral()?;
    let mut spec = cfg.spec.clone();
    spec.eps = 0.3;
    let mut ropts = cfg.numerics.reference.clone();
    ropts.steps = 40;
    let mesh = Arc::new(reference_mesh(&spec, 4.0).map_err(e)?);
    let r = solve_reference(&spec, &cfg.vel, &cfg.data, mesh, &ropts, 2).map_err(e)?;
    let ledger = r.max_ledger_defect();
    check(
        order >= 1.8 && gain >= 0.5 * 0.5f64.powi(-8) && fine <= 1e-12 && radial <= 1e-12 && ledger <= 1e-8,
        format!(
            "edge order {order:.2}; disk kernel error ratio 8->16 modes {gain:.1e}, band-limited error {fine:.1e}, radial {radial:.1e}; ledger {ledger:.1e}"
        ),
    )
}

fn report(n: usize, name: &str, started: Instant, r: &Outcome) -> bool {
    let secs = started.elapsed().as_secs_f64();
    match r {
        Ok(d) => println!("criterion {n} ({name}): PASS  {d}  [{secs:.0}s]"),
        Err(d) => println!("criterion {n} ({name}): FAIL  {d}  [{secs:.0}s]"),
    }
    r.is_ok()
}

fn main() {
    let cfg = RunConfig::default();
    let mut build = cfg.numerics.build.clone();
    build.m = 2;
    let clock = Instant::now();
    let set = match build_expansion(&cfg.spec, &cfg.vel, &cfg.data, &build) {
        Ok(s) => s.with_eps(0.15),
        Err(err) => {
            println!("expansion build failed: {err}");
            for n in 1..=9 {
                println!("criterion {n}: FAIL  build failed");
            }
            std::process::exit(1);
        }
    };
    println!("expansion built in {:.0}s", clock.elapsed().as_secs_f64());
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "trivial correctors", t, &trivial_correctors(&set));
    let t = Instant::now();
    all &= report(2, "vertex conditions", t, &vertex_conditions(&set));
    let t = Instant::now();
    all &= report(3, "boundary-layer exactness", t, &layer_exactness(&set));
    let t = Instant::now();
    all &= report(4, "node-layer decay", t, &node_decay(&set));
    let t = Instant::now();
    all &= report(5, "base and initial repair", t, &base_repair(&set));
    let t = Instant::now();
    all &= report(6, "blend residual scaling", t, &residual_scaling(&set));
    let t = Instant::now();
    let gamma = cfg.spec.gamma;
    match convergence(&set, &cfg) {
        Ok(c) => {
            let sup = check(c.sup_slope >= gamma - 0.25, format!("{} (threshold {:.2})", c.detail, gamma - 0.25));
            all &= report(7, "sup-norm convergence", t, &sup);
            let en = check(c.energy_slope >= gamma - 0.75, format!("energy slope {:.3} (threshold {:.2})", c.energy_slope, gamma - 0.75));
            all &= report(8, "energy-norm convergence", t, &en);
        }
        Err(d) => {
            all &= report(7, "sup-norm convergence", t, &Err(d.clone()));
            all &= report(8, "energy-norm convergence", t, &Err(d));
        }
    }
    let t = Instant::now();
    all &= report(9, "oracle equivalences", t, &oracles(&cfg));
    if !all {
        std::process::exit(1);
    }
}
