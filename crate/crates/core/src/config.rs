//! Run configuration: a TOML document with the sections `network`,
//! `constants`, `velocity`, `data`, `run`, `numerics` and `output`, plus a
//! top-level `schema_version`.

use std::collections::HashMap;
use std::path::PathBuf;

use serde::Deserialize;

use crate::disk::DiskGrid;
use crate::edge::EdgeGrid;
use crate::error::{Error, Result};
use crate::expansion::{BuildOptions, ProblemData};
use crate::expr::{self, Expr};
use crate::geometry::{default_gamma, NetworkSpec, NodeShape};
use crate::node::{DerivativeMode, NodeOptions};
use crate::order::min_order;
use crate::velocity::{check_conservation, EdgeVelocity};

pub const SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_CONFIG: &str = r#"schema_version = 1

[network]
ell0 = 0.3
ell = [1.0, 1.0, 1.0]
h = [0.2, 0.2, 0.2]
eps = 0.1
alpha = 0.5
gamma = 0.85
T = 1.0
node_shape = "cube"

[velocity]
v1 = "-2"
v2 = "1"
v3 = "1"
plateau = 0.1

[data]
q1 = "step(t/0.9)"
q2 = "0.5*step(t/0.9)"
q3 = "0.5*step(t/0.9)"
phi1 = "step(t/0.9)*bump((x-0.1)/0.7)*(1+0.5*cos(theta))"
phi2 = "step(t/0.9)*bump((x-0.1)/0.7)*(1+0.5*cos(theta))"
phi3 = "step(t/0.9)*bump((x-0.1)/0.7)*(1+0.5*cos(theta))"
phi0 = "step(t/0.9)*step((-x-0.24)/0.06)"

[run]
mode = "verify"
M = 2
eps_list = [0.3, 0.2, 0.15]
M_list = [1, 2]
seed = 0
"#;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Expand,
    Reference,
    Verify,
    Sweep,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Mode> {
        Ok(match s {
            "expand" => Mode::Expand,
            "reference" => Mode::Reference,
            "verify" => Mode::Verify,
            "sweep" => Mode::Sweep,
            _ => return Err(Error::InvalidParameter(format!("unknown mode '{s}'"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeScheme {
    BackwardEuler,
    Bdf2,
}

#[derive(Clone, Debug)]
pub struct ReferenceOptions {
    /// Voxels across the smallest cylinder radius.
    pub cells_per_radius: f64,
    pub steps: usize,
    pub scheme: TimeScheme,
    pub rtol: f64,
    pub max_iter: usize,
}

#[derive(Clone, Debug)]
pub struct Numerics {
    pub build: BuildOptions,
    pub reference: ReferenceOptions,
    pub residual_samples: usize,
    pub error_samples: usize,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub schema_version: u32,
    pub spec: NetworkSpec,
    pub vel: [EdgeVelocity; 3],
    pub data: ProblemData,
    pub mode: Mode,
    pub m: usize,
    pub eps_list: Vec<f64>,
    pub m_list: Vec<usize>,
    pub seed: u64,
    pub numerics: Numerics,
    pub out_dir: PathBuf,
    pub formats: Vec<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Num {
    F(f64),
    S(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    ell0: Option<f64>,
    ell: Option<[f64; 3]>,
    h: Option<[f64; 3]>,
    eps: Option<f64>,
    alpha: Option<f64>,
    gamma: Option<f64>,
    #[serde(rename = "T")]
    t_final: Option<f64>,
    node_shape: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVelocity {
    v1: Option<Num>,
    v2: Option<Num>,
    v3: Option<Num>,
    vbar1: Option<[Num; 2]>,
    vbar2: Option<[Num; 2]>,
    vbar3: Option<[Num; 2]>,
    plateau: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    q1: Option<Num>,
    q2: Option<Num>,
    q3: Option<Num>,
    phi1: Option<Num>,
    phi2: Option<Num>,
    phi3: Option<Num>,
    phi0: Option<Num>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    mode: Option<String>,
    #[serde(rename = "M")]
    m: Option<usize>,
    eps_list: Option<Vec<f64>>,
    #[serde(rename = "M_list")]
    m_list: Option<Vec<usize>>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNumerics {
    edge_nx: Option<usize>,
    edge_nt: Option<usize>,
    disk_nx: Option<usize>,
    disk_nt: Option<usize>,
    disk_nr: Option<usize>,
    disk_ntheta: Option<usize>,
    node_spacing: Option<f64>,
    trunc_len: Option<f64>,
    time_samples: Option<usize>,
    node_rtol: Option<f64>,
    node_solvability_tol: Option<f64>,
    cap_threshold: Option<f64>,
    node_derivative: Option<String>,
    delta: Option<f64>,
    ref_cells_per_radius: Option<f64>,
    ref_steps: Option<usize>,
    ref_scheme: Option<String>,
    ref_rtol: Option<f64>,
    residual_samples: Option<usize>,
    error_samples: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: Option<String>,
    formats: Option<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    schema_version: Option<u32>,
    network: Option<RawNetwork>,
    constants: Option<HashMap<String, f64>>,
    velocity: Option<RawVelocity>,
    data: Option<RawData>,
    run: Option<RawRun>,
    numerics: Option<RawNumerics>,
    output: Option<RawOutput>,
}

fn parse_error(text: &str, e: toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    Error::Parse {
        line,
        msg: e.message().to_string(),
    }
}

fn to_expr(v: Option<Num>, default: &str, consts: &HashMap<String, f64>) -> Result<Expr> {
    match v {
        None => Expr::parse_with(default, consts),
        Some(Num::F(x)) => Ok(Expr::constant(x)),
        Some(Num::S(s)) => Expr::parse_with(&s, consts),
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::parse(DEFAULT_CONFIG).expect("built-in configuration parses")
    }
}

impl RunConfig {
    /// Parses a configuration; missing keys take the values of the built-in
    /// default scenario except for data functions, which default to zero
    /// when the `data` section is present.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let raw: Raw = toml::from_str(text).map_err(|e| parse_error(text, e))?;
        let schema_version = raw.schema_version.ok_or(Error::Parse {
            line: 1,
            msg: "missing schema_version".into(),
        })?;
        if schema_version != SCHEMA_VERSION {
            return Err(Error::InvalidParameter(format!(
                "schema_version {schema_version} is not supported (expected {SCHEMA_VERSION})"
            )));
        }
        let mut consts = raw.constants.unwrap_or_default();
        consts.entry("pi".into()).or_insert(std::f64::consts::PI);
        let net = raw.network.unwrap_or(RawNetwork {
            ell0: None,
            ell: None,
            h: None,
            eps: None,
            alpha: None,
            gamma: None,
            t_final: None,
            node_shape: None,
        });
        let alpha = net.alpha.unwrap_or(0.5);
        let node_shape = match net.node_shape.as_deref().unwrap_or("cube") {
            "cube" => NodeShape::Cube,
            s => return Err(Error::InvalidParameter(format!("unknown node_shape '{s}'"))),
        };
        let spec = NetworkSpec {
            ell0: net.ell0.unwrap_or(0.3),
            ell: net.ell.unwrap_or([1.0; 3]),
            h: net.h.unwrap_or([0.2; 3]),
            eps: net.eps.unwrap_or(0.1),
            alpha,
            gamma: net.gamma.unwrap_or_else(|| default_gamma(alpha)),
            t_final: net.t_final.unwrap_or(1.0),
            node_shape,
        };
        let rv = raw.velocity.unwrap_or(RawVelocity {
            v1: None,
            v2: None,
            v3: None,
            vbar1: None,
            vbar2: None,
            vbar3: None,
            plateau: None,
        });
        let plateau = rv.plateau.unwrap_or(0.1);
        let axial = [
            to_expr(rv.v1, "-2", &consts)?,
            to_expr(rv.v2, "1", &consts)?,
            to_expr(rv.v3, "1", &consts)?,
        ];
        let mut vbars = Vec::new();
        for vb in [rv.vbar1, rv.vbar2, rv.vbar3] {
            let pair = match vb {
                None => [Expr::constant(0.0), Expr::constant(0.0)],
                Some([a, b]) => [to_expr(Some(a), "0", &consts)?, to_expr(Some(b), "0", &consts)?],
            };
            vbars.push(pair);
        }
        let mut vbars = vbars.into_iter();
        let mut axial = axial.into_iter();
        let vel: [EdgeVelocity; 3] = std::array::from_fn(|i| EdgeVelocity::new(i, axial.next().unwrap(), vbars.next().unwrap(), plateau));
        let data = match raw.data {
            None => {
                let d: Raw = toml::from_str(DEFAULT_CONFIG).expect("built-in configuration parses");
                let d = d.data.expect("built-in data section");
                build_data(d, &consts)?
            }
            Some(d) => build_data(d, &consts)?,
        };
        let run = raw.run.unwrap_or(RawRun {
            mode: None,
            m: None,
            eps_list: None,
            m_list: None,
            seed: None,
        });
        let mode: Mode = run.mode.as_deref().unwrap_or("verify").parse()?;
        let m = run.m.unwrap_or(2);
        let mut build = BuildOptions::for_spec(&spec, m);
        let mut reference = ReferenceOptions {
            cells_per_radius: 6.0,
            steps: 200,
            scheme: TimeScheme::Bdf2,
            rtol: 1e-12,
            max_iter: 5000,
        };
        let mut residual_samples = 10_000;
        let mut error_samples = 10_000;
        if let Some(n) = raw.numerics {
            let eg = EdgeGrid::default();
            build.edge = EdgeGrid {
                nx: n.edge_nx.unwrap_or(eg.nx),
                nt: n.edge_nt.unwrap_or(eg.nt),
                ..eg
            };
            let dg = DiskGrid::default();
            build.disk = DiskGrid {
                nx: n.disk_nx.unwrap_or(dg.nx),
                nt: n.disk_nt.unwrap_or(dg.nt),
                n_r: n.disk_nr.unwrap_or(dg.n_r),
                n_theta: n.disk_ntheta.unwrap_or(dg.n_theta),
            };
            let no = build.node;
            build.node = NodeOptions {
                spacing: n.node_spacing.unwrap_or(no.spacing),
                trunc_len: n.trunc_len.unwrap_or(no.trunc_len),
                samples: n.time_samples.unwrap_or(no.samples),
                rtol: n.node_rtol.unwrap_or(no.rtol),
                cap_threshold: n.cap_threshold.unwrap_or(no.cap_threshold),
                solvability_tol: n.node_solvability_tol.unwrap_or(no.solvability_tol),
                mode: match n.node_derivative.as_deref() {
                    None | Some("resolve") => DerivativeMode::Resolve,
                    Some("fd") => DerivativeMode::FiniteDifference,
                    Some(s) => return Err(Error::InvalidParameter(format!("unknown node_derivative '{s}'"))),
                },
                ..no
            };
            if let Some(d) = n.delta {
                build.delta = d;
            }
            if let Some(c) = n.ref_cells_per_radius {
                reference.cells_per_radius = c;
            }
            if let Some(s) = n.ref_steps {
                reference.steps = s;
            }
            if let Some(r) = n.ref_rtol {
                reference.rtol = r;
            }
            reference.scheme = match n.ref_scheme.as_deref() {
                None | Some("bdf2") => TimeScheme::Bdf2,
                Some("euler") => TimeScheme::BackwardEuler,
                Some(s) => return Err(Error::InvalidParameter(format!("unknown ref_scheme '{s}'"))),
            };
            residual_samples = n.residual_samples.unwrap_or(residual_samples);
            error_samples = n.error_samples.unwrap_or(error_samples);
        }
        let seed = run.seed.unwrap_or(0);
        build.seed = seed;
        let (out_dir, formats) = match raw.output {
            Some(o) => (
                PathBuf::from(o.dir.unwrap_or_else(|| "out".into())),
                o.formats.unwrap_or_else(|| vec!["csv".into()]),
            ),
            None => (PathBuf::from("out"), vec!["csv".into()]),
        };
        Ok(RunConfig {
            schema_version,
            spec,
            vel,
            data,
            mode,
            m,
            eps_list: run.eps_list.unwrap_or_else(|| vec![0.3, 0.2, 0.15]),
            m_list: run.m_list.unwrap_or_else(|| vec![m]),
            seed,
            numerics: Numerics {
                build,
                reference,
                residual_samples,
                error_samples,
            },
            out_dir,
            formats,
        })
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::parse(&text)
    }
}

fn build_data(d: RawData, consts: &HashMap<String, f64>) -> Result<ProblemData> {
    Ok(ProblemData {
        q: [
            to_expr(d.q1, "0", consts)?,
            to_expr(d.q2, "0", consts)?,
            to_expr(d.q3, "0", consts)?,
        ],
        phi: [
            to_expr(d.phi1, "0", consts)?,
            to_expr(d.phi2, "0", consts)?,
            to_expr(d.phi3, "0", consts)?,
        ],
        phi0: to_expr(d.phi0, "0", consts)?,
    })
}

/// Sample points `(x, theta)` on the lateral surface of edge `i` and the
/// time samples used by the data checks.
fn lateral_samples(ell: f64, nx: usize) -> impl Iterator<Item = (f64, f64)> {
    (0..=nx).flat_map(move |j| {
        let x = ell * j as f64 / nx as f64;
        (0..16).map(move |k| (x, 2.0 * std::f64::consts::PI * k as f64 / 16.0))
    })
}

fn phi_at(phi: &Expr, h: f64, x: f64, th: f64, t: f64) -> f64 {
    phi.eval(&expr::vars(x, h * th.cos(), h * th.sin(), t, th, h))
}

/// Node-surface sample points in rescaled coordinates.
fn node_surface_samples(ell0: f64, n: usize) -> Vec<[f64; 3]> {
    let mut out = Vec::new();
    for axis in 0..3 {
        for side in [-1.0, 1.0] {
            for a in 0..=n {
                for b in 0..=n {
                    let u = -ell0 + 2.0 * ell0 * a as f64 / n as f64;
                    let w = -ell0 + 2.0 * ell0 * b as f64 / n as f64;
                    let mut p = [0.0; 3];
                    p[axis] = side * ell0;
                    p[(axis + 1) % 3] = u;
                    p[(axis + 2) % 3] = w;
                    out.push(p);
                }
            }
        }
    }
    out
}

/// Checks every structural assumption that can be verified before solving.
pub fn validate(cfg: &RunConfig) -> Result<()> {
    let spec = &cfg.spec;
    spec.validate()?;
    let fl = spec.floor_alpha();
    if cfg.m < min_order(fl) {
        return Err(Error::MOrderTooSmall {
            m: cfg.m,
            bound: 1.5 * (1 - fl) as f64,
        });
    }
    for &m in &cfg.m_list {
        if m == 0 || m > cfg.m {
            return Err(Error::InvalidParameter(format!("M_list entry {m} must lie in 1..={}", cfg.m)));
        }
    }
    for &e in &cfg.eps_list {
        if !(e > 0.0 && e < 1.0) {
            return Err(Error::InvalidParameter(format!("eps_list entry {e} must lie in (0, 1)")));
        }
    }
    let vconst = [cfg.vel[0].const_near_node, cfg.vel[1].const_near_node, cfg.vel[2].const_near_node];
    check_conservation(&spec.h, &vconst)?;
    for i in 0..3 {
        cfg.vel[i].validate(spec.ell[i], spec.h[i])?;
    }
    let b = &cfg.numerics.build;
    let delta = b.delta;
    if !(delta > 0.0) {
        return Err(Error::InvalidParameter(format!("delta = {delta} must be positive")));
    }
    for i in 1..3 {
        let v_end = cfg.vel[i].v(spec.ell[i]);
        for k in 0..=20 {
            let x = spec.ell[i] - 2.0 * delta * k as f64 / 20.0;
            if (cfg.vel[i].v(x) - v_end).abs() > 1e-12 * v_end.abs() {
                return Err(Error::SupportViolation(format!(
                    "axial velocity on edge {} is not constant on [ell - 2 delta, ell]",
                    i + 1
                )));
            }
        }
    }
    let mut all_eps = cfg.eps_list.clone();
    all_eps.push(spec.eps);
    for &e in &all_eps {
        let outer = 3.0 * spec.ell0 * e.powf(spec.gamma);
        for i in 0..3 {
            if outer >= spec.ell[i] - 2.0 * delta {
                return Err(Error::SupportViolation(format!(
                    "blend shell of edge {} reaches the base cut-off at eps = {e}",
                    i + 1
                )));
            }
        }
    }
    if b.node.trunc_len < 5.0 * spec.ell0 {
        return Err(Error::TruncationTooShort {
            trunc_len: b.node.trunc_len,
            min: 5.0 * spec.ell0,
        });
    }
    let hmin = spec.h.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(b.node.spacing > 0.0 && b.node.spacing <= hmin / 4.0) {
        return Err(Error::SpacingTooCoarse {
            spacing: b.node.spacing,
            limit: hmin / 4.0,
        });
    }
    if cfg.numerics.reference.cells_per_radius < 4.0 {
        return Err(Error::InvalidParameter("ref_cells_per_radius must be at least 4".into()));
    }
    if b.edge.nx < 8 || b.edge.nt < 8 || b.node.samples < 4 || cfg.numerics.reference.steps < 2 {
        return Err(Error::InvalidParameter("grid sizes too small".into()));
    }
    if b.edge.nt % b.node.samples != 0 {
        return Err(Error::InvalidParameter("edge_nt must be a multiple of time_samples".into()));
    }
    let t_final = spec.t_final;
    let times: Vec<f64> = (1..=16).map(|k| t_final * k as f64 / 16.0).collect();
    let zero = expr::vars(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    let flat = cfg.m + 1;
    for i in 0..3 {
        let q = &cfg.data.q[i];
        for &t in &times {
            if q.eval(&expr::vars(0.0, 0.0, 0.0, t, 0.0, 0.0)) < 0.0 {
                return Err(Error::InvalidParameter(format!("q{} is negative at t = {t}", i + 1)));
            }
        }
        for n in 0..=flat {
            let d = q.deriv(&zero, expr::T, n);
            if d.abs() > 1e-12 {
                let msg = format!("q{}: derivative {n} at t = 0 is {d:e}", i + 1);
                return Err(if n <= 1 { Error::MatchingViolated(msg) } else { Error::InsufficientMatching(msg) });
            }
        }
        let phi = &cfg.data.phi[i];
        if phi.is_zero() {
            continue;
        }
        let h = spec.h[i];
        let ell = spec.ell[i];
        let plateau = cfg.vel[i].delta;
        for (x, th) in lateral_samples(ell, 200) {
            let near_end = x <= plateau || x >= ell - 2.0 * delta;
            for &t in &times {
                let v = phi_at(phi, h, x, th, t);
                if v < 0.0 {
                    return Err(Error::InvalidParameter(format!("phi{} is negative at x = {x}, t = {t}", i + 1)));
                }
                if near_end && v != 0.0 {
                    return Err(Error::SupportViolation(format!(
                        "phi{} does not vanish near the ends of edge {} (x = {x})",
                        i + 1,
                        i + 1
                    )));
                }
            }
            let vars = expr::vars(x, h * th.cos(), h * th.sin(), 0.0, th, h);
            for n in 0..=flat {
                let d = phi.deriv(&vars, expr::T, n);
                if d.abs() > 1e-12 {
                    let msg = format!("phi{}: t-derivative {n} at t = 0 is {d:e} (x = {x})", i + 1);
                    return Err(if n == 0 { Error::MatchingViolated(msg) } else { Error::InsufficientMatching(msg) });
                }
            }
        }
    }
    let phi0 = &cfg.data.phi0;
    if !phi0.is_zero() {
        for p in node_surface_samples(spec.ell0, 24) {
            let in_port = (0..3).find(|&a| {
                let (b, c) = crate::geometry::transverse_axes(a);
                let r = (p[b] * p[b] + p[c] * p[c]).sqrt();
                (p[a] - spec.ell0).abs() < 1e-12 && r < spec.h[a] + 0.25 * (spec.ell0 - spec.h[a])
            });
            for &t in &times {
                let v = phi0.eval(&expr::vars(p[0], p[1], p[2], t, 0.0, 0.0));
                if v < 0.0 {
                    return Err(Error::InvalidParameter(format!("phi0 is negative at {p:?}")));
                }
                if let Some(a) = in_port {
                    if v != 0.0 {
                        return Err(Error::SupportViolation(format!("phi0 does not vanish near port {}", a + 1)));
                    }
                }
            }
            let vars = expr::vars(p[0], p[1], p[2], 0.0, 0.0, 0.0);
            for n in 0..=flat {
                let d = phi0.deriv(&vars, expr::T, n);
                if d.abs() > 1e-12 {
                    let msg = format!("phi0: t-derivative {n} at t = 0 is {d:e}");
                    return Err(if n == 0 { Error::MatchingViolated(msg) } else { Error::InsufficientMatching(msg) });
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with(network: &str, run: &str) -> String {
        format!("schema_version = 1\n[network]\n{network}\n[run]\n{run}\n")
    }

    #[test]
    fn default_scenario_is_valid() {
        let cfg = RunConfig::default();
        validate(&cfg).unwrap();
        assert_eq!(cfg.mode, Mode::Verify);
        assert_eq!(cfg.m, 2);
        assert_eq!(cfg.vel[0].v(0.5), -2.0);
        assert!(!cfg.data.phi0.is_zero());
    }

    #[test]
    fn window_examples() {
        let ok = RunConfig::parse(&with("alpha = 0.5\ngamma = 0.85", "M = 2")).unwrap();
        validate(&ok).unwrap();
        let low = RunConfig::parse(&with("alpha = 0.5\ngamma = 0.4", "M = 2")).unwrap();
        assert!(matches!(validate(&low), Err(Error::GammaOutOfWindow { .. })));
        let m0 = RunConfig::parse(&with("alpha = 0.5\ngamma = 0.85", "M = 0\nM_list = [1]")).unwrap();
        assert!(matches!(validate(&m0), Err(Error::MOrderTooSmall { .. })));
    }

    #[test]
    fn named_errors() {
        let text = "schema_version = 1\n[velocity]\nv1 = -1\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert!(matches!(validate(&cfg), Err(Error::ConservationViolated { .. })));
        let text = "schema_version = 1\n[data]\nq1 = \"t\"\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert!(matches!(validate(&cfg), Err(Error::MatchingViolated(_))));
        let text = "schema_version = 1\n[data]\nq1 = \"t^2\"\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert!(matches!(validate(&cfg), Err(Error::InsufficientMatching(_))));
        let text = "schema_version = 1\n[data]\nphi1 = \"step(t/0.4)\"\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert!(matches!(validate(&cfg), Err(Error::SupportViolation(_))));
        let text = "schema_version = 1\n[data]\nphi0 = \"step(t/0.4)\"\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert!(matches!(validate(&cfg), Err(Error::SupportViolation(_))));
        let text = "schema_version = 1\n[network]\nh = [0.3, 0.2, 0.2]\nell0 = 0.25\n";
        let cfg = RunConfig::parse(text).unwrap();
        assert!(matches!(validate(&cfg), Err(Error::GeometryOverlap { .. })));
    }

    #[test]
    fn parse_failures() {
        assert!(matches!(RunConfig::parse("[network]\nell0 = 0.3\n"), Err(Error::Parse { .. })));
        assert!(matches!(
            RunConfig::parse("schema_version = 1\n[network]\nbogus = 1\n"),
            Err(Error::Parse { line: 3, .. })
        ));
        assert!(matches!(
            RunConfig::parse("schema_version = 1\n[run]\nmode = \"dance\"\n"),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(RunConfig::parse("schema_version = 2\n"), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn constants_and_numerics() {
        let text = "schema_version = 1\n[constants]\nc = 0.25\n[data]\nq1 = \"c*step(t/0.4)\"\n[numerics]\nedge_nx = 64\nref_scheme = \"euler\"\n";
        let cfg = RunConfig::parse(text).unwrap();
        let q = cfg.data.q[0].eval(&expr::vars(0.0, 0.0, 0.0, 1.0, 0.0, 0.0));
        assert!((q - 0.25).abs() < 1e-15);
        assert_eq!(cfg.numerics.build.edge.nx, 64);
        assert_eq!(cfg.numerics.reference.scheme, TimeScheme::BackwardEuler);
        assert!(cfg.data.phi[0].is_zero());
    }
}
