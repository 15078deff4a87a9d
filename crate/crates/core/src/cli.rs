//! Command-line driver: configuration loading, mode dispatch, artifacts and
//! the run manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::Parser;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{validate, Mode, RunConfig, DEFAULT_CONFIG};
use crate::error::{Error, Result};
use crate::expansion::build_expansion;
use crate::harness::{fit_slope, predicted_orders, sweep, SweepReport};
use crate::reference::{reference_mesh, solve_reference};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_THRESHOLD: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "thinnet", about = "Asymptotic expansion and reference solver for a thin three-arm junction")]
pub struct Args {
    /// Configuration file; the built-in default scenario when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// One of expand, reference, verify, sweep.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated list replacing the configured eps values.
    #[arg(long, value_delimiter = ',')]
    pub eps_override: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Serialize, Debug, Clone, PartialEq)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Serialize, Debug, Clone, PartialEq)]
pub struct Manifest {
    pub mode: String,
    pub seed: u64,
    pub config_sha256: String,
    pub files: Vec<FileEntry>,
}

/// Failure of a run, mapped to an exit code by [`Failure::code`].
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Config(Error),
    Solver(Error),
    Threshold(Vec<String>),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) | Failure::Config(_) => EXIT_USAGE,
            Failure::Solver(_) => EXIT_SOLVER,
            Failure::Threshold(_) => EXIT_THRESHOLD,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(s) => write!(f, "usage: {s}"),
            Failure::Config(e) => write!(f, "config: {e}"),
            Failure::Solver(e) => write!(f, "solver: {e}"),
            Failure::Threshold(v) => write!(f, "verification thresholds failed: {}", v.join("; ")),
        }
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    format!("{:x}", Sha256::digest(data))
}

struct Writer {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn put(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.dir.join(name);
        if let Some(p) = path.parent() {
            fs::create_dir_all(p)?;
        }
        fs::write(&path, text)?;
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: text.len() as u64,
            sha256: sha256_hex(text.as_bytes()),
        });
        Ok(())
    }
}

/// Applies the command-line overrides to a parsed configuration.
pub fn apply_overrides(cfg: &mut RunConfig, args: &Args) -> std::result::Result<(), Failure> {
    if let Some(m) = &args.mode {
        cfg.mode = m.parse::<Mode>().map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if let Some(d) = &args.out {
        cfg.out_dir = d.clone();
    }
    if let Some(e) = &args.eps_override {
        cfg.eps_list = e.clone();
        if let Some(first) = e.first() {
            cfg.spec.eps = *first;
        }
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
        cfg.numerics.build.seed = s;
    }
    Ok(())
}

fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Expand => "expand",
        Mode::Reference => "reference",
        Mode::Verify => "verify",
        Mode::Sweep => "sweep",
    }
}

fn write_expand(cfg: &RunConfig, w: &mut Writer) -> Result<()> {
    let mut build = cfg.numerics.build.clone();
    build.m = cfg.m;
    build.seed = cfg.seed;
    let set = build_expansion(&cfg.spec, &cfg.vel, &cfg.data, &build)?;
    let mut summary = String::from("order,symbol,edge,max_abs\n");
    for (e, c) in set.coeffs.iter() {
        let label = e.label();
        for (i, edge) in c.graph.edges.iter().enumerate() {
            w.put(&format!("coefficients/w_{label}_edge{}.csv", i + 1), &edge.to_csv())?;
            let _ = writeln!(summary, "{label},w,{},{:e}", i + 1, edge.max_abs());
        }
        for (i, u) in c.disks.iter().enumerate() {
            let _ = writeln!(summary, "{label},u,{},{:e}", i + 1, u.max_abs(&set.disk_solvers[i]));
        }
        let nt = c.node.t_grid.n;
        w.put(&format!("coefficients/N_{label}.txt"), &c.node.csv(nt))?;
        let _ = writeln!(summary, "{label},N,0,{:e}", c.node.max_abs);
        for l in &c.layers {
            let tg = l.coeffs.first().map(|s| s.grid);
            let mut s = String::from("t");
            for k in 0..l.coeffs.len() {
                let _ = write!(s, ",c{k}");
            }
            s.push('\n');
            if let Some(tg) = tg {
                for n in 0..tg.len() {
                    let t = tg.node(n);
                    let _ = write!(s, "{t}");
                    for c in &l.coeffs {
                        let _ = write!(s, ",{:e}", c.at(t));
                    }
                    s.push('\n');
                }
            }
            w.put(&format!("coefficients/Pi_{label}_edge{}.csv", l.edge + 1), &s)?;
            let _ = writeln!(summary, "{label},Pi,{},{:e}", l.edge + 1, l.coeffs.iter().map(|c| c.max_abs()).fold(0.0, f64::max));
        }
    }
    w.put("coefficients.csv", &summary)?;
    w.put("inventory.txt", &(set.inventory().join("\n") + "\n"))?;
    let mut audit = String::from("target,source\n");
    for d in &set.audit {
        let _ = writeln!(audit, "{},{}", d.target, d.source);
    }
    w.put("dependencies.csv", &audit)
}

fn write_reference(cfg: &RunConfig, w: &mut Writer) -> Result<()> {
    let eps_list = if cfg.eps_list.is_empty() { vec![cfg.spec.eps] } else { cfg.eps_list.clone() };
    let mut summary = String::from("eps,cells,surface_area_defect,max_ledger_defect,temporal_error,min_value\n");
    for eps in eps_list {
        let mut spec = cfg.spec.clone();
        spec.eps = eps;
        let mesh = Arc::new(reference_mesh(&spec, cfg.numerics.reference.cells_per_radius)?);
        let r = solve_reference(&spec, &cfg.vel, &cfg.data, mesh, &cfg.numerics.reference, 10)?;
        let _ = writeln!(
            summary,
            "{eps},{},{:e},{:e},{:e},{:e}",
            r.mesh.cells.len(),
            r.surface_area_defect,
            r.max_ledger_defect(),
            r.temporal_error,
            r.min_value
        );
        let mut ledger = String::from("t,mass,rate,lateral,dirichlet,defect\n");
        for l in &r.ledger {
            let _ = writeln!(ledger, "{},{:e},{:e},{:e},{:e},{:e}", l.t, l.mass, l.rate, l.lateral, l.dirichlet, l.defect);
        }
        w.put(&format!("reference/ledger_eps{eps}.csv"), &ledger)?;
        w.put(&format!("reference/final_eps{eps}.csv"), &r.snapshot_csv(r.times.len() - 1))?;
    }
    w.put("reference/summary.csv", &summary)
}

/// Acceptance thresholds of verify mode; returns the failed checks.
pub fn check_thresholds(cfg: &RunConfig, rep: &SweepReport) -> Vec<String> {
    let mut failed = Vec::new();
    let fl = cfg.spec.alpha.floor();
    let gamma = cfg.spec.gamma;
    let m_list: Vec<usize> = if cfg.m_list.is_empty() { vec![cfg.m] } else { cfg.m_list.clone() };
    for &m in &m_list {
        let rs: Vec<_> = rep.residuals.iter().filter(|r| r.m == m).collect();
        let eps: Vec<f64> = rs.iter().map(|r| r.eps).collect();
        let blend: Vec<f64> = rs.iter().map(|r| r.sup_over("blend")).collect();
        let want = predicted_orders(m, cfg.spec.alpha, gamma).blend;
        if want > 0.0 {
            if let Some(s) = fit_slope(&eps, &blend) {
                if s.slope < want - 0.25 {
                    failed.push(format!("M={m}: blend residual slope {:.3} < {:.3}", s.slope, want - 0.25));
                }
            }
        }
    }
    for c in &rep.convergence {
        let rate = gamma * (c.m as f64 + fl);
        if let Some(s) = c.sup_slope {
            if s.slope < rate - 0.25 {
                failed.push(format!("M={}: sup error slope {:.3} < {:.3}", c.m, s.slope, rate - 0.25));
            }
        }
        if let Some(s) = c.energy_slope {
            if s.slope < rate - 0.75 {
                failed.push(format!("M={}: energy error slope {:.3} < {:.3}", c.m, s.slope, rate - 0.75));
            }
        }
    }
    failed
}

fn write_sweep(rep: &SweepReport, w: &mut Writer, formats: &[String]) -> Result<()> {
    w.put("residuals.csv", &rep.residual_csv())?;
    if !rep.convergence.is_empty() {
        w.put("convergence.csv", &rep.convergence_csv())?;
        let mut s = String::from("eps,surface_area_defect,max_ledger_defect\n");
        for (e, a, l) in &rep.reference {
            let _ = writeln!(s, "{e},{a:e},{l:e}");
        }
        w.put("reference.csv", &s)?;
        if formats.iter().any(|f| f == "gnuplot") {
            w.put("convergence.dat", &rep.gnuplot())?;
        }
    }
    Ok(())
}

/// Runs a validated configuration, writing artifacts and `manifest.toml`
/// into `cfg.out_dir`.
pub fn run(cfg: &RunConfig, config_text: &str) -> std::result::Result<Manifest, Failure> {
    validate(cfg).map_err(Failure::Config)?;
    let mut w = Writer::new(&cfg.out_dir).map_err(Failure::Solver)?;
    w.put("config.toml", config_text).map_err(Failure::Solver)?;
    let mut failed = Vec::new();
    match cfg.mode {
        Mode::Expand => write_expand(cfg, &mut w).map_err(Failure::Solver)?,
        Mode::Reference => write_reference(cfg, &mut w).map_err(Failure::Solver)?,
        Mode::Verify | Mode::Sweep => {
            let rep = sweep(cfg, true).map_err(Failure::Solver)?;
            write_sweep(&rep, &mut w, &cfg.formats).map_err(Failure::Solver)?;
            if cfg.mode == Mode::Verify {
                failed = check_thresholds(cfg, &rep);
            }
        }
    }
    let manifest = Manifest {
        mode: mode_name(cfg.mode).into(),
        seed: cfg.seed,
        config_sha256: sha256_hex(config_text.as_bytes()),
        files: w.files.clone(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Failure::Solver(Error::Io(e.to_string())))?;
    fs::write(cfg.out_dir.join("manifest.toml"), text).map_err(|e| Failure::Solver(e.into()))?;
    if failed.is_empty() {
        Ok(manifest)
    } else {
        Err(Failure::Threshold(failed))
    }
}

/// Full entry point; returns the process exit code.
pub fn main_with(argv: &[String]) -> i32 {
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Some(n) = args.threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let text = match &args.config {
        Some(p) => match fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("cannot read {}: {e}", p.display());
                return EXIT_USAGE;
            }
        },
        None => DEFAULT_CONFIG.to_string(),
    };
    let mut cfg = match RunConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config: {e}");
            return EXIT_USAGE;
        }
    };
    if let Err(f) = apply_overrides(&mut cfg, &args) {
        eprintln!("{f}");
        return f.code();
    }
    match run(&cfg, &text) {
        Ok(m) => {
            println!("wrote {} files to {}", m.files.len() + 1, cfg.out_dir.display());
            EXIT_OK
        }
        Err(f) => {
            eprintln!("{f}");
            f.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &[&str]) -> Vec<String> {
        std::iter::once("thinnet").chain(s.iter().copied()).map(String::from).collect()
    }

    #[test]
    fn unknown_mode_is_usage_error() {
        assert_eq!(main_with(&argv(&["--mode", "explode"])), EXIT_USAGE);
        assert_eq!(main_with(&argv(&["--bogus"])), EXIT_USAGE);
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = RunConfig::default();
        let args = Args::try_parse_from(argv(&["--eps-override", "0.2,0.1", "--seed", "9", "--mode", "expand"])).unwrap();
        apply_overrides(&mut cfg, &args).unwrap();
        assert_eq!(cfg.eps_list, vec![0.2, 0.1]);
        assert_eq!(cfg.spec.eps, 0.2);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.mode, Mode::Expand);
    }

    #[test]
    fn invalid_config_exit_code() {
        let dir = std::env::temp_dir().join(format!("thinnet-cli-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("bad.toml");
        fs::write(&p, "schema_version = 1\n[network]\ngamma = 0.4\n").unwrap();
        assert_eq!(main_with(&argv(&["--config", p.to_str().unwrap()])), EXIT_USAGE);
        fs::remove_dir_all(&dir).unwrap();
    }
}
