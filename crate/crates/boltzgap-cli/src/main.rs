//! Command-line sweeps of numerical spectral gaps.

use anyhow::{bail, Context};
use boltzgap::driver::{
    apply_config_file, emit, run, BackendSel, MethodSel, OutputFormat, RunConfig,
};
use boltzgap::grad::NearQuadrature;
use clap::Parser;
use std::path::PathBuf;

/// Compute numerical spectral gaps of linearized Boltzmann collision
/// operators on DG velocity meshes.
#[derive(Debug, Parser)]
#[command(name = "boltzgap", version, about)]
struct Cli {
    /// Velocity dimension (2 or 3)
    #[arg(long, default_value_t = 2)]
    dim: usize,

    /// Potential exponent of the collision kernel
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    gamma: f64,

    /// Angular exponent of the cross-section (< 2)
    #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
    alpha: f64,

    /// Domain half-widths, comma separated
    #[arg(long = "V", value_delimiter = ',', default_values_t = vec![5.0])]
    v: Vec<f64>,

    /// Elements per axis, comma separated
    #[arg(long = "N", value_delimiter = ',', default_values_t = vec![24])]
    n: Vec<usize>,

    /// Lock the element width; N is derived per V as round(2V/dv)
    #[arg(long = "fixed-dv")]
    fixed_dv: Option<f64>,

    /// Basis degree
    #[arg(long, value_parser = ["p0", "p1"], default_value = "p0")]
    basis: String,

    /// Assembly backend
    #[arg(long, value_parser = ["grad", "direct", "both"], default_value = "grad")]
    backend: String,

    /// Constrained eigenvalue method
    #[arg(long, value_parser = ["nullspace", "corrected", "both"], default_value = "nullspace")]
    method: String,

    /// Points per triangle in the direct backend's (v,u) rule
    #[arg(long = "tri-order")]
    tri_order: Option<usize>,

    /// Gauss-Hermite order per plane axis (splitting backend)
    #[arg(long = "plane-order")]
    plane_order: Option<usize>,

    /// Adaptive angular tolerance (direct backend)
    #[arg(long = "ang-tol")]
    ang_tol: Option<f64>,

    /// Assembly worker threads (falls back to BOLTZGAP_THREADS, then all cores)
    #[arg(long)]
    threads: Option<usize>,

    /// Output file for the result records
    #[arg(long)]
    out: Option<PathBuf>,

    /// Output format
    #[arg(long, value_parser = ["csv", "json"], default_value = "csv")]
    format: String,

    /// Dump each assembled matrix under this path prefix
    #[arg(long = "dump-matrix")]
    dump_matrix: Option<PathBuf>,

    /// Cross-section normalization (defaults to on for alpha < 0)
    #[arg(long = "normalize-b", value_parser = ["on", "off"])]
    normalize_b: Option<String>,

    /// Run several sweep points concurrently
    #[arg(long = "parallel-points", default_value_t = false)]
    parallel_points: bool,

    /// Load key=value configuration (applied before the flags above)
    #[arg(long)]
    config: Option<PathBuf>,
}

fn build_config(cli: &Cli) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        apply_config_file(&mut cfg, path)
            .with_context(|| format!("loading {}", path.display()))?;
    }
    let matches = || std::env::args().collect::<Vec<_>>();
    let given = matches();
    let has = |flag: &str| given.iter().any(|a| a == flag || a.starts_with(&format!("{flag}=")));
    // flags override config-file values only when explicitly given
    if has("--dim") || cli.config.is_none() {
        cfg.dim = cli.dim;
    }
    if has("--gamma") || cli.config.is_none() {
        cfg.gamma = cli.gamma;
    }
    if has("--alpha") || cli.config.is_none() {
        cfg.alpha = cli.alpha;
    }
    if has("--V") || cli.config.is_none() {
        cfg.v_list = cli.v.clone();
    }
    if has("--N") || cli.config.is_none() {
        cfg.n_list = cli.n.clone();
    }
    if let Some(dv) = cli.fixed_dv {
        cfg.fixed_dv = Some(dv);
    }
    if has("--basis") || cli.config.is_none() {
        cfg.p = if cli.basis == "p1" { 1 } else { 0 };
    }
    if has("--backend") || cli.config.is_none() {
        cfg.backend = match cli.backend.as_str() {
            "grad" => BackendSel::Grad,
            "direct" => BackendSel::Direct,
            _ => BackendSel::Both,
        };
    }
    if has("--method") || cli.config.is_none() {
        cfg.method = match cli.method.as_str() {
            "nullspace" => MethodSel::Nullspace,
            "corrected" => MethodSel::Corrected,
            _ => MethodSel::Both,
        };
    }
    if let Some(t) = cli.tri_order {
        cfg.quad.tri_order = t;
    }
    if let Some(p) = cli.plane_order {
        cfg.quad.plane_order = p;
        // keep the polar near rule in sync when the user tightens the plane order
        if let NearQuadrature::Polar { radial, .. } = cfg.quad.near {
            cfg.quad.near = NearQuadrature::Polar { angular: p, radial };
        }
    }
    if let Some(t) = cli.ang_tol {
        cfg.quad.ang_tol = t;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    if cli.out.is_some() {
        cfg.out = cli.out.clone();
    }
    if has("--format") || cli.config.is_none() {
        cfg.format = if cli.format == "json" {
            OutputFormat::Json
        } else {
            OutputFormat::Csv
        };
    }
    if cli.dump_matrix.is_some() {
        cfg.dump_matrix = cli.dump_matrix.clone();
    }
    if let Some(nb) = &cli.normalize_b {
        cfg.normalize_b = Some(nb == "on");
    }
    if cli.parallel_points {
        cfg.parallel_points = true;
    }
    Ok(cfg)
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let cfg = build_config(&cli)?;
    cfg.validate().context("invalid configuration")?;

    let report = run(&cfg).context("sweep failed")?;
    for rec in &report.records {
        println!(
            "d={} gamma={} alpha={} V={} N={} p={} backend={} method={} M={} gap={:.9} zeros={} t_asm={:.2}s t_eig={:.2}s",
            rec.d,
            rec.gamma,
            rec.alpha,
            rec.v,
            rec.n,
            rec.p,
            rec.backend,
            rec.method,
            rec.m_dof,
            rec.gap,
            rec.zeros,
            rec.t_asm,
            rec.t_eig
        );
    }
    if report.skipped > 0 {
        eprintln!("skipped {} already-computed records", report.skipped);
    }
    if let Some(out) = &cfg.out {
        // merge with whatever was already there so sweeps are resumable
        let mut all = if out.exists() {
            boltzgap::driver::read_records(out, cfg.format).unwrap_or_default()
        } else {
            Vec::new()
        };
        all.extend(report.records.iter().cloned());
        emit(&all, cfg.format, out, true)?;
        eprintln!("wrote {} records to {}", all.len(), out.display());
    }
    for f in &report.failures {
        eprintln!(
            "point V={} N={} backend={} failed: {}",
            f.v, f.n, f.backend, f.error
        );
    }
    if !report.failures.is_empty() {
        bail!("{} sweep point(s) failed", report.failures.len());
    }
    Ok(())
}
