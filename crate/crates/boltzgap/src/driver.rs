//! Sweep orchestration: configuration, execution over (V, N) points, and
//! persistence of results as CSV/JSON with resumability.

use crate::assembly::{assemble_direct, dump_matrix, Backend, CollisionMatrix, DirectOptions};
use crate::constraints::constraint_matrix;
use crate::error::{Error, Result};
use crate::grad::{assemble_grad, GradQuadrature, NearQuadrature};
use crate::kernels::NuProfile;
use crate::mesh::{build_mesh, BasisSpec, OperatorParams};
use crate::spectra::{spectral_gap_with, EigMode, GapMethod};
use crate::sphere::SweepOptions;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendSel {
    Grad,
    Direct,
    Both,
}

impl BackendSel {
    pub fn list(&self) -> Vec<Backend> {
        match self {
            BackendSel::Grad => vec![Backend::Grad],
            BackendSel::Direct => vec![Backend::Direct],
            BackendSel::Both => vec![Backend::Grad, Backend::Direct],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MethodSel {
    Nullspace,
    Corrected,
    Both,
}

impl MethodSel {
    pub fn list(&self) -> Vec<GapMethod> {
        match self {
            MethodSel::Nullspace => vec![GapMethod::Nullspace],
            MethodSel::Corrected => vec![GapMethod::Corrected],
            MethodSel::Both => vec![GapMethod::Nullspace, GapMethod::Corrected],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Quadrature knobs shared by both backends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadSettings {
    /// points per triangle for the direct backend's (v, u) rule
    pub tri_order: usize,
    /// Gauss–Hermite order per plane axis (splitting backend)
    pub plane_order: usize,
    /// angular adaptive tolerance (direct backend)
    pub ang_tol: f64,
    /// per-axis Gauss order for far kernel blocks (splitting backend)
    pub kernel_order: usize,
    /// per-axis Gauss order for the collision-frequency term
    pub nu_order: usize,
    pub near: NearQuadrature,
    pub near_radius: usize,
}

impl Default for QuadSettings {
    fn default() -> Self {
        Self {
            tri_order: 3,
            plane_order: 32,
            ang_tol: 1e-7,
            kernel_order: 3,
            nu_order: 4,
            near: NearQuadrature::Polar {
                angular: 32,
                radial: 10,
            },
            near_radius: 1,
        }
    }
}

impl QuadSettings {
    pub fn grad(&self, d: usize) -> GradQuadrature {
        let near = match self.near {
            NearQuadrature::Polar { .. } if d == 3 => {
                // keep the 3d default lighter unless explicitly overridden
                if self.near
                    == (NearQuadrature::Polar {
                        angular: 32,
                        radial: 10,
                    })
                {
                    NearQuadrature::Polar {
                        angular: 16,
                        radial: 8,
                    }
                } else {
                    self.near
                }
            }
            other => other,
        };
        GradQuadrature {
            kernel_order: self.kernel_order,
            nu_order: self.nu_order,
            plane_order: self.plane_order,
            near,
            near_radius: self.near_radius,
        }
    }

    pub fn direct(&self, memory_budget: usize) -> DirectOptions {
        DirectOptions {
            rule: crate::assembly::TriangleRule {
                points_per_triangle: self.tri_order,
            },
            sweep: SweepOptions {
                tol: self.ang_tol,
                ..SweepOptions::default()
            },
            prune_threshold: 1e-16,
            memory_budget,
            chunks: 16,
        }
    }
}

/// Full description of a sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub dim: usize,
    pub gamma: f64,
    pub alpha: f64,
    /// None = normalized exactly when alpha < 0
    pub normalize_b: Option<bool>,
    pub v_list: Vec<f64>,
    pub n_list: Vec<usize>,
    /// when set, N is derived per V as round(2 V / dv)
    pub fixed_dv: Option<f64>,
    pub p: usize,
    pub backend: BackendSel,
    pub method: MethodSel,
    pub quad: QuadSettings,
    pub threads: Option<usize>,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    pub dump_matrix: Option<PathBuf>,
    pub parallel_points: bool,
    pub eig_mode: EigMode,
    pub memory_budget: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            gamma: 0.0,
            alpha: -1.0,
            normalize_b: None,
            v_list: vec![5.0],
            n_list: vec![24],
            fixed_dv: None,
            p: 0,
            backend: BackendSel::Grad,
            method: MethodSel::Nullspace,
            quad: QuadSettings::default(),
            threads: None,
            out: None,
            format: OutputFormat::Csv,
            dump_matrix: None,
            parallel_points: false,
            eig_mode: EigMode::Auto,
            memory_budget: 3 << 30,
        }
    }
}

impl RunConfig {
    pub fn params(&self) -> Result<OperatorParams> {
        match self.normalize_b {
            Some(on) => OperatorParams::with_normalization(self.dim, self.gamma, self.alpha, on),
            None => OperatorParams::new(self.dim, self.gamma, self.alpha),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params()?;
        BasisSpec::new(self.p)?;
        if matches!(self.backend, BackendSel::Grad | BackendSel::Both) && self.alpha >= 0.0 {
            return Err(Error::Config(
                "backend 'grad' requires alpha < 0; use the direct backend".into(),
            ));
        }
        if self.fixed_dv.is_none() && self.n_list.is_empty() && !self.v_list.is_empty() {
            return Err(Error::Config("no N values given".into()));
        }
        Ok(())
    }

    /// Sweep points: the Cartesian product of V and N, or dv-locked pairs.
    pub fn points(&self) -> Vec<(f64, usize)> {
        match self.fixed_dv {
            Some(dv) => self
                .v_list
                .iter()
                .map(|&v| (v, (2.0 * v / dv).round() as usize))
                .collect(),
            None => self
                .v_list
                .iter()
                .flat_map(|&v| self.n_list.iter().map(move |&n| (v, n)))
                .collect(),
        }
    }

    pub fn resolve_threads(&self) -> usize {
        self.threads
            .or_else(|| {
                std::env::var("BOLTZGAP_THREADS")
                    .ok()
                    .and_then(|s| s.parse().ok())
            })
            .unwrap_or_else(|| {
                std::thread::available_parallelism()
                    .map(|n| n.get())
                    .unwrap_or(1)
            })
    }
}

/// One row of output per (point, backend, method).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ResultRecord {
    pub d: usize,
    pub gamma: f64,
    pub alpha: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub p: usize,
    pub backend: String,
    pub method: String,
    #[serde(rename = "M")]
    pub m_dof: usize,
    pub gap: f64,
    /// first d+6 eigenvalues of the solved constrained problem
    pub eigs: Vec<f64>,
    pub zeros: usize,
    pub t_asm: f64,
    pub t_eig: f64,
}

impl ResultRecord {
    fn key(&self) -> RecordKey {
        RecordKey {
            d: self.d,
            gamma: self.gamma.to_bits(),
            alpha: self.alpha.to_bits(),
            v: self.v.to_bits(),
            n: self.n,
            p: self.p,
            backend: self.backend.clone(),
            method: self.method.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct RecordKey {
    d: usize,
    gamma: u64,
    alpha: u64,
    v: u64,
    n: usize,
    p: usize,
    backend: String,
    method: String,
}

#[derive(Debug)]
pub struct PointFailure {
    pub v: f64,
    pub n: usize,
    pub backend: Backend,
    pub error: Error,
}

#[derive(Debug, Default)]
pub struct RunReport {
    pub records: Vec<ResultRecord>,
    pub failures: Vec<PointFailure>,
    pub skipped: usize,
}

/// Assemble one backend at one point.
fn assemble_point(
    params: &OperatorParams,
    mesh: &crate::mesh::Mesh,
    basis: &BasisSpec,
    backend: Backend,
    cfg: &RunConfig,
) -> Result<CollisionMatrix> {
    match backend {
        Backend::Grad => {
            let nu = NuProfile::for_mesh(*params, mesh)?;
            assemble_grad(
                mesh,
                basis,
                params,
                &nu,
                &cfg.quad.grad(mesh.d),
                cfg.memory_budget,
            )
        }
        Backend::Direct => assemble_direct(mesh, basis, params, &cfg.quad.direct(cfg.memory_budget)),
    }
}

/// Execute the sweep. Failed points are recorded and skipped; previously
/// emitted records found in the output file are not recomputed.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let params = cfg.params()?;
    let basis = BasisSpec::new(cfg.p)?;
    let existing: HashSet<RecordKey> = match &cfg.out {
        Some(path) if path.exists() => read_records(path, cfg.format)?
            .into_iter()
            .map(|r| r.key())
            .collect(),
        _ => HashSet::new(),
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.resolve_threads())
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut report = RunReport::default();
    let points = cfg.points();
    for (v, n) in points {
        let mesh = match build_mesh(v, n, cfg.dim) {
            Ok(m) => m,
            Err(e) => {
                report.failures.push(PointFailure {
                    v,
                    n,
                    backend: Backend::Grad,
                    error: e,
                });
                continue;
            }
        };
        for backend in cfg.backend.list() {
            let key_probe = |method: &GapMethod| RecordKey {
                d: cfg.dim,
                gamma: cfg.gamma.to_bits(),
                alpha: cfg.alpha.to_bits(),
                v: v.to_bits(),
                n,
                p: cfg.p,
                backend: backend.to_string(),
                method: method.to_string(),
            };
            let methods: Vec<GapMethod> = cfg
                .method
                .list()
                .into_iter()
                .filter(|m| !existing.contains(&key_probe(m)))
                .collect();
            if methods.is_empty() {
                report.skipped += cfg.method.list().len();
                continue;
            }
            let assembled = pool.install(|| assemble_point(&params, &mesh, &basis, backend, cfg));
            let g = match assembled {
                Ok(g) => g,
                Err(error) => {
                    report.failures.push(PointFailure {
                        v,
                        n,
                        backend,
                        error,
                    });
                    continue;
                }
            };
            if let Some(dump) = &cfg.dump_matrix {
                let path = dump_path(dump, v, n, backend);
                match std::fs::File::create(&path) {
                    Ok(f) => {
                        if let Err(e) = dump_matrix(&g, std::io::BufWriter::new(f)) {
                            report.failures.push(PointFailure {
                                v,
                                n,
                                backend,
                                error: e,
                            });
                        }
                    }
                    Err(e) => report.failures.push(PointFailure {
                        v,
                        n,
                        backend,
                        error: e.into(),
                    }),
                }
            }
            let cs = constraint_matrix(&mesh, &basis, g.representation);
            for method in methods {
                match spectral_gap_with(&g, &cs, method, cfg.eig_mode) {
                    Ok(spec) => {
                        let keep = cfg.dim + 6;
                        report.records.push(ResultRecord {
                            d: cfg.dim,
                            gamma: cfg.gamma,
                            alpha: cfg.alpha,
                            v,
                            n,
                            p: cfg.p,
                            backend: backend.to_string(),
                            method: method.to_string(),
                            m_dof: g.n_dof(),
                            gap: spec.gap,
                            eigs: spec.eigenvalues.iter().copied().take(keep).collect(),
                            zeros: spec.zero_modes,
                            t_asm: g.diagnostics.assembly_seconds,
                            t_eig: spec.eigensolve_seconds,
                        });
                    }
                    Err(error) => report.failures.push(PointFailure {
                        v,
                        n,
                        backend,
                        error,
                    }),
                }
            }
        }
    }
    Ok(report)
}

fn dump_path(base: &Path, v: f64, n: usize, backend: Backend) -> PathBuf {
    let stem = base.to_string_lossy();
    PathBuf::from(format!("{stem}.V{v}_N{n}_{backend}.bgap"))
}

const CSV_HEADER: &str =
    "d,gamma,alpha,V,N,p,backend,method,M,gap,eig1,eig2,eig3,eig4,eig5,eig6,eig7,eig8,eig9,zeros,t_asm,t_eig";

fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serialize records; CSV uses the fixed header with 17-significant-digit
/// reals, JSON mirrors the fields one to one.
pub fn emit(records: &[ResultRecord], format: OutputFormat, path: &Path, allow_empty: bool) -> Result<()> {
    if records.is_empty() && !allow_empty {
        return Err(Error::Config("refusing to write an empty record set".into()));
    }
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    match format {
        OutputFormat::Csv => {
            writeln!(w, "{CSV_HEADER}")?;
            for r in records {
                let mut eigs: Vec<String> = r.eigs.iter().map(|e| fmt_real(*e)).collect();
                eigs.resize(9, String::new());
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.d,
                    fmt_real(r.gamma),
                    fmt_real(r.alpha),
                    fmt_real(r.v),
                    r.n,
                    r.p,
                    r.backend,
                    r.method,
                    r.m_dof,
                    fmt_real(r.gap),
                    eigs.join(","),
                    r.zeros,
                    format!("{},{}", fmt_real(r.t_asm), fmt_real(r.t_eig)),
                )?;
            }
        }
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut w, records)?;
            writeln!(w)?;
        }
    }
    Ok(())
}

/// Parse an output file back into records (used for resumability and tests).
pub fn read_records(path: &Path, format: OutputFormat) -> Result<Vec<ResultRecord>> {
    let text = std::fs::read_to_string(path)?;
    match format {
        OutputFormat::Json => Ok(serde_json::from_str(&text)?),
        OutputFormat::Csv => {
            let mut out = Vec::new();
            for (i, line) in text.lines().enumerate() {
                if i == 0 || line.trim().is_empty() {
                    continue;
                }
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 22 {
                    return Err(Error::Config(format!(
                        "csv row has {} fields, expected 22",
                        f.len()
                    )));
                }
                let parse = |s: &str| -> Result<f64> {
                    s.parse()
                        .map_err(|_| Error::Config(format!("bad real '{s}'")))
                };
                let eigs: Vec<f64> = f[10..19]
                    .iter()
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(s))
                    .collect::<Result<_>>()?;
                out.push(ResultRecord {
                    d: f[0].parse().map_err(|_| Error::Config("bad d".into()))?,
                    gamma: parse(f[1])?,
                    alpha: parse(f[2])?,
                    v: parse(f[3])?,
                    n: f[4].parse().map_err(|_| Error::Config("bad N".into()))?,
                    p: f[5].parse().map_err(|_| Error::Config("bad p".into()))?,
                    backend: f[6].to_string(),
                    method: f[7].to_string(),
                    m_dof: f[8].parse().map_err(|_| Error::Config("bad M".into()))?,
                    gap: parse(f[9])?,
                    eigs,
                    zeros: f[19].parse().map_err(|_| Error::Config("bad zeros".into()))?,
                    t_asm: parse(f[20])?,
                    t_eig: parse(f[21])?,
                });
            }
            Ok(out)
        }
    }
}

/// Flat key=value configuration files mirroring the CLI flags.
pub fn apply_config_file(cfg: &mut RunConfig, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{}:{}: expected key=value",
                path.display(),
                lineno + 1
            )));
        };
        apply_key(cfg, key.trim(), value.trim()).map_err(|e| {
            Error::Config(format!("{}:{}: {}", path.display(), lineno + 1, e))
        })?;
    }
    Ok(())
}

fn apply_key(cfg: &mut RunConfig, key: &str, value: &str) -> Result<()> {
    let bad = |k: &str, v: &str| Error::Config(format!("invalid value '{v}' for key '{k}'"));
    match key {
        "dim" => cfg.dim = value.parse().map_err(|_| bad(key, value))?,
        "gamma" => cfg.gamma = value.parse().map_err(|_| bad(key, value))?,
        "alpha" => cfg.alpha = value.parse().map_err(|_| bad(key, value))?,
        "V" => {
            cfg.v_list = value
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| bad(key, value)))
                .collect::<Result<_>>()?
        }
        "N" => {
            cfg.n_list = value
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| bad(key, value)))
                .collect::<Result<_>>()?
        }
        "fixed-dv" => cfg.fixed_dv = Some(value.parse().map_err(|_| bad(key, value))?),
        "basis" => {
            cfg.p = match value {
                "p0" => 0,
                "p1" => 1,
                _ => return Err(bad(key, value)),
            }
        }
        "backend" => {
            cfg.backend = match value {
                "grad" => BackendSel::Grad,
                "direct" => BackendSel::Direct,
                "both" => BackendSel::Both,
                _ => return Err(bad(key, value)),
            }
        }
        "method" => {
            cfg.method = match value {
                "nullspace" => MethodSel::Nullspace,
                "corrected" => MethodSel::Corrected,
                "both" => MethodSel::Both,
                _ => return Err(bad(key, value)),
            }
        }
        "tri-order" => cfg.quad.tri_order = value.parse().map_err(|_| bad(key, value))?,
        "plane-order" => cfg.quad.plane_order = value.parse().map_err(|_| bad(key, value))?,
        "ang-tol" => cfg.quad.ang_tol = value.parse().map_err(|_| bad(key, value))?,
        "kernel-order" => cfg.quad.kernel_order = value.parse().map_err(|_| bad(key, value))?,
        "nu-order" => cfg.quad.nu_order = value.parse().map_err(|_| bad(key, value))?,
        "near-mode" => {
            cfg.quad.near = match value {
                "polar" => NearQuadrature::Polar {
                    angular: 32,
                    radial: 10,
                },
                "tensor" => NearQuadrature::TensorOffset { depth: 0 },
                _ => return Err(bad(key, value)),
            }
        }
        "near-depth" => {
            cfg.quad.near = NearQuadrature::TensorOffset {
                depth: value.parse().map_err(|_| bad(key, value))?,
            }
        }
        "threads" => cfg.threads = Some(value.parse().map_err(|_| bad(key, value))?),
        "out" => cfg.out = Some(PathBuf::from(value)),
        "format" => {
            cfg.format = match value {
                "csv" => OutputFormat::Csv,
                "json" => OutputFormat::Json,
                _ => return Err(bad(key, value)),
            }
        }
        "dump-matrix" => cfg.dump_matrix = Some(PathBuf::from(value)),
        "normalize-b" => {
            cfg.normalize_b = Some(match value {
                "on" => true,
                "off" => false,
                _ => return Err(bad(key, value)),
            })
        }
        "parallel-points" => {
            cfg.parallel_points = value.parse().map_err(|_| bad(key, value))?
        }
        "memory-budget-gb" => {
            let gb: f64 = value.parse().map_err(|_| bad(key, value))?;
            cfg.memory_budget = (gb * (1u64 << 30) as f64) as usize;
        }
        other => return Err(Error::Config(format!("unknown config key '{other}'"))),
    }
    Ok(())
}
