//! The collision matrix type shared by both backends, plus the direct
//! (sphere-quadrature) assembly of the Dirichlet form in the
//! g-representation.
//!
//! The direct backend integrates over source pairs `(v, v - u)` with
//! pair-of-triangles rules on the per-axis (v_i, u_i) parallelograms and
//! resolves the angular integrals per target cell in one sweep of the
//! collision sphere. It is the only backend valid for non-integrable
//! cross-sections (`0 <= alpha < 2`).

use crate::error::{Error, Result};
use crate::kernels::CrossSection;
use crate::linalg::{symmetrize, PackedSymF32};
use crate::mesh::{BasisSpec, CoefficientVector, Mesh, OperatorParams, Representation};
use crate::quadrature::triangle_points;
use crate::sphere::{sweep_all_targets, SweepOptions, SweepScratch};
use ndarray::Array2;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Backend {
    Grad,
    Direct,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backend::Grad => write!(f, "grad"),
            Backend::Direct => write!(f, "direct"),
        }
    }
}

/// Dense or memory-lean packed storage of the symmetric matrix.
pub enum MatrixStore {
    Dense(Array2<f64>),
    PackedF32(PackedSymF32),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AssemblyDiagnostics {
    /// largest |G - G^T| entry before symmetrization
    pub max_asym: f64,
    pub pruned_pairs: usize,
    pub angular_failures: usize,
    pub assembly_seconds: f64,
}

/// Galerkin matrix of the Dirichlet form, tagged with its representation and
/// the backend that produced it.
pub struct CollisionMatrix {
    pub store: MatrixStore,
    pub representation: Representation,
    pub backend: Backend,
    pub params: OperatorParams,
    pub mesh: Mesh,
    pub basis: BasisSpec,
    pub diagnostics: AssemblyDiagnostics,
}

impl CollisionMatrix {
    pub fn n_dof(&self) -> usize {
        match &self.store {
            MatrixStore::Dense(a) => a.nrows(),
            MatrixStore::PackedF32(p) => p.n,
        }
    }

    pub fn dense(&self) -> Result<&Array2<f64>> {
        match &self.store {
            MatrixStore::Dense(a) => Ok(a),
            MatrixStore::PackedF32(_) => Err(Error::Unsupported(
                "operation requires the dense matrix store".into(),
            )),
        }
    }

    /// Scale used for zero thresholds: the largest diagonal magnitude.
    pub fn norm_scale(&self) -> f64 {
        match &self.store {
            MatrixStore::Dense(a) => a.diag().fold(0.0f64, |m, &x| m.max(x.abs())),
            MatrixStore::PackedF32(p) => p
                .diagonal()
                .iter()
                .fold(0.0f64, |m, &x| m.max(x.abs())),
        }
    }
}

/// Quadratic form `x^T G x`.
pub fn quadratic_form(g: &CollisionMatrix, x: &CoefficientVector) -> Result<f64> {
    if x.representation != g.representation {
        return Err(Error::RepresentationMismatch(format!(
            "matrix is {}-rep, vector is {}-rep",
            g.representation, x.representation
        )));
    }
    if x.values.len() != g.n_dof() {
        return Err(Error::DimensionMismatch(format!(
            "matrix has {} dof, vector {}",
            g.n_dof(),
            x.values.len()
        )));
    }
    match &g.store {
        MatrixStore::Dense(a) => {
            let mut acc = 0.0;
            for (i, xi) in x.values.iter().enumerate() {
                if *xi == 0.0 {
                    continue;
                }
                let row = a.row(i);
                let mut s = 0.0;
                for (j, xj) in x.values.iter().enumerate() {
                    s += row[j] * xj;
                }
                acc += xi * s;
            }
            Ok(acc)
        }
        MatrixStore::PackedF32(p) => {
            let mut y = vec![0.0; p.n];
            p.symv(&x.values, &mut y);
            Ok(x.values.iter().zip(&y).map(|(a, b)| a * b).sum())
        }
    }
}

/// Pair-of-triangles Gauss rule over the per-axis (v_i, u_i) parallelogram.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TriangleRule {
    pub points_per_triangle: usize,
}

impl Default for TriangleRule {
    fn default() -> Self {
        Self {
            points_per_triangle: 3,
        }
    }
}

impl TriangleRule {
    /// Nodes `(v_i, u_i, w)` for `v_i in [a, a+h)`, `v_i - u_i in [b, b+h)`.
    /// The (v, t) square with `t = v - u` splits along its diagonal into two
    /// triangles, each carrying the reference rule.
    pub fn nodes_1d(&self, a: f64, b: f64, h: f64) -> Result<Vec<(f64, f64, f64)>> {
        let ref_pts = triangle_points(self.points_per_triangle)?;
        let mut out = Vec::with_capacity(2 * ref_pts.len());
        // triangle 1: vertices (0,0), (1,0), (1,1) in square coordinates
        // triangle 2: vertices (0,0), (1,1), (0,1)
        for ([x, y], w) in &ref_pts {
            let (sx, sy) = (x + y, *y);
            let v = a + h * sx;
            let t = b + h * sy;
            out.push((v, v - t, w * h * h));
        }
        for ([x, y], w) in &ref_pts {
            let (sx, sy) = (*x, x + y);
            let v = a + h * sx;
            let t = b + h * sy;
            out.push((v, v - t, w * h * h));
        }
        Ok(out)
    }
}

/// Options for the direct backend.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DirectOptions {
    pub rule: TriangleRule,
    pub sweep: SweepOptions,
    /// source pairs whose Maxwellian weight bound falls below this are skipped
    pub prune_threshold: f64,
    pub memory_budget: usize,
    /// fixed number of accumulation chunks (summation order is chunk-major,
    /// independent of the worker count)
    pub chunks: usize,
}

impl Default for DirectOptions {
    fn default() -> Self {
        Self {
            rule: TriangleRule::default(),
            sweep: SweepOptions::default(),
            prune_threshold: 1e-16,
            memory_budget: 3 << 30,
            chunks: 16,
        }
    }
}

/// Direct assembly of the g-representation collision matrix; the quadratic
/// form carries the sign of the Dirichlet form (nonnegative).
pub fn assemble_direct(
    mesh: &Mesh,
    basis: &BasisSpec,
    params: &OperatorParams,
    opts: &DirectOptions,
) -> Result<CollisionMatrix> {
    let mut out = assemble_direct_multi(mesh, basis, params, &[params.gamma], opts)?;
    Ok(out.pop().expect("one gamma"))
}

/// Assemble matrices for several potential exponents in one pass: the angular
/// sweeps are gamma-independent, only the `|u|^gamma` weight differs.
pub fn assemble_direct_multi(
    mesh: &Mesh,
    basis: &BasisSpec,
    params: &OperatorParams,
    gammas: &[f64],
    opts: &DirectOptions,
) -> Result<Vec<CollisionMatrix>> {
    if params.alpha >= 2.0 {
        return Err(Error::InvalidParameter("alpha must be < 2".into()));
    }
    let start = Instant::now();
    let d = mesh.d;
    let nl = basis.n_local(d);
    let ncell = mesh.n_cells();
    let m_dof = ncell * nl;
    let ngam = gammas.len();
    let bytes = m_dof * m_dof * 8;
    if bytes > opts.memory_budget {
        return Err(Error::MemoryBudget {
            bytes,
            budget: opts.memory_budget,
        });
    }
    let cs = CrossSection::new(*params);
    let vol = mesh.cell_volume();
    let mu_pref = (2.0 * PI).powi(-(d as i32));
    let log_prune = opts.prune_threshold.ln() - mu_pref.ln();

    // minimal |v|^2 over each cell, for the pruning bound
    let r2min: Vec<f64> = (0..ncell)
        .map(|c| {
            let (lo, hi) = mesh.bounds(mesh.multi(c));
            let mut r2 = 0.0;
            for j in 0..d {
                let gap = if lo[j] > 0.0 {
                    lo[j]
                } else if hi[j] < 0.0 {
                    -hi[j]
                } else {
                    0.0
                };
                r2 += gap * gap;
            }
            r2
        })
        .collect();

    // per-dimension triangle nodes cache: indexed by (k_i, kbar_i)
    let lo_of = |i: usize| -mesh.v_max + i as f64 * mesh.dv;
    let mut pair_nodes: Vec<Vec<(f64, f64, f64)>> = Vec::with_capacity(mesh.n * mesh.n);
    for ki in 0..mesh.n {
        for kbi in 0..mesh.n {
            pair_nodes.push(opts.rule.nodes_1d(lo_of(ki), lo_of(kbi), mesh.dv)?);
        }
    }

    let chunks = opts.chunks.max(1).min(ncell);
    let chunk_size = ncell.div_ceil(chunks);
    let pruned = std::sync::atomic::AtomicUsize::new(0);
    let failures = std::sync::atomic::AtomicUsize::new(0);

    let partials: Vec<Result<Vec<Array2<f64>>>> = (0..chunks)
        .into_par_iter()
        .map(|chunk| {
            let mut gs: Vec<Array2<f64>> = (0..ngam)
                .map(|_| Array2::<f64>::zeros((m_dof, m_dof)))
                .collect();
            let mut scratch = SweepScratch::for_mesh(mesh);
            let mut targets: Vec<(usize, [f64; 4])> = Vec::new();
            let k_lo = chunk * chunk_size;
            let k_hi = ((chunk + 1) * chunk_size).min(ncell);
            let mut bv = [0.0f64; 4];
            let mut bvs = [0.0f64; 4];
            for k in k_lo..k_hi {
                let kk = mesh.multi(k);
                let ck = mesh.center(kk);
                for kbar in 0..ncell {
                    let kb = mesh.multi(kbar);
                    // Maxwellian pruning bound over the pair
                    if -0.5 * (r2min[k] + r2min[kbar]) < log_prune {
                        pruned.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        continue;
                    }
                    let cb = mesh.center(kb);
                    // tensor the per-axis triangle nodes
                    let mut idx = [0usize; 3];
                    'nodes: loop {
                        let mut v = [0.0; 3];
                        let mut u = [0.0; 3];
                        let mut w = 1.0;
                        let mut vstar = [0.0; 3];
                        for axis in 0..d {
                            let nodes = &pair_nodes[kk[axis] * mesh.n + kb[axis]];
                            let (vi, ui, wi) = nodes[idx[axis]];
                            v[axis] = vi;
                            u[axis] = ui;
                            vstar[axis] = vi - ui;
                            w *= wi;
                        }
                        let r2 = v[..d].iter().map(|x| x * x).sum::<f64>()
                            + vstar[..d].iter().map(|x| x * x).sum::<f64>();
                        let mu2 = mu_pref * (-0.5 * r2).exp();
                        let unorm = u[..d].iter().map(|x| x * x).sum::<f64>().sqrt();
                        if mu2 > opts.prune_threshold && unorm > 0.0 {
                            match sweep_all_targets(
                                &v[..d],
                                &u[..d],
                                mesh,
                                basis,
                                &cs,
                                &opts.sweep,
                                &mut scratch,
                                &mut targets,
                            ) {
                                Ok(()) => {
                                    basis.values(mesh, &ck, &v, &mut bv);
                                    basis.values(mesh, &cb, &vstar, &mut bvs);
                                    for (gi, gamma) in gammas.iter().enumerate() {
                                        let wgt = w * mu2 * unorm.powf(*gamma) / vol;
                                        let g = &mut gs[gi];
                                        for &(mcell, gvec) in targets.iter() {
                                            for a in 0..nl {
                                                let rk = k * nl + a;
                                                let rb = kbar * nl + a;
                                                let fa = wgt * bv[a];
                                                let fb = wgt * bvs[a];
                                                for b in 0..nl {
                                                    let col = mcell * nl + b;
                                                    g[(rk, col)] -= fa * gvec[b];
                                                    g[(rb, col)] -= fb * gvec[b];
                                                }
                                            }
                                        }
                                    }
                                }
                                Err(_) => {
                                    failures.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                                }
                            }
                        }
                        // odometer
                        let mut axis = 0;
                        loop {
                            if axis == d {
                                break 'nodes;
                            }
                            idx[axis] += 1;
                            if idx[axis] < pair_nodes[kk[axis] * mesh.n + kb[axis]].len() {
                                break;
                            }
                            idx[axis] = 0;
                            axis += 1;
                        }
                    }
                }
            }
            Ok(gs)
        })
        .collect();

    // reduce partials in fixed chunk order
    let mut totals: Vec<Array2<f64>> = (0..ngam)
        .map(|_| Array2::<f64>::zeros((m_dof, m_dof)))
        .collect();
    for part in partials {
        let part = part?;
        for (tot, p) in totals.iter_mut().zip(part) {
            *tot += &p;
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    let mut out = Vec::with_capacity(ngam);
    for (gi, gamma) in gammas.iter().enumerate() {
        let mut g = std::mem::replace(&mut totals[gi], Array2::zeros((0, 0)));
        let max_asym = symmetrize(&mut g);
        let mut p = *params;
        p.gamma = *gamma;
        out.push(CollisionMatrix {
            store: MatrixStore::Dense(g),
            representation: Representation::GRep,
            backend: Backend::Direct,
            params: p,
            mesh: *mesh,
            basis: *basis,
            diagnostics: AssemblyDiagnostics {
                max_asym,
                pruned_pairs: pruned.load(std::sync::atomic::Ordering::Relaxed),
                angular_failures: failures.load(std::sync::atomic::Ordering::Relaxed),
                assembly_seconds: elapsed,
            },
        });
    }
    Ok(out)
}

const DUMP_MAGIC: &[u8; 4] = b"BGAP";

/// Binary dump: 32-byte header (magic, version, d, N, p, representation,
/// backend, dof count), then the dense matrix row-major as little-endian f64.
pub fn dump_matrix<W: Write>(g: &CollisionMatrix, mut w: W) -> Result<()> {
    let dense = g.dense()?;
    let mut header = [0u8; 32];
    header[..4].copy_from_slice(DUMP_MAGIC);
    header[4] = 1; // version
    header[5] = g.mesh.d as u8;
    header[6..10].copy_from_slice(&(g.mesh.n as u32).to_le_bytes());
    header[10] = g.basis.p as u8;
    header[11] = match g.representation {
        Representation::FRep => 0,
        Representation::GRep => 1,
    };
    header[12] = match g.backend {
        Backend::Grad => 0,
        Backend::Direct => 1,
    };
    header[13..21].copy_from_slice(&(g.n_dof() as u64).to_le_bytes());
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(8 * dense.ncols());
    for row in dense.rows() {
        buf.clear();
        for &x in row {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Metadata and payload of a matrix dump.
pub struct MatrixDump {
    pub d: usize,
    pub n: usize,
    pub p: usize,
    pub representation: Representation,
    pub backend: Backend,
    pub matrix: Array2<f64>,
}

pub fn load_matrix<R: Read>(mut r: R) -> Result<MatrixDump> {
    let mut header = [0u8; 32];
    r.read_exact(&mut header)?;
    if &header[..4] != DUMP_MAGIC {
        return Err(Error::InvalidParameter("bad matrix dump magic".into()));
    }
    if header[4] != 1 {
        return Err(Error::InvalidParameter(format!(
            "unsupported dump version {}",
            header[4]
        )));
    }
    let d = header[5] as usize;
    let n = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    let p = header[10] as usize;
    let representation = if header[11] == 0 {
        Representation::FRep
    } else {
        Representation::GRep
    };
    let backend = if header[12] == 0 {
        Backend::Grad
    } else {
        Backend::Direct
    };
    let m = u64::from_le_bytes(header[13..21].try_into().unwrap()) as usize;
    let mut data = vec![0.0f64; m * m];
    let mut buf = vec![0u8; 8 * m];
    for i in 0..m {
        r.read_exact(&mut buf)?;
        for j in 0..m {
            data[i * m + j] = f64::from_le_bytes(buf[8 * j..8 * j + 8].try_into().unwrap());
        }
    }
    Ok(MatrixDump {
        d,
        n,
        p,
        representation,
        backend,
        matrix: Array2::from_shape_vec((m, m), data).expect("shape"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn triangle_nodes_integrate_bilinear_exactly() {
        // int over the parallelogram {v in [a,a+h), v-u in [b,b+h)} of v*u
        let rule = TriangleRule::default();
        let (a, b, h) = (0.3, -0.9, 0.7);
        let nodes = rule.nodes_1d(a, b, h).unwrap();
        let total_w: f64 = nodes.iter().map(|(_, _, w)| w).sum();
        assert_abs_diff_eq!(total_w, h * h, epsilon = 1e-14);
        let got: f64 = nodes.iter().map(|(v, u, w)| v * u * w).sum();
        // exact: int_a^{a+h} int_b^{b+h} v (v - t) dt dv
        let vm1 = |x: f64| x * x / 2.0;
        let vm2 = |x: f64| x * x * x / 3.0;
        let int_v2 = vm2(a + h) - vm2(a);
        let int_v = vm1(a + h) - vm1(a);
        let int_t = vm1(b + h) - vm1(b);
        let exact = int_v2 * h - int_v * int_t;
        assert_abs_diff_eq!(got, exact, epsilon = 1e-12);
        // nodes strictly interior: u != 0 when the cells coincide
        let nodes = rule.nodes_1d(a, a, h).unwrap();
        for (v, u, _) in nodes {
            assert!(u.abs() > 1e-12, "v={v} u={u}");
        }
    }
}
