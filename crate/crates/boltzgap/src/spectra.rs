//! Spectral-gap extraction from the constrained eigenproblem, and the
//! analytic eigenvalue oracle for Maxwell-type interactions in 3d.

use crate::assembly::{CollisionMatrix, MatrixStore};
use crate::constraints::ConstraintSet;
use crate::error::{Error, Result};
use crate::linalg::{
    apply_qt_a_q, compact_trailing, eig_sym_pencil, eigvalsh_destructive, householder_qr,
    smallest_eigs_shift_invert, vec_axpy, vec_dot, vec_norm,
};
use crate::mesh::small_sym_eig;
use crate::quadrature::gauss_legendre;
use crate::special::legendre_p;
use ndarray::Array2;
use std::time::Instant;

/// How the constrained problem is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum GapMethod {
    /// QR nullspace reduction; the reduced pencil has no zero modes.
    Nullspace,
    /// Lagrange-multiplier conservation correction; the corrected matrix has
    /// exactly d+2 zero modes and the gap is the (d+3)-rd eigenvalue.
    Corrected,
}

impl std::fmt::Display for GapMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GapMethod::Nullspace => write!(f, "nullspace"),
            GapMethod::Corrected => write!(f, "corrected"),
        }
    }
}

/// Eigensolver choice for the reduced problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EigMode {
    /// dense solver up to the memory budget, iterative beyond
    Auto,
    Dense,
    /// shift-invert Lanczos for the few smallest eigenvalues
    ShiftInvert,
}

#[derive(Debug, Clone)]
pub struct SpectralResult {
    /// ascending eigenvalues of the solved problem (reduced problem for the
    /// nullspace path, corrected spectrum including zeros otherwise); only a
    /// leading window is retained for large problems
    pub eigenvalues: Vec<f64>,
    pub zero_tol: f64,
    pub zero_modes: usize,
    pub gap: f64,
    pub method: GapMethod,
    pub eigensolve_seconds: f64,
}

/// Ascending eigenvalues of the symmetric pencil (A, B); B = None is the
/// identity.
pub fn eig_sym(a: &Array2<f64>, b: Option<&Array2<f64>>) -> Result<Vec<f64>> {
    eig_sym_pencil(&a.view(), b.map(|m| m.view()).as_ref())
}

/// Scale the dense symmetric matrix by the inverse square root of the mass
/// matrix on both sides, in place.
fn scale_by_mass_inv_sqrt(g: &mut Array2<f64>, cs: &ConstraintSet) -> Result<Vec<f64>> {
    let nl = cs.mass.n_local;
    let m = g.nrows();
    let inv = cs.mass.inv_sqrt_blocks()?;
    // For the F-representation the blocks are diagonal; apply generally.
    // Left multiply rows, right multiply columns, per element block.
    let mut tmp = vec![0.0f64; nl];
    // rows
    for cell in 0..cs.mass.n_cells {
        let s = &inv[cell * nl * nl..(cell + 1) * nl * nl];
        for col in 0..m {
            for i in 0..nl {
                let mut acc = 0.0;
                for j in 0..nl {
                    acc += s[i * nl + j] * g[(cell * nl + j, col)];
                }
                tmp[i] = acc;
            }
            for i in 0..nl {
                g[(cell * nl + i, col)] = tmp[i];
            }
        }
    }
    // columns
    for cell in 0..cs.mass.n_cells {
        let s = &inv[cell * nl * nl..(cell + 1) * nl * nl];
        for row in 0..m {
            for i in 0..nl {
                let mut acc = 0.0;
                for j in 0..nl {
                    acc += g[(row, cell * nl + j)] * s[j * nl + i];
                }
                tmp[i] = acc;
            }
            for i in 0..nl {
                g[(row, cell * nl + i)] = tmp[i];
            }
        }
    }
    Ok(inv)
}

/// C scaled by the same inverse square root on the right.
fn scaled_constraints(cs: &ConstraintSet, inv: &[f64]) -> Array2<f64> {
    let nl = cs.mass.n_local;
    let q = cs.n_constraints();
    let m = cs.n_dof();
    let mut ct = Array2::<f64>::zeros((q, m));
    for r in 0..q {
        for cell in 0..cs.mass.n_cells {
            let s = &inv[cell * nl * nl..(cell + 1) * nl * nl];
            for i in 0..nl {
                let mut acc = 0.0;
                for j in 0..nl {
                    acc += cs.c[(r, cell * nl + j)] * s[j * nl + i];
                }
                ct[(r, cell * nl + i)] = acc;
            }
        }
    }
    ct
}

/// Spectral gap of the constrained Rayleigh quotient.
pub fn spectral_gap(
    g: &CollisionMatrix,
    cs: &ConstraintSet,
    method: GapMethod,
) -> Result<SpectralResult> {
    spectral_gap_with(g, cs, method, EigMode::Auto)
}

pub fn spectral_gap_with(
    g: &CollisionMatrix,
    cs: &ConstraintSet,
    method: GapMethod,
    mode: EigMode,
) -> Result<SpectralResult> {
    if g.representation != cs.representation {
        return Err(Error::RepresentationMismatch(
            "matrix and constraints use different representations".into(),
        ));
    }
    if g.n_dof() != cs.n_dof() {
        return Err(Error::DimensionMismatch("matrix vs constraints".into()));
    }
    let start = Instant::now();
    let zero_tol = 1e-8 * g.norm_scale();
    let d = g.mesh.d;
    let q = d + 2;
    let keep = (d + 10).max(q + 4);

    let result = match (&g.store, method) {
        (MatrixStore::PackedF32(p), GapMethod::Nullspace) => {
            // scale by D^{-1/2} in packed storage, deflate the scaled
            // constraint rows, LOBPCG for the smallest eigenvalues
            let inv = cs.mass.inv_sqrt_blocks()?;
            let nl = cs.mass.n_local;
            let diag_scale: Vec<f64> = (0..g.n_dof())
                .map(|i| {
                    let cell = i / nl;
                    let l = i % nl;
                    inv[cell * nl * nl + l * nl + l]
                })
                .collect();
            // packed scaling only supports diagonal mass blocks
            let off_diag_ok = {
                let mut ok = true;
                'outer: for cell in 0..cs.mass.n_cells {
                    let blk = cs.mass.block(cell);
                    for i in 0..nl {
                        for j in 0..nl {
                            if i != j && blk[i * nl + j].abs() > 1e-12 * blk[i * nl + i].abs() {
                                ok = false;
                                break 'outer;
                            }
                        }
                    }
                }
                ok
            };
            if !off_diag_ok {
                return Err(Error::Unsupported(
                    "packed storage requires a diagonal mass matrix".into(),
                ));
            }
            // scale a copy? the packed store is huge; scale in place through
            // interior mutability is not available here, so rebuild the
            // scaled constraint rows and wrap the operator instead.
            let ct = scaled_constraints(cs, &inv);
            let mut us: Vec<Vec<f64>> = (0..q).map(|r| ct.row(r).to_vec()).collect();
            // orthonormalize the deflation space
            for i in 0..us.len() {
                let (head, tail) = us.split_at_mut(i);
                let v = &mut tail[0];
                for h in head.iter() {
                    let c = vec_dot(h, v);
                    vec_axpy(-c, h, v);
                }
                let n = vec_norm(v);
                if n < 1e-12 {
                    return Err(Error::RankDeficient { row: i, pivot: n });
                }
                v.iter_mut().for_each(|x| *x /= n);
            }
            let scaled = ScaledPacked {
                inner: p,
                scale: diag_scale,
            };
            let vals = scaled.lobpcg(&us, keep.min(g.n_dof() - q), 1e-7)?;
            let gap = vals[0];
            SpectralResult {
                eigenvalues: vals,
                zero_tol,
                zero_modes: 0,
                gap,
                method,
                eigensolve_seconds: start.elapsed().as_secs_f64(),
            }
        }
        (MatrixStore::PackedF32(_), GapMethod::Corrected) => {
            return Err(Error::Unsupported(
                "the corrected path requires the dense store".into(),
            ));
        }
        (MatrixStore::Dense(a), _) => {
            let mut gt = a.clone();
            let inv = scale_by_mass_inv_sqrt(&mut gt, cs)?;
            let ct = scaled_constraints(cs, &inv);
            match method {
                GapMethod::Nullspace => {
                    let mut ctt = ct.t().to_owned();
                    let refl = householder_qr(&mut ctt)?;
                    apply_qt_a_q(&refl, &mut gt);
                    let reduced = compact_trailing(gt, q);
                    let vals = match mode {
                        EigMode::ShiftInvert => smallest_eigs_shift_invert(&reduced, keep, 1e-8)?,
                        _ => eigvalsh_destructive(reduced)?,
                    };
                    let gap = vals[0];
                    let eigenvalues: Vec<f64> = vals.into_iter().take(4 * keep).collect();
                    SpectralResult {
                        eigenvalues,
                        zero_tol,
                        zero_modes: 0,
                        gap,
                        method,
                        eigensolve_seconds: start.elapsed().as_secs_f64(),
                    }
                }
                GapMethod::Corrected => {
                    // orthonormal basis U of the scaled constraint rows; the
                    // symmetrized corrected operator is (I-UU^T) Gt (I-UU^T),
                    // which shares its nonzero spectrum with the corrected
                    // matrix and carries exactly d+2 zeros
                    let mut ctt = ct.t().to_owned();
                    let refl = householder_qr(&mut ctt)?;
                    let m = gt.nrows();
                    // U = first q columns of Q: orthonormal basis of the
                    // scaled constraint rows
                    let mut ucols = Array2::<f64>::zeros((m, q));
                    for col in 0..q {
                        let mut e = vec![0.0; m];
                        e[col] = 1.0;
                        crate::linalg::apply_q(&refl, &mut e);
                        for i in 0..m {
                            ucols[(i, col)] = e[i];
                        }
                    }
                    // S = Gt - U (U^T Gt) - (Gt U) U^T + U (U^T Gt U) U^T
                    let utg = ucols.t().dot(&gt); // q x m
                    let utgu = utg.dot(&ucols); // q x q
                    let gtu = gt.dot(&ucols); // m x q
                    let mut s = gt;
                    s -= &ucols.dot(&utg);
                    s -= &gtu.dot(&ucols.t());
                    s += &ucols.dot(&utgu).dot(&ucols.t());
                    let vals = eigvalsh_destructive(s)?;
                    let zero_modes = vals.iter().filter(|v| v.abs() < zero_tol).count();
                    if zero_modes != q {
                        return Err(Error::NullModeCount {
                            found: zero_modes,
                            expected: q,
                        });
                    }
                    let gap = vals[q];
                    let eigenvalues: Vec<f64> = vals.into_iter().take(4 * keep + q).collect();
                    SpectralResult {
                        eigenvalues,
                        zero_tol,
                        zero_modes,
                        gap,
                        method,
                        eigensolve_seconds: start.elapsed().as_secs_f64(),
                    }
                }
            }
        }
    };
    Ok(result)
}

/// Packed operator scaled symmetrically by a diagonal, without copying the
/// payload.
struct ScaledPacked<'a> {
    inner: &'a crate::linalg::PackedSymF32,
    scale: Vec<f64>,
}

impl ScaledPacked<'_> {
    fn lobpcg(&self, us: &[Vec<f64>], k: usize, tol: f64) -> Result<Vec<f64>> {
        // materialize the scaling into a scaled copy is too large; instead
        // wrap symv as S A S through temporary vectors
        let n = self.inner.n;
        let apply = |x: &[f64], y: &mut [f64]| {
            let xs: Vec<f64> = x.iter().zip(&self.scale).map(|(a, s)| a * s).collect();
            self.inner.symv(&xs, y);
            for (yi, s) in y.iter_mut().zip(&self.scale) {
                *yi *= s;
            }
        };
        lobpcg_generic(n, apply, us, k, tol, 600)
    }
}

/// LOBPCG over a generic symmetric operator with hard deflation; mirrors
/// `linalg::lobpcg_smallest_deflated` but takes a closure.
fn lobpcg_generic<F: Fn(&[f64], &mut [f64])>(
    n: usize,
    apply_raw: F,
    us: &[Vec<f64>],
    k: usize,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let bs = (k + 3).min(n.saturating_sub(us.len()));
    if bs == 0 {
        return Ok(Vec::new());
    }
    let project = |x: &mut [f64]| {
        for uc in us {
            let c = vec_dot(uc, x);
            vec_axpy(-c, uc, x);
        }
    };
    let apply = |x: &[f64], y: &mut [f64]| {
        let mut xp = x.to_vec();
        project(&mut xp);
        apply_raw(&xp, y);
        project(y);
    };
    // diagonal preconditioner estimated by probing
    let mut diag = vec![0.0f64; n];
    {
        let probes = 24.min(n);
        let mut y = vec![0.0; n];
        let mut x = vec![0.0; n];
        for p in 0..probes {
            x.iter_mut().for_each(|v| *v = 0.0);
            let mut i = p;
            while i < n {
                x[i] = 1.0;
                i += probes;
            }
            apply_raw(&x, &mut y);
            let mut i = p;
            while i < n {
                diag[i] = y[i].abs();
                i += probes;
            }
        }
    }
    let scale = diag.iter().fold(0.0f64, |m, &d| m.max(d)).max(1e-30);
    let precond = |x: &mut [f64]| {
        for (xi, di) in x.iter_mut().zip(&diag) {
            *xi /= di.max(1e-3 * scale);
        }
    };
    let mut xs: Vec<Vec<f64>> = (0..bs)
        .map(|b| {
            (0..n)
                .map(|i| ((i * (2 * b + 3)) as f64 * 0.61).sin() + ((i + b) % 7) as f64 * 0.1)
                .collect()
        })
        .collect();
    for x in xs.iter_mut() {
        project(x);
    }
    gs_orthonormalize(&mut xs);
    let mut ps: Vec<Vec<f64>> = Vec::new();
    let mut prev: Vec<f64> = Vec::new();
    for _ in 0..max_iter {
        let mut axs: Vec<Vec<f64>> = Vec::with_capacity(xs.len());
        for x in &xs {
            let mut y = vec![0.0; n];
            apply(x, &mut y);
            axs.push(y);
        }
        let lam: Vec<f64> = xs.iter().zip(&axs).map(|(x, ax)| vec_dot(x, ax)).collect();
        let mut ws = Vec::with_capacity(bs);
        let mut rn = Vec::with_capacity(bs);
        for b in 0..xs.len() {
            let mut r: Vec<f64> = axs[b]
                .iter()
                .zip(&xs[b])
                .map(|(a, x)| a - lam[b] * x)
                .collect();
            rn.push(vec_norm(&r));
            precond(&mut r);
            project(&mut r);
            ws.push(r);
        }
        let converged = prev.len() == lam.len()
            && lam
                .iter()
                .take(k)
                .zip(prev.iter())
                .all(|(a, b)| (a - b).abs() <= tol * a.abs().max(1e-12 * scale))
            && rn.iter().take(k).all(|r| *r <= tol.sqrt() * scale);
        if converged {
            let mut out: Vec<f64> = lam.into_iter().take(k).collect();
            out.sort_by(|a, b| a.total_cmp(b));
            return Ok(out);
        }
        prev = lam;
        let mut s: Vec<Vec<f64>> = Vec::with_capacity(3 * bs);
        s.extend(xs.iter().cloned());
        s.extend(ws.into_iter());
        s.extend(ps.iter().cloned());
        gs_orthonormalize(&mut s);
        let m = s.len();
        let mut asv = Vec::with_capacity(m);
        for v in &s {
            let mut y = vec![0.0; n];
            apply(v, &mut y);
            asv.push(y);
        }
        let mut t = vec![0.0f64; m * m];
        for i in 0..m {
            for j in i..m {
                let val = vec_dot(&s[i], &asv[j]);
                t[i * m + j] = val;
                t[j * m + i] = val;
            }
        }
        let (vals, vecs) = small_dense_eig(&t, m)?;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        let mut nxs = Vec::with_capacity(bs);
        let mut nps = Vec::with_capacity(bs);
        for &col in order.iter().take(bs) {
            let mut x = vec![0.0; n];
            let mut pdir = vec![0.0; n];
            for i in 0..m {
                let c = vecs[(i, col)];
                if c != 0.0 {
                    vec_axpy(c, &s[i], &mut x);
                    if i >= bs {
                        vec_axpy(c, &s[i], &mut pdir);
                    }
                }
            }
            nxs.push(x);
            let nn = vec_norm(&pdir);
            if nn > 1e-12 {
                pdir.iter_mut().for_each(|v| *v /= nn);
            }
            nps.push(pdir);
        }
        xs = nxs;
        ps = nps;
    }
    Err(Error::Eigensolver("LOBPCG failed to converge".into()))
}

fn small_dense_eig(t: &[f64], m: usize) -> Result<(Vec<f64>, Array2<f64>)> {
    if m <= 4 {
        let (vals, vecs) = small_sym_eig(t, m);
        let mut vm = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            for j in 0..m {
                vm[(i, j)] = vecs[i * m + j];
            }
        }
        return Ok((vals, vm));
    }
    let a = Array2::from_shape_vec((m, m), t.to_vec()).expect("shape");
    let (vals, vecs) = ndarray_linalg::Eigh::eigh(&a, ndarray_linalg::UPLO::Lower)
        .map_err(|e| Error::Eigensolver(e.to_string()))?;
    Ok((vals.to_vec(), vecs))
}

fn gs_orthonormalize(vs: &mut Vec<Vec<f64>>) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vs.len());
    for v in vs.iter() {
        let mut w = v.clone();
        for pass in 0..2 {
            let _ = pass;
            for f in out.iter() {
                let c = vec_dot(f, &w);
                vec_axpy(-c, f, &mut w);
            }
        }
        let n = vec_norm(&w);
        if n > 1e-10 {
            w.iter_mut().for_each(|x| *x /= n);
            out.push(w);
        }
    }
    *vs = out;
}

/// Analytic eigenvalues of the 3d linearized operator for Maxwell-type
/// interactions with a constant angular cross-section.
#[derive(Debug, Clone, Copy)]
pub struct MaxwellEigenOracle {
    /// constant value of b on the sphere
    pub b_value: f64,
    pub quad_order: usize,
    pub n_max: usize,
    pub l_max: usize,
}

impl Default for MaxwellEigenOracle {
    fn default() -> Self {
        Self {
            b_value: 1.0 / (4.0 * std::f64::consts::PI),
            quad_order: 64,
            n_max: 8,
            l_max: 8,
        }
    }
}

/// lambda_{nl} = int_{S^2} b [cos^{2n+l}(t/2) P_l(cos(t/2))
///                            + sin^{2n+l}(t/2) P_l(sin(t/2)) - 1 - d_{l0} d_{n0}] ds
pub fn maxwell_lambda(n: usize, l: usize, oracle: &MaxwellEigenOracle) -> f64 {
    let (nodes, weights) = gauss_legendre(oracle.quad_order);
    let mut acc = 0.0;
    let e = (2 * n + l) as i32;
    for (x, w) in nodes.iter().zip(&weights) {
        // theta over [0, pi]
        let theta = 0.5 * std::f64::consts::PI * (x + 1.0);
        let wt = w * 0.5 * std::f64::consts::PI;
        let c = (0.5 * theta).cos();
        let s = (0.5 * theta).sin();
        let mut val = c.powi(e) * legendre_p(l, c) + s.powi(e) * legendre_p(l, s) - 1.0;
        if n == 0 && l == 0 {
            val -= 1.0;
        }
        acc += wt * val * theta.sin();
    }
    2.0 * std::f64::consts::PI * oracle.b_value * acc
}

/// Smallest |lambda_{nl}| over the nonzero modes scanned by the oracle.
pub fn maxwell_min_gap(oracle: &MaxwellEigenOracle) -> f64 {
    let mut min = f64::INFINITY;
    for n in 0..=oracle.n_max {
        for l in 0..=oracle.l_max {
            let lam = maxwell_lambda(n, l, oracle);
            if lam.abs() > 1e-9 {
                min = min.min(lam.abs());
            }
        }
    }
    min
}
