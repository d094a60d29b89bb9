//! Symmetric eigensolvers and supporting linear algebra.
//!
//! Dense problems go through LAPACK (`ndarray-linalg`). Constraint handling
//! uses explicit Householder reflectors so the reduced problem can be formed
//! in place without materializing the nullspace basis. For matrices too large
//! to hold in dense f64, an upper-packed f32 store with a constrained LOBPCG
//! solver computes the few smallest eigenvalues within the memory budget.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::{EigValsh, EigValshInto, UPLO};

/// Ascending eigenvalues of the symmetric pencil `(A, B)`; `B = None` means
/// the identity. The generalized problem is reduced through a Cholesky
/// factorization of `B`.
pub fn eig_sym_pencil(a: &ArrayView2<f64>, b: Option<&ArrayView2<f64>>) -> Result<Vec<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch("A must be square".into()));
    }
    match b {
        None => {
            let vals = a
                .to_owned()
                .eigvalsh_into(UPLO::Lower)
                .map_err(|e| Error::Eigensolver(e.to_string()))?;
            Ok(sorted(vals))
        }
        Some(b) => {
            if b.nrows() != n || b.ncols() != n {
                return Err(Error::DimensionMismatch("B must match A".into()));
            }
            let l = cholesky_lower(&b.to_owned())?;
            // C = L^{ -1} A L^{-T}
            let mut c = a.to_owned();
            solve_lower_inplace(&l, &mut c); // L^{-1} A
            let mut ct = c.reversed_axes().to_owned();
            solve_lower_inplace(&l, &mut ct); // L^{-1} (L^{-1} A)^T
            let vals = ct
                .eigvalsh_into(UPLO::Lower)
                .map_err(|e| Error::Eigensolver(e.to_string()))?;
            Ok(sorted(vals))
        }
    }
}

fn sorted(vals: Array1<f64>) -> Vec<f64> {
    let mut v = vals.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Ascending eigenvalues of a symmetric matrix, consuming the buffer.
pub fn eigvalsh_destructive(a: Array2<f64>) -> Result<Vec<f64>> {
    let vals = a
        .eigvalsh_into(UPLO::Lower)
        .map_err(|e| Error::Eigensolver(e.to_string()))?;
    Ok(sorted(vals))
}

/// Plain lower Cholesky without pivoting; errors when not positive definite.
pub fn cholesky_lower(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= 0.0 {
            return Err(Error::NotPositiveDefinite);
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    Ok(l)
}

/// Solve `L X = B` in place where `L` is lower triangular (forward sweep over
/// the rows of `B`).
fn solve_lower_inplace(l: &Array2<f64>, b: &mut Array2<f64>) {
    let n = l.nrows();
    let m = b.ncols();
    for i in 0..n {
        let lii = l[(i, i)];
        for k in 0..i {
            let lik = l[(i, k)];
            if lik != 0.0 {
                let (row_k, mut row_i) = b.multi_slice_mut((ndarray::s![k, ..], ndarray::s![i, ..]));
                for c in 0..m {
                    row_i[c] -= lik * row_k[c];
                }
            }
        }
        let mut row = b.row_mut(i);
        for c in 0..m {
            row[c] /= lii;
        }
    }
}

/// A Householder reflector `H = I - beta v v^T` acting on rows `start..`.
#[derive(Debug, Clone)]
pub struct Reflector {
    pub start: usize,
    pub v: Vec<f64>,
    pub beta: f64,
}

/// Householder QR of a tall matrix `A` (n x q, n >= q). Returns the
/// reflectors; `A` is overwritten by `R` in its upper triangle.
pub fn householder_qr(a: &mut Array2<f64>) -> Result<Vec<Reflector>> {
    let n = a.nrows();
    let q = a.ncols();
    let scale = a.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    let mut refl = Vec::with_capacity(q);
    for j in 0..q {
        let mut norm2 = 0.0;
        for i in j..n {
            norm2 += a[(i, j)] * a[(i, j)];
        }
        let norm = norm2.sqrt();
        if norm <= 1e-13 * scale {
            return Err(Error::RankDeficient { row: j, pivot: norm });
        }
        let a0 = a[(j, j)];
        let alpha = if a0 >= 0.0 { -norm } else { norm };
        let mut v = vec![0.0; n - j];
        v[0] = a0 - alpha;
        for i in (j + 1)..n {
            v[i - j] = a[(i, j)];
        }
        let vtv: f64 = v.iter().map(|x| x * x).sum();
        let beta = if vtv > 0.0 { 2.0 / vtv } else { 0.0 };
        // apply to remaining columns
        for c in j..q {
            let mut dot = 0.0;
            for i in j..n {
                dot += v[i - j] * a[(i, c)];
            }
            let f = beta * dot;
            for i in j..n {
                a[(i, c)] -= f * v[i - j];
            }
        }
        refl.push(Reflector { start: j, v, beta });
    }
    Ok(refl)
}

/// Apply `Q^T x` where `Q` is the product of the reflectors.
pub fn apply_qt(refl: &[Reflector], x: &mut [f64]) {
    for r in refl {
        let mut dot = 0.0;
        for (i, &vi) in r.v.iter().enumerate() {
            dot += vi * x[r.start + i];
        }
        let f = r.beta * dot;
        for (i, &vi) in r.v.iter().enumerate() {
            x[r.start + i] -= f * vi;
        }
    }
}

/// Apply `Q x` (reflectors in reverse order).
pub fn apply_q(refl: &[Reflector], x: &mut [f64]) {
    for r in refl.iter().rev() {
        let mut dot = 0.0;
        for (i, &vi) in r.v.iter().enumerate() {
            dot += vi * x[r.start + i];
        }
        let f = r.beta * dot;
        for (i, &vi) in r.v.iter().enumerate() {
            x[r.start + i] -= f * vi;
        }
    }
}

/// Two-sided application `Q^T A Q` in place for symmetric `A`, using the
/// standard rank-two update `A <- A - v z^T - z v^T` with
/// `w = beta A v`, `z = w - (beta/2)(v^T w) v`.
pub fn apply_qt_a_q(refl: &[Reflector], a: &mut Array2<f64>) {
    let n = a.nrows();
    let mut w = vec![0.0; n];
    let mut vfull = vec![0.0; n];
    for r in refl {
        w.iter_mut().for_each(|x| *x = 0.0);
        vfull.iter_mut().for_each(|x| *x = 0.0);
        for (i, &vi) in r.v.iter().enumerate() {
            vfull[r.start + i] = vi;
        }
        for (i, &vi) in r.v.iter().enumerate() {
            if vi != 0.0 {
                let row = a.row(r.start + i);
                for c in 0..n {
                    w[c] += vi * row[c];
                }
            }
        }
        for x in w.iter_mut() {
            *x *= r.beta;
        }
        let vtw: f64 = vfull.iter().zip(&w).map(|(x, y)| x * y).sum();
        let half = 0.5 * r.beta * vtw;
        let z: Vec<f64> = w.iter().zip(&vfull).map(|(wi, vi)| wi - half * vi).collect();
        for i in 0..n {
            let vi = vfull[i];
            let zi = z[i];
            if vi == 0.0 && zi == 0.0 {
                continue;
            }
            let mut row = a.row_mut(i);
            for c in 0..n {
                row[c] -= vi * z[c] + zi * vfull[c];
            }
        }
    }
}

/// Drop the first `q` rows/columns of a square matrix without allocating a
/// second full-size buffer.
pub fn compact_trailing(a: Array2<f64>, q: usize) -> Array2<f64> {
    let n = a.nrows();
    let m = n - q;
    let mut data = a.into_raw_vec_and_offset().0;
    for i in 0..m {
        let src = (i + q) * n + q;
        let dst = i * m;
        data.copy_within(src..src + m, dst);
    }
    data.truncate(m * m);
    Array2::from_shape_vec((m, m), data).expect("shape")
}

/// Smallest `k` eigenvalues of a dense symmetric matrix by shift-invert
/// Lanczos with full reorthogonalization. The matrix must be positive
/// semi-definite up to round-off; the shift is taken slightly negative.
pub fn smallest_eigs_shift_invert(a: &Array2<f64>, k: usize, tol: f64) -> Result<Vec<f64>> {
    let n = a.nrows();
    if k == 0 || n == 0 {
        return Ok(Vec::new());
    }
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0f64, f64::max).max(1e-300);
    let sigma = -1e-3 * scale;
    let mut shifted = a.clone();
    for i in 0..n {
        shifted[(i, i)] -= sigma;
    }
    let l = cholesky_lower(&shifted)?;
    let solve = |x: &[f64]| -> Vec<f64> {
        let mut y = x.to_vec();
        // forward then backward substitution
        for i in 0..n {
            let mut s = y[i];
            for j in 0..i {
                s -= l[(i, j)] * y[j];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for j in (i + 1)..n {
                s -= l[(j, i)] * y[j];
            }
            y[i] = s / l[(i, i)];
        }
        y
    };

    let m_max = (8 * k + 60).min(n);
    let mut qs: Vec<Vec<f64>> = Vec::with_capacity(m_max);
    let mut alphas = Vec::new();
    let mut betas = Vec::new();
    // deterministic start vector
    let mut q0: Vec<f64> = (0..n)
        .map(|i| 1.0 + 0.5 * ((i as f64) * 0.7).sin())
        .collect();
    normalize(&mut q0);
    qs.push(q0);
    let mut prev_ritz: Vec<f64> = Vec::new();
    for it in 0..m_max {
        let mut w = solve(&qs[it]);
        let alpha = dot(&w, &qs[it]);
        alphas.push(alpha);
        // two reorthogonalization passes keep ghost Ritz values out
        for _ in 0..2 {
            for q in qs.iter() {
                let c = dot(&w, q);
                axpy(-c, q, &mut w);
            }
        }
        let beta = norm(&w);
        let exhausted = beta < 1e-13 * (1.0 / scale) || it + 1 == n;
        if it + 1 >= k {
            // Ritz pairs of the tridiagonal (inverse of the target spectrum)
            let m = it + 1;
            let mut t = Array2::<f64>::zeros((m, m));
            for i in 0..m {
                t[(i, i)] = alphas[i];
                if i > 0 {
                    t[(i, i - 1)] = betas[i - 1];
                    t[(i - 1, i)] = betas[i - 1];
                }
            }
            let (theta, svec) = ndarray_linalg::Eigh::eigh(&t, UPLO::Lower)
                .map_err(|e| Error::Eigensolver(e.to_string()))?;
            // residual of each Ritz pair: beta * |last eigenvector entry|
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&i, &j| theta[j].total_cmp(&theta[i]));
            let accepted: Vec<f64> = order
                .iter()
                .take(k)
                .filter(|&&col| {
                    exhausted || beta * svec[(m - 1, col)].abs() <= tol * theta[col].abs()
                })
                .map(|&col| sigma + 1.0 / theta[col])
                .collect();
            if accepted.len() == k || (exhausted && !accepted.is_empty()) {
                let mut out = accepted;
                out.sort_by(|a, b| a.total_cmp(b));
                return Ok(out);
            }
            prev_ritz.clear();
        }
        if exhausted || beta < 1e-300 {
            break;
        }
        betas.push(beta);
        let mut next = w;
        next.iter_mut().for_each(|x| *x /= beta);
        qs.push(next);
    }
    Err(Error::Eigensolver(
        "shift-invert Lanczos failed to converge".into(),
    ))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: &mut [f64]) {
    let n = norm(a);
    if n > 0.0 {
        a.iter_mut().for_each(|x| *x /= n);
    }
}

extern "C" {
    // single precision symmetric packed matrix-vector product from BLAS
    fn sspmv_(
        uplo: *const std::os::raw::c_char,
        n: *const i32,
        alpha: *const f32,
        ap: *const f32,
        x: *const f32,
        incx: *const i32,
        beta: *const f32,
        y: *mut f32,
        incy: *const i32,
    );
}

/// Upper-packed symmetric matrix in single precision, column-major packed
/// layout: entry (i, j), i <= j, lives at `i + j (j + 1) / 2`.
pub struct PackedSymF32 {
    pub n: usize,
    pub data: Vec<f32>,
}

impl PackedSymF32 {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * (n + 1) / 2],
        }
    }

    #[inline]
    pub fn idx(i: usize, j: usize) -> usize {
        debug_assert!(i <= j);
        i + j * (j + 1) / 2
    }

    pub fn get(&self, i: usize, j: usize) -> f32 {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.data[Self::idx(i, j)]
    }

    /// Diagonal entries as f64.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.data[Self::idx(i, i)] as f64).collect()
    }

    /// y = A x (f64 views, f32 arithmetic through BLAS).
    pub fn symv(&self, x: &[f64], y: &mut [f64]) {
        let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let mut yf = vec![0.0f32; self.n];
        let n = self.n as i32;
        let (alpha, beta) = (1.0f32, 0.0f32);
        let inc = 1i32;
        unsafe {
            sspmv_(
                b"U\0".as_ptr() as *const std::os::raw::c_char,
                &n,
                &alpha,
                self.data.as_ptr(),
                xf.as_ptr(),
                &inc,
                &beta,
                yf.as_mut_ptr(),
                &inc,
            );
        }
        for (yo, yi) in y.iter_mut().zip(&yf) {
            *yo = *yi as f64;
        }
    }

    /// Scale symmetrically by a diagonal: A <- diag(s) A diag(s).
    pub fn scale_sym(&mut self, s: &[f64]) {
        for j in 0..self.n {
            let base = j * (j + 1) / 2;
            let sj = s[j];
            for i in 0..=j {
                self.data[base + i] = (self.data[base + i] as f64 * s[i] * sj) as f32;
            }
        }
    }
}

/// Smallest `k` eigenvalues of the projected operator `(I-UU^T) A (I-UU^T)`
/// restricted to the complement of `span(U)`, by LOBPCG with hard deflation
/// against the orthonormal columns of `u`.
pub fn lobpcg_smallest_deflated(
    a: &PackedSymF32,
    u: &[Vec<f64>],
    k: usize,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<f64>> {
    let n = a.n;
    let bs = (k + 3).min(n.saturating_sub(u.len()));
    if bs == 0 {
        return Ok(Vec::new());
    }
    let project = |x: &mut [f64]| {
        for uc in u {
            let c = dot(uc, x);
            axpy(-c, uc, x);
        }
    };
    let apply = |x: &[f64], y: &mut [f64]| {
        let mut xp = x.to_vec();
        project(&mut xp);
        a.symv(&xp, y);
        project(y);
    };
    let diag = a.diagonal();
    let scale = diag.iter().fold(0.0f64, |m, &d| m.max(d.abs())).max(1e-30);
    let precond = |x: &mut [f64]| {
        for (xi, di) in x.iter_mut().zip(&diag) {
            *xi /= di.abs().max(1e-3 * scale);
        }
    };

    // deterministic initial block
    let mut xs: Vec<Vec<f64>> = (0..bs)
        .map(|b| {
            (0..n)
                .map(|i| ((i * (b + 1)) as f64 * 0.37).sin() + if i % (b + 2) == 0 { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    for x in xs.iter_mut() {
        project(x);
    }
    orthonormalize(&mut xs, &[]);
    let mut ps: Vec<Vec<f64>> = Vec::new();
    let mut prev_vals: Vec<f64> = Vec::new();
    let mut axs: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            let mut y = vec![0.0; n];
            apply(x, &mut y);
            y
        })
        .collect();

    for _ in 0..max_iter {
        // Ritz on X to get current values
        let lam: Vec<f64> = xs.iter().zip(&axs).map(|(x, ax)| dot(x, ax)).collect();
        // residuals
        let mut ws: Vec<Vec<f64>> = Vec::with_capacity(bs);
        let mut res_norms = Vec::with_capacity(bs);
        for b in 0..bs {
            let mut r: Vec<f64> = axs[b].iter().zip(&xs[b]).map(|(a_, x_)| a_ - lam[b] * x_).collect();
            res_norms.push(norm(&r));
            precond(&mut r);
            project(&mut r);
            ws.push(r);
        }
        let converged = prev_vals.len() == bs
            && lam
                .iter()
                .take(k)
                .zip(prev_vals.iter())
                .all(|(a_, b_)| (a_ - b_).abs() <= tol * a_.abs().max(1e-12 * scale))
            && res_norms.iter().take(k).all(|r| *r <= tol.sqrt() * scale);
        if converged {
            let mut out: Vec<f64> = lam.iter().take(k).copied().collect();
            out.sort_by(|a, b| a.total_cmp(b));
            return Ok(out);
        }
        prev_vals = lam.clone();

        // subspace S = [X, W, P]
        let mut s: Vec<Vec<f64>> = Vec::with_capacity(3 * bs);
        s.extend(xs.iter().cloned());
        s.extend(ws.into_iter());
        s.extend(ps.iter().cloned());
        orthonormalize(&mut s, &[]);
        let m = s.len();
        // Rayleigh-Ritz in f64
        let mut asv: Vec<Vec<f64>> = Vec::with_capacity(m);
        for v in &s {
            let mut y = vec![0.0; n];
            apply(v, &mut y);
            asv.push(y);
        }
        let mut t = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            for j in i..m {
                let val = dot(&s[i], &asv[j]);
                t[(i, j)] = val;
                t[(j, i)] = val;
            }
        }
        let (vals, vecs) = ndarray_linalg::Eigh::eigh(&t, UPLO::Lower)
            .map_err(|e| Error::Eigensolver(e.to_string()))?;
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]));
        let mut new_xs = Vec::with_capacity(bs);
        let mut new_axs = Vec::with_capacity(bs);
        let mut new_ps = Vec::with_capacity(bs);
        for &col in order.iter().take(bs) {
            let mut x = vec![0.0; n];
            let mut ax = vec![0.0; n];
            let mut p = vec![0.0; n];
            for i in 0..m {
                let c = vecs[(i, col)];
                if c != 0.0 {
                    axpy(c, &s[i], &mut x);
                    axpy(c, &asv[i], &mut ax);
                    if i >= bs {
                        axpy(c, &s[i], &mut p);
                    }
                }
            }
            new_xs.push(x);
            new_axs.push(ax);
            new_ps.push(p);
        }
        xs = new_xs;
        axs = new_axs;
        ps = new_ps;
        for p in ps.iter_mut() {
            let nn = norm(p);
            if nn > 1e-12 {
                p.iter_mut().for_each(|x| *x /= nn);
            }
        }
    }
    Err(Error::Eigensolver("LOBPCG failed to converge".into()))
}

/// Modified Gram-Schmidt, dropping near-dependent vectors; `fixed` are kept
/// as an already-orthonormal prefix to orthogonalize against.
fn orthonormalize(vs: &mut Vec<Vec<f64>>, fixed: &[Vec<f64>]) {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(vs.len());
    for v in vs.iter() {
        let mut w = v.clone();
        for f in fixed.iter().chain(out.iter()) {
            let c = dot(f, &w);
            axpy(-c, f, &mut w);
        }
        // second pass for stability
        for f in fixed.iter().chain(out.iter()) {
            let c = dot(f, &w);
            axpy(-c, f, &mut w);
        }
        let nn = norm(&w);
        if nn > 1e-10 {
            w.iter_mut().for_each(|x| *x /= nn);
            out.push(w);
        }
    }
    *vs = out;
}

/// Max |A - A^T| over all entries.
pub fn max_asymmetry(a: &ArrayView2<f64>) -> f64 {
    let n = a.nrows();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            m = m.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    m
}

/// Symmetrize in place, returning the maximum correction applied.
pub fn symmetrize(a: &mut Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut m = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = a[(i, j)] - a[(j, i)];
            m = m.max(d.abs());
            let avg = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = avg;
            a[(j, i)] = avg;
        }
    }
    m
}

/// Columns of the orthogonal complement basis: given reflectors from the QR
/// of `C^T` (n x q), materialize `Q[:, q..]` as an `n x (n-q)` matrix.
pub fn nullspace_from_reflectors(refl: &[Reflector], n: usize, q: usize) -> Array2<f64> {
    let mut p = Array2::<f64>::zeros((n, n - q));
    for (col, j) in (q..n).enumerate() {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        apply_q(refl, &mut e);
        for i in 0..n {
            p[(i, col)] = e[i];
        }
    }
    p
}

pub(crate) use axpy as vec_axpy;
pub(crate) use dot as vec_dot;
pub(crate) use norm as vec_norm;

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Axis};
    use rand::{Rng, SeedableRng};

    fn random_sym(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
            // positive definite with a spread spectrum
            a[(i, i)] += n as f64 + 2.0 * i as f64;
        }
        a
    }

    #[test]
    fn pencil_examples() {
        let a = array![[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]];
        let vals = eig_sym_pencil(&a.view(), None).unwrap();
        assert_abs_diff_eq!(vals[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[2], 3.0, epsilon = 1e-12);
        let a = Array2::<f64>::eye(2);
        let b = array![[2.0, 0.0], [0.0, 4.0]];
        let vals = eig_sym_pencil(&a.view(), Some(&b.view())).unwrap();
        assert_abs_diff_eq!(vals[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(vals[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn householder_reduction_preserves_spectrum() {
        let n = 40;
        let q = 4;
        let a = random_sym(n, 11);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut ct = Array2::<f64>::zeros((n, q));
        for v in ct.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let c = ct.t().to_owned();
        let refl = householder_qr(&mut ct.clone()).unwrap();
        let p = nullspace_from_reflectors(&refl, n, q);
        // P^T P = I, C P = 0
        let ptp = p.t().dot(&p);
        for i in 0..(n - q) {
            for j in 0..(n - q) {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ptp[(i, j)], e, epsilon = 1e-12);
            }
        }
        let cp = c.dot(&p);
        for v in cp.iter() {
            assert!(v.abs() < 1e-10);
        }
        // two-sided reduction spectrum equals P^T A P spectrum
        let mut at = a.clone();
        apply_qt_a_q(&refl, &mut at);
        let reduced = compact_trailing(at, q);
        let v1 = eig_sym_pencil(&reduced.view(), None).unwrap();
        let v2 = eig_sym_pencil(&p.t().dot(&a).dot(&p).view(), None).unwrap();
        for (a_, b_) in v1.iter().zip(&v2) {
            assert_abs_diff_eq!(a_, b_, epsilon = 1e-8);
        }
    }

    #[test]
    fn shift_invert_matches_dense() {
        let a = random_sym(60, 3);
        let dense = eig_sym_pencil(&a.view(), None).unwrap();
        let small = smallest_eigs_shift_invert(&a, 3, 1e-10).unwrap();
        println!("dense: {:?}", &dense[..4]);
        println!("lanczos: {:?}", &small);
        for i in 0..3 {
            assert_abs_diff_eq!(small[i], dense[i], epsilon = 1e-7 * dense[i].abs());
        }
    }

    #[test]
    fn packed_symv_matches_dense() {
        let n = 30;
        let a = random_sym(n, 9);
        let mut p = PackedSymF32::zeros(n);
        for j in 0..n {
            for i in 0..=j {
                p.data[PackedSymF32::idx(i, j)] = a[(i, j)] as f32;
            }
        }
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut y = vec![0.0; n];
        p.symv(&x, &mut y);
        let xd = Array1::from_vec(x.clone());
        let yd = a.dot(&xd);
        for i in 0..n {
            assert_abs_diff_eq!(y[i], yd[i], epsilon = 1e-4 * yd[i].abs().max(1.0));
        }
    }

    #[test]
    fn lobpcg_matches_dense_with_deflation() {
        let n = 120;
        let a = random_sym(n, 21);
        // deflate against 4 orthonormal vectors; reference via projected dense
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut us: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0f64..1.0)).collect())
            .collect();
        orthonormalize(&mut us, &[]);
        let mut proj = Array2::<f64>::eye(n);
        for u in &us {
            let uv = Array1::from_vec(u.clone());
            let outer = uv
                .view()
                .insert_axis(Axis(1))
                .dot(&uv.view().insert_axis(Axis(0)));
            proj = proj - &outer;
        }
        let pa = proj.dot(&a).dot(&proj);
        let mut dense = eig_sym_pencil(&pa.view(), None).unwrap();
        // remove the 4 zero eigenvalues introduced by projection
        dense.retain(|v| v.abs() > 1e-6);
        let mut packed = PackedSymF32::zeros(n);
        for j in 0..n {
            for i in 0..=j {
                packed.data[PackedSymF32::idx(i, j)] = a[(i, j)] as f32;
            }
        }
        let got = lobpcg_smallest_deflated(&packed, &us, 3, 1e-7, 300).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(got[i], dense[i], epsilon = 2e-3 * dense[i].abs().max(1.0));
        }
    }

    #[test]
    fn dbg_cholesky_solve() {
        use ndarray::Array2;
        use rand::{Rng, SeedableRng};
        let n = 8;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v = rng.gen_range(-1.0..1.0);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
            a[(i, i)] += n as f64 + 2.0 * i as f64;
        }
        let l = cholesky_lower(&a).unwrap();
        // check L L^T == A
        let mut max_err: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    s += l[(i, k)] * l[(j, k)];
                }
                max_err = max_err.max((s - a[(i, j)]).abs());
            }
        }
        println!("LL^T residual: {max_err:e}");
        assert!(max_err < 1e-12);
    }
}
