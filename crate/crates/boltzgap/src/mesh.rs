//! Velocity domain, DG mesh, local bases, projection and mass matrices.
//!
//! The domain is the half-open cube `[-V, V)^d` tiled by `N` uniform elements
//! per axis. Global degrees of freedom are element-major, local-index-minor:
//! dof `j = n_local * flat(k) + l` with `flat(k) = k1 + N*k2 (+ N^2*k3)`.

use crate::error::{Error, Result};
use crate::kernels::maxwellian;
use crate::quadrature::TensorRule;
use serde::{Deserialize, Serialize};

/// Whether DG coefficients expand the perturbation `F(v)` itself or
/// `g(v) = F(v) / mu^{1/2}(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Representation {
    FRep,
    GRep,
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Representation::FRep => write!(f, "F"),
            Representation::GRep => write!(f, "g"),
        }
    }
}

/// Physics of the operator under study: dimension, potential exponent and
/// angular exponent of the collision kernel, plus the cross-section
/// normalization convention.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    pub d: usize,
    pub gamma: f64,
    pub alpha: f64,
    /// When set, the angular cross-section is rescaled so its sphere integral
    /// is exactly 1. Only meaningful for integrable cross-sections.
    pub b_normalized: bool,
}

impl OperatorParams {
    /// Validated constructor with the default normalization convention:
    /// normalized for `alpha < 0`, raw amplitude otherwise.
    pub fn new(d: usize, gamma: f64, alpha: f64) -> Result<Self> {
        Self::with_normalization(d, gamma, alpha, alpha < 0.0)
    }

    pub fn with_normalization(d: usize, gamma: f64, alpha: f64, b_normalized: bool) -> Result<Self> {
        if d != 2 && d != 3 {
            return Err(Error::InvalidParameter(format!("d must be 2 or 3, got {d}")));
        }
        if !(gamma > -(d as f64) && gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (-d, 1], got {gamma}"
            )));
        }
        if alpha >= 2.0 || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "alpha must be finite and < 2, got {alpha}"
            )));
        }
        if b_normalized && alpha >= 0.0 {
            return Err(Error::InvalidParameter(
                "b_normalized requires an integrable cross-section (alpha < 0)".into(),
            ));
        }
        Ok(Self {
            d,
            gamma,
            alpha,
            b_normalized,
        })
    }
}

/// Uniform Cartesian mesh of the truncated cube `[-V, V)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub v_max: f64,
    pub n: usize,
    pub d: usize,
    /// Element width, always derived as `2 V / N`.
    pub dv: f64,
}

pub fn build_mesh(v_max: f64, n: usize, d: usize) -> Result<Mesh> {
    if !(v_max > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "domain half-width must be positive, got {v_max}"
        )));
    }
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 elements per axis, got {n}"
        )));
    }
    if d != 2 && d != 3 {
        return Err(Error::InvalidParameter(format!("d must be 2 or 3, got {d}")));
    }
    Ok(Mesh {
        v_max,
        n,
        d,
        dv: 2.0 * v_max / n as f64,
    })
}

impl Mesh {
    pub fn n_cells(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn flat(&self, k: [usize; 3]) -> usize {
        let mut f = 0;
        for axis in (0..self.d).rev() {
            f = f * self.n + k[axis];
        }
        f
    }

    pub fn multi(&self, flat: usize) -> [usize; 3] {
        let mut k = [0usize; 3];
        let mut rest = flat;
        for axis in 0..self.d {
            k[axis] = rest % self.n;
            rest /= self.n;
        }
        k
    }

    /// Center of element `k` (multi-index).
    pub fn center(&self, k: [usize; 3]) -> [f64; 3] {
        let mut c = [0.0; 3];
        for axis in 0..self.d {
            c[axis] = -self.v_max + (k[axis] as f64 + 0.5) * self.dv;
        }
        c
    }

    pub fn center_flat(&self, flat: usize) -> [f64; 3] {
        self.center(self.multi(flat))
    }

    /// Lower / upper corners of element `k`; elements are `[lo, hi)`.
    pub fn bounds(&self, k: [usize; 3]) -> ([f64; 3], [f64; 3]) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for axis in 0..self.d {
            lo[axis] = -self.v_max + k[axis] as f64 * self.dv;
            hi[axis] = lo[axis] + self.dv;
        }
        (lo, hi)
    }

    /// Element volume `dv^d`.
    pub fn cell_volume(&self) -> f64 {
        self.dv.powi(self.d as i32)
    }

    /// Locate the element containing `v` under the half-open convention, or
    /// `None` when any coordinate falls outside `[-V, V)`.
    pub fn locate(&self, v: &[f64]) -> Option<[usize; 3]> {
        let mut k = [0usize; 3];
        for axis in 0..self.d {
            let x = v[axis];
            if x < -self.v_max || x >= self.v_max {
                return None;
            }
            let mut i = ((x + self.v_max) / self.dv).floor() as isize;
            // guard against rounding at the upper domain edge
            if i >= self.n as isize {
                i = self.n as isize - 1;
            }
            if i < 0 {
                i = 0;
            }
            // fix up half-open membership after rounding
            let lo = -self.v_max + i as f64 * self.dv;
            if x < lo {
                i -= 1;
            } else if x >= lo + self.dv {
                i += 1;
            }
            if i < 0 || i >= self.n as isize {
                return None;
            }
            k[axis] = i as usize;
        }
        Some(k)
    }

    /// Distance from an interior point to the boundary of element `k`
    /// (minimum margin over axes).
    pub fn dist_to_cell_boundary(&self, v: &[f64], k: [usize; 3]) -> f64 {
        let (lo, hi) = self.bounds(k);
        let mut m = f64::INFINITY;
        for axis in 0..self.d {
            m = m.min(v[axis] - lo[axis]).min(hi[axis] - v[axis]);
        }
        m
    }
}

/// Local polynomial basis per element: degree 0 (constant) or degree 1
/// (constant plus the d scaled coordinates), mutually orthogonal over the
/// element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub p: usize,
}

impl BasisSpec {
    pub fn new(p: usize) -> Result<Self> {
        if p > 1 {
            return Err(Error::InvalidParameter(format!(
                "basis degree must be 0 or 1, got {p}"
            )));
        }
        Ok(Self { p })
    }

    /// Local functions per element: 1 for p=0, d+1 for p=1.
    pub fn n_local(&self, d: usize) -> usize {
        if self.p == 0 {
            1
        } else {
            d + 1
        }
    }

    pub fn n_dof(&self, mesh: &Mesh) -> usize {
        mesh.n_cells() * self.n_local(mesh.d)
    }

    /// Values of the local functions at `v` relative to the element with
    /// center `w`: {1, (v1-w1)/dv, ..., (vd-wd)/dv}.
    #[inline]
    pub fn values(&self, mesh: &Mesh, center: &[f64; 3], v: &[f64], out: &mut [f64; 4]) {
        out[0] = 1.0;
        if self.p == 1 {
            for axis in 0..mesh.d {
                out[axis + 1] = (v[axis] - center[axis]) / mesh.dv;
            }
        }
    }

    /// Element-averaged squares of the local functions: 1 and 1/12.
    pub fn local_mass_diag(&self, d: usize) -> [f64; 4] {
        let mut m = [0.0; 4];
        m[0] = 1.0;
        if self.p == 1 {
            for axis in 0..d {
                m[axis + 1] = 1.0 / 12.0;
            }
        }
        m
    }
}

/// Coefficients of a DG function, tagged with the representation they expand.
#[derive(Debug, Clone)]
pub struct CoefficientVector {
    pub values: Vec<f64>,
    pub representation: Representation,
}

/// Block-diagonal mass matrix: for the F-representation it is diagonal, for
/// the g-representation each element carries a Maxwellian-weighted
/// `n_local x n_local` block. Entries are normalized by the element volume.
#[derive(Debug, Clone)]
pub struct MassMatrix {
    pub representation: Representation,
    pub n_local: usize,
    pub n_cells: usize,
    /// Per-element blocks, row-major `n_local x n_local`.
    pub blocks: Vec<f64>,
}

impl MassMatrix {
    pub fn n_dof(&self) -> usize {
        self.n_cells * self.n_local
    }

    pub fn block(&self, cell: usize) -> &[f64] {
        let s = self.n_local * self.n_local;
        &self.blocks[cell * s..(cell + 1) * s]
    }

    /// Flattened diagonal of the matrix.
    pub fn diagonal(&self) -> Vec<f64> {
        let nl = self.n_local;
        let mut d = Vec::with_capacity(self.n_dof());
        for c in 0..self.n_cells {
            let b = self.block(c);
            for l in 0..nl {
                d.push(b[l * nl + l]);
            }
        }
        d
    }

    /// Per-element symmetric inverse square roots, computed by Jacobi
    /// iterations on the small blocks. Row-major like `blocks`.
    pub fn inv_sqrt_blocks(&self) -> Result<Vec<f64>> {
        let nl = self.n_local;
        let mut out = vec![0.0; self.blocks.len()];
        for c in 0..self.n_cells {
            let b = self.block(c);
            let (vals, vecs) = small_sym_eig(b, nl);
            for &v in &vals {
                if v <= 0.0 {
                    return Err(Error::NotPositiveDefinite);
                }
            }
            let o = &mut out[c * nl * nl..(c + 1) * nl * nl];
            for i in 0..nl {
                for j in 0..nl {
                    let mut s = 0.0;
                    for (e, val) in vals.iter().enumerate() {
                        s += vecs[i * nl + e] * vecs[j * nl + e] / val.sqrt();
                    }
                    o[i * nl + j] = s;
                }
            }
        }
        Ok(out)
    }

    /// Solve `D x = y` in place.
    pub fn solve_in_place(&self, y: &mut [f64]) -> Result<()> {
        let nl = self.n_local;
        for c in 0..self.n_cells {
            let b = self.block(c);
            let (vals, vecs) = small_sym_eig(b, nl);
            for &v in &vals {
                if v <= 0.0 {
                    return Err(Error::NotPositiveDefinite);
                }
            }
            let seg = &mut y[c * nl..(c + 1) * nl];
            let mut x = [0.0f64; 4];
            for e in 0..nl {
                let mut proj = 0.0;
                for i in 0..nl {
                    proj += vecs[i * nl + e] * seg[i];
                }
                proj /= vals[e];
                for i in 0..nl {
                    x[i] += vecs[i * nl + e] * proj;
                }
            }
            seg.copy_from_slice(&x[..nl]);
        }
        Ok(())
    }
}

/// Jacobi eigendecomposition for tiny symmetric matrices (n <= 4).
/// Returns (eigenvalues, column eigenvectors row-major n x n).
pub(crate) fn small_sym_eig(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j].abs();
            }
        }
        if off < 1e-300 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-18 * (m[p * n + p].abs() + m[q * n + q].abs() + 1e-300) {
                    continue;
                }
                let theta = 0.5 * (m[q * n + q] - m[p * n + p]) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let mip = m[i * n + p];
                    let miq = m[i * n + q];
                    m[i * n + p] = c * mip - s * miq;
                    m[i * n + q] = s * mip + c * miq;
                }
                for j in 0..n {
                    let mpj = m[p * n + j];
                    let mqj = m[q * n + j];
                    m[p * n + j] = c * mpj - s * mqj;
                    m[q * n + j] = s * mpj + c * mqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }
    let vals = (0..n).map(|i| m[i * n + i]).collect();
    (vals, v)
}

/// Mass matrix for the Rayleigh-quotient denominator in the requested
/// representation, element-volume normalized.
///
/// F-representation: diagonal with entries `(1/|E|) int phi_l^2`. The
/// g-representation weights the element inner products by the Maxwellian,
/// computed with a fixed-order Gauss rule.
pub fn mass_matrix(mesh: &Mesh, basis: &BasisSpec, representation: Representation) -> MassMatrix {
    let nl = basis.n_local(mesh.d);
    let ncell = mesh.n_cells();
    let vol = mesh.cell_volume();
    let mut blocks = vec![0.0; ncell * nl * nl];
    match representation {
        Representation::FRep => {
            let diag = basis.local_mass_diag(mesh.d);
            for c in 0..ncell {
                for l in 0..nl {
                    blocks[c * nl * nl + l * nl + l] = diag[l];
                }
            }
        }
        Representation::GRep => {
            let rule = TensorRule::new(mesh.d, 8, mesh.dv);
            for c in 0..ncell {
                let center = mesh.center_flat(c);
                let mut bvals = [0.0f64; 4];
                let blk = &mut blocks[c * nl * nl..(c + 1) * nl * nl];
                for (pt, w) in rule.points.iter().zip(&rule.weights) {
                    let mut v = [0.0; 3];
                    for axis in 0..mesh.d {
                        v[axis] = center[axis] + pt[axis];
                    }
                    let mu = maxwellian(&v[..mesh.d], mesh.d);
                    basis.values(mesh, &center, &v, &mut bvals);
                    for i in 0..nl {
                        for j in 0..nl {
                            blk[i * nl + j] += w * mu * bvals[i] * bvals[j] / vol;
                        }
                    }
                }
            }
        }
    }
    MassMatrix {
        representation,
        n_local: nl,
        n_cells: ncell,
        blocks,
    }
}

/// Element-wise L2 projection of a pointwise-evaluable field onto the DG
/// space; exact for polynomials of degree <= p per element.
pub fn l2_project<F: Fn(&[f64]) -> f64>(
    f: F,
    mesh: &Mesh,
    basis: &BasisSpec,
    representation: Representation,
) -> CoefficientVector {
    let nl = basis.n_local(mesh.d);
    let rule = TensorRule::new(mesh.d, 8, mesh.dv);
    let vol = mesh.cell_volume();
    let norms = basis.local_mass_diag(mesh.d);
    let mut values = vec![0.0; basis.n_dof(mesh)];
    let mut bvals = [0.0f64; 4];
    for c in 0..mesh.n_cells() {
        let center = mesh.center_flat(c);
        let mut moments = [0.0f64; 4];
        for (pt, w) in rule.points.iter().zip(&rule.weights) {
            let mut v = [0.0; 3];
            for axis in 0..mesh.d {
                v[axis] = center[axis] + pt[axis];
            }
            let fv = f(&v[..mesh.d]);
            basis.values(mesh, &center, &v, &mut bvals);
            for l in 0..nl {
                moments[l] += w * fv * bvals[l] / vol;
            }
        }
        for l in 0..nl {
            values[c * nl + l] = moments[l] / norms[l];
        }
    }
    CoefficientVector {
        values,
        representation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};

    #[test]
    fn build_mesh_examples() {
        let m = build_mesh(5.0, 20, 2).unwrap();
        assert_abs_diff_eq!(m.dv, 0.5);
        assert_eq!(m.n_cells(), 400);
        let m = build_mesh(5.0, 24, 2).unwrap();
        assert_abs_diff_eq!(m.dv, 5.0 / 12.0, epsilon = 1e-16);
        assert_eq!(m.n_cells(), 576);
        let m = build_mesh(5.0, 20, 3).unwrap();
        assert_eq!(m.n_cells(), 8000);
    }

    #[test]
    fn build_mesh_rejects_bad_input() {
        assert!(build_mesh(-1.0, 8, 2).is_err());
        assert!(build_mesh(1.0, 1, 2).is_err());
        assert!(build_mesh(1.0, 8, 4).is_err());
    }

    #[test]
    fn locate_examples() {
        let m = build_mesh(5.0, 20, 2).unwrap();
        assert_eq!(m.locate(&[0.0, 0.0]), Some([10, 10, 0]));
        assert_eq!(m.locate(&[-5.0, -5.0]), Some([0, 0, 0]));
        assert_eq!(m.locate(&[5.0, 0.0]), None);
        assert_eq!(m.locate(&[0.0, 5.0 - 1e-12]), Some([10, 19, 0]));
    }

    #[test]
    fn locate_is_consistent_with_membership() {
        let m = build_mesh(4.0, 7, 3).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1_000_000 {
            let v = [
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
            ];
            let k = m.locate(&v).expect("inside domain");
            let (lo, hi) = m.bounds(k);
            for axis in 0..3 {
                assert!(v[axis] >= lo[axis] && v[axis] < hi[axis]);
            }
        }
    }

    #[test]
    fn local_basis_is_orthogonal() {
        let m = build_mesh(3.0, 6, 3).unwrap();
        let b = BasisSpec::new(1).unwrap();
        let rule = TensorRule::new(3, 6, m.dv);
        let center = m.center([2, 4, 1]);
        let nl = b.n_local(3);
        let mut gram = [[0.0f64; 4]; 4];
        let mut vals = [0.0f64; 4];
        for (pt, w) in rule.points.iter().zip(&rule.weights) {
            let v = [center[0] + pt[0], center[1] + pt[1], center[2] + pt[2]];
            b.values(&m, &center, &v, &mut vals);
            for i in 0..nl {
                for j in 0..nl {
                    gram[i][j] += w * vals[i] * vals[j];
                }
            }
        }
        for i in 0..nl {
            for j in 0..nl {
                if i != j {
                    assert!(gram[i][j].abs() <= 1e-12 * gram[i][i].abs());
                }
            }
        }
    }

    #[test]
    fn mass_matrix_frep_matches_closed_form() {
        let m = build_mesh(5.0, 4, 3).unwrap();
        let b = BasisSpec::new(1).unwrap();
        let d = mass_matrix(&m, &b, Representation::FRep);
        let diag = d.diagonal();
        for c in 0..m.n_cells() {
            assert_abs_diff_eq!(diag[4 * c], 1.0);
            for j in 1..4 {
                assert_abs_diff_eq!(diag[4 * c + j], 1.0 / 12.0, epsilon = 1e-15);
            }
        }
        let p0 = mass_matrix(&m, &BasisSpec::new(0).unwrap(), Representation::FRep);
        for e in p0.diagonal() {
            assert_abs_diff_eq!(e, 1.0);
        }
    }

    #[test]
    fn mass_matrix_grep_matches_gaussian_products() {
        // element [0, 0.5)^2 of a d=2 mesh; entry = 4 * (int_0^0.5 N(t) dt)^2
        let m = build_mesh(4.0, 16, 2).unwrap();
        let b = BasisSpec::new(0).unwrap();
        let d = mass_matrix(&m, &b, Representation::GRep);
        let k = m.locate(&[0.1, 0.1]).unwrap();
        let phi_half = 0.5 * libm::erf(0.5 / std::f64::consts::SQRT_2);
        let expected = 4.0 * phi_half * phi_half;
        assert_relative_eq!(d.diagonal()[m.flat(k)], expected, max_relative = 1e-10);
        assert_relative_eq!(expected, 0.14663149630841188, max_relative = 1e-12);
    }

    #[test]
    fn inv_sqrt_blocks_invert_mass() {
        let m = build_mesh(3.0, 5, 2).unwrap();
        let b = BasisSpec::new(1).unwrap();
        let d = mass_matrix(&m, &b, Representation::GRep);
        let inv = d.inv_sqrt_blocks().unwrap();
        let nl = 3;
        for c in [0usize, 7, 12] {
            let blk = d.block(c);
            let s = &inv[c * nl * nl..(c + 1) * nl * nl];
            // s * blk * s should be identity
            for i in 0..nl {
                for j in 0..nl {
                    let mut acc = 0.0;
                    for a in 0..nl {
                        for bi in 0..nl {
                            acc += s[i * nl + a] * blk[a * nl + bi] * s[bi * nl + j];
                        }
                    }
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(acc, expect, epsilon = 1e-10);
                }
            }
        }
    }

    #[test]
    fn l2_project_examples() {
        let m = build_mesh(5.0, 20, 2).unwrap();
        let b1 = BasisSpec::new(1).unwrap();
        // constants project to constant coefficients
        let c = l2_project(|_| 1.0, &m, &BasisSpec::new(0).unwrap(), Representation::FRep);
        for v in &c.values {
            assert_abs_diff_eq!(*v, 1.0, epsilon = 1e-13);
        }
        // f(v) = v1 on one element: dv on the slope mode, center on the constant
        let c = l2_project(|v| v[0], &m, &b1, Representation::FRep);
        let k = m.locate(&[0.1, 0.1]).unwrap();
        let ctr = m.center(k);
        let j = 3 * m.flat(k);
        assert_abs_diff_eq!(c.values[j], ctr[0], epsilon = 1e-13);
        assert_abs_diff_eq!(c.values[j + 1], m.dv, epsilon = 1e-13);
        assert_abs_diff_eq!(c.values[j + 2], 0.0, epsilon = 1e-13);
        // f(v) = v1^2 on the element [0, 0.5)^2: constant mode = 1/12
        let mfine = build_mesh(4.0, 16, 2).unwrap();
        let c = l2_project(|v| v[0] * v[0], &mfine, &b1, Representation::FRep);
        let k = mfine.locate(&[0.1, 0.1]).unwrap();
        assert_abs_diff_eq!(c.values[3 * mfine.flat(k)], 1.0 / 12.0, epsilon = 1e-12);
    }

    #[test]
    fn l2_project_reproduces_linears_exactly() {
        let m = build_mesh(2.0, 4, 3).unwrap();
        let b = BasisSpec::new(1).unwrap();
        let f = |v: &[f64]| 0.7 - 1.3 * v[0] + 0.2 * v[1] + 2.0 * v[2];
        let c = l2_project(f, &m, &b, Representation::FRep);
        // evaluate the projection at random points and compare
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut vals = [0.0f64; 4];
        for _ in 0..200 {
            let v = [
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            ];
            let k = m.locate(&v).unwrap();
            let center = m.center(k);
            b.values(&m, &center, &v, &mut vals);
            let j = 4 * m.flat(k);
            let approx_val: f64 = (0..4).map(|l| c.values[j + l] * vals[l]).sum();
            assert_abs_diff_eq!(approx_val, f(&v), epsilon = 1e-12);
        }
    }
}
