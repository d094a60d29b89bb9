//! Conservation constraints: the (d+2) x M moment matrix, the nullspace
//! reduction, and the Lagrange-multiplier conservation correction.

use crate::assembly::CollisionMatrix;
use crate::error::{Error, Result};
use crate::kernels::{maxwellian, maxwellian_sqrt};
use crate::linalg::{householder_qr, nullspace_from_reflectors, Reflector};
use crate::mesh::{mass_matrix, BasisSpec, MassMatrix, Mesh, Representation};
use crate::quadrature::TensorRule;
use ndarray::Array2;

/// Constraint rows (moments of the collision invariants against the basis)
/// together with the mass matrix used as the correction metric.
pub struct ConstraintSet {
    /// (d+2) x M
    pub c: Array2<f64>,
    pub mass: MassMatrix,
    pub representation: Representation,
    pub d: usize,
}

impl ConstraintSet {
    pub fn n_constraints(&self) -> usize {
        self.d + 2
    }

    pub fn n_dof(&self) -> usize {
        self.c.ncols()
    }
}

/// Galerkin moments of the collision invariants weighted by mu^{1/2}
/// (F-representation) or mu (g-representation), with the element-volume
/// normalization shared with the mass matrix.
pub fn constraint_matrix(
    mesh: &Mesh,
    basis: &BasisSpec,
    representation: Representation,
) -> ConstraintSet {
    let d = mesh.d;
    let nl = basis.n_local(d);
    let q = d + 2;
    let m_dof = basis.n_dof(mesh);
    let rule = TensorRule::new(d, 6, mesh.dv);
    let vol = mesh.cell_volume();
    let mut c = Array2::<f64>::zeros((q, m_dof));
    let mut bvals = [0.0f64; 4];
    for cell in 0..mesh.n_cells() {
        let center = mesh.center_flat(cell);
        for (pt, w) in rule.points.iter().zip(&rule.weights) {
            let mut v = [0.0; 3];
            for axis in 0..d {
                v[axis] = center[axis] + pt[axis];
            }
            let weight = match representation {
                Representation::FRep => maxwellian_sqrt(&v[..d], d),
                Representation::GRep => maxwellian(&v[..d], d),
            } * w
                / vol;
            basis.values(mesh, &center, &v, &mut bvals);
            let r2: f64 = v[..d].iter().map(|x| x * x).sum();
            for l in 0..nl {
                let col = cell * nl + l;
                let bw = weight * bvals[l];
                c[(0, col)] += bw;
                for axis in 0..d {
                    c[(1 + axis, col)] += bw * v[axis];
                }
                c[(q - 1, col)] += bw * r2;
            }
        }
    }
    ConstraintSet {
        c,
        mass: mass_matrix(mesh, basis, representation),
        representation,
        d,
    }
}

/// Householder reflectors of the QR factorization of `C^T`; the trailing
/// columns of the implied Q span the constraint nullspace.
pub fn constraint_reflectors(cs: &ConstraintSet) -> Result<Vec<Reflector>> {
    let mut ct = cs.c.t().to_owned();
    householder_qr(&mut ct)
}

/// Orthonormal basis of `{u : C u = 0}` as an M x (M - d - 2) matrix.
pub fn nullspace_basis(cs: &ConstraintSet) -> Result<Array2<f64>> {
    let refl = constraint_reflectors(cs)?;
    Ok(nullspace_from_reflectors(
        &refl,
        cs.n_dof(),
        cs.n_constraints(),
    ))
}

/// Solve the small Gram system `(C D^{-1} C^T) x = b` by Cholesky, with a
/// crude condition estimate from the factor's diagonal.
struct GramSolver {
    /// lower Cholesky factor, row-major q x q
    l: Vec<f64>,
    q: usize,
}

impl GramSolver {
    fn new(cs: &ConstraintSet) -> Result<(Self, Array2<f64>)> {
        let q = cs.n_constraints();
        let m = cs.n_dof();
        // D^{-1} C^T, column by column of C^T (rows of C)
        let mut dinv_ct = Array2::<f64>::zeros((m, q));
        for r in 0..q {
            let mut col: Vec<f64> = cs.c.row(r).to_vec();
            cs.mass.solve_in_place(&mut col)?;
            for i in 0..m {
                dinv_ct[(i, r)] = col[i];
            }
        }
        let gram = cs.c.dot(&dinv_ct);
        let mut l = vec![0.0; q * q];
        for j in 0..q {
            let mut diag = gram[(j, j)];
            for k in 0..j {
                diag -= l[j * q + k] * l[j * q + k];
            }
            if diag <= 0.0 {
                return Err(Error::NotPositiveDefinite);
            }
            l[j * q + j] = diag.sqrt();
            for i in (j + 1)..q {
                let mut s = gram[(i, j)];
                for k in 0..j {
                    s -= l[i * q + k] * l[j * q + k];
                }
                l[i * q + j] = s / l[j * q + j];
            }
        }
        let dmax = (0..q).map(|i| l[i * q + i]).fold(0.0f64, f64::max);
        let dmin = (0..q).map(|i| l[i * q + i]).fold(f64::INFINITY, f64::min);
        let cond = (dmax / dmin).powi(2);
        if cond > 1e12 {
            return Err(Error::IllConditioned { cond });
        }
        Ok((Self { l, q }, dinv_ct))
    }

    fn solve(&self, b: &mut [f64]) {
        let q = self.q;
        for i in 0..q {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[i * q + k] * b[k];
            }
            b[i] = s / self.l[i * q + i];
        }
        for i in (0..q).rev() {
            let mut s = b[i];
            for k in (i + 1)..q {
                s -= self.l[k * q + i] * b[k];
            }
            b[i] = s / self.l[i * q + i];
        }
    }
}

/// Conservation correction: `G_c = [I - D^{-1} C^T (C D^{-1} C^T)^{-1} C] G`.
///
/// Forces d+2 exact zero eigenvalues; the result is generally non-symmetric,
/// see the spectra module for how its spectrum is extracted.
pub fn conservation_correct(g: &CollisionMatrix, cs: &ConstraintSet) -> Result<Array2<f64>> {
    if g.representation != cs.representation {
        return Err(Error::RepresentationMismatch(
            "matrix and constraints use different representations".into(),
        ));
    }
    let dense = g.dense()?;
    let m = dense.nrows();
    if cs.n_dof() != m {
        return Err(Error::DimensionMismatch("constraints vs matrix".into()));
    }
    let (solver, dinv_ct) = GramSolver::new(cs)?;
    // CG: q x m
    let cg = cs.c.dot(dense);
    let q = cs.n_constraints();
    let mut corr = Array2::<f64>::zeros((q, m));
    for col in 0..m {
        let mut rhs: Vec<f64> = (0..q).map(|r| cg[(r, col)]).collect();
        solver.solve(&mut rhs);
        for r in 0..q {
            corr[(r, col)] = rhs[r];
        }
    }
    Ok(dense - &dinv_ct.dot(&corr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::{assemble_grad, GradQuadrature};
    use crate::kernels::NuProfile;
    use crate::mesh::{build_mesh, OperatorParams};
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constraint_shape_and_signs() {
        let mesh = build_mesh(5.0, 24, 2).unwrap();
        let basis = BasisSpec::new(0).unwrap();
        let cs = constraint_matrix(&mesh, &basis, Representation::FRep);
        assert_eq!(cs.c.nrows(), 4);
        assert_eq!(cs.c.ncols(), 576);
        // mass row entries positive, decaying with |center|
        let k_near = mesh.flat(mesh.locate(&[0.1, 0.1]).unwrap());
        let k_far = mesh.flat(mesh.locate(&[4.8, 4.8]).unwrap());
        assert!(cs.c[(0, k_near)] > cs.c[(0, k_far)]);
        assert!(cs.c[(0, k_far)] > 0.0);
        // momentum rows are odd under mirror symmetry
        for cell in 0..mesh.n_cells() {
            let kk = mesh.multi(cell);
            let mirrored = [mesh.n - 1 - kk[0], mesh.n - 1 - kk[1], 0];
            let mcell = mesh.flat(mirrored);
            assert_abs_diff_eq!(
                cs.c[(1, cell)],
                -cs.c[(1, mcell)],
                epsilon = 1e-12 * cs.c[(0, cell)].abs().max(1e-12)
            );
        }
    }

    #[test]
    fn nullspace_properties() {
        let mesh = build_mesh(3.0, 6, 2).unwrap();
        let basis = BasisSpec::new(1).unwrap();
        let cs = constraint_matrix(&mesh, &basis, Representation::FRep);
        let p = nullspace_basis(&cs).unwrap();
        assert_eq!(p.nrows(), cs.n_dof());
        assert_eq!(p.ncols(), cs.n_dof() - 4);
        let ptp = p.t().dot(&p);
        for i in 0..p.ncols() {
            for j in 0..p.ncols() {
                let e = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ptp[(i, j)], e, epsilon = 1e-12);
            }
        }
        let cnorm = cs.c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let cp = cs.c.dot(&p);
        for v in cp.iter() {
            assert!(v.abs() <= 1e-12 * cnorm.max(1.0));
        }
    }

    #[test]
    fn toy_nullspace_dimensions() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let mut c = Array2::<f64>::zeros((4, 10));
        for v in c.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let mesh = build_mesh(1.0, 2, 2).unwrap(); // placeholder mass (identity-like)
        let basis = BasisSpec::new(0).unwrap();
        let cs = ConstraintSet {
            c,
            mass: mass_matrix(&mesh, &basis, Representation::FRep),
            representation: Representation::FRep,
            d: 2,
        };
        // mass matrix shape does not matter for the QR
        let p = nullspace_basis(&cs).unwrap();
        assert_eq!(p.nrows(), 10);
        assert_eq!(p.ncols(), 6);
    }

    fn small_grad_matrix() -> (CollisionMatrix, ConstraintSet) {
        let params = OperatorParams::new(2, 0.0, -1.0).unwrap();
        let mesh = build_mesh(4.0, 6, 2).unwrap();
        let basis = BasisSpec::new(0).unwrap();
        let nu = NuProfile::for_mesh(params, &mesh).unwrap();
        let g = assemble_grad(
            &mesh,
            &basis,
            &params,
            &nu,
            &GradQuadrature::accurate(2),
            1 << 30,
        )
        .unwrap();
        let cs = constraint_matrix(&mesh, &basis, Representation::FRep);
        (g, cs)
    }

    #[test]
    fn conservation_correct_projects_and_is_idempotent() {
        let (g, cs) = small_grad_matrix();
        let gc = conservation_correct(&g, &cs).unwrap();
        let cnorm = cs.c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let gnorm = g.dense().unwrap().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let cgc = cs.c.dot(&gc);
        for v in cgc.iter() {
            assert!(v.abs() <= 1e-10 * cnorm * gnorm.max(1.0), "residual {v}");
        }
        // applying the projector twice changes nothing
        let wrapped = CollisionMatrix {
            store: crate::assembly::MatrixStore::Dense(gc.clone()),
            ..copy_meta(&g)
        };
        let gcc = conservation_correct(&wrapped, &cs).unwrap();
        for (a, b) in gcc.iter().zip(gc.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10 * gnorm.max(1.0));
        }
        // d+2 eigenvalues below threshold (via the symmetrized spectrum route)
        let spec = crate::spectra::spectral_gap(&g, &cs, crate::spectra::GapMethod::Corrected)
            .unwrap();
        assert_eq!(spec.zero_modes, 4);
    }

    fn copy_meta(g: &CollisionMatrix) -> CollisionMatrix {
        CollisionMatrix {
            store: crate::assembly::MatrixStore::Dense(Array2::zeros((0, 0))),
            representation: g.representation,
            backend: g.backend,
            params: g.params,
            mesh: g.mesh,
            basis: g.basis,
            diagnostics: g.diagnostics,
        }
    }

    #[test]
    fn projector_d_self_adjoint() {
        // Pi = I - D^{-1} C^T (C D^{-1} C^T)^{-1} C satisfies D Pi = Pi^T D
        let mesh = build_mesh(3.0, 5, 2).unwrap();
        let basis = BasisSpec::new(1).unwrap();
        let cs = constraint_matrix(&mesh, &basis, Representation::GRep);
        let m = cs.n_dof();
        let (solver, dinv_ct) = GramSolver::new(&cs).unwrap();
        let q = cs.n_constraints();
        let mut pi = Array2::<f64>::eye(m);
        for col in 0..m {
            let mut rhs: Vec<f64> = (0..q).map(|r| cs.c[(r, col)]).collect();
            solver.solve(&mut rhs);
            for i in 0..m {
                let mut acc = 0.0;
                for r in 0..q {
                    acc += dinv_ct[(i, r)] * rhs[r];
                }
                pi[(i, col)] -= acc;
            }
        }
        // dense D
        let nl = cs.mass.n_local;
        let mut dmat = Array2::<f64>::zeros((m, m));
        for c in 0..cs.mass.n_cells {
            let blk = cs.mass.block(c);
            for i in 0..nl {
                for j in 0..nl {
                    dmat[(c * nl + i, c * nl + j)] = blk[i * nl + j];
                }
            }
        }
        let dpi = dmat.dot(&pi);
        let pitd = pi.t().dot(&dmat);
        let scale = dpi.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for (a, b) in dpi.iter().zip(pitd.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10 * scale);
        }
    }
}
