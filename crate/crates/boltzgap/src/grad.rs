//! Splitting backend for integrable angular cross-sections: explicit kernels
//! k1, k2, the planar integral over the orthogonal plane, and assembly of the
//! F-representation collision matrix.
//!
//! k = k1 - k2 couples every pair of mesh elements; blocks are integrated by
//! tensor Gauss rules, with the near-diagonal blocks (where k2 carries the
//! `|xi - v|^{-d-alpha}` factor) optionally handled by a ray-clipped polar
//! rule around each outer quadrature node.

use crate::assembly::{AssemblyDiagnostics, Backend, CollisionMatrix, MatrixStore};
use crate::error::{Error, Result};
use crate::kernels::{CrossSection, NuProfile};
use crate::linalg::PackedSymF32;
use crate::mesh::{BasisSpec, Mesh, OperatorParams, Representation};
use crate::quadrature::{adaptive_gk_points, gauss_hermite, gauss_legendre, TensorRule};
use crate::special::i0e;
use ndarray::Array2;
use rayon::prelude::*;
use std::f64::consts::PI;
use std::time::Instant;

/// Tensor Gauss–Hermite rule on the (d-1)-plane orthogonal to `xi - v`,
/// with the deterministic in-plane basis fixed by largest-component pivoting.
#[derive(Debug, Clone)]
pub struct PlanarQuadrature {
    pub order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl PlanarQuadrature {
    pub fn new(order: usize) -> Self {
        let (nodes, weights) = gauss_hermite(order.max(2));
        Self {
            order: order.max(2),
            nodes,
            weights,
        }
    }

    /// Orthonormal basis of the plane orthogonal to the unit vector `n`:
    /// the seed axis is the coordinate direction least aligned with `n`.
    pub fn plane_basis(n_unit: &[f64; 3], d: usize) -> ([f64; 3], [f64; 3]) {
        if d == 2 {
            return ([-n_unit[1], n_unit[0], 0.0], [0.0; 3]);
        }
        let mut axis = 0;
        for j in 1..3 {
            if n_unit[j].abs() < n_unit[axis].abs() {
                axis = j;
            }
        }
        let mut e1 = [0.0; 3];
        e1[axis] = 1.0;
        let proj: f64 = (0..3).map(|j| e1[j] * n_unit[j]).sum();
        for j in 0..3 {
            e1[j] -= proj * n_unit[j];
        }
        let norm: f64 = (0..3).map(|j| e1[j] * e1[j]).sum::<f64>().sqrt();
        for x in e1.iter_mut() {
            *x /= norm;
        }
        let e2 = [
            n_unit[1] * e1[2] - n_unit[2] * e1[1],
            n_unit[2] * e1[0] - n_unit[0] * e1[2],
            n_unit[0] * e1[1] - n_unit[1] * e1[0],
        ];
        (e1, e2)
    }
}

/// Relative geometry of a point pair needed by k2.
#[derive(Debug, Clone, Copy)]
pub struct PairGeometry {
    pub rho: f64,
    pub rho2: f64,
    /// |zeta_perp|^2 = (|xi|^2 - |v|^2)^2 / (4 rho^2)
    pub zperp2: f64,
    /// |zeta|, the in-plane shift of the Gaussian in the planar integral
    pub z: f64,
}

pub fn pair_geometry(v: &[f64], xi: &[f64], d: usize) -> Result<PairGeometry> {
    let mut rho2 = 0.0;
    let mut mid2 = 0.0;
    let mut v2 = 0.0;
    let mut x2 = 0.0;
    for j in 0..d {
        let dj = xi[j] - v[j];
        rho2 += dj * dj;
        let mj = 0.5 * (xi[j] + v[j]);
        mid2 += mj * mj;
        v2 += v[j] * v[j];
        x2 += xi[j] * xi[j];
    }
    if rho2 == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    let dd = x2 - v2;
    let zperp2 = dd * dd / (4.0 * rho2);
    let z2 = (mid2 - zperp2).max(0.0);
    Ok(PairGeometry {
        rho: rho2.sqrt(),
        rho2,
        zperp2,
        z: z2.sqrt(),
    })
}

/// Kernel of the positive part of the compact operator:
/// `mu^{1/2}(v) mu^{1/2}(xi) |v - xi|^gamma * int b`.
pub fn kernel_k1(v: &[f64], xi: &[f64], cs: &CrossSection) -> Result<f64> {
    let p = cs.params;
    let sb = cs.sphere_integral()?;
    let mut rho2 = 0.0;
    let mut s2 = 0.0;
    for j in 0..p.d {
        let dj = xi[j] - v[j];
        rho2 += dj * dj;
        s2 += v[j] * v[j] + xi[j] * xi[j];
    }
    if rho2 == 0.0 && p.gamma < 0.0 {
        return Err(Error::CoincidentPoints);
    }
    Ok((2.0 * PI).powf(-(p.d as f64) / 2.0) * (-0.25 * s2).exp() * rho2.sqrt().powf(p.gamma) * sb)
}

/// Exponent of the planar-integral power factor.
fn s_exponent(p: &OperatorParams) -> f64 {
    0.5 * (p.gamma + 1.0 + p.alpha)
}

/// k2 prefactor times the exponential, excluding the planar integral.
#[inline]
fn k2_envelope(geo: &PairGeometry, p: &OperatorParams) -> f64 {
    (2.0 / PI)
        * (2.0 * PI).powf(-(p.d as f64) / 2.0)
        * geo.rho.powf(-(p.d as f64) - p.alpha)
        * (-geo.rho2 / 8.0 - 0.5 * geo.zperp2).exp()
}

/// Closed form for `gamma + 1 + alpha = 0`, valid in both dimensions.
pub fn kernel_k2_analytic(v: &[f64], xi: &[f64], p: &OperatorParams) -> Result<f64> {
    let geo = pair_geometry(v, xi, p.d)?;
    Ok(2f64.sqrt()
        * PI.powf(-1.5)
        * geo.rho.powf(-((p.d - 1) as f64) - 1.0 - p.alpha)
        * (-geo.rho2 / 8.0 - 0.5 * geo.zperp2).exp())
}

/// Kernel of the gain part of the compact operator: closed form when the
/// planar power factor degenerates (`gamma + 1 + alpha = 0`), Gauss–Hermite
/// planar quadrature otherwise.
pub fn kernel_k2(v: &[f64], xi: &[f64], cs: &CrossSection, quad: &PlanarQuadrature) -> Result<f64> {
    let p = cs.params;
    if p.alpha >= 0.0 {
        return Err(Error::NonIntegrableCrossSection { alpha: p.alpha });
    }
    if s_exponent(&p).abs() < 1e-12 {
        return kernel_k2_analytic(v, xi, &p);
    }
    kernel_k2_quadrature(v, xi, cs, quad)
}

/// Planar-quadrature evaluation of k2, regardless of the special case.
pub fn kernel_k2_quadrature(
    v: &[f64],
    xi: &[f64],
    cs: &CrossSection,
    quad: &PlanarQuadrature,
) -> Result<f64> {
    let p = cs.params;
    if p.alpha >= 0.0 {
        return Err(Error::NonIntegrableCrossSection { alpha: p.alpha });
    }
    let s = s_exponent(&p);
    let geo = pair_geometry(v, xi, p.d)?;
    // in-plane components of zeta
    let mut n_unit = [0.0; 3];
    for j in 0..p.d {
        n_unit[j] = (xi[j] - v[j]) / geo.rho;
    }
    let (e1, e2) = PlanarQuadrature::plane_basis(&n_unit, p.d);
    let mid_dot_n: f64 = (0..p.d).map(|j| 0.5 * (v[j] + xi[j]) * n_unit[j]).sum();
    let mut zeta = [0.0; 3];
    for j in 0..p.d {
        zeta[j] = 0.5 * (v[j] + xi[j]) - mid_dot_n * n_unit[j];
    }
    let z1: f64 = (0..p.d).map(|j| zeta[j] * e1[j]).sum();
    let z2: f64 = (0..p.d).map(|j| zeta[j] * e2[j]).sum();
    let sqrt2 = std::f64::consts::SQRT_2;
    let planar = if p.d == 2 {
        let mut acc = 0.0;
        for (x, w) in quad.nodes.iter().zip(&quad.weights) {
            let t = sqrt2 * x - z1;
            acc += w * (geo.rho2 + t * t).powf(s);
        }
        acc * sqrt2
    } else {
        let mut acc = 0.0;
        for (xi_, wi) in quad.nodes.iter().zip(&quad.weights) {
            let t1 = sqrt2 * xi_ - z1;
            for (xj, wj) in quad.nodes.iter().zip(&quad.weights) {
                let t2 = sqrt2 * xj - z2;
                acc += wi * wj * (geo.rho2 + t1 * t1 + t2 * t2).powf(s);
            }
        }
        acc * 2.0
    };
    Ok(k2_envelope(&geo, &p) * planar)
}

/// Accurate one-dimensional reduction of the planar integral
/// `I(rho, z) = int_plane exp(-|w + zeta|^2/2) (rho^2 + |w|^2)^s dw`.
pub(crate) fn planar_integral_reduced(d: usize, s: f64, rho: f64, z: f64) -> f64 {
    if d == 2 {
        let f = |t: f64| {
            let q = t - z;
            (-0.5 * t * t).exp() * (rho * rho + q * q).powf(s)
        };
        let lo = (z - 42.0).min(-42.0);
        let hi = (z + 42.0).max(42.0);
        let mut cuts = vec![lo, z - 5.0 * rho, z - rho, z, z + rho, z + 5.0 * rho, hi];
        cuts.retain(|c| *c >= lo && *c <= hi);
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        let pieces: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
        let (v, _) = adaptive_gk_points(&f, &pieces, 1e-9, 1e-13, 6000)
            .expect("planar integrand is integrable");
        v
    } else {
        // 2 pi int_0^inf q (rho^2+q^2)^s exp(-(q-z)^2/2) i0e(q z) dq
        let f = |q: f64| {
            q * (rho * rho + q * q).powf(s) * (-0.5 * (q - z) * (q - z)).exp() * i0e(q * z)
        };
        let hi = z + 42.0;
        let mut cuts = vec![0.0, rho.min(hi), (5.0 * rho).min(hi), (z - 8.0).max(0.0), z, hi];
        cuts.sort_by(|a, b| a.total_cmp(b));
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
        let pieces: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
        let (v, _) = adaptive_gk_points(&f, &pieces, 1e-9, 1e-13, 6000)
            .expect("planar integrand is integrable");
        2.0 * PI * v
    }
}

/// Bicubic table of the planar integral on a sqrt-stretched rho grid.
pub(crate) struct PlanarTable {
    d: usize,
    s: f64,
    tau0: f64,
    dtau: f64,
    nt: usize,
    dz: f64,
    nz: usize,
    rho_min: f64,
    vals: Vec<f64>,
}

impl PlanarTable {
    pub fn build(d: usize, s: f64, rho_max: f64, z_max: f64) -> Self {
        let rho_min = 2e-4_f64;
        let nt = 512;
        let nz = 256;
        let tau0 = rho_min.sqrt();
        let dtau = (rho_max.sqrt() - tau0) / (nt - 1) as f64;
        let dz = z_max / (nz - 1) as f64;
        let vals: Vec<f64> = (0..nt)
            .into_par_iter()
            .flat_map_iter(|it| {
                let tau = tau0 + it as f64 * dtau;
                let rho = tau * tau;
                (0..nz).map(move |iz| planar_integral_reduced(d, s, rho, iz as f64 * dz))
            })
            .collect();
        Self {
            d,
            s,
            tau0,
            dtau,
            nt,
            dz,
            nz,
            rho_min,
            vals,
        }
    }

    #[inline]
    fn grid(&self, it: isize, iz: isize) -> f64 {
        let it = it.clamp(0, self.nt as isize - 1) as usize;
        let iz = iz.clamp(0, self.nz as isize - 1) as usize;
        self.vals[it * self.nz + iz]
    }

    /// Catmull-Rom in both directions; falls back to direct evaluation below
    /// the table floor.
    pub fn eval(&self, rho: f64, z: f64) -> f64 {
        if rho < self.rho_min {
            return planar_integral_reduced(self.d, self.s, rho, z);
        }
        let tx = (rho.sqrt() - self.tau0) / self.dtau;
        let zx = z / self.dz;
        let i = (tx.floor() as isize).clamp(0, self.nt as isize - 2);
        let j = (zx.floor() as isize).clamp(0, self.nz as isize - 2);
        let ft = tx - i as f64;
        let fz = zx - j as f64;
        let mut col = [0.0f64; 4];
        for (c, dj) in (-1..=2).enumerate() {
            let p0 = self.grid(i - 1, j + dj);
            let p1 = self.grid(i, j + dj);
            let p2 = self.grid(i + 1, j + dj);
            let p3 = self.grid(i + 2, j + dj);
            col[c] = catmull(p0, p1, p2, p3, ft);
        }
        catmull(col[0], col[1], col[2], col[3], fz)
    }
}

#[inline]
fn catmull(p0: f64, p1: f64, p2: f64, p3: f64, t: f64) -> f64 {
    let a = -0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3;
    let b = p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3;
    let c = -0.5 * p0 + 0.5 * p2;
    ((a * t + b) * t + c) * t + p1
}

/// Fast power with special cases for the exponents that dominate the runs.
#[derive(Debug, Clone, Copy)]
enum PowSpec {
    Zero,
    One,
    NegOne,
    General(f64),
}

impl PowSpec {
    fn of(e: f64) -> Self {
        if e == 0.0 {
            PowSpec::Zero
        } else if e == 1.0 {
            PowSpec::One
        } else if e == -1.0 {
            PowSpec::NegOne
        } else {
            PowSpec::General(e)
        }
    }

    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match self {
            PowSpec::Zero => 1.0,
            PowSpec::One => x,
            PowSpec::NegOne => 1.0 / x,
            PowSpec::General(e) => x.powf(*e),
        }
    }
}

/// Evaluation strategy for k2 inside assembly.
enum K2Eval {
    Analytic,
    Table(PlanarTable),
}

/// Near-block quadrature strategy for the kernel term.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum NearQuadrature {
    /// Tensor Gauss with an offset (order + 1) rule on the xi-side of the
    /// diagonal block, optionally subdivided.
    TensorOffset { depth: usize },
    /// Ray-clipped polar integration of the inner integral around each outer
    /// node: `angular` directions per great circle, `radial` points per ray.
    Polar { angular: usize, radial: usize },
}

/// Quadrature knobs for the splitting backend.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GradQuadrature {
    /// Per-axis Gauss order for far kernel blocks.
    pub kernel_order: usize,
    /// Per-axis Gauss order for the diagonal collision-frequency term.
    pub nu_order: usize,
    /// Gauss–Hermite order per plane axis for direct k2 evaluation.
    pub plane_order: usize,
    pub near: NearQuadrature,
    /// Chebyshev distance (in cells) treated as "near".
    pub near_radius: usize,
}

impl GradQuadrature {
    pub fn accurate(d: usize) -> Self {
        Self {
            kernel_order: 3,
            nu_order: 4,
            plane_order: 32,
            near: if d == 2 {
                NearQuadrature::Polar {
                    angular: 32,
                    radial: 10,
                }
            } else {
                NearQuadrature::Polar {
                    angular: 16,
                    radial: 8,
                }
            },
            near_radius: 1,
        }
    }

    /// Reference tensor profile (offset diagonal rule, no refinement).
    pub fn reference() -> Self {
        Self {
            kernel_order: 3,
            nu_order: 4,
            plane_order: 32,
            near: NearQuadrature::TensorOffset { depth: 0 },
            near_radius: 1,
        }
    }
}

impl Default for GradQuadrature {
    fn default() -> Self {
        Self::accurate(2)
    }
}

/// Ray directions and weights for the polar inner rule.
struct PolarRays {
    /// direction components per ray
    dirs: Vec<[f64; 3]>,
    weights: Vec<f64>,
    /// radial Gauss rule on [0, 1]
    rad_nodes: Vec<f64>,
    rad_weights: Vec<f64>,
}

impl PolarRays {
    fn new(d: usize, angular: usize, radial: usize) -> Self {
        let (rn, rw) = gauss_legendre(radial);
        let rad_nodes: Vec<f64> = rn.iter().map(|x| 0.5 * (x + 1.0)).collect();
        let rad_weights: Vec<f64> = rw.iter().map(|w| 0.5 * w).collect();
        let mut dirs = Vec::new();
        let mut weights = Vec::new();
        if d == 2 {
            let (an, aw) = gauss_legendre(angular);
            for (x, w) in an.iter().zip(&aw) {
                let phi = PI * (x + 1.0);
                dirs.push([phi.cos(), phi.sin(), 0.0]);
                weights.push(w * PI);
            }
        } else {
            let n_pol = (angular / 2).max(2);
            let (un, uw) = gauss_legendre(n_pol);
            let (an, aw) = gauss_legendre(angular);
            for (u, wu) in un.iter().zip(&uw) {
                let st = (1.0 - u * u).max(0.0).sqrt();
                for (x, w) in an.iter().zip(&aw) {
                    let phi = PI * (x + 1.0);
                    dirs.push([st * phi.cos(), st * phi.sin(), *u]);
                    weights.push(wu * w * PI);
                }
            }
        }
        Self {
            dirs,
            weights,
            rad_nodes,
            rad_weights,
        }
    }
}

/// Clip the ray `p + t w`, `t >= 0`, against the box `[lo, hi]`.
#[inline]
fn ray_box_clip(p: &[f64; 3], w: &[f64; 3], lo: &[f64; 3], hi: &[f64; 3], d: usize) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = f64::INFINITY;
    for j in 0..d {
        if w[j].abs() < 1e-14 {
            if p[j] < lo[j] || p[j] > hi[j] {
                return None;
            }
            continue;
        }
        let a = (lo[j] - p[j]) / w[j];
        let b = (hi[j] - p[j]) / w[j];
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        t0 = t0.max(a);
        t1 = t1.min(b);
    }
    if t1 > t0 {
        Some((t0, t1))
    } else {
        None
    }
}

struct KernelCtx<'a> {
    params: OperatorParams,
    sb: f64,
    k2: K2Eval,
    mu_pref: f64,
    rho_pow_k1: PowSpec,
    rho_pow_k2: PowSpec,
    nu: &'a NuProfile,
}

impl KernelCtx<'_> {
    /// k1(v, xi) - k2(v, xi) from raw coordinates.
    #[inline]
    fn eval(&self, v: &[f64; 3], xi: &[f64; 3]) -> f64 {
        let d = self.params.d;
        let mut rho2 = 0.0;
        let mut s2 = 0.0;
        let mut mid2 = 0.0;
        let mut dd = 0.0;
        for j in 0..d {
            let df = xi[j] - v[j];
            rho2 += df * df;
            s2 += v[j] * v[j] + xi[j] * xi[j];
            let m = 0.5 * (v[j] + xi[j]);
            mid2 += m * m;
            dd += df * (xi[j] + v[j]);
        }
        if rho2 <= 0.0 {
            return 0.0;
        }
        let rho = rho2.sqrt();
        let k1 = self.mu_pref * (-0.25 * s2).exp() * self.rho_pow_k1.apply(rho) * self.sb;
        let zperp2 = dd * dd / (4.0 * rho2);
        let envelope = (2.0 / PI)
            * self.mu_pref
            * self.rho_pow_k2.apply(rho)
            * (-rho2 / 8.0 - 0.5 * zperp2).exp();
        let k2 = match &self.k2 {
            K2Eval::Analytic => {
                // envelope already carries rho^{-d-alpha}; the planar integral
                // is the Gaussian mass (2 pi)^{(d-1)/2}
                envelope * (2.0 * PI).powf((d as f64 - 1.0) / 2.0)
            }
            K2Eval::Table(t) => {
                let z2 = (mid2 - zperp2).max(0.0);
                envelope * t.eval(rho, z2.sqrt())
            }
        };
        k1 - k2
    }
}

/// Assemble the F-representation collision matrix with the splitting backend.
pub fn assemble_grad(
    mesh: &Mesh,
    basis: &BasisSpec,
    params: &OperatorParams,
    nu: &NuProfile,
    quad: &GradQuadrature,
    memory_budget: usize,
) -> Result<CollisionMatrix> {
    if params.alpha >= 0.0 {
        return Err(Error::NonIntegrableCrossSection {
            alpha: params.alpha,
        });
    }
    let start = Instant::now();
    let d = mesh.d;
    let nl = basis.n_local(d);
    let ncell = mesh.n_cells();
    let m_dof = ncell * nl;
    let dense_bytes = m_dof * m_dof * 8;
    let packed_bytes = m_dof * (m_dof + 1) / 2 * 4;
    let packed = if dense_bytes <= memory_budget {
        false
    } else if packed_bytes <= memory_budget {
        true
    } else {
        return Err(Error::MemoryBudget {
            bytes: packed_bytes,
            budget: memory_budget,
        });
    };

    let cs = CrossSection::new(*params);
    let sb = cs.sphere_integral()?;
    let s = s_exponent(params);
    let k2 = if s.abs() < 1e-12 {
        K2Eval::Analytic
    } else {
        let rho_max = 2.0 * (d as f64).sqrt() * mesh.v_max + 1.0;
        let z_max = (d as f64).sqrt() * mesh.v_max + 1.0;
        K2Eval::Table(PlanarTable::build(d, s, rho_max, z_max))
    };
    let ctx = KernelCtx {
        params: *params,
        sb,
        k2,
        mu_pref: (2.0 * PI).powf(-(d as f64) / 2.0),
        rho_pow_k1: PowSpec::of(params.gamma),
        rho_pow_k2: PowSpec::of(-(d as f64) - params.alpha),
        nu,
    };

    let vol = mesh.cell_volume();
    let base_rule = TensorRule::new(d, quad.kernel_order, mesh.dv);
    let offset_rule = TensorRule::new(d, quad.kernel_order + 1, mesh.dv);
    let (near_rule_a, near_rule_b, polar): (TensorRule, TensorRule, Option<PolarRays>) =
        match quad.near {
            NearQuadrature::TensorOffset { depth } => (
                TensorRule::subdivided(d, quad.kernel_order, mesh.dv, depth),
                TensorRule::subdivided(d, quad.kernel_order + 1, mesh.dv, depth),
                None,
            ),
            NearQuadrature::Polar { angular, radial } => (
                base_rule.clone(),
                offset_rule.clone(),
                Some(PolarRays::new(d, angular, radial)),
            ),
        };
    let nu_rule = TensorRule::new(d, quad.nu_order, mesh.dv);

    let centers: Vec<[f64; 3]> = (0..ncell).map(|c| mesh.center_flat(c)).collect();
    let multis: Vec<[usize; 3]> = (0..ncell).map(|c| mesh.multi(c)).collect();

    // one column-block of the matrix: all (k <= m) blocks for a fixed m
    let column_blocks = |m: usize, out: &mut Vec<f64>| {
        out.clear();
        out.resize((m + 1) * nl * nl, 0.0);
        let cm = centers[m];
        let km = multis[m];
        let (lo_m, hi_m) = mesh.bounds(km);
        let mut bvals_v = [0.0f64; 4];
        let mut bvals_x = [0.0f64; 4];
        for k in 0..=m {
            let ck = centers[k];
            let kk = multis[k];
            let mut cheb = 0usize;
            for j in 0..d {
                cheb = cheb.max(kk[j].abs_diff(km[j]));
            }
            let blk = &mut out[k * nl * nl..(k + 1) * nl * nl];
            if cheb > quad.near_radius {
                // far: tensor x tensor
                for (pv, wv) in base_rule.points.iter().zip(&base_rule.weights) {
                    let mut v = [0.0; 3];
                    for j in 0..d {
                        v[j] = ck[j] + pv[j];
                    }
                    basis.values(mesh, &ck, &v, &mut bvals_v);
                    for (px, wx) in base_rule.points.iter().zip(&base_rule.weights) {
                        let mut x = [0.0; 3];
                        for j in 0..d {
                            x[j] = cm[j] + px[j];
                        }
                        let kv = ctx.eval(&v, &x) * wv * wx / vol;
                        basis.values(mesh, &cm, &x, &mut bvals_x);
                        for a in 0..nl {
                            for b in 0..nl {
                                blk[a * nl + b] += kv * bvals_v[a] * bvals_x[b];
                            }
                        }
                    }
                }
            } else if let Some(rays) = &polar {
                // near: polar inner integral around each outer node
                for (pv, wv) in base_rule.points.iter().zip(&base_rule.weights) {
                    let mut v = [0.0; 3];
                    for j in 0..d {
                        v[j] = ck[j] + pv[j];
                    }
                    basis.values(mesh, &ck, &v, &mut bvals_v);
                    for (dir, wdir) in rays.dirs.iter().zip(&rays.weights) {
                        let Some((t0, t1)) = ray_box_clip(&v, dir, &lo_m, &hi_m, d) else {
                            continue;
                        };
                        let span = t1 - t0;
                        for (rn, rw) in rays.rad_nodes.iter().zip(&rays.rad_weights) {
                            let t = t0 + span * rn;
                            let mut x = [0.0; 3];
                            for j in 0..d {
                                x[j] = v[j] + t * dir[j];
                            }
                            let jac = if d == 2 { t } else { t * t };
                            let kv = ctx.eval(&v, &x) * wv * wdir * rw * span * jac / vol;
                            basis.values(mesh, &cm, &x, &mut bvals_x);
                            for a in 0..nl {
                                for b in 0..nl {
                                    blk[a * nl + b] += kv * bvals_v[a] * bvals_x[b];
                                }
                            }
                        }
                    }
                }
            } else {
                // near: (possibly subdivided) tensor with the offset rule on xi
                let rb = if k == m { &near_rule_b } else { &near_rule_a };
                for (pv, wv) in near_rule_a.points.iter().zip(&near_rule_a.weights) {
                    let mut v = [0.0; 3];
                    for j in 0..d {
                        v[j] = ck[j] + pv[j];
                    }
                    basis.values(mesh, &ck, &v, &mut bvals_v);
                    for (px, wx) in rb.points.iter().zip(&rb.weights) {
                        let mut x = [0.0; 3];
                        for j in 0..d {
                            x[j] = cm[j] + px[j];
                        }
                        let kv = ctx.eval(&v, &x) * wv * wx / vol;
                        basis.values(mesh, &cm, &x, &mut bvals_x);
                        for a in 0..nl {
                            for b in 0..nl {
                                blk[a * nl + b] += kv * bvals_v[a] * bvals_x[b];
                            }
                        }
                    }
                }
            }
            if k == m {
                // collision-frequency term on the diagonal block
                for (pv, wv) in nu_rule.points.iter().zip(&nu_rule.weights) {
                    let mut v = [0.0; 3];
                    for j in 0..d {
                        v[j] = cm[j] + pv[j];
                    }
                    let nv = ctx.nu.eval(&v[..d]) * wv / vol;
                    basis.values(mesh, &cm, &v, &mut bvals_v);
                    for a in 0..nl {
                        for b in 0..nl {
                            blk[a * nl + b] += nv * bvals_v[a] * bvals_v[b];
                        }
                    }
                }
            }
        }
    };

    let mut max_asym = 0.0f64;
    let store = if !packed {
        let mut g = Array2::<f64>::zeros((m_dof, m_dof));
        // parallel over column cells; each worker owns column block m
        let cols: Vec<Vec<f64>> = (0..ncell)
            .into_par_iter()
            .map(|m| {
                let mut buf = Vec::new();
                column_blocks(m, &mut buf);
                buf
            })
            .collect();
        for (m, buf) in cols.iter().enumerate() {
            for k in 0..=m {
                let blk = &buf[k * nl * nl..(k + 1) * nl * nl];
                for a in 0..nl {
                    for b in 0..nl {
                        g[(k * nl + a, m * nl + b)] = blk[a * nl + b];
                    }
                }
            }
        }
        // symmetrize diagonal blocks, mirror the rest
        for m in 0..ncell {
            for a in 0..nl {
                for b in (a + 1)..nl {
                    let i = m * nl + a;
                    let j = m * nl + b;
                    let asym = (g[(i, j)] - g[(j, i)]).abs();
                    max_asym = max_asym.max(asym);
                    let avg = 0.5 * (g[(i, j)] + g[(j, i)]);
                    g[(i, j)] = avg;
                    g[(j, i)] = avg;
                }
            }
        }
        for j in 0..m_dof {
            for i in (j + 1)..m_dof {
                g[(i, j)] = g[(j, i)];
            }
        }
        MatrixStore::Dense(g)
    } else {
        let mut p = PackedSymF32::zeros(m_dof);
        // split the packed buffer into disjoint column-cell segments
        let mut segments: Vec<&mut [f32]> = Vec::with_capacity(ncell);
        {
            let mut rest: &mut [f32] = &mut p.data;
            let mut offset = 0usize;
            for m in 0..ncell {
                let hi_col = (m + 1) * nl;
                let end = hi_col * (hi_col + 1) / 2;
                let (seg, tail) = rest.split_at_mut(end - offset);
                segments.push(seg);
                rest = tail;
                offset = end;
            }
        }
        segments
            .into_par_iter()
            .enumerate()
            .for_each(|(m, seg)| {
                let mut buf = Vec::new();
                column_blocks(m, &mut buf);
                let col_start = m * nl;
                let seg_off = col_start * (col_start + 1) / 2;
                for b in 0..nl {
                    let j = col_start + b;
                    let col_off = j * (j + 1) / 2 - seg_off;
                    for k in 0..=m {
                        let blk = &buf[k * nl * nl..(k + 1) * nl * nl];
                        for a in 0..nl {
                            let i = k * nl + a;
                            if i <= j {
                                // diagonal block upper part: average with the
                                // mirror entry for exact symmetry
                                let val = if k == m && a != b {
                                    0.5 * (blk[a * nl + b] + blk[b * nl + a])
                                } else {
                                    blk[a * nl + b]
                                };
                                seg[col_off + i] = val as f32;
                            }
                        }
                    }
                }
            });
        MatrixStore::PackedF32(p)
    };

    Ok(CollisionMatrix {
        store,
        representation: Representation::FRep,
        backend: Backend::Grad,
        params: *params,
        mesh: *mesh,
        basis: *basis,
        diagnostics: AssemblyDiagnostics {
            max_asym,
            pruned_pairs: 0,
            angular_failures: 0,
            assembly_seconds: start.elapsed().as_secs_f64(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::NuProfile;
    use crate::mesh::build_mesh;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};

    fn hard_sphere_3d() -> CrossSection {
        CrossSection::new(OperatorParams::new(3, 1.0, -2.0).unwrap())
    }

    #[test]
    fn k1_examples() {
        let cs = CrossSection::new(OperatorParams::new(3, 0.0, -2.0).unwrap());
        let v = [0.0, 0.0, 0.0];
        assert_relative_eq!(
            kernel_k1(&v, &v, &cs).unwrap(),
            0.06349363593424097,
            max_relative = 1e-12
        );
        let cs = hard_sphere_3d();
        let xi = [1.0, 0.0, 0.0];
        assert_relative_eq!(
            kernel_k1(&[0.0; 3], &xi, &cs).unwrap(),
            (2.0 * PI).powf(-1.5) * (-0.25f64).exp(),
            max_relative = 1e-12
        );
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let xi: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = kernel_k1(&v, &xi, &cs).unwrap();
            let b = kernel_k1(&xi, &v, &cs).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn k2_analytic_hard_sphere_value() {
        let cs = hard_sphere_3d();
        let quad = PlanarQuadrature::new(32);
        let v = [0.0; 3];
        let xi = [1.0, 0.0, 0.0];
        let got = kernel_k2(&v, &xi, &cs, &quad).unwrap();
        assert_relative_eq!(got, 0.19779557354255023, max_relative = 1e-12);
    }

    #[test]
    fn k2_quadrature_matches_analytic_on_random_pairs() {
        let cs = hard_sphere_3d();
        let quad = PlanarQuadrature::new(32);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.5..2.5)).collect();
            let mut xi: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.5..2.5)).collect();
            if v.iter().zip(&xi).all(|(a, b)| a == b) {
                xi[0] += 0.5;
            }
            let via_quad = kernel_k2_quadrature(&v, &xi, &cs, &quad).unwrap();
            let analytic = kernel_k2_analytic(&v, &xi, &cs.params).unwrap();
            assert_relative_eq!(via_quad, analytic, max_relative = 1e-8);
        }
    }

    #[test]
    fn k2_table_matches_direct_quadrature() {
        // d=3 Maxwell (s = -1/2): table vs reduced integral vs GH at safe rho
        let table = PlanarTable::build(3, -0.5, 12.0, 8.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..60 {
            let rho = 10f64.powf(rng.gen_range(-2.5..0.9));
            let z = rng.gen_range(0.0..7.5);
            let exact = planar_integral_reduced(3, -0.5, rho, z);
            let interp = table.eval(rho, z);
            assert_relative_eq!(interp, exact, max_relative = 2e-3);
        }
        // GH cross-check where GH resolves the feature
        let (nodes, weights) = gauss_hermite(64);
        for &(rho, z) in &[(0.8, 2.0), (2.5, 4.0), (1.3, 0.3)] {
            let mut acc = 0.0;
            let sqrt2 = std::f64::consts::SQRT_2;
            for (x1, w1) in nodes.iter().zip(&weights) {
                let t1 = sqrt2 * x1 - z;
                for (x2, w2) in nodes.iter().zip(&weights) {
                    let t2 = sqrt2 * x2;
                    acc += w1 * w2 * (rho * rho + t1 * t1 + t2 * t2).powf(-0.5);
                }
            }
            acc *= 2.0;
            assert_relative_eq!(table.eval(rho, z), acc, max_relative = 1e-4);
        }
    }

    #[test]
    fn k2_symmetry() {
        let cs = CrossSection::new(OperatorParams::new(2, 0.3, -1.0).unwrap());
        let quad = PlanarQuadrature::new(32);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let v: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let xi: Vec<f64> = (0..2).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = kernel_k2(&v, &xi, &cs, &quad).unwrap();
            let b = kernel_k2(&xi, &v, &cs, &quad).unwrap();
            assert_relative_eq!(a, b, max_relative = 1e-10);
        }
    }

    #[test]
    fn zeta_decomposition_invariants() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let d = if rng.gen_bool(0.5) { 2 } else { 3 };
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let mut xi: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            if v == xi {
                xi[0] += 1.0;
            }
            let mut n = [0.0f64; 3];
            let mut rho2 = 0.0;
            for j in 0..d {
                n[j] = xi[j] - v[j];
                rho2 += n[j] * n[j];
            }
            let rho = rho2.sqrt();
            for x in n.iter_mut() {
                *x /= rho;
            }
            // zeta = mid - (mid.n) n ; zeta_perp = (mid.n) n
            let mid: Vec<f64> = (0..d).map(|j| 0.5 * (v[j] + xi[j])).collect();
            let mdn: f64 = (0..d).map(|j| mid[j] * n[j]).sum();
            let zeta: Vec<f64> = (0..d).map(|j| mid[j] - mdn * n[j]).collect();
            let dot: f64 = (0..d).map(|j| zeta[j] * (xi[j] - v[j])).sum();
            assert!(dot.abs() <= 1e-10 * rho * (1.0 + mdn.abs()));
            for j in 0..d {
                let recomposed = zeta[j] + mdn * n[j];
                assert_abs_diff_eq!(recomposed, mid[j], epsilon = 1e-12);
            }
            // plane basis orthonormal and orthogonal to n
            let (e1, e2) = PlanarQuadrature::plane_basis(&n, d);
            let e1n: f64 = (0..d).map(|j| e1[j] * n[j]).sum();
            assert!(e1n.abs() < 1e-12);
            let e1e1: f64 = (0..d).map(|j| e1[j] * e1[j]).sum();
            assert_abs_diff_eq!(e1e1, 1.0, epsilon = 1e-12);
            if d == 3 {
                let e2n: f64 = (0..3).map(|j| e2[j] * n[j]).sum();
                let e1e2: f64 = (0..3).map(|j| e1[j] * e2[j]).sum();
                assert!(e2n.abs() < 1e-12 && e1e2.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_rejects_noncutoff_and_coincident() {
        let p = OperatorParams::with_normalization(3, 0.0, 0.5, false).unwrap();
        let cs = CrossSection::new(p);
        let quad = PlanarQuadrature::new(8);
        assert!(kernel_k2(&[0.0; 3], &[1.0, 0.0, 0.0], &cs, &quad).is_err());
        let cs = hard_sphere_3d();
        assert!(matches!(
            kernel_k2(&[0.5; 3], &[0.5; 3], &cs, &quad),
            Err(Error::CoincidentPoints)
        ));
    }

    #[test]
    fn hilbert_schmidt_norm_stabilizes_under_refinement() {
        // discrete Frobenius norm of the kernel table converges as the
        // sampling order doubles (square-integrable regime, d + 2 alpha < 0)
        let params = OperatorParams::new(2, 0.0, -1.5).unwrap();
        let cs = CrossSection::new(params);
        let quad = PlanarQuadrature::new(32);
        let mesh = build_mesh(3.0, 6, 2).unwrap();
        let frob = |order: usize| -> f64 {
            // offset orders keep the node sets disjoint across the diagonal
            let rule_v = TensorRule::new(2, order, mesh.dv);
            let rule_x = TensorRule::new(2, order + 1, mesh.dv);
            let mut total = 0.0;
            for k in 0..mesh.n_cells() {
                let ck = mesh.center_flat(k);
                for m in 0..mesh.n_cells() {
                    let cm = mesh.center_flat(m);
                    for (pv, wv) in rule_v.points.iter().zip(&rule_v.weights) {
                        let v = [ck[0] + pv[0], ck[1] + pv[1]];
                        for (px, wx) in rule_x.points.iter().zip(&rule_x.weights) {
                            let x = [cm[0] + px[0], cm[1] + px[1]];
                            let kv = kernel_k1(&v, &x, &cs).unwrap()
                                - kernel_k2(&v, &x, &cs, &quad).unwrap();
                            total += wv * wx * kv * kv;
                        }
                    }
                }
            }
            total.sqrt()
        };
        let f2 = frob(2);
        let f4 = frob(4);
        let f8 = frob(8);
        assert!((f8 - f4).abs() < (f4 - f2).abs());
        assert!((f8 - f4).abs() < 0.05 * f8);
    }

    #[test]
    fn grad_matrix_is_symmetric_psd_with_null_mode() {
        let params = OperatorParams::new(2, 0.0, -1.0).unwrap();
        let mesh = build_mesh(4.0, 8, 2).unwrap();
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
        let dense = g.dense().unwrap();
        assert_eq!(crate::linalg::max_asymmetry(&dense.view()), 0.0);
        let vals = crate::linalg::eig_sym_pencil(&dense.view(), None).unwrap();
        let scale = dense.diag().fold(0.0f64, |m, &x| m.max(x.abs()));
        assert!(vals[0] > -1e-8 * scale, "lowest eigenvalue {}", vals[0]);
    }
}
