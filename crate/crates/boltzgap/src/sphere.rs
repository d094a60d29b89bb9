//! Angular integrals of the Dirichlet form on the collision sphere.
//!
//! For a fixed pair (v, u) the post-collisional velocity `v' = v + (|u|s - u)/2`
//! sweeps the sphere centered at `c = v - u/2` with radius `|u|/2`. The
//! integrals `g_{m,i}(v,u) = int [phi_i chi_m(v') - phi_i chi_m(v)] b ds`
//! are resolved per target cell `m` by solving trigonometric band
//! inequalities exactly in the azimuth and adaptively in the polar angle.
//! Grazing collisions (theta -> 0) are handled in a rotated frame where the
//! gain-loss cancellation is explicit.

use crate::error::{Error, Result};
use crate::kernels::CrossSection;
use crate::mesh::{BasisSpec, Mesh};
use crate::quadrature::{adaptive_gk, gauss_legendre};
use std::f64::consts::PI;

const TAU: f64 = 2.0 * PI;

/// Sorted, disjoint, half-open angle intervals within [0, 2 pi).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IntervalSet {
    pub intervals: Vec<(f64, f64)>,
}

impl IntervalSet {
    pub fn full() -> Self {
        Self {
            intervals: vec![(0.0, TAU)],
        }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn measure(&self) -> f64 {
        self.intervals.iter().map(|(a, b)| b - a).sum()
    }

    /// Normalize raw (possibly wrapped) intervals into the canonical form.
    fn from_raw(mut raw: Vec<(f64, f64)>) -> Self {
        let mut pieces = Vec::with_capacity(raw.len() + 1);
        for (a, b) in raw.drain(..) {
            if b - a >= TAU - 1e-15 {
                return Self::full();
            }
            if b <= a {
                continue;
            }
            let span = b - a;
            let start = a.rem_euclid(TAU);
            if start + span <= TAU {
                pieces.push((start, start + span));
            } else {
                pieces.push((start, TAU));
                pieces.push((0.0, start + span - TAU));
            }
        }
        pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pieces.len());
        for (a, b) in pieces {
            if let Some(last) = merged.last_mut() {
                if a <= last.1 {
                    last.1 = last.1.max(b);
                    continue;
                }
            }
            merged.push((a, b));
        }
        Self { intervals: merged }
    }

    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.intervals.len() && j < other.intervals.len() {
            let (a1, b1) = self.intervals[i];
            let (a2, b2) = other.intervals[j];
            let lo = a1.max(a2);
            let hi = b1.min(b2);
            if hi > lo {
                out.push((lo, hi));
            }
            if b1 <= b2 {
                i += 1;
            } else {
                j += 1;
            }
        }
        IntervalSet { intervals: out }
    }

    /// Complement within [0, 2 pi).
    pub fn complement(&self) -> IntervalSet {
        let mut out = Vec::new();
        let mut cursor = 0.0;
        for &(a, b) in &self.intervals {
            if a > cursor {
                out.push((cursor, a));
            }
            cursor = b;
        }
        if cursor < TAU {
            out.push((cursor, TAU));
        }
        IntervalSet { intervals: out }
    }
}

/// Solve `A cos x + B sin x in [lo, hi)` for `x in [0, 2 pi)`.
pub fn solve_band(a_coef: f64, b_coef: f64, lo: f64, hi: f64) -> IntervalSet {
    let rc = (a_coef * a_coef + b_coef * b_coef).sqrt();
    if rc < 1e-300 {
        return if lo <= 0.0 && 0.0 < hi {
            IntervalSet::full()
        } else {
            IntervalSet::empty()
        };
    }
    let a = lo / rc;
    let b = hi / rc;
    if a > 1.0 || b <= -1.0 {
        return IntervalSet::empty();
    }
    if a <= -1.0 && b > 1.0 {
        return IntervalSet::full();
    }
    let psi = b_coef.atan2(a_coef);
    // cos(y) in [a, b): y in (yb, ya] on [0, pi], mirrored on [pi, 2 pi)
    let ya = if a <= -1.0 { PI } else { a.clamp(-1.0, 1.0).acos() };
    let yb = if b > 1.0 { 0.0 } else { b.clamp(-1.0, 1.0).acos() };
    let mut raw = Vec::with_capacity(2);
    if ya > yb {
        raw.push((psi + yb, psi + ya));
        raw.push((psi + TAU - ya, psi + TAU - yb));
    }
    IntervalSet::from_raw(raw)
}

/// Orthogonal frame mapping `u/|u|` onto the last coordinate axis.
#[derive(Debug, Clone, Copy)]
pub struct RotationFrame {
    pub a: [[f64; 3]; 3],
    pub d: usize,
    pub u: [f64; 3],
}

impl RotationFrame {
    /// Map local coordinates `s` to global: `sigma = A^T s`.
    #[inline]
    pub fn to_global(&self, s: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for j in 0..self.d {
            let mut acc = 0.0;
            for i in 0..self.d {
                acc += self.a[i][j] * s[i];
            }
            out[j] = acc;
        }
        out
    }

    /// Row `i` of the matrix.
    #[inline]
    pub fn row(&self, i: usize) -> [f64; 3] {
        self.a[i]
    }
}

/// Construct the rotation frame for a nonzero relative velocity.
pub fn rotation_frame(u: &[f64], d: usize) -> Result<RotationFrame> {
    let norm2: f64 = u[..d].iter().map(|x| x * x).sum();
    if norm2 <= 0.0 {
        return Err(Error::InvalidParameter(
            "rotation frame requires |u| > 0".into(),
        ));
    }
    let norm = norm2.sqrt();
    let mut uf = [0.0; 3];
    uf[..d].copy_from_slice(&u[..d]);
    let mut a = [[0.0; 3]; 3];
    if d == 2 {
        a[0][0] = -u[1] / norm;
        a[0][1] = u[0] / norm;
        a[1][0] = u[0] / norm;
        a[1][1] = u[1] / norm;
        a[2][2] = 1.0;
    } else {
        let perp2 = u[0] * u[0] + u[1] * u[1];
        if perp2 <= (1e-14 * norm) * (1e-14 * norm) {
            // degenerate: u along the z-axis; flip when pointing down so the
            // frame still maps u to |u| e_3
            if u[2] > 0.0 {
                a[0][0] = 1.0;
                a[1][1] = 1.0;
                a[2][2] = 1.0;
            } else {
                a[0][0] = 1.0;
                a[1][1] = -1.0;
                a[2][2] = -1.0;
            }
        } else {
            let perp = perp2.sqrt();
            a[0][0] = u[0] * u[2] / (norm * perp);
            a[0][1] = u[1] * u[2] / (norm * perp);
            a[0][2] = -perp / norm;
            a[1][0] = -u[1] / perp;
            a[1][1] = u[0] / perp;
            a[1][2] = 0.0;
            a[2][0] = u[0] / norm;
            a[2][1] = u[1] / norm;
            a[2][2] = u[2] / norm;
        }
    }
    Ok(RotationFrame { a, d, u: uf })
}

/// Image-sphere data for a pair (v, u).
#[derive(Debug, Clone, Copy)]
struct SphereGeom {
    c: [f64; 3],
    r: f64,
    unorm: f64,
}

fn sphere_geom(v: &[f64], u: &[f64], d: usize) -> SphereGeom {
    let mut c = [0.0; 3];
    let mut unorm2 = 0.0;
    for j in 0..d {
        c[j] = v[j] - 0.5 * u[j];
        unorm2 += u[j] * u[j];
    }
    SphereGeom {
        c,
        r: 0.5 * unorm2.sqrt(),
        unorm: unorm2.sqrt(),
    }
}

/// Exact angle set with `v'(sigma) in E_m`, in the global parameterization:
/// d=2 the set of `theta` with `sigma = (sin theta, cos theta)`; d=3 at the
/// fixed polar angle the set of azimuths `phi`.
pub fn target_intervals(
    v: &[f64],
    u: &[f64],
    cell: [usize; 3],
    mesh: &Mesh,
    fixed_polar: Option<f64>,
) -> IntervalSet {
    let geom = sphere_geom(v, u, mesh.d);
    let (lo, hi) = mesh.bounds(cell);
    if mesh.d == 2 {
        // v'_1 = c1 + R sin(theta), v'_2 = c2 + R cos(theta)
        let b1 = solve_band(0.0, geom.r, lo[0] - geom.c[0], hi[0] - geom.c[0]);
        let b2 = solve_band(geom.r, 0.0, lo[1] - geom.c[1], hi[1] - geom.c[1]);
        b1.intersect(&b2)
    } else {
        let theta = fixed_polar.expect("d=3 requires a fixed polar angle");
        let z = geom.c[2] + geom.r * theta.cos();
        if z < lo[2] || z >= hi[2] {
            return IntervalSet::empty();
        }
        let rs = geom.r * theta.sin();
        let b1 = solve_band(rs, 0.0, lo[0] - geom.c[0], hi[0] - geom.c[0]);
        let b2 = solve_band(0.0, rs, lo[1] - geom.c[1], hi[1] - geom.c[1]);
        b1.intersect(&b2)
    }
}

/// Integrals over an angular arc of the local basis functions evaluated at
/// `v'(x) = alpha + P cos x + Q sin x`, divided by dv for the slope modes.
#[inline]
fn arc_moments(
    d: usize,
    nl: usize,
    alpha: &[f64; 3],
    p: &[f64; 3],
    q: &[f64; 3],
    center: &[f64; 3],
    dv: f64,
    a: f64,
    b: f64,
    out: &mut [f64; 4],
) {
    let len = b - a;
    out[0] = len;
    if nl > 1 {
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        for j in 0..d {
            out[1 + j] =
                ((alpha[j] - center[j]) * len + p[j] * (sb - sa) - q[j] * (cb - ca)) / dv;
        }
    }
}

/// Scalar angular integral for one target cell and one basis function.
///
/// Dispatch: integrable cross-sections use the global parameterization with
/// exact azimuth intervals; non-integrable ones (and non-constant b in 3d)
/// use the rotated frame with the grazing-region cancellation.
pub fn angular_integral(
    v: &[f64],
    u: &[f64],
    cell: [usize; 3],
    basis_index: usize,
    cs: &CrossSection,
    mesh: &Mesh,
    basis: &BasisSpec,
    tol: f64,
) -> Result<f64> {
    let d = mesh.d;
    let alpha = cs.params.alpha;
    let constant_b = cs.exponent().abs() < 1e-14;
    if alpha < 0.0 && (d == 2 || constant_b) {
        angular_integral_integrable(v, u, cell, basis_index, cs, mesh, basis, tol)
    } else {
        angular_integral_rotated(v, u, cell, basis_index, cs, mesh, basis, tol)
    }
}

#[allow(clippy::too_many_arguments)]
fn angular_integral_integrable(
    v: &[f64],
    u: &[f64],
    cell: [usize; 3],
    basis_index: usize,
    cs: &CrossSection,
    mesh: &Mesh,
    basis: &BasisSpec,
    tol: f64,
) -> Result<f64> {
    let d = mesh.d;
    let nl = basis.n_local(d);
    let geom = sphere_geom(v, u, d);
    let sb = cs.sphere_integral()?;
    let center = mesh.center(cell);
    let inside = mesh.locate(v) == Some(cell);
    let mut bv = [0.0f64; 4];
    basis.values(mesh, &center, v, &mut bv);
    let loss = if inside { bv[basis_index] * sb } else { 0.0 };

    let gain = if d == 2 {
        let set = target_intervals(v, u, cell, mesh, None);
        let constant_b = cs.exponent().abs() < 1e-14;
        let mut acc = 0.0;
        // v'(theta) = c + R (sin, cos): P1=0,Q1=R ; P2=R,Q2=0
        let al = [geom.c[0], geom.c[1], 0.0];
        let pc = [0.0, geom.r, 0.0];
        let qc = [geom.r, 0.0, 0.0];
        if constant_b {
            let bconst = cs.amplitude;
            let mut mom = [0.0f64; 4];
            for &(a, b) in &set.intervals {
                arc_moments(d, nl, &al, &pc, &qc, &center, mesh.dv, a, b, &mut mom);
                acc += bconst * mom[basis_index];
            }
        } else {
            // singular direction where sigma is parallel to u
            let theta_s = (u[0] / geom.unorm).atan2(u[1] / geom.unorm).rem_euclid(TAU);
            for &(a, b) in &set.intervals {
                let f = |th: f64| {
                    let vp = [
                        geom.c[0] + geom.r * th.sin(),
                        geom.c[1] + geom.r * th.cos(),
                        0.0,
                    ];
                    let mut vals = [0.0f64; 4];
                    basis.values(mesh, &center, &vp, &mut vals);
                    let cos_sc = (u[0] * th.sin() + u[1] * th.cos()) / geom.unorm;
                    cs.eval(cos_sc).map(|bb| bb * vals[basis_index]).unwrap_or(0.0)
                };
                let pieces: Vec<(f64, f64)> = if theta_s > a && theta_s < b {
                    vec![(a, theta_s), (theta_s, b)]
                } else {
                    vec![(a, b)]
                };
                for (lo, hi) in pieces {
                    let (val, _) = adaptive_gk(&f, lo, hi, tol, tol * 1e-3, 4000)?;
                    acc += val;
                }
            }
        }
        acc
    } else {
        // d = 3, constant b: polar range from the z-band, exact azimuth sets
        let bconst = cs.amplitude;
        let (lo, hi) = mesh.bounds(cell);
        if geom.r < 1e-14 {
            // degenerate sphere: v' == c
            return Ok(if mesh.locate(&geom.c[..d]) == Some(cell) {
                let mut vals = [0.0f64; 4];
                basis.values(mesh, &center, &geom.c, &mut vals);
                vals[basis_index] * sb - loss
            } else {
                -loss
            });
        }
        let t_lo = ((lo[2] - geom.c[2]) / geom.r).clamp(-1.0, 1.0);
        let t_hi = ((hi[2] - geom.c[2]) / geom.r).clamp(-1.0, 1.0);
        let th_lo = t_hi.acos();
        let th_hi = t_lo.acos();
        if th_hi <= th_lo {
            return Ok(-loss);
        }
        let f = |th: f64| {
            let set = target_intervals(v, u, cell, mesh, Some(th));
            if set.is_empty() {
                return 0.0;
            }
            let st = th.sin();
            let al = [geom.c[0], geom.c[1], geom.c[2] + geom.r * th.cos()];
            let pc = [geom.r * st, 0.0, 0.0];
            let qc = [0.0, geom.r * st, 0.0];
            let mut acc = 0.0;
            let mut mom = [0.0f64; 4];
            for &(a, b) in &set.intervals {
                arc_moments(d, nl, &al, &pc, &qc, &center, mesh.dv, a, b, &mut mom);
                acc += mom[basis_index];
            }
            bconst * st * acc
        };
        let (val, _) = adaptive_gk(&f, th_lo, th_hi, tol, tol * 1e-3, 4000)?;
        val
    };
    Ok(gain - loss)
}

/// Rotated-frame affine coefficients of `v'` at polar angle `theta` (d = 3):
/// `v'_j(phi) = alpha_j + P_j cos phi + Q_j sin phi`.
#[inline]
fn rotated_circle(
    frame: &RotationFrame,
    geom: &SphereGeom,
    theta: f64,
) -> ([f64; 3], [f64; 3], [f64; 3]) {
    debug_assert_eq!(frame.d, 3);
    let (st, ct) = theta.sin_cos();
    let mut al = [0.0; 3];
    let mut pc = [0.0; 3];
    let mut qc = [0.0; 3];
    for j in 0..3 {
        al[j] = geom.c[j] + geom.r * ct * frame.a[2][j];
        pc[j] = geom.r * st * frame.a[0][j];
        qc[j] = geom.r * st * frame.a[1][j];
    }
    (al, pc, qc)
}

/// Azimuth set with `v' in E_m` at fixed polar angle, in the rotated frame.
fn rotated_intervals(
    frame: &RotationFrame,
    geom: &SphereGeom,
    theta: f64,
    lo: &[f64; 3],
    hi: &[f64; 3],
) -> IntervalSet {
    let (al, pc, qc) = rotated_circle(frame, geom, theta);
    let mut set = solve_band(pc[0], qc[0], lo[0] - al[0], hi[0] - al[0]);
    for j in 1..frame.d {
        if set.is_empty() {
            return set;
        }
        set = set.intersect(&solve_band(pc[j], qc[j], lo[j] - al[j], hi[j] - al[j]));
    }
    set
}

/// Grazing-region contribution over `[0, theta0]` for the slope modes: the
/// azimuthal average of `v' - v` is `(cos theta - 1) u / 2`, so the full
/// circles contribute exactly through the radial moment of `b`.
fn s1_contribution(
    frame: &RotationFrame,
    geom: &SphereGeom,
    cs: &CrossSection,
    basis_index: usize,
    theta0: f64,
    dv: f64,
) -> Result<f64> {
    if basis_index == 0 || theta0 <= 0.0 {
        return Ok(0.0);
    }
    let d = frame.d;
    let j = basis_index - 1;
    let uhat = frame.a[2];
    let uhat_j = if d == 2 { frame.a[1][j] } else { uhat[j] };
    let t0 = (0.5 * theta0).sin();
    let amp = cs.amplitude;
    let alpha = cs.params.alpha;
    if d == 3 {
        // 2 pi R uhat_j / dv * int_0^theta0 (cos-1) b sin dtheta
        //   = 2 pi R uhat_j / dv * (-8 amp t0^{2-alpha} / (2-alpha))
        Ok(-16.0 * PI * amp * geom.r * uhat_j * t0.powf(2.0 - alpha) / ((2.0 - alpha) * dv))
    } else {
        // 2 R uhat_j / dv * int_0^theta0 (cos-1) b dtheta, via t = sin(theta/2)
        let f = |t: f64| -8.0 * amp * t.powf(1.0 - alpha) / (1.0 - t * t).sqrt().max(1e-14);
        let (val, _) = adaptive_gk(&f, 0.0, t0.min(1.0 - 1e-12), 1e-9, 1e-12, 4000)?;
        Ok(2.0 * geom.r * uhat_j * val / dv)
    }
}

/// Polar-angle window over which the sphere can reach the cell, from the
/// distance bracket `|v' - v| = |u| sin(theta/2)`.
fn reach_window(v: &[f64], u_norm: f64, lo: &[f64; 3], hi: &[f64; 3], d: usize) -> Option<(f64, f64)> {
    let mut dmin2 = 0.0;
    let mut dmax2 = 0.0;
    for j in 0..d {
        let below = (lo[j] - v[j]).max(0.0);
        let above = (v[j] - hi[j]).max(0.0);
        let gap = below.max(above);
        dmin2 += gap * gap;
        let far = (v[j] - lo[j]).abs().max((v[j] - hi[j]).abs());
        dmax2 += far * far;
    }
    let dmin = dmin2.sqrt();
    if dmin >= u_norm {
        return None;
    }
    let t_lo = (dmin / u_norm).min(1.0);
    let t_hi = (dmax2.sqrt() / u_norm).min(1.0);
    Some((2.0 * t_lo.asin(), 2.0 * t_hi.asin()))
}

#[allow(clippy::too_many_arguments)]
fn angular_integral_rotated(
    v: &[f64],
    u: &[f64],
    cell: [usize; 3],
    basis_index: usize,
    cs: &CrossSection,
    mesh: &Mesh,
    basis: &BasisSpec,
    tol: f64,
) -> Result<f64> {
    let d = mesh.d;
    let nl = basis.n_local(d);
    let geom = sphere_geom(v, u, d);
    if geom.unorm <= 0.0 {
        return Err(Error::InvalidParameter("|u| must be positive".into()));
    }
    let frame = rotation_frame(u, d)?;
    let center = mesh.center(cell);
    let (lo, hi) = mesh.bounds(cell);
    let inside = mesh.locate(v) == Some(cell);
    let mut bv = [0.0f64; 4];
    basis.values(mesh, &center, v, &mut bv);
    let phi_v = bv[basis_index];

    let gain_at = |theta: f64| -> f64 {
        if d == 3 {
            let set = rotated_intervals(&frame, &geom, theta, &lo, &hi);
            if set.is_empty() {
                return 0.0;
            }
            let (al, pc, qc) = rotated_circle(&frame, &geom, theta);
            let mut acc = 0.0;
            let mut mom = [0.0f64; 4];
            for &(a, b) in &set.intervals {
                arc_moments(d, nl, &al, &pc, &qc, &center, mesh.dv, a, b, &mut mom);
                acc += mom[basis_index];
            }
            acc
        } else {
            // two branch points at +/950- theta
            let (st, ct) = theta.sin_cos();
            let mut acc = 0.0;
            for sgn in [1.0f64, -1.0] {
                let mut vp = [0.0; 3];
                for j in 0..2 {
                    vp[j] = geom.c[j] + geom.r * (sgn * st * frame.a[0][j] + ct * frame.a[1][j]);
                }
                if mesh.locate(&vp[..2]) == Some(cell) {
                    let mut vals = [0.0f64; 4];
                    basis.values(mesh, &center, &vp, &mut vals);
                    acc += vals[basis_index];
                }
            }
            acc
        }
    };
    let circle_measure = if d == 3 { TAU } else { 2.0 };
    let polar_jac = |theta: f64| if d == 3 { theta.sin() } else { 1.0 };

    if inside {
        let dist = mesh.dist_to_cell_boundary(v, cell);
        let t0 = (dist / geom.unorm).min(1.0);
        let theta0 = 2.0 * t0.asin();
        let s1 = s1_contribution(&frame, &geom, cs, basis_index, theta0, mesh.dv)?;
        let f = |theta: f64| {
            let b = cs.eval_half_sine((0.5 * theta).sin());
            b * polar_jac(theta) * (gain_at(theta) - phi_v * circle_measure)
        };
        let (rest, _) = adaptive_gk(&f, theta0, PI, tol, tol * 1e-3, 6000)?;
        Ok(s1 + rest)
    } else {
        let Some((th_lo, th_hi)) = reach_window(v, geom.unorm, &lo, &hi, d) else {
            return Ok(0.0);
        };
        if th_hi <= th_lo {
            return Ok(0.0);
        }
        let f = |theta: f64| {
            let b = cs.eval_half_sine((0.5 * theta).sin());
            b * polar_jac(theta) * gain_at(theta)
        };
        let (val, _) = adaptive_gk(&f, th_lo, th_hi, tol, tol * 1e-3, 6000)?;
        Ok(val)
    }
}

/// Buffers reused across sweep calls; cells are tracked with an epoch mark so
/// clearing between calls is O(touched).
#[derive(Debug, Default)]
pub struct SweepScratch {
    acc: Vec<[f64; 4]>,
    marks: Vec<u32>,
    epoch: u32,
    touched: Vec<usize>,
    crossings: Vec<f64>,
}

impl SweepScratch {
    pub fn for_mesh(mesh: &Mesh) -> Self {
        Self {
            acc: vec![[0.0; 4]; mesh.n_cells()],
            marks: vec![0; mesh.n_cells()],
            epoch: 0,
            touched: Vec::new(),
            crossings: Vec::new(),
        }
    }

    fn begin(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
        self.touched.clear();
    }

    #[inline]
    fn add(&mut self, cell: usize, nl: usize, vals: &[f64; 4], w: f64) {
        if self.marks[cell] != self.epoch {
            self.marks[cell] = self.epoch;
            self.acc[cell] = [0.0; 4];
            self.touched.push(cell);
        }
        let slot = &mut self.acc[cell];
        for l in 0..nl {
            slot[l] += w * vals[l];
        }
    }

    fn drain(&mut self, out: &mut Vec<(usize, [f64; 4])>) {
        self.touched.sort_unstable();
        out.clear();
        for &cell in &self.touched {
            let v = self.acc[cell];
            if v.iter().any(|x| *x != 0.0) {
                out.push((cell, v));
            }
        }
    }
}

/// Knobs for batched sweeps (assembly path).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SweepOptions {
    /// geometric growth of polar panels away from the grazing cutoff
    pub panel_ratio: f64,
    /// Gauss order per polar panel
    pub panel_order: usize,
    pub max_panels: usize,
    /// Gauss order per azimuth arc for non-constant cross-sections
    pub arc_order: usize,
    /// tolerance handed to the per-cell adaptive paths
    pub tol: f64,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            panel_ratio: 1.7,
            panel_order: 8,
            max_panels: 40,
            arc_order: 8,
            tol: 1e-7,
        }
    }
}

/// All-cells angular integrals for one (v, u) pair: fills `out` with
/// `(flat cell, per-basis values of g_{m,i})`, sorted by cell.
pub fn sweep_all_targets(
    v: &[f64],
    u: &[f64],
    mesh: &Mesh,
    basis: &BasisSpec,
    cs: &CrossSection,
    opts: &SweepOptions,
    scratch: &mut SweepScratch,
    out: &mut Vec<(usize, [f64; 4])>,
) -> Result<()> {
    scratch.begin();
    let d = mesh.d;
    if cs.params.alpha < 0.0 && d == 2 {
        sweep_d2_integrable(v, u, mesh, basis, cs, opts, scratch)?;
    } else {
        sweep_rotated(v, u, mesh, basis, cs, opts, scratch)?;
    }
    scratch.drain(out);
    Ok(())
}

/// d=2, integrable b: walk the image circle once in global coordinates.
fn sweep_d2_integrable(
    v: &[f64],
    u: &[f64],
    mesh: &Mesh,
    basis: &BasisSpec,
    cs: &CrossSection,
    opts: &SweepOptions,
    scratch: &mut SweepScratch,
) -> Result<()> {
    let nl = basis.n_local(2);
    let geom = sphere_geom(v, u, 2);
    let sb = cs.sphere_integral()?;
    let constant_b = cs.exponent().abs() < 1e-14;
    let bconst = cs.amplitude;

    // crossing angles of grid lines along both axes
    scratch.crossings.clear();
    for axis in 0..2 {
        let cj = geom.c[axis];
        let i_lo = (((cj - geom.r) + mesh.v_max) / mesh.dv).floor().max(0.0) as usize;
        let i_hi =
            ((((cj + geom.r) + mesh.v_max) / mesh.dv).ceil() as usize).min(mesh.n);
        for i in i_lo..=i_hi {
            let g = -mesh.v_max + i as f64 * mesh.dv;
            let t = (g - cj) / geom.r;
            if t.abs() > 1.0 {
                continue;
            }
            if axis == 0 {
                // sin(theta) = t
                let base = t.asin();
                scratch.crossings.push(base.rem_euclid(TAU));
                scratch.crossings.push((PI - base).rem_euclid(TAU));
            } else {
                // cos(theta) = t
                let base = t.clamp(-1.0, 1.0).acos();
                scratch.crossings.push(base);
                scratch.crossings.push(TAU - base);
            }
        }
    }
    scratch.crossings.push(0.0);
    scratch
        .crossings
        .sort_by(|a, b| a.total_cmp(b));
    scratch.crossings.dedup_by(|a, b| (*a - *b).abs() < 1e-13);

    let al = [geom.c[0], geom.c[1], 0.0];
    let pc = [0.0, geom.r, 0.0];
    let qc = [geom.r, 0.0, 0.0];
    let theta_s = if constant_b {
        0.0
    } else {
        (u[0] / geom.unorm).atan2(u[1] / geom.unorm).rem_euclid(TAU)
    };
    let (arc_nodes, arc_weights) = gauss_legendre(opts.arc_order);

    let n_arcs = scratch.crossings.len();
    let mut mom = [0.0f64; 4];
    for i in 0..n_arcs {
        let a = scratch.crossings[i];
        let b = if i + 1 < n_arcs {
            scratch.crossings[i + 1]
        } else {
            scratch.crossings[0] + TAU
        };
        if b - a < 1e-13 {
            continue;
        }
        let mid = 0.5 * (a + b);
        let vp = [
            geom.c[0] + geom.r * mid.sin(),
            geom.c[1] + geom.r * mid.cos(),
        ];
        let Some(k) = mesh.locate(&vp) else {
            continue;
        };
        let cell = mesh.flat(k);
        let center = mesh.center(k);
        if constant_b {
            arc_moments(2, nl, &al, &pc, &qc, &center, mesh.dv, a, b, &mut mom);
            scratch.add(cell, nl, &mom, bconst);
        } else {
            // split at the grazing direction if it falls inside this arc
            let mut pieces = [(a, b), (0.0, 0.0)];
            let mut np = 1;
            for shift in [-TAU, 0.0, TAU] {
                let ts = theta_s + shift;
                if ts > a + 1e-13 && ts < b - 1e-13 {
                    pieces = [(a, ts), (ts, b)];
                    np = 2;
                    break;
                }
            }
            for &(pa, pb) in pieces.iter().take(np) {
                let half = 0.5 * (pb - pa);
                let midp = 0.5 * (pa + pb);
                for (x, w) in arc_nodes.iter().zip(&arc_weights) {
                    let th = midp + half * x;
                    let vp = [geom.c[0] + geom.r * th.sin(), geom.c[1] + geom.r * th.cos(), 0.0];
                    let cos_sc = (u[0] * th.sin() + u[1] * th.cos()) / geom.unorm;
                    let bb = cs.eval(cos_sc).unwrap_or(0.0);
                    let mut vals = [0.0f64; 4];
                    basis.values(mesh, &center, &vp, &mut vals);
                    for l in nl..4 {
                        vals[l] = 0.0;
                    }
                    scratch.add(cell, nl, &vals, bb * w * half);
                }
            }
        }
    }

    // loss on the cell containing v
    if let Some(k) = mesh.locate(v) {
        let cell = mesh.flat(k);
        let center = mesh.center(k);
        let mut vals = [0.0f64; 4];
        basis.values(mesh, &center, v, &mut vals);
        scratch.add(cell, nl, &vals, -sb);
    }
    Ok(())
}

/// Rotated-frame batched sweep: geometric polar panels from the grazing
/// cutoff, exact azimuth arcs per panel node; valid for every alpha < 2.
fn sweep_rotated(
    v: &[f64],
    u: &[f64],
    mesh: &Mesh,
    basis: &BasisSpec,
    cs: &CrossSection,
    opts: &SweepOptions,
    scratch: &mut SweepScratch,
) -> Result<()> {
    let d = mesh.d;
    let nl = basis.n_local(d);
    let geom = sphere_geom(v, u, d);
    let frame = rotation_frame(u, d)?;
    let home = mesh.locate(v);
    let Some(home_k) = home else {
        return Err(Error::InvalidParameter(
            "sweep source point must lie inside the domain".into(),
        ));
    };
    let home_flat = mesh.flat(home_k);
    let home_center = mesh.center(home_k);
    let mut phi_v = [0.0f64; 4];
    basis.values(mesh, &home_center, v, &mut phi_v);

    let dist = mesh.dist_to_cell_boundary(v, home_k);
    let t0 = (dist / geom.unorm).min(1.0);
    let theta0 = (2.0 * t0.asin()).max(1e-9);

    // grazing piece on the home cell (slope modes only)
    if nl > 1 {
        for bi in 1..nl {
            let s1 = s1_contribution(&frame, &geom, cs, bi, theta0.min(PI), mesh.dv)?;
            let mut vals = [0.0f64; 4];
            vals[bi] = 1.0;
            scratch.add(home_flat, nl, &vals, s1);
        }
    }
    if theta0 >= PI {
        return Ok(());
    }

    // geometric polar panels away from the grazing cutoff
    let mut breaks = vec![theta0];
    let mut ratio = opts.panel_ratio.max(1.1);
    let needed = ((PI / theta0).ln() / ratio.ln()).ceil() as usize;
    if needed > opts.max_panels {
        ratio = (PI / theta0).powf(1.0 / opts.max_panels as f64);
    }
    let mut th = theta0;
    while th * ratio < PI {
        th *= ratio;
        breaks.push(th);
    }
    breaks.push(PI);
    if d == 2 {
        // the two branch points cross grid lines at solvable angles; insert
        // them as breakpoints so every panel integrand is smooth
        for sgn in [1.0f64, -1.0] {
            for axis in 0..2 {
                let a_coef = geom.r * frame.a[1][axis];
                let b_coef = sgn * geom.r * frame.a[0][axis];
                let rc = (a_coef * a_coef + b_coef * b_coef).sqrt();
                if rc < 1e-14 {
                    continue;
                }
                let psi = b_coef.atan2(a_coef);
                let i_lo = (((geom.c[axis] - rc) + mesh.v_max) / mesh.dv).floor().max(0.0) as usize;
                let i_hi =
                    ((((geom.c[axis] + rc) + mesh.v_max) / mesh.dv).ceil() as usize).min(mesh.n);
                for i in i_lo..=i_hi {
                    let g = -mesh.v_max + i as f64 * mesh.dv;
                    let t = (g - geom.c[axis]) / rc;
                    if t.abs() > 1.0 {
                        continue;
                    }
                    let dth = t.clamp(-1.0, 1.0).acos();
                    for cand in [psi + dth, psi - dth, psi + dth - TAU, psi - dth + TAU] {
                        if cand > theta0 + 1e-12 && cand < PI - 1e-12 {
                            breaks.push(cand);
                        }
                    }
                }
            }
        }
        breaks.sort_by(|a, b| a.total_cmp(b));
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    } else {
        // per-slice azimuth crossings appear or vanish where the circle is
        // tangent to a grid plane: R sin(t) h_j +/- R cos(t) a2_j = +/-(g - c_j),
        // a solvable sinusoid equation per axis and grid line
        for axis in 0..3 {
            let hj = (frame.a[0][axis] * frame.a[0][axis] + frame.a[1][axis] * frame.a[1][axis])
                .sqrt();
            let a2 = frame.a[2][axis];
            let i_lo = (((geom.c[axis] - geom.r) + mesh.v_max) / mesh.dv).floor().max(0.0) as usize;
            let i_hi =
                ((((geom.c[axis] + geom.r) + mesh.v_max) / mesh.dv).ceil() as usize).min(mesh.n);
            for i in i_lo..=i_hi {
                let g = -mesh.v_max + i as f64 * mesh.dv;
                let delta = g - geom.c[axis];
                for sgn in [1.0f64, -1.0] {
                    let a_cos = sgn * geom.r * a2;
                    let b_sin = geom.r * hj;
                    let rc = (a_cos * a_cos + b_sin * b_sin).sqrt();
                    if rc < 1e-14 || (sgn * delta).abs() > rc {
                        continue;
                    }
                    let psi = b_sin.atan2(a_cos);
                    let dth = ((sgn * delta) / rc).clamp(-1.0, 1.0).acos();
                    for cand in [psi + dth, psi - dth, psi + dth - TAU, psi - dth + TAU] {
                        if cand > theta0 + 1e-12 && cand < PI - 1e-12 {
                            breaks.push(cand);
                        }
                    }
                }
            }
        }
        breaks.sort_by(|a, b| a.total_cmp(b));
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-10);
    }
    let (pn, pw) = gauss_legendre(opts.panel_order);

    let circle_measure = if d == 3 { TAU } else { 2.0 };
    for win in breaks.windows(2) {
        let (a, b) = (win[0], win[1]);
        let half = 0.5 * (b - a);
        let midp = 0.5 * (a + b);
        for (x, w) in pn.iter().zip(&pw) {
            let theta = midp + half * x;
            let wth = w * half;
            let bt = cs.eval_half_sine((0.5 * theta).sin());
            let jac = if d == 3 { theta.sin() } else { 1.0 };
            let wslice = bt * jac * wth;
            if wslice == 0.0 {
                continue;
            }
            if d == 3 {
                let (al, pc, qc) = rotated_circle(&frame, &geom, theta);
                walk_circle_arcs(mesh, nl, &al, &pc, &qc, wslice, scratch);
            } else {
                let (st, ct) = theta.sin_cos();
                for sgn in [1.0f64, -1.0] {
                    let mut vp = [0.0; 3];
                    for j in 0..2 {
                        vp[j] =
                            geom.c[j] + geom.r * (sgn * st * frame.a[0][j] + ct * frame.a[1][j]);
                    }
                    if let Some(k) = mesh.locate(&vp[..2]) {
                        let center = mesh.center(k);
                        let mut vals = [0.0f64; 4];
                        basis.values(mesh, &center, &vp, &mut vals);
                        scratch.add(mesh.flat(k), nl, &vals, wslice);
                    }
                }
            }
            // loss over the full circle beyond the grazing cutoff
            scratch.add(home_flat, nl, &phi_v, -circle_measure * wslice);
        }
    }
    Ok(())
}

/// Split the rotated circle at fixed polar angle into cell-wise arcs by the
/// grid-line crossings and accumulate the per-arc basis moments.
fn walk_circle_arcs(
    mesh: &Mesh,
    nl: usize,
    al: &[f64; 3],
    pc: &[f64; 3],
    qc: &[f64; 3],
    w: f64,
    scratch: &mut SweepScratch,
) {
    let mut crossings: Vec<f64> = Vec::with_capacity(16);
    for axis in 0..3.min(mesh.d) {
        let rc = (pc[axis] * pc[axis] + qc[axis] * qc[axis]).sqrt();
        if rc < 1e-14 {
            continue;
        }
        let psi = qc[axis].atan2(pc[axis]);
        let i_lo = (((al[axis] - rc) + mesh.v_max) / mesh.dv).floor().max(0.0) as usize;
        let i_hi = ((((al[axis] + rc) + mesh.v_max) / mesh.dv).ceil() as usize).min(mesh.n);
        for i in i_lo..=i_hi {
            let g = -mesh.v_max + i as f64 * mesh.dv;
            let t = (g - al[axis]) / rc;
            if t.abs() > 1.0 {
                continue;
            }
            let dphi = t.clamp(-1.0, 1.0).acos();
            crossings.push((psi + dphi).rem_euclid(TAU));
            crossings.push((psi - dphi).rem_euclid(TAU));
        }
    }
    crossings.push(0.0);
    crossings.sort_by(|a, b| a.total_cmp(b));
    crossings.dedup_by(|a, b| (*a - *b).abs() < 1e-13);
    let n = crossings.len();
    let mut mom = [0.0f64; 4];
    for i in 0..n {
        let a = crossings[i];
        let b = if i + 1 < n {
            crossings[i + 1]
        } else {
            crossings[0] + TAU
        };
        if b - a < 1e-13 {
            continue;
        }
        let mid = 0.5 * (a + b);
        let (sm, cm) = mid.sin_cos();
        let mut vp = [0.0; 3];
        for j in 0..mesh.d {
            vp[j] = al[j] + pc[j] * cm + qc[j] * sm;
        }
        let Some(k) = mesh.locate(&vp[..mesh.d]) else {
            continue;
        };
        let center = mesh.center(k);
        arc_moments(mesh.d, nl, al, pc, qc, &center, mesh.dv, a, b, &mut mom);
        scratch.add(mesh.flat(k), nl, &mom, w);
    }
}
