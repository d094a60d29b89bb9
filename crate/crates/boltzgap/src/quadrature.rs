//! Quadrature rules: Gauss–Legendre tensor rules on mesh cells, adaptive
//! Gauss–Kronrod for one-dimensional integrals with error reporting, and the
//! pair-of-triangles rule used by the direct assembly backend.

use crate::error::{Error, Result};
use gauss_quad::{GaussHermite, GaussLegendre};
use std::num::NonZeroUsize;

/// Gauss–Legendre nodes and weights on [-1, 1], ascending nodes.
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = GaussLegendre::new(NonZeroUsize::new(order.max(1)).expect("nonzero"));
    let mut pairs: Vec<(f64, f64)> = rule
        .nodes()
        .copied()
        .zip(rule.weights().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gauss–Hermite nodes and weights for the weight exp(-x^2), ascending nodes.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    let rule = GaussHermite::new(NonZeroUsize::new(order.max(1)).expect("nonzero"));
    let mut pairs: Vec<(f64, f64)> = rule
        .nodes()
        .copied()
        .zip(rule.weights().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Tensor-product Gauss–Legendre rule over a d-dimensional axis-aligned box.
///
/// Points are offsets from the box center; the first `dim` entries of each
/// point are meaningful.
#[derive(Debug, Clone)]
pub struct TensorRule {
    pub dim: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl TensorRule {
    /// Rule of `order` points per axis for a cube of side `h` centered at 0.
    pub fn new(dim: usize, order: usize, h: f64) -> Self {
        let (x, w) = gauss_legendre(order);
        let x: Vec<f64> = x.iter().map(|t| t * h / 2.0).collect();
        let w: Vec<f64> = w.iter().map(|t| t * h / 2.0).collect();
        let mut points = Vec::with_capacity(order.pow(dim as u32));
        let mut weights = Vec::with_capacity(order.pow(dim as u32));
        let mut idx = vec![0usize; dim];
        loop {
            let mut p = [0.0; 3];
            let mut wt = 1.0;
            for (axis, &i) in idx.iter().enumerate() {
                p[axis] = x[i];
                wt *= w[i];
            }
            points.push(p);
            weights.push(wt);
            // odometer increment
            let mut axis = 0;
            loop {
                if axis == dim {
                    return Self {
                        dim,
                        points,
                        weights,
                    };
                }
                idx[axis] += 1;
                if idx[axis] < order {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
        }
    }

    /// Same rule with every cell subdivided `2^depth` times per axis.
    pub fn subdivided(dim: usize, order: usize, h: f64, depth: usize) -> Self {
        if depth == 0 {
            return Self::new(dim, order, h);
        }
        let nsub = 1usize << depth;
        let child = Self::new(dim, order, h / nsub as f64);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        let mut idx = vec![0usize; dim];
        loop {
            let mut center = [0.0; 3];
            for (axis, &i) in idx.iter().enumerate() {
                center[axis] = -h / 2.0 + (i as f64 + 0.5) * h / nsub as f64;
            }
            for (p, w) in child.points.iter().zip(&child.weights) {
                let mut q = [0.0; 3];
                for axis in 0..dim {
                    q[axis] = center[axis] + p[axis];
                }
                points.push(q);
                weights.push(*w);
            }
            let mut axis = 0;
            loop {
                if axis == dim {
                    return Self {
                        dim,
                        points,
                        weights,
                    };
                }
                idx[axis] += 1;
                if idx[axis] < nsub {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

// 15-point Kronrod extension of the 7-point Gauss rule on [-1, 1].
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// One Gauss–Kronrod 7/15 panel. Returns (kronrod value, error estimate).
fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let f1 = f(c - x);
        let f2 = f(c + x);
        kron += WGK[j] * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod integration with bisection refinement.
///
/// Splits until both the relative and absolute tolerances are met or the
/// subdivision budget is exhausted, in which case the achieved error estimate
/// is reported in the failure.
pub fn adaptive_gk<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    max_intervals: usize,
) -> Result<(f64, f64)> {
    if a == b {
        return Ok((0.0, 0.0));
    }
    let (v0, e0) = gk15(f, a, b);
    // (err, a, b, value); worst interval refined first
    let mut heap: Vec<(f64, f64, f64, f64)> = vec![(e0, a, b, v0)];
    let mut total = v0;
    let mut total_err = e0;
    while total_err > abs_tol && total_err > rel_tol * total.abs() {
        if heap.len() >= max_intervals {
            return Err(Error::ToleranceNotMet {
                requested: rel_tol * total.abs().max(abs_tol / rel_tol.max(1e-300)),
                achieved: total_err,
            });
        }
        // pop worst
        let mut worst = 0;
        for (i, it) in heap.iter().enumerate() {
            if it.0 > heap[worst].0 {
                worst = i;
            }
        }
        let (e, lo, hi, v) = heap.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(f, lo, mid);
        let (v2, e2) = gk15(f, mid, hi);
        total += v1 + v2 - v;
        total_err += e1 + e2 - e;
        heap.push((e1, lo, mid, v1));
        heap.push((e2, mid, hi, v2));
    }
    Ok((total, total_err))
}

/// Adaptive integration over a union of disjoint intervals with forced
/// breakpoints (used for integrands with known interior kinks).
pub fn adaptive_gk_points<F: Fn(f64) -> f64>(
    f: &F,
    pieces: &[(f64, f64)],
    rel_tol: f64,
    abs_tol: f64,
    max_intervals: usize,
) -> Result<(f64, f64)> {
    let mut total = 0.0;
    let mut err = 0.0;
    let n = pieces.len().max(1);
    for &(a, b) in pieces {
        let (v, e) = adaptive_gk(f, a, b, rel_tol, abs_tol / n as f64, max_intervals)?;
        total += v;
        err += e;
    }
    Ok((total, err))
}

/// Symmetric Gauss rules on the reference triangle {x>=0, y>=0, x+y<=1},
/// given as (barycentric-independent points, weight) with weights summing to
/// the reference area 1/2.
pub fn triangle_points(points_per_triangle: usize) -> Result<Vec<([f64; 2], f64)>> {
    let pts = match points_per_triangle {
        1 => vec![([1.0 / 3.0, 1.0 / 3.0], 0.5)],
        3 => vec![
            ([1.0 / 6.0, 1.0 / 6.0], 1.0 / 6.0),
            ([2.0 / 3.0, 1.0 / 6.0], 1.0 / 6.0),
            ([1.0 / 6.0, 2.0 / 3.0], 1.0 / 6.0),
        ],
        4 => vec![
            ([1.0 / 3.0, 1.0 / 3.0], -27.0 / 96.0),
            ([0.6, 0.2], 25.0 / 96.0),
            ([0.2, 0.6], 25.0 / 96.0),
            ([0.2, 0.2], 25.0 / 96.0),
        ],
        6 => {
            let a1 = 0.445948490915965;
            let w1 = 0.223381589678011 / 2.0;
            let a2 = 0.091576213509771;
            let w2 = 0.109951743655322 / 2.0;
            vec![
                ([a1, a1], w1),
                ([1.0 - 2.0 * a1, a1], w1),
                ([a1, 1.0 - 2.0 * a1], w1),
                ([a2, a2], w2),
                ([1.0 - 2.0 * a2, a2], w2),
                ([a2, 1.0 - 2.0 * a2], w2),
            ]
        }
        other => {
            return Err(Error::InvalidParameter(format!(
                "unsupported triangle rule with {other} points (use 1, 3, 4 or 6)"
            )))
        }
    };
    Ok(pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn tensor_rule_integrates_polynomials() {
        let r = TensorRule::new(2, 3, 0.5);
        let vol: f64 = r.weights.iter().sum();
        assert_abs_diff_eq!(vol, 0.25, epsilon = 1e-14);
        let x2: f64 = r
            .points
            .iter()
            .zip(&r.weights)
            .map(|(p, w)| p[0] * p[0] * w)
            .sum();
        // int_{-h/2}^{h/2} x^2 dx * h = h^4/12
        assert_abs_diff_eq!(x2, 0.5f64.powi(4) / 12.0, epsilon = 1e-15);
    }

    #[test]
    fn subdivided_rule_matches_plain_on_smooth() {
        let f = |p: &[f64; 3]| (p[0] + 0.3).cos() * (p[1] - 0.1).exp();
        let a = TensorRule::new(2, 6, 1.0);
        let b = TensorRule::subdivided(2, 3, 1.0, 2);
        let ia: f64 = a.points.iter().zip(&a.weights).map(|(p, w)| f(p) * w).sum();
        let ib: f64 = b.points.iter().zip(&b.weights).map(|(p, w)| f(p) * w).sum();
        assert_abs_diff_eq!(ia, ib, epsilon = 1e-10);
    }

    #[test]
    fn adaptive_gk_handles_endpoint_singularity() {
        // int_0^1 x^{-1/2} dx = 2
        let (v, _) = adaptive_gk(&|x: f64| x.abs().sqrt().recip(), 1e-300, 1.0, 1e-9, 1e-12, 2000)
            .expect("converges");
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-7);
    }

    #[test]
    fn adaptive_gk_reports_unmet_tolerance() {
        let r = adaptive_gk(&|x: f64| (1.0 / x).sin(), 1e-6, 1.0, 1e-14, 1e-14, 8);
        match r {
            Err(Error::ToleranceNotMet { achieved, .. }) => assert!(achieved > 0.0),
            other => panic!("expected tolerance failure, got {other:?}"),
        }
    }

    #[test]
    fn triangle_rules_integrate_expected_degree() {
        // exactness on x^a y^b over the reference triangle:
        // int x^a y^b = a! b! / (a+b+2)!
        let exact = |a: u32, b: u32| {
            let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>().max(1.0);
            fact(a) * fact(b) / fact(a + b + 2)
        };
        for (npts, deg) in [(1, 1u32), (3, 2), (4, 3), (6, 4)] {
            let rule = triangle_points(npts).unwrap();
            for a in 0..=deg {
                for b in 0..=(deg - a) {
                    let q: f64 = rule
                        .iter()
                        .map(|([x, y], w)| x.powi(a as i32) * y.powi(b as i32) * w)
                        .sum();
                    assert_abs_diff_eq!(q, exact(a, b), epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn gauss_hermite_integrates_gaussian_moments() {
        let (x, w) = gauss_hermite(32);
        let m2: f64 = x.iter().zip(&w).map(|(t, w)| t * t * w).sum();
        assert_abs_diff_eq!(m2, std::f64::consts::PI.sqrt() / 2.0, epsilon = 1e-12);
    }
}
