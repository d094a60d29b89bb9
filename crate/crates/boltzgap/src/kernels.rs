//! Pointwise physics: the Maxwellian equilibrium, the angular cross-section
//! family `b(cos theta) = amplitude * sin^{-(d-1)-alpha}(theta/2)`, and the
//! collision frequency `nu(v)`.

use crate::error::{Error, Result};
use crate::mesh::OperatorParams;
use crate::quadrature::adaptive_gk;
use crate::special::{gamma, i0e};
use std::f64::consts::PI;

/// Normalized Maxwellian `(2 pi)^{-d/2} exp(-|v|^2 / 2)`.
#[inline]
pub fn maxwellian(v: &[f64], d: usize) -> f64 {
    let r2: f64 = v[..d].iter().map(|x| x * x).sum();
    (2.0 * PI).powi(-(d as i32)) .sqrt() * (-0.5 * r2).exp()
}

/// Square root of the Maxwellian, `(2 pi)^{-d/4} exp(-|v|^2 / 4)`.
#[inline]
pub fn maxwellian_sqrt(v: &[f64], d: usize) -> f64 {
    let r2: f64 = v[..d].iter().map(|x| x * x).sum();
    (2.0 * PI).powf(-(d as f64) / 4.0) * (-0.25 * r2).exp()
}

/// Angular cross-section with its amplitude resolved.
#[derive(Debug, Clone, Copy)]
pub struct CrossSection {
    pub params: OperatorParams,
    pub amplitude: f64,
}

impl CrossSection {
    pub fn new(params: OperatorParams) -> Self {
        let amplitude = if params.b_normalized {
            1.0 / sphere_integral_unit(params.d, params.alpha)
                .expect("b_normalized implies alpha < 0")
        } else {
            1.0 / (2f64.powi(params.d as i32 - 1) * PI)
        };
        Self { params, amplitude }
    }

    /// Exponent of `sin(theta/2)` in the cross-section.
    pub fn exponent(&self) -> f64 {
        -((self.params.d - 1) as f64) - self.params.alpha
    }

    /// `int_{S^{d-1}} b dsigma`; 1 exactly when normalized. Rejects
    /// non-integrable cross-sections.
    pub fn sphere_integral(&self) -> Result<f64> {
        if self.params.alpha >= 0.0 {
            return Err(Error::NonIntegrableCrossSection {
                alpha: self.params.alpha,
            });
        }
        if self.params.b_normalized {
            return Ok(1.0);
        }
        Ok(self.amplitude * sphere_integral_unit(self.params.d, self.params.alpha)?)
    }

    /// Evaluate `b` from the scattering cosine.
    pub fn eval(&self, cos_theta: f64) -> Result<f64> {
        let exponent = self.exponent();
        let half_sin2 = 0.5 * (1.0 - cos_theta.clamp(-1.0, 1.0));
        if half_sin2 <= 0.0 && exponent < 0.0 {
            return Err(Error::SingularCrossSection { exponent });
        }
        Ok(self.amplitude * half_sin2.sqrt().powf(exponent))
    }

    /// Evaluate `b` from `t = sin(theta/2)` directly.
    #[inline]
    pub fn eval_half_sine(&self, t: f64) -> f64 {
        self.amplitude * t.powf(self.exponent())
    }
}

/// Sphere integral of `sin^{-(d-1)-alpha}(theta/2)` with unit amplitude.
///
/// d=3: `8 pi / (-alpha)`; d=2: `2 Gamma(-alpha/2) Gamma(1/2) / Gamma((1-alpha)/2)`.
fn sphere_integral_unit(d: usize, alpha: f64) -> Result<f64> {
    if alpha >= 0.0 {
        return Err(Error::NonIntegrableCrossSection { alpha });
    }
    Ok(match d {
        3 => 8.0 * PI / (-alpha),
        2 => 2.0 * gamma(-alpha / 2.0) * gamma(0.5) / gamma((1.0 - alpha) / 2.0),
        _ => unreachable!("d validated at construction"),
    })
}

/// Spec'd operation form: singular evaluations are errors, never infinities.
pub fn cross_section_b(cos_theta: f64, cs: &CrossSection) -> Result<f64> {
    cs.eval(cos_theta)
}

/// Radial reduction of the collision frequency integral
/// `nu(r) = (2 pi)^{-d/2} int |v - w|^gamma exp(-|w|^2/2) dw`, `r = |v|`.
///
/// d=2 uses the scaled Bessel kernel, d=3 the Gaussian difference; both are
/// one-dimensional integrals with the potential singularity at s = 0 and a
/// bump near s = r, split accordingly.
pub fn nu_radial_integral(params: &OperatorParams, r: f64) -> f64 {
    let g = params.gamma;
    let integrand_d2 = move |s: f64| s.powf(1.0 + g) * (-0.5 * (s - r) * (s - r)).exp() * i0e(s * r);
    let integrand_d3 = move |s: f64| {
        let gauss = if r > 1e-8 {
            ((-0.5 * (s - r) * (s - r)).exp() - (-0.5 * (s + r) * (s + r)).exp()) / r
        } else {
            // r -> 0 limit of the bracket / r
            2.0 * s * (-0.5 * s * s).exp()
        };
        s.powf(1.0 + g) * gauss
    };
    let upper = r + 42.0;
    let mut cuts = vec![0.0, (0.5f64).min(upper), r.min(upper), upper];
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let pieces: Vec<(f64, f64)> = cuts.windows(2).map(|w| (w[0], w[1])).collect();
    let mut total = 0.0;
    for (a, b) in pieces {
        let (v, _) = match params.d {
            2 => adaptive_gk(&integrand_d2, a, b, 1e-8, 1e-14, 4000),
            _ => adaptive_gk(&integrand_d3, a, b, 1e-8, 1e-14, 4000),
        }
        .expect("nu integrand is integrable");
        total += v;
    }
    match params.d {
        2 => total,
        _ => total / (2.0 * PI).sqrt(),
    }
}

/// Collision frequency profile: precomputed radial table with cubic
/// interpolation, direct quadrature below `r_direct` where the table is
/// least accurate.
#[derive(Debug, Clone)]
pub struct NuProfile {
    pub params: OperatorParams,
    r_max: f64,
    r_direct: f64,
    step: f64,
    table: Vec<f64>,
}

pub const NU_TABLE_SAMPLES: usize = 1024;

impl NuProfile {
    /// Profile covering radii up to `r_max`; `r_direct` is the cutoff below
    /// which evaluation falls back to direct quadrature (typically `2 dv`).
    pub fn new(params: OperatorParams, r_max: f64, r_direct: f64) -> Result<Self> {
        if params.alpha >= 0.0 && !params.b_normalized {
            return Err(Error::InvalidParameter(
                "collision frequency formula requires a normalized angular cross-section".into(),
            ));
        }
        let r_max = r_max.max(1.0);
        let step = r_max / (NU_TABLE_SAMPLES - 1) as f64;
        let table = (0..NU_TABLE_SAMPLES)
            .map(|i| nu_radial_integral(&params, i as f64 * step))
            .collect();
        Ok(Self {
            params,
            r_max,
            r_direct: r_direct.max(0.0),
            step,
            table,
        })
    }

    /// Profile sized for a mesh: covers the cube diagonal, direct evaluation
    /// below twice the element width.
    pub fn for_mesh(params: OperatorParams, mesh: &crate::mesh::Mesh) -> Result<Self> {
        let r_max = mesh.v_max * (mesh.d as f64).sqrt() + 1.0;
        Self::new(params, r_max, 2.0 * mesh.dv)
    }

    /// Evaluate at radius `r`.
    pub fn eval_radius(&self, r: f64) -> f64 {
        if r < self.r_direct || r > self.r_max {
            return nu_radial_integral(&self.params, r);
        }
        // Catmull-Rom cubic on the uniform table
        let x = r / self.step;
        let i = (x.floor() as usize).min(NU_TABLE_SAMPLES - 2);
        let t = x - i as f64;
        let get = |j: isize| {
            let idx = (i as isize + j).clamp(0, NU_TABLE_SAMPLES as isize - 1) as usize;
            self.table[idx]
        };
        let (p0, p1, p2, p3) = (get(-1), get(0), get(1), get(2));
        let a = -0.5 * p0 + 1.5 * p1 - 1.5 * p2 + 0.5 * p3;
        let b = p0 - 2.5 * p1 + 2.0 * p2 - 0.5 * p3;
        let c = -0.5 * p0 + 0.5 * p2;
        ((a * t + b) * t + c) * t + p1
    }

    pub fn eval(&self, v: &[f64]) -> f64 {
        let r2: f64 = v[..self.params.d].iter().map(|x| x * x).sum();
        self.eval_radius(r2.sqrt())
    }
}

/// Collision frequency at a velocity, through the profile.
pub fn collision_frequency(v: &[f64], nu: &NuProfile) -> f64 {
    nu.eval(v)
}

/// Closed form for `nu(0)`: `2^{gamma/2} Gamma((gamma+d)/2) / Gamma(d/2)`.
pub fn nu_at_origin_closed_form(params: &OperatorParams) -> f64 {
    let d = params.d as f64;
    2f64.powf(params.gamma / 2.0) * gamma((params.gamma + d) / 2.0) / gamma(d / 2.0)
}
