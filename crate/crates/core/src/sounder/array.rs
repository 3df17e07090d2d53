use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{direction, wrap_2pi, Vec3};
use crate::SPEED_OF_LIGHT;

/// Angular region an array responds to. Azimuth bounds lie in `[0, 2π]`
/// with `az_min <= az_max`; elevation is the polar angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularSupport {
    pub az_min: f64,
    pub az_max: f64,
    pub el_min: f64,
    pub el_max: f64,
}

impl AngularSupport {
    pub fn full_sphere() -> Self {
        AngularSupport {
            az_min: 0.0,
            az_max: TAU,
            el_min: 0.0,
            el_max: PI,
        }
    }

    pub fn degrees(az_min: f64, az_max: f64, el_min: f64, el_max: f64) -> Self {
        AngularSupport {
            az_min: az_min.to_radians(),
            az_max: az_max.to_radians(),
            el_min: el_min.to_radians(),
            el_max: el_max.to_radians(),
        }
    }

    pub fn contains(&self, az: f64, el: f64) -> bool {
        let tol = 1e-12;
        let a = wrap_2pi(az);
        let az_ok = self.az_max - self.az_min >= TAU - tol
            || (a >= self.az_min - tol && a <= self.az_max + tol);
        az_ok && el >= self.el_min - tol && el <= self.el_max + tol
    }

    pub fn intersect(&self, other: &AngularSupport) -> AngularSupport {
        AngularSupport {
            az_min: self.az_min.max(other.az_min),
            az_max: self.az_max.min(other.az_max),
            el_min: self.el_min.max(other.el_min),
            el_max: self.el_max.min(other.el_max),
        }
    }
}

/// Complex element gains sampled on a regular azimuth/elevation grid
/// (a synthetic stand-in for chamber-measured patterns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternGrid {
    pub az_start: f64,
    pub az_step: f64,
    pub az_count: usize,
    pub el_start: f64,
    pub el_step: f64,
    pub el_count: usize,
    /// `gains[element][el_idx * az_count + az_idx]`.
    pub gains: Vec<Vec<Complex64>>,
}

impl PatternGrid {
    pub fn support(&self) -> AngularSupport {
        AngularSupport {
            az_min: self.az_start,
            az_max: self.az_start + self.az_step * (self.az_count - 1) as f64,
            el_min: self.el_start,
            el_max: self.el_start + self.el_step * (self.el_count - 1) as f64,
        }
    }

    /// Bilinear interpolation of element `k` at (az, el).
    pub fn gain(&self, k: usize, az: f64, el: f64) -> Complex64 {
        let a = wrap_2pi(az);
        let fa = ((a - self.az_start) / self.az_step).clamp(0.0, (self.az_count - 1) as f64);
        let fe = ((el - self.el_start) / self.el_step).clamp(0.0, (self.el_count - 1) as f64);
        let (ia, ie) = (fa.floor() as usize, fe.floor() as usize);
        let (ja, je) = ((ia + 1).min(self.az_count - 1), (ie + 1).min(self.el_count - 1));
        let (wa, we) = (fa - ia as f64, fe - ie as f64);
        let g = &self.gains[k];
        let at = |e: usize, a: usize| g[e * self.az_count + a];
        at(ie, ia) * (1.0 - wa) * (1.0 - we)
            + at(ie, ja) * wa * (1.0 - we)
            + at(je, ia) * (1.0 - wa) * we
            + at(je, ja) * wa * we
    }

    /// Sample a closure on a regular grid covering `support`.
    pub fn sample(
        elements: usize,
        support: AngularSupport,
        step: f64,
        f: impl Fn(usize, f64, f64) -> Complex64,
    ) -> Self {
        let az_count = ((support.az_max - support.az_min) / step).round() as usize + 1;
        let el_count = ((support.el_max - support.el_min) / step).round() as usize + 1;
        let az_step = (support.az_max - support.az_min) / (az_count - 1).max(1) as f64;
        let el_step = (support.el_max - support.el_min) / (el_count - 1).max(1) as f64;
        let gains = (0..elements)
            .map(|k| {
                let mut g = Vec::with_capacity(az_count * el_count);
                for ie in 0..el_count {
                    for ia in 0..az_count {
                        g.push(f(
                            k,
                            support.az_min + ia as f64 * az_step,
                            support.el_min + ie as f64 * el_step,
                        ));
                    }
                }
                g
            })
            .collect();
        PatternGrid {
            az_start: support.az_min,
            az_step,
            az_count,
            el_start: support.el_min,
            el_step,
            el_count,
            gains,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ElementPattern {
    #[default]
    Isotropic,
    Sampled(PatternGrid),
}

/// Receive array. Positions are in the receiver body frame. Outside
/// `support` the elements do not respond: [`steering_vector`] reports a
/// domain error there and channel synthesis drops such paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub positions: Vec<Vec3>,
    #[serde(default)]
    pub pattern: ElementPattern,
    #[serde(default = "AngularSupport::full_sphere")]
    pub support: AngularSupport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArrayPlane {
    Xy,
    Yz,
    Xz,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<Vec3>) -> Self {
        ArrayGeometry {
            positions,
            pattern: ElementPattern::Isotropic,
            support: AngularSupport::full_sphere(),
        }
    }

    pub fn single() -> Self {
        ArrayGeometry::new(vec![Vec3::zeros()])
    }

    /// Uniform linear array along x.
    pub fn ula(n: usize, spacing: f64) -> Self {
        ArrayGeometry::new(
            (0..n)
                .map(|i| Vec3::new(i as f64 * spacing, 0.0, 0.0))
                .collect(),
        )
    }

    /// `rows × cols` uniform planar array centered at the origin. Rows run
    /// along the plane's second axis, columns along its first.
    pub fn upa(rows: usize, cols: usize, spacing: f64, plane: ArrayPlane) -> Self {
        let mut pos = Vec::with_capacity(rows * cols);
        let r0 = (rows as f64 - 1.0) / 2.0;
        let c0 = (cols as f64 - 1.0) / 2.0;
        for r in 0..rows {
            for c in 0..cols {
                let a = (c as f64 - c0) * spacing;
                let b = (r as f64 - r0) * spacing;
                pos.push(match plane {
                    ArrayPlane::Xy => Vec3::new(a, b, 0.0),
                    ArrayPlane::Yz => Vec3::new(0.0, a, b),
                    ArrayPlane::Xz => Vec3::new(a, 0.0, b),
                });
            }
        }
        ArrayGeometry::new(pos)
    }

    pub fn with_support(mut self, support: AngularSupport) -> Self {
        self.support = support;
        self
    }

    pub fn with_pattern(mut self, pattern: PatternGrid) -> Self {
        self.support = self.support.intersect(&pattern.support());
        self.pattern = ElementPattern::Sampled(pattern);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn collect_violations(&self, errs: &mut Vec<String>) {
        if self.positions.is_empty() {
            errs.push("array has no elements".into());
        }
        if self
            .positions
            .iter()
            .any(|p| !p.iter().all(|v| v.is_finite()))
        {
            errs.push("array element positions must be finite".into());
        }
        if let ElementPattern::Sampled(g) = &self.pattern {
            if g.gains.len() != self.positions.len() {
                errs.push(format!(
                    "pattern has {} elements, array has {}",
                    g.gains.len(),
                    self.positions.len()
                ));
            }
            if g.gains.iter().any(|e| e.len() != g.az_count * g.el_count) {
                errs.push("pattern grid size mismatch".into());
            }
        }
    }

    pub fn element_gain(&self, k: usize, az: f64, el: f64) -> Complex64 {
        match &self.pattern {
            ElementPattern::Isotropic => Complex64::new(1.0, 0.0),
            ElementPattern::Sampled(g) => g.gain(k, az, el),
        }
    }

    /// Per-element geometric lead `⟨u, pos_k⟩ / c` in seconds.
    pub fn element_leads(&self, az: f64, el: f64) -> Vec<f64> {
        let u = direction(az, el);
        self.positions
            .iter()
            .map(|p| u.dot(p) / SPEED_OF_LIGHT)
            .collect()
    }
}

/// `a_k = g_k(az, el) · exp(+j 2π f ⟨u(az, el), pos_k⟩ / c)`.
pub fn steering_vector(
    array: &ArrayGeometry,
    azimuth: f64,
    elevation: f64,
    frequency: f64,
) -> Result<Vec<Complex64>> {
    if !array.support.contains(azimuth, elevation) {
        return Err(Error::Domain(format!(
            "direction az {:.3} rad, el {:.3} rad outside the array pattern support",
            azimuth, elevation
        )));
    }
    Ok(array
        .element_leads(azimuth, elevation)
        .iter()
        .enumerate()
        .map(|(k, lead)| {
            array.element_gain(k, azimuth, elevation)
                * Complex64::from_polar(1.0, 2.0 * PI * frequency * lead)
        })
        .collect())
}
