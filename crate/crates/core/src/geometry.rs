//! Toroidal coordinates, local frames and the signed distance to each shield.
//!
//! All state is stored in cartesian form. Toroidal quantities `(r, theta, alpha)`
//! relative to a torus of major radius `R` are computed on demand:
//!
//! ```text
//! x1 = (R + r cos(alpha)) cos(theta)
//! x2 = (R + r cos(alpha)) sin(theta)
//! x3 = r sin(alpha)
//! ```

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Vec3};

/// Point in toroidal coordinates: minor radius, toroidal and poloidal angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToroidalPoint {
    pub r: f64,
    pub theta: f64,
    pub alpha: f64,
}

impl ToroidalPoint {
    pub fn new(r: f64, theta: f64, alpha: f64) -> Self {
        Self {
            r: r.abs(),
            theta: wrap_angle(theta),
            alpha: wrap_angle(alpha),
        }
    }
}

/// Result of the cartesian to toroidal map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToroidalCoords {
    pub point: ToroidalPoint,
    /// Set when `r = 0`; the poloidal angle is then reported as 0.
    pub degenerate: bool,
}

/// Orthonormal frame `(e_r, e_theta, e_alpha)` with `e_r = e_theta x e_alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToroidalFrame {
    pub e_r: Vec3,
    pub e_theta: Vec3,
    pub e_alpha: Vec3,
}

/// Region excluded from the plasma together with its singular field profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShieldGeometry {
    /// Solid torus `r <= minor` around the circle of radius `major` in the x1-x2 plane.
    Torus { major: f64, minor: f64, tau: f64 },
    /// Infinite cylinder `x2^2 + x3^2 < radius^2` along the x1 axis.
    Cylinder { radius: f64, tau: f64 },
    /// Half-space `x1 > 0`; `cut` is the distance at which the field vanishes.
    HalfSpace { tau: f64, cut: f64 },
    /// No shield and no external field.
    None,
}

/// Lower bound on the singularity exponent for the torus shield.
pub const TORUS_TAU_MIN: f64 = 3.5;

impl ShieldGeometry {
    pub fn torus(major: f64, minor: f64, tau: f64) -> Self {
        ShieldGeometry::Torus { major, minor, tau }
    }

    pub fn major_radius(&self) -> Option<f64> {
        match *self {
            ShieldGeometry::Torus { major, .. } => Some(major),
            _ => None,
        }
    }

    pub fn tau(&self) -> Option<f64> {
        match *self {
            ShieldGeometry::Torus { tau, .. }
            | ShieldGeometry::Cylinder { tau, .. }
            | ShieldGeometry::HalfSpace { tau, .. } => Some(tau),
            ShieldGeometry::None => None,
        }
    }

    /// Radius up to which the torus profile is the pure power law.
    pub fn blend_r1(&self) -> Option<f64> {
        match *self {
            ShieldGeometry::Torus { major, minor, .. } => Some(minor + (major - minor) / 8.0),
            _ => None,
        }
    }

    /// Radius beyond which the torus field vanishes identically.
    pub fn blend_r2(&self) -> Option<f64> {
        match *self {
            ShieldGeometry::Torus { major, minor, .. } => Some(minor + (major - minor) / 4.0),
            _ => None,
        }
    }

    /// Checks the geometric constraints and, unless `allow_violation` is set,
    /// the singularity exponent required for the shield to hold.
    pub fn validate(&self, allow_violation: bool) -> Result<()> {
        let finite = |v: f64, name: &str| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite")))
            }
        };
        match *self {
            ShieldGeometry::Torus { major, minor, tau } => {
                finite(major, "major radius")?;
                finite(minor, "minor radius")?;
                finite(tau, "tau")?;
                if !(minor > 0.0 && minor < major) {
                    return Err(Error::Config(format!(
                        "torus requires 0 < r0 < R, got r0 = {minor}, R = {major}"
                    )));
                }
                if tau <= 0.0 {
                    return Err(Error::Config(format!("tau must be positive, got {tau}")));
                }
                if tau <= TORUS_TAU_MIN && !allow_violation {
                    return Err(Error::Hypothesis(format!(
                        "the torus shield requires tau > 7/2, got tau = {tau}"
                    )));
                }
            }
            ShieldGeometry::Cylinder { radius, tau } => {
                finite(radius, "cylinder radius")?;
                finite(tau, "tau")?;
                if radius <= 0.0 {
                    return Err(Error::Config(format!("cylinder requires A > 0, got {radius}")));
                }
                if tau <= 0.0 {
                    return Err(Error::Config(format!("tau must be positive, got {tau}")));
                }
            }
            ShieldGeometry::HalfSpace { tau, cut } => {
                finite(tau, "tau")?;
                finite(cut, "half-space cut")?;
                if tau <= 0.0 {
                    return Err(Error::Config(format!("tau must be positive, got {tau}")));
                }
                if cut <= 0.0 {
                    return Err(Error::Config(format!("half-space cut must be positive, got {cut}")));
                }
            }
            ShieldGeometry::None => {}
        }
        Ok(())
    }
}

/// Wraps an angle into `[0, 2pi)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Cartesian to toroidal coordinates relative to a torus of major radius `major`.
pub fn to_toroidal(x: &Vec3, major: f64) -> ToroidalCoords {
    let rho = x.x.hypot(x.y);
    let dr = rho - major;
    let r = dr.hypot(x.z);
    let theta = wrap_angle(x.y.atan2(x.x));
    let degenerate = r == 0.0;
    let alpha = if degenerate {
        0.0
    } else {
        wrap_angle(x.z.atan2(dr))
    };
    ToroidalCoords {
        point: ToroidalPoint { r, theta, alpha },
        degenerate,
    }
}

pub fn to_cartesian(p: &ToroidalPoint, major: f64) -> Vec3 {
    let (st, ct) = p.theta.sin_cos();
    let (sa, ca) = p.alpha.sin_cos();
    let rho = major + p.r * ca;
    Vec3::new(rho * ct, rho * st, p.r * sa)
}

/// Unit vectors of the toroidal frame at the given angles.
pub fn frame_at(p: &ToroidalPoint) -> ToroidalFrame {
    frame_from_angles(p.theta, p.alpha)
}

pub(crate) fn frame_from_angles(theta: f64, alpha: f64) -> ToroidalFrame {
    let (st, ct) = theta.sin_cos();
    let (sa, ca) = alpha.sin_cos();
    ToroidalFrame {
        e_r: Vec3::new(ca * ct, ca * st, sa),
        e_theta: Vec3::new(-st, ct, 0.0),
        e_alpha: Vec3::new(-sa * ct, -sa * st, ca),
    }
}

/// Signed distance from `x` to the shielded region; positive outside.
pub fn shield_distance(x: &Vec3, g: &ShieldGeometry) -> f64 {
    match *g {
        ShieldGeometry::Torus { major, minor, .. } => {
            let rho = x.x.hypot(x.y);
            (rho - major).hypot(x.z) - minor
        }
        ShieldGeometry::Cylinder { radius, .. } => x.y.hypot(x.z) - radius,
        ShieldGeometry::HalfSpace { .. } => -x.x,
        ShieldGeometry::None => f64::INFINITY,
    }
}
