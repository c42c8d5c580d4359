//! Singular external magnetic fields for each shield geometry.
//!
//! Every field is written as `B = curl A` with an explicit vector potential, and
//! every profile is a pure inverse power of a distance-like variable `y` near the
//! border, blended to zero by a C2 smoothstep further away:
//!
//! | geometry   | `y`           | pure band        | zero beyond |
//! |------------|---------------|------------------|-------------|
//! | torus      | `r - r0`      | `(R - r0) / 8`   | `(R - r0) / 4` |
//! | cylinder   | `r^2 - A^2`   | `A^2`            | `2 A^2`     |
//! | half-space | `-x1`         | `cut / 2`        | `cut`       |

use rand::Rng;

use crate::geometry::{shield_distance, ShieldGeometry};
use crate::{Error, Result, Vec3};

/// Radial profile `a(r)` of the torus potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldProfile {
    pub tau: f64,
    pub r0: f64,
    pub blend_r1: f64,
    pub blend_r2: f64,
}

impl FieldProfile {
    /// Profile of a torus geometry; `None` for other shapes.
    pub fn of(g: &ShieldGeometry) -> Option<Self> {
        match *g {
            ShieldGeometry::Torus { minor, tau, .. } => Some(Self {
                tau,
                r0: minor,
                blend_r1: g.blend_r1()?,
                blend_r2: g.blend_r2()?,
            }),
            _ => None,
        }
    }
}

/// C2 smoothstep falling from 1 at `s = 0` to 0 at `s = 1`, with its derivative.
pub fn smooth_fall(s: f64) -> (f64, f64) {
    if s <= 0.0 {
        (1.0, 0.0)
    } else if s >= 1.0 {
        (0.0, 0.0)
    } else {
        let s2 = s * s;
        let w = 1.0 - s2 * s * (10.0 - 15.0 * s + 6.0 * s2);
        let dw = -30.0 * s2 * (1.0 - s) * (1.0 - s);
        (w, dw)
    }
}

/// `y^-tau` on `(0, y1]`, blended to zero on `(y1, y2)`, zero beyond; with derivative in `y`.
fn blended_power(y: f64, y1: f64, y2: f64, tau: f64) -> (f64, f64) {
    if y >= y2 {
        return (0.0, 0.0);
    }
    let p = y.powf(-tau);
    let dp = -tau * p / y;
    if y <= y1 {
        return (p, dp);
    }
    let width = y2 - y1;
    let (w, dw) = smooth_fall((y - y1) / width);
    (p * w, dp * w + p * dw / width)
}

/// `int_lo^hi y^-tau dy` for `0 < lo <= hi`.
fn power_integral(lo: f64, hi: f64, tau: f64) -> f64 {
    if (tau - 1.0).abs() < 1e-12 {
        (hi / lo).ln()
    } else {
        (lo.powf(1.0 - tau) - hi.powf(1.0 - tau)) / (tau - 1.0)
    }
}

/// `int_y^y2 blended_power` for `y > 0`.
fn blended_integral(y: f64, y1: f64, y2: f64, tau: f64) -> f64 {
    if y >= y2 {
        return 0.0;
    }
    let mut total = 0.0;
    if y < y1 {
        total += power_integral(y, y1, tau);
    }
    let lo = y.max(y1);
    total += crate::quadrature::integrate(|t| blended_power(t, y1, y2, tau).0, lo, y2, 4);
    total
}

/// `a(r)` and its exact derivative for the torus profile.
pub fn profile_a(r: f64, p: &FieldProfile) -> Result<(f64, f64)> {
    let y = r - p.r0;
    if !(y > 0.0) {
        return Err(Error::Singularity { distance: y });
    }
    Ok(blended_power(y, p.blend_r1 - p.r0, p.blend_r2 - p.r0, p.tau))
}

fn cylinder_band(radius: f64) -> (f64, f64) {
    let a2 = radius * radius;
    (a2, 2.0 * a2)
}

fn check_outside(x: &Vec3, g: &ShieldGeometry) -> Result<()> {
    let d = shield_distance(x, g);
    if d > 0.0 {
        Ok(())
    } else {
        Err(Error::Singularity { distance: d })
    }
}

/// Vector potential `A` with `curl A = B`.
pub fn vector_potential(x: &Vec3, g: &ShieldGeometry) -> Result<Vec3> {
    check_outside(x, g)?;
    match *g {
        ShieldGeometry::Torus { major, .. } => {
            let p = FieldProfile::of(g).expect("torus profile");
            let rho2 = x.x * x.x + x.y * x.y;
            let r = (rho2.sqrt() - major).hypot(x.z);
            let (a, _) = profile_a(r, &p)?;
            if a == 0.0 {
                return Ok(Vec3::zeros());
            }
            // a / rho * e_theta, with e_theta = (-x2, x1, 0) / rho
            Ok(Vec3::new(-x.y, x.x, 0.0) * (a / rho2))
        }
        ShieldGeometry::Cylinder { radius, tau } => {
            let r2 = x.y * x.y + x.z * x.z;
            let y = r2 - radius * radius;
            let (y1, y2) = cylinder_band(radius);
            if y >= y2 {
                return Ok(Vec3::zeros());
            }
            let flux = -0.5 * blended_integral(y, y1, y2, tau);
            Ok(Vec3::new(0.0, -x.z, x.y) * (flux / r2))
        }
        ShieldGeometry::HalfSpace { tau, cut } => {
            let y = -x.x;
            if y >= cut {
                return Ok(Vec3::zeros());
            }
            Ok(Vec3::new(0.0, blended_integral(y, 0.5 * cut, cut, tau), 0.0))
        }
        ShieldGeometry::None => Ok(Vec3::zeros()),
    }
}

/// External magnetic field.
pub fn magnetic_field(x: &Vec3, g: &ShieldGeometry) -> Result<Vec3> {
    check_outside(x, g)?;
    Ok(magnetic_field_outside(x, g))
}

/// Field at a point already known to be outside the shield.
pub(crate) fn magnetic_field_outside(x: &Vec3, g: &ShieldGeometry) -> Vec3 {
    match *g {
        ShieldGeometry::Torus {
            major, minor, tau, ..
        } => {
            let rho2 = x.x * x.x + x.y * x.y;
            let rho = rho2.sqrt();
            let dr = rho - major;
            let r = dr.hypot(x.z);
            let y1 = (major - minor) / 8.0;
            let (_, da) = blended_power(r - minor, y1, 2.0 * y1, tau);
            if da == 0.0 {
                return Vec3::zeros();
            }
            // a'(r) / rho * e_alpha, e_alpha = (-sin(a) x1/rho, -sin(a) x2/rho, cos(a))
            let sa = x.z / r;
            let ca = dr / r;
            let scale = da / rho;
            Vec3::new(-sa * x.x / rho, -sa * x.y / rho, ca) * scale
        }
        ShieldGeometry::Cylinder { radius, tau } => {
            let y = x.y * x.y + x.z * x.z - radius * radius;
            let (y1, y2) = cylinder_band(radius);
            Vec3::new(blended_power(y, y1, y2, tau).0, 0.0, 0.0)
        }
        ShieldGeometry::HalfSpace { tau, cut } => {
            let y = -x.x;
            Vec3::new(0.0, 0.0, blended_power(y, 0.5 * cut, cut, tau).0)
        }
        ShieldGeometry::None => Vec3::zeros(),
    }
}

/// Fourth-order central difference of `f` along axis `axis`.
fn d4<F: Fn(&Vec3) -> Result<Vec3>>(f: &F, x: &Vec3, axis: usize, h: f64) -> Result<Vec3> {
    let mut e = Vec3::zeros();
    e[axis] = h;
    let fp1 = f(&(x + e))?;
    let fm1 = f(&(x - e))?;
    let fp2 = f(&(x + 2.0 * e))?;
    let fm2 = f(&(x - 2.0 * e))?;
    Ok((8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h))
}

/// Jacobian columns `d f / d x_axis`.
fn fd_jacobian<F: Fn(&Vec3) -> Result<Vec3>>(f: &F, x: &Vec3, h: f64) -> Result<[Vec3; 3]> {
    Ok([d4(f, x, 0, h)?, d4(f, x, 1, h)?, d4(f, x, 2, h)?])
}

/// Finite-difference curl of the vector potential.
pub fn numeric_curl(x: &Vec3, g: &ShieldGeometry, h: f64) -> Result<Vec3> {
    let [dx, dy, dz] = fd_jacobian(&|p: &Vec3| vector_potential(p, g), x, h)?;
    Ok(Vec3::new(dy.z - dz.y, dz.x - dx.z, dx.y - dy.x))
}

/// Max over samples of `|curl_fd(A) - B| / |B|`; 0 where both sides vanish.
pub fn verify_curl(g: &ShieldGeometry, samples: &[Vec3], h: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for x in samples {
        let b = magnetic_field(x, g)?;
        let c = numeric_curl(x, g, h)?;
        let err = if b.norm() > 0.0 {
            (c - b).norm() / b.norm()
        } else {
            c.norm()
        };
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Max over samples of `|div_fd(B)|` relative to the Frobenius norm of the
/// finite-difference gradient of `B`.
pub fn verify_divergence(g: &ShieldGeometry, samples: &[Vec3], h: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for x in samples {
        let [dx, dy, dz] = fd_jacobian(&|p: &Vec3| magnetic_field(p, g), x, h)?;
        let div = dx.x + dy.y + dz.z;
        let scale = (dx.norm_squared() + dy.norm_squared() + dz.norm_squared()).sqrt();
        let err = if scale > 0.0 { div.abs() / scale } else { 0.0 };
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Random points whose shield distance is uniform in `[d_min, d_max]`.
pub fn band_samples<R: Rng>(
    g: &ShieldGeometry,
    d_min: f64,
    d_max: f64,
    n: usize,
    rng: &mut R,
) -> Vec<Vec3> {
    use std::f64::consts::TAU;
    (0..n)
        .map(|_| {
            let d = d_min + (d_max - d_min) * rng.random::<f64>();
            match *g {
                ShieldGeometry::Torus { major, minor, .. } => {
                    let p = crate::geometry::ToroidalPoint::new(
                        minor + d,
                        TAU * rng.random::<f64>(),
                        TAU * rng.random::<f64>(),
                    );
                    crate::geometry::to_cartesian(&p, major)
                }
                ShieldGeometry::Cylinder { radius, .. } => {
                    let phi = TAU * rng.random::<f64>();
                    let r = radius + d;
                    Vec3::new(10.0 * (rng.random::<f64>() - 0.5), r * phi.cos(), r * phi.sin())
                }
                ShieldGeometry::HalfSpace { .. } => Vec3::new(
                    -d,
                    10.0 * (rng.random::<f64>() - 0.5),
                    10.0 * (rng.random::<f64>() - 0.5),
                ),
                ShieldGeometry::None => Vec3::new(
                    d * (rng.random::<f64>() - 0.5),
                    d * (rng.random::<f64>() - 0.5),
                    d * (rng.random::<f64>() - 0.5),
                ),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::geometry::{frame_at, to_cartesian, to_toroidal, ToroidalPoint};

    fn torus() -> ShieldGeometry {
        ShieldGeometry::torus(2.0, 0.5, 4.0)
    }

    #[test]
    fn profile_pure_power_value() {
        let p = FieldProfile::of(&torus()).unwrap();
        let (a, da) = profile_a(0.6, &p).unwrap();
        // 0.1^-4 = 10^4, d/dr = -4 * 0.1^-5
        assert!((a - 1e4).abs() < 1e-8, "{a}");
        assert!((da + 4e5).abs() < 1e-6, "{da}");
    }

    #[test]
    fn profile_vanishes_beyond_cutoff() {
        let p = FieldProfile::of(&torus()).unwrap();
        assert_eq!(profile_a(p.blend_r2, &p).unwrap(), (0.0, 0.0));
        assert_eq!(profile_a(1.7, &p).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn profile_rejects_singular_radius() {
        let p = FieldProfile::of(&torus()).unwrap();
        assert!(matches!(profile_a(0.5, &p), Err(Error::Singularity { .. })));
        assert!(profile_a(0.4, &p).is_err());
    }

    #[test]
    fn profile_derivative_matches_finite_difference_in_blend() {
        let p = FieldProfile::of(&torus()).unwrap();
        for k in 1..50 {
            let r = p.blend_r1 + (p.blend_r2 - p.blend_r1) * k as f64 / 50.0;
            let h = 1e-6;
            let fd = (profile_a(r + h, &p).unwrap().0 - profile_a(r - h, &p).unwrap().0) / (2.0 * h);
            let (_, da) = profile_a(r, &p).unwrap();
            assert!((fd - da).abs() <= 1e-6 * da.abs().max(1e-300), "r = {r}: {fd} vs {da}");
        }
    }

    #[test]
    fn profile_is_positive_and_decreasing() {
        let p = FieldProfile::of(&torus()).unwrap();
        let mut prev = f64::INFINITY;
        let n = 10_000;
        for k in 1..n {
            let r = p.r0 + (p.blend_r2 - p.r0) * k as f64 / n as f64;
            let (a, da) = profile_a(r, &p).unwrap();
            assert!(a > 0.0 && a < prev && da < 0.0);
            prev = a;
        }
    }

    #[test]
    fn torus_potential_example() {
        let a = vector_potential(&Vec3::new(2.6, 0.0, 0.0), &torus()).unwrap();
        let expected = 1e4 / 2.6;
        assert!(a.x.abs() < 1e-12 && a.z.abs() < 1e-12);
        assert!((a.y - expected).abs() < 1e-9 * expected, "{}", a.y);
        assert!((a.y - 3_846.153_846_153_846).abs() < 1e-6);
    }

    #[test]
    fn torus_field_example() {
        let b = magnetic_field(&Vec3::new(2.6, 0.0, 0.0), &torus()).unwrap();
        let expected = -4e5 / 2.6;
        assert!(b.x.abs() < 1e-9 && b.y.abs() < 1e-9);
        assert!((b.z - expected).abs() < 1e-9 * expected.abs(), "{}", b.z);
        let curl = numeric_curl(&Vec3::new(2.6, 0.0, 0.0), &torus(), 1e-5).unwrap();
        assert!((curl - b).norm() / b.norm() < 1e-6);
    }

    #[test]
    fn torus_fields_are_aligned_with_frame() {
        let g = torus();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for x in band_samples(&g, 0.01, 0.4, 500, &mut rng) {
            let c = to_toroidal(&x, 2.0).point;
            let f = frame_at(&c);
            let a = vector_potential(&x, &g).unwrap();
            let b = magnetic_field(&x, &g).unwrap();
            assert!(a.dot(&f.e_r).abs() <= 1e-12 * a.norm());
            assert!(a.dot(&f.e_alpha).abs() <= 1e-12 * a.norm());
            assert!(b.dot(&f.e_r).abs() <= 1e-12 * b.norm());
            assert!(b.dot(&f.e_theta).abs() <= 1e-12 * b.norm());
        }
    }

    #[test]
    fn torus_fields_vanish_far_away() {
        let g = torus();
        let x = to_cartesian(&ToroidalPoint::new(0.9, 1.0, 2.0), 2.0);
        assert_eq!(vector_potential(&x, &g).unwrap(), Vec3::zeros());
        assert_eq!(magnetic_field(&x, &g).unwrap(), Vec3::zeros());
        // on the symmetry axis rho = 0
        assert_eq!(magnetic_field(&Vec3::new(0.0, 0.0, 1.0), &g).unwrap(), Vec3::zeros());
        assert_eq!(verify_curl(&g, &[x], 1e-5).unwrap(), 0.0);
    }

    #[test]
    fn fields_reject_points_inside() {
        let g = torus();
        let inside = Vec3::new(2.2, 0.0, 0.0);
        assert!(matches!(magnetic_field(&inside, &g), Err(Error::Singularity { .. })));
        assert!(vector_potential(&inside, &g).is_err());
        let c = ShieldGeometry::Cylinder { radius: 1.0, tau: 2.0 };
        assert!(magnetic_field(&Vec3::new(0.0, 0.5, 0.0), &c).is_err());
        let h = ShieldGeometry::HalfSpace { tau: 2.0, cut: 1.0 };
        assert!(magnetic_field(&Vec3::new(0.1, 0.0, 0.0), &h).is_err());
    }

    #[test]
    fn cylinder_field_example() {
        let g = ShieldGeometry::Cylinder { radius: 1.0, tau: 2.0 };
        // |r^2 - A^2| = 0.5
        let r = 1.5f64.sqrt();
        let b = magnetic_field(&Vec3::new(0.3, r * 0.6, r * 0.8), &g).unwrap();
        assert!((b.x - 4.0).abs() < 1e-12, "{b:?}");
        assert_eq!((b.y, b.z), (0.0, 0.0));
    }

    #[test]
    fn halfspace_field_example() {
        let g = ShieldGeometry::HalfSpace { tau: 3.0, cut: 1.0 };
        let b = magnetic_field(&Vec3::new(-0.25, 1.0, 2.0), &g).unwrap();
        assert!((b.z - 64.0).abs() < 1e-10);
        assert_eq!(magnetic_field(&Vec3::new(-1.5, 0.0, 0.0), &g).unwrap(), Vec3::zeros());
    }

    #[test]
    fn curl_identity_torus_band() {
        let g = torus();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs = band_samples(&g, 0.05, 0.15, 1000, &mut rng);
        let err = verify_curl(&g, &xs, 1e-5).unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn curl_identity_cylinder_band() {
        let g = ShieldGeometry::Cylinder { radius: 1.0, tau: 2.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // r^2 - A^2 in [0.2, 0.8]
        let xs = band_samples(&g, 1.2f64.sqrt() - 1.0, 1.8f64.sqrt() - 1.0, 1000, &mut rng);
        let err = verify_curl(&g, &xs, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn curl_identity_through_blend_regions() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for (g, lo, hi) in [
            (torus(), 0.19, 0.37),
            (ShieldGeometry::Cylinder { radius: 1.0, tau: 2.0 }, 0.42, 0.72),
            (ShieldGeometry::HalfSpace { tau: 4.0, cut: 1.0 }, 0.05, 0.99),
        ] {
            let xs = band_samples(&g, lo, hi, 300, &mut rng);
            let err = verify_curl(&g, &xs, 1e-5).unwrap();
            assert!(err < 1e-5, "{g:?}: {err}");
            let div = verify_divergence(&g, &xs, 1e-5).unwrap();
            assert!(div < 1e-5, "{g:?}: {div}");
        }
    }

    #[test]
    fn field_grows_monotonically_towards_border() {
        let g = torus();
        let mut prev = 0.0;
        for k in 0..1000 {
            let d = 0.18 - 0.17 * k as f64 / 1000.0;
            let x = to_cartesian(&ToroidalPoint::new(0.5 + d, 0.4, 1.3), 2.0);
            let b = magnetic_field(&x, &g).unwrap().norm();
            assert!(b > prev);
            prev = b;
        }
    }

    #[test]
    fn field_is_continuous_across_blend_radii() {
        let g = torus();
        let p = FieldProfile::of(&g).unwrap();
        for r_edge in [p.blend_r1, p.blend_r2] {
            let eps = 1e-11;
            let below = magnetic_field(&to_cartesian(&ToroidalPoint::new(r_edge - eps, 0.2, 0.7), 2.0), &g)
                .unwrap();
            let above = magnetic_field(&to_cartesian(&ToroidalPoint::new(r_edge + eps, 0.2, 0.7), 2.0), &g)
                .unwrap();
            let scale = below.norm().max(1.0);
            assert!((below - above).norm() / scale < 1e-8, "{below:?} vs {above:?}");
        }
    }
}
