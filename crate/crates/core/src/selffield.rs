//! Softened direct Coulomb summation.
//!
//! Every contribution to a target is accumulated in four lanes selected by the
//! source index modulo four and the lanes are combined in a fixed order, so a
//! target's field depends only on the ensemble and never on how targets are
//! distributed over threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldParams {
    /// Softening length; zero is meant for analytic few-body checks.
    pub epsilon: f64,
}

impl FieldParams {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::Config(format!("softening must be finite and >= 0, got {epsilon}")));
        }
        Ok(Self { epsilon })
    }

    /// Self-interaction is always excluded.
    pub const fn exclusion(&self) -> bool {
        true
    }
}

/// Half the mean inter-particle spacing inside the ball that holds the ensemble.
pub fn default_softening(e: &Ensemble) -> f64 {
    let m = e.len().max(1) as f64;
    let r = e.particles.iter().map(|p| p.x.norm()).fold(0.0, f64::max).max(1.0);
    let volume = 4.0 / 3.0 * std::f64::consts::PI * r.powi(3);
    0.5 * (volume / m).cbrt()
}

/// Structure-of-arrays copy of the charges `sigma * weight` and their positions.
#[derive(Debug, Clone, Default)]
pub struct Sources {
    x: Vec<f64>,
    y: Vec<f64>,
    z: Vec<f64>,
    q: Vec<f64>,
}

const NO_SKIP: usize = usize::MAX;

impl Sources {
    pub fn from_ensemble(e: &Ensemble) -> Self {
        let mut s = Self::with_capacity(e.len());
        for p in &e.particles {
            let sp = &e.species[p.species];
            s.push(p.x, sp.sigma * sp.weight);
        }
        s
    }

    pub fn with_capacity(n: usize) -> Self {
        Self {
            x: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            q: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, x: Vec3, charge: f64) {
        self.x.push(x.x);
        self.y.push(x.y);
        self.z.push(x.z);
        self.q.push(charge);
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn position(&self, j: usize) -> Vec3 {
        Vec3::new(self.x[j], self.y[j], self.z[j])
    }

    pub fn charge(&self, j: usize) -> f64 {
        self.q[j]
    }

    /// Field and potential at `t`, omitting source `skip` and any source that
    /// coincides with `t` when unsoftened.
    fn field_potential(&self, t: Vec3, skip: usize, eps2: f64) -> (Vec3, f64) {
        let (tx, ty, tz) = (t.x, t.y, t.z);
        let mut ex = [0.0f64; 4];
        let mut ey = [0.0f64; 4];
        let mut ez = [0.0f64; 4];
        let mut ph = [0.0f64; 4];
        let n = self.len();
        let body = n - n % 4;
        // straight-line blocks of four so the compiler can use packed sqrt
        // and division; lane l always accumulates sources j = l mod 4
        for c in (0..body).step_by(4) {
            let (xs, ys, zs, qs) = (&self.x[c..c + 4], &self.y[c..c + 4], &self.z[c..c + 4], &self.q[c..c + 4]);
            let mut dx = [0.0f64; 4];
            let mut dy = [0.0f64; 4];
            let mut dz = [0.0f64; 4];
            let mut inv = [0.0f64; 4];
            for l in 0..4 {
                dx[l] = tx - xs[l];
                dy[l] = ty - ys[l];
                dz[l] = tz - zs[l];
            }
            for l in 0..4 {
                let r2 = dx[l] * dx[l] + dy[l] * dy[l] + dz[l] * dz[l] + eps2;
                let v = 1.0 / r2.sqrt();
                inv[l] = if r2 > 0.0 && c + l != skip { v } else { 0.0 };
            }
            for l in 0..4 {
                let qi = qs[l] * inv[l];
                let qi3 = qi * inv[l] * inv[l];
                ex[l] += qi3 * dx[l];
                ey[l] += qi3 * dy[l];
                ez[l] += qi3 * dz[l];
                ph[l] += qi;
            }
        }
        for j in body..n {
            let l = j % 4;
            let (dx, dy, dz) = (tx - self.x[j], ty - self.y[j], tz - self.z[j]);
            let r2 = dx * dx + dy * dy + dz * dz + eps2;
            let v = 1.0 / r2.sqrt();
            let inv = if r2 > 0.0 && j != skip { v } else { 0.0 };
            let qi = self.q[j] * inv;
            let qi3 = qi * inv * inv;
            ex[l] += qi3 * dx;
            ey[l] += qi3 * dy;
            ez[l] += qi3 * dz;
            ph[l] += qi;
        }
        let sum = |a: [f64; 4]| (a[0] + a[1]) + (a[2] + a[3]);
        (Vec3::new(sum(ex), sum(ey), sum(ez)), sum(ph))
    }

    pub fn field_at(&self, x: Vec3, skip: Option<usize>, p: &FieldParams) -> Vec3 {
        self.field_potential(x, skip.unwrap_or(NO_SKIP), p.epsilon * p.epsilon).0
    }

    pub fn potential_at(&self, x: Vec3, skip: Option<usize>, p: &FieldParams) -> f64 {
        self.field_potential(x, skip.unwrap_or(NO_SKIP), p.epsilon * p.epsilon).1
    }

    /// Field and potential at every source, each excluding itself.
    pub fn field_potential_all(&self, p: &FieldParams) -> (Vec<Vec3>, Vec<f64>) {
        let eps2 = p.epsilon * p.epsilon;
        (0..self.len())
            .into_par_iter()
            .map(|k| self.field_potential(self.position(k), k, eps2))
            .unzip()
    }

    /// Field at arbitrary points, no exclusion beyond coincident sources.
    pub fn field_at_points(&self, points: &[Vec3], p: &FieldParams) -> Vec<Vec3> {
        let eps2 = p.epsilon * p.epsilon;
        points
            .par_iter()
            .map(|&x| self.field_potential(x, NO_SKIP, eps2).0)
            .collect()
    }
}

pub fn efield_at(x: &Vec3, e: &Ensemble, p: &FieldParams, skip: Option<usize>) -> Vec3 {
    Sources::from_ensemble(e).field_at(*x, skip, p)
}

pub fn efield_all(e: &Ensemble, p: &FieldParams) -> Vec<Vec3> {
    Sources::from_ensemble(e).field_potential_all(p).0
}

/// `Phi_k = sum_{j != k} sigma_j w_j / sqrt(|x_k - x_j|^2 + eps^2)`.
pub fn potentials(e: &Ensemble, p: &FieldParams) -> Vec<f64> {
    Sources::from_ensemble(e).field_potential_all(p).1
}

/// `1/2 sum_{j != k} q_j q_k / sqrt(r_jk^2 + eps^2)`.
pub fn potential_energy(e: &Ensemble, p: &FieldParams) -> f64 {
    let phi = potentials(e, p);
    potential_energy_from(e, &phi)
}

pub fn potential_energy_from(e: &Ensemble, phi: &[f64]) -> f64 {
    0.5 * e
        .particles
        .iter()
        .zip(phi)
        .map(|(pt, &f)| e.sigma(pt) * e.weight(pt) * f)
        .sum::<f64>()
}

/// Smallest `K` with `|E(x) - E(y)| <= K s (1 + |ln s|)`, `s = |x - y|`, over
/// the given point pairs.
pub fn quasi_lipschitz_constant(src: &Sources, p: &FieldParams, pairs: &[(Vec3, Vec3)]) -> f64 {
    pairs
        .par_iter()
        .map(|(x, y)| {
            let s = (x - y).norm();
            if s == 0.0 {
                return 0.0;
            }
            let gap = (src.field_at(*x, None, p) - src.field_at(*y, None, p)).norm();
            gap / (s * (1.0 + s.ln().abs()))
        })
        .reduce(|| 0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::ensemble::{Particle, Species};

    fn ensemble(points: &[(Vec3, usize)], species: Vec<Species>) -> Ensemble {
        let particles = points
            .iter()
            .enumerate()
            .map(|(id, &(x, s))| Particle {
                id,
                species: s,
                x,
                v: Vec3::zeros(),
            })
            .collect();
        Ensemble::new(species, particles)
    }

    fn unit(sigma: f64) -> Species {
        Species {
            sigma,
            weight: 1.0,
            count: 0,
        }
    }

    fn random_ensemble(n: usize, seed: u64) -> Ensemble {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<(Vec3, usize)> = (0..n)
            .map(|_| {
                let x = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                (x, rng.random_range(0..2))
            })
            .collect();
        ensemble(
            &pts,
            vec![
                Species {
                    sigma: 1.0,
                    weight: 0.3,
                    count: 0,
                },
                Species {
                    sigma: -0.5,
                    weight: 0.7,
                    count: 0,
                },
            ],
        )
    }

    const EXACT: FieldParams = FieldParams { epsilon: 0.0 };

    #[test]
    fn single_pair_field() {
        let e = ensemble(&[(Vec3::new(2.0, 0.0, 0.0), 0)], vec![unit(1.0)]);
        assert_eq!(efield_at(&Vec3::zeros(), &e, &EXACT, None), Vec3::new(-0.25, 0.0, 0.0));
        assert_eq!(efield_at(&e.particles[0].x, &e, &EXACT, Some(0)), Vec3::zeros());
        assert_eq!(efield_all(&e, &EXACT), vec![Vec3::zeros()]);
    }

    #[test]
    fn symmetric_sources_cancel() {
        let e = ensemble(
            &[(Vec3::new(1.0, 0.0, 0.0), 0), (Vec3::new(-1.0, 0.0, 0.0), 0)],
            vec![unit(1.0)],
        );
        assert_eq!(efield_at(&Vec3::zeros(), &e, &EXACT, None), Vec3::zeros());
    }

    #[test]
    fn potential_energy_examples() {
        let same = ensemble(&[(Vec3::zeros(), 0), (Vec3::new(1.0, 0.0, 0.0), 0)], vec![unit(1.0)]);
        assert_eq!(potential_energy(&same, &EXACT), 1.0);
        let opposite = ensemble(
            &[(Vec3::zeros(), 0), (Vec3::new(0.0, 2.0, 0.0), 1)],
            vec![unit(1.0), unit(-1.0)],
        );
        assert_eq!(potential_energy(&opposite, &EXACT), -0.5);
        let single = ensemble(&[(Vec3::zeros(), 0)], vec![unit(1.0)]);
        assert_eq!(potential_energy(&single, &EXACT), 0.0);
    }

    #[test]
    fn batched_field_matches_single_evaluations_bitwise() {
        let e = random_ensemble(1000, 1);
        let p = FieldParams { epsilon: 0.05 };
        let all = efield_all(&e, &p);
        let src = Sources::from_ensemble(&e);
        for (k, pt) in e.particles.iter().enumerate() {
            assert_eq!(all[k], src.field_at(pt.x, Some(k), &p));
        }
        assert_eq!(all[17], efield_at(&e.particles[17].x, &e, &p, Some(17)));
    }

    #[test]
    fn batched_field_is_thread_count_independent() {
        let e = random_ensemble(500, 2);
        let p = FieldParams { epsilon: 0.01 };
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| efield_all(&e, &p))
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn pair_forces_are_antisymmetric() {
        let e = random_ensemble(60, 3);
        let p = FieldParams { epsilon: 0.02 };
        for j in 0..e.len() {
            for k in 0..j {
                let mut one = Sources::with_capacity(1);
                one.push(e.particles[j].x, e.charges()[j]);
                let f_kj = one.field_at(e.particles[k].x, None, &p) * e.charges()[k];
                let mut other = Sources::with_capacity(1);
                other.push(e.particles[k].x, e.charges()[k]);
                let f_jk = other.field_at(e.particles[j].x, None, &p) * e.charges()[j];
                for c in 0..3 {
                    let scale = f_kj[c].abs().max(1e-300);
                    assert!((f_kj[c] + f_jk[c]).abs() <= 1e-15 * scale.max(f_kj.norm()));
                }
            }
        }
    }

    #[test]
    fn translation_invariance() {
        let e = random_ensemble(300, 4);
        let p = FieldParams { epsilon: 0.1 };
        let shift = Vec3::new(3.7, -1.2, 0.4);
        let mut moved = e.clone();
        for pt in &mut moved.particles {
            pt.x += shift;
        }
        let (u0, u1) = (potential_energy(&e, &p), potential_energy(&moved, &p));
        assert!((u0 - u1).abs() <= 1e-12 * u0.abs().max(1.0));
        let (f0, f1) = (efield_all(&e, &p), efield_all(&moved, &p));
        let scale = f0.iter().map(|f| f.norm()).fold(0.0, f64::max);
        for (a, b) in f0.iter().zip(&f1) {
            assert!((a - b).norm() <= 1e-12 * scale);
        }
    }

    #[test]
    fn same_sign_potential_energy_is_positive() {
        let mut e = random_ensemble(200, 5);
        for pt in &mut e.particles {
            pt.species = 0;
        }
        assert!(potential_energy(&e, &EXACT) > 0.0);
    }

    #[test]
    fn quasi_lipschitz_fit_is_finite() {
        let e = random_ensemble(400, 6);
        let p = FieldParams { epsilon: 0.05 };
        let src = Sources::from_ensemble(&e);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pairs: Vec<(Vec3, Vec3)> = (0..1000)
            .map(|_| {
                let x = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
                let s = 10f64.powf(rng.random_range(-4.0..-1.0));
                let d = crate::ensemble::unit_direction(&mut rng);
                (x, x + s * d)
            })
            .collect();
        let k = quasi_lipschitz_constant(&src, &p, &pairs);
        assert!(k.is_finite() && k > 0.0, "K = {k}");
    }

    #[test]
    fn default_softening_is_half_spacing() {
        let pts: Vec<(Vec3, usize)> = (0..8).map(|k| (Vec3::new(2.0, 0.0, k as f64 * 0.1), 0)).collect();
        let e = ensemble(&pts, vec![unit(1.0)]);
        let r = e.particles.iter().map(|p| p.x.norm()).fold(0.0, f64::max);
        let expected = 0.5 * (4.0 / 3.0 * std::f64::consts::PI * r.powi(3) / 8.0).cbrt();
        assert!((default_softening(&e) - expected).abs() < 1e-14);
    }

    #[test]
    fn negative_softening_is_rejected() {
        assert!(FieldParams::new(-1.0).is_err());
        assert!(FieldParams::new(0.0).is_ok());
    }
}
