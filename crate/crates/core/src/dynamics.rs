//! Integration of the characteristics with an exact magnetic rotation.
//!
//! A macro step of length `dt` evaluates the self-consistent field once. Each
//! particle then runs a sub-cycle of symmetric steps
//! `kick(h/2) drift(h/2) rotate(h) drift(h/2) kick(h/2)`, where `h` is limited
//! by the gyration angle and by the distance to the shield. The field inside
//! a macro step is the value at its start, extrapolated linearly along the
//! particle's own history; the trailing half kick of the last sub-step waits
//! for the field at the new positions. A particle that needs a single
//! sub-step therefore follows plain kick-drift-kick leapfrog, and a strongly
//! magnetized one receives its electric work at the sub-step scale.

use nalgebra::Matrix6;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::fields::{magnetic_field_outside, profile_a, FieldProfile};
use crate::geometry::{shield_distance, to_toroidal, ShieldGeometry};
use crate::selffield::{potential_energy_from, FieldParams, Sources};
use crate::{Error, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepPolicy {
    pub dt_macro: f64,
    /// Largest gyration angle per sub-step.
    pub c_rot: f64,
    /// Largest fraction of the shield distance covered per sub-step.
    pub c_dist: f64,
    pub dt_floor: f64,
    /// Consecutive floor-limited sub-steps tolerated before giving up.
    pub max_floor_hits: usize,
    /// Extrapolate the field inside a macro step from the previous one; with
    /// `false` it is held at its start value.
    pub extrapolate_e: bool,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            dt_macro: 0.01,
            c_rot: 0.2,
            c_dist: 0.1,
            dt_floor: 1e-12,
            max_floor_hits: 1000,
            extrapolate_e: true,
        }
    }
}

impl StepPolicy {
    pub fn with_dt(dt_macro: f64) -> Self {
        Self {
            dt_macro,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.dt_macro > 0.0
            && self.c_rot > 0.0
            && self.c_dist > 0.0
            && self.c_dist < 1.0
            && self.dt_floor > 0.0
            && self.dt_floor < self.dt_macro
            && self.max_floor_hits > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid step policy {self:?}")))
        }
    }

    /// Sub-step allowed at shield distance `d` with speed `speed` and field `bmag`.
    pub fn substep(&self, sigma: f64, bmag: f64, speed: f64, d: f64) -> f64 {
        let mut h = f64::INFINITY;
        if bmag > 0.0 {
            h = h.min(self.c_rot / (sigma.abs() * bmag));
        }
        if speed > 0.0 && d.is_finite() {
            h = h.min(self.c_dist * d / speed);
        }
        h
    }

    /// Sub-step at state `(x, v)`, also bounding the rotation by the field at
    /// the drift midpoint where it is evaluated; a particle entering the
    /// field band from a field-free point would otherwise take an
    /// unresolved turn.
    fn substep_at(&self, g: &ShieldGeometry, x: &Vec3, v: &Vec3, sigma: f64, d: f64) -> f64 {
        let b = magnetic_field_outside(x, g).norm();
        let mut h = self.substep(sigma, b, v.norm(), d);
        for _ in 0..8 {
            if !h.is_finite() {
                break;
            }
            let bm = magnetic_field_outside(&(x + v * (0.5 * h)), g).norm();
            if sigma.abs() * bm * h <= self.c_rot {
                break;
            }
            h = self.c_rot / (sigma.abs() * bm);
        }
        h
    }
}

/// Rotation of `v` by the exact gyration angle `-sigma |B| dt` about `B`,
/// rescaled to the incoming speed.
pub fn rotate(v: Vec3, b: Vec3, sigma: f64, dt: f64) -> Vec3 {
    let bmag = b.norm();
    if bmag == 0.0 || dt == 0.0 {
        return v;
    }
    let k = b / bmag;
    let (s, c) = (-sigma * bmag * dt).sin_cos();
    let kv = k.dot(&v);
    let out = v * c + k.cross(&v) * s + k * (kv * (1.0 - c));
    let (n0, n1) = (v.norm(), out.norm());
    if n1 > 0.0 {
        out * (n0 / n1)
    } else {
        out
    }
}

/// Half kick, exact rotation, half kick, then drift with the new velocity.
pub fn push_boris(x: Vec3, v: Vec3, sigma: f64, e: Vec3, b: Vec3, dt: f64) -> (Vec3, Vec3) {
    let minus = v + e * (0.5 * sigma * dt);
    let plus = rotate(minus, b, sigma, dt);
    let v1 = plus + e * (0.5 * sigma * dt);
    (x + v1 * dt, v1)
}

/// The symmetric sub-step used by the simulator, for uniform fields. It is
/// its own inverse under `dt -> -dt`.
pub fn push_symmetric(x: Vec3, v: Vec3, sigma: f64, e: Vec3, b: Vec3, dt: f64) -> (Vec3, Vec3) {
    let v = v + e * (0.5 * sigma * dt);
    let x = x + v * (0.5 * dt);
    let v = rotate(v, b, sigma, dt);
    let x = x + v * (0.5 * dt);
    (x, v + e * (0.5 * sigma * dt))
}

/// `a(r(x))` for a torus shield, `None` for other shapes.
pub fn torus_potential_profile(x: &Vec3, g: &ShieldGeometry) -> Option<f64> {
    let prof = FieldProfile::of(g)?;
    let r = to_toroidal(x, g.major_radius()?).point.r;
    profile_a(r, &prof).ok().map(|(a, _)| a)
}

/// Per-particle bookkeeping of the balance identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Track {
    /// `|v(0)|^2`.
    pub v0_sq: f64,
    /// Trapezoid of `sigma V . E` over the sub-steps actually taken.
    pub work: f64,
    /// `x1 v2 - x2 v1` at t = 0.
    pub lz0: f64,
    /// `a(r(0))`, zero outside the torus band or for other shapes.
    pub a0: f64,
    /// Trapezoid of `sigma (x ^ E)_3`.
    pub torque: f64,
    pub substeps: u64,
    pub min_distance: f64,
    e_now: Vec3,
    e_slope: Vec3,
    pending_half: f64,
}

impl Track {
    fn new(x: Vec3, v: Vec3, e: Vec3, g: &ShieldGeometry) -> Self {
        Self {
            v0_sq: v.norm_squared(),
            work: 0.0,
            lz0: x.x * v.y - x.y * v.x,
            a0: torus_potential_profile(&x, g).unwrap_or(0.0),
            torque: 0.0,
            substeps: 0,
            min_distance: shield_distance(&x, g),
            e_now: e,
            e_slope: Vec3::zeros(),
            pending_half: 0.0,
        }
    }

    /// Field applied to this particle at the current time.
    pub fn efield(&self) -> Vec3 {
        self.e_now
    }
}

fn torque_z(x: &Vec3, e: &Vec3) -> f64 {
    x.x * e.y - x.y * e.x
}

struct Cycle<'a> {
    geometry: &'a ShieldGeometry,
    policy: &'a StepPolicy,
    sigma: f64,
    id: usize,
    t0: f64,
}

impl Cycle<'_> {
    fn checked_distance(&self, x: &Vec3, v: &Vec3, s: f64) -> Result<f64> {
        let d = shield_distance(x, self.geometry);
        if d > 0.0 {
            Ok(d)
        } else {
            Err(Error::Penetration {
                id: self.id,
                t: self.t0 + s,
                x: *x,
                v: *v,
            })
        }
    }

    /// Advances one particle through the macro step, leaving the trailing half
    /// kick of the last sub-step pending.
    fn run(&self, x: &mut Vec3, v: &mut Vec3, tr: &mut Track, dt: f64) -> Result<()> {
        let p = self.policy;
        let sigma = self.sigma;
        let mut s = 0.0;
        let mut hits = 0;
        let mut d = self.checked_distance(x, v, 0.0)?;
        loop {
            let remaining = dt - s;
            let mut h = p.substep_at(self.geometry, x, v, sigma, d).min(remaining);
            if h < p.dt_floor && remaining > p.dt_floor {
                h = p.dt_floor;
                hits += 1;
                if hits >= p.max_floor_hits {
                    return Err(Error::Stiffness {
                        id: self.id,
                        t: self.t0 + s,
                        hits,
                        x: *x,
                        v: *v,
                    });
                }
            } else {
                hits = 0;
            }
            let last = h >= remaining;
            if last {
                h = remaining;
            }

            let ea = tr.e_now + tr.e_slope * s;
            tr.work += 0.5 * h * sigma * v.dot(&ea);
            tr.torque += 0.5 * h * sigma * torque_z(x, &ea);
            *v += ea * (0.5 * sigma * h);

            let mid = *x + *v * (0.5 * h);
            self.checked_distance(&mid, v, s + 0.5 * h)?;
            let bm = magnetic_field_outside(&mid, self.geometry);
            *v = rotate(*v, bm, sigma, h);
            *x = mid + *v * (0.5 * h);
            d = self.checked_distance(x, v, s + h)?;
            tr.min_distance = tr.min_distance.min(d);
            tr.substeps += 1;

            if last {
                tr.pending_half = h;
                return Ok(());
            }
            s += h;
            let eb = tr.e_now + tr.e_slope * s;
            *v += eb * (0.5 * sigma * h);
            tr.work += 0.5 * h * sigma * v.dot(&eb);
            tr.torque += 0.5 * h * sigma * torque_z(x, &eb);
        }
    }
}

/// Evolves an ensemble under the external and self-consistent fields.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub ensemble: Ensemble,
    pub geometry: ShieldGeometry,
    pub params: FieldParams,
    pub policy: StepPolicy,
    tracks: Vec<Track>,
    potentials: Vec<f64>,
    steps: u64,
    max_speed: f64,
    min_distance: f64,
}

impl Simulator {
    pub fn new(ensemble: Ensemble, geometry: ShieldGeometry, params: FieldParams, policy: StepPolicy) -> Result<Self> {
        policy.validate()?;
        for p in &ensemble.particles {
            let d = shield_distance(&p.x, &geometry);
            if !(d > 0.0) {
                return Err(Error::Penetration {
                    id: p.id,
                    t: ensemble.t,
                    x: p.x,
                    v: p.v,
                });
            }
        }
        let (field, potentials) = Sources::from_ensemble(&ensemble).field_potential_all(&params);
        let tracks = ensemble
            .particles
            .iter()
            .zip(&field)
            .map(|(p, e)| Track::new(p.x, p.v, *e, &geometry))
            .collect();
        let max_speed = ensemble.particles.iter().map(|p| p.v.norm()).fold(0.0, f64::max);
        let min_distance = ensemble.min_shield_distance(&geometry);
        Ok(Self {
            ensemble,
            geometry,
            params,
            policy,
            tracks,
            potentials,
            steps: 0,
            max_speed,
            min_distance,
        })
    }

    pub fn t(&self) -> f64 {
        self.ensemble.t
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    /// Potential at each particle from all others.
    pub fn potentials(&self) -> &[f64] {
        &self.potentials
    }

    /// Running maximum of the particle speeds since t = 0.
    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    /// Smallest shield distance seen at any sub-step since t = 0.
    pub fn min_distance(&self) -> f64 {
        self.min_distance
    }

    pub fn kinetic_energy(&self) -> f64 {
        let e = &self.ensemble;
        0.5 * e
            .particles
            .iter()
            .map(|p| e.weight(p) * p.v.norm_squared())
            .sum::<f64>()
    }

    pub fn potential_energy(&self) -> f64 {
        potential_energy_from(&self.ensemble, &self.potentials)
    }

    pub fn total_energy(&self) -> f64 {
        self.kinetic_energy() + self.potential_energy()
    }

    pub fn step_macro(&mut self, dt: f64) -> Result<()> {
        let t0 = self.ensemble.t;
        let first = self.steps == 0;
        let extrapolate = self.policy.extrapolate_e;
        let geometry = &self.geometry;
        let policy = &self.policy;
        let species = &self.ensemble.species;
        let outcome: Vec<Option<Error>> = self
            .ensemble
            .particles
            .par_iter_mut()
            .zip(self.tracks.par_iter_mut())
            .map(|(p, tr)| {
                if first || !extrapolate {
                    tr.e_slope = Vec3::zeros();
                }
                let cycle = Cycle {
                    geometry,
                    policy,
                    sigma: species[p.species].sigma,
                    id: p.id,
                    t0,
                };
                cycle.run(&mut p.x, &mut p.v, tr, dt).err()
            })
            .collect();
        if let Some(err) = outcome.into_iter().flatten().next() {
            return Err(err);
        }

        let (field, potentials) = Sources::from_ensemble(&self.ensemble).field_potential_all(&self.params);
        let species = &self.ensemble.species;
        self.ensemble
            .particles
            .par_iter_mut()
            .zip(self.tracks.par_iter_mut())
            .zip(field.par_iter())
            .for_each(|((p, tr), e)| {
                let sigma = species[p.species].sigma;
                let h = tr.pending_half;
                p.v += e * (0.5 * sigma * h);
                tr.work += 0.5 * h * sigma * p.v.dot(e);
                tr.torque += 0.5 * h * sigma * torque_z(&p.x, e);
                tr.pending_half = 0.0;
                tr.e_slope = (e - tr.e_now) / dt;
                tr.e_now = *e;
            });
        self.potentials = potentials;
        self.ensemble.t = t0 + dt;
        self.steps += 1;
        for (p, tr) in self.ensemble.particles.iter().zip(&self.tracks) {
            self.max_speed = self.max_speed.max(p.v.norm());
            self.min_distance = self.min_distance.min(tr.min_distance);
        }
        Ok(())
    }

    /// Steps until `t_end`, shortening the final step to land on it, and calls
    /// `hook` after every macro step.
    pub fn advance<F>(&mut self, t_end: f64, mut hook: F) -> Result<()>
    where
        F: FnMut(&Simulator) -> Result<()>,
    {
        if self.ensemble.is_empty() {
            self.ensemble.t = self.ensemble.t.max(t_end);
            return Ok(());
        }
        let dt = self.policy.dt_macro;
        while t_end - self.ensemble.t > 1e-12 * dt.max(t_end.abs()) {
            let step = dt.min(t_end - self.ensemble.t);
            self.step_macro(step)?;
            hook(self)?;
        }
        Ok(())
    }

    /// `(|V|^2 - |v0|^2 - 2 sigma int V.E) / max(1, |V|^2)` per particle.
    pub fn speed_work_residuals(&self) -> Vec<f64> {
        self.ensemble
            .particles
            .iter()
            .zip(&self.tracks)
            .map(|(p, tr)| {
                let v2 = p.v.norm_squared();
                (v2 - tr.v0_sq - 2.0 * tr.work) / v2.max(1.0)
            })
            .collect()
    }

    /// Residual of `a(r(t)) - a(r(0)) = (-[x1 v2 - x2 v1] + int sigma (x ^ E)_3) / sigma`
    /// per particle, normalized by `max(1, a(r(t)))`; empty unless the shield
    /// is a torus.
    pub fn shield_balance_residuals(&self) -> Vec<f64> {
        if FieldProfile::of(&self.geometry).is_none() {
            return Vec::new();
        }
        let e = &self.ensemble;
        e.particles
            .iter()
            .zip(&self.tracks)
            .map(|(p, tr)| {
                let sigma = e.sigma(p);
                let a = torus_potential_profile(&p.x, &self.geometry).unwrap_or(f64::NAN);
                let lz = p.x.x * p.v.y - p.x.y * p.v.x;
                let rhs = (-(lz - tr.lz0) + tr.torque) / sigma;
                (a - tr.a0 - rhs) / a.max(1.0)
            })
            .collect()
    }
}

/// Evolves `e` to time `t_end` and returns it together with whatever `hook`
/// collected after each macro step.
pub fn advance<T, F>(
    e: Ensemble,
    g: &ShieldGeometry,
    fp: &FieldParams,
    sp: &StepPolicy,
    t_end: f64,
    mut hook: F,
) -> Result<(Ensemble, Vec<T>)>
where
    F: FnMut(&Simulator) -> Result<T>,
{
    let mut sim = Simulator::new(e, *g, *fp, *sp)?;
    let mut out = Vec::new();
    sim.advance(t_end, |s| {
        out.push(hook(s)?);
        Ok(())
    })?;
    Ok((sim.ensemble, out))
}

/// A fixed electric field for single-particle flows.
pub trait StaticField: Sync {
    fn efield(&self, x: &Vec3) -> Vec3;
}

/// No electric field.
pub struct NoField;

impl StaticField for NoField {
    fn efield(&self, _: &Vec3) -> Vec3 {
        Vec3::zeros()
    }
}

/// Field of a frozen set of sources.
pub struct FrozenSources {
    pub sources: Sources,
    pub params: FieldParams,
}

impl StaticField for FrozenSources {
    fn efield(&self, x: &Vec3) -> Vec3 {
        self.sources.field_at(*x, None, &self.params)
    }
}

/// Uniform field.
pub struct Uniform(pub Vec3);

impl StaticField for Uniform {
    fn efield(&self, _: &Vec3) -> Vec3 {
        self.0
    }
}

/// Single-particle flow `(x, v) -> (X(t), V(t))` in a static electric field
/// and the external magnetic field. Each sub-step is
/// `kick drift rotate drift kick` with the field taken at the current point,
/// so every stage preserves phase-space volume. Returns the end state and the
/// sub-step sizes; passing `schedule` replays a previous run exactly.
pub fn single_particle_flow(
    x: Vec3,
    v: Vec3,
    sigma: f64,
    g: &ShieldGeometry,
    field: &dyn StaticField,
    policy: &StepPolicy,
    t_total: f64,
    schedule: Option<&[f64]>,
) -> Result<(Vec3, Vec3, Vec<f64>)> {
    let (mut x, mut v) = (x, v);
    let mut steps = Vec::new();
    let check = |x: &Vec3, v: &Vec3, t: f64| -> Result<f64> {
        let d = shield_distance(x, g);
        if d > 0.0 {
            Ok(d)
        } else {
            Err(Error::Penetration { id: 0, t, x: *x, v: *v })
        }
    };
    let mut t = 0.0;
    let mut hits = 0;
    let mut k = 0;
    let mut d = check(&x, &v, 0.0)?;
    loop {
        let h = match schedule {
            Some(s) => match s.get(k) {
                Some(&h) => h,
                None => break,
            },
            None => {
                let remaining = t_total - t;
                if remaining <= 0.0 {
                    break;
                }
                let mut h = policy
                    .substep_at(g, &x, &v, sigma, d)
                    .min(policy.dt_macro)
                    .min(remaining);
                if h < policy.dt_floor && remaining > policy.dt_floor {
                    h = policy.dt_floor;
                    hits += 1;
                    if hits >= policy.max_floor_hits {
                        return Err(Error::Stiffness { id: 0, t, hits, x, v });
                    }
                } else {
                    hits = 0;
                }
                h
            }
        };
        k += 1;
        steps.push(h);
        v += field.efield(&x) * (0.5 * sigma * h);
        let mid = x + v * (0.5 * h);
        check(&mid, &v, t + 0.5 * h)?;
        v = rotate(v, magnetic_field_outside(&mid, g), sigma, h);
        x = mid + v * (0.5 * h);
        v += field.efield(&x) * (0.5 * sigma * h);
        t += h;
        d = check(&x, &v, t)?;
        if schedule.is_none() && t >= t_total {
            break;
        }
    }
    Ok((x, v, steps))
}

/// Determinant of the Jacobian of the single-particle flow over `t_total`,
/// from fourth-order central differences with relative step `1e-6`. The sub-step schedule of
/// the unperturbed orbit is reused for every perturbed one.
pub fn flow_jacobian(
    x: Vec3,
    v: Vec3,
    sigma: f64,
    g: &ShieldGeometry,
    field: &dyn StaticField,
    policy: &StepPolicy,
    t_total: f64,
) -> Result<f64> {
    flow_jacobian_with_step(x, v, sigma, g, field, policy, t_total, 1e-6)
}

pub(crate) fn flow_jacobian_with_step(
    x: Vec3,
    v: Vec3,
    sigma: f64,
    g: &ShieldGeometry,
    field: &dyn StaticField,
    policy: &StepPolicy,
    t_total: f64,
    rel_step: f64,
) -> Result<f64> {
    let (_, _, schedule) = single_particle_flow(x, v, sigma, g, field, policy, t_total, None)?;
    let z: [f64; 6] = [x.x, x.y, x.z, v.x, v.y, v.z];
    let columns: Vec<Result<[f64; 6]>> = (0..6)
        .into_par_iter()
        .map(|i| {
            let delta = rel_step * z[i].abs().max(1.0);
            let eval = |sign: f64| -> Result<[f64; 6]> {
                let mut zz = z;
                zz[i] += sign * delta;
                let (xe, ve, _) = single_particle_flow(
                    Vec3::new(zz[0], zz[1], zz[2]),
                    Vec3::new(zz[3], zz[4], zz[5]),
                    sigma,
                    g,
                    field,
                    policy,
                    t_total,
                    Some(&schedule),
                )?;
                Ok([xe.x, xe.y, xe.z, ve.x, ve.y, ve.z])
            };
            let (p1, m1, p2, m2) = (eval(1.0)?, eval(-1.0)?, eval(2.0)?, eval(-2.0)?);
            let mut col = [0.0; 6];
            for r in 0..6 {
                col[r] = (8.0 * (p1[r] - m1[r]) - (p2[r] - m2[r])) / (12.0 * delta);
            }
            Ok(col)
        })
        .collect();
    let mut m = Matrix6::<f64>::zeros();
    for (i, col) in columns.into_iter().enumerate() {
        let col = col?;
        for r in 0..6 {
            m[(r, i)] = col[r];
        }
    }
    Ok(m.determinant())
}
