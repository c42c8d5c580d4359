//! Monitored quantities: energies, balance residuals, local energy and its
//! supremum, field averages along tracers.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::dynamics::{torus_potential_profile, Simulator};
use crate::ensemble::Ensemble;
use crate::fields::smooth_fall;
use crate::geometry::{frame_at, to_toroidal, ShieldGeometry};
use crate::selffield::{potentials, FieldParams};
use crate::{Error, Result, Vec3};

/// Cutoff profile equal to 1 on `[0, 1]` and 0 on `[2, inf)`, a quintic
/// smoothstep in between; its slope never drops below `-15/8`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MollifierPhi;

impl MollifierPhi {
    pub fn value(&self, r: f64) -> f64 {
        smooth_fall(r - 1.0).0
    }

    pub fn derivative(&self, r: f64) -> f64 {
        smooth_fall(r - 1.0).1
    }
}

/// `(v_r, v_theta, v_alpha)` in the toroidal frame at `x`.
pub fn toroidal_velocity(x: &Vec3, v: &Vec3, major: f64) -> (f64, f64, f64) {
    let f = frame_at(&to_toroidal(x, major).point);
    (v.dot(&f.e_r), v.dot(&f.e_theta), v.dot(&f.e_alpha))
}

/// One sample of a single-particle trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec3,
    pub v: Vec3,
    /// Electric field acting on the particle.
    pub e: Vec3,
}

fn trapezoid<F: Fn(&Sample) -> f64>(s: &[Sample], f: F) -> f64 {
    s.windows(2)
        .map(|w| 0.5 * (w[1].t - w[0].t) * (f(&w[0]) + f(&w[1])))
        .sum()
}

/// `(|V(t)|^2 - |V(0)|^2 - 2 sigma int V.E) / max(1, |V(t)|^2)` with the
/// trapezoid rule on the samples.
pub fn speed_work_residual(samples: &[Sample], sigma: f64) -> f64 {
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return 0.0;
    };
    let work = trapezoid(samples, |s| s.v.dot(&s.e));
    let v2 = last.v.norm_squared();
    (v2 - first.v.norm_squared() - 2.0 * sigma * work) / v2.max(1.0)
}

/// Residual of the angular balance near a torus shield,
///
/// `sigma (a(r_t) - a(r_0)) = -[rho v_theta] + int 2 v_theta (v_r cos(alpha) - v_alpha sin(alpha))
///     + int (-2 v_r v_theta cos(alpha) + 2 v_alpha v_theta sin(alpha) + sigma rho E_theta)`,
///
/// divided by `sigma` and normalized by `max(1, a(r_t))`. Returns 0 for
/// shields other than a torus.
pub fn shield_balance(samples: &[Sample], sigma: f64, g: &ShieldGeometry) -> Result<f64> {
    let Some(major) = g.major_radius() else {
        return Ok(0.0);
    };
    let (Some(first), Some(last)) = (samples.first(), samples.last()) else {
        return Ok(0.0);
    };
    let a = |x: &Vec3| torus_potential_profile(x, g).ok_or(Error::Singularity { distance: 0.0 });
    let (a0, a1) = (a(&first.x)?, a(&last.x)?);
    struct Tor {
        rho: f64,
        ca: f64,
        sa: f64,
        vr: f64,
        vt: f64,
        va: f64,
        et: f64,
    }
    let tor = |s: &Sample| {
        let p = to_toroidal(&s.x, major).point;
        let f = frame_at(&p);
        Tor {
            rho: major + p.r * p.alpha.cos(),
            ca: p.alpha.cos(),
            sa: p.alpha.sin(),
            vr: s.v.dot(&f.e_r),
            vt: s.v.dot(&f.e_theta),
            va: s.v.dot(&f.e_alpha),
            et: s.e.dot(&f.e_theta),
        }
    };
    let t0 = tor(first);
    let t1 = tor(last);
    let boundary = -(t1.rho * t1.vt - t0.rho * t0.vt);
    let first_int = trapezoid(samples, |s| {
        let q = tor(s);
        2.0 * q.vt * (q.vr * q.ca - q.va * q.sa)
    });
    let second_int = trapezoid(samples, |s| {
        let q = tor(s);
        -2.0 * q.vr * q.vt * q.ca + 2.0 * q.va * q.vt * q.sa + sigma * q.rho * q.et
    });
    let rhs = (boundary + first_int + second_int) / sigma;
    Ok((a1 - a0 - rhs) / a1.max(1.0))
}

/// `(1 / delta) int_t^{t + delta} |E| ds` by the trapezoid rule on
/// `(time, |E|)` samples, interpolating linearly at the window ends.
pub fn avg_field_window(times: &[f64], e_mag: &[f64], t: f64, delta: f64) -> Result<f64> {
    if times.len() != e_mag.len() || times.is_empty() {
        return Err(Error::Config("field samples and times must be non-empty and of equal length".into()));
    }
    let (t_lo, t_hi) = (times[0], times[times.len() - 1]);
    if !(delta > 0.0) || t < t_lo - 1e-12 || t + delta > t_hi + 1e-12 * (1.0 + t_hi.abs()) {
        return Err(Error::Config(format!(
            "window [{t}, {}] is not inside the sampled span [{t_lo}, {t_hi}]",
            t + delta
        )));
    }
    let at = |s: f64| -> f64 {
        let k = times.partition_point(|&x| x <= s).clamp(1, times.len() - 1);
        let (a, b) = (times[k - 1], times[k]);
        if b == a {
            return e_mag[k];
        }
        let w = ((s - a) / (b - a)).clamp(0.0, 1.0);
        e_mag[k - 1] + w * (e_mag[k] - e_mag[k - 1])
    };
    let end = t + delta;
    let mut pts = vec![(t, at(t))];
    for (k, &s) in times.iter().enumerate() {
        if s > t && s < end {
            pts.push((s, e_mag[k]));
        }
    }
    pts.push((end, at(end)));
    let integral: f64 = pts
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum();
    Ok(integral / delta)
}

/// Per-particle energy density `1/2 w |v|^2 + 1/2 q Phi` from the potentials
/// at the particles.
fn energy_weights(e: &Ensemble, phi: &[f64]) -> Vec<f64> {
    e.particles
        .iter()
        .zip(phi)
        .map(|(p, &f)| {
            let s = &e.species[p.species];
            0.5 * s.weight * p.v.norm_squared() + 0.5 * s.sigma * s.weight * f
        })
        .collect()
}

fn local_energy_from(e: &Ensemble, weights: &[f64], mu: &Vec3, r: f64) -> f64 {
    let phi = MollifierPhi;
    e.particles
        .iter()
        .zip(weights)
        .map(|(p, &w)| {
            let d = (p.x - mu).norm() / r;
            if d >= 2.0 {
                0.0
            } else {
                phi.value(d) * w
            }
        })
        .sum()
}

/// Mollified kinetic plus interaction energy around `mu`; only defined for
/// plasmas of a single sign.
pub fn local_energy(e: &Ensemble, mu: &Vec3, r: f64, fp: &FieldParams) -> Result<f64> {
    if !e.is_same_sign() {
        return Err(Error::MixedSign);
    }
    if !(r > 0.0) {
        return Err(Error::Config(format!("local energy radius must be positive, got {r}")));
    }
    let weights = energy_weights(e, &potentials(e, fp));
    Ok(local_energy_from(e, &weights, mu, r))
}

/// Probe centers for [`q_sup_many`]: every 16th particle plus the centers of
/// the occupied cells of a lattice with spacing `R / 2`, for every `R`.
pub fn probe_centers(e: &Ensemble, radii: &[f64]) -> Vec<Vec3> {
    let mut probes: Vec<Vec3> = e.particles.iter().step_by(16).map(|p| p.x).collect();
    for &r in radii {
        let s = 0.5 * r;
        let mut cells: Vec<[i64; 3]> = e
            .particles
            .iter()
            .map(|p| [0, 1, 2].map(|a| (p.x[a] / s).floor() as i64))
            .collect();
        cells.sort_unstable();
        cells.dedup();
        probes.extend(
            cells
                .iter()
                .map(|c| Vec3::new(c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5) * s),
        );
    }
    probes
}

/// Sparse binning of nonnegative particle weights on cubes of side `size`.
struct Bins {
    size: f64,
    cells: HashMap<[i64; 3], Cell>,
}

#[derive(Default)]
struct Cell {
    mass: f64,
    members: Vec<usize>,
}

impl Bins {
    fn new(pos: &[Vec3], weights: &[f64], size: f64) -> Self {
        let mut cells: HashMap<[i64; 3], Cell> = HashMap::new();
        for (j, x) in pos.iter().enumerate() {
            let c = cells.entry(Self::key(x, size)).or_default();
            c.mass += weights[j];
            c.members.push(j);
        }
        Self { size, cells }
    }

    fn key(x: &Vec3, size: f64) -> [i64; 3] {
        [0, 1, 2].map(|a| (x[a] / size).floor() as i64)
    }

    /// Occupied cells within `2 r` of `mu`, in a fixed order, with the smallest
    /// distance from `mu` to each cell.
    fn near(&self, mu: &Vec3, r: f64) -> Vec<(f64, &Cell)> {
        let reach = 2.0 * r;
        let lo = Self::key(&(mu - Vec3::repeat(reach)), self.size);
        let hi = Self::key(&(mu + Vec3::repeat(reach)), self.size);
        let mut out = Vec::new();
        for i in lo[0]..=hi[0] {
            for j in lo[1]..=hi[1] {
                for k in lo[2]..=hi[2] {
                    let Some(cell) = self.cells.get(&[i, j, k]) else {
                        continue;
                    };
                    let mut d2 = 0.0;
                    for (a, c) in [i, j, k].into_iter().enumerate() {
                        let c0 = c as f64 * self.size;
                        let gap = (c0 - mu[a]).max(mu[a] - c0 - self.size).max(0.0);
                        d2 += gap * gap;
                    }
                    if d2 < reach * reach {
                        out.push((d2.sqrt(), cell));
                    }
                }
            }
        }
        out
    }
}

/// `max over probes of W(mu, R)` for each radius, a lower bound on the true
/// supremum. Probes are visited in decreasing order of an upper bound built
/// from cell sums, so the maximum is exact on the probe set without visiting
/// every probe.
pub fn q_sup_many(e: &Ensemble, phi: &[f64], radii: &[f64], probes: &[Vec3]) -> Result<Vec<f64>> {
    if !e.is_same_sign() {
        return Err(Error::MixedSign);
    }
    if e.is_empty() || probes.is_empty() {
        return Ok(vec![0.0; radii.len()]);
    }
    let weights = energy_weights(e, phi);
    let pos = e.positions();
    let mollifier = MollifierPhi;
    radii
        .iter()
        .map(|&r| {
            if !(r > 0.0) {
                return Err(Error::Config(format!("local energy radius must be positive, got {r}")));
            }
            let bins = Bins::new(&pos, &weights, 0.5 * r);
            // the mollifier is non-increasing, so weighting each cell by its
            // value at the nearest point of the cell bounds W from above
            let mut order: Vec<(f64, usize)> = probes
                .par_iter()
                .enumerate()
                .map(|(k, mu)| {
                    let b = bins.near(mu, r).iter().map(|(d, c)| mollifier.value(d / r) * c.mass).sum();
                    (b, k)
                })
                .collect();
            order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            let mut best = 0.0f64;
            for (bound, k) in order {
                if bound <= best {
                    break;
                }
                let mu = probes[k];
                let w: f64 = bins
                    .near(&mu, r)
                    .iter()
                    .flat_map(|(_, c)| c.members.iter())
                    .map(|&j| {
                        let d = (pos[j] - mu).norm() / r;
                        if d >= 2.0 {
                            0.0
                        } else {
                            mollifier.value(d) * weights[j]
                        }
                    })
                    .sum();
                best = best.max(w);
            }
            Ok(best)
        })
        .collect()
}

/// `Q(R) = sup_mu W(mu, R)` estimated over `probes`.
pub fn q_sup(e: &Ensemble, r: f64, fp: &FieldParams, probes: &[Vec3]) -> Result<f64> {
    let phi = potentials(e, fp);
    Ok(q_sup_many(e, &phi, &[r], probes)?[0])
}

/// One row of the diagnostics stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagRecord {
    pub t: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub total: f64,
    /// `(R, Q(R, t))`, only for single-sign plasmas and on sampled steps.
    pub q_of_r: Option<Vec<(f64, f64)>>,
    pub min_shield_distance: f64,
    pub max_speed: f64,
    pub speed_work_residual_max: f64,
    /// `None` unless the shield is a torus.
    pub shield_balance_residual_max: Option<f64>,
    pub avg_field_per_tracer: Vec<f64>,
}

/// Builds [`DiagRecord`]s from a running simulation.
#[derive(Debug, Clone)]
pub struct Recorder {
    pub radii: Vec<f64>,
    /// Compute `Q` on every `q_every`-th record (and always on the first).
    pub q_every: usize,
    pub tracers: Vec<usize>,
    /// Averaging window for the tracer fields.
    pub window: f64,
    records: usize,
    times: Vec<f64>,
    field_history: Vec<Vec<f64>>,
}

impl Recorder {
    pub fn new(radii: Vec<f64>, q_every: usize, tracers: Vec<usize>, window: f64) -> Self {
        let n = tracers.len();
        Self {
            radii,
            q_every: q_every.max(1),
            tracers,
            window,
            records: 0,
            times: Vec::new(),
            field_history: vec![Vec::new(); n],
        }
    }

    pub fn record(&mut self, sim: &Simulator) -> Result<DiagRecord> {
        let e = &sim.ensemble;
        let t = e.t;
        let kinetic = sim.kinetic_energy();
        let potential = sim.potential_energy();
        let fold_max = |v: Vec<f64>| v.into_iter().map(f64::abs).fold(0.0, f64::max);
        let speed_work_residual_max = fold_max(sim.speed_work_residuals());
        let shield_balance_residual_max = if sim.geometry.major_radius().is_some() {
            Some(fold_max(sim.shield_balance_residuals()))
        } else {
            None
        };

        let use_q = !self.radii.is_empty() && e.is_same_sign() && self.records.is_multiple_of(self.q_every);
        let q_of_r = if use_q {
            let probes = probe_centers(e, &self.radii);
            let q = q_sup_many(e, sim.potentials(), &self.radii, &probes)?;
            Some(self.radii.iter().copied().zip(q).collect())
        } else {
            None
        };

        self.times.push(t);
        for (hist, &k) in self.field_history.iter_mut().zip(&self.tracers) {
            hist.push(sim.tracks().get(k).map_or(f64::NAN, |tr| tr.efield().norm()));
        }
        let t_first = self.times[0];
        let avg_field_per_tracer = self
            .field_history
            .iter()
            .map(|hist| {
                let span = t - t_first;
                if span <= 0.0 {
                    return hist[hist.len() - 1];
                }
                let delta = self.window.min(span);
                avg_field_window(&self.times, hist, t - delta, delta).unwrap_or(f64::NAN)
            })
            .collect();
        self.records += 1;

        Ok(DiagRecord {
            t,
            kinetic,
            potential,
            total: kinetic + potential,
            q_of_r,
            min_shield_distance: sim.min_distance(),
            max_speed: sim.max_speed(),
            speed_work_residual_max,
            shield_balance_residual_max,
            avg_field_per_tracer,
        })
    }
}

/// Writes diagnostics as CSV with `Q_R1..Q_Rk` and `avg_field_<id>` columns.
pub fn write_diagnostics_csv<W: Write>(out: W, radii: &[f64], tracers: &[usize], records: &[DiagRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "t",
        "kinetic",
        "potential",
        "total",
        "min_shield_distance",
        "max_speed",
        "speed_work_residual_max",
        "shield_balance_residual_max",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=radii.len()).map(|k| format!("Q_R{k}")));
    header.extend(tracers.iter().map(|id| format!("avg_field_{id}")));
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.t.to_string(),
            r.kinetic.to_string(),
            r.potential.to_string(),
            r.total.to_string(),
            r.min_shield_distance.to_string(),
            r.max_speed.to_string(),
            r.speed_work_residual_max.to_string(),
            r.shield_balance_residual_max.map(|v| v.to_string()).unwrap_or_default(),
        ];
        for k in 0..radii.len() {
            row.push(
                r.q_of_r
                    .as_ref()
                    .and_then(|q| q.get(k))
                    .map(|(_, v)| v.to_string())
                    .unwrap_or_default(),
            );
        }
        row.extend(r.avg_field_per_tracer.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|err| Error::io("<diagnostics>", err))
}

pub fn write_diagnostics_file(path: &Path, radii: &[f64], tracers: &[usize], records: &[DiagRecord]) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|err| Error::io(path, err))?;
    write_diagnostics_csv(std::io::BufWriter::new(f), radii, tracers, records)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len()) as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
