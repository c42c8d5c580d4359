//! Orchestration of end-to-end runs and their artifacts.
//!
//! Every command writes `manifest.toml` into the output directory, including on
//! failure, so a run that stopped on a penetration still records what it was.

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::config::{RunConfig, Scenario};
use crate::convergence::{cauchy_report, run_ladder, write_convergence_file, CauchyTable, PairSetup};
use crate::diagnostics::{probe_centers, q_sup_many, write_diagnostics_file, DiagRecord, Recorder};
use crate::dynamics::Simulator;
use crate::ensemble::{sample_initial, write_snapshot, Ensemble, Particle, Species};
use crate::fields::{band_samples, verify_curl, verify_divergence};
use crate::selffield::{default_softening, potentials, FieldParams};
use crate::{Error, Result, Vec3};

/// Process exit code for an outcome.
pub fn exit_code(r: &Result<()>) -> i32 {
    match r {
        Ok(()) => 0,
        Err(Error::Penetration { .. }) => 2,
        Err(Error::Stiffness { .. }) => 3,
        Err(_) => 1,
    }
}

fn status_name(r: &Result<()>) -> &'static str {
    match r {
        Ok(()) => "ok",
        Err(Error::Penetration { .. }) => "penetration",
        Err(Error::Stiffness { .. }) => "stiffness",
        Err(_) => "error",
    }
}

/// Runs `f` on a pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|err| Error::Config(format!("cannot build worker pool: {err}")))?;
    Ok(pool.install(f))
}

/// Initial ensemble of a configuration.
pub fn build_ensemble(cfg: &RunConfig) -> Result<Ensemble> {
    if cfg.scenario == Scenario::SingleParticle {
        let species = cfg
            .particle
            .iter()
            .map(|p| Species {
                sigma: p.sigma,
                weight: p.weight,
                count: 1,
            })
            .collect();
        let particles = cfg
            .particle
            .iter()
            .enumerate()
            .map(|(k, p)| Particle {
                id: k,
                species: k,
                x: Vec3::from(p.x),
                v: Vec3::from(p.v),
            })
            .collect();
        let mut e = Ensemble::new(species, particles);
        e.seed = cfg.seed;
        return Ok(e);
    }
    sample_initial(&cfg.initial, &cfg.species, &cfg.geometry, cfg.seed)
}

/// The softening actually used and whether it came from the configuration.
pub fn resolve_field(cfg: &RunConfig, e: &Ensemble) -> Result<(FieldParams, &'static str)> {
    match cfg.field_params() {
        Some(p) => Ok((FieldParams::new(p.epsilon)?, "config")),
        None => Ok((FieldParams::new(default_softening(e))?, "half mean initial spacing")),
    }
}

#[derive(Debug, Clone, Serialize)]
struct RunInfo {
    command: String,
    status: String,
    error: Option<String>,
    exit_code: i32,
    config_hash: String,
    seed: u64,
    workers: usize,
    version: String,
    wall_time_s: f64,
    hypothesis_override: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
struct Resolved {
    epsilon: Option<f64>,
    epsilon_source: Option<String>,
    particles: Option<usize>,
    species_weight: Vec<f64>,
    files: Vec<String>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    run: RunInfo,
    resolved: Resolved,
    config: &'a RunConfig,
}

fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    resolved: Resolved,
    outcome: &Result<()>,
    started: Instant,
) -> Result<()> {
    let run = RunInfo {
        command: command.to_owned(),
        status: status_name(outcome).to_owned(),
        error: outcome.as_ref().err().map(|e| e.to_string()),
        exit_code: exit_code(outcome),
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        workers: cfg.workers,
        version: env!("CARGO_PKG_VERSION").to_owned(),
        wall_time_s: started.elapsed().as_secs_f64(),
        hypothesis_override: cfg.allow_hypothesis_violation,
    };
    let text = toml::to_string(&Manifest {
        run,
        resolved,
        config: cfg,
    })
    .map_err(|err| Error::Parse(err.to_string()))?;
    let path = dir.join("manifest.toml");
    fs::write(&path, text).map_err(|err| Error::io(path, err))
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|err| Error::io(dir, err))
}

/// Evolves the configured scenario, writing diagnostics, snapshots, the
/// sensitivity report (when requested) and the manifest into `dir`.
pub fn simulate(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let started = Instant::now();
    prepare(dir)?;
    let mut resolved = Resolved::default();
    let outcome = with_workers(cfg.workers, || simulate_inner(cfg, dir, &mut resolved))?;
    write_manifest(dir, "simulate", cfg, resolved, &outcome, started)?;
    outcome
}

fn simulate_inner(cfg: &RunConfig, dir: &Path, resolved: &mut Resolved) -> Result<()> {
    let e = build_ensemble(cfg)?;
    let (fp, source) = resolve_field(cfg, &e)?;
    resolved.epsilon = Some(fp.epsilon);
    resolved.epsilon_source = Some(source.to_owned());
    resolved.particles = Some(e.len());
    resolved.species_weight = e.species.iter().map(|s| s.weight).collect();

    if cfg.output.sensitivity && e.is_same_sign() && cfg.scenario != Scenario::SingleParticle {
        let path = dir.join("sensitivity.toml");
        write_sensitivity(cfg, &fp, &path)?;
        resolved.files.push("sensitivity.toml".into());
    }

    let out = &cfg.output;
    let tracers: Vec<usize> = out.tracers.iter().copied().filter(|&k| k < e.len()).collect();
    let mut recorder = Recorder::new(out.q_radii.clone(), out.q_every, tracers.clone(), out.window);
    let mut records = Vec::new();
    let run = evolve(cfg, dir, e, fp, &mut recorder, &mut records, &mut resolved.files);
    write_diagnostics_file(&dir.join("diagnostics.csv"), &out.q_radii, &tracers, &records)?;
    resolved.files.push("diagnostics.csv".into());
    run
}

fn evolve(
    cfg: &RunConfig,
    dir: &Path,
    e: Ensemble,
    fp: FieldParams,
    recorder: &mut Recorder,
    records: &mut Vec<DiagRecord>,
    files: &mut Vec<String>,
) -> Result<()> {
    let hash = cfg.hash()?;
    let mut snap_times = cfg.output.snapshot_times.clone();
    snap_times.sort_by(f64::total_cmp);
    snap_times.dedup();
    let snapshot = |sim: &Simulator, files: &mut Vec<String>| -> Result<()> {
        let name = format!("snapshot_{:03}.csv", files.iter().filter(|f| f.starts_with("snapshot_")).count());
        write_snapshot(&sim.ensemble, &dir.join(&name), &hash)?;
        files.push(name);
        Ok(())
    };

    let mut sim = Simulator::new(e, cfg.geometry, fp, cfg.step)?;
    records.push(recorder.record(&sim)?);
    if snap_times.first() == Some(&0.0) {
        snapshot(&sim, files)?;
    }
    let mut targets: Vec<f64> = snap_times.iter().copied().filter(|&t| t > 0.0).collect();
    if targets.last().is_none_or(|&t| t < cfg.horizon) {
        targets.push(cfg.horizon);
    }
    let every = cfg.output.diag_every;
    let mut steps = 0usize;
    for target in targets {
        sim.advance(target, |s| {
            steps += 1;
            if steps.is_multiple_of(every) {
                records.push(recorder.record(s)?);
            }
            Ok(())
        })?;
        if snap_times.contains(&target) {
            snapshot(&sim, files)?;
        }
    }
    if records.last().is_some_and(|r| r.t < sim.t()) {
        records.push(recorder.record(&sim)?);
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SensitivityRow {
    r_dom: f64,
    particles: usize,
    kinetic: f64,
    potential: f64,
    min_shield_distance: f64,
    q_radii: Vec<f64>,
    q_sup: Vec<f64>,
}

#[derive(Serialize)]
struct Sensitivity {
    full: SensitivityRow,
    half: SensitivityRow,
    /// `|half - full| / |full|` per local-energy radius.
    q_relative_change: Vec<f64>,
}

fn sensitivity_row(cfg: &RunConfig, r_dom: f64, fp: &FieldParams) -> Result<SensitivityRow> {
    let mut init = cfg.initial;
    init.r_dom = r_dom;
    let e = sample_initial(&init, &cfg.species, &cfg.geometry, cfg.seed)?;
    let phi = potentials(&e, fp);
    let kinetic = 0.5 * e.particles.iter().map(|p| e.weight(p) * p.v.norm_squared()).sum::<f64>();
    let potential = crate::selffield::potential_energy_from(&e, &phi);
    let radii = cfg.output.q_radii.clone();
    let q_sup = if radii.is_empty() {
        Vec::new()
    } else {
        q_sup_many(&e, &phi, &radii, &probe_centers(&e, &radii))?
    };
    Ok(SensitivityRow {
        r_dom,
        particles: e.len(),
        kinetic,
        potential,
        min_shield_distance: e.min_shield_distance(&cfg.geometry),
        q_radii: radii,
        q_sup,
    })
}

/// Initial diagnostics at `r_dom` and `r_dom / 2` with the same seed and
/// softening, for data whose mass is cut at the domain radius.
pub fn write_sensitivity(cfg: &RunConfig, fp: &FieldParams, path: &Path) -> Result<()> {
    let full = sensitivity_row(cfg, cfg.initial.r_dom, fp)?;
    let half = sensitivity_row(cfg, 0.5 * cfg.initial.r_dom, fp)?;
    let q_relative_change = full
        .q_sup
        .iter()
        .zip(&half.q_sup)
        .map(|(a, b)| if *a != 0.0 { (b - a).abs() / a.abs() } else { 0.0 })
        .collect();
    let text = toml::to_string(&Sensitivity {
        full,
        half,
        q_relative_change,
    })
    .map_err(|err| Error::Parse(err.to_string()))?;
    fs::write(path, text).map_err(|err| Error::io(path, err))
}

/// Cutoff ladder on the configured scenario: writes `convergence.csv` and the
/// Cauchy table `cauchy.txt`.
pub fn convergence(cfg: &RunConfig, dir: &Path) -> Result<CauchyTable> {
    let started = Instant::now();
    prepare(dir)?;
    let mut resolved = Resolved::default();
    let result = with_workers(cfg.workers, || convergence_inner(cfg, dir, &mut resolved))?;
    let outcome = result.as_ref().map(|_| ()).map_err(clone_error);
    write_manifest(dir, "convergence", cfg, resolved, &outcome, started)?;
    result
}

fn convergence_inner(cfg: &RunConfig, dir: &Path, resolved: &mut Resolved) -> Result<CauchyTable> {
    if cfg.scenario == Scenario::SingleParticle {
        return Err(Error::Config("the cutoff ladder needs a sampled scenario".into()));
    }
    let top = cfg.convergence.rungs.iter().copied().fold(0.0, f64::max);
    if cfg.initial.n_cut < 2.0 * top {
        return Err(Error::Config(format!(
            "the base cutoff n_cut = {} must be at least twice the largest rung {top}",
            cfg.initial.n_cut
        )));
    }
    let base = build_ensemble(cfg)?;
    let (fp, source) = resolve_field(cfg, &base)?;
    resolved.epsilon = Some(fp.epsilon);
    resolved.epsilon_source = Some(source.to_owned());
    resolved.particles = Some(base.len());
    resolved.species_weight = base.species.iter().map(|s| s.weight).collect();

    let setup = PairSetup::shared(cfg.geometry, fp, cfg.step, cfg.convergence.horizon);
    let ladder = run_ladder(&base, &cfg.convergence.rungs, &setup)?;
    write_convergence_file(&dir.join("convergence.csv"), &ladder)?;
    let table = cauchy_report(&ladder);
    let path = dir.join("cauchy.txt");
    fs::write(&path, table.to_string()).map_err(|err| Error::io(path, err))?;
    resolved.files.extend(["convergence.csv".into(), "cauchy.txt".into()]);
    Ok(table)
}

/// Errors are not `Clone`; the manifest only needs the kind and the message.
fn clone_error(e: &Error) -> Error {
    match e {
        Error::Penetration { id, t, x, v } => Error::Penetration {
            id: *id,
            t: *t,
            x: *x,
            v: *v,
        },
        Error::Stiffness { id, t, hits, x, v } => Error::Stiffness {
            id: *id,
            t: *t,
            hits: *hits,
            x: *x,
            v: *v,
        },
        other => Error::Config(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldCheck {
    pub samples: usize,
    pub curl_error: f64,
    pub divergence_error: f64,
}

pub const FIELD_TOLERANCE: f64 = 1e-5;

/// Checks `curl A = B` and `div B = 0` by finite differences on points spread
/// over the field band; writes `fields.toml`. Fails when either exceeds
/// [`FIELD_TOLERANCE`].
pub fn verify_fields(cfg: &RunConfig, dir: &Path, samples: usize) -> Result<FieldCheck> {
    let started = Instant::now();
    prepare(dir)?;
    let result = field_check(cfg, samples);
    let outcome = match &result {
        Ok(c) if c.curl_error < FIELD_TOLERANCE && c.divergence_error < FIELD_TOLERANCE => Ok(()),
        Ok(c) => Err(Error::Config(format!(
            "field check failed: curl error {:e}, divergence error {:e}",
            c.curl_error, c.divergence_error
        ))),
        Err(e) => Err(clone_error(e)),
    };
    if let Ok(c) = &result {
        let text = toml::to_string(c).map_err(|err| Error::Parse(err.to_string()))?;
        let path = dir.join("fields.toml");
        fs::write(&path, text).map_err(|err| Error::io(path, err))?;
    }
    let resolved = Resolved {
        files: vec!["fields.toml".into()],
        ..Resolved::default()
    };
    write_manifest(dir, "verify-fields", cfg, resolved, &outcome, started)?;
    outcome.and(result)
}

/// Shield-distance band where the profile is non-trivial, and a step for the
/// finite differences that stays well inside it.
pub fn field_band(g: &crate::geometry::ShieldGeometry) -> (f64, f64, f64) {
    use crate::geometry::ShieldGeometry as G;
    match *g {
        G::Torus { major, minor, .. } => (0.05, 0.99 * (major - minor) / 4.0, 1e-5),
        G::Cylinder { radius, .. } => (0.05 * radius, 0.99 * radius, 1e-5 * radius),
        G::HalfSpace { cut, .. } => (0.05 * cut, 0.99 * cut, 1e-5 * cut),
        G::None => (0.1, 1.0, 1e-5),
    }
}

fn field_check(cfg: &RunConfig, n: usize) -> Result<FieldCheck> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi, h) = field_band(&cfg.geometry);
    let pts = band_samples(&cfg.geometry, lo, hi, n, &mut rng);
    Ok(FieldCheck {
        samples: pts.len(),
        curl_error: verify_curl(&cfg.geometry, &pts, h)?,
        divergence_error: verify_divergence(&cfg.geometry, &pts, h)?,
    })
}
