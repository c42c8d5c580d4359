//! Macro-particle realization of the species distributions.
//!
//! Initial data are bounded by `C0 exp(-lambda |v|^q) g(|x|)`; speeds are drawn
//! by rejection from the truncated density `|v| <= N`, positions from
//! `g(|x|) = min(1, |x|^-alpha)` (or from concentric shells in the cell-bounded
//! mode) restricted to points at least `d0` away from the shield and at most
//! `R_dom` from the origin.

mod sampler;
mod snapshot;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{shield_distance, ShieldGeometry};
use crate::{Error, Result, Vec3};

pub use sampler::{unit_direction, PowerLawRadius, ShellRadius, SpeedSampler};
pub use snapshot::{read_snapshot, write_snapshot, SnapshotMeta};

/// One species as realized in an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Species {
    /// Charge per unit mass (signed, nonzero).
    pub sigma: f64,
    /// Mass carried by each macro-particle.
    pub weight: f64,
    pub count: usize,
}

/// Species requested from the sampler. Without an explicit weight the
/// macro-particle weight is chosen so that the species carries the mass of the
/// bounding distribution over the sampled support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesSpec {
    pub sigma: f64,
    pub count: usize,
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialMode {
    PowerLaw,
    CellBounded,
}

/// The two classes of initial data for which the shield is known to hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HypothesisClass {
    /// Species of both signs, finite total mass.
    FiniteMass,
    /// Species of one sign, possibly infinite total mass.
    SameSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialData {
    pub lambda: f64,
    pub q: f64,
    pub alpha_decay: f64,
    pub c0: f64,
    pub d0: f64,
    pub n_cut: f64,
    pub r_dom: f64,
    pub spatial_mode: SpatialMode,
}

impl Default for InitialData {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            q: 2.9,
            alpha_decay: 2.8,
            c0: 1.0,
            d0: 0.2,
            n_cut: 16.0,
            r_dom: 20.0,
            spatial_mode: SpatialMode::PowerLaw,
        }
    }
}

impl InitialData {
    /// Checks the decay exponents against a hypothesis class.
    pub fn check_hypotheses(&self, class: HypothesisClass) -> Result<()> {
        let (q, a) = (self.q, self.alpha_decay);
        match class {
            HypothesisClass::FiniteMass => {
                if !(q > 18.0 / 7.0) {
                    return Err(Error::Hypothesis(format!(
                        "finite-mass data require q > 18/7, got q = {q}"
                    )));
                }
                if !(a > 3.0) {
                    return Err(Error::Hypothesis(format!(
                        "finite-mass data require alpha > 3, got alpha = {a}"
                    )));
                }
            }
            HypothesisClass::SameSign => {
                if !(a > 8.0 / 3.0 && a <= 3.0) {
                    return Err(Error::Hypothesis(format!(
                        "same-sign infinite-mass data require 8/3 < alpha <= 3, got alpha = {a}"
                    )));
                }
                let bound = 45.0 / 7.0 - 9.0 / 7.0 * a;
                if !(q > bound) {
                    return Err(Error::Hypothesis(format!(
                        "same-sign infinite-mass data require q > 45/7 - (9/7) alpha = {bound}, got q = {q}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Structural checks that hold for every scenario.
    pub fn validate(&self, geometry: &ShieldGeometry) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && !v.is_nan() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive, got {v}")))
            }
        };
        positive(self.lambda, "lambda")?;
        positive(self.q, "q")?;
        positive(self.alpha_decay, "alpha")?;
        positive(self.c0, "C0")?;
        positive(self.d0, "d0")?;
        if !(self.n_cut > 0.0) {
            return Err(Error::Config(format!(
                "velocity cutoff N must be positive, got {}: the velocity support is empty",
                self.n_cut
            )));
        }
        let scale = length_scale(geometry);
        if !(self.r_dom >= 10.0 * scale) {
            return Err(Error::Config(format!(
                "domain radius {} must be at least 10 times the shield size {scale}",
                self.r_dom
            )));
        }
        Ok(())
    }
}

/// Characteristic size of the shield used to bound the domain radius.
pub fn length_scale(g: &ShieldGeometry) -> f64 {
    match *g {
        ShieldGeometry::Torus { major, .. } => major,
        ShieldGeometry::Cylinder { radius, .. } => radius,
        ShieldGeometry::HalfSpace { cut, .. } => cut,
        ShieldGeometry::None => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    /// Index in the originally sampled ensemble; preserved by [`apply_cutoff`].
    pub id: usize,
    pub species: usize,
    pub x: Vec3,
    pub v: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
    pub species: Vec<Species>,
    pub t: f64,
    pub seed: u64,
    /// Velocity cutoff the ensemble was sampled or filtered with.
    pub cutoff: f64,
}

impl Ensemble {
    pub fn new(species: Vec<Species>, particles: Vec<Particle>) -> Self {
        Self {
            particles,
            species,
            t: 0.0,
            seed: 0,
            cutoff: f64::INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn sigma(&self, p: &Particle) -> f64 {
        self.species[p.species].sigma
    }

    pub fn weight(&self, p: &Particle) -> f64 {
        self.species[p.species].weight
    }

    /// `sigma * weight` of every particle, in particle order.
    pub fn charges(&self) -> Vec<f64> {
        self.particles
            .iter()
            .map(|p| {
                let s = &self.species[p.species];
                s.sigma * s.weight
            })
            .collect()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.particles.iter().map(|p| p.x).collect()
    }

    /// True if every species has the same sign of charge.
    pub fn is_same_sign(&self) -> bool {
        let mut used = self.particles.iter().map(|p| self.species[p.species].sigma);
        match used.next() {
            None => true,
            Some(first) => used.all(|s| s.signum() == first.signum()),
        }
    }

    pub fn min_shield_distance(&self, g: &ShieldGeometry) -> f64 {
        self.particles
            .iter()
            .map(|p| shield_distance(&p.x, g))
            .fold(f64::INFINITY, f64::min)
    }

    fn recount(&mut self) {
        for s in &mut self.species {
            s.count = 0;
        }
        for p in &self.particles {
            self.species[p.species].count += 1;
        }
    }
}

/// Acceptance statistics of [`sample_initial_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleReport {
    pub velocity_acceptance: f64,
    pub position_acceptance: f64,
    /// `int g dx` over the accepted spatial support.
    pub spatial_integral: f64,
    /// `int exp(-lambda |v|^q) dv` over `|v| <= N`.
    pub velocity_integral: f64,
}

const MAX_CONSECUTIVE_REJECTIONS: usize = 1_000_000;

enum RadialSampler {
    PowerLaw(PowerLawRadius),
    Shells(ShellRadius),
}

impl RadialSampler {
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            RadialSampler::PowerLaw(p) => p.sample(rng),
            RadialSampler::Shells(s) => s.sample(rng),
        }
    }

    fn volume_integral(&self) -> f64 {
        match self {
            RadialSampler::PowerLaw(p) => p.volume_integral(),
            RadialSampler::Shells(s) => s.volume_integral(),
        }
    }
}

pub fn sample_initial(
    init: &InitialData,
    species: &[SpeciesSpec],
    geometry: &ShieldGeometry,
    seed: u64,
) -> Result<Ensemble> {
    sample_initial_report(init, species, geometry, seed).map(|(e, _)| e)
}

/// Samples the initial ensemble; every species draws from its own ChaCha stream
/// so the result depends only on `seed` and the configuration.
pub fn sample_initial_report(
    init: &InitialData,
    species: &[SpeciesSpec],
    geometry: &ShieldGeometry,
    seed: u64,
) -> Result<(Ensemble, SampleReport)> {
    if !(init.n_cut > 0.0) {
        return Err(Error::Config(format!(
            "velocity cutoff N = {} leaves an empty velocity support",
            init.n_cut
        )));
    }
    if !(init.d0 > 0.0) || !(init.r_dom > 0.0) {
        return Err(Error::Config("d0 and R_dom must be positive".into()));
    }
    for s in species {
        if s.sigma == 0.0 || !s.sigma.is_finite() {
            return Err(Error::Config(format!("species charge per mass must be nonzero, got {}", s.sigma)));
        }
        if let Some(w) = s.weight {
            if !(w > 0.0) {
                return Err(Error::Config(format!("species weight must be positive, got {w}")));
            }
        }
    }

    let speeds = SpeedSampler::new(init.lambda, init.q, init.n_cut);
    let radial = match init.spatial_mode {
        SpatialMode::PowerLaw => RadialSampler::PowerLaw(PowerLawRadius::new(init.alpha_decay, init.r_dom)),
        SpatialMode::CellBounded => {
            let shells = ShellRadius::new(init.alpha_decay, init.r_dom);
            if shells.shells().is_empty() {
                return Err(Error::Config("R_dom too small for any occupied shell".into()));
            }
            RadialSampler::Shells(shells)
        }
    };

    let mut particles = Vec::with_capacity(species.iter().map(|s| s.count).sum());
    let (mut v_props, mut v_acc) = (0u64, 0u64);
    let (mut x_props, mut x_acc) = (0u64, 0u64);
    for (sid, spec) in species.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(sid as u64);
        for _ in 0..spec.count {
            let mut rejections = 0;
            let x = loop {
                x_props += 1;
                let r = radial.sample(&mut rng);
                let x = r * unit_direction(&mut rng);
                if shield_distance(&x, geometry) >= init.d0 {
                    break x;
                }
                rejections += 1;
                if rejections >= MAX_CONSECUTIVE_REJECTIONS {
                    return Err(Error::Config(format!(
                        "infeasible spatial support: no point within R_dom = {} lies at distance >= d0 = {} from the shield",
                        init.r_dom, init.d0
                    )));
                }
            };
            x_acc += 1;
            let (s, props) = speeds.sample(&mut rng);
            v_props += props;
            v_acc += 1;
            let v = s * unit_direction(&mut rng);
            particles.push(Particle {
                id: particles.len(),
                species: sid,
                x,
                v,
            });
        }
    }

    let ratio = |a: u64, b: u64| if b == 0 { 1.0 } else { a as f64 / b as f64 };
    let position_acceptance = ratio(x_acc, x_props);
    let report = SampleReport {
        velocity_acceptance: ratio(v_acc, v_props),
        position_acceptance,
        spatial_integral: radial.volume_integral() * position_acceptance,
        velocity_integral: speeds.velocity_integral(),
    };
    let mass_per_species = init.c0 * report.velocity_integral * report.spatial_integral;
    let realized = species
        .iter()
        .map(|s| Species {
            sigma: s.sigma,
            weight: s
                .weight
                .unwrap_or(mass_per_species / s.count.max(1) as f64),
            count: s.count,
        })
        .collect();

    Ok((
        Ensemble {
            particles,
            species: realized,
            t: 0.0,
            seed,
            cutoff: init.n_cut,
        },
        report,
    ))
}

/// Keeps the particles with `|v| <= n`, preserving order and identifiers.
pub fn apply_cutoff(e: &Ensemble, n: f64) -> Ensemble {
    let mut out = Ensemble {
        particles: e
            .particles
            .iter()
            .filter(|p| p.v.norm() <= n)
            .copied()
            .collect(),
        species: e.species.clone(),
        t: e.t,
        seed: e.seed,
        cutoff: e.cutoff.min(n),
    };
    out.recount();
    out
}

/// Axis-aligned box `[lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub lo: Vec3,
    pub hi: Vec3,
}

/// Cell-centered scalar field on a regular grid, `values[(i * ny + j) * nz + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    pub origin: Vec3,
    pub cell: f64,
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.dims[1] + j) * self.dims[2] + k]
    }
}

/// Charge density histogram `sum sigma w / cell^3` over the window.
pub fn density_on_grid(e: &Ensemble, cell: f64, window: &Window) -> Result<ScalarGrid> {
    if !(cell > 0.0) {
        return Err(Error::Config(format!("cell size must be positive, got {cell}")));
    }
    let extent = window.hi - window.lo;
    let dims = [0, 1, 2].map(|a| ((extent[a] / cell).ceil().max(0.0)) as usize);
    let mut values = vec![0.0; dims.iter().product()];
    let vol = cell * cell * cell;
    for p in &e.particles {
        let rel = (p.x - window.lo) / cell;
        if (0..3).any(|a| rel[a] < 0.0 || rel[a] >= dims[a] as f64) {
            continue;
        }
        let idx = (rel.x as usize * dims[1] + rel.y as usize) * dims[2] + rel.z as usize;
        values[idx] += e.sigma(p) * e.weight(p) / vol;
    }
    Ok(ScalarGrid {
        origin: window.lo,
        cell,
        dims,
        values,
    })
}
