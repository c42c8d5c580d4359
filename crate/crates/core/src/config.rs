//! Run configuration: scenario presets overlaid with a TOML file.
//!
//! The preset of the requested scenario is serialized to a TOML table, the
//! user's table is merged over it key by key, and the result is deserialized
//! with unknown keys rejected. The resolved configuration therefore records
//! every default that influenced the run.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::StepPolicy;
use crate::ensemble::{HypothesisClass, InitialData, SpeciesSpec};
use crate::geometry::{shield_distance, ShieldGeometry};
use crate::selffield::FieldParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Both signs, finite mass, torus shield.
    TorusTwoSign,
    /// One sign, possibly infinite mass, torus shield.
    TorusSameSign,
    Cylinder,
    Halfspace,
    /// Explicit particles listed under `[[particle]]`.
    SingleParticle,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::TorusTwoSign => "torus_two_sign",
            Scenario::TorusSameSign => "torus_same_sign",
            Scenario::Cylinder => "cylinder",
            Scenario::Halfspace => "halfspace",
            Scenario::SingleParticle => "single_particle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSettings {
    /// Softening length; without it half the mean initial spacing is used.
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSettings {
    pub dir: PathBuf,
    /// Times at which ensemble snapshots are written.
    pub snapshot_times: Vec<f64>,
    /// Record diagnostics every this many macro steps (and at both ends).
    pub diag_every: usize,
    /// Radii of the local-energy supremum; only used for single-sign plasmas.
    pub q_radii: Vec<f64>,
    pub q_every: usize,
    /// Particle indices whose time-averaged field is reported.
    pub tracers: Vec<usize>,
    pub window: f64,
    /// Compare the initial diagnostics at `r_dom` and `r_dom / 2`.
    pub sensitivity: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSettings {
    /// Each rung `N` runs the pair `(N, 2N)`.
    pub rungs: Vec<f64>,
    pub horizon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSpec {
    pub x: [f64; 3],
    pub v: [f64; 3],
    pub sigma: f64,
    #[serde(default = "unit")]
    pub weight: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub horizon: f64,
    pub seed: u64,
    pub workers: usize,
    pub allow_hypothesis_violation: bool,
    pub geometry: ShieldGeometry,
    pub initial: InitialData,
    pub field: FieldSettings,
    pub step: StepPolicy,
    pub output: OutputSettings,
    pub convergence: ConvergenceSettings,
    #[serde(default)]
    pub species: Vec<SpeciesSpec>,
    #[serde(default)]
    pub particle: Vec<ParticleSpec>,
}

pub const TORUS_PRESET: ShieldGeometry = ShieldGeometry::Torus {
    major: 2.0,
    minor: 0.5,
    tau: 4.0,
};

fn default_geometry(kind: &str) -> Option<ShieldGeometry> {
    Some(match kind {
        "torus" => TORUS_PRESET,
        "cylinder" => ShieldGeometry::Cylinder { radius: 1.0, tau: 4.0 },
        "half_space" => ShieldGeometry::HalfSpace { tau: 4.0, cut: 1.0 },
        "none" => ShieldGeometry::None,
        _ => return None,
    })
}

fn two_species(a: f64, b: f64, count: usize) -> Vec<SpeciesSpec> {
    [a, b]
        .into_iter()
        .map(|sigma| SpeciesSpec {
            sigma,
            count,
            weight: None,
        })
        .collect()
}

impl RunConfig {
    pub fn preset(scenario: Scenario) -> Self {
        let finite = InitialData {
            alpha_decay: 3.5,
            ..InitialData::default()
        };
        let (geometry, initial, species) = match scenario {
            Scenario::TorusTwoSign => (TORUS_PRESET, finite, two_species(1.0, -1.0, 1000)),
            Scenario::TorusSameSign => (TORUS_PRESET, InitialData::default(), two_species(1.0, 0.5, 1000)),
            Scenario::Cylinder => (
                default_geometry("cylinder").unwrap(),
                finite,
                two_species(1.0, -1.0, 1000),
            ),
            Scenario::Halfspace => (
                default_geometry("half_space").unwrap(),
                finite,
                two_species(1.0, -1.0, 1000),
            ),
            Scenario::SingleParticle => (TORUS_PRESET, InitialData::default(), Vec::new()),
        };
        let same_sign = scenario == Scenario::TorusSameSign;
        let particle = if scenario == Scenario::SingleParticle {
            vec![ParticleSpec {
                x: [2.9, 0.0, 0.0],
                v: [-1.0, 0.5, 0.0],
                sigma: 1.0,
                weight: 1.0,
            }]
        } else {
            Vec::new()
        };
        RunConfig {
            scenario,
            horizon: 1.0,
            seed: 1,
            workers: 1,
            allow_hypothesis_violation: false,
            geometry,
            initial,
            field: FieldSettings::default(),
            step: StepPolicy::default(),
            output: OutputSettings {
                dir: PathBuf::from("out"),
                snapshot_times: vec![0.0, 1.0],
                diag_every: 1,
                q_radii: if same_sign { vec![2.0, 4.0, 8.0, 16.0] } else { Vec::new() },
                q_every: 10,
                tracers: vec![0],
                window: 0.1,
                sensitivity: same_sign,
            },
            convergence: ConvergenceSettings {
                rungs: vec![4.0, 8.0, 16.0],
                horizon: 1.0,
            },
            species,
            particle,
        }
    }

    /// Hypothesis class the initial data must satisfy, if any.
    pub fn hypothesis_class(&self) -> Option<HypothesisClass> {
        match self.scenario {
            Scenario::TorusTwoSign => Some(HypothesisClass::FiniteMass),
            Scenario::TorusSameSign => Some(HypothesisClass::SameSign),
            Scenario::Cylinder | Scenario::Halfspace => Some(if self.initial.alpha_decay > 3.0 {
                HypothesisClass::FiniteMass
            } else {
                HypothesisClass::SameSign
            }),
            Scenario::SingleParticle => None,
        }
    }

    pub fn field_params(&self) -> Option<FieldParams> {
        self.field.epsilon.map(|epsilon| FieldParams { epsilon })
    }

    pub fn validate(&self) -> Result<()> {
        let allow = self.allow_hypothesis_violation;
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be finite and non-negative, got {}", self.horizon)));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.geometry.validate(allow)?;
        self.step.validate()?;
        if let Some(eps) = self.field.epsilon {
            FieldParams::new(eps)?;
        }
        let out = &self.output;
        if out.diag_every == 0 || out.q_every == 0 {
            return Err(Error::Config("diag_every and q_every must be at least 1".into()));
        }
        if let Some(t) = out.snapshot_times.iter().find(|t| !(**t >= 0.0 && **t <= self.horizon)) {
            return Err(Error::Config(format!("snapshot time {t} outside [0, {}]", self.horizon)));
        }
        if out.q_radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("local-energy radii must be positive".into()));
        }
        if !(out.window > 0.0) {
            return Err(Error::Config(format!("averaging window must be positive, got {}", out.window)));
        }
        let conv = &self.convergence;
        if conv.rungs.iter().any(|n| !(*n > 0.0)) || !(conv.horizon >= 0.0) {
            return Err(Error::Config("convergence rungs and horizon must be positive".into()));
        }

        if self.scenario == Scenario::SingleParticle {
            if self.particle.is_empty() {
                return Err(Error::Config("single_particle needs at least one [[particle]]".into()));
            }
            for (k, p) in self.particle.iter().enumerate() {
                if !(p.sigma != 0.0 && p.sigma.is_finite() && p.weight > 0.0) {
                    return Err(Error::Config(format!("particle {k} needs nonzero sigma and positive weight")));
                }
                let x = crate::Vec3::from(p.x);
                if !(shield_distance(&x, &self.geometry) > 0.0) {
                    return Err(Error::Config(format!("particle {k} starts inside the shield")));
                }
            }
            return Ok(());
        }
        if !self.particle.is_empty() {
            return Err(Error::Config(format!(
                "[[particle]] entries are only used by single_particle, not {}",
                self.scenario.name()
            )));
        }
        if self.species.is_empty() {
            return Err(Error::Config("at least one [[species]] is required".into()));
        }
        for (k, s) in self.species.iter().enumerate() {
            if !(s.sigma != 0.0 && s.sigma.is_finite()) {
                return Err(Error::Config(format!("species {k} has invalid sigma {}", s.sigma)));
            }
            if s.weight.is_some_and(|w| !(w > 0.0)) {
                return Err(Error::Config(format!("species {k} has non-positive weight")));
            }
        }
        let geometry_matches = matches!(
            (self.scenario, self.geometry),
            (Scenario::TorusTwoSign | Scenario::TorusSameSign, ShieldGeometry::Torus { .. })
                | (Scenario::Cylinder, ShieldGeometry::Cylinder { .. })
                | (Scenario::Halfspace, ShieldGeometry::HalfSpace { .. })
        );
        if !geometry_matches && !allow {
            return Err(Error::Config(format!(
                "scenario {} does not match the configured geometry",
                self.scenario.name()
            )));
        }
        self.initial.validate(&self.geometry)?;
        if allow {
            return Ok(());
        }
        match self.hypothesis_class() {
            Some(HypothesisClass::SameSign) => {
                let first = self.species[0].sigma.signum();
                if self.species.iter().any(|s| s.sigma.signum() != first) {
                    return Err(Error::Hypothesis(
                        "infinite-mass data require all species to carry charge of one sign".into(),
                    ));
                }
                self.initial.check_hypotheses(HypothesisClass::SameSign)
            }
            Some(class) => self.initial.check_hypotheses(class),
            None => Ok(()),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|err| Error::Parse(err.to_string()))
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses and validates a configuration; `allow_violation` ORs with the
/// file's own `allow_hypothesis_violation`.
pub fn parse_config_with(text: &str, allow_violation: bool) -> Result<RunConfig> {
    let mut user: toml::Table = text.parse().map_err(|err: toml::de::Error| Error::Parse(err.to_string()))?;
    let scenario: Scenario = match user.get("scenario") {
        Some(v) => v
            .clone()
            .try_into()
            .map_err(|err: toml::de::Error| Error::Parse(format!("scenario: {err}")))?,
        None => return Err(Error::Parse("missing top-level key `scenario`".into())),
    };
    let preset = RunConfig::preset(scenario);
    let mut table: toml::Table = toml::Table::try_from(&preset).map_err(|err| Error::Parse(err.to_string()))?;

    // a different geometry kind starts from that kind's defaults
    if let Some(toml::Value::Table(g)) = user.get("geometry") {
        if let Some(kind) = g.get("kind").and_then(toml::Value::as_str) {
            let fresh = default_geometry(kind).ok_or_else(|| Error::Parse(format!("unknown geometry kind `{kind}`")))?;
            let fresh = toml::Table::try_from(fresh).map_err(|err| Error::Parse(err.to_string()))?;
            table.insert("geometry".into(), toml::Value::Table(fresh));
        }
    }
    // the horizon also sets the default final snapshot and ladder horizon
    if let Some(h) = user.get("horizon").and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64))) {
        let out = table["output"].as_table_mut().unwrap();
        out.insert("snapshot_times".into(), toml::Value::Array(vec![0.0.into(), h.into()]));
        table["convergence"].as_table_mut().unwrap().insert("horizon".into(), h.into());
    }
    if user.contains_key("species") {
        table.remove("species");
    }
    if user.contains_key("particle") {
        table.remove("particle");
    }
    integers_to_floats(&mut user);
    merge(&mut table, user);

    let mut cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|err: toml::de::Error| Error::Parse(err.to_string()))?;
    cfg.allow_hypothesis_violation |= allow_violation;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    parse_config_with(text, false)
}

/// `tau = 4` should mean 4.0; integer-valued keys stay integers.
fn integers_to_floats(t: &mut toml::Table) {
    const INTEGER_KEYS: [&str; 7] = ["seed", "workers", "count", "diag_every", "q_every", "tracers", "max_floor_hits"];
    fn walk(v: &mut toml::Value, keep: bool) {
        match v {
            toml::Value::Integer(i) if !keep => *v = toml::Value::Float(*i as f64),
            toml::Value::Array(a) => a.iter_mut().for_each(|x| walk(x, keep)),
            toml::Value::Table(t) => {
                for (k, x) in t.iter_mut() {
                    walk(x, INTEGER_KEYS.contains(&k.as_str()));
                }
            }
            _ => {}
        }
    }
    for (k, x) in t.iter_mut() {
        walk(x, INTEGER_KEYS.contains(&k.as_str()));
    }
}
