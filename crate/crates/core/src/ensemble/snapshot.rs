//! CSV snapshots of an ensemble with a TOML sidecar carrying the metadata that
//! the rows do not: seed, configuration hash, time and species charges.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Ensemble, Particle, Species};
use crate::{Error, Result, Vec3};

pub const SNAPSHOT_HEADER: [&str; 8] = ["species_id", "x1", "x2", "x3", "v1", "v2", "v3", "weight"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub seed: u64,
    pub config_hash: String,
    pub t: f64,
    pub cutoff: f64,
    pub particles: usize,
    pub sigma: Vec<f64>,
    pub weight: Vec<f64>,
}

/// `snap.csv` -> `snap.meta.toml`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.toml")
}

#[derive(Serialize, Deserialize)]
struct Row {
    species_id: usize,
    x1: f64,
    x2: f64,
    x3: f64,
    v1: f64,
    v2: f64,
    v3: f64,
    weight: f64,
}

pub fn write_snapshot(e: &Ensemble, path: &Path, config_hash: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in &e.particles {
        w.serialize(Row {
            species_id: p.species,
            x1: p.x.x,
            x2: p.x.y,
            x3: p.x.z,
            v1: p.v.x,
            v2: p.v.y,
            v3: p.v.z,
            weight: e.species[p.species].weight,
        })?;
    }
    if e.particles.is_empty() {
        w.write_record(SNAPSHOT_HEADER)?;
    }
    w.flush().map_err(|err| Error::io(path, err))?;

    let meta = SnapshotMeta {
        seed: e.seed,
        config_hash: config_hash.to_owned(),
        t: e.t,
        // TOML has no infinity literal in every reader; store a negative sentinel
        cutoff: if e.cutoff.is_finite() { e.cutoff } else { -1.0 },
        particles: e.particles.len(),
        sigma: e.species.iter().map(|s| s.sigma).collect(),
        weight: e.species.iter().map(|s| s.weight).collect(),
    };
    let text = toml::to_string(&meta).map_err(|err| Error::Parse(err.to_string()))?;
    let side = sidecar_path(path);
    fs::write(&side, text).map_err(|err| Error::io(side, err))
}

/// Reads a snapshot back; particle ids are the row indices.
pub fn read_snapshot(path: &Path) -> Result<(Ensemble, SnapshotMeta)> {
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(|err| Error::io(&side, err))?;
    let meta: SnapshotMeta = toml::from_str(&text).map_err(|err| Error::Parse(err.to_string()))?;
    if meta.sigma.len() != meta.weight.len() {
        return Err(Error::Parse("sidecar sigma and weight lists differ in length".into()));
    }
    let mut species: Vec<Species> = meta
        .sigma
        .iter()
        .zip(&meta.weight)
        .map(|(&sigma, &weight)| Species {
            sigma,
            weight,
            count: 0,
        })
        .collect();

    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if header != SNAPSHOT_HEADER {
        return Err(Error::Parse(format!("unexpected snapshot header {header:?}")));
    }
    let mut particles = Vec::new();
    for row in r.deserialize() {
        let row: Row = row?;
        let s = species
            .get_mut(row.species_id)
            .ok_or_else(|| Error::Parse(format!("unknown species id {}", row.species_id)))?;
        s.count += 1;
        particles.push(Particle {
            id: particles.len(),
            species: row.species_id,
            x: Vec3::new(row.x1, row.x2, row.x3),
            v: Vec3::new(row.v1, row.v2, row.v3),
        });
    }
    let e = Ensemble {
        particles,
        species,
        t: meta.t,
        seed: meta.seed,
        cutoff: if meta.cutoff < 0.0 { f64::INFINITY } else { meta.cutoff },
    };
    Ok((e, meta))
}
