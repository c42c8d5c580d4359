//! Paired runs at two velocity cutoffs from the same initial data.
//!
//! Both runs start from `apply_cutoff(base, N)` for their own `N`; the gaps are
//! taken between particles that carry the same identifier, over the particles
//! both runs share (initial speed at most the smaller cutoff).

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::dynamics::{Simulator, StepPolicy};
use crate::ensemble::{apply_cutoff, Ensemble};
use crate::geometry::ShieldGeometry;
use crate::selffield::FieldParams;
use crate::{Error, Result};

/// Numerical settings of one run of a pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunParams {
    pub field: FieldParams,
    pub step: StepPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSetup {
    pub geometry: ShieldGeometry,
    pub horizon: f64,
    pub small: RunParams,
    pub large: RunParams,
}

impl PairSetup {
    pub fn shared(geometry: ShieldGeometry, field: FieldParams, step: StepPolicy, horizon: f64) -> Self {
        let p = RunParams { field, step };
        Self {
            geometry,
            horizon,
            small: p,
            large: p,
        }
    }

    fn check(&self) -> Result<()> {
        let (a, b) = (&self.small, &self.large);
        if a.step.dt_macro != b.step.dt_macro {
            return Err(Error::Config(format!(
                "paired runs must share dt, got {} and {}",
                a.step.dt_macro, b.step.dt_macro
            )));
        }
        if a.field.epsilon != b.field.epsilon {
            return Err(Error::Config(format!(
                "paired runs must share the softening, got {} and {}",
                a.field.epsilon, b.field.epsilon
            )));
        }
        if !(self.horizon >= 0.0) {
            return Err(Error::Config(format!("horizon must be non-negative, got {}", self.horizon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GapRecord {
    pub t: f64,
    pub delta: f64,
    pub eta: f64,
    pub sigma: f64,
}

/// Gaps between the two runs; the scalar fields are the values at the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRunReport {
    pub n_small: f64,
    pub n_large: f64,
    /// Number of particles in the compared set.
    pub common: usize,
    pub delta: f64,
    pub eta: f64,
    pub sigma: f64,
    pub series: Vec<GapRecord>,
}

/// Sup over matched identifiers of the position and velocity gaps. Every
/// particle of `small` must appear in `large`.
pub fn gaps(small: &Ensemble, large: &Ensemble) -> Result<(f64, f64)> {
    let index: HashMap<usize, usize> = large.particles.iter().enumerate().map(|(k, p)| (p.id, k)).collect();
    let mut delta = 0.0f64;
    let mut eta = 0.0f64;
    for p in &small.particles {
        let k = *index
            .get(&p.id)
            .ok_or_else(|| Error::Config(format!("particle {} missing from the larger run", p.id)))?;
        let q = &large.particles[k];
        delta = delta.max((p.x - q.x).norm());
        eta = eta.max((p.v - q.v).norm());
    }
    Ok((delta, eta))
}

fn record(t: f64, small: &Ensemble, large: &Ensemble) -> Result<GapRecord> {
    let (delta, eta) = gaps(small, large)?;
    Ok(GapRecord {
        t,
        delta,
        eta,
        sigma: delta + eta,
    })
}

pub fn run_pair(base: &Ensemble, n_small: f64, n_large: f64, setup: &PairSetup) -> Result<PairRunReport> {
    setup.check()?;
    if !(n_small > 0.0 && n_small <= n_large) {
        return Err(Error::Config(format!(
            "cutoffs must satisfy 0 < N_small <= N_large, got {n_small} and {n_large}"
        )));
    }
    if base.cutoff < n_large {
        return Err(Error::Config(format!(
            "base ensemble was sampled with cutoff {} below N_large = {n_large}",
            base.cutoff
        )));
    }
    let mut a = Simulator::new(apply_cutoff(base, n_small), setup.geometry, setup.small.field, setup.small.step)?;
    let mut b = Simulator::new(apply_cutoff(base, n_large), setup.geometry, setup.large.field, setup.large.step)?;
    let t0 = base.t;
    let t_end = t0 + setup.horizon;
    let dt = setup.small.step.dt_macro;

    let mut series = vec![record(t0, &a.ensemble, &b.ensemble)?];
    while t_end - a.t() > 1e-12 * dt.max(t_end.abs()) {
        let step = dt.min(t_end - a.t());
        let (ra, rb) = rayon::join(|| a.step_macro(step), || b.step_macro(step));
        ra?;
        rb?;
        series.push(record(a.t(), &a.ensemble, &b.ensemble)?);
    }
    let last = series[series.len() - 1];
    Ok(PairRunReport {
        n_small,
        n_large,
        common: a.ensemble.len(),
        delta: last.delta,
        eta: last.eta,
        sigma: last.sigma,
        series,
    })
}

/// Runs the pairs `(N, 2N)` for each rung.
pub fn run_ladder(base: &Ensemble, rungs: &[f64], setup: &PairSetup) -> Result<Vec<PairRunReport>> {
    rungs.iter().map(|&n| run_pair(base, n, 2.0 * n, setup)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CauchyRow {
    pub n: f64,
    pub sigma_t: f64,
    /// `sigma(T)` of the next rung over this one.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauchyTable {
    pub rows: Vec<CauchyRow>,
}

impl CauchyTable {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].sigma_t < w[0].sigma_t)
    }
}

impl std::fmt::Display for CauchyTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:>8} {:>14} {:>10}", "N", "sigma(T)", "ratio")?;
        for r in &self.rows {
            match r.ratio {
                Some(q) => writeln!(f, "{:>8} {:>14.6e} {:>10.4}", r.n, r.sigma_t, q)?,
                None => writeln!(f, "{:>8} {:>14.6e} {:>10}", r.n, r.sigma_t, "-")?,
            }
        }
        Ok(())
    }
}

/// Rungs in the given order; the ratio is undefined when `sigma(T)` is zero.
pub fn cauchy_report(ladder: &[PairRunReport]) -> CauchyTable {
    let rows = ladder
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let ratio = ladder
                .get(k + 1)
                .and_then(|next| (r.sigma > 0.0).then(|| next.sigma / r.sigma));
            CauchyRow {
                n: r.n_small,
                sigma_t: r.sigma,
                ratio,
            }
        })
        .collect();
    CauchyTable { rows }
}

#[derive(Serialize)]
struct CsvRow {
    #[serde(rename = "N_small")]
    n_small: f64,
    #[serde(rename = "N_large")]
    n_large: f64,
    t: f64,
    delta: f64,
    eta: f64,
    sigma: f64,
}

pub fn write_convergence_csv<W: Write>(out: W, ladder: &[PairRunReport]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(["N_small", "N_large", "t", "delta", "eta", "sigma"])?;
    for r in ladder {
        for g in &r.series {
            w.serialize(CsvRow {
                n_small: r.n_small,
                n_large: r.n_large,
                t: g.t,
                delta: g.delta,
                eta: g.eta,
                sigma: g.sigma,
            })?;
        }
    }
    w.flush().map_err(|err| Error::Parse(err.to_string()))
}

pub fn write_convergence_file(path: &Path, ladder: &[PairRunReport]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|err| Error::io(path, err))?;
    write_convergence_csv(std::io::BufWriter::new(file), ladder)
}
