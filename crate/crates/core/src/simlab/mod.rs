//! Synthetic experiments: scenario generation, selection metrics and the
//! simulation campaigns built on them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::rng::{derive_seed, tag};

mod campaign;
mod holdout;
mod methods;
mod metrics;
mod phase;
mod scenario;
mod sensitivity;

pub use campaign::{run_table2_campaign, ReplicationRecord, ScenarioSummary, SimReport};
pub use holdout::{run_holdout, HoldoutMetric, HoldoutRecord, HoldoutReport};
pub use methods::{run_method, Method, MethodOutcome, MethodSettings};
pub use metrics::{oir_metric, oracle_oir, rmse_metric, summarize, support_metrics, Summary};
pub use phase::{run_phase_campaign, PhaseCell, PhaseGridSpec, PhaseRecord, PhaseReport};
pub use scenario::{equicorrelated_design, equicorrelated_quadratic, generate_scenario, GeneratedData, ScenarioSpec, TRUE_INTERCEPT};
pub use sensitivity::{run_sensitivity_study, InterceptArm, SensitivityRecord, SensitivityReport, SensitivitySummary};

/// Seed for one replication and one use within it.
pub(crate) fn rep_seed(seed: u64, rep: usize, salt: u64) -> u64 {
    derive_seed(derive_seed(seed, tag::CAMPAIGN).wrapping_add(rep as u64), salt)
}

/// Writes rows as a headed, comma-separated file.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}
