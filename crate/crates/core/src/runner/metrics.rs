use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const METRICS_HEADER: &str = "epoch,total_env_steps,eval_return_mean,eval_return_std,mean_model_loss,mean_rollout_weight,mean_ensemble_variance,wall_clock_seconds";

/// One evaluation point. Model-related columns are 0 (weight 1) for runs
/// without a model or before the first model fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub total_env_steps: usize,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub mean_model_loss: f64,
    pub mean_rollout_weight: f64,
    pub mean_ensemble_variance: f64,
    pub wall_clock_seconds: f64,
}

pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    w.write_record(METRICS_HEADER.split(','))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// First `total_env_steps` whose mean evaluation return reaches `threshold`.
pub fn steps_to_threshold(rows: &[MetricsRow], threshold: f64) -> Option<usize> {
    rows.iter()
        .find(|r| r.eval_return_mean >= threshold)
        .map(|r| r.total_env_steps)
}
