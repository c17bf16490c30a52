//! Localization error statistics and the geometric range-bearing oracle.
//!
//! Percentiles use the nearest-rank convention: `p_q` is the value at
//! index `ceil(q*N)` (1-based) of the ascending sort, exact on small N.

use serde::Serialize;

use crate::channel::SPEED_OF_LIGHT;
use crate::error::{Error, Result};
use crate::geometry::Point2D;

/// Error statistics for one evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub per_user_error_m: Vec<f64>,
    /// Ascending `(error, cumulative fraction)` step data ending at 1.0.
    pub cdf: Vec<(f64, f64)>,
    pub p50_m: f64,
    pub p90_m: f64,
    /// Errors beyond the outlier threshold (scene bounding-box diagonal).
    pub outlier_count: usize,
}

/// Per-user Euclidean error in meters, on denormalized coordinates.
pub fn localization_errors(predicted: &[Point2D], actual: &[Point2D]) -> Result<Vec<f64>> {
    if predicted.len() != actual.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions for {} actual positions",
            predicted.len(),
            actual.len()
        )));
    }
    Ok(predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| p.distance(a))
        .collect())
}

fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

impl EvalResult {
    /// Build the CDF and percentiles; errors above `outlier_threshold_m` are
    /// counted but never dropped.
    pub fn from_errors(errors: &[f64], outlier_threshold_m: f64) -> Result<EvalResult> {
        if errors.is_empty() {
            return Err(Error::EmptyInput("no errors to summarize".into()));
        }
        let mut sorted = errors.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let cdf = sorted
            .iter()
            .enumerate()
            .map(|(i, e)| (*e, (i + 1) as f64 / n as f64))
            .collect();
        Ok(EvalResult {
            per_user_error_m: errors.to_vec(),
            cdf,
            p50_m: nearest_rank(&sorted, 0.5),
            p90_m: nearest_rank(&sorted, 0.9),
            outlier_count: errors.iter().filter(|e| **e > outlier_threshold_m).count(),
        })
    }

    pub fn mean_m(&self) -> f64 {
        self.per_user_error_m.iter().sum::<f64>() / self.per_user_error_m.len() as f64
    }
}

/// Empirical CDF and nearest-rank percentiles of an error vector.
pub fn empirical_cdf(errors: &[f64]) -> Result<EvalResult> {
    EvalResult::from_errors(errors, f64::INFINITY)
}

/// Exact single-station position fix from bearing and time of arrival:
/// `bs + c*toa * (cos az, sin az)`. The inverse of the direct-path channel
/// parameters, used to validate scene and channel end to end.
pub fn los_geometric_fix(bs: Point2D, aoa_az: f64, toa_s: f64) -> Result<Point2D> {
    if !(toa_s > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "time of arrival must be positive, got {toa_s}"
        )));
    }
    let range = SPEED_OF_LIGHT * toa_s;
    Ok(Point2D::new(
        bs.x + range * aoa_az.cos(),
        bs.y + range * aoa_az.sin(),
    ))
}

// ---------------------------------------------------------------------------
// CSV / JSON artifacts
// ---------------------------------------------------------------------------

/// One row of the location map: prediction against truth for one user.
#[derive(Debug, Clone, Serialize)]
pub struct LocationMapRow {
    pub user_id: usize,
    pub actual_x: f64,
    pub actual_y: f64,
    pub pred_x: f64,
    pub pred_y: f64,
    pub error_m: f64,
    /// 1 when the error exceeds the outlier threshold, else 0.
    pub outlier: u8,
}

pub fn write_location_map(path: &std::path::Path, rows: &[LocationMapRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_cdf(path: &std::path::Path, result: &EvalResult) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["error_m", "fraction"])?;
    for (error, fraction) in &result.cdf {
        writer.write_record([error.to_string(), fraction.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}
