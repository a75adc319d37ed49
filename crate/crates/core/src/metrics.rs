//! Fit quality metrics: per-vehicle errors and corpus-level summaries.

use nalgebra::{Point3, Vector2};

use crate::error::{Error, Result};
use crate::scene::PlaneFrame;
use crate::shape_model::{place, DeformableVehicleModel};
use crate::types::{angular_distance_deg, VehicleState};

/// Consistency factor turning a median absolute deviation into a standard
/// deviation estimate under a normal model.
pub const MAD_SCALE: f64 = 1.4826;

/// Errors of one fitted vehicle against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    /// Euclidean in-plane translation error in metres.
    pub translation_m: f64,
    /// Translation error component along the viewing direction.
    pub longitudinal_m: f64,
    /// Translation error component across the viewing direction.
    pub lateral_m: f64,
    /// Absolute heading error in degrees, in `[0, 180]`.
    pub heading_deg: f64,
    /// RMS 3D distance between true and fitted model keypoints in metres.
    pub keypoint_rms_m: f64,
}

/// Compares a fitted state against the truth under a shared model.
///
/// The longitudinal direction is the ray from the camera foot to the true
/// vehicle position on the ground plane; the lateral component is the
/// remainder. Keypoints are compared in camera coordinates, index by index.
pub fn evaluate_fit(
    model: &DeformableVehicleModel,
    truth: &VehicleState,
    fit: &VehicleState,
    frame: &PlaneFrame,
) -> Result<EvalRecord> {
    let delta = fit.t - truth.t;
    let dir = if truth.t.norm() > 1e-9 {
        truth.t.normalize()
    } else {
        Vector2::new(1.0, 0.0)
    };
    let longitudinal = delta.dot(&dir);
    let lateral = delta - dir * longitudinal;
    let truth_points = place(&model.synthesize(&truth.gamma)?, truth, frame);
    let fit_points = place(&model.synthesize(&fit.gamma)?, fit, frame);
    Ok(EvalRecord {
        translation_m: delta.norm(),
        longitudinal_m: longitudinal.abs(),
        lateral_m: lateral.norm(),
        heading_deg: angular_distance_deg(fit.theta_deg, truth.theta_deg),
        keypoint_rms_m: rms_distance(&truth_points, &fit_points)?,
    })
}

/// Shares of fits under fixed error thresholds, in percent. All
/// comparisons are strict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccuracyShares {
    /// Percent of fits with translation error under 0.25 m.
    pub translation_025: f64,
    /// Percent under 0.50 m.
    pub translation_050: f64,
    /// Percent under 0.75 m.
    pub translation_075: f64,
    /// Percent of fits with heading error under 5 degrees.
    pub heading_5: f64,
    /// Percent under 10 degrees.
    pub heading_10: f64,
    /// Percent under 22.5 degrees.
    pub heading_22_5: f64,
}

pub fn accuracy_shares(records: &[EvalRecord]) -> Result<AccuracyShares> {
    if records.is_empty() {
        return Err(Error::InvalidConfig(
            "cannot summarise an empty evaluation".to_string(),
        ));
    }
    let share = |pred: &dyn Fn(&EvalRecord) -> bool| {
        100.0 * records.iter().filter(|r| pred(r)).count() as f64 / records.len() as f64
    };
    Ok(AccuracyShares {
        translation_025: share(&|r| r.translation_m < 0.25),
        translation_050: share(&|r| r.translation_m < 0.50),
        translation_075: share(&|r| r.translation_m < 0.75),
        heading_5: share(&|r| r.heading_deg < 5.0),
        heading_10: share(&|r| r.heading_deg < 10.0),
        heading_22_5: share(&|r| r.heading_deg < 22.5),
    })
}

/// Median and a robust standard deviation estimate (scaled median absolute
/// deviation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustStats {
    pub median: f64,
    pub sigma_mad: f64,
}

pub fn robust_stats(values: &[f64]) -> Result<RobustStats> {
    let centre = median(values)?;
    let deviations: Vec<f64> = values.iter().map(|v| (v - centre).abs()).collect();
    Ok(RobustStats {
        median: centre,
        sigma_mad: MAD_SCALE * median(&deviations)?,
    })
}

/// Median of a sample; the mean of the two middle values for even sizes.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    Ok(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Root mean square distance between paired points.
pub fn rms_distance(a: &[Point3<f64>], b: &[Point3<f64>]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    if a.len() != b.len() {
        return Err(Error::KeypointCountMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q).norm_squared())
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}

/// Corpus keypoint error: root mean square of the per-vehicle RMS values.
pub fn aggregate_keypoint_rms(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let sum: f64 = records.iter().map(|r| r.keypoint_rms_m.powi(2)).sum();
    Ok((sum / records.len() as f64).sqrt())
}

/// Lateral displacement caused by a heading error over a driven distance:
/// the across-track error of a straight prediction.
pub fn perpendicular_error_m(distance_m: f64, heading_error_deg: f64) -> f64 {
    distance_m * heading_error_deg.to_radians().tan()
}
