//! Lidar landing safety gate.
//!
//! Before the final descent is committed, the raw range beam is transformed
//! into an arena-frame contact point and two Mahalanobis conditions must
//! hold: (i) the vehicle body is above the estimated platform position, and
//! (ii) the beam contact point intercepts the estimated platform. Condition
//! (ii) carries the stricter role: a beam on the ground instead of on the
//! platform aborts the maneuver even when (i) passes.

use core::fmt;

use nalgebra::Point3;
use num_traits::Float;

use crate::geom::{Iso3, Vec2, Vec3};

/// One raw range measurement with the frames needed to place it.
#[derive(Debug, Clone)]
pub struct LidarBeam {
    /// Measured distance along the sensor axis, m.
    pub range: f64,
    /// Lidar frame expressed in the body frame (maps lidar points to body).
    pub lidar_in_body: Iso3,
    /// Body frame expressed in the arena frame (maps body points to arena).
    pub body_in_arena: Iso3,
}

/// Numeric errors of the safety check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyError {
    /// A covariance entry is not strictly positive.
    SingularCovariance,
}

impl fmt::Display for SafetyError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SafetyError::SingularCovariance => write!(f, "covariance must be positive definite"),
        }
    }
}

impl core::error::Error for SafetyError {}

/// Beam contact point in the arena frame: the rigid chain applied to
/// `(0, 0, range)` in the lidar frame.
pub fn lidar_contact_point(beam: &LidarBeam) -> Vec3 {
    let raw = Point3::new(0.0, 0.0, beam.range);
    (beam.body_in_arena * beam.lidar_in_body * raw).coords
}

/// Mahalanobis distance with a diagonal covariance.
pub fn mahalanobis(x: &[f64], mu: &[f64], variances: &[f64]) -> Result<f64, SafetyError> {
    debug_assert_eq!(x.len(), mu.len());
    debug_assert_eq!(x.len(), variances.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        if !(variances[i] > 0.0) {
            return Err(SafetyError::SingularCovariance);
        }
        let d = x[i] - mu[i];
        acc += d * d / variances[i];
    }
    Ok(Float::sqrt(acc))
}

/// Platform estimate used by the gate: mean position and diagonal variances.
#[derive(Debug, Clone, Copy)]
pub struct PlatformEstimate {
    pub mean: Vec3,
    pub var: Vec3,
}

impl PlatformEstimate {
    /// Build from the tracker output: planar mean and sample covariance with
    /// a variance floor against overconfident gating, plus the configured
    /// platform height variance.
    pub fn from_tracker(
        mean_xy: Vec2,
        cov_diag_xy: Vec2,
        platform_z: f64,
        config: &SafetyConfig,
    ) -> Self {
        PlatformEstimate {
            mean: Vec3::new(mean_xy.x, mean_xy.y, platform_z),
            var: Vec3::new(
                Float::max(cov_diag_xy.x, config.variance_floor),
                Float::max(cov_diag_xy.y, config.variance_floor),
                config.platform_z_variance,
            ),
        }
    }
}

/// The two-condition clearance verdict.
#[derive(Debug, Clone, Copy)]
pub struct ClearanceDecision {
    /// Body planar position above the estimate.
    pub condition_i: bool,
    /// Beam contact point intercepts the estimate.
    pub condition_ii: bool,
    pub d_i: f64,
    pub d_ii: f64,
    pub clear: bool,
}

/// Gate thresholds and covariance handling.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SafetyConfig {
    /// Threshold for condition (i).
    pub delta_i: f64,
    /// Threshold for condition (ii); relatively stricter by construction.
    pub delta_ii: f64,
    /// Planar variance floor, m^2.
    pub variance_floor: f64,
    /// Variance assigned to the platform height, m^2.
    pub platform_z_variance: f64,
    /// Simulated beam range noise, m.
    pub lidar_sigma: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig {
            delta_i: 1.0,
            delta_ii: 1.5,
            variance_floor: 0.05,
            platform_z_variance: 0.01,
            lidar_sigma: 0.02,
        }
    }
}

/// Evaluate both clearance conditions.
pub fn landing_clearance(
    body_xy: Vec2,
    contact_point: Vec3,
    estimate: &PlatformEstimate,
    config: &SafetyConfig,
) -> Result<ClearanceDecision, SafetyError> {
    let d_i = mahalanobis(
        &[body_xy.x, body_xy.y],
        &[estimate.mean.x, estimate.mean.y],
        &[estimate.var.x, estimate.var.y],
    )?;
    let d_ii = mahalanobis(
        &[contact_point.x, contact_point.y, contact_point.z],
        &[estimate.mean.x, estimate.mean.y, estimate.mean.z],
        &[estimate.var.x, estimate.var.y, estimate.var.z],
    )?;
    let condition_i = d_i < config.delta_i;
    let condition_ii = d_ii < config.delta_ii;
    Ok(ClearanceDecision {
        condition_i,
        condition_ii,
        d_i,
        d_ii,
        clear: condition_i && condition_ii,
    })
}
