//! Object perception for the search-and-pickup mission: monocular inverse
//! projection of two-point detections, multi-target hybrid Kalman tracking
//! with constant-position and planar constant-velocity models, optimal
//! association, and track lifecycle.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::{Matrix3, Matrix5, Point3, Vector5};
use num_traits::Float;

use crate::geom::{CameraView, Vec2, Vec3};

/// Object color classes used for scoring and validity rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ColorClass {
    Red,
    Green,
    Blue,
    Yellow,
    Orange,
}

/// Shape classification attached to a synthetic detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ShapeClass {
    SmallCircular,
    Large,
    Outlier,
}

/// A monocular detection: two image points spanning the object's known
/// extent, with classification and timestamp.
#[derive(Debug, Clone, Copy)]
pub struct PixelDetection {
    pub u1: Vec2,
    pub u2: Vec2,
    pub color: ColorClass,
    pub shape: ShapeClass,
    pub t: f64,
}

/// Perception errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectError {
    /// The two image points are projectively degenerate (kappa ~ 0).
    DegenerateDetection,
    /// Covariance lost positive definiteness after an update.
    NonPositiveDefinite,
}

impl fmt::Display for ObjectError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectError::DegenerateDetection => write!(f, "degenerate two-point detection"),
            ObjectError::NonPositiveDefinite => write!(f, "covariance not positive definite"),
        }
    }
}

impl core::error::Error for ObjectError {}

/// Inverse projection of two image points with known metric separation `m`
/// lying on a plane perpendicular to the odometry z-axis. Returns
/// `(p1, p2, center)` in the camera frame.
pub fn inverse_project(
    view: &CameraView,
    u1: Vec2,
    u2: Vec2,
    m: f64,
) -> Result<(Vec3, Vec3, Vec3), ObjectError> {
    let u1n = view.normalized(u1);
    let u2n = view.normalized(u2);
    // Plane normal in camera coordinates: the arena up axis rotated into the
    // camera frame.
    let n = view.pose.rotation.transform_vector(&Vec3::z());
    let n_u1 = n.dot(&u1n);
    let n_u2 = n.dot(&u2n);
    let kappa = (u1n * n_u2 - u2n * n_u1).norm();
    if kappa <= 1e-12 {
        return Err(ObjectError::DegenerateDetection);
    }
    let lambda1 = m * Float::abs(n_u2) / kappa;
    let lambda2 = m * Float::abs(n_u1) / kappa;
    let p1 = u1n * lambda1;
    let p2 = u2n * lambda2;
    Ok((p1, p2, (p1 + p2) * 0.5))
}

/// Map a camera-frame point into the arena/odometry frame.
pub fn camera_to_arena(view: &CameraView, p_cam: Vec3) -> Vec3 {
    view.pose.inverse_transform_point(&Point3::from(p_cam)).coords
}

/// Outlier rules for raw detections.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct OutlierRules {
    /// Known physical object diameter, m.
    pub nominal_diameter: f64,
    /// Acceptable deviation of the implied size from nominal, m.
    pub size_tolerance: f64,
}

impl Default for OutlierRules {
    fn default() -> Self {
        OutlierRules {
            nominal_diameter: 0.2,
            size_tolerance: 0.1,
        }
    }
}

/// Drop classification outliers, shape/color-inconsistent detections and
/// detections whose implied physical size (from inverse projection at the
/// ground plane) contradicts the known object diameter at this altitude.
pub fn filter_outlier_detections(
    detections: &[PixelDetection],
    view: &CameraView,
    rules: &OutlierRules,
) -> Vec<PixelDetection> {
    detections
        .iter()
        .copied()
        .filter(|d| {
            if d.shape != ShapeClass::SmallCircular {
                return false;
            }
            match inverse_project(view, d.u1, d.u2, rules.nominal_diameter) {
                Ok((p1, p2, center)) => {
                    // Scale the known-diameter solution to the actual ground
                    // intersection to get the implied size.
                    let ground1 = crate::detect::reproject_to_plane(view, d.u1, 0.0);
                    let ground2 = crate::detect::reproject_to_plane(view, d.u2, 0.0);
                    let implied = match (ground1, ground2) {
                        (Ok(a), Ok(b)) => (a - b).norm(),
                        _ => return false,
                    };
                    let _ = (p1, p2, center);
                    Float::abs(implied - rules.nominal_diameter) <= rules.size_tolerance
                }
                Err(_) => false,
            }
        })
        .collect()
}

/// Motion model of a track.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackModel {
    /// Constant position; robust default for parked objects.
    Static,
    /// Constant planar velocity; the z estimate stays position-only.
    Moving,
}

/// Kalman state of one object.
#[derive(Debug, Clone)]
pub enum KfState {
    Static { x: Vec3, p: Matrix3<f64> },
    Moving { x: Vector5<f64>, p: Matrix5<f64> },
}

impl KfState {
    pub fn position(&self) -> Vec3 {
        match self {
            KfState::Static { x, .. } => *x,
            KfState::Moving { x, .. } => Vec3::new(x[0], x[1], x[2]),
        }
    }

    pub fn velocity_xy(&self) -> Vec2 {
        match self {
            KfState::Static { .. } => Vec2::zeros(),
            KfState::Moving { x, .. } => Vec2::new(x[3], x[4]),
        }
    }

    pub fn covariance_trace(&self) -> f64 {
        match self {
            KfState::Static { p, .. } => p.trace(),
            KfState::Moving { p, .. } => p.trace(),
        }
    }
}

/// One tracked object.
#[derive(Debug, Clone)]
pub struct ObjectTrack {
    pub id: u32,
    pub state: KfState,
    pub hits: u32,
    pub misses: u32,
    pub color: ColorClass,
    /// First and latest confirmed fixes, for the motion-model decision.
    first_fix: (f64, Vec3),
    last_fix: (f64, Vec3),
    /// Pickup attempts charged against this object.
    pub pickup_attempts: u32,
}

impl ObjectTrack {
    pub fn model(&self) -> TrackModel {
        match self.state {
            KfState::Static { .. } => TrackModel::Static,
            KfState::Moving { .. } => TrackModel::Moving,
        }
    }

    pub fn position(&self) -> Vec3 {
        self.state.position()
    }

    pub fn velocity_xy(&self) -> Vec2 {
        self.state.velocity_xy()
    }
}

/// Process/measurement tuning and lifecycle policies.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PerceptionConfig {
    /// Static model position noise density, m/sqrt(s).
    pub static_sigma: f64,
    /// Moving model position noise density, m/sqrt(s).
    pub moving_pos_sigma: f64,
    /// Moving model velocity noise density, (m/s)/sqrt(s).
    pub moving_vel_sigma: f64,
    /// Base measurement sigma at the image center, m.
    pub meas_sigma: f64,
    /// Quadratic inflation gain of the measurement sigma toward the image
    /// boundary.
    pub boundary_gain: f64,
    /// Association gate, m.
    pub gate: f64,
    /// Misses before a track is deleted.
    pub max_misses: u32,
    /// Hits before the motion-model hypothesis test runs.
    pub n_init: u32,
    /// Speed above which a track is promoted to the moving model, m/s.
    pub speed_threshold: f64,
    /// Initial position variance of a fresh track, m^2.
    pub init_var: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            static_sigma: 0.05,
            moving_pos_sigma: 0.05,
            moving_vel_sigma: 0.2,
            meas_sigma: 0.05,
            boundary_gain: 3.0,
            gate: 1.5,
            max_misses: 20,
            n_init: 5,
            speed_threshold: 0.15,
            init_var: 0.25,
        }
    }
}

impl PerceptionConfig {
    /// Measurements are weighted strongly overall but degrade quadratically
    /// toward the image boundary.
    pub fn measurement_variance(&self, boundary_fraction: f64) -> f64 {
        let sigma = self.meas_sigma * (1.0 + self.boundary_gain * boundary_fraction * boundary_fraction);
        sigma * sigma
    }
}

/// Hybrid predict/update step: the continuous models are discretized with
/// the actual `dt`, then a standard Kalman update applies the measurement if
/// one is given (position measurement with variance `meas_var` per axis).
pub fn kf_step(
    mut track: ObjectTrack,
    dt: f64,
    measurement: Option<(Vec3, f64)>,
    config: &PerceptionConfig,
) -> Result<ObjectTrack, ObjectError> {
    debug_assert!(dt >= 0.0);
    match &mut track.state {
        KfState::Static { x, p } => {
            let q = config.static_sigma * config.static_sigma * dt;
            *p += Matrix3::identity() * q;
            if let Some((z, r)) = measurement {
                let s = *p + Matrix3::identity() * r;
                let s_inv = s.try_inverse().ok_or(ObjectError::NonPositiveDefinite)?;
                let k = *p * s_inv;
                *x += k * (z - *x);
                let ikh = Matrix3::identity() - k;
                *p = ikh * *p * ikh.transpose() + k * Matrix3::identity() * r * k.transpose();
            }
            check_pd3(p)?;
        }
        KfState::Moving { x, p } => {
            // x = (px, py, pz, vx, vy); planar position integrates velocity.
            let mut f = Matrix5::identity();
            f[(0, 3)] = dt;
            f[(1, 4)] = dt;
            let qp = config.moving_pos_sigma * config.moving_pos_sigma;
            let qv = config.moving_vel_sigma * config.moving_vel_sigma;
            let mut q = Matrix5::zeros();
            // Exact integral of the continuous noise through the transition,
            // so prediction composes over sub-steps.
            q[(0, 0)] = qp * dt + qv * dt * dt * dt / 3.0;
            q[(1, 1)] = q[(0, 0)];
            q[(2, 2)] = qp * dt;
            q[(3, 3)] = qv * dt;
            q[(4, 4)] = qv * dt;
            q[(0, 3)] = qv * dt * dt / 2.0;
            q[(3, 0)] = q[(0, 3)];
            q[(1, 4)] = qv * dt * dt / 2.0;
            q[(4, 1)] = q[(1, 4)];
            *x = f * *x;
            *p = f * *p * f.transpose() + q;
            if let Some((z, r)) = measurement {
                let h = nalgebra::SMatrix::<f64, 3, 5>::identity();
                let s = h * *p * h.transpose() + Matrix3::identity() * r;
                let s_inv = s.try_inverse().ok_or(ObjectError::NonPositiveDefinite)?;
                let k = *p * h.transpose() * s_inv;
                *x += k * (z - h * *x);
                let ikh = Matrix5::identity() - k * h;
                *p = ikh * *p * ikh.transpose() + k * Matrix3::identity() * r * k.transpose();
            }
            check_pd5(p)?;
        }
    }
    if let Some((z, _)) = measurement {
        track.hits += 1;
        track.misses = 0;
        track.last_fix = (track.last_fix.0 + dt, z);
    }
    Ok(track)
}

fn check_pd3(p: &Matrix3<f64>) -> Result<(), ObjectError> {
    if (0..3).all(|i| p[(i, i)] > 0.0) && p.cholesky().is_some() {
        Ok(())
    } else {
        Err(ObjectError::NonPositiveDefinite)
    }
}

fn check_pd5(p: &Matrix5<f64>) -> Result<(), ObjectError> {
    if (0..5).all(|i| p[(i, i)] > 0.0) && p.cholesky().is_some() {
        Ok(())
    } else {
        Err(ObjectError::NonPositiveDefinite)
    }
}

/// Assignment produced by [`associate`].
#[derive(Debug, Clone, Default)]
pub struct AssociationResult {
    /// `(track index, detection index)` pairs, cost within the gate.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_tracks: Vec<usize>,
    pub unmatched_detections: Vec<usize>,
}

/// Minimal-total-cost assignment (Jonker-Volgenant shortest augmenting path)
/// of rows to columns; `cost` is indexed `[row][col]`, rows <= cols.
fn solve_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    let m = cost[0].len();
    debug_assert!(n <= m);
    let mut u = alloc::vec![0.0f64; n + 1];
    let mut v = alloc::vec![0.0f64; m + 1];
    let mut assigned = alloc::vec![0usize; m + 1]; // column -> row (1-based, 0 = free)
    let mut way = alloc::vec![0usize; m + 1];
    for i in 1..=n {
        assigned[0] = i;
        let mut j0 = 0usize;
        let mut minv = alloc::vec![f64::INFINITY; m + 1];
        let mut used = alloc::vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = assigned[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[assigned[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned[j0] = assigned[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = alloc::vec![usize::MAX; n];
    for j in 1..=m {
        if assigned[j] != 0 {
            row_to_col[assigned[j] - 1] = j - 1;
        }
    }
    row_to_col
}

/// Associate tracks to 3-D detections by Euclidean distance, drop pairs
/// beyond the gate after solving.
pub fn associate(tracks: &[ObjectTrack], detections: &[Vec3], gate: f64) -> AssociationResult {
    let mut result = AssociationResult::default();
    if tracks.is_empty() || detections.is_empty() {
        result.unmatched_tracks = (0..tracks.len()).collect();
        result.unmatched_detections = (0..detections.len()).collect();
        return result;
    }
    let nt = tracks.len();
    let nd = detections.len();
    let cost_of = |ti: usize, di: usize| (tracks[ti].position() - detections[di]).norm();
    let assignment: Vec<(usize, usize)> = if nt <= nd {
        let cost: Vec<Vec<f64>> = (0..nt)
            .map(|ti| (0..nd).map(|di| cost_of(ti, di)).collect())
            .collect();
        solve_assignment(&cost)
            .into_iter()
            .enumerate()
            .filter(|&(_, c)| c != usize::MAX)
            .collect()
    } else {
        let cost: Vec<Vec<f64>> = (0..nd)
            .map(|di| (0..nt).map(|ti| cost_of(ti, di)).collect())
            .collect();
        solve_assignment(&cost)
            .into_iter()
            .enumerate()
            .filter(|&(_, c)| c != usize::MAX)
            .map(|(di, ti)| (ti, di))
            .collect()
    };
    let mut track_used = alloc::vec![false; nt];
    let mut det_used = alloc::vec![false; nd];
    for (ti, di) in assignment {
        if cost_of(ti, di) <= gate {
            result.pairs.push((ti, di));
            track_used[ti] = true;
            det_used[di] = true;
        }
    }
    result.pairs.sort_unstable();
    result.unmatched_tracks = (0..nt).filter(|&t| !track_used[t]).collect();
    result.unmatched_detections = (0..nd).filter(|&d| !det_used[d]).collect();
    result
}

/// Spawn a fresh track from a detection.
pub fn new_track(id: u32, position: Vec3, color: ColorClass, t: f64, config: &PerceptionConfig) -> ObjectTrack {
    ObjectTrack {
        id,
        state: KfState::Static {
            x: position,
            p: Matrix3::identity() * config.init_var,
        },
        hits: 1,
        misses: 0,
        color,
        first_fix: (t, position),
        last_fix: (t, position),
        pickup_attempts: 0,
    }
}

/// Lifecycle pass after an association: unmatched detections spawn tracks,
/// unmatched tracks accumulate misses and die after `max_misses`, and tracks
/// reaching `n_init` hits run the static/moving hypothesis test. There is no
/// re-identification: an object leaving and re-entering view gets a new id.
pub fn manage_tracks(
    mut tracks: Vec<ObjectTrack>,
    association: &AssociationResult,
    detections: &[(Vec3, ColorClass)],
    t: f64,
    config: &PerceptionConfig,
    next_id: &mut u32,
) -> Vec<ObjectTrack> {
    for &ti in &association.unmatched_tracks {
        tracks[ti].misses += 1;
    }
    for track in &mut tracks {
        if track.model() == TrackModel::Static && track.hits == config.n_init {
            let (t0, p0) = track.first_fix;
            let (t1, p1) = track.last_fix;
            if t1 > t0 {
                let speed = (Vec2::new(p1.x, p1.y) - Vec2::new(p0.x, p0.y)).norm() / (t1 - t0);
                if speed > config.speed_threshold {
                    let vel = (Vec2::new(p1.x, p1.y) - Vec2::new(p0.x, p0.y)) / (t1 - t0);
                    if let KfState::Static { x, p } = &track.state {
                        let mut xm = Vector5::zeros();
                        xm.fixed_rows_mut::<3>(0).copy_from(x);
                        xm[3] = vel.x;
                        xm[4] = vel.y;
                        let mut pm = Matrix5::identity() * config.init_var;
                        pm.fixed_view_mut::<3, 3>(0, 0).copy_from(p);
                        track.state = KfState::Moving { x: xm, p: pm };
                    }
                }
            }
        }
    }
    tracks.retain(|track| track.misses <= config.max_misses);
    for &di in &association.unmatched_detections {
        let (pos, color) = detections[di];
        tracks.push(new_track(*next_id, pos, color, t, config));
        *next_id += 1;
    }
    tracks
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn nadir_view(height: f64) -> CameraView {
        let rot = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), core::f64::consts::PI);
        let pose = Isometry3::from_parts(Translation3::new(0.0, 0.0, 0.0), rot)
            * Isometry3::from_parts(
                Translation3::new(0.0, 0.0, -height),
                UnitQuaternion::identity(),
            );
        CameraView {
            fx: 600.0,
            fy: 600.0,
            cx: 640.0,
            cy: 480.0,
            width: 1280.0,
            height: 960.0,
            pose,
        }
    }

    #[test]
    fn inverse_projection_symmetric_nadir_case() {
        // Symmetric points at depth h: kappa = m/h and both scales equal h.
        let view = nadir_view(6.0);
        let (h, m) = (6.0, 0.2);
        let u1 = Vec2::new(view.cx - view.fx * m / (2.0 * h), view.cy);
        let u2 = Vec2::new(view.cx + view.fx * m / (2.0 * h), view.cy);
        let (p1, p2, center) = inverse_project(&view, u1, u2, m).unwrap();
        assert!((p1.z - h).abs() < 1e-9);
        assert!((p2.z - h).abs() < 1e-9);
        assert!(((p1 - p2).norm() - m).abs() < 1e-9);
        assert!((center - Vec3::new(0.0, 0.0, h)).norm() < 1e-9);
    }

    #[test]
    fn inverse_projection_round_trip_and_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        // Nadir and a 30 degree tilt.
        let tilt = Isometry3::rotation(Vector3::new(0.5236, 0.0, 0.0));
        for (vi, extra) in [Iso3::identity(), tilt].into_iter().enumerate() {
            let base = nadir_view(7.0);
            let view = CameraView {
                pose: extra * base.pose,
                ..base
            };
            for _ in 0..2000 {
                let m = 0.2;
                let center = Vec2::new(rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0));
                let dir = rng.random_range(0.0..core::f64::consts::TAU);
                let (s, c) = Float::sin_cos(dir);
                let w1 = Vec3::new(center.x - c * m / 2.0, center.y - s * m / 2.0, 0.0);
                let w2 = Vec3::new(center.x + c * m / 2.0, center.y + s * m / 2.0, 0.0);
                let (u1, u2) = match (view.project(w1), view.project(w2)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => continue,
                };
                let (p1, p2, cam_center) = inverse_project(&view, u1, u2, m).unwrap();
                // Constraint residuals.
                let n = view.pose.rotation.transform_vector(&Vec3::z());
                assert!(((p1 - p2).norm() - m).abs() <= 1e-9, "view {vi}");
                assert!(n.dot(&(p1 - p2)).abs() <= 1e-9, "view {vi}");
                // Recovered center back in the arena frame.
                let arena = camera_to_arena(&view, cam_center);
                let truth = Vec3::new(center.x, center.y, 0.0);
                assert!((arena - truth).norm() <= 1e-9, "view {vi}");
            }
        }
    }

    #[test]
    fn degenerate_detection_is_an_error_not_nan() {
        let view = nadir_view(5.0);
        let u = Vec2::new(100.0, 100.0);
        let r = inverse_project(&view, u, u, 0.2);
        assert_eq!(r.unwrap_err(), ObjectError::DegenerateDetection);
    }

    use crate::geom::Iso3;

    fn det(view: &CameraView, center: Vec2, diameter: f64, shape: ShapeClass) -> PixelDetection {
        let w1 = Vector3::new(center.x - diameter / 2.0, center.y, 0.0);
        let w2 = Vector3::new(center.x + diameter / 2.0, center.y, 0.0);
        PixelDetection {
            u1: view.project(w1).unwrap(),
            u2: view.project(w2).unwrap(),
            color: ColorClass::Red,
            shape,
            t: 0.0,
        }
    }

    #[test]
    fn outlier_rules_by_size_and_class() {
        let view = nadir_view(5.0);
        let rules = OutlierRules::default();
        let good = det(&view, Vec2::new(0.3, 0.2), 0.2, ShapeClass::SmallCircular);
        let too_big = det(&view, Vec2::new(0.3, 0.2), 0.6, ShapeClass::SmallCircular);
        let outlier = det(&view, Vec2::new(0.3, 0.2), 0.2, ShapeClass::Outlier);
        let large = det(&view, Vec2::new(0.3, 0.2), 0.2, ShapeClass::Large);
        let kept = filter_outlier_detections(&[good, too_big, outlier, large], &view, &rules);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].shape, ShapeClass::SmallCircular);
    }

    #[test]
    fn static_kf_converges_to_repeated_measurement() {
        let cfg = PerceptionConfig::default();
        let z = Vec3::new(2.0, -1.0, 0.1);
        let mut track = new_track(0, Vec3::new(1.0, 0.0, 0.0), ColorClass::Red, 0.0, &cfg);
        let mut last_trace = f64::INFINITY;
        for _ in 0..100 {
            track = kf_step(track, 0.05, Some((z, cfg.measurement_variance(0.0))), &cfg).unwrap();
            let trace = track.state.covariance_trace();
            assert!(trace <= last_trace + 1e-12);
            last_trace = trace;
        }
        assert!((track.position() - z).norm() < 1e-3);
    }

    #[test]
    fn moving_kf_estimates_one_kmh_within_ten_percent() {
        // Constant-velocity mover: tighter velocity process noise than the
        // general default.
        let cfg = PerceptionConfig {
            moving_vel_sigma: 0.05,
            ..Default::default()
        };
        let speed = 1.0 / 3.6; // 1 km/h
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let noise = rand_distr::Normal::new(0.0, 0.03).unwrap();
        let mut track = new_track(0, Vec3::zeros(), ColorClass::Yellow, 0.0, &cfg);
        // Promote to the moving model via the hypothesis test path.
        let dt = 0.05; // 20 Hz
        let mut t = 0.0;
        for k in 1..=60 {
            use rand_distr::Distribution;
            t = k as f64 * dt;
            let truth = Vec3::new(speed * t, 0.0, 0.0);
            let z = truth + Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), 0.0);
            track = kf_step(track, dt, Some((z, cfg.measurement_variance(0.0))), &cfg).unwrap();
            if track.model() == TrackModel::Static && track.hits >= cfg.n_init {
                // Run the model decision as manage_tracks would.
                let assoc = AssociationResult::default();
                let mut id = 1;
                let mut list = manage_tracks(alloc::vec![track], &assoc, &[], t, &cfg, &mut id);
                track = list.pop().unwrap();
            }
        }
        assert_eq!(track.model(), TrackModel::Moving);
        let est = track.velocity_xy().norm();
        assert!(
            (est - speed).abs() <= 0.1 * speed,
            "estimated {est} vs {speed} after {t} s"
        );
    }

    #[test]
    fn prediction_composes_over_substeps() {
        let cfg = PerceptionConfig::default();
        let mut moving = new_track(0, Vec3::new(1.0, 2.0, 0.0), ColorClass::Green, 0.0, &cfg);
        moving.state = KfState::Moving {
            x: Vector5::new(1.0, 2.0, 0.0, 0.4, -0.2),
            p: Matrix5::identity() * 0.3,
        };
        let full = kf_step(moving.clone(), 0.2, None, &cfg).unwrap();
        let half = kf_step(
            kf_step(moving.clone(), 0.1, None, &cfg).unwrap(),
            0.1,
            None,
            &cfg,
        )
        .unwrap();
        match (&full.state, &half.state) {
            (KfState::Moving { x: xa, p: pa }, KfState::Moving { x: xb, p: pb }) => {
                assert!((xa - xb).norm() <= 1e-12);
                assert!((pa - pb).norm() <= 1e-12);
            }
            _ => panic!("moving states"),
        }
        // Static model composes trivially.
        let s_full = kf_step(moving_static(&cfg), 0.2, None, &cfg).unwrap();
        let s_half = kf_step(
            kf_step(moving_static(&cfg), 0.1, None, &cfg).unwrap(),
            0.1,
            None,
            &cfg,
        )
        .unwrap();
        match (&s_full.state, &s_half.state) {
            (KfState::Static { x: xa, p: pa }, KfState::Static { x: xb, p: pb }) => {
                assert!((xa - xb).norm() <= 1e-12);
                assert!((pa - pb).norm() <= 1e-12);
            }
            _ => panic!("static states"),
        }
    }

    fn moving_static(cfg: &PerceptionConfig) -> ObjectTrack {
        new_track(9, Vec3::new(0.5, 0.5, 0.0), ColorClass::Blue, 0.0, cfg)
    }

    #[test]
    fn associate_simple_cases() {
        let cfg = PerceptionConfig::default();
        let tracks = alloc::vec![
            new_track(0, Vec3::new(0.0, 0.0, 0.0), ColorClass::Red, 0.0, &cfg),
            new_track(1, Vec3::new(5.0, 0.0, 0.0), ColorClass::Red, 0.0, &cfg),
        ];
        // Cost matrix [[1, 2], [2, 1]]: diagonal assignment, total 2.
        let detections = [Vec3::new(1.0, 0.0, 0.0), Vec3::new(6.0, 0.0, 0.0)];
        let r = associate(&tracks, &detections, 1.5);
        assert_eq!(r.pairs, alloc::vec![(0, 0), (1, 1)]);
        assert!(r.unmatched_tracks.is_empty());
        assert!(r.unmatched_detections.is_empty());

        // Gate removes distant pairs post-solve.
        let far = [Vec3::new(10.0, 0.0, 0.0)];
        let r = associate(&tracks[..1], &far, 1.5);
        assert!(r.pairs.is_empty());
        assert_eq!(r.unmatched_tracks, alloc::vec![0]);
        assert_eq!(r.unmatched_detections, alloc::vec![0]);
    }

    /// Brute-force minimal assignment cost over all permutations.
    fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
            if row == cost.len() {
                *best = best.min(acc);
                return;
            }
            for col in 0..cost[0].len() {
                if !used[col] {
                    used[col] = true;
                    rec(cost, row + 1, used, acc + cost[row][col], best);
                    used[col] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut alloc::vec![false; cost[0].len()], 0.0, &mut best);
        best
    }

    #[test]
    fn assignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        for _ in 0..300 {
            let n = rng.random_range(1..=6usize);
            let m = rng.random_range(n..=7usize);
            let cost: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| rng.random_range(0.0..10.0)).collect())
                .collect();
            let sol = solve_assignment(&cost);
            let total: f64 = sol.iter().enumerate().map(|(r, &c)| cost[r][c]).sum();
            let best = brute_force_min(&cost);
            assert!((total - best).abs() < 1e-9, "{total} vs {best}");
        }
    }

    #[test]
    fn association_is_permutation_invariant() {
        let cfg = PerceptionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        for _ in 0..100 {
            let tracks: Vec<ObjectTrack> = (0..5)
                .map(|i| {
                    new_track(
                        i,
                        Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), 0.0),
                        ColorClass::Red,
                        0.0,
                        &cfg,
                    )
                })
                .collect();
            let detections: Vec<Vec3> = (0..5)
                .map(|_| {
                    Vec3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), 0.0)
                })
                .collect();
            let base = associate(&tracks, &detections, 100.0);
            // Shuffle detections and map the pairs back.
            let mut order: Vec<usize> = (0..detections.len()).collect();
            for i in (1..order.len()).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let shuffled: Vec<Vec3> = order.iter().map(|&i| detections[i]).collect();
            let permuted = associate(&tracks, &shuffled, 100.0);
            let mut mapped: Vec<(usize, usize)> = permuted
                .pairs
                .iter()
                .map(|&(t, d)| (t, order[d]))
                .collect();
            mapped.sort_unstable();
            assert_eq!(base.pairs, mapped);
        }
    }

    #[test]
    fn track_lifecycle_policies() {
        let cfg = PerceptionConfig::default();
        let mut next_id = 0;
        // Fresh detection spawns a track with one hit.
        let assoc = AssociationResult {
            pairs: alloc::vec![],
            unmatched_tracks: alloc::vec![],
            unmatched_detections: alloc::vec![0],
        };
        let tracks = manage_tracks(
            Vec::new(),
            &assoc,
            &[(Vec3::new(1.0, 1.0, 0.0), ColorClass::Green)],
            0.0,
            &cfg,
            &mut next_id,
        );
        assert_eq!(tracks.len(), 1);
        assert_eq!(tracks[0].hits, 1);
        assert_eq!(tracks[0].id, 0);

        // max_misses consecutive misses delete it.
        let mut tracks = tracks;
        for _ in 0..=cfg.max_misses {
            let assoc = AssociationResult {
                pairs: alloc::vec![],
                unmatched_tracks: alloc::vec![0],
                unmatched_detections: alloc::vec![],
            };
            tracks = manage_tracks(tracks, &assoc, &[], 0.0, &cfg, &mut next_id);
        }
        assert!(tracks.is_empty());

        // Re-entering object gets a fresh id.
        let assoc = AssociationResult {
            pairs: alloc::vec![],
            unmatched_tracks: alloc::vec![],
            unmatched_detections: alloc::vec![0],
        };
        let tracks = manage_tracks(
            tracks,
            &assoc,
            &[(Vec3::new(1.0, 1.0, 0.0), ColorClass::Green)],
            5.0,
            &cfg,
            &mut next_id,
        );
        assert_eq!(tracks[0].id, 1, "no re-identification");
    }
}
