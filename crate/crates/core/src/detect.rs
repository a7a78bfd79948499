//! Geometric platform detectors over line segments, plus reprojection-based
//! outlier rejection.
//!
//! Two detectors run in parallel on the same segment frame: a quadrilateral
//! chainer that finds the platform outline at range, and a cross detector
//! that finds the center markings up close. Both are scale- and
//! rotation-invariant and deliberately permissive; candidates are reprojected
//! onto the known platform plane and gated by a joint likelihood over their
//! measured proportions and their position relative to the track.

use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

use crate::geom::{line_angle, line_angle_diff, CameraView, Vec2};
use crate::path::PathCache;

/// Rectified image line segment, px. Direction `a -> b` is meaningful for
/// chaining.
#[derive(Debug, Clone, Copy)]
pub struct LineSegment {
    pub a: Vec2,
    pub b: Vec2,
}

impl LineSegment {
    pub fn new(a: Vec2, b: Vec2) -> Self {
        debug_assert!((a - b).norm() > 0.0);
        LineSegment { a, b }
    }

    fn midpoint(&self) -> Vec2 {
        (self.a + self.b) * 0.5
    }
}

/// Undirected line in polar form: `angle` in `[0, pi)` and the signed
/// perpendicular offset of the line from the image origin.
#[derive(Debug, Clone, Copy)]
pub struct PolarLine {
    pub angle: f64,
    pub offset: f64,
}

/// Polar form of the line supporting a segment.
pub fn polar_line(seg: &LineSegment) -> PolarLine {
    let d = seg.b - seg.a;
    let angle = line_angle(Float::atan2(d.y, d.x));
    let (s, c) = Float::sin_cos(angle);
    let normal = Vec2::new(-s, c);
    PolarLine {
        angle,
        offset: normal.dot(&seg.a),
    }
}

/// True when two polar lines describe nearly the same line. Handles the
/// angle wrap at pi, where the offset sign flips.
fn polar_same_line(p: &PolarLine, q: &PolarLine, angle_tol: f64, offset_tol: f64) -> bool {
    if line_angle_diff(p.angle, q.angle) > angle_tol {
        return false;
    }
    let wrapped = Float::abs(p.angle - q.angle) > core::f64::consts::FRAC_PI_2;
    let q_offset = if wrapped { -q.offset } else { q.offset };
    Float::abs(p.offset - q_offset) <= offset_tol
}

/// Projection errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionError {
    /// The pixel ray does not intersect the plane in front of the camera.
    RayMissesPlane,
}

impl fmt::Display for ProjectionError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProjectionError::RayMissesPlane => {
                write!(f, "pixel ray is parallel to or points away from the plane")
            }
        }
    }
}

impl core::error::Error for ProjectionError {}

/// Intersect the back-projected pixel ray with the horizontal plane at
/// `plane_z` and return the arena-frame planar point.
pub fn reproject_to_plane(
    view: &CameraView,
    pixel: Vec2,
    plane_z: f64,
) -> Result<Vec2, ProjectionError> {
    let (origin, dir) = view.ray(pixel);
    if Float::abs(dir.z) < 1e-12 {
        return Err(ProjectionError::RayMissesPlane);
    }
    let t = (plane_z - origin.z) / dir.z;
    if t <= 0.0 {
        return Err(ProjectionError::RayMissesPlane);
    }
    let p = origin + dir * t;
    Ok(Vec2::new(p.x, p.y))
}

/// Chain segments whose end/start points fall within `join_tolerance` into
/// cycles of four. Returns ordered corner quadruples; rotations of the same
/// chain are reported once.
pub fn detect_quads(segments: &[LineSegment], join_tolerance: f64) -> Vec<[Vec2; 4]> {
    let n = segments.len();
    let tol2 = join_tolerance * join_tolerance;
    // Endpoint-proximity graph, adjacency ordered by line angle.
    let mut next: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && (segments[i].b - segments[j].a).norm_squared() <= tol2 {
                next[i].push(j);
            }
        }
        next[i].sort_by(|&a, &b| {
            polar_line(&segments[a])
                .angle
                .partial_cmp(&polar_line(&segments[b]).angle)
                .unwrap()
                .then(a.cmp(&b))
        });
    }

    let corner = |from: usize, to: usize| (segments[from].b + segments[to].a) * 0.5;
    let mut quads = Vec::new();
    // Enumerate cycles with the smallest segment index first; that makes each
    // rotation class appear exactly once.
    for i in 0..n {
        for &j in &next[i] {
            if j <= i {
                continue;
            }
            for &k in &next[j] {
                if k <= i || k == j {
                    continue;
                }
                for &l in &next[k] {
                    if l <= i || l == j || l == k || !next[l].contains(&i) {
                        continue;
                    }
                    quads.push([corner(l, i), corner(i, j), corner(j, k), corner(k, l)]);
                }
            }
        }
    }
    quads
}

/// A two-by-two parallel segment structure found by the cross detector.
#[derive(Debug, Clone)]
pub struct CrossCandidate {
    /// Mean of the four inner endpoints, px.
    pub center: Vec2,
    /// Inner endpoints: two per supporting line, facing the central gap.
    pub inner: [Vec2; 4],
    /// Indices of the four member segments.
    pub segments: [usize; 4],
}

/// Cross detector over raw segments:
/// 1. convert each segment to polar form;
/// 2. cluster pairs lying on nearly the same line;
/// 3. combine two near-parallel clusters into a 2x2 structure;
/// 4. orient collinear segments toward each other to expose the inner
///    endpoints and take their mean as the center.
///
/// Structures whose centers coincide (the two bars of one cross) merge into a
/// single candidate.
pub fn detect_crosses(
    segments: &[LineSegment],
    angle_tol: f64,
    offset_tol: f64,
    parallel_tol: f64,
) -> Vec<CrossCandidate> {
    let polars: Vec<PolarLine> = segments.iter().map(polar_line).collect();

    struct Cluster {
        i: usize,
        j: usize,
        angle: f64,
        midpoint: Vec2,
    }
    let mut clusters = Vec::new();
    for i in 0..segments.len() {
        for j in i + 1..segments.len() {
            if polar_same_line(&polars[i], &polars[j], angle_tol, offset_tol) {
                clusters.push(Cluster {
                    i,
                    j,
                    angle: mean_line_angle(polars[i].angle, polars[j].angle),
                    midpoint: (segments[i].midpoint() + segments[j].midpoint()) * 0.5,
                });
            }
        }
    }

    // Inner endpoints of a collinear pair: the mutually closest endpoints,
    // i.e. both segments point toward each other.
    let inner_pair = |i: usize, j: usize| -> (Vec2, Vec2) {
        let (si, sj) = (&segments[i], &segments[j]);
        let mut best = (f64::INFINITY, si.a, sj.a);
        for p in [si.a, si.b] {
            for q in [sj.a, sj.b] {
                let d = (p - q).norm_squared();
                if d < best.0 {
                    best = (d, p, q);
                }
            }
        }
        (best.1, best.2)
    };

    let mut candidates: Vec<CrossCandidate> = Vec::new();
    for a in 0..clusters.len() {
        for b in a + 1..clusters.len() {
            let (ca, cb) = (&clusters[a], &clusters[b]);
            let distinct = ca.i != cb.i && ca.i != cb.j && ca.j != cb.i && ca.j != cb.j;
            if !distinct || line_angle_diff(ca.angle, cb.angle) > parallel_tol {
                continue;
            }
            // The two clusters must be different lines of the same bar, not a
            // re-pairing of one line.
            let (s, c) = Float::sin_cos(ca.angle);
            let normal = Vec2::new(-s, c);
            let gap = Float::abs(normal.dot(&(cb.midpoint - ca.midpoint)));
            if gap <= offset_tol {
                continue;
            }
            let (e1a, e1b) = inner_pair(ca.i, ca.j);
            let (e2a, e2b) = inner_pair(cb.i, cb.j);
            let center = (e1a + e1b + e2a + e2b) * 0.25;
            let merged = candidates
                .iter()
                .any(|c| (c.center - center).norm() <= offset_tol);
            if !merged {
                candidates.push(CrossCandidate {
                    center,
                    inner: [e1a, e1b, e2a, e2b],
                    segments: [ca.i, ca.j, cb.i, cb.j],
                });
            }
        }
    }
    candidates
}

fn mean_line_angle(a: f64, b: f64) -> f64 {
    // Mean over the doubled-angle circle, stable across the wrap at pi.
    let (sa, ca) = Float::sin_cos(2.0 * a);
    let (sb, cb) = Float::sin_cos(2.0 * b);
    line_angle(Float::atan2(sa + sb, ca + cb) * 0.5)
}

/// Which detector produced a platform detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionSource {
    Quad,
    Cross,
}

/// Plane-space measurements backing an accepted detection.
#[derive(Debug, Clone, Copy)]
pub enum Measurements {
    /// Diagonal lengths (m), their ratio and the relative scale.
    Quad { d1: f64, d2: f64, r: f64, c: f64 },
    /// Central-gap diagonals and the two bar widths, m.
    Cross { c1: f64, c2: f64, w1: f64, w2: f64 },
}

/// A detection that survived outlier rejection.
#[derive(Debug, Clone)]
pub struct PlatformDetection {
    /// Platform center estimate in the arena frame, m.
    pub center: Vec2,
    pub source: DetectionSource,
    pub joint_likelihood: f64,
    pub measurements: Measurements,
}

/// Detector and outlier-rejection tuning.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DetectorConfig {
    /// Quad chaining endpoint tolerance, px.
    pub join_tolerance: f64,
    /// Cross clustering angle tolerance, rad.
    pub angle_tol: f64,
    /// Cross clustering offset tolerance, px.
    pub offset_tol: f64,
    /// Cross structure parallelism tolerance, rad.
    pub parallel_tol: f64,
    /// Likelihood sigma on the diagonal ratio.
    pub sigma_ratio: f64,
    /// Likelihood sigma on the relative scale.
    pub sigma_scale: f64,
    /// Acceptance threshold on the joint likelihood.
    pub threshold: f64,
    /// Nominal platform diagonal, m.
    pub platform_diagonal: f64,
    /// Nominal cross bar width, m.
    pub cross_width: f64,
    /// Across-track prior sigma for the position likelihood, m.
    pub across_sigma: f64,
    /// Across-track cutoff beyond which the position likelihood is zero, m.
    pub across_cutoff: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            join_tolerance: 5.0,
            angle_tol: 0.1,
            offset_tol: 5.0,
            parallel_tol: 0.25,
            sigma_ratio: 0.15,
            sigma_scale: 0.15,
            threshold: 0.05,
            platform_diagonal: 1.5 * core::f64::consts::SQRT_2,
            cross_width: 0.15,
            across_sigma: 0.75,
            across_cutoff: 1.8,
        }
    }
}

/// A raw candidate from either detector, still in image coordinates.
#[derive(Debug, Clone)]
pub enum Candidate {
    Quad([Vec2; 4]),
    Cross(CrossCandidate),
}

/// Unnormalized Gaussian kernel; keeps likelihood products scale-free.
#[inline]
fn kernel(value: f64, mean: f64, sigma: f64) -> f64 {
    let d = (value - mean) / sigma;
    Float::exp(-0.5 * d * d)
}

/// Reproject a candidate onto the platform plane, take its measurements and
/// accept it iff the joint likelihood of proportions and on-track position
/// clears the threshold. Rejection (including failed reprojection) is a
/// `None` value, not an error.
pub fn score_and_accept(
    candidate: &Candidate,
    view: &CameraView,
    cache: &PathCache,
    plane_z: f64,
    config: &DetectorConfig,
) -> Option<PlatformDetection> {
    let reproject = |px: Vec2| reproject_to_plane(view, px, plane_z).ok();
    match candidate {
        Candidate::Quad(corners) => {
            let mut pts = [Vec2::zeros(); 4];
            for (i, c) in corners.iter().enumerate() {
                pts[i] = reproject(*c)?;
            }
            let d1 = (pts[0] - pts[2]).norm();
            let d2 = (pts[1] - pts[3]).norm();
            let r = if d2 > 0.0 { d1 / d2 } else { 0.0 };
            let c = (d1 + d2) / (2.0 * config.platform_diagonal);
            let center = (pts[0] + pts[1] + pts[2] + pts[3]) * 0.25;
            let likelihood = kernel(r, 1.0, config.sigma_ratio)
                * kernel(c, 1.0, config.sigma_scale)
                * position_likelihood(center, cache, config);
            (likelihood >= config.threshold).then(|| PlatformDetection {
                center,
                source: DetectionSource::Quad,
                joint_likelihood: likelihood,
                measurements: Measurements::Quad { d1, d2, r, c },
            })
        }
        Candidate::Cross(cross) => {
            let mut pts = [Vec2::zeros(); 4];
            for (i, e) in cross.inner.iter().enumerate() {
                pts[i] = reproject(*e)?;
            }
            // pts[0..2] share one line, pts[2..4] the other. Widths pair each
            // endpoint with its nearest across the gap; the diagonals are the
            // crossed pairing.
            let straight = (pts[0] - pts[2]).norm() + (pts[1] - pts[3]).norm();
            let crossed = (pts[0] - pts[3]).norm() + (pts[1] - pts[2]).norm();
            let (w1, w2, c1, c2) = if straight <= crossed {
                (
                    (pts[0] - pts[2]).norm(),
                    (pts[1] - pts[3]).norm(),
                    (pts[0] - pts[3]).norm(),
                    (pts[1] - pts[2]).norm(),
                )
            } else {
                (
                    (pts[0] - pts[3]).norm(),
                    (pts[1] - pts[2]).norm(),
                    (pts[0] - pts[2]).norm(),
                    (pts[1] - pts[3]).norm(),
                )
            };
            let center = (pts[0] + pts[1] + pts[2] + pts[3]) * 0.25;
            let w_nom = config.cross_width;
            let c_nom = config.cross_width * core::f64::consts::SQRT_2;
            let likelihood = kernel(w1 / w_nom, 1.0, config.sigma_ratio)
                * kernel(w2 / w_nom, 1.0, config.sigma_ratio)
                * kernel(c1 / c_nom, 1.0, config.sigma_scale)
                * kernel(c2 / c_nom, 1.0, config.sigma_scale)
                * position_likelihood(center, cache, config);
            (likelihood >= config.threshold).then(|| PlatformDetection {
                center,
                source: DetectionSource::Cross,
                joint_likelihood: likelihood,
                measurements: Measurements::Cross { c1, c2, w1, w2 },
            })
        }
    }
}

/// Joint track-position likelihood: uniform along the track, truncated
/// Gaussian kernel across it, zero beyond the cutoff.
fn position_likelihood(center: Vec2, cache: &PathCache, config: &DetectorConfig) -> f64 {
    let across = cache.closest_on_path(center).across;
    if Float::abs(across) > config.across_cutoff {
        0.0
    } else {
        kernel(across, 0.0, config.across_sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::build_path;
    use nalgebra::{Isometry3, Translation3, UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seg(ax: f64, ay: f64, bx: f64, by: f64) -> LineSegment {
        LineSegment::new(Vec2::new(ax, ay), Vec2::new(bx, by))
    }

    /// Nadir camera at `height` looking straight down, image x along arena x.
    fn nadir_view(height: f64) -> CameraView {
        let rot = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), core::f64::consts::PI);
        let pose = Isometry3::from_parts(Translation3::new(0.0, 0.0, 0.0), rot)
            * Isometry3::from_parts(
                Translation3::new(0.0, 0.0, -height),
                UnitQuaternion::identity(),
            );
        CameraView {
            fx: 400.0,
            fy: 400.0,
            cx: 376.0,
            cy: 240.0,
            width: 752.0,
            height: 480.0,
            pose,
        }
    }

    fn straight_cache() -> crate::path::PathCache {
        build_path(&[Vec2::new(-50.0, 0.0), Vec2::new(50.0, 0.0)], false, 0.05)
            .unwrap()
            .1
    }

    #[test]
    fn quad_from_exact_square_sides() {
        let square = [
            seg(0.0, 0.0, 10.0, 0.0),
            seg(10.0, 0.0, 10.0, 10.0),
            seg(10.0, 10.0, 0.0, 10.0),
            seg(0.0, 10.0, 0.0, 0.0),
        ];
        let quads = detect_quads(&square, 5.0);
        assert_eq!(quads.len(), 1);
        let mut corners: Vec<(i64, i64)> = quads[0]
            .iter()
            .map(|c| (c.x.round() as i64, c.y.round() as i64))
            .collect();
        corners.sort();
        assert_eq!(corners, vec![(0, 0), (0, 10), (10, 0), (10, 10)]);
    }

    #[test]
    fn quad_broken_by_displaced_endpoint() {
        let tol = 5.0;
        let square = [
            seg(0.0, 0.0, 10.0, 0.0),
            seg(10.0 + 2.0 * tol, 0.0, 10.0, 10.0),
            seg(10.0, 10.0, 0.0, 10.0),
            seg(0.0, 10.0, 0.0, 0.0),
        ];
        assert!(detect_quads(&square, tol).is_empty());
    }

    #[test]
    fn quad_found_among_clutter() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut segments = alloc::vec![
            seg(100.0, 100.0, 200.0, 100.0),
            seg(200.0, 100.0, 200.0, 200.0),
            seg(200.0, 200.0, 100.0, 200.0),
            seg(100.0, 200.0, 100.0, 100.0),
        ];
        for _ in 0..50 {
            let a = Vec2::new(rng.random_range(0.0..752.0), rng.random_range(0.0..480.0));
            let d = Vec2::new(rng.random_range(-60.0..60.0), rng.random_range(-60.0..60.0));
            if d.norm() > 1.0 {
                segments.push(LineSegment::new(a, a + d));
            }
        }
        let quads = detect_quads(&segments, 5.0);
        let found = quads.iter().any(|q| {
            let c = (q[0] + q[1] + q[2] + q[3]) * 0.25;
            (c - Vec2::new(150.0, 150.0)).norm() < 2.0
        });
        assert!(found, "square must be among {} candidates", quads.len());
    }

    /// Ideal cross stroke-edge segments: each bar contributes two parallel
    /// edge lines, each interrupted at the central gap into two collinear
    /// segments. `half` is the bar half-length, `w` the stroke width, px.
    fn cross_segments(center: Vec2, half: f64, w: f64) -> Vec<LineSegment> {
        let h = w / 2.0;
        let mut v = Vec::new();
        // Horizontal bar, top and bottom edge lines.
        for y in [center.y - h, center.y + h] {
            v.push(seg(center.x - half, y, center.x - h, y));
            v.push(seg(center.x + h, y, center.x + half, y));
        }
        // Vertical bar, left and right edge lines.
        for x in [center.x - h, center.x + h] {
            v.push(seg(x, center.y - half, x, center.y - h));
            v.push(seg(x, center.y + h, x, center.y + half));
        }
        v
    }

    #[test]
    fn ideal_cross_yields_one_centered_candidate() {
        let center = Vec2::new(376.0, 240.0);
        let segments = cross_segments(center, 60.0, 12.0);
        let candidates = detect_crosses(&segments, 0.1, 5.0, 0.25);
        assert_eq!(candidates.len(), 1);
        assert!((candidates[0].center - center).norm() <= 1.0);
    }

    #[test]
    fn two_parallel_segments_are_not_a_cross() {
        let segments = [seg(0.0, 0.0, 50.0, 0.0), seg(0.0, 30.0, 50.0, 30.0)];
        assert!(detect_crosses(&segments, 0.1, 5.0, 0.25).is_empty());
    }

    #[test]
    fn skewed_cross_still_detected_within_parallel_tol() {
        let center = Vec2::new(300.0, 200.0);
        let mut segments = cross_segments(center, 60.0, 12.0);
        // Mild projective skew: rotate the top edge line of the horizontal
        // bar by less than the parallel tolerance.
        for s in segments.iter_mut().take(2) {
            let rot = |p: Vec2| center + crate::geom::rotate2(p - center, 0.1);
            *s = LineSegment::new(rot(s.a), rot(s.b));
        }
        let candidates = detect_crosses(&segments, 0.12, 6.0, 0.25);
        assert!(!candidates.is_empty());
        assert!((candidates[0].center - center).norm() <= 4.0);
    }

    #[test]
    fn reprojection_nadir_principal_point() {
        let view = nadir_view(7.0);
        let p = reproject_to_plane(&view, Vec2::new(376.0, 240.0), 0.0).unwrap();
        assert!(p.norm() < 1e-12, "directly below the camera");
    }

    #[test]
    fn reprojection_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let view = nadir_view(9.0);
        for _ in 0..1000 {
            let world = Vec2::new(rng.random_range(-5.0..5.0), rng.random_range(-3.0..3.0));
            let px = view
                .project(Vector3::new(world.x, world.y, 0.3))
                .expect("in front of camera");
            let back = reproject_to_plane(&view, px, 0.3).unwrap();
            assert!((back - world).norm() < 1e-9);
        }
    }

    #[test]
    fn reprojection_rejects_upward_ray() {
        let view = nadir_view(5.0);
        // A plane above the camera is behind the downward-looking rays.
        assert_eq!(
            reproject_to_plane(&view, Vec2::new(376.0, 240.0), 9.0).unwrap_err(),
            ProjectionError::RayMissesPlane
        );
    }

    /// Project the outline of a 1.5 m platform at `center` into the view.
    fn platform_quad(view: &CameraView, center: Vec2, z: f64) -> [Vec2; 4] {
        let h = 0.75;
        let world = [
            Vec2::new(center.x - h, center.y - h),
            Vec2::new(center.x + h, center.y - h),
            Vec2::new(center.x + h, center.y + h),
            Vec2::new(center.x - h, center.y + h),
        ];
        let mut px = [Vec2::zeros(); 4];
        for (i, w) in world.iter().enumerate() {
            px[i] = view.project(Vector3::new(w.x, w.y, z)).unwrap();
        }
        px
    }

    #[test]
    fn nominal_platform_scores_maximum_proportions() {
        let view = nadir_view(8.0);
        let cache = straight_cache();
        let cfg = DetectorConfig::default();
        let corners = platform_quad(&view, Vec2::new(0.0, 0.0), 0.3);
        let det = score_and_accept(&Candidate::Quad(corners), &view, &cache, 0.3, &cfg)
            .expect("accepted");
        match det.measurements {
            Measurements::Quad { d1, d2, r, c } => {
                assert!((d1 - cfg.platform_diagonal).abs() < 1e-9);
                assert!((d2 - cfg.platform_diagonal).abs() < 1e-9);
                assert!((r - 1.0).abs() < 1e-9);
                assert!((c - 1.0).abs() < 1e-9);
            }
            _ => panic!("quad measurements"),
        }
        assert!(det.center.norm() < 1e-9);
        assert!(det.joint_likelihood > 0.9);
    }

    #[test]
    fn degenerate_zero_diagonal_is_rejected() {
        let view = nadir_view(8.0);
        let cache = straight_cache();
        let cfg = DetectorConfig::default();
        // Corners 1 and 3 coincide: d2 = 0 so r = 0 and the ratio kernel dies.
        let p = view.project(Vector3::new(0.0, 0.0, 0.3)).unwrap();
        let q = view.project(Vector3::new(1.0, 0.0, 0.3)).unwrap();
        let s = view.project(Vector3::new(0.0, 1.0, 0.3)).unwrap();
        let det = score_and_accept(&Candidate::Quad([q, p, s, p]), &view, &cache, 0.3, &cfg);
        assert!(det.is_none());
    }

    #[test]
    fn nominal_cross_accepted_on_track() {
        let view = nadir_view(4.0);
        let cache = straight_cache();
        let cfg = DetectorConfig::default();
        // Inner endpoints of a nominal cross: the corners of the 0.15 m
        // central gap, projected into the image. First two share the bottom
        // edge line, last two the top.
        let h = cfg.cross_width / 2.0;
        let world = [
            Vec2::new(-h, -h),
            Vec2::new(h, -h),
            Vec2::new(-h, h),
            Vec2::new(h, h),
        ];
        let mut inner = [Vec2::zeros(); 4];
        for (i, w) in world.iter().enumerate() {
            inner[i] = view.project(Vector3::new(w.x, w.y, 0.3)).unwrap();
        }
        let cand = Candidate::Cross(CrossCandidate {
            center: (inner[0] + inner[1] + inner[2] + inner[3]) * 0.25,
            inner,
            segments: [0, 1, 2, 3],
        });
        let det = score_and_accept(&cand, &view, &cache, 0.3, &cfg).expect("accepted");
        match det.measurements {
            Measurements::Cross { c1, c2, w1, w2 } => {
                assert!((w1 - 0.15).abs() < 1e-9, "w1 = {w1}");
                assert!((w2 - 0.15).abs() < 1e-9);
                let diag = 0.15 * core::f64::consts::SQRT_2;
                assert!((c1 - diag).abs() < 1e-9, "c1 = {c1}");
                assert!((c2 - diag).abs() < 1e-9);
            }
            _ => panic!("cross measurements"),
        }
    }

    #[test]
    fn off_track_candidates_reject_via_position_likelihood() {
        let view = nadir_view(8.0);
        let cache = straight_cache();
        let cfg = DetectorConfig::default();
        // Perfect proportions but 3 m off the track (cutoff is 1.8 m).
        let corners = platform_quad(&view, Vec2::new(0.0, 3.0), 0.3);
        assert!(score_and_accept(&Candidate::Quad(corners), &view, &cache, 0.3, &cfg).is_none());
    }

    #[test]
    fn likelihood_invariant_under_camera_roll() {
        let cache = straight_cache();
        let cfg = DetectorConfig::default();
        let base = nadir_view(8.0);
        let det_at = |roll: f64| {
            let spin = Isometry3::rotation(Vector3::new(0.0, 0.0, roll));
            let view = CameraView {
                pose: spin * base.pose,
                ..base.clone()
            };
            let corners = platform_quad(&view, Vec2::new(0.4, -0.2), 0.3);
            score_and_accept(&Candidate::Quad(corners), &view, &cache, 0.3, &cfg).unwrap()
        };
        let l0 = det_at(0.0).joint_likelihood;
        for roll in [0.3, 1.1, 2.4] {
            let l = det_at(roll).joint_likelihood;
            assert!((l - l0).abs() <= 1e-6, "roll {roll}: {l} vs {l0}");
        }
    }

    #[test]
    fn clutter_frames_produce_no_accepts() {
        let view = nadir_view(8.0);
        let cache = straight_cache();
        let cfg = DetectorConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut accepts = 0usize;
        for _ in 0..2000 {
            let mut segments = Vec::new();
            for _ in 0..30 {
                let a = Vec2::new(rng.random_range(0.0..752.0), rng.random_range(0.0..480.0));
                let d = Vec2::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0));
                if d.norm() > 1.0 {
                    segments.push(LineSegment::new(a, a + d));
                }
            }
            for q in detect_quads(&segments, cfg.join_tolerance) {
                if score_and_accept(&Candidate::Quad(q), &view, &cache, 0.3, &cfg).is_some() {
                    accepts += 1;
                }
            }
            for c in detect_crosses(&segments, cfg.angle_tol, cfg.offset_tol, cfg.parallel_tol) {
                if score_and_accept(&Candidate::Cross(c), &view, &cache, 0.3, &cfg).is_some() {
                    accepts += 1;
                }
            }
        }
        assert_eq!(accepts, 0, "no clutter may pass outlier rejection");
    }
}
