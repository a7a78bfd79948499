//! Piecewise cubic path representation with precomputed lookup caches.
//!
//! The target vehicle is constrained to a known track. Closest-point and
//! advance-along-track queries run thousands of times per filter step, so no
//! iterative geometry runs at query time: the path is sampled densely once,
//! the samples are indexed in a KD-tree, and both directions of the
//! param <-> arc-length mapping become table lookups.

use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

use crate::geom::{perp, Vec2};

/// Errors produced while constructing path geometry.
#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    /// Fewer than two distinct control points.
    DegenerateInput,
    /// Non-positive cache resolution.
    BadResolution,
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::DegenerateInput => {
                write!(f, "path needs at least two distinct control points")
            }
            GeometryError::BadResolution => write!(f, "cache resolution must be positive"),
        }
    }
}

impl core::error::Error for GeometryError {}

/// One cubic piece `c0 + c1 t + c2 t^2 + c3 t^3`, `t` in `[0, 1]`, per axis.
#[derive(Debug, Clone, Copy)]
pub struct CubicPiece {
    pub x: [f64; 4],
    pub y: [f64; 4],
}

impl CubicPiece {
    fn eval(&self, t: f64) -> Vec2 {
        let horner = |c: &[f64; 4]| c[0] + t * (c[1] + t * (c[2] + t * c[3]));
        Vec2::new(horner(&self.x), horner(&self.y))
    }

    fn derivative(&self, t: f64) -> Vec2 {
        let horner = |c: &[f64; 4]| c[1] + t * (2.0 * c[2] + t * 3.0 * c[3]);
        Vec2::new(horner(&self.x), horner(&self.y))
    }
}

/// Piecewise cubic spline through the control points (centripetal
/// Catmull-Rom), C1-continuous, optionally closed.
#[derive(Debug, Clone)]
pub struct PathSpline {
    control_points: Vec<Vec2>,
    closed: bool,
    pieces: Vec<CubicPiece>,
}

impl PathSpline {
    pub fn control_points(&self) -> &[Vec2] {
        &self.control_points
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn pieces(&self) -> &[CubicPiece] {
        &self.pieces
    }

    /// Evaluate at a global parameter in `[0, 1]` spanning all pieces.
    pub fn eval(&self, param: f64) -> Vec2 {
        let (piece, t) = self.split_param(param);
        self.pieces[piece].eval(t)
    }

    /// Derivative with respect to the global parameter (not normalized).
    pub fn derivative(&self, param: f64) -> Vec2 {
        let (piece, t) = self.split_param(param);
        self.pieces[piece].derivative(t) * self.pieces.len() as f64
    }

    fn split_param(&self, param: f64) -> (usize, f64) {
        let n = self.pieces.len() as f64;
        let scaled = param.clamp(0.0, 1.0) * n;
        let piece = Float::min(Float::floor(scaled), n - 1.0);
        (piece as usize, scaled - piece)
    }
}

/// One precomputed sample of the path.
#[derive(Debug, Clone, Copy)]
pub struct PathSample {
    /// Global spline parameter in `[0, 1]`.
    pub param: f64,
    /// Arc length from the path start, m.
    pub arc_length: f64,
    /// Point on the path, arena frame.
    pub point: Vec2,
    /// Unit tangent in the direction of increasing parameter.
    pub tangent: Vec2,
}

/// Result of a closest-point query.
#[derive(Debug, Clone, Copy)]
pub struct OnPath {
    /// Parameter of the nearest cached sample.
    pub param: f64,
    /// The nearest cached point.
    pub point: Vec2,
    /// Signed distance query <-> path; positive to the left of travel.
    pub across: f64,
    /// Index of the nearest sample.
    pub index: usize,
}

/// Dense sampling of a [`PathSpline`] with a KD-tree over the sampled points
/// and bidirectional param <-> arc-length tables. Immutable once built.
#[derive(Debug, Clone)]
pub struct PathCache {
    samples: Vec<PathSample>,
    kd: KdTree,
    total_length: f64,
    closed: bool,
}

/// Build the spline and its cache. `resolution` bounds the spacing between
/// consecutive cache samples (m).
pub fn build_path(
    control_points: &[Vec2],
    closed: bool,
    resolution: f64,
) -> Result<(PathSpline, PathCache), GeometryError> {
    if !(resolution > 0.0) {
        return Err(GeometryError::BadResolution);
    }
    let mut points: Vec<Vec2> = Vec::with_capacity(control_points.len());
    for &p in control_points {
        if points.last().map_or(true, |q| (p - q).norm() > 1e-12) {
            points.push(p);
        }
    }
    // A closed path given with an explicit duplicate of the first point.
    if closed && points.len() > 2 && (points[0] - points[points.len() - 1]).norm() <= 1e-12 {
        points.pop();
    }
    if points.len() < 2 {
        return Err(GeometryError::DegenerateInput);
    }

    let pieces = catmull_rom_pieces(&points, closed);
    let spline = PathSpline {
        control_points: points,
        closed,
        pieces,
    };
    let cache = build_cache(&spline, resolution);
    Ok((spline, cache))
}

/// Centripetal Catmull-Rom pieces through the points. Closed paths wrap their
/// neighbors; open paths use reflected ghost points at the ends.
fn catmull_rom_pieces(points: &[Vec2], closed: bool) -> Vec<CubicPiece> {
    let n = points.len();
    let segs = if closed { n } else { n - 1 };
    let fetch = |i: isize| -> Vec2 {
        if closed {
            points[i.rem_euclid(n as isize) as usize]
        } else if i < 0 {
            points[0] * 2.0 - points[1]
        } else if i as usize >= n {
            points[n - 1] * 2.0 - points[n - 2]
        } else {
            points[i as usize]
        }
    };

    let mut pieces = Vec::with_capacity(segs);
    for s in 0..segs {
        let p0 = fetch(s as isize - 1);
        let p1 = fetch(s as isize);
        let p2 = fetch(s as isize + 1);
        let p3 = fetch(s as isize + 2);
        // Centripetal knot spacing; collapsed knots fall back to a small
        // positive spacing so the tangent formulas stay finite.
        let dt = |a: Vec2, b: Vec2| Float::max(Float::sqrt((b - a).norm()), 1e-9);
        let (d01, d12, d23) = (dt(p0, p1), dt(p1, p2), dt(p2, p3));

        // Non-uniform Catmull-Rom tangents scaled into t in [0, 1].
        let m1 = ((p1 - p0) / d01 - (p2 - p0) / (d01 + d12) + (p2 - p1) / d12) * d12;
        let m2 = ((p2 - p1) / d12 - (p3 - p1) / (d12 + d23) + (p3 - p2) / d23) * d12;

        // Cubic Hermite (p1, m1, p2, m2) in monomial form.
        let a = p1;
        let b = m1;
        let c = (p2 - p1) * 3.0 - m1 * 2.0 - m2;
        let d = (p1 - p2) * 2.0 + m1 + m2;
        pieces.push(CubicPiece {
            x: [a.x, b.x, c.x, d.x],
            y: [a.y, b.y, c.y, d.y],
        });
    }
    pieces
}

fn build_cache(spline: &PathSpline, resolution: f64) -> PathCache {
    let n_pieces = spline.pieces.len();

    // Choose a subdivision per piece so that every chord is at most
    // `resolution`, then take the chordal arc length as the cached metric.
    let mut params = Vec::new();
    params.push(0.0);
    for piece in 0..n_pieces {
        let lo = piece as f64 / n_pieces as f64;
        let hi = (piece + 1) as f64 / n_pieces as f64;
        let mut steps = Float::max(chord_estimate(spline, lo, hi, 16) / resolution, 1.0) as usize;
        loop {
            let mut ok = true;
            let mut prev = spline.eval(lo);
            for k in 1..=steps {
                let p = lo + (hi - lo) * k as f64 / steps as f64;
                let q = spline.eval(p);
                if (q - prev).norm() > resolution * (1.0 + 1e-9) {
                    ok = false;
                    break;
                }
                prev = q;
            }
            if ok {
                break;
            }
            steps *= 2;
        }
        for k in 1..=steps {
            params.push(lo + (hi - lo) * k as f64 / steps as f64);
        }
    }

    let mut samples: Vec<PathSample> = Vec::with_capacity(params.len());
    let mut arc = 0.0;
    for &param in &params {
        let point = spline.eval(param);
        if let Some(last) = samples.last() {
            let step = (point - last.point).norm();
            if step <= 1e-12 {
                continue;
            }
            arc += step;
        }
        let tangent = spline.derivative(param);
        let tangent = if tangent.norm() > 1e-12 {
            tangent / tangent.norm()
        } else {
            Vec2::new(1.0, 0.0)
        };
        samples.push(PathSample {
            param,
            arc_length: arc,
            point,
            tangent,
        });
    }

    let kd = KdTree::build(&samples);
    PathCache {
        samples,
        kd,
        total_length: arc,
        closed: spline.closed,
    }
}

fn chord_estimate(spline: &PathSpline, lo: f64, hi: f64, steps: usize) -> f64 {
    let mut len = 0.0;
    let mut prev = spline.eval(lo);
    for k in 1..=steps {
        let q = spline.eval(lo + (hi - lo) * k as f64 / steps as f64);
        len += (q - prev).norm();
        prev = q;
    }
    len
}

impl PathCache {
    pub fn samples(&self) -> &[PathSample] {
        &self.samples
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Centroid of the cached points; the hover point for target search.
    pub fn centroid(&self) -> Vec2 {
        let mut sum = Vec2::zeros();
        for s in &self.samples {
            sum += s.point;
        }
        sum / self.samples.len() as f64
    }

    /// Nearest cached sample to `query` (exact over the sample set, ties to
    /// the lowest parameter) with the signed across-track distance.
    pub fn closest_on_path(&self, query: Vec2) -> OnPath {
        let index = self.kd.nearest(&self.samples, query);
        self.on_path_at(index, query)
    }

    /// Nearest cached sample to `query` restricted to arc lengths within
    /// `window` of `arc_hint`. On self-intersecting tracks this pins the
    /// query to one branch, where the unrestricted search is ambiguous near
    /// a crossing.
    pub fn closest_on_path_near(&self, query: Vec2, arc_hint: f64, window: f64) -> OnPath {
        let n = self.samples.len();
        let span = (window / Float::max(self.total_length / n as f64, 1e-9)) as usize;
        let center = self.upper_by(|s| s.arc_length, arc_hint.clamp(0.0, self.total_length));
        let mut best = (f64::INFINITY, usize::MAX);
        for offset in 0..=(2 * span) {
            let raw = center as isize - span as isize + offset as isize;
            let index = if self.closed {
                raw.rem_euclid(n as isize) as usize
            } else if raw < 0 || raw as usize >= n {
                continue;
            } else {
                raw as usize
            };
            let d2 = (query - self.samples[index].point).norm_squared();
            if d2 < best.0 || (d2 == best.0 && index < best.1) {
                best = (d2, index);
            }
        }
        self.on_path_at(best.1, query)
    }

    fn on_path_at(&self, index: usize, query: Vec2) -> OnPath {
        let s = &self.samples[index];
        let d = query - s.point;
        OnPath {
            param: s.param,
            point: s.point,
            across: perp(s.tangent).dot(&d),
            index,
        }
    }

    /// Arc length at a parameter (table interpolation).
    pub fn param_to_arc_length(&self, param: f64) -> f64 {
        let param = param.clamp(0.0, 1.0);
        let i = self.upper_by(|s| s.param, param);
        self.interp(i, |s| s.param, |s| s.arc_length, param)
    }

    /// Parameter at an arc length (table interpolation, input clamped).
    pub fn arc_length_to_param(&self, arc: f64) -> f64 {
        let arc = arc.clamp(0.0, self.total_length);
        let i = self.upper_by(|s| s.arc_length, arc);
        self.interp(i, |s| s.arc_length, |s| s.param, arc)
    }

    /// Move `distance` meters along the path from `param`. Closed paths wrap;
    /// open paths clamp at the endpoints.
    pub fn advance_along(&self, param: f64, distance: f64) -> f64 {
        let mut arc = self.param_to_arc_length(param) + distance;
        if self.closed {
            arc = num_traits::Euclid::rem_euclid(&arc, &self.total_length);
        } else {
            arc = arc.clamp(0.0, self.total_length);
        }
        self.arc_length_to_param(arc)
    }

    /// Point at a parameter (table interpolation between cached samples).
    pub fn point_at(&self, param: f64) -> Vec2 {
        let param = param.clamp(0.0, 1.0);
        let i = self.upper_by(|s| s.param, param);
        let (a, b) = (&self.samples[i - 1], &self.samples[i]);
        let w = if b.param > a.param {
            (param - a.param) / (b.param - a.param)
        } else {
            0.0
        };
        a.point + (b.point - a.point) * w
    }

    /// Unit tangent at a parameter, from the nearest cached sample.
    pub fn tangent_at(&self, param: f64) -> Vec2 {
        let param = param.clamp(0.0, 1.0);
        let i = self.upper_by(|s| s.param, param);
        let (a, b) = (&self.samples[i - 1], &self.samples[i]);
        if param - a.param <= b.param - param {
            a.tangent
        } else {
            b.tangent
        }
    }

    /// First index whose key is >= `value`, at least 1.
    fn upper_by(&self, key: impl Fn(&PathSample) -> f64, value: f64) -> usize {
        let mut lo = 1usize;
        let mut hi = self.samples.len() - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if key(&self.samples[mid]) < value {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn interp(
        &self,
        i: usize,
        key: impl Fn(&PathSample) -> f64,
        val: impl Fn(&PathSample) -> f64,
        x: f64,
    ) -> f64 {
        let (a, b) = (&self.samples[i - 1], &self.samples[i]);
        let (ka, kb) = (key(a), key(b));
        if kb <= ka {
            return val(a);
        }
        let w = (x - ka) / (kb - ka);
        val(a) + (val(b) - val(a)) * w
    }
}

/// Static 2-D KD-tree over sample points. Nodes are stored in heap layout;
/// ties resolve to the lowest sample index so queries agree exactly with a
/// linear scan.
#[derive(Debug, Clone)]
struct KdTree {
    // node -> sample index, heap layout (children of n at 2n+1 / 2n+2).
    nodes: Vec<u32>,
}

impl KdTree {
    fn build(samples: &[PathSample]) -> Self {
        let mut idx: Vec<u32> = (0..samples.len() as u32).collect();
        let mut nodes = alloc::vec![u32::MAX; idx.len().next_power_of_two() * 2];
        Self::build_rec(samples, &mut idx, 0, 0, &mut nodes);
        KdTree { nodes }
    }

    fn build_rec(samples: &[PathSample], idx: &mut [u32], node: usize, axis: usize, out: &mut [u32]) {
        if idx.is_empty() {
            return;
        }
        let mid = idx.len() / 2;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            let ka = axis_key(&samples[a as usize].point, axis);
            let kb = axis_key(&samples[b as usize].point, axis);
            ka.partial_cmp(&kb).unwrap().then(a.cmp(&b))
        });
        out[node] = idx[mid];
        let (left, rest) = idx.split_at_mut(mid);
        let right = &mut rest[1..];
        Self::build_rec(samples, left, 2 * node + 1, axis ^ 1, out);
        Self::build_rec(samples, right, 2 * node + 2, axis ^ 1, out);
    }

    fn nearest(&self, samples: &[PathSample], query: Vec2) -> usize {
        let mut best = (f64::INFINITY, u32::MAX);
        self.nearest_rec(samples, query, 0, 0, &mut best);
        best.1 as usize
    }

    fn nearest_rec(
        &self,
        samples: &[PathSample],
        query: Vec2,
        node: usize,
        axis: usize,
        best: &mut (f64, u32),
    ) {
        if node >= self.nodes.len() || self.nodes[node] == u32::MAX {
            return;
        }
        let sample = self.nodes[node];
        let point = samples[sample as usize].point;
        let d2 = (query - point).norm_squared();
        if d2 < best.0 || (d2 == best.0 && sample < best.1) {
            *best = (d2, sample);
        }
        let delta = axis_key(&query, axis) - axis_key(&point, axis);
        let (near, far) = if delta < 0.0 {
            (2 * node + 1, 2 * node + 2)
        } else {
            (2 * node + 2, 2 * node + 1)
        };
        self.nearest_rec(samples, query, near, axis ^ 1, best);
        if delta * delta <= best.0 {
            self.nearest_rec(samples, query, far, axis ^ 1, best);
        }
    }
}

#[inline]
fn axis_key(p: &Vec2, axis: usize) -> f64 {
    if axis == 0 {
        p.x
    } else {
        p.y
    }
}
