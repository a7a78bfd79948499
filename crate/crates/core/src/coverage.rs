//! Arena splitting, lawnmower sweep planning and velocity-ramp navigation.
//!
//! Each vehicle owns one convex region of the arena at its own altitude and
//! explores it with equally spaced sweep lines. The sweep spacing comes from
//! the camera footprint geometry; waypoint-to-waypoint motion uses straight
//! trapezoidal velocity ramps, collision free by construction within a
//! region.

use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

use crate::geom::{Vec2, Vec3};

/// Maximum sweep spacing for full camera coverage:
/// `(1 - delta) * 2 * h * tan(alpha / 2)`.
pub fn sweep_distance(h: f64, alpha: f64, delta: f64) -> f64 {
    debug_assert!(h > 0.0 && alpha > 0.0 && alpha < core::f64::consts::PI);
    debug_assert!((0.0..1.0).contains(&delta));
    (1.0 - delta) * 2.0 * h * Float::tan(alpha / 2.0)
}

/// Coverage errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoverageError {
    /// Supported team sizes are 1 to 3 vehicles.
    BadAgentCount(usize),
    /// Region polygon with fewer than 3 vertices.
    DegenerateRegion,
}

impl fmt::Display for CoverageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoverageError::BadAgentCount(n) => write!(f, "unsupported agent count {n}"),
            CoverageError::DegenerateRegion => write!(f, "region polygon is degenerate"),
        }
    }
}

impl core::error::Error for CoverageError {}

/// One agent's share of the arena.
#[derive(Debug, Clone)]
pub struct ArenaRegion {
    /// Convex polygon, counter-clockwise, arena meters.
    pub polygon: Vec<Vec2>,
    pub agent_id: usize,
    /// Exploration altitude assigned to this agent, m.
    pub altitude: f64,
}

/// Shoelace area of a polygon.
pub fn polygon_area(polygon: &[Vec2]) -> f64 {
    let mut acc = 0.0;
    for i in 0..polygon.len() {
        let a = polygon[i];
        let b = polygon[(i + 1) % polygon.len()];
        acc += a.x * b.y - b.x * a.y;
    }
    Float::abs(acc) * 0.5
}

/// Point-in-convex-polygon test (boundary counts as inside).
pub fn polygon_contains(polygon: &[Vec2], p: Vec2) -> bool {
    let mut sign = 0.0f64;
    for i in 0..polygon.len() {
        let a = polygon[i];
        let b = polygon[(i + 1) % polygon.len()];
        let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
        if Float::abs(cross) < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = cross;
        } else if sign * cross < 0.0 {
            return false;
        }
    }
    true
}

/// Clip a convex polygon against the half-plane `normal . x <= bound`.
fn clip_halfplane(polygon: &[Vec2], normal: Vec2, bound: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(polygon.len() + 1);
    for i in 0..polygon.len() {
        let a = polygon[i];
        let b = polygon[(i + 1) % polygon.len()];
        let (da, db) = (normal.dot(&a) - bound, normal.dot(&b) - bound);
        if da <= 0.0 {
            out.push(a);
        }
        if da * db < 0.0 {
            out.push(a + (b - a) * (da / (da - db)));
        }
    }
    out
}

/// Split a convex arena into 1 to 3 interior-disjoint, equal-area strips
/// perpendicular to the arena's longest extent, and assign every agent a
/// distinct altitude. The strips tile the entire arena, so their union
/// covers it regardless of any exclusion zones; exclusions only constrain
/// pickup validity and scoring downstream.
pub fn split_arena(
    arena: &[Vec2],
    n_agents: usize,
    base_altitude: f64,
    altitude_step: f64,
) -> Result<Vec<ArenaRegion>, CoverageError> {
    if !(1..=3).contains(&n_agents) {
        return Err(CoverageError::BadAgentCount(n_agents));
    }
    if arena.len() < 3 {
        return Err(CoverageError::DegenerateRegion);
    }
    let (lo, hi) = bounds(arena);
    let size = hi - lo;
    // Cut perpendicular to the longest side.
    let axis = if size.x >= size.y {
        Vec2::new(1.0, 0.0)
    } else {
        Vec2::new(0.0, 1.0)
    };
    let (min_c, max_c) = (axis.dot(&lo), axis.dot(&hi));
    let total = polygon_area(arena);

    let mut regions = Vec::with_capacity(n_agents);
    let mut lower = min_c;
    for agent_id in 0..n_agents {
        let target = total * (agent_id + 1) as f64 / n_agents as f64;
        let upper = if agent_id + 1 == n_agents {
            max_c
        } else {
            // Binary search the cut with the target cumulative area.
            let (mut a, mut b) = (min_c, max_c);
            for _ in 0..64 {
                let mid = 0.5 * (a + b);
                if polygon_area(&clip_halfplane(arena, axis, mid)) < target {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            0.5 * (a + b)
        };
        let strip = clip_halfplane(&clip_halfplane(arena, axis, upper), -axis, -lower);
        regions.push(ArenaRegion {
            polygon: strip,
            agent_id,
            altitude: base_altitude + agent_id as f64 * altitude_step,
        });
        lower = upper;
    }
    Ok(regions)
}

fn bounds(polygon: &[Vec2]) -> (Vec2, Vec2) {
    let mut lo = polygon[0];
    let mut hi = polygon[0];
    for p in polygon {
        lo.x = Float::min(lo.x, p.x);
        lo.y = Float::min(lo.y, p.y);
        hi.x = Float::max(hi.x, p.x);
        hi.y = Float::max(hi.y, p.y);
    }
    (lo, hi)
}

/// A serpentine sweep: ordered waypoints with a resumable cursor.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub waypoints: Vec<Vec3>,
    /// Persists across interruptions so exploration resumes where it left.
    pub current_index: usize,
    /// Spacing actually used between sweep lines, m.
    pub spacing: f64,
}

impl SweepPlan {
    pub fn current(&self) -> Option<Vec3> {
        self.waypoints.get(self.current_index).copied()
    }

    pub fn advance(&mut self) {
        if self.current_index < self.waypoints.len() {
            self.current_index += 1;
        }
    }

    pub fn finished(&self) -> bool {
        self.current_index >= self.waypoints.len()
    }

    /// Wrap around for continuous exploration.
    pub fn restart(&mut self) {
        self.current_index = 0;
    }
}

/// Lawnmower plan over a convex region: the minimum number of equally spaced
/// sweep lines with spacing at most `d_max`, laid along the region's longest
/// axis and connected serpentine-fashion at the given altitude.
pub fn plan_sweep(region: &ArenaRegion, d_max: f64, altitude: f64) -> Result<SweepPlan, CoverageError> {
    let polygon = &region.polygon;
    if polygon.len() < 3 || polygon_area(polygon) < 1e-9 {
        return Err(CoverageError::DegenerateRegion);
    }
    let (lo, hi) = bounds(polygon);
    let size = hi - lo;
    // Sweep lines run along the longest extent; spacing spans the shorter.
    let (line_dir, span_dir, span) = if size.x >= size.y {
        (Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), size.y)
    } else {
        (Vec2::new(0.0, 1.0), Vec2::new(1.0, 0.0), size.x)
    };
    let lines = Float::max(Float::ceil(span / d_max - 1e-12), 1.0) as usize;
    let spacing = span / lines as f64;

    let mut waypoints = Vec::with_capacity(lines * 2);
    for k in 0..lines {
        let offset = span_dir.dot(&lo) + spacing * (k as f64 + 0.5);
        // Intersect the sweep line with the polygon boundary.
        let anchor = span_dir * offset
            + line_dir * line_dir.dot(&Vec2::new(
                0.5 * (lo.x + hi.x),
                0.5 * (lo.y + hi.y),
            ));
        let mut ts: Vec<f64> = Vec::new();
        for i in 0..polygon.len() {
            let a = polygon[i];
            let b = polygon[(i + 1) % polygon.len()];
            let edge = b - a;
            let denom = line_dir.x * edge.y - line_dir.y * edge.x;
            if Float::abs(denom) < 1e-12 {
                continue;
            }
            let diff = a - anchor;
            let t = (diff.x * edge.y - diff.y * edge.x) / denom;
            let s = (diff.x * line_dir.y - diff.y * line_dir.x) / denom;
            if (-1e-9..=1.0 + 1e-9).contains(&s) {
                ts.push(t);
            }
        }
        if ts.len() < 2 {
            continue;
        }
        let (t_min, t_max) = ts
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &t| {
                (Float::min(a, t), Float::max(b, t))
            });
        let p0 = anchor + line_dir * t_min;
        let p1 = anchor + line_dir * t_max;
        let (first, second) = if k % 2 == 0 { (p0, p1) } else { (p1, p0) };
        waypoints.push(Vec3::new(first.x, first.y, altitude));
        waypoints.push(Vec3::new(second.x, second.y, altitude));
    }
    Ok(SweepPlan {
        waypoints,
        current_index: 0,
        spacing,
    })
}

/// Straight-line trapezoidal (or triangular) velocity profile between two
/// poses.
#[derive(Debug, Clone)]
pub struct VelocityRamp {
    pub start: Vec3,
    pub goal: Vec3,
    /// Peak speed actually reached, m/s.
    pub peak: f64,
    /// Acceleration used, m/s^2.
    pub accel: f64,
    /// Time accelerating (= time decelerating), s.
    pub t_ramp: f64,
    /// Time cruising at peak speed, s.
    pub t_cruise: f64,
}

/// A sampled setpoint of a ramp trajectory.
#[derive(Debug, Clone, Copy)]
pub struct TimedSetpoint {
    pub t: f64,
    pub pos: Vec3,
    pub vel: Vec3,
}

/// Distance under which a waypoint counts as reached, m.
pub const ARRIVAL_TOLERANCE: f64 = 0.2;

/// Build the ramp profile; zero-length moves produce an immediate-arrival
/// profile.
pub fn velocity_ramp(start: Vec3, goal: Vec3, v_max: f64, a_max: f64) -> VelocityRamp {
    debug_assert!(v_max > 0.0 && a_max > 0.0);
    let dist = (goal - start).norm();
    let peak = Float::min(v_max, Float::sqrt(dist * a_max));
    let (t_ramp, t_cruise) = if peak <= 0.0 {
        (0.0, 0.0)
    } else {
        let t_ramp = peak / a_max;
        let cruise_dist = dist - peak * peak / a_max;
        (t_ramp, Float::max(cruise_dist, 0.0) / peak)
    };
    VelocityRamp {
        start,
        goal,
        peak,
        accel: a_max,
        t_ramp,
        t_cruise,
    }
}

impl VelocityRamp {
    pub fn duration(&self) -> f64 {
        2.0 * self.t_ramp + self.t_cruise
    }

    /// Position and velocity at `t` since the ramp start; clamps at the goal.
    pub fn eval(&self, t: f64) -> (Vec3, Vec3) {
        let dist = (self.goal - self.start).norm();
        if dist <= 1e-12 || t >= self.duration() {
            return (self.goal, Vec3::zeros());
        }
        let dir = (self.goal - self.start) / dist;
        let t = Float::max(t, 0.0);
        let (s, v) = if t < self.t_ramp {
            (0.5 * self.accel * t * t, self.accel * t)
        } else if t < self.t_ramp + self.t_cruise {
            (
                0.5 * self.accel * self.t_ramp * self.t_ramp + self.peak * (t - self.t_ramp),
                self.peak,
            )
        } else {
            let td = t - self.t_ramp - self.t_cruise;
            (
                0.5 * self.accel * self.t_ramp * self.t_ramp
                    + self.peak * self.t_cruise
                    + self.peak * td
                    - 0.5 * self.accel * td * td,
                self.peak - self.accel * td,
            )
        };
        (self.start + dir * s, dir * v)
    }

    /// Sample the profile every `dt`, always including the final state.
    pub fn sample(&self, dt: f64) -> Vec<TimedSetpoint> {
        let mut out = Vec::new();
        let duration = self.duration();
        let mut t = 0.0;
        while t < duration {
            let (pos, vel) = self.eval(t);
            out.push(TimedSetpoint { t, pos, vel });
            t += dt;
        }
        out.push(TimedSetpoint {
            t: duration,
            pos: self.goal,
            vel: Vec3::zeros(),
        });
        out
    }
}
