//! Interception trajectory planning from smoothly joined motion primitives.
//!
//! Each primitive is a per-axis jerk-minimizing quintic between a fully known
//! start state and a partially constrained end state. A directed graph is
//! built per replan: the current vehicle state connects to interception
//! candidates above the predicted target trajectory, which connect to end
//! states sampled from the prediction. Edge costs are primitive durations; the
//! start edges carry an `l^3` distance multiplier that biases the search
//! toward intercepting as early as possible. The cheapest path is found with
//! Dijkstra and concatenated into one C2-continuous trajectory.

use alloc::collections::BinaryHeap;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use num_traits::Float;

use crate::geom::Vec3;
use crate::tracker::PredictedTrajectory;

/// Per-axis end constraint; `None` leaves the quantity free for the
/// optimality conditions.
#[derive(Debug, Clone, Copy, Default)]
pub struct AxisConstraint {
    pub pos: Option<f64>,
    pub vel: Option<f64>,
    pub acc: Option<f64>,
}

/// A partially specified boundary state.
#[derive(Debug, Clone, Copy, Default)]
pub struct MotionState {
    pub t: Option<f64>,
    pub axes: [AxisConstraint; 3],
}

impl MotionState {
    pub fn position(pos: Vec3) -> Self {
        let mut s = MotionState::default();
        for k in 0..3 {
            s.axes[k].pos = Some(pos[k]);
        }
        s
    }
}

/// A fully known state: every start vertex has one.
#[derive(Debug, Clone, Copy)]
pub struct FullState {
    pub t: f64,
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
}

impl FullState {
    pub fn at_rest(t: f64, pos: Vec3) -> Self {
        FullState {
            t,
            pos,
            vel: Vec3::zeros(),
            acc: Vec3::zeros(),
        }
    }
}

/// Velocity and acceleration limits, per axis.
#[derive(Debug, Clone, Copy)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FlightEnvelope {
    pub v_max: f64,
    pub a_max: f64,
}

impl Default for FlightEnvelope {
    fn default() -> Self {
        FlightEnvelope {
            v_max: 5.0,
            a_max: 5.0,
        }
    }
}

/// Planning errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlanError {
    /// End time earlier than or equal to the start time.
    NonPositiveDuration,
    /// No duration satisfies the envelope (or the envelope is degenerate).
    InfeasibleEnvelope,
    /// No end vertex is reachable within the prediction horizon.
    NoFeasibleEnd,
    /// Follow or final-approach references need a converged tracker.
    ModeRequiresConvergence,
}

impl fmt::Display for PlanError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanError::NonPositiveDuration => write!(f, "primitive duration must be positive"),
            PlanError::InfeasibleEnvelope => write!(f, "flight envelope is infeasible"),
            PlanError::NoFeasibleEnd => write!(f, "no reachable end state in the prediction"),
            PlanError::ModeRequiresConvergence => {
                write!(f, "flight mode requires a converged tracker")
            }
        }
    }
}

impl core::error::Error for PlanError {}

/// One axis of a motion primitive: `sum c_k t^k`, `t` in `[0, duration]`.
#[derive(Debug, Clone, Copy)]
pub struct AxisQuintic {
    pub c: [f64; 6],
}

impl AxisQuintic {
    pub fn pos(&self, t: f64) -> f64 {
        let c = &self.c;
        c[0] + t * (c[1] + t * (c[2] + t * (c[3] + t * (c[4] + t * c[5]))))
    }

    pub fn vel(&self, t: f64) -> f64 {
        let c = &self.c;
        c[1] + t * (2.0 * c[2] + t * (3.0 * c[3] + t * (4.0 * c[4] + t * 5.0 * c[5])))
    }

    pub fn acc(&self, t: f64) -> f64 {
        let c = &self.c;
        2.0 * c[2] + t * (6.0 * c[3] + t * (12.0 * c[4] + t * 20.0 * c[5]))
    }

    pub fn jerk(&self, t: f64) -> f64 {
        let c = &self.c;
        6.0 * c[3] + t * (24.0 * c[4] + t * 60.0 * c[5])
    }
}

/// Per-axis quintic segment of fixed duration.
#[derive(Debug, Clone, Copy)]
pub struct MotionPrimitive {
    pub axes: [AxisQuintic; 3],
    pub duration: f64,
}

impl MotionPrimitive {
    pub fn state_at(&self, t: f64) -> FullState {
        let t = t.clamp(0.0, self.duration);
        let mut s = FullState::at_rest(t, Vec3::zeros());
        for k in 0..3 {
            s.pos[k] = self.axes[k].pos(t);
            s.vel[k] = self.axes[k].vel(t);
            s.acc[k] = self.axes[k].acc(t);
        }
        s
    }

    /// Integral of squared jerk over the full duration, summed over axes.
    pub fn jerk_cost(&self) -> f64 {
        let t = self.duration;
        let mut total = 0.0;
        for axis in &self.axes {
            // jerk = g0 + g1 t + g2 t^2
            let g0 = 6.0 * axis.c[3];
            let g1 = 24.0 * axis.c[4];
            let g2 = 60.0 * axis.c[5];
            total += g0 * g0 * t
                + g0 * g1 * t * t
                + (g1 * g1 + 2.0 * g0 * g2) * t * t * t / 3.0
                + g1 * g2 * t * t * t * t / 2.0
                + g2 * g2 * t * t * t * t * t / 5.0;
        }
        total
    }

    /// Peak absolute velocity and acceleration per axis over the duration,
    /// from the exact polynomial extrema.
    pub fn peaks(&self) -> ([f64; 3], [f64; 3]) {
        let mut v = [0.0; 3];
        let mut a = [0.0; 3];
        for k in 0..3 {
            let axis = &self.axes[k];
            // Acceleration extrema where jerk (a quadratic) is zero.
            let mut acc_peak =
                Float::max(Float::abs(axis.acc(0.0)), Float::abs(axis.acc(self.duration)));
            for r in quadratic_roots(60.0 * axis.c[5], 24.0 * axis.c[4], 6.0 * axis.c[3]) {
                if r > 0.0 && r < self.duration {
                    acc_peak = Float::max(acc_peak, Float::abs(axis.acc(r)));
                }
            }
            // Velocity extrema where acceleration (a cubic) is zero.
            let mut vel_peak =
                Float::max(Float::abs(axis.vel(0.0)), Float::abs(axis.vel(self.duration)));
            for r in cubic_roots(
                20.0 * axis.c[5],
                12.0 * axis.c[4],
                6.0 * axis.c[3],
                2.0 * axis.c[2],
            ) {
                if r > 0.0 && r < self.duration {
                    vel_peak = Float::max(vel_peak, Float::abs(axis.vel(r)));
                }
            }
            v[k] = vel_peak;
            a[k] = acc_peak;
        }
        (v, a)
    }

    pub fn within_envelope(&self, envelope: &FlightEnvelope, slack: f64) -> bool {
        let (v, a) = self.peaks();
        v.iter().all(|&x| x <= envelope.v_max + slack)
            && a.iter().all(|&x| x <= envelope.a_max + slack)
    }
}

/// Real roots of `a x^2 + b x + c`, up to two.
fn quadratic_roots(a: f64, b: f64, c: f64) -> impl Iterator<Item = f64> {
    let mut roots = [f64::NAN; 2];
    if Float::abs(a) < 1e-300 {
        if Float::abs(b) > 1e-300 {
            roots[0] = -c / b;
        }
    } else {
        let disc = b * b - 4.0 * a * c;
        if disc >= 0.0 {
            let s = Float::sqrt(disc);
            let q = -0.5 * (b + Float::copysign(s, b));
            roots[0] = q / a;
            if Float::abs(q) > 1e-300 {
                roots[1] = c / q;
            }
        }
    }
    roots.into_iter().filter(|r| r.is_finite())
}

/// Real roots of `a x^3 + b x^2 + c x + d`.
fn cubic_roots(a: f64, b: f64, c: f64, d: f64) -> Vec<f64> {
    if Float::abs(a) < 1e-12 {
        return quadratic_roots(b, c, d).collect();
    }
    // Depressed form x = y - b/3a, y^3 + p y + q = 0.
    let (b, c, d) = (b / a, c / a, d / a);
    let p = c - b * b / 3.0;
    let q = 2.0 * b * b * b / 27.0 - b * c / 3.0 + d;
    let shift = -b / 3.0;
    let disc = q * q / 4.0 + p * p * p / 27.0;
    let mut roots = Vec::with_capacity(3);
    if disc > 1e-18 {
        let s = Float::sqrt(disc);
        let u = Float::cbrt(-q / 2.0 + s);
        let v = Float::cbrt(-q / 2.0 - s);
        roots.push(u + v + shift);
    } else if Float::abs(p) < 1e-18 {
        roots.push(Float::cbrt(-q) + shift);
    } else {
        // Three real roots (trigonometric form).
        let m = 2.0 * Float::sqrt(-p / 3.0);
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = Float::acos(arg) / 3.0;
        for k in 0..3 {
            roots
                .push(m * Float::cos(theta - 2.0 * core::f64::consts::PI * k as f64 / 3.0) + shift);
        }
    }
    roots
}

/// Jerk-minimizing quintic between a full start state and a partially
/// constrained end state with a fixed end time. Unconstrained end derivatives
/// take the values given by the optimality conditions.
pub fn min_jerk_primitive(
    start: &FullState,
    end: &MotionState,
) -> Result<MotionPrimitive, PlanError> {
    let end_t = end.t.ok_or(PlanError::NonPositiveDuration)?;
    let duration = end_t - start.t;
    min_jerk_with_duration(start, &end.axes, duration)
}

fn min_jerk_with_duration(
    start: &FullState,
    end_axes: &[AxisConstraint; 3],
    duration: f64,
) -> Result<MotionPrimitive, PlanError> {
    if !(duration > 0.0) {
        return Err(PlanError::NonPositiveDuration);
    }
    let t = duration;
    let mut axes = [AxisQuintic { c: [0.0; 6] }; 3];
    for k in 0..3 {
        let (p0, v0, a0) = (start.pos[k], start.vel[k], start.acc[k]);
        let con = &end_axes[k];
        let dp = con.pos.map(|pf| pf - p0 - v0 * t - 0.5 * a0 * t * t);
        let dv = con.vel.map(|vf| vf - v0 - a0 * t);
        let da = con.acc.map(|af| af - a0);

        // Optimal jerk is alpha t^2/2 + beta t + gamma; the closed forms per
        // constraint case come from the KKT system of the jerk integral.
        let (t2, t3, t4, t5) = (t * t, t * t * t, t * t * t * t, t * t * t * t * t);
        let (alpha, beta, gamma) = match (dp, dv, da) {
            (Some(dp), Some(dv), Some(da)) => (
                60.0 * (t2 * da - 6.0 * t * dv + 12.0 * dp) / t5,
                24.0 * (-t2 * da + 7.0 * t * dv - 15.0 * dp) / t4,
                3.0 * (t2 * da - 8.0 * t * dv + 20.0 * dp) / t3,
            ),
            (Some(dp), Some(dv), None) => (
                40.0 * (8.0 * dp - 3.0 * t * dv) / t5,
                8.0 * (9.0 * t * dv - 25.0 * dp) / t4,
                4.0 * (10.0 * dp - 3.0 * t * dv) / t3,
            ),
            (Some(dp), None, Some(da)) => (
                15.0 * (6.0 * dp - t2 * da) / (2.0 * t5),
                15.0 * (t2 * da - 6.0 * dp) / (2.0 * t4),
                3.0 * (10.0 * dp - t2 * da) / (2.0 * t3),
            ),
            (None, Some(dv), Some(da)) => (
                0.0,
                6.0 * (t * da - 2.0 * dv) / t3,
                2.0 * (3.0 * dv - t * da) / t2,
            ),
            (Some(dp), None, None) => (20.0 * dp / t5, -20.0 * dp / t4, 10.0 * dp / t3),
            (None, Some(dv), None) => (0.0, -3.0 * dv / t3, 3.0 * dv / t2),
            (None, None, Some(da)) => (0.0, 0.0, da / t),
            (None, None, None) => (0.0, 0.0, 0.0),
        };
        axes[k] = AxisQuintic {
            c: [p0, v0, a0 / 2.0, gamma / 6.0, beta / 24.0, alpha / 120.0],
        };
    }
    Ok(MotionPrimitive { axes, duration })
}

/// Bisection resolution for the fastest-primitive search, s.
const DURATION_RESOLUTION: f64 = 1e-3;

/// Shortest-duration jerk-minimizing primitive to an end state without a
/// fixed time, subject to the flight envelope.
pub fn fastest_primitive(
    start: &FullState,
    end: &MotionState,
    envelope: &FlightEnvelope,
) -> Result<MotionPrimitive, PlanError> {
    if !(envelope.v_max > 1e-6) || !(envelope.a_max > 1e-6) {
        return Err(PlanError::InfeasibleEnvelope);
    }
    let feasible = |t: f64| -> Option<MotionPrimitive> {
        min_jerk_with_duration(start, &end.axes, t)
            .ok()
            .filter(|p| p.within_envelope(envelope, 1e-9))
    };

    let lo = DURATION_RESOLUTION;
    if let Some(p) = feasible(lo) {
        return Ok(p);
    }
    // Grow an upper bracket, then bisect down to the resolution.
    let mut lo = lo;
    let mut hi = 0.125;
    let mut guard = 0;
    while feasible(hi).is_none() {
        lo = hi;
        hi *= 2.0;
        guard += 1;
        if guard > 24 {
            return Err(PlanError::InfeasibleEnvelope);
        }
    }
    while hi - lo > DURATION_RESOLUTION {
        let mid = 0.5 * (lo + hi);
        if feasible(mid).is_some() {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    feasible(hi).ok_or(PlanError::InfeasibleEnvelope)
}

/// Graph vertex: a boundary state, fully realized once reached.
#[derive(Debug, Clone)]
pub struct PlanVertex {
    pub state: MotionState,
    /// Full state assigned when the vertex is relaxed.
    pub realized: Option<FullState>,
}

/// Graph edge carrying the primitive that realizes it.
#[derive(Debug, Clone)]
pub struct PlanEdge {
    pub from: usize,
    pub to: usize,
    pub primitive: MotionPrimitive,
    pub cost: f64,
}

/// Directed acyclic plan graph with explicit edges.
#[derive(Debug, Clone, Default)]
pub struct PlanGraph {
    pub vertices: Vec<PlanVertex>,
    pub edges: Vec<PlanEdge>,
}

impl PlanGraph {
    pub fn add_vertex(&mut self, state: MotionState) -> usize {
        self.vertices.push(PlanVertex {
            state,
            realized: None,
        });
        self.vertices.len() - 1
    }

    pub fn add_edge(&mut self, from: usize, to: usize, primitive: MotionPrimitive, cost: f64) {
        self.edges.push(PlanEdge {
            from,
            to,
            primitive,
            cost,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    cost: f64,
    vertex: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on cost; ties broken on the vertex index for determinism.
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap()
            .then(other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra over a [`PlanGraph`]: cheapest edge path from `start` to any of
/// `goals`. Returns the vertex path and its cost.
pub fn dijkstra(graph: &PlanGraph, start: usize, goals: &[usize]) -> Option<(Vec<usize>, f64)> {
    let n = graph.vertices.len();
    let mut adjacency: Vec<Vec<usize>> = alloc::vec![Vec::new(); n];
    for (e, edge) in graph.edges.iter().enumerate() {
        adjacency[edge.from].push(e);
    }
    let mut dist = alloc::vec![f64::INFINITY; n];
    let mut prev = alloc::vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    dist[start] = 0.0;
    heap.push(HeapEntry {
        cost: 0.0,
        vertex: start,
    });
    while let Some(HeapEntry { cost, vertex }) = heap.pop() {
        if cost > dist[vertex] {
            continue;
        }
        for &e in &adjacency[vertex] {
            let edge = &graph.edges[e];
            let next = cost + edge.cost;
            if next < dist[edge.to] {
                dist[edge.to] = next;
                prev[edge.to] = vertex;
                heap.push(HeapEntry {
                    cost: next,
                    vertex: edge.to,
                });
            }
        }
    }
    let best = goals
        .iter()
        .copied()
        .filter(|&g| dist[g].is_finite())
        .min_by(|&a, &b| dist[a].partial_cmp(&dist[b]).unwrap().then(a.cmp(&b)))?;
    let mut path = alloc::vec![best];
    let mut v = best;
    while v != start {
        v = prev[v];
        path.push(v);
    }
    path.reverse();
    Some((path, dist[best]))
}

/// Flight modes of the landing mission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlightMode {
    Search,
    Follow,
    FinalApproach,
}

/// End-state shaping for the active mode.
#[derive(Debug, Clone, Copy)]
pub struct ModeReference {
    pub mode: FlightMode,
    /// Search: fixed hover setpoint; tracker-independent.
    pub hover: Option<Vec3>,
    /// Height above the predicted platform position for end states, m.
    pub z_offset: f64,
    /// Planar end velocity matches the prediction.
    pub match_velocity: bool,
    /// Final-approach descent rate at contact (positive down), m/s.
    pub touchdown_vz: Option<f64>,
}

/// Planner tuning.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PlannerConfig {
    /// Seconds between interception candidates along the prediction.
    pub candidate_interval: f64,
    /// Seconds between end vertices along the prediction.
    pub end_interval: f64,
    /// Exponent of the distance multiplier on start edges.
    pub intercept_cost_exponent: f64,
    /// Search hover height above the path center, m.
    pub search_height: f64,
    /// Follow height above the platform, m.
    pub follow_height: f64,
    /// Final-approach height offset above the platform top, m.
    pub final_height: f64,
    /// Commanded descent rate at contact, m/s (must stay below 0.75).
    pub touchdown_vz: f64,
    /// Forward-prediction horizon fed to the planner, s.
    pub prediction_horizon: f64,
    /// Prediction sample interval, s.
    pub prediction_dt: f64,
    /// Particles propagated in the forward prediction.
    pub prediction_subsample: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            candidate_interval: 0.25,
            end_interval: 0.25,
            intercept_cost_exponent: 3.0,
            search_height: 10.0,
            follow_height: 2.0,
            final_height: 0.05,
            touchdown_vz: 0.5,
            prediction_horizon: 6.0,
            prediction_dt: 0.15,
            prediction_subsample: 30,
        }
    }
}

/// Build the mode reference. Follow and final approach require convergence.
pub fn mode_reference(
    mode: FlightMode,
    tracker_converged: bool,
    path_center: crate::geom::Vec2,
    config: &PlannerConfig,
) -> Result<ModeReference, PlanError> {
    match mode {
        FlightMode::Search => Ok(ModeReference {
            mode,
            hover: Some(Vec3::new(
                path_center.x,
                path_center.y,
                config.search_height,
            )),
            z_offset: config.search_height,
            match_velocity: false,
            touchdown_vz: None,
        }),
        FlightMode::Follow => {
            if !tracker_converged {
                return Err(PlanError::ModeRequiresConvergence);
            }
            Ok(ModeReference {
                mode,
                hover: None,
                z_offset: config.follow_height,
                match_velocity: true,
                touchdown_vz: None,
            })
        }
        FlightMode::FinalApproach => {
            if !tracker_converged {
                return Err(PlanError::ModeRequiresConvergence);
            }
            Ok(ModeReference {
                mode,
                hover: None,
                z_offset: config.final_height,
                match_velocity: true,
                touchdown_vz: Some(config.touchdown_vz),
            })
        }
    }
}

/// A planned interception: primitives laid head to tail from the start time.
#[derive(Debug, Clone)]
pub struct LandingPlan {
    /// `(absolute start time, primitive)` per leg.
    pub legs: Vec<(f64, MotionPrimitive)>,
    /// Absolute time at which the plan reaches its end vertex.
    pub end_time: f64,
    /// Chosen vertex path in the plan graph.
    pub path: Vec<usize>,
    /// Total Dijkstra cost of the chosen path.
    pub cost: f64,
}

impl LandingPlan {
    /// Sample the plan at an absolute time; clamps to the boundary states.
    pub fn state_at(&self, t: f64) -> FullState {
        let (leg_start, leg) = match self
            .legs
            .iter()
            .rev()
            .find(|(s, _)| t >= *s)
            .or_else(|| self.legs.first())
        {
            Some(l) => (l.0, &l.1),
            None => return FullState::at_rest(t, Vec3::zeros()),
        };
        let mut s = leg.state_at(t - leg_start);
        s.t = t;
        s
    }
}

/// Plan an interception of the predicted trajectory under the mode reference.
///
/// Vertices: the current state, one position-only interception candidate
/// above every `candidate_interval` of the prediction, and fully constrained
/// end states every `end_interval`. Start edges use the fastest primitive and
/// cost `duration * l^3`; onward edges use fixed-time minimum-jerk primitives
/// with cost `duration` and must respect the envelope.
pub fn plan_landing(
    current: &FullState,
    prediction: &PredictedTrajectory,
    reference: &ModeReference,
    envelope: &FlightEnvelope,
    config: &PlannerConfig,
) -> Result<LandingPlan, PlanError> {
    if prediction.samples.is_empty() {
        return Err(PlanError::NoFeasibleEnd);
    }
    let samples = &prediction.samples;
    let dt = if samples.len() > 1 {
        Float::max(samples[1][0] - samples[0][0], 1e-6)
    } else {
        0.1
    };
    let candidate_stride = Float::max(Float::round(config.candidate_interval / dt), 1.0) as usize;
    let end_stride = Float::max(Float::round(config.end_interval / dt), 1.0) as usize;

    // Planar velocity (and acceleration) of the prediction by central
    // differences; used for velocity-matched end states.
    let vel_at = |i: usize| -> Vec3 {
        let (a, b) = (i.saturating_sub(1), (i + 1).min(samples.len() - 1));
        if b == a {
            return Vec3::zeros();
        }
        let inv = 1.0 / (samples[b][0] - samples[a][0]);
        Vec3::new(
            (samples[b][1] - samples[a][1]) * inv,
            (samples[b][2] - samples[a][2]) * inv,
            0.0,
        )
    };
    let acc_at = |i: usize| -> Vec3 {
        let (a, b) = (i.saturating_sub(1), (i + 1).min(samples.len() - 1));
        if b <= a + 1 {
            return Vec3::zeros();
        }
        let inv = 1.0 / (samples[b][0] - samples[a][0]);
        (vel_at(b) - vel_at(a)) * inv
    };

    let mut graph = PlanGraph::default();
    let start = graph.add_vertex(MotionState {
        t: Some(current.t),
        ..MotionState::position(current.pos)
    });
    graph.vertices[start].realized = Some(*current);

    // Interception candidates above the prediction. Arriving at the target's
    // planar velocity keeps the onward minimum-jerk legs inside the envelope;
    // a position-only intercept would be reached at full speed.
    let mut candidates = Vec::new();
    for i in (0..samples.len()).step_by(candidate_stride) {
        let s = samples[i];
        let pos = Vec3::new(s[1], s[2], s[3] + reference.z_offset);
        let mut intercept = MotionState::position(pos);
        let v = vel_at(i);
        for k in 0..3 {
            intercept.axes[k].vel = Some(v[k]);
        }
        let vertex = graph.add_vertex(intercept);
        if let Ok(primitive) = fastest_primitive(current, &intercept, envelope) {
            let l = (pos - current.pos).norm();
            let cost = primitive.duration * Float::powf(l, config.intercept_cost_exponent);
            let arrival = current.t + primitive.duration;
            let realized = {
                let mut st = primitive.state_at(primitive.duration);
                st.t = arrival;
                st
            };
            graph.vertices[vertex].realized = Some(realized);
            graph.add_edge(start, vertex, primitive, cost);
            candidates.push(vertex);
        }
    }

    // End vertices: fully constrained states on the prediction.
    let mut goals = Vec::new();
    for i in (0..samples.len()).step_by(end_stride) {
        let s = samples[i];
        let pos = Vec3::new(s[1], s[2], s[3] + reference.z_offset);
        let vel = if reference.match_velocity {
            let mut v = vel_at(i);
            if let Some(vz) = reference.touchdown_vz {
                v.z = -vz;
            }
            v
        } else {
            Vec3::zeros()
        };
        let mut state = MotionState {
            t: Some(s[0]),
            ..MotionState::position(pos)
        };
        for k in 0..3 {
            state.axes[k].vel = Some(vel[k]);
        }
        if reference.touchdown_vz.is_some() {
            // Relative planar acceleration pinned to zero on final approach.
            let a = acc_at(i);
            state.axes[0].acc = Some(a.x);
            state.axes[1].acc = Some(a.y);
        }
        let vertex = graph.add_vertex(state);
        goals.push(vertex);

        for &cand in &candidates {
            let from = graph.vertices[cand]
                .realized
                .expect("candidates are realized");
            if s[0] <= from.t + 0.05 {
                continue;
            }
            if let Ok(primitive) = min_jerk_primitive(&from, &graph.vertices[vertex].state) {
                if primitive.within_envelope(envelope, 1e-9) {
                    graph.add_edge(cand, vertex, primitive, primitive.duration);
                }
            }
        }
    }

    let (path, cost) = dijkstra(&graph, start, &goals).ok_or(PlanError::NoFeasibleEnd)?;
    let mut legs = Vec::with_capacity(path.len() - 1);
    let mut t = current.t;
    for pair in path.windows(2) {
        let edge = graph
            .edges
            .iter()
            .find(|e| e.from == pair[0] && e.to == pair[1])
            .expect("path follows edges");
        legs.push((t, edge.primitive));
        t += edge.primitive.duration;
    }
    Ok(LandingPlan {
        legs,
        end_time: t,
        path,
        cost,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rest(pos: [f64; 3]) -> FullState {
        FullState::at_rest(0.0, Vec3::new(pos[0], pos[1], pos[2]))
    }

    #[test]
    fn rest_to_rest_is_the_classic_quintic() {
        let start = rest([0.0, 0.0, 0.0]);
        let mut end = MotionState::position(Vec3::new(1.0, 0.0, 0.0));
        end.t = Some(1.0);
        for k in 0..3 {
            end.axes[k].vel = Some(0.0);
            end.axes[k].acc = Some(0.0);
        }
        let p = min_jerk_primitive(&start, &end).unwrap();
        // x(t) = 10 t^3 - 15 t^4 + 6 t^5
        for t in [0.0, 0.2, 0.5, 0.8, 1.0] {
            let expect = 10.0 * t.powi(3) - 15.0 * t.powi(4) + 6.0 * t.powi(5);
            assert!((p.axes[0].pos(t) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_boundary_is_constant_with_zero_cost() {
        let start = FullState {
            t: 0.0,
            pos: Vec3::new(1.0, 2.0, 3.0),
            vel: Vec3::zeros(),
            acc: Vec3::zeros(),
        };
        let mut end = MotionState::position(start.pos);
        end.t = Some(2.5);
        for k in 0..3 {
            end.axes[k].vel = Some(0.0);
            end.axes[k].acc = Some(0.0);
        }
        let p = min_jerk_primitive(&start, &end).unwrap();
        for t in [0.0, 1.0, 2.5] {
            assert!((p.state_at(t).pos - start.pos).norm() < 1e-12);
        }
        assert!(p.jerk_cost() < 1e-18);
    }

    #[test]
    fn non_positive_duration_is_rejected() {
        let start = rest([0.0; 3]);
        let mut end = MotionState::position(Vec3::zeros());
        end.t = Some(0.0);
        assert_eq!(
            min_jerk_primitive(&start, &end).unwrap_err(),
            PlanError::NonPositiveDuration
        );
    }

    #[test]
    fn boundary_conditions_hold_across_all_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for mask in 1..8u8 {
            for _ in 0..50 {
                let start = FullState {
                    t: 0.0,
                    pos: Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
                    vel: Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0)),
                    acc: Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
                };
                let duration = rng.random_range(0.3..3.0);
                let mut end = MotionState {
                    t: Some(duration),
                    ..Default::default()
                };
                let (pf, vf, af) = (
                    Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
                    Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0)),
                    Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
                );
                for k in 0..3 {
                    if mask & 1 != 0 {
                        end.axes[k].pos = Some(pf[k]);
                    }
                    if mask & 2 != 0 {
                        end.axes[k].vel = Some(vf[k]);
                    }
                    if mask & 4 != 0 {
                        end.axes[k].acc = Some(af[k]);
                    }
                }
                let p = min_jerk_primitive(&start, &end).unwrap();
                let s0 = p.state_at(0.0);
                assert!((s0.pos - start.pos).norm() < 1e-9);
                assert!((s0.vel - start.vel).norm() < 1e-9);
                assert!((s0.acc - start.acc).norm() < 1e-9);
                let sf = p.state_at(duration);
                for k in 0..3 {
                    if mask & 1 != 0 {
                        assert!((sf.pos[k] - pf[k]).abs() < 1e-9);
                    }
                    if mask & 2 != 0 {
                        assert!((sf.vel[k] - vf[k]).abs() < 1e-9);
                    }
                    if mask & 4 != 0 {
                        assert!((sf.acc[k] - af[k]).abs() < 1e-9);
                    }
                }
            }
        }
    }

    /// Exact squared-jerk integral of an arbitrary polynomial trajectory.
    fn poly_jerk_cost(coeffs: &[f64], duration: f64) -> f64 {
        let mut jerk = alloc::vec![0.0; coeffs.len().saturating_sub(3)];
        for (i, j) in jerk.iter_mut().enumerate() {
            let k = i + 3;
            *j = coeffs[k] * (k * (k - 1) * (k - 2)) as f64;
        }
        let mut cost = 0.0;
        for (i, &a) in jerk.iter().enumerate() {
            for (j, &b) in jerk.iter().enumerate() {
                cost += a * b * duration.powi((i + j + 1) as i32) / (i + j + 1) as f64;
            }
        }
        cost
    }

    fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; a.len() + b.len() - 1];
        for (i, &x) in a.iter().enumerate() {
            for (j, &y) in b.iter().enumerate() {
                out[i + j] += x * y;
            }
        }
        out
    }

    #[test]
    fn jerk_cost_beats_boundary_respecting_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..1000 {
            let mask = rng.random_range(1..8u8);
            let start = FullState {
                t: 0.0,
                pos: Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0)),
                vel: Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0)),
                acc: Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)),
            };
            let duration: f64 = rng.random_range(0.5..2.0);
            let mut end = MotionState {
                t: Some(duration),
                ..Default::default()
            };
            for k in 0..3 {
                if mask & 1 != 0 {
                    end.axes[k].pos = Some(rng.random_range(-3.0..3.0));
                }
                if mask & 2 != 0 {
                    end.axes[k].vel = Some(rng.random_range(-2.0..2.0));
                }
                if mask & 4 != 0 {
                    end.axes[k].acc = Some(rng.random_range(-1.0..1.0));
                }
            }
            let p = min_jerk_primitive(&start, &end).unwrap();
            let base: f64 = p.jerk_cost();

            // Perturb one axis with t^3 (T-t)^3 * (random quadratic): zero
            // position, velocity and acceleration at both ends, so every
            // constraint case stays satisfied.
            let axis = rng.random_range(0..3usize);
            let bump = poly_mul(
                &[0.0, 0.0, 0.0, 1.0],
                &poly_mul(
                    &poly_mul(
                        &[duration, -1.0],
                        &poly_mul(&[duration, -1.0], &[duration, -1.0]),
                    ),
                    &[
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ],
                ),
            );
            let mut coeffs = alloc::vec![0.0; bump.len().max(6)];
            for (i, &c) in p.axes[axis].c.iter().enumerate() {
                coeffs[i] += c;
            }
            for (i, &c) in bump.iter().enumerate() {
                coeffs[i] += c;
            }
            let perturbed = poly_jerk_cost(&coeffs, duration)
                + p.axes
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != axis)
                    .map(|(_, a)| poly_jerk_cost(&a.c, duration))
                    .sum::<f64>();
            assert!(
                base <= perturbed + 1e-9,
                "optimal {base} must not exceed perturbed {perturbed}"
            );
        }
    }

    #[test]
    fn jerk_cost_beats_in_family_feasible_alternatives() {
        // Pin the free end quantities to values near (but off) the optimum's
        // own realized end state; exercises the free-end optimality
        // conditions directly.
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..1000 {
            let mask = rng.random_range(1..7u8); // at least one free quantity
            let start = rest([0.0, 0.0, 0.0]);
            let duration: f64 = rng.random_range(0.5..2.0);
            let mut end = MotionState {
                t: Some(duration),
                ..Default::default()
            };
            if mask & 1 != 0 {
                end.axes[0].pos = Some(rng.random_range(-3.0..3.0));
            }
            if mask & 2 != 0 {
                end.axes[0].vel = Some(rng.random_range(-2.0..2.0));
            }
            if mask & 4 != 0 {
                end.axes[0].acc = Some(rng.random_range(-1.0..1.0));
            }
            let p = min_jerk_primitive(&start, &end).unwrap();
            let base = p.jerk_cost();

            let sf = p.state_at(duration);
            let mut alt_end = end;
            alt_end.axes[0].pos = Some(
                end.axes[0]
                    .pos
                    .unwrap_or(sf.pos[0] + rng.random_range(-0.5..0.5)),
            );
            alt_end.axes[0].vel = Some(
                end.axes[0]
                    .vel
                    .unwrap_or(sf.vel[0] + rng.random_range(-0.5..0.5)),
            );
            alt_end.axes[0].acc = Some(
                end.axes[0]
                    .acc
                    .unwrap_or(sf.acc[0] + rng.random_range(-0.5..0.5)),
            );
            let alt = min_jerk_primitive(&start, &alt_end).unwrap();
            assert!(base <= alt.jerk_cost() + 1e-9);
        }
    }

    #[test]
    fn fastest_long_move_rides_the_velocity_limit() {
        let envelope = FlightEnvelope {
            v_max: 5.0,
            a_max: 5.0,
        };
        let start = rest([0.0; 3]);
        let mut end = MotionState::position(Vec3::new(50.0, 0.0, 0.0));
        for k in 0..3 {
            end.axes[k].vel = Some(0.0);
            end.axes[k].acc = Some(0.0);
        }
        let p = fastest_primitive(&start, &end, &envelope).unwrap();
        let (v, a) = p.peaks();
        assert!(v[0] <= envelope.v_max + 1e-6);
        assert!(v[0] >= 0.99 * envelope.v_max, "peak {} too low", v[0]);
        assert!(a[0] <= envelope.a_max + 1e-6);
    }

    #[test]
    fn fastest_zero_displacement_hits_resolution_floor() {
        let envelope = FlightEnvelope::default();
        let start = rest([1.0, 2.0, 3.0]);
        let mut end = MotionState::position(start.pos);
        for k in 0..3 {
            end.axes[k].vel = Some(0.0);
            end.axes[k].acc = Some(0.0);
        }
        let p = fastest_primitive(&start, &end, &envelope).unwrap();
        assert!(p.duration <= DURATION_RESOLUTION + 1e-12);
    }

    #[test]
    fn fastest_rejects_degenerate_envelope() {
        let start = rest([0.0; 3]);
        let end = MotionState::position(Vec3::new(1.0, 0.0, 0.0));
        let bad = FlightEnvelope {
            v_max: 0.0,
            a_max: 5.0,
        };
        assert_eq!(
            fastest_primitive(&start, &end, &bad).unwrap_err(),
            PlanError::InfeasibleEnvelope
        );
    }

    #[test]
    fn halving_acceleration_never_speeds_up() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..50 {
            let start = rest([0.0; 3]);
            let target = Vec3::from_fn(|_, _| rng.random_range(-20.0..20.0));
            let mut end = MotionState::position(target);
            for k in 0..3 {
                end.axes[k].vel = Some(0.0);
            }
            let a_max = rng.random_range(1.0..8.0);
            let full = FlightEnvelope { v_max: 5.0, a_max };
            let half = FlightEnvelope {
                v_max: 5.0,
                a_max: a_max / 2.0,
            };
            let t_full = fastest_primitive(&start, &end, &full).unwrap().duration;
            let t_half = fastest_primitive(&start, &end, &half).unwrap().duration;
            assert!(
                t_half >= t_full - DURATION_RESOLUTION,
                "t_half {t_half} < t_full {t_full}"
            );
        }
    }

    #[test]
    fn dijkstra_matches_exhaustive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let dummy = MotionPrimitive {
            axes: [AxisQuintic { c: [0.0; 6] }; 3],
            duration: 1.0,
        };
        for _ in 0..200 {
            let n = rng.random_range(4..=10usize);
            let mut graph = PlanGraph::default();
            for _ in 0..n {
                graph.add_vertex(MotionState::default());
            }
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random::<f64>() < 0.5 {
                        graph.add_edge(i, j, dummy, rng.random_range(0.1..10.0));
                    }
                }
            }
            let goals = [n - 1];
            let got = dijkstra(&graph, 0, &goals);

            fn enumerate(
                graph: &PlanGraph,
                v: usize,
                goal: usize,
                cost: f64,
                best: &mut Option<f64>,
            ) {
                if v == goal {
                    *best = Some(best.map_or(cost, |b: f64| b.min(cost)));
                    return;
                }
                for e in &graph.edges {
                    if e.from == v {
                        enumerate(graph, e.to, goal, cost + e.cost, best);
                    }
                }
            }
            let mut best = None;
            enumerate(&graph, 0, n - 1, 0.0, &mut best);
            match (got, best) {
                (None, None) => {}
                (Some((_, c)), Some(b)) => assert!((c - b).abs() < 1e-9, "{c} vs {b}"),
                (g, b) => panic!("reachability mismatch: {g:?} vs {b:?}"),
            }
        }
    }

    fn crossing_prediction() -> PredictedTrajectory {
        // Target drives past the vehicle along x at 4 m/s, starting 20 m out.
        let samples = (0..=80)
            .map(|k| {
                let t = k as f64 * 0.1;
                [t, -20.0 + 4.0 * t, 0.0, 0.3]
            })
            .collect();
        PredictedTrajectory { samples }
    }

    #[test]
    fn cube_weighting_intercepts_earlier_than_unit_weighting() {
        let current = FullState::at_rest(0.0, Vec3::new(0.0, 10.0, 8.0));
        let envelope = FlightEnvelope::default();
        let prediction = crossing_prediction();
        let reference = ModeReference {
            mode: FlightMode::Follow,
            hover: None,
            z_offset: 2.0,
            match_velocity: true,
            touchdown_vz: None,
        };
        let mut config = PlannerConfig::default();
        config.intercept_cost_exponent = 3.0;
        let cubed = plan_landing(&current, &prediction, &reference, &envelope, &config).unwrap();
        config.intercept_cost_exponent = 0.0;
        let unit = plan_landing(&current, &prediction, &reference, &envelope, &config).unwrap();
        let intercept_time = |p: &LandingPlan| p.legs[0].0 + p.legs[0].1.duration;
        assert!(
            intercept_time(&cubed) <= intercept_time(&unit) + 1e-9,
            "{} vs {}",
            intercept_time(&cubed),
            intercept_time(&unit)
        );
    }

    #[test]
    fn stationary_prediction_yields_pure_descent() {
        let prediction = PredictedTrajectory {
            samples: (0..=40)
                .map(|k| [k as f64 * 0.1, 3.0, -2.0, 0.3])
                .collect(),
        };
        let current = FullState::at_rest(0.0, Vec3::new(3.0, -2.0, 2.3));
        let reference = ModeReference {
            mode: FlightMode::FinalApproach,
            hover: None,
            z_offset: 0.05,
            match_velocity: true,
            touchdown_vz: Some(0.5),
        };
        let plan = plan_landing(
            &current,
            &prediction,
            &reference,
            &FlightEnvelope::default(),
            &PlannerConfig::default(),
        )
        .unwrap();
        let end = plan.state_at(plan.end_time);
        assert!((end.pos.x - 3.0).abs() < 1e-6);
        assert!((end.pos.y + 2.0).abs() < 1e-6);
        assert!((end.pos.z - 0.35).abs() < 1e-6);
        assert!(end.vel.z < 0.0 && end.vel.z > -0.75, "vz = {}", end.vel.z);
        // Descent only: planar motion negligible throughout.
        let mut t = 0.0;
        while t < plan.end_time {
            let s = plan.state_at(t);
            assert!((s.pos.x - 3.0).abs() < 0.05 && (s.pos.y + 2.0).abs() < 0.05);
            t += 0.05;
        }
    }

    #[test]
    fn plans_are_c2_continuous_and_inside_the_envelope() {
        let current = FullState {
            t: 0.0,
            pos: Vec3::new(5.0, 8.0, 9.0),
            vel: Vec3::new(-1.0, 0.5, 0.0),
            acc: Vec3::zeros(),
        };
        let envelope = FlightEnvelope::default();
        let prediction = crossing_prediction();
        let reference = ModeReference {
            mode: FlightMode::Follow,
            hover: None,
            z_offset: 2.0,
            match_velocity: true,
            touchdown_vz: None,
        };
        let plan = plan_landing(
            &current,
            &prediction,
            &reference,
            &envelope,
            &PlannerConfig::default(),
        )
        .unwrap();
        assert!(plan.legs.len() >= 2);
        for w in plan.legs.windows(2) {
            let (t0, ref a) = w[0];
            let (t1, ref b) = w[1];
            let ea = a.state_at(t1 - t0);
            let sb = b.state_at(0.0);
            assert!((ea.pos - sb.pos).norm() <= 1e-6);
            assert!((ea.vel - sb.vel).norm() <= 1e-6);
            assert!((ea.acc - sb.acc).norm() <= 1e-6);
        }
        for (_, leg) in &plan.legs {
            assert!(leg.within_envelope(&envelope, 1e-6));
        }
    }

    #[test]
    fn replanning_is_deterministic() {
        let current = FullState::at_rest(0.0, Vec3::new(0.0, 10.0, 8.0));
        let prediction = crossing_prediction();
        let reference = ModeReference {
            mode: FlightMode::Follow,
            hover: None,
            z_offset: 2.0,
            match_velocity: true,
            touchdown_vz: None,
        };
        let plan = || {
            plan_landing(
                &current,
                &prediction,
                &reference,
                &FlightEnvelope::default(),
                &PlannerConfig::default(),
            )
            .unwrap()
        };
        let (a, b) = (plan(), plan());
        assert_eq!(a.path, b.path);
        assert_eq!(a.cost, b.cost);
        assert_eq!(a.end_time, b.end_time);
    }

    #[test]
    fn empty_prediction_is_a_planning_error() {
        let current = FullState::at_rest(0.0, Vec3::zeros());
        let reference = ModeReference {
            mode: FlightMode::Follow,
            hover: None,
            z_offset: 2.0,
            match_velocity: false,
            touchdown_vz: None,
        };
        let r = plan_landing(
            &current,
            &PredictedTrajectory {
                samples: alloc::vec::Vec::new(),
            },
            &reference,
            &FlightEnvelope::default(),
            &PlannerConfig::default(),
        );
        assert_eq!(r.unwrap_err(), PlanError::NoFeasibleEnd);
    }

    #[test]
    fn mode_references_follow_the_contract() {
        let cfg = PlannerConfig::default();
        let center = crate::geom::Vec2::new(1.0, -2.0);
        let search = mode_reference(FlightMode::Search, false, center, &cfg).unwrap();
        assert_eq!(search.hover, Some(Vec3::new(1.0, -2.0, cfg.search_height)));
        assert_eq!(
            mode_reference(FlightMode::Follow, false, center, &cfg).unwrap_err(),
            PlanError::ModeRequiresConvergence
        );
        let follow = mode_reference(FlightMode::Follow, true, center, &cfg).unwrap();
        assert_eq!(follow.z_offset, 2.0);
        assert!(follow.match_velocity);
        let fa = mode_reference(FlightMode::FinalApproach, true, center, &cfg).unwrap();
        let vz = fa.touchdown_vz.unwrap();
        assert!(vz > 0.0 && vz < 0.75);
    }

    #[test]
    fn follow_reference_speed_matches_platform() {
        // 15 km/h platform crossing under the vehicle: velocity-matched end
        // states move at 4.1667 m/s.
        let speed = 15.0 / 3.6;
        let prediction = PredictedTrajectory {
            samples: (0..=80)
                .map(|k| {
                    let t = k as f64 * 0.1;
                    [t, -10.0 + speed * t, 0.0, 0.3]
                })
                .collect(),
        };
        let current = FullState::at_rest(0.0, Vec3::new(0.0, 5.0, 8.0));
        let reference = ModeReference {
            mode: FlightMode::Follow,
            hover: None,
            z_offset: 2.0,
            match_velocity: true,
            touchdown_vz: None,
        };
        let plan = plan_landing(
            &current,
            &prediction,
            &reference,
            &FlightEnvelope::default(),
            &PlannerConfig::default(),
        )
        .unwrap();
        let end = plan.state_at(plan.end_time);
        let planar = Float::hypot(end.vel.x, end.vel.y);
        assert!((planar - 4.1667).abs() < 1e-3, "planar speed {planar}");
    }
}
