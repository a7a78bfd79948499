//! Mission executives: the landing mission state machine, the
//! search/pick/place state machine with its six-stage servoing procedure,
//! the drop-box semaphore, and the reactive minimum-separation guard over
//! shared odometry.

use alloc::collections::VecDeque;
use alloc::vec::Vec;
use core::fmt;

use num_traits::Float;

use crate::geom::{Vec2, Vec3};
use crate::safety::ClearanceDecision;

/// Landing mission states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Ch1State {
    Search,
    Follow,
    Land,
    Abort,
}

impl fmt::Display for Ch1State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Ch1State::Search => "SEARCH",
            Ch1State::Follow => "FOLLOW",
            Ch1State::Land => "LAND",
            Ch1State::Abort => "ABORT",
        };
        write!(f, "{s}")
    }
}

/// What the landing executive wants the vehicle to do this step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ch1Command {
    /// Hover above the path center and wait for the tracker.
    SearchHover,
    /// Intercept and shadow the platform from above.
    FollowPlatform,
    /// Final-approach descent toward the predicted platform.
    DescendToPlatform,
    /// Clearance passed: commit to the fast descent.
    FastDescent,
    /// Contact: cut the motors.
    MotorsOff,
    /// Climb to the safety altitude before searching again.
    Climb,
}

/// Landing executive tuning.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct Ch1Config {
    /// Detection rate that qualifies as close-range lock, Hz.
    pub land_detection_rate: f64,
    /// Height above the platform below which the clearance gate rules, m.
    pub decision_height: f64,
    /// Abort climb altitude, m.
    pub safety_altitude: f64,
    /// Commanded sink rate of the final fast descent, m/s.
    pub fast_descent_rate: f64,
    /// Climb rate while aborting, m/s.
    pub climb_rate: f64,
    /// Proportional gain of the gradual landing descent, 1/s: the follow
    /// height shrinks at `gain * height`, clamped below.
    pub land_sink_gain: f64,
    /// Slowest gradual descent rate, m/s.
    pub land_sink_min: f64,
    /// Fastest gradual descent rate, m/s.
    pub land_sink_max: f64,
}

impl Default for Ch1Config {
    fn default() -> Self {
        Ch1Config {
            land_detection_rate: 7.0,
            decision_height: 1.0,
            safety_altitude: 8.0,
            fast_descent_rate: 0.6,
            climb_rate: 1.5,
            land_sink_gain: 0.8,
            land_sink_min: 0.7,
            land_sink_max: 3.5,
        }
    }
}

/// Per-step inputs to the landing executive.
#[derive(Debug, Clone, Copy)]
pub struct Ch1Inputs {
    pub tracker_converged: bool,
    /// Smoothed accepted-detection rate, Hz.
    pub detection_rate: f64,
    /// Vehicle altitude above ground, m.
    pub altitude: f64,
    /// Vehicle height above the estimated platform top, m.
    pub height_above_platform: f64,
    /// Latest clearance evaluation, when below the decision height.
    pub clearance: Option<ClearanceDecision>,
    /// Vehicle vertical velocity, m/s.
    pub vertical_velocity: f64,
}

/// Landing executive. Transition memory beyond the state enum: whether the
/// fast descent is committed and whether it has actually started sinking.
#[derive(Debug, Clone)]
pub struct Ch1Fsm {
    pub state: Ch1State,
    fast_descent: bool,
    sinking: bool,
}

impl Default for Ch1Fsm {
    fn default() -> Self {
        Ch1Fsm {
            state: Ch1State::Search,
            fast_descent: false,
            sinking: false,
        }
    }
}

impl Ch1Fsm {
    /// One executive step; total over all inputs.
    pub fn step(&mut self, inputs: &Ch1Inputs, config: &Ch1Config) -> Ch1Command {
        match self.state {
            Ch1State::Search => {
                if inputs.tracker_converged {
                    self.state = Ch1State::Follow;
                    Ch1Command::FollowPlatform
                } else {
                    Ch1Command::SearchHover
                }
            }
            Ch1State::Follow => {
                if !inputs.tracker_converged {
                    self.state = Ch1State::Abort;
                    Ch1Command::Climb
                } else if inputs.detection_rate > config.land_detection_rate {
                    self.state = Ch1State::Land;
                    Ch1Command::DescendToPlatform
                } else {
                    Ch1Command::FollowPlatform
                }
            }
            Ch1State::Land => {
                if !inputs.tracker_converged && !self.fast_descent {
                    self.abort();
                    return Ch1Command::Climb;
                }
                if inputs.height_above_platform <= config.decision_height {
                    match inputs.clearance {
                        Some(c) if c.clear => self.fast_descent = true,
                        Some(_) => {
                            // A failed safety check below the decision height
                            // always aborts, even mid fast-descent.
                            self.abort();
                            return Ch1Command::Climb;
                        }
                        None => {}
                    }
                }
                if self.fast_descent {
                    if inputs.vertical_velocity < -0.2 {
                        self.sinking = true;
                    }
                    if self.sinking && inputs.vertical_velocity >= -0.02 {
                        // Non-decreasing motion on the z-axis: touchdown.
                        return Ch1Command::MotorsOff;
                    }
                    Ch1Command::FastDescent
                } else {
                    Ch1Command::DescendToPlatform
                }
            }
            Ch1State::Abort => {
                if inputs.altitude >= config.safety_altitude - 0.2 {
                    self.state = Ch1State::Search;
                    Ch1Command::SearchHover
                } else {
                    Ch1Command::Climb
                }
            }
        }
    }

    fn abort(&mut self) {
        self.state = Ch1State::Abort;
        self.fast_descent = false;
        self.sinking = false;
    }

    pub fn in_fast_descent(&self) -> bool {
        self.fast_descent
    }
}

/// Search/pick/place mission states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Ch3State {
    TakeOff,
    Explore,
    PickUp,
    DropOff,
    Land,
}

impl fmt::Display for Ch3State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Ch3State::TakeOff => "TAKE_OFF",
            Ch3State::Explore => "EXPLORE",
            Ch3State::PickUp => "PICK_UP",
            Ch3State::DropOff => "DROP_OFF",
            Ch3State::Land => "LAND",
        };
        write!(f, "{s}")
    }
}

/// Drop-off sub-phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropPhase {
    /// Straight-line travel to the waiting point.
    Travel,
    /// Holding at the waiting point until the semaphore is granted.
    WaitSemaphore,
    /// Granted: approach the drop box and descend.
    Approach,
    /// Fallback: release inside the dropping zone without the semaphore.
    FallbackDrop,
}

/// Commands of the search/pick/place executive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ch3Command {
    /// Climb to the exploration altitude.
    Ascend,
    /// Follow the sweep plan.
    ExploreSweep,
    /// Run the servoing procedure on the locked target.
    Servo,
    /// Fly to the drop-box waiting point.
    GotoWaitingPoint,
    /// Hold and (re)request the semaphore.
    RequestSemaphore,
    /// Semaphore held: approach the box, descend and release.
    DropIntoBox,
    /// Semaphore unreachable: release inside the dropping zone.
    DropInZone,
    /// Low battery: return to the start position and land.
    ReturnAndLand,
}

/// Per-step inputs to the search/pick/place executive, computed by the agent
/// pipeline.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ch3Inputs {
    /// State-estimation consistency check (take-off gate).
    pub estimation_ok: bool,
    pub at_explore_altitude: bool,
    pub battery_low: bool,
    /// Closest valid target (in bounds, outside the drop box, attempts left).
    pub valid_target: Option<u32>,
    /// Set when the servoing procedure finished this step.
    pub pickup_finished: Option<bool>,
    pub at_waiting_point: bool,
    pub semaphore_held: bool,
    pub semaphore_unreachable: bool,
    /// Object release completed this step.
    pub dropped: bool,
}

/// Search/pick/place executive.
#[derive(Debug, Clone)]
pub struct Ch3Fsm {
    pub state: Ch3State,
    pub drop_phase: DropPhase,
    pub locked_target: Option<u32>,
}

impl Default for Ch3Fsm {
    fn default() -> Self {
        Ch3Fsm {
            state: Ch3State::TakeOff,
            drop_phase: DropPhase::Travel,
            locked_target: None,
        }
    }
}

impl Ch3Fsm {
    pub fn step(&mut self, inputs: &Ch3Inputs) -> Ch3Command {
        match self.state {
            Ch3State::TakeOff => {
                if inputs.estimation_ok && inputs.at_explore_altitude {
                    self.state = Ch3State::Explore;
                    Ch3Command::ExploreSweep
                } else {
                    Ch3Command::Ascend
                }
            }
            Ch3State::Explore => {
                if inputs.battery_low {
                    self.state = Ch3State::Land;
                    return Ch3Command::ReturnAndLand;
                }
                if let Some(id) = inputs.valid_target {
                    self.locked_target = Some(id);
                    self.state = Ch3State::PickUp;
                    return Ch3Command::Servo;
                }
                Ch3Command::ExploreSweep
            }
            Ch3State::PickUp => match inputs.pickup_finished {
                Some(true) => {
                    self.state = Ch3State::DropOff;
                    self.drop_phase = DropPhase::Travel;
                    Ch3Command::GotoWaitingPoint
                }
                Some(false) => {
                    self.locked_target = None;
                    self.state = Ch3State::Explore;
                    Ch3Command::ExploreSweep
                }
                None => Ch3Command::Servo,
            },
            Ch3State::DropOff => {
                if inputs.dropped {
                    self.locked_target = None;
                    self.state = Ch3State::Explore;
                    self.drop_phase = DropPhase::Travel;
                    return Ch3Command::ExploreSweep;
                }
                match self.drop_phase {
                    DropPhase::Travel => {
                        if inputs.at_waiting_point {
                            self.drop_phase = DropPhase::WaitSemaphore;
                            Ch3Command::RequestSemaphore
                        } else {
                            Ch3Command::GotoWaitingPoint
                        }
                    }
                    DropPhase::WaitSemaphore => {
                        if inputs.semaphore_held {
                            self.drop_phase = DropPhase::Approach;
                            Ch3Command::DropIntoBox
                        } else if inputs.semaphore_unreachable {
                            self.drop_phase = DropPhase::FallbackDrop;
                            Ch3Command::DropInZone
                        } else {
                            Ch3Command::RequestSemaphore
                        }
                    }
                    DropPhase::Approach => Ch3Command::DropIntoBox,
                    DropPhase::FallbackDrop => Ch3Command::DropInZone,
                }
            }
            Ch3State::Land => Ch3Command::ReturnAndLand,
        }
    }
}

/// The six servoing stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ServoStage {
    EnterCone,
    ConeDescent,
    FreeDescent,
    MagnetOn,
    BlindDescent,
    Picked,
}

/// Servoing geometry and limits.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ServoParams {
    /// Cone half-angle constraining the descent, rad.
    pub cone_half_angle: f64,
    /// Radius of the activation ball above the object, m.
    pub ball_radius: f64,
    /// Height above the object below which the descent is unconstrained, m.
    pub free_descent_height: f64,
    /// Height at which the magnet activates inside the ball, m.
    pub magnet_height: f64,
    /// Gripper-tip height above the object top that counts as touch, m.
    pub touch_height: f64,
    /// Lateral approach speed, m/s.
    pub lateral_speed: f64,
    /// Descent speed, m/s.
    pub descent_speed: f64,
    /// Servoing timeout, s.
    pub timeout: f64,
}

impl Default for ServoParams {
    fn default() -> Self {
        ServoParams {
            cone_half_angle: 20.0_f64 * core::f64::consts::PI / 180.0,
            ball_radius: 0.25,
            free_descent_height: 1.0,
            magnet_height: 0.4,
            touch_height: 0.03,
            lateral_speed: 1.5,
            descent_speed: 0.7,
            timeout: 20.0,
        }
    }
}

/// Per-step servoing inputs.
#[derive(Debug, Clone, Copy)]
pub struct ServoInputs {
    /// Tracked object position relative to the gripper tip (object - tip).
    pub rel: Vec3,
    /// The underlying track is still alive.
    pub track_alive: bool,
    /// Contact is sensed (or inferred) this step.
    pub contact: bool,
    /// Seconds since the servoing started.
    pub elapsed: f64,
}

/// Servoing command: a velocity setpoint and the magnet switch.
#[derive(Debug, Clone, Copy)]
pub struct ServoCommand {
    pub velocity: Vec3,
    pub magnet_on: bool,
}

/// Whether the procedure is still running.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServoVerdict {
    InProgress,
    Picked,
    /// Timeout or track loss; revert to exploration.
    Aborted,
}

/// One servoing step. The setpoints keep the vehicle inside a cone above the
/// object while descending; entering the activation ball switches the magnet
/// on, and the final blind descent runs on the last track state until
/// contact.
pub fn servo_step(
    stage: ServoStage,
    inputs: &ServoInputs,
    params: &ServoParams,
) -> (ServoStage, ServoCommand, ServoVerdict) {
    let hold = ServoCommand {
        velocity: Vec3::zeros(),
        magnet_on: stage >= ServoStage::MagnetOn,
    };
    if inputs.elapsed > params.timeout {
        return (stage, hold, ServoVerdict::Aborted);
    }
    if !inputs.track_alive && stage < ServoStage::BlindDescent {
        return (stage, hold, ServoVerdict::Aborted);
    }

    let lateral = Vec2::new(inputs.rel.x, inputs.rel.y);
    let e = lateral.norm();
    let height = -inputs.rel.z; // gripper above object
    let cone_limit = Float::max(height, 0.0) * Float::tan(params.cone_half_angle);
    let lateral_vel = if e > 1e-9 {
        let v = Float::min(params.lateral_speed, e * 2.0);
        Vec2::new(lateral.x / e * v, lateral.y / e * v)
    } else {
        Vec2::zeros()
    };

    match stage {
        ServoStage::EnterCone => {
            let next = if e <= cone_limit {
                ServoStage::ConeDescent
            } else {
                ServoStage::EnterCone
            };
            (
                next,
                ServoCommand {
                    velocity: Vec3::new(lateral_vel.x, lateral_vel.y, 0.0),
                    magnet_on: false,
                },
                ServoVerdict::InProgress,
            )
        }
        ServoStage::ConeDescent => {
            // Outside the cone: halt the descent, correct laterally first.
            let vz = if e > cone_limit {
                0.0
            } else {
                -params.descent_speed
            };
            let next = if height <= params.free_descent_height && e <= params.ball_radius {
                ServoStage::FreeDescent
            } else {
                ServoStage::ConeDescent
            };
            (
                next,
                ServoCommand {
                    velocity: Vec3::new(lateral_vel.x, lateral_vel.y, vz),
                    magnet_on: false,
                },
                ServoVerdict::InProgress,
            )
        }
        ServoStage::FreeDescent => {
            let inside_ball = e <= params.ball_radius && height <= params.magnet_height;
            let next = if inside_ball {
                ServoStage::MagnetOn
            } else {
                ServoStage::FreeDescent
            };
            (
                next,
                ServoCommand {
                    velocity: Vec3::new(lateral_vel.x, lateral_vel.y, -params.descent_speed),
                    magnet_on: false,
                },
                ServoVerdict::InProgress,
            )
        }
        ServoStage::MagnetOn => (
            ServoStage::BlindDescent,
            ServoCommand {
                velocity: Vec3::new(lateral_vel.x, lateral_vel.y, -params.descent_speed * 0.5),
                magnet_on: true,
            },
            ServoVerdict::InProgress,
        ),
        ServoStage::BlindDescent => {
            if inputs.contact || height <= params.touch_height {
                (
                    ServoStage::Picked,
                    ServoCommand {
                        velocity: Vec3::zeros(),
                        magnet_on: true,
                    },
                    ServoVerdict::Picked,
                )
            } else {
                (
                    ServoStage::BlindDescent,
                    ServoCommand {
                        velocity: Vec3::new(lateral_vel.x, lateral_vel.y, -params.descent_speed * 0.5),
                        magnet_on: true,
                    },
                    ServoVerdict::InProgress,
                )
            }
        }
        ServoStage::Picked => (
            ServoStage::Picked,
            ServoCommand {
                velocity: Vec3::zeros(),
                magnet_on: true,
            },
            ServoVerdict::Picked,
        ),
    }
}

/// Clamp the commanded velocity so that no component closes on a live peer
/// within the separation bubble. Odometry older than `stale_after` is treated
/// as absent.
pub fn separation_guard(
    own_pos: Vec3,
    commanded: Vec3,
    peers: &[(Vec3, f64)],
    d_min: f64,
    margin: f64,
    stale_after: f64,
) -> Vec3 {
    let mut v = commanded;
    for &(peer, age) in peers {
        if age > stale_after {
            continue;
        }
        let offset = peer - own_pos;
        let dist = offset.norm();
        if dist < d_min + margin && dist > 1e-9 {
            let toward = offset / dist;
            let closing = v.dot(&toward);
            if closing > 0.0 {
                v -= toward * closing;
            }
        }
    }
    v
}

/// Events recorded by the semaphore service.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum SemaphoreEvent {
    Requested { t: f64, agent: usize },
    Granted { t: f64, agent: usize },
    Released { t: f64, agent: usize },
    ProtocolError { t: f64, agent: usize },
}

/// Client-side acquire outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcquireOutcome {
    Granted,
    Queued,
    /// The request never reached the service.
    Unreachable,
}

/// Client-side release outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseOutcome {
    Released,
    /// Protocol error: logged by the service and ignored.
    NotHolder,
    Unreachable,
}

/// Mutual-exclusion service for the drop container. At most one holder at
/// any time; waiting requesters are granted in FIFO order. Message loss can
/// only delay grants, never duplicate them: re-acquire by the current holder
/// is idempotent, so a lost grant response is recovered by the next retry.
#[derive(Debug, Clone, Default)]
pub struct SemaphoreService {
    holder: Option<usize>,
    queue: VecDeque<usize>,
    pub log: Vec<SemaphoreEvent>,
}

impl SemaphoreService {
    pub fn holder(&self) -> Option<usize> {
        self.holder
    }

    pub fn acquire(&mut self, t: f64, agent: usize, reachable: bool) -> AcquireOutcome {
        if !reachable {
            return AcquireOutcome::Unreachable;
        }
        self.log.push(SemaphoreEvent::Requested { t, agent });
        match self.holder {
            Some(h) if h == agent => AcquireOutcome::Granted,
            Some(_) => {
                if !self.queue.contains(&agent) {
                    self.queue.push_back(agent);
                }
                AcquireOutcome::Queued
            }
            None => {
                // Head of the queue has priority over a walk-in requester.
                match self.queue.front() {
                    Some(&head) if head != agent => {
                        if !self.queue.contains(&agent) {
                            self.queue.push_back(agent);
                        }
                        AcquireOutcome::Queued
                    }
                    _ => {
                        self.queue.pop_front();
                        self.holder = Some(agent);
                        self.log.push(SemaphoreEvent::Granted { t, agent });
                        AcquireOutcome::Granted
                    }
                }
            }
        }
    }

    pub fn release(&mut self, t: f64, agent: usize, reachable: bool) -> ReleaseOutcome {
        if !reachable {
            return ReleaseOutcome::Unreachable;
        }
        if self.holder == Some(agent) {
            self.holder = None;
            self.log.push(SemaphoreEvent::Released { t, agent });
            ReleaseOutcome::Released
        } else {
            self.log.push(SemaphoreEvent::ProtocolError { t, agent });
            ReleaseOutcome::NotHolder
        }
    }
}

/// Check a semaphore log for mutual exclusion: grant/release intervals of
/// different agents never overlap.
pub fn log_is_mutually_exclusive(log: &[SemaphoreEvent]) -> bool {
    let mut holder: Option<usize> = None;
    for event in log {
        match *event {
            SemaphoreEvent::Granted { agent, .. } => match holder {
                Some(h) if h != agent => return false,
                _ => holder = Some(agent),
            },
            SemaphoreEvent::Released { agent, .. } => {
                if holder == Some(agent) {
                    holder = None;
                }
            }
            _ => {}
        }
    }
    true
}
