//! Scenario configuration: everything that, together with a seed, fully
//! determines a mission run.

use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;

use crate::coverage;
use crate::detect::DetectorConfig;
use crate::geom::Vec2;
use crate::mission::{Ch1Config, ServoParams};
use crate::objects::{ColorClass, PerceptionConfig};
use crate::plan::{FlightEnvelope, PlannerConfig};
use crate::safety::SafetyConfig;
use crate::tracker::TrackerConfig;

/// Which mission profile a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum MissionKind {
    /// Track and land on the moving platform.
    Landing,
    /// Multi-agent object search, pickup and delivery.
    PickAndPlace,
}

/// Rectangular arena, axis aligned, meters.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ArenaConfig {
    pub width: f64,
    pub height: f64,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        ArenaConfig {
            width: 60.0,
            height: 90.0,
        }
    }
}

impl ArenaConfig {
    pub fn polygon(&self) -> Vec<Vec2> {
        alloc::vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(self.width, 0.0),
            Vec2::new(self.width, self.height),
            Vec2::new(0.0, self.height),
        ]
    }

    pub fn center(&self) -> Vec2 {
        Vec2::new(self.width * 0.5, self.height * 0.5)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= 0.0 && p.x <= self.width && p.y >= 0.0 && p.y <= self.height
    }
}

/// Platform track geometry.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PathConfig {
    /// Explicit control points; when empty an eight-shaped track sized by
    /// `eight_half_width`/`eight_half_height` is generated at the arena
    /// center.
    pub control_points: Vec<[f64; 2]>,
    pub closed: bool,
    /// Cache resolution, m.
    pub resolution: f64,
    pub eight_half_width: f64,
    pub eight_half_height: f64,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            control_points: Vec::new(),
            closed: true,
            resolution: 0.05,
            eight_half_width: 25.0,
            eight_half_height: 12.5,
        }
    }
}

impl PathConfig {
    pub fn points(&self, arena: &ArenaConfig) -> Vec<Vec2> {
        if self.control_points.is_empty() {
            eight_path_control_points(
                self.eight_half_width,
                self.eight_half_height,
                arena.center(),
            )
        } else {
            self.control_points
                .iter()
                .map(|p| Vec2::new(p[0], p[1]))
                .collect()
        }
    }
}

/// Control points of an eight-shaped track (lemniscate of Gerono) sized to
/// the arena, suitable for a closed spline fit.
pub fn eight_path_control_points(half_width: f64, half_height: f64, center: Vec2) -> Vec<Vec2> {
    let n = 16;
    (0..n)
        .map(|k| {
            let t = k as f64 / n as f64 * core::f64::consts::TAU;
            let (s, c) = Float::sin_cos(t);
            center + Vec2::new(half_width * s, half_height * s * c)
        })
        .collect()
}

/// The moving landing platform.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PlatformConfig {
    /// Constant speed along the track, km/h.
    pub speed_kmh: f64,
    /// Top surface height above ground, m.
    pub height: f64,
    /// Square side length, m.
    pub side: f64,
    /// Cross stroke width on the marking, m.
    pub cross_width: f64,
    /// Cross bar half-length, m.
    pub cross_half_length: f64,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            speed_kmh: 15.0,
            height: 0.3,
            side: 1.5,
            cross_width: 0.15,
            cross_half_length: 0.5,
        }
    }
}

impl PlatformConfig {
    pub fn speed(&self) -> f64 {
        self.speed_kmh / 3.6
    }
}

/// Pickup objects on the field.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ObjectSetConfig {
    pub n_static: usize,
    pub n_moving: usize,
    /// Colors cycled over the spawned objects.
    pub colors: Vec<ColorClass>,
    /// Maximum mover speed, km/h.
    pub max_speed_kmh: f64,
    /// Disc diameter, m.
    pub diameter: f64,
}

impl Default for ObjectSetConfig {
    fn default() -> Self {
        ObjectSetConfig {
            n_static: 10,
            n_moving: 6,
            colors: alloc::vec![
                ColorClass::Red,
                ColorClass::Green,
                ColorClass::Blue,
                ColorClass::Yellow,
                ColorClass::Orange,
            ],
            max_speed_kmh: 5.0,
            diameter: 0.2,
        }
    }
}

/// Vehicle dynamics and fleet layout.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AgentConfig {
    pub count: usize,
    /// Start positions; missing entries are laid out along the arena edge.
    pub start_positions: Vec<[f64; 3]>,
    /// First-order command-tracking lag, s.
    pub lag_tau: f64,
    /// Position feedback gain when tracking trajectories, 1/s.
    pub kp: f64,
    /// How far ahead of now a followed trajectory is sampled, s. Must cover
    /// the command lag or the vehicle never builds up speed.
    pub track_lookahead: f64,
    /// Battery endurance, s of flight.
    pub battery_s: f64,
    /// Constant wind acceleration disturbance, m/s^2.
    pub wind: [f64; 3],
    /// Gripper tip offset below the vehicle origin, m.
    pub gripper_length: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            count: 1,
            start_positions: Vec::new(),
            lag_tau: 0.3,
            kp: 2.0,
            track_lookahead: 0.4,
            battery_s: 1200.0,
            wind: [0.0; 3],
            gripper_length: 0.3,
        }
    }
}

/// Camera intrinsics and rates for the synthetic sensors.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SensorConfig {
    pub fx: f64,
    pub fy: f64,
    pub image_width: f64,
    pub image_height: f64,
    /// Camera frame rate, Hz.
    pub camera_rate: f64,
    /// Lidar rate, Hz.
    pub lidar_rate: f64,
    /// Endpoint pixel noise sigma, px.
    pub pixel_sigma: f64,
    /// Probability that a visible platform yields no segments in a frame.
    pub dropout: f64,
    /// Mean number of clutter segments per frame.
    pub clutter_rate: f64,
    /// Object detection false negative probability.
    pub miss_rate: f64,
    /// Mean number of false-positive object detections per frame.
    pub false_positive_rate: f64,
    /// Quadratic growth of pixel noise toward the image boundary.
    pub boundary_noise_gain: f64,
    /// Additional pixel noise growth per meter of altitude above 4 m.
    pub altitude_noise_gain: f64,
    /// Odometry position noise sigma, m (0 = ground truth).
    pub odometry_sigma: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        SensorConfig {
            fx: 350.0,
            fy: 350.0,
            image_width: 752.0,
            image_height: 480.0,
            camera_rate: 50.0,
            lidar_rate: 100.0,
            pixel_sigma: 0.5,
            dropout: 0.05,
            clutter_rate: 3.0,
            miss_rate: 0.05,
            false_positive_rate: 0.2,
            boundary_noise_gain: 2.0,
            altitude_noise_gain: 0.1,
            odometry_sigma: 0.0,
        }
    }
}

/// Coverage planning knobs.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CoverageConfig {
    /// Camera lateral field of view, degrees.
    pub fov_deg: f64,
    /// Sweep overlap fraction.
    pub overlap: f64,
    /// Exploration altitude of the first agent, m.
    pub base_altitude: f64,
    /// Altitude separation between agents, m.
    pub altitude_step: f64,
    /// Waypoint speed limit, m/s.
    pub v_max: f64,
    /// Waypoint acceleration limit, m/s^2.
    pub a_max: f64,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            fov_deg: 60.0,
            overlap: 0.1,
            base_altitude: 5.0,
            altitude_step: 1.5,
            v_max: 2.0,
            a_max: 4.0,
        }
    }
}

impl CoverageConfig {
    pub fn sweep_distance(&self) -> f64 {
        coverage::sweep_distance(
            self.base_altitude,
            self.fov_deg.to_radians(),
            self.overlap,
        )
    }
}

/// Inter-agent communication and separation.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MultiAgentConfig {
    /// Minimum separation distance, m.
    pub d_min: f64,
    /// Guard engagement margin beyond `d_min`, m.
    pub margin: f64,
    /// Odometry broadcast rate, Hz.
    pub odometry_rate: f64,
    /// Age beyond which shared odometry is ignored, s.
    pub stale_after: f64,
    /// Probability that any network message is lost.
    pub network_loss: f64,
    /// Consecutive unreachable semaphore polls before the fallback drop.
    pub unreachable_limit: u32,
}

impl Default for MultiAgentConfig {
    fn default() -> Self {
        MultiAgentConfig {
            d_min: 3.0,
            margin: 1.0,
            odometry_rate: 5.0,
            stale_after: 2.0,
            network_loss: 0.0,
            unreachable_limit: 5,
        }
    }
}

/// Drop box and dropping zone geometry.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct DropConfig {
    /// Hard-coded drop box position, m.
    pub box_position: [f64; 2],
    /// Capture radius of the box, m.
    pub box_radius: f64,
    /// Radius around the box that invalidates pickup targets, m.
    pub box_exclusion: f64,
    /// Waiting ring radius around the box, m.
    pub waiting_radius: f64,
    /// Release altitude above the box, m.
    pub drop_height: f64,
    /// Dropping zone rectangle `[x0, y0, x1, y1]`; the semaphore fallback
    /// releases anywhere inside it.
    pub dropping_zone: [f64; 4],
}

impl Default for DropConfig {
    fn default() -> Self {
        DropConfig {
            box_position: [30.0, 10.0],
            box_radius: 0.8,
            box_exclusion: 3.0,
            waiting_radius: 6.0,
            drop_height: 1.5,
            dropping_zone: [20.0, 0.0, 40.0, 20.0],
        }
    }
}

/// Gripper interaction model.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct GripConfig {
    /// Probability that a well-aligned attempt holds the object.
    pub p_grip: f64,
    /// Probability that contact sensing reports the wrong result.
    pub contact_error_rate: f64,
    /// Contact sensing enabled; when disabled, success is inferred after
    /// servoing.
    pub contact_sensing: bool,
    /// Lateral alignment tolerance, m.
    pub lateral_tolerance: f64,
    /// Vertical window above the object top that counts as touch, m.
    pub touch_window: f64,
    /// Pickup attempts allowed per target.
    pub attempt_limit: u32,
}

impl Default for GripConfig {
    fn default() -> Self {
        GripConfig {
            p_grip: 1.0,
            contact_error_rate: 0.0,
            contact_sensing: true,
            lateral_tolerance: 0.12,
            touch_window: 0.06,
            attempt_limit: 3,
        }
    }
}

/// Fault injections.
#[derive(Debug, Clone, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct FailureConfig {
    /// Constant arena-frame offset added to accepted platform detections
    /// before they reach the tracker.
    pub estimate_bias: Option<[f64; 2]>,
}

/// Points per delivered object color; zone deliveries score half.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ScoreConfig {
    pub red: u32,
    pub green: u32,
    pub blue: u32,
    pub yellow: u32,
    pub orange: u32,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            red: 1,
            green: 1,
            blue: 2,
            yellow: 2,
            orange: 3,
        }
    }
}

impl ScoreConfig {
    pub fn points(&self, color: ColorClass) -> u32 {
        match color {
            ColorClass::Red => self.red,
            ColorClass::Green => self.green,
            ColorClass::Blue => self.blue,
            ColorClass::Yellow => self.yellow,
            ColorClass::Orange => self.orange,
        }
    }
}

/// A complete scenario; together with a seed this fully determines a run.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ScenarioConfig {
    pub name: String,
    pub mission: MissionKind,
    /// Mission time limit, s.
    pub duration: f64,
    /// World integration step, s.
    pub world_dt: f64,
    /// Replan every n-th control tick.
    pub replan_every: u32,
    pub arena: ArenaConfig,
    pub path: PathConfig,
    pub platform: PlatformConfig,
    pub objects: ObjectSetConfig,
    pub agents: AgentConfig,
    pub sensors: SensorConfig,
    pub tracker: TrackerConfig,
    pub detector: DetectorConfig,
    pub planner: PlannerConfig,
    pub envelope: FlightEnvelope,
    pub safety: SafetyConfig,
    pub perception: PerceptionConfig,
    pub servo: ServoParams,
    pub ch1: Ch1Config,
    pub coverage: CoverageConfig,
    pub multi_agent: MultiAgentConfig,
    pub drop: DropConfig,
    pub grip: GripConfig,
    pub failures: FailureConfig,
    pub score: ScoreConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: String::from("default"),
            mission: MissionKind::Landing,
            duration: 600.0,
            world_dt: 0.01,
            replan_every: 1,
            arena: ArenaConfig::default(),
            path: PathConfig::default(),
            platform: PlatformConfig::default(),
            objects: ObjectSetConfig::default(),
            agents: AgentConfig::default(),
            sensors: SensorConfig::default(),
            tracker: TrackerConfig::default(),
            detector: DetectorConfig::default(),
            planner: PlannerConfig::default(),
            envelope: FlightEnvelope::default(),
            safety: SafetyConfig::default(),
            perception: PerceptionConfig::default(),
            servo: ServoParams::default(),
            ch1: Ch1Config::default(),
            coverage: CoverageConfig::default(),
            multi_agent: MultiAgentConfig::default(),
            drop: DropConfig::default(),
            grip: GripConfig::default(),
            failures: FailureConfig::default(),
            score: ScoreConfig::default(),
        }
    }
}

/// Validation problem: the offending field path and a message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub field: String,
    pub message: String,
}

impl core::fmt::Display for ValidationError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl core::error::Error for ValidationError {}

impl ScenarioConfig {
    /// Semantic validation beyond what deserialization enforces.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let err = |field: &str, message: &str| {
            Err(ValidationError {
                field: String::from(field),
                message: String::from(message),
            })
        };
        if !(self.world_dt > 0.0 && self.world_dt <= 0.1) {
            return err("world_dt", "must be in (0, 0.1] s");
        }
        if self.duration <= 0.0 {
            return err("duration", "must be positive");
        }
        if self.path.resolution <= 0.0 {
            return err("path.resolution", "must be positive");
        }
        if self.tracker.n_particles < 100 {
            return err("tracker.n_particles", "must be at least 100");
        }
        if !(self.tracker.convergence_mass > 0.0 && self.tracker.convergence_mass <= 1.0) {
            return err("tracker.convergence_mass", "must be in (0, 1]");
        }
        if self.platform.speed_kmh > 15.0 + 1e-9 {
            return err("platform.speed_kmh", "platform speed is capped at 15 km/h");
        }
        if self.objects.max_speed_kmh > 5.0 + 1e-9 {
            return err("objects.max_speed_kmh", "object speed is capped at 5 km/h");
        }
        if self.mission == MissionKind::PickAndPlace && !(1..=3).contains(&self.agents.count) {
            return err("agents.count", "pick-and-place missions support 1 to 3 agents");
        }
        if !(self.envelope.v_max > 0.0 && self.envelope.a_max > 0.0) {
            return err("envelope", "limits must be positive");
        }
        if self.planner.touchdown_vz >= 0.75 {
            return err(
                "planner.touchdown_vz",
                "touchdown speed must stay below 0.75 m/s",
            );
        }
        if !(self.coverage.fov_deg > 0.0 && self.coverage.fov_deg < 180.0) {
            return err("coverage.fov_deg", "must be in (0, 180) degrees");
        }
        if !(0.0..1.0).contains(&self.coverage.overlap) {
            return err("coverage.overlap", "must be in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.multi_agent.network_loss) {
            return err("multi_agent.network_loss", "must be a probability");
        }
        if !(0.0..=1.0).contains(&self.grip.p_grip) {
            return err("grip.p_grip", "must be a probability");
        }
        Ok(())
    }
}
