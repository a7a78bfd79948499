//! Ground-truth world and synthetic sensors.
//!
//! The world holds the platform on its track, the pickup objects and the
//! vehicles. Vehicles follow held velocity commands through an exactly
//! integrated first-order lag, so stepping is invariant to the step
//! subdivision for noise-free kinematics. Sensors sample the ground truth
//! with configurable error models and are the only consumers of randomness
//! during stepping.

use alloc::vec::Vec;

use nalgebra::{Isometry3, Translation3, UnitQuaternion};
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::detect::LineSegment;
use crate::geom::{perp, rotate2, CameraView, Iso3, Vec2, Vec3};
use crate::objects::{ColorClass, PixelDetection, ShapeClass};
use crate::path::PathCache;
use crate::safety::LidarBeam;
use crate::scenario::ScenarioConfig;

/// Where an object currently is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ObjectPlace {
    Field,
    Gripped(usize),
    DropBox,
    DroppingZone,
}

/// A pickup object: a thin disc on the ground.
#[derive(Debug, Clone)]
pub struct ObjectState {
    pub id: usize,
    pub color: ColorClass,
    pub diameter: f64,
    /// Disc center, arena frame; z = 0 on the ground.
    pub pos: Vec3,
    pub vel_xy: Vec2,
    pub moving: bool,
    pub place: ObjectPlace,
}

/// A vehicle with held velocity command and first-order tracking lag.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub pos: Vec3,
    pub vel: Vec3,
    /// Held commanded velocity (zero-order hold between control ticks); the
    /// wind compensation is already folded in.
    cmd: Vec3,
    pub battery: f64,
    /// Flight time accumulated, s.
    pub flight_time: f64,
    /// Motors cut; the vehicle no longer tracks commands.
    pub landed: bool,
    /// Landed on the moving platform: rides along with it.
    pub riding_platform: bool,
    pub magnet_on: bool,
    pub gripped_object: Option<usize>,
    /// Set while resting on a surface this step.
    pub supported: bool,
}

/// Full ground truth.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub t: f64,
    /// Platform position as arc length along the track.
    pub platform_arc: f64,
    pub objects: Vec<ObjectState>,
    pub agents: Vec<AgentState>,
}

/// Platform pose derived from the track.
#[derive(Debug, Clone, Copy)]
pub struct PlatformPose {
    pub center: Vec2,
    /// Unit travel direction.
    pub heading: Vec2,
    /// Top surface height, m.
    pub top: f64,
}

pub fn platform_pose(world: &WorldState, cache: &PathCache, config: &ScenarioConfig) -> PlatformPose {
    let param = cache.arc_length_to_param(world.platform_arc);
    PlatformPose {
        center: cache.point_at(param),
        heading: cache.tangent_at(param),
        top: config.platform.height,
    }
}

/// Spawn the initial world: the platform at a random arc position, objects
/// scattered uniformly (outside the drop-box exclusion), agents at their
/// start positions.
pub fn init_world<R: Rng>(config: &ScenarioConfig, cache: &PathCache, rng: &mut R) -> WorldState {
    let platform_arc = rng.random_range(0.0..cache.total_length());
    let mut objects = Vec::new();
    let total = config.objects.n_static + config.objects.n_moving;
    let box_pos = Vec2::new(config.drop.box_position[0], config.drop.box_position[1]);
    for id in 0..total {
        let moving = id >= config.objects.n_static;
        let pos = loop {
            let p = Vec2::new(
                rng.random_range(2.0..config.arena.width - 2.0),
                rng.random_range(2.0..config.arena.height - 2.0),
            );
            if (p - box_pos).norm() > config.drop.box_exclusion + 1.0 {
                break p;
            }
        };
        let vel_xy = if moving {
            let speed = rng.random_range(0.3..config.objects.max_speed_kmh / 3.6);
            let angle = rng.random_range(0.0..core::f64::consts::TAU);
            rotate2(Vec2::new(speed, 0.0), angle)
        } else {
            Vec2::zeros()
        };
        objects.push(ObjectState {
            id,
            color: config.objects.colors[id % config.objects.colors.len()],
            diameter: config.objects.diameter,
            pos: Vec3::new(pos.x, pos.y, 0.0),
            vel_xy,
            moving,
            place: ObjectPlace::Field,
        });
    }

    let mut agents = Vec::new();
    for i in 0..config.agents.count {
        let pos = config
            .agents
            .start_positions
            .get(i)
            .map(|p| Vec3::new(p[0], p[1], p[2]))
            .unwrap_or(Vec3::new(
                5.0 + 6.0 * i as f64,
                2.0,
                0.0,
            ));
        agents.push(AgentState {
            pos,
            vel: Vec3::zeros(),
            cmd: Vec3::zeros(),
            battery: config.agents.battery_s,
            flight_time: 0.0,
            landed: false,
            riding_platform: false,
            magnet_on: false,
            gripped_object: None,
            supported: true,
        });
    }

    WorldState {
        t: 0.0,
        platform_arc,
        objects,
        agents,
    }
}

/// Set an agent's velocity command, respecting the envelope: the steady
/// state speed never exceeds `v_max` and the implied lag acceleration stays
/// within `a_max`.
pub fn set_velocity_command(
    world: &mut WorldState,
    agent: usize,
    desired: Vec3,
    config: &ScenarioConfig,
) {
    let tau = config.agents.lag_tau;
    let wind = Vec3::new(
        config.agents.wind[0],
        config.agents.wind[1],
        config.agents.wind[2],
    );
    let v_max = config.envelope.v_max;
    let a_max = config.envelope.a_max;
    let a = &mut world.agents[agent];
    // Clamp the equilibrium velocity, then bound the initial lag
    // acceleration (largest right after the switch, decaying after).
    let mut equilibrium = desired;
    let n = equilibrium.norm();
    if n > v_max {
        equilibrium *= v_max / n;
    }
    let jump = equilibrium - a.vel;
    let jn = jump.norm();
    let max_jump = a_max * tau;
    let equilibrium = if jn > max_jump {
        a.vel + jump * (max_jump / jn)
    } else {
        equilibrium
    };
    a.cmd = equilibrium - wind * tau;
}

/// Advance the world by `dt`: platform along the track, movers with boundary
/// reflection, vehicles through the exact lag integration, gripped objects
/// rigidly attached.
pub fn step_world(world: &mut WorldState, cache: &PathCache, config: &ScenarioConfig, dt: f64) {
    debug_assert!(dt > 0.0 && dt <= 0.1);
    let speed = config.platform.speed();
    world.platform_arc =
        num_traits::Euclid::rem_euclid(&(world.platform_arc + speed * dt), &cache.total_length());
    let platform = platform_pose(world, cache, config);

    for obj in &mut world.objects {
        if obj.moving && obj.place == ObjectPlace::Field {
            obj.pos.x += obj.vel_xy.x * dt;
            obj.pos.y += obj.vel_xy.y * dt;
            // Reflective arena boundaries.
            if obj.pos.x < 0.0 || obj.pos.x > config.arena.width {
                obj.vel_xy.x = -obj.vel_xy.x;
                obj.pos.x = obj.pos.x.clamp(0.0, config.arena.width);
            }
            if obj.pos.y < 0.0 || obj.pos.y > config.arena.height {
                obj.vel_xy.y = -obj.vel_xy.y;
                obj.pos.y = obj.pos.y.clamp(0.0, config.arena.height);
            }
        }
    }

    let tau = config.agents.lag_tau;
    let wind = Vec3::new(
        config.agents.wind[0],
        config.agents.wind[1],
        config.agents.wind[2],
    );
    let half_side = config.platform.side * 0.5;
    for agent in &mut world.agents {
        if agent.landed {
            if agent.riding_platform {
                agent.pos.x = platform.center.x;
                agent.pos.y = platform.center.y;
                agent.pos.z = platform.top;
                agent.vel = Vec3::new(
                    platform.heading.x * speed,
                    platform.heading.y * speed,
                    0.0,
                );
            }
            continue;
        }
        // Exact first-order lag toward the equilibrium velocity.
        let equilibrium = agent.cmd + wind * tau;
        let decay = Float::exp(-dt / tau);
        let old_vel = agent.vel;
        agent.vel = equilibrium + (old_vel - equilibrium) * decay;
        agent.pos += equilibrium * dt + (old_vel - equilibrium) * (tau * (1.0 - decay));

        // Solid surfaces: the platform top inside its footprint, ground
        // elsewhere.
        let rel = Vec2::new(agent.pos.x - platform.center.x, agent.pos.y - platform.center.y);
        let local = Vec2::new(
            rel.dot(&platform.heading),
            rel.dot(&perp(platform.heading)),
        );
        let over_platform =
            Float::abs(local.x) <= half_side && Float::abs(local.y) <= half_side;
        let floor = if over_platform { platform.top } else { 0.0 };
        agent.supported = false;
        if agent.pos.z <= floor {
            agent.pos.z = floor;
            if agent.vel.z < 0.0 {
                agent.vel.z = 0.0;
            }
            agent.supported = true;
        }
        agent.battery -= dt;
        agent.flight_time += dt;
    }

    // Gripped objects ride their agent's gripper tip exactly.
    for obj in &mut world.objects {
        if let ObjectPlace::Gripped(agent) = obj.place {
            let a = &world.agents[agent];
            obj.pos = a.pos - Vec3::new(0.0, 0.0, config.agents.gripper_length);
        }
    }

    world.t += dt;
}

/// Cut the motors. If the vehicle is resting on the platform it rides along.
pub fn motors_off(world: &mut WorldState, agent: usize, cache: &PathCache, config: &ScenarioConfig) {
    let platform = platform_pose(world, cache, config);
    let a = &mut world.agents[agent];
    a.landed = true;
    let rel = Vec2::new(a.pos.x - platform.center.x, a.pos.y - platform.center.y);
    let local = Vec2::new(rel.dot(&platform.heading), rel.dot(&perp(platform.heading)));
    let half = config.platform.side * 0.5;
    a.riding_platform = Float::abs(local.x) <= half
        && Float::abs(local.y) <= half
        && Float::abs(a.pos.z - platform.top) <= 0.1;
}

/// True when the agent is resting on the platform surface.
pub fn on_platform(world: &WorldState, agent: usize, cache: &PathCache, config: &ScenarioConfig) -> bool {
    let platform = platform_pose(world, cache, config);
    let a = &world.agents[agent];
    let rel = Vec2::new(a.pos.x - platform.center.x, a.pos.y - platform.center.y);
    let local = Vec2::new(rel.dot(&platform.heading), rel.dot(&perp(platform.heading)));
    let half = config.platform.side * 0.5;
    Float::abs(local.x) <= half
        && Float::abs(local.y) <= half
        && Float::abs(a.pos.z - platform.top) <= 0.05
}

/// Nadir camera rigidly attached below an agent.
pub fn camera_view(agent_pos: Vec3, config: &ScenarioConfig) -> CameraView {
    // Camera frame: z down, x along arena x, y along arena -y.
    let flip = UnitQuaternion::from_axis_angle(&nalgebra::Vector3::x_axis(), core::f64::consts::PI);
    let cam_in_arena = Isometry3::from_parts(
        Translation3::new(agent_pos.x, agent_pos.y, agent_pos.z),
        flip,
    );
    CameraView {
        fx: config.sensors.fx,
        fy: config.sensors.fy,
        cx: config.sensors.image_width * 0.5,
        cy: config.sensors.image_height * 0.5,
        width: config.sensors.image_width,
        height: config.sensors.image_height,
        pose: cam_in_arena.inverse(),
    }
}

fn noisy_px<R: Rng>(p: Vec2, sigma: f64, rng: &mut R) -> Vec2 {
    if sigma <= 0.0 {
        return p;
    }
    let n = Normal::new(0.0, sigma).expect("positive sigma");
    Vec2::new(p.x + n.sample(rng), p.y + n.sample(rng))
}

/// Project a world segment into the image; `None` unless both endpoints land
/// inside the frame.
fn project_segment<R: Rng>(
    view: &CameraView,
    a: Vec3,
    b: Vec3,
    sigma: f64,
    rng: &mut R,
) -> Option<LineSegment> {
    let pa = view.project(a)?;
    let pb = view.project(b)?;
    if !view.in_image(pa) || !view.in_image(pb) {
        return None;
    }
    let pa = noisy_px(pa, sigma, rng);
    let pb = noisy_px(pb, sigma, rng);
    if (pa - pb).norm() < 1e-6 {
        return None;
    }
    Some(LineSegment::new(pa, pb))
}

/// Synthetic platform segment frame: outline quad chained in order, the
/// cross stroke-edge segments, dropout and clutter.
pub fn sense_platform_segments<R: Rng>(
    world: &WorldState,
    cache: &PathCache,
    agent: usize,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Vec<LineSegment> {
    let view = camera_view(world.agents[agent].pos, config);
    let platform = platform_pose(world, cache, config);
    let mut segments = Vec::new();

    let dropout = rng.random::<f64>() < config.sensors.dropout;
    if !dropout {
        let sigma = config.sensors.pixel_sigma;
        let h = config.platform.side * 0.5;
        let z = platform.top;
        let to_world = |local: Vec2| -> Vec3 {
            let r = platform.center + rotate2(local, Float::atan2(platform.heading.y, platform.heading.x));
            Vec3::new(r.x, r.y, z)
        };
        // Outline: four sides chained corner to corner.
        let corners = [
            Vec2::new(-h, -h),
            Vec2::new(h, -h),
            Vec2::new(h, h),
            Vec2::new(-h, h),
        ];
        let mut outline = Vec::with_capacity(4);
        for i in 0..4 {
            match project_segment(
                &view,
                to_world(corners[i]),
                to_world(corners[(i + 1) % 4]),
                sigma,
                rng,
            ) {
                Some(seg) => outline.push(seg),
                None => {
                    outline.clear();
                    break;
                }
            }
        }
        segments.extend(outline);

        // Cross marking: two bars, each contributing two edge lines split at
        // the central gap.
        let bar = config.platform.cross_half_length;
        let w = config.platform.cross_width * 0.5;
        let mut strokes = Vec::with_capacity(8);
        for &edge in &[-w, w] {
            strokes.push((Vec2::new(-bar, edge), Vec2::new(-w, edge)));
            strokes.push((Vec2::new(w, edge), Vec2::new(bar, edge)));
            strokes.push((Vec2::new(edge, -bar), Vec2::new(edge, -w)));
            strokes.push((Vec2::new(edge, w), Vec2::new(edge, bar)));
        }
        for (a, b) in strokes {
            if let Some(seg) = project_segment(&view, to_world(a), to_world(b), sigma, rng) {
                segments.push(seg);
            }
        }
    }

    // Clutter segments, Poisson-distributed count.
    let n_clutter = poisson_knuth(config.sensors.clutter_rate, rng);
    for _ in 0..n_clutter {
        let a = Vec2::new(
            rng.random_range(0.0..config.sensors.image_width),
            rng.random_range(0.0..config.sensors.image_height),
        );
        let d = Vec2::new(rng.random_range(-80.0..80.0), rng.random_range(-80.0..80.0));
        if d.norm() > 2.0 {
            let b = a + d;
            if view.in_image(b) {
                segments.push(LineSegment::new(a, b));
            }
        }
    }
    segments
}

fn poisson_knuth<R: Rng>(lambda: f64, rng: &mut R) -> usize {
    if lambda <= 0.0 {
        return 0;
    }
    let limit = Float::exp(-lambda);
    let mut k = 0usize;
    let mut p = 1.0;
    loop {
        p *= rng.random::<f64>();
        if p <= limit {
            return k;
        }
        k += 1;
    }
}

/// Synthetic object detections with boundary- and altitude-scaled pixel
/// noise, misses and false positives.
pub fn sense_objects<R: Rng>(
    world: &WorldState,
    agent: usize,
    config: &ScenarioConfig,
    rng: &mut R,
) -> Vec<PixelDetection> {
    let view = camera_view(world.agents[agent].pos, config);
    let altitude = world.agents[agent].pos.z;
    let mut detections = Vec::new();
    for obj in &world.objects {
        if obj.place != ObjectPlace::Field {
            continue;
        }
        if rng.random::<f64>() < config.sensors.miss_rate {
            continue;
        }
        // Two points spanning the disc diameter along a per-object azimuth.
        let azimuth = obj.id as f64 * 2.399963;
        let dir = rotate2(Vec2::new(1.0, 0.0), azimuth) * (obj.diameter * 0.5);
        let w1 = obj.pos + Vec3::new(-dir.x, -dir.y, 0.0);
        let w2 = obj.pos + Vec3::new(dir.x, dir.y, 0.0);
        let (p1, p2) = match (view.project(w1), view.project(w2)) {
            (Some(a), Some(b)) if view.in_image(a) && view.in_image(b) => (a, b),
            _ => continue,
        };
        let frac = view.boundary_fraction((p1 + p2) * 0.5);
        let sigma = config.sensors.pixel_sigma
            * (1.0
                + config.sensors.boundary_noise_gain * frac * frac
                + config.sensors.altitude_noise_gain * Float::max(altitude - 4.0, 0.0));
        detections.push(PixelDetection {
            u1: noisy_px(p1, sigma, rng),
            u2: noisy_px(p2, sigma, rng),
            color: obj.color,
            shape: ShapeClass::SmallCircular,
            t: world.t,
        });
    }
    // False positives: clutter blobs, most classified as outliers, some as
    // implausibly sized small objects.
    let n_fp = poisson_knuth(config.sensors.false_positive_rate, rng);
    for _ in 0..n_fp {
        let c = Vec2::new(
            rng.random_range(10.0..config.sensors.image_width - 10.0),
            rng.random_range(10.0..config.sensors.image_height - 10.0),
        );
        let span = rng.random_range(2.0..40.0);
        let shape = if rng.random::<f64>() < 0.7 {
            ShapeClass::Outlier
        } else {
            ShapeClass::SmallCircular
        };
        detections.push(PixelDetection {
            u1: c - Vec2::new(span, 0.0),
            u2: c + Vec2::new(span, 0.0),
            color: ColorClass::Red,
            shape,
            t: world.t,
        });
    }
    detections
}

/// Downward Lidar beam: range to the platform top inside its footprint, to
/// the ground otherwise, with additive range noise.
pub fn sense_lidar<R: Rng>(
    world: &WorldState,
    cache: &PathCache,
    agent: usize,
    config: &ScenarioConfig,
    rng: &mut R,
) -> LidarBeam {
    let platform = platform_pose(world, cache, config);
    let a = &world.agents[agent];
    let rel = Vec2::new(a.pos.x - platform.center.x, a.pos.y - platform.center.y);
    let local = Vec2::new(rel.dot(&platform.heading), rel.dot(&perp(platform.heading)));
    let half = config.platform.side * 0.5;
    let surface = if Float::abs(local.x) <= half && Float::abs(local.y) <= half {
        platform.top
    } else {
        0.0
    };
    let noise = if config.safety.lidar_sigma > 0.0 {
        Normal::new(0.0, config.safety.lidar_sigma)
            .expect("positive sigma")
            .sample(rng)
    } else {
        0.0
    };
    let range = Float::max(a.pos.z - surface + noise, 0.01);
    let down = UnitQuaternion::from_axis_angle(&nalgebra::Vector3::x_axis(), core::f64::consts::PI);
    LidarBeam {
        range,
        lidar_in_body: Isometry3::from_parts(Translation3::identity(), down),
        body_in_arena: Isometry3::translation(a.pos.x, a.pos.y, a.pos.z),
    }
}

/// Ground-truth odometry with optional additive position noise.
pub fn sense_odometry<R: Rng>(
    world: &WorldState,
    agent: usize,
    config: &ScenarioConfig,
    rng: &mut R,
) -> (Vec3, Vec3) {
    let a = &world.agents[agent];
    if config.sensors.odometry_sigma > 0.0 {
        let n = Normal::new(0.0, config.sensors.odometry_sigma).expect("positive sigma");
        (
            a.pos + Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng)),
            a.vel,
        )
    } else {
        (a.pos, a.vel)
    }
}

/// Body pose of an agent as a rigid transform (level attitude).
pub fn body_in_arena(world: &WorldState, agent: usize) -> Iso3 {
    let p = world.agents[agent].pos;
    Isometry3::translation(p.x, p.y, p.z)
}

/// Result of a grip attempt.
#[derive(Debug, Clone, Copy)]
pub struct GripResult {
    pub gripped: bool,
    pub sensed_contact: bool,
    pub object: Option<usize>,
}

/// Attempt to grip the nearest field object under the gripper tip. Out of
/// tolerance attempts always fail; aligned attempts succeed with `p_grip`,
/// and the contact sense may disagree at the configured error rate.
pub fn attempt_grip<R: Rng>(
    world: &mut WorldState,
    agent: usize,
    config: &ScenarioConfig,
    rng: &mut R,
) -> GripResult {
    let tip = world.agents[agent].pos - Vec3::new(0.0, 0.0, config.agents.gripper_length);
    let candidate = world
        .objects
        .iter()
        .filter(|o| o.place == ObjectPlace::Field)
        .map(|o| {
            let lateral = (Vec2::new(o.pos.x, o.pos.y) - Vec2::new(tip.x, tip.y)).norm();
            (o.id, lateral, o.pos.z)
        })
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .filter(|&(_, lateral, oz)| {
            lateral <= config.grip.lateral_tolerance
                && tip.z - oz <= config.grip.touch_window
                && tip.z - oz >= -0.02
        });

    let Some((object, _, _)) = candidate else {
        return GripResult {
            gripped: false,
            sensed_contact: false,
            object: None,
        };
    };
    let gripped = rng.random::<f64>() < config.grip.p_grip;
    let sense_error = rng.random::<f64>() < config.grip.contact_error_rate;
    let sensed_contact = gripped != sense_error;
    if gripped {
        world.objects[object].place = ObjectPlace::Gripped(agent);
        world.agents[agent].gripped_object = Some(object);
    }
    GripResult {
        gripped,
        sensed_contact,
        object: Some(object),
    }
}

/// Release whatever the agent carries; the object lands where it is.
pub fn release_object(world: &mut WorldState, agent: usize, into: ObjectPlace) -> Option<usize> {
    let object = world.agents[agent].gripped_object.take()?;
    world.agents[agent].magnet_on = false;
    let obj = &mut world.objects[object];
    obj.place = into;
    obj.pos.z = 0.0;
    obj.vel_xy = Vec2::zeros();
    Some(object)
}
