//! Path-constrained particle filter for the moving landing platform.
//!
//! Each particle carries a planar position and a travel direction along the
//! track. The process model projects the particle onto the path, advances it
//! by the nominal platform speed, and applies the resulting displacement to
//! the particle disturbed by steering and speed noise. Measurements weight
//! particles with a planar Gaussian and trigger importance resampling. The
//! estimate is trusted once enough probability mass concentrates inside the
//! convergence circle.

use alloc::vec::Vec;
use core::fmt;

use nalgebra::Matrix2;
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geom::{rotate2, Vec2};
use crate::path::PathCache;

/// Travel direction along increasing path parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Reverse,
}

impl Direction {
    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Reverse => -1.0,
        }
    }
}

/// One hypothesis of the platform state.
#[derive(Debug, Clone, Copy)]
pub struct Particle {
    /// Position in the arena frame, m.
    pub pos: Vec2,
    /// Movement direction along the track; fixed until re-initialization.
    pub direction: Direction,
    /// Normalized importance weight.
    pub weight: f64,
}

/// Filter tuning. All values are exposed through the scenario config.
#[derive(Debug, Clone)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrackerConfig {
    pub n_particles: usize,
    /// Nominal platform speed along the track, m/s.
    pub platform_speed: f64,
    /// Steering noise applied to the displacement direction at the reference
    /// step, rad.
    pub sigma_steer: f64,
    /// Speed noise applied to the displacement magnitude at the reference
    /// step, m/s.
    pub sigma_speed: f64,
    /// Step size at which the noise sigmas are specified, s. Other step
    /// sizes scale the noise by sqrt(dt / reference) so variance accumulates
    /// consistently per unit time.
    pub noise_ref_dt: f64,
    /// Measurement model standard deviation, m.
    pub sigma_meas: f64,
    /// Across-track prior standard deviation, m.
    pub across_sigma: f64,
    /// Across-track prior truncation bound, m.
    pub across_cutoff: f64,
    /// Probability mass required inside the convergence circle.
    pub convergence_mass: f64,
    /// Convergence circle radius, m.
    pub convergence_radius: f64,
    /// Seconds without detections before the estimate is distrusted.
    pub divergence_timeout: f64,
    /// Known platform top height used for 4D prediction, m.
    pub platform_height: f64,
    /// Propagate the forward prediction with process noise.
    pub predict_with_noise: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            n_particles: 2500,
            platform_speed: 15.0 / 3.6,
            sigma_steer: 0.15,
            sigma_speed: 0.3,
            noise_ref_dt: 0.02,
            sigma_meas: 0.3,
            across_sigma: 0.75,
            across_cutoff: 1.8,
            convergence_mass: 0.75,
            convergence_radius: 1.0,
            divergence_timeout: 3.0,
            platform_height: 0.3,
            predict_with_noise: true,
        }
    }
}

/// Tracker errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackError {
    /// Forward prediction requested from a non-converged filter.
    NotConverged,
}

impl fmt::Display for TrackError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrackError::NotConverged => write!(f, "tracker has not converged"),
        }
    }
}

impl core::error::Error for TrackError {}

/// Outcome of a measurement update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateOutcome {
    Updated,
    /// Every particle weight underflowed; the filter restarted from the prior.
    Reinitialized,
}

/// Full filter state; owned by one agent pipeline and moved between steps.
#[derive(Debug, Clone)]
pub struct TrackerState {
    pub particles: Vec<Particle>,
    pub converged: bool,
    pub weighted_mean: Vec2,
    pub mean_covariance: Matrix2<f64>,
    /// Probability mass inside the convergence circle at the last check.
    pub mass_in_radius: f64,
    /// Seconds since the last accepted detection.
    pub time_since_detection: f64,
}

/// Sampled 4D prediction of future platform states.
#[derive(Debug, Clone)]
pub struct PredictedTrajectory {
    /// `(t, x, y, z)` samples, strictly increasing in `t`, first at the
    /// current time.
    pub samples: Vec<[f64; 4]>,
}

/// Draw the initial particle set: uniform along the full track arc length,
/// truncated Gaussian across the track, direction uniform over both ways.
pub fn init_prior<R: Rng>(cache: &PathCache, config: &TrackerConfig, rng: &mut R) -> TrackerState {
    let across = Normal::new(0.0, config.across_sigma).expect("positive sigma");
    let n = config.n_particles;
    let mut particles = Vec::with_capacity(n);
    for _ in 0..n {
        let arc = rng.random_range(0.0..cache.total_length());
        let param = cache.arc_length_to_param(arc);
        let on = cache.point_at(param);
        let tangent = cache.tangent_at(param);
        let offset = loop {
            let o = across.sample(rng);
            if Float::abs(o) <= config.across_cutoff {
                break o;
            }
        };
        let direction = if rng.random::<bool>() {
            Direction::Forward
        } else {
            Direction::Reverse
        };
        particles.push(Particle {
            pos: on + crate::geom::perp(tangent) * offset,
            direction,
            weight: 1.0 / n as f64,
        });
    }
    let mut state = TrackerState {
        particles,
        converged: false,
        weighted_mean: Vec2::zeros(),
        mean_covariance: Matrix2::zeros(),
        mass_in_radius: 0.0,
        time_since_detection: 0.0,
    };
    refresh_convergence(&mut state, config);
    state.converged = false; // a fresh prior is never trusted
    state
}

/// Advance every particle by one process-model step of `dt` seconds.
pub fn predict_step<R: Rng>(
    state: &mut TrackerState,
    cache: &PathCache,
    config: &TrackerConfig,
    dt: f64,
    rng: &mut R,
) {
    debug_assert!(dt > 0.0);
    let scale = Float::sqrt(dt / config.noise_ref_dt);
    let steer = Normal::new(0.0, config.sigma_steer * scale).expect("positive sigma");
    let speed = Normal::new(0.0, config.sigma_speed * scale).expect("positive sigma");
    for p in &mut state.particles {
        let on = cache.closest_on_path(p.pos);
        let v = config.platform_speed + speed.sample(rng);
        let next = cache.advance_along(on.param, p.direction.sign() * v * dt);
        let ideal = cache.point_at(next) - on.point;
        p.pos += rotate2(ideal, steer.sample(rng));
    }
    state.time_since_detection += dt;
    refresh_convergence(state, config);
}

/// Weight particles against an accepted detection and resample when the
/// effective sample size collapses.
pub fn update_and_resample<R: Rng>(
    state: &mut TrackerState,
    detection: Vec2,
    cache: &PathCache,
    config: &TrackerConfig,
    rng: &mut R,
) -> UpdateOutcome {
    let inv_two_sigma2 = 1.0 / (2.0 * config.sigma_meas * config.sigma_meas);
    let mut sum = 0.0;
    for p in &mut state.particles {
        let d2 = (p.pos - detection).norm_squared();
        p.weight *= Float::exp(-d2 * inv_two_sigma2);
        sum += p.weight;
    }
    if sum <= 0.0 {
        // The detection is incompatible with every hypothesis; restart.
        *state = init_prior(cache, config, rng);
        return UpdateOutcome::Reinitialized;
    }
    let inv = 1.0 / sum;
    let mut ess_denom = 0.0;
    for p in &mut state.particles {
        p.weight *= inv;
        ess_denom += p.weight * p.weight;
    }
    if 1.0 / ess_denom < state.particles.len() as f64 / 2.0 {
        systematic_resample(&mut state.particles, rng);
    }
    state.time_since_detection = 0.0;
    refresh_convergence(state, config);
    UpdateOutcome::Updated
}

/// Convergence criterion: at least `convergence_mass` probability inside the
/// circle of `convergence_radius` around the weighted mean, and detections
/// recent enough. Returns `(converged, weighted_mean, mass_in_radius)`.
pub fn check_convergence(state: &TrackerState, config: &TrackerConfig) -> (bool, Vec2, f64) {
    let mut mean = Vec2::zeros();
    for p in &state.particles {
        mean += p.pos * p.weight;
    }
    let r2 = config.convergence_radius * config.convergence_radius;
    let mut mass = 0.0;
    for p in &state.particles {
        if (p.pos - mean).norm_squared() <= r2 {
            mass += p.weight;
        }
    }
    let fresh = state.time_since_detection <= config.divergence_timeout;
    (mass >= config.convergence_mass && fresh, mean, mass)
}

fn refresh_convergence(state: &mut TrackerState, config: &TrackerConfig) {
    let (converged, mean, mass) = check_convergence(state, config);
    let mut cov = Matrix2::zeros();
    for p in &state.particles {
        let d = p.pos - mean;
        cov += (d * d.transpose()) * p.weight;
    }
    state.converged = converged;
    state.weighted_mean = mean;
    state.mean_covariance = cov;
    state.mass_in_radius = mass;
}

/// Propagate a subsample of the particles forward with the process model and
/// return the per-step mean as a spatio-temporal trajectory.
///
/// The propagation runs in path coordinates (arc length along the particle's
/// travel direction plus across-track offset): positionally identical to the
/// filter's process model, but immune to particles hopping onto the other
/// branch of a self-intersecting track, which would corrupt the mean.
/// `arc_hint` pins the initial projections to one branch for the same
/// reason; pass the previously estimated platform arc when available.
#[allow(clippy::too_many_arguments)]
pub fn predict_future<R: Rng>(
    state: &TrackerState,
    cache: &PathCache,
    config: &TrackerConfig,
    now: f64,
    horizon: f64,
    dt: f64,
    subsample: usize,
    arc_hint: Option<f64>,
    rng: &mut R,
) -> Result<PredictedTrajectory, TrackError> {
    if !state.converged {
        return Err(TrackError::NotConverged);
    }
    let picks = systematic_pick(&state.particles, subsample, rng);
    // (arc, across, direction sign) per propagated particle.
    let mut points: Vec<(f64, f64, f64)> = picks
        .iter()
        .map(|&i| {
            let p = &state.particles[i];
            let on = match arc_hint {
                Some(arc) => cache.closest_on_path_near(p.pos, arc, 8.0),
                None => cache.closest_on_path(p.pos),
            };
            (
                cache.param_to_arc_length(on.param),
                on.across,
                p.direction.sign(),
            )
        })
        .collect();

    let scale = Float::sqrt(dt / config.noise_ref_dt);
    let steer = Normal::new(0.0, config.sigma_steer * scale).expect("positive sigma");
    let speed = Normal::new(0.0, config.sigma_speed * scale).expect("positive sigma");
    let steps = Float::ceil(horizon / dt - 1e-9) as usize;
    let mut samples = Vec::with_capacity(steps + 1);
    let mean_of = |pts: &[(f64, f64, f64)]| {
        let mut m = Vec2::zeros();
        for &(arc, across, _) in pts {
            let param = cache.arc_length_to_param(arc);
            m += cache.point_at(param) + crate::geom::perp(cache.tangent_at(param)) * across;
        }
        m / pts.len() as f64
    };
    let m0 = mean_of(&points);
    samples.push([now, m0.x, m0.y, config.platform_height]);
    for k in 1..=steps {
        for (arc, across, sign) in &mut points {
            let v = if config.predict_with_noise {
                config.platform_speed + speed.sample(rng)
            } else {
                config.platform_speed
            };
            let step = *sign * v * dt;
            let next = if cache.is_closed() {
                num_traits::Euclid::rem_euclid(&(*arc + step), &cache.total_length())
            } else {
                (*arc + step).clamp(0.0, cache.total_length())
            };
            if config.predict_with_noise {
                // The steering disturbance deflects the displacement
                // sideways.
                *across += Float::abs(step) * Float::sin(steer.sample(rng));
            }
            *arc = next;
        }
        let m = mean_of(&points);
        samples.push([now + k as f64 * dt, m.x, m.y, config.platform_height]);
    }
    Ok(PredictedTrajectory { samples })
}

/// Systematic (low-variance) resampling; replaces the particle set with an
/// equally weighted one.
fn systematic_resample<R: Rng>(particles: &mut Vec<Particle>, rng: &mut R) {
    let picks = systematic_pick(particles, particles.len(), rng);
    let w = 1.0 / particles.len() as f64;
    let mut next: Vec<Particle> = Vec::with_capacity(particles.len());
    for i in picks {
        let mut p = particles[i];
        p.weight = w;
        next.push(p);
    }
    *particles = next;
}

fn systematic_pick<R: Rng>(particles: &[Particle], count: usize, rng: &mut R) -> Vec<usize> {
    let step = 1.0 / count as f64;
    let mut u = rng.random::<f64>() * step;
    let mut cum = particles[0].weight;
    let mut i = 0usize;
    let mut picks = Vec::with_capacity(count);
    for _ in 0..count {
        while cum < u && i + 1 < particles.len() {
            i += 1;
            cum += particles[i].weight;
        }
        picks.push(i);
        u += step;
    }
    picks
}
