//! Deterministic multi-agent MAV arena simulation and the autonomy algorithms
//! that run inside it.
//!
//! The crate is organized around two mission profiles:
//!
//! * **Platform landing** — a ground vehicle drives a known closed path while a
//!   single MAV detects it ([`detect`]), tracks it with a path-constrained
//!   particle filter ([`tracker`]), intercepts it with minimum-jerk motion
//!   primitives selected by graph search ([`plan`]), and gates the final
//!   descent with a Lidar clearance check ([`safety`]).
//! * **Search, pick and place** — a team of MAVs splits the arena into sweep
//!   regions ([`coverage`]), recovers object positions from monocular
//!   detections and tracks them with hybrid Kalman filters ([`objects`]), and
//!   runs a pickup/drop-off executive with a drop-box semaphore and a mutual
//!   separation guard ([`mission`]).
//!
//! [`world`] provides the ground-truth arena and synthetic sensors, and
//! [`runner`] wires everything into seeded, reproducible mission runs. All
//! randomness flows through per-subsystem [`rand_chacha`] streams, so a run is
//! a pure function of its scenario and seed.
//!
//! The crate is `no_std` (with `alloc`); file formats, logging sinks and the
//! command line live in the companion `mavarena-sim` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod coverage;
pub mod detect;
pub mod geom;
pub mod mission;
pub mod objects;
pub mod path;
pub mod plan;
pub mod runner;
pub mod safety;
pub mod scenario;
pub mod tracker;
pub mod world;

pub use geom::{Vec2, Vec3};
