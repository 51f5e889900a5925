//! Per-episode dynamics randomization.
//!
//! The source randomizations act on joint-level simulator parameters; the
//! planar proxy has no per-joint physics, so each range is mapped onto one
//! scalar multiplier of the matching proxy constant.

use diffcore::rng::RngStream;
use diffcore::scalar::Scalar;
use serde::{Deserialize, Serialize};

use crate::error::{EnvError, Result};
use crate::task::TaskFamily;

/// Closed interval used for uniform draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        Interval { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Interval { lo: v, hi: v }
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.uniform(self.lo, self.hi)
        }
    }
}

/// Randomization intervals, one multiplier per proxy constant.
///
/// * `actuator_gain_mult` — actuator strength (kp) spread mapped to the
///   actuation rate constant.
/// * `drag_mult` — joint damping / friction-loss spread mapped to the
///   velocity drag constant.
/// * `friction_slide_mult` — sliding-friction spread, multiplies the task's
///   friction coefficient. Disabled for the Friction family, where friction
///   *is* the task.
/// * `mass_kg` — total robot mass; thrust is scaled by 1.8 / mass.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizationRanges {
    pub actuator_gain_mult: Interval,
    pub drag_mult: Interval,
    pub friction_slide_mult: Interval,
    pub mass_kg: Interval,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        RandomizationRanges {
            actuator_gain_mult: Interval::new(0.85, 1.15),
            drag_mult: Interval::new(0.9, 1.1),
            friction_slide_mult: Interval::new(0.8, 1.2),
            mass_kg: Interval::new(1.6, 2.0),
        }
    }
}

impl RandomizationRanges {
    /// Degenerate ranges: every episode gets identical unit dynamics.
    pub fn disabled() -> Self {
        RandomizationRanges {
            actuator_gain_mult: Interval::point(1.0),
            drag_mult: Interval::point(1.0),
            friction_slide_mult: Interval::point(1.0),
            mass_kg: Interval::point(1.8),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, iv) in [
            ("actuator_gain_mult", self.actuator_gain_mult),
            ("drag_mult", self.drag_mult),
            ("friction_slide_mult", self.friction_slide_mult),
            ("mass_kg", self.mass_kg),
        ] {
            if iv.lo > iv.hi {
                return Err(EnvError::InvalidRange(match name {
                    "actuator_gain_mult" => "actuator_gain_mult",
                    "drag_mult" => "drag_mult",
                    "friction_slide_mult" => "friction_slide_mult",
                    _ => "mass_kg",
                }));
            }
        }
        Ok(())
    }
}

/// Multipliers drawn for one episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dynamics<S> {
    pub actuator_gain: S,
    pub drag: S,
    pub friction_slide: S,
    pub thrust_scale: S,
}

impl<S: Scalar> Dynamics<S> {
    pub fn unit() -> Self {
        Dynamics {
            actuator_gain: S::one(),
            drag: S::one(),
            friction_slide: S::one(),
            thrust_scale: S::one(),
        }
    }
}

/// Draw per-episode multipliers. The friction multiplier is pinned to 1 for
/// the Friction family.
pub fn randomize_dynamics<S: Scalar>(
    ranges: &RandomizationRanges,
    family: TaskFamily,
    rng: &mut RngStream,
) -> Dynamics<S> {
    let mass = ranges.mass_kg.draw(rng);
    let friction = if family == TaskFamily::Friction {
        1.0
    } else {
        ranges.friction_slide_mult.draw(rng)
    };
    Dynamics {
        actuator_gain: S::c(ranges.actuator_gain_mult.draw(rng)),
        drag: S::c(ranges.drag_mult.draw(rng)),
        friction_slide: S::c(friction),
        thrust_scale: S::c(1.8 / mass),
    }
}
