//! Robot state and the 44-dimensional observation.

use diffcore::scalar::Scalar;

pub const OBS_DIM: usize = 44;
pub const ACTION_DIM: usize = 12;

/// Full simulator state. `q` holds normalized joint positions in [-1, 1];
/// `u` is the uprightness cosine.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState<S> {
    /// Torso position, meters.
    pub p: [S; 2],
    /// Torso velocity, m/s.
    pub v: [S; 2],
    /// Heading angle, radians; pi/2 faces the +y axis.
    pub psi: S,
    /// Yaw rate, rad/s.
    pub omega: S,
    pub q: [S; ACTION_DIM],
    pub q_dot: [S; ACTION_DIM],
    /// Previous raw (clipped, unmasked) action.
    pub prev_action: [S; ACTION_DIM],
    /// Uprightness in [-1, 1]; 1 = level.
    pub u: S,
    pub step_index: u32,
}

impl<S: Scalar> EnvState<S> {
    /// Canonical start: origin, at rest, facing +y, level.
    pub fn initial() -> Self {
        EnvState {
            p: [S::zero(); 2],
            v: [S::zero(); 2],
            psi: S::c(std::f64::consts::FRAC_PI_2),
            omega: S::zero(),
            q: [S::zero(); ACTION_DIM],
            q_dot: [S::zero(); ACTION_DIM],
            prev_action: [S::zero(); ACTION_DIM],
            u: S::one(),
            step_index: 0,
        }
    }

    /// Heading cosine relative to the +y axis.
    pub fn heading(&self) -> S {
        (self.psi - S::c(std::f64::consts::FRAC_PI_2)).cos()
    }

    /// Layout: p(2), [cos psi, sin psi](2), v(2), omega(1), q(12), q_dot(12),
    /// prev_action(12), u(1). The task (goal, friction, incline, mask) is
    /// deliberately absent.
    pub fn observation(&self) -> Observation<S> {
        let mut o = [S::zero(); OBS_DIM];
        o[0] = self.p[0];
        o[1] = self.p[1];
        o[2] = self.psi.cos();
        o[3] = self.psi.sin();
        o[4] = self.v[0];
        o[5] = self.v[1];
        o[6] = self.omega;
        o[7..19].copy_from_slice(&self.q);
        o[19..31].copy_from_slice(&self.q_dot);
        o[31..43].copy_from_slice(&self.prev_action);
        o[43] = self.u;
        Observation(o)
    }
}

/// Fixed-layout observation vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation<S>(pub [S; OBS_DIM]);

impl<S: Scalar> Observation<S> {
    pub fn as_slice(&self) -> &[S] {
        &self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_observation_layout() {
        let s: EnvState<f64> = EnvState::initial();
        let o = s.observation();
        assert_eq!(o.as_slice().len(), OBS_DIM);
        assert_eq!(o.0[0], 0.0);
        assert_eq!(o.0[1], 0.0);
        assert!(o.0[2].abs() < 1e-12, "cos(pi/2) ~ 0");
        assert!((o.0[3] - 1.0).abs() < 1e-12, "sin(pi/2) = 1");
        assert_eq!(o.0[43], 1.0, "starts upright");
        assert!((s.heading() - 1.0).abs() < 1e-12);
    }
}
