//! Velocity-controlled multirotor dynamics at 100 Hz.
//!
//! The vehicle abstraction is a point mass with attitude whose body velocity
//! tracks a commanded velocity through a first-order lag; this is the
//! behaviorally relevant surface of a cascaded velocity controller. Roll and
//! pitch are set kinematically from the commanded acceleration so the policy
//! observation sees plausible tilt.

use crate::math::{Quaternion, Vector3};
use crate::num::{real, Real};
use crate::rng;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Full kinematic state. Position is inertial; velocities are body-frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState<T> {
    pub p: Vector3<T>,
    pub v: Vector3<T>,
    pub q: Quaternion<T>,
    pub omega: Vector3<T>,
}

impl<T: Real> RobotState<T> {
    pub fn at_rest(p: Vector3<T>, yaw: T) -> Self {
        Self {
            p,
            v: Vector3::zeros(),
            q: Quaternion::from_yaw(yaw),
            omega: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.p.is_finite() && self.v.is_finite() && self.omega.is_finite()
    }
}

/// Body-frame velocity command; the lateral component is identically zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityCommand<T> {
    pub v_ref: Vector3<T>,
    pub yaw_rate_ref: T,
}

impl<T: Real> VelocityCommand<T> {
    /// The four command channels (v_x, v_y, v_z, yaw rate). The v_y channel
    /// is a constant zero but keeps the command dimension explicit.
    pub fn flatten(&self) -> [T; 4] {
        [self.v_ref.x, self.v_ref.y, self.v_ref.z, self.yaw_rate_ref]
    }
}

/// Action-space limits: top speed, maximum angle of the commanded velocity
/// with the body x-axis, and maximum yaw rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActionLimits {
    pub s_max: f64,
    pub i_max_deg: f64,
    pub omega_max_deg: f64,
}

impl Default for ActionLimits {
    fn default() -> Self {
        Self {
            s_max: 1.5,
            i_max_deg: 30.0,
            omega_max_deg: 60.0,
        }
    }
}

/// Map a policy action in [-1,1]^3 to a velocity command:
/// speed factor from a1, inclination with the body x-axis from a2, yaw rate
/// from a3. Out-of-range components are clamped.
pub fn action_to_command<T: Real>(a: [T; 3], limits: &ActionLimits) -> VelocityCommand<T> {
    let clamp = |v: T| v.max(-T::one()).min(T::one());
    let (a1, a2, a3) = (clamp(a[0]), clamp(a[1]), clamp(a[2]));
    let s_max = real::<T>(limits.s_max);
    let i_max = real::<T>(limits.i_max_deg.to_radians());
    let omega_max = real::<T>(limits.omega_max_deg.to_radians());

    let speed = s_max * (a1 + T::one()) / real(2.0);
    let incl = i_max * a2;
    VelocityCommand {
        v_ref: Vector3::new(speed * incl.cos(), T::zero(), speed * incl.sin()),
        yaw_rate_ref: omega_max * a3,
    }
}

/// Physical parameters of the velocity-tracking abstraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Physics step, seconds.
    pub dt: f64,
    /// Nominal velocity-loop time constant, seconds.
    pub tau_nominal: f64,
    /// Per-episode multiplicative time-constant jitter (0.1 = +-10%).
    pub tau_jitter_frac: f64,
    pub gravity: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            dt: 0.01,
            tau_nominal: 0.3,
            tau_jitter_frac: 0.10,
            gravity: 9.81,
        }
    }
}

/// Random wrench disturbances, modeled as bounded velocity impulses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KickConfig {
    /// Bernoulli probability of a kick at each physics step.
    pub p_kick: f64,
    /// Maximum velocity impulse magnitude, m/s.
    pub max_vel: f64,
    /// Maximum yaw-rate impulse, deg/s.
    pub max_yaw_rate_deg: f64,
}

impl Default for KickConfig {
    fn default() -> Self {
        Self {
            p_kick: 0.01,
            max_vel: 0.2,
            max_yaw_rate_deg: 10.0,
        }
    }
}

/// Draw the per-episode time constant within the configured jitter band.
pub fn sample_time_constant<T: Real>(params: &VehicleParams, rng: &mut rng::Stream) -> T {
    let j = params.tau_jitter_frac;
    let factor = rng.gen_range(1.0 - j..=1.0 + j);
    real(params.tau_nominal * factor)
}

/// Advance one physics step of `params.dt` seconds under a velocity command.
///
/// The body velocity relaxes toward the command with the exact discrete
/// solution of dv/dt = (v_ref - v)/tau, so step-response checks hold to
/// machine precision. Yaw rate uses the same lag; roll and pitch follow the
/// commanded acceleration through the small-tilt model atan(a/g).
pub fn step_physics<T: Real>(
    state: &RobotState<T>,
    cmd: &VelocityCommand<T>,
    params: &VehicleParams,
    tau: T,
) -> RobotState<T> {
    let dt = real::<T>(params.dt);
    let g = real::<T>(params.gravity);
    let alpha = T::one() - (-dt / tau).exp();

    let accel = (cmd.v_ref - state.v) / tau;
    let v = state.v + (cmd.v_ref - state.v) * alpha;
    let omega_z = state.omega.z + (cmd.yaw_rate_ref - state.omega.z) * alpha;
    let omega = Vector3::new(T::zero(), T::zero(), omega_z);

    let yaw = state.q.yaw() + omega_z * dt;
    let roll = (-accel.y / g).atan();
    let pitch = (accel.x / g).atan();
    let q = Quaternion::from_euler(roll, pitch, yaw);

    // Position integrates the world-frame velocity of the current attitude.
    let p = state.p + state.q.rotate(state.v) * dt;

    RobotState { p, v, q, omega }
}

/// With probability `p_kick`, add a bounded velocity and yaw-rate impulse.
/// Returns whether a kick fired.
pub fn apply_random_wrench<T: Real>(
    state: &mut RobotState<T>,
    config: &KickConfig,
    rng: &mut rng::Stream,
) -> bool {
    if !rng.gen_bool(config.p_kick) {
        return false;
    }
    let dir = Vector3::new(
        real::<T>(rng::standard_normal(rng)),
        real::<T>(rng::standard_normal(rng)),
        real::<T>(rng::standard_normal(rng)),
    );
    let dir = if dir.norm() > T::zero() {
        dir.normalized()
    } else {
        Vector3::unit_x()
    };
    let mag = real::<T>(rng.gen_range(0.0..=config.max_vel));
    state.v = state.v + dir * mag;
    let dw = rng.gen_range(-config.max_yaw_rate_deg..=config.max_yaw_rate_deg);
    state.omega.z = state.omega.z + real(dw.to_radians());
    true
}
