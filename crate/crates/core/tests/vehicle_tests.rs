//! Dynamics oracles: first-order step response in closed form, time-constant
//! jitter bounds, kick statistics, and command-map invariants.

use latnav_core::math::Vector3;
use latnav_core::rng;
use latnav_core::vehicle::{
    action_to_command, apply_random_wrench, sample_time_constant, step_physics, ActionLimits,
    KickConfig, RobotState, VehicleParams, VelocityCommand,
};
use proptest::prelude::*;

#[test]
fn step_response_reaches_one_minus_e_inverse_at_tau() {
    // From rest, after t = tau the first-order lag reaches (1 - 1/e) of the
    // command. The discrete update is the exact solution so the tolerance is
    // far inside the 2% contract.
    let params = VehicleParams::default();
    let tau = params.tau_nominal;
    let cmd = VelocityCommand {
        v_ref: Vector3::new(1.2_f64, 0.0, 0.3),
        yaw_rate_ref: 0.5,
    };
    let mut state = RobotState::at_rest(Vector3::zeros(), 0.0);
    let n_steps = (tau / params.dt).round() as usize;
    for _ in 0..n_steps {
        state = step_physics(&state, &cmd, &params, tau);
    }
    let expected = cmd.v_ref.norm() * (1.0 - (-1.0_f64).exp());
    let rel = (state.v.norm() - expected).abs() / expected;
    assert!(rel < 0.02, "step response off by {rel}");
    assert!(rel < 1e-9, "discrete update should be exact, rel {rel}");
}

#[test]
fn time_constant_jitter_stays_within_ten_percent() {
    let params = VehicleParams::default();
    let mut r = rng::stream(42, 0x74_61_75);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let tau: f64 = sample_time_constant(&params, &mut r);
        lo = lo.min(tau);
        hi = hi.max(tau);
        assert!(tau >= params.tau_nominal * 0.9 - 1e-12);
        assert!(tau <= params.tau_nominal * 1.1 + 1e-12);
    }
    // The band should actually be explored, not collapsed to the nominal.
    assert!(hi - lo > 0.05 * params.tau_nominal);
}

#[test]
fn kick_frequency_matches_bernoulli_probability() {
    let config = KickConfig::default();
    let mut r = rng::stream(7, 0x6b_69_63_6b);
    let mut state = RobotState::<f64>::at_rest(Vector3::zeros(), 0.0);
    let n = 100_000;
    let mut kicks = 0usize;
    for _ in 0..n {
        let before = state;
        if apply_random_wrench(&mut state, &config, &mut r) {
            kicks += 1;
            let dv = (state.v - before.v).norm();
            assert!(dv <= config.max_vel + 1e-9);
            assert!(
                (state.omega.z - before.omega.z).abs()
                    <= config.max_yaw_rate_deg.to_radians() + 1e-9
            );
        } else {
            assert_eq!(state, before);
        }
        state.v = Vector3::zeros();
        state.omega = Vector3::zeros();
    }
    let freq = kicks as f64 / n as f64;
    let rel = (freq - config.p_kick).abs() / config.p_kick;
    assert!(rel < 0.05, "kick frequency {freq} vs p {}", config.p_kick);
}

#[test]
fn velocity_stays_bounded_by_command_envelope() {
    // Energy-like bound: tracking a command never overshoots
    // max(|v0|, s_max) plus accumulated kick impulses.
    let params = VehicleParams::default();
    let limits = ActionLimits::default();
    let config = KickConfig::default();
    let mut r = rng::stream(9, 1);
    let mut state = RobotState::at_rest(Vector3::zeros(), 0.0);
    let mut kick_budget = 0.0_f64;
    for step in 0..5000 {
        let a = [
            ((step * 31) % 200) as f64 / 100.0 - 1.0,
            ((step * 17) % 200) as f64 / 100.0 - 1.0,
            ((step * 13) % 200) as f64 / 100.0 - 1.0,
        ];
        let cmd = action_to_command(a, &limits);
        state = step_physics(&state, &cmd, &params, 0.3);
        let before = state.v.norm();
        if apply_random_wrench(&mut state, &config, &mut r) {
            kick_budget += (state.v.norm() - before).abs();
        }
        assert!(state.v.norm() <= limits.s_max + kick_budget + 1e-9);
        assert!(state.is_finite());
    }
}

proptest! {
    #[test]
    fn command_map_image_satisfies_invariants(
        a1 in -2.0f64..2.0,
        a2 in -2.0f64..2.0,
        a3 in -2.0f64..2.0,
        s_max in 0.1f64..5.0,
        i_max_deg in 1.0f64..89.0,
        omega_max_deg in 1.0f64..180.0,
    ) {
        let limits = ActionLimits { s_max, i_max_deg, omega_max_deg };
        let cmd = action_to_command([a1, a2, a3], &limits);
        prop_assert!(cmd.v_ref.norm() <= s_max + 1e-12);
        prop_assert_eq!(cmd.v_ref.y, 0.0);
        prop_assert!(cmd.yaw_rate_ref.abs() <= omega_max_deg.to_radians() + 1e-12);
        // Angle with the body x-axis stays within i_max.
        if cmd.v_ref.norm() > 1e-9 {
            let cos_angle = cmd.v_ref.x / cmd.v_ref.norm();
            let angle = cos_angle.clamp(-1.0, 1.0).acos();
            prop_assert!(angle <= i_max_deg.to_radians() + 1e-9);
        }
    }
}
