//! The navigation POMDP: observation assembly, the shaped reward, episode
//! lifecycle with 10 Hz sensing over 100 Hz physics, outcome classification,
//! and the curriculum manager.
//!
//! Each environment owns its state and RNG stream; a frozen collision
//! encoder is shared read-only. Everything needed to reconstruct an episode
//! (world, start/goal, mount, time constant) is derived from stored seeds,
//! so a small snapshot restores an environment bitwise-exactly.

use crate::camera::{
    apply_sensor_noise, perturb_camera_mount, render_depth, CameraIntrinsics, MountPerturbation,
    SensorNoiseParams,
};
use crate::dce::DceModel;
use crate::error::{Error, Result};
use crate::math::{Pose, Quaternion, Vector3};
use crate::num::{real, Real};
use crate::rng::{self, StreamState};
use crate::vehicle::{
    action_to_command, apply_random_wrench, sample_time_constant, step_physics, ActionLimits,
    KickConfig, RobotState, VehicleParams,
};
use crate::world::{
    check_collision, generate_world, sample_start_goal, RobotBox, WorldGenConfig, WorldSpec,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::sync::Arc;

/// What the policy sees: goal direction and distance in the vehicle frame,
/// body velocities, attitude, the previous action, and the latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    /// Unit vector toward the goal in the vehicle frame (yaw-aligned
    /// inertial frame); (1,0,0) by convention at zero distance.
    pub n_hat_g: Vector3<T>,
    pub dist_g: T,
    /// Body-frame linear velocity.
    pub v: Vector3<T>,
    pub roll: T,
    pub pitch: T,
    /// Body-frame angular velocity.
    pub omega: Vector3<T>,
    pub prev_action: [T; 3],
    pub z: Vec<T>,
}

impl<T: Real> Observation<T> {
    /// Flatten in a fixed order; dimension is 15 + J.
    pub fn to_vec(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(15 + self.z.len());
        out.extend(self.n_hat_g.to_array());
        out.push(self.dist_g);
        out.extend(self.v.to_array());
        out.push(self.roll);
        out.push(self.pitch);
        out.extend(self.omega.to_array());
        out.extend(self.prev_action);
        out.extend(self.z.iter().copied());
        out
    }

    pub fn dim(latent_dim: usize) -> usize {
        15 + latent_dim
    }
}

/// Assemble an observation from state, goal and latent code. The goal
/// bearing lives in the vehicle frame: the inertial frame rotated to the
/// robot's yaw only.
pub fn build_observation<T: Real>(
    state: &RobotState<T>,
    goal: Vector3<T>,
    prev_action: [T; 3],
    z: &[T],
) -> Observation<T> {
    let delta = goal - state.p;
    let dist_g = delta.norm();
    let in_vehicle = Quaternion::from_yaw(state.q.yaw()).rotate_inv(delta);
    let n_hat_g = if dist_g > real(1e-9) {
        in_vehicle / dist_g
    } else {
        Vector3::unit_x()
    };
    let (roll, pitch, _) = state.q.euler();
    Observation {
        n_hat_g,
        dist_g,
        v: state.v,
        roll,
        pitch,
        omega: state.omega,
        prev_action,
        z: z.to_vec(),
    }
}

/// Base reward constants. The per-level weights are produced by
/// [`RewardConfig::at_level`]: lambda_i = kappa_i * n, eta_j = xi_j * n.
///
/// The progress term r4 = nu4 * (dist - prev_dist) is implemented exactly as
/// written, which rewards moving AWAY from the goal when its weight is
/// positive; `r4_sign` flips it, and the training preset sets -1 so progress
/// toward the goal pays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub kappa: [f64; 4],
    pub xi: [f64; 2],
    pub nu1: f64,
    pub nu2: f64,
    pub nu3: f64,
    pub nu4: f64,
    /// Per command channel (v_x, v_y, v_z, yaw rate).
    pub nu5: [f64; 4],
    pub nu6: [f64; 4],
    pub nu7: [f64; 4],
    pub nu8: [f64; 4],
    /// Crash penalty magnitude.
    pub nu9: f64,
    pub r4_sign: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        // Training preset: progress-dominant shaping with mild proximity
        // kernels and small smoothness penalties.
        Self {
            kappa: [0.2, 0.4, 0.02, 2.0],
            xi: [0.01, 0.02],
            nu1: 16.0,
            nu2: 1.0,
            nu3: 10.0,
            nu4: 1.0,
            nu5: [1.0, 1.0, 1.0, 1.0],
            nu6: [4.0, 4.0, 4.0, 4.0],
            nu7: [1.0, 1.0, 1.0, 1.0],
            nu8: [1.0, 1.0, 1.0, 1.0],
            nu9: 20.0,
            r4_sign: -1.0,
        }
    }
}

/// Level-scaled reward weights alongside the shared constants.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardParams {
    pub lambda: [f64; 4],
    pub eta: [f64; 2],
    pub config: RewardConfig,
}

impl RewardConfig {
    pub fn at_level(&self, level: u32) -> RewardParams {
        let n = level as f64;
        RewardParams {
            lambda: [
                self.kappa[0] * n,
                self.kappa[1] * n,
                self.kappa[2] * n,
                self.kappa[3] * n,
            ],
            eta: [self.xi[0] * n, self.xi[1] * n],
            config: self.clone(),
        }
    }
}

/// The radial kernel r(x, nu) = exp(-x^2 / nu).
pub fn kernel(x: f64, nu: f64) -> f64 {
    (-x * x / nu).exp()
}

/// The shaped step reward:
/// R = sum_i lambda_i r_i + sum_j eta_j p_j + p_crash, with
/// r1 = r(d, nu1), r2 = r(d, nu2), r3 = |nu3 - d| / nu3,
/// r4 = r4_sign * nu4 * (d - d_prev),
/// p1 = sum_k nu5_k (r(g_k, nu6_k) - 1),
/// p2 = sum_k nu7_k (r(g_k - g_prev_k, nu8_k) - 1),
/// p_crash = -nu9 when crashed,
/// where g flattens the commanded velocity to its four channels.
pub fn compute_reward<T: Real>(
    prev_dist: f64,
    dist: f64,
    a_t: [T; 3],
    a_prev: [T; 3],
    params: &RewardParams,
    crashed: bool,
    limits: &ActionLimits,
) -> f64 {
    let c = &params.config;
    let r1 = kernel(dist, c.nu1);
    let r2 = kernel(dist, c.nu2);
    let r3 = (c.nu3 - dist).abs() / c.nu3;
    let r4 = c.r4_sign * c.nu4 * (dist - prev_dist);

    let g_t = action_to_command(a_t, limits).flatten();
    let g_prev = action_to_command(a_prev, limits).flatten();
    let mut p1 = 0.0;
    let mut p2 = 0.0;
    for k in 0..4 {
        let gk = g_t[k].to_f64_lossy();
        let gpk = g_prev[k].to_f64_lossy();
        p1 += c.nu5[k] * (kernel(gk, c.nu6[k]) - 1.0);
        p2 += c.nu7[k] * (kernel(gk - gpk, c.nu8[k]) - 1.0);
    }
    let p_crash = if crashed { -c.nu9 } else { 0.0 };

    params.lambda[0] * r1
        + params.lambda[1] * r2
        + params.lambda[2] * r3
        + params.lambda[3] * r4
        + params.eta[0] * p1
        + params.eta[1] * p2
        + p_crash
}

/// Exactly one category per episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpisodeOutcome {
    Success,
    Crash,
    Timeout,
}

impl EpisodeOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Success => "success",
            Self::Crash => "crash",
            Self::Timeout => "timeout",
        }
    }
}

/// Crash dominates; otherwise the final distance against the success radius
/// decides.
pub fn classify_outcome(crashed: bool, final_dist: f64, success_radius: f64) -> EpisodeOutcome {
    if crashed {
        EpisodeOutcome::Crash
    } else if final_dist <= success_radius {
        EpisodeOutcome::Success
    } else {
        EpisodeOutcome::Timeout
    }
}

/// One finished episode, as logged to CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub level: u32,
    pub outcome: EpisodeOutcome,
    pub steps: usize,
    pub final_dist: f64,
    pub ret: f64,
}

impl EpisodeRecord {
    pub fn csv_header() -> &'static str {
        "seed,level,outcome,steps,final_dist,return"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:.6}",
            self.seed,
            self.level,
            self.outcome.label(),
            self.steps,
            self.final_dist,
            self.ret
        )
    }
}

/// Rolling-window curriculum: promote on high success, demote on high crash
/// rate; the crash rule wins when both fire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumConfig {
    pub max_level: u32,
    pub window: usize,
    /// Minimum episodes in the window before updates apply.
    pub min_episodes: usize,
    pub promote_success_rate: f64,
    pub demote_crash_rate: f64,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            max_level: 12,
            window: 100,
            min_episodes: 50,
            promote_success_rate: 0.70,
            demote_crash_rate: 0.30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumState {
    pub level: u32,
    pub config: CurriculumConfig,
    window: VecDeque<EpisodeOutcome>,
}

impl CurriculumState {
    pub fn new(config: CurriculumConfig) -> Self {
        Self {
            level: 0,
            config,
            window: VecDeque::new(),
        }
    }

    pub fn record(&mut self, outcome: EpisodeOutcome) {
        self.window.push_back(outcome);
        while self.window.len() > self.config.window {
            self.window.pop_front();
        }
    }

    pub fn success_rate(&self) -> f64 {
        self.rate(EpisodeOutcome::Success)
    }

    pub fn crash_rate(&self) -> f64 {
        self.rate(EpisodeOutcome::Crash)
    }

    fn rate(&self, of: EpisodeOutcome) -> f64 {
        if self.window.is_empty() {
            return 0.0;
        }
        self.window.iter().filter(|&&o| o == of).count() as f64 / self.window.len() as f64
    }

    /// Apply the threshold rules; at most one level of movement, and the
    /// window restarts after a change so stale episodes cannot re-trigger.
    pub fn update(&mut self) -> u32 {
        if self.window.len() < self.config.min_episodes {
            return self.level;
        }
        let success = self.success_rate();
        let crash = self.crash_rate();
        let next = if crash > self.config.demote_crash_rate {
            self.level.saturating_sub(1)
        } else if success > self.config.promote_success_rate {
            (self.level + 1).min(self.config.max_level)
        } else {
            self.level
        };
        if next != self.level {
            self.level = next;
            self.window.clear();
        }
        self.level
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn window_iter(&self) -> impl Iterator<Item = EpisodeOutcome> + '_ {
        self.window.iter().copied()
    }
}

/// Everything that parameterizes an environment instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub world: WorldGenConfig,
    pub camera: CameraIntrinsics,
    pub noise: SensorNoiseParams,
    pub mount: MountPerturbation,
    pub vehicle: VehicleParams,
    pub kicks: KickConfig,
    pub limits: ActionLimits,
    pub reward: RewardConfig,
    /// Agent steps per episode.
    pub episode_len: usize,
    /// Physics sub-steps per agent step when jitter is off.
    pub substeps_nominal: u32,
    /// Inclusive jitter range of sub-step counts.
    pub substeps_min: u32,
    pub substeps_max: u32,
    pub latency_jitter: bool,
    pub success_radius: f64,
    /// End the episode as soon as the goal radius is reached.
    pub end_on_success: bool,
    /// Shaping weights scale linearly with the level n, which zeroes them
    /// at level 0 and leaves them feeble at low levels next to the fixed
    /// crash penalty; levels below this floor pay as if they were at it
    /// (0 = verbatim scaling).
    pub reward_level_floor: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            world: WorldGenConfig::default(),
            camera: CameraIntrinsics::new(96, 72, 87.0),
            noise: SensorNoiseParams::default(),
            mount: MountPerturbation::default(),
            vehicle: VehicleParams::default(),
            kicks: KickConfig::default(),
            limits: ActionLimits::default(),
            reward: RewardConfig::default(),
            episode_len: 300,
            substeps_nominal: 10,
            substeps_min: 8,
            substeps_max: 12,
            latency_jitter: true,
            success_radius: 1.0,
            // Letting the episode run after reaching the goal keeps the
            // proximity reward flowing at the goal itself, so loitering just
            // outside the radius is never the optimum.
            end_on_success: false,
            reward_level_floor: 4,
        }
    }
}

/// Step result: observation after the transition plus scalar feedback.
#[derive(Debug, Clone)]
pub struct StepResult<T> {
    pub obs: Observation<T>,
    pub reward: f64,
    pub done: bool,
    pub outcome: Option<EpisodeOutcome>,
    pub dist_g: f64,
    pub substeps: u32,
}

/// A single navigation environment.
pub struct NavEnv<T> {
    pub config: EnvConfig,
    dce: Arc<DceModel<T>>,
    robot: RobotBox<T>,
    seed: u64,
    episode_index: u64,
    rng: rng::Stream,

    level: u32,
    world: WorldSpec<T>,
    start: Vector3<T>,
    goal: Vector3<T>,
    mount: Pose<T>,
    tau: T,
    state: RobotState<T>,
    prev_action: [T; 3],
    prev_dist: f64,
    /// Closest approach to the goal this episode; success means the goal
    /// radius was entered at any point, not just at the final step.
    min_dist: f64,
    step_count: usize,
    return_acc: f64,
    done: bool,
    crashed: bool,
}

const ENV_RNG_TAG: u64 = 0x65_6e_76; // "env"

/// Compact, seed-based snapshot for exact resume.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvSnapshot {
    pub words: Vec<u64>,
}

impl<T: Real> NavEnv<T> {
    /// Create an environment and start its first episode at `level`.
    pub fn new(config: EnvConfig, dce: Arc<DceModel<T>>, seed: u64, level: u32) -> Result<Self> {
        if config.camera.width != dce.config.input_width
            || config.camera.height != dce.config.input_height
        {
            return Err(Error::ShapeMismatch(format!(
                "camera renders {}x{} but the encoder expects {}x{}",
                config.camera.width,
                config.camera.height,
                dce.config.input_width,
                dce.config.input_height
            )));
        }
        let mut env = Self {
            config,
            dce,
            robot: RobotBox::default_platform(),
            seed,
            episode_index: 0,
            rng: rng::stream(seed, ENV_RNG_TAG),
            level,
            world: generate_world(0, &WorldGenConfig::default(), 0),
            start: Vector3::zeros(),
            goal: Vector3::zeros(),
            mount: Pose::identity(),
            tau: T::one(),
            state: RobotState::at_rest(Vector3::zeros(), T::zero()),
            prev_action: [T::zero(); 3],
            prev_dist: 0.0,
            min_dist: f64::INFINITY,
            step_count: 0,
            return_acc: 0.0,
            done: false,
            crashed: false,
        };
        env.reset()?;
        Ok(env)
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn set_level(&mut self, level: u32) {
        self.level = level;
    }

    pub fn episode_seed(&self) -> u64 {
        rng::derive(self.seed, self.episode_index)
    }

    pub fn state(&self) -> &RobotState<T> {
        &self.state
    }

    pub fn world_spec(&self) -> &WorldSpec<T> {
        &self.world
    }

    pub fn goal(&self) -> Vector3<T> {
        self.goal
    }

    pub fn dist_to_goal(&self) -> f64 {
        (self.goal - self.state.p).norm().to_f64_lossy()
    }

    pub fn steps(&self) -> usize {
        self.step_count
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Start the next episode: fresh world, start/goal, mount error and time
    /// constant, all derived from the episode seed.
    pub fn reset(&mut self) -> Result<Observation<T>> {
        self.episode_index += 1;
        let ep_seed = self.episode_seed();
        let mut attempt = 0u64;
        let (world, start, goal) = loop {
            let wseed = rng::derive(ep_seed, attempt);
            let world = generate_world::<T>(self.level, &self.config.world, wseed);
            match sample_start_goal(&world, &self.robot, rng::derive(wseed, 1)) {
                Ok((s, g)) => break (world, s, g),
                Err(_) if attempt < 20 => attempt += 1,
                Err(e) => return Err(e),
            }
        };
        self.world = world;
        self.start = start;
        self.goal = goal;
        self.mount = perturb_camera_mount(Pose::identity(), &self.config.mount, ep_seed);
        self.tau = sample_time_constant(&self.config.vehicle, &mut self.rng);

        let bearing = goal - start;
        let yaw = bearing.y.to_f64_lossy().atan2(bearing.x.to_f64_lossy());
        self.state = RobotState::at_rest(start, real(yaw));
        self.prev_action = [T::zero(); 3];
        self.prev_dist = self.dist_to_goal();
        self.min_dist = self.prev_dist;
        self.step_count = 0;
        self.return_acc = 0.0;
        self.done = false;
        self.crashed = false;
        self.observe()
    }

    fn camera_pose(&self) -> Pose<T> {
        Pose::new(self.state.p, self.state.q).compose(self.mount)
    }

    /// Render, apply sensor noise, and encode through the frozen DCE.
    fn observe(&mut self) -> Result<Observation<T>> {
        let clean = render_depth(&self.world, self.camera_pose(), &self.config.camera);
        let noise_seed = self.rng.gen::<u64>();
        let noisy = apply_sensor_noise(&clean, &self.config.noise, &self.config.camera, noise_seed);
        let code = self.dce.encode(&noisy, &mut self.rng)?;
        Ok(build_observation(
            &self.state,
            self.goal,
            self.prev_action,
            &code.z,
        ))
    }

    fn reward_params(&self) -> RewardParams {
        self.config
            .reward
            .at_level(self.level.max(self.config.reward_level_floor))
    }

    /// Advance one agent step: command, jittered physics sub-steps with
    /// collision checks and random kicks, reward, fresh observation.
    pub fn step(&mut self, action: [T; 3]) -> Result<StepResult<T>> {
        if self.done {
            return Err(Error::EpisodeFinished);
        }
        let cmd = action_to_command(action, &self.config.limits);
        let k = if self.config.latency_jitter {
            self.rng
                .gen_range(self.config.substeps_min..=self.config.substeps_max)
        } else {
            self.config.substeps_nominal
        };

        let mut crashed = false;
        for _ in 0..k {
            self.state = step_physics(&self.state, &cmd, &self.config.vehicle, self.tau);
            apply_random_wrench(&mut self.state, &self.config.kicks, &mut self.rng);
            let pose = Pose::new(self.state.p, Quaternion::from_yaw(self.state.q.yaw()));
            if check_collision(&self.world, pose, &self.robot) {
                crashed = true;
                break;
            }
        }
        self.step_count += 1;

        let dist = self.dist_to_goal();
        let reward = compute_reward(
            self.prev_dist,
            dist,
            action,
            self.prev_action,
            &self.reward_params(),
            crashed,
            &self.config.limits,
        );
        self.return_acc += reward;
        self.prev_dist = dist;
        self.min_dist = self.min_dist.min(dist);
        self.crashed = crashed;

        let reached = self.min_dist <= self.config.success_radius;
        self.done = crashed
            || self.step_count >= self.config.episode_len
            || (self.config.end_on_success && reached);
        let outcome = self
            .done
            .then(|| classify_outcome(crashed, self.min_dist, self.config.success_radius));

        let obs = self.observe()?;
        self.prev_action = action;
        Ok(StepResult {
            obs,
            reward,
            done: self.done,
            outcome,
            dist_g: dist,
            substeps: k,
        })
    }

    /// Record for the episode that just finished.
    pub fn finish_record(&self) -> EpisodeRecord {
        EpisodeRecord {
            seed: self.episode_seed(),
            level: self.level,
            outcome: classify_outcome(self.crashed, self.min_dist, self.config.success_radius),
            steps: self.step_count,
            final_dist: self.dist_to_goal(),
            ret: self.return_acc,
        }
    }

    /// Pack the mutable episode state; the world and mount regenerate from
    /// the stored seeds on restore.
    pub fn snapshot(&self) -> EnvSnapshot {
        let st = StreamState::capture(rng::derive(self.seed, ENV_RNG_TAG), &self.rng);
        let mut words = vec![
            self.seed,
            self.episode_index,
            self.level as u64,
            self.step_count as u64,
            (self.done as u64) | ((self.crashed as u64) << 1),
            st.word_pos as u64,
            (st.word_pos >> 64) as u64,
            self.world.seed,
            self.world.level as u64,
        ];
        let mut floats: Vec<f64> = Vec::with_capacity(25);
        let push3 = |fs: &mut Vec<f64>, v: Vector3<T>| {
            fs.extend(v.to_array().iter().map(|c| c.to_f64_lossy()));
        };
        push3(&mut floats, self.start);
        push3(&mut floats, self.goal);
        floats.push(self.tau.to_f64_lossy());
        push3(&mut floats, self.state.p);
        push3(&mut floats, self.state.v);
        floats.extend([
            self.state.q.w.to_f64_lossy(),
            self.state.q.x.to_f64_lossy(),
            self.state.q.y.to_f64_lossy(),
            self.state.q.z.to_f64_lossy(),
        ]);
        push3(&mut floats, self.state.omega);
        floats.extend(self.prev_action.iter().map(|a| a.to_f64_lossy()));
        floats.push(self.prev_dist);
        floats.push(self.return_acc);
        floats.push(self.min_dist);
        words.extend(floats.iter().map(|f| f.to_bits()));
        EnvSnapshot { words }
    }

    /// Restore from a snapshot taken with the same config and DCE.
    pub fn restore(&mut self, snap: &EnvSnapshot) -> Result<()> {
        let w = &snap.words;
        if w.len() != 9 + 26 {
            return Err(Error::format("snapshot", "wrong word count"));
        }
        let f = |i: usize| f64::from_bits(w[9 + i]);
        let v3 = |i: usize| Vector3::new(real::<T>(f(i)), real(f(i + 1)), real(f(i + 2)));

        self.seed = w[0];
        self.episode_index = w[1];
        self.level = w[2] as u32;
        self.step_count = w[3] as usize;
        self.done = w[4] & 1 != 0;
        self.crashed = w[4] & 2 != 0;
        self.rng = StreamState {
            seed: rng::derive(self.seed, ENV_RNG_TAG),
            word_pos: (w[5] as u128) | ((w[6] as u128) << 64),
        }
        .restore();
        self.world = generate_world(w[8] as u32, &self.config.world, w[7]);
        let ep_seed = rng::derive(self.seed, self.episode_index);
        self.mount = perturb_camera_mount(Pose::identity(), &self.config.mount, ep_seed);

        self.start = v3(0);
        self.goal = v3(3);
        self.tau = real(f(6));
        self.state = RobotState {
            p: v3(7),
            v: v3(10),
            q: Quaternion::new(real(f(13)), real(f(14)), real(f(15)), real(f(16))),
            omega: v3(17),
        };
        self.prev_action = [real(f(20)), real(f(21)), real(f(22))];
        self.prev_dist = f(23);
        self.return_acc = f(24);
        self.min_dist = f(25);
        Ok(())
    }
}
