//! Recurrent actor-critic PPO over batched environments.
//!
//! The policy is a dense trunk (512/256/64, ELU) feeding a 64-unit GRU whose
//! hidden state carries across steps and resets on episode boundaries. The
//! actor emits a Gaussian over pre-squash actions with a learnable,
//! state-independent log standard deviation; actions are tanh-squashed into
//! [-1,1]^3. Updates are synchronous clipped PPO with GAE and an adaptive
//! learning rate driven by the measured policy KL.
//!
//! Everything is deterministic under fixed seeds: environments step in
//! lockstep, per-environment gradients are reduced in index order, and the
//! optimizer runs single-threaded.

use crate::dce::DceModel;
use crate::env::{CurriculumConfig, CurriculumState, EnvConfig, EpisodeRecord, NavEnv, Observation};
use crate::error::{Error, Result};
use crate::neural::{
    elu, elu_backward, AdamState, Checkpoint, Dense, DenseGrads, GruCache, GruCell, GruGrads,
    Tensor,
};
use crate::num::{real, Real};
use crate::rng::{self, StreamState};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

const ACT_DIM: usize = 3;
/// Variance floor inside the tanh correction term.
const SQUASH_EPS: f64 = 1e-6;

/// Network shape; the defaults mirror the reference architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub trunk: Vec<usize>,
    pub gru_hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            trunk: vec![512, 256, 64],
            gru_hidden: 64,
        }
    }
}

/// Actor-critic network with a recurrent core.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet<T> {
    pub obs_dim: usize,
    pub trunk: Vec<Dense<T>>,
    pub gru: GruCell<T>,
    pub actor: Dense<T>,
    /// State-independent log standard deviation per action channel.
    pub log_std: Tensor<T>,
    pub critic: Dense<T>,
}

/// Per-step activations for backpropagation through time.
pub struct PolicyCache<T> {
    /// Input to each trunk layer.
    trunk_in: Vec<Vec<T>>,
    /// Pre-activation of each trunk layer.
    trunk_pre: Vec<Vec<T>>,
    gru: GruCache<T>,
    /// GRU output, read by both heads.
    feat: Vec<T>,
}

/// Gradients in the same layout as [`PolicyNet`].
pub struct PolicyGrads<T> {
    pub trunk: Vec<DenseGrads<T>>,
    pub gru: GruGrads<T>,
    pub actor: DenseGrads<T>,
    pub log_std: Tensor<T>,
    pub critic: DenseGrads<T>,
}

impl<T: Real> PolicyGrads<T> {
    pub fn add_assign(&mut self, other: &Self) {
        let one = T::one();
        for (a, b) in self.trunk.iter_mut().zip(&other.trunk) {
            a.w.add_assign_scaled(&b.w, one);
            a.b.add_assign_scaled(&b.b, one);
        }
        self.gru.w_ih.add_assign_scaled(&other.gru.w_ih, one);
        self.gru.w_hh.add_assign_scaled(&other.gru.w_hh, one);
        self.gru.b_ih.add_assign_scaled(&other.gru.b_ih, one);
        self.gru.b_hh.add_assign_scaled(&other.gru.b_hh, one);
        self.actor.w.add_assign_scaled(&other.actor.w, one);
        self.actor.b.add_assign_scaled(&other.actor.b, one);
        self.log_std.add_assign_scaled(&other.log_std, one);
        self.critic.w.add_assign_scaled(&other.critic.w, one);
        self.critic.b.add_assign_scaled(&other.critic.b, one);
    }

    pub fn scale(&mut self, s: T) {
        for g in self.trunk.iter_mut() {
            g.w.scale(s);
            g.b.scale(s);
        }
        self.gru.w_ih.scale(s);
        self.gru.w_hh.scale(s);
        self.gru.b_ih.scale(s);
        self.gru.b_hh.scale(s);
        self.actor.w.scale(s);
        self.actor.b.scale(s);
        self.log_std.scale(s);
        self.critic.w.scale(s);
        self.critic.b.scale(s);
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for g in &self.trunk {
            out.push(&g.w);
            out.push(&g.b);
        }
        out.extend([&self.gru.w_ih, &self.gru.w_hh, &self.gru.b_ih, &self.gru.b_hh]);
        out.extend([&self.actor.w, &self.actor.b, &self.log_std, &self.critic.w, &self.critic.b]);
        out
    }
}

impl<T: Real> PolicyNet<T> {
    pub fn new(obs_dim: usize, config: &PolicyConfig, seed: u64) -> Self {
        let mut r = rng::stream(seed, 0x70_6f_6c); // "pol"
        let mut trunk = Vec::new();
        let mut in_dim = obs_dim;
        for &width in &config.trunk {
            trunk.push(Dense::new(in_dim, width, &mut r));
            in_dim = width;
        }
        let gru = GruCell::new(in_dim, config.gru_hidden, &mut r);
        let mut actor = Dense::new(config.gru_hidden, ACT_DIM, &mut r);
        // A small head keeps early actions near zero and values near zero.
        actor.w.scale(real(0.01));
        let mut critic = Dense::new(config.gru_hidden, 1, &mut r);
        critic.w.scale(real(0.1));
        Self {
            obs_dim,
            trunk,
            gru,
            actor,
            // Modest initial exploration noise: large action noise on the
            // inclination channel walks the vehicle into the floor or
            // ceiling before it can discover goal-directed behavior.
            log_std: Tensor::from_vec(&[ACT_DIM], vec![real(-1.0); ACT_DIM]).unwrap(),
            critic,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.gru.hidden_dim()
    }

    pub fn zero_hidden(&self) -> Vec<T> {
        vec![T::zero(); self.hidden_dim()]
    }

    /// One recurrent step: (action mean, value, new hidden, cache).
    pub fn forward(&self, obs: &[T], hidden: &[T]) -> Result<(Vec<T>, T, Vec<T>, PolicyCache<T>)> {
        if obs.len() != self.obs_dim {
            return Err(Error::ShapeMismatch(format!(
                "policy expects obs dim {}, got {}",
                self.obs_dim,
                obs.len()
            )));
        }
        let mut trunk_in = Vec::with_capacity(self.trunk.len());
        let mut trunk_pre = Vec::with_capacity(self.trunk.len());
        let mut act = obs.to_vec();
        for layer in &self.trunk {
            let pre = layer.forward(&act)?;
            trunk_in.push(act);
            act = elu(&pre);
            trunk_pre.push(pre);
        }
        let (feat, gru_cache) = self.gru.forward(&act, hidden)?;
        let mean = self.actor.forward(&feat)?;
        let value = self.critic.forward(&feat)?[0];
        let h_new = feat.clone();
        Ok((
            mean,
            value,
            h_new,
            PolicyCache {
                trunk_in,
                trunk_pre,
                gru: gru_cache,
                feat,
            },
        ))
    }

    /// Backward through one step. `d_h_next` is the gradient flowing into
    /// this step's output hidden from the future; returns the gradient for
    /// the previous hidden state.
    pub fn backward_acc(
        &self,
        cache: &PolicyCache<T>,
        d_mean: &[T],
        d_value: T,
        d_h_next: &[T],
        grads: &mut PolicyGrads<T>,
    ) -> Vec<T> {
        let mut d_feat = self.actor.backward_acc(&cache.feat, d_mean, &mut grads.actor);
        let d_feat_v = self
            .critic
            .backward_acc(&cache.feat, &[d_value], &mut grads.critic);
        for i in 0..d_feat.len() {
            d_feat[i] = d_feat[i] + d_feat_v[i] + d_h_next[i];
        }
        let (mut d_x, d_h_prev) = self.gru.backward_acc(&cache.gru, &d_feat, &mut grads.gru);
        for li in (0..self.trunk.len()).rev() {
            let d_pre = elu_backward(&cache.trunk_pre[li], &d_x);
            d_x = self.trunk[li].backward_acc(&cache.trunk_in[li], &d_pre, &mut grads.trunk[li]);
        }
        d_h_prev
    }

    pub fn grads_zero(&self) -> PolicyGrads<T> {
        PolicyGrads {
            trunk: self.trunk.iter().map(|l| l.grads_zero()).collect(),
            gru: self.gru.grads_zero(),
            actor: self.actor.grads_zero(),
            log_std: self.log_std.zeros_like(),
            critic: self.critic.grads_zero(),
        }
    }

    pub fn param_tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for l in &self.trunk {
            out.push(&l.w);
            out.push(&l.b);
        }
        out.extend([&self.gru.w_ih, &self.gru.w_hh, &self.gru.b_ih, &self.gru.b_hh]);
        out.extend([&self.actor.w, &self.actor.b, &self.log_std, &self.critic.w, &self.critic.b]);
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        for l in self.trunk.iter_mut() {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.gru.w_ih);
        out.push(&mut self.gru.w_hh);
        out.push(&mut self.gru.b_ih);
        out.push(&mut self.gru.b_hh);
        out.push(&mut self.actor.w);
        out.push(&mut self.actor.b);
        out.push(&mut self.log_std);
        out.push(&mut self.critic.w);
        out.push(&mut self.critic.b);
        out
    }

    fn named_params(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        for (i, l) in self.trunk.iter().enumerate() {
            out.push((format!("policy.trunk{i}.w"), &l.w));
            out.push((format!("policy.trunk{i}.b"), &l.b));
        }
        out.push(("policy.gru.w_ih".into(), &self.gru.w_ih));
        out.push(("policy.gru.w_hh".into(), &self.gru.w_hh));
        out.push(("policy.gru.b_ih".into(), &self.gru.b_ih));
        out.push(("policy.gru.b_hh".into(), &self.gru.b_hh));
        out.push(("policy.actor.w".into(), &self.actor.w));
        out.push(("policy.actor.b".into(), &self.actor.b));
        out.push(("policy.log_std".into(), &self.log_std));
        out.push(("policy.critic.w".into(), &self.critic.w));
        out.push(("policy.critic.b".into(), &self.critic.b));
        out
    }

    pub fn write_checkpoint(&self, ck: &mut Checkpoint) {
        ck.push_words(
            "policy.meta",
            [self.obs_dim as u64, self.gru.hidden_dim() as u64]
                .into_iter()
                .chain(self.trunk.iter().map(|l| l.out_dim() as u64))
                .collect(),
        );
        for (name, t) in self.named_params() {
            ck.push_tensor(&name, t);
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta = ck.get("policy.meta")?.words()?;
        if meta.len() < 2 {
            return Err(Error::format("checkpoint", "short policy.meta"));
        }
        let config = PolicyConfig {
            trunk: meta[2..].iter().map(|&w| w as usize).collect(),
            gru_hidden: meta[1] as usize,
        };
        let mut net = Self::new(meta[0] as usize, &config, 0);
        for (i, l) in net.trunk.iter_mut().enumerate() {
            l.w = ck.tensor(&format!("policy.trunk{i}.w"))?;
            l.b = ck.tensor(&format!("policy.trunk{i}.b"))?;
        }
        net.gru.w_ih = ck.tensor("policy.gru.w_ih")?;
        net.gru.w_hh = ck.tensor("policy.gru.w_hh")?;
        net.gru.b_ih = ck.tensor("policy.gru.b_ih")?;
        net.gru.b_hh = ck.tensor("policy.gru.b_hh")?;
        net.actor.w = ck.tensor("policy.actor.w")?;
        net.actor.b = ck.tensor("policy.actor.b")?;
        net.log_std = ck.tensor("policy.log_std")?;
        net.critic.w = ck.tensor("policy.critic.w")?;
        net.critic.b = ck.tensor("policy.critic.b")?;
        Ok(net)
    }
}

/// Draw a pre-squash sample u ~ N(mean, std) and return (u, tanh(u)).
pub fn sample_action<T: Real>(
    mean: &[T],
    log_std: &Tensor<T>,
    rng: &mut rng::Stream,
) -> (Vec<T>, [T; 3]) {
    let mut u = Vec::with_capacity(mean.len());
    for i in 0..mean.len() {
        let eps = real::<T>(rng::standard_normal(rng));
        u.push(mean[i] + log_std.data[i].exp() * eps);
    }
    let mut a = [T::zero(); 3];
    for i in 0..3 {
        a[i] = u[i].tanh();
    }
    (u, a)
}

/// Greedy action: the squashed mean.
pub fn mean_action<T: Real>(mean: &[T]) -> [T; 3] {
    [mean[0].tanh(), mean[1].tanh(), mean[2].tanh()]
}

/// Log density of the tanh-squashed Gaussian at the stored pre-squash
/// sample u: the base Gaussian term plus the change-of-variables correction.
pub fn log_prob<T: Real>(u: &[T], mean: &[T], log_std: &Tensor<T>) -> f64 {
    let mut lp = 0.0;
    for i in 0..u.len() {
        let m = mean[i].to_f64_lossy();
        let ls = log_std.data[i].to_f64_lossy();
        let ui = u[i].to_f64_lossy();
        let z = (ui - m) / ls.exp();
        lp += -0.5 * z * z - ls - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let t = ui.tanh();
        lp -= (1.0 - t * t + SQUASH_EPS).ln();
    }
    lp
}

/// d log_prob / d mean and d log_prob / d log_std at fixed u. The squash
/// correction does not depend on the distribution parameters.
pub fn log_prob_grad<T: Real>(u: &[T], mean: &[T], log_std: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
    let mut d_mean = Vec::with_capacity(u.len());
    let mut d_ls = Vec::with_capacity(u.len());
    for i in 0..u.len() {
        let m = mean[i].to_f64_lossy();
        let ls = log_std.data[i].to_f64_lossy();
        let var = (2.0 * ls).exp();
        let diff = u[i].to_f64_lossy() - m;
        d_mean.push(diff / var);
        d_ls.push(diff * diff / var - 1.0);
    }
    (d_mean, d_ls)
}

/// Entropy of the pre-squash Gaussian (the squashed entropy has no closed
/// form; this is the standard surrogate for the bonus).
pub fn entropy<T: Real>(log_std: &Tensor<T>) -> f64 {
    let c = 0.5 * (1.0 + (2.0 * std::f64::consts::PI).ln());
    log_std.data.iter().map(|ls| ls.to_f64_lossy() + c).sum()
}

/// Generalized advantage estimation over one environment's sequence.
/// `dones[t]` marks a terminal transition at step t; the bootstrap value is
/// used past the horizon when the last step is not terminal.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lam: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let mask = if dones[t] { 0.0 } else { 1.0 };
        let next_v = if t + 1 < n { values[t + 1] } else { bootstrap };
        let delta = rewards[t] + gamma * next_v * mask - values[t];
        acc = delta + gamma * lam * mask * acc;
        adv[t] = acc;
    }
    let ret: Vec<f64> = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// One rollout window across all environments, in [env][time] layout.
pub struct RolloutBuffer<T> {
    pub obs: Vec<Vec<Vec<T>>>,
    /// Pre-squash action samples.
    pub u: Vec<Vec<Vec<T>>>,
    pub logp: Vec<Vec<f64>>,
    pub reward: Vec<Vec<f64>>,
    pub value: Vec<Vec<f64>>,
    pub done: Vec<Vec<bool>>,
    /// Hidden state of each env at the start of the window.
    pub h0: Vec<Vec<T>>,
    pub bootstrap: Vec<f64>,
}

impl<T> RolloutBuffer<T> {
    pub fn n_envs(&self) -> usize {
        self.obs.len()
    }

    pub fn len(&self) -> usize {
        self.obs.first().map_or(0, |o| o.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub curriculum: CurriculumConfig,
    pub policy: PolicyConfig,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub adaptive_lr: bool,
    pub kl_target: f64,
    /// Global L2 gradient-norm ceiling (0 disables clipping).
    pub max_grad_norm: f64,
    pub n_envs: usize,
    pub rollout_len: usize,
    pub ppo_epochs: usize,
    pub total_steps: u64,
    /// Env steps between checkpoints.
    pub checkpoint_every: u64,
    /// Stop early once the curriculum reaches this level (0 disables).
    pub stop_at_level: u32,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            curriculum: CurriculumConfig::default(),
            policy: PolicyConfig::default(),
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            entropy_coef: 0.003,
            value_coef: 0.5,
            learning_rate: 3e-4,
            adaptive_lr: true,
            kl_target: 0.01,
            max_grad_norm: 0.5,
            n_envs: 64,
            rollout_len: 32,
            ppo_epochs: 2,
            total_steps: 2_000_000,
            checkpoint_every: 100_000,
            stop_at_level: 0,
            seed: 0,
        }
    }
}

/// Per-update diagnostics, one CSV row each.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMetrics {
    pub env_steps: u64,
    pub level: u32,
    pub success_rate: f64,
    pub crash_rate: f64,
    pub timeout_rate: f64,
    pub mean_return: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub kl: f64,
    pub lr: f64,
}

impl UpdateMetrics {
    pub fn csv_header() -> &'static str {
        "env_steps,level,success_rate,crash_rate,timeout_rate,mean_return,policy_loss,value_loss,entropy,kl,lr"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.8},{:.3e}",
            self.env_steps,
            self.level,
            self.success_rate,
            self.crash_rate,
            self.timeout_rate,
            self.mean_return,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.kl,
            self.lr
        )
    }
}

const ACTION_RNG_TAG: u64 = 0x61_63_74; // "act"

/// The full training state: policy, optimizer, environments, curriculum.
pub struct Trainer<T: Real> {
    pub config: TrainConfig,
    pub policy: PolicyNet<T>,
    pub adam: AdamState<T>,
    pub lr: f64,
    pub envs: Vec<NavEnv<T>>,
    pub hidden: Vec<Vec<T>>,
    pub last_obs: Vec<Vec<T>>,
    action_rng: Vec<rng::Stream>,
    pub curriculum: CurriculumState,
    pub env_steps: u64,
    pub updates: u64,
    /// Episodes finished since the last drain.
    pub pending_episodes: Vec<EpisodeRecord>,
    /// Per-env discounted return trace and its Welford accumulator; rewards
    /// are scaled by the running return std so the critic regresses O(1)
    /// targets regardless of the shaping magnitude.
    ret_trace: Vec<f64>,
    ret_count: f64,
    ret_mean: f64,
    ret_m2: f64,
}

impl<T: Real> Trainer<T> {
    pub fn new(config: TrainConfig, dce: Arc<DceModel<T>>) -> Result<Self> {
        let obs_dim = Observation::<T>::dim(dce.latent_dim());
        let policy = PolicyNet::new(obs_dim, &config.policy, config.seed);
        let adam = AdamState::new(&policy.param_tensors(), real(config.learning_rate));
        let curriculum = CurriculumState::new(config.curriculum.clone());

        let mut envs = Vec::with_capacity(config.n_envs);
        let mut last_obs = Vec::with_capacity(config.n_envs);
        let mut action_rng = Vec::with_capacity(config.n_envs);
        for i in 0..config.n_envs {
            let env_seed = rng::derive(config.seed, 0x1000 + i as u64);
            let mut env = NavEnv::new(config.env.clone(), Arc::clone(&dce), env_seed, 0)?;
            let obs = env.reset()?;
            last_obs.push(obs.to_vec());
            envs.push(env);
            action_rng.push(rng::stream(env_seed, ACTION_RNG_TAG));
        }
        let hidden = vec![policy.zero_hidden(); config.n_envs];
        let lr = config.learning_rate;
        let n_envs = config.n_envs;
        Ok(Self {
            config,
            policy,
            adam,
            lr,
            envs,
            hidden,
            last_obs,
            action_rng,
            curriculum,
            env_steps: 0,
            updates: 0,
            pending_episodes: Vec::new(),
            ret_trace: vec![0.0; n_envs],
            ret_count: 0.0,
            ret_mean: 0.0,
            ret_m2: 0.0,
        })
    }

    /// Update the per-env discounted return trace and return the reward in
    /// running-std units (clipped), so value targets stay O(1).
    fn normalize_reward(&mut self, i: usize, reward: f64, done: bool) -> f64 {
        self.ret_trace[i] = self.config.gamma * self.ret_trace[i] + reward;
        self.ret_count += 1.0;
        let delta = self.ret_trace[i] - self.ret_mean;
        self.ret_mean += delta / self.ret_count;
        self.ret_m2 += delta * (self.ret_trace[i] - self.ret_mean);
        if done {
            self.ret_trace[i] = 0.0;
        }
        let std = if self.ret_count > 1.0 {
            (self.ret_m2 / self.ret_count).sqrt().max(1e-4)
        } else {
            1.0
        };
        (reward / std).clamp(-10.0, 10.0)
    }

    /// Collect one rollout window in lockstep across environments.
    pub fn collect_rollout(&mut self) -> Result<RolloutBuffer<T>> {
        let n = self.config.n_envs;
        let steps = self.config.rollout_len;
        let mut buf = RolloutBuffer {
            obs: vec![Vec::with_capacity(steps); n],
            u: vec![Vec::with_capacity(steps); n],
            logp: vec![Vec::with_capacity(steps); n],
            reward: vec![Vec::with_capacity(steps); n],
            value: vec![Vec::with_capacity(steps); n],
            done: vec![Vec::with_capacity(steps); n],
            h0: self.hidden.clone(),
            bootstrap: vec![0.0; n],
        };

        for _ in 0..steps {
            let policy = &self.policy;
            // Parallel over independent environments; each slot owns its
            // env, hidden state and action stream, so results land in place.
            let step_outputs: Vec<Result<StepSlot<T>>> = self
                .envs
                .par_iter_mut()
                .zip(self.hidden.par_iter_mut())
                .zip(self.last_obs.par_iter_mut())
                .zip(self.action_rng.par_iter_mut())
                .map(|(((env, hidden), last_obs), arng)| {
                    let (mean, value, h_new, _cache) = policy.forward(last_obs, hidden)?;
                    let (u, a) = sample_action(&mean, &policy.log_std, arng);
                    let lp = log_prob(&u, &mean, &policy.log_std);
                    let result = env.step(a)?;
                    let obs_taken = std::mem::replace(last_obs, result.obs.to_vec());
                    *hidden = h_new;
                    let mut record = None;
                    if result.done {
                        record = Some(env.finish_record());
                    }
                    Ok(StepSlot {
                        obs: obs_taken,
                        u,
                        logp: lp,
                        value: value.to_f64_lossy(),
                        reward: result.reward,
                        done: result.done,
                        record,
                    })
                })
                .collect();

            for (i, slot) in step_outputs.into_iter().enumerate() {
                let slot = slot?;
                buf.obs[i].push(slot.obs);
                buf.u[i].push(slot.u);
                buf.logp[i].push(slot.logp);
                buf.value[i].push(slot.value);
                buf.reward[i].push(self.normalize_reward(i, slot.reward, slot.done));
                buf.done[i].push(slot.done);
                if let Some(record) = slot.record {
                    self.curriculum.record(record.outcome);
                    self.pending_episodes.push(record);
                    // Fresh episode at the current curriculum level.
                    self.envs[i].set_level(self.curriculum.level);
                    let obs = self.envs[i].reset()?;
                    self.last_obs[i] = obs.to_vec();
                    self.hidden[i] = self.policy.zero_hidden();
                }
            }
            self.env_steps += n as u64;
        }

        // Bootstrap values for unfinished episodes.
        for i in 0..n {
            if !buf.done[i][steps - 1] {
                let (_, v, _, _) = self.policy.forward(&self.last_obs[i], &self.hidden[i])?;
                buf.bootstrap[i] = v.to_f64_lossy();
            }
        }
        Ok(buf)
    }

    /// Clipped-surrogate PPO update with full backpropagation through the
    /// rollout window. Returns diagnostics from the final epoch.
    pub fn ppo_update(&mut self, buf: &RolloutBuffer<T>) -> Result<UpdateMetrics> {
        let n = buf.n_envs();
        let steps = buf.len();
        let total = (n * steps) as f64;

        // Advantages once, from the stored (old) values.
        let mut adv = Vec::with_capacity(n);
        let mut ret = Vec::with_capacity(n);
        for i in 0..n {
            let (a, r) = gae(
                &buf.reward[i],
                &buf.value[i],
                &buf.done[i],
                buf.bootstrap[i],
                self.config.gamma,
                self.config.gae_lambda,
            );
            adv.push(a);
            ret.push(r);
        }
        // Normalize advantages over the whole batch.
        let mean_adv = adv.iter().flatten().sum::<f64>() / total;
        let var_adv =
            adv.iter().flatten().map(|a| (a - mean_adv).powi(2)).sum::<f64>() / total;
        let std_adv = var_adv.sqrt().max(1e-8);
        for row in adv.iter_mut() {
            for a in row.iter_mut() {
                *a = (*a - mean_adv) / std_adv;
            }
        }

        let mut last = UpdateMetrics {
            env_steps: self.env_steps,
            level: self.curriculum.level,
            success_rate: self.curriculum.success_rate(),
            crash_rate: self.curriculum.crash_rate(),
            timeout_rate: 0.0,
            mean_return: buf.reward.iter().flatten().sum::<f64>() / n as f64,
            policy_loss: 0.0,
            value_loss: 0.0,
            entropy: 0.0,
            kl: 0.0,
            lr: self.lr,
        };
        last.timeout_rate = (1.0 - last.success_rate - last.crash_rate).max(0.0);

        for _epoch in 0..self.config.ppo_epochs {
            let policy = &self.policy;
            let clip = self.config.clip_ratio;
            let v_coef = self.config.value_coef;
            let e_coef = self.config.entropy_coef;

            // Per-env BPTT in parallel; reduce in index order below.
            let per_env: Vec<Result<EnvBackward<T>>> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let mut grads = policy.grads_zero();
                    let mut caches = Vec::with_capacity(steps);
                    let mut means = Vec::with_capacity(steps);
                    let mut h = buf.h0[i].clone();
                    let mut stats = LossStats::default();

                    for t in 0..steps {
                        let (mean, value, h_new, cache) = policy.forward(&buf.obs[i][t], &h)?;
                        h = if buf.done[i][t] {
                            policy.zero_hidden()
                        } else {
                            h_new
                        };
                        let lp_new = log_prob(&buf.u[i][t], &mean, &policy.log_std);
                        stats.kl += buf.logp[i][t] - lp_new;
                        let ratio = (lp_new - buf.logp[i][t]).exp();
                        let a = adv[i][t];
                        let unclipped = ratio * a;
                        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * a;
                        stats.policy_loss += -unclipped.min(clipped);
                        let v = value.to_f64_lossy();
                        stats.value_loss += 0.5 * (v - ret[i][t]).powi(2);
                        caches.push((cache, value));
                        means.push((mean, ratio, a));
                    }

                    // Backward through time.
                    let mut d_h = vec![T::zero(); policy.hidden_dim()];
                    for t in (0..steps).rev() {
                        let (cache, value) = &caches[t];
                        let (mean, ratio, a) = &means[t];
                        // Gradient of -min(r A, clip(r) A) wrt log-prob.
                        let active = if *a >= 0.0 {
                            *ratio <= 1.0 + clip
                        } else {
                            *ratio >= 1.0 - clip
                        };
                        let d_lp = if active { -ratio * a / total } else { 0.0 };
                        let (g_mean, g_ls) = log_prob_grad(&buf.u[i][t], mean, &policy.log_std);
                        let d_mean: Vec<T> =
                            g_mean.iter().map(|g| real::<T>(g * d_lp)).collect();
                        for k in 0..ACT_DIM {
                            // Surrogate plus entropy bonus on log_std.
                            let g = g_ls[k] * d_lp - e_coef / total;
                            grads.log_std.data[k] = grads.log_std.data[k] + real(g);
                        }
                        let d_value =
                            real::<T>(v_coef * (value.to_f64_lossy() - ret[i][t]) / total);
                        let d_h_in = if buf.done[i][t] {
                            vec![T::zero(); policy.hidden_dim()]
                        } else {
                            d_h
                        };
                        d_h = policy.backward_acc(cache, &d_mean, d_value, &d_h_in, &mut grads);
                    }
                    Ok(EnvBackward { grads, stats })
                })
                .collect();

            let mut grads = self.policy.grads_zero();
            let mut stats = LossStats::default();
            for r in per_env {
                let eb = r?;
                grads.add_assign(&eb.grads);
                stats.policy_loss += eb.stats.policy_loss;
                stats.value_loss += eb.stats.value_loss;
                stats.kl += eb.stats.kl;
            }

            let kl = stats.kl / total;
            if !kl.is_finite() || !stats.policy_loss.is_finite() {
                return Err(Error::Diverged {
                    quantity: "PPO losses".into(),
                    step: self.env_steps,
                });
            }

            // The first epoch always measures kl = 0 (the policy has not
            // moved since the rollout), so only later epochs carry real
            // drift information: adapt the step size on them, and stop
            // re-using the stale rollout once the policy has left the
            // trust region.
            if _epoch > 0 {
                if self.config.adaptive_lr {
                    if kl > 2.0 * self.config.kl_target {
                        self.lr = (self.lr * 0.5).max(1e-6);
                    } else if kl.abs() < 0.5 * self.config.kl_target {
                        // Ramp up gently and cap at 3x the configured rate:
                        // an unbounded ramp-up produces update KLs far past
                        // the target and undoes previously learned behavior.
                        self.lr = (self.lr * 1.2).min(self.config.learning_rate * 3.0);
                    }
                }
                if kl > 1.5 * self.config.kl_target {
                    last.kl = kl;
                    last.lr = self.lr;
                    break;
                }
            }

            // Global gradient-norm clipping.
            if self.config.max_grad_norm > 0.0 {
                let norm = grads
                    .tensors()
                    .iter()
                    .map(|t| {
                        t.data
                            .iter()
                            .map(|v| {
                                let f = v.to_f64_lossy();
                                f * f
                            })
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    .sqrt();
                if norm > self.config.max_grad_norm {
                    grads.scale(real(self.config.max_grad_norm / norm));
                }
            }

            self.adam.lr = real(self.lr);
            let grad_tensors = grads.tensors();
            let mut params = self.policy.param_tensors_mut();
            self.adam.step(&mut params, &grad_tensors)?;
            for p in self.policy.param_tensors() {
                if !p.is_finite() {
                    return Err(Error::Diverged {
                        quantity: "policy parameters".into(),
                        step: self.env_steps,
                    });
                }
            }

            last.policy_loss = stats.policy_loss / total;
            last.value_loss = stats.value_loss / total;
            last.entropy = entropy(&self.policy.log_std);
            last.kl = kl;
            last.lr = self.lr;
        }

        self.updates += 1;
        self.curriculum.update();
        Ok(last)
    }

    /// Serialize the complete training state for exact resume.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push_words(
            "trainer.meta",
            vec![
                self.env_steps,
                self.updates,
                self.config.n_envs as u64,
                self.lr.to_bits(),
                self.config.seed,
            ],
        );
        self.policy.write_checkpoint(&mut ck);
        ck.push_words("adam.meta", vec![self.adam.step]);
        for (i, (m, v)) in self.adam.m.iter().zip(&self.adam.v).enumerate() {
            ck.push_tensor(&format!("adam.m{i}"), m);
            ck.push_tensor(&format!("adam.v{i}"), v);
        }
        let mut cur_words = vec![self.curriculum.level as u64];
        cur_words.extend(outcome_codes(&self.curriculum));
        ck.push_words("curriculum", cur_words);
        let mut ret_words = vec![
            self.ret_count.to_bits(),
            self.ret_mean.to_bits(),
            self.ret_m2.to_bits(),
        ];
        ret_words.extend(self.ret_trace.iter().map(|t| t.to_bits()));
        ck.push_words("trainer.ret_norm", ret_words);
        for i in 0..self.envs.len() {
            ck.push_words(&format!("env{i}.snap"), self.envs[i].snapshot().words);
            ck.push_tensor(
                &format!("env{i}.hidden"),
                &Tensor::from_vec(&[self.hidden[i].len()], self.hidden[i].clone()).unwrap(),
            );
            ck.push_tensor(
                &format!("env{i}.obs"),
                &Tensor::from_vec(&[self.last_obs[i].len()], self.last_obs[i].clone()).unwrap(),
            );
            let env_seed = rng::derive(self.config.seed, 0x1000 + i as u64);
            let st = StreamState::capture(
                rng::derive(env_seed, ACTION_RNG_TAG),
                &self.action_rng[i],
            );
            ck.push_words(
                &format!("env{i}.act_rng"),
                vec![st.word_pos as u64, (st.word_pos >> 64) as u64],
            );
        }
        ck
    }

    /// Restore state saved by [`Trainer::to_checkpoint`]. The config and DCE
    /// must match the ones used when saving.
    pub fn restore(&mut self, ck: &Checkpoint) -> Result<()> {
        let meta = ck.get("trainer.meta")?.words()?;
        if meta.len() < 5 {
            return Err(Error::format("checkpoint", "short trainer.meta"));
        }
        if meta[2] as usize != self.config.n_envs {
            return Err(Error::format(
                "checkpoint",
                format!("saved {} envs, config has {}", meta[2], self.config.n_envs),
            ));
        }
        self.env_steps = meta[0];
        self.updates = meta[1];
        self.lr = f64::from_bits(meta[3]);
        self.policy = PolicyNet::from_checkpoint(ck)?;
        self.adam.step = ck.get("adam.meta")?.words()?[0];
        for i in 0..self.adam.m.len() {
            self.adam.m[i] = ck.tensor(&format!("adam.m{i}"))?;
            self.adam.v[i] = ck.tensor(&format!("adam.v{i}"))?;
        }
        let cur = ck.get("curriculum")?.words()?;
        self.curriculum = CurriculumState::new(self.config.curriculum.clone());
        self.curriculum.level = cur[0] as u32;
        restore_outcomes(&mut self.curriculum, &cur[1..]);
        let ret = ck.get("trainer.ret_norm")?.words()?;
        if ret.len() != 3 + self.config.n_envs {
            return Err(Error::format("checkpoint", "short trainer.ret_norm"));
        }
        self.ret_count = f64::from_bits(ret[0]);
        self.ret_mean = f64::from_bits(ret[1]);
        self.ret_m2 = f64::from_bits(ret[2]);
        for (i, w) in ret[3..].iter().enumerate() {
            self.ret_trace[i] = f64::from_bits(*w);
        }
        for i in 0..self.envs.len() {
            let snap = crate::env::EnvSnapshot {
                words: ck.get(&format!("env{i}.snap"))?.words()?.to_vec(),
            };
            self.envs[i].restore(&snap)?;
            self.hidden[i] = ck.tensor::<T>(&format!("env{i}.hidden"))?.data;
            self.last_obs[i] = ck.tensor::<T>(&format!("env{i}.obs"))?.data;
            let w = ck.get(&format!("env{i}.act_rng"))?.words()?;
            let env_seed = rng::derive(self.config.seed, 0x1000 + i as u64);
            self.action_rng[i] = StreamState {
                seed: rng::derive(env_seed, ACTION_RNG_TAG),
                word_pos: (w[0] as u128) | ((w[1] as u128) << 64),
            }
            .restore();
        }
        Ok(())
    }
}

struct StepSlot<T> {
    obs: Vec<T>,
    u: Vec<T>,
    logp: f64,
    value: f64,
    reward: f64,
    done: bool,
    record: Option<EpisodeRecord>,
}

struct EnvBackward<T: Real> {
    grads: PolicyGrads<T>,
    stats: LossStats,
}

#[derive(Default)]
struct LossStats {
    policy_loss: f64,
    value_loss: f64,
    kl: f64,
}

fn outcome_codes(cur: &CurriculumState) -> Vec<u64> {
    use crate::env::EpisodeOutcome::*;
    cur.window_iter()
        .map(|o| match o {
            Success => 0,
            Crash => 1,
            Timeout => 2,
        })
        .collect()
}

fn restore_outcomes(cur: &mut CurriculumState, codes: &[u64]) {
    use crate::env::EpisodeOutcome::*;
    for &c in codes {
        cur.record(match c {
            0 => Success,
            1 => Crash,
            _ => Timeout,
        });
    }
}

/// Outcome of a full training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub env_steps: u64,
    pub updates: u64,
    pub final_level: u32,
}

/// Run the training loop, streaming metrics and episode logs to CSV and
/// checkpointing periodically. `resume` restores a previous checkpoint
/// before continuing toward the step budget.
pub fn train_rl<T: Real>(
    config: TrainConfig,
    dce: Arc<DceModel<T>>,
    out_dir: &Path,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    std::fs::create_dir_all(out_dir)?;
    let mut trainer = Trainer::new(config, dce)?;
    if let Some(path) = resume {
        trainer.restore(&Checkpoint::load(path)?)?;
    }

    let fresh = trainer.env_steps == 0;
    let mut metrics = open_csv(&out_dir.join("metrics.csv"), UpdateMetrics::csv_header(), fresh)?;
    let mut episodes =
        open_csv(&out_dir.join("episodes.csv"), EpisodeRecord::csv_header(), fresh)?;

    let mut next_checkpoint = trainer.env_steps + trainer.config.checkpoint_every;
    while trainer.env_steps < trainer.config.total_steps {
        let buf = trainer.collect_rollout()?;
        let m = trainer.ppo_update(&buf)?;
        writeln!(metrics, "{}", m.csv_row())?;
        for ep in trainer.pending_episodes.drain(..) {
            writeln!(episodes, "{}", ep.csv_row())?;
        }
        if trainer.env_steps >= next_checkpoint {
            trainer.to_checkpoint().save(&out_dir.join("latest.ckpt"))?;
            next_checkpoint += trainer.config.checkpoint_every;
        }
        if trainer.config.stop_at_level > 0
            && trainer.curriculum.level >= trainer.config.stop_at_level
        {
            break;
        }
    }
    metrics.flush()?;
    episodes.flush()?;
    trainer.to_checkpoint().save(&out_dir.join("latest.ckpt"))?;
    Ok(TrainSummary {
        env_steps: trainer.env_steps,
        updates: trainer.updates,
        final_level: trainer.curriculum.level,
    })
}

fn open_csv(path: &Path, header: &str, fresh: bool) -> Result<std::io::BufWriter<std::fs::File>> {
    use std::io::BufWriter;
    let exists = path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(path)?;
    let mut w = BufWriter::new(file);
    if fresh || !exists {
        writeln!(w, "{header}")?;
    }
    Ok(w)
}
