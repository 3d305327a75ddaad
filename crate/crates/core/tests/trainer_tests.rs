//! Trainer oracles: recurrence consistency, finite-difference policy
//! gradients, GAE closed forms, squashing bounds, zero-advantage behavior,
//! and bitwise determinism with exact checkpoint resume.

use latnav_core::camera::CameraIntrinsics;
use latnav_core::dce::{DceConfig, DceModel};
use latnav_core::env::EnvConfig;
use latnav_core::neural::gradcheck::{finite_diff, max_rel_error};
use latnav_core::rng;
use latnav_core::trainer::{
    gae, log_prob, log_prob_grad, sample_action, PolicyConfig, PolicyNet, TrainConfig, Trainer,
};
use rand::Rng;
use std::sync::Arc;

fn tiny_policy(seed: u64) -> PolicyNet<f64> {
    let config = PolicyConfig {
        trunk: vec![10, 8],
        gru_hidden: 6,
    };
    PolicyNet::new(7, &config, seed)
}

#[test]
fn forward_is_finite_and_deterministic() {
    let net = tiny_policy(3);
    let obs = vec![0.0; 7];
    let h = net.zero_hidden();
    let (mean_a, value_a, h_a, _) = net.forward(&obs, &h).unwrap();
    let (mean_b, value_b, h_b, _) = net.forward(&obs, &h).unwrap();
    assert_eq!(mean_a, mean_b);
    assert_eq!(value_a, value_b);
    assert_eq!(h_a, h_b);
    assert!(mean_a.iter().all(|m| m.is_finite()));
    assert!(value_a.is_finite());
    assert!(net.forward(&vec![0.0; 5], &h).is_err());
}

#[test]
fn two_step_sequence_equals_chained_single_steps() {
    let net = tiny_policy(4);
    let mut r = rng::stream(4, 1);
    let obs1: Vec<f64> = (0..7).map(|_| r.gen_range(-1.0..1.0)).collect();
    let obs2: Vec<f64> = (0..7).map(|_| r.gen_range(-1.0..1.0)).collect();

    // Chained: feed obs1, carry hidden into obs2.
    let (_, _, h1, _) = net.forward(&obs1, &net.zero_hidden()).unwrap();
    let (mean_chained, value_chained, _, _) = net.forward(&obs2, &h1).unwrap();

    // The same two calls again from scratch must reproduce it exactly.
    let (_, _, h1b, _) = net.forward(&obs1, &net.zero_hidden()).unwrap();
    assert_eq!(h1, h1b);
    let (mean_again, value_again, _, _) = net.forward(&obs2, &h1b).unwrap();
    assert_eq!(mean_chained, mean_again);
    assert_eq!(value_chained, value_again);

    // And the hidden state must matter: a zeroed hidden gives a different
    // second-step output.
    let (mean_reset, _, _, _) = net.forward(&obs2, &net.zero_hidden()).unwrap();
    assert_ne!(mean_chained, mean_reset);
}

#[test]
fn policy_gradients_match_finite_differences() {
    // Scalar loss projecting mean, value and the hidden recurrence through
    // two chained steps; checks every parameter tensor including the GRU.
    let net = tiny_policy(5);
    let mut r = rng::stream(5, 2);
    let obs1: Vec<f64> = (0..7).map(|_| r.gen_range(-1.0..1.0)).collect();
    let obs2: Vec<f64> = (0..7).map(|_| r.gen_range(-1.0..1.0)).collect();
    let pm: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
    let pv: f64 = r.gen_range(-1.0..1.0);

    let loss_of = |n: &PolicyNet<f64>| -> f64 {
        let (_, _, h1, _) = n.forward(&obs1, &n.zero_hidden()).unwrap();
        let (mean, value, _, _) = n.forward(&obs2, &h1).unwrap();
        mean.iter().zip(&pm).map(|(a, b)| a * b).sum::<f64>() + pv * value
    };

    // Analytic: BPTT over the two steps.
    let mut grads = net.grads_zero();
    let (_, _, h1, cache1) = net.forward(&obs1, &net.zero_hidden()).unwrap();
    let (_, _, _, cache2) = net.forward(&obs2, &h1).unwrap();
    let d_h1 = net.backward_acc(&cache2, &pm, pv, &vec![0.0; 6], &mut grads);
    net.backward_acc(&cache1, &[0.0; 3], 0.0, &d_h1, &mut grads);

    let params = net.param_tensors();
    let grad_tensors = grads.tensors();
    for (idx, (p, g)) in params.iter().zip(&grad_tensors).enumerate() {
        // log_std does not influence mean/value; skip the all-zero tensor.
        if g.data.iter().all(|&v| v == 0.0) {
            continue;
        }
        let mut n2 = net.clone();
        let reference = p.data.clone();
        let numeric = finite_diff(
            |xs: &[f64]| {
                n2.param_tensors_mut()[idx].data.copy_from_slice(xs);
                loss_of(&n2)
            },
            &reference,
            1e-4,
        );
        assert!(
            max_rel_error(&g.data, &numeric) < 1e-3,
            "param {idx} gradient mismatch"
        );
    }
}

#[test]
fn log_prob_gradients_match_finite_differences() {
    let mut r = rng::stream(6, 0);
    let u: Vec<f64> = (0..3).map(|_| r.gen_range(-2.0..2.0)).collect();
    let mean: Vec<f64> = (0..3).map(|_| r.gen_range(-1.0..1.0)).collect();
    let ls = latnav_core::neural::Tensor::from_vec(
        &[3],
        (0..3).map(|_| r.gen_range(-1.0..0.5)).collect(),
    )
    .unwrap();

    let (d_mean, d_ls) = log_prob_grad(&u, &mean, &ls);
    let num_mean = finite_diff(|m: &[f64]| log_prob(&u, m, &ls), &mean, 1e-5);
    assert!(max_rel_error(&d_mean, &num_mean) < 1e-3);

    let mut ls2 = ls.clone();
    let num_ls = finite_diff(
        |xs: &[f64]| {
            ls2.data.copy_from_slice(xs);
            log_prob(&u, &mean, &ls2)
        },
        &ls.data.clone(),
        1e-5,
    );
    assert!(max_rel_error(&d_ls, &num_ls) < 1e-3);
}

#[test]
fn sampled_actions_always_squashed_into_bounds() {
    let ls = latnav_core::neural::Tensor::from_vec(&[3], vec![2.0_f64; 3]).unwrap();
    let mut r = rng::stream(7, 0);
    for _ in 0..10_000 {
        let mean = vec![r.gen_range(-5.0..5.0), 0.0, r.gen_range(-5.0..5.0)];
        let (_, a) = sample_action(&mean, &ls, &mut r);
        for c in a {
            assert!((-1.0..=1.0).contains(&c));
        }
    }
}

#[test]
fn gae_with_lambda_one_is_discounted_monte_carlo() {
    // Hand-built 3-step episode, exact arithmetic.
    let gamma = 0.5;
    let rewards = [1.0, 2.0, 3.0];
    let values = [10.0, 20.0, 30.0];
    let dones = [false, false, true];
    let (adv, ret) = gae(&rewards, &values, &dones, 99.0, gamma, 1.0);

    // Discounted returns: G2 = 3, G1 = 2 + 0.5*3 = 3.5, G0 = 1 + 0.5*3.5.
    let g = [1.0 + 0.5 * (2.0 + 0.5 * 3.0), 2.0 + 0.5 * 3.0, 3.0];
    for t in 0..3 {
        assert!((adv[t] - (g[t] - values[t])).abs() < 1e-12, "t={t}");
        assert!((ret[t] - g[t]).abs() < 1e-12);
    }
}

#[test]
fn constant_reward_return_matches_geometric_series() {
    let gamma = 0.98;
    let t_len = 40;
    let rewards = vec![1.0; t_len];
    let values = vec![0.0; t_len];
    let mut dones = vec![false; t_len];
    dones[t_len - 1] = true;
    let (_, ret) = gae(&rewards, &values, &dones, 0.0, gamma, 1.0);
    let closed_form = (1.0 - gamma.powi(t_len as i32)) / (1.0 - gamma);
    assert!((ret[0] - closed_form).abs() < 1e-9);
}

#[test]
fn bootstrap_is_masked_on_terminal_final_step() {
    let (adv_done, _) = gae(&[1.0], &[0.0], &[true], 123.0, 0.9, 0.95);
    assert!((adv_done[0] - 1.0).abs() < 1e-12);
    let (adv_live, _) = gae(&[1.0], &[0.0], &[false], 2.0, 0.9, 0.95);
    assert!((adv_live[0] - (1.0 + 0.9 * 2.0)).abs() < 1e-12);
}

fn tiny_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        env: EnvConfig {
            camera: CameraIntrinsics::new(16, 12, 87.0),
            episode_len: 20,
            ..EnvConfig::default()
        },
        policy: PolicyConfig {
            trunk: vec![16, 8],
            gru_hidden: 6,
        },
        n_envs: 2,
        rollout_len: 8,
        ppo_epochs: 2,
        seed,
        ..TrainConfig::default()
    }
}

fn tiny_dce() -> Arc<DceModel<f32>> {
    Arc::new(DceModel::new(
        DceConfig {
            input_width: 16,
            input_height: 12,
            latent_dim: 4,
            conv_channels: vec![4, 8],
            ..DceConfig::default()
        },
        7,
    ))
}

#[test]
fn rollout_shape_and_bitwise_determinism() {
    let mut a = Trainer::new(tiny_train_config(11), tiny_dce()).unwrap();
    let mut b = Trainer::new(tiny_train_config(11), tiny_dce()).unwrap();
    let buf_a = a.collect_rollout().unwrap();
    let buf_b = b.collect_rollout().unwrap();
    assert_eq!(buf_a.n_envs(), 2);
    assert_eq!(buf_a.len(), 8);
    assert_eq!(buf_a.obs, buf_b.obs);
    assert_eq!(buf_a.u, buf_b.u);
    assert_eq!(buf_a.logp, buf_b.logp);
    assert_eq!(buf_a.reward, buf_b.reward);
    assert_eq!(buf_a.done, buf_b.done);

    let m_a = a.ppo_update(&buf_a).unwrap();
    let m_b = b.ppo_update(&buf_b).unwrap();
    assert_eq!(m_a, m_b);
    assert_eq!(a.policy.param_tensors(), b.policy.param_tensors());
}

#[test]
fn zero_advantage_buffer_leaves_actor_untouched() {
    let mut t = Trainer::new(tiny_train_config(13), tiny_dce()).unwrap();
    let mut buf = t.collect_rollout().unwrap();
    for i in 0..buf.n_envs() {
        for s in 0..buf.len() {
            buf.reward[i][s] = 0.0;
            buf.value[i][s] = 0.0;
        }
        buf.bootstrap[i] = 0.0;
    }
    let actor_w = t.policy.actor.w.clone();
    let actor_b = t.policy.actor.b.clone();
    let log_std = t.policy.log_std.clone();
    t.ppo_update(&buf).unwrap();
    // No advantage, no surrogate gradient: the actor head cannot move, while
    // the entropy bonus still pushes log_std.
    assert_eq!(t.policy.actor.w, actor_w);
    assert_eq!(t.policy.actor.b, actor_b);
    assert_ne!(t.policy.log_std, log_std);
}

#[test]
fn checkpoint_resume_reproduces_uninterrupted_run() {
    let mut reference = Trainer::new(tiny_train_config(17), tiny_dce()).unwrap();
    for _ in 0..2 {
        let buf = reference.collect_rollout().unwrap();
        reference.ppo_update(&buf).unwrap();
    }
    let ck = reference.to_checkpoint();
    let buf = reference.collect_rollout().unwrap();
    let expected = reference.ppo_update(&buf).unwrap();

    let mut resumed = Trainer::new(tiny_train_config(17), tiny_dce()).unwrap();
    resumed.restore(&ck).unwrap();
    let buf2 = resumed.collect_rollout().unwrap();
    assert_eq!(buf.obs, buf2.obs);
    assert_eq!(buf.logp, buf2.logp);
    let got = resumed.ppo_update(&buf2).unwrap();
    assert_eq!(expected, got);
    assert_eq!(reference.policy.param_tensors(), resumed.policy.param_tensors());
}

#[test]
fn checkpoint_roundtrip_restores_policy_exactly() {
    let net = PolicyNet::<f32>::new(19, &PolicyConfig::default(), 3);
    let mut ck = latnav_core::neural::Checkpoint::default();
    net.write_checkpoint(&mut ck);
    let bytes = ck.encode();
    let back = PolicyNet::<f32>::from_checkpoint(
        &latnav_core::neural::Checkpoint::decode(&bytes).unwrap(),
    )
    .unwrap();
    assert_eq!(net, back);
}
