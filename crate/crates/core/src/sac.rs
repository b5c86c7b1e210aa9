//! Soft actor–critic for the scheduling environment: a squashed-Gaussian
//! policy, twin critics with Polyak-averaged targets, automatic temperature
//! tuning, a FIFO replay buffer, and binary policy checkpoints.
//!
//! Gradients are written out by hand on top of [`crate::nn`]; the loss
//! functions are exposed so tests can hold everything else fixed and compare
//! each gradient against central finite differences.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::env::{episode_seed, normalize_state, Env, EnvError, EnvState, NormCaps, SyncMode};
use crate::metrics::{Accumulator, EpisodeMetrics};
use crate::nn::{polyak_update, Adam, Mlp, Workspace};
use crate::num::Real;
use crate::sched::Agent;

/// Clamp range for the policy's log standard deviations.
pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Learner hyperparameters.
#[derive(Debug, Clone)]
pub struct SacConfig {
    /// Hidden-layer widths shared by the policy and both critics.
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    /// Adam learning rate, shared by policy, critics, and temperature.
    pub lr: f64,
    /// Multiplier applied to the learning rate every `lr_decay_every`
    /// episodes (1.0 disables decay).
    pub lr_decay: f64,
    pub lr_decay_every: u64,
    /// Initial entropy temperature α.
    pub alpha_init: f64,
    /// Entropy target for automatic temperature tuning; `None` means
    /// −(action dimension).
    pub target_entropy: Option<f64>,
    /// Target-network averaging coefficient τ.
    pub polyak: f64,
    /// Environment steps between gradient bursts.
    pub train_every: u64,
    /// Gradient steps per burst.
    pub gradient_steps: u64,
    /// Uniform-random environment steps before the policy takes over.
    pub warmup_steps: u64,
    pub buffer_capacity: usize,
    pub gamma: f64,
}

impl SacConfig {
    /// Default hyperparameters, sized by worker count: twenty or more
    /// workers get the larger 3×512 networks, everything else 2×256.
    pub fn for_workers(k: usize) -> Self {
        let hidden = if k >= 20 { vec![512; 3] } else { vec![256; 2] };
        SacConfig {
            hidden,
            batch_size: 256,
            lr: 1e-3,
            lr_decay: 0.99,
            lr_decay_every: 6000,
            alpha_init: 0.8,
            target_entropy: None,
            polyak: 0.005,
            train_every: 1000,
            gradient_steps: 1000,
            warmup_steps: 100,
            buffer_capacity: 2_000_000,
            gamma: 1.0,
        }
    }
}

/// One stored environment transition (observations are normalized states).
#[derive(Debug, Clone)]
pub struct Transition<R: Real> {
    pub state: Box<[R]>,
    pub action: Box<[R]>,
    pub reward: R,
    pub next_state: Box<[R]>,
    pub done: bool,
}

/// Fixed-capacity FIFO replay buffer; once full, the oldest transition is
/// overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer<R: Real> {
    data: Vec<Transition<R>>,
    capacity: usize,
    write: usize,
}

impl<R: Real> ReplayBuffer<R> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        ReplayBuffer {
            data: Vec::new(),
            capacity,
            write: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition<R>) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.write] = t;
        }
        self.write = (self.write + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition<R> {
        &self.data[i]
    }

    /// Distinct indices, uniform without replacement.
    pub fn sample_indices(&self, rng: &mut ChaCha12Rng, n: usize) -> Vec<usize> {
        rand::seq::index::sample(rng, self.data.len(), n).into_vec()
    }
}

fn clamp_log_std<R: Real>(raw: R) -> (R, bool) {
    let lo = R::of(LOG_STD_MIN);
    let hi = R::of(LOG_STD_MAX);
    if raw < lo {
        (lo, false)
    } else if raw > hi {
        (hi, false)
    } else {
        (raw, true)
    }
}

/// Numerically safe ln(1 + eˣ).
fn softplus<R: Real>(x: R) -> R {
    if x > R::of(30.0) {
        x
    } else if x < R::of(-30.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Everything one squashed-Gaussian evaluation produces for a single state
/// and noise vector.
#[derive(Debug, Clone)]
pub struct PolicyEval<R: Real> {
    pub mu: Vec<R>,
    /// Clamped log standard deviations.
    pub log_std: Vec<R>,
    /// Whether each raw log-std fell inside the clamp (gradient passes).
    pub in_range: Vec<bool>,
    pub sigma: Vec<R>,
    /// Pre-squash sample u = μ + σ·ξ.
    pub u: Vec<R>,
    /// Squashed action a = tanh(u).
    pub action: Vec<R>,
    /// log π(a|s) including the tanh change-of-variables correction.
    pub log_pi: R,
}

impl<R: Real> PolicyEval<R> {
    pub fn new(action_dim: usize) -> Self {
        PolicyEval {
            mu: vec![R::zero(); action_dim],
            log_std: vec![R::zero(); action_dim],
            in_range: vec![true; action_dim],
            sigma: vec![R::zero(); action_dim],
            u: vec![R::zero(); action_dim],
            action: vec![R::zero(); action_dim],
            log_pi: R::zero(),
        }
    }
}

/// Run the policy head on one state with a fixed noise vector ξ. The network
/// emits `[μ; log σ]`; the action is tanh(μ + σξ) and the log-density uses
/// log(1 − tanh²u) = 2(ln 2 − u − softplus(−2u)) for stability.
pub fn eval_policy<R: Real>(
    policy: &Mlp<R>,
    state: &[R],
    noise: &[R],
    ws: &mut Workspace<R>,
    out: &mut PolicyEval<R>,
) {
    let adim = noise.len();
    let head = policy.forward(state, ws);
    assert_eq!(head.len(), 2 * adim, "policy head width mismatch");
    let half = R::of(0.5);
    let two = R::of(2.0);
    let ln2 = R::of(std::f64::consts::LN_2);
    let half_ln_2pi = R::of(0.5 * (2.0 * std::f64::consts::PI).ln());
    let mut log_pi = R::zero();
    for d in 0..adim {
        let mu = head[d];
        let (ls, in_range) = clamp_log_std(head[adim + d]);
        let sigma = ls.exp();
        let xi = noise[d];
        let u = mu + sigma * xi;
        let a = u.tanh();
        let gauss = -half * xi * xi - ls - half_ln_2pi;
        let log_one_minus_a2 = two * (ln2 - u - softplus(-two * u));
        log_pi = log_pi + gauss - log_one_minus_a2;
        out.mu[d] = mu;
        out.log_std[d] = ls;
        out.in_range[d] = in_range;
        out.sigma[d] = sigma;
        out.u[d] = u;
        out.action[d] = a;
    }
    out.log_pi = log_pi;
}

/// Mean squared Bellman error of one critic against fixed targets.
pub fn critic_loss<R: Real>(
    critic: &Mlp<R>,
    states: &[&[R]],
    actions: &[&[R]],
    targets: &[R],
) -> R {
    let b = states.len();
    assert!(b > 0 && actions.len() == b && targets.len() == b);
    let sdim = states[0].len();
    let mut ws = Workspace::new();
    let mut sa = vec![R::zero(); critic.in_dim()];
    let mut loss = R::zero();
    for i in 0..b {
        sa[..sdim].copy_from_slice(states[i]);
        sa[sdim..].copy_from_slice(actions[i]);
        let q = critic.forward(&sa, &mut ws)[0];
        let err = q - targets[i];
        loss = loss + err * err;
    }
    loss / R::of(b as f64)
}

/// Same loss; parameter gradients are written into `grads` (zeroed first).
pub fn critic_loss_and_grads<R: Real>(
    critic: &Mlp<R>,
    states: &[&[R]],
    actions: &[&[R]],
    targets: &[R],
    grads: &mut Mlp<R>,
) -> R {
    let b = states.len();
    assert!(b > 0 && actions.len() == b && targets.len() == b);
    let sdim = states[0].len();
    let inv_b = R::of(1.0 / b as f64);
    grads.zero();
    let mut ws = Workspace::new();
    let mut sa = vec![R::zero(); critic.in_dim()];
    let mut loss = R::zero();
    for i in 0..b {
        sa[..sdim].copy_from_slice(states[i]);
        sa[sdim..].copy_from_slice(actions[i]);
        let q = critic.forward(&sa, &mut ws)[0];
        let err = q - targets[i];
        loss = loss + err * err;
        let d_q = R::of(2.0) * err * inv_b;
        critic.backward(&mut ws, &[d_q], Some(grads), None);
    }
    loss * inv_b
}

/// Policy objective: mean over the batch of α·log π(a|s) − min_i Q_i(s, a),
/// with a = tanh(μ + σξ) re-parameterized through the fixed noises.
pub fn policy_loss<R: Real>(
    policy: &Mlp<R>,
    critics: &[Mlp<R>; 2],
    log_alpha: R,
    states: &[&[R]],
    noises: &[&[R]],
) -> R {
    let b = states.len();
    assert!(b > 0 && noises.len() == b);
    let adim = policy.out_dim() / 2;
    let sdim = policy.in_dim();
    let alpha = log_alpha.exp();
    let mut ws = Workspace::new();
    let mut wsq = Workspace::new();
    let mut pe = PolicyEval::new(adim);
    let mut sa = vec![R::zero(); sdim + adim];
    let mut loss = R::zero();
    for (s, xi) in states.iter().zip(noises.iter()) {
        eval_policy(policy, s, xi, &mut ws, &mut pe);
        sa[..sdim].copy_from_slice(s);
        sa[sdim..].copy_from_slice(&pe.action);
        let q0 = critics[0].forward(&sa, &mut wsq)[0];
        let q1 = critics[1].forward(&sa, &mut wsq)[0];
        let qmin = if q0 <= q1 { q0 } else { q1 };
        loss = loss + alpha * pe.log_pi - qmin;
    }
    loss / R::of(b as f64)
}

/// Same objective; policy gradients are written into `grads` (zeroed first)
/// and the per-sample log-probabilities into `log_pis`.
pub fn policy_loss_and_grads<R: Real>(
    policy: &Mlp<R>,
    critics: &[Mlp<R>; 2],
    log_alpha: R,
    states: &[&[R]],
    noises: &[&[R]],
    grads: &mut Mlp<R>,
    log_pis: &mut Vec<R>,
) -> R {
    let b = states.len();
    assert!(b > 0 && noises.len() == b);
    let adim = policy.out_dim() / 2;
    let sdim = policy.in_dim();
    let alpha = log_alpha.exp();
    let inv_b = R::of(1.0 / b as f64);
    let two = R::of(2.0);
    grads.zero();
    log_pis.clear();

    let mut ws_p = Workspace::new();
    let mut ws_c = [Workspace::new(), Workspace::new()];
    let mut pe = PolicyEval::new(adim);
    let mut sa = vec![R::zero(); sdim + adim];
    let mut d_sa = vec![R::zero(); sdim + adim];
    let mut d_head = vec![R::zero(); 2 * adim];
    let mut loss = R::zero();

    for (s, xi) in states.iter().zip(noises.iter()) {
        eval_policy(policy, s, xi, &mut ws_p, &mut pe);
        sa[..sdim].copy_from_slice(s);
        sa[sdim..].copy_from_slice(&pe.action);
        let q0 = critics[0].forward(&sa, &mut ws_c[0])[0];
        let q1 = critics[1].forward(&sa, &mut ws_c[1])[0];
        let (ci, qmin) = if q0 <= q1 { (0, q0) } else { (1, q1) };
        loss = loss + alpha * pe.log_pi - qmin;

        // dQ/d(state, action) of the smaller critic at the sampled action
        critics[ci].backward(&mut ws_c[ci], &[R::one()], None, Some(&mut d_sa));
        for d in 0..adim {
            let a = pe.action[d];
            let dq_da = d_sa[sdim + d];
            // d(α logπ − Q)/du, using dlogπ/du = 2·tanh(u) and da/du = 1 − a²
            let t = alpha * two * a - dq_da * (R::one() - a * a);
            d_head[d] = t * inv_b;
            d_head[adim + d] = if pe.in_range[d] {
                (t * pe.sigma[d] * xi[d] - alpha) * inv_b
            } else {
                R::zero()
            };
        }
        policy.backward(&mut ws_p, &d_head, Some(grads), None);
        log_pis.push(pe.log_pi);
    }
    loss * inv_b
}

/// One-step soft Bellman backup, y = r + γ(1 − done)(min Q′(s′, a′) − α log π′),
/// with a′ drawn from the current policy via the provided noises.
pub fn bellman_targets<R: Real>(
    policy: &Mlp<R>,
    target_critics: &[Mlp<R>; 2],
    log_alpha: R,
    gamma: R,
    rewards: &[R],
    dones: &[bool],
    next_states: &[&[R]],
    noises: &[&[R]],
) -> Vec<R> {
    let b = rewards.len();
    assert!(dones.len() == b && next_states.len() == b && noises.len() == b);
    let adim = policy.out_dim() / 2;
    let sdim = policy.in_dim();
    let alpha = log_alpha.exp();
    let mut ws = Workspace::new();
    let mut wsq = Workspace::new();
    let mut pe = PolicyEval::new(adim);
    let mut sa = vec![R::zero(); sdim + adim];
    let mut y = Vec::with_capacity(b);
    for i in 0..b {
        if dones[i] {
            y.push(rewards[i]);
            continue;
        }
        eval_policy(policy, next_states[i], noises[i], &mut ws, &mut pe);
        sa[..sdim].copy_from_slice(next_states[i]);
        sa[sdim..].copy_from_slice(&pe.action);
        let q0 = target_critics[0].forward(&sa, &mut wsq)[0];
        let q1 = target_critics[1].forward(&sa, &mut wsq)[0];
        let qmin = if q0 <= q1 { q0 } else { q1 };
        y.push(rewards[i] + gamma * (qmin - alpha * pe.log_pi));
    }
    y
}

#[derive(Debug, Error)]
pub enum SacError {
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    NotEnoughData { have: usize, need: usize },
    #[error("non-finite {term} ({value}); aborting update")]
    NonFinite { term: &'static str, value: f64 },
    #[error("training expects worker-side synchronization, environment uses {0}")]
    WrongSyncMode(SyncMode),
    #[error("agent built for {agent} workers, environment has {env}")]
    WorkerMismatch { agent: usize, env: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
}

fn ensure_finite<R: Real>(term: &'static str, v: R) -> Result<(), SacError> {
    let value = v.f64();
    if value.is_finite() {
        Ok(())
    } else {
        Err(SacError::NonFinite { term, value })
    }
}

/// Diagnostics from one gradient step.
#[derive(Debug, Clone, Copy)]
pub struct LossReport {
    /// Mean of the two critics' squared Bellman errors.
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    /// Monte-Carlo entropy estimate, −mean(log π).
    pub entropy: f64,
    /// Temperature before this step's adjustment.
    pub alpha: f64,
}

/// Soft actor–critic learner: one policy, twin critics, twin Polyak targets,
/// and a learned temperature.
#[derive(Debug)]
pub struct SacAgent<R: Real> {
    cfg: SacConfig,
    k: usize,
    state_dim: usize,
    action_dim: usize,
    norm: NormCaps,
    policy: Mlp<R>,
    critics: [Mlp<R>; 2],
    targets: [Mlp<R>; 2],
    opt_policy: Adam<R>,
    opt_critics: [Adam<R>; 2],
    opt_alpha: Adam<R>,
    log_alpha: R,
    target_entropy: f64,
    lr: f64,
    buffer: ReplayBuffer<R>,
    rng: ChaCha12Rng,
    env_steps: u64,
    grad_steps: u64,
    // scratch reused across updates
    ws: Workspace<R>,
    g_policy: Mlp<R>,
    g_critic: Mlp<R>,
    log_pis: Vec<R>,
}

impl<R: Real> SacAgent<R> {
    /// Fresh networks for a K-worker environment. `norm` must be the caps of
    /// the environment the agent will see; they ride along into checkpoints.
    pub fn new(k: usize, norm: NormCaps, cfg: SacConfig, seed: u64) -> Self {
        assert!(k >= 1, "need at least one worker");
        assert!(!cfg.hidden.is_empty(), "need at least one hidden layer");
        assert!(cfg.batch_size > 0, "batch size must be positive");
        assert!(
            cfg.buffer_capacity >= cfg.batch_size,
            "buffer smaller than one batch"
        );
        assert!(cfg.alpha_init > 0.0, "temperature must start positive");
        let state_dim = 6 * k + 1;
        let action_dim = 2 * k;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let pdims: Vec<usize> = std::iter::once(state_dim)
            .chain(cfg.hidden.iter().copied())
            .chain(std::iter::once(2 * action_dim))
            .collect();
        let qdims: Vec<usize> = std::iter::once(state_dim + action_dim)
            .chain(cfg.hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let policy = Mlp::new(&pdims, &mut rng);
        let critics = [Mlp::new(&qdims, &mut rng), Mlp::new(&qdims, &mut rng)];
        let targets = critics.clone();
        let g_policy = policy.zeros_like();
        let g_critic = critics[0].zeros_like();
        SacAgent {
            opt_policy: Adam::new(policy.num_params()),
            opt_critics: [
                Adam::new(critics[0].num_params()),
                Adam::new(critics[1].num_params()),
            ],
            opt_alpha: Adam::new(1),
            log_alpha: R::of(cfg.alpha_init.ln()),
            target_entropy: cfg.target_entropy.unwrap_or(-(action_dim as f64)),
            lr: cfg.lr,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            rng,
            env_steps: 0,
            grad_steps: 0,
            ws: Workspace::new(),
            g_policy,
            g_critic,
            log_pis: Vec::new(),
            cfg,
            k,
            state_dim,
            action_dim,
            norm,
            policy,
            critics,
            targets,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp().f64()
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    /// Uniform exploration action in [−1, 1]^{2K}.
    pub fn random_action(&mut self) -> Vec<R> {
        (0..self.action_dim)
            .map(|_| R::of(self.rng.gen_range(-1.0..1.0)))
            .collect()
    }

    /// Action for a normalized observation: tanh of the Gaussian sample, or
    /// of the mean when `deterministic`. Stochastic calls consume exactly
    /// `2K` draws from the agent's RNG; deterministic calls consume none.
    pub fn select_action(&mut self, obs: &[R], deterministic: bool) -> Vec<R> {
        assert_eq!(obs.len(), self.state_dim, "observation length");
        let head = self.policy.forward(obs, &mut self.ws);
        let adim = self.action_dim;
        let mut out = Vec::with_capacity(adim);
        for d in 0..adim {
            let u = if deterministic {
                head[d]
            } else {
                let (ls, _) = clamp_log_std(head[adim + d]);
                let xi: f64 = self.rng.sample(StandardNormal);
                head[d] + ls.exp() * R::of(xi)
            };
            out.push(u.tanh());
        }
        out
    }

    /// Store one transition (normalized observations).
    pub fn remember(&mut self, state: &[R], action: &[R], reward: R, next_state: &[R], done: bool) {
        debug_assert_eq!(state.len(), self.state_dim);
        debug_assert_eq!(action.len(), self.action_dim);
        self.buffer.push(Transition {
            state: Box::from(state),
            action: Box::from(action),
            reward,
            next_state: Box::from(next_state),
            done,
        });
    }

    /// One gradient step: critics toward the soft Bellman targets, then the
    /// policy against the freshly updated critics, then the temperature,
    /// then the Polyak target update. Any non-finite loss aborts with an
    /// error before parameters are touched by the offending step.
    pub fn update(&mut self) -> Result<LossReport, SacError> {
        let need = self.cfg.batch_size;
        let have = self.buffer.len();
        if have < need {
            return Err(SacError::NotEnoughData { have, need });
        }
        let adim = self.action_dim;
        let gamma = R::of(self.cfg.gamma);
        let alpha_before = self.log_alpha.exp().f64();

        // Frozen draw order: batch indices, next-action noises, policy noises.
        let idx = self.buffer.sample_indices(&mut self.rng, need);
        let mut xi_next = Vec::with_capacity(need * adim);
        for _ in 0..need * adim {
            xi_next.push(R::of(self.rng.sample::<f64, _>(StandardNormal)));
        }
        let mut xi = Vec::with_capacity(need * adim);
        for _ in 0..need * adim {
            xi.push(R::of(self.rng.sample::<f64, _>(StandardNormal)));
        }

        let mut states = Vec::with_capacity(need);
        let mut actions = Vec::with_capacity(need);
        let mut rewards = Vec::with_capacity(need);
        let mut dones = Vec::with_capacity(need);
        let mut next_states = Vec::with_capacity(need);
        for &i in &idx {
            let t = self.buffer.get(i);
            states.push(&*t.state);
            actions.push(&*t.action);
            rewards.push(t.reward);
            dones.push(t.done);
            next_states.push(&*t.next_state);
        }
        let xi_next_refs: Vec<&[R]> = xi_next.chunks(adim).collect();
        let xi_refs: Vec<&[R]> = xi.chunks(adim).collect();

        let y = bellman_targets(
            &self.policy,
            &self.targets,
            self.log_alpha,
            gamma,
            &rewards,
            &dones,
            &next_states,
            &xi_next_refs,
        );

        let mut critic_loss_sum = 0.0;
        for ci in 0..2 {
            let l = critic_loss_and_grads(
                &self.critics[ci],
                &states,
                &actions,
                &y,
                &mut self.g_critic,
            );
            ensure_finite("critic loss", l)?;
            self.opt_critics[ci].step(
                self.lr,
                self.critics[ci].params_mut(),
                self.g_critic.params(),
            );
            critic_loss_sum += l.f64();
        }

        let ploss = policy_loss_and_grads(
            &self.policy,
            &self.critics,
            self.log_alpha,
            &states,
            &xi_refs,
            &mut self.g_policy,
            &mut self.log_pis,
        );
        ensure_finite("policy loss", ploss)?;
        self.opt_policy
            .step(self.lr, self.policy.params_mut(), self.g_policy.params());

        let mean_lp = self.log_pis.iter().copied().sum::<R>() / R::of(need as f64);
        ensure_finite("log-probability mean", mean_lp)?;
        let gap = mean_lp + R::of(self.target_entropy);
        let alpha_loss = -self.log_alpha * gap;
        self.opt_alpha.step(
            self.lr,
            std::iter::once(&mut self.log_alpha),
            std::iter::once(-gap),
        );

        let tau = R::of(self.cfg.polyak);
        for ci in 0..2 {
            polyak_update(&mut self.targets[ci], &self.critics[ci], tau);
        }
        self.grad_steps += 1;

        Ok(LossReport {
            critic_loss: 0.5 * critic_loss_sum,
            policy_loss: ploss.f64(),
            alpha_loss: alpha_loss.f64(),
            entropy: -mean_lp.f64(),
            alpha: alpha_before,
        })
    }

    /// Freeze the current policy together with its normalization caps.
    pub fn export_policy(&self) -> TrainedPolicy<R> {
        TrainedPolicy {
            k: self.k,
            policy: self.policy.clone(),
            norm: self.norm.clone(),
        }
    }
}

/// Offline training: episodes are seeded from `master_seed` by index, actions
/// are uniform for the first `warmup_steps` environment steps, and a burst of
/// `gradient_steps` updates runs every `train_every` steps once the buffer
/// can fill a batch. The callback sees every finished episode.
pub fn train<R: Real>(
    env: &mut Env<R>,
    agent: &mut SacAgent<R>,
    episodes: u64,
    master_seed: u64,
    mut on_episode: impl FnMut(&EpisodeMetrics, Option<&LossReport>),
) -> Result<Vec<EpisodeMetrics>, SacError> {
    if env.mode() != SyncMode::WorkerSide {
        return Err(SacError::WrongSyncMode(env.mode()));
    }
    if env.k() != agent.k {
        return Err(SacError::WorkerMismatch {
            agent: agent.k,
            env: env.k(),
        });
    }
    let mut all = Vec::with_capacity(episodes as usize);
    let mut last_report: Option<LossReport> = None;
    for ep in 0..episodes {
        let state = env.reset(episode_seed(master_seed, ep));
        let mut obs = env.normalize(&state);
        let mut acc = Accumulator::new(ep);
        loop {
            let action = if agent.env_steps < agent.cfg.warmup_steps {
                agent.random_action()
            } else {
                agent.select_action(&obs, false)
            };
            let out = env.step(&action)?;
            let next_obs = env.normalize(&out.next_state);
            // a safeguard cut-off is a truncation, not a terminal state: the
            // stored flag only marks real convergence so targets keep
            // bootstrapping through the cut
            agent.remember(&obs, &action, out.reward, &next_obs, out.done && !out.truncated);
            agent.env_steps += 1;
            acc.push(&out);
            if agent.env_steps >= agent.cfg.warmup_steps
                && agent.env_steps % agent.cfg.train_every.max(1) == 0
                && agent.buffer.len() >= agent.cfg.batch_size
            {
                for _ in 0..agent.cfg.gradient_steps {
                    last_report = Some(agent.update()?);
                }
            }
            obs = next_obs;
            if out.done {
                break;
            }
        }
        let m = acc.finish();
        on_episode(&m, last_report.as_ref());
        all.push(m);
        if agent.cfg.lr_decay_every > 0 && (ep + 1) % agent.cfg.lr_decay_every == 0 {
            agent.lr *= agent.cfg.lr_decay;
        }
    }
    Ok(all)
}

/// A frozen policy network plus the normalization caps it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedPolicy<R: Real> {
    pub k: usize,
    pub policy: Mlp<R>,
    pub norm: NormCaps,
}

impl<R: Real> TrainedPolicy<R> {
    pub fn state_dim(&self) -> usize {
        6 * self.k + 1
    }

    pub fn action_dim(&self) -> usize {
        2 * self.k
    }

    /// Deterministic action (squashed mean) for a normalized observation.
    pub fn act_normalized(&self, obs: &[R], ws: &mut Workspace<R>) -> Vec<R> {
        let head = self.policy.forward(obs, ws);
        (0..self.action_dim()).map(|d| head[d].tanh()).collect()
    }

    /// Deterministic action for a raw environment state.
    pub fn act(&self, state: &EnvState<R>, ws: &mut Workspace<R>) -> Vec<R> {
        let obs = normalize_state(state, &self.norm);
        self.act_normalized(&obs, ws)
    }

    pub fn require_k(&self, k: usize) -> Result<(), CheckpointError> {
        if self.k == k {
            Ok(())
        } else {
            Err(CheckpointError::WrongWorkerCount {
                expected: self.k,
                got: k,
            })
        }
    }
}

/// [`Agent`] adapter running a frozen policy deterministically.
#[derive(Debug)]
pub struct PolicyAgent<R: Real> {
    policy: TrainedPolicy<R>,
    ws: Workspace<R>,
}

impl<R: Real> PolicyAgent<R> {
    pub fn new(policy: TrainedPolicy<R>) -> Self {
        PolicyAgent {
            policy,
            ws: Workspace::new(),
        }
    }

    pub fn policy(&self) -> &TrainedPolicy<R> {
        &self.policy
    }
}

impl<R: Real> Agent<R> for PolicyAgent<R> {
    fn act(&mut self, state: &EnvState<R>, _rng: &mut dyn RngCore) -> Vec<R> {
        self.policy.act(state, &mut self.ws)
    }

    fn name(&self) -> &'static str {
        "sac"
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a policy checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("checkpoint was trained for {expected} workers, requested {got}")]
    WrongWorkerCount { expected: usize, got: usize },
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"FLSCHEDP";
const CHECKPOINT_VERSION: u32 = 1;
/// Sanity bounds for reading untrusted files.
const MAX_LAYERS: u32 = 128;
const MAX_WIDTH: u32 = 1 << 20;

fn write_u32<W: io::Write>(w: &mut W, v: u32) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_u64<W: io::Write>(w: &mut W, v: u64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn write_f64<W: io::Write>(w: &mut W, v: f64) -> io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<Rd: io::Read>(r: &mut Rd) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<Rd: io::Read>(r: &mut Rd) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<Rd: io::Read>(r: &mut Rd) -> Result<f64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn read_exact<Rd: io::Read>(r: &mut Rd, buf: &mut [u8]) -> Result<(), CheckpointError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            CheckpointError::Malformed("unexpected end of file".into())
        } else {
            CheckpointError::Io(e)
        }
    })
}

/// Serialize a policy: magic, version, worker count, layer shapes, the
/// normalization caps, then every parameter as little-endian f64 in the
/// network's canonical order.
pub fn save_policy<R: Real, P: AsRef<Path>>(
    policy: &TrainedPolicy<R>,
    path: P,
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, CHECKPOINT_VERSION)?;
    write_u32(&mut w, policy.k as u32)?;
    write_u32(&mut w, policy.state_dim() as u32)?;
    write_u32(&mut w, policy.action_dim() as u32)?;
    write_u32(&mut w, policy.policy.layers.len() as u32)?;
    for layer in &policy.policy.layers {
        write_u32(&mut w, layer.n_in as u32)?;
        write_u32(&mut w, layer.n_out as u32)?;
    }
    for v in policy.norm.as_array() {
        write_f64(&mut w, v)?;
    }
    write_u64(&mut w, policy.policy.num_params() as u64)?;
    for p in policy.policy.params() {
        write_f64(&mut w, p.f64())?;
    }
    w.flush()?;
    Ok(())
}

/// Read back a policy saved by [`save_policy`], validating every structural
/// claim the header makes before touching the parameter block.
pub fn load_policy<R: Real, P: AsRef<Path>>(path: P) -> Result<TrainedPolicy<R>, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let k = read_u32(&mut r)? as usize;
    let state_dim = read_u32(&mut r)? as usize;
    let action_dim = read_u32(&mut r)? as usize;
    if k == 0 || state_dim != 6 * k + 1 || action_dim != 2 * k {
        return Err(CheckpointError::Malformed(format!(
            "inconsistent dimensions: k={k}, state={state_dim}, action={action_dim}"
        )));
    }
    let n_layers = read_u32(&mut r)?;
    if n_layers == 0 || n_layers > MAX_LAYERS {
        return Err(CheckpointError::Malformed(format!(
            "implausible layer count {n_layers}"
        )));
    }
    let mut dims = Vec::with_capacity(n_layers as usize + 1);
    for l in 0..n_layers {
        let n_in = read_u32(&mut r)?;
        let n_out = read_u32(&mut r)?;
        if n_in == 0 || n_out == 0 || n_in > MAX_WIDTH || n_out > MAX_WIDTH {
            return Err(CheckpointError::Malformed(format!(
                "implausible layer shape {n_in}x{n_out}"
            )));
        }
        if l == 0 {
            if n_in as usize != state_dim {
                return Err(CheckpointError::Malformed(format!(
                    "first layer expects {n_in} inputs, state has {state_dim}"
                )));
            }
            dims.push(n_in as usize);
        } else if dims[l as usize] != n_in as usize {
            return Err(CheckpointError::Malformed(format!(
                "layer {l} input {n_in} does not chain with previous output {}",
                dims[l as usize]
            )));
        }
        dims.push(n_out as usize);
    }
    if *dims.last().unwrap() != 2 * action_dim {
        return Err(CheckpointError::Malformed(format!(
            "head width {} is not twice the action dimension {action_dim}",
            dims.last().unwrap()
        )));
    }
    let mut caps = [0.0f64; 6];
    for c in caps.iter_mut() {
        *c = read_f64(&mut r)?;
        if !c.is_finite() || *c <= 0.0 {
            return Err(CheckpointError::Malformed(format!(
                "normalization cap {c} out of range"
            )));
        }
    }
    let expected: u64 = dims
        .windows(2)
        .map(|w| (w[0] as u64) * (w[1] as u64) + w[1] as u64)
        .sum();
    let n_params = read_u64(&mut r)?;
    if n_params != expected {
        return Err(CheckpointError::Malformed(format!(
            "parameter count {n_params} does not match shapes (expected {expected})"
        )));
    }
    let mut params = Vec::with_capacity(n_params as usize);
    for _ in 0..n_params {
        let v = read_f64(&mut r)?;
        if !v.is_finite() {
            return Err(CheckpointError::Malformed("non-finite parameter".into()));
        }
        params.push(R::of(v));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Malformed("trailing bytes".into()));
    }
    let mut policy = Mlp::zeros(&dims);
    policy.load_params(&params);
    Ok(TrainedPolicy {
        k,
        policy,
        norm: NormCaps::from_array(caps),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EnvConfig;
    use approx::assert_relative_eq;

    fn caps() -> NormCaps {
        NormCaps::from_array([11.0, 30.0, 5e9, 2.0, 2e7, 1200.0])
    }

    fn tiny_cfg() -> SacConfig {
        SacConfig {
            hidden: vec![16, 16],
            batch_size: 16,
            lr: 1e-3,
            lr_decay: 0.5,
            lr_decay_every: 2,
            alpha_init: 0.8,
            target_entropy: None,
            polyak: 0.005,
            train_every: 25,
            gradient_steps: 2,
            warmup_steps: 20,
            buffer_capacity: 4096,
            gamma: 1.0,
        }
    }

    #[test]
    fn replay_buffer_evicts_oldest_first() {
        let mut buf: ReplayBuffer<f64> = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(Transition {
                state: Box::from([i as f64]),
                action: Box::from([0.0]),
                reward: i as f64,
                next_state: Box::from([0.0]),
                done: false,
            });
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|i| buf.get(i).reward).collect();
        // slots now hold 3, 4, 2: transitions 0 and 1 were evicted
        assert!(rewards.contains(&2.0) && rewards.contains(&3.0) && rewards.contains(&4.0));
        assert!(!rewards.contains(&0.0) && !rewards.contains(&1.0));
    }

    #[test]
    fn sampled_indices_are_distinct_and_in_range() {
        let mut buf: ReplayBuffer<f64> = ReplayBuffer::new(64);
        for i in 0..40 {
            buf.push(Transition {
                state: Box::from([0.0]),
                action: Box::from([0.0]),
                reward: i as f64,
                next_state: Box::from([0.0]),
                done: false,
            });
        }
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let idx = buf.sample_indices(&mut rng, 16);
        assert_eq!(idx.len(), 16);
        assert!(idx.iter().all(|&i| i < 40));
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 16, "indices must be distinct");
    }

    #[test]
    fn log_std_clamp_bounds_are_inclusive() {
        assert_eq!(clamp_log_std(-25.0f64), (-20.0, false));
        assert_eq!(clamp_log_std(-20.0f64), (-20.0, true));
        assert_eq!(clamp_log_std(0.3f64), (0.3, true));
        assert_eq!(clamp_log_std(2.0f64), (2.0, true));
        assert_eq!(clamp_log_std(2.1f64), (2.0, false));
    }

    #[test]
    fn squashed_log_prob_matches_naive_formula() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let policy: Mlp<f64> = Mlp::new(&[4, 8, 4], &mut rng);
        let state: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let noise: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
        let mut ws = Workspace::new();
        let mut pe = PolicyEval::new(2);
        eval_policy(&policy, &state, &noise, &mut ws, &mut pe);

        // textbook form: log N(u; μ, σ) − log(1 − tanh²u), computed naively
        let mut naive = 0.0;
        for d in 0..2 {
            let z = (pe.u[d] - pe.mu[d]) / pe.sigma[d];
            let gauss = -0.5 * z * z - pe.sigma[d].ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
            naive += gauss - (1.0 - pe.action[d] * pe.action[d]).ln();
        }
        assert_relative_eq!(pe.log_pi, naive, max_relative = 1e-12);
        assert_eq!(pe.action[0], pe.u[0].tanh());
        assert_eq!(pe.sigma[1], pe.log_std[1].exp());
    }

    #[test]
    fn policy_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let sdim = 5;
        let adim = 3;
        let policy: Mlp<f64> = Mlp::new(&[sdim, 8, 8, 2 * adim], &mut rng);
        let critics = [
            Mlp::new(&[sdim + adim, 8, 8, 1], &mut rng),
            Mlp::new(&[sdim + adim, 8, 8, 1], &mut rng),
        ];
        let b = 4;
        let states: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..sdim).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let noises: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..adim).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        let sref: Vec<&[f64]> = states.iter().map(|v| v.as_slice()).collect();
        let nref: Vec<&[f64]> = noises.iter().map(|v| v.as_slice()).collect();
        let log_alpha = 0.8f64.ln();

        let mut grads = policy.zeros_like();
        let mut lps = Vec::new();
        let loss0 =
            policy_loss_and_grads(&policy, &critics, log_alpha, &sref, &nref, &mut grads, &mut lps);
        assert_relative_eq!(
            loss0,
            policy_loss(&policy, &critics, log_alpha, &sref, &nref),
            max_relative = 1e-12
        );
        assert_eq!(lps.len(), b);

        let analytic: Vec<f64> = grads.params().collect();
        let mut probe = policy.clone();
        let eps = 1e-5;
        for i in 0..probe.num_params() {
            let orig = probe.params().nth(i).unwrap();
            *probe.params_mut().nth(i).unwrap() = orig + eps;
            let up = policy_loss(&probe, &critics, log_alpha, &sref, &nref);
            *probe.params_mut().nth(i).unwrap() = orig - eps;
            let down = policy_loss(&probe, &critics, log_alpha, &sref, &nref);
            *probe.params_mut().nth(i).unwrap() = orig;
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!(
                ((fd - analytic[i]) / denom).abs() < 1e-4,
                "param {i}: fd {fd:.8e} vs analytic {:.8e}",
                analytic[i]
            );
        }
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        let sdim = 6;
        let adim = 2;
        let critic: Mlp<f64> = Mlp::new(&[sdim + adim, 8, 8, 1], &mut rng);
        let b = 5;
        let states: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..sdim).map(|_| rng.gen_range(0.0..1.0)).collect())
            .collect();
        let actions: Vec<Vec<f64>> = (0..b)
            .map(|_| (0..adim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let y: Vec<f64> = (0..b).map(|_| rng.gen_range(-30.0..0.0)).collect();
        let sref: Vec<&[f64]> = states.iter().map(|v| v.as_slice()).collect();
        let aref: Vec<&[f64]> = actions.iter().map(|v| v.as_slice()).collect();

        let mut grads = critic.zeros_like();
        let loss0 = critic_loss_and_grads(&critic, &sref, &aref, &y, &mut grads);
        assert_relative_eq!(
            loss0,
            critic_loss(&critic, &sref, &aref, &y),
            max_relative = 1e-12
        );

        let analytic: Vec<f64> = grads.params().collect();
        let mut probe = critic.clone();
        let eps = 1e-5;
        for i in 0..probe.num_params() {
            let orig = probe.params().nth(i).unwrap();
            *probe.params_mut().nth(i).unwrap() = orig + eps;
            let up = critic_loss(&probe, &sref, &aref, &y);
            *probe.params_mut().nth(i).unwrap() = orig - eps;
            let down = critic_loss(&probe, &sref, &aref, &y);
            *probe.params_mut().nth(i).unwrap() = orig;
            let fd = (up - down) / (2.0 * eps);
            let denom = fd.abs().max(analytic[i].abs()).max(1e-8);
            assert!(
                ((fd - analytic[i]) / denom).abs() < 1e-4,
                "param {i}: fd {fd:.8e} vs analytic {:.8e}",
                analytic[i]
            );
        }
    }

    #[test]
    fn terminal_transitions_do_not_bootstrap() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let policy: Mlp<f64> = Mlp::new(&[4, 8, 4], &mut rng);
        let targets = [
            Mlp::new(&[6, 8, 1], &mut rng),
            Mlp::new(&[6, 8, 1], &mut rng),
        ];
        let s: Vec<f64> = vec![0.2, 0.4, 0.6, 0.8];
        let noise = vec![0.1, -0.2];
        let y = bellman_targets(
            &policy,
            &targets,
            0.0,
            1.0,
            &[-7.5, -7.5],
            &[true, false],
            &[&s, &s],
            &[&noise, &noise],
        );
        assert_eq!(y[0], -7.5);
        assert_ne!(y[1], -7.5);
        assert!(y[1].is_finite());
    }

    #[test]
    fn update_is_deterministic_and_moves_targets() {
        let make = || {
            let mut agent: SacAgent<f64> = SacAgent::new(2, caps(), tiny_cfg(), 77);
            let mut rng = ChaCha12Rng::seed_from_u64(5);
            for i in 0..64 {
                let s: Vec<f64> = (0..13).map(|_| rng.gen_range(0.0..1.0)).collect();
                let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let s2: Vec<f64> = (0..13).map(|_| rng.gen_range(0.0..1.0)).collect();
                agent.remember(&s, &a, -(i as f64 % 9.0), &s2, i % 17 == 0);
            }
            agent
        };
        let mut a = make();
        let mut b = make();
        let targets_before = a.targets[0].clone();
        for _ in 0..3 {
            let ra = a.update().unwrap();
            let rb = b.update().unwrap();
            assert_eq!(ra.critic_loss, rb.critic_loss);
            assert_eq!(ra.policy_loss, rb.policy_loss);
            assert_eq!(ra.alpha_loss, rb.alpha_loss);
            assert!(ra.critic_loss.is_finite() && ra.policy_loss.is_finite());
        }
        assert_eq!(a.grad_steps(), 3);
        let pa: Vec<f64> = a.policy.params().collect();
        let pb: Vec<f64> = b.policy.params().collect();
        assert_eq!(pa, pb);
        // Polyak targets moved, but only slightly
        let before: Vec<f64> = targets_before.params().collect();
        let after: Vec<f64> = a.targets[0].params().collect();
        assert!(before != after);
        let max_shift = before
            .iter()
            .zip(after.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_shift < 0.1, "targets should move slowly, got {max_shift}");
    }

    #[test]
    fn update_without_data_reports_counts() {
        let mut agent: SacAgent<f64> = SacAgent::new(1, caps(), tiny_cfg(), 1);
        match agent.update() {
            Err(SacError::NotEnoughData { have: 0, need: 16 }) => {}
            other => panic!("expected NotEnoughData, got {other:?}"),
        }
    }

    #[test]
    fn select_action_deterministic_is_repeatable() {
        let mut agent: SacAgent<f64> = SacAgent::new(2, caps(), tiny_cfg(), 3);
        let obs = vec![0.5; 13];
        let a1 = agent.select_action(&obs, true);
        let a2 = agent.select_action(&obs, true);
        assert_eq!(a1, a2);
        assert_eq!(a1.len(), 4);
        assert!(a1.iter().all(|v| (-1.0..=1.0).contains(v)));
        let s1 = agent.select_action(&obs, false);
        let s2 = agent.select_action(&obs, false);
        assert_ne!(s1, s2, "stochastic draws should differ");
    }

    #[test]
    fn training_runs_decay_and_is_reproducible() {
        let run = || {
            let cfg = EnvConfig::static_default(2);
            let mut env: Env<f64> = Env::new(cfg, 42).unwrap();
            let mut agent: SacAgent<f64> = SacAgent::new(2, env.norm_caps().clone(), tiny_cfg(), 7);
            let metrics = train(&mut env, &mut agent, 4, 99, |_, _| {}).unwrap();
            (metrics, agent.lr(), agent.grad_steps(), agent.env_steps())
        };
        let (m1, lr1, g1, s1) = run();
        let (m2, lr2, g2, s2) = run();
        assert_eq!(m1, m2);
        assert_eq!(g1, g2);
        assert_eq!(s1, s2);
        assert_eq!(m1.len(), 4);
        // two decays of 0.5 over 4 episodes
        assert_relative_eq!(lr1, 1e-3 * 0.25, max_relative = 1e-12);
        assert_eq!(lr1, lr2);
        assert!(g1 > 0, "training bursts should have run");
        assert!(m1.iter().all(|m| m.reward < 0.0 && m.is_finite()));
    }

    #[test]
    fn training_rejects_coordinator_mode() {
        let mut cfg = EnvConfig::static_default(2);
        cfg.sync = SyncMode::CoordinatorSide;
        let mut env: Env<f64> = Env::new(cfg, 1).unwrap();
        let mut agent: SacAgent<f64> = SacAgent::new(2, env.norm_caps().clone(), tiny_cfg(), 1);
        match train(&mut env, &mut agent, 1, 0, |_, _| {}) {
            Err(SacError::WrongSyncMode(SyncMode::CoordinatorSide)) => {}
            other => panic!("expected WrongSyncMode, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.bin");
        let agent: SacAgent<f64> = SacAgent::new(2, caps(), tiny_cfg(), 123);
        let exported = agent.export_policy();
        save_policy(&exported, &path).unwrap();
        let loaded: TrainedPolicy<f64> = load_policy(&path).unwrap();
        assert_eq!(loaded.k, 2);
        assert_eq!(loaded.policy, exported.policy);
        assert_eq!(loaded.norm.as_array(), exported.norm.as_array());
        let obs = vec![0.25; 13];
        let mut ws = Workspace::new();
        assert_eq!(
            loaded.act_normalized(&obs, &mut ws),
            exported.act_normalized(&obs, &mut ws)
        );
        assert!(loaded.require_k(2).is_ok());
        assert!(matches!(
            loaded.require_k(5),
            Err(CheckpointError::WrongWorkerCount {
                expected: 2,
                got: 5
            })
        ));
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.bin");
        let agent: SacAgent<f64> = SacAgent::new(1, caps(), tiny_cfg(), 5);
        save_policy(&agent.export_policy(), &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        // magic
        let mut bad = good.clone();
        bad[0] ^= 0xFF;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_policy::<f64, _>(&path),
            Err(CheckpointError::BadMagic)
        ));

        // version
        let mut bad = good.clone();
        bad[8] = 99;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_policy::<f64, _>(&path),
            Err(CheckpointError::BadVersion(99))
        ));

        // truncation
        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(
            load_policy::<f64, _>(&path),
            Err(CheckpointError::Malformed(_))
        ));

        // trailing bytes
        let mut bad = good.clone();
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load_policy::<f64, _>(&path),
            Err(CheckpointError::Malformed(_))
        ));

        // intact file still loads
        std::fs::write(&path, &good).unwrap();
        assert!(load_policy::<f64, _>(&path).is_ok());
    }

    #[test]
    fn policy_agent_matches_frozen_policy() {
        let cfg = EnvConfig::static_default(2);
        let mut env: Env<f64> = Env::new(cfg, 8).unwrap();
        let agent: SacAgent<f64> = SacAgent::new(2, env.norm_caps().clone(), tiny_cfg(), 11);
        let frozen = agent.export_policy();
        let state = env.reset(4);
        let mut ws = Workspace::new();
        let direct = frozen.act(&state, &mut ws);
        let mut wrapped = PolicyAgent::new(frozen);
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let via_agent = wrapped.act(&state, &mut rng);
        assert_eq!(direct, via_agent);
        assert_eq!(wrapped.name(), "sac");
        let out = env.step(&via_agent).unwrap();
        assert!(out.reward.is_finite());
    }
}
