//! Soft actor-critic training over the exploration environment: joint
//! critic regression against entropy-regularized targets, reparameterized
//! policy updates with a counterfactual action baseline, target-network
//! tracking, rollout collection, and greedy evaluation.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actor::{Actor, ActorConfig, ActorGrads, PolicySample};
use crate::critic::{Critic, CriticCache, CriticConfig, CriticGrads, SlotInput};
use crate::derive_seed;
use crate::env::{AgentView, Env, EnvConfig, EnvError};
use crate::nn::Adam;
use crate::replay::{ReplayBuffer, Transition};

// Seed-stream layout: all randomness is derived from (master seed, stream),
// so a run is reproducible from the master seed and the episode/round
// counters alone. Episode streams sit at 2^32, per-round streams higher.
const STREAM_ACTOR_INIT: u64 = 0xA0;
const STREAM_CRITIC_INIT: u64 = 0xA1;
const STREAM_EPISODE: u64 = 1 << 32;
const STREAM_BATCH: u64 = 1 << 33;
const STREAM_TARGET: u64 = 1 << 34;
const STREAM_POLICY: u64 = 1 << 35;

/// Environment seed and action-noise seed for one training episode.
pub fn episode_seeds(master: u64, episode: u32) -> (u64, u64) {
    let base = STREAM_EPISODE + 2 * episode as u64;
    (derive_seed(master, base), derive_seed(master, base + 1))
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    BadConfig(&'static str),
    #[error("update requested with an empty replay buffer")]
    EmptyBuffer,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("non-finite {quantity} in update round {round}; {details}")]
    NonFinite { quantity: &'static str, round: u64, details: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub episodes: u32,
    /// Rollout workers; 1 selects the bit-reproducible serial path.
    pub workers: usize,
    pub batch: usize,
    /// Update rounds after each episode from the second one onward.
    pub updates_per_episode: u32,
    pub gamma: f64,
    /// Entropy temperature.
    pub alpha: f64,
    pub lr: f64,
    /// Target-network tracking rate.
    pub tau: f64,
    /// Samples per counterfactual baseline estimate; 0 disables the
    /// baseline (the gradient is unchanged, only its variance grows).
    pub baseline_k: usize,
    pub buffer_capacity: usize,
    /// Episodes of success history feeding the curriculum difficulty.
    pub success_window: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes: 3000,
            workers: 12,
            batch: 1024,
            updates_per_episode: 4,
            gamma: 0.99,
            alpha: 0.2,
            lr: 1e-3,
            tau: 0.005,
            baseline_k: 8,
            buffer_capacity: 100_000,
            success_window: 100,
            hidden_dim: 128,
            embed_dim: 128,
            n_heads: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m| Err(TrainError::BadConfig(m));
        if self.episodes == 0 {
            return bad("episodes must be at least 1");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if self.batch == 0 {
            return bad("batch must be at least 1");
        }
        if self.updates_per_episode == 0 {
            return bad("updates_per_episode must be at least 1");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be finite and non-negative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and positive");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.buffer_capacity == 0 {
            return bad("buffer_capacity must be at least 1");
        }
        if self.success_window == 0 {
            return bad("success_window must be at least 1");
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 || self.n_heads == 0 {
            return bad("network dimensions must be positive");
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return bad("embed_dim must be divisible by n_heads");
        }
        Ok(())
    }
}

/// Diagnostics from one critic regression pass.
#[derive(Clone, Debug)]
pub struct CriticStats {
    pub loss: f64,
    /// Mean attention entropy per head over all rows with at least two
    /// agents; NaN entries when no such row appeared.
    pub head_entropies: Vec<f64>,
    pub q_min: f64,
    pub q_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

/// Squared-error critic loss against one-sample entropy-regularized
/// targets, averaged over the batch with every live agent's term summed.
/// Terminal entries regress to the bare reward. Gradients accumulate into
/// `grads`; target draws come from `seed`, one derived stream per
/// transition, so the loss is a deterministic function of the critic
/// parameters.
pub fn critic_loss(
    batch: &[&Transition],
    critic: &Critic,
    critic_target: &Critic,
    actor_target: &Actor,
    cfg: &TrainConfig,
    seed: u64,
    grads: &mut CriticGrads,
) -> CriticStats {
    let nb = batch.len().max(1) as f64;
    let nh = critic.cfg.n_heads;
    let mut loss = 0.0;
    let (mut q_min, mut q_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ent_sum = alloc::vec![0.0; nh];
    let mut ent_rows = 0usize;

    for (b, tr) in batch.iter().enumerate() {
        let n = tr.n_acting();
        if n == 0 {
            continue;
        }
        let inputs: Vec<SlotInput> = (0..n)
            .map(|k| SlotInput { slot: tr.slots[k], obs: &tr.obs[k], act: &tr.acts[k] })
            .collect();
        let cache = critic.forward(&inputs);
        if n >= 2 {
            for i in 0..n {
                for (h, s) in ent_sum.iter_mut().enumerate() {
                    *s += cache.attention_entropy(i, h);
                }
            }
            ent_rows += n;
        }

        // One target-policy draw per next-state agent.
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
        let m = tr.next_slots.len();
        let mut next_acts = Vec::with_capacity(m);
        let mut next_logp = Vec::with_capacity(m);
        for j in 0..m {
            let s = actor_target.sample_with_rng(tr.next_slots[j], &tr.next_obs[j], &mut rng);
            next_logp.push(s.log_prob);
            next_acts.push(s.action);
        }
        let tq: Vec<f64> = if m == 0 {
            Vec::new()
        } else {
            let tin: Vec<SlotInput> = (0..m)
                .map(|j| SlotInput {
                    slot: tr.next_slots[j],
                    obs: &tr.next_obs[j],
                    act: &next_acts[j],
                })
                .collect();
            critic_target.forward(&tin).qvals().to_vec()
        };

        let mut dq = alloc::vec![0.0; n];
        for k in 0..n {
            let q = cache.qvals()[k];
            let y = if tr.dones[k] {
                tr.rewards[k]
            } else {
                let j = tr.next_index[k].expect("validated transition lost its next index");
                tr.rewards[k] + cfg.gamma * (tq[j] - cfg.alpha * next_logp[j])
            };
            let d = q - y;
            loss += d * d / nb;
            dq[k] = 2.0 * d / nb;
            q_min = q_min.min(q);
            q_max = q_max.max(q);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
        critic.backward_params(&cache, &dq, grads);
    }

    let head_entropies = ent_sum
        .iter()
        .map(|s| if ent_rows == 0 { f64::NAN } else { s / ent_rows as f64 })
        .collect();
    CriticStats { loss, head_entropies, q_min, q_max, y_min, y_max }
}

/// Counterfactual baseline for agent `i`: the mean critic value over `k`
/// fresh draws of agent i's own action with every other action held fixed.
/// Callers treat the result as a constant; no gradient flows through it.
pub fn multi_agent_baseline<R: Rng>(
    critic: &Critic,
    cache: &CriticCache,
    i: usize,
    actor: &Actor,
    slot: usize,
    obs: &[f64],
    k: usize,
    rng: &mut R,
) -> f64 {
    assert!(k >= 1, "baseline needs at least one sample");
    let mut acc = 0.0;
    for _ in 0..k {
        let s = actor.sample_with_rng(slot, obs, rng);
        acc += critic.q_resampled(cache, i, &s.action);
    }
    acc / k as f64
}

/// Diagnostics from one policy update pass.
#[derive(Clone, Debug)]
pub struct PolicyStats {
    pub loss: f64,
    /// Empirical variance of the per-sample advantage term across the
    /// batch; NaN when the batch held no live agent.
    pub adv_variance: f64,
}

/// Entropy-regularized policy objective Σ_i mean_b [α·log π_i(ã_i) −
/// (Q_i(o, ã) − b̂_i)] over fresh reparameterized team actions, with the
/// detached counterfactual baseline b̂_i subtracted. Gradients accumulate
/// into `grads` and flow through each agent's own action pathway and
/// log-density only; the critic is read, never differentiated into.
/// Noise is drawn from per-transition streams derived from `seed`, and the
/// team's action draws precede any baseline draws, so gradients are
/// bit-identical whether or not the baseline is enabled.
pub fn policy_gradient(
    batch: &[&Transition],
    actor: &Actor,
    critic: &Critic,
    cfg: &TrainConfig,
    seed: u64,
    grads: &mut ActorGrads,
) -> PolicyStats {
    let nb = batch.len().max(1) as f64;
    let mut loss = 0.0;
    let (mut adv_sum, mut adv_sq) = (0.0, 0.0);
    let mut adv_n = 0usize;

    for (b, tr) in batch.iter().enumerate() {
        let n = tr.n_acting();
        if n == 0 {
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
        let samples: Vec<PolicySample> = (0..n)
            .map(|k| actor.sample_with_rng(tr.slots[k], &tr.obs[k], &mut rng))
            .collect();
        let inputs: Vec<SlotInput> = (0..n)
            .map(|k| SlotInput { slot: tr.slots[k], obs: &tr.obs[k], act: &samples[k].action })
            .collect();
        let cache = critic.forward(&inputs);

        for k in 0..n {
            let q = cache.qvals()[k];
            let baseline = if cfg.baseline_k == 0 {
                0.0
            } else {
                multi_agent_baseline(
                    critic,
                    &cache,
                    k,
                    actor,
                    tr.slots[k],
                    &tr.obs[k],
                    cfg.baseline_k,
                    &mut rng,
                )
            };
            let adv = q - baseline;
            loss += (cfg.alpha * samples[k].log_prob - adv) / nb;
            adv_sum += adv;
            adv_sq += adv * adv;
            adv_n += 1;

            let mut d_action = critic.action_grad(&cache, k);
            for g in d_action.iter_mut() {
                *g *= -1.0 / nb;
            }
            actor.backward(tr.slots[k], &samples[k], cfg.alpha / nb, &d_action, grads);
        }
    }

    let adv_variance = if adv_n == 0 {
        f64::NAN
    } else {
        let m = adv_sum / adv_n as f64;
        (adv_sq / adv_n as f64 - m * m).max(0.0)
    };
    PolicyStats { loss, adv_variance }
}

/// Action selection for an episode rollout.
pub enum RolloutPolicy<'a> {
    /// Reparameterized draws from the live policy (training behavior).
    Stochastic(&'a Actor),
    /// Mean actions (evaluation behavior).
    Greedy(&'a Actor),
    /// Uniform draws over the command box.
    Random,
    /// Full thrust toward the nearest unknown belief cell.
    Heuristic,
}

#[derive(Clone, Copy, Debug)]
pub struct RolloutStats {
    pub steps: u32,
    pub reward_sum: f64,
    /// Number of (agent, step) reward entries behind `reward_sum`.
    pub reward_entries: u64,
    pub collisions: u64,
    /// Exact exploration rate at episode end.
    pub exploration_rate: f64,
    pub success: bool,
}

impl RolloutStats {
    /// Mean reward per agent per step.
    pub fn mean_reward(&self) -> f64 {
        if self.reward_entries == 0 {
            f64::NAN
        } else {
            self.reward_sum / self.reward_entries as f64
        }
    }
}

fn heuristic_action(env: &Env, view: &AgentView) -> [f64; 2] {
    match env.belief().nearest_unknown(view.pos) {
        Some(target) => {
            let d = target - view.pos;
            let n = d.norm();
            if n < 1e-12 { [0.0, 0.0] } else { [d.x / n, d.y / n] }
        }
        None => [0.0, 0.0],
    }
}

/// Plays one full episode and returns its transitions (when `collect` is
/// set) together with summary statistics. Pure given the policy snapshot
/// and the two seeds, so worker threads can run it concurrently.
pub fn rollout_episode(
    env: &mut Env,
    policy: &RolloutPolicy,
    env_seed: u64,
    action_seed: u64,
    collect: bool,
) -> Result<(Vec<Transition>, RolloutStats), EnvError> {
    env.reset(env_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(action_seed);
    let mut transitions = Vec::new();
    let mut stats = RolloutStats {
        steps: 0,
        reward_sum: 0.0,
        reward_entries: 0,
        collisions: 0,
        exploration_rate: 0.0,
        success: false,
    };

    let mut obs_set = env.observations();
    while !env.is_done() {
        let mut acts: Vec<[f64; 2]> = Vec::with_capacity(obs_set.len());
        for (view, obs) in &obs_set {
            let a = match policy {
                RolloutPolicy::Stochastic(actor) => {
                    let s = actor.sample_with_rng(view.slot, obs, &mut rng);
                    [s.action[0], s.action[1]]
                }
                RolloutPolicy::Greedy(actor) => {
                    let m = actor.mean_action(view.slot, obs);
                    [m[0], m[1]]
                }
                RolloutPolicy::Random => {
                    [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)]
                }
                RolloutPolicy::Heuristic => heuristic_action(env, view),
            };
            acts.push(a);
        }
        let out = env.step(&acts)?;
        stats.steps += 1;
        stats.reward_sum += out.rewards.iter().sum::<f64>();
        stats.reward_entries += out.rewards.len() as u64;
        if collect && !out.acting.is_empty() {
            let next_index = out
                .acting
                .iter()
                .map(|&id| out.observations.iter().position(|(v, _)| v.id == id))
                .collect();
            transitions.push(Transition {
                slots: obs_set.iter().map(|(v, _)| v.slot).collect(),
                obs: obs_set.iter().map(|(_, o)| o.clone()).collect(),
                acts,
                rewards: out.rewards,
                dones: out.dones,
                next_slots: out.observations.iter().map(|(v, _)| v.slot).collect(),
                next_obs: out.observations.iter().map(|(_, o)| o.clone()).collect(),
                next_index,
            });
        }
        obs_set = out.observations;
    }

    stats.collisions = env.episode_collisions();
    // Same rule as Env::classify_episode, sharing its single exact-union
    // computation with the returned rate.
    let rate = env.exploration_rate_exact(env.config().area_tol.max(1e-6))?;
    stats.exploration_rate = rate;
    stats.success = !env.obstacle_collision_occurred() && rate >= env.config().success_rate;
    Ok((transitions, stats))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Sample mean and sample standard deviation (n−1 denominator).
    pub fn from_samples(xs: &[f64]) -> MeanStd {
        let n = xs.len();
        if n == 0 {
            return MeanStd { mean: f64::NAN, std: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        if n == 1 {
            return MeanStd { mean, std: 0.0 };
        }
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        MeanStd { mean, std: libm::sqrt(var) }
    }
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub episodes: u32,
    pub collisions: MeanStd,
    pub exploration_rate: MeanStd,
    /// Per-agent-per-step reward, aggregated over episodes.
    pub reward: MeanStd,
    pub success_rate: f64,
}

/// Seeded rollouts without learning; reports aggregate collision,
/// exploration, reward, and success statistics.
pub fn evaluate(
    env_cfg: &EnvConfig,
    policy: &RolloutPolicy,
    episodes: u32,
    seed: u64,
    difficulty: f64,
) -> Result<EvalSummary, TrainError> {
    let mut env = Env::new(env_cfg.clone())?;
    env.set_difficulty(difficulty);
    let mut collisions = Vec::with_capacity(episodes as usize);
    let mut rates = Vec::with_capacity(episodes as usize);
    let mut rewards = Vec::with_capacity(episodes as usize);
    let mut successes = 0u32;
    for k in 0..episodes {
        let env_seed = derive_seed(seed, 2 * k as u64);
        let act_seed = derive_seed(seed, 2 * k as u64 + 1);
        let (_, stats) = rollout_episode(&mut env, policy, env_seed, act_seed, false)?;
        collisions.push(stats.collisions as f64);
        rates.push(stats.exploration_rate);
        rewards.push(stats.mean_reward());
        successes += stats.success as u32;
    }
    Ok(EvalSummary {
        episodes,
        collisions: MeanStd::from_samples(&collisions),
        exploration_rate: MeanStd::from_samples(&rates),
        reward: MeanStd::from_samples(&rewards),
        success_rate: if episodes == 0 { f64::NAN } else { successes as f64 / episodes as f64 },
    })
}

/// Diagnostics from one update round.
#[derive(Clone, Debug)]
pub struct RoundStats {
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub head_entropies: Vec<f64>,
    pub adv_variance: f64,
}

/// Aggregate of the update rounds run after one episode.
#[derive(Clone, Debug)]
pub struct RoundSummary {
    pub rounds: u32,
    /// Mean losses over the rounds.
    pub critic_loss: f64,
    pub policy_loss: f64,
    /// Per-head mean attention entropy from the final round's batch.
    pub head_entropies: Vec<f64>,
    pub adv_variance: f64,
}

/// One line of the training log.
#[derive(Clone, Debug)]
pub struct EpisodeRecord {
    pub episode: u32,
    pub steps: u32,
    pub exploration_rate: f64,
    pub mean_reward: f64,
    pub collisions: u64,
    pub success: bool,
    /// Curriculum difficulty the episode was rolled out at.
    pub difficulty: f64,
    /// NaN until updates begin.
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub head_entropies: Vec<f64>,
}

/// Owns the learning state: live and target networks, optimizers, the
/// replay buffer, and the curriculum success window. Rollouts may happen
/// elsewhere (worker threads hold parameter snapshots); everything that
/// mutates parameters goes through this struct.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub env_cfg: EnvConfig,
    pub actor: Actor,
    pub actor_target: Actor,
    pub critic: Critic,
    pub critic_target: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub buffer: ReplayBuffer,
    pub(crate) actor_grads: ActorGrads,
    pub(crate) critic_grads: CriticGrads,
    pub(crate) episodes_done: u32,
    pub(crate) rounds_done: u64,
    pub(crate) window: Vec<bool>,
    pub(crate) window_cursor: usize,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, env_cfg: EnvConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        env_cfg.validate()?;
        let acfg = ActorConfig {
            n_slots: env_cfg.n_max,
            obs_dim: env_cfg.obs_dim(),
            act_dim: 2,
            hidden_dim: cfg.hidden_dim,
        };
        let ccfg = CriticConfig {
            n_slots: env_cfg.n_max,
            obs_dim: env_cfg.obs_dim(),
            act_dim: 2,
            embed_dim: cfg.embed_dim,
            n_heads: cfg.n_heads,
            hidden_dim: cfg.hidden_dim,
        };
        let mut arng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_ACTOR_INIT));
        let actor = Actor::new(acfg, &mut arng);
        let mut crng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_CRITIC_INIT));
        let critic = Critic::new(ccfg, &mut crng);
        let actor_target = actor.clone();
        let critic_target = critic.clone();
        let actor_opt = Adam::new(actor.param_count(), cfg.lr);
        let critic_opt = Adam::new(critic.param_count(), cfg.lr);
        let actor_grads = actor.zero_grads();
        let critic_grads = critic.zero_grads();
        Ok(Trainer {
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            cfg,
            env_cfg,
            actor,
            actor_target,
            critic,
            critic_target,
            actor_opt,
            critic_opt,
            actor_grads,
            critic_grads,
            episodes_done: 0,
            rounds_done: 0,
            window: Vec::new(),
            window_cursor: 0,
        })
    }

    pub fn episodes_done(&self) -> u32 {
        self.episodes_done
    }

    pub fn rounds_done(&self) -> u64 {
        self.rounds_done
    }

    /// Curriculum difficulty: success fraction over the recent window,
    /// zero until the first episode lands.
    pub fn difficulty(&self) -> f64 {
        if self.window.is_empty() {
            0.0
        } else {
            self.window.iter().filter(|&&s| s).count() as f64 / self.window.len() as f64
        }
    }

    fn record_outcome(&mut self, success: bool) {
        if self.window.len() < self.cfg.success_window {
            self.window.push(success);
        } else {
            self.window[self.window_cursor] = success;
        }
        self.window_cursor = (self.window_cursor + 1) % self.cfg.success_window;
    }

    /// One update round: sample a batch, regress the critic, ascend the
    /// policy, track the targets. Aborts with diagnostics on any
    /// non-finite loss or gradient.
    pub fn update_round(&mut self) -> Result<RoundStats, TrainError> {
        if self.buffer.is_empty() {
            return Err(TrainError::EmptyBuffer);
        }
        let round = self.rounds_done;
        let mut srng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, STREAM_BATCH + round));
        let batch = self.buffer.sample(self.cfg.batch, &mut srng);

        self.critic_grads.zero();
        let cstats = critic_loss(
            &batch,
            &self.critic,
            &self.critic_target,
            &self.actor_target,
            &self.cfg,
            derive_seed(self.cfg.seed, STREAM_TARGET + round),
            &mut self.critic_grads,
        );
        if !cstats.loss.is_finite() {
            let extra = format!(
                "loss={:e} batch={} q=[{:e}, {:e}] y=[{:e}, {:e}]",
                cstats.loss,
                batch.len(),
                cstats.q_min,
                cstats.q_max,
                cstats.y_min,
                cstats.y_max
            );
            return Err(self.failure("critic loss", round, extra));
        }
        if let Some((off, v)) = first_non_finite(self.critic_grads.slices()) {
            let extra = format!("gradient[{off}]={v:e} batch={}", batch.len());
            return Err(self.failure("critic gradient", round, extra));
        }
        {
            let grads = &self.critic_grads;
            let params = self.critic.param_slices_mut();
            self.critic_opt.step(params.zip(grads.slices()));
        }

        self.actor_grads.zero();
        let pstats = policy_gradient(
            &batch,
            &self.actor,
            &self.critic,
            &self.cfg,
            derive_seed(self.cfg.seed, STREAM_POLICY + round),
            &mut self.actor_grads,
        );
        if !pstats.loss.is_finite() {
            let extra = format!("loss={:e} batch={}", pstats.loss, batch.len());
            return Err(self.failure("policy loss", round, extra));
        }
        if let Some((off, v)) = first_non_finite(self.actor_grads.slices()) {
            let extra = format!("gradient[{off}]={v:e} batch={}", batch.len());
            return Err(self.failure("policy gradient", round, extra));
        }
        {
            let grads = &self.actor_grads;
            let params = self.actor.param_slices_mut();
            self.actor_opt.step(params.zip(grads.slices()));
        }

        self.critic_target.soft_update_from(&self.critic, self.cfg.tau);
        self.actor_target.soft_update_from(&self.actor, self.cfg.tau);
        self.rounds_done += 1;
        Ok(RoundStats {
            critic_loss: cstats.loss,
            policy_loss: pstats.loss,
            head_entropies: cstats.head_entropies,
            adv_variance: pstats.adv_variance,
        })
    }

    /// Runs the configured number of update rounds, skipped entirely until
    /// a second episode has been absorbed.
    pub fn post_episode_updates(&mut self) -> Result<Option<RoundSummary>, TrainError> {
        if self.episodes_done < 2 {
            return Ok(None);
        }
        let rounds = self.cfg.updates_per_episode;
        let mut critic_sum = 0.0;
        let mut policy_sum = 0.0;
        let mut last: Option<RoundStats> = None;
        for _ in 0..rounds {
            let r = self.update_round()?;
            critic_sum += r.critic_loss;
            policy_sum += r.policy_loss;
            last = Some(r);
        }
        let last = last.expect("updates_per_episode is validated positive");
        Ok(Some(RoundSummary {
            rounds,
            critic_loss: critic_sum / rounds as f64,
            policy_loss: policy_sum / rounds as f64,
            head_entropies: last.head_entropies,
            adv_variance: last.adv_variance,
        }))
    }

    /// Feeds one finished episode into the learner: buffer the
    /// transitions, bump the episode counter, run the post-episode update
    /// rounds, and record the outcome in the curriculum window.
    pub fn absorb_episode(
        &mut self,
        transitions: Vec<Transition>,
        success: bool,
    ) -> Result<Option<RoundSummary>, TrainError> {
        for t in transitions {
            self.buffer.push(t);
        }
        self.episodes_done += 1;
        let summary = self.post_episode_updates()?;
        self.record_outcome(success);
        Ok(summary)
    }

    /// Rolls out one episode with the live stochastic policy in `env` and
    /// absorbs it. The episode index keys every seed, so the serial loop
    /// is bit-reproducible.
    pub fn run_serial_episode(&mut self, env: &mut Env) -> Result<EpisodeRecord, TrainError> {
        let episode = self.episodes_done;
        let difficulty = self.difficulty();
        env.set_difficulty(difficulty);
        let (env_seed, act_seed) = episode_seeds(self.cfg.seed, episode);
        let (transitions, stats) = rollout_episode(
            env,
            &RolloutPolicy::Stochastic(&self.actor),
            env_seed,
            act_seed,
            true,
        )?;
        let summary = self.absorb_episode(transitions, stats.success)?;
        let nan_heads = alloc::vec![f64::NAN; self.cfg.n_heads];
        let (critic_loss, policy_loss, head_entropies) = match summary {
            Some(s) => (s.critic_loss, s.policy_loss, s.head_entropies),
            None => (f64::NAN, f64::NAN, nan_heads),
        };
        Ok(EpisodeRecord {
            episode,
            steps: stats.steps,
            exploration_rate: stats.exploration_rate,
            mean_reward: stats.mean_reward(),
            collisions: stats.collisions,
            success: stats.success,
            difficulty,
            critic_loss,
            policy_loss,
            head_entropies,
        })
    }

    /// Serial training until the configured episode count, invoking the
    /// callback once per episode.
    pub fn train_serial<F: FnMut(&EpisodeRecord)>(
        &mut self,
        env: &mut Env,
        mut on_episode: F,
    ) -> Result<(), TrainError> {
        while self.episodes_done < self.cfg.episodes {
            let record = self.run_serial_episode(env)?;
            on_episode(&record);
        }
        Ok(())
    }

    fn failure(&self, quantity: &'static str, round: u64, extra: String) -> TrainError {
        let details = format!(
            "{extra}; episodes={} buffer={} |actor|inf={:e} |critic|inf={:e}",
            self.episodes_done,
            self.buffer.len(),
            inf_norm(self.actor.param_slices()),
            inf_norm(self.critic.param_slices()),
        );
        TrainError::NonFinite { quantity, round, details }
    }
}

fn first_non_finite<'a>(slices: impl Iterator<Item = &'a [f64]>) -> Option<(usize, f64)> {
    let mut off = 0;
    for s in slices {
        for (i, &g) in s.iter().enumerate() {
            if !g.is_finite() {
                return Some((off + i, g));
            }
        }
        off += s.len();
    }
    None
}

fn inf_norm<'a>(slices: impl Iterator<Item = &'a [f64]>) -> f64 {
    let mut m = 0.0f64;
    for s in slices {
        for &v in s {
            m = m.max(v.abs());
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EpisodeOutcome;
    use crate::oracles;
    use alloc::vec;

    const OBS: usize = 5;
    const ACT: usize = 2;
    const SLOTS: usize = 3;

    fn test_actor(seed: u64) -> Actor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Actor::new(
            ActorConfig { n_slots: SLOTS, obs_dim: OBS, act_dim: ACT, hidden_dim: 6 },
            &mut rng,
        )
    }

    fn test_critic(seed: u64) -> Critic {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Critic::new(
            CriticConfig {
                n_slots: SLOTS,
                obs_dim: OBS,
                act_dim: ACT,
                embed_dim: 8,
                n_heads: 2,
                hidden_dim: 6,
            },
            &mut rng,
        )
    }

    fn test_cfg() -> TrainConfig {
        TrainConfig {
            episodes: 3,
            workers: 1,
            batch: 8,
            updates_per_episode: 2,
            gamma: 0.9,
            alpha: 0.2,
            lr: 1e-3,
            tau: 0.05,
            baseline_k: 4,
            buffer_capacity: 64,
            success_window: 10,
            hidden_dim: 6,
            embed_dim: 8,
            n_heads: 2,
            seed: 0,
        }
    }

    fn random_transition<R: Rng>(rng: &mut R, n: usize) -> Transition {
        let rand_obs =
            |rng: &mut R| (0..OBS).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let slots: Vec<usize> = (0..n).map(|k| k % SLOTS).collect();
        let obs: Vec<Vec<f64>> = (0..n).map(|_| rand_obs(rng)).collect();
        let acts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(-0.9..0.9), rng.random_range(-0.9..0.9)])
            .collect();
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let mut next_index = Vec::with_capacity(n);
        let mut survivors = 0usize;
        for &d in &dones {
            if d {
                next_index.push(None);
            } else {
                next_index.push(Some(survivors));
                survivors += 1;
            }
        }
        let arrivals = rng.random_range(0..2usize);
        let m = survivors + arrivals;
        let next_slots: Vec<usize> = (0..m).map(|k| (k + 1) % SLOTS).collect();
        let next_obs: Vec<Vec<f64>> = (0..m).map(|_| rand_obs(rng)).collect();
        Transition { slots, obs, acts, rewards, dones, next_slots, next_obs, next_index }
    }

    fn random_batch<R: Rng>(rng: &mut R, nb: usize) -> Vec<Transition> {
        (0..nb)
            .map(|_| {
                let n = rng.random_range(1..=SLOTS);
                random_transition(rng, n)
            })
            .collect()
    }

    fn get_flat<'a>(slices: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
        let mut out = Vec::new();
        for s in slices {
            out.extend_from_slice(s);
        }
        out
    }

    fn set_flat<'a>(slices: impl Iterator<Item = &'a mut [f64]>, flat: &[f64]) {
        let mut it = flat.iter();
        for s in slices {
            for p in s.iter_mut() {
                *p = *it.next().unwrap();
            }
        }
        assert!(it.next().is_none());
    }

    fn zero_params_critic() -> Critic {
        let mut c = test_critic(1);
        for s in c.param_slices_mut() {
            s.fill(0.0);
        }
        c
    }

    #[test]
    fn critic_loss_is_zero_when_predictions_match_targets() {
        // Zero critics predict zero everywhere; with zero rewards and no
        // entropy term the targets are zero too, so the loss and every
        // gradient vanish identically.
        let critic = zero_params_critic();
        let target = critic.clone();
        let actor_target = test_actor(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut batch = random_batch(&mut rng, 6);
        for tr in &mut batch {
            for r in &mut tr.rewards {
                *r = 0.0;
            }
        }
        let refs: Vec<&Transition> = batch.iter().collect();
        let cfg = TrainConfig { alpha: 0.0, ..test_cfg() };
        let mut grads = critic.zero_grads();
        let stats = critic_loss(&refs, &critic, &target, &actor_target, &cfg, 9, &mut grads);
        assert_eq!(stats.loss, 0.0);
        for s in grads.slices() {
            for &g in s {
                assert!(g == 0.0, "expected exact zero gradient, got {g}");
            }
        }
    }

    #[test]
    fn critic_loss_regresses_to_rewards_when_gamma_is_zero() {
        let critic = test_critic(4);
        let target = test_critic(5);
        let actor_target = test_actor(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch = random_batch(&mut rng, 5);
        let refs: Vec<&Transition> = batch.iter().collect();
        let cfg = TrainConfig { gamma: 0.0, alpha: 0.0, ..test_cfg() };
        let mut grads = critic.zero_grads();
        let stats = critic_loss(&refs, &critic, &target, &actor_target, &cfg, 9, &mut grads);

        let mut want = 0.0;
        for tr in &batch {
            let inputs: Vec<SlotInput> = (0..tr.n_acting())
                .map(|k| SlotInput { slot: tr.slots[k], obs: &tr.obs[k], act: &tr.acts[k] })
                .collect();
            let cache = critic.forward(&inputs);
            for k in 0..tr.n_acting() {
                let d = cache.qvals()[k] - tr.rewards[k];
                want += d * d / batch.len() as f64;
            }
        }
        assert!((stats.loss - want).abs() < 1e-12, "{} vs {want}", stats.loss);
    }

    #[test]
    fn critic_loss_gradient_matches_finite_differences() {
        let critic = test_critic(8);
        let target = test_critic(9);
        let actor_target = test_actor(10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch = random_batch(&mut rng, 3);
        let refs: Vec<&Transition> = batch.iter().collect();
        let cfg = test_cfg();

        let mut grads = critic.zero_grads();
        let stats = critic_loss(&refs, &critic, &target, &actor_target, &cfg, 13, &mut grads);
        assert!(stats.loss.is_finite() && stats.loss >= 0.0);
        let analytic = get_flat(grads.slices());

        let at = get_flat(critic.param_slices());
        let mut probe = critic.clone();
        let mut scratch = critic.zero_grads();
        let mut f = |p: &[f64]| {
            set_flat(probe.param_slices_mut(), p);
            scratch.zero();
            critic_loss(&refs, &probe, &target, &actor_target, &cfg, 13, &mut scratch).loss
        };
        let fd = oracles::finite_diff_grad(&mut f, &at, 1e-5);
        let err = oracles::rel_l2_error(&analytic, &fd);
        assert!(err < 1e-6, "relative gradient error {err}");
    }

    #[test]
    fn critic_loss_is_non_increasing_on_a_fixed_batch() {
        let mut critic = test_critic(14);
        let target = test_critic(15);
        let actor_target = test_actor(16);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let batch = random_batch(&mut rng, 8);
        let refs: Vec<&Transition> = batch.iter().collect();
        let cfg = test_cfg();
        let mut adam = Adam::new(critic.param_count(), 1e-4);
        let mut grads = critic.zero_grads();
        let mut prev = f64::INFINITY;
        for step in 0..50 {
            grads.zero();
            let stats = critic_loss(&refs, &critic, &target, &actor_target, &cfg, 19, &mut grads);
            assert!(
                stats.loss <= prev + 1e-12,
                "loss rose at step {step}: {} -> {}",
                prev,
                stats.loss
            );
            prev = stats.loss;
            adam.step(critic.param_slices_mut().zip(grads.slices()));
        }
    }

    #[test]
    fn targets_stay_inside_the_live_parameter_hull() {
        let mut live = test_critic(20);
        let mut target = live.clone();
        let mut lo = get_flat(live.param_slices());
        let mut hi = lo.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            for s in live.param_slices_mut() {
                for p in s.iter_mut() {
                    *p = rng.random_range(-1.0..1.0);
                }
            }
            for (i, v) in get_flat(live.param_slices()).iter().enumerate() {
                lo[i] = lo[i].min(*v);
                hi[i] = hi[i].max(*v);
            }
            target.soft_update_from(&live, 0.1);
            for (i, v) in get_flat(target.param_slices()).iter().enumerate() {
                assert!(
                    *v >= lo[i] - 1e-12 && *v <= hi[i] + 1e-12,
                    "target parameter {i} left the hull: {v} not in [{}, {}]",
                    lo[i],
                    hi[i]
                );
            }
        }
    }

    #[test]
    fn soft_updates_converge_geometrically_toward_frozen_params() {
        let live = test_actor(22);
        let mut target = test_actor(23);
        let tau = 0.05;
        let gap0: Vec<f64> = get_flat(target.param_slices())
            .iter()
            .zip(get_flat(live.param_slices()))
            .map(|(t, l)| t - l)
            .collect();
        for _ in 0..10 {
            target.soft_update_from(&live, tau);
        }
        let decay = libm::pow(1.0 - tau, 10.0);
        for ((t, l), g0) in get_flat(target.param_slices())
            .iter()
            .zip(get_flat(live.param_slices()))
            .zip(&gap0)
        {
            assert!(((t - l) - decay * g0).abs() < 1e-12);
        }
        // tau = 1 snaps the target onto the live parameters.
        target.soft_update_from(&live, 1.0);
        for (t, l) in get_flat(target.param_slices()).iter().zip(get_flat(live.param_slices())) {
            assert_eq!(*t, l);
        }
    }

    /// Zeroes the action columns of every encoder's first layer so no
    /// Q-value can depend on any action input.
    fn sever_action_pathways(critic: &mut Critic) {
        // Per encoder, param_slices yields [W1, b1, W2, b2]; W1 is
        // row-major hidden x (obs + act).
        for (si, s) in critic.param_slices_mut().enumerate() {
            if si < 4 * SLOTS && si % 4 == 0 {
                for r in 0..6 {
                    for c in OBS..OBS + ACT {
                        s[r * (OBS + ACT) + c] = 0.0;
                    }
                }
            }
        }
    }

    #[test]
    fn baseline_equals_q_exactly_when_critic_ignores_actions() {
        let mut critic = test_critic(24);
        sever_action_pathways(&mut critic);
        let actor = test_actor(25);
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let tr = random_transition(&mut rng, 3);
        let inputs: Vec<SlotInput> = (0..3)
            .map(|k| SlotInput { slot: tr.slots[k], obs: &tr.obs[k], act: &tr.acts[k] })
            .collect();
        let cache = critic.forward(&inputs);
        for i in 0..3 {
            let b = multi_agent_baseline(
                &critic,
                &cache,
                i,
                &actor,
                tr.slots[i],
                &tr.obs[i],
                5,
                &mut rng,
            );
            assert!(
                b == cache.qvals()[i],
                "agent {i}: baseline {b} differs from Q {}",
                cache.qvals()[i]
            );
        }
        // The advantage is identically zero, so its spread collapses.
        let cfg = TrainConfig { baseline_k: 3, ..test_cfg() };
        let batch = vec![tr];
        let refs: Vec<&Transition> = batch.iter().collect();
        let mut grads = actor.zero_grads();
        let stats = policy_gradient(&refs, &actor, &critic, &cfg, 27, &mut grads);
        assert_eq!(stats.adv_variance, 0.0);
    }

    #[test]
    fn baseline_matches_mean_action_value_when_policy_collapses() {
        let critic = test_critic(28);
        let mut actor = test_actor(29);
        // Push every log-std head far below the clamp floor; the policy
        // then draws essentially the mean action every time.
        for (si, s) in actor.param_slices_mut().enumerate() {
            // Per slot net: [W1, b1, W2, b2, W3, b3]; b3 holds the two
            // mean outputs then the two log-std outputs.
            if si % 6 == 5 {
                s[ACT] = -30.0;
                s[ACT + 1] = -30.0;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let tr = random_transition(&mut rng, 2);
        let inputs: Vec<SlotInput> = (0..2)
            .map(|k| SlotInput { slot: tr.slots[k], obs: &tr.obs[k], act: &tr.acts[k] })
            .collect();
        let cache = critic.forward(&inputs);
        for i in 0..2 {
            let b = multi_agent_baseline(
                &critic,
                &cache,
                i,
                &actor,
                tr.slots[i],
                &tr.obs[i],
                3,
                &mut rng,
            );
            let mean = actor.mean_action(tr.slots[i], &tr.obs[i]);
            let want = critic.q_resampled(&cache, i, &mean);
            assert!((b - want).abs() < 1e-6, "agent {i}: {b} vs {want}");
        }
    }

    /// Policy objective with agent i's action reparameterized and every
    /// other agent's action frozen at its base draw: the function whose
    /// total derivative the implemented gradient is.
    fn frozen_others_objective(
        batch: &[Transition],
        actor: &Actor,
        critic: &Critic,
        cfg: &TrainConfig,
        seed: u64,
        base_actions: &[Vec<Vec<f64>>],
    ) -> f64 {
        let nb = batch.len() as f64;
        let mut total = 0.0;
        for (b, tr) in batch.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
            let n = tr.n_acting();
            let samples: Vec<PolicySample> = (0..n)
                .map(|k| actor.sample_with_rng(tr.slots[k], &tr.obs[k], &mut rng))
                .collect();
            for i in 0..n {
                let inputs: Vec<SlotInput> = (0..n)
                    .map(|k| SlotInput {
                        slot: tr.slots[k],
                        obs: &tr.obs[k],
                        act: if k == i { &samples[i].action } else { &base_actions[b][k] },
                    })
                    .collect();
                let q = critic.forward(&inputs).qvals()[i];
                total += (cfg.alpha * samples[i].log_prob - q) / nb;
            }
        }
        total
    }

    fn base_action_draws(
        batch: &[Transition],
        actor: &Actor,
        seed: u64,
    ) -> Vec<Vec<Vec<f64>>> {
        batch
            .iter()
            .enumerate()
            .map(|(b, tr)| {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, b as u64));
                (0..tr.n_acting())
                    .map(|k| actor.sample_with_rng(tr.slots[k], &tr.obs[k], &mut rng).action)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let actor = test_actor(31);
        let critic = test_critic(32);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let batch = random_batch(&mut rng, 3);
        let refs: Vec<&Transition> = batch.iter().collect();
        let cfg = TrainConfig { baseline_k: 0, ..test_cfg() };
        let seed = 34;

        let mut grads = actor.zero_grads();
        let stats = policy_gradient(&refs, &actor, &critic, &cfg, seed, &mut grads);
        let analytic = get_flat(grads.slices());

        let base = base_action_draws(&batch, &actor, seed);
        // At the base point the frozen-others objective coincides with the
        // reported loss, and its gradient with the implemented one.
        let direct = frozen_others_objective(&batch, &actor, &critic, &cfg, seed, &base);
        assert!((direct - stats.loss).abs() < 1e-12, "{direct} vs {}", stats.loss);

        let at = get_flat(actor.param_slices());
        let mut probe = actor.clone();
        let mut f = |p: &[f64]| {
            set_flat(probe.param_slices_mut(), p);
            frozen_others_objective(&batch, &probe, &critic, &cfg, seed, &base)
        };
        let fd = oracles::finite_diff_grad(&mut f, &at, 1e-5);
        let err = oracles::rel_l2_error(&analytic, &fd);
        assert!(err < 1e-6, "relative gradient error {err}");
    }

    #[test]
    fn baseline_leaves_gradients_unchanged_and_shrinks_advantage_spread() {
        let actor = test_actor(35);
        let critic = test_critic(36);
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let batch = random_batch(&mut rng, 16);
        let refs: Vec<&Transition> = batch.iter().collect();
        let seed = 38;

        let off_cfg = TrainConfig { baseline_k: 0, ..test_cfg() };
        let mut g_off = actor.zero_grads();
        let s_off = policy_gradient(&refs, &actor, &critic, &off_cfg, seed, &mut g_off);

        let on_cfg = TrainConfig { baseline_k: 8, ..test_cfg() };
        let mut g_on = actor.zero_grads();
        let s_on = policy_gradient(&refs, &actor, &critic, &on_cfg, seed, &mut g_on);

        for (a, b) in get_flat(g_off.slices()).iter().zip(get_flat(g_on.slices())) {
            assert_eq!(a.to_bits(), b.to_bits(), "baseline changed a gradient: {a} vs {b}");
        }
        assert!(
            s_on.adv_variance < s_off.adv_variance,
            "variance did not shrink: {} vs {}",
            s_on.adv_variance,
            s_off.adv_variance
        );
    }

    #[test]
    fn flat_objective_yields_exactly_zero_gradient() {
        // A zero-parameter critic is constant in the actions, and alpha = 0
        // removes the entropy term, so nothing should move.
        let actor = test_actor(39);
        let critic = zero_params_critic();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let batch = random_batch(&mut rng, 4);
        let refs: Vec<&Transition> = batch.iter().collect();
        let cfg = TrainConfig { alpha: 0.0, baseline_k: 0, ..test_cfg() };
        let mut grads = actor.zero_grads();
        let stats = policy_gradient(&refs, &actor, &critic, &cfg, 41, &mut grads);
        assert_eq!(stats.loss, 0.0);
        for s in grads.slices() {
            for &g in s {
                assert!(g == 0.0, "expected exact zero gradient, got {g}");
            }
        }
    }

    fn small_env_cfg() -> EnvConfig {
        EnvConfig {
            episode_len: 8,
            life_cycle: 8,
            initial_agents: 2,
            spawn_count: 1,
            spawn_period: 4,
            n_max: 4,
            static_obstacles: 2,
            belief_resolution: 20,
            k_obs: 2,
            traj_window: 3,
            ..EnvConfig::default()
        }
    }

    fn small_train_cfg() -> TrainConfig {
        TrainConfig {
            episodes: 3,
            batch: 16,
            updates_per_episode: 2,
            baseline_k: 2,
            buffer_capacity: 500,
            success_window: 10,
            hidden_dim: 8,
            embed_dim: 8,
            n_heads: 2,
            lr: 1e-3,
            seed: 7,
            ..TrainConfig::default()
        }
    }

    fn record_key(r: &EpisodeRecord) -> (u32, u32, u64, u64, u64, bool, u64, u64) {
        (
            r.episode,
            r.steps,
            r.exploration_rate.to_bits(),
            r.mean_reward.to_bits(),
            r.collisions,
            r.success,
            r.critic_loss.to_bits(),
            r.policy_loss.to_bits(),
        )
    }

    #[test]
    fn serial_training_runs_and_is_bit_reproducible() {
        let run = || {
            let mut trainer = Trainer::new(small_train_cfg(), small_env_cfg()).unwrap();
            let mut env = Env::new(small_env_cfg()).unwrap();
            let mut records = Vec::new();
            trainer.train_serial(&mut env, |r| records.push(r.clone())).unwrap();
            // The rollout loop's success flag agrees with the environment's
            // own classification.
            let outcome = env.classify_episode().unwrap();
            assert_eq!(
                records.last().unwrap().success,
                matches!(outcome, EpisodeOutcome::Success)
            );
            (records, trainer)
        };
        let (records, trainer) = run();
        assert_eq!(records.len(), 3);
        // No updates land until the second episode is in.
        assert!(records[0].critic_loss.is_nan());
        assert!(records[0].policy_loss.is_nan());
        assert!(records[0].head_entropies.iter().all(|e| e.is_nan()));
        for r in &records[1..] {
            assert!(r.critic_loss.is_finite() && r.critic_loss >= 0.0);
            assert!(r.policy_loss.is_finite());
            assert_eq!(r.head_entropies.len(), 2);
            assert!(r.head_entropies.iter().all(|e| e.is_finite() && *e >= 0.0));
        }
        assert_eq!(trainer.rounds_done(), 4);
        assert!(!trainer.buffer.is_empty());

        let (again, _) = run();
        for (a, b) in records.iter().zip(&again) {
            assert_eq!(record_key(a), record_key(b), "serial rerun diverged");
        }
    }

    #[test]
    fn single_episode_run_fills_buffer_without_updates() {
        let cfg = TrainConfig { episodes: 1, ..small_train_cfg() };
        let mut trainer = Trainer::new(cfg, small_env_cfg()).unwrap();
        let mut env = Env::new(small_env_cfg()).unwrap();
        trainer.train_serial(&mut env, |_| {}).unwrap();
        assert_eq!(trainer.rounds_done(), 0);
        assert!(!trainer.buffer.is_empty());
    }

    #[test]
    fn evaluation_is_deterministic_and_covers_every_policy() {
        let env_cfg = small_env_cfg();
        let a = evaluate(&env_cfg, &RolloutPolicy::Random, 3, 11, 0.0).unwrap();
        let b = evaluate(&env_cfg, &RolloutPolicy::Random, 3, 11, 0.0).unwrap();
        assert_eq!(a.collisions, b.collisions);
        assert_eq!(a.exploration_rate, b.exploration_rate);
        assert_eq!(a.reward, b.reward);
        assert_eq!(a.success_rate, b.success_rate);
        assert!(a.exploration_rate.mean > 0.0 && a.exploration_rate.mean <= 1.0);

        let h = evaluate(&env_cfg, &RolloutPolicy::Heuristic, 2, 12, 0.0).unwrap();
        assert!(h.exploration_rate.mean > 0.0);
        assert!((0.0..=1.0).contains(&h.success_rate));

        let actor = test_actor(43);
        let cfg = EnvConfig { n_max: SLOTS, initial_agents: 2, spawn_count: 0, ..env_cfg };
        // The actor above expects this observation width.
        let cfg = EnvConfig { k_obs: 0, traj_window: 0, ..cfg };
        assert_eq!(cfg.obs_dim(), 8);
        let tiny = Actor::new(
            ActorConfig { n_slots: SLOTS, obs_dim: 8, act_dim: 2, hidden_dim: 4 },
            &mut ChaCha8Rng::seed_from_u64(44),
        );
        drop(actor);
        let g = evaluate(&cfg, &RolloutPolicy::Greedy(&tiny), 2, 13, 0.0).unwrap();
        assert!(g.exploration_rate.mean > 0.0);
    }

    #[test]
    fn non_finite_losses_abort_with_diagnostics() {
        let mut trainer = Trainer::new(small_train_cfg(), small_env_cfg()).unwrap();
        let mut env = Env::new(small_env_cfg()).unwrap();
        trainer.run_serial_episode(&mut env).unwrap();
        for s in trainer.critic.param_slices_mut() {
            s[0] = f64::NAN;
            break;
        }
        let err = trainer.update_round().unwrap_err();
        match &err {
            TrainError::NonFinite { quantity, details, .. } => {
                assert_eq!(*quantity, "critic loss");
                assert!(details.contains("buffer="), "details lack context: {details}");
            }
            other => panic!("expected NonFinite, got {other:?}"),
        }
        let msg = format!("{err}");
        assert!(msg.contains("critic loss"), "{msg}");
    }

    #[test]
    fn update_without_data_is_rejected() {
        let mut trainer = Trainer::new(small_train_cfg(), small_env_cfg()).unwrap();
        assert!(matches!(trainer.update_round(), Err(TrainError::EmptyBuffer)));
    }

    #[test]
    fn sixteen_slot_training_handles_growing_teams() {
        let env_cfg = EnvConfig {
            episode_len: 14,
            life_cycle: 60,
            initial_agents: 4,
            spawn_count: 2,
            spawn_period: 2,
            n_max: 16,
            static_obstacles: 2,
            belief_resolution: 25,
            k_obs: 2,
            traj_window: 3,
            ..EnvConfig::default()
        };
        let cfg = TrainConfig {
            episodes: 3,
            batch: 8,
            updates_per_episode: 1,
            baseline_k: 1,
            buffer_capacity: 200,
            success_window: 5,
            hidden_dim: 6,
            embed_dim: 8,
            n_heads: 2,
            seed: 3,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::new(cfg, env_cfg.clone()).unwrap();
        let mut env = Env::new(env_cfg).unwrap();
        trainer.train_serial(&mut env, |r| {
            assert_eq!(r.steps, 14);
        }).unwrap();
        // The team grows 4 -> 16 within each episode, so the buffer holds
        // both small and full-width transitions.
        assert_eq!(env.live_count(), 16);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let all = trainer.buffer.sample(usize::MAX, &mut rng);
        let widths: Vec<usize> = all.iter().map(|t| t.n_acting()).collect();
        assert!(widths.contains(&4) && widths.contains(&16), "widths {widths:?}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = |cfg: TrainConfig| {
            assert!(matches!(cfg.validate(), Err(TrainError::BadConfig(_))), "{cfg:?}");
        };
        bad(TrainConfig { episodes: 0, ..TrainConfig::default() });
        bad(TrainConfig { gamma: 1.0, ..TrainConfig::default() });
        bad(TrainConfig { tau: 0.0, ..TrainConfig::default() });
        bad(TrainConfig { lr: f64::NAN, ..TrainConfig::default() });
        bad(TrainConfig { embed_dim: 9, n_heads: 2, ..TrainConfig::default() });
        assert!(TrainConfig::default().validate().is_ok());
        assert!(Trainer::new(TrainConfig { batch: 0, ..TrainConfig::default() }, EnvConfig::default()).is_err());
    }
}
