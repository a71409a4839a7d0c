//! Self-describing training checkpoints: a format-versioned envelope
//! holding both configs and their hash, every live and target network,
//! optimizer state, and the curriculum window. The envelope serializes
//! through serde (parameter matrices carry their shapes and little-endian
//! base64 payloads); callers pick the wire format and do the IO.
//!
//! The replay buffer is deliberately not captured: at the default capacity
//! it dwarfs the parameters by orders of magnitude, and a resumed run
//! refills it within a few episodes. Resumed training is therefore
//! statistically, not bitwise, continuous; evaluation of a restored
//! checkpoint is exact.

use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::actor::Actor;
use crate::critic::Critic;
use crate::env::EnvConfig;
use crate::nn::Adam;
use crate::replay::ReplayBuffer;
use crate::trainer::{TrainConfig, Trainer};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("unsupported checkpoint format version {found} (this build reads {expected})")]
    Version { found: u32, expected: u32 },
    #[error("config hash mismatch: stored {stored:#018x}, recomputed {computed:#018x}")]
    HashMismatch { stored: u64, computed: u64 },
    #[error("checkpoint is internally inconsistent: {0}")]
    Incompatible(&'static str),
    #[error(transparent)]
    Train(#[from] crate::trainer::TrainError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    /// Hash over every TrainConfig and EnvConfig field.
    pub config_hash: u64,
    pub train_cfg: TrainConfig,
    pub env_cfg: EnvConfig,
    pub episodes_done: u32,
    pub rounds_done: u64,
    pub actor: Actor,
    pub actor_target: Actor,
    pub critic: Critic,
    pub critic_target: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub success_window: Vec<bool>,
    pub window_cursor: usize,
}

impl Checkpoint {
    /// Snapshots the trainer's complete learning state.
    pub fn capture(trainer: &Trainer) -> Checkpoint {
        Checkpoint {
            format_version: FORMAT_VERSION,
            config_hash: config_hash(&trainer.cfg, &trainer.env_cfg),
            train_cfg: trainer.cfg,
            env_cfg: trainer.env_cfg.clone(),
            episodes_done: trainer.episodes_done(),
            rounds_done: trainer.rounds_done(),
            actor: trainer.actor.clone(),
            actor_target: trainer.actor_target.clone(),
            critic: trainer.critic.clone(),
            critic_target: trainer.critic_target.clone(),
            actor_opt: trainer.actor_opt.clone(),
            critic_opt: trainer.critic_opt.clone(),
            success_window: trainer.window.clone(),
            window_cursor: trainer.window_cursor,
        }
    }

    /// Rebuilds a trainer, rejecting unreadable versions, configs that no
    /// longer hash to the stored value, and shape mismatches between the
    /// networks, the optimizers, and the configs.
    pub fn restore(self) -> Result<Trainer, CheckpointError> {
        if self.format_version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let computed = config_hash(&self.train_cfg, &self.env_cfg);
        if computed != self.config_hash {
            return Err(CheckpointError::HashMismatch { stored: self.config_hash, computed });
        }
        self.train_cfg.validate()?;
        self.env_cfg.validate().map_err(crate::trainer::TrainError::from)?;
        self.check_shapes()?;

        let actor_grads = self.actor.zero_grads();
        let critic_grads = self.critic.zero_grads();
        Ok(Trainer {
            buffer: ReplayBuffer::new(self.train_cfg.buffer_capacity),
            cfg: self.train_cfg,
            env_cfg: self.env_cfg,
            actor: self.actor,
            actor_target: self.actor_target,
            critic: self.critic,
            critic_target: self.critic_target,
            actor_opt: self.actor_opt,
            critic_opt: self.critic_opt,
            actor_grads,
            critic_grads,
            episodes_done: self.episodes_done,
            rounds_done: self.rounds_done,
            window: self.success_window,
            window_cursor: self.window_cursor,
        })
    }

    fn check_shapes(&self) -> Result<(), CheckpointError> {
        let bad = |m| Err(CheckpointError::Incompatible(m));
        let a = &self.actor.cfg;
        let c = &self.critic.cfg;
        if a.n_slots != self.env_cfg.n_max || c.n_slots != self.env_cfg.n_max {
            return bad("network slot count does not match the environment");
        }
        if a.obs_dim != self.env_cfg.obs_dim() || c.obs_dim != self.env_cfg.obs_dim() {
            return bad("network observation width does not match the environment");
        }
        if a.act_dim != 2 || c.act_dim != 2 {
            return bad("network action width is not the environment's");
        }
        if a.hidden_dim != self.train_cfg.hidden_dim
            || c.hidden_dim != self.train_cfg.hidden_dim
            || c.embed_dim != self.train_cfg.embed_dim
            || c.n_heads != self.train_cfg.n_heads
        {
            return bad("network dimensions do not match the training config");
        }
        if self.actor_target.cfg != *a || self.critic_target.cfg != *c {
            return bad("target network shapes differ from the live networks");
        }
        if self.actor_opt.param_count() != self.actor.param_count()
            || self.critic_opt.param_count() != self.critic.param_count()
        {
            return bad("optimizer state does not cover the parameter set");
        }
        if self.success_window.len() > self.train_cfg.success_window
            || (self.window_cursor != 0 && self.window_cursor >= self.train_cfg.success_window)
        {
            return bad("curriculum window exceeds its configured size");
        }
        Ok(())
    }
}

/// FNV-1a over every configuration field, reals by their bit patterns.
pub fn config_hash(train: &TrainConfig, env: &EnvConfig) -> u64 {
    let mut h = Fnv::new();
    h.u64(train.episodes as u64);
    h.u64(train.workers as u64);
    h.u64(train.batch as u64);
    h.u64(train.updates_per_episode as u64);
    h.f64(train.gamma);
    h.f64(train.alpha);
    h.f64(train.lr);
    h.f64(train.tau);
    h.u64(train.baseline_k as u64);
    h.u64(train.buffer_capacity as u64);
    h.u64(train.success_window as u64);
    h.u64(train.hidden_dim as u64);
    h.u64(train.embed_dim as u64);
    h.u64(train.n_heads as u64);
    h.u64(train.seed);
    h.f64(env.agent_radius);
    h.u64(env.episode_len as u64);
    h.u64(env.life_cycle as u64);
    h.u64(env.initial_agents as u64);
    h.u64(env.spawn_count as u64);
    h.u64(env.spawn_period as u64);
    h.u64(env.n_max as u64);
    h.f64(env.collision_reward);
    h.u64(env.static_obstacles as u64);
    h.u64(env.curriculum_m as u64);
    h.f64(env.curriculum_n);
    h.u64(env.belief_resolution as u64);
    h.f64(env.v_max);
    h.f64(env.accel_scale);
    h.f64(env.damping);
    h.f64(env.success_rate);
    h.f64(env.sensing_radius);
    h.u64(env.k_obs as u64);
    h.u64(env.traj_window as u64);
    h.f64(env.area_tol);
    h.finish()
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Fnv {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
