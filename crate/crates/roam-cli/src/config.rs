//! Run configuration: every training and environment field in one flat
//! key-value namespace, loadable from TOML, overridable from the command
//! line with `--set key=value`, and serializable back out with the
//! documentation attached so a run directory always carries an auditable,
//! rerunnable copy.

use roam::env::EnvConfig;
use roam::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Fully resolved configuration of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub env: EnvConfig,
    /// Episodes between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u32,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train: TrainConfig::default(),
            env: EnvConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.train.validate()?;
        self.env.validate()?;
        Ok(())
    }

    /// Hash of every training and environment field; stored in manifests
    /// and compared against checkpoints on resume.
    pub fn config_hash(&self) -> u64 {
        roam::checkpoint::config_hash(&self.train, &self.env)
    }

    pub fn from_toml_str(text: &str) -> Result<RunConfig, CliError> {
        let partial: PartialConfig = toml::from_str(text)
            .map_err(|e| CliError::usage(format!("config error: {e}")))?;
        let mut cfg = RunConfig::default();
        partial.apply(&mut cfg);
        Ok(cfg)
    }

    /// Applies one `key=value` override, parsed as a one-line TOML
    /// document, so values use exactly the grammar of the file.
    pub fn apply_set(&mut self, setting: &str) -> Result<(), CliError> {
        if !setting.contains('=') {
            return Err(CliError::usage(format!("--set expects key=value, got `{setting}`")));
        }
        let partial: PartialConfig = toml::from_str(setting)
            .map_err(|e| CliError::usage(format!("--set {setting}: {e}")))?;
        partial.apply(self);
        Ok(())
    }

    /// Renders the full configuration as TOML with one documented default
    /// per line. Parsing the output reproduces `self` exactly.
    pub fn to_toml_string(&self) -> String {
        let mut s = String::from("# Run configuration: every key with its resolved value.\n\n");
        let t = &self.train;
        let e = &self.env;

        s.push_str("# --- training ---\n");
        key(&mut s, "total training episodes", "episodes", t.episodes.to_string());
        key(&mut s, "rollout workers; 1 selects the bit-reproducible serial path", "workers", t.workers.to_string());
        key(&mut s, "transitions sampled per update round", "batch", t.batch.to_string());
        key(&mut s, "update rounds after each episode from the second onward", "updates_per_episode", t.updates_per_episode.to_string());
        key(&mut s, "discount factor", "gamma", float(t.gamma));
        key(&mut s, "entropy temperature", "alpha", float(t.alpha));
        key(&mut s, "Adam learning rate for both networks", "lr", float(t.lr));
        key(&mut s, "target-network tracking rate", "tau", float(t.tau));
        key(&mut s, "samples per counterfactual baseline estimate; 0 disables it", "baseline_k", t.baseline_k.to_string());
        key(&mut s, "replay buffer capacity in transitions", "buffer_capacity", t.buffer_capacity.to_string());
        key(&mut s, "episodes of success history feeding the curriculum difficulty", "success_window", t.success_window.to_string());
        key(&mut s, "hidden width of every feed-forward stage", "hidden_dim", t.hidden_dim.to_string());
        key(&mut s, "attention embedding width (divisible by n_heads)", "embed_dim", t.embed_dim.to_string());
        key(&mut s, "attention heads", "n_heads", t.n_heads.to_string());
        key(&mut s, "master seed; every random stream derives from it", "seed", t.seed.to_string());

        s.push_str("# --- environment ---\n");
        key(&mut s, "agent exploration radius; obstacles share it", "agent_radius", float(e.agent_radius));
        key(&mut s, "steps per episode", "episode_len", e.episode_len.to_string());
        key(&mut s, "steps an agent operates before departing", "life_cycle", e.life_cycle.to_string());
        key(&mut s, "agents present at reset, one per arrival corner", "initial_agents", e.initial_agents.to_string());
        key(&mut s, "agents injected per spawn tick while capacity remains", "spawn_count", e.spawn_count.to_string());
        key(&mut s, "steps between spawn ticks", "spawn_period", e.spawn_period.to_string());
        key(&mut s, "hard cap on concurrently live agents; also the parameter slot count", "n_max", e.n_max.to_string());
        key(&mut s, "reward added per collision an agent participates in", "collision_reward", float(e.collision_reward));
        key(&mut s, "obstacles placed at reset", "static_obstacles", e.static_obstacles.to_string());
        key(&mut s, "obstacle-injection base period at difficulty 0", "curriculum_m", e.curriculum_m.to_string());
        key(&mut s, "obstacles per injection at the base period", "curriculum_n", float(e.curriculum_n));
        key(&mut s, "belief grid resolution (cells per side)", "belief_resolution", e.belief_resolution.to_string());
        key(&mut s, "speed cap, map units per step", "v_max", float(e.v_max));
        key(&mut s, "acceleration per unit action, map units per step^2", "accel_scale", float(e.accel_scale));
        key(&mut s, "velocity damping factor applied each step", "damping", float(e.damping));
        key(&mut s, "exploration rate at which a clean episode counts as a success", "success_rate", float(e.success_rate));
        key(&mut s, "obstacle sensing radius for observations", "sensing_radius", float(e.sensing_radius));
        key(&mut s, "nearest-obstacle slots in the observation", "k_obs", e.k_obs.to_string());
        key(&mut s, "own-trajectory window length in the observation", "traj_window", e.traj_window.to_string());
        key(&mut s, "quadrature tolerance for area computations", "area_tol", float(e.area_tol));

        s.push_str("# --- artifacts ---\n");
        key(&mut s, "episodes between periodic checkpoints; 0 keeps only the final one", "checkpoint_every", self.checkpoint_every.to_string());
        s
    }
}

fn key(s: &mut String, doc: &str, name: &str, value: String) {
    s.push_str("# ");
    s.push_str(doc);
    s.push('\n');
    s.push_str(name);
    s.push_str(" = ");
    s.push_str(&value);
    s.push_str("\n\n");
}

/// Formats an f64 so TOML parses it back bit-exactly and as a float (a
/// bare integer literal would change the TOML type).
fn float(v: f64) -> String {
    let plain = format!("{v}");
    if plain.contains('.') || plain.contains('e') || plain.contains("inf") || plain.contains("NaN") {
        plain
    } else {
        format!("{plain}.0")
    }
}

/// File/override form of [`RunConfig`]: every key optional, unknown keys
/// rejected with the parser's own line-precise message.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    episodes: Option<u32>,
    workers: Option<usize>,
    batch: Option<usize>,
    updates_per_episode: Option<u32>,
    gamma: Option<f64>,
    alpha: Option<f64>,
    lr: Option<f64>,
    tau: Option<f64>,
    baseline_k: Option<usize>,
    buffer_capacity: Option<usize>,
    success_window: Option<usize>,
    hidden_dim: Option<usize>,
    embed_dim: Option<usize>,
    n_heads: Option<usize>,
    seed: Option<u64>,

    agent_radius: Option<f64>,
    episode_len: Option<u32>,
    life_cycle: Option<u32>,
    initial_agents: Option<usize>,
    spawn_count: Option<usize>,
    spawn_period: Option<u32>,
    n_max: Option<usize>,
    collision_reward: Option<f64>,
    static_obstacles: Option<usize>,
    curriculum_m: Option<u32>,
    curriculum_n: Option<f64>,
    belief_resolution: Option<usize>,
    v_max: Option<f64>,
    accel_scale: Option<f64>,
    damping: Option<f64>,
    success_rate: Option<f64>,
    sensing_radius: Option<f64>,
    k_obs: Option<usize>,
    traj_window: Option<usize>,
    area_tol: Option<f64>,

    checkpoint_every: Option<u32>,
}

impl PartialConfig {
    fn apply(self, cfg: &mut RunConfig) {
        let t = &mut cfg.train;
        if let Some(v) = self.episodes { t.episodes = v; }
        if let Some(v) = self.workers { t.workers = v; }
        if let Some(v) = self.batch { t.batch = v; }
        if let Some(v) = self.updates_per_episode { t.updates_per_episode = v; }
        if let Some(v) = self.gamma { t.gamma = v; }
        if let Some(v) = self.alpha { t.alpha = v; }
        if let Some(v) = self.lr { t.lr = v; }
        if let Some(v) = self.tau { t.tau = v; }
        if let Some(v) = self.baseline_k { t.baseline_k = v; }
        if let Some(v) = self.buffer_capacity { t.buffer_capacity = v; }
        if let Some(v) = self.success_window { t.success_window = v; }
        if let Some(v) = self.hidden_dim { t.hidden_dim = v; }
        if let Some(v) = self.embed_dim { t.embed_dim = v; }
        if let Some(v) = self.n_heads { t.n_heads = v; }
        if let Some(v) = self.seed { t.seed = v; }

        let e = &mut cfg.env;
        if let Some(v) = self.agent_radius { e.agent_radius = v; }
        if let Some(v) = self.episode_len { e.episode_len = v; }
        if let Some(v) = self.life_cycle { e.life_cycle = v; }
        if let Some(v) = self.initial_agents { e.initial_agents = v; }
        if let Some(v) = self.spawn_count { e.spawn_count = v; }
        if let Some(v) = self.spawn_period { e.spawn_period = v; }
        if let Some(v) = self.n_max { e.n_max = v; }
        if let Some(v) = self.collision_reward { e.collision_reward = v; }
        if let Some(v) = self.static_obstacles { e.static_obstacles = v; }
        if let Some(v) = self.curriculum_m { e.curriculum_m = v; }
        if let Some(v) = self.curriculum_n { e.curriculum_n = v; }
        if let Some(v) = self.belief_resolution { e.belief_resolution = v; }
        if let Some(v) = self.v_max { e.v_max = v; }
        if let Some(v) = self.accel_scale { e.accel_scale = v; }
        if let Some(v) = self.damping { e.damping = v; }
        if let Some(v) = self.success_rate { e.success_rate = v; }
        if let Some(v) = self.sensing_radius { e.sensing_radius = v; }
        if let Some(v) = self.k_obs { e.k_obs = v; }
        if let Some(v) = self.traj_window { e.traj_window = v; }
        if let Some(v) = self.area_tol { e.area_tol = v; }

        if let Some(v) = self.checkpoint_every { cfg.checkpoint_every = v; }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_is_exact() {
        let mut cfg = RunConfig::default();
        cfg.train.lr = 3.17e-4;
        cfg.train.seed = u64::MAX;
        cfg.env.agent_radius = 0.123456789012345678;
        cfg.checkpoint_every = 7;
        let text = cfg.to_toml_string();
        let back = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.train.lr.to_bits(), cfg.train.lr.to_bits());
        assert_eq!(back.env.agent_radius.to_bits(), cfg.env.agent_radius.to_bits());
    }

    #[test]
    fn partial_file_keeps_defaults_elsewhere() {
        let cfg = RunConfig::from_toml_str("episodes = 5\nagent_radius = 0.1\n").unwrap();
        assert_eq!(cfg.train.episodes, 5);
        assert_eq!(cfg.env.agent_radius, 0.1);
        assert_eq!(cfg.train.batch, TrainConfig::default().batch);
        assert_eq!(cfg.env.n_max, EnvConfig::default().n_max);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = RunConfig::from_toml_str("episodez = 5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("episodez"), "{msg}");
    }

    #[test]
    fn set_override_uses_toml_values() {
        let mut cfg = RunConfig::default();
        cfg.apply_set("lr=3e-4").unwrap();
        cfg.apply_set("episodes=12").unwrap();
        assert_eq!(cfg.train.lr, 3e-4);
        assert_eq!(cfg.train.episodes, 12);
        assert!(cfg.apply_set("lr").is_err());
        assert!(cfg.apply_set("nope=1").is_err());
        assert!(cfg.apply_set("episodes=maybe").is_err());
    }

    #[test]
    fn integer_literal_for_float_key_is_accepted() {
        // `gamma = 0` is the natural way to write the degenerate discount.
        let cfg = RunConfig::from_toml_str("gamma = 0\n");
        match cfg {
            Ok(c) => assert_eq!(c.train.gamma, 0.0),
            // If the parser is strict about float syntax the caller gets a
            // precise message; either behavior is workable, but we pin the
            // lenient one expected from the TOML crate.
            Err(e) => panic!("integer-for-float rejected: {e}"),
        }
    }
}
