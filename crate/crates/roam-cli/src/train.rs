//! The `train` subcommand: configuration resolution, the learning loop in
//! serial or worker-pool form, and the run artifacts (manifest, resolved
//! config copy, metrics log, checkpoints).

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread;

use roam::actor::Actor;
use roam::checkpoint::Checkpoint;
use roam::env::{Env, EnvError};
use roam::replay::Transition;
use roam::trainer::{
    EpisodeRecord, RolloutPolicy, RolloutStats, RoundSummary, Trainer, episode_seeds,
    rollout_episode,
};

use crate::cli::TrainArgs;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{RunManifest, write_json_atomic};
use crate::metrics::MetricsWriter;

pub fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::from_toml_str(&text)?
        }
        None => RunConfig::default(),
    };
    for spec in &args.set {
        cfg.apply_set(spec)?;
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(episodes) = args.episodes {
        cfg.train.episodes = episodes;
    }
    if let Some(workers) = args.workers {
        cfg.train.workers = workers;
    }
    cfg.validate()?;

    if args.print_config {
        print!("{}", cfg.to_toml_string());
        return Ok(());
    }
    let out = args
        .out
        .as_deref()
        .ok_or_else(|| CliError::usage("train requires --out DIR (or --print-config)"))?;

    let mut trainer = match &args.resume {
        Some(path) => {
            let cp = load_checkpoint(path)?;
            let expected = cfg.config_hash();
            if cp.config_hash != expected {
                return Err(CliError::usage(format!(
                    "checkpoint {} was written under config hash {:016x} but the resolved \
                     config hashes to {expected:016x}; resume requires the identical config",
                    path.display(),
                    cp.config_hash
                )));
            }
            let trainer = cp.restore()?;
            log::info!(
                "resuming at episode {} of {}",
                trainer.episodes_done(),
                trainer.cfg.episodes
            );
            trainer
        }
        None => Trainer::new(cfg.train, cfg.env.clone())?,
    };

    fs::create_dir_all(out)
        .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot create {}: {e}", out.display())))?;
    let mut manifest = RunManifest::new(
        "train",
        cfg.train.seed,
        cfg.clone(),
        &["config.toml", "metrics.csv", "checkpoint_final.json"],
    );
    manifest.write(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml_string())
        .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot write resolved config: {e}")))?;

    let mut metrics = if args.resume.is_some() {
        MetricsWriter::resume(&out.join("metrics.csv"), cfg.train.n_heads)?
    } else {
        MetricsWriter::create(&out.join("metrics.csv"), cfg.train.n_heads)?
    };
    if trainer.cfg.workers == 1 {
        train_serial(&mut trainer, out, &cfg, &mut metrics)?;
    } else {
        train_parallel(&mut trainer, out, &cfg, &mut metrics)?;
    }

    save_checkpoint(&out.join("checkpoint_final.json"), &Checkpoint::capture(&trainer))?;
    manifest.finish(out)?;
    log::info!("finished {} episodes", trainer.episodes_done());
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("cannot read checkpoint {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("cannot parse checkpoint {}: {e}", path.display())))
}

pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<(), CliError> {
    write_json_atomic(path, cp)
}

fn progress(rec: &EpisodeRecord, total: u32) {
    if (rec.episode + 1) % 100 == 0 || rec.episode + 1 == total {
        log::info!(
            "episode {}/{total}: exploration {:.3}, reward {:.3}, collisions {}, difficulty {:.2}",
            rec.episode + 1,
            rec.exploration_rate,
            rec.mean_reward,
            rec.collisions,
            rec.difficulty
        );
    }
}

fn maybe_checkpoint(trainer: &Trainer, out: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let done = trainer.episodes_done();
    if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < trainer.cfg.episodes {
        save_checkpoint(&out.join(format!("checkpoint_ep{done}.json")), &Checkpoint::capture(trainer))?;
    }
    Ok(())
}

fn train_serial(
    trainer: &mut Trainer,
    out: &Path,
    cfg: &RunConfig,
    metrics: &mut MetricsWriter,
) -> Result<(), CliError> {
    let mut env = Env::new(trainer.env_cfg.clone())?;
    while trainer.episodes_done() < trainer.cfg.episodes {
        let rec = trainer.run_serial_episode(&mut env)?;
        metrics.append(&rec)?;
        progress(&rec, trainer.cfg.episodes);
        maybe_checkpoint(trainer, out, cfg)?;
    }
    Ok(())
}

/// Parameter snapshot handed to rollout workers at episode boundaries.
struct PolicySnapshot {
    actor: Actor,
    difficulty: f64,
}

struct FinishedEpisode {
    transitions: Vec<Transition>,
    stats: RolloutStats,
    /// Curriculum difficulty the episode was rolled out at.
    difficulty: f64,
}

/// Worker-pool training: `workers` threads roll out episodes on their own
/// environment instances against read-only policy snapshots, a bounded
/// channel serializes completed episodes into the single learner (this
/// thread), and the learner refreshes the shared snapshot after each
/// absorbed episode. Episode seeds are keyed by a global schedule counter,
/// but arrival order depends on thread timing, so unlike the serial path
/// this mode is not bit-reproducible.
fn train_parallel(
    trainer: &mut Trainer,
    out: &Path,
    cfg: &RunConfig,
    metrics: &mut MetricsWriter,
) -> Result<(), CliError> {
    let total = trainer.cfg.episodes;
    let master = trainer.cfg.seed;
    let workers = trainer.cfg.workers;
    let env_cfg = trainer.env_cfg.clone();
    let next = AtomicU32::new(trainer.episodes_done());
    let snapshot = Mutex::new(Arc::new(PolicySnapshot {
        actor: trainer.actor.clone(),
        difficulty: trainer.difficulty(),
    }));
    let (tx, rx) = mpsc::sync_channel::<Result<FinishedEpisode, EnvError>>(workers);

    thread::scope(|scope| -> Result<(), CliError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let snapshot = &snapshot;
            let env_cfg = &env_cfg;
            scope.spawn(move || {
                let mut env = match Env::new(env_cfg.clone()) {
                    Ok(env) => env,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                };
                loop {
                    let idx = next.fetch_add(1, Ordering::Relaxed);
                    if idx >= total {
                        break;
                    }
                    let snap = snapshot.lock().expect("snapshot lock").clone();
                    env.set_difficulty(snap.difficulty);
                    let (env_seed, act_seed) = episode_seeds(master, idx);
                    let msg = rollout_episode(
                        &mut env,
                        &RolloutPolicy::Stochastic(&snap.actor),
                        env_seed,
                        act_seed,
                        true,
                    )
                    .map(|(transitions, stats)| FinishedEpisode {
                        transitions,
                        stats,
                        difficulty: snap.difficulty,
                    });
                    if tx.send(msg).is_err() {
                        break; // learner is gone
                    }
                }
            });
        }
        drop(tx);

        let mut learner = || -> Result<(), CliError> {
            while trainer.episodes_done() < total {
                let msg = rx
                    .recv()
                    .map_err(|_| CliError::runtime(anyhow::anyhow!("all rollout workers exited early")))?;
                let fin = msg.map_err(CliError::from)?;
                let summary = trainer.absorb_episode(fin.transitions, fin.stats.success)?;
                *snapshot.lock().expect("snapshot lock") = Arc::new(PolicySnapshot {
                    actor: trainer.actor.clone(),
                    difficulty: trainer.difficulty(),
                });
                let rec = episode_record(trainer, &fin.stats, fin.difficulty, summary);
                metrics.append(&rec)?;
                progress(&rec, total);
                maybe_checkpoint(trainer, out, cfg)?;
            }
            Ok(())
        };
        let result = learner();
        // Unblock any worker waiting on a full channel, then let the scope
        // join them; the schedule counter stops new rollouts.
        next.store(total, Ordering::Relaxed);
        drop(rx);
        result
    })
}

/// Builds the metrics row for an episode absorbed outside the serial path,
/// mirroring what `Trainer::run_serial_episode` reports.
fn episode_record(
    trainer: &Trainer,
    stats: &RolloutStats,
    difficulty: f64,
    summary: Option<RoundSummary>,
) -> EpisodeRecord {
    let (critic_loss, policy_loss, head_entropies) = match summary {
        Some(s) => (s.critic_loss, s.policy_loss, s.head_entropies),
        None => (f64::NAN, f64::NAN, vec![f64::NAN; trainer.cfg.n_heads]),
    };
    EpisodeRecord {
        episode: trainer.episodes_done() - 1,
        steps: stats.steps,
        exploration_rate: stats.exploration_rate,
        mean_reward: stats.mean_reward(),
        collisions: stats.collisions,
        success: stats.success,
        difficulty,
        critic_loss,
        policy_loss,
        head_entropies,
    }
}
