//! The `eval` subcommand: greedy rollouts of a trained checkpoint, the
//! summary table (optionally alongside the uniform-random and heuristic
//! baselines), and per-step attention-weight capture.

use std::fs;
use std::path::Path;

use roam::critic::SlotInput;
use roam::derive_seed;
use roam::env::Env;
use roam::trainer::{EvalSummary, RolloutPolicy, Trainer, evaluate, rollout_episode};

use crate::cli::EvalArgs;
use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::metrics::{fmt_f64, open_writer};
use crate::train::load_checkpoint;

pub fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let trainer = load_checkpoint(&args.checkpoint)?.restore()?;
    let difficulty = match args.difficulty {
        Some(p) if !(0.0..=1.0).contains(&p) => {
            return Err(CliError::usage("--difficulty must lie in [0, 1]"));
        }
        Some(p) => p,
        None => trainer.difficulty(),
    };

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::runtime(anyhow::anyhow!("cannot create {}: {e}", args.out.display())))?;
    let snapshot = RunConfig {
        train: trainer.cfg,
        env: trainer.env_cfg.clone(),
        checkpoint_every: 0,
    };
    let mut manifest = RunManifest::new(
        "eval",
        args.seed,
        snapshot,
        &["eval_summary.csv", "eval_success.csv", "attention.csv"],
    );
    manifest.write(&args.out)?;

    let mut rows: Vec<(&str, EvalSummary)> = Vec::new();
    log::info!(
        "evaluating {} episodes at difficulty {difficulty:.3} (seed {})",
        args.episodes,
        args.seed
    );
    let learned = evaluate(
        &trainer.env_cfg,
        &RolloutPolicy::Greedy(&trainer.actor),
        args.episodes,
        args.seed,
        difficulty,
    )?;
    rows.push(("learned", learned));
    if args.baselines {
        rows.push((
            "random",
            evaluate(&trainer.env_cfg, &RolloutPolicy::Random, args.episodes, args.seed, difficulty)?,
        ));
        rows.push((
            "heuristic",
            evaluate(&trainer.env_cfg, &RolloutPolicy::Heuristic, args.episodes, args.seed, difficulty)?,
        ));
    }
    write_summary(&args.out, &rows)?;
    write_attention(&args.out, &trainer, args.attn_episodes.min(args.episodes), args.seed, difficulty)?;
    manifest.finish(&args.out)?;
    for (name, s) in &rows {
        log::info!(
            "{name}: exploration {:.4} +/- {:.4}, collisions {:.2} +/- {:.2}, success rate {:.3}",
            s.exploration_rate.mean,
            s.exploration_rate.std,
            s.collisions.mean,
            s.collisions.std,
            s.success_rate
        );
    }
    Ok(())
}

fn write_summary(out: &Path, rows: &[(&str, EvalSummary)]) -> Result<(), CliError> {
    let path = out.join("eval_summary.csv");
    let mut w = open_writer(&path)?;
    let fail = |e: csv::Error| CliError::runtime(anyhow::anyhow!("cannot write {}: {e}", path.display()));
    w.write_record([
        "approach",
        "collisions_mean",
        "collisions_std",
        "exploration_rate_mean",
        "exploration_rate_std",
        "reward_mean",
        "reward_std",
    ])
    .map_err(fail)?;
    for (name, s) in rows {
        w.write_record([
            name.to_string(),
            fmt_f64(s.collisions.mean),
            fmt_f64(s.collisions.std),
            fmt_f64(s.exploration_rate.mean),
            fmt_f64(s.exploration_rate.std),
            fmt_f64(s.reward.mean),
            fmt_f64(s.reward.std),
        ])
        .map_err(fail)?;
    }
    w.flush().map_err(|e| CliError::runtime(anyhow::anyhow!("cannot write {}: {e}", path.display())))?;

    // Success rates live in a sibling table so the summary schema stays put.
    let spath = out.join("eval_success.csv");
    let mut sw = open_writer(&spath)?;
    let sfail = |e: csv::Error| CliError::runtime(anyhow::anyhow!("cannot write {}: {e}", spath.display()));
    sw.write_record(["approach", "success_rate"]).map_err(sfail)?;
    for (name, s) in rows {
        sw.write_record([name.to_string(), fmt_f64(s.success_rate)]).map_err(sfail)?;
    }
    sw.flush().map_err(|e| CliError::runtime(anyhow::anyhow!("cannot write {}: {e}", spath.display())))
}

/// Replays the first evaluation episodes with the greedy policy and logs
/// every attention weight the critic assigns along the way.
fn write_attention(
    out: &Path,
    trainer: &Trainer,
    episodes: u32,
    seed: u64,
    difficulty: f64,
) -> Result<(), CliError> {
    let path = out.join("attention.csv");
    let mut w = open_writer(&path)?;
    let fail = |e: csv::Error| CliError::runtime(anyhow::anyhow!("cannot write {}: {e}", path.display()));
    w.write_record(["episode", "step", "head", "i", "j", "weight"]).map_err(fail)?;

    let mut env = Env::new(trainer.env_cfg.clone())?;
    env.set_difficulty(difficulty);
    for episode in 0..episodes {
        // The same seed derivation as `evaluate`, so the recorded episodes
        // are exactly the first ones behind the summary row.
        let env_seed = derive_seed(seed, 2 * episode as u64);
        let act_seed = derive_seed(seed, 2 * episode as u64 + 1);
        let (transitions, _) = rollout_episode(
            &mut env,
            &RolloutPolicy::Greedy(&trainer.actor),
            env_seed,
            act_seed,
            true,
        )?;
        for (step, t) in transitions.iter().enumerate() {
            let inputs: Vec<SlotInput> = (0..t.slots.len())
                .map(|k| SlotInput { slot: t.slots[k], obs: &t.obs[k], act: &t.acts[k] })
                .collect();
            let cache = trainer.critic.forward(&inputs);
            for i in 0..cache.n_agents() {
                for h in 0..cache.n_heads() {
                    for (j, weight) in cache.attention_weights(i, h) {
                        w.write_record([
                            episode.to_string(),
                            step.to_string(),
                            h.to_string(),
                            t.slots[i].to_string(),
                            t.slots[j].to_string(),
                            fmt_f64(weight),
                        ])
                        .map_err(fail)?;
                    }
                }
            }
        }
    }
    w.flush().map_err(|e| CliError::runtime(anyhow::anyhow!("cannot write {}: {e}", path.display())))
}
