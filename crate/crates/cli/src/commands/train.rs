use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rand::rngs::mock::StepRng;
use serde::{Deserialize, Serialize};
use softarm::env::{Env, EpisodeLog};
use softarm::learn::{run_episode, ActionMode, ReadoutPolicy, Trainer, TrainerState};
use softarm::reservoir::digest_hex;

use crate::artifact::{read_json, write_json, JsonLines, Provenance, RunDir, Stamped};
use crate::commands::TRACE_SEED;
use crate::config::{stream_seed, ExperimentConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointBody {
    pub state: TrainerState,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyBody {
    pub reservoir_digest: String,
    pub updates: usize,
    pub policy: ReadoutPolicy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfigBody {
    pub config: ExperimentConfig,
}

/// Trains one seed into `out/seed-N`, continuing from its checkpoint when
/// `resume` is set and one exists. `stop_after` ends this invocation early
/// after that many updates; the run can be resumed later.
pub fn run_train(
    config: &ExperimentConfig,
    out: &Path,
    seed: u64,
    resume: bool,
    stop_after: Option<usize>,
) -> Result<RunDir> {
    let run = RunDir::new(out, seed);
    fs::create_dir_all(&run.root).with_context(|| format!("creating {}", run.root.display()))?;
    let provenance = Provenance::new(config, Some(seed));
    let env_config = config.env_config();

    let (mut trainer, mut curve) = if resume && run.checkpoint().exists() {
        let checkpoint: Stamped<CheckpointBody> = read_json(&run.checkpoint())?;
        if checkpoint.provenance != provenance {
            bail!(
                "checkpoint in {} belongs to config {} (seed {:?}), not {}",
                run.root.display(),
                checkpoint.provenance.config_hash,
                checkpoint.provenance.seed,
                provenance.config_hash
            );
        }
        let reservoir = run.read_reservoir()?;
        let state = checkpoint.body.state;
        let done = state.update;
        let trainer = Trainer::restore(&env_config, &config.learning, reservoir, state)?;
        let curve = JsonLines::resume(&run.curve(), &provenance, done)?;
        log::info!("seed {seed}: resuming at update {done}");
        (trainer, curve)
    } else {
        let reservoir = config.reservoir.build(stream_seed(seed, "reservoir"))?;
        run.write_reservoir(&reservoir)?;
        write_json(
            &run.config(),
            &Stamped { provenance: provenance.clone(), body: ConfigBody { config: config.clone() } },
        )?;
        let trainer = Trainer::new(&env_config, &config.learning, reservoir, stream_seed(seed, "trainer"))?;
        let curve = JsonLines::create(&run.curve(), &provenance)?;
        save_checkpoint(&run, &provenance, &trainer)?;
        (trainer, curve)
    };

    let mut checkpoint_due = false;
    let mut budget = stop_after.unwrap_or(usize::MAX);
    while !trainer.is_finished() {
        if budget == 0 {
            log::info!("seed {seed}: stopping at update {} as requested", trainer.updates_done());
            return Ok(run);
        }
        budget -= 1;
        let record = trainer.step().with_context(|| {
            format!(
                "seed {seed}: update {} failed; last checkpoint kept in {}",
                trainer.updates_done(),
                run.root.display()
            )
        })?;
        curve.append(&record)?;
        let done = trainer.updates_done();
        log::info!(
            "seed {seed} update {done}: mean return {}",
            record.mean_return.map_or("-".into(), |r| format!("{r:.4}"))
        );
        if !trainer.policy().is_finite() {
            bail!("seed {seed}: policy parameters became non-finite at update {done}; last checkpoint kept");
        }
        checkpoint_due |= done % config.output.checkpoint_every == 0 || trainer.is_finished();
        if checkpoint_due && save_checkpoint(&run, &provenance, &trainer)? {
            checkpoint_due = false;
        }
        if config.output.trace_every > 0 && done % config.output.trace_every == 0 {
            write_trace(&run, &provenance, config, &trainer, done)?;
        }
    }
    write_json(
        &run.policy(),
        &Stamped {
            provenance,
            body: PolicyBody {
                reservoir_digest: digest_hex(&trainer.reservoir().weights_digest()),
                updates: trainer.updates_done(),
                policy: trainer.policy().clone(),
            },
        },
    )?;
    Ok(run)
}

/// Writes the checkpoint if every worker sits at an episode start.
fn save_checkpoint(run: &RunDir, provenance: &Provenance, trainer: &Trainer) -> Result<bool> {
    match trainer.state() {
        Some(state) => {
            write_json(&run.checkpoint(), &Stamped { provenance: provenance.clone(), body: CheckpointBody { state } })?;
            Ok(true)
        }
        None => Ok(false),
    }
}

/// One deterministic episode of the current policy, logged step by step.
fn write_trace(
    run: &RunDir,
    provenance: &Provenance,
    config: &ExperimentConfig,
    trainer: &Trainer,
    update: usize,
) -> Result<()> {
    fs::create_dir_all(run.traces())?;
    let path = run.traces().join(format!("update-{update:05}.jsonl"));
    let mut log = EpisodeLog::create_with_header(
        &path,
        &Stamped { provenance: provenance.clone(), body: TraceHeader { update } },
    )?;
    let mut env = Env::new(&config.env_config())?;
    let mut reservoir = trainer.reservoir().clone();
    run_episode(
        &mut env,
        &mut reservoir,
        trainer.policy(),
        ActionMode::Deterministic,
        TRACE_SEED,
        &mut StepRng::new(0, 0),
        Some(&mut log),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct TraceHeader {
    update: usize,
}
