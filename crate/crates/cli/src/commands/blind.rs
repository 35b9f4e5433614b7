use std::path::Path;

use anyhow::Result;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use softarm::env::Env;
use softarm::learn::{run_blind_episode, BlindController, EpisodeMetrics, ReturnSummary, SensingSchedule};

use crate::artifact::{write_json, Provenance, RunDir, Stamped};
use crate::commands::eval::{load_trained, run_config};
use crate::commands::eval_seeds;
use crate::commands::selfmodel::load_self_model;
use crate::config::ExperimentConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleResult {
    pub schedule: SensingSchedule,
    pub summary: ReturnSummary,
    pub episodes: Vec<EpisodeMetrics>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlindBody {
    pub results: Vec<ScheduleResult>,
}

/// Runs `trials` deterministic episodes per schedule on the same seeds.
pub fn evaluate_schedule(
    env: &Env,
    controller: &BlindController,
    schedule: SensingSchedule,
    seeds: &[u64],
) -> Result<ScheduleResult> {
    let episodes = seeds
        .par_iter()
        .map(|&seed| run_blind_episode(&mut env.clone(), &mut controller.clone(), schedule, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let returns: Vec<f64> = episodes.iter().map(|m| m.episode_return).collect();
    Ok(ScheduleResult { schedule, summary: ReturnSummary::of(&returns), episodes })
}

/// Compares full sensing with each configured blind interval for the run
/// `out/seed-N`, which needs a policy and fitted self-model maps.
pub fn run_blind_eval(
    config: Option<&ExperimentConfig>,
    out: &Path,
    seed: u64,
    trials: Option<usize>,
) -> Result<Stamped<BlindBody>> {
    let run = RunDir::new(out, seed);
    let (policy, reservoir) = load_trained(&run)?;
    let maps = load_self_model(&run, &reservoir)?;
    let config = run_config(&run, config)?;
    let arm_length = config.arm.backbone.length;
    let controller = BlindController::new(policy.body.policy, reservoir, maps, arm_length)?;
    let env = Env::new(&config.env_config())?;
    let seeds = eval_seeds(trials.unwrap_or(config.blind.trials));
    let schedules = std::iter::once(SensingSchedule::Always)
        .chain(config.blind.intervals.iter().map(|&interval| SensingSchedule::Alternating { interval }));
    let results = schedules
        .map(|schedule| {
            let r = evaluate_schedule(&env, &controller, schedule, &seeds)?;
            log::info!("{schedule:?}: mean {:.4}, IQR {:.4}", r.summary.mean, r.summary.iqr);
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    let artifact = Stamped { provenance: Provenance::new(&config, Some(seed)), body: BlindBody { results } };
    write_json(&run.blind(), &artifact)?;
    Ok(artifact)
}
