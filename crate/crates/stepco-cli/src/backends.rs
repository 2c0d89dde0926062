//! Turns the validated configuration into live backends. Whenever the
//! generator is simulated, the synthetic tasks double as the question set,
//! so this module also owns task synthesis.

use stepco::error::{Error, Result};
use stepco::gateway::{GeneratorBackend, RemoteChatClient};
use stepco::path::Question;
use stepco::scoring::{RemoteScorer, ScorerBackend};
use stepco::simenv::{
    synthesize_batch, OracleScorer, ScorerNoise, SimConfig, SyntheticTask,
};

use crate::config::{
    load_score_table, load_scripted_responses, ExperimentConfig,
    GeneratorSection, ScorerSection,
};

/// Live backends plus the questions they answer. `tasks` is populated only
/// for the simulated generator.
pub struct Resolved {
    pub generator: GeneratorBackend,
    pub scorer: ScorerBackend,
    pub questions: Vec<Question>,
    pub tasks: Option<Vec<SyntheticTask>>,
}

fn sim_config(cfg: &ExperimentConfig) -> SimConfig {
    SimConfig {
        epsilon: cfg.sim.epsilon,
        rho: cfg.sim.rho,
        scorer_noise: ScorerNoise { fpr: cfg.sim.fpr, fnr: cfg.sim.fnr },
        seed: cfg.seed,
    }
}

/// Build the oracle scorer for a task set, noisy only when a noise rate is
/// set. The noisy scorer anchors to `sim.theta_ref`, not the loop threshold,
/// so sweeping θ changes the loop's decisions but not the score distribution.
pub fn oracle_for(
    cfg: &ExperimentConfig,
    tasks: &[SyntheticTask],
) -> ScorerBackend {
    let oracle = if cfg.sim.fpr > 0.0 || cfg.sim.fnr > 0.0 {
        OracleScorer::noisy(
            tasks.iter().cloned(),
            ScorerNoise { fpr: cfg.sim.fpr, fnr: cfg.sim.fnr },
            cfg.sim.theta_ref,
            stepco::seeding::derive_seed(cfg.seed, &["scorer"]),
        )
    } else {
        OracleScorer::exact(tasks.iter().cloned())
    };
    ScorerBackend::Oracle(oracle)
}

/// Synthesize the configured batch of tasks.
pub fn synthesize_tasks(cfg: &ExperimentConfig) -> Result<Vec<SyntheticTask>> {
    synthesize_batch(
        cfg.seed,
        cfg.sim.tasks,
        cfg.sim.min_steps,
        cfg.sim.max_steps,
    )
}

/// Resolve the generator and question set only — for commands that never
/// score (annotation). The config must already be validated; no network
/// traffic happens here (remote clients are only constructed, not
/// exercised).
pub fn resolve_generator(
    cfg: &ExperimentConfig,
) -> Result<(GeneratorBackend, Vec<Question>, Option<Vec<SyntheticTask>>)> {
    match &cfg.generator {
        GeneratorSection::Simulated => {
            cfg.validate_batch()?;
            let tasks = synthesize_tasks(cfg)?;
            let questions: Vec<Question> =
                tasks.iter().map(|t| t.question.clone()).collect();
            let gen = GeneratorBackend::Simulated(
                stepco::simenv::SimulatedGenerator::new(
                    sim_config(cfg),
                    tasks.iter().cloned(),
                ),
            );
            Ok((gen, questions, Some(tasks)))
        }
        GeneratorSection::Scripted { responses } => {
            let gen = load_scripted_responses(responses)?;
            Ok((gen, load_dataset(cfg)?, None))
        }
        GeneratorSection::Remote(remote) => {
            let gen = GeneratorBackend::RemoteChat(RemoteChatClient::new(
                remote.clone(),
            )?);
            Ok((gen, load_dataset(cfg)?, None))
        }
    }
}

/// Resolve generator, scorer, and questions for a full run.
pub fn resolve(cfg: &ExperimentConfig) -> Result<Resolved> {
    let (generator, questions, tasks) = resolve_generator(cfg)?;

    let scorer = match &cfg.scorer {
        ScorerSection::Oracle => match &tasks {
            Some(tasks) => oracle_for(cfg, tasks),
            None => {
                return Err(Error::ConfigInvalid(
                    "the oracle scorer requires the simulated generator"
                        .into(),
                ))
            }
        },
        ScorerSection::Constant { p } => ScorerBackend::constant(*p),
        ScorerSection::Table { file } => load_score_table(file)?,
        ScorerSection::Remote(remote) => {
            ScorerBackend::RemoteHttp(RemoteScorer::new(remote.clone())?)
        }
    };

    Ok(Resolved { generator, scorer, questions, tasks })
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<Vec<Question>> {
    let path = cfg.dataset.as_ref().ok_or_else(|| {
        Error::ConfigInvalid("a dataset file is required".into())
    })?;
    stepco::dataset::load_questions_jsonl(path)
}
