//! `simulate`: closed-loop benchmarking against the synthetic environment.
//! Synthesizes a task batch, runs each requested method across a θ sweep,
//! and writes one CSV row per (method, θ) cell. The scorer's noise model is
//! anchored once at `sim.theta_ref`, so the sweep varies only the loop's
//! decision threshold.

use stepco::error::{Error, Result};
use stepco::gateway::GeneratorBackend;
use stepco::path::Question;
use stepco::simenv::SimulatedGenerator;

use crate::backends::{oracle_for, synthesize_tasks};
use crate::config::{ExperimentConfig, Method};
use crate::trace::{write_bytes, write_json_pretty, write_jsonl, Manifest};

use super::{ensure_output_dir, execute_batch};

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    /// Thresholds to sweep; empty means "just the configured θ".
    pub theta_sweep: Vec<f64>,
    /// Methods to benchmark; empty means StepCo and best-of-N.
    pub methods: Vec<Method>,
    /// Also write a trace file per (method, θ) cell.
    pub emit_traces: bool,
}

impl Default for SimulateOptions {
    fn default() -> SimulateOptions {
        SimulateOptions {
            theta_sweep: Vec::new(),
            methods: Vec::new(),
            emit_traces: false,
        }
    }
}

/// Mean iterations (or samples) one question costs under a method: loop
/// methods report their actual round count, sampling methods their sample
/// budget, single-pass methods 1.
fn mean_iterations(
    method: Method,
    cfg: &ExperimentConfig,
    records: &[crate::trace::TraceRecord],
) -> f64 {
    match method {
        Method::Stepco | Method::Pathco => {
            let total: usize =
                records.iter().map(|r| r.iterations.len()).sum();
            total as f64 / records.len() as f64
        }
        Method::SelfConsistency | Method::BestOfN => cfg.n as f64,
        Method::Direct | Method::ZeroShotCot => 1.0,
    }
}

pub fn cmd_simulate(
    cfg: &ExperimentConfig,
    options: &SimulateOptions,
) -> Result<()> {
    cfg.validate()?;
    cfg.validate_batch()?;

    let mut sweep = if options.theta_sweep.is_empty() {
        vec![cfg.theta]
    } else {
        options.theta_sweep.clone()
    };
    for theta in &sweep {
        if !(0.0..=1.0).contains(theta) {
            return Err(Error::ConfigInvalid(format!(
                "sweep threshold must be in [0,1], got {theta}"
            )));
        }
    }
    sweep.sort_by(|a, b| a.partial_cmp(b).expect("finite thresholds"));
    sweep.dedup();

    let methods = if options.methods.is_empty() {
        vec![Method::Stepco, Method::BestOfN]
    } else {
        options.methods.clone()
    };

    let tasks = synthesize_tasks(cfg)?;
    let questions: Vec<Question> =
        tasks.iter().map(|t| t.question.clone()).collect();
    let generator = GeneratorBackend::Simulated(SimulatedGenerator::new(
        stepco::simenv::SimConfig {
            epsilon: cfg.sim.epsilon,
            rho: cfg.sim.rho,
            scorer_noise: stepco::simenv::ScorerNoise {
                fpr: cfg.sim.fpr,
                fnr: cfg.sim.fnr,
            },
            seed: cfg.seed,
        },
        tasks.iter().cloned(),
    ));
    let scorer = oracle_for(cfg, &tasks);

    ensure_output_dir(cfg)?;
    let mut csv = String::from(
        "method,theta,mean_iterations,accuracy,total_tokens,generator_calls,scorer_calls\n",
    );
    for &method in &methods {
        for &theta in &sweep {
            let cell_cfg = ExperimentConfig {
                method,
                theta,
                ..cfg.clone()
            };
            let (records, _failures) =
                execute_batch(&cell_cfg, &generator, &scorer, &questions)?;

            let correct =
                records.iter().filter(|r| r.final_correct).count();
            let accuracy = correct as f64 / records.len() as f64;
            let tokens: u64 =
                records.iter().map(|r| r.tokens.total_tokens()).sum();
            let gen_calls: u64 =
                records.iter().map(|r| r.tokens.generator_calls).sum();
            let scorer_calls: u64 =
                records.iter().map(|r| r.tokens.scorer_calls).sum();
            csv.push_str(&format!(
                "{},{:.2},{:.6},{:.6},{},{},{}\n",
                method.name(),
                theta,
                mean_iterations(method, cfg, &records),
                accuracy,
                tokens,
                gen_calls,
                scorer_calls,
            ));

            if options.emit_traces {
                let name = format!(
                    "traces-{}-theta{:.2}.jsonl",
                    method.name(),
                    theta
                );
                write_jsonl(&cfg.output_dir.join(name), &records)?;
            }
        }
    }

    write_bytes(&cfg.output_dir.join("sweep.csv"), csv.as_bytes())?;
    let manifest = Manifest::new(
        "simulate",
        cfg.seed,
        cfg.sha256(),
        questions.len(),
        0,
    );
    write_json_pretty(&cfg.output_dir.join("manifest.json"), &manifest)?;

    print!("{csv}");
    Ok(())
}
