//! Experiment configuration: a TOML file merged with command-line overrides
//! (flags win), validated before any backend is constructed or any network
//! call is made. The resolved config is hashed into the run manifest so a
//! saved run directory identifies exactly what produced it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stepco::correction::StepCoConfig;
use stepco::error::{Error, Result};
use stepco::gateway::RemoteChatConfig;
use stepco::scoring::RemoteScorerConfig;

/// Which method drives each question.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "snake_case")]
#[clap(rename_all = "snake_case")]
pub enum Method {
    Stepco,
    BestOfN,
    SelfConsistency,
    Pathco,
    Direct,
    ZeroShotCot,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Stepco => "stepco",
            Method::BestOfN => "best_of_n",
            Method::SelfConsistency => "self_consistency",
            Method::Pathco => "pathco",
            Method::Direct => "direct",
            Method::ZeroShotCot => "zero_shot_cot",
        }
    }
}

/// Generator backend selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSection {
    /// Canned responses from a JSON file: either an array replayed in call
    /// order or an object keyed by exact prompt.
    Scripted { responses: PathBuf },
    /// OpenAI-compatible chat endpoint.
    Remote(RemoteChatConfig),
    /// Deterministic synthetic environment; questions are synthesized from
    /// the `[sim]` section instead of read from a dataset file.
    Simulated,
}

/// Scorer backend selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScorerSection {
    /// HTTP verifier endpoint.
    Remote(RemoteScorerConfig),
    /// Ground-truth scorer for the synthetic environment (requires the
    /// simulated generator). Noise rates come from the `[sim]` section.
    Oracle,
    /// Every prefix scores the same value.
    Constant { p: f64 },
    /// Exact prompt → probability lookup from a JSON object file.
    Table { file: PathBuf },
}

/// Knobs for the synthetic environment (used when the generator is
/// `simulated` and by the `simulate` command).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// Per-step corruption rate of the simulated generator.
    pub epsilon: f64,
    /// Success rate of the simulated reviser.
    pub rho: f64,
    /// False-pass rate of the noisy oracle (0 disables noise together with
    /// `fnr`).
    pub fpr: f64,
    /// False-fail rate of the noisy oracle.
    pub fnr: f64,
    /// Reference threshold the noisy oracle anchors its score ranges to;
    /// fixed per scorer, independent of the loop threshold.
    pub theta_ref: f64,
    /// How many tasks to synthesize.
    pub tasks: usize,
    pub min_steps: usize,
    pub max_steps: usize,
}

impl Default for SimSection {
    fn default() -> SimSection {
        SimSection {
            epsilon: 0.1,
            rho: 0.8,
            fpr: 0.0,
            fnr: 0.0,
            theta_ref: 0.5,
            tasks: 100,
            min_steps: 3,
            max_steps: 6,
        }
    }
}

/// The full experiment configuration, as stored on disk and after flag
/// overrides. Field defaults match the reference setup: θ = 0.5, T = 5,
/// N = 10 samples, temperature 0.7.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Question file (JSONL). Ignored when the generator is simulated.
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Verification threshold θ.
    pub theta: f64,
    /// Iteration budget T.
    pub max_iterations: u32,
    /// Sample count N for self-consistency and best-of-N.
    pub n: u32,
    pub temperature: f64,
    /// Worker threads; output order is by question id regardless.
    pub parallelism: usize,
    /// Annotation tree depth cap.
    pub max_depth: u32,
    pub generator: GeneratorSection,
    pub scorer: ScorerSection,
    pub sim: SimSection,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            method: Method::Stepco,
            dataset: None,
            output_dir: PathBuf::from("out"),
            seed: 0,
            theta: 0.5,
            max_iterations: 5,
            n: 10,
            temperature: 0.7,
            parallelism: 1,
            max_depth: 8,
            generator: GeneratorSection::Simulated,
            scorer: ScorerSection::Oracle,
            sim: SimSection::default(),
        }
    }
}

/// Command-line overrides shared by the `run`, `annotate`, and `simulate`
/// subcommands. Every present flag replaces the corresponding file value.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Question file (JSONL with id, question, answer fields).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Verification threshold θ in [0,1].
    #[arg(long)]
    pub theta: Option<f64>,
    /// Iteration budget T.
    #[arg(long)]
    pub max_iterations: Option<u32>,
    /// Sample count N for self_consistency / best_of_n.
    #[arg(long)]
    pub n: Option<u32>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Annotation tree depth cap.
    #[arg(long)]
    pub max_depth: Option<u32>,
    /// Synthetic batch size.
    #[arg(long)]
    pub tasks: Option<usize>,
    /// Simulated generator per-step corruption rate.
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Simulated reviser success rate.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Noisy oracle false-pass rate.
    #[arg(long)]
    pub fpr: Option<f64>,
    /// Noisy oracle false-fail rate.
    #[arg(long)]
    pub fnr: Option<f64>,
    #[arg(long)]
    pub min_steps: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

impl ExperimentConfig {
    /// Load the TOML file (when given), then apply flag overrides.
    /// Unknown keys, unknown method names, and type errors all surface as
    /// `ConfigInvalid`.
    pub fn resolve(overrides: &Overrides) -> Result<ExperimentConfig> {
        let mut cfg = match &overrides.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| {
                    invalid(format!("cannot read {}: {e}", path.display()))
                })?;
                toml::from_str::<ExperimentConfig>(&text)
                    .map_err(|e| invalid(format!("{}: {e}", path.display())))?
            }
            None => ExperimentConfig::default(),
        };
        cfg.apply(overrides);
        Ok(cfg)
    }

    fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.method {
            self.method = v;
        }
        if let Some(v) = &o.dataset {
            self.dataset = Some(v.clone());
        }
        if let Some(v) = &o.output_dir {
            self.output_dir = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.theta {
            self.theta = v;
        }
        if let Some(v) = o.max_iterations {
            self.max_iterations = v;
        }
        if let Some(v) = o.n {
            self.n = v;
        }
        if let Some(v) = o.temperature {
            self.temperature = v;
        }
        if let Some(v) = o.parallelism {
            self.parallelism = v;
        }
        if let Some(v) = o.max_depth {
            self.max_depth = v;
        }
        if let Some(v) = o.tasks {
            self.sim.tasks = v;
        }
        if let Some(v) = o.epsilon {
            self.sim.epsilon = v;
        }
        if let Some(v) = o.rho {
            self.sim.rho = v;
        }
        if let Some(v) = o.fpr {
            self.sim.fpr = v;
        }
        if let Some(v) = o.fnr {
            self.sim.fnr = v;
        }
        if let Some(v) = o.min_steps {
            self.sim.min_steps = v;
        }
        if let Some(v) = o.max_steps {
            self.sim.max_steps = v;
        }
    }

    /// Structural checks that need no I/O. Runs before any backend exists.
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("{name} must be in [0,1], got {v}")));
            }
            Ok(())
        };
        unit("theta", self.theta)?;
        unit("sim.epsilon", self.sim.epsilon)?;
        unit("sim.rho", self.sim.rho)?;
        unit("sim.fpr", self.sim.fpr)?;
        unit("sim.fnr", self.sim.fnr)?;
        if !(self.sim.theta_ref > 0.0 && self.sim.theta_ref < 1.0) {
            return Err(invalid(format!(
                "sim.theta_ref must be strictly inside (0,1), got {}",
                self.sim.theta_ref
            )));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(invalid(format!(
                "temperature must be a finite non-negative number, got {}",
                self.temperature
            )));
        }
        if self.parallelism == 0 {
            return Err(invalid("parallelism must be at least 1"));
        }
        if self.max_depth == 0 {
            return Err(invalid("max_depth must be at least 1"));
        }
        if self.n == 0
            && matches!(self.method, Method::SelfConsistency | Method::BestOfN)
        {
            return Err(invalid("n must be at least 1 for sampling methods"));
        }
        if self.sim.min_steps < 2 || self.sim.max_steps < self.sim.min_steps {
            return Err(invalid(format!(
                "sim step range must satisfy 2 <= min_steps <= max_steps, \
                 got {}..{}",
                self.sim.min_steps, self.sim.max_steps
            )));
        }
        if let ScorerSection::Constant { p } = self.scorer {
            unit("scorer.p", p)?;
        }
        if matches!(self.scorer, ScorerSection::Oracle)
            && !matches!(self.generator, GeneratorSection::Simulated)
        {
            return Err(invalid(
                "the oracle scorer requires the simulated generator; it has \
                 no ground truth for external datasets",
            ));
        }
        if self.dataset.is_none()
            && !matches!(self.generator, GeneratorSection::Simulated)
        {
            return Err(invalid(
                "a dataset file is required unless the generator is simulated",
            ));
        }
        Ok(())
    }

    /// Extra checks for commands that synthesize their own questions.
    pub fn validate_batch(&self) -> Result<()> {
        if self.sim.tasks == 0 {
            return Err(invalid("batch size must be at least 1 task"));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the resolved config.
    pub fn sha256(&self) -> String {
        let canon =
            serde_json::to_string(self).expect("config serializes to JSON");
        crate::sha256_hex(canon.as_bytes())
    }

    /// The loop parameters in library form.
    pub fn stepco_config(&self) -> StepCoConfig {
        StepCoConfig {
            theta: self.theta,
            max_iterations: self.max_iterations,
            temperature: self.temperature,
            ..StepCoConfig::default()
        }
    }
}

/// Load a JSON file that is either an array of responses (replayed in call
/// order) or an object mapping exact prompts to responses.
pub fn load_scripted_responses(
    path: &Path,
) -> Result<stepco::gateway::GeneratorBackend> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    match value {
        serde_json::Value::Array(items) => {
            let mut seq = Vec::with_capacity(items.len());
            for item in items {
                match item {
                    serde_json::Value::String(s) => seq.push(s),
                    other => {
                        return Err(invalid(format!(
                            "{}: array entries must be strings, got {other}",
                            path.display()
                        )))
                    }
                }
            }
            Ok(stepco::gateway::GeneratorBackend::scripted_sequence(seq))
        }
        serde_json::Value::Object(map) => {
            let mut by_prompt = BTreeMap::new();
            for (k, v) in map {
                match v {
                    serde_json::Value::String(s) => {
                        by_prompt.insert(k, s);
                    }
                    other => {
                        return Err(invalid(format!(
                            "{}: values must be strings, got {other}",
                            path.display()
                        )))
                    }
                }
            }
            Ok(stepco::gateway::GeneratorBackend::scripted_by_prompt(by_prompt))
        }
        other => Err(invalid(format!(
            "{}: expected a JSON array or object, got {other}",
            path.display()
        ))),
    }
}

/// Load a JSON object mapping exact prefix prompts to probabilities.
pub fn load_score_table(path: &Path) -> Result<stepco::scoring::ScorerBackend> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let map: BTreeMap<String, f64> = serde_json::from_str(&text)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(stepco::scoring::ScorerBackend::table(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_reference_setup() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.theta, 0.5);
        assert_eq!(cfg.max_iterations, 5);
        assert_eq!(cfg.n, 10);
        assert_eq!(cfg.temperature, 0.7);
        assert_eq!(cfg.parallelism, 1);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn toml_round_trip_preserves_the_config() {
        let mut cfg = ExperimentConfig::default();
        cfg.method = Method::BestOfN;
        cfg.dataset = Some(PathBuf::from("questions.jsonl"));
        cfg.generator = GeneratorSection::Scripted {
            responses: PathBuf::from("responses.json"),
        };
        cfg.scorer = ScorerSection::Constant { p: 0.9 };
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_method_is_config_invalid() {
        let err = toml::from_str::<ExperimentConfig>("method = \"beam\"")
            .map(|_| ())
            .unwrap_err();
        assert!(err.to_string().contains("beam"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("thetaa = 0.5").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let overrides = Overrides {
            theta: Some(0.8),
            seed: Some(7),
            method: Some(Method::Pathco),
            ..Overrides::default()
        };
        let cfg = ExperimentConfig::resolve(&overrides).unwrap();
        assert_eq!(cfg.theta, 0.8);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.method, Method::Pathco);
        assert_eq!(cfg.max_iterations, 5, "untouched fields keep defaults");
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        let mut cfg = ExperimentConfig::default();
        cfg.theta = 1.2;
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));

        let mut cfg = ExperimentConfig::default();
        cfg.parallelism = 0;
        assert!(cfg.validate().is_err());

        let mut cfg = ExperimentConfig::default();
        cfg.sim.min_steps = 1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn oracle_scorer_requires_the_simulated_generator() {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset = Some(PathBuf::from("q.jsonl"));
        cfg.generator = GeneratorSection::Scripted {
            responses: PathBuf::from("r.json"),
        };
        assert!(matches!(cfg.validate(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn zero_batch_is_config_invalid() {
        let mut cfg = ExperimentConfig::default();
        cfg.sim.tasks = 0;
        assert!(matches!(cfg.validate_batch(), Err(Error::ConfigInvalid(_))));
    }

    #[test]
    fn config_hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::default();
        let b = ExperimentConfig::default();
        assert_eq!(a.sha256(), b.sha256());
        assert_eq!(a.sha256().len(), 64);

        let mut c = ExperimentConfig::default();
        c.seed = 1;
        assert_ne!(a.sha256(), c.sha256());
    }
}
