//! `annotate`: expand a binary step tree per question and emit the verifier
//! training pairs — one `{"x": prefix prompt, "y": step quality}` line per
//! non-root node, questions in id order, nodes in id order.

use stepco::annotation::{emit_dataset, expand_tree, TreeBuildConfig};
use stepco::error::{Error, Result};
use stepco::seeding::derive_seed;

use crate::backends::resolve_generator;
use crate::config::ExperimentConfig;
use crate::trace::{write_json_pretty, write_jsonl, Manifest};

use super::ensure_output_dir;

#[derive(Debug, Clone, Copy, Default)]
pub struct AnnotateOptions {
    /// Also dump the full trees (`trees.jsonl`) next to the dataset.
    pub emit_trees: bool,
}

pub fn cmd_annotate(
    cfg: &ExperimentConfig,
    options: &AnnotateOptions,
) -> Result<()> {
    cfg.validate()?;
    let (generator, mut questions, _) = resolve_generator(cfg)?;
    if questions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    questions.sort_by(|a, b| a.id.cmp(&b.id));

    let tree_cfg = TreeBuildConfig {
        max_depth: cfg.max_depth as usize,
        temperature: cfg.temperature,
        ..TreeBuildConfig::default()
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| {
            Error::ConfigInvalid(format!("cannot build worker pool: {e}"))
        })?;
    let trees: Vec<_> = pool.install(|| {
        use rayon::prelude::*;
        questions
            .par_iter()
            .map(|q| {
                expand_tree(
                    &generator,
                    q,
                    &tree_cfg,
                    derive_seed(cfg.seed, &[&q.id]),
                )
            })
            .collect()
    });

    let mut examples = Vec::new();
    for tree in &trees {
        examples.extend(emit_dataset(tree));
    }

    ensure_output_dir(cfg)?;
    write_jsonl(&cfg.output_dir.join("dataset.jsonl"), &examples)?;
    if options.emit_trees {
        write_jsonl(&cfg.output_dir.join("trees.jsonl"), &trees)?;
    }
    let manifest =
        Manifest::new("annotate", cfg.seed, cfg.sha256(), questions.len(), 0);
    write_json_pretty(&cfg.output_dir.join("manifest.json"), &manifest)?;

    println!(
        "annotated {} questions into {} labeled prefixes",
        questions.len(),
        examples.len()
    );
    Ok(())
}
