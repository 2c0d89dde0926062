//! Process-supervision dataset construction.
//!
//! Each question is expanded into a binary tree of reasoning steps: at every
//! non-terminal node the generator is prompted twice — once with guiding
//! demonstrations, once with misleading ones — producing one continuation
//! step per branch. A node's quality is the fraction of leaves below it
//! whose final answer matches gold, and every non-root node yields one
//! `(prefix prompt, quality)` training pair.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::GeneratorBackend;
use crate::path::{answers_equal, parse_reasoning_path, AnswerKey, Question};
use crate::scoring::render_prefix_prompt;
use crate::seeding::derive_seed;

/// Which demonstration set produced a node's step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Guiding demonstrations — continuations tend to stay on track.
    Plus,
    /// Misleading demonstrations — continuations tend to derail.
    Minus,
}

/// One node of an annotation tree. The root stands for the question itself
/// and carries no step text; a failed generation also leaves `step_text`
/// empty (and is terminal, counted as incorrect).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub branch: Option<Branch>,
    pub step_text: String,
    pub depth: usize,
    pub is_terminal: bool,
}

/// Binary expansion tree for one question. Node ids are breadth-first with
/// the Plus child always preceding its Minus sibling; the root has id 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTree {
    pub question: Question,
    pub nodes: Vec<TreeNode>,
}

/// The two demonstration prompts, shipped verbatim as assets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Demonstrations {
    pub plus: String,
    pub minus: String,
}

impl Default for Demonstrations {
    fn default() -> Demonstrations {
        Demonstrations {
            plus: include_str!("../assets/demonstration_plus.txt").into(),
            minus: include_str!("../assets/demonstration_minus.txt").into(),
        }
    }
}

/// Expansion parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeBuildConfig {
    /// Hard cap on step depth; nodes at this depth are forced terminal.
    pub max_depth: usize,
    pub temperature: f64,
    #[serde(default)]
    pub demonstrations: Demonstrations,
}

impl Default for TreeBuildConfig {
    fn default() -> TreeBuildConfig {
        TreeBuildConfig {
            max_depth: 8,
            temperature: 0.7,
            demonstrations: Demonstrations::default(),
        }
    }
}

/// One supervision pair: a prefix prompt and the quality of its last step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedExample {
    pub x: String,
    pub y: f64,
}

/// A step that consists of nothing but the answer ends its branch — the
/// convention the demonstration finals establish.
fn is_bare_answer(step_text: &str) -> bool {
    step_text.split_whitespace().count() == 1
}

impl AnnotationTree {
    /// Step texts on the path from the root down to `id` (root excluded).
    pub fn path_texts(&self, id: usize) -> Result<Vec<&str>> {
        let mut rev = Vec::new();
        let mut cursor = self.nodes.get(id).ok_or(Error::UnknownNode(id))?;
        while let Some(parent) = cursor.parent {
            rev.push(cursor.step_text.as_str());
            cursor = &self.nodes[parent];
        }
        rev.reverse();
        Ok(rev)
    }

    pub fn children(&self, id: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.parent == Some(id))
            .map(|n| n.id)
            .collect()
    }
}

/// Breadth-first binary expansion of `q` under `gen`.
///
/// Every non-terminal node at depth < `max_depth` gets exactly two children,
/// prompted with the Plus and Minus demonstrations respectively. A branch
/// whose generation fails (or parses to nothing) becomes an empty terminal
/// node rather than aborting the tree. Deterministic given a deterministic
/// backend and `seed`.
pub fn expand_tree(
    gen: &GeneratorBackend,
    q: &Question,
    cfg: &TreeBuildConfig,
    seed: u64,
) -> AnnotationTree {
    assert!(cfg.max_depth >= 1, "max_depth must be at least 1");
    let mut tree = AnnotationTree {
        question: q.clone(),
        nodes: vec![TreeNode {
            id: 0,
            parent: None,
            branch: None,
            step_text: String::new(),
            depth: 0,
            is_terminal: false,
        }],
    };
    let mut frontier: VecDeque<usize> = VecDeque::from([0]);

    while let Some(parent) = frontier.pop_front() {
        let prefix = tree.path_texts(parent).expect("parent exists");
        let base_prompt = render_prefix_prompt(&q.text, &prefix);
        let depth = tree.nodes[parent].depth + 1;

        for branch in [Branch::Plus, Branch::Minus] {
            let (demo, label) = match branch {
                Branch::Plus => (&cfg.demonstrations.plus, "plus"),
                Branch::Minus => (&cfg.demonstrations.minus, "minus"),
            };
            let prompt = format!("{demo}\n\n{base_prompt}");
            let child_seed =
                derive_seed(seed, &[&q.id, "expand", &parent.to_string(), label]);
            // The continuation's first parsed step is the child; anything
            // unusable collapses to an empty terminal.
            let step_text = gen
                .complete(&prompt, cfg.temperature, child_seed)
                .ok()
                .and_then(|(text, _)| parse_reasoning_path(&text).ok())
                .map(|path| path.steps[0].text.clone())
                .unwrap_or_default();

            let is_terminal = step_text.is_empty()
                || is_bare_answer(&step_text)
                || depth == cfg.max_depth;
            let id = tree.nodes.len();
            tree.nodes.push(TreeNode {
                id,
                parent: Some(parent),
                branch: Some(branch),
                step_text,
                depth,
                is_terminal,
            });
            if !is_terminal {
                frontier.push_back(id);
            }
        }
    }
    tree
}

/// All childless descendants of `m` (or `{m}` when `m` is childless).
pub fn leaf_set(tree: &AnnotationTree, m: usize) -> Result<BTreeSet<usize>> {
    if m >= tree.nodes.len() {
        return Err(Error::UnknownNode(m));
    }
    let mut leaves = BTreeSet::new();
    let mut stack = vec![m];
    while let Some(id) = stack.pop() {
        let kids = tree.children(id);
        if kids.is_empty() {
            leaves.insert(id);
        } else {
            stack.extend(kids);
        }
    }
    Ok(leaves)
}

/// `(correct, total)` leaf counts under `m`. A leaf is correct when an
/// answer of `gold`'s kind is extractable from its step text and equals
/// `gold`; empty or unextractable leaves count as incorrect.
pub fn step_quality_counts(
    tree: &AnnotationTree,
    m: usize,
    gold: &AnswerKey,
) -> Result<(usize, usize)> {
    let leaves = leaf_set(tree, m)?;
    let correct = leaves
        .iter()
        .filter(|&&leaf| {
            AnswerKey::parse(gold.kind, &tree.nodes[leaf].step_text)
                .ok()
                .map(|a| answers_equal(&a, gold).unwrap_or(false))
                .unwrap_or(false)
        })
        .count();
    Ok((correct, leaves.len()))
}

/// Fraction of leaves under `m` that land on the gold answer.
pub fn step_quality(tree: &AnnotationTree, m: usize, gold: &AnswerKey) -> Result<f64> {
    let (correct, total) = step_quality_counts(tree, m, gold)?;
    Ok(correct as f64 / total as f64)
}

/// One `(x, y)` pair per non-root node, in id order (breadth-first, Plus
/// before Minus): `x` is the prefix prompt from the root through that node —
/// the same rendering the scorer consumes — and `y` its leaf quality.
pub fn emit_dataset(tree: &AnnotationTree) -> Vec<AnnotatedExample> {
    let gold = &tree.question.gold_answer;
    tree.nodes[1..]
        .iter()
        .map(|node| {
            let prefix = tree.path_texts(node.id).expect("node exists");
            AnnotatedExample {
                x: render_prefix_prompt(&tree.question.text, &prefix),
                y: step_quality(tree, node.id, gold).expect("node exists"),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::AnswerKind;
    use rand::Rng;

    fn question(text: &str, gold: &str) -> Question {
        Question {
            id: "q-tree".into(),
            text: text.into(),
            gold_answer: AnswerKey::parse(AnswerKind::Numeric, gold).unwrap(),
            metadata: Default::default(),
        }
    }

    #[test]
    fn immediate_answers_make_a_three_node_tree() {
        let q = question("2+2?", "4");
        // Breadth-first, Plus before Minus: root's Plus child then Minus.
        let gen = GeneratorBackend::scripted_sequence(["4", "17"]);
        let tree = expand_tree(&gen, &q, &TreeBuildConfig::default(), 1);
        assert_eq!(tree.nodes.len(), 3);
        assert_eq!(tree.nodes[1].parent, Some(0));
        assert_eq!(tree.nodes[1].branch, Some(Branch::Plus));
        assert_eq!(tree.nodes[2].branch, Some(Branch::Minus));
        assert!(tree.nodes[1].is_terminal && tree.nodes[2].is_terminal);
        assert_eq!(tree.nodes[1].depth, 1);
    }

    #[test]
    fn hand_simulated_expansion_yields_five_nodes() {
        let q = question("4+5?", "9");
        // Plus continues with a working step; Minus answers at once; the
        // Plus child's two children both answer. 1 + 2 + 2 nodes.
        let gen = GeneratorBackend::scripted_sequence([
            "<Step 1>4 plus 5 makes 9</Step 1>",
            "8",
            "9",
            "7",
        ]);
        let cfg = TreeBuildConfig { max_depth: 2, ..TreeBuildConfig::default() };
        let tree = expand_tree(&gen, &q, &cfg, 1);
        assert_eq!(tree.nodes.len(), 5);
        assert_eq!(tree.nodes[3].parent, Some(1));
        assert_eq!(tree.nodes[4].parent, Some(1));
        assert_eq!(tree.nodes[3].branch, Some(Branch::Plus));
        assert_eq!(tree.nodes[4].branch, Some(Branch::Minus));
        assert_eq!(tree.nodes[3].depth, 2);
        // Quality: root sees leaves {2:"8", 3:"9", 4:"7"} → 1/3; the
        // internal Plus node sees {“9”, “7”} → 1/2.
        let gold = &q.gold_answer;
        assert_eq!(step_quality_counts(&tree, 0, gold).unwrap(), (1, 3));
        assert_eq!(step_quality_counts(&tree, 1, gold).unwrap(), (1, 2));
        assert_eq!(step_quality(&tree, 2, gold).unwrap(), 0.0);
    }

    #[test]
    fn depth_cap_forces_terminal_children() {
        let q = question("4+5?", "9");
        let gen = GeneratorBackend::scripted_sequence([
            "<Step 1>not an answer yet</Step 1>",
            "<Step 1>still reasoning</Step 1>",
        ]);
        let cfg = TreeBuildConfig { max_depth: 1, ..TreeBuildConfig::default() };
        let tree = expand_tree(&gen, &q, &cfg, 1);
        assert_eq!(tree.nodes.len(), 3);
        assert!(tree.nodes[1..].iter().all(|n| n.is_terminal));
    }

    #[test]
    fn failed_branch_becomes_empty_incorrect_terminal() {
        let q = question("2+2?", "4");
        // Only one scripted response: the Minus generation exhausts the
        // script and collapses to an empty terminal.
        let gen = GeneratorBackend::scripted_sequence(["4"]);
        let tree = expand_tree(&gen, &q, &TreeBuildConfig::default(), 1);
        assert_eq!(tree.nodes.len(), 3);
        assert_eq!(tree.nodes[2].step_text, "");
        assert!(tree.nodes[2].is_terminal);
        assert_eq!(
            step_quality_counts(&tree, 0, &q.gold_answer).unwrap(),
            (1, 2)
        );
    }

    #[test]
    fn expansion_prompts_carry_demonstrations_and_prefix() {
        let q = question("2+2?", "4");
        let demos = Demonstrations { plus: "PLUS DEMO".into(), minus: "MINUS DEMO".into() };
        let gen = GeneratorBackend::scripted_by_prompt([
            ("PLUS DEMO\n\nQ: 2+2?\nA: ", "<Step 1>two and two</Step 1>"),
            ("MINUS DEMO\n\nQ: 2+2?\nA: ", "5"),
            ("PLUS DEMO\n\nQ: 2+2?\nA: <Step 1>two and two</Step 1>", "4"),
            ("MINUS DEMO\n\nQ: 2+2?\nA: <Step 1>two and two</Step 1>", "3"),
        ]);
        let cfg = TreeBuildConfig {
            max_depth: 3,
            demonstrations: demos,
            ..TreeBuildConfig::default()
        };
        let tree = expand_tree(&gen, &q, &cfg, 1);
        assert_eq!(tree.nodes.len(), 5);
        assert_eq!(tree.nodes[1].step_text, "two and two");
        assert_eq!(tree.nodes[3].step_text, "4");
    }

    #[test]
    fn four_leaf_quality_is_three_quarters() {
        let q = question("x?", "42");
        let gen = GeneratorBackend::scripted_sequence([
            "<Step 1>take the left road</Step 1>",
            "<Step 1>take the right road</Step 1>",
            "42",
            "42",
            "42",
            "17",
        ]);
        let cfg = TreeBuildConfig { max_depth: 2, ..TreeBuildConfig::default() };
        let tree = expand_tree(&gen, &q, &cfg, 1);
        assert_eq!(tree.nodes.len(), 7);
        assert_eq!(step_quality(&tree, 0, &q.gold_answer).unwrap(), 0.75);
        // Subtree with both leaves correct.
        assert_eq!(step_quality(&tree, 1, &q.gold_answer).unwrap(), 1.0);
    }

    #[test]
    fn unknown_node_is_rejected() {
        let q = question("x?", "1");
        let gen = GeneratorBackend::scripted_sequence(["1", "2"]);
        let tree = expand_tree(&gen, &q, &TreeBuildConfig::default(), 1);
        assert!(matches!(leaf_set(&tree, 99), Err(Error::UnknownNode(99))));
        assert!(matches!(
            step_quality(&tree, 99, &q.gold_answer),
            Err(Error::UnknownNode(99))
        ));
        assert!(matches!(tree.path_texts(99), Err(Error::UnknownNode(99))));
    }

    /// Random well-formed tree: every node is either a leaf with a random
    /// answer or an internal node with exactly two children.
    fn random_tree(seed: u64, gold: &str) -> AnnotationTree {
        let mut rng = crate::seeding::rng_from(seed);
        let q = question("r?", gold);
        let mut nodes = vec![TreeNode {
            id: 0,
            parent: None,
            branch: None,
            step_text: String::new(),
            depth: 0,
            is_terminal: false,
        }];
        let mut frontier = VecDeque::from([0usize]);
        while let Some(parent) = frontier.pop_front() {
            let depth = nodes[parent].depth + 1;
            for branch in [Branch::Plus, Branch::Minus] {
                let id = nodes.len();
                let terminal = depth >= 4 || rng.gen_bool(0.45);
                let step_text = if terminal {
                    if rng.gen_bool(0.5) { gold.to_string() } else { "-1".into() }
                } else {
                    format!("keep going {id}")
                };
                nodes.push(TreeNode {
                    id,
                    parent: Some(parent),
                    branch: Some(branch),
                    step_text,
                    depth,
                    is_terminal: terminal,
                });
                if !terminal {
                    frontier.push_back(id);
                }
            }
        }
        AnnotationTree { question: q, nodes }
    }

    fn dfs_leaves(tree: &AnnotationTree, m: usize) -> BTreeSet<usize> {
        let kids = tree.children(m);
        if kids.is_empty() {
            return BTreeSet::from([m]);
        }
        kids.into_iter().flat_map(|k| dfs_leaves(tree, k)).collect()
    }

    #[test]
    fn leaf_set_matches_recursive_enumeration() {
        for seed in 0..25 {
            let tree = random_tree(seed, "42");
            for node in &tree.nodes {
                assert_eq!(
                    leaf_set(&tree, node.id).unwrap(),
                    dfs_leaves(&tree, node.id),
                    "seed {seed} node {}",
                    node.id
                );
            }
        }
    }

    #[test]
    fn quality_matches_independent_enumeration_and_conserves_mass() {
        for seed in 0..25 {
            let tree = random_tree(seed, "42");
            let gold = &tree.question.gold_answer;
            for node in &tree.nodes {
                let (correct, total) =
                    step_quality_counts(&tree, node.id, gold).unwrap();
                // Independent oracle: walk the leaves directly.
                let expect = dfs_leaves(&tree, node.id)
                    .into_iter()
                    .filter(|&l| tree.nodes[l].step_text == "42")
                    .count();
                assert_eq!(correct, expect);

                let kids = tree.children(node.id);
                if !kids.is_empty() {
                    // Counts add exactly across the two children.
                    let (lc, lt) =
                        step_quality_counts(&tree, kids[0], gold).unwrap();
                    let (rc, rt) =
                        step_quality_counts(&tree, kids[1], gold).unwrap();
                    assert_eq!(total, lt + rt);
                    assert_eq!(correct, lc + rc);
                }
            }
        }
    }

    #[test]
    fn emitted_dataset_covers_non_root_nodes_in_order() {
        let q = question("4+5?", "9");
        let gen = GeneratorBackend::scripted_sequence([
            "<Step 1>4 plus 5 makes 9</Step 1>",
            "8",
            "9",
            "7",
        ]);
        let cfg = TreeBuildConfig { max_depth: 2, ..TreeBuildConfig::default() };
        let tree = expand_tree(&gen, &q, &cfg, 1);
        let data = emit_dataset(&tree);
        assert_eq!(data.len(), tree.nodes.len() - 1);
        assert_eq!(data[0].x, "Q: 4+5?\nA: <Step 1>4 plus 5 makes 9</Step 1>");
        assert_eq!(data[0].y, 0.5);
        assert_eq!(data[1].x, "Q: 4+5?\nA: <Step 1>8</Step 1>");
        assert_eq!(data[1].y, 0.0);
        assert_eq!(
            data[2].x,
            "Q: 4+5?\nA: <Step 1>4 plus 5 makes 9</Step 1>\n<Step 2>9</Step 2>"
        );
        assert_eq!(data[2].y, 1.0);
        // Terminal nodes grade exactly 0 or 1; everything stays in [0,1].
        for (node, ex) in tree.nodes[1..].iter().zip(&data) {
            assert!((0.0..=1.0).contains(&ex.y));
            if node.is_terminal {
                assert!(ex.y == 0.0 || ex.y == 1.0);
            }
        }
    }

    #[test]
    fn simulated_backend_reproduces_identical_datasets() {
        let task = crate::simenv::synthesize_task(3, 4).unwrap();
        let sim_cfg = crate::simenv::SimConfig {
            epsilon: 0.25,
            rho: 1.0,
            ..crate::simenv::SimConfig::default()
        };
        let gen = GeneratorBackend::Simulated(
            crate::simenv::SimulatedGenerator::new(sim_cfg, [task.clone()]),
        );
        let cfg = TreeBuildConfig { max_depth: 5, ..TreeBuildConfig::default() };
        let a = expand_tree(&gen, &task.question, &cfg, 9);
        let b = expand_tree(&gen, &task.question, &cfg, 9);
        assert_eq!(a, b);
        let da = serde_json::to_string(&emit_dataset(&a)).unwrap();
        let db = serde_json::to_string(&emit_dataset(&b)).unwrap();
        assert_eq!(da, db);
        // Structural sanity: internal nodes have exactly two children, and
        // nothing exceeds the depth cap.
        for node in &a.nodes {
            let kids = a.children(node.id);
            assert!(kids.len() == 2 || kids.is_empty());
            if node.id > 0 && !node.is_terminal {
                assert_eq!(kids.len(), 2);
            }
            assert!(node.depth <= 5);
        }
        // A different seed changes at least something about the tree.
        let c = expand_tree(&gen, &task.question, &cfg, 10);
        assert_ne!(a, c);
    }
}
