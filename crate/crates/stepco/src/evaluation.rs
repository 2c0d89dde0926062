//! Metrics over completed runs: exact match, token-bag F1, answer-transition
//! analysis, sliced reports, and token-efficiency aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::correction::{RunResult, TokenLedger};
use crate::error::{Error, Result};
use crate::path::{answers_equal, AnswerKey, AnswerKind};

/// True when `pred` equals any entry of `golds` under semantic equality.
pub fn exact_match(pred: &AnswerKey, golds: &[AnswerKey]) -> Result<bool> {
    for gold in golds {
        if answers_equal(pred, gold)? {
            return Ok(true);
        }
    }
    Ok(false)
}

fn token_counts(value: &str) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for token in value.split_whitespace() {
        *counts.entry(token).or_insert(0) += 1;
    }
    counts
}

/// Bag-of-tokens F1 over the normalized text values. Both bags empty → 1.0;
/// exactly one empty → 0.0.
pub fn f1_score(pred: &AnswerKey, gold: &AnswerKey) -> Result<f64> {
    if pred.kind != AnswerKind::Text || gold.kind != AnswerKind::Text {
        return Err(Error::KindMismatch { left: pred.kind, right: gold.kind });
    }
    let p = token_counts(&pred.value);
    let g = token_counts(&gold.value);
    let p_total: usize = p.values().sum();
    let g_total: usize = g.values().sum();
    if p_total == 0 && g_total == 0 {
        return Ok(1.0);
    }
    if p_total == 0 || g_total == 0 {
        return Ok(0.0);
    }
    let overlap: usize = p
        .iter()
        .map(|(token, &count)| count.min(*g.get(token).unwrap_or(&0)))
        .sum();
    if overlap == 0 {
        return Ok(0.0);
    }
    let precision = overlap as f64 / p_total as f64;
    let recall = overlap as f64 / g_total as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Proportions of the four answer transitions across a run batch:
/// correct→correct, incorrect→correct, correct→incorrect,
/// incorrect→incorrect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    pub cc: f64,
    pub ic: f64,
    pub ci: f64,
    pub ii: f64,
}

impl TransitionMatrix {
    /// Accuracy after revision — everything that ends correct.
    pub fn final_accuracy(&self) -> f64 {
        self.cc + self.ic
    }

    /// Accuracy before revision — everything that starts correct.
    pub fn initial_accuracy(&self) -> f64 {
        self.cc + self.ci
    }
}

fn is_correct(pred: &Option<AnswerKey>, gold: &AnswerKey) -> Result<bool> {
    match pred {
        Some(p) => answers_equal(p, gold),
        None => Ok(false),
    }
}

/// Classify each question by (initial correct?, final correct?). A missing
/// answer counts as incorrect.
pub fn transition_matrix(
    initial: &[Option<AnswerKey>],
    revised: &[Option<AnswerKey>],
    golds: &[AnswerKey],
) -> Result<TransitionMatrix> {
    if initial.len() != golds.len() {
        return Err(Error::LengthMismatch { left: initial.len(), right: golds.len() });
    }
    if revised.len() != golds.len() {
        return Err(Error::LengthMismatch { left: revised.len(), right: golds.len() });
    }
    if golds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut counts = [0usize; 4];
    for ((i, r), gold) in initial.iter().zip(revised).zip(golds) {
        let before = is_correct(i, gold)?;
        let after = is_correct(r, gold)?;
        let slot = match (before, after) {
            (true, true) => 0,
            (false, true) => 1,
            (true, false) => 2,
            (false, false) => 3,
        };
        counts[slot] += 1;
    }
    let n = golds.len() as f64;
    Ok(TransitionMatrix {
        cc: counts[0] as f64 / n,
        ic: counts[1] as f64 / n,
        ci: counts[2] as f64 / n,
        ii: counts[3] as f64 / n,
    })
}

/// One scored question, ready for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub pred: Option<AnswerKey>,
    pub golds: Vec<AnswerKey>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

/// Accuracy (always), EM/F1 (text answers only), and optional per-slice
/// breakdowns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub accuracy: f64,
    pub em: Option<f64>,
    pub f1: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub slices: BTreeMap<String, MetricReport>,
}

fn report_flat(rows: &[&EvalRow]) -> Result<MetricReport> {
    if rows.is_empty() {
        return Err(Error::EmptyInput);
    }
    let text_only = rows
        .iter()
        .all(|r| r.golds.iter().all(|g| g.kind == AnswerKind::Text));
    let mut correct = 0usize;
    let mut f1_sum = 0.0;
    for row in rows {
        let hit = match &row.pred {
            Some(p) => exact_match(p, &row.golds)?,
            None => false,
        };
        correct += hit as usize;
        if text_only {
            if let Some(p) = &row.pred {
                let mut best: f64 = 0.0;
                for gold in &row.golds {
                    best = best.max(f1_score(p, gold)?);
                }
                f1_sum += best;
            }
        }
    }
    let n = rows.len();
    let accuracy = correct as f64 / n as f64;
    Ok(MetricReport {
        n,
        accuracy,
        em: text_only.then_some(accuracy),
        f1: text_only.then_some(f1_sum / n as f64),
        slices: BTreeMap::new(),
    })
}

/// Overall metrics, optionally broken down by a metadata key. Rows missing
/// the key land in an `"unspecified"` slice.
pub fn metric_report(rows: &[EvalRow], slice_by: Option<&str>) -> Result<MetricReport> {
    let mut report = report_flat(&rows.iter().collect::<Vec<_>>())?;
    if let Some(key) = slice_by {
        let mut groups: BTreeMap<&str, Vec<&EvalRow>> = BTreeMap::new();
        for row in rows {
            let slice = row.metadata.get(key).map_or("unspecified", |s| s.as_str());
            groups.entry(slice).or_default().push(row);
        }
        for (slice, members) in groups {
            report.slices.insert(slice.to_string(), report_flat(&members)?);
        }
    }
    Ok(report)
}

/// Aggregate token usage of a run batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub total_prompt: u64,
    pub total_completion: u64,
    pub total: u64,
    pub mean_per_question: f64,
    pub generator_calls: u64,
    pub scorer_calls: u64,
    /// 1 − ours/baseline, when a baseline aggregate is supplied.
    pub reduction_vs_baseline: Option<f64>,
}

impl TokenStats {
    pub fn from_ledgers(
        ledgers: &[TokenLedger],
        baseline: Option<&TokenStats>,
    ) -> Result<TokenStats> {
        if ledgers.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut sum = TokenLedger::default();
        for ledger in ledgers {
            sum += *ledger;
        }
        let total = sum.total_tokens();
        Ok(TokenStats {
            total_prompt: sum.prompt_tokens,
            total_completion: sum.completion_tokens,
            total,
            mean_per_question: total as f64 / ledgers.len() as f64,
            generator_calls: sum.generator_calls,
            scorer_calls: sum.scorer_calls,
            reduction_vs_baseline: baseline
                .map(|b| 1.0 - total as f64 / b.total as f64),
        })
    }
}

/// Token aggregate over completed runs, with the optional baseline ratio.
pub fn aggregate_tokens(
    runs: &[RunResult],
    baseline: Option<&TokenStats>,
) -> Result<TokenStats> {
    let ledgers: Vec<TokenLedger> = runs.iter().map(|r| r.total_tokens).collect();
    TokenStats::from_ledgers(&ledgers, baseline)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn text(s: &str) -> AnswerKey {
        AnswerKey::parse(AnswerKind::Text, s).unwrap()
    }

    fn num(s: &str) -> AnswerKey {
        AnswerKey::parse(AnswerKind::Numeric, s).unwrap()
    }

    #[test]
    fn exact_match_normalizes_and_scans_the_list() {
        assert!(exact_match(&text("Barack Obama"), &[text("barack obama")]).unwrap());
        assert!(!exact_match(&text("Obama"), &[text("Barack Obama")]).unwrap());
        assert!(exact_match(&num("29"), &[num("29")]).unwrap());
        assert!(exact_match(
            &text("obama"),
            &[text("bush"), text("the Obama")]
        )
        .unwrap());
        assert!(matches!(
            exact_match(&num("1"), &[text("one")]),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn f1_handles_articles_subsets_and_bags() {
        assert_eq!(f1_score(&text("the cat sat"), &text("cat sat")).unwrap(), 1.0);
        let partial = f1_score(&text("cat"), &text("cat sat")).unwrap();
        assert!((partial - 2.0 / 3.0).abs() < 1e-12);
        // Duplicate tokens intersect as a bag: min-counts, not set members.
        let bag = f1_score(&text("x x y"), &text("x y y")).unwrap();
        assert!((bag - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1_score(&text("dog"), &text("cat")).unwrap(), 0.0);
        // Keys deserialized from stored reports may carry empty values.
        let empty = AnswerKey {
            kind: AnswerKind::Text,
            value: String::new(),
            numeric_value: None,
        };
        assert_eq!(f1_score(&empty, &empty).unwrap(), 1.0);
        assert_eq!(f1_score(&text("cat"), &empty).unwrap(), 0.0);
        assert!(matches!(
            f1_score(&num("1"), &num("1")),
            Err(Error::KindMismatch { .. })
        ));
    }

    #[test]
    fn f1_matches_bag_overlap_oracle_and_is_symmetric() {
        let vocab = ["red", "blue", "dog", "cat", "sun"];
        let mut rng = crate::seeding::rng_from(42);
        for _ in 0..1000 {
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                let len = rng.gen_range(0..6);
                (0..len)
                    .map(|_| vocab[rng.gen_range(0..vocab.len())])
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            // Direct construction: draws are already normalized tokens and
            // may legitimately be empty.
            let make = |s: String| AnswerKey {
                kind: AnswerKind::Text,
                value: s,
                numeric_value: None,
            };
            let a = make(draw(&mut rng));
            let b = make(draw(&mut rng));

            // Independent oracle: count-min intersection computed directly.
            let ta: Vec<&str> = a.value.split_whitespace().collect();
            let tb: Vec<&str> = b.value.split_whitespace().collect();
            let expect = if ta.is_empty() && tb.is_empty() {
                1.0
            } else if ta.is_empty() || tb.is_empty() {
                0.0
            } else {
                let mut overlap = 0usize;
                let mut used = vec![false; tb.len()];
                for token in &ta {
                    if let Some(j) =
                        tb.iter().enumerate().position(|(j, t)| t == token && !used[j])
                    {
                        used[j] = true;
                        overlap += 1;
                    }
                }
                if overlap == 0 {
                    0.0
                } else {
                    let p = overlap as f64 / ta.len() as f64;
                    let r = overlap as f64 / tb.len() as f64;
                    2.0 * p * r / (p + r)
                }
            };
            let got = f1_score(&a, &b).unwrap();
            assert!((got - expect).abs() < 1e-12, "{:?} vs {:?}", a.value, b.value);
            let flipped = f1_score(&b, &a).unwrap();
            assert!((got - flipped).abs() < 1e-12, "f1 must be symmetric");
            if exact_match(&a, &[b.clone()]).unwrap() {
                assert_eq!(got, 1.0, "EM implies F1=1");
            }
        }
    }

    #[test]
    fn transition_matrix_counts_all_four_cells() {
        let golds = vec![num("1"), num("2"), num("3"), num("4")];
        let initial = vec![
            Some(num("1")),  // correct → stays correct
            Some(num("0")),  // incorrect → fixed
            Some(num("0")),  // incorrect → stays incorrect
            Some(num("4")),  // correct → broken
        ];
        let revised = vec![
            Some(num("1")),
            Some(num("2")),
            Some(num("9")),
            Some(num("0")),
        ];
        let m = transition_matrix(&initial, &revised, &golds).unwrap();
        assert_eq!(m.cc, 0.25);
        assert_eq!(m.ic, 0.25);
        assert_eq!(m.ci, 0.25);
        assert_eq!(m.ii, 0.25);
        assert!((m.cc + m.ic + m.ci + m.ii - 1.0).abs() < 1e-12);
        assert_eq!(m.final_accuracy(), 0.5);
        assert_eq!(m.initial_accuracy(), 0.5);
    }

    #[test]
    fn unchanged_answers_produce_no_cross_terms() {
        let golds = vec![num("1"), num("2"), num("3")];
        let same = vec![Some(num("1")), Some(num("5")), None];
        let m = transition_matrix(&same, &same, &golds).unwrap();
        assert_eq!(m.ic, 0.0);
        assert_eq!(m.ci, 0.0);
        assert!((m.cc - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn transition_matrix_validates_shapes() {
        let golds = vec![num("1")];
        assert!(matches!(
            transition_matrix(&[], &[Some(num("1"))], &golds),
            Err(Error::LengthMismatch { left: 0, right: 1 })
        ));
        assert!(matches!(
            transition_matrix(&[Some(num("1"))], &[], &golds),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            transition_matrix(&[], &[], &[]),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn transition_proportions_always_sum_to_one() {
        let mut rng = crate::seeding::rng_from(7);
        for _ in 0..100 {
            let n = rng.gen_range(1..40);
            let golds: Vec<AnswerKey> =
                (0..n).map(|i| num(&i.to_string())).collect();
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                (0..n)
                    .map(|i| {
                        if rng.gen_bool(0.2) {
                            None
                        } else if rng.gen_bool(0.5) {
                            Some(num(&i.to_string()))
                        } else {
                            Some(num("-999"))
                        }
                    })
                    .collect::<Vec<_>>()
            };
            let initial = draw(&mut rng);
            let revised = draw(&mut rng);
            let m = transition_matrix(&initial, &revised, &golds).unwrap();
            assert!((m.cc + m.ic + m.ci + m.ii - 1.0).abs() < 1e-12);
            // Identity: final accuracy is exactly the fraction of revised
            // answers that match gold.
            let direct = revised
                .iter()
                .zip(&golds)
                .filter(|(r, g)| is_correct(r, g).unwrap())
                .count() as f64
                / n as f64;
            assert!((m.final_accuracy() - direct).abs() < 1e-12);
        }
    }

    fn row(pred: Option<AnswerKey>, gold: AnswerKey, subject: &str) -> EvalRow {
        let mut metadata = BTreeMap::new();
        if !subject.is_empty() {
            metadata.insert("subject".to_string(), subject.to_string());
        }
        EvalRow { pred, golds: vec![gold], metadata }
    }

    #[test]
    fn report_slices_partition_and_recombine() {
        let rows = vec![
            row(Some(num("1")), num("1"), "algebra"),
            row(Some(num("9")), num("2"), "algebra"),
            row(Some(num("3")), num("3"), "geometry"),
            row(None, num("4"), ""),
        ];
        let report = metric_report(&rows, Some("subject")).unwrap();
        assert_eq!(report.n, 4);
        assert_eq!(report.accuracy, 0.5);
        assert!(report.em.is_none(), "numeric answers carry no EM/F1");
        assert!(report.f1.is_none());
        assert_eq!(report.slices.len(), 3);
        assert_eq!(report.slices["algebra"].n, 2);
        assert_eq!(report.slices["algebra"].accuracy, 0.5);
        assert_eq!(report.slices["geometry"].accuracy, 1.0);
        assert_eq!(report.slices["unspecified"].n, 1);
        assert_eq!(report.slices["unspecified"].accuracy, 0.0);
        // Slice sizes partition n and recombine to the overall accuracy.
        let total: usize = report.slices.values().map(|s| s.n).sum();
        assert_eq!(total, report.n);
        let weighted: f64 = report
            .slices
            .values()
            .map(|s| s.accuracy * s.n as f64)
            .sum::<f64>()
            / report.n as f64;
        assert!((weighted - report.accuracy).abs() < 1e-12);
    }

    #[test]
    fn text_reports_include_em_and_f1() {
        let rows = vec![
            row(Some(text("the cat sat")), text("cat sat"), ""),
            row(Some(text("dog")), text("cat sat"), ""),
            row(None, text("bird"), ""),
        ];
        let report = metric_report(&rows, None).unwrap();
        assert_eq!(report.n, 3);
        assert!((report.accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.em, Some(report.accuracy));
        assert!((report.f1.unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!(report.slices.is_empty());
        assert!(matches!(metric_report(&[], None), Err(Error::EmptyInput)));
    }

    fn ledger(prompt: u64, completion: u64) -> TokenLedger {
        TokenLedger {
            prompt_tokens: prompt,
            completion_tokens: completion,
            scorer_calls: 1,
            generator_calls: 1,
        }
    }

    #[test]
    fn token_totals_mean_and_reduction() {
        let stats =
            TokenStats::from_ledgers(&[ledger(60, 40), ledger(150, 50)], None)
                .unwrap();
        assert_eq!(stats.total, 300);
        assert_eq!(stats.mean_per_question, 150.0);
        assert_eq!(stats.total_prompt, 210);
        assert_eq!(stats.generator_calls, 2);
        assert!(stats.reduction_vs_baseline.is_none());

        let baseline =
            TokenStats::from_ledgers(&[ledger(600, 400)], None).unwrap();
        let ours =
            TokenStats::from_ledgers(&[ledger(122, 100)], Some(&baseline)).unwrap();
        assert!((ours.reduction_vs_baseline.unwrap() - 0.778).abs() < 1e-12);
        assert!(matches!(
            TokenStats::from_ledgers(&[], None),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn aggregation_matches_a_direct_sum() {
        let mut rng = crate::seeding::rng_from(11);
        let ledgers: Vec<TokenLedger> = (0..50)
            .map(|_| ledger(rng.gen_range(0..500), rng.gen_range(0..500)))
            .collect();
        let stats = TokenStats::from_ledgers(&ledgers, None).unwrap();
        let expect: u64 = ledgers
            .iter()
            .map(|l| l.prompt_tokens + l.completion_tokens)
            .sum();
        assert_eq!(stats.total, expect);
        assert!(
            (stats.mean_per_question - expect as f64 / 50.0).abs() < 1e-9
        );
    }
}
