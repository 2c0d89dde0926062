//! Dataset ingestion: one JSON object per line, UTF-8, schema
//! `{"id", "question", "answer", "answer_kind", "metadata": {...}}`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::path::{AnswerKey, AnswerKind, Question};

#[derive(Deserialize)]
struct RawQuestion {
    id: String,
    question: String,
    answer: String,
    answer_kind: AnswerKind,
    #[serde(default)]
    metadata: BTreeMap<String, serde_json::Value>,
}

/// Parse a JSONL string into questions. Gold answers are normalized at load
/// time; blank lines are skipped; ids must be unique.
pub fn parse_questions_jsonl(text: &str) -> Result<Vec<Question>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawQuestion = serde_json::from_str(line).map_err(|e| {
            Error::DatasetUnreadable(format!("line {}: {e}", lineno + 1))
        })?;
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DatasetUnreadable(format!(
                "line {}: duplicate question id {:?}",
                lineno + 1,
                raw.id
            )));
        }
        let gold_answer =
            AnswerKey::parse(raw.answer_kind, &raw.answer).map_err(|e| {
                Error::DatasetUnreadable(format!(
                    "line {}: gold answer for {:?}: {e}",
                    lineno + 1,
                    raw.id
                ))
            })?;
        let metadata = raw
            .metadata
            .into_iter()
            .map(|(k, v)| {
                let s = match v {
                    serde_json::Value::String(s) => s,
                    other => other.to_string(),
                };
                (k, s)
            })
            .collect();
        out.push(Question { id: raw.id, text: raw.question, gold_answer, metadata });
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

/// Read and parse a JSONL dataset file.
pub fn load_questions_jsonl(path: &Path) -> Result<Vec<Question>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::DatasetUnreadable(format!("{}: {e}", path.display())))?;
    parse_questions_jsonl(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_schema() {
        let text = concat!(
            r#"{"id":"q1","question":"2+2?","answer":"4","answer_kind":"numeric","metadata":{"difficulty":"easy","level":3}}"#,
            "\n",
            r#"{"id":"q2","question":"pick","answer":"B","answer_kind":"option"}"#,
            "\n\n",
            r#"{"id":"q3","question":"who?","answer":"The Eiffel Tower","answer_kind":"text"}"#,
            "\n",
        );
        let qs = parse_questions_jsonl(text).unwrap();
        assert_eq!(qs.len(), 3);
        assert_eq!(qs[0].gold_answer.numeric_value, Some(4.0));
        assert_eq!(qs[0].metadata["difficulty"], "easy");
        assert_eq!(qs[0].metadata["level"], "3");
        assert_eq!(qs[1].gold_answer.value, "B");
        assert_eq!(qs[2].gold_answer.value, "eiffel tower");
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        let dup = concat!(
            r#"{"id":"q1","question":"a","answer":"1","answer_kind":"numeric"}"#,
            "\n",
            r#"{"id":"q1","question":"b","answer":"2","answer_kind":"numeric"}"#,
        );
        assert!(matches!(
            parse_questions_jsonl(dup),
            Err(Error::DatasetUnreadable(_))
        ));
        assert!(matches!(
            parse_questions_jsonl("not json"),
            Err(Error::DatasetUnreadable(_))
        ));
        assert!(matches!(parse_questions_jsonl(""), Err(Error::EmptyDataset)));
    }
}
