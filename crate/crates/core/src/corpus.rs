//! Passages, questions and the answer-containment predicate.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;
use crate::text::normalize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub id: String,
    #[serde(default)]
    pub title: String,
    pub text: String,
}

/// A question with its acceptable answer strings.
///
/// `answers` may be empty for unlabeled questions; anything that needs
/// ground truth checks [`QAExample::has_answers`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAExample {
    pub qid: String,
    pub question: String,
    #[serde(default)]
    pub answers: Vec<String>,
}

impl QAExample {
    pub fn has_answers(&self) -> bool {
        !self.answers.is_empty()
    }
}

/// Immutable passage collection with id lookup and cached answer-matching tokens.
#[derive(Debug, Clone, Default)]
pub struct PassageStore {
    passages: Vec<Passage>,
    by_id: HashMap<String, usize>,
    tokens: Vec<Vec<String>>,
}

impl PassageStore {
    pub fn new(passages: Vec<Passage>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(passages.len());
        for (i, p) in passages.iter().enumerate() {
            if p.id.is_empty() {
                return Err(Error::invalid(format!("passage #{} has an empty id", i + 1)));
            }
            if p.text.trim().is_empty() {
                return Err(Error::invalid(format!("passage {} has empty text", p.id)));
            }
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(p.id.clone()));
            }
        }
        let tokens = passages.iter().map(|p| normalize(&p.text).tokens).collect();
        Ok(PassageStore {
            passages,
            by_id,
            tokens,
        })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn get(&self, id: &str) -> Option<&Passage> {
        self.by_id.get(id).map(|&i| &self.passages[i])
    }

    pub fn require(&self, id: &str) -> Result<&Passage> {
        self.get(id).ok_or_else(|| Error::UnknownPassage(id.to_owned()))
    }

    /// Answer check against the cached normalized text of passage `id`.
    /// Unknown ids never contain an answer.
    pub fn contains_answer(&self, id: &str, answers: &AnswerMatcher) -> bool {
        self.by_id.get(id).is_some_and(|&i| answers.matches(&self.tokens[i]))
    }
}

/// Reads a JSONL corpus of `{id, title, text}` objects.
pub fn load_corpus(path: impl AsRef<Path>) -> Result<PassageStore> {
    let path = path.as_ref();
    let rows: Vec<(usize, Passage)> = jsonl::read(path)?;
    let mut seen = HashSet::with_capacity(rows.len());
    for (line, p) in &rows {
        if !seen.insert(p.id.as_str()) {
            return Err(Error::DuplicateId(p.id.clone()));
        }
        if p.id.is_empty() || p.text.trim().is_empty() {
            return Err(Error::parse(path, *line, "passage needs a nonempty id and text"));
        }
    }
    PassageStore::new(rows.into_iter().map(|(_, p)| p).collect())
}

pub fn write_corpus(path: impl AsRef<Path>, passages: &[Passage]) -> Result<()> {
    jsonl::write(path.as_ref(), passages)
}

/// Reads `{qid, question, answers}` rows. With `require_answers` every row
/// must carry at least one answer.
pub fn load_questions(path: impl AsRef<Path>, require_answers: bool) -> Result<Vec<QAExample>> {
    let path = path.as_ref();
    let rows: Vec<(usize, QAExample)> = jsonl::read(path)?;
    let mut seen = HashSet::with_capacity(rows.len());
    let mut out = Vec::with_capacity(rows.len());
    for (line, q) in rows {
        if q.qid.is_empty() || q.question.trim().is_empty() {
            return Err(Error::parse(path, line, "question needs a nonempty qid and text"));
        }
        if require_answers && !q.has_answers() {
            return Err(Error::parse(path, line, format!("question {} has no answers", q.qid)));
        }
        if !seen.insert(q.qid.clone()) {
            return Err(Error::DuplicateId(q.qid));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn write_questions(path: impl AsRef<Path>, questions: &[QAExample]) -> Result<()> {
    jsonl::write(path.as_ref(), questions)
}

/// Pre-normalized answer token sequences for repeated containment checks.
#[derive(Debug, Clone)]
pub struct AnswerMatcher {
    answers: Vec<Vec<String>>,
}

impl AnswerMatcher {
    pub fn new<S: AsRef<str>>(answers: &[S]) -> Self {
        AnswerMatcher {
            answers: answers
                .iter()
                .map(|a| normalize(a.as_ref()).tokens)
                .filter(|t| !t.is_empty())
                .collect(),
        }
    }

    pub fn matches(&self, passage_tokens: &[String]) -> bool {
        self.answers
            .iter()
            .any(|a| passage_tokens.windows(a.len()).any(|w| w == a.as_slice()))
    }
}

/// True iff some answer's normalized token sequence occurs contiguously in
/// the passage's normalized text.
pub fn contains_answer<S: AsRef<str>>(passage: &Passage, answers: &[S]) -> bool {
    AnswerMatcher::new(answers).matches(&normalize(&passage.text).tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn passage(text: &str) -> Passage {
        Passage {
            id: "p".into(),
            title: String::new(),
            text: text.into(),
        }
    }

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn loads_well_formed_corpus() {
        let f = write_lines(&[
            r#"{"id":"P1","title":"A","text":"alpha"}"#,
            r#"{"id":"P2","title":"","text":"beta"}"#,
            r#"{"id":"P3","title":"C","text":"gamma"}"#,
        ]);
        let store = load_corpus(f.path()).unwrap();
        assert_eq!(store.len(), 3);
        assert_eq!(store.get("P2").unwrap().text, "beta");
    }

    #[test]
    fn duplicate_id_is_named() {
        let f = write_lines(&[
            r#"{"id":"P1","title":"","text":"a"}"#,
            r#"{"id":"P2","title":"","text":"b"}"#,
            r#"{"id":"P3","title":"","text":"c"}"#,
            r#"{"id":"P1","title":"","text":"d"}"#,
        ]);
        let err = load_corpus(f.path()).unwrap_err();
        assert_eq!(err.to_string(), "duplicate id P1");
    }

    #[test]
    fn empty_file_is_empty_store() {
        let f = write_lines(&[]);
        assert!(load_corpus(f.path()).unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let f = write_lines(&[r#"{"id":"P1","text":"a"}"#, "{not json"]);
        match load_corpus(f.path()).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn questions_require_answers_when_asked() {
        let f = write_lines(&[r#"{"qid":"q1","question":"who?"}"#]);
        assert!(load_questions(f.path(), true).is_err());
        let qs = load_questions(f.path(), false).unwrap();
        assert!(!qs[0].has_answers());
    }

    #[test]
    fn answer_containment_cases() {
        let p = passage("Deadpool 2 was released in the United States on May 18, 2018.");
        assert!(contains_answer(&p, &["May 18, 2018"]));
        assert!(contains_answer(&passage("abc"), &["abc"]));
        assert!(!contains_answer(&passage("the answer is forty-two"), &["42"]));
        assert!(!contains_answer(&passage("may 2018 18"), &["May 18, 2018"]));
    }

    fn brute_force(passage: &str, answer: &str) -> bool {
        let p = normalize(passage).tokens;
        let a = normalize(answer).tokens;
        if a.is_empty() {
            return false;
        }
        (0..p.len()).any(|start| start + a.len() <= p.len() && (0..a.len()).all(|k| p[start + k] == a[k]))
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            words in proptest::collection::vec("[a-c]{1,2}", 0..12),
            answer in proptest::collection::vec("[a-c]{1,2}", 1..3),
        ) {
            let text = words.join(" ");
            let ans = answer.join(" ");
            prop_assert_eq!(contains_answer(&passage(&text), &[&ans]), brute_force(&text, &ans));
        }

        #[test]
        fn order_and_case_invariant(
            words in proptest::collection::vec("[a-cA-C]{1,2}", 1..10),
            a in "[a-cA-C]{1,2}",
            b in "[a-cA-C]{1,2}",
        ) {
            let text = words.join(" ");
            let p = passage(&text);
            let forward = contains_answer(&p, &[&a, &b]);
            prop_assert_eq!(forward, contains_answer(&p, &[&b, &a]));
            prop_assert_eq!(forward, contains_answer(&passage(&text.to_uppercase()), &[a.to_lowercase(), b.to_lowercase()]));
        }
    }
}
