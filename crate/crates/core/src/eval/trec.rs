//! TREC run files: `qid Q0 pid rank score tag`, one passage per line.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ranked::{RankedEntry, RankedList};

/// Renders runs grouped by qid in map order. Scores use the shortest
/// representation that parses back to the same `f64`.
pub fn format_run(runs: &BTreeMap<String, RankedList>) -> String {
    let mut out = String::new();
    for (qid, list) in runs {
        let tag = if list.tag.is_empty() { "run" } else { list.tag.as_str() };
        for (i, e) in list.entries().iter().enumerate() {
            writeln!(out, "{qid} Q0 {} {} {} {tag}", e.pid, i + 1, e.score).unwrap();
        }
    }
    out
}

pub fn write_run(path: impl AsRef<Path>, runs: &BTreeMap<String, RankedList>) -> Result<()> {
    let path = path.as_ref();
    for (qid, list) in runs {
        let bad = |s: &str| s.is_empty() || s.chars().any(char::is_whitespace);
        if bad(qid) || list.ids().any(bad) || list.tag.chars().any(char::is_whitespace) {
            return Err(Error::invalid(format!(
                "run for {qid:?} has ids or tag unusable in a TREC file"
            )));
        }
    }
    fs::write(path, format_run(runs)).map_err(|e| Error::io(path, e))
}

pub fn parse_run(path: &Path, text: &str) -> Result<BTreeMap<String, RankedList>> {
    let mut runs: BTreeMap<String, RankedList> = BTreeMap::new();
    let mut current: Option<(String, String, Vec<RankedEntry>)> = None;
    let finish = |runs: &mut BTreeMap<String, RankedList>, cur: Option<(String, String, Vec<RankedEntry>)>| {
        if let Some((qid, tag, entries)) = cur {
            runs.insert(qid.clone(), RankedList::from_sorted(qid, tag, entries));
        }
    };
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let err = |m: String| Error::parse(path, line_no, m);
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [qid, q0, pid, rank, score, tag] = fields[..] else {
            return Err(err(format!("expected 6 fields, found {}", fields.len())));
        };
        if q0 != "Q0" {
            return Err(err(format!("second field must be Q0, found {q0:?}")));
        }
        let rank: usize = rank.parse().map_err(|_| err(format!("bad rank {rank:?}")))?;
        let score: f64 = score.parse().map_err(|_| err(format!("bad score {score:?}")))?;
        if !score.is_finite() {
            return Err(err("score must be finite".into()));
        }
        let same = current.as_ref().is_some_and(|(q, _, _)| q == qid);
        if !same {
            if runs.contains_key(qid) {
                return Err(err(format!("lines for {qid} are not contiguous")));
            }
            finish(&mut runs, current.take());
            current = Some((qid.to_owned(), tag.to_owned(), Vec::new()));
        }
        let (_, _, entries) = current.as_mut().unwrap();
        if rank != entries.len() + 1 {
            return Err(err(format!(
                "expected rank {} for {qid}, found {rank}",
                entries.len() + 1
            )));
        }
        if entries.iter().any(|e| e.pid == pid) {
            return Err(err(format!("passage {pid} repeated for {qid}")));
        }
        if entries.last().is_some_and(|e| score > e.score) {
            return Err(err(format!("score increases at rank {rank} for {qid}")));
        }
        entries.push(RankedEntry {
            pid: pid.to_owned(),
            score,
        });
    }
    finish(&mut runs, current);
    Ok(runs)
}

pub fn read_run(path: impl AsRef<Path>) -> Result<BTreeMap<String, RankedList>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_run(path, &text)
}
