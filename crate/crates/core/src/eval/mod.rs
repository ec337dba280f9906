//! Top-k accuracy, candidate-size ablation, latency and run files.

mod bench;
mod trec;

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use bench::{bench_latency, LatencyReport};
pub use trec::{format_run, parse_run, read_run, write_run};

use crate::corpus::{AnswerMatcher, PassageStore, QAExample};
use crate::error::{Error, Result};
use crate::pipeline::{run_dataset, RunContext, StrategySpec};
use crate::ranked::RankedList;

pub const DEFAULT_KS: [usize; 4] = [1, 5, 20, 100];

/// 1-based rank of the first passage containing an answer.
pub fn min_answer_rank(list: &RankedList, store: &PassageStore, answers: &AnswerMatcher) -> Option<usize> {
    list.ids()
        .position(|pid| store.contains_answer(pid, answers))
        .map(|p| p + 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub tag: String,
    pub questions: usize,
    pub ks: Vec<usize>,
    /// Questions with an answer within the top k.
    pub hits: BTreeMap<usize, usize>,
    pub accuracy: BTreeMap<usize, f64>,
}

impl AccuracyReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.accuracy.get(&k).copied()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Share of `qa` whose run has an answer passage within the top k, for
/// each k. Questions without a run count as misses.
pub fn topk_accuracy(
    runs: &BTreeMap<String, RankedList>,
    qa: &[QAExample],
    store: &PassageStore,
    ks: &[usize],
    tag: &str,
) -> Result<AccuracyReport> {
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] == 0 {
        return Err(Error::invalid("ks must be non-empty and positive"));
    }
    let by_qid: HashMap<&str, &QAExample> = qa.iter().map(|q| (q.qid.as_str(), q)).collect();
    if let Some(qid) = runs.keys().find(|q| !by_qid.contains_key(q.as_str())) {
        return Err(Error::invalid(format!(
            "run has question {qid} that is not in the question set"
        )));
    }
    let mut hits: BTreeMap<usize, usize> = ks.iter().map(|&k| (k, 0)).collect();
    for q in qa {
        if !q.has_answers() {
            return Err(Error::MissingAnswers(q.qid.clone()));
        }
        let Some(list) = runs.get(&q.qid) else { continue };
        if let Some(rank) = min_answer_rank(list, store, &AnswerMatcher::new(&q.answers)) {
            for (&k, h) in hits.iter_mut() {
                if rank <= k {
                    *h += 1;
                }
            }
        }
    }
    let n = qa.len();
    let accuracy: BTreeMap<usize, f64> = hits
        .iter()
        .map(|(&k, &h)| (k, if n == 0 { 0.0 } else { h as f64 / n as f64 }))
        .collect();
    assert!(
        accuracy.values().zip(accuracy.values().skip(1)).all(|(a, b)| a <= b),
        "accuracy must be non-decreasing in k"
    );
    Ok(AccuracyReport {
        tag: tag.to_owned(),
        questions: n,
        ks,
        hits,
        accuracy,
    })
}

/// Aligned-column table with one row per report.
pub fn format_reports(reports: &[AccuracyReport]) -> String {
    let ks: Vec<usize> = reports.first().map(|r| r.ks.clone()).unwrap_or_default();
    let width = reports.iter().map(|r| r.tag.len()).max().unwrap_or(0).max(3);
    let mut out = format!("{:<width$}  {:>9}", "run", "questions");
    for k in &ks {
        write!(out, "  {:>8}", format!("top-{k}")).unwrap();
    }
    out.push('\n');
    for r in reports {
        write!(out, "{:<width$}  {:>9}", r.tag, r.questions).unwrap();
        for k in &ks {
            match r.at(*k) {
                Some(a) => write!(out, "  {:>8.2}", 100.0 * a).unwrap(),
                None => write!(out, "  {:>8}", "-").unwrap(),
            }
        }
        out.push('\n');
    }
    out
}

/// CSV with columns `run,questions,top_<k>...`; accuracies are fractions.
pub fn reports_csv(reports: &[AccuracyReport]) -> String {
    let ks: Vec<usize> = reports.first().map(|r| r.ks.clone()).unwrap_or_default();
    let mut out = String::from("run,questions");
    for k in &ks {
        write!(out, ",top_{k}").unwrap();
    }
    out.push('\n');
    for r in reports {
        write!(out, "{},{}", r.tag, r.questions).unwrap();
        for k in &ks {
            write!(out, ",{}", r.at(*k).map_or(String::new(), |a| a.to_string())).unwrap();
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub n: usize,
    pub report: AccuracyReport,
    /// Questions that failed to run at this N.
    pub failures: usize,
}

/// One full evaluation per candidate cap. Candidates are generated with the
/// same seed for every N, so the evaluated prefixes nest.
pub fn ablate_candidate_size(
    spec: &StrategySpec,
    ctx: &RunContext<'_>,
    qa: &[QAExample],
    ns: &[usize],
    ks: &[usize],
    workers: usize,
) -> Result<Vec<AblationRow>> {
    if ns.is_empty() || ns.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("candidate sizes must be strictly ascending"));
    }
    let mut base = spec.clone();
    base.n_samples = base.n_samples.max(*ns.last().unwrap());
    ns.iter()
        .map(|&n| {
            let mut spec = base.clone();
            spec.cap_n = Some(n);
            spec.validate()?;
            let run = run_dataset(&spec, ctx, qa, workers)?;
            let tag = format!("{}@{n}", spec.run_tag());
            Ok(AblationRow {
                n,
                report: topk_accuracy(&run.runs, qa, ctx.store, ks, &tag)?,
                failures: run.errors.len(),
            })
        })
        .collect()
}

/// CSV with columns `n,top_<k>...`.
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let ks: Vec<usize> = rows.first().map(|r| r.report.ks.clone()).unwrap_or_default();
    let mut out = String::from("n");
    for k in &ks {
        write!(out, ",top_{k}").unwrap();
    }
    out.push('\n');
    for r in rows {
        write!(out, "{}", r.n).unwrap();
        for k in &ks {
            write!(out, ",{}", r.report.at(*k).unwrap_or(0.0)).unwrap();
        }
        out.push('\n');
    }
    out
}
