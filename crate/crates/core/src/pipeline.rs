//! Retrieval strategies, list fusion and dataset runs.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{PassageStore, QAExample};
use crate::error::{Error, Result};
use crate::expansion::{
    expanded_query, label_candidates, question_seed, CandidateGenerator, CandidateSet, GeneratorTag,
};
use crate::index::Index;
use crate::passage_rerank::{rerank_passages, PassageScorer};
use crate::ranked::{RankedEntry, RankedList};
use crate::reranker::{argmin, select_best, Featurizer, RerankerSet, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Bm25,
    Greedy,
    Concat,
    Oracle,
    EarRi,
    EarRd,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 6] = [
        StrategyKind::Bm25,
        StrategyKind::Greedy,
        StrategyKind::Concat,
        StrategyKind::Oracle,
        StrategyKind::EarRi,
        StrategyKind::EarRd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Bm25 => "bm25",
            StrategyKind::Greedy => "greedy",
            StrategyKind::Concat => "concat",
            StrategyKind::Oracle => "oracle",
            StrategyKind::EarRi => "ear_ri",
            StrategyKind::EarRd => "ear_rd",
        }
    }

    pub fn uses_candidates(self) -> bool {
        self != StrategyKind::Bm25
    }

    pub fn variant(self) -> Option<Variant> {
        match self {
            StrategyKind::EarRi => Some(Variant::Ri),
            StrategyKind::EarRd => Some(Variant::Rd),
            _ => None,
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub kind: StrategyKind,
    pub n_samples: usize,
    #[serde(default)]
    pub cap_n: Option<usize>,
    pub k_retrieve: usize,
    /// Sentinel rank used by the oracle for candidates that miss.
    pub max_rank: u32,
    /// Rerank the first `pr_depth` passages with the passage scorer.
    #[serde(default)]
    pub pr_depth: Option<usize>,
    /// Run once per tag and interleave the lists in this order.
    #[serde(default)]
    pub fuse_tags: Vec<GeneratorTag>,
    pub seed: u64,
}

impl StrategySpec {
    pub fn new(kind: StrategyKind) -> Self {
        StrategySpec {
            kind,
            n_samples: 50,
            cap_n: None,
            k_retrieve: 100,
            max_rank: 101,
            pr_depth: None,
            fuse_tags: Vec::new(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k_retrieve == 0 {
            return Err(Error::invalid("k_retrieve must be at least 1"));
        }
        if self.n_samples == 0 {
            return Err(Error::invalid("n_samples must be at least 1"));
        }
        if let Some(cap) = self.cap_n {
            if cap == 0 || cap > self.n_samples {
                return Err(Error::invalid(format!("cap_n must be in [1, {}]", self.n_samples)));
            }
        }
        if self.pr_depth == Some(0) {
            return Err(Error::invalid("pr_depth must be at least 1"));
        }
        for (i, t) in self.fuse_tags.iter().enumerate() {
            if self.fuse_tags[..i].contains(t) {
                return Err(Error::invalid(format!("generator tag {t} listed twice for fusion")));
            }
        }
        Ok(())
    }

    /// Run-file tag, e.g. `ear_rd`, `greedy+pr`, `ear_rd+fused`.
    pub fn run_tag(&self) -> String {
        let mut tag = self.kind.as_str().to_owned();
        if !self.fuse_tags.is_empty() {
            tag.push_str("+fused");
        }
        if self.pr_depth.is_some() {
            tag.push_str("+pr");
        }
        tag
    }
}

/// Everything a strategy may consult.
#[derive(Clone, Copy)]
pub struct RunContext<'a> {
    pub index: &'a Index,
    pub store: &'a PassageStore,
    pub generator: &'a dyn CandidateGenerator,
    pub models: Option<&'a RerankerSet>,
    pub passage_scorer: Option<&'a PassageScorer>,
}

impl<'a> RunContext<'a> {
    pub fn new(index: &'a Index, store: &'a PassageStore, generator: &'a dyn CandidateGenerator) -> Self {
        RunContext {
            index,
            store,
            generator,
            models: None,
            passage_scorer: None,
        }
    }

    pub fn with_models(mut self, models: &'a RerankerSet) -> Self {
        self.models = Some(models);
        self
    }

    pub fn with_passage_scorer(mut self, scorer: &'a PassageScorer) -> Self {
        self.passage_scorer = Some(scorer);
        self
    }
}

/// Deduplicated, capped candidates for `question` as the strategy sees them.
pub fn candidates_for(spec: &StrategySpec, ctx: &RunContext<'_>, question: &QAExample) -> Result<CandidateSet> {
    let seed = question_seed(spec.seed, &question.qid);
    let mut cs = ctx.generator.generate(question, spec.n_samples, seed)?.dedup();
    if let Some(cap) = spec.cap_n {
        if !cs.is_empty() {
            cs = cs.truncate(cap);
        }
    }
    Ok(cs)
}

fn check_requirements(spec: &StrategySpec, ctx: &RunContext<'_>, question: &QAExample) -> Result<()> {
    if spec.kind == StrategyKind::Oracle && !question.has_answers() {
        return Err(Error::MissingAnswers(question.qid.clone()));
    }
    if let Some(v) = spec.kind.variant() {
        let models = ctx
            .models
            .ok_or_else(|| Error::MissingModel(format!("{} needs a query reranker", spec.kind)))?;
        if models.variant() != Some(v) {
            return Err(Error::invalid(format!("{} needs {:?} reranker models", spec.kind, v)));
        }
    }
    if spec.pr_depth.is_some() && ctx.passage_scorer.is_none() {
        return Err(Error::MissingModel("passage reranking needs a passage scorer".into()));
    }
    Ok(())
}

/// The query text one strategy issues for `question` given its candidates.
pub fn strategy_query(
    kind: StrategyKind,
    spec: &StrategySpec,
    ctx: &RunContext<'_>,
    question: &QAExample,
    cs: &CandidateSet,
    tag: Option<GeneratorTag>,
) -> Result<String> {
    let q = &question.question;
    let first = || {
        cs.candidates
            .first()
            .ok_or_else(|| Error::NoCandidates(question.qid.clone()))
    };
    Ok(match kind {
        StrategyKind::Bm25 => q.clone(),
        StrategyKind::Greedy => expanded_query(q, &first()?.text),
        StrategyKind::Concat => {
            if cs.is_empty() {
                q.clone()
            } else {
                expanded_query(q, &cs.texts().collect::<Vec<_>>().join(" "))
            }
        }
        StrategyKind::Oracle => {
            first()?;
            let labeled = label_candidates(ctx.index, ctx.store, question, cs, spec.k_retrieve, spec.max_rank);
            let ranks: Vec<f64> = labeled.labels.iter().map(|l| l.rank as f64).collect();
            let best = argmin(&ranks).expect("non-empty candidates");
            expanded_query(q, &cs.candidates[best].text)
        }
        StrategyKind::EarRi | StrategyKind::EarRd => {
            first()?;
            let models = ctx.models.ok_or_else(|| Error::MissingModel(kind.to_string()))?;
            let model_tag = tag.or_else(|| {
                let tags = cs.tags();
                (tags.len() == 1).then(|| *tags.iter().next().unwrap())
            });
            let model = models.for_tag(model_tag)?;
            let featurizer = Featurizer::new(ctx.index, ctx.store);
            let chosen = select_best(model, &featurizer, question, cs)?;
            expanded_query(q, &chosen.candidate.text)
        }
    })
}

/// Wall-clock time spent in each stage of a strategy run.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    /// Obtaining, deduplicating and capping candidates.
    pub expand: Duration,
    /// Choosing a candidate (reranker or oracle labeling).
    pub rerank: Duration,
    /// Final search, fusion and passage reranking.
    pub retrieval: Duration,
}

impl StageTimes {
    pub fn add(&mut self, other: &StageTimes) {
        self.expand += other.expand;
        self.rerank += other.rerank;
        self.retrieval += other.retrieval;
    }
}

fn selects(kind: StrategyKind) -> bool {
    matches!(kind, StrategyKind::Oracle | StrategyKind::EarRi | StrategyKind::EarRd)
}

/// Top-`k_retrieve` list for one question, fused and passage-reranked when
/// the strategy asks for it.
pub fn run_strategy(spec: &StrategySpec, ctx: &RunContext<'_>, question: &QAExample) -> Result<RankedList> {
    run_strategy_timed(spec, ctx, question, &mut StageTimes::default())
}

/// [`run_strategy`] that also accumulates per-stage wall-clock time.
pub fn run_strategy_timed(
    spec: &StrategySpec,
    ctx: &RunContext<'_>,
    question: &QAExample,
    times: &mut StageTimes,
) -> Result<RankedList> {
    spec.validate()?;
    check_requirements(spec, ctx, question)?;
    let cs = if spec.kind.uses_candidates() {
        let start = Instant::now();
        let cs = candidates_for(spec, ctx, question)?;
        times.expand += start.elapsed();
        cs
    } else {
        CandidateSet::new(question.qid.clone(), Vec::new())
    };

    let mut query_for = |sub: &CandidateSet, tag: Option<GeneratorTag>| -> Result<String> {
        let start = Instant::now();
        let q = strategy_query(spec.kind, spec, ctx, question, sub, tag);
        if selects(spec.kind) {
            times.rerank += start.elapsed();
        } else {
            times.retrieval += start.elapsed();
        }
        q
    };
    let list = if spec.fuse_tags.is_empty() || !spec.kind.uses_candidates() {
        let query = query_for(&cs, None)?;
        let start = Instant::now();
        let list = ctx.index.search(&query, spec.k_retrieve);
        times.retrieval += start.elapsed();
        list
    } else {
        let mut lists = Vec::with_capacity(spec.fuse_tags.len());
        let mut elapsed = Duration::ZERO;
        for &tag in &spec.fuse_tags {
            let query = query_for(&cs.with_tag(tag), Some(tag))?;
            let start = Instant::now();
            lists.push(ctx.index.search(&query, spec.k_retrieve));
            elapsed += start.elapsed();
        }
        let start = Instant::now();
        let fused = fuse(&lists, spec.k_retrieve)?;
        times.retrieval += elapsed + start.elapsed();
        fused
    };
    let mut list = list.with_qid(question.qid.clone()).with_tag(spec.run_tag());
    if let Some(depth) = spec.pr_depth {
        let start = Instant::now();
        let scorer = ctx.passage_scorer.expect("checked above");
        list = rerank_passages(scorer, ctx.index, ctx.store, &question.question, &list, depth).with_tag(spec.run_tag());
        times.retrieval += start.elapsed();
    }
    Ok(list)
}

/// Positional round-robin over `lists` in the given order. A passage that
/// was already emitted is skipped and its list forfeits that turn. Scores
/// are `1 / position`.
pub fn fuse(lists: &[RankedList], k: usize) -> Result<RankedList> {
    if lists.is_empty() {
        return Err(Error::invalid("fusion needs at least one list"));
    }
    if k == 0 {
        return Err(Error::invalid("fusion depth must be at least 1"));
    }
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    let longest = lists.iter().map(RankedList::len).max().unwrap_or(0);
    'outer: for i in 0..longest {
        for list in lists {
            if out.len() == k {
                break 'outer;
            }
            if let Some(e) = list.entries().get(i) {
                if seen.insert(e.pid.as_str()) {
                    out.push(RankedEntry {
                        pid: e.pid.clone(),
                        score: 1.0 / (out.len() + 1) as f64,
                    });
                }
            }
        }
    }
    Ok(RankedList::from_sorted(lists[0].qid.clone(), "fused", out))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetRun {
    pub runs: BTreeMap<String, RankedList>,
    /// Questions that failed, with the reason.
    pub errors: BTreeMap<String, String>,
}

/// Runs every question; failures are collected rather than aborting the run.
/// `workers > 1` processes questions on a dedicated thread pool.
pub fn run_dataset(
    spec: &StrategySpec,
    ctx: &RunContext<'_>,
    questions: &[QAExample],
    workers: usize,
) -> Result<DatasetRun> {
    spec.validate()?;
    let one = |q: &QAExample| (q.qid.clone(), run_strategy(spec, ctx, q));
    let results: Vec<(String, Result<RankedList>)> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
        pool.install(|| questions.par_iter().map(one).collect())
    } else {
        questions.iter().map(one).collect()
    };
    let mut out = DatasetRun::default();
    for (qid, r) in results {
        match r {
            Ok(list) => {
                out.runs.insert(qid, list);
            }
            Err(e) => {
                log::warn!("question {qid}: {e}");
                out.errors.insert(qid, e.to_string());
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(prefix: &str, ids: &[&str]) -> RankedList {
        let entries = ids
            .iter()
            .enumerate()
            .map(|(i, id)| RankedEntry {
                pid: format!("{prefix}{id}"),
                score: 10.0 - i as f64,
            })
            .collect();
        RankedList::new("q", "t", entries).unwrap()
    }

    fn ids(l: &RankedList) -> Vec<&str> {
        l.ids().collect()
    }

    #[test]
    fn disjoint_lists_interleave() {
        let s = list("s", &["1", "2", "3"]);
        let a = list("a", &["1", "2", "3"]);
        let t = list("t", &["1", "2", "3"]);
        let f = fuse(&[s, a, t], 100).unwrap();
        assert_eq!(ids(&f), ["s1", "a1", "t1", "s2", "a2", "t2", "s3", "a3", "t3"]);
        let scores: Vec<f64> = f.entries().iter().map(|e| e.score).collect();
        assert_eq!(scores[0], 1.0);
        assert_eq!(scores[2], 1.0 / 3.0);
    }

    #[test]
    fn duplicate_forfeits_turn() {
        let s = list("", &["s1", "s2", "s3"]);
        let a = list("", &["s1", "a2", "a3"]);
        let t = list("", &["t1", "t2", "t3"]);
        let f = fuse(&[s, a, t], 5).unwrap();
        assert_eq!(ids(&f), ["s1", "t1", "s2", "a2", "t2"]);
    }

    #[test]
    fn single_list_is_identity_prefix() {
        let s = list("", &["x", "y", "z"]);
        assert_eq!(ids(&fuse(&[s], 2).unwrap()), ["x", "y"]);
        assert!(fuse(&[], 3).is_err());
    }

    #[test]
    fn strategy_validation() {
        let mut spec = StrategySpec::new(StrategyKind::Greedy);
        spec.validate().unwrap();
        spec.cap_n = Some(60);
        assert!(spec.validate().is_err());
        spec.cap_n = Some(10);
        spec.fuse_tags = vec![GeneratorTag::Answer, GeneratorTag::Answer];
        assert!(spec.validate().is_err());
        assert_eq!("ear_rd".parse::<StrategyKind>().unwrap(), StrategyKind::EarRd);
    }

    proptest! {
        #[test]
        fn fused_ids_distinct_and_bounded(
            lists in proptest::collection::vec(proptest::collection::btree_set(0u8..40, 0..20), 1..4),
            k in 1usize..50,
        ) {
            let ranked: Vec<RankedList> = lists
                .iter()
                .map(|set| {
                    let v: Vec<String> = set.iter().map(|i| i.to_string()).collect();
                    let refs: Vec<&str> = v.iter().map(String::as_str).collect();
                    list("", &refs)
                })
                .collect();
            let f = fuse(&ranked, k).unwrap();
            let mut seen = std::collections::HashSet::new();
            prop_assert!(f.ids().all(|p| seen.insert(p.to_owned())));
            prop_assert!(f.len() <= k);
            let union: std::collections::BTreeSet<u8> = lists.iter().flatten().copied().collect();
            prop_assert_eq!(f.len(), k.min(union.len()));
        }

        #[test]
        fn disjoint_equal_length_output_size(len in 0usize..15, k in 1usize..60) {
            let mk = |p: &str| {
                let v: Vec<String> = (0..len).map(|i| i.to_string()).collect();
                let refs: Vec<&str> = v.iter().map(String::as_str).collect();
                list(p, &refs)
            };
            let f = fuse(&[mk("s"), mk("a"), mk("t")], k).unwrap();
            prop_assert_eq!(f.len(), k.min(3 * len));
        }
    }
}
