//! Expansion candidates, rank labels and training-set construction.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::{IndexedRandom, IteratorRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerMatcher, PassageStore, QAExample};
use crate::error::{Error, Result};
use crate::index::Index;
use crate::jsonl;
use crate::text::{is_stopword, normalize};

/// Prompt suffix used when sampling expansions from an instruction-tuned LLM.
pub const EXTERNAL_PROMPT: &str = "To answer this question, we need to know";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorTag {
    Answer,
    Sentence,
    Title,
    Stub,
    External,
}

impl GeneratorTag {
    pub const ALL: [GeneratorTag; 5] = [
        GeneratorTag::Answer,
        GeneratorTag::Sentence,
        GeneratorTag::Title,
        GeneratorTag::Stub,
        GeneratorTag::External,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            GeneratorTag::Answer => "answer",
            GeneratorTag::Sentence => "sentence",
            GeneratorTag::Title => "title",
            GeneratorTag::Stub => "stub",
            GeneratorTag::External => "external",
        }
    }
}

impl fmt::Display for GeneratorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GeneratorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GeneratorTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown generator tag {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionCandidate {
    pub text: String,
    pub generator_tag: GeneratorTag,
    #[serde(default)]
    pub sample_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub qid: String,
    pub candidates: Vec<ExpansionCandidate>,
    pub requested_n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap_n: Option<usize>,
}

impl CandidateSet {
    pub fn new(qid: impl Into<String>, candidates: Vec<ExpansionCandidate>) -> Self {
        let requested_n = candidates.len();
        CandidateSet {
            qid: qid.into(),
            candidates,
            requested_n,
            cap_n: None,
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(|c| c.text.as_str())
    }

    /// Keeps the first occurrence of each normalized text, in order.
    pub fn dedup(&self) -> CandidateSet {
        let mut seen = HashSet::new();
        CandidateSet {
            candidates: self
                .candidates
                .iter()
                .filter(|c| seen.insert(normalize(&c.text)))
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Keeps the first `min(cap, len)` candidates.
    pub fn truncate(&self, cap: usize) -> CandidateSet {
        assert!(cap >= 1, "candidate cap must be at least 1");
        CandidateSet {
            qid: self.qid.clone(),
            candidates: self.candidates.iter().take(cap).cloned().collect(),
            requested_n: self.requested_n,
            cap_n: Some(self.cap_n.map_or(cap, |c| c.min(cap))),
        }
    }

    pub fn with_tag(&self, tag: GeneratorTag) -> CandidateSet {
        let candidates: Vec<_> = self
            .candidates
            .iter()
            .filter(|c| c.generator_tag == tag)
            .cloned()
            .collect();
        CandidateSet {
            qid: self.qid.clone(),
            requested_n: candidates.len(),
            candidates,
            cap_n: self.cap_n,
        }
    }

    pub fn tags(&self) -> BTreeSet<GeneratorTag> {
        self.candidates.iter().map(|c| c.generator_tag).collect()
    }
}

/// The query actually issued for an expansion.
pub fn expanded_query(question: &str, expansion: &str) -> String {
    format!("{question} {expansion}")
}

#[derive(Debug, Deserialize, Serialize)]
struct ExpansionRow {
    qid: String,
    generator_tag: GeneratorTag,
    text: String,
    #[serde(default)]
    sample_seed: u64,
}

/// Groups `{qid, generator_tag, text}` rows by qid, preserving file order.
///
/// Rows whose qid is missing from `known_qids` are kept with a warning.
pub fn load_expansions(
    path: impl AsRef<Path>,
    known_qids: Option<&HashSet<String>>,
) -> Result<BTreeMap<String, CandidateSet>> {
    let path = path.as_ref();
    let rows: Vec<(usize, ExpansionRow)> = jsonl::read(path)?;
    let mut sets: BTreeMap<String, CandidateSet> = BTreeMap::new();
    let mut unknown = BTreeSet::new();
    for (line, row) in rows {
        if row.text.trim().is_empty() {
            return Err(Error::parse(path, line, "expansion text is empty"));
        }
        if let Some(known) = known_qids {
            if !known.contains(&row.qid) {
                unknown.insert(row.qid.clone());
            }
        }
        let set = sets
            .entry(row.qid.clone())
            .or_insert_with(|| CandidateSet::new(row.qid.clone(), Vec::new()));
        set.candidates.push(ExpansionCandidate {
            text: row.text,
            generator_tag: row.generator_tag,
            sample_seed: row.sample_seed,
        });
        set.requested_n += 1;
    }
    if let Some(first) = unknown.first() {
        log::warn!(
            "{}: expansions for {} unknown questions (first {first})",
            path.display(),
            unknown.len()
        );
    }
    Ok(sets)
}

pub fn write_expansions<'a>(path: impl AsRef<Path>, sets: impl IntoIterator<Item = &'a CandidateSet>) -> Result<()> {
    let rows: Vec<ExpansionRow> = sets
        .into_iter()
        .flat_map(|s| {
            s.candidates.iter().map(|c| ExpansionRow {
                qid: s.qid.clone(),
                generator_tag: c.generator_tag,
                text: c.text.clone(),
                sample_seed: c.sample_seed,
            })
        })
        .collect();
    jsonl::write(path.as_ref(), &rows)
}

/// Produces expansion candidates for a question.
pub trait CandidateGenerator: Sync {
    fn generate(&self, question: &QAExample, n: usize, seed: u64) -> Result<CandidateSet>;
}

/// Serves pre-sampled candidates loaded from an expansions file.
#[derive(Debug, Clone, Default)]
pub struct FileCandidates {
    sets: BTreeMap<String, CandidateSet>,
}

impl FileCandidates {
    pub fn new(sets: BTreeMap<String, CandidateSet>) -> Self {
        FileCandidates { sets }
    }

    pub fn load(path: impl AsRef<Path>, known_qids: Option<&HashSet<String>>) -> Result<Self> {
        Ok(FileCandidates::new(load_expansions(path, known_qids)?))
    }

    pub fn sets(&self) -> &BTreeMap<String, CandidateSet> {
        &self.sets
    }
}

impl CandidateGenerator for FileCandidates {
    /// The first `n` stored samples; unknown questions get an empty set.
    fn generate(&self, question: &QAExample, n: usize, _seed: u64) -> Result<CandidateSet> {
        let mut set = match self.sets.get(&question.qid) {
            Some(s) => s.clone(),
            None => CandidateSet::new(question.qid.clone(), Vec::new()),
        };
        set.candidates.truncate(n);
        set.requested_n = n;
        Ok(set)
    }
}

/// Deterministic offline stand-in for a sampling generator.
///
/// Each candidate mixes 2-4 terms that co-occur with the question in its
/// top BM25 passages with one random corpus term.
pub struct StubSampler<'a> {
    index: &'a Index,
    store: &'a PassageStore,
    vocabulary: Vec<String>,
}

impl<'a> StubSampler<'a> {
    const POOL_DEPTH: usize = 10;

    pub fn new(index: &'a Index, store: &'a PassageStore) -> Self {
        let vocabulary: BTreeSet<String> = store
            .passages()
            .iter()
            .flat_map(|p| normalize(&p.text).tokens)
            .filter(|t| !is_stopword(t))
            .collect();
        StubSampler {
            index,
            store,
            vocabulary: vocabulary.into_iter().collect(),
        }
    }

    pub fn sample(&self, question: &str, qid: &str, n: usize, seed: u64) -> CandidateSet {
        assert!(n >= 1, "need at least one sample");
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, stable_hash(question.as_bytes())));
        let q_tokens: HashSet<String> = normalize(question).tokens.into_iter().collect();

        let mut pool = Vec::new();
        let mut in_pool = HashSet::new();
        for entry in self.index.search(question, Self::POOL_DEPTH).entries() {
            let Some(p) = self.store.get(&entry.pid) else { continue };
            for t in normalize(&p.text).tokens {
                if !is_stopword(&t) && !q_tokens.contains(&t) && in_pool.insert(t.clone()) {
                    pool.push(t);
                }
            }
        }
        if pool.is_empty() {
            pool = self.vocabulary.clone();
        }
        if pool.is_empty() {
            pool.push("unknown".to_owned());
        }
        let distractors: &[String] = if self.vocabulary.is_empty() {
            &pool
        } else {
            &self.vocabulary
        };

        let mut seen = HashSet::new();
        let mut candidates = Vec::with_capacity(n);
        for i in 0..n {
            let mut text = String::new();
            for _ in 0..32 {
                let take = rng.random_range(2..=4).min(pool.len());
                let mut words: Vec<&str> = pool.iter().map(String::as_str).choose_multiple(&mut rng, take);
                words.push(distractors.choose(&mut rng).map(String::as_str).unwrap_or("unknown"));
                text = words.join(" ");
                if !seen.contains(&normalize(&text)) {
                    break;
                }
            }
            let mut suffix = 0usize;
            while seen.contains(&normalize(&text)) {
                text = format!("{text} {}", distractors[suffix % distractors.len()]);
                suffix += 1;
            }
            seen.insert(normalize(&text));
            candidates.push(ExpansionCandidate {
                text,
                generator_tag: GeneratorTag::Stub,
                sample_seed: seed.wrapping_add(i as u64),
            });
        }
        let mut set = CandidateSet::new(qid, candidates);
        set.requested_n = n;
        set
    }
}

impl CandidateGenerator for StubSampler<'_> {
    fn generate(&self, question: &QAExample, n: usize, seed: u64) -> Result<CandidateSet> {
        Ok(self.sample(&question.question, &question.qid, n, seed))
    }
}

/// FNV-1a; stable across platforms and toolchains.
pub(crate) fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Per-question sampling seed derived from a run seed.
pub fn question_seed(seed: u64, qid: &str) -> u64 {
    mix(seed, stable_hash(qid.as_bytes()))
}

pub(crate) fn mix(seed: u64, h: u64) -> u64 {
    let mut z = seed ^ h.rotate_left(29) ^ 0x9e37_79b9_7f4a_7c15;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankLabel {
    pub index: usize,
    pub rank: u32,
    pub hit: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstructionConfig {
    pub n_samples: usize,
    pub k_retrieve: usize,
    pub max_rank: u32,
    pub folds: usize,
    pub seed: u64,
    /// Keep the top-1 passage of every expanded query (needed for RD training).
    pub record_top1: bool,
    #[serde(default)]
    pub cap_n: Option<usize>,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        ConstructionConfig {
            n_samples: 50,
            k_retrieve: 100,
            max_rank: 101,
            folds: 5,
            seed: 0,
            record_top1: true,
            cap_n: None,
        }
    }
}

impl ConstructionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_retrieve == 0 {
            return Err(Error::invalid("k_retrieve must be at least 1"));
        }
        if self.max_rank as usize <= self.k_retrieve {
            return Err(Error::invalid(format!(
                "MAX_RANK ({}) must exceed k_retrieve ({})",
                self.max_rank, self.k_retrieve
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::invalid("n_samples must be at least 2"));
        }
        if self.folds < 2 {
            return Err(Error::invalid("folds must be at least 2"));
        }
        if self.cap_n == Some(0) {
            return Err(Error::invalid("cap_n must be at least 1"));
        }
        Ok(())
    }
}

/// Rank labels plus the top-1 passage for every expanded query.
#[derive(Debug, Clone, PartialEq)]
pub struct Labeled {
    pub labels: Vec<RankLabel>,
    pub top1: Vec<Option<String>>,
}

/// Issues `question + " " + e_i` for every candidate and records the rank of
/// the first answer passage within `k_retrieve`, or `max_rank` on a miss.
pub fn label_candidates(
    index: &Index,
    store: &PassageStore,
    question: &QAExample,
    candidates: &CandidateSet,
    k_retrieve: usize,
    max_rank: u32,
) -> Labeled {
    let matcher = AnswerMatcher::new(&question.answers);
    let queries: Vec<String> = candidates
        .texts()
        .map(|e| expanded_query(&question.question, e))
        .collect();
    let lists = index.batch_search(&queries, k_retrieve);
    let mut labels = Vec::with_capacity(lists.len());
    let mut top1 = Vec::with_capacity(lists.len());
    for (i, list) in lists.iter().enumerate() {
        let rank = list
            .ids()
            .position(|pid| store.contains_answer(pid, &matcher))
            .map(|p| p as u32 + 1);
        labels.push(RankLabel {
            index: i,
            rank: rank.unwrap_or(max_rank),
            hit: rank.is_some(),
        });
        top1.push(list.top().map(|e| e.pid.clone()));
    }
    Labeled { labels, top1 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub qid: String,
    pub question: String,
    pub fold: usize,
    pub candidates: CandidateSet,
    pub labels: Vec<RankLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top1: Option<Vec<Option<String>>>,
}

impl TrainingExample {
    pub fn min_rank(&self) -> Option<u32> {
        self.labels.iter().map(|l| l.rank).min()
    }
}

/// Deterministic, balanced fold assignment: questions are ordered by a
/// seeded hash of their qid and dealt round-robin.
pub fn assign_folds<S: AsRef<str>>(qids: &[S], folds: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<(u64, &str, usize)> = qids
        .iter()
        .enumerate()
        .map(|(i, q)| (mix(seed, stable_hash(q.as_ref().as_bytes())), q.as_ref(), i))
        .collect();
    order.sort_unstable();
    let mut out = vec![0; qids.len()];
    for (pos, (_, _, i)) in order.into_iter().enumerate() {
        out[i] = pos % folds;
    }
    out
}

/// Builds rank-labeled training examples.
///
/// `generators` holds either one generator shared by every fold or exactly
/// one per fold.
pub fn build_training_set(
    index: &Index,
    store: &PassageStore,
    questions: &[QAExample],
    cfg: &ConstructionConfig,
    generators: &[&dyn CandidateGenerator],
) -> Result<Vec<TrainingExample>> {
    cfg.validate()?;
    if questions.len() < cfg.folds {
        return Err(Error::invalid(format!(
            "{} questions cannot fill {} folds",
            questions.len(),
            cfg.folds
        )));
    }
    if generators.len() != 1 && generators.len() != cfg.folds {
        return Err(Error::invalid(format!(
            "expected 1 or {} generators, got {}",
            cfg.folds,
            generators.len()
        )));
    }
    let qids: Vec<&str> = questions.iter().map(|q| q.qid.as_str()).collect();
    let folds = assign_folds(&qids, cfg.folds, cfg.seed);

    let mut out = Vec::with_capacity(questions.len());
    for (q, &fold) in questions.iter().zip(&folds) {
        if !q.has_answers() {
            return Err(Error::MissingAnswers(q.qid.clone()));
        }
        let generator = generators[if generators.len() == 1 { 0 } else { fold }];
        let seed = question_seed(cfg.seed, &q.qid);
        let mut candidates = generator.generate(q, cfg.n_samples, seed)?.dedup();
        if let Some(cap) = cfg.cap_n {
            candidates = candidates.truncate(cap);
        }
        if candidates.is_empty() {
            return Err(Error::NoCandidates(q.qid.clone()));
        }
        let labeled = label_candidates(index, store, q, &candidates, cfg.k_retrieve, cfg.max_rank);
        out.push(TrainingExample {
            qid: q.qid.clone(),
            question: q.question.clone(),
            fold,
            candidates,
            labels: labeled.labels,
            top1: cfg.record_top1.then_some(labeled.top1),
        });
    }
    Ok(out)
}

pub fn write_training_set(path: impl AsRef<Path>, examples: &[TrainingExample]) -> Result<()> {
    jsonl::write(path.as_ref(), examples)
}

pub fn load_training_set(path: impl AsRef<Path>) -> Result<Vec<TrainingExample>> {
    let path = path.as_ref();
    let rows: Vec<(usize, TrainingExample)> = jsonl::read(path)?;
    rows.into_iter()
        .map(|(line, ex)| {
            let aligned = ex.labels.len() == ex.candidates.len()
                && ex.top1.as_ref().is_none_or(|t| t.len() == ex.candidates.len());
            if aligned {
                Ok(ex)
            } else {
                Err(Error::parse(path, line, "labels/top1 not aligned with candidates"))
            }
        })
        .collect()
}

/// Counts of labels per rank bucket: 1, 2-5, 6-20, 21-100, misses.
pub fn rank_histogram(examples: &[TrainingExample]) -> BTreeMap<&'static str, usize> {
    let mut h = BTreeMap::new();
    for l in examples.iter().flat_map(|e| &e.labels) {
        let bucket = match (l.hit, l.rank) {
            (false, _) => "miss",
            (true, 1) => "r=1",
            (true, 2..=5) => "r=2-5",
            (true, 6..=20) => "r=6-20",
            _ => "r=21+",
        };
        *h.entry(bucket).or_default() += 1;
    }
    h
}
