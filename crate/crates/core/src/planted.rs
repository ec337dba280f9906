//! Synthetic corpus where one expansion per question names the answer.
//!
//! Every question owns a cluster of passages built from four topic words
//! that appear only in that cluster. The answer passage is the only one
//! containing all four (once each) plus the capitalized answer word. The
//! other cluster passages carry three topic words at high term frequency
//! ("strong", they outrank the answer for the bare question) or one or two
//! ("weak"), and each has its own signature word. Decoy passages outside
//! the cluster hold a capitalized wrong answer.
//!
//! Each question gets one useful expansion (answer word plus two words of
//! the answer passage), occasionally a decoy expansion (a wrong answer
//! plus words of its decoy passage), and distractor expansions that point
//! at a random non-answer cluster passage through its signature. The
//! candidates are shuffled, so the first one ("greedy") is usually a
//! distractor. All words are random syllable strings whose stems are
//! unique and that are never stopwords.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, write_questions, Passage, PassageStore, QAExample};
use crate::error::{Error, Result};
use crate::expansion::{write_expansions, CandidateSet, ExpansionCandidate, FileCandidates, GeneratorTag};
use crate::text::{is_stopword, Analyzer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    /// Total questions; the first half is the training split.
    pub questions: usize,
    pub cluster_size: usize,
    /// Strong passages per cluster are drawn from `1..=max_strong`.
    pub max_strong: usize,
    pub facet_vocabulary: usize,
    pub facets_per_passage: usize,
    /// Low-IDF filler words that pad passages to a common length.
    pub common_vocabulary: usize,
    /// Target analyzed passage length (jittered by up to 3 tokens).
    pub passage_length: usize,
    /// Passages made only of facet and filler words.
    pub background_passages: usize,
    pub candidates: usize,
    /// Chance that a question has decoy expansions.
    pub decoy_rate: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            questions: 400,
            cluster_size: 10,
            max_strong: 8,
            facet_vocabulary: 100,
            facets_per_passage: 5,
            common_vocabulary: 40,
            passage_length: 24,
            background_passages: 600,
            candidates: 50,
            decoy_rate: 0.25,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    /// Roughly 10,000 passages, for index size and latency measurements.
    pub fn large() -> Self {
        PlantedConfig {
            questions: 800,
            background_passages: 1800,
            ..PlantedConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.questions < 2 {
            return Err(Error::invalid("need at least 2 questions"));
        }
        if self.max_strong == 0 || self.cluster_size < self.max_strong + 2 {
            return Err(Error::invalid(
                "cluster_size must exceed max_strong + 1 and max_strong must be positive",
            ));
        }
        if self.facets_per_passage < 2 || self.facet_vocabulary < self.facets_per_passage {
            return Err(Error::invalid(
                "need at least 2 facets per passage and enough facet words",
            ));
        }
        if self.common_vocabulary == 0 {
            return Err(Error::invalid("common_vocabulary must be positive"));
        }
        if self.candidates < 3 {
            return Err(Error::invalid("need at least 3 candidates"));
        }
        if !(0.0..=1.0).contains(&self.decoy_rate) {
            return Err(Error::invalid("decoy_rate must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedFixture {
    pub config: PlantedConfig,
    pub passages: Vec<Passage>,
    pub train: Vec<QAExample>,
    pub test: Vec<QAExample>,
    pub expansions: BTreeMap<String, CandidateSet>,
    /// Position of the useful expansion in each candidate set.
    pub useful: BTreeMap<String, usize>,
    /// Id of each question's answer passage.
    pub answer_passage: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedPaths {
    pub corpus: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    pub expansions: PathBuf,
}

struct Words {
    analyzer: Analyzer,
    stems: HashSet<String>,
}

impl Words {
    const ONSETS: [&'static str; 16] = [
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr",
    ];
    const VOWELS: [&'static str; 5] = ["a", "e", "i", "o", "u"];

    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let syllables = rng.random_range(2..=4);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(Self::ONSETS.choose(rng).unwrap());
                w.push_str(Self::VOWELS.choose(rng).unwrap());
            }
            if rng.random_bool(0.5) {
                w.push_str(["n", "r", "l", "k"].choose(rng).unwrap());
            }
            if is_stopword(&w) {
                continue;
            }
            let terms = self.analyzer.analyze(&w);
            if terms.len() == 1 && self.stems.insert(terms[0].clone()) {
                return w;
            }
        }
    }

    fn capitalized(&mut self, rng: &mut ChaCha8Rng) -> String {
        let w = self.fresh(rng);
        let mut c = w.chars();
        let first = c.next().unwrap().to_ascii_uppercase();
        std::iter::once(first).chain(c).collect()
    }
}

fn passage(id: String, mut tokens: Vec<String>, filler: &[String], length: usize, rng: &mut ChaCha8Rng) -> Passage {
    let target = length + rng.random_range(0..=3);
    while tokens.len() < target {
        tokens.push(filler.choose(rng).unwrap().clone());
    }
    tokens.shuffle(rng);
    Passage {
        id,
        title: String::new(),
        text: tokens.join(" "),
    }
}

struct Built {
    tokens: Vec<String>,
    facets: Vec<String>,
}

impl PlantedFixture {
    pub fn generate(cfg: &PlantedConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut words = Words {
            analyzer: Analyzer::default(),
            stems: HashSet::new(),
        };
        let facet_vocab: Vec<String> = (0..cfg.facet_vocabulary).map(|_| words.fresh(&mut rng)).collect();
        let filler: Vec<String> = (0..cfg.common_vocabulary).map(|_| words.fresh(&mut rng)).collect();
        let len = cfg.passage_length;
        let facets =
            |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> { facet_vocab.choose_multiple(rng, n).cloned().collect() };

        let mut passages = Vec::new();
        let mut questions = Vec::new();
        let mut expansions = BTreeMap::new();
        let mut useful = BTreeMap::new();
        let mut answer_passage = BTreeMap::new();
        let mut decoy_count = 0usize;

        for qi in 0..cfg.questions {
            let qid = format!("q{qi:04}");
            let topic: Vec<String> = (0..4).map(|_| words.fresh(&mut rng)).collect();
            let answer = words.capitalized(&mut rng);

            let f = facets(&mut rng, cfg.facets_per_passage);
            let mut tokens = topic.clone();
            tokens.push(answer.clone());
            tokens.extend(f.iter().cloned());
            let answer_built = Built { tokens, facets: f };

            let n_strong = rng.random_range(1..=cfg.max_strong);
            let mut others: Vec<(String, Built)> = Vec::new();
            for j in 0..cfg.cluster_size - 1 {
                let signature = words.fresh(&mut rng);
                let mut tokens = vec![signature.clone()];
                if j < n_strong {
                    for t in topic.choose_multiple(&mut rng, 3) {
                        let tf = rng.random_range(5..=6);
                        tokens.extend(std::iter::repeat_n(t.clone(), tf));
                    }
                } else {
                    let k = rng.random_range(1..=2);
                    for t in topic.choose_multiple(&mut rng, k) {
                        let tf = rng.random_range(1..=2);
                        tokens.extend(std::iter::repeat_n(t.clone(), tf));
                    }
                }
                let f = facets(&mut rng, cfg.facets_per_passage);
                tokens.extend(f.iter().cloned());
                others.push((signature, Built { tokens, facets: f }));
            }

            // Shuffle ids within the cluster so the answer is not always first.
            let mut slots: Vec<usize> = (0..cfg.cluster_size).collect();
            slots.shuffle(&mut rng);
            let pid = |slot: usize| format!("{qid}-p{slot:02}");
            let answer_pid = pid(slots[0]);
            passages.push(passage(
                answer_pid.clone(),
                answer_built.tokens.clone(),
                &filler,
                len,
                &mut rng,
            ));
            for (j, (_, b)) in others.iter().enumerate() {
                passages.push(passage(pid(slots[j + 1]), b.tokens.clone(), &filler, len, &mut rng));
            }

            let mut candidates = Vec::with_capacity(cfg.candidates);
            let pick2 =
                |fs: &[String], rng: &mut ChaCha8Rng| -> Vec<String> { fs.choose_multiple(rng, 2).cloned().collect() };
            let useful_text = {
                let mut w = vec![answer.clone()];
                w.extend(pick2(&answer_built.facets, &mut rng));
                w.join(" ")
            };
            candidates.push(useful_text.clone());

            let n_decoys = if rng.random_bool(cfg.decoy_rate) {
                if rng.random_bool(0.8) {
                    1
                } else {
                    2
                }
            } else {
                0
            };
            for _ in 0..n_decoys {
                let wrong = words.capitalized(&mut rng);
                let f = facets(&mut rng, cfg.facets_per_passage);
                let mut tokens = vec![wrong.clone()];
                tokens.extend(f.iter().cloned());
                passages.push(passage(
                    format!("decoy{decoy_count:05}"),
                    tokens,
                    &filler,
                    len,
                    &mut rng,
                ));
                decoy_count += 1;
                let mut w = vec![wrong];
                w.extend(pick2(&f, &mut rng));
                candidates.push(w.join(" "));
            }

            let mut seen: HashSet<String> = candidates.iter().cloned().collect();
            let mut attempts = 0;
            while candidates.len() < cfg.candidates && attempts < cfg.candidates * 50 {
                attempts += 1;
                let (sig, b) = others.choose(&mut rng).unwrap();
                let mut w = vec![sig.clone()];
                w.extend(pick2(&b.facets, &mut rng));
                let text = w.join(" ");
                if seen.insert(text.clone()) {
                    candidates.push(text);
                }
            }
            candidates.shuffle(&mut rng);
            let useful_at = candidates.iter().position(|c| *c == useful_text).unwrap();
            let set = CandidateSet::new(
                qid.clone(),
                candidates
                    .into_iter()
                    .enumerate()
                    .map(|(i, text)| ExpansionCandidate {
                        text,
                        generator_tag: GeneratorTag::External,
                        sample_seed: i as u64,
                    })
                    .collect(),
            );
            expansions.insert(qid.clone(), set);
            useful.insert(qid.clone(), useful_at);
            answer_passage.insert(qid.clone(), answer_pid);

            let mut q_words = topic.clone();
            q_words.shuffle(&mut rng);
            questions.push(QAExample {
                qid,
                question: format!(
                    "what {} {} of the {} {}?",
                    q_words[0], q_words[1], q_words[2], q_words[3]
                ),
                answers: vec![answer],
            });
        }

        for b in 0..cfg.background_passages {
            let n = rng.random_range(cfg.facets_per_passage..=cfg.facets_per_passage + 3);
            let tokens = facets(&mut rng, n);
            passages.push(passage(format!("bg{b:05}"), tokens, &filler, len, &mut rng));
        }

        let split = cfg.questions / 2;
        let test = questions.split_off(split);
        Ok(PlantedFixture {
            config: *cfg,
            passages,
            train: questions,
            test,
            expansions,
            useful,
            answer_passage,
        })
    }

    pub fn store(&self) -> Result<PassageStore> {
        PassageStore::new(self.passages.clone())
    }

    pub fn candidates(&self) -> FileCandidates {
        FileCandidates::new(self.expansions.clone())
    }

    pub fn all_questions(&self) -> Vec<QAExample> {
        self.train.iter().chain(&self.test).cloned().collect()
    }

    /// Writes `corpus.jsonl`, `train.jsonl`, `test.jsonl` and `expansions.jsonl`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PlantedPaths> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = PlantedPaths {
            corpus: dir.join("corpus.jsonl"),
            train: dir.join("train.jsonl"),
            test: dir.join("test.jsonl"),
            expansions: dir.join("expansions.jsonl"),
        };
        write_corpus(&paths.corpus, &self.passages)?;
        write_questions(&paths.train, &self.train)?;
        write_questions(&paths.test, &self.test)?;
        write_expansions(&paths.expansions, self.expansions.values())?;
        Ok(paths)
    }
}
