#![allow(dead_code)]

use std::collections::HashMap;
use std::sync::OnceLock;

use ear_core::expansion::{
    build_training_set, CandidateGenerator, ConstructionConfig, FileCandidates, TrainingExample,
};
use ear_core::passage_rerank::{train_passage_reranker, PRTrainConfig, PassageScorer};
use ear_core::planted::{PlantedConfig, PlantedFixture};
use ear_core::reranker::{train_reranker_set, Featurizer, RerankerSet, TrainConfig, TrainReport, Variant};
use ear_core::text::Analyzer;
use ear_core::{build_index, Bm25Params, Index, Passage, PassageStore};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores every passage from raw term counts, independently of the index.
pub fn brute_force_bm25(passages: &[Passage], query: &str, k: usize, params: &Bm25Params) -> Vec<(String, f64)> {
    let analyzer: Analyzer = params.analyzer;
    let docs: Vec<(String, Vec<String>)> = passages
        .iter()
        .map(|p| (p.id.clone(), analyzer.analyze(&p.text)))
        .collect();
    let n = docs.len() as f64;
    let total: usize = docs.iter().map(|(_, t)| t.len()).sum();
    let avgdl = total as f64 / n;
    let mut df: HashMap<&str, usize> = HashMap::new();
    for (_, terms) in &docs {
        let mut seen: Vec<&str> = terms.iter().map(String::as_str).collect();
        seen.sort_unstable();
        seen.dedup();
        for t in seen {
            *df.entry(t).or_default() += 1;
        }
    }
    let q_terms = analyzer.analyze(query);
    let mut scored: Vec<(String, f64)> = docs
        .iter()
        .map(|(id, terms)| {
            let dl = terms.len() as f64;
            let mut s = 0.0;
            for q in &q_terms {
                let tf = terms.iter().filter(|t| *t == q).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let d = df[q.as_str()] as f64;
                let idf = (1.0 + (n - d + 0.5) / (d + 0.5)).ln();
                s += idf * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl));
            }
            (id.clone(), s)
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    // Scores that agree to 1e-9 are ties in exact arithmetic; order those by id.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut start = 0;
    for i in 1..=scored.len() {
        if i == scored.len() || scored[i - 1].1 - scored[i].1 > 1e-9 {
            scored[start..i].sort_by(|a, b| a.0.cmp(&b.0));
            start = i;
        }
    }
    scored.truncate(k);
    scored
}

/// A small-vocabulary corpus so that exact score ties are common.
pub fn random_corpus(rng: &mut ChaCha8Rng, docs: usize, vocab: usize) -> Vec<Passage> {
    let words: Vec<String> = (0..vocab).map(|i| format!("w{i}")).collect();
    (0..docs)
        .map(|i| {
            let len = rng.random_range(1..=12);
            let text: Vec<&str> = (0..len)
                .map(|_| {
                    if rng.random_bool(0.1) {
                        "the"
                    } else {
                        words.choose(rng).unwrap().as_str()
                    }
                })
                .collect();
            Passage {
                id: format!("d{:05}", (i * 7919) % 100_000),
                title: String::new(),
                text: text.join(" "),
            }
        })
        .collect()
}

pub fn random_query(rng: &mut ChaCha8Rng, vocab: usize) -> String {
    let len = rng.random_range(1..=5);
    (0..len)
        .map(|_| format!("w{}", rng.random_range(0..vocab + 3)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Compares a search result to the oracle: identical ids in identical
/// order and scores within `tol`.
pub fn check_against_oracle(got: &[(String, f64)], want: &[(String, f64)], tol: f64) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("length {} vs oracle {}", got.len(), want.len()));
    }
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        if g.0 != w.0 {
            return Err(format!("position {}: {} vs oracle {}", i + 1, g.0, w.0));
        }
        if (g.1 - w.1).abs() > tol {
            return Err(format!("position {}: score {} vs oracle {}", i + 1, g.1, w.1));
        }
    }
    Ok(())
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The default planted fixture with its index, training set and models.
pub struct Planted {
    pub fixture: PlantedFixture,
    pub store: PassageStore,
    pub index: Index,
    pub candidates: FileCandidates,
    pub train_set: Vec<TrainingExample>,
    pub ri: RerankerSet,
    pub ri_report: TrainReport,
    pub rd: RerankerSet,
    pub rd_report: TrainReport,
    pub pr: PassageScorer,
}

impl Planted {
    pub fn featurizer(&self) -> Featurizer<'_> {
        Featurizer::new(&self.index, &self.store)
    }
}

pub fn planted() -> &'static Planted {
    static CELL: OnceLock<Planted> = OnceLock::new();
    CELL.get_or_init(|| {
        let fixture = PlantedFixture::generate(&PlantedConfig::default()).unwrap();
        let store = fixture.store().unwrap();
        let index = build_index(&store, Bm25Params::default()).unwrap();
        let candidates = fixture.candidates();
        let generator: &dyn CandidateGenerator = &candidates;
        let train_set = build_training_set(
            &index,
            &store,
            &fixture.train,
            &ConstructionConfig::default(),
            &[generator],
        )
        .unwrap();
        let featurizer = Featurizer::new(&index, &store);
        let train = |variant| {
            let (set, mut reports) =
                train_reranker_set(&featurizer, &train_set, &TrainConfig::for_variant(variant), variant).unwrap();
            (set, reports.remove(0).1)
        };
        let (ri, ri_report) = train(Variant::Ri);
        let (rd, rd_report) = train(Variant::Rd);
        let pr = train_passage_reranker(&index, &store, &fixture.train, &PRTrainConfig::default()).unwrap();
        Planted {
            fixture,
            store,
            index,
            candidates,
            train_set,
            ri,
            ri_report,
            rd,
            rd_report,
            pr,
        }
    })
}
