//! Post-retrieval passage reranking with a logistic (question, passage) scorer.
//!
//! `ear-pr-v1` features, in order:
//!
//! | # | name | definition |
//! |---|------|------------|
//! | 0 | `q_bm25` | BM25 score of the passage for the question alone |
//! | 1 | `q_coverage` | share of the question's distinct analyzed terms present in the passage |
//! | 2 | `q_idf_coverage` | IDF-weighted version of `q_coverage` |
//! | 3 | `q_hits` | number of distinct question terms present in the passage |
//! | 4 | `log_length` | `ln(1 + analyzed passage length)` |

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnswerMatcher, Passage, PassageStore, QAExample};
use crate::error::{Error, Result};
use crate::index::{indexed_text, Index};
use crate::ranked::{RankedEntry, RankedList};
use crate::reranker::model::{read_json, write_json, Standardizer, MODEL_FORMAT_VERSION};

pub const PR_SCHEMA: &str = "ear-pr-v1";
pub const PR_FEATURES: [&str; 5] = ["q_bm25", "q_coverage", "q_idf_coverage", "q_hits", "log_length"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PRTrainConfig {
    /// BM25 depth from which training instances are drawn.
    pub train_depth: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for PRTrainConfig {
    fn default() -> Self {
        PRTrainConfig {
            train_depth: 10,
            epochs: 3,
            learning_rate: 0.1,
            batch_size: 16,
            seed: 0,
        }
    }
}

impl PRTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_depth == 0 {
            return Err(Error::invalid("train_depth must be at least 1"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        Ok(())
    }
}

/// Logistic relevance model over `ear-pr-v1` features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageScorer {
    pub format_version: u32,
    pub schema: String,
    pub feature_names: Vec<String>,
    #[serde(default)]
    pub standardizer: Option<Standardizer>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub trained: bool,
}

impl PassageScorer {
    pub fn untrained() -> Self {
        PassageScorer {
            format_version: MODEL_FORMAT_VERSION,
            schema: PR_SCHEMA.into(),
            feature_names: PR_FEATURES.iter().map(|s| s.to_string()).collect(),
            standardizer: None,
            weights: vec![0.0; PR_FEATURES.len()],
            bias: 0.0,
            trained: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != PR_SCHEMA {
            return Err(Error::SchemaMismatch {
                expected: PR_SCHEMA.into(),
                found: self.schema.clone(),
            });
        }
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported model format {}",
                self.format_version
            )));
        }
        let dim = PR_FEATURES.len();
        if self.weights.len() != dim || self.feature_names.len() != dim {
            return Err(Error::invalid(format!("passage scorer expects {dim} weights")));
        }
        if let Some(s) = &self.standardizer {
            if s.mean.len() != dim || s.scale.len() != dim || s.scale.iter().any(|v| *v <= 0.0) {
                return Err(Error::invalid("malformed standardizer"));
            }
        }
        let finite = self
            .weights
            .iter()
            .chain(std::iter::once(&self.bias))
            .all(|w| w.is_finite());
        if !finite {
            return Err(Error::invalid("passage scorer weights must be finite"));
        }
        Ok(())
    }

    /// Log-odds of relevance for raw feature values.
    pub fn logit(&self, features: &[f64]) -> f64 {
        let x = match &self.standardizer {
            Some(s) => s.apply(features),
            None => features.to_vec(),
        };
        self.bias + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn probability(&self, features: &[f64]) -> f64 {
        sigmoid(self.logit(features))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PassageScorer> {
        let s: PassageScorer = read_json(path.as_ref())?;
        s.validate()?;
        Ok(s)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Question-side state shared across the passages being scored.
pub struct QuestionFeatures<'a> {
    index: &'a Index,
    terms: Vec<String>,
    distinct: Vec<String>,
    idf_total: f64,
}

impl<'a> QuestionFeatures<'a> {
    pub fn new(index: &'a Index, question: &str) -> Self {
        let terms = index.analyze(question);
        let mut seen = HashSet::new();
        let distinct: Vec<String> = terms.iter().filter(|t| seen.insert(t.as_str())).cloned().collect();
        let idf_total = distinct.iter().map(|t| index.idf(t)).sum();
        QuestionFeatures {
            index,
            terms,
            distinct,
            idf_total,
        }
    }

    /// Feature values for `passage`, or `None` if it is not in the index.
    pub fn passage(&self, passage: &Passage) -> Option<Vec<f64>> {
        let bm25 = self.index.bm25_score(&self.terms, &passage.id).ok()?;
        let p_terms = self.index.analyze(&indexed_text(passage, self.index.params()));
        let p_set: HashSet<&str> = p_terms.iter().map(String::as_str).collect();
        let present: Vec<&String> = self.distinct.iter().filter(|t| p_set.contains(t.as_str())).collect();
        let (coverage, idf_coverage) = if self.distinct.is_empty() {
            (0.0, 0.0)
        } else {
            let idf_hit: f64 = present.iter().map(|t| self.index.idf(t)).sum();
            (
                present.len() as f64 / self.distinct.len() as f64,
                if self.idf_total > 0.0 {
                    idf_hit / self.idf_total
                } else {
                    0.0
                },
            )
        };
        Some(vec![
            bm25,
            coverage,
            idf_coverage,
            present.len() as f64,
            (1.0 + p_terms.len() as f64).ln(),
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrInstance {
    pub features: Vec<f64>,
    pub positive: bool,
}

/// Top-`depth` BM25 passages of every question, labeled by answer containment.
pub fn build_instances(
    index: &Index,
    store: &PassageStore,
    questions: &[QAExample],
    depth: usize,
) -> Result<Vec<PrInstance>> {
    if let Some(q) = questions.iter().find(|q| !q.has_answers()) {
        return Err(Error::MissingAnswers(q.qid.clone()));
    }
    let per_question: Vec<Vec<PrInstance>> = questions
        .par_iter()
        .map(|q| {
            let hits = index.search(&q.question, depth);
            if hits.is_empty() {
                log::warn!("question {} retrieves no passages; skipped", q.qid);
                return Ok(Vec::new());
            }
            let qf = QuestionFeatures::new(index, &q.question);
            let matcher = AnswerMatcher::new(&q.answers);
            hits.ids()
                .map(|pid| {
                    let p = store.require(pid)?;
                    Ok(PrInstance {
                        features: qf.passage(p).ok_or_else(|| Error::UnknownPassage(pid.to_owned()))?,
                        positive: store.contains_answer(pid, &matcher),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    Ok(per_question.into_iter().flatten().collect())
}

/// Mean binary cross-entropy over `instances`.
pub fn cross_entropy(scorer: &PassageScorer, instances: &[PrInstance]) -> f64 {
    let total: f64 = instances
        .iter()
        .map(|i| {
            let p = scorer.probability(&i.features).clamp(1e-15, 1.0 - 1e-15);
            if i.positive {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / instances.len().max(1) as f64
}

/// Mini-batch gradient descent on the cross-entropy of a logistic model.
pub fn train_on_instances(instances: &[PrInstance], cfg: &PRTrainConfig) -> Result<PassageScorer> {
    cfg.validate()?;
    let mut scorer = PassageScorer::untrained();
    let dim = PR_FEATURES.len();
    let rows: Vec<&[f64]> = instances.iter().map(|i| i.features.as_slice()).collect();
    let standardizer = Standardizer::fit(&rows, dim);
    let xs: Vec<Vec<f64>> = instances.iter().map(|i| standardizer.apply(&i.features)).collect();
    scorer.standardizer = Some(standardizer);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..instances.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for &i in batch {
                let z = scorer.bias + xs[i].iter().zip(&scorer.weights).map(|(a, b)| a * b).sum::<f64>();
                let err = sigmoid(z) - if instances[i].positive { 1.0 } else { 0.0 };
                for (g, x) in gw.iter_mut().zip(&xs[i]) {
                    *g += err * x;
                }
                gb += err;
            }
            let step = cfg.learning_rate / batch.len() as f64;
            for (w, g) in scorer.weights.iter_mut().zip(&gw) {
                *w -= step * g;
            }
            scorer.bias -= step * gb;
        }
    }
    scorer.trained = true;
    scorer.validate()?;
    Ok(scorer)
}

pub fn train_passage_reranker(
    index: &Index,
    store: &PassageStore,
    qa_train: &[QAExample],
    cfg: &PRTrainConfig,
) -> Result<PassageScorer> {
    cfg.validate()?;
    if qa_train.is_empty() {
        return Err(Error::invalid("no training questions"));
    }
    let instances = build_instances(index, store, qa_train, cfg.train_depth)?;
    if instances.is_empty() {
        return Err(Error::invalid(
            "no training instances: every question retrieved nothing",
        ));
    }
    train_on_instances(&instances, cfg)
}

/// Reorders the first `depth` entries by descending scorer probability,
/// ties broken by original rank. Later entries keep their order.
///
/// Reranked entries are re-scored as `s + 1 + p`, where `s` is the score of
/// the first untouched entry (0 if none) and `p` the probability, so scores
/// stay non-increasing down the list. Passages missing from the store or
/// index sort to the end of the reranked block.
pub fn rerank_passages(
    scorer: &PassageScorer,
    index: &Index,
    store: &PassageStore,
    question: &str,
    list: &RankedList,
    depth: usize,
) -> RankedList {
    let depth = depth.min(list.len());
    let entries = list.entries();
    let qf = QuestionFeatures::new(index, question);
    let mut block: Vec<(usize, f64)> = entries[..depth]
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let z = store
                .get(&e.pid)
                .and_then(|p| qf.passage(p))
                .map_or(f64::NEG_INFINITY, |x| scorer.logit(&x));
            (i, z)
        })
        .collect();
    block.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let base = entries.get(depth).map_or(0.0, |e| e.score);
    let mut out: Vec<RankedEntry> = block
        .iter()
        .map(|&(i, z)| RankedEntry {
            pid: entries[i].pid.clone(),
            score: base + 1.0 + sigmoid(z),
        })
        .collect();
    out.extend_from_slice(&entries[depth..]);
    let tag = if list.tag.ends_with("+pr") {
        list.tag.clone()
    } else {
        format!("{}+pr", list.tag)
    };
    RankedList::from_sorted(list.qid.clone(), tag, out)
}
