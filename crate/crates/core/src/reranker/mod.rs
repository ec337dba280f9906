//! Query reranking: score each expansion and issue the lowest-scoring one.

pub mod features;
pub mod loss;
pub mod model;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::corpus::QAExample;
use crate::error::{Error, Result};
use crate::expansion::{expanded_query, CandidateSet, ExpansionCandidate};

pub use features::{FeatureVector, Featurizer};
pub use loss::rank_loss;
pub use model::{RerankerSet, ScorerModel};
pub use train::{train, train_reranker_set, TrainConfig, TrainReport};

/// Retrieval-independent (question, expansion) or retrieval-dependent
/// (question, expansion, top-1 passage) reranker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Ri,
    Rd,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ri" => Ok(Variant::Ri),
            "rd" => Ok(Variant::Rd),
            _ => Err(Error::invalid(format!("unknown reranker variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub index: usize,
    pub candidate: ExpansionCandidate,
    pub score: f64,
}

/// Model scores for every candidate, in candidate order.
///
/// RD retrieves the live top-2 passages of each expanded query in one batch.
pub fn score_candidates(
    model: &ScorerModel,
    featurizer: &Featurizer<'_>,
    question: &str,
    candidates: &CandidateSet,
) -> Result<Vec<f64>> {
    match model.variant {
        Variant::Ri => candidates
            .texts()
            .map(|e| model.score(&featurizer.ri(question, e)))
            .collect(),
        Variant::Rd => {
            let queries: Vec<String> = candidates.texts().map(|e| expanded_query(question, e)).collect();
            let hits = featurizer.index().batch_search(&queries, 2);
            candidates
                .texts()
                .zip(&hits)
                .map(|(e, h)| model.score(&featurizer.rd_from_hits(question, e, h)?))
                .collect()
        }
    }
}

/// Index of the smallest score; the earliest index wins ties.
pub fn argmin(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn select_best(
    model: &ScorerModel,
    featurizer: &Featurizer<'_>,
    question: &QAExample,
    candidates: &CandidateSet,
) -> Result<Selection> {
    let scores = score_candidates(model, featurizer, &question.question, candidates)?;
    let index = argmin(&scores).ok_or_else(|| Error::NoCandidates(question.qid.clone()))?;
    Ok(Selection {
        index,
        candidate: candidates.candidates[index].clone(),
        score: scores[index],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn argmin_prefers_earliest() {
        assert_eq!(argmin(&[]), None);
        assert_eq!(argmin(&[3.0]), Some(0));
        assert_eq!(argmin(&[1.0, 0.5, 0.5]), Some(1));
    }

    proptest! {
        #[test]
        fn argmin_invariant_under_shift_and_scale(
            scores in proptest::collection::vec(-100i32..100, 1..30),
            shift in -50i32..50,
            scale in 1i32..8,
        ) {
            // Integer-valued scores keep the affine map exact in f64.
            let base: Vec<f64> = scores.iter().map(|&s| s as f64).collect();
            let moved: Vec<f64> = base.iter().map(|s| s * scale as f64 + shift as f64).collect();
            prop_assert_eq!(argmin(&base), argmin(&moved));
        }
    }
}
