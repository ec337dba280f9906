//! Lexical features for the query rerankers.
//!
//! `ear-ri-v1` (retrieval-independent), in order:
//!
//! | # | name | definition |
//! |---|------|------------|
//! | 0 | `exp_tokens` | number of normalized tokens in the expansion |
//! | 1 | `overlap_frac` | share of the expansion's distinct analyzed terms that occur in the question |
//! | 2 | `novel_frac` | `1 - overlap_frac`; 0 when the expansion has no analyzed terms |
//! | 3 | `novel_idf_max` | max corpus IDF over novel terms (0 if none) |
//! | 4 | `novel_idf_mean` | mean corpus IDF over novel terms (0 if none) |
//! | 5 | `numeric_tokens` | normalized tokens made only of digits |
//! | 6 | `capitalized_tokens` | raw tokens whose first character is uppercase |
//! | 7 | `char3_jaccard` | Jaccard of character trigram sets of the normalized question and expansion strings |
//! | 8 | `bias` | constant 1 |
//!
//! `ear-rd-v1` appends, for the top-1 passage `d` of the expanded query:
//!
//! | # | name | definition |
//! |---|------|------------|
//! | 9 | `top1_bm25` | BM25 score of `d` for the expanded query |
//! | 10 | `novel_in_top1` | share of novel terms present in `d` |
//! | 11 | `question_in_top1` | share of the question's distinct analyzed terms present in `d` |
//! | 12 | `top1_length` | analyzed length of `d` |
//! | 13 | `top1_margin` | 1 if `d` outscores the rank-2 passage (or is alone), else 0 |
//! | 14 | `novel_idf_max_in_top1` | max IDF over novel terms present in `d` (0 if none) |
//!
//! When the expanded query retrieves nothing the RD block is all zeros.
//! IDF is `ln(1 + (N - df + 0.5) / (df + 0.5))` from the index.

use std::collections::HashSet;

use crate::corpus::{Passage, PassageStore};
use crate::error::{Error, Result};
use crate::expansion::expanded_query;
use crate::index::{indexed_text, Index};
use crate::ranked::RankedList;
use crate::text::{normalize, raw_tokens};

use super::Variant;

pub const RI_SCHEMA: &str = "ear-ri-v1";
pub const RD_SCHEMA: &str = "ear-rd-v1";

pub const RI_FEATURES: [&str; 9] = [
    "exp_tokens",
    "overlap_frac",
    "novel_frac",
    "novel_idf_max",
    "novel_idf_mean",
    "numeric_tokens",
    "capitalized_tokens",
    "char3_jaccard",
    "bias",
];

pub const RD_EXTRA_FEATURES: [&str; 6] = [
    "top1_bm25",
    "novel_in_top1",
    "question_in_top1",
    "top1_length",
    "top1_margin",
    "novel_idf_max_in_top1",
];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub schema: &'static str,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn new(schema: &'static str, values: Vec<f64>) -> Result<Self> {
        let dim = schema_dim(schema).ok_or_else(|| Error::invalid(format!("unknown schema {schema}")))?;
        if values.len() != dim {
            return Err(Error::invalid(format!(
                "{schema} has {dim} features, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature values must be finite"));
        }
        Ok(FeatureVector { schema, values })
    }
}

pub fn schema_dim(schema: &str) -> Option<usize> {
    match schema {
        RI_SCHEMA => Some(RI_FEATURES.len()),
        RD_SCHEMA => Some(RI_FEATURES.len() + RD_EXTRA_FEATURES.len()),
        _ => None,
    }
}

pub fn feature_names(variant: Variant) -> Vec<&'static str> {
    match variant {
        Variant::Ri => RI_FEATURES.to_vec(),
        Variant::Rd => RI_FEATURES.iter().chain(RD_EXTRA_FEATURES.iter()).copied().collect(),
    }
}

fn distinct(terms: Vec<String>) -> Vec<String> {
    let mut seen = HashSet::new();
    terms.into_iter().filter(|t| seen.insert(t.clone())).collect()
}

fn trigrams(s: &str) -> HashSet<[char; 3]> {
    let chars: Vec<char> = s.chars().collect();
    chars.windows(3).map(|w| [w[0], w[1], w[2]]).collect()
}

fn share(terms: &[String], pool: &HashSet<&str>) -> f64 {
    if terms.is_empty() {
        0.0
    } else {
        terms.iter().filter(|t| pool.contains(t.as_str())).count() as f64 / terms.len() as f64
    }
}

/// Computes reranker features against a fixed index and passage store.
#[derive(Clone, Copy)]
pub struct Featurizer<'a> {
    index: &'a Index,
    store: &'a PassageStore,
}

struct Parsed {
    q_terms: Vec<String>,
    novel: Vec<String>,
}

impl<'a> Featurizer<'a> {
    pub fn new(index: &'a Index, store: &'a PassageStore) -> Self {
        Featurizer { index, store }
    }

    pub fn index(&self) -> &'a Index {
        self.index
    }

    pub fn store(&self) -> &'a PassageStore {
        self.store
    }

    fn ri_values(&self, question: &str, expansion: &str) -> (Vec<f64>, Parsed) {
        let q_terms = distinct(self.index.analyze(question));
        let e_terms = distinct(self.index.analyze(expansion));
        let q_set: HashSet<&str> = q_terms.iter().map(String::as_str).collect();
        let novel: Vec<String> = e_terms
            .iter()
            .filter(|t| !q_set.contains(t.as_str()))
            .cloned()
            .collect();

        let overlap = share(&e_terms, &q_set);
        let novel_frac = if e_terms.is_empty() { 0.0 } else { 1.0 - overlap };
        let idfs: Vec<f64> = novel.iter().map(|t| self.index.idf(t)).collect();
        let idf_max = idfs.iter().copied().fold(0.0, f64::max);
        let idf_mean = if idfs.is_empty() {
            0.0
        } else {
            idfs.iter().sum::<f64>() / idfs.len() as f64
        };

        let e_norm = normalize(expansion);
        let numeric = e_norm
            .tokens
            .iter()
            .filter(|t| t.chars().all(|c| c.is_numeric()))
            .count();
        let capitalized = raw_tokens(expansion)
            .iter()
            .filter(|t| t.chars().next().is_some_and(char::is_uppercase))
            .count();
        let qg = trigrams(&normalize(question).joined());
        let eg = trigrams(&e_norm.joined());
        let union = qg.union(&eg).count();
        let jaccard = if union == 0 {
            0.0
        } else {
            qg.intersection(&eg).count() as f64 / union as f64
        };

        let values = vec![
            e_norm.len() as f64,
            overlap,
            novel_frac,
            idf_max,
            idf_mean,
            numeric as f64,
            capitalized as f64,
            jaccard,
            1.0,
        ];
        (values, Parsed { q_terms, novel })
    }

    pub fn ri(&self, question: &str, expansion: &str) -> FeatureVector {
        FeatureVector {
            schema: RI_SCHEMA,
            values: self.ri_values(question, expansion).0,
        }
    }

    fn rd_block(&self, parsed: &Parsed, top1: Option<(&Passage, f64)>, runner_up: Option<f64>) -> [f64; 6] {
        let Some((d, d_score)) = top1 else {
            return [0.0; 6];
        };
        let d_terms = self.index.analyze(&indexed_text(d, self.index.params()));
        let d_set: HashSet<&str> = d_terms.iter().map(String::as_str).collect();
        let novel_in_d = parsed
            .novel
            .iter()
            .filter(|t| d_set.contains(t.as_str()))
            .map(|t| self.index.idf(t))
            .fold(0.0, f64::max);
        let margin = runner_up.is_none_or(|s| d_score > s);
        [
            d_score,
            share(&parsed.novel, &d_set),
            share(&parsed.q_terms, &d_set),
            d_terms.len() as f64,
            if margin { 1.0 } else { 0.0 },
            novel_in_d,
        ]
    }

    /// RD features from the expanded query's top-2 retrieval.
    pub fn rd_from_hits(&self, question: &str, expansion: &str, hits: &RankedList) -> Result<FeatureVector> {
        let (mut values, parsed) = self.ri_values(question, expansion);
        let top1 = match hits.entries().first() {
            Some(e) => Some((self.store.require(&e.pid)?, e.score)),
            None => None,
        };
        let runner_up = hits.entries().get(1).map(|e| e.score);
        values.extend(self.rd_block(&parsed, top1, runner_up));
        Ok(FeatureVector {
            schema: RD_SCHEMA,
            values,
        })
    }

    /// RD features for a given top-1 passage `d` of `question + " " + expansion`.
    pub fn rd(&self, question: &str, expansion: &str, d: &Passage) -> Result<FeatureVector> {
        let query = self.index.analyze(&expanded_query(question, expansion));
        let d_score = self.index.bm25_score(&query, &d.id)?;
        let runner_up = self
            .index
            .search_terms(&query, 2)
            .entries()
            .iter()
            .find(|e| e.pid != d.id)
            .map(|e| e.score);
        let (mut values, parsed) = self.ri_values(question, expansion);
        values.extend(self.rd_block(&parsed, Some((d, d_score)), runner_up));
        Ok(FeatureVector {
            schema: RD_SCHEMA,
            values,
        })
    }

    pub fn rd_missing(&self, question: &str, expansion: &str) -> FeatureVector {
        let (mut values, parsed) = self.ri_values(question, expansion);
        values.extend(self.rd_block(&parsed, None, None));
        FeatureVector {
            schema: RD_SCHEMA,
            values,
        }
    }
}
