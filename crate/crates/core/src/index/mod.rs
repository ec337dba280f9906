//! Inverted index with Okapi BM25 scoring.
//!
//! Documents are numbered by ascending passage id, so postings are sorted by
//! passage id and score ties resolve to the smaller id for free.

mod persist;
mod search;

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Passage, PassageStore};
use crate::error::{Error, Result};
use crate::text::Analyzer;

pub use persist::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
    pub analyzer: Analyzer,
    /// Prepend the passage title to the indexed body.
    #[serde(default)]
    pub index_titles: bool,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: 0.9,
            b: 0.4,
            analyzer: Analyzer::default(),
            index_titles: false,
        }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(Error::invalid(format!("k1 must be positive, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(Error::invalid(format!("b must lie in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone)]
pub struct Index {
    params: Bm25Params,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_length: f64,
    terms: Vec<String>,
    postings: Vec<Vec<Posting>>,
    term_lookup: HashMap<String, u32>,
    doc_lookup: HashMap<String, u32>,
}

/// Okapi IDF with the +1 inside the log, which keeps it positive.
pub fn idf(doc_count: usize, df: usize) -> f64 {
    let n = doc_count as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

/// Scores are summed in fixed point (2^-40 resolution) so that a total does
/// not depend on the order of its terms: passages whose matched term
/// weights form the same multiset tie exactly.
const SCORE_SCALE: f64 = (1u64 << 40) as f64;

pub(crate) fn quantize(weight: f64) -> u64 {
    (weight * SCORE_SCALE).round() as u64
}

pub(crate) fn dequantize(score: u64) -> f64 {
    score as f64 / SCORE_SCALE
}

pub(crate) fn indexed_text(p: &Passage, params: &Bm25Params) -> String {
    if params.index_titles && !p.title.is_empty() {
        format!("{} {}", p.title, p.text)
    } else {
        p.text.clone()
    }
}

pub fn build_index(store: &PassageStore, params: Bm25Params) -> Result<Index> {
    params.validate()?;
    if store.is_empty() {
        return Err(Error::EmptyStore);
    }
    let mut docs: Vec<&Passage> = store.passages().iter().collect();
    docs.sort_by(|a, b| a.id.cmp(&b.id));

    let analyzed: Vec<Vec<String>> = docs
        .par_iter()
        .map(|p| params.analyzer.analyze(&indexed_text(p, &params)))
        .collect();

    let mut by_term: BTreeMap<&str, Vec<Posting>> = BTreeMap::new();
    let mut doc_lengths = Vec::with_capacity(docs.len());
    for (doc, terms) in analyzed.iter().enumerate() {
        doc_lengths.push(terms.len() as u32);
        let mut counts: BTreeMap<&str, u32> = BTreeMap::new();
        for t in terms {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        for (t, tf) in counts {
            by_term.entry(t).or_default().push(Posting { doc: doc as u32, tf });
        }
    }
    let (terms, postings): (Vec<String>, Vec<Vec<Posting>>) =
        by_term.into_iter().map(|(t, p)| (t.to_owned(), p)).unzip();
    let doc_ids = docs.iter().map(|p| p.id.clone()).collect();
    Ok(Index::assemble(params, doc_ids, doc_lengths, terms, postings))
}

impl Index {
    fn assemble(
        params: Bm25Params,
        doc_ids: Vec<String>,
        doc_lengths: Vec<u32>,
        terms: Vec<String>,
        postings: Vec<Vec<Posting>>,
    ) -> Index {
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avg_doc_length = if doc_lengths.is_empty() {
            0.0
        } else {
            total as f64 / doc_lengths.len() as f64
        };
        let term_lookup = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let doc_lookup = doc_ids.iter().enumerate().map(|(i, d)| (d.clone(), i as u32)).collect();
        Index {
            params,
            doc_ids,
            doc_lengths,
            avg_doc_length,
            terms,
            postings,
            term_lookup,
            doc_lookup,
        }
    }

    pub fn params(&self) -> &Bm25Params {
        &self.params
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    /// Passage ids in internal (ascending) order.
    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn doc_length(&self, pid: &str) -> Option<u32> {
        self.doc_lookup.get(pid).map(|&d| self.doc_lengths[d as usize])
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.terms
            .iter()
            .map(String::as_str)
            .zip(self.postings.iter().map(Vec::as_slice))
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.term_lookup
            .get(term)
            .map(|&t| self.postings[t as usize].as_slice())
            .unwrap_or(&[])
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        idf(self.doc_count(), self.df(term))
    }

    /// Query/document terms under this index's analyzer.
    pub fn analyze(&self, text: &str) -> Vec<String> {
        self.params.analyzer.analyze(text)
    }

    fn term_weight(&self, idf: f64, tf: u32, doc_length: u32) -> f64 {
        let Bm25Params { k1, b, .. } = self.params;
        let tf = tf as f64;
        let length_ratio = if self.avg_doc_length > 0.0 {
            doc_length as f64 / self.avg_doc_length
        } else {
            1.0
        };
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * length_ratio))
    }

    /// BM25 score of passage `pid` for already-analyzed query terms.
    /// Repeated query terms count once per occurrence.
    pub fn bm25_score<S: AsRef<str>>(&self, query_terms: &[S], pid: &str) -> Result<f64> {
        let doc = *self
            .doc_lookup
            .get(pid)
            .ok_or_else(|| Error::UnknownPassage(pid.to_owned()))?;
        let dl = self.doc_lengths[doc as usize];
        let mut score = 0u64;
        for term in query_terms {
            let postings = self.postings(term.as_ref());
            if let Ok(i) = postings.binary_search_by_key(&doc, |p| p.doc) {
                let w = self.term_weight(idf(self.doc_count(), postings.len()), postings[i].tf, dl);
                score = score.saturating_add(quantize(w));
            }
        }
        Ok(dequantize(score))
    }

    /// Structural checks: sorted postings, valid references, consistent mean length.
    pub fn check_invariants(&self) -> Result<()> {
        let n = self.doc_count() as u32;
        for (term, postings) in self.terms() {
            if postings.is_empty() {
                return Err(Error::IndexFormat(format!("term {term} has no postings")));
            }
            if postings.iter().any(|p| p.doc >= n || p.tf == 0) {
                return Err(Error::IndexFormat(format!("term {term} has an invalid posting")));
            }
            if postings.windows(2).any(|w| w[0].doc >= w[1].doc) {
                return Err(Error::IndexFormat(format!("postings for {term} are not sorted")));
            }
        }
        if self.doc_ids.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::IndexFormat("document ids are not strictly ascending".into()));
        }
        Ok(())
    }
}
