use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::{dequantize, idf, quantize, Index};
use crate::ranked::{RankedEntry, RankedList};

pub const BM25_TAG: &str = "bm25";

#[derive(Debug, Clone, Copy)]
struct Candidate {
    score: u64,
    doc: u32,
}

// Greater means better: higher score, then smaller doc ordinal.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score.cmp(&other.score).then_with(|| other.doc.cmp(&self.doc))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl Index {
    /// Top-`k` passages for `query_text`; only positively scoring passages are returned.
    pub fn search(&self, query_text: &str, k: usize) -> RankedList {
        self.search_terms(&self.analyze(query_text), k)
    }

    /// Term-at-a-time accumulation followed by a bounded min-heap.
    pub fn search_terms<S: AsRef<str>>(&self, query_terms: &[S], k: usize) -> RankedList {
        let mut acc = vec![0u64; self.doc_count()];
        let mut touched: Vec<u32> = Vec::new();
        for term in query_terms {
            let postings = self.postings(term.as_ref());
            if postings.is_empty() {
                continue;
            }
            let w = idf(self.doc_count(), postings.len());
            for p in postings {
                let q = quantize(self.term_weight(w, p.tf, self.doc_lengths[p.doc as usize]));
                if q == 0 {
                    continue;
                }
                let slot = &mut acc[p.doc as usize];
                if *slot == 0 {
                    touched.push(p.doc);
                }
                *slot = slot.saturating_add(q);
            }
        }

        let mut heap: BinaryHeap<Reverse<Candidate>> = BinaryHeap::with_capacity(k + 1);
        for doc in touched {
            let c = Candidate {
                score: acc[doc as usize],
                doc,
            };
            if heap.len() < k {
                heap.push(Reverse(c));
            } else if let Some(Reverse(worst)) = heap.peek() {
                if c > *worst {
                    heap.pop();
                    heap.push(Reverse(c));
                }
            }
        }
        let mut best: Vec<Candidate> = heap.into_iter().map(|Reverse(c)| c).collect();
        best.sort_unstable_by(|a, b| b.cmp(a));
        let entries = best
            .into_iter()
            .map(|c| RankedEntry {
                pid: self.doc_ids[c.doc as usize].clone(),
                score: dequantize(c.score),
            })
            .collect();
        RankedList::from_sorted("", BM25_TAG, entries)
    }

    /// Searches every query in parallel; output order matches input order.
    pub fn batch_search<S: AsRef<str> + Sync>(&self, queries: &[S], k: usize) -> Vec<RankedList> {
        queries.par_iter().map(|q| self.search(q.as_ref(), k)).collect()
    }
}
