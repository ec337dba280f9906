use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub pid: String,
    pub score: f64,
}

/// Passage ids in rank order with non-increasing scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub qid: String,
    pub tag: String,
    entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn new(qid: impl Into<String>, tag: impl Into<String>, entries: Vec<RankedEntry>) -> Result<Self> {
        let qid = qid.into();
        let mut seen = HashSet::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if !e.score.is_finite() {
                return Err(Error::invalid(format!("{qid}: non-finite score at rank {}", i + 1)));
            }
            if !seen.insert(e.pid.as_str()) {
                return Err(Error::invalid(format!("{qid}: passage {} listed twice", e.pid)));
            }
            if i > 0 && e.score > entries[i - 1].score {
                return Err(Error::invalid(format!("{qid}: score increases at rank {}", i + 1)));
            }
        }
        Ok(RankedList {
            qid,
            tag: tag.into(),
            entries,
        })
    }

    pub(crate) fn from_sorted(qid: impl Into<String>, tag: impl Into<String>, entries: Vec<RankedEntry>) -> Self {
        debug_assert!(entries.windows(2).all(|w| w[0].score >= w[1].score));
        RankedList {
            qid: qid.into(),
            tag: tag.into(),
            entries,
        }
    }

    pub fn empty(qid: impl Into<String>, tag: impl Into<String>) -> Self {
        Self::from_sorted(qid, tag, Vec::new())
    }

    pub fn entries(&self) -> &[RankedEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<RankedEntry> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.pid.as_str())
    }

    pub fn top(&self) -> Option<&RankedEntry> {
        self.entries.first()
    }

    pub fn truncated(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self
    }

    pub fn with_qid(mut self, qid: impl Into<String>) -> Self {
        self.qid = qid.into();
        self
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }
}
