//! Text normalization and the BM25 analyzer.
//!
//! [`normalize`] is the answer-matching tokenizer: NFKC, lowercase, split on
//! anything that is not alphanumeric. [`Analyzer`] layers English stopword
//! removal and Porter stemming on top of it for indexing and querying.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// Lucene's default English stop set.
pub const ENGLISH_STOPWORDS: [&str; 33] = [
    "a", "an", "and", "are", "as", "at", "be", "but", "by", "for", "if", "in", "into", "is", "it", "no", "not", "of",
    "on", "or", "such", "that", "the", "their", "then", "there", "these", "they", "this", "to", "was", "will", "with",
];

/// Ordered lowercase terms produced by [`normalize`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NormalizedText {
    pub tokens: Vec<String>,
}

impl NormalizedText {
    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn joined(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Lowercase, compatibility-normalize and split on non-alphanumeric boundaries.
pub fn normalize(raw: &str) -> NormalizedText {
    NormalizedText {
        tokens: tokenize(raw).collect(),
    }
}

fn tokenize(raw: &str) -> impl Iterator<Item = String> {
    // NFKC again after lowercasing: a few characters lowercase into
    // sequences that are not in composed form.
    let folded: String = raw.nfkc().collect::<String>().to_lowercase().nfkc().collect();
    folded
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect::<Vec<_>>()
        .into_iter()
}

/// Raw tokens before lowercasing, used by features that look at casing.
pub(crate) fn raw_tokens(raw: &str) -> Vec<String> {
    let folded: String = raw.nfkc().collect();
    folded
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

pub fn is_stopword(token: &str) -> bool {
    ENGLISH_STOPWORDS.binary_search(&token).is_ok()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Analyzer {
    pub stemming: bool,
    pub stopwords: bool,
}

impl Default for Analyzer {
    fn default() -> Self {
        Analyzer {
            stemming: true,
            stopwords: true,
        }
    }
}

impl Analyzer {
    /// Index/query terms for `raw`: normalized tokens minus stopwords, stemmed.
    pub fn analyze(&self, raw: &str) -> Vec<String> {
        self.analyze_tokens(tokenize(raw))
    }

    pub fn analyze_tokens<I>(&self, tokens: I) -> Vec<String>
    where
        I: IntoIterator,
        I::Item: AsRef<str>,
    {
        tokens
            .into_iter()
            .filter(|t| !(self.stopwords && is_stopword(t.as_ref())))
            .map(|t| {
                if self.stemming {
                    porter_stemmer::stem(t.as_ref())
                } else {
                    t.as_ref().to_owned()
                }
            })
            .filter(|t| !t.is_empty())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(raw: &str) -> Vec<String> {
        normalize(raw).tokens
    }

    #[test]
    fn normalizes_question() {
        assert_eq!(
            toks("Where do they grow hops in the US?"),
            ["where", "do", "they", "grow", "hops", "in", "the", "us"]
        );
        assert!(normalize("").is_empty());
        assert_eq!(toks("Deadpool-2 (2018)"), ["deadpool", "2", "2018"]);
    }

    #[test]
    fn compatibility_forms_fold() {
        assert_eq!(toks("ﬁve Ｆｕｌｌ"), ["five", "full"]);
    }

    #[test]
    fn stopword_table_is_sorted() {
        let mut sorted = ENGLISH_STOPWORDS;
        sorted.sort_unstable();
        assert_eq!(sorted, ENGLISH_STOPWORDS);
    }

    #[test]
    fn analyzer_drops_stopwords_and_stems() {
        let a = Analyzer::default();
        assert_eq!(
            a.analyze("Where do they grow hops in the US?"),
            ["where", "do", "grow", "hop", "us"]
        );
        let plain = Analyzer {
            stemming: false,
            stopwords: false,
        };
        assert_eq!(plain.analyze("the hops"), ["the", "hops"]);
        assert!(a.analyze("the and of").is_empty());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in "\\PC{0,40}") {
            let once = normalize(&raw);
            prop_assert_eq!(normalize(&once.joined()), once);
        }

        #[test]
        fn tokens_are_clean(raw in "\\PC{0,40}") {
            for t in normalize(&raw).tokens {
                prop_assert!(!t.is_empty());
                prop_assert!(!t.chars().any(char::is_whitespace));
            }
        }
    }
}
