//! Python bindings: BM25 retrieval, expansion selection, fusion and metrics.

use std::collections::HashMap;

use ear_core::eval::{read_run, topk_accuracy};
use ear_core::expansion::{CandidateSet, ExpansionCandidate, GeneratorTag};
use ear_core::planted::{PlantedConfig, PlantedFixture};
use ear_core::ranked::{RankedEntry, RankedList};
use ear_core::reranker::{self, Featurizer, RerankerSet};
use ear_core::{load_corpus, load_questions, Analyzer, Bm25Params, Index, Passage, PassageStore, QAExample};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(err: ear_core::Error) -> PyErr {
    match err {
        ear_core::Error::Io { .. } => PyIOError::new_err(err.to_string()),
        ear_core::Error::Parse { .. }
        | ear_core::Error::DuplicateId(_)
        | ear_core::Error::EmptyStore
        | ear_core::Error::UnknownPassage(_)
        | ear_core::Error::Invalid(_)
        | ear_core::Error::SchemaMismatch { .. }
        | ear_core::Error::MissingAnswers(_)
        | ear_core::Error::NoCandidates(_) => PyValueError::new_err(err.to_string()),
        _ => PyRuntimeError::new_err(err.to_string()),
    }
}

fn pairs(list: &RankedList) -> Vec<(String, f64)> {
    list.entries().iter().map(|e| (e.pid.clone(), e.score)).collect()
}

/// A passage collection with its BM25 index.
#[pyclass(module = "ear_py")]
struct Retriever {
    store: PassageStore,
    index: Index,
}

#[pymethods]
impl Retriever {
    /// Builds an index over `(id, title, text)` tuples.
    #[new]
    #[pyo3(signature = (passages, k1=0.9, b=0.4, stemming=true, stopwords=true, index_titles=false))]
    fn new(
        passages: Vec<(String, String, String)>,
        k1: f64,
        b: f64,
        stemming: bool,
        stopwords: bool,
        index_titles: bool,
    ) -> PyResult<Self> {
        let store = PassageStore::new(
            passages
                .into_iter()
                .map(|(id, title, text)| Passage { id, title, text })
                .collect(),
        )
        .map_err(to_py)?;
        let params = Bm25Params {
            k1,
            b,
            analyzer: Analyzer { stemming, stopwords },
            index_titles,
        };
        let index = ear_core::build_index(&store, params).map_err(to_py)?;
        Ok(Retriever { store, index })
    }

    /// Loads a JSONL corpus, plus a persisted index when given (else builds one).
    #[staticmethod]
    #[pyo3(signature = (corpus, index=None))]
    fn open(corpus: &str, index: Option<&str>) -> PyResult<Self> {
        let store = load_corpus(corpus).map_err(to_py)?;
        let index = match index {
            Some(p) => Index::load(p).map_err(to_py)?,
            None => ear_core::build_index(&store, Bm25Params::default()).map_err(to_py)?,
        };
        if index.doc_count() != store.len() {
            return Err(PyValueError::new_err("index and corpus hold different passages"));
        }
        Ok(Retriever { store, index })
    }

    fn __len__(&self) -> usize {
        self.index.doc_count()
    }

    /// Writes the index file and returns its size in bytes.
    fn save_index(&self, path: &str) -> PyResult<u64> {
        self.index.save(path).map_err(to_py)
    }

    /// Top-`k` `(passage_id, score)` pairs.
    #[pyo3(signature = (query, k=100))]
    fn search(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        pairs(&self.index.search(query, k))
    }

    fn analyze(&self, text: &str) -> Vec<String> {
        self.index.analyze(text)
    }

    fn text(&self, pid: &str) -> Option<String> {
        self.store.get(pid).map(|p| p.text.clone())
    }
}

/// A trained query reranker (`ri` or `rd`).
#[pyclass(module = "ear_py")]
struct QueryReranker {
    models: RerankerSet,
}

#[pymethods]
impl QueryReranker {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(QueryReranker {
            models: RerankerSet::load(path).map_err(to_py)?,
        })
    }

    #[getter]
    fn variant(&self) -> Option<String> {
        self.models.variant().map(|v| format!("{v:?}").to_lowercase())
    }

    /// Index and predicted score of the best expansion (lowest score wins).
    #[pyo3(signature = (retriever, question, expansions, tag="external"))]
    fn select(
        &self,
        retriever: &Retriever,
        question: &str,
        expansions: Vec<String>,
        tag: &str,
    ) -> PyResult<(usize, f64)> {
        let tag: GeneratorTag = tag.parse().map_err(to_py)?;
        let set = CandidateSet::new(
            "q",
            expansions
                .into_iter()
                .map(|text| ExpansionCandidate {
                    text,
                    generator_tag: tag,
                    sample_seed: 0,
                })
                .collect(),
        );
        let model = self.models.for_tag(Some(tag)).map_err(to_py)?;
        let featurizer = Featurizer::new(&retriever.index, &retriever.store);
        let qa = QAExample {
            qid: "q".into(),
            question: question.into(),
            answers: Vec::new(),
        };
        let chosen = reranker::select_best(model, &featurizer, &qa, &set).map_err(to_py)?;
        Ok((chosen.index, chosen.score))
    }
}

/// Pairwise hinge ranking loss and its gradient with respect to `scores`.
#[pyfunction]
#[pyo3(signature = (scores, ranks, alpha=0.01))]
fn rank_loss(scores: Vec<f64>, ranks: Vec<u32>, alpha: f64) -> PyResult<(f64, Vec<f64>)> {
    if scores.len() != ranks.len() || scores.is_empty() {
        return Err(PyValueError::new_err(
            "scores and ranks must be non-empty and the same length",
        ));
    }
    Ok(reranker::rank_loss(&scores, &ranks, alpha))
}

/// Round-robin fusion of ranked `(passage_id, score)` lists, first list first.
#[pyfunction]
#[pyo3(signature = (lists, k=100))]
fn fuse(lists: Vec<Vec<(String, f64)>>, k: usize) -> PyResult<Vec<(String, f64)>> {
    let lists = lists
        .into_iter()
        .map(|l| {
            let entries = l.into_iter().map(|(pid, score)| RankedEntry { pid, score }).collect();
            RankedList::new("q", "run", entries)
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    Ok(pairs(&ear_core::pipeline::fuse(&lists, k).map_err(to_py)?))
}

/// Top-k answer accuracy of a TREC run file, keyed by k.
#[pyfunction]
#[pyo3(signature = (run, questions, corpus, ks=vec![1, 5, 20, 100]))]
fn evaluate(run: &str, questions: &str, corpus: &str, ks: Vec<usize>) -> PyResult<HashMap<usize, f64>> {
    let store = load_corpus(corpus).map_err(to_py)?;
    let qa = load_questions(questions, true).map_err(to_py)?;
    let runs = read_run(run).map_err(to_py)?;
    let report = topk_accuracy(&runs, &qa, &store, &ks, "run").map_err(to_py)?;
    Ok(report.accuracy.into_iter().collect())
}

/// Writes the synthetic planted fixture and returns its file paths.
#[pyfunction]
#[pyo3(signature = (out_dir, questions=400, seed=0))]
fn make_planted(out_dir: &str, questions: usize, seed: u64) -> PyResult<HashMap<&'static str, String>> {
    let cfg = PlantedConfig {
        questions,
        seed,
        ..PlantedConfig::default()
    };
    let fixture = PlantedFixture::generate(&cfg).map_err(to_py)?;
    let paths = fixture.write(out_dir).map_err(to_py)?;
    Ok(HashMap::from([
        ("corpus", paths.corpus.display().to_string()),
        ("train", paths.train.display().to_string()),
        ("test", paths.test.display().to_string()),
        ("expansions", paths.expansions.display().to_string()),
    ]))
}

#[pymodule]
pub fn ear_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Retriever>()?;
    m.add_class::<QueryReranker>()?;
    m.add_function(wrap_pyfunction!(rank_loss, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(make_planted, m)?)?;
    Ok(())
}
