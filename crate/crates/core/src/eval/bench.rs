use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::QAExample;
use crate::error::{Error, Result};
use crate::index::build_index;
use crate::pipeline::{run_strategy_timed, RunContext, StageTimes, StrategySpec};

/// Mean wall-clock seconds per stage. Query stages are per question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub strategy: String,
    pub queries: usize,
    pub repetitions: usize,
    pub index_build_seconds: f64,
    pub index_bytes: u64,
    pub query_expand_seconds: f64,
    pub query_rerank_seconds: f64,
    pub retrieval_seconds: f64,
    /// Question runs that ended in an error (still timed).
    pub failures: usize,
}

impl LatencyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let rows = [
            ("index build (s)", format!("{:.6}", self.index_build_seconds)),
            ("index size (bytes)", self.index_bytes.to_string()),
            ("query expand (s/q)", format!("{:.6}", self.query_expand_seconds)),
            ("query rerank (s/q)", format!("{:.6}", self.query_rerank_seconds)),
            ("retrieval (s/q)", format!("{:.6}", self.retrieval_seconds)),
            ("queries", self.queries.to_string()),
            ("repetitions", self.repetitions.to_string()),
            ("failures", self.failures.to_string()),
        ];
        let mut out = format!("strategy: {}\n", self.strategy);
        for (name, value) in rows {
            out.push_str(&format!("{name:<20} {value:>14}\n"));
        }
        out
    }
}

/// Times an index rebuild (persisted to `index_path`) and every stage of
/// `spec` over `queries`, one question at a time on a single thread.
pub fn bench_latency(
    spec: &StrategySpec,
    ctx: &RunContext<'_>,
    queries: &[QAExample],
    repetitions: usize,
    index_path: &Path,
) -> Result<LatencyReport> {
    if repetitions == 0 {
        return Err(Error::invalid("repetitions must be at least 1"));
    }
    spec.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    pool.install(|| {
        let mut build_seconds = 0.0;
        for _ in 0..repetitions {
            let start = Instant::now();
            let index = build_index(ctx.store, *ctx.index.params())?;
            build_seconds += start.elapsed().as_secs_f64();
            index.save(index_path)?;
        }
        let index_bytes = fs::metadata(index_path).map_err(|e| Error::io(index_path, e))?.len();

        for q in queries.iter().take(10) {
            let _ = run_strategy_timed(spec, ctx, q, &mut StageTimes::default());
        }
        let mut total = StageTimes::default();
        let mut failures = 0;
        for _ in 0..repetitions {
            for q in queries {
                let mut t = StageTimes::default();
                if run_strategy_timed(spec, ctx, q, &mut t).is_err() {
                    failures += 1;
                }
                total.add(&t);
            }
        }
        let measured = (queries.len() * repetitions).max(1) as f64;
        Ok(LatencyReport {
            strategy: spec.run_tag(),
            queries: queries.len(),
            repetitions,
            index_build_seconds: build_seconds / repetitions as f64,
            index_bytes,
            query_expand_seconds: total.expand.as_secs_f64() / measured,
            query_rerank_seconds: total.rerank.as_secs_f64() / measured,
            retrieval_seconds: total.retrieval.as_secs_f64() / measured,
            failures,
        })
    })
}
