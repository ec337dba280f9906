//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every criterion reports even when an
//! earlier one fails; the process exits nonzero if any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ear_core::corpus::AnswerMatcher;
use ear_core::eval::{bench_latency, format_run, min_answer_rank, parse_run, topk_accuracy};
use ear_core::expansion::label_candidates;
use ear_core::pipeline::{fuse, run_dataset, RunContext, StrategyKind, StrategySpec};
use ear_core::planted::{PlantedConfig, PlantedFixture};
use ear_core::ranked::{RankedEntry, RankedList};
use ear_core::reranker::{rank_loss, select_best, RerankerSet};
use ear_core::{build_index, Bm25Params, Index, PassageStore};
use rand::Rng;

use common::{brute_force_bm25, check_against_oracle, planted, random_corpus, random_query, seeded, Planted};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;
type LossCase = (&'static [f64], &'static [u32], f64, f64, &'static [f64]);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if let false = $cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, start: Instant) -> Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    ensure!(
        secs < limit.as_secs_f64(),
        "took {secs:.1}s, limit {}s",
        limit.as_secs()
    );
    Ok(secs)
}

fn bm25_oracle() -> Outcome {
    let start = Instant::now();
    let params = Bm25Params::default();
    let mut rng = seeded(1);
    let mut checked = 0;
    for (docs, vocab) in [(10, 8), (200, 40), (1000, 120)] {
        let passages = random_corpus(&mut rng, docs, vocab);
        let store = PassageStore::new(passages.clone()).map_err(|e| e.to_string())?;
        let index = build_index(&store, params).map_err(|e| e.to_string())?;
        let reloaded = Index::from_bytes(&index.to_bytes()).map_err(|e| e.to_string())?;
        for _ in 0..100 {
            let q = random_query(&mut rng, vocab);
            let want = brute_force_bm25(&passages, &q, 100, &params);
            for idx in [&index, &reloaded] {
                let got: Vec<(String, f64)> = idx
                    .search(&q, 100)
                    .entries()
                    .iter()
                    .map(|e| (e.pid.clone(), e.score))
                    .collect();
                check_against_oracle(&got, &want, 1e-9).map_err(|e| format!("{docs} docs, query {q:?}: {e}"))?;
            }
            checked += 1;
        }
    }
    let secs = within(Duration::from_secs(30), start)?;
    Ok(format!("{checked} queries match the brute-force scorer, {secs:.1}s"))
}

/// Direct pair enumeration, kept apart from the library implementation.
fn pairwise_loss(scores: &[f64], ranks: &[u32], alpha: f64) -> f64 {
    let mut loss = 0.0;
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if ranks[i] < ranks[j] {
                loss += (scores[i] - scores[j] + (ranks[j] - ranks[i]) as f64 * alpha).max(0.0);
            }
        }
    }
    loss
}

fn near_kink(scores: &[f64], ranks: &[u32], alpha: f64, margin: f64) -> bool {
    (0..scores.len()).any(|i| {
        (0..scores.len()).any(|j| {
            ranks[i] < ranks[j] && (scores[i] - scores[j] + (ranks[j] - ranks[i]) as f64 * alpha).abs() < margin
        })
    })
}

fn rank_loss_correctness() -> Outcome {
    // (scores, ranks, alpha, loss, gradient)
    let cases: [LossCase; 3] = [
        (&[0.0, 0.0], &[1, 3], 0.5, 1.0, &[1.0, -1.0]),
        (&[-2.0, 0.0], &[1, 3], 0.5, 0.0, &[0.0, 0.0]),
        (&[3.0, -1.0, 0.5], &[7, 7, 7], 0.5, 0.0, &[0.0, 0.0, 0.0]),
    ];
    for (scores, ranks, alpha, loss, grad) in cases {
        let (l, g) = rank_loss(scores, ranks, alpha);
        ensure!(
            l == loss && g == grad,
            "{scores:?} {ranks:?}: got ({l}, {g:?}), want ({loss}, {grad:?})"
        );
    }

    let mut rng = seeded(2);
    let alpha = 0.01;
    let h = 1e-6;
    let mut instances = 0;
    while instances < 100 {
        let n = rng.random_range(1..=50);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ranks: Vec<u32> = (0..n).map(|_| rng.random_range(1..=101)).collect();
        if near_kink(&scores, &ranks, alpha, 1e-4) {
            continue;
        }
        let (loss, grad) = rank_loss(&scores, &ranks, alpha);
        let direct = pairwise_loss(&scores, &ranks, alpha);
        ensure!(
            (loss - direct).abs() <= 1e-9 * direct.max(1.0),
            "loss {loss} vs direct {direct}"
        );
        for i in 0..n {
            let mut up = scores.clone();
            let mut down = scores.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (pairwise_loss(&up, &ranks, alpha) - pairwise_loss(&down, &ranks, alpha)) / (2.0 * h);
            ensure!(
                (grad[i] - fd).abs() <= 1e-4 * grad[i].abs().max(1.0),
                "instance {instances}, coordinate {i}: analytic {} vs finite difference {fd}",
                grad[i]
            );
        }
        instances += 1;
    }
    Ok(format!(
        "worked cases exact; gradients match on {instances} random instances"
    ))
}

fn ctx(p: &Planted) -> RunContext<'_> {
    RunContext::new(&p.index, &p.store, &p.candidates).with_passage_scorer(&p.pr)
}

fn run(p: &Planted, spec: &StrategySpec, models: Option<&RerankerSet>) -> Result<BTreeMap<String, RankedList>, String> {
    let mut c = ctx(p);
    c.models = models;
    let out = run_dataset(spec, &c, &p.fixture.test, 1).map_err(|e| e.to_string())?;
    ensure!(
        out.errors.is_empty(),
        "{} questions failed: {:?}",
        out.errors.len(),
        out.errors.values().next()
    );
    Ok(out.runs)
}

fn top(p: &Planted, runs: &BTreeMap<String, RankedList>, k: usize) -> Result<f64, String> {
    let report = topk_accuracy(runs, &p.fixture.test, &p.store, &[k], "run").map_err(|e| e.to_string())?;
    Ok(100.0 * report.at(k).unwrap())
}

fn hits(p: &Planted, runs: &BTreeMap<String, RankedList>, k: usize) -> Vec<bool> {
    p.fixture
        .test
        .iter()
        .map(|q| min_answer_rank(&runs[&q.qid], &p.store, &AnswerMatcher::new(&q.answers)).is_some_and(|r| r <= k))
        .collect()
}

fn strategy(kind: StrategyKind) -> StrategySpec {
    StrategySpec::new(kind)
}

fn oracle_gap() -> Outcome {
    let start = Instant::now();
    let p = planted();
    let greedy = top(p, &run(p, &strategy(StrategyKind::Greedy), None)?, 5)?;
    let concat = top(p, &run(p, &strategy(StrategyKind::Concat), None)?, 5)?;
    let oracle = top(p, &run(p, &strategy(StrategyKind::Oracle), None)?, 5)?;
    let secs = within(Duration::from_secs(60), start)?;
    let detail = format!("top-5 oracle {oracle:.1}, greedy {greedy:.1}, concat {concat:.1}, {secs:.1}s");
    ensure!(oracle - greedy >= 20.0, "oracle gap too small: {detail}");
    ensure!(concat <= greedy + 5.0, "concat too strong: {detail}");
    Ok(detail)
}

fn ordering() -> Outcome {
    let p = planted();
    let greedy = top(p, &run(p, &strategy(StrategyKind::Greedy), None)?, 5)?;
    let ri = top(p, &run(p, &strategy(StrategyKind::EarRi), Some(&p.ri))?, 5)?;
    let rd_runs = run(p, &strategy(StrategyKind::EarRd), Some(&p.rd))?;
    let rd = top(p, &rd_runs, 5)?;
    let oracle_runs = run(p, &strategy(StrategyKind::Oracle), None)?;
    let detail = format!("top-5 rd {rd:.1}, ri {ri:.1}, greedy {greedy:.1}");
    ensure!(rd >= ri && ri >= greedy, "order violated: {detail}");
    ensure!(rd - greedy >= 10.0, "rd gain too small: {detail}");

    let mut violations = 0;
    for k in [1, 5, 20, 100] {
        let rd_hits = hits(p, &rd_runs, k);
        let oracle_hits = hits(p, &oracle_runs, k);
        violations += rd_hits.iter().zip(&oracle_hits).filter(|(r, o)| **r && !**o).count();
    }
    let model = p.rd.for_tag(None).map_err(|e| e.to_string())?;
    let featurizer = p.featurizer();
    for q in &p.fixture.test {
        let set = &p.fixture.expansions[&q.qid];
        let chosen = select_best(model, &featurizer, q, set).map_err(|e| e.to_string())?;
        let labels = label_candidates(&p.index, &p.store, q, set, 100, 101).labels;
        let best = labels.iter().map(|l| l.rank).min().unwrap();
        if labels[chosen.index].rank < best {
            violations += 1;
        }
    }
    ensure!(violations == 0, "{violations} dominance violations");
    Ok(format!("{detail}; 0 dominance violations"))
}

fn candidate_trend() -> Outcome {
    let p = planted();
    let ns = [1, 5, 10, 20, 30, 50];
    let mut prev: Option<Vec<usize>> = None;
    let mut accs = Vec::new();
    let mut violations = 0;
    for n in ns {
        let mut s = strategy(StrategyKind::Oracle);
        s.cap_n = Some(n);
        let runs = run(p, &s, None)?;
        let ranks: Vec<usize> = p
            .fixture
            .test
            .iter()
            .map(|q| min_answer_rank(&runs[&q.qid], &p.store, &AnswerMatcher::new(&q.answers)).unwrap_or(usize::MAX))
            .collect();
        if let Some(prev) = &prev {
            violations += prev.iter().zip(&ranks).filter(|(a, b)| b > a).count();
        }
        prev = Some(ranks);
        accs.push(top(p, &runs, 5)?);
    }
    ensure!(
        violations == 0,
        "{violations} per-question oracle regressions as N grows"
    );
    ensure!(
        accs.windows(2).all(|w| w[0] <= w[1]),
        "oracle top-5 not monotone in N: {accs:?}"
    );
    let rd_at = |n| {
        let mut s = strategy(StrategyKind::EarRd);
        s.cap_n = Some(n);
        top(p, &run(p, &s, Some(&p.rd))?, 5)
    };
    let (rd5, rd50) = (rd_at(5)?, rd_at(50)?);
    ensure!(rd50 >= rd5, "ear_rd top-5 at N=50 {rd50:.1} < at N=5 {rd5:.1}");
    Ok(format!(
        "oracle top-5 over N {ns:?}: {accs:?}; ear_rd N=5 {rd5:.1}, N=50 {rd50:.1}"
    ))
}

fn passage_reranking() -> Outcome {
    let p = planted();
    let mut changed = Vec::new();
    for (kind, models) in [
        (StrategyKind::Bm25, None),
        (StrategyKind::Greedy, None),
        (StrategyKind::EarRd, Some(&p.rd)),
    ] {
        let plain = run(p, &strategy(kind), models)?;
        let mut s = strategy(kind);
        s.pr_depth = Some(100);
        let reranked = run(p, &s, models)?;
        if hits(p, &plain, 100) != hits(p, &reranked, 100) {
            changed.push(kind.as_str());
        }
    }
    ensure!(changed.is_empty(), "top-100 hits changed by reranking for {changed:?}");

    let with_pr = |kind, models| {
        let mut s = strategy(kind);
        s.pr_depth = Some(100);
        top(p, &run(p, &s, models)?, 5)
    };
    let rd = top(p, &run(p, &strategy(StrategyKind::EarRd), Some(&p.rd))?, 5)?;
    let rd_pr = with_pr(StrategyKind::EarRd, Some(&p.rd))?;
    let greedy_pr = with_pr(StrategyKind::Greedy, None)?;
    let detail = format!("top-5 rd+pr {rd_pr:.1}, rd {rd:.1}, greedy+pr {greedy_pr:.1}");
    ensure!(rd_pr >= rd.max(greedy_pr), "{detail}");
    Ok(format!("top-100 unchanged; {detail}"))
}

fn list(qid: &str, ids: &[&str]) -> RankedList {
    let entries = ids
        .iter()
        .enumerate()
        .map(|(i, id)| RankedEntry {
            pid: id.to_string(),
            score: (ids.len() - i) as f64,
        })
        .collect();
    RankedList::new(qid, "run", entries).unwrap()
}

fn ids(l: &RankedList) -> Vec<&str> {
    l.ids().collect()
}

fn fusion() -> Outcome {
    let s = list("q", &["s1", "s2", "s3"]);
    let a = list("q", &["a1", "a2", "a3"]);
    let t = list("q", &["t1", "t2", "t3"]);
    let f = fuse(&[s.clone(), a, t.clone()], 9).map_err(|e| e.to_string())?;
    let want = ["s1", "a1", "t1", "s2", "a2", "t2", "s3", "a3", "t3"];
    ensure!(ids(&f) == want, "disjoint fusion gave {:?}", ids(&f));

    let dup = list("q", &["s1", "a2", "a3"]);
    let f = fuse(&[s, dup, t], 5).map_err(|e| e.to_string())?;
    ensure!(
        ids(&f) == ["s1", "t1", "s2", "a2", "t2"],
        "duplicate skip gave {:?}",
        ids(&f)
    );

    let p = planted();
    let mut s = strategy(StrategyKind::Greedy);
    s.fuse_tags = vec![ear_core::expansion::GeneratorTag::External];
    let runs = run(p, &s, None)?;
    let text = format_run(&runs);
    let back = parse_run(Path::new("fused.trec"), &text).map_err(|e| e.to_string())?;
    ensure!(back == runs, "TREC round trip changed the run");
    ensure!(format_run(&back) == text, "TREC round trip is not byte-stable");
    Ok(format!(
        "interleave and duplicate skip exact; {} fused lists round-trip",
        runs.len()
    ))
}

fn ear(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ear"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "ear {} failed: {}",
        args[0],
        String::from_utf8_lossy(&out.stderr).lines().last().unwrap_or("")
    );
    Ok(())
}

const ARTIFACTS: [&str; 10] = [
    "fx/corpus.jsonl",
    "fx/train.jsonl",
    "fx/test.jsonl",
    "fx/expansions.jsonl",
    "fx.idx",
    "train.jsonl",
    "rd.json",
    "greedy.trec",
    "ear_rd.trec",
    "eval.json",
];

fn cli_pipeline(dir: &Path) -> Result<(), String> {
    let p = |name: &str| dir.join(name).to_str().unwrap().to_owned();
    ear(&["make-planted", "--out-dir", &p("fx")])?;
    let common = [
        "--corpus".to_owned(),
        p("fx/corpus.jsonl"),
        "--index".to_owned(),
        p("fx.idx"),
    ];
    let common: Vec<&str> = common.iter().map(String::as_str).collect();
    let with = |args: &[&str]| -> Vec<String> { args.iter().chain(&common).map(|s| s.to_string()).collect() };
    let call = |args: Vec<String>| ear(&args.iter().map(String::as_str).collect::<Vec<_>>());
    ear(&["index", "--corpus", &p("fx/corpus.jsonl"), "--out", &p("fx.idx")])?;
    call(with(&[
        "make-train",
        "--questions",
        &p("fx/train.jsonl"),
        "--expansions",
        &p("fx/expansions.jsonl"),
        "--out",
        &p("train.jsonl"),
    ]))?;
    call(with(&[
        "train",
        "--train",
        &p("train.jsonl"),
        "--variant",
        "rd",
        "--out",
        &p("rd.json"),
    ]))?;
    for strategy in ["greedy", "ear_rd"] {
        call(with(&[
            "retrieve",
            "--questions",
            &p("fx/test.jsonl"),
            "--expansions",
            &p("fx/expansions.jsonl"),
            "--model",
            &p("rd.json"),
            "--strategy",
            strategy,
            "--out",
            &p(&format!("{strategy}.trec")),
        ]))?;
    }
    ear(&[
        "eval",
        "--corpus",
        &p("fx/corpus.jsonl"),
        "--questions",
        &p("fx/test.jsonl"),
        "--run",
        &p("greedy.trec"),
        &p("ear_rd.trec"),
        "--format",
        "json",
        "--out",
        &p("eval.json"),
    ])
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    cli_pipeline(a.path())?;
    cli_pipeline(b.path())?;
    let mut bytes = 0;
    for name in ARTIFACTS {
        let x = fs::read(a.path().join(name)).map_err(|e| format!("{name}: {e}"))?;
        let y = fs::read(b.path().join(name)).map_err(|e| format!("{name}: {e}"))?;
        ensure!(x == y, "{name} differs between runs");
        bytes += x.len();
    }
    Ok(format!("{} artifacts ({bytes} bytes) byte-identical", ARTIFACTS.len()))
}

fn latency() -> Outcome {
    let p = planted();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("bench.idx");
    let queries = &p.fixture.test[..100];
    let bench = |kind, models| {
        let mut c = ctx(p);
        c.models = Some(models);
        bench_latency(&strategy(kind), &c, queries, 1, &path).map_err(|e| e.to_string())
    };
    let ri = bench(StrategyKind::EarRi, &p.ri)?;
    let rd = bench(StrategyKind::EarRd, &p.rd)?;
    for r in [&ri, &rd] {
        let stages = [
            r.index_build_seconds,
            r.query_expand_seconds,
            r.query_rerank_seconds,
            r.retrieval_seconds,
        ];
        ensure!(
            stages.iter().all(|s| s.is_finite() && *s > 0.0) && r.index_bytes > 0,
            "{} report missing a stage: {stages:?}",
            r.strategy
        );
    }
    ensure!(
        rd.query_rerank_seconds > ri.query_rerank_seconds,
        "rd rerank {:.6}s not above ri {:.6}s",
        rd.query_rerank_seconds,
        ri.query_rerank_seconds
    );

    let large = PlantedFixture::generate(&PlantedConfig::large()).map_err(|e| e.to_string())?;
    let corpus = dir.path().join("large");
    let paths = large.write(&corpus).map_err(|e| e.to_string())?;
    let raw = fs::metadata(&paths.corpus).map_err(|e| e.to_string())?.len();
    let store = large.store().map_err(|e| e.to_string())?;
    let index_bytes = build_index(&store, Bm25Params::default())
        .map_err(|e| e.to_string())?
        .save(&path)
        .map_err(|e| e.to_string())?;
    ensure!(
        index_bytes < 10 * raw,
        "index {index_bytes} bytes vs corpus {raw} bytes"
    );
    Ok(format!(
        "rerank s/q rd {:.2e} > ri {:.2e}; {} passages: index {index_bytes} B, corpus {raw} B",
        rd.query_rerank_seconds,
        ri.query_rerank_seconds,
        store.len()
    ))
}

fn main() -> ExitCode {
    let total = Instant::now();
    let criteria: [(&str, Check); 9] = [
        ("bm25 matches brute-force oracle", bm25_oracle),
        ("rank loss values and gradients", rank_loss_correctness),
        ("oracle gap over greedy and concat", oracle_gap),
        ("ear_rd >= ear_ri >= greedy, oracle dominance", ordering),
        ("candidate-size trend", candidate_trend),
        ("passage reranking interplay", passage_reranking),
        ("fusion and TREC round trip", fusion),
        ("cli pipeline determinism", determinism),
        ("latency harness and index size", latency),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Err(e.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {} {name}: FAIL ({why}) [{secs:.1}s]", i + 1);
            }
        }
    }
    let secs = total.elapsed().as_secs_f64();
    if secs < 300.0 {
        println!("criterion 10 whole suite under 5 minutes: PASS ({secs:.1}s)");
    } else {
        failed += 1;
        println!("criterion 10 whole suite under 5 minutes: FAIL ({secs:.1}s)");
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
