use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ear_core::eval::{
    ablate_candidate_size, ablation_csv, bench_latency, format_reports, read_run, reports_csv, topk_accuracy, write_run,
};
use ear_core::expansion::{
    build_training_set, load_training_set, rank_histogram, write_training_set, CandidateGenerator, ConstructionConfig,
    FileCandidates, StubSampler,
};
use ear_core::passage_rerank::{train_passage_reranker, PRTrainConfig, PassageScorer};
use ear_core::pipeline::{fuse, run_dataset, RunContext, StrategySpec};
use ear_core::planted::{PlantedConfig, PlantedFixture};
use ear_core::reranker::{train_reranker_set, Featurizer, RerankerSet, TrainConfig};
use ear_core::{build_index, load_corpus, load_questions, Analyzer, Bm25Params, Index, PassageStore, QAExample};

use crate::args::*;
use crate::Usage;

pub fn run(cli: &Cli) -> Result<()> {
    if cli.workers == 0 {
        bail!(Usage("--workers must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers)
        .build_global()
        .context("configuring worker threads")?;
    match &cli.command {
        Command::Index(a) => index(a),
        Command::MakeTrain(a) => make_train(a),
        Command::Train(a) => train(a),
        Command::TrainPr(a) => train_pr(a),
        Command::Retrieve(a) => retrieve(a, cli.workers),
        Command::Fuse(a) => fuse_runs(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Ablate(a) => ablate(a, cli.workers),
        Command::MakePlanted(a) => make_planted(a),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        bail!(Usage(format!("{}: no such file", path.display())));
    }
    Ok(())
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Loads the corpus and a persisted index and checks they describe the same passages.
fn load_store_and_index(corpus: &Path, index: &Path) -> Result<(PassageStore, Index)> {
    require_file(corpus)?;
    require_file(index)?;
    let store = load_corpus(corpus)?;
    let idx = Index::load(index)?;
    let same = idx.doc_count() == store.len() && idx.doc_ids().iter().all(|id| store.get(id).is_some());
    if !same {
        bail!(Usage(format!(
            "{} was not built from {}",
            index.display(),
            corpus.display()
        )));
    }
    Ok((store, idx))
}

fn index(a: &IndexArgs) -> Result<()> {
    require_file(&a.corpus)?;
    let store = load_corpus(&a.corpus)?;
    let params = Bm25Params {
        k1: a.k1,
        b: a.b,
        analyzer: Analyzer {
            stemming: !a.no_stemming,
            stopwords: !a.keep_stopwords,
        },
        index_titles: a.index_titles,
    };
    params.validate()?;
    let start = Instant::now();
    let idx = build_index(&store, params)?;
    let seconds = start.elapsed().as_secs_f64();
    let bytes = idx.save(&a.out)?;
    println!("docs\t{}", idx.doc_count());
    println!("build_seconds\t{seconds:.6}");
    println!("index_bytes\t{bytes}");
    Ok(())
}

fn make_train(a: &MakeTrainArgs) -> Result<()> {
    let cfg = ConstructionConfig {
        n_samples: a.n_samples,
        k_retrieve: a.k_retrieve,
        max_rank: a.max_rank,
        folds: a.folds,
        seed: a.seed,
        record_top1: !a.no_top1,
        cap_n: a.cap_n,
    };
    cfg.validate()?;
    let (store, idx) = load_store_and_index(&a.corpus, &a.index)?;
    require_file(&a.questions)?;
    let questions = load_questions(&a.questions, true)?;
    if questions.len() < cfg.folds {
        bail!(Usage(format!(
            "{} questions cannot fill {} folds",
            questions.len(),
            cfg.folds
        )));
    }

    let stub;
    let files: Vec<FileCandidates>;
    let generators: Vec<&dyn CandidateGenerator> = if a.source.stub {
        stub = StubSampler::new(&idx, &store);
        vec![&stub]
    } else {
        let n = a.source.expansions.len();
        if n == 0 {
            bail!(Usage("give --expansions or --stub".into()));
        }
        if n != 1 && n != cfg.folds {
            bail!(Usage(format!("expected 1 or {} expansion files, got {n}", cfg.folds)));
        }
        let known: HashSet<String> = questions.iter().map(|q| q.qid.clone()).collect();
        files = a
            .source
            .expansions
            .iter()
            .map(|p| {
                require_file(p)?;
                Ok(FileCandidates::load(p, Some(&known))?)
            })
            .collect::<Result<_>>()?;
        files.iter().map(|f| f as &dyn CandidateGenerator).collect()
    };

    let examples = build_training_set(&idx, &store, &questions, &cfg, &generators)?;
    write_training_set(&a.out, &examples)?;
    println!("questions\t{}", examples.len());
    println!(
        "candidates\t{}",
        examples.iter().map(|e| e.candidates.len()).sum::<usize>()
    );
    for (bucket, count) in rank_histogram(&examples) {
        println!("rank {bucket}\t{count}");
    }
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = TrainConfig {
        alpha: a.alpha,
        epochs: a.epochs.unwrap_or(TrainConfig::for_variant(a.variant).epochs),
        group_batch: a.group_batch,
        learning_rate: a.learning_rate,
        seed: a.seed,
        hidden_width: a.hidden_width,
        per_tag: !a.shared,
    };
    cfg.validate()?;
    require_file(&a.train)?;
    let (store, idx) = load_store_and_index(&a.corpus, &a.index)?;
    let mut examples = load_training_set(&a.train)?;
    if let Some(h) = a.holdout_fold {
        examples.retain(|e| e.fold != h);
    }
    if examples.is_empty() {
        bail!(Usage("no training examples left".into()));
    }
    let featurizer = Featurizer::new(&idx, &store);
    let (set, reports) = train_reranker_set(&featurizer, &examples, &cfg, a.variant)?;
    set.save(&a.out)?;
    for (tag, report) in &reports {
        let name = tag.map_or("shared", |t| t.as_str());
        let losses: Vec<String> = report.epoch_losses.iter().map(|l| format!("{l:.6}")).collect();
        println!("{name}\tepoch_losses\t{}", losses.join(","));
    }
    Ok(())
}

fn train_pr(a: &TrainPrArgs) -> Result<()> {
    let cfg = PRTrainConfig {
        train_depth: a.train_depth,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        seed: a.seed,
    };
    cfg.validate()?;
    let (store, idx) = load_store_and_index(&a.corpus, &a.index)?;
    require_file(&a.questions)?;
    let questions = load_questions(&a.questions, true)?;
    let scorer = train_passage_reranker(&idx, &store, &questions, &cfg)?;
    scorer.save(&a.out)?;
    println!("questions\t{}", questions.len());
    Ok(())
}

/// Loaded inputs for a strategy run; borrowed by [`RunContext`].
struct Loaded {
    spec: StrategySpec,
    store: PassageStore,
    index: Index,
    questions: Vec<QAExample>,
    files: Option<FileCandidates>,
    stub: bool,
    models: Option<RerankerSet>,
    scorer: Option<PassageScorer>,
}

impl Loaded {
    fn new(a: &StrategyArgs, require_answers: bool) -> Result<Loaded> {
        let spec = StrategySpec {
            kind: a.strategy,
            n_samples: a.n_samples,
            cap_n: a.cap_n,
            k_retrieve: a.k_retrieve,
            max_rank: a.max_rank,
            pr_depth: a.pr_depth,
            fuse_tags: a.fuse_tags.clone(),
            seed: a.seed,
        };
        spec.validate()?;
        if spec.kind.uses_candidates() && a.source.expansions.is_empty() && !a.source.stub {
            bail!(Usage(format!("strategy {} needs --expansions or --stub", spec.kind)));
        }
        if a.source.expansions.len() > 1 {
            bail!(Usage("retrieval takes a single --expansions file".into()));
        }
        if spec.kind.variant().is_some() && a.model.is_none() {
            bail!(Usage(format!("strategy {} needs --model", spec.kind)));
        }

        let (store, index) = load_store_and_index(&a.corpus, &a.index)?;
        require_file(&a.questions)?;
        let questions = load_questions(&a.questions, require_answers)?;
        if spec.kind == ear_core::pipeline::StrategyKind::Oracle {
            if let Some(q) = questions.iter().find(|q| !q.has_answers()) {
                bail!(Usage(format!(
                    "the oracle strategy needs questions with answers; {} has none",
                    q.qid
                )));
            }
        }
        let files = match a.source.expansions.first() {
            Some(p) => {
                require_file(p)?;
                let known: HashSet<String> = questions.iter().map(|q| q.qid.clone()).collect();
                Some(FileCandidates::load(p, Some(&known))?)
            }
            None => None,
        };
        let models = match &a.model {
            Some(p) if spec.kind.variant().is_some() => {
                require_file(p)?;
                let set = RerankerSet::load(p)?;
                if set.variant() != spec.kind.variant() {
                    bail!(Usage(format!("{} is not a {} model", p.display(), spec.kind)));
                }
                Some(set)
            }
            _ => None,
        };
        let scorer = match &a.pr_model {
            Some(p) => {
                require_file(p)?;
                Some(PassageScorer::load(p)?)
            }
            None => None,
        };
        Ok(Loaded {
            spec,
            store,
            index,
            questions,
            files,
            stub: a.source.stub,
            models,
            scorer,
        })
    }

    fn with_context<T>(&self, f: impl FnOnce(&RunContext<'_>) -> Result<T>) -> Result<T> {
        let empty = FileCandidates::default();
        let stub;
        let generator: &dyn CandidateGenerator = if self.stub {
            stub = StubSampler::new(&self.index, &self.store);
            &stub
        } else {
            self.files.as_ref().unwrap_or(&empty)
        };
        let mut ctx = RunContext::new(&self.index, &self.store, generator);
        if let Some(m) = &self.models {
            ctx = ctx.with_models(m);
        }
        if let Some(s) = &self.scorer {
            ctx = ctx.with_passage_scorer(s);
        }
        f(&ctx)
    }
}

fn retrieve(a: &RetrieveArgs, workers: usize) -> Result<()> {
    let loaded = Loaded::new(&a.strategy, false)?;
    let run = loaded.with_context(|ctx| Ok(run_dataset(&loaded.spec, ctx, &loaded.questions, workers)?))?;
    for (qid, reason) in &run.errors {
        eprintln!("failed {qid}: {reason}");
    }
    if run.runs.is_empty() && !loaded.questions.is_empty() {
        bail!("every question failed");
    }
    write_run(&a.out, &run.runs)?;
    println!("run\t{}", loaded.spec.run_tag());
    println!("questions\t{}", run.runs.len());
    println!("failed\t{}", run.errors.len());
    Ok(())
}

fn fuse_runs(a: &FuseArgs) -> Result<()> {
    if a.k == 0 {
        bail!(Usage("--k must be at least 1".into()));
    }
    let runs = a
        .runs
        .iter()
        .map(|p| {
            require_file(p)?;
            Ok(read_run(p)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let qids: BTreeSet<&String> = runs.iter().flat_map(|r| r.keys()).collect();
    let mut fused = BTreeMap::new();
    for qid in qids {
        let lists: Vec<_> = runs.iter().filter_map(|r| r.get(qid).cloned()).collect();
        fused.insert(qid.clone(), fuse(&lists, a.k)?);
    }
    write_run(&a.out, &fused)?;
    println!("questions\t{}", fused.len());
    Ok(())
}

fn run_name(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn eval(a: &EvalArgs) -> Result<()> {
    require_file(&a.corpus)?;
    require_file(&a.questions)?;
    let store = load_corpus(&a.corpus)?;
    let qa = load_questions(&a.questions, true)?;
    let mut reports = Vec::with_capacity(a.run.len());
    for path in &a.run {
        require_file(path)?;
        let runs = read_run(path)?;
        reports.push(topk_accuracy(&runs, &qa, &store, &a.ks, &run_name(path))?);
    }
    let text = match a.format {
        ReportFormat::Text => format_reports(&reports),
        ReportFormat::Csv => reports_csv(&reports),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(&reports)?;
            s.push('\n');
            s
        }
    };
    write_output(a.out.as_deref(), &text)
}

fn bench(a: &BenchArgs) -> Result<()> {
    if a.format == ReportFormat::Csv {
        bail!(Usage("bench reports are text or json".into()));
    }
    let loaded = Loaded::new(&a.strategy, false)?;
    let queries = &loaded.questions[..a.limit.unwrap_or(usize::MAX).min(loaded.questions.len())];
    let index_path: PathBuf = match &a.index_out {
        Some(p) => p.clone(),
        None => std::env::temp_dir().join(format!("ear-bench-{}.idx", std::process::id())),
    };
    let report = loaded.with_context(|ctx| Ok(bench_latency(&loaded.spec, ctx, queries, a.repetitions, &index_path)?));
    if a.index_out.is_none() {
        let _ = fs::remove_file(&index_path);
    }
    let report = report?;
    let text = match a.format {
        ReportFormat::Json => report.to_json() + "\n",
        _ => report.to_text(),
    };
    write_output(a.out.as_deref(), &text)
}

fn ablate(a: &AblateArgs, workers: usize) -> Result<()> {
    let loaded = Loaded::new(&a.strategy, true)?;
    let rows = loaded.with_context(|ctx| {
        Ok(ablate_candidate_size(
            &loaded.spec,
            ctx,
            &loaded.questions,
            &a.ns,
            &a.ks,
            workers,
        )?)
    })?;
    for r in rows.iter().filter(|r| r.failures > 0) {
        eprintln!("N={}: {} questions failed", r.n, r.failures);
    }
    write_output(a.out.as_deref(), &ablation_csv(&rows))
}

fn make_planted(a: &MakePlantedArgs) -> Result<()> {
    let mut cfg = if a.large {
        PlantedConfig::large()
    } else {
        PlantedConfig::default()
    };
    if let Some(q) = a.questions {
        cfg.questions = q;
    }
    cfg.seed = a.seed;
    cfg.validate()?;
    let fixture = PlantedFixture::generate(&cfg)?;
    let paths = fixture.write(&a.out_dir)?;
    println!("passages\t{}", fixture.passages.len());
    println!("train\t{}\t{}", fixture.train.len(), paths.train.display());
    println!("test\t{}\t{}", fixture.test.len(), paths.test.display());
    println!("corpus\t{}", paths.corpus.display());
    println!("expansions\t{}", paths.expansions.display());
    Ok(())
}
