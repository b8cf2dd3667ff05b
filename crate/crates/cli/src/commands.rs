use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::net::TcpListener;
use std::path::Path;

use log::info;
use serde_json::json;

use fewshot_core::augment::{self, EditMode, SynonymLexicon};
use fewshot_core::classify::{ExampleBank, Method, Model, Threshold};
use fewshot_core::corpus::{convert_clinc, ClincDomains};
use fewshot_core::corpus::{self, Dataset, FewShotSet, Split, Utterance};
use fewshot_core::eval::report::{self, CaseRow, ReportData};
use fewshot_core::eval::{self, Metrics, ScoredInstance};
use fewshot_core::exec::ExecMode;
use fewshot_core::harness::{self, ExperimentConfig, Scoring};
use fewshot_core::pairs;
use fewshot_core::scorer::server::serve;
use fewshot_core::scorer::{BuiltinScorer, Embedder, ScorerHandle, MIN_EMBED_DIM};
use fewshot_core::{Error, Result};

use crate::{
    AugmentCmd, Cli, Command, CorpusCmd, EditModeArg, EvalArgs, EvaluateArgs, ExperimentCmd, Global, ModelArgs,
    PairsCmd, PredictArgs, ReportArgs, RunArgs, SampleArgs, ScorerCmd, SourceFormat, SplitArg,
};

pub fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Corpus(CorpusCmd::Convert {
            from: SourceFormat::Clinc,
            input,
            output,
            domains,
        }) => convert(&input, &output, domains.as_deref()),
        Command::Corpus(CorpusCmd::Stats { dataset }) => stats(&dataset),
        Command::Sample(args) => sample(g, &args),
        Command::Pairs(PairsCmd::Dump {
            fewshot,
            negative_cap,
            output,
        }) => {
            let fs = FewShotSet::load(&fewshot)?;
            let set = pairs::generate_pairs(&fs, negative_cap, g.seed.unwrap_or(0))?;
            info!("{} positive and {} negative pairs", set.stats.positives, set.stats.negatives);
            pairs::write_pairs(&set, sink(output.as_deref())?)
        }
        Command::Augment(AugmentCmd::Eda {
            fewshot,
            lexicon,
            p_edit,
            mode,
            keep_degenerate,
            output,
        }) => {
            let fs = FewShotSet::load(&fewshot)?;
            let lex = SynonymLexicon::load(&lexicon)?;
            let mode = match mode {
                EditModeArg::Count => EditMode::Count,
                EditModeArg::PerWordBernoulli => EditMode::PerWordBernoulli,
            };
            let shots: Vec<Utterance> = fs.iter().map(|(_, _, u)| u.clone()).collect();
            let mut out = augment::eda_augment_all(&shots, &lex, p_edit, g.seed.unwrap_or(0), mode)?;
            if !keep_degenerate {
                out.retain(|a| !a.degenerate);
            }
            augment::write_augmentations(sink(output.as_deref())?, &out)
        }
        Command::Augment(AugmentCmd::Ingest { file, dataset, output }) => {
            let ds = dataset.as_deref().map(corpus::load_dataset).transpose()?;
            let f = augment::load_augmentation_file(&file, ds.as_ref())?;
            let summary = json!({
                "records": f.examples.len(),
                "dropped": f.dropped,
                "tau": f.tau,
            });
            if let Some(path) = output {
                augment::write_augmentations(sink(Some(&path))?, &f.examples)?;
            }
            println!("{summary}");
            Ok(())
        }
        Command::Predict(args) => predict(g, &args),
        Command::Calibrate(args) => calibrate(g, &args),
        Command::Evaluate(args) => evaluate(g, &args),
        Command::Report(args) => report(g, &args),
        Command::Experiment(ExperimentCmd::Run(args)) => experiment(g, &args),
        Command::Scorer(ScorerCmd::Serve { listen }) => serve_scorer(g, listen.as_deref()),
    }
}

/// Buffered writer to `path`, or stdout.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::io(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    let mut w = sink(path)?;
    let target = path.map_or_else(|| "stdout".to_string(), |p| p.display().to_string());
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(target, e))
}

fn convert(input: &Path, output: &Path, domains: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let domains: Option<ClincDomains> = match domains {
        Some(p) => {
            let t = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Some(serde_json::from_str(&t).map_err(|e| Error::format(p.display().to_string(), e))?)
        }
        None => None,
    };
    let ds = convert_clinc(&text, domains)?;
    ds.save(output)?;
    info!("wrote {} utterances to {}", ds.utterance_count(), output.display());
    Ok(())
}

fn stats(path: &Path) -> Result<()> {
    let ds = corpus::load_dataset(path)?;
    let count = |s: Split| ds.split(s).len();
    let oos = |s: Split| ds.oos_split(s).len();
    let domains: serde_json::Map<String, serde_json::Value> = ds
        .domains()
        .iter()
        .map(|(d, intents)| (d.clone(), json!(intents.len())))
        .collect();
    let out = json!({
        "domains": domains,
        "intents": ds.intents().len(),
        "train": count(Split::Train),
        "dev": count(Split::Dev),
        "test": count(Split::Test),
        "oos_dev": oos(Split::Dev),
        "oos_test": oos(Split::Test),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(())
}

fn sample(g: &Global, args: &SampleArgs) -> Result<()> {
    let mut ds = corpus::load_dataset(&args.dataset)?;
    if let Some(d) = &args.domain {
        ds = corpus::domain_filter(&ds, d)?;
    }
    let fs = corpus::sample_k_shot(&ds, args.k, g.seed.unwrap_or(0))?;
    write_text(args.output.as_deref(), &(fs.to_json() + "\n"))
}

/// The config file (if any) with global flags applied on top.
fn base_config(g: &Global, method: Option<Method>) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::new(method.unwrap_or(Method::Dnnc), 5),
    };
    if let Some(m) = method {
        cfg.method = m;
    }
    if let Some(s) = &g.scorer {
        cfg.scorer = s.clone();
    }
    if let Some(d) = g.pair_direction {
        cfg.pair_direction = d;
    }
    if let Some(s) = g.seed {
        cfg.base_seed = s;
    }
    if let Some(p) = g.scorer_parallelism {
        cfg.scorer_parallelism = p;
    }
    if let Some(b) = g.batch_limit {
        cfg.batch_limit = b;
    }
    if let Some(d) = g.embed_dim {
        cfg.embed_dim = d;
    }
    if let Some(w) = g.workers {
        cfg.workers = Some(w);
    }
    Ok(cfg)
}

fn exec_mode(g: &Global) -> ExecMode {
    if g.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    }
}

fn threshold(g: &Global) -> Result<Threshold> {
    let t = g
        .threshold
        .ok_or_else(|| Error::Usage("--threshold is required for this command".into()))?;
    Threshold::new(t)
}

/// A built model plus the scorer it runs against.
struct Loaded {
    model: Model,
    scoring: Scoring,
    handle: ScorerHandle,
}

fn load_model(g: &Global, args: &ModelArgs) -> Result<Loaded> {
    let mut cfg = base_config(g, args.method)?;
    if let Some(k) = args.knn_k {
        cfg.knn_k = k;
    }
    if let Some(k) = args.top_k {
        cfg.top_k = k;
    }
    cfg.validate()?;
    let fs = FewShotSet::load(&args.fewshot)?;
    let scoring = Scoring {
        spec: cfg.scorer.clone(),
        opts: cfg.scorer_options(),
        parallelism: cfg.scorer_parallelism,
        exec: exec_mode(g),
    };
    let mut handle = scoring.open()?;
    let model = Model::build(cfg.method, ExampleBank::from_fewshot(&fs), cfg.model_params(), &mut handle)?;
    Ok(Loaded { model, scoring, handle })
}

fn read_lines(path: Option<&Path>) -> Result<Vec<String>> {
    let mut text = String::new();
    match path {
        Some(p) => {
            File::open(p)
                .and_then(|mut f| f.read_to_string(&mut text))
                .map_err(|e| Error::io(p, e))?;
        }
        None => {
            io::stdin().read_to_string(&mut text).map_err(|e| Error::io("stdin", e))?;
        }
    }
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

fn predict(g: &Global, args: &PredictArgs) -> Result<()> {
    let t = threshold(g)?;
    let mut m = load_model(g, &args.model)?;
    let lines = read_lines(args.input.as_deref())?;
    let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
    let scored = m.scoring.score_all(&m.model, &refs, &mut m.handle)?;
    let mut out = sink(None)?;
    for (text, s) in lines.iter().zip(scored) {
        let p = s.decide(t);
        let rec = json!({
            "text": text,
            "decision": p.decision.as_str(),
            "confidence": p.confidence,
            "matched_text": p.matched_example.as_ref().map(|e| e.text.as_str()),
            "matched_label": p.matched_example.as_ref().map(|e| e.label.as_str()),
        });
        writeln!(out, "{rec}").map_err(|e| Error::io("stdout", e))?;
    }
    out.flush().map_err(|e| Error::io("stdout", e))
}

fn eval_dataset(path: &Path, domain: Option<&str>) -> Result<Dataset> {
    let ds = corpus::load_dataset(path)?;
    match domain {
        Some(d) => corpus::domain_filter(&ds, d),
        None => Ok(ds),
    }
}

fn score_split(m: &mut Loaded, ds: &Dataset, split: Split) -> Result<(Vec<Utterance>, Vec<ScoredInstance>, Vec<fewshot_core::classify::Scored>)> {
    let utts = ds.eval_split(split);
    let refs: Vec<&str> = utts.iter().map(|u| u.text.as_str()).collect();
    let scored = m.scoring.score_all(&m.model, &refs, &mut m.handle)?;
    let instances = scored
        .iter()
        .zip(&utts)
        .map(|(s, u)| ScoredInstance::from_scored(s, u.label.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok((utts, instances, scored))
}

fn metrics_json(m: &Metrics) -> serde_json::Value {
    serde_json::to_value(m).expect("metrics serialize")
}

fn calibrate(g: &Global, args: &EvalArgs) -> Result<()> {
    let mut m = load_model(g, &args.model)?;
    let ds = eval_dataset(&args.dataset, args.domain.as_deref())?;
    // Typed access: calibration only ever sees dev instances.
    let dev = harness::score_dev(&m.model, &ds, &m.scoring, &mut m.handle)?;
    let r = dev.calibrate()?;
    if let Some(path) = &args.curve {
        report::write_curve(path, &r.curve)?;
    }
    let out = json!({
        "method": m.model.method().name(),
        "threshold": r.threshold.value(),
        "joint": r.joint_at_threshold,
        "metrics": metrics_json(&r.metrics),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(())
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Dev => Split::Dev,
        SplitArg::Test => Split::Test,
    }
}

fn evaluate(g: &Global, args: &EvaluateArgs) -> Result<()> {
    let t = threshold(g)?;
    let mut m = load_model(g, &args.model)?;
    let ds = eval_dataset(&args.dataset, args.domain.as_deref())?;
    let (_, instances, _) = score_split(&mut m, &ds, split_of(args.split))?;
    let metrics = eval::compute_metrics(&instances, t)?;
    let out = json!({
        "method": m.model.method().name(),
        "split": split_of(args.split).name(),
        "threshold": t.value(),
        "metrics": metrics_json(&metrics),
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(())
}

fn report(g: &Global, args: &ReportArgs) -> Result<()> {
    let mut m = load_model(g, &args.model)?;
    let ds = eval_dataset(&args.dataset, args.domain.as_deref())?;
    let t = match g.threshold {
        Some(t) => Threshold::new(t)?,
        None => harness::score_dev(&m.model, &ds, &m.scoring, &mut m.handle)?.calibrate()?.threshold,
    };
    let (utts, instances, scored) = score_split(&mut m, &ds, split_of(args.split))?;
    let cases = utts
        .iter()
        .zip(&scored)
        .map(|(u, s)| CaseRow::from_prediction(&u.text, &u.label, &s.decide(t)))
        .collect();
    let curve = eval::calibrate_threshold(&instances)?.curve;
    let embeddings = if args.embeddings {
        let refs: Vec<&str> = utts.iter().map(|u| u.text.as_str()).collect();
        let vecs = m.handle.embed(&refs)?;
        Some(
            utts.iter()
                .zip(vecs)
                .map(|(u, v)| (u.text.clone(), u.label.clone(), v))
                .collect(),
        )
    } else {
        None
    };
    let data = ReportData {
        cases,
        instances,
        curve,
        embeddings,
    };
    for p in report::export_report(&data, &args.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn experiment(g: &Global, args: &RunArgs) -> Result<()> {
    let mut cfg = base_config(g, args.method)?;
    if let Some(k) = args.k {
        cfg.k = k;
    }
    if let Some(r) = args.runs {
        cfg.runs = Some(r);
    }
    if let Some(k) = args.top_k {
        cfg.top_k = k;
    }
    if let Some(k) = args.knn_k {
        cfg.knn_k = k;
    }
    if let Some(d) = &args.domain {
        cfg.domain = Some(d.clone());
    }
    let ds = corpus::load_dataset(&args.dataset)?;
    let table = harness::run_experiment_with(&cfg, &ds, exec_mode(g))?;
    if let Some(dir) = &args.out {
        table.write_dir(dir)?;
        write_text(Some(&dir.join("config.toml")), &cfg.to_toml())?;
    }
    write_text(None, &table.aggregates_tsv())
}

fn serve_scorer(g: &Global, listen: Option<&str>) -> Result<()> {
    let dim = g.embed_dim.unwrap_or(fewshot_core::scorer::DEFAULT_EMBED_DIM);
    if dim < MIN_EMBED_DIM {
        return Err(Error::validation(format!("embedding dim {dim} is below {MIN_EMBED_DIM}")));
    }
    let limit = g.batch_limit.unwrap_or(fewshot_core::scorer::DEFAULT_BATCH_LIMIT);
    let backend = BuiltinScorer { dim };
    match listen {
        None => {
            let stdin = io::stdin();
            serve(backend, limit, stdin.lock(), io::stdout().lock()).map_err(Error::Transport)
        }
        Some(addr) => {
            let listener = TcpListener::bind(addr).map_err(Error::Transport)?;
            eprintln!("listening on {}", listener.local_addr().map_err(Error::Transport)?);
            for stream in listener.incoming() {
                let stream = stream.map_err(Error::Transport)?;
                let _ = stream.set_nodelay(true);
                std::thread::spawn(move || {
                    let reader = match stream.try_clone() {
                        Ok(s) => BufReader::new(s),
                        Err(e) => return log::warn!("connection setup failed: {e}"),
                    };
                    if let Err(e) = serve(backend, limit, reader, stream) {
                        log::warn!("connection ended: {e}");
                    }
                });
            }
            Ok(())
        }
    }
}
