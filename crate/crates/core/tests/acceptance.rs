#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

//! Acceptance suite. Runs every primary criterion, prints one PASS/FAIL line
//! per criterion and exits non-zero if any failed. Builtin scorer and mocks
//! only.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use fewshot_core::augment::{eda_augment, edit_count, AugmentSource, EditMode, SynonymLexicon};
use fewshot_core::classify::{dnnc_joint_predict, dnnc_predict, Method, Threshold};
use fewshot_core::corpus::{load_dataset, sample_k_shot, FewShotSet, Label, Split, Utterance};
use fewshot_core::eval::report::CaseRow;
use fewshot_core::eval::{calibrate_threshold, compute_metrics, Metrics, ScoredInstance};
use fewshot_core::harness::{run_experiment, ExperimentConfig};
use fewshot_core::pairs::generate_pairs;
use fewshot_core::scorer::remote::{RemoteScorer, ScriptedTransport};
use fewshot_core::scorer::{BuiltinScorer, MatchScore, PairDirection, PairScorer};
use fewshot_core::Error;

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn joint_equals_dnnc() -> Check {
    let ds = load_dataset(&fixture("bank_travel.json")).map_err(|e| e.to_string())?;
    let inputs: Vec<Utterance> = [Split::Dev, Split::Test].iter().flat_map(|&s| ds.eval_split(s)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2021);
    let dirs = [PairDirection::InputFirst, PairDirection::ExampleFirst, PairDirection::BothMax];
    for case in 0..100 {
        let k = rng.random_range(1..=6);
        let fs = sample_k_shot(&ds, k, rng.random()).map_err(|e| e.to_string())?;
        let input = &inputs.choose(&mut rng).unwrap().text;
        let dir = *dirs.choose(&mut rng).unwrap();
        let t = Threshold::new(rng.random_range(0.0..=1.0)).unwrap();
        let b = BuiltinScorer { dim: 64 };
        let d = dnnc_predict(input, &fs, &mut { b }, dir, t).map_err(|e| e.to_string())?;
        let j = dnnc_joint_predict(input, &fs, b, b, fs.total(), dir, t).map_err(|e| e.to_string())?;
        ensure!(
            d.decision == j.decision && d.confidence == j.confidence && d.matched_example == j.matched_example,
            "instance {case} ({input:?}, K={k}, {dir}) differs: {d:?} vs {j:?}"
        );
    }
    Ok(())
}

fn random_instances(rng: &mut ChaCha8Rng, n: usize) -> Vec<ScoredInstance> {
    let labels = ["a", "b", "c", "d"];
    let mut xs: Vec<ScoredInstance> = (0..n)
        .map(|_| {
            // Mix of lattice and continuous confidences to force ties.
            let c = if rng.random_bool(0.5) {
                rng.random_range(0..=20) as f64 / 20.0
            } else {
                rng.random_range(0.0..=1.0)
            };
            let gold = if rng.random_bool(0.3) {
                Label::Oos
            } else {
                Label::Intent(labels.choose(rng).unwrap().to_string())
            };
            ScoredInstance::new(c, *labels.choose(rng).unwrap(), gold).unwrap()
        })
        .collect();
    xs[0].gold = Label::Oos;
    xs[1].gold = Label::Intent("a".into());
    xs
}

/// Exact joint as a fraction (numerator, denominator).
fn joint_frac(m: &Metrics) -> (u128, u128) {
    (
        m.c_in as u128 * m.n_oos as u128 + m.c_oos as u128 * m.n_in as u128,
        m.n_in as u128 * m.n_oos as u128,
    )
}

fn calibration_optimal() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for set in 0..50 {
        let n = rng.random_range(20..=500);
        let xs = random_instances(&mut rng, n);
        let best = calibrate_threshold(&xs).map_err(|e| e.to_string())?;
        let (bn, bd) = joint_frac(&best.metrics);
        for g in 0..=1000 {
            let t = g as f64 / 1000.0;
            let m = compute_metrics(&xs, Threshold::new(t).unwrap()).map_err(|e| e.to_string())?;
            let (gn, gd) = joint_frac(&m);
            ensure!(bn * gd >= gn * bd, "set {set} (n={n}): grid t={t} joint {} beats calibrated {}", m.joint, best.joint_at_threshold);
        }
    }
    Ok(())
}

fn metrics_hand_case() -> Check {
    let i = |c: f64, p: &str, g: Option<&str>| {
        ScoredInstance::new(c, p, g.map_or(Label::Oos, |g| Label::Intent(g.into()))).unwrap()
    };
    let xs = vec![
        i(0.9, "a", Some("a")),
        i(0.8, "b", Some("b")),
        i(0.7, "a", Some("a")),
        i(0.6, "a", Some("b")),
        i(0.2, "a", None),
        i(0.9, "b", None),
    ];
    let m = compute_metrics(&xs, Threshold::new(0.5).unwrap()).map_err(|e| e.to_string())?;
    ensure!(
        m.acc_in == 0.75 && m.r_oos == 0.5 && m.joint == 1.25,
        "got acc_in {} r_oos {} joint {}",
        m.acc_in,
        m.r_oos,
        m.joint
    );
    Ok(())
}

fn monotonicity() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for set in 0..50 {
        let n = rng.random_range(20..=300);
        let xs = random_instances(&mut rng, n);
        for _ in 0..20 {
            let a: f64 = rng.random_range(0.0..=1.0);
            let b: f64 = rng.random_range(0.0..=1.0);
            let (lo, hi) = (a.min(b), a.max(b));
            let m_lo = compute_metrics(&xs, Threshold::new(lo).unwrap()).map_err(|e| e.to_string())?;
            let m_hi = compute_metrics(&xs, Threshold::new(hi).unwrap()).map_err(|e| e.to_string())?;
            ensure!(m_hi.r_oos >= m_lo.r_oos, "set {set}: r_oos fell from t={lo} to t={hi}");
            ensure!(m_hi.acc_in <= m_lo.acc_in, "set {set}: acc_in rose from t={lo} to t={hi}");
        }
    }
    Ok(())
}

fn pair_counts() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..100 {
        let n_intents = rng.random_range(1..=8);
        let mut shots = BTreeMap::new();
        for c in 0..n_intents {
            let label = format!("intent{c}");
            let k = rng.random_range(1..=6);
            let us = (0..k).map(|j| Utterance::intent(format!("u{c} {j}"), label.as_str())).collect();
            shots.insert(label, us);
        }
        let fs = FewShotSet::new(6, case, shots).map_err(|e| e.to_string())?;
        if fs.total() < 2 {
            continue;
        }
        let labels: Vec<&str> = fs.iter().map(|(l, _, _)| l).collect();
        let (mut pos, mut neg) = (0usize, 0usize);
        for (i, a) in labels.iter().enumerate() {
            for (j, b) in labels.iter().enumerate() {
                if i != j {
                    if a == b {
                        pos += 1;
                    } else {
                        neg += 1;
                    }
                }
            }
        }
        let set = generate_pairs(&fs, None, case).map_err(|e| e.to_string())?;
        ensure!(
            (set.stats.positives, set.stats.negatives) == (pos, neg) && set.pairs.len() == pos + neg,
            "case {case}: got {:?}, enumeration gives ({pos}, {neg})",
            set.stats
        );
    }
    Ok(())
}

const SEED_42_INPUT: &str = "please send money from my checking account to savings tomorrow";
const SEED_42_GOLDEN: [&str; 4] = [
    "kindly send money from my checking account to savings tomorrow",
    "please send money from my wire checking account to savings tomorrow",
    "please send account from my checking money to savings tomorrow",
    "send money from my checking account to savings tomorrow",
];

fn eda_contracts() -> Check {
    let lex = SynonymLexicon::load(&fixture("lexicon.tsv")).map_err(|e| e.to_string())?;
    let vocab = [
        "send", "money", "pay", "bill", "my", "the", "to", "book", "flight", "car", "please", "now", "a", "checking",
        "due", "tomorrow", "what", "is",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for case in 0..200u64 {
        let l = rng.random_range(1..=20);
        let words: Vec<&str> = (0..l).map(|_| *vocab.choose(&mut rng).unwrap()).collect();
        let p = [0.05, 0.1, 0.2, 0.3, 0.5][case as usize % 5];
        let u = Utterance::intent(words.join(" "), "x");
        let out = eda_augment(&u, &lex, p, case, EditMode::Count).map_err(|e| e.to_string())?;
        ensure!(out.len() == 4, "case {case}: {} outputs", out.len());
        let sources: Vec<AugmentSource> = out.iter().map(|a| a.source).collect();
        ensure!(sources == AugmentSource::EDA, "case {case}: order {sources:?}");
        let n = edit_count(p, l);
        let covered = words.iter().any(|w| lex.synonyms(w).is_some());
        let len = |i: usize| out[i].text.split(' ').count();

        ensure!(len(0) == l, "case {case}: SR changed length");
        let want_ri = if covered { l + n } else { l };
        ensure!(len(1) == want_ri, "case {case}: RI length {} != {want_ri}", len(1));
        let mut a: Vec<&str> = out[2].text.split(' ').collect();
        let mut b = words.clone();
        a.sort_unstable();
        b.sort_unstable();
        ensure!(a == b, "case {case}: RS changed the token multiset");
        let want_rd = if l >= 2 { l - n.min(l - 1) } else { 1 };
        ensure!(len(3) == want_rd && want_rd >= 1, "case {case}: RD length {} != {want_rd}", len(3));
    }
    let u = Utterance::intent(SEED_42_INPUT, "transfer");
    let out = eda_augment(&u, &lex, 0.1, 42, EditMode::Count).map_err(|e| e.to_string())?;
    for (a, g) in out.iter().zip(SEED_42_GOLDEN) {
        ensure!(a.text.as_bytes() == g.as_bytes(), "seed-42 {}: {:?} != {g:?}", a.source, a.text);
    }
    Ok(())
}

/// Pair scorer returning a fixed score per (input, example) pair.
struct Stub(BTreeMap<(String, String), f64>);

impl PairScorer for Stub {
    fn score_pairs(&mut self, pairs: &[(&str, &str)]) -> fewshot_core::Result<Vec<MatchScore>> {
        pairs
            .iter()
            .map(|(p, h)| MatchScore::new(*self.0.get(&(p.to_string(), h.to_string())).unwrap_or(&0.001)))
            .collect()
    }
}

fn case_study() -> Check {
    let bank = [
        ("transfer", "transfer $10 from checking to savings"),
        ("spending_history", "what have i spent on food recently"),
        ("balance", "do i have enough in my boa account for a new pair of skis"),
        ("bill_due", "how long do i have left to pay for my chase credit card"),
    ];
    let shots = bank
        .iter()
        .map(|(l, t)| (l.to_string(), vec![Utterance::intent(*t, *l)]))
        .collect();
    let fs = FewShotSet::new(1, 0, shots).map_err(|e| e.to_string())?;
    // (input, gold, matched example index in `bank`, score, accepted at t = 0.5)
    let rows: [(&str, Label, usize, f64, bool); 4] = [
        (
            "transfer ten dollars from my wells fargo account to my bank of america account",
            Label::Intent("transfer".into()),
            0,
            0.934,
            true,
        ),
        ("what transactions have i accrued buying dog food", Label::Intent("transactions".into()), 1, 0.915, true),
        ("who has the best record in the nfl", Label::Oos, 2, 0.006, false),
        (
            "how long will it take me to pay off my card if i pay an extra $50 a month over the minimum",
            Label::Oos,
            3,
            0.945,
            true,
        ),
    ];
    let mut stub = Stub(BTreeMap::new());
    for (input, _, m, score, _) in &rows {
        stub.0.insert((input.to_string(), bank[*m].1.to_string()), *score);
    }
    let t = Threshold::new(0.5).unwrap();
    for (input, gold, m, score, accepted) in &rows {
        let p = dnnc_predict(input, &fs, &mut stub, PairDirection::InputFirst, t).map_err(|e| e.to_string())?;
        let want = if *accepted { Label::Intent(bank[*m].0.into()) } else { Label::Oos };
        ensure!(p.decision == want, "{input:?}: decided {:?}, expected {want:?}", p.decision);
        let row = CaseRow::from_prediction(input, gold, &p);
        ensure!(
            row.matched_utterance == bank[*m].1 && row.matched_label == bank[*m].0 && row.confidence == *score,
            "{input:?}: case row {row:?}"
        );
    }
    Ok(())
}

fn hello_reply(id: &Value) -> String {
    json!({"id": id, "name": "mock", "caps": ["score_pairs"], "batch_limit": 5000}).to_string()
}

fn mock(tamper: fn(&Value, &mut Value)) -> ScriptedTransport {
    ScriptedTransport::new(move |req| {
        if req["op"] == "hello" {
            return Some(hello_reply(&req["id"]));
        }
        let n = req["pairs"].as_array().map_or(0, Vec::len);
        let mut reply = json!({"id": req["id"], "scores": vec![0.5; n]});
        tamper(req, &mut reply);
        Some(reply.to_string())
    })
}

fn protocol_robustness() -> Check {
    let pairs: Vec<(String, String)> = (0..2500).map(|i| (format!("a{i}"), format!("b{i}"))).collect();
    let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let cases: [(&str, fn(&Value, &mut Value)); 3] = [
        ("length mismatch", |_, r| {
            r["scores"].as_array_mut().unwrap().pop();
        }),
        ("out-of-range score", |_, r| r["scores"][0] = json!(1.01)),
        ("id mismatch", |req, r| r["id"] = json!(req["id"].as_u64().unwrap() + 1)),
    ];
    for (name, tamper) in cases {
        let mut s = RemoteScorer::connect(mock(tamper), 900).map_err(|e| e.to_string())?;
        match s.score_pairs(&refs[..3]) {
            Err(Error::Protocol(_)) => {}
            other => return Err(format!("{name}: expected a protocol error, got {other:?}")),
        }
    }
    let t = mock(|_, _| {});
    let log = t.log();
    let mut s = RemoteScorer::connect(t, 900).map_err(|e| e.to_string())?;
    let scores = s.score_pairs(&refs).map_err(|e| e.to_string())?;
    ensure!(scores.len() == 2500, "{} scores", scores.len());
    let sizes: Vec<usize> = log.lock().unwrap()[1..]
        .iter()
        .map(|r| r["pairs"].as_array().unwrap().len())
        .collect();
    ensure!(sizes == [900, 900, 700], "chunks {sizes:?}");
    Ok(())
}

fn harness_determinism() -> Check {
    let ds = load_dataset(&fixture("bank_travel.json")).map_err(|e| e.to_string())?;
    for method in [Method::Dnnc, Method::EmbKnn, Method::Classifier, Method::DnncJoint] {
        let mut cfg = ExperimentConfig::new(method, 3);
        cfg.seeds = vec![1, 2, 3, 4];
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let mut outputs = Vec::new();
        for d in &dirs {
            let table = run_experiment(&cfg, &ds).map_err(|e| e.to_string())?;
            let files = table.write_dir(d.path()).map_err(|e| e.to_string())?;
            let bytes: Vec<Vec<u8>> = files.iter().map(|f| std::fs::read(f).unwrap()).collect();
            outputs.push(bytes);
        }
        ensure!(outputs[0] == outputs[1], "{method}: result tables differ between runs");
    }
    Ok(())
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Check, Option<Duration>); 9] = [
        ("dnnc-joint equals dnnc at full top_k", joint_equals_dnnc, Some(Duration::from_secs(5))),
        ("calibration optimality vs 1001-point grid", calibration_optimal, Some(Duration::from_secs(10))),
        ("metrics arithmetic hand case", metrics_hand_case, None),
        ("threshold monotonicity", monotonicity, None),
        ("pair-count combinatorics", pair_counts, None),
        ("eda contracts and seed-42 goldens", eda_contracts, Some(Duration::from_secs(5))),
        ("case-study semantics", case_study, None),
        ("protocol robustness", protocol_robustness, None),
        ("harness determinism", harness_determinism, None),
    ];
    let mut failed = 0;
    for (name, check, limit) in criteria {
        let start = Instant::now();
        let mut result = check();
        let took = start.elapsed();
        if let (Ok(()), Some(limit)) = (&result, limit) {
            if took > limit {
                result = Err(format!("took {took:.2?}, limit {limit:?}"));
            }
        }
        match result {
            Ok(()) => println!("PASS  {name}  ({took:.2?})"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name}  ({took:.2?}): {msg}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
