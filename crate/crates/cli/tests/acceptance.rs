//! Acceptance suite: one pass/fail line per criterion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use prt_core::assess::{load_results, parse_verdict, StrategyKind};
use prt_core::clauses::ClauseRegistry;
use prt_core::corpus::{dataset_from_str, load_dataset, load_policy, CaseRecord, Dataset, LabelMap, Policy, Verdict};
use prt_core::gateway::{
    load_provider_config, Gateway, MockProvider, MockScript, Model, ModelHandle, ResponseCache, SamplingConfig,
};
use prt_core::metrics::{relevance_from_citations, Citations};
use prt_core::prompts::{golden_check, Bindings, PromptError, Row, TemplateId};
use prt_core::prtgen::{count_sentences, count_words, mean_sd, prt_stats, validate_prt, AugmentedDataset, PrtRecord};
use prt_core::sampling::SeededRng;
use prt_core::select::{select_random, select_relevant, FLAG_FALLBACK, FLAG_REPAIRED};
use prt_core::sftexport::{build_records, normalized_text_hash, ExportError};
use prt_core::stats::{
    bonferroni, cohens_d, holm, paired_t_one_sided, pareto_frontier, run_cost, CostPoint, Direction,
};
use prt_core::tokenize::BpeEstimator;
use rust_decimal::Decimal;
use serde::Deserialize;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn core_tests() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests")
}

fn synthetic(name: &str) -> PathBuf {
    core_tests().join("fixtures/synthetic").join(name)
}

fn data(name: &str) -> String {
    std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)).unwrap()
}

fn verdict(s: &str) -> Verdict {
    s.parse().unwrap()
}

struct Synthetic {
    policy: Policy,
    dataset: Dataset,
}

fn load_synthetic() -> Synthetic {
    let registry = ClauseRegistry::load(&synthetic("registry.json")).unwrap();
    let policy = load_policy(&synthetic("policy.md"), &registry, &BpeEstimator).unwrap();
    let dataset = load_dataset(&synthetic("dataset.jsonl"), &policy).unwrap();
    Synthetic { policy, dataset }
}

fn mock_gateway(script: MockScript) -> Gateway {
    let mut gw = Gateway::new(ResponseCache::disabled());
    gw.register("mock", std::sync::Arc::new(MockProvider::new(script).unwrap()), 4);
    gw
}

fn prt_record(case_id: &str, text: &str) -> PrtRecord {
    PrtRecord {
        case_id: case_id.to_string(),
        expert_model: "mock/expert".to_string(),
        prt_text: text.to_string(),
        echoed_verdict: Verdict::Compliant,
        word_count: count_words(text),
        sentence_count: count_sentences(text),
        prompt_hash: String::new(),
        created_at: "2025-01-01T00:00:00Z".parse().unwrap(),
    }
}

/// Pool built from the synthetic train cases with fixed traces.
fn synthetic_pool(s: &Synthetic) -> AugmentedDataset {
    let records = s
        .dataset
        .records
        .iter()
        .filter(|c| c.split == prt_core::Split::Train)
        .map(|c| {
            prt_record(
                &c.case_id,
                &format!(
                    "1. The facts of {} are weighed.\n2. Therefore the case is {}.",
                    c.case_id, c.gold_verdict
                ),
            )
        })
        .collect();
    AugmentedDataset::assemble(&s.dataset, records).unwrap()
}

// 1
fn golden_prompts() -> Outcome {
    #[derive(Deserialize)]
    struct Fixture {
        scalars: BTreeMap<String, String>,
        #[serde(default)]
        blocks: BTreeMap<String, Vec<Row>>,
    }
    let start = Instant::now();
    let dir = core_tests().join("golden");
    let fx: BTreeMap<String, Fixture> =
        serde_json::from_str(&std::fs::read_to_string(dir.join("bindings.json")).unwrap()).unwrap();
    let mut drift_caught = 0;
    for id in TemplateId::ALL {
        let f = fx.get(id.as_str()).ok_or(format!("no bindings for {id}"))?;
        let mut b = Bindings::new();
        for (k, v) in &f.scalars {
            b = b.set(k, v.clone());
        }
        for (k, rows) in &f.blocks {
            b = b.block(k, rows.clone());
        }
        let golden = std::fs::read_to_string(dir.join(format!("{id}.txt"))).unwrap();
        golden_check(id, &b, &golden).map_err(|e| format!("{id}: {e}"))?;
        // Flip a spread of single characters; each must be caught.
        for (i, c) in golden.char_indices().step_by(97) {
            let mut drifted = golden.clone();
            drifted.replace_range(i..i + c.len_utf8(), if c == '~' { "^" } else { "~" });
            ensure!(
                matches!(golden_check(id, &b, &drifted), Err(PromptError::Mismatch { .. })),
                "{id}: drift at byte {i} not caught"
            );
            drift_caught += 1;
        }
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(1), "took {took:?}");
    Ok(format!(
        "13 templates byte-identical, {drift_caught} single-char drifts caught, {took:.0?}"
    ))
}

// 2
fn mock_end_to_end() -> Outcome {
    let start = Instant::now();
    let strategies: [(&str, &[&str], StrategyKind); 5] = [
        ("small__base", &["--strategy", "base"], StrategyKind::Base),
        (
            "small__fewshot_k3__generalist",
            &["--strategy", "fewshot"],
            StrategyKind::Fewshot,
        ),
        (
            "small__fewshot_prt_rel_k3__generalist",
            &["--strategy", "fewshot_prt", "--select", "rel"],
            StrategyKind::FewshotPrt,
        ),
        (
            "small__selfrefine",
            &["--strategy", "selfrefine"],
            StrategyKind::Selfrefine,
        ),
        (
            "small__selfrefine_prt_rel_k3__generalist",
            &["--strategy", "selfrefine_prt", "--select", "rel"],
            StrategyKind::SelfrefinePrt,
        ),
    ];
    let mut snapshots: Vec<BTreeMap<String, Vec<u8>>> = Vec::new();
    let tmp = tempfile::tempdir().unwrap();
    for rep in 0..3 {
        let out = tmp.path().join(format!("rep{rep}"));
        let run = |args: &[&str]| -> Result<(), String> {
            let o = Command::new(env!("CARGO_BIN_EXE_prt-forge"))
                .arg("--config")
                .arg(synthetic("config.toml"))
                .args(["--seed", "42", "--out-dir"])
                .arg(&out)
                .args(args)
                .env("RUST_LOG", "error")
                .output()
                .unwrap();
            ensure!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
            Ok(())
        };
        run(&["gen", "--policy", "synthrec"])?;
        for (name, args, kind) in &strategies {
            let mut full = vec!["assess", "--policy", "synthrec", "--learner", "small"];
            full.extend_from_slice(args);
            run(&full)?;
            let results =
                load_results(&out.join("synthrec/runs").join(name).join("results.jsonl")).map_err(|e| e.to_string())?;
            ensure!(results.len() == 4, "{name}: {} results", results.len());
            for r in &results {
                ensure!(
                    r.turns.len() == kind.turns(),
                    "{name}/{}: {} turns",
                    r.case_id,
                    r.turns.len()
                );
            }
        }
        snapshots.push(snapshot(&out.join("synthrec")));
    }
    ensure!(snapshots[0].len() >= 19, "only {} output files", snapshots[0].len());
    for (i, s) in snapshots.iter().enumerate().skip(1) {
        for (file, bytes) in &snapshots[0] {
            ensure!(s.get(file) == Some(bytes), "{file} differs in repeat {i}");
        }
        ensure!(s.len() == snapshots[0].len(), "file sets differ");
    }
    let took = start.elapsed();
    ensure!(took < Duration::from_secs(10), "took {took:?}");
    Ok(format!(
        "{} output files identical over 3 runs, turns 1/1/1/3/2, {took:.1?}",
        snapshots[0].len()
    ))
}

fn snapshot(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

// 3
fn prt_gate() -> Outcome {
    #[derive(Deserialize)]
    struct Fx {
        text: String,
        gold: String,
        expected: String,
    }
    let fx: Vec<Fx> = serde_json::from_str(&data("prt_gate.json")).unwrap();
    ensure!(fx.len() == 20, "{} fixtures", fx.len());
    let mut by_class: BTreeMap<String, usize> = BTreeMap::new();
    let (mut mismatches, mut mismatches_accepted) = (0, 0);
    for (i, f) in fx.iter().enumerate() {
        let got = match validate_prt(&f.text, verdict(&f.gold)) {
            Ok(()) => "ok".to_string(),
            Err(e) => serde_json::to_value(e).unwrap().as_str().unwrap().to_string(),
        };
        ensure!(got == f.expected, "fixture {i}: expected {}, got {got}", f.expected);
        if f.expected == "verdict_mismatch" {
            mismatches += 1;
            mismatches_accepted += usize::from(got == "ok");
        }
        *by_class.entry(got).or_default() += 1;
    }
    ensure!(mismatches_accepted == 0, "verdict mismatches accepted");
    Ok(format!(
        "20/20 classified {by_class:?}, mismatch acceptance 0/{mismatches}"
    ))
}

// 4
fn verdict_parser() -> Outcome {
    #[derive(Deserialize)]
    struct Fx {
        text: String,
        expected: Option<String>,
    }
    let fx: Vec<Fx> = serde_json::from_str(&data("verdicts.json")).unwrap();
    ensure!(fx.len() == 30, "{} fixtures", fx.len());
    for (i, f) in fx.iter().enumerate() {
        let want = f.expected.as_deref().map(verdict);
        let got = parse_verdict(&f.text);
        ensure!(got == want, "fixture {i} {:?}: expected {want:?}, got {got:?}", f.text);
    }
    Ok("30/30 agree".into())
}

// 5
fn random_set(rng: &mut SeededRng, universe: &[String], max: usize, min: usize) -> BTreeSet<String> {
    let size = min + rng.below((max - min + 1) as u64) as usize;
    rng.sample_indices(universe.len(), size)
        .into_iter()
        .map(|i| universe[i].clone())
        .collect()
}

fn metric_oracles() -> Outcome {
    let universe: Vec<String> = (0..8).map(|i| format!("Section 1.{i}")).collect();
    let mut rng = SeededRng::new(5);
    let mut instances = Vec::new();
    for i in 0..10 {
        let gold = random_set(&mut rng, &universe, 4, 1);
        let cited = random_set(&mut rng, &universe, 5, 0);
        instances.push(Citations {
            case_id: format!("c{i}"),
            gold,
            cited,
            flagged: false,
        });
    }
    let (mut rsum, mut emsum, mut csum) = (0.0, 0.0, 0.0);
    for c in &instances {
        let rep = relevance_from_citations(std::slice::from_ref(c), false).map_err(|e| e.to_string())?;
        let mut hits = 0;
        for g in &c.gold {
            if c.cited.iter().any(|x| x == g) {
                hits += 1;
            }
        }
        let recall = 100.0 * hits as f64 / c.gold.len() as f64;
        let em = if c.gold.iter().all(|g| c.cited.contains(g)) && c.cited.iter().all(|x| c.gold.contains(x)) {
            100.0
        } else {
            0.0
        };
        ensure!(
            rep.recall_pct == recall,
            "{}: recall {} vs {recall}",
            c.case_id,
            rep.recall_pct
        );
        ensure!(
            rep.exact_match_pct == em,
            "{}: EM {} vs {em}",
            c.case_id,
            rep.exact_match_pct
        );
        ensure!(rep.mu_cited == c.cited.len() as f64, "{}: mu_cited", c.case_id);
        rsum += recall / 100.0;
        emsum += em / 100.0;
        csum += c.cited.len() as f64;
    }
    let all = relevance_from_citations(&instances, false).map_err(|e| e.to_string())?;
    ensure!((all.recall_pct - 100.0 * rsum / 10.0).abs() < 1e-9, "macro recall");
    ensure!((all.exact_match_pct - 100.0 * emsum / 10.0).abs() < 1e-9, "macro EM");
    ensure!((all.mu_cited - csum / 10.0).abs() < 1e-12, "mu_cited");

    let mut em_full = 0;
    for t in 0..1000 {
        let n = 1 + rng.below(5) as usize;
        let recs: Vec<Citations> = (0..n)
            .map(|i| {
                let gold = random_set(&mut rng, &universe, 4, 1);
                let cited = if rng.below(4) == 0 {
                    random_set(&mut rng, &universe, 5, 0)
                } else {
                    gold.clone()
                };
                Citations {
                    case_id: format!("t{t}-{i}"),
                    gold,
                    cited,
                    flagged: false,
                }
            })
            .collect();
        let rep = relevance_from_citations(&recs, false).map_err(|e| e.to_string())?;
        if rep.exact_match_pct == 100.0 {
            em_full += 1;
            ensure!(
                rep.recall_pct == 100.0,
                "trial {t}: EM 100 with recall {}",
                rep.recall_pct
            );
        }
    }
    ensure!(em_full > 100, "only {em_full} trials reached EM 100");
    Ok(format!(
        "10 instances exact, EM=100 => recall=100 in {em_full}/1000 qualifying trials"
    ))
}

// 6
fn statistics() -> Outcome {
    let t = paired_t_one_sided(&[3.0, 5.0, 7.0], &[1.0, 2.0, 3.0], Direction::AGtB).map_err(|e| e.to_string())?;
    let t_ref = 3.0 * 3f64.sqrt();
    ensure!((t.t - t_ref).abs() < 1e-12, "t = {}", t.t);
    ensure!(t.df == 2, "df = {}", t.df);
    // Survival function of Student t with 2 df in closed form.
    let p_ref = 0.5 - t_ref / (2.0 * (2.0 + t_ref * t_ref).sqrt());
    ensure!((t.p - p_ref).abs() < 1e-9, "p = {} vs {p_ref}", t.p);
    let h = holm(&[0.01, 0.04]).map_err(|e| e.to_string())?;
    ensure!((h[0] - 0.02).abs() < 1e-15 && (h[1] - 0.04).abs() < 1e-15, "holm {h:?}");
    let b = bonferroni(&[0.001], Some(2)).map_err(|e| e.to_string())?;
    ensure!(format!("{:.3}", b[0]) == "0.002", "bonferroni {b:?}");
    let d = cohens_d(&[2.0, 4.0], &[1.0, 3.0]).map_err(|e| e.to_string())?;
    ensure!((d - 1.0 / 2f64.sqrt()).abs() < 1e-12, "d = {d}");
    let mut rng = SeededRng::new(6);
    for trial in 0..1000 {
        let n = 1 + rng.below(12) as usize;
        let ps: Vec<f64> = (0..n).map(|_| rng.below(1_000_001) as f64 / 1e6).collect();
        let (h, b) = (holm(&ps).unwrap(), bonferroni(&ps, None).unwrap());
        ensure!(
            h.iter().zip(&b).all(|(x, y)| x <= y),
            "trial {trial}: holm > bonferroni"
        );
    }
    Ok(format!(
        "t={:.6} df=2 p={:.3e}, holm/bonferroni/d exact, 1000 holm<=bonferroni trials",
        t.t, t.p
    ))
}

// 7
fn handle(price_in: &str, price_out: &str) -> ModelHandle {
    ModelHandle {
        provider_id: "p".into(),
        model_id: "m".into(),
        supports_raw_cot: false,
        price_in_usd_per_1m: price_in.parse().unwrap(),
        price_out_usd_per_1m: price_out.parse().unwrap(),
        context_window: 1,
    }
}

fn cost() -> Outcome {
    let r1 = handle("0.40", "1.75");
    let c = run_cost([(1_000_000, 1_000_000)], &r1);
    ensure!(c == Decimal::new(215, 2), "cost {c}");
    let mut rng = SeededRng::new(7);
    for trial in 0..100 {
        let usage: Vec<(u64, u64)> = (0..1 + rng.below(30))
            .map(|_| (rng.below(50_000), rng.below(20_000)))
            .collect();
        let mask: Vec<bool> = usage.iter().map(|_| rng.below(2) == 1).collect();
        let part = |side: bool| {
            usage
                .iter()
                .zip(&mask)
                .filter(move |(_, m)| **m == side)
                .map(|(u, _)| *u)
        };
        let whole = run_cost(usage.iter().copied(), &r1);
        ensure!(
            whole == run_cost(part(true), &r1) + run_cost(part(false), &r1),
            "trial {trial}: not additive"
        );
    }
    for trial in 0..50 {
        let n = 1 + rng.below(25) as usize;
        // Coarse grid so ties and duplicates occur.
        let pts: Vec<CostPoint> = (0..n)
            .map(|_| CostPoint {
                cost: rng.below(10) as f64,
                accuracy: rng.below(10) as f64 * 10.0,
            })
            .collect();
        let mut oracle = Vec::new();
        for i in 0..n {
            let mut dominated = false;
            for j in 0..n {
                let (p, q) = (pts[i], pts[j]);
                let no_worse = q.cost <= p.cost && q.accuracy >= p.accuracy;
                let better = q.cost < p.cost || q.accuracy > p.accuracy;
                if no_worse && better {
                    dominated = true;
                }
            }
            if !dominated {
                oracle.push(i);
            }
        }
        ensure!(pareto_frontier(&pts) == oracle, "trial {trial}: frontier differs");
    }
    Ok("$2.15 exact, 100 partitions additive, 50 frontiers match dominance oracle".into())
}

// 8
fn prt_statistics() -> Outcome {
    let mut rng = SeededRng::new(8);
    let mut records = Vec::new();
    let (mut words, mut sents) = (Vec::new(), Vec::new());
    for i in 0..40 {
        let n_sent = 2 + rng.below(6) as usize;
        let mut lines = Vec::new();
        let mut w = 0;
        for s in 0..n_sent {
            let n_words = 1 + rng.below(12) as usize;
            let body: Vec<String> = (0..n_words).map(|j| format!("w{j}")).collect();
            // The enumeration marker is a whitespace-separated token too.
            lines.push(format!("{}. {}.", s + 1, body.join(" ")));
            w += n_words + 1;
        }
        let text = lines.join("\n");
        words.push(w);
        sents.push(n_sent);
        records.push(prt_record(&format!("r{i}"), &text));
    }
    for (r, (w, s)) in records.iter().zip(words.iter().zip(&sents)) {
        ensure!(
            r.word_count == *w && r.sentence_count == *s,
            "{}: {}/{} vs {w}/{s}",
            r.case_id,
            r.word_count,
            r.sentence_count
        );
    }
    let st = prt_stats(&records).map_err(|e| e.to_string())?;
    let n = records.len() as f64;
    let wsum: usize = words.iter().sum();
    let ssum: usize = sents.iter().sum();
    ensure!(st.mu_word * n == wsum as f64 && st.mu_sent * n == ssum as f64, "means");
    let pop_sd = |xs: &[usize]| {
        let m = xs.iter().sum::<usize>() as f64 / xs.len() as f64;
        (xs.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
    };
    ensure!((st.sigma_word - pop_sd(&words)).abs() < 1e-9, "sigma_word");
    ensure!((st.sigma_sent - pop_sd(&sents)).abs() < 1e-9, "sigma_sent");
    let (mu, sd) = mean_sd(&[100.0, 200.0]);
    ensure!(mu == 150.0 && sd == 50.0, "mean_sd {{100,200}} = ({mu}, {sd})");
    Ok(format!(
        "40 traces recounted exactly ({wsum} words, {ssum} sentences), sigma{{100,200}}=50"
    ))
}

// 9
fn selection() -> Outcome {
    let s = load_synthetic();
    let pool = synthetic_pool(&s);
    ensure!(
        SeededRng::new(42).sample_indices(309, 3) == [204, 57, 142],
        "frozen draw changed"
    );
    let frozen = select_random(&pool, 3, 42).map_err(|e| e.to_string())?;
    ensure!(frozen == [1, 0, 6], "select_random(seed 42) = {frozen:?}");
    let target: &CaseRecord = s.dataset.get("te01").unwrap();
    let providers = load_provider_config(&synthetic("mock_provider.json")).unwrap();
    let judge = providers.handle("judge").unwrap();
    let mut checked = Vec::new();
    for (reply, flag) in [
        ("0,0,12", FLAG_REPAIRED),
        ("9,9,9", FLAG_REPAIRED),
        ("3", FLAG_REPAIRED),
        ("none", FLAG_FALLBACK),
    ] {
        let gw = mock_gateway(MockScript::default().rule("CANDIDATE CASES", reply));
        let model = Model::new(&gw, &judge, SamplingConfig::assess().with_seed(Some(1)));
        let sel = select_relevant(target, &pool, 3, &model, &s.policy.title, 42, 40).map_err(|e| e.to_string())?;
        let distinct: BTreeSet<usize> = sel.indices.iter().copied().collect();
        ensure!(
            sel.indices.len() == 3 && distinct.len() == 3,
            "{reply}: {:?}",
            sel.indices
        );
        ensure!(sel.indices.iter().all(|&i| i < pool.len()), "{reply}: out of range");
        ensure!(sel.flags.contains(flag), "{reply}: flags {:?}", sel.flags);
        ensure!(gw.provider_calls() == 2, "{reply}: {} judge calls", gw.provider_calls());
        checked.push(format!("{reply:?}->{:?}", sel.indices));
    }
    Ok(format!("seed 42 draw frozen, repaired {}", checked.join(" ")))
}

// 10
fn sft_export() -> Outcome {
    let s = load_synthetic();
    let pool = synthetic_pool(&s);
    let (records, summary) = build_records(&pool, &s.policy, &s.dataset).map_err(|e| e.to_string())?;
    ensure!(
        records.len() == pool.len() && summary.records == pool.len(),
        "record count"
    );
    let mut audited = 0;
    for (r, t) in records.iter().zip(&pool.triples) {
        if t.case.gold_clauses.is_empty() {
            ensure!(r.policy_context == s.policy.full_text, "{}: fallback", t.case.case_id);
            continue;
        }
        let gold_texts: Vec<String> = t
            .case
            .gold_clauses
            .iter()
            .map(|c| s.policy.clause_text(c).unwrap())
            .collect();
        for id in &s.policy.clause_ids {
            let text = s.policy.clause_text(id).unwrap();
            let present = r.policy_context.contains(&text);
            ensure!(
                present == gold_texts.contains(&text),
                "{}: {id} present={present}",
                t.case.case_id
            );
        }
        let rebuilt: usize = gold_texts.iter().map(|g| g.len()).sum::<usize>() + 2 * (gold_texts.len() - 1);
        ensure!(
            r.policy_context.len() == rebuilt,
            "{}: extra text in context",
            t.case.case_id
        );
        audited += 1;
    }
    let test_hashes: BTreeSet<String> = s
        .dataset
        .split(prt_core::Split::Test)
        .map(|c| normalized_text_hash(&c.case_text))
        .collect();
    ensure!(
        records
            .iter()
            .all(|r| !test_hashes.contains(&normalized_text_hash(&r.case))),
        "leak in clean export"
    );

    // A test case that differs from a train case only in case and spacing.
    let mut text = std::fs::read_to_string(synthetic("dataset.jsonl")).unwrap();
    text.push_str(
        "{\"case_id\": \"te99\", \"case_text\": \"a  PHARMACY sent a member's prescription history to the member's \
         insurer to settle a claim. \", \"verdict\": \"COMPLIANT\", \"clauses\": [], \"split\": \"test\"}\n",
    );
    let adversarial = dataset_from_str(&text, &s.policy, &LabelMap::default(), "adversarial").unwrap();
    let aug = AugmentedDataset::assemble(&adversarial, pool.records()).unwrap();
    match build_records(&aug, &s.policy, &adversarial) {
        Err(ExportError::Leakage { case_id, test_case_id }) if case_id == "tr01" && test_case_id == "te99" => {}
        other => return Err(format!("near-duplicate not caught: {:?}", other.map(|r| r.0.len()))),
    }
    Ok(format!(
        "{} records, {audited} contexts audited, near-duplicate leak refused",
        records.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("golden prompts", golden_prompts),
        ("mock end-to-end", mock_end_to_end),
        ("PRT validation gate", prt_gate),
        ("verdict parser", verdict_parser),
        ("metric oracles", metric_oracles),
        ("statistics", statistics),
        ("cost and Pareto", cost),
        ("PRT statistics", prt_statistics),
        ("selection", selection),
        ("SFT export", sft_export),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match std::panic::catch_unwind(f) {
            Ok(Ok(detail)) => println!("[PASS] {:>2} {name}: {detail}", i + 1),
            Ok(Err(why)) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: {why}", i + 1);
            }
            Err(_) => {
                failed += 1;
                println!("[FAIL] {:>2} {name}: panicked", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
