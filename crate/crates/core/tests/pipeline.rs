use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use prt_core::assess::{run_dataset, AssessError, RunContext, RunFiles, SelectionMode, Strategy, StrategyKind};
use prt_core::clauses::ClauseRegistry;
use prt_core::corpus::{load_dataset, load_policy, Dataset, Policy};
use prt_core::gateway::{
    load_provider_config, Gateway, MockProvider, MockScript, ModelHandle, Provider, ProviderConfig, ProviderError,
    ProviderReply, ResponseCache, SamplingConfig,
};
use prt_core::prtgen::{generate_all, AugmentedDataset};
use prt_core::tokenize::BpeEstimator;
use prt_core::Clock;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/synthetic")
        .join(name)
}

struct Env {
    policy: Policy,
    dataset: Dataset,
    providers: ProviderConfig,
}

fn env() -> Env {
    let registry = ClauseRegistry::load(&fixture("registry.json")).unwrap();
    let policy = load_policy(&fixture("policy.md"), &registry, &BpeEstimator).unwrap();
    let dataset = load_dataset(&fixture("dataset.jsonl"), &policy).unwrap();
    let providers = load_provider_config(&fixture("mock_provider.json")).unwrap();
    Env {
        policy,
        dataset,
        providers,
    }
}

/// Fails every prompt containing `needle` while armed.
struct Flaky {
    inner: MockProvider,
    needle: &'static str,
    armed: AtomicBool,
}

impl Provider for Flaky {
    fn call(&self, model: &ModelHandle, prompt: &str, cfg: &SamplingConfig) -> Result<ProviderReply, ProviderError> {
        if self.armed.load(Ordering::SeqCst) && prompt.contains(self.needle) {
            return Err(ProviderError::Other("injected failure".into()));
        }
        self.inner.call(model, prompt, cfg)
    }
}

fn flaky_gateway(needle: &'static str) -> (Gateway, Arc<Flaky>) {
    let script = MockScript::load(&fixture("mock_script.json")).unwrap();
    let flaky = Arc::new(Flaky {
        inner: MockProvider::new(script).unwrap(),
        needle,
        armed: AtomicBool::new(true),
    });
    let mut gw = Gateway::new(ResponseCache::disabled());
    gw.register("mock", flaky.clone(), 4);
    (gw, flaky)
}

fn gateway() -> Gateway {
    let (gw, flaky) = flaky_gateway("never present in any prompt");
    flaky.armed.store(false, Ordering::SeqCst);
    gw
}

fn clock() -> Clock {
    Clock::Fixed("2025-01-01T00:00:00Z".parse().unwrap())
}

fn pool(e: &Env, gw: &Gateway) -> AugmentedDataset {
    let expert = e.providers.handle("expert").unwrap();
    let run = generate_all(&e.dataset, &e.policy, gw, &expert, 42, &clock()).unwrap();
    AugmentedDataset::assemble(&e.dataset, run.records).unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn generation_quarantines_the_mismatching_case() {
    let e = env();
    let gw = gateway();
    let expert = e.providers.handle("expert").unwrap();
    let run = generate_all(&e.dataset, &e.policy, &gw, &expert, 42, &clock()).unwrap();
    assert_eq!(run.records.len(), 7);
    assert_eq!(run.quarantined.len(), 1);
    assert_eq!(run.quarantined[0].case_id, "tr07");
    assert_eq!(run.quarantined[0].attempts, 2);
    // 7 accepted on first try, the quarantined case asked twice.
    assert_eq!(gw.provider_calls(), 9);
    let again = generate_all(&e.dataset, &e.policy, &gateway(), &expert, 42, &clock()).unwrap();
    assert_eq!(again.records, run.records);
}

#[test]
fn failed_case_is_resumed_without_redoing_the_rest() {
    let e = env();
    let learner = e.providers.handle("learner").unwrap();
    let strategy = Strategy::new(StrategyKind::Base, None, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = RunFiles::new(dir.path().join("run"));

    let (gw, flaky) = flaky_gateway("breach");
    let ctx = RunContext::new(&e.policy, strategy, &gw, &learner, 42);
    let first = run_dataset(&ctx, &e.dataset, &files, 2, &clock(), serde_json::Value::Null).unwrap();
    assert_eq!(first.completed, 3);
    assert_eq!(first.failed.len(), 1);
    assert_eq!(first.failed[0].case_id, "te04");
    let calls = gw.provider_calls();

    flaky.armed.store(false, Ordering::SeqCst);
    let second = run_dataset(&ctx, &e.dataset, &files, 2, &clock(), serde_json::Value::Null).unwrap();
    assert_eq!(second.completed, 4);
    assert!(second.failed.is_empty());
    assert_eq!(gw.provider_calls() - calls, 1);

    let clean_gw = gateway();
    let clean_ctx = RunContext::new(&e.policy, strategy, &clean_gw, &learner, 42);
    let clean = RunFiles::new(dir.path().join("clean"));
    run_dataset(&clean_ctx, &e.dataset, &clean, 4, &clock(), serde_json::Value::Null).unwrap();
    assert_eq!(read(&files.results()), read(&clean.results()));
    assert_eq!(read(&files.manifest()), read(&clean.manifest()));
}

#[test]
fn torn_trailing_line_is_dropped_and_redone() {
    let e = env();
    let learner = e.providers.handle("learner").unwrap();
    let strategy = Strategy::new(StrategyKind::Base, None, 3).unwrap();
    let gw = gateway();
    let ctx = RunContext::new(&e.policy, strategy, &gw, &learner, 42);
    let dir = tempfile::tempdir().unwrap();
    let files = RunFiles::new(dir.path());
    run_dataset(&ctx, &e.dataset, &files, 4, &clock(), serde_json::Value::Null).unwrap();
    let complete = read(&files.results());

    let lines: Vec<&str> = complete.lines().collect();
    let torn = format!("{}\n{}\n{}", lines[0], lines[1], &lines[2][..lines[2].len() / 2]);
    std::fs::write(files.results(), torn).unwrap();
    let calls = gw.provider_calls();
    let s = run_dataset(&ctx, &e.dataset, &files, 4, &clock(), serde_json::Value::Null).unwrap();
    assert_eq!(s.completed, 4);
    assert_eq!(gw.provider_calls() - calls, 2);
    assert_eq!(read(&files.results()), complete);
}

#[test]
fn different_configuration_refuses_to_resume() {
    let e = env();
    let learner = e.providers.handle("learner").unwrap();
    let strategy = Strategy::new(StrategyKind::Base, None, 3).unwrap();
    let gw = gateway();
    let dir = tempfile::tempdir().unwrap();
    let files = RunFiles::new(dir.path());
    let ctx = RunContext::new(&e.policy, strategy, &gw, &learner, 42);
    run_dataset(&ctx, &e.dataset, &files, 4, &clock(), serde_json::Value::Null).unwrap();
    let other = RunContext::new(&e.policy, strategy, &gw, &learner, 7);
    let err = run_dataset(&other, &e.dataset, &files, 4, &clock(), serde_json::Value::Null).unwrap_err();
    assert!(matches!(err, AssessError::ManifestMismatch(_)));
}

#[test]
fn every_strategy_is_reproducible_with_expected_turns() {
    let e = env();
    let learner = e.providers.handle("learner").unwrap();
    let judge = e.providers.handle("judge").unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (kind, sel) in [
        (StrategyKind::Base, None),
        (StrategyKind::Fewshot, None),
        (StrategyKind::FewshotPrt, Some(SelectionMode::Rel)),
        (StrategyKind::Selfrefine, None),
        (StrategyKind::SelfrefinePrt, Some(SelectionMode::Rand)),
    ] {
        let strategy = Strategy::new(kind, sel, 3).unwrap();
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let gw = gateway();
            let aug = pool(&e, &gw);
            let ctx = RunContext::new(&e.policy, strategy, &gw, &learner, 42)
                .with_pool(&aug)
                .with_judge(&judge);
            let files = RunFiles::new(dir.path().join(format!("{}-{rep}", strategy.label())));
            run_dataset(&ctx, &e.dataset, &files, 3, &clock(), serde_json::Value::Null).unwrap();
            let results = prt_core::assess::load_results(&files.results()).unwrap();
            assert!(results.iter().all(|r| r.turns.len() == kind.turns()), "{kind:?}");
            outputs.push(read(&files.results()));
        }
        assert_eq!(outputs[0], outputs[1], "{}", strategy.label());
    }
}
