use anyhow::{bail, Context, Result};
use prt_core::assess::{run_dataset, RunContext, RunFiles, SelectionMode, Strategy, StrategyKind};
use prt_core::prtgen::AugmentedDataset;
use prt_core::select::DEFAULT_WINDOW;

use crate::workspace::Workspace;
use crate::Outcome;

#[derive(Debug, clap::Args)]
pub struct AssessArgs {
    #[arg(long)]
    pub policy: String,
    /// Learner name from the config.
    #[arg(long)]
    pub learner: String,
    /// base, fewshot, fewshot_prt, selfrefine or selfrefine_prt.
    #[arg(long, value_parser = parse_kind)]
    pub strategy: StrategyKind,
    /// Demonstration selection for trace strategies: rand or rel.
    #[arg(long = "select", value_parser = parse_selection)]
    pub selection: Option<SelectionMode>,
    /// Number of demonstrations.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    pub k: u64,
    /// Expert whose PRT store supplies the demonstration pool.
    #[arg(long)]
    pub expert: Option<String>,
    /// Candidates shown to the judge per selection call.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
}

fn parse_kind(s: &str) -> Result<StrategyKind, String> {
    s.parse().map_err(|e: prt_core::assess::AssessError| e.to_string())
}

fn parse_selection(s: &str) -> Result<SelectionMode, String> {
    s.parse().map_err(|e: prt_core::assess::AssessError| e.to_string())
}

pub fn run(ws: &mut Workspace, args: &AssessArgs) -> Result<Outcome> {
    let strategy = Strategy::new(args.strategy, args.selection, args.k as usize)?;
    let learner_spec = ws.settings.learner(&args.learner)?.to_string();
    let bundle = ws.bundle(&args.policy)?;
    let learner = ws.model(&learner_spec, &format!("learners.{}", args.learner))?;

    let mut run_name = format!("{}__{}", args.learner, strategy.label());
    let pool = if strategy.kind.needs_pool() {
        let expert = match &args.expert {
            Some(e) => e.clone(),
            None => ws.settings.default_expert()?.to_string(),
        };
        ws.settings.expert(&expert)?;
        let store = ws.prt_dir(&args.policy, &expert).join("prts.jsonl");
        if !store.exists() {
            bail!(
                "no PRT store at {}; run `gen --policy {} --expert {expert}` first",
                store.display(),
                args.policy
            );
        }
        run_name.push_str(&format!("__{expert}"));
        Some(AugmentedDataset::load(&store, &bundle.dataset).with_context(|| format!("loading {}", store.display()))?)
    } else {
        None
    };
    let judge = if strategy.selection == Some(SelectionMode::Rel) {
        let spec = ws
            .settings
            .file
            .judge
            .clone()
            .context("judge: relevance selection needs a judge model")?;
        Some(ws.model(&spec, "judge")?)
    } else {
        None
    };

    let mut ctx = RunContext::new(&bundle.policy, strategy, &ws.gateway, &learner, ws.settings.seed);
    ctx.window = args.window;
    if let Some(p) = &pool {
        ctx = ctx.with_pool(p);
    }
    if let Some(j) = &judge {
        ctx = ctx.with_judge(j);
    }
    let files = RunFiles::new(ws.runs_dir(&args.policy).join(&run_name));
    let summary = run_dataset(
        &ctx,
        &bundle.dataset,
        &files,
        ws.settings.concurrency,
        &ws.settings.clock,
        ws.settings.snapshot(),
    )?;
    tracing::info!(
        run = %run_name,
        completed = summary.completed,
        accuracy = ?summary.accuracy,
        flagged = summary.flagged,
        provider_calls = ws.gateway.provider_calls(),
        "assessment finished"
    );
    if !summary.failed.is_empty() {
        bail!("{} case(s) failed, rerun to resume", summary.failed.len());
    }
    Ok(Outcome::check(
        "flagged",
        summary.flagged,
        summary.total_cases,
        ws.settings.max_flagged_fraction,
    ))
}
