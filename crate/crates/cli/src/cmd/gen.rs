use anyhow::{Context, Result};
use prt_core::corpus::Split;
use prt_core::jsonl;
use prt_core::prompts::{template_hash, TemplateId};
use prt_core::prtgen::{generate_all, prt_stats, AugmentedDataset};
use serde_json::json;

use crate::workspace::{CommandManifest, Workspace};
use crate::Outcome;

#[derive(Debug, clap::Args)]
pub struct GenArgs {
    /// Policy name from the config.
    #[arg(long)]
    pub policy: String,
    /// Expert name from the config; optional when only one is configured.
    #[arg(long)]
    pub expert: Option<String>,
}

pub fn run(ws: &mut Workspace, args: &GenArgs) -> Result<Outcome> {
    let expert_name = match &args.expert {
        Some(e) => e.clone(),
        None => ws.settings.default_expert()?.to_string(),
    };
    let spec = ws.settings.expert(&expert_name)?.to_string();
    let bundle = ws.bundle(&args.policy)?;
    let expert = ws.model(&spec, &format!("experts.{expert_name}"))?;
    let dir = ws.prt_dir(&args.policy, &expert_name);
    CommandManifest::new(
        ws,
        "gen",
        &args.policy,
        json!({
            "expert": expert_name,
            "expert_model": expert.label(),
            "template_hash": template_hash(TemplateId::PrtGenerate),
        }),
    )
    .write(&dir)?;

    let run = generate_all(
        &bundle.dataset,
        &bundle.policy,
        &ws.gateway,
        &expert,
        ws.settings.seed,
        &ws.settings.clock,
    )?;
    // Round-trips the store through the same checks `assess` applies.
    let aug = AugmentedDataset::assemble(&bundle.dataset, run.records.clone()).context("assembling PRT store")?;
    jsonl::write_all(&dir.join("prts.jsonl"), &run.records)?;
    jsonl::write_all(&dir.join("quarantine.jsonl"), &run.quarantined)?;
    let stats = if run.records.is_empty() {
        serde_json::Value::Null
    } else {
        serde_json::to_value(prt_stats(&run.records)?)?
    };
    let attempted = bundle.dataset.count(Split::Train);
    jsonl::write_json_pretty(
        &dir.join("prt_stats.json"),
        &json!({
            "train_cases": attempted,
            "accepted": aug.len(),
            "quarantined": run.quarantined.len(),
            "stats": stats,
        }),
    )?;
    tracing::info!(
        accepted = aug.len(),
        quarantined = run.quarantined.len(),
        provider_calls = ws.gateway.provider_calls(),
        store = %dir.join("prts.jsonl").display(),
        "generation finished"
    );
    for q in &run.quarantined {
        tracing::warn!(case = %q.case_id, reason = ?q.reason, "quarantined");
    }
    Ok(Outcome::check(
        "quarantined",
        run.quarantined.len(),
        attempted,
        ws.settings.max_flagged_fraction,
    ))
}
