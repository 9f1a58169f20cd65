use anyhow::{bail, Context, Result};
use prt_core::jsonl;
use prt_core::prtgen::AugmentedDataset;
use prt_core::sftexport::{build_records, write_split};
use serde_json::json;

use crate::workspace::{CommandManifest, Workspace};
use crate::Outcome;

#[derive(Debug, clap::Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub policy: String,
    #[arg(long)]
    pub expert: Option<String>,
    /// Share of records held out for validation.
    #[arg(long, default_value_t = 0.0)]
    pub val_fraction: f64,
}

pub fn run(ws: &mut Workspace, args: &ExportArgs) -> Result<Outcome> {
    let expert = match &args.expert {
        Some(e) => e.clone(),
        None => ws.settings.default_expert()?.to_string(),
    };
    ws.settings.expert(&expert)?;
    let bundle = ws.bundle(&args.policy)?;
    let store = ws.prt_dir(&args.policy, &expert).join("prts.jsonl");
    if !store.exists() {
        bail!("no PRT store at {}", store.display());
    }
    let aug =
        AugmentedDataset::load(&store, &bundle.dataset).with_context(|| format!("loading {}", store.display()))?;
    let dir = ws.policy_dir(&args.policy).join("sft").join(&expert);
    CommandManifest::new(
        ws,
        "export-sft",
        &args.policy,
        json!({ "expert": expert, "pool_hash": aug.content_hash(), "val_fraction": args.val_fraction }),
    )
    .write(&dir)?;

    let (records, summary) = build_records(&aug, &bundle.policy, &bundle.dataset)?;
    jsonl::write_all(&dir.join("sft.jsonl"), &records)?;
    write_split(&records, args.val_fraction, ws.settings.seed, &dir)?;
    jsonl::write_json_pretty(&dir.join("summary.json"), &summary)?;
    tracing::info!(
        records = summary.records,
        full_policy_fallback = summary.full_policy_fallback.len(),
        dir = %dir.display(),
        "export finished"
    );
    Ok(Outcome::Ok)
}
