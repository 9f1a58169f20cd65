use anyhow::Result;
use prt_core::corpus::{split_disjointness_check, Split};
use prt_core::prtgen::AugmentedDataset;

use crate::workspace::Workspace;
use crate::Outcome;

#[derive(Debug, clap::Args)]
pub struct ValidateArgs {
    /// Policy to check; all configured policies when omitted.
    #[arg(long)]
    pub policy: Option<String>,
}

/// Loads every configured input and any PRT stores already written, and
/// reports what is wrong with them.
pub fn run(ws: &mut Workspace, args: &ValidateArgs) -> Result<Outcome> {
    let names: Vec<String> = match &args.policy {
        Some(p) => vec![p.clone()],
        None => ws.settings.file.policies.keys().cloned().collect(),
    };
    for (field, spec) in ws
        .settings
        .file
        .experts
        .iter()
        .map(|(k, v)| (format!("experts.{k}"), v))
        .chain(
            ws.settings
                .file
                .learners
                .iter()
                .map(|(k, v)| (format!("learners.{k}"), v)),
        )
        .chain(ws.settings.file.judge.iter().map(|v| ("judge".to_string(), v)))
    {
        if ws.handle(spec).is_none() {
            anyhow::bail!("{field}: `{spec}` names no configured model");
        }
    }
    let mut problems = 0usize;
    for name in &names {
        let bundle = ws.bundle(name)?;
        let d = &bundle.dataset;
        println!(
            "{name}: {} sections, {} train, {} test",
            bundle.policy.clause_ids.len(),
            d.count(Split::Train),
            d.count(Split::Test)
        );
        let split = split_disjointness_check(d);
        if !split.is_clean() {
            problems += 1;
            println!("{name}: split overlap: {split}");
        }
        for expert in ws.settings.file.experts.keys() {
            let store = ws.prt_dir(name, expert).join("prts.jsonl");
            if !store.exists() {
                continue;
            }
            match AugmentedDataset::load(&store, d) {
                Ok(aug) => println!("{name}/{expert}: {} PRTs ok", aug.len()),
                Err(e) => {
                    problems += 1;
                    println!("{name}/{expert}: {e}");
                }
            }
        }
    }
    if problems > 0 {
        anyhow::bail!("{problems} problem(s) found");
    }
    Ok(Outcome::Ok)
}
