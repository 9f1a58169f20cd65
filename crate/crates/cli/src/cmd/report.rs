use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use prt_core::assess::{load_results, InstanceResult, RunFiles, RunManifest};
use prt_core::gateway::{Model, SamplingConfig};
use prt_core::jsonl;
use prt_core::metrics::{accuracy, clause_relevance, utilization, ClauseRelevanceReport, UtilizationReport};
use prt_core::stats::{
    bonferroni, cohens_d, effect_label, holm, paired_t_one_sided, pareto_frontier, run_cost, CostPoint, Direction,
};
use rust_decimal::Decimal;
use serde::Serialize;
use serde_json::json;

use crate::workspace::{CommandManifest, Workspace};
use crate::Outcome;

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// Run directories; defaults to every run of `--policy`.
    pub runs: Vec<PathBuf>,
    #[arg(long)]
    pub policy: Option<String>,
    /// Extract cited clauses with the judge model instead of patterns.
    #[arg(long)]
    pub clause_judge: bool,
    /// Count trace references in raw reasoning with the judge model.
    #[arg(long)]
    pub utilization: bool,
    /// A cited sub-clause also recalls its gold parent section.
    #[arg(long)]
    pub parent_credit: bool,
    /// Output directory; defaults to `<out_dir>/<policy>/report`.
    #[arg(long)]
    pub report_dir: Option<PathBuf>,
}

pub struct Run {
    pub name: String,
    pub manifest: RunManifest,
    pub results: Vec<InstanceResult>,
}

#[derive(Debug, Serialize)]
pub struct RunMetrics {
    pub run: String,
    pub run_id: String,
    pub learner: String,
    pub strategy: String,
    pub n: usize,
    pub unparsed: usize,
    pub accuracy: f64,
    pub clause_relevance: Option<ClauseRelevanceReport>,
    pub utilization: Option<UtilizationReport>,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_usd: Option<Decimal>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub learner: String,
    pub treatment: String,
    pub control: String,
    pub n: usize,
    pub acc_treatment: f64,
    pub acc_control: f64,
    pub t: Option<f64>,
    pub df: Option<u32>,
    pub p: Option<f64>,
    pub p_bonferroni: Option<f64>,
    pub p_holm: Option<f64>,
    pub cohens_d: Option<f64>,
    pub effect: Option<String>,
    pub note: String,
}

fn load_run(dir: &Path) -> Result<Run> {
    let files = RunFiles::new(dir);
    let manifest: RunManifest =
        jsonl::read_json(&files.manifest()).with_context(|| format!("{} is not a run directory", dir.display()))?;
    let results = load_results(&files.results()).with_context(|| format!("reading results of {}", dir.display()))?;
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| manifest.run_id.clone());
    Ok(Run {
        name,
        manifest,
        results,
    })
}

fn correctness(r: &InstanceResult) -> f64 {
    if r.is_correct() {
        1.0
    } else {
        0.0
    }
}

/// Pairs each trace run with the matching no-trace run of the same learner
/// and tests whether the trace run is more accurate, case by case.
pub fn comparisons(runs: &[Run]) -> Vec<Comparison> {
    let mut rows = Vec::new();
    for treat in runs {
        let Some(base_kind) = treat.manifest.strategy.kind.baseline() else {
            continue;
        };
        let controls: Vec<&Run> = runs
            .iter()
            .filter(|c| {
                c.manifest.learner_model == treat.manifest.learner_model && c.manifest.strategy.kind == base_kind
            })
            .collect();
        let control = controls
            .iter()
            .find(|c| c.manifest.strategy.k == treat.manifest.strategy.k)
            .or_else(|| controls.first());
        let Some(control) = control else {
            continue;
        };
        let ctrl: std::collections::HashMap<&str, &InstanceResult> =
            control.results.iter().map(|r| (r.case_id.as_str(), r)).collect();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for r in &treat.results {
            if let Some(c) = ctrl.get(r.case_id.as_str()) {
                a.push(correctness(r));
                b.push(correctness(c));
            }
        }
        let acc = |xs: &[f64]| {
            if xs.is_empty() {
                0.0
            } else {
                100.0 * xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        let mut row = Comparison {
            learner: treat.manifest.learner_model.clone(),
            treatment: treat.name.clone(),
            control: control.name.clone(),
            n: a.len(),
            acc_treatment: acc(&a),
            acc_control: acc(&b),
            t: None,
            df: None,
            p: None,
            p_bonferroni: None,
            p_holm: None,
            cohens_d: None,
            effect: None,
            note: String::new(),
        };
        match paired_t_one_sided(&a, &b, Direction::AGtB) {
            Ok(t) => {
                row.t = Some(t.t);
                row.df = Some(t.df);
                row.p = Some(t.p);
            }
            Err(e) => row.note = e.to_string(),
        }
        if let Ok(d) = cohens_d(&a, &b) {
            row.cohens_d = Some(d);
            row.effect = Some(effect_label(d).to_string());
        }
        rows.push(row);
    }
    let tested: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].p.is_some()).collect();
    let ps: Vec<f64> = tested.iter().filter_map(|&i| rows[i].p).collect();
    if !ps.is_empty() {
        let bon = bonferroni(&ps, None).expect("p-values in range");
        let hol = holm(&ps).expect("p-values in range");
        for (j, &i) in tested.iter().enumerate() {
            rows[i].p_bonferroni = Some(bon[j]);
            rows[i].p_holm = Some(hol[j]);
        }
    }
    rows
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

fn write_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

fn collect_dirs(ws: &Workspace, args: &ReportArgs) -> Result<Vec<PathBuf>> {
    if !args.runs.is_empty() {
        return Ok(args.runs.clone());
    }
    let Some(policy) = &args.policy else {
        bail!("pass run directories or --policy");
    };
    let root = ws.runs_dir(policy);
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&root)
        .with_context(|| format!("no runs under {}", root.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("manifest.json").exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn run(ws: &mut Workspace, args: &ReportArgs) -> Result<Outcome> {
    let dirs = collect_dirs(ws, args)?;
    if dirs.is_empty() {
        bail!("no runs to report");
    }
    let runs: Vec<Run> = dirs.iter().map(|d| load_run(d)).collect::<Result<_>>()?;
    let policies: BTreeSet<&str> = runs.iter().map(|r| r.manifest.policy_id.as_str()).collect();
    if policies.len() > 1 {
        bail!("runs span several policies {:?}; report one policy at a time", policies);
    }
    let policy_id = policies.into_iter().next().expect("one policy").to_string();
    if let Some(p) = &args.policy {
        if *p != policy_id {
            bail!("--policy {p} does not match runs of policy `{policy_id}`");
        }
    }
    let out = args
        .report_dir
        .clone()
        .unwrap_or_else(|| ws.policy_dir(&policy_id).join("report"));
    CommandManifest::new(
        ws,
        "report",
        &policy_id,
        json!({
            "runs": runs.iter().map(|r| &r.manifest.run_id).collect::<Vec<_>>(),
            "clause_judge": args.clause_judge,
            "utilization": args.utilization,
            "parent_credit": args.parent_credit,
        }),
    )
    .write(&out)?;

    let bundle = ws.bundle(&policy_id)?;
    let judge = if args.clause_judge || args.utilization {
        let spec = ws
            .settings
            .file
            .judge
            .clone()
            .context("judge: metric extraction needs a judge model")?;
        Some(ws.model(&spec, "judge")?)
    } else {
        None
    };
    let sampling = SamplingConfig::assess().with_seed(Some(ws.settings.seed));
    let judge_model = judge.as_ref().map(|h| Model::new(&ws.gateway, h, sampling));

    let mut metrics = Vec::new();
    let mut flagged = 0usize;
    let mut total = 0usize;
    for run in &runs {
        if run.results.is_empty() {
            bail!("run {} has no results", run.name);
        }
        let extractor = if args.clause_judge { judge_model.as_ref() } else { None };
        let relevance = match clause_relevance(
            &run.results,
            &bundle.dataset,
            &bundle.registry,
            extractor,
            args.parent_credit,
        ) {
            Ok((r, _)) => Some(r),
            Err(prt_core::metrics::MetricsError::NoGoldAnnotations) => None,
            Err(e) => return Err(e).with_context(|| format!("clause relevance of {}", run.name)),
        };
        if let Some(r) = &relevance {
            flagged += r.flagged;
            total += r.records;
        }
        let util = match (&judge_model, args.utilization && run.manifest.strategy.kind.uses_prt()) {
            (Some(j), true) => match utilization(&run.results, j) {
                Ok((u, _)) => {
                    flagged += u.flagged;
                    total += u.n;
                    Some(u)
                }
                Err(prt_core::metrics::MetricsError::MissingRawCot(case)) => {
                    tracing::warn!(run = %run.name, %case, "no raw reasoning, utilization skipped");
                    None
                }
                Err(e) => return Err(e).with_context(|| format!("utilization of {}", run.name)),
            },
            _ => None,
        };
        let (tin, tout) = run
            .results
            .iter()
            .map(InstanceResult::tokens)
            .fold((0, 0), |(a, b), (x, y)| (a + x, b + y));
        let cost = ws
            .handle(&run.manifest.learner_model)
            .map(|h| run_cost(run.results.iter().map(InstanceResult::tokens), &h));
        metrics.push(RunMetrics {
            run: run.name.clone(),
            run_id: run.manifest.run_id.clone(),
            learner: run.manifest.learner_model.clone(),
            strategy: run.manifest.strategy.label(),
            n: run.results.len(),
            unparsed: run.results.iter().filter(|r| r.parsed_verdict.is_none()).count(),
            accuracy: accuracy(&run.results)?,
            clause_relevance: relevance,
            utilization: util,
            prompt_tokens: tin,
            completion_tokens: tout,
            cost_usd: cost,
        });
    }
    let comps = comparisons(&runs);

    jsonl::write_json_pretty(
        &out.join("metrics.json"),
        &json!({ "policy_id": policy_id, "runs": metrics, "comparisons": comps }),
    )?;
    write_csv(
        &out.join("metrics.csv"),
        &[
            "run",
            "learner",
            "strategy",
            "n",
            "accuracy",
            "unparsed",
            "mu_cited",
            "recall_pct",
            "exact_match_pct",
            "top_incorrect_clause",
            "mu_ref",
            "sigma_ref",
            "pct_util",
        ],
        metrics
            .iter()
            .map(|m| {
                let r = m.clause_relevance.as_ref();
                let u = m.utilization.as_ref();
                vec![
                    m.run.clone(),
                    m.learner.clone(),
                    m.strategy.clone(),
                    m.n.to_string(),
                    m.accuracy.to_string(),
                    m.unparsed.to_string(),
                    opt(&r.map(|r| r.mu_cited)),
                    opt(&r.map(|r| r.recall_pct)),
                    opt(&r.map(|r| r.exact_match_pct)),
                    r.and_then(|r| r.top_incorrect_clause.clone()).unwrap_or_default(),
                    opt(&u.map(|u| u.mu_ref)),
                    opt(&u.map(|u| u.sigma_ref)),
                    opt(&u.map(|u| u.pct_util)),
                ]
            })
            .collect(),
    )?;
    write_csv(
        &out.join("significance.csv"),
        &[
            "learner",
            "treatment",
            "control",
            "n",
            "acc_treatment",
            "acc_control",
            "t",
            "df",
            "p",
            "p_bonferroni",
            "p_holm",
            "cohens_d",
            "effect",
            "note",
        ],
        comps
            .iter()
            .map(|c| {
                vec![
                    c.learner.clone(),
                    c.treatment.clone(),
                    c.control.clone(),
                    c.n.to_string(),
                    c.acc_treatment.to_string(),
                    c.acc_control.to_string(),
                    opt(&c.t),
                    opt(&c.df),
                    opt(&c.p),
                    opt(&c.p_bonferroni),
                    opt(&c.p_holm),
                    opt(&c.cohens_d),
                    c.effect.clone().unwrap_or_default(),
                    c.note.clone(),
                ]
            })
            .collect(),
    )?;
    write_csv(
        &out.join("cost.csv"),
        &["run", "learner", "prompt_tokens", "completion_tokens", "cost_usd"],
        metrics
            .iter()
            .map(|m| {
                vec![
                    m.run.clone(),
                    m.learner.clone(),
                    m.prompt_tokens.to_string(),
                    m.completion_tokens.to_string(),
                    opt(&m.cost_usd.map(|c| c.normalize())),
                ]
            })
            .collect(),
    )?;
    let priced: Vec<&RunMetrics> = metrics.iter().filter(|m| m.cost_usd.is_some()).collect();
    let points: Vec<CostPoint> = priced
        .iter()
        .map(|m| CostPoint {
            cost: m
                .cost_usd
                .and_then(|c| rust_decimal::prelude::ToPrimitive::to_f64(&c))
                .unwrap_or(f64::INFINITY),
            accuracy: m.accuracy,
        })
        .collect();
    let frontier: BTreeSet<usize> = pareto_frontier(&points).into_iter().collect();
    write_csv(
        &out.join("pareto.csv"),
        &["run", "cost_usd", "accuracy", "on_frontier"],
        priced
            .iter()
            .enumerate()
            .map(|(i, m)| {
                vec![
                    m.run.clone(),
                    opt(&m.cost_usd.map(|c| c.normalize())),
                    m.accuracy.to_string(),
                    frontier.contains(&i).to_string(),
                ]
            })
            .collect(),
    )?;
    tracing::info!(runs = runs.len(), comparisons = comps.len(), dir = %out.display(), "report written");
    Ok(Outcome::check(
        "flagged extraction",
        flagged,
        total,
        ws.settings.max_flagged_fraction,
    ))
}
