use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::store::{
    check_manifest, create_dir, experiment_dir, list_variants, load_clients, load_independent,
    load_model, manifest_dirs, materialize, read_json, save_model, write_json, write_manifest,
};
use crate::error::{Error, Result};
use crate::metrics::{
    detection_scores, evaluate_detection, evaluate_segmentation, picai_score, selection_metric,
    DetectionCaseRecord, EvalReport, SegReport,
};
use crate::orchestrate::{
    grid_search_er, sweep_strategies, train_kfold_ensemble, train_variant, ClientData,
    FederationPlan, GridReport, RoundLog, SweepReport, TrainedModel, ValidationSet, Variant,
};
use crate::stats::{
    bootstrap_ci, bootstrap_mean_ci, compare_dataset_level, compare_models, ComparisonRecord,
    Granularity, IntervalEstimate,
};
use crate::synthdata::{SyntheticCase, Task};

pub const LOCALS_MEAN: &str = "locals-mean";
const COMBINED: &str = "combined";
const INDEPENDENT: &str = "independent";

/// A loaded configuration bound to its experiment directory.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: ExperimentConfig,
    pub exp_dir: PathBuf,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, out_root: &Path) -> Self {
        let exp_dir = experiment_dir(out_root, &cfg);
        Self { cfg, exp_dir }
    }
}

pub fn cmd_gen(ctx: &Context) -> Result<()> {
    create_dir(&ctx.exp_dir)?;
    let index = materialize(&ctx.cfg, &ctx.exp_dir)?;
    write_manifest(
        &ctx.exp_dir,
        "experiment",
        &ctx.cfg,
        &[],
        serde_json::json!({ "clients": ctx.cfg.client_ids() }),
    )?;
    for c in &index.clients {
        println!(
            "{}: {} train / {} validation / {} local test",
            c.client_id,
            c.train.len(),
            c.validation.len(),
            c.local_test.len()
        );
    }
    println!("{}: {} cases", INDEPENDENT, index.independent.len());
    Ok(())
}

/// Expands a `run` argument into `(directory name, variant)` pairs.
pub fn parse_variants(ctx: &Context, spec: &str) -> Result<Vec<(String, Variant)>> {
    let cfg = &ctx.cfg;
    let local = |id: &str| {
        (
            format!("local-{id}"),
            Variant::Local {
                client_id: id.to_string(),
                epochs: cfg.baseline_epochs,
            },
        )
    };
    let selected = |dir: &str| -> Result<FederationPlan> {
        let path = ctx.exp_dir.join(dir).join("selected_plan.json");
        if !path.exists() {
            return Err(Error::Precondition(format!(
                "{} missing; run `{dir}` first",
                path.display()
            )));
        }
        read_json(&path)
    };
    Ok(match spec {
        "all" => {
            let mut v: Vec<_> = cfg.client_ids().iter().map(|id| local(id)).collect();
            v.push(("central".into(), Variant::Central { epochs: cfg.baseline_epochs }));
            v.push(("fl-baseline".into(), Variant::Federated { plan: cfg.baseline_plan() }));
            v
        }
        "local:*" => cfg.client_ids().iter().map(|id| local(id)).collect(),
        "central" => vec![("central".into(), Variant::Central { epochs: cfg.baseline_epochs })],
        "federated" => vec![("fl-baseline".into(), Variant::Federated { plan: cfg.baseline_plan() })],
        "federated:grid" => vec![("fl-grid".into(), Variant::Federated { plan: selected("grid")? })],
        "federated:sweep" => vec![("fl-sweep".into(), Variant::Federated { plan: selected("sweep")? })],
        s => match s.strip_prefix("local:") {
            Some(id) if cfg.client_ids().iter().any(|c| c == id) => vec![local(id)],
            Some(id) => return Err(Error::Config(format!("unknown client {id}"))),
            None => {
                return Err(Error::Config(format!(
                    "unknown variant {s}; use local:<client>, local:*, central, federated, federated:grid, federated:sweep or all"
                )))
            }
        },
    })
}

/// Trains one variant: a single model when `k_folds == 1`, otherwise a fold ensemble.
pub fn train(
    ctx: &Context,
    variant: &Variant,
    clients: &[ClientData],
) -> Result<(TrainedModel, Vec<Vec<RoundLog>>)> {
    let cfg = &ctx.cfg;
    if cfg.k_folds >= 2 {
        train_kfold_ensemble(variant, clients, &cfg.model, cfg.k_folds, cfg.master_seed)
    } else {
        let (mut model, logs) = train_variant(variant, clients, &cfg.model, cfg.master_seed)?;
        model.provenance.variant = variant.label();
        model.provenance.seeds = vec![cfg.master_seed];
        Ok((model, vec![logs]))
    }
}

pub fn cmd_run(ctx: &Context, spec: &str) -> Result<()> {
    let variants = parse_variants(ctx, spec)?;
    let clients = load_clients(&ctx.exp_dir)?;
    for (name, variant) in variants {
        let (model, logs) = train(ctx, &variant, &clients)?;
        save_model(&ctx.cfg, &ctx.exp_dir.join(&name), &model, &logs)?;
        println!(
            "{name}: {} member(s) {}",
            model.members.len(),
            model.checksums().join(" ")
        );
    }
    Ok(())
}

fn write_csv<R: Serialize>(path: &Path, rows: &[R]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct GridCsvRow {
    local_epochs: usize,
    rounds: usize,
    validation_metric: f64,
    checksum: String,
    selected: bool,
}

pub fn cmd_grid(ctx: &Context) -> Result<GridReport> {
    let cfg = &ctx.cfg;
    let clients = load_clients(&ctx.exp_dir)?;
    let validation = ValidationSet::combined(&clients, cfg.lesion);
    let report = grid_search_er(
        cfg.grid.budget,
        &cfg.grid.epoch_candidates,
        &cfg.baseline_plan(),
        &clients,
        &validation,
    )?;
    let dir = ctx.exp_dir.join("grid");
    create_dir(&dir)?;
    let rows: Vec<GridCsvRow> = report
        .rows
        .iter()
        .map(|r| GridCsvRow {
            local_epochs: r.local_epochs,
            rounds: r.rounds,
            validation_metric: r.metric,
            checksum: r.checksum.clone(),
            selected: r.local_epochs == report.best.local_epochs,
        })
        .collect();
    let files = [
        dir.join("grid.csv"),
        dir.join("report.json"),
        dir.join("selected_plan.json"),
    ];
    write_csv(&files[0], &rows)?;
    write_json(&files[1], &report)?;
    write_json(&files[2], &report.best)?;
    write_manifest(&dir, "grid", cfg, &files, serde_json::Value::Null)?;
    for r in &rows {
        println!(
            "E={:<3} R={:<4} metric={:.4}{}",
            r.local_epochs,
            r.rounds,
            r.validation_metric,
            if r.selected { "  <- selected" } else { "" }
        );
    }
    Ok(report)
}

#[derive(Serialize)]
struct SweepCsvRow {
    strategy: String,
    validation_metric: f64,
    checksum: String,
    selected: bool,
}

/// Sweeps strategies on the grid-selected plan when present, else the baseline plan.
pub fn cmd_sweep(ctx: &Context) -> Result<SweepReport> {
    let cfg = &ctx.cfg;
    let clients = load_clients(&ctx.exp_dir)?;
    let validation = ValidationSet::combined(&clients, cfg.lesion);
    let grid_plan = ctx.exp_dir.join("grid").join("selected_plan.json");
    let base: FederationPlan = if grid_plan.exists() {
        read_json(&grid_plan)?
    } else {
        cfg.baseline_plan()
    };
    let report = sweep_strategies(&cfg.sweep.strategies, &base, &clients, &validation)?;
    let dir = ctx.exp_dir.join("sweep");
    create_dir(&dir)?;
    let rows: Vec<SweepCsvRow> = report
        .rows
        .iter()
        .map(|r| SweepCsvRow {
            strategy: r.strategy.to_string(),
            validation_metric: r.metric,
            checksum: r.checksum.clone(),
            selected: r.strategy == report.best.server.strategy,
        })
        .collect();
    let files = [
        dir.join("sweep.csv"),
        dir.join("report.json"),
        dir.join("selected_plan.json"),
    ];
    write_csv(&files[0], &rows)?;
    write_json(&files[1], &report)?;
    write_json(&files[2], &report.best)?;
    write_manifest(
        &dir,
        "sweep",
        cfg,
        &files,
        serde_json::json!({ "base_plan": if grid_plan.exists() { "grid" } else { "baseline" } }),
    )?;
    for r in &rows {
        println!(
            "{:<11} metric={:.4}{}",
            r.strategy,
            r.validation_metric,
            if r.selected { "  <- selected" } else { "" }
        );
    }
    Ok(report)
}

/// Evaluation of one model on one test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub variant: String,
    pub test_set: String,
    pub n_members: usize,
    pub segmentation: Option<SegReport>,
    pub detection: Option<EvalReport>,
    pub intervals: BTreeMap<String, IntervalEstimate>,
    /// Per-member selection metric (mean Dice or PI-CAI), for fold-level comparisons.
    pub member_metrics: Vec<Option<f64>>,
    pub error: Option<String>,
}

fn test_sets(ctx: &Context) -> Result<Vec<(String, Vec<SyntheticCase>)>> {
    let clients = load_clients(&ctx.exp_dir)?;
    let mut sets: Vec<(String, Vec<SyntheticCase>)> = clients
        .iter()
        .map(|c| (c.client_id.clone(), c.split.local_test.clone()))
        .collect();
    let combined = clients
        .iter()
        .flat_map(|c| c.split.local_test.iter().cloned())
        .collect();
    sets.push((COMBINED.into(), combined));
    sets.push((INDEPENDENT.into(), load_independent(&ctx.exp_dir)?));
    Ok(sets)
}

fn detection_stat(which: usize) -> impl Fn(&[&DetectionCaseRecord]) -> Result<f64> + Sync {
    move |cases| {
        let (auc, ap) = detection_scores(cases)?;
        Ok(match which {
            0 => auc,
            1 => ap,
            _ => picai_score(auc, ap)?,
        })
    }
}

pub fn evaluate(
    ctx: &Context,
    variant: &str,
    model: &TrainedModel,
    test_set: &str,
    cases: &[SyntheticCase],
) -> EvalFile {
    let cfg = &ctx.cfg;
    let mut file = EvalFile {
        variant: variant.into(),
        test_set: test_set.into(),
        n_members: model.members.len(),
        segmentation: None,
        detection: None,
        intervals: BTreeMap::new(),
        member_metrics: vec![],
        error: None,
    };
    let outcome: Result<()> = (|| {
        let s = &cfg.stats;
        match cfg.task {
            Task::Segmentation => {
                let report = evaluate_segmentation(model, cases, cfg.seg_threshold)?;
                let columns: [(&str, Vec<f64>); 3] = [
                    ("dice", report.cases.iter().map(|c| c.dice).collect()),
                    ("hd95", report.cases.iter().filter_map(|c| c.hd95).collect()),
                    (
                        "rvd_percent",
                        report.cases.iter().filter_map(|c| c.rvd_percent).collect(),
                    ),
                ];
                for (name, values) in columns {
                    if values.len() >= 2 {
                        file.intervals.insert(
                            name.into(),
                            bootstrap_mean_ci(&values, s.b, s.level, s.seed)?,
                        );
                    }
                }
                file.segmentation = Some(report);
            }
            Task::Detection => {
                let report = evaluate_detection(model, cases, &cfg.lesion)?;
                for (i, name) in ["auc", "ap", "picai"].iter().enumerate() {
                    let ci = bootstrap_ci(
                        &report.cases,
                        |c: &[&DetectionCaseRecord]| detection_stat(i)(c),
                        s.b,
                        s.level,
                        s.seed,
                    )?;
                    file.intervals.insert((*name).into(), ci);
                }
                file.detection = Some(report);
            }
        }
        if model.members.len() > 1 {
            file.member_metrics = (0..model.members.len())
                .map(|i| selection_metric(cfg.task, &model.member(i), cases, &cfg.lesion).ok())
                .collect();
        }
        Ok(())
    })();
    if let Err(e) = outcome {
        file.error = Some(e.to_string());
    }
    file
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

fn interval(file: &EvalFile, name: &str) -> (String, String) {
    match file.intervals.get(name) {
        Some(ci) => (fmt(Some(ci.lo)), fmt(Some(ci.hi))),
        None => ("NA".into(), "NA".into()),
    }
}

/// Headline metric of an eval file: mean Dice or PI-CAI score.
pub fn headline(file: &EvalFile) -> Option<f64> {
    file.segmentation
        .as_ref()
        .map(|r| r.mean_dice)
        .or(file.detection.as_ref().map(|r| r.picai_score))
}

pub fn eval_path(exp_dir: &Path, variant: &str, test_set: &str) -> PathBuf {
    exp_dir
        .join("eval")
        .join(variant)
        .join(format!("{test_set}.json"))
}

pub fn cmd_eval(ctx: &Context) -> Result<Vec<EvalFile>> {
    let cfg = &ctx.cfg;
    let variants = list_variants(&ctx.exp_dir)?;
    if variants.is_empty() {
        return Err(Error::Precondition(
            "no trained runs found; run `run` first".into(),
        ));
    }
    let sets = test_sets(ctx)?;
    let eval_dir = ctx.exp_dir.join("eval");
    if eval_dir.exists() {
        fs::remove_dir_all(&eval_dir).map_err(|e| Error::io(&eval_dir, e))?;
    }
    let mut files = Vec::new();
    let mut evals = Vec::new();
    for variant in &variants {
        let model = load_model(cfg, &ctx.exp_dir.join(variant))?;
        for (name, cases) in &sets {
            let file = evaluate(ctx, variant, &model, name, cases);
            let path = eval_path(&ctx.exp_dir, variant, name);
            write_json(&path, &file)?;
            files.push(path.clone());
            if let Some(report) = &file.detection {
                let roc = path.with_extension("roc.csv");
                let rows: Vec<(String, f64, f64)> = report
                    .roc_curve()?
                    .iter()
                    .map(|p| (p.threshold.to_string(), p.fpr, p.tpr))
                    .collect();
                write_rows(&roc, &["threshold", "fpr", "tpr"], &rows)?;
                let pr = path.with_extension("pr.csv");
                let rows: Vec<(String, f64, f64)> = report
                    .pr_curve()?
                    .iter()
                    .map(|p| (p.threshold.to_string(), p.recall, p.precision))
                    .collect();
                write_rows(&pr, &["threshold", "recall", "precision"], &rows)?;
                files.extend([roc, pr]);
            }
            if let Some(e) = &file.error {
                eprintln!("warning: {variant} on {name}: {e}");
            }
            evals.push(file);
        }
    }
    let set_names: Vec<&str> = sets.iter().map(|s| s.0.as_str()).collect();
    files.extend(write_tables(ctx, &eval_dir, &variants, &set_names, &evals)?);
    write_manifest(&eval_dir, "eval", cfg, &files, serde_json::Value::Null)?;
    for e in evals.iter().filter(|e| e.test_set == INDEPENDENT) {
        println!("{:<14} {} {}", e.variant, INDEPENDENT, fmt(headline(e)));
    }
    Ok(evals)
}

fn write_rows(path: &Path, header: &[&str], rows: &[(String, f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    w.write_record(header)?;
    for (t, a, b) in rows {
        w.write_record([t.clone(), a.to_string(), b.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_table(path: &Path, header: Vec<String>, rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const TABLE_WIDE_SEG: &str = "table1.csv";
pub const TABLE_LONG_SEG: &str = "table2.csv";
pub const TABLE_WIDE_DET: &str = "table3.csv";
pub const TABLE_LONG_DET: &str = "table4.csv";

fn write_tables(
    ctx: &Context,
    eval_dir: &Path,
    variants: &[String],
    sets: &[&str],
    evals: &[EvalFile],
) -> Result<Vec<PathBuf>> {
    let find = |v: &str, s: &str| evals.iter().find(|e| e.variant == v && e.test_set == s);
    let (wide, long) = match ctx.cfg.task {
        Task::Segmentation => (TABLE_WIDE_SEG, TABLE_LONG_SEG),
        Task::Detection => (TABLE_WIDE_DET, TABLE_LONG_DET),
    };
    let mut header = vec!["variant".to_string()];
    header.extend(sets.iter().map(|s| s.to_string()));
    let rows = variants
        .iter()
        .map(|v| {
            let mut row = vec![v.clone()];
            row.extend(sets.iter().map(|s| fmt(find(v, s).and_then(headline))));
            row
        })
        .collect();
    write_table(&eval_dir.join(wide), header, rows)?;

    let mut long_rows = Vec::new();
    for v in variants {
        for s in sets {
            let Some(e) = find(v, s) else { continue };
            let report = format!("{v}/{s}.json");
            let mut row = vec![v.clone(), s.to_string()];
            match ctx.cfg.task {
                Task::Segmentation => {
                    let r = e.segmentation.as_ref();
                    for (name, value) in [
                        ("dice", r.map(|r| r.mean_dice)),
                        ("hd95", r.and_then(|r| r.mean_hd95)),
                        ("rvd_percent", r.and_then(|r| r.mean_rvd_percent)),
                    ] {
                        let (lo, hi) = interval(e, name);
                        row.extend([fmt(value), lo, hi]);
                    }
                    row.push(
                        r.map(|r| r.n_cases.to_string())
                            .unwrap_or_else(|| "NA".into()),
                    );
                }
                Task::Detection => {
                    let r = e.detection.as_ref();
                    for (name, value) in [
                        ("picai", r.map(|r| r.picai_score)),
                        ("auc", r.map(|r| r.auc)),
                        ("ap", r.map(|r| r.ap)),
                    ] {
                        let (lo, hi) = interval(e, name);
                        row.extend([fmt(value), lo, hi]);
                    }
                    row.push(
                        r.map(|r| r.n_cases.to_string())
                            .unwrap_or_else(|| "NA".into()),
                    );
                }
            }
            row.push(report);
            long_rows.push(row);
        }
    }
    let metrics: &[&str] = match ctx.cfg.task {
        Task::Segmentation => &["dice", "hd95", "rvd_percent"],
        Task::Detection => &["picai", "auc", "ap"],
    };
    let mut header = vec!["variant".to_string(), "test_set".to_string()];
    for m in metrics {
        header.extend([m.to_string(), format!("{m}_lo"), format!("{m}_hi")]);
    }
    header.extend(["n_cases".to_string(), "report".to_string()]);
    write_table(&eval_dir.join(long), header, long_rows)?;
    Ok(vec![eval_dir.join(wide), eval_dir.join(long)])
}

fn load_eval(ctx: &Context, variant: &str, test_set: &str) -> Result<EvalFile> {
    let path = eval_path(&ctx.exp_dir, variant, test_set);
    if !path.exists() {
        return Err(Error::Precondition(format!(
            "{} missing; run `eval` first",
            path.display()
        )));
    }
    read_json(&path)
}

/// Per-case records of `name` on a test set; `locals-mean` expands to one column per local model.
fn side(ctx: &Context, name: &str, test_set: &str) -> Result<Vec<EvalFile>> {
    if name == LOCALS_MEAN {
        let locals: Vec<String> = list_variants(&ctx.exp_dir)?
            .into_iter()
            .filter(|v| v.starts_with("local-"))
            .collect();
        if locals.is_empty() {
            return Err(Error::Precondition("no local runs to average".into()));
        }
        locals.iter().map(|v| load_eval(ctx, v, test_set)).collect()
    } else {
        Ok(vec![load_eval(ctx, name, test_set)?])
    }
}

fn seg_units(files: &[EvalFile]) -> Result<Vec<(String, f64)>> {
    let reports = files
        .iter()
        .map(|f| {
            f.segmentation.as_ref().ok_or_else(|| {
                Error::Precondition(format!(
                    "{} on {} has no segmentation report",
                    f.variant, f.test_set
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let first = reports[0];
    first
        .cases
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut sum = 0.0;
            for r in &reports {
                let other = r
                    .cases
                    .get(i)
                    .filter(|o| o.case_id == c.case_id)
                    .ok_or_else(|| {
                        Error::UnitMismatch(format!(
                            "case {} not aligned across reports",
                            c.case_id
                        ))
                    })?;
                sum += other.dice;
            }
            Ok((c.case_id.clone(), sum / reports.len() as f64))
        })
        .collect()
}

fn det_columns(files: &[EvalFile]) -> Result<Vec<&EvalReport>> {
    files
        .iter()
        .map(|f| {
            f.detection.as_ref().ok_or_else(|| {
                Error::Precondition(format!(
                    "{} on {} has no detection report{}",
                    f.variant,
                    f.test_set,
                    f.error
                        .as_ref()
                        .map(|e| format!(" ({e})"))
                        .unwrap_or_default()
                ))
            })
        })
        .collect()
}

/// Units for dataset-level comparison: per case, one record per model column,
/// padded to `width` by repetition so both sides have equal width.
fn det_units(reports: &[&EvalReport], width: usize) -> Result<Vec<Vec<DetectionCaseRecord>>> {
    let first = reports[0];
    first
        .cases
        .iter()
        .enumerate()
        .map(|(i, c)| {
            (0..width)
                .map(|j| {
                    let r = reports[j % reports.len()];
                    r.cases
                        .get(i)
                        .filter(|o| o.case_id == c.case_id)
                        .cloned()
                        .ok_or_else(|| {
                            Error::UnitMismatch(format!(
                                "case {} not aligned across reports",
                                c.case_id
                            ))
                        })
                })
                .collect()
        })
        .collect()
}

fn mean_column_picai(units: &[&Vec<DetectionCaseRecord>]) -> Result<f64> {
    let width = units
        .first()
        .map(|u| u.len())
        .ok_or(Error::EmptyInput("no units"))?;
    let mut total = 0.0;
    for j in 0..width {
        let column: Vec<&DetectionCaseRecord> = units.iter().map(|u| &u[j]).collect();
        total += detection_stat(2)(&column)?;
    }
    Ok(total / width as f64)
}

fn fold_units(files: &[EvalFile]) -> Option<Vec<(String, f64)>> {
    let k = files[0].member_metrics.len();
    if k < 2 || files.iter().any(|f| f.member_metrics.len() != k) {
        return None;
    }
    (0..k)
        .map(|i| {
            let mut sum = 0.0;
            for f in files {
                sum += f.member_metrics[i]?;
            }
            Some((format!("fold-{i}"), sum / files.len() as f64))
        })
        .collect()
}

pub fn default_pairs(ctx: &Context) -> Result<Vec<(String, String)>> {
    let variants = list_variants(&ctx.exp_dir)?;
    let has = |v: &str| variants.iter().any(|x| x == v);
    let mut pairs = Vec::new();
    if has("fl-baseline") {
        if variants.iter().any(|v| v.starts_with("local-")) {
            pairs.push(("fl-baseline".into(), LOCALS_MEAN.into()));
        }
        if has("central") {
            pairs.push(("fl-baseline".into(), "central".into()));
        }
        for tuned in ["fl-grid", "fl-sweep"] {
            if has(tuned) {
                pairs.push((tuned.into(), "fl-baseline".into()));
            }
        }
    }
    Ok(pairs)
}

pub fn compare_pair(
    ctx: &Context,
    a: &str,
    b: &str,
    test_set: &str,
) -> Result<Vec<ComparisonRecord>> {
    let s = &ctx.cfg.stats;
    let (fa, fb) = (side(ctx, a, test_set)?, side(ctx, b, test_set)?);
    let mut out = Vec::new();
    match ctx.cfg.task {
        Task::Segmentation => {
            let mut r = compare_models(
                a,
                &seg_units(&fa)?,
                b,
                &seg_units(&fb)?,
                "dice",
                Granularity::Case,
                s,
            )?;
            r.metric = format!("dice@{test_set}");
            out.push(r);
        }
        Task::Detection => {
            let (ca, cb) = (det_columns(&fa)?, det_columns(&fb)?);
            let width = ca.len().max(cb.len());
            let (ua, ub) = (det_units(&ca, width)?, det_units(&cb, width)?);
            if ua
                .iter()
                .zip(&ub)
                .any(|(x, y)| x[0].case_id != y[0].case_id)
                || ua.len() != ub.len()
            {
                return Err(Error::UnitMismatch(format!(
                    "{a} and {b} were scored on different cases"
                )));
            }
            let mut r = compare_dataset_level(a, &ua, b, &ub, "picai", mean_column_picai, s)?;
            r.metric = format!("picai@{test_set}");
            out.push(r);
        }
    }
    if let (Some(ua), Some(ub)) = (fold_units(&fa), fold_units(&fb)) {
        let metric = match ctx.cfg.task {
            Task::Segmentation => "dice",
            Task::Detection => "picai",
        };
        let mut r = compare_models(a, &ua, b, &ub, metric, Granularity::Fold, s)?;
        r.metric = format!("{metric}@{test_set}");
        out.push(r);
    }
    Ok(out)
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    model_a: &'a str,
    model_b: &'a str,
    metric: &'a str,
    granularity: Granularity,
    test: &'a str,
    n_units: usize,
    value_a: f64,
    value_b: f64,
    delta: f64,
    delta_lo: f64,
    delta_hi: f64,
    p_value: f64,
    iterations: usize,
    b: usize,
}

pub fn cmd_compare(ctx: &Context, pairs: &[String]) -> Result<Vec<ComparisonRecord>> {
    let pairs: Vec<(String, String)> = if pairs.is_empty() {
        default_pairs(ctx)?
    } else {
        pairs
            .iter()
            .map(|p| match p.split_once(':') {
                Some((a, b)) if !a.is_empty() && !b.is_empty() => {
                    Ok((a.to_string(), b.to_string()))
                }
                _ => Err(Error::Config(format!("pair {p:?} is not of the form A:B"))),
            })
            .collect::<Result<_>>()?
    };
    if pairs.is_empty() {
        return Err(Error::Precondition(
            "nothing to compare; train fl-baseline and a baseline first".into(),
        ));
    }
    let mut records = Vec::new();
    for (a, b) in &pairs {
        for test_set in [COMBINED, INDEPENDENT] {
            records.extend(compare_pair(ctx, a, b, test_set)?);
        }
    }
    let dir = ctx.exp_dir.join("compare");
    create_dir(&dir)?;
    let rows: Vec<ComparisonRow> = records
        .iter()
        .map(|r| ComparisonRow {
            model_a: &r.model_a,
            model_b: &r.model_b,
            metric: &r.metric,
            granularity: r.granularity,
            test: &r.test,
            n_units: r.n_units,
            value_a: r.value_a,
            value_b: r.value_b,
            delta: r.delta,
            delta_lo: r.delta_ci.lo,
            delta_hi: r.delta_ci.hi,
            p_value: r.p_value,
            iterations: r.iterations,
            b: r.b,
        })
        .collect();
    let files = [dir.join("comparisons.csv"), dir.join("comparisons.json")];
    write_csv(&files[0], &rows)?;
    write_json(&files[1], &records)?;
    write_manifest(&dir, "compare", &ctx.cfg, &files, serde_json::Value::Null)?;
    for r in &records {
        println!(
            "{} vs {} {} ({:?}): delta {:+.4} [{:+.4}, {:+.4}] p={:.4}",
            r.model_a,
            r.model_b,
            r.metric,
            r.granularity,
            r.delta,
            r.delta_ci.lo,
            r.delta_ci.hi,
            r.p_value
        );
    }
    Ok(records)
}

fn parse_cell(s: &str) -> Option<f64> {
    s.parse().ok()
}

fn close(cell: &str, value: Option<f64>) -> bool {
    match (parse_cell(cell), value) {
        (Some(c), Some(v)) => (c - v).abs() <= 5e-7,
        (None, None) => cell == "NA",
        _ => false,
    }
}

/// Recomputes table cells from the per-case records in the referenced eval files.
fn check_tables(ctx: &Context) -> Result<(usize, Vec<String>)> {
    let eval_dir = ctx.exp_dir.join("eval");
    let (wide, long) = match ctx.cfg.task {
        Task::Segmentation => (TABLE_WIDE_SEG, TABLE_LONG_SEG),
        Task::Detection => (TABLE_WIDE_DET, TABLE_LONG_DET),
    };
    let mut problems = Vec::new();
    let mut checked = 0;

    let mut reader = csv::Reader::from_path(eval_dir.join(long))?;
    for row in reader.records() {
        let row = row?;
        let (variant, test_set, report) = (&row[0], &row[1], &row[row.len() - 1]);
        let file: EvalFile = read_json(&eval_dir.join(report))?;
        let expected: [Option<f64>; 3] = match ctx.cfg.task {
            Task::Segmentation => {
                let cases = file
                    .segmentation
                    .as_ref()
                    .map(|r| r.cases.clone())
                    .unwrap_or_default();
                let recomputed = SegReport::from_cases(cases);
                let present = file.segmentation.is_some();
                [
                    present.then_some(recomputed.mean_dice),
                    recomputed.mean_hd95.filter(|_| present),
                    recomputed.mean_rvd_percent.filter(|_| present),
                ]
            }
            Task::Detection => match &file.detection {
                Some(r) => {
                    let refs: Vec<&DetectionCaseRecord> = r.cases.iter().collect();
                    let (auc, ap) = detection_scores(&refs)?;
                    [Some((auc + ap) / 2.0), Some(auc), Some(ap)]
                }
                None => [None; 3],
            },
        };
        for (i, value) in expected.iter().enumerate() {
            checked += 1;
            if !close(&row[2 + 3 * i], *value) {
                problems.push(format!(
                    "{long}: {variant}/{test_set} column {} disagrees with {report}",
                    2 + 3 * i
                ));
            }
        }
        if ctx.cfg.task == Task::Detection {
            if let (Some(p), Some(a), Some(b)) = (
                parse_cell(&row[2]),
                parse_cell(&row[5]),
                parse_cell(&row[8]),
            ) {
                checked += 1;
                if (p - (a + b) / 2.0).abs() > 2e-6 {
                    problems.push(format!(
                        "{long}: {variant}/{test_set} picai is not (auc + ap) / 2"
                    ));
                }
            }
        }
    }

    let mut reader = csv::Reader::from_path(eval_dir.join(wide))?;
    let header = reader.headers()?.clone();
    for row in reader.records() {
        let row = row?;
        for (col, test_set) in header.iter().enumerate().skip(1) {
            let file: EvalFile = read_json(&eval_path(&ctx.exp_dir, &row[0], test_set))?;
            checked += 1;
            if !close(&row[col], headline(&file)) {
                problems.push(format!(
                    "{wide}: {}/{test_set} disagrees with its eval file",
                    &row[0]
                ));
            }
        }
    }
    Ok((checked, problems))
}

pub fn cmd_verify(ctx: &Context) -> Result<()> {
    if !ctx.exp_dir.exists() {
        return Err(Error::Precondition(format!(
            "{} does not exist",
            ctx.exp_dir.display()
        )));
    }
    let mut problems = Vec::new();
    let dirs = manifest_dirs(&ctx.exp_dir)?;
    let mut hashed = 0;
    for d in &dirs {
        let m = super::store::read_manifest(d)?;
        hashed += m.files.len();
        problems.extend(check_manifest(d)?);
    }
    let mut cells = 0;
    if ctx
        .exp_dir
        .join("eval")
        .join(super::store::MANIFEST)
        .exists()
    {
        let (n, p) = check_tables(ctx)?;
        cells = n;
        problems.extend(p);
    }
    if problems.is_empty() {
        println!(
            "verify: ok ({} manifests, {hashed} files, {cells} table cells)",
            dirs.len()
        );
        Ok(())
    } else {
        for p in &problems {
            eprintln!("{p}");
        }
        Err(Error::Precondition(format!(
            "verification failed with {} problem(s)",
            problems.len()
        )))
    }
}
