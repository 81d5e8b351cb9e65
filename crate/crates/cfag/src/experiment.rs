//! Experiment orchestration: typed configuration, the train / evaluate /
//! ablate / cold-start / analyze pipelines, and their report files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::{
    correlation_from_pairs, dot_product_distribution, relatedness_ratio_pairs, CorrelationReport,
    Histogram,
};
use crate::checkpoint::{load_model, save_model};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::graph::{
    cap_user_groups, load_edge_list, split_per_user, write_split_manifest, DatasetSplit, Relation,
    TripartiteGraph,
};
use crate::model::{HyperParams, MergeKind, PaMode, PartitionKind};
use crate::train::{fit, EpochLog, FitResult, TrainConfig};

/// Paths of the three relation edge lists.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub user_group: PathBuf,
    pub user_item: PathBuf,
    pub group_item: PathBuf,
}

/// Split protocol settings.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub train_ratio: f64,
    pub valid_ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_ratio: 0.7,
            valid_ratio: 0.1,
            seed: 42,
        }
    }
}

/// Where and what to write.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    #[serde(default)]
    pub per_user_csv: bool,
}

/// Cold-start capping sweep.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColdStartConfig {
    pub k: Vec<usize>,
}

impl Default for ColdStartConfig {
    fn default() -> Self {
        Self { k: vec![1, 2, 3, 4] }
    }
}

/// Ablation variant list.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub variants: Vec<String>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            variants: ["full", "no_pa", "no_item", "no_group"]
                .map(String::from)
                .to_vec(),
        }
    }
}

/// One experiment manifest. Unknown keys are rejected when deserializing.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataPaths,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub model: HyperParams,
    #[serde(default)]
    pub train: TrainConfig,
    pub output: OutputConfig,
    #[serde(default)]
    pub cold_start: ColdStartConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

impl ExperimentConfig {
    /// Structural validation: referenced inputs exist, selectors are sane.
    pub fn validate(&self) -> Result<()> {
        for (label, path) in [
            ("data.user_group", &self.data.user_group),
            ("data.user_item", &self.data.user_item),
            ("data.group_item", &self.data.group_item),
        ] {
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "{label}: file not found: {}",
                    path.display()
                )));
            }
        }
        self.model.validate()?;
        self.train.validate()?;
        if !(self.split.train_ratio > 0.0
            && self.split.valid_ratio >= 0.0
            && self.split.train_ratio + self.split.valid_ratio <= 1.0)
        {
            return Err(Error::Config(format!(
                "split ratios out of range: ({}, {})",
                self.split.train_ratio, self.split.valid_ratio
            )));
        }
        Ok(())
    }

    /// Load the three edge lists and assemble the graph.
    pub fn load_graph(&self) -> Result<TripartiteGraph> {
        let ug = load_edge_list(&self.data.user_group, Relation::UserGroup)?;
        let ui = load_edge_list(&self.data.user_item, Relation::UserItem)?;
        let gi = load_edge_list(&self.data.group_item, Relation::GroupItem)?;
        TripartiteGraph::from_edge_lists(&ug, &ui, &gi)
    }

    pub fn make_split(&self, graph: &TripartiteGraph) -> Result<DatasetSplit> {
        split_per_user(
            graph,
            self.split.train_ratio,
            self.split.valid_ratio,
            self.split.seed,
        )
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn training_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,val_recall10,val_ndcg10,wall_ms\n");
    for e in log {
        writeln!(
            out,
            "{},{:.6},{},{},{}",
            e.epoch,
            e.loss,
            fmt_opt(e.val_recall10),
            fmt_opt(e.val_ndcg10),
            e.wall_ms
        )
        .unwrap();
    }
    out
}

/// Aggregate view stored as `eval_report.json` (per-user rows go to CSV).
#[derive(Serialize)]
struct ReportSummary<'a> {
    cutoffs: &'a [usize],
    evaluated_users: usize,
    recall: &'a [f64],
    ndcg: &'a [f64],
}

fn report_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(&ReportSummary {
        cutoffs: &report.cutoffs,
        evaluated_users: report.evaluated_users,
        recall: &report.recall,
        ndcg: &report.ndcg,
    })
    .expect("report serialization")
}

fn per_user_csv(report: &EvalReport) -> String {
    let mut header = String::from("user_id,test_size");
    for k in &report.cutoffs {
        write!(header, ",recall@{k}").unwrap();
    }
    for k in &report.cutoffs {
        write!(header, ",ndcg@{k}").unwrap();
    }
    header.push('\n');
    let mut out = header;
    for row in &report.per_user {
        write!(out, "{},{}", row.user_id, row.test_size).unwrap();
        for v in row.recall.iter().chain(&row.ndcg) {
            write!(out, ",{v:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Outcome of [`run_train`].
pub struct TrainOutput {
    pub report: EvalReport,
    pub checkpoint: PathBuf,
    pub best_val_ndcg10: Option<f64>,
    pub epochs_run: usize,
}

/// Metric cutoffs used by every pipeline.
pub const CUTOFFS: [usize; 2] = [10, 20];

fn fit_and_evaluate(
    split: &DatasetSplit,
    hp: &HyperParams,
    tc: &TrainConfig,
) -> Result<(FitResult<f64>, EvalReport)> {
    let result: FitResult<f64> = fit(split, hp, tc)?;
    let report = evaluate(&result.params, split, hp, &CUTOFFS)?;
    Ok((result, report))
}

/// Full pipeline: load, split, fit, evaluate on test, write the split
/// manifest, checkpoint, training log and evaluation report.
pub fn run_train(cfg: &ExperimentConfig) -> Result<TrainOutput> {
    cfg.validate()?;
    let graph = cfg.load_graph()?;
    let split = cfg.make_split(&graph)?;
    let out = &cfg.output.dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_split_manifest(
        out.join("split"),
        &split,
        cfg.split.train_ratio,
        cfg.split.valid_ratio,
        cfg.split.seed,
    )?;

    let (result, report) = fit_and_evaluate(&split, &cfg.model, &cfg.train)?;

    let ckpt = out.join("model.ckpt");
    save_model(&ckpt, &result.params, &cfg.model)?;
    write_text(&out.join("training_log.csv"), &training_log_csv(&result.log))?;
    write_text(&out.join("eval_report.json"), &report_json(&report))?;
    if cfg.output.per_user_csv {
        write_text(&out.join("per_user.csv"), &per_user_csv(&report))?;
    }
    Ok(TrainOutput {
        epochs_run: result.log.len(),
        best_val_ndcg10: result.best_val_ndcg10,
        checkpoint: ckpt,
        report,
    })
}

/// Evaluate an existing checkpoint on the config's test split.
pub fn run_evaluate(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    let graph = cfg.load_graph()?;
    let split = cfg.make_split(&graph)?;
    let (params, meta) = load_model(checkpoint)?;
    if meta.n_users != graph.n_users()
        || meta.n_groups != graph.n_groups()
        || meta.n_items != graph.n_items()
    {
        return Err(Error::Data(format!(
            "checkpoint was trained on {}x{}x{} nodes but the dataset has {}x{}x{}",
            meta.n_users,
            meta.n_groups,
            meta.n_items,
            graph.n_users(),
            graph.n_groups(),
            graph.n_items()
        )));
    }
    let report = evaluate(&params, &split, &meta.hyperparams, &CUTOFFS)?;
    let out = &cfg.output.dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    write_text(&out.join("eval_report.json"), &report_json(&report))?;
    if cfg.output.per_user_csv {
        write_text(&out.join("per_user.csv"), &per_user_csv(&report))?;
    }
    Ok(report)
}

/// Apply a named ablation variant to a base configuration.
pub fn apply_variant(hp: &HyperParams, name: &str) -> Result<HyperParams> {
    let mut hp = hp.clone();
    match name {
        "full" | "base" => {}
        "no_pa" => hp.pa_mode = PaMode::NoPa,
        "no_item" => hp.pa_mode = PaMode::NoItem,
        "no_group" => hp.pa_mode = PaMode::NoGroup,
        "p1" => hp.partition = PartitionKind::Linear,
        "m1" => hp.merge = MergeKind::FcBefore,
        "m2" => hp.merge = MergeKind::FcAfter,
        other => {
            return Err(Error::Config(format!(
                "unknown ablation variant {other:?} \
                 (expected full|no_pa|no_item|no_group|p1|m1|m2)"
            )))
        }
    }
    Ok(hp)
}

/// One ablation table row.
#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub recall10: Option<f64>,
    pub ndcg10: Option<f64>,
    pub status: String,
}

/// Train every variant on a shared split and seed; failed variants are
/// marked and the rest still report.
pub fn run_ablation(cfg: &ExperimentConfig, variants: &[String]) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::Config("ablation variant list is empty".into()));
    }
    cfg.validate()?;
    let graph = cfg.load_graph()?;
    let split = cfg.make_split(&graph)?;
    let mut rows = Vec::with_capacity(variants.len());
    for name in variants {
        let row = match apply_variant(&cfg.model, name)
            .and_then(|hp| fit_and_evaluate(&split, &hp, &cfg.train))
        {
            Ok((_, report)) => AblationRow {
                variant: name.clone(),
                recall10: Some(report.recall[0]),
                ndcg10: Some(report.ndcg[0]),
                status: "ok".into(),
            },
            Err(e) => AblationRow {
                variant: name.clone(),
                recall10: None,
                ndcg10: None,
                status: format!("failed: {e}"),
            },
        };
        rows.push(row);
    }
    let mut csv = String::from("variant,recall@10,ndcg@10,status\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{}",
            r.variant,
            fmt_opt(r.recall10),
            fmt_opt(r.ndcg10),
            r.status
        )
        .unwrap();
    }
    write_text(&cfg.output.dir.join("ablation.csv"), &csv)?;
    Ok(rows)
}

/// One cold-start sweep row.
#[derive(Clone, Debug)]
pub struct ColdStartRow {
    pub k: usize,
    pub train_ug_edges: usize,
    pub report: EvalReport,
}

/// Cap each user's train groups at every `k`, retrain, and evaluate.
pub fn run_cold_start(cfg: &ExperimentConfig, ks: &[usize]) -> Result<Vec<ColdStartRow>> {
    if ks.is_empty() {
        return Err(Error::Config("cold-start k list is empty".into()));
    }
    cfg.validate()?;
    let graph = cfg.load_graph()?;
    let split = cfg.make_split(&graph)?;
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let capped = cap_user_groups(&split, k, cfg.split.seed)?;
        let (_, report) = fit_and_evaluate(&capped, &cfg.model, &cfg.train)?;
        rows.push(ColdStartRow {
            k,
            train_ug_edges: capped.train.ug_edges().len(),
            report,
        });
    }
    let mut csv = String::from("k,train_ug_edges,recall@10,recall@20,ndcg@10,ndcg@20\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            r.k,
            r.train_ug_edges,
            r.report.recall[0],
            r.report.recall[1],
            r.report.ndcg[0],
            r.report.ndcg[1]
        )
        .unwrap();
    }
    write_text(&cfg.output.dir.join("cold_start.csv"), &csv)?;
    Ok(rows)
}

fn histogram_csv(h: &Histogram) -> String {
    let mut out = String::from("bin_start,bin_end,count\n");
    for (i, c) in h.counts.iter().enumerate() {
        writeln!(out, "{},{},{}", h.edges[i], h.edges[i + 1], c).unwrap();
    }
    out
}

fn correlation_csv(r: &CorrelationReport) -> String {
    let mut out = String::from("decile,mean_relatedness,mean_common_user_ratio,pair_count\n");
    for d in &r.deciles {
        writeln!(
            out,
            "{},{},{},{}",
            d.decile, d.mean_relatedness, d.mean_common_user_ratio, d.pair_count
        )
        .unwrap();
    }
    out
}

/// Paths written by [`run_analyze`].
pub struct AnalyzeOutput {
    pub group_histogram: PathBuf,
    pub group_pairs_csv: PathBuf,
    pub group_correlation_csv: PathBuf,
    pub group_correlation_json: PathBuf,
    pub item_histogram: Option<PathBuf>,
    pub report: CorrelationReport,
}

/// Contextual-embedding diagnostics for a trained checkpoint: dot-product
/// histogram plus the relatedness / common-user-ratio correlation, computed
/// against the train split the checkpoint was fitted on.
pub fn run_analyze(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    bins: usize,
    include_items: bool,
) -> Result<AnalyzeOutput> {
    cfg.validate()?;
    let graph = cfg.load_graph()?;
    let split = cfg.make_split(&graph)?;
    let (params, meta) = load_model(checkpoint)?;
    if meta.n_groups != graph.n_groups() || meta.n_items != graph.n_items() {
        return Err(Error::Data(format!(
            "checkpoint shapes ({} groups / {} items) do not match the dataset ({} / {})",
            meta.n_groups,
            meta.n_items,
            graph.n_groups(),
            graph.n_items()
        )));
    }
    let dir = cfg.output.dir.join("analysis");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let hist = dot_product_distribution(&params.ctx_group, bins)?;
    let pairs = relatedness_ratio_pairs(
        &split.train,
        &params.ctx_group,
        meta.hyperparams.relatedness_row_norm,
    )?;
    let corr = correlation_from_pairs(&pairs)?;
    let group_histogram = dir.join("group_dot_hist.csv");
    let group_pairs_csv = dir.join("group_pairs.csv");
    let group_correlation_csv = dir.join("group_correlation.csv");
    let group_correlation_json = dir.join("group_correlation.json");
    write_text(&group_histogram, &histogram_csv(&hist))?;
    let mut pairs_csv = String::from("relatedness,common_user_ratio\n");
    for (r, c) in &pairs {
        writeln!(pairs_csv, "{r},{c}").unwrap();
    }
    write_text(&group_pairs_csv, &pairs_csv)?;
    write_text(&group_correlation_csv, &correlation_csv(&corr))?;
    write_text(
        &group_correlation_json,
        &serde_json::to_string_pretty(&corr).expect("correlation serialization"),
    )?;

    let item_histogram = if include_items {
        let h = dot_product_distribution(&params.ctx_item, bins)?;
        let p = dir.join("item_dot_hist.csv");
        write_text(&p, &histogram_csv(&h))?;
        Some(p)
    } else {
        None
    };
    Ok(AnalyzeOutput {
        group_histogram,
        group_pairs_csv,
        group_correlation_csv,
        group_correlation_json,
        item_histogram,
        report: corr,
    })
}
