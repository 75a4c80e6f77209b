//! Command implementations over a JSON config file: `simulate`, `train`,
//! `predict`, `grn`, `eval`, `ablate`. The `pertvae` binary parses flags and
//! calls straight into these.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::{
    load_dataset, save_dataset, save_truth_edges, split_dataset, synthesize_dataset, DataError,
    PerturbDataset, SynthConfig,
};
use crate::evalharness::{
    false_omission_rate, mean_wd, response_metrics, EvalError, GrnMetricsSection, MetricsReport,
    Provenance,
};
use crate::grn::{degree_stats, export_edges, extract_grn, import_edges, GrnError, GrnGraph, Restrict};
use crate::inference::{predict_unseen, InferenceError};
use crate::model::ModelState;
use crate::objective::Ablation;
use crate::trainer::{load_checkpoint, save_checkpoint, train, TrainConfig, TrainError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config is missing the {0:?} section or field")]
    MissingField(&'static str),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {msg}")]
    BadFile { path: String, msg: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Grn(#[from] GrnError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type PipelineResult<T> = Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn default_k_top() -> usize {
    50
}
fn default_particles() -> usize {
    2500
}
fn default_grn_threshold() -> f64 {
    0.5
}
fn default_n_negatives() -> usize {
    500
}
fn default_alpha_level() -> f64 {
    0.05
}
fn default_restrict() -> Restrict {
    Restrict::All
}
fn default_hub_weight_threshold() -> f64 {
    0.3
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitSection {
    pub seed: u64,
    pub holdout: Vec<String>,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            seed: 0,
            holdout: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub k_top: usize,
    pub particles: usize,
    pub grn_threshold: f64,
    pub n_negatives: usize,
    pub alpha: f64,
    pub restrict: Restrict,
    pub hub_weight_threshold: f64,
    /// Score this edge list instead of the checkpoint's graph.
    pub graph_tsv: Option<PathBuf>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            k_top: default_k_top(),
            particles: default_particles(),
            grn_threshold: default_grn_threshold(),
            n_negatives: default_n_negatives(),
            alpha: default_alpha_level(),
            restrict: default_restrict(),
            hub_weight_threshold: default_hub_weight_threshold(),
            graph_tsv: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub simulate: Option<SynthConfig>,
    #[serde(default)]
    pub split: Option<SplitSection>,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub eval: Option<EvalSection>,
}

/// Resolved invocation: config plus where it came from and where output goes.
#[derive(Debug, Clone)]
pub struct Ctx {
    pub config: PipelineConfig,
    pub config_path: PathBuf,
    /// Hash of the raw config file bytes.
    pub config_hash: String,
    pub out_dir: PathBuf,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Ctx {
    /// Read the config file and apply command-line overrides. A seed
    /// override propagates into every seeded section.
    pub fn load(
        config_path: &Path,
        out_override: Option<PathBuf>,
        seed_override: Option<u64>,
    ) -> PipelineResult<Ctx> {
        let bytes = std::fs::read(config_path).map_err(io_err(config_path))?;
        let mut config: PipelineConfig =
            serde_json::from_slice(&bytes).map_err(|e| PipelineError::BadFile {
                path: config_path.display().to_string(),
                msg: e.to_string(),
            })?;
        if let Some(seed) = seed_override {
            config.seed = seed;
            if let Some(sim) = config.simulate.as_mut() {
                sim.seed = seed;
            }
            if let Some(split) = config.split.as_mut() {
                split.seed = seed;
            }
            if let Some(train) = config.train.as_mut() {
                train.seed = seed;
            }
        }
        let out_dir = out_override
            .or_else(|| config.out_dir.clone())
            .ok_or(PipelineError::MissingField("out_dir"))?;
        Ok(Ctx {
            config,
            config_path: config_path.to_path_buf(),
            config_hash: sha256_hex(&bytes),
            out_dir,
        })
    }

    pub fn from_config(config: PipelineConfig, out_dir: PathBuf) -> Ctx {
        let bytes = serde_json::to_vec(&config).expect("config serializes");
        Ctx {
            config,
            config_path: PathBuf::from("<in-memory>"),
            config_hash: sha256_hex(&bytes),
            out_dir,
        }
    }

    fn data_dir(&self) -> PipelineResult<&Path> {
        self.config
            .data_dir
            .as_deref()
            .ok_or(PipelineError::MissingField("data_dir"))
    }

    fn train_section(&self) -> PipelineResult<&TrainConfig> {
        self.config
            .train
            .as_ref()
            .ok_or(PipelineError::MissingField("train"))
    }

    fn eval_section(&self) -> EvalSection {
        self.config.eval.clone().unwrap_or_default()
    }

    fn split_section(&self) -> SplitSection {
        self.config.split.clone().unwrap_or_default()
    }
}

/// Reproducibility record written next to every command's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: String,
    pub config_hash: String,
    pub seed: u64,
    pub out_dir: String,
    pub tool_version: String,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> PipelineResult<()> {
    let json =
        serde_json::to_string_pretty(value).map_err(|e| PipelineError::Config(e.to_string()))?;
    std::fs::write(path, json).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> PipelineResult<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_manifest(ctx: &Ctx, command: &str) -> PipelineResult<PathBuf> {
    let manifest = RunManifest {
        command: command.to_string(),
        config_path: ctx.config_path.display().to_string(),
        config_hash: ctx.config_hash.clone(),
        seed: ctx.config.seed,
        out_dir: ctx.out_dir.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let path = ctx.out_dir.join("manifest.json");
    write_json(&path, &manifest)?;
    Ok(path)
}

pub const EXPRESSION_FILE: &str = "expression.tsv";
pub const TREATMENTS_FILE: &str = "treatments.tsv";
pub const QC_FILE: &str = "qc.tsv";
pub const CATALOG_FILE: &str = "catalog.tsv";
pub const TRUTH_FILE: &str = "truth_edges.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

pub fn load_data_dir(dir: &Path) -> PipelineResult<PerturbDataset> {
    Ok(load_dataset(
        &dir.join(EXPRESSION_FILE),
        &dir.join(TREATMENTS_FILE),
        &dir.join(QC_FILE),
        &dir.join(CATALOG_FILE),
    )?)
}

fn ensure_out_dir(ctx: &Ctx) -> PipelineResult<()> {
    std::fs::create_dir_all(&ctx.out_dir).map_err(io_err(&ctx.out_dir))
}

/// Draw a synthetic screen and write the four dataset files plus the
/// ground-truth edge list.
pub fn cmd_simulate(ctx: &Ctx) -> PipelineResult<Vec<PathBuf>> {
    let sim = ctx
        .config
        .simulate
        .clone()
        .ok_or(PipelineError::MissingField("simulate"))?;
    ensure_out_dir(ctx)?;
    let (dataset, truth) = synthesize_dataset(&sim)?;
    let paths = [
        ctx.out_dir.join(EXPRESSION_FILE),
        ctx.out_dir.join(TREATMENTS_FILE),
        ctx.out_dir.join(QC_FILE),
        ctx.out_dir.join(CATALOG_FILE),
        ctx.out_dir.join(TRUTH_FILE),
    ];
    save_dataset(&dataset, &paths[0], &paths[1], &paths[2], &paths[3])?;
    save_truth_edges(&truth, dataset.catalog(), &paths[4])?;
    let manifest = write_manifest(ctx, "simulate")?;
    let mut out = paths.to_vec();
    out.push(manifest);
    Ok(out)
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> PipelineResult<String> {
    let mut text = String::new();
    for item in items {
        text.push_str(
            &serde_json::to_string(&item).map_err(|e| PipelineError::Config(e.to_string()))?,
        );
        text.push('\n');
    }
    Ok(text)
}

/// Split the dataset, run the training loop, write the checkpoint and logs.
pub fn cmd_train(ctx: &Ctx) -> PipelineResult<Vec<PathBuf>> {
    let train_cfg = ctx.train_section()?.clone();
    let dataset = load_data_dir(ctx.data_dir()?)?;
    let split = ctx.split_section();
    let (train_set, val_set, _) = split_dataset(&dataset, split.seed, &split.holdout)?;
    ensure_out_dir(ctx)?;

    match train(&train_set, &val_set, &train_cfg) {
        Ok((state, history)) => {
            let ckpt = ctx.out_dir.join(CHECKPOINT_FILE);
            save_checkpoint(&ckpt, &state, dataset.catalog(), &train_cfg)?;
            let hist_path = ctx.out_dir.join("history.jsonl");
            write_text(&hist_path, &jsonl(history.epochs.iter())?)?;
            let losses_path = ctx.out_dir.join("losses.jsonl");
            write_text(&losses_path, &jsonl(history.step_log.iter())?)?;
            let manifest = write_manifest(ctx, "train")?;
            Ok(vec![ckpt, hist_path, losses_path, manifest])
        }
        Err(TrainError::Diverged {
            epoch,
            step,
            msg,
            last,
        }) => {
            // leave the last finite checkpoint and a diagnostic behind
            let (state, history) = *last;
            let ckpt = ctx.out_dir.join("checkpoint_diverged.json");
            save_checkpoint(&ckpt, &state, dataset.catalog(), &train_cfg)?;
            let diag = ctx.out_dir.join("diverged.json");
            write_json(
                &diag,
                &serde_json::json!({ "epoch": epoch, "step": step, "message": msg }),
            )?;
            write_text(
                &ctx.out_dir.join("history.jsonl"),
                &jsonl(history.epochs.iter())?,
            )?;
            Err(TrainError::Diverged {
                epoch,
                step,
                msg,
                last: Box::new((state, history)),
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

fn load_verified_checkpoint(
    ctx: &Ctx,
    checkpoint: &Path,
) -> PipelineResult<(ModelState, crate::dataio::GeneCatalog, String)> {
    let train_cfg = ctx.train_section()?;
    Ok(load_checkpoint(checkpoint, Some(train_cfg))?)
}

/// Predicted vs observed differential expression for chosen treatments
/// (default: every perturbed gene present in the test split).
pub fn cmd_predict(
    ctx: &Ctx,
    checkpoint: &Path,
    treatments: &[String],
) -> PipelineResult<Vec<PathBuf>> {
    let (state, _, _) = load_verified_checkpoint(ctx, checkpoint)?;
    let dataset = load_data_dir(ctx.data_dir()?)?;
    let split = ctx.split_section();
    let (_, _, test_set) = split_dataset(&dataset, split.seed, &split.holdout)?;
    let eval = ctx.eval_section();
    ensure_out_dir(ctx)?;
    let pred_dir = ctx.out_dir.join("predictions");
    std::fs::create_dir_all(&pred_dir).map_err(io_err(&pred_dir))?;

    let catalog = test_set.catalog();
    let chosen: Vec<usize> = if treatments.is_empty() {
        (0..catalog.n_modeled())
            .filter(|&t| {
                catalog.modeled_is_perturbed(t) && !test_set.rows_with_treatment(t).is_empty()
            })
            .collect()
    } else {
        treatments
            .iter()
            .map(|name| {
                catalog
                    .modeled_index_of(name)
                    .ok_or_else(|| PipelineError::Config(format!("unknown treatment {name:?}")))
            })
            .collect::<PipelineResult<Vec<_>>>()?
    };

    let mut written = Vec::new();
    let mut summary = Vec::new();
    for t in chosen {
        let (prediction, table) = predict_unseen(
            &state,
            t,
            &test_set,
            eval.particles,
            ctx.config.seed.wrapping_add(t as u64),
        )?;
        let mut tsv = String::from("gene\tpredicted_de\tobserved_de\n");
        for row in &table {
            tsv.push_str(&format!(
                "{}\t{:.6}\t{:.6}\n",
                row.gene, row.predicted_de, row.observed_de
            ));
        }
        let path = pred_dir.join(format!("{}.tsv", prediction.treatment));
        write_text(&path, &tsv)?;
        written.push(path);

        let observed: Vec<f64> = table.iter().map(|r| r.observed_de).collect();
        let keep = |r: Result<f64, EvalError>| r.ok();
        summary.push(serde_json::json!({
            "treatment": prediction.treatment,
            "particles": prediction.particles,
            "ate_pearson": keep(crate::evalharness::ate_pearson(&prediction.ate, &observed)),
            "ate_r2": keep(crate::evalharness::ate_r2(&prediction.ate, &observed)),
            "jaccard_topk": if eval.k_top <= observed.len() {
                keep(crate::evalharness::jaccard_topk(&prediction.ate, &observed, eval.k_top))
            } else { None },
        }));
    }
    let summary_path = ctx.out_dir.join("ate_summary.json");
    write_json(&summary_path, &summary)?;
    written.push(summary_path);
    written.push(write_manifest(ctx, "predict")?);
    Ok(written)
}

/// Threshold the trained edge probabilities into a graph and export it with
/// degree statistics.
pub fn cmd_grn(ctx: &Ctx, checkpoint: &Path) -> PipelineResult<Vec<PathBuf>> {
    let (state, catalog, _) = load_verified_checkpoint(ctx, checkpoint)?;
    let eval = ctx.eval_section();
    let graph = extract_grn(&state.causal, &catalog, eval.grn_threshold, eval.restrict)?;
    ensure_out_dir(ctx)?;
    let edges_path = ctx.out_dir.join("edges.tsv");
    export_edges(&graph, &edges_path)?;
    let stats = degree_stats(&graph, eval.hub_weight_threshold);
    let degree_path = ctx.out_dir.join("degree_report.json");
    write_json(
        &degree_path,
        &serde_json::json!({
            "threshold": graph.threshold(),
            "n_edges": graph.n_edges(),
            "weight_threshold": stats.weight_threshold,
            "per_node": stats.per_node,
            "top_hubs": stats.top_hubs(10),
        }),
    )?;
    let manifest = write_manifest(ctx, "grn")?;
    Ok(vec![edges_path, degree_path, manifest])
}

fn evaluate_graph_and_responses(
    ctx: &Ctx,
    state: &ModelState,
    graph: &GrnGraph,
    dataset: &PerturbDataset,
    test_set: &PerturbDataset,
) -> PipelineResult<MetricsReport> {
    let eval = ctx.eval_section();
    let wd_report = mean_wd(graph, dataset)?;
    let for_report = false_omission_rate(
        graph,
        dataset,
        eval.n_negatives,
        eval.alpha,
        ctx.config.seed,
    )?;
    let per_treatment = response_metrics(
        state,
        test_set,
        eval.k_top,
        eval.particles,
        ctx.config.seed,
    )?;
    Ok(MetricsReport::assemble(
        per_treatment,
        GrnMetricsSection {
            mean_wd: wd_report.mean,
            for_rate: for_report.rate,
            n_edges: graph.n_edges(),
            n_negatives_sampled: for_report.n_sampled,
            n_false_negatives: for_report.n_false_negatives,
            skipped_edges: wd_report.skipped,
            threshold: graph.threshold(),
        },
        Provenance {
            config_hash: ctx.config_hash.clone(),
            seed: ctx.config.seed,
        },
    ))
}

/// Full evaluation: graph statistics over the whole dataset plus response
/// metrics on the test split. An explicit edge list (for instance the
/// synthetic ground truth) can replace the checkpoint's graph.
pub fn cmd_eval(ctx: &Ctx, checkpoint: &Path) -> PipelineResult<Vec<PathBuf>> {
    let (state, catalog, _) = load_verified_checkpoint(ctx, checkpoint)?;
    let dataset = load_data_dir(ctx.data_dir()?)?;
    let split = ctx.split_section();
    let (_, _, test_set) = split_dataset(&dataset, split.seed, &split.holdout)?;
    let eval = ctx.eval_section();

    let graph = match &eval.graph_tsv {
        Some(path) => import_edges(
            path,
            &catalog.modeled_names(),
            catalog.n_perturbed(),
            eval.grn_threshold,
        )?,
        None => extract_grn(&state.causal, &catalog, eval.grn_threshold, eval.restrict)?,
    };

    ensure_out_dir(ctx)?;
    let report = evaluate_graph_and_responses(ctx, &state, &graph, &dataset, &test_set)?;
    let metrics_path = ctx.out_dir.join("metrics.json");
    write_json(&metrics_path, &report)?;

    let wd_report = mean_wd(&graph, &dataset)?;
    let mut tsv = String::from("source\ttarget\tprobability\twd\tn_perturbed_rows\n");
    for e in &wd_report.scored {
        tsv.push_str(&format!(
            "{}\t{}\t{:.6}\t{:.6}\t{}\n",
            e.source, e.target, e.probability, e.wd, e.n_perturbed_rows
        ));
    }
    let wd_path = ctx.out_dir.join("edge_wd.tsv");
    write_text(&wd_path, &tsv)?;
    let manifest = write_manifest(ctx, "eval")?;
    Ok(vec![metrics_path, wd_path, manifest])
}

/// One ablation row of the comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub ate_pearson: Option<f64>,
    pub ate_r2: Option<f64>,
    pub jaccard: Option<f64>,
    pub mean_wd: Option<f64>,
    pub for_rate: f64,
    pub n_edges: usize,
}

/// Train all four loss variants on the same data and seed, evaluate each,
/// and emit the comparison table.
pub fn cmd_ablate(ctx: &Ctx) -> PipelineResult<Vec<PathBuf>> {
    let base_cfg = ctx.train_section()?.clone();
    let dataset = load_data_dir(ctx.data_dir()?)?;
    let split = ctx.split_section();
    let (train_set, val_set, test_set) = split_dataset(&dataset, split.seed, &split.holdout)?;
    ensure_out_dir(ctx)?;

    let variants = Ablation::all();
    let results: Vec<PipelineResult<(Ablation, ModelState, AblationRow)>> = variants
        .par_iter()
        .map(|&ablation| {
            let mut cfg = base_cfg.clone();
            cfg.ablation = ablation;
            let (state, _) = train(&train_set, &val_set, &cfg)?;
            let eval = ctx.eval_section();
            let graph = extract_grn(
                &state.causal,
                dataset.catalog(),
                eval.grn_threshold,
                eval.restrict,
            )?;
            let report = evaluate_graph_and_responses(ctx, &state, &graph, &dataset, &test_set)?;
            let row = AblationRow {
                variant: ablation.as_str().to_string(),
                ate_pearson: report.mean_ate_pearson,
                ate_r2: report.mean_ate_r2,
                jaccard: report.mean_jaccard,
                mean_wd: report.grn.mean_wd,
                for_rate: report.grn.for_rate,
                n_edges: report.grn.n_edges,
            };
            Ok((ablation, state, row))
        })
        .collect();

    let fmt_opt = |v: Option<f64>| match v {
        Some(x) => format!("{x:.6}"),
        None => "NA".to_string(),
    };
    let mut table = String::from(
        "variant\tate_pearson\tate_r2\tjaccard\tmean_wd\tfor_rate\tn_edges\n",
    );
    let mut written = Vec::new();
    let mut rows = Vec::new();
    for result in results {
        let (ablation, state, row) = result?;
        let dir = ctx.out_dir.join("ablation").join(ablation.as_str());
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut cfg = base_cfg.clone();
        cfg.ablation = ablation;
        let ckpt = dir.join(CHECKPOINT_FILE);
        save_checkpoint(&ckpt, &state, dataset.catalog(), &cfg)?;
        written.push(ckpt);
        rows.push(row);
    }
    for row in &rows {
        table.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\n",
            row.variant,
            fmt_opt(row.ate_pearson),
            fmt_opt(row.ate_r2),
            fmt_opt(row.jaccard),
            fmt_opt(row.mean_wd),
            row.for_rate,
            row.n_edges
        ));
    }
    let table_path = ctx.out_dir.join("ablation_table.tsv");
    write_text(&table_path, &table)?;
    written.push(table_path);
    written.push(write_manifest(ctx, "ablate")?);
    Ok(written)
}
