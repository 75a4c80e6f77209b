//! Metric assembly over graphs and datasets.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::PerturbDataset;
use crate::grn::GrnGraph;
use crate::inference::{estimate_ate, observed_de};
use crate::model::ModelState;

use super::stats::{ate_pearson, ate_r2, jaccard_topk, mann_whitney_p, wasserstein_1d};
use super::{EvalError, EvalResult};

/// Sources need at least this many interventional rows before a negative
/// pair is testable; the rank test is degenerate below it.
pub const MIN_SOURCE_ROWS: usize = 10;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EdgeWd {
    pub source: String,
    pub target: String,
    pub probability: f64,
    pub wd: f64,
    pub n_perturbed_rows: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanWdReport {
    /// Mean over scored edges; absent when no edge is scorable.
    pub mean: Option<f64>,
    pub scored: Vec<EdgeWd>,
    /// Self-loops and edges whose source has no interventional rows.
    pub skipped: usize,
}

/// Wasserstein distance per non-self-loop edge between the target's
/// log1p expression in control rows and in source-perturbed rows.
pub fn mean_wd(graph: &GrnGraph, dataset: &PerturbDataset) -> EvalResult<MeanWdReport> {
    let controls = dataset.control_rows();
    if controls.is_empty() {
        return Err(EvalError::Undefined("dataset has no control rows".into()));
    }
    let catalog = dataset.catalog();
    let mut scored = Vec::new();
    let mut skipped = 0usize;
    for &(s, t, p) in graph.edges() {
        if s == t {
            skipped += 1;
            continue;
        }
        let source_name = &graph.nodes()[s];
        let target_name = &graph.nodes()[t];
        let source_modeled = catalog
            .modeled_index_of(source_name)
            .ok_or_else(|| EvalError::Undefined(format!("unknown gene {source_name:?}")))?;
        let target_modeled = catalog
            .modeled_index_of(target_name)
            .ok_or_else(|| EvalError::Undefined(format!("unknown gene {target_name:?}")))?;
        let target_gene = catalog.modeled_to_gene(target_modeled);
        let perturbed_rows = dataset.rows_with_treatment(source_modeled);
        if perturbed_rows.is_empty() {
            skipped += 1;
            continue;
        }
        let log1p = |rows: &[usize]| -> Vec<f64> {
            rows.iter()
                .map(|&r| dataset.x().get(r, target_gene).ln_1p())
                .collect()
        };
        let wd = wasserstein_1d(&log1p(&controls), &log1p(&perturbed_rows))?;
        scored.push(EdgeWd {
            source: source_name.clone(),
            target: target_name.clone(),
            probability: p,
            wd,
            n_perturbed_rows: perturbed_rows.len(),
        });
    }
    let mean = if scored.is_empty() {
        None
    } else {
        Some(scored.iter().map(|e| e.wd).sum::<f64>() / scored.len() as f64)
    };
    Ok(MeanWdReport {
        mean,
        scored,
        skipped,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NegativePair {
    pub source: String,
    pub target: String,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForReport {
    /// False negatives over sampled negatives; -1 when nothing is samplable.
    pub rate: f64,
    pub n_sampled: usize,
    pub n_false_negatives: usize,
    pub requested: usize,
    pub pairs: Vec<NegativePair>,
}

/// Sample ordered pairs absent from the edge set (no self-pairs; sources
/// need interventional data) and test each with the two-sided rank test on
/// the target's log1p expression. A significant pair is a false negative.
pub fn false_omission_rate(
    graph: &GrnGraph,
    dataset: &PerturbDataset,
    n_negatives: usize,
    alpha: f64,
    seed: u64,
) -> EvalResult<ForReport> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(EvalError::InvalidArgument(format!(
            "alpha {alpha} outside [0, 1]"
        )));
    }
    let controls = dataset.control_rows();
    if controls.is_empty() {
        return Err(EvalError::Undefined("dataset has no control rows".into()));
    }
    let catalog = dataset.catalog();
    let edge_set = graph.edge_set();

    // eligible sources and the complement of the edge set
    let mut complement: Vec<(usize, usize)> = Vec::new();
    for s in 0..graph.n_nodes() {
        let Some(source_modeled) = catalog.modeled_index_of(&graph.nodes()[s]) else {
            continue;
        };
        if dataset.rows_with_treatment(source_modeled).len() < MIN_SOURCE_ROWS {
            continue;
        }
        for t in 0..graph.n_nodes() {
            if s == t || edge_set.contains(&(s, t)) {
                continue;
            }
            complement.push((s, t));
        }
    }
    if complement.is_empty() {
        return Ok(ForReport {
            rate: -1.0,
            n_sampled: 0,
            n_false_negatives: 0,
            requested: n_negatives,
            pairs: Vec::new(),
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    complement.shuffle(&mut rng);
    complement.truncate(n_negatives);

    let mut pairs = Vec::with_capacity(complement.len());
    let mut false_negatives = 0usize;
    for (s, t) in complement {
        let source_name = graph.nodes()[s].clone();
        let target_name = graph.nodes()[t].clone();
        let source_modeled = catalog
            .modeled_index_of(&source_name)
            .expect("filtered above");
        let target_modeled = catalog
            .modeled_index_of(&target_name)
            .ok_or_else(|| EvalError::Undefined(format!("unknown gene {target_name:?}")))?;
        let target_gene = catalog.modeled_to_gene(target_modeled);
        let perturbed_rows = dataset.rows_with_treatment(source_modeled);
        let log1p = |rows: &[usize]| -> Vec<f64> {
            rows.iter()
                .map(|&r| dataset.x().get(r, target_gene).ln_1p())
                .collect()
        };
        let p_value = mann_whitney_p(&log1p(&controls), &log1p(&perturbed_rows))?;
        let significant = p_value <= alpha;
        if significant {
            false_negatives += 1;
        }
        pairs.push(NegativePair {
            source: source_name,
            target: target_name,
            p_value,
            significant,
        });
    }
    Ok(ForReport {
        rate: false_negatives as f64 / pairs.len() as f64,
        n_sampled: pairs.len(),
        n_false_negatives: false_negatives,
        requested: n_negatives,
        pairs,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreatmentMetrics {
    pub treatment: String,
    pub ate_pearson: Option<f64>,
    pub ate_r2: Option<f64>,
    pub jaccard_topk: Option<f64>,
    pub n_rows: usize,
}

/// Per-treatment response metrics on an evaluation split: predicted average
/// treatment effects against observed differential expression.
pub fn response_metrics(
    state: &ModelState,
    split: &PerturbDataset,
    k_top: usize,
    particles: usize,
    seed: u64,
) -> EvalResult<Vec<TreatmentMetrics>> {
    let catalog = split.catalog();
    let mut out = Vec::new();
    for t in 0..catalog.n_modeled() {
        if !catalog.modeled_is_perturbed(t) {
            continue;
        }
        let rows = split.rows_with_treatment(t);
        if rows.is_empty() {
            continue;
        }
        let name = catalog.modeled_name(t).to_string();
        let prediction = estimate_ate(
            state,
            t,
            &name,
            particles,
            seed.wrapping_add(t as u64),
        )?;
        let observed = observed_de(split, t)?;
        let keep = |r: EvalResult<f64>| match r {
            Ok(v) => Ok(Some(v)),
            Err(EvalError::Undefined(_)) => Ok(None),
            Err(e) => Err(e),
        };
        let pearson = keep(ate_pearson(&prediction.ate, &observed))?;
        let r2 = keep(ate_r2(&prediction.ate, &observed))?;
        let jaccard = if k_top <= observed.len() {
            Some(jaccard_topk(&prediction.ate, &observed, k_top)?)
        } else {
            None
        };
        out.push(TreatmentMetrics {
            treatment: name,
            ate_pearson: pearson,
            ate_r2: r2,
            jaccard_topk: jaccard,
            n_rows: rows.len(),
        });
    }
    Ok(out)
}

fn mean_present(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values.flatten() {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrnMetricsSection {
    pub mean_wd: Option<f64>,
    pub for_rate: f64,
    pub n_edges: usize,
    pub n_negatives_sampled: usize,
    pub n_false_negatives: usize,
    pub skipped_edges: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_treatment: Vec<TreatmentMetrics>,
    pub mean_ate_pearson: Option<f64>,
    pub mean_ate_r2: Option<f64>,
    pub mean_jaccard: Option<f64>,
    pub grn: GrnMetricsSection,
    pub provenance: Provenance,
}

impl MetricsReport {
    pub fn assemble(
        per_treatment: Vec<TreatmentMetrics>,
        grn: GrnMetricsSection,
        provenance: Provenance,
    ) -> MetricsReport {
        let mean_ate_pearson = mean_present(per_treatment.iter().map(|t| t.ate_pearson));
        let mean_ate_r2 = mean_present(per_treatment.iter().map(|t| t.ate_r2));
        let mean_jaccard = mean_present(per_treatment.iter().map(|t| t.jaccard_topk));
        MetricsReport {
            per_treatment,
            mean_ate_pearson,
            mean_ate_r2,
            mean_jaccard,
            grn,
            provenance,
        }
    }
}
