//! Explicit graph extraction from trained edge logits, degree and hub
//! statistics, weighted reachability, and edge-list export.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::GeneCatalog;
use crate::diffcore::{matrix_power_sum, Matrix};
use crate::model::CausalParams;

#[derive(Debug, Error)]
pub enum GrnError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type GrnResult<T> = Result<T, GrnError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restrict {
    /// All modeled genes.
    All,
    /// Drop rows and columns of genes without interventional data.
    PerturbedOnly,
}

/// Thresholded directed graph over genes. The probability matrix is kept in
/// full; `edges` holds exactly the entries strictly above the threshold.
/// Self-loops are permitted.
#[derive(Debug, Clone, PartialEq)]
pub struct GrnGraph {
    nodes: Vec<String>,
    /// Leading block of `nodes` with interventional data.
    n_perturbed: usize,
    prob_matrix: Matrix,
    threshold: f64,
    edges: Vec<(usize, usize, f64)>,
}

impl GrnGraph {
    pub fn new(
        nodes: Vec<String>,
        n_perturbed: usize,
        prob_matrix: Matrix,
        threshold: f64,
    ) -> GrnResult<Self> {
        if prob_matrix.rows() != nodes.len() || prob_matrix.cols() != nodes.len() {
            return Err(GrnError::Invalid(format!(
                "probability matrix {}x{} does not match {} nodes",
                prob_matrix.rows(),
                prob_matrix.cols(),
                nodes.len()
            )));
        }
        if n_perturbed > nodes.len() {
            return Err(GrnError::Invalid(
                "perturbed block larger than node count".into(),
            ));
        }
        let mut edges = Vec::new();
        for i in 0..nodes.len() {
            for j in 0..nodes.len() {
                let p = prob_matrix.get(i, j);
                if p > threshold {
                    edges.push((i, j, p));
                }
            }
        }
        Ok(GrnGraph {
            nodes,
            n_perturbed,
            prob_matrix,
            threshold,
            edges,
        })
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_perturbed(&self) -> usize {
        self.n_perturbed
    }

    pub fn is_extended(&self, node: usize) -> bool {
        node >= self.n_perturbed
    }

    pub fn prob_matrix(&self) -> &Matrix {
        &self.prob_matrix
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// (source, target, probability), source-major order.
    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edge_set(&self) -> BTreeSet<(usize, usize)> {
        self.edges.iter().map(|&(s, t, _)| (s, t)).collect()
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }
}

/// Threshold the sigmoid of the logits into a graph. Strict inequality:
/// entries exactly at the threshold stay out, so freshly initialized
/// parameters yield no edges.
pub fn extract_grn(
    params: &CausalParams,
    catalog: &GeneCatalog,
    threshold: f64,
    restrict: Restrict,
) -> GrnResult<GrnGraph> {
    if params.dim() != catalog.n_modeled() {
        return Err(GrnError::Invalid(format!(
            "edge matrix is {}x{} but the catalog models {} genes",
            params.dim(),
            params.dim(),
            catalog.n_modeled()
        )));
    }
    let probs = params.prob();
    let (nodes, n_perturbed, prob_matrix) = match restrict {
        Restrict::All => (
            catalog.modeled_names(),
            catalog.n_perturbed(),
            probs,
        ),
        Restrict::PerturbedOnly => {
            let np = catalog.n_perturbed();
            let idx: Vec<usize> = (0..np).collect();
            let sub = probs.select_rows(&idx).select_cols(&idx);
            let names = catalog.modeled_names()[..np].to_vec();
            (names, np, sub)
        }
    };
    GrnGraph::new(nodes, n_perturbed, prob_matrix, threshold)
}

/// Per-node degrees over edges stronger than a weight threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeDegrees {
    pub node: String,
    pub in_degree: usize,
    pub out_degree: usize,
    pub combined: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegreeStats {
    pub weight_threshold: f64,
    pub per_node: Vec<NodeDegrees>,
}

impl DegreeStats {
    /// Top hubs by combined degree; ties broken by node name.
    pub fn top_hubs(&self, k: usize) -> Vec<&NodeDegrees> {
        let mut sorted: Vec<&NodeDegrees> = self.per_node.iter().collect();
        sorted.sort_by(|a, b| {
            b.combined
                .cmp(&a.combined)
                .then_with(|| a.node.cmp(&b.node))
        });
        sorted.truncate(k);
        sorted
    }
}

pub fn degree_stats(graph: &GrnGraph, weight_threshold: f64) -> DegreeStats {
    let n = graph.n_nodes();
    let mut in_deg = vec![0usize; n];
    let mut out_deg = vec![0usize; n];
    for &(s, t, p) in graph.edges() {
        if p > weight_threshold {
            out_deg[s] += 1;
            in_deg[t] += 1;
        }
    }
    let per_node = (0..n)
        .map(|i| NodeDegrees {
            node: graph.nodes()[i].clone(),
            in_degree: in_deg[i],
            out_degree: out_deg[i],
            combined: in_deg[i] + out_deg[i],
        })
        .collect();
    DegreeStats {
        weight_threshold,
        per_node,
    }
}

/// A simple path through the thresholded graph and its probability product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplePath {
    pub nodes: Vec<usize>,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct KhopReach {
    /// Row of the k-hop accumulation of the edge-masked probability matrix.
    pub reach: Vec<f64>,
    /// Simple paths of two or three hops from the source to a perturbed
    /// gene passing through at least one extended gene.
    pub extended_paths: Vec<SimplePath>,
}

/// Weighted reachability of one source: the source row of
/// `W + (1/n) * (W^2 + ... + W^K)` on the edge-masked probabilities, plus
/// the short multi-hop paths that route through extended genes.
pub fn khop_reach(graph: &GrnGraph, source: usize, k_hops: usize) -> GrnResult<KhopReach> {
    let n = graph.n_nodes();
    if source >= n {
        return Err(GrnError::UnknownNode(format!("node index {source}")));
    }
    if k_hops == 0 {
        return Err(GrnError::Invalid("need at least one hop".into()));
    }
    let mut masked = Matrix::zeros(n, n);
    for &(s, t, p) in graph.edges() {
        masked.set(s, t, p);
    }
    let acc = matrix_power_sum(&masked, k_hops, 1.0 / n as f64)
        .map_err(|e| GrnError::Invalid(e.to_string()))?;
    let reach = acc.row(source).to_vec();

    // depth-limited enumeration of simple paths, lexicographic by node
    let mut extended_paths = Vec::new();
    let mut stack = vec![source];
    enumerate_paths(graph, &masked, &mut stack, 1.0, &mut extended_paths);
    Ok(KhopReach {
        reach,
        extended_paths,
    })
}

fn enumerate_paths(
    graph: &GrnGraph,
    masked: &Matrix,
    stack: &mut Vec<usize>,
    product: f64,
    out: &mut Vec<SimplePath>,
) {
    let last = *stack.last().expect("non-empty path");
    if stack.len() > 4 {
        return;
    }
    for next in 0..graph.n_nodes() {
        let w = masked.get(last, next);
        if w == 0.0 || stack.contains(&next) {
            continue;
        }
        stack.push(next);
        let p = product * w;
        let hops = stack.len() - 1;
        if (2..=3).contains(&hops)
            && !graph.is_extended(next)
            && stack[1..stack.len() - 1].iter().any(|&v| graph.is_extended(v))
        {
            out.push(SimplePath {
                nodes: stack.clone(),
                weight: p,
            });
        }
        if stack.len() <= 3 {
            enumerate_paths(graph, masked, stack, p, out);
        }
        stack.pop();
    }
}

/// Edge list TSV: `source<TAB>target<TAB>probability`, six decimals,
/// header always present.
pub fn export_edges(graph: &GrnGraph, path: &Path) -> GrnResult<()> {
    let mut out = String::from("source\ttarget\tprobability\n");
    for &(s, t, p) in graph.edges() {
        out.push_str(&format!(
            "{}\t{}\t{:.6}\n",
            graph.nodes()[s],
            graph.nodes()[t],
            p
        ));
    }
    std::fs::write(path, out).map_err(|source| GrnError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Read an exported edge list back over a known node set. Probabilities land
/// in the matrix; everything else is zero. Duplicate edges are an error.
pub fn import_edges(
    path: &Path,
    nodes: &[String],
    n_perturbed: usize,
    threshold: f64,
) -> GrnResult<GrnGraph> {
    let text = std::fs::read_to_string(path).map_err(|source| GrnError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let n = nodes.len();
    let mut prob = Matrix::zeros(n, n);
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "source\ttarget\tprobability" && line != "source\ttarget\tweight" {
                return Err(GrnError::Parse {
                    path: path.display().to_string(),
                    line: 1,
                    msg: "expected a source/target/probability header".into(),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| GrnError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let s = nodes
            .iter()
            .position(|x| x == fields[0])
            .ok_or_else(|| parse_err(format!("unknown source {:?}", fields[0])))?;
        let t = nodes
            .iter()
            .position(|x| x == fields[1])
            .ok_or_else(|| parse_err(format!("unknown target {:?}", fields[1])))?;
        let p: f64 = fields[2]
            .parse()
            .map_err(|_| parse_err(format!("bad probability {:?}", fields[2])))?;
        let weight = p.abs();
        if !(0.0..=1.0).contains(&weight) || weight == 0.0 {
            return Err(parse_err(format!(
                "probability {p} outside (0, 1]"
            )));
        }
        if !seen.insert((s, t)) {
            return Err(parse_err(format!(
                "duplicate edge {} -> {}",
                fields[0], fields[1]
            )));
        }
        prob.set(s, t, weight);
    }
    GrnGraph::new(nodes.to_vec(), n_perturbed, prob, threshold)
}
