//! Synthetic screen generator with a known ground-truth graph.
//!
//! Control cells follow a Gamma-Poisson base model; perturbing a gene
//! multiplicatively knocks that gene down and propagates attenuated effects
//! along directed walks of a random acyclic weighted graph. A fixed fraction
//! of rows is flagged as artifact-affected and receives a global
//! multiplicative distortion.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;

use super::{DataError, DataResult, GeneCatalog, GeneRole, GroundTruthGrn, PerturbDataset};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_perturbed: usize,
    pub n_extended: usize,
    /// Extra measured-only genes outside the modeled square.
    pub n_measured: usize,
    pub n_rows: usize,
    pub control_fraction: f64,
    pub edge_density: f64,
    /// Multiplicative knockdown strength in [0, 1): perturbed gene means are
    /// scaled by (1 - knockdown).
    pub knockdown: f64,
    /// Per-hop decay of propagated effects.
    pub attenuation: f64,
    pub artifact_rate: f64,
    /// Gamma-Poisson dispersion of the base counts.
    pub dispersion: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_perturbed: 50,
            n_extended: 25,
            n_measured: 5,
            n_rows: 5000,
            control_fraction: 0.2,
            edge_density: 0.05,
            knockdown: 0.8,
            attenuation: 0.8,
            artifact_rate: 0.15,
            dispersion: 20.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> DataResult<()> {
        if self.n_perturbed < 1 {
            return Err(DataError::Config("need at least one perturbed gene".into()));
        }
        if self.n_rows < 2 * self.n_perturbed {
            return Err(DataError::Config(format!(
                "need at least {} rows for {} perturbed genes",
                2 * self.n_perturbed,
                self.n_perturbed
            )));
        }
        if !(0.0..1.0).contains(&self.edge_density) || self.edge_density <= 0.0 {
            return Err(DataError::Config(format!(
                "edge density must be in (0, 1), got {}",
                self.edge_density
            )));
        }
        let m = self.n_perturbed + self.n_extended;
        let expected_edges = self.edge_density * (m * (m - 1) / 2) as f64;
        if expected_edges < 1.0 {
            return Err(DataError::Config(format!(
                "edge density {} over {} genes requests zero edges",
                self.edge_density, m
            )));
        }
        if !(0.0..1.0).contains(&self.knockdown) {
            return Err(DataError::Config(format!(
                "knockdown strength must be in [0, 1), got {}",
                self.knockdown
            )));
        }
        if !(0.0..=1.0).contains(&self.artifact_rate) {
            return Err(DataError::Config("artifact rate must be in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.control_fraction) || self.control_fraction <= 0.0 {
            return Err(DataError::Config(
                "control fraction must be in (0, 1]".into(),
            ));
        }
        if self.dispersion <= 0.0 {
            return Err(DataError::Config("dispersion must be positive".into()));
        }
        Ok(())
    }
}

fn make_catalog(cfg: &SynthConfig) -> GeneCatalog {
    let mut names = Vec::new();
    let mut roles = Vec::new();
    for i in 0..cfg.n_perturbed {
        names.push(format!("P{i:03}"));
        roles.push(GeneRole::Perturbed);
    }
    for i in 0..cfg.n_extended {
        names.push(format!("E{i:03}"));
        roles.push(GeneRole::Extended);
    }
    for i in 0..cfg.n_measured {
        names.push(format!("M{i:03}"));
        roles.push(GeneRole::Measured);
    }
    GeneCatalog::new(names, roles).expect("generated names are unique")
}

fn random_dag(cfg: &SynthConfig, rng: &mut ChaCha12Rng) -> Matrix {
    let m = cfg.n_perturbed + cfg.n_extended;
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(rng);
    let mut adjacency = Matrix::zeros(m, m);
    for earlier in 0..m {
        for later in earlier + 1..m {
            if rng.gen_bool(cfg.edge_density) {
                let magnitude = rng.gen_range(0.5..1.0);
                let sign = if rng.gen_bool(0.7) { 1.0 } else { -1.0 };
                adjacency.set(order[earlier], order[later], sign * magnitude);
            }
        }
    }
    adjacency
}

/// Total walk influence: sum over k >= 1 of (attenuation * W)^k. Finite
/// because the graph is acyclic; entries clamped to keep effects bounded.
fn walk_influence(adjacency: &Matrix, attenuation: f64) -> Matrix {
    let damped = adjacency.scale(attenuation);
    let mut acc = damped.clone();
    let mut power = damped.clone();
    loop {
        power = power.matmul(&damped).expect("square");
        if power.data().iter().all(|&v| v == 0.0) {
            break;
        }
        acc = acc.add(&power).expect("same shape");
    }
    acc.map(|v| v.clamp(-1.5, 1.5))
}

/// Draw a synthetic screen and its generating graph. Deterministic per seed.
pub fn synthesize_dataset(cfg: &SynthConfig) -> DataResult<(PerturbDataset, GroundTruthGrn)> {
    cfg.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let catalog = make_catalog(cfg);
    let n_genes = catalog.n_genes();
    let m = catalog.n_modeled();

    let adjacency = random_dag(cfg, &mut rng);
    let influence = walk_influence(&adjacency, cfg.attenuation);

    let base_mean: Vec<f64> = (0..n_genes).map(|_| rng.gen_range(20.0..120.0)).collect();
    let artifact_factor: Vec<f64> = (0..n_genes)
        .map(|_| (rng.gen_range(-0.25..0.25_f64)).exp())
        .collect();

    // treatment layout: controls plus a balanced round-robin over perturbed
    // genes, then shuffled so splits see every condition
    let n_controls = ((cfg.n_rows as f64 * cfg.control_fraction).round() as usize)
        .clamp(1, cfg.n_rows - cfg.n_perturbed);
    let mut treatments: Vec<Option<usize>> = Vec::with_capacity(cfg.n_rows);
    treatments.extend(std::iter::repeat(None).take(n_controls));
    for i in 0..cfg.n_rows - n_controls {
        treatments.push(Some(i % cfg.n_perturbed));
    }
    treatments.shuffle(&mut rng);

    let knock_log = (1.0 - cfg.knockdown).ln();
    let mut x = Matrix::zeros(cfg.n_rows, n_genes);
    let mut p = Matrix::zeros(cfg.n_rows, m);
    let mut qc = vec![0u8; cfg.n_rows];

    for row in 0..cfg.n_rows {
        let cell_factor = (rng.gen_range(-0.2..0.2_f64)).exp();
        let artifact = rng.gen_bool(cfg.artifact_rate);
        qc[row] = artifact as u8;

        let mut log_scale = vec![0.0f64; n_genes];
        if let Some(t) = treatments[row] {
            p.set(row, t, 1.0);
            for j in 0..m {
                let exponent = if j == t { 1.0 } else { 0.0 } + influence.get(t, j);
                if exponent != 0.0 {
                    log_scale[catalog.modeled_to_gene(j)] = knock_log * exponent;
                }
            }
        }

        // resample all-zero rows; extremely rare at these count levels
        for _attempt in 0..100 {
            let mut total = 0.0;
            for gene in 0..n_genes {
                let mut lambda = base_mean[gene] * cell_factor * log_scale[gene].exp();
                if artifact {
                    lambda *= artifact_factor[gene];
                }
                let shape = cfg.dispersion;
                let scale = lambda / cfg.dispersion;
                let rate = Gamma::new(shape, scale)
                    .map_err(|e| DataError::Config(format!("gamma draw: {e}")))?
                    .sample(&mut rng);
                let count = if rate > 1e-12 {
                    Poisson::new(rate)
                        .map_err(|e| DataError::Config(format!("poisson draw: {e}")))?
                        .sample(&mut rng)
                } else {
                    0.0
                };
                x.set(row, gene, count.round());
                total += count;
            }
            if total > 0.0 {
                break;
            }
        }
    }

    let dataset = PerturbDataset::new(x, p, qc, catalog)?;
    let truth = GroundTruthGrn::new(adjacency)?;
    Ok((dataset, truth))
}
