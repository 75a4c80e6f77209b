//! Stochastic variational training: seeded mini-batching, Adam with global
//! gradient-norm clipping, temperature annealing, best-validation
//! checkpointing, and the ablation variants.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::{
    build_ade_partners, build_reference_dge, DataError, DgeReference, GeneCatalog, GeneRole,
    PerturbDataset,
};
use crate::diffcore::{DiffError, Matrix, Tape};
use crate::model::{ModelConfig, ModelState};
use crate::objective::{
    build_total_loss, combine_losses, Ablation, Batch, LossBreakdown, LossConfig, NoiseDraws,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at epoch {epoch}, step {step}: {msg}")]
    Diverged {
        epoch: usize,
        step: usize,
        msg: String,
        /// Last finite checkpoint and the history up to the abort.
        last: Box<(ModelState, TrainHistory)>,
    },
    #[error("invalid train config: {0}")]
    Config(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type TrainResult<T> = Result<T, TrainError>;

fn default_batch_size() -> usize {
    512
}
fn default_learning_rate() -> f64 {
    3e-4
}
fn default_clip_norm() -> f64 {
    100.0
}
fn default_latent_dim() -> usize {
    16
}
fn default_enc_hidden() -> usize {
    64
}
fn default_enc_layers() -> usize {
    2
}
fn default_dec_layers() -> usize {
    1
}
fn default_effect_hidden() -> usize {
    32
}
fn default_k_hops() -> usize {
    5
}
fn default_alpha() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    1.0
}
fn default_sp_weight() -> f64 {
    10.0
}
fn default_kl_weight() -> f64 {
    0.1
}
fn default_mask_prior() -> f64 {
    0.3
}
fn default_temp_start() -> f64 {
    1.0
}
fn default_temp_end() -> f64 {
    0.1
}
fn default_ablation() -> Ablation {
    Ablation::Full
}
fn default_log_every() -> usize {
    50
}

/// Everything the training loop reads. `epochs` is the one field a config
/// file must state explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    #[serde(default = "default_latent_dim")]
    pub latent_dim: usize,
    #[serde(default = "default_enc_hidden")]
    pub enc_hidden: usize,
    #[serde(default = "default_enc_layers")]
    pub enc_layers: usize,
    #[serde(default = "default_dec_layers")]
    pub dec_layers: usize,
    #[serde(default = "default_effect_hidden")]
    pub effect_hidden: usize,
    #[serde(default = "default_k_hops")]
    pub k_hops: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta_gpo: f64,
    #[serde(default = "default_sp_weight")]
    pub sp_weight: f64,
    #[serde(default = "default_kl_weight")]
    pub kl_weight: f64,
    #[serde(default = "default_mask_prior")]
    pub mask_prior: f64,
    #[serde(default = "default_temp_start")]
    pub temperature_start: f64,
    #[serde(default = "default_temp_end")]
    pub temperature_end: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ablation")]
    pub ablation: Ablation,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            clip_norm: default_clip_norm(),
            latent_dim: default_latent_dim(),
            enc_hidden: default_enc_hidden(),
            enc_layers: default_enc_layers(),
            dec_layers: default_dec_layers(),
            effect_hidden: default_effect_hidden(),
            k_hops: default_k_hops(),
            alpha: default_alpha(),
            beta_gpo: default_beta(),
            sp_weight: default_sp_weight(),
            kl_weight: default_kl_weight(),
            mask_prior: default_mask_prior(),
            temperature_start: default_temp_start(),
            temperature_end: default_temp_end(),
            seed: 0,
            ablation: default_ablation(),
            log_every: default_log_every(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> TrainResult<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("learning_rate", self.learning_rate),
            ("clip_norm", self.clip_norm),
            ("latent_dim", self.latent_dim as f64),
            ("enc_hidden", self.enc_hidden as f64),
            ("effect_hidden", self.effect_hidden as f64),
            ("k_hops", self.k_hops as f64),
            ("temperature_start", self.temperature_start),
            ("temperature_end", self.temperature_end),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(TrainError::Config(format!("{name} must be positive")));
            }
        }
        if !(0.0 < self.mask_prior && self.mask_prior < 1.0) {
            return Err(TrainError::Config("mask_prior must be in (0, 1)".into()));
        }
        if self.alpha < 0.0 || self.beta_gpo < 0.0 || self.kl_weight < 0.0 || self.sp_weight < 0.0 {
            return Err(TrainError::Config(
                "loss weights must be non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Hash of the canonical JSON form; checkpoints carry it.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn model_config(&self, catalog: &GeneCatalog) -> ModelConfig {
        ModelConfig {
            n_genes: catalog.n_genes(),
            n_modeled: catalog.n_modeled(),
            latent_dim: self.latent_dim,
            enc_hidden: self.enc_hidden,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            effect_hidden: self.effect_hidden,
            mask_prior: self.mask_prior,
        }
    }

    fn loss_config(&self, temperature: f64) -> LossConfig {
        LossConfig {
            alpha: self.alpha,
            beta: self.beta_gpo,
            sp_weight: self.sp_weight,
            kl_weight: self.kl_weight,
            k_hops: self.k_hops,
            mask_prior: self.mask_prior,
            temperature,
            ablation: self.ablation,
        }
    }

    /// Linear anneal from start to end over the first half of training,
    /// held at the end value afterwards.
    pub fn temperature_at(&self, epoch: usize) -> f64 {
        let half = (self.epochs / 2).max(1);
        if epoch >= half {
            self.temperature_end
        } else {
            let f = epoch as f64 / half as f64;
            self.temperature_start + (self.temperature_end - self.temperature_start) * f
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub val_elbo: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(flatten)]
    pub losses: LossBreakdown,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// Loss breakdown every `log_every` optimizer steps.
    pub step_log: Vec<StepRecord>,
    pub best_epoch: usize,
}

/// Scale all gradients by max_norm / g when the global L2 norm g exceeds
/// max_norm; otherwise leave them untouched. Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut [(String, Matrix)], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .map(|(_, g)| g.sq_norm())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let factor = max_norm / norm;
        for (_, g) in grads.iter_mut() {
            *g = g.scale(factor);
        }
    }
    norm
}

/// Adam with bias correction; one moment pair per named parameter.
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: BTreeMap<String, Matrix>,
    v: BTreeMap<String, Matrix>,
}

impl Adam {
    fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    fn step(&mut self, state: &mut ModelState, grads: &[(String, Matrix)]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (name, grad) in grads {
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(grad.rows(), grad.cols()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(grad.rows(), grad.cols()));
            for ((mi, vi), &gi) in m
                .data_mut()
                .iter_mut()
                .zip(v.data_mut().iter_mut())
                .zip(grad.data())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let current = state.get_param(name).expect("known param").clone();
            let mut updated = current;
            for ((ui, &mi), &vi) in updated
                .data_mut()
                .iter_mut()
                .zip(m.data())
                .zip(v.data())
            {
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                *ui -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            state.set_param(name, updated).expect("shape preserved");
        }
    }
}

fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    // splitmix64 chain over the parts
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(p);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return 0.0;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Average ELBO of a dataset under fixed evaluation noise; rows are scored
/// in batches and weighted by batch size.
fn dataset_elbo(
    state: &ModelState,
    dataset: &PerturbDataset,
    reference: &DgeReference,
    partners: &[Option<usize>],
    cfg: &TrainConfig,
    temperature: f64,
    seed: u64,
) -> TrainResult<f64> {
    if dataset.n_rows() == 0 {
        return Ok(f64::NAN);
    }
    let rows: Vec<usize> = (0..dataset.n_rows()).collect();
    let mut total = 0.0;
    for (i, chunk) in rows.chunks(cfg.batch_size).enumerate() {
        let batch = Batch::gather(dataset, reference, partners, chunk);
        let noise = NoiseDraws::draw(
            state.config.n_modeled,
            state.config.latent_dim,
            chunk.len(),
            derive_seed(seed, &[i as u64]),
        );
        let breakdown =
            crate::objective::evaluate_losses(state, &batch, &noise, &cfg.loss_config(temperature))?;
        total += breakdown.j_rec * chunk.len() as f64;
    }
    Ok(total / dataset.n_rows() as f64)
}

/// Run the training loop. Returns the best-validation checkpoint (the final
/// state when there is no validation split) and the history. Deterministic
/// per config seed.
pub fn train(
    train_set: &PerturbDataset,
    val_set: &PerturbDataset,
    cfg: &TrainConfig,
) -> TrainResult<(ModelState, TrainHistory)> {
    cfg.validate()?;
    if train_set.n_rows() == 0 {
        return Err(TrainError::Config("training split is empty".into()));
    }

    let catalog = train_set.catalog();
    let mut state = ModelState::init(cfg.model_config(catalog), cfg.seed);
    state.gen_library_size = median(train_set.library_size());

    // references come from the training split only
    let reference = match build_reference_dge(train_set) {
        Ok((_, reference)) => reference,
        Err(DataError::Pairing(_)) => DgeReference {
            values: Matrix::zeros(train_set.n_rows(), catalog.n_modeled()),
            excluded: vec![true; train_set.n_rows()],
        },
        Err(e) => return Err(e.into()),
    };
    let partners = build_ade_partners(train_set)?;
    let val_reference = DgeReference {
        values: Matrix::zeros(val_set.n_rows(), catalog.n_modeled()),
        excluded: vec![true; val_set.n_rows()],
    };
    let val_partners = build_ade_partners(val_set)?;

    let mut history = TrainHistory::default();
    let mut adam = Adam::new(cfg.learning_rate);
    let mut best_state = state.clone();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut global_step = 0usize;

    let n = train_set.n_rows();
    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let temperature = cfg.temperature_at(epoch);
        let loss_cfg = cfg.loss_config(temperature);

        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng =
            ChaCha12Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64, 0x50]));
        order.shuffle(&mut shuffle_rng);

        let mut sums = [0.0f64; 4]; // j_rec, j_ade, j_dge_k, j_sp
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch::gather(train_set, &reference, &partners, chunk);
            let noise = NoiseDraws::draw(
                state.config.n_modeled,
                state.config.latent_dim,
                chunk.len(),
                derive_seed(cfg.seed, &[epoch as u64, step as u64, 0x1]),
            );

            let mut tape = Tape::new();
            let mut vars = BTreeMap::new();
            for (name, value) in state.named_params() {
                vars.insert(name, tape.leaf(value.clone()));
            }
            let lv = build_total_loss(&mut tape, &vars, &state.config, &batch, &noise, &loss_cfg)?;
            let breakdown = combine_losses(
                tape.value(lv.j_rec).get(0, 0),
                tape.value(lv.j_ade).get(0, 0),
                tape.value(lv.j_dge_k).get(0, 0),
                tape.value(lv.j_sp).get(0, 0),
                loss_cfg.alpha,
                loss_cfg.beta,
                loss_cfg.k_hops,
            );
            if !breakdown.total.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    step,
                    msg: format!("total loss became {}", breakdown.total),
                    last: Box::new((best_state, history)),
                });
            }

            let mut grad_map = tape.backward(lv.total)?;
            let mut grads: Vec<(String, Matrix)> = Vec::new();
            for (name, value) in state.named_params() {
                let g = grad_map
                    .take(vars[&name])
                    .unwrap_or_else(|| Matrix::zeros(value.rows(), value.cols()));
                if !g.is_finite() {
                    return Err(TrainError::Diverged {
                        epoch,
                        step,
                        msg: format!("gradient of {name} became non-finite"),
                        last: Box::new((best_state, history)),
                    });
                }
                grads.push((name, g));
            }
            clip_gradients(&mut grads, cfg.clip_norm);
            adam.step(&mut state, &grads);

            sums[0] += breakdown.j_rec;
            sums[1] += breakdown.j_ade;
            sums[2] += breakdown.j_dge_k;
            sums[3] += breakdown.j_sp;
            steps += 1;
            if cfg.log_every > 0 && global_step % cfg.log_every == 0 {
                history.step_log.push(StepRecord {
                    step: global_step,
                    losses: breakdown,
                });
            }
            global_step += 1;
        }

        let inv = 1.0 / steps.max(1) as f64;
        let epoch_losses = combine_losses(
            sums[0] * inv,
            sums[1] * inv,
            sums[2] * inv,
            sums[3] * inv,
            cfg.alpha,
            cfg.beta_gpo,
            cfg.k_hops,
        );

        let val_elbo = if val_set.n_rows() > 0 {
            dataset_elbo(
                &state,
                val_set,
                &val_reference,
                &val_partners,
                cfg,
                temperature,
                derive_seed(cfg.seed, &[epoch as u64, 0x7a11]),
            )?
        } else {
            epoch_losses.j_rec
        };
        let score = val_elbo;
        if score > best_score {
            best_score = score;
            best_state = state.clone();
            best_epoch = epoch;
        }

        history.epochs.push(EpochRecord {
            epoch,
            losses: epoch_losses,
            val_elbo,
            wall_ms: t0.elapsed().as_millis() as u64,
        });
    }

    history.best_epoch = best_epoch;
    if cfg.epochs == 0 {
        best_state = state;
    }
    Ok((best_state, history))
}

// -- checkpointing ----------------------------------------------------------

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    config_hash: String,
    model_config: ModelConfig,
    gen_library_size: f64,
    gene_names: Vec<String>,
    gene_roles: Vec<String>,
    params: BTreeMap<String, Matrix>,
}

/// Write the state as JSON. f64 values round-trip exactly.
pub fn save_checkpoint(
    path: &Path,
    state: &ModelState,
    catalog: &GeneCatalog,
    cfg: &TrainConfig,
) -> TrainResult<()> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        config_hash: cfg.hash(),
        model_config: state.config.clone(),
        gen_library_size: state.gen_library_size,
        gene_names: catalog.names().to_vec(),
        gene_roles: catalog.roles().iter().map(|r| r.as_str().into()).collect(),
        params: state
            .named_params()
            .into_iter()
            .map(|(n, v)| (n, v.clone()))
            .collect(),
    };
    let json = serde_json::to_string_pretty(&file)
        .map_err(|e| TrainError::Checkpoint(format!("serialize: {e}")))?;
    std::fs::write(path, json).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Load a checkpoint; when `expected` is given its config hash must match
/// the stored one.
pub fn load_checkpoint(
    path: &Path,
    expected: Option<&TrainConfig>,
) -> TrainResult<(ModelState, GeneCatalog, String)> {
    let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let file: CheckpointFile = serde_json::from_str(&text)
        .map_err(|e| TrainError::Checkpoint(format!("parse {}: {e}", path.display())))?;
    if file.version != CHECKPOINT_VERSION {
        return Err(TrainError::Checkpoint(format!(
            "version {} unsupported (expected {CHECKPOINT_VERSION})",
            file.version
        )));
    }
    if let Some(cfg) = expected {
        if cfg.hash() != file.config_hash {
            return Err(TrainError::Checkpoint(format!(
                "config hash mismatch: checkpoint {} vs config {}",
                file.config_hash,
                cfg.hash()
            )));
        }
    }
    let roles = file
        .gene_roles
        .iter()
        .map(|s| {
            GeneRole::parse(s)
                .ok_or_else(|| TrainError::Checkpoint(format!("unknown gene role {s:?}")))
        })
        .collect::<TrainResult<Vec<_>>>()?;
    let catalog = GeneCatalog::new(file.gene_names, roles)?;
    let mut state = ModelState::init(file.model_config, 0);
    state.gen_library_size = file.gen_library_size;
    for (name, value) in file.params {
        state
            .set_param(&name, value)
            .map_err(|e| TrainError::Checkpoint(format!("parameter {name}: {e}")))?;
    }
    Ok((state, catalog, file.config_hash))
}
