//! Loss terms and their combination: the evidence lower bound, the
//! artifact-disentanglement KL, the reference-guided edge losses with
//! multi-hop accumulation, and the sparsity penalty.
//!
//! Each term exists twice: composed on the tape (for training gradients)
//! and as a plain evaluation (the spec-level operations); unit tests pin
//! the two together.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{DgeReference, PerturbDataset};
use crate::diffcore::{
    matrix_power_sum, power_sum_on_tape, DiffError, DiffResult, Matrix, Tape, Var,
};
use crate::model::{standard_normal_matrix, CausalParams, ModelConfig, ModelState};

/// Which edge-loss components participate in the total.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    Full,
    SpOnly,
    DgeOnly,
    DgeKOnly,
}

impl Ablation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::SpOnly => "sp_only",
            Ablation::DgeOnly => "dge_only",
            Ablation::DgeKOnly => "dge_k_only",
        }
    }

    pub fn parse(s: &str) -> Option<Ablation> {
        match s {
            "full" => Some(Ablation::Full),
            "sp_only" => Some(Ablation::SpOnly),
            "dge_only" => Some(Ablation::DgeOnly),
            "dge_k_only" => Some(Ablation::DgeKOnly),
            _ => None,
        }
    }

    pub fn all() -> [Ablation; 4] {
        [
            Ablation::SpOnly,
            Ablation::DgeOnly,
            Ablation::DgeKOnly,
            Ablation::Full,
        ]
    }
}

/// Settings that shape the total loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the artifact-disentanglement KL.
    pub alpha: f64,
    /// Weight of the combined edge loss.
    pub beta: f64,
    /// Extra weight on the sparsity component inside the edge loss; the
    /// normalized sparsity term is far weaker relative to the reference
    /// term than an unnormalized sum would be, and this restores the
    /// balance that actually prunes edges.
    pub sp_weight: f64,
    /// Weight on the ELBO's KL terms (1.0 recovers the plain bound).
    pub kl_weight: f64,
    /// Hops accumulated in the edge-probability powers.
    pub k_hops: usize,
    /// Prior edge probability for the mask KL.
    pub mask_prior: f64,
    /// Concrete-relaxation temperature for this step.
    pub temperature: f64,
    pub ablation: Ablation,
}

/// One minibatch, rows already gathered, with everything the losses read.
#[derive(Debug, Clone)]
pub struct Batch {
    /// Raw counts, B x G.
    pub x: Matrix,
    /// log1p counts, B x G.
    pub logx: Matrix,
    /// One-hot treatments, B x m.
    pub p: Matrix,
    /// QC flags as a column, B x 1.
    pub qc: Matrix,
    pub library: Vec<f64>,
    /// Reference differential-expression rows, B x m.
    pub delta: Matrix,
    /// Rows participating in the edge loss.
    pub included: Vec<bool>,
    /// Batch-row indices with a clean counterfactual partner.
    pub ade_rows: Vec<usize>,
    /// log1p counts of the partners, |ade_rows| x G.
    pub ade_logx_ref: Matrix,
    /// Training-set size, for amortizing the global KL terms.
    pub n_total: usize,
}

impl Batch {
    /// Gather `rows` of a dataset together with their reference profiles and
    /// counterfactual partners (`partners` indexes the full dataset).
    pub fn gather(
        dataset: &PerturbDataset,
        reference: &DgeReference,
        partners: &[Option<usize>],
        rows: &[usize],
    ) -> Batch {
        let x = dataset.x().select_rows(rows);
        let logx = x.map(f64::ln_1p);
        let p = dataset.p().select_rows(rows);
        let qc = Matrix::from_fn(rows.len(), 1, |i, _| dataset.qc()[rows[i]] as f64);
        let library = rows.iter().map(|&r| dataset.library_size()[r]).collect();
        let delta = reference.values.select_rows(rows);
        let included = rows.iter().map(|&r| !reference.excluded[r]).collect();
        let mut ade_rows = Vec::new();
        let mut partner_rows = Vec::new();
        for (bi, &r) in rows.iter().enumerate() {
            if let Some(partner) = partners.get(r).copied().flatten() {
                ade_rows.push(bi);
                partner_rows.push(partner);
            }
        }
        let ade_logx_ref = dataset.x().select_rows(&partner_rows).map(f64::ln_1p);
        Batch {
            x,
            logx,
            p,
            qc,
            library,
            delta,
            included,
            ade_rows,
            ade_logx_ref,
            n_total: dataset.n_rows(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

/// Fixed noise for one forward pass; the losses are deterministic given a
/// batch, parameters, and one of these.
#[derive(Debug, Clone)]
pub struct NoiseDraws {
    /// Logistic noise for the concrete mask relaxation, m x m.
    pub mask: Matrix,
    /// Standard normal for the effect rows, m x m.
    pub effects: Matrix,
    /// Standard normal for the artifact embedding, 1 x d.
    pub art: Matrix,
    /// Standard normal for the basal draw, B x d.
    pub basal: Matrix,
}

impl NoiseDraws {
    pub fn draw(n_modeled: usize, latent_dim: usize, batch_rows: usize, seed: u64) -> NoiseDraws {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mask = Matrix::from_fn(n_modeled, n_modeled, |_, _| {
            use rand::Rng;
            let u: f64 = rng.gen_range(1e-12..1.0 - 1e-12);
            u.ln() - (1.0 - u).ln()
        });
        let effects = standard_normal_matrix(n_modeled, n_modeled, &mut rng);
        let art = standard_normal_matrix(1, latent_dim, &mut rng);
        let basal = standard_normal_matrix(batch_rows, latent_dim, &mut rng);
        NoiseDraws {
            mask,
            effects,
            art,
            basal,
        }
    }
}

/// Values of every term for one batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub j_rec: f64,
    pub j_ade: f64,
    pub j_dge_k: f64,
    pub j_sp: f64,
    pub j_gpo: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub k_hops: usize,
}

/// Combine already-computed terms into a breakdown; the total is the
/// minimized objective `-j_rec + alpha * j_ade + beta * j_gpo` with
/// `j_gpo = j_dge_k + j_sp`.
pub fn combine_losses(
    j_rec: f64,
    j_ade: f64,
    j_dge_k: f64,
    j_sp: f64,
    alpha: f64,
    beta: f64,
    k_hops: usize,
) -> LossBreakdown {
    let j_gpo = j_dge_k + j_sp;
    let total = (-j_rec + alpha * j_ade) + beta * j_gpo;
    LossBreakdown {
        j_rec,
        j_ade,
        j_dge_k,
        j_sp,
        j_gpo,
        total,
        alpha,
        beta,
        k_hops,
    }
}

/// Tape handles for every term of one batch's loss.
pub struct LossVars {
    pub j_rec: Var,
    pub j_ade: Var,
    pub j_dge_k: Var,
    pub j_sp: Var,
    pub j_gpo: Var,
    pub total: Var,
    /// True when every batch row was excluded from the edge loss.
    pub dge_all_excluded: bool,
}

fn affine_on_tape(tape: &mut Tape, x: Var, w: Var, b: Var) -> DiffResult<Var> {
    let xw = tape.matmul(x, w)?;
    let rows = tape.value(xw).rows();
    let bb = tape.broadcast_row(b, rows)?;
    tape.add(xw, bb)
}

fn encoder_on_tape(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    n_layers: usize,
    input: Var,
) -> DiffResult<(Var, Var)> {
    let mut h = input;
    for i in 0..n_layers {
        let w = vars[&format!("encoder.layer{i}.w")];
        let b = vars[&format!("encoder.layer{i}.b")];
        h = affine_on_tape(tape, h, w, b)?;
        h = tape.tanh(h);
    }
    let mean = affine_on_tape(tape, h, vars["encoder.mean.w"], vars["encoder.mean.b"])?;
    let raw = affine_on_tape(tape, h, vars["encoder.scale.w"], vars["encoder.scale.b"])?;
    let scale = tape.softplus(raw);
    Ok((mean, scale))
}

fn decoder_on_tape(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    n_layers: usize,
    input: Var,
) -> DiffResult<Var> {
    let mut h = input;
    for i in 0..n_layers {
        let w = vars[&format!("decoder.layer{i}.w")];
        let b = vars[&format!("decoder.layer{i}.b")];
        h = affine_on_tape(tape, h, w, b)?;
        if i + 1 < n_layers {
            h = tape.tanh(h);
        }
    }
    Ok(tape.softmax_rows(h))
}

/// KL(N(mean, scale) || N(0, 1)) summed over entries:
/// 0.5 * (scale^2 + mean^2 - 1) - ln(scale).
fn gaussian_kl_standard(tape: &mut Tape, mean: Var, scale: Var) -> DiffResult<Var> {
    let s2 = tape.hadamard(scale, scale)?;
    let m2 = tape.hadamard(mean, mean)?;
    let inner = tape.add(s2, m2)?;
    let inner = tape.add_scalar(inner, -1.0);
    let half = tape.mul_scalar(inner, 0.5);
    let ln_s = tape.ln(scale)?;
    let term = tape.sub(half, ln_s)?;
    Ok(tape.sum(term))
}

/// KL between diagonal Gaussians, summed over entries:
/// ln(s2/s1) + (s1^2 + (m1-m2)^2) / (2 s2^2) - 1/2.
fn gaussian_kl_pair(
    tape: &mut Tape,
    mean_a: Var,
    scale_a: Var,
    mean_b: Var,
    scale_b: Var,
) -> DiffResult<Var> {
    let ln_b = tape.ln(scale_b)?;
    let ln_a = tape.ln(scale_a)?;
    let log_ratio = tape.sub(ln_b, ln_a)?;
    let s1_sq = tape.hadamard(scale_a, scale_a)?;
    let dmean = tape.sub(mean_a, mean_b)?;
    let dmean_sq = tape.hadamard(dmean, dmean)?;
    let num = tape.add(s1_sq, dmean_sq)?;
    let s2_sq = tape.hadamard(scale_b, scale_b)?;
    let denom = tape.mul_scalar(s2_sq, 2.0);
    let frac = tape.div_elem(num, denom)?;
    let sum = tape.add(log_ratio, frac)?;
    let sum = tape.add_scalar(sum, -0.5);
    Ok(tape.sum(sum))
}

/// KL(Bernoulli(sigmoid(logits)) || Bernoulli(prior)) summed over entries.
fn bernoulli_kl(tape: &mut Tape, logits: Var, prior: f64) -> DiffResult<Var> {
    let q = tape.sigmoid(logits);
    let ln_q = tape.ln(q)?;
    let one_minus = tape.neg(q);
    let one_minus = tape.add_scalar(one_minus, 1.0);
    let ln_1mq = tape.ln(one_minus)?;
    let t1 = tape.hadamard(q, ln_q)?;
    let t2 = tape.hadamard(one_minus, ln_1mq)?;
    let entropy_part = tape.add(t1, t2)?;
    // cross terms against the constant prior
    let cross1 = tape.mul_scalar(q, prior.ln());
    let cross2 = tape.mul_scalar(one_minus, (1.0 - prior).ln());
    let cross = tape.add(cross1, cross2)?;
    let kl = tape.sub(entropy_part, cross)?;
    Ok(tape.sum(kl))
}

/// Negative-binomial log-likelihood of the batch counts, summed over all
/// entries. `x` and its lgamma(x+1) sum are constants of the batch.
fn nb_ll_on_tape(
    tape: &mut Tape,
    x_const: Var,
    rate: Var,
    theta_row: Var,
) -> DiffResult<Var> {
    use statrs::function::gamma::ln_gamma;
    let rows = tape.value(rate).rows();
    let theta = tape.broadcast_row(theta_row, rows)?;
    let x_plus_theta = tape.add(x_const, theta)?;
    let lg_xt = tape.ln_gamma(x_plus_theta)?;
    let lg_t = tape.ln_gamma(theta)?;
    let t1 = tape.sub(lg_xt, lg_t)?;
    let ln_theta = tape.ln(theta)?;
    let denom = tape.add(theta, rate)?;
    let ln_denom = tape.ln(denom)?;
    let d1 = tape.sub(ln_theta, ln_denom)?;
    let t2 = tape.hadamard(theta, d1)?;
    let ln_rate = tape.ln(rate)?;
    let d2 = tape.sub(ln_rate, ln_denom)?;
    let t3 = tape.hadamard(x_const, d2)?;
    let s = tape.add(t1, t2)?;
    let s = tape.add(s, t3)?;
    let total = tape.sum(s);
    let lg_x1: f64 = tape
        .value(x_const)
        .data()
        .iter()
        .map(|&k| ln_gamma(k + 1.0))
        .sum();
    let c = tape.scalar(-lg_x1);
    tape.add(total, c)
}

/// Compose the full training loss for one batch on the tape.
///
/// Parameter leaves are looked up by the names `ModelState::named_params`
/// uses. Returns handles to every component; values and gradients come from
/// the tape.
pub fn build_total_loss(
    tape: &mut Tape,
    vars: &BTreeMap<String, Var>,
    mcfg: &ModelConfig,
    batch: &Batch,
    noise: &NoiseDraws,
    cfg: &LossConfig,
) -> DiffResult<LossVars> {
    if cfg.temperature <= 0.0 {
        return Err(DiffError::InvalidArgument(format!(
            "temperature must be positive, got {}",
            cfg.temperature
        )));
    }
    if !(0.0 < cfg.mask_prior && cfg.mask_prior < 1.0) {
        return Err(DiffError::InvalidArgument(format!(
            "mask prior must be in (0, 1), got {}",
            cfg.mask_prior
        )));
    }
    let b_rows = batch.len();
    let m = mcfg.n_modeled;
    let logits = vars["edge_logits"];

    // --- relaxed mask -------------------------------------------------
    let noise_const = tape.constant(noise.mask.clone());
    let shifted = tape.add(logits, noise_const)?;
    let scaled = tape.mul_scalar(shifted, 1.0 / cfg.temperature);
    let mask = tape.sigmoid(scaled);

    // --- effects ------------------------------------------------------
    let eff_h = affine_on_tape(tape, mask, vars["effect.w_hidden"], vars["effect.b_hidden"])?;
    let eff_h = tape.tanh(eff_h);
    let eff_mean = affine_on_tape(tape, eff_h, vars["effect.w_mean"], vars["effect.b_mean"])?;
    let eff_skip = tape.matmul(mask, vars["effect.w_skip"])?;
    let eff_mean = tape.add(eff_mean, eff_skip)?;
    let eff_raw = affine_on_tape(tape, eff_h, vars["effect.w_scale"], vars["effect.b_scale"])?;
    let eff_scale = tape.softplus(eff_raw);
    let eff_eps = tape.constant(noise.effects.clone());
    let eff_noise = tape.hadamard(eff_scale, eff_eps)?;
    let effects = tape.add(eff_mean, eff_noise)?;

    // --- perturbation latent -------------------------------------------
    let masked_effects = tape.hadamard(effects, mask)?;
    let p_const = tape.constant(batch.p.clone());
    let z_pert = tape.matmul(p_const, masked_effects)?;

    // --- artifact latent ------------------------------------------------
    let art_scale = tape.exp(vars["artifact.log_scale"]);
    let art_eps = tape.constant(noise.art.clone());
    let art_noise = tape.hadamard(art_scale, art_eps)?;
    let art_embed = tape.add(vars["artifact.mean"], art_noise)?;
    let qc_const = tape.constant(batch.qc.clone());
    let z_art = tape.matmul(qc_const, art_embed)?;

    // --- basal posterior and draw ---------------------------------------
    let logx_const = tape.constant(batch.logx.clone());
    let enc_in = tape.concat_cols(&[logx_const, z_pert, z_art])?;
    let (enc_mean, enc_scale) = encoder_on_tape(tape, vars, mcfg.enc_layers, enc_in)?;
    let basal_eps = tape.constant(noise.basal.clone());
    let basal_noise = tape.hadamard(enc_scale, basal_eps)?;
    let z_basal = tape.add(enc_mean, basal_noise)?;

    // --- decode and count likelihood -------------------------------------
    let dec_in = tape.concat_cols(&[z_basal, z_pert, z_art])?;
    let fractions = decoder_on_tape(tape, vars, mcfg.dec_layers.max(1), dec_in)?;
    let lib_const = tape.constant(Matrix::from_fn(b_rows, 1, |i, _| batch.library[i]));
    let lib_bc = tape.broadcast_col(lib_const, mcfg.n_genes)?;
    let rate = tape.hadamard(fractions, lib_bc)?;
    let theta_row = tape.exp(vars["theta_log"]);
    let x_const = tape.constant(batch.x.clone());
    let nb_ll = nb_ll_on_tape(tape, x_const, rate, theta_row)?;

    // --- per-row prior/posterior terms: log p(z) - log q(z) --------------
    // with z = mean + scale * eps this is
    // -0.5 ||z||^2 + sum(ln scale) + 0.5 ||eps||^2 (2-pi terms cancel)
    let z_sq = tape.hadamard(z_basal, z_basal)?;
    let z_sq_sum = tape.sum(z_sq);
    let neg_half_z = tape.mul_scalar(z_sq_sum, -0.5);
    let ln_scale = tape.ln(enc_scale)?;
    let ln_scale_sum = tape.sum(ln_scale);
    let eps_term = tape.scalar(0.5 * noise.basal.sq_norm());
    let local = tape.add(neg_half_z, ln_scale_sum)?;
    let local = tape.add(local, eps_term)?;

    // --- global KL terms, amortized over the dataset ----------------------
    let kl_mask = bernoulli_kl(tape, logits, cfg.mask_prior)?;
    let kl_eff = gaussian_kl_standard(tape, eff_mean, eff_scale)?;
    let kl_art = gaussian_kl_standard(tape, vars["artifact.mean"], art_scale)?;
    let kl_g = tape.add(kl_mask, kl_eff)?;
    let kl_g = tape.add(kl_g, kl_art)?;

    // j_rec: per-row mean of likelihood plus weighted KL terms
    let inv_b = 1.0 / b_rows as f64;
    let ll_mean = tape.mul_scalar(nb_ll, inv_b);
    let local_mean = tape.mul_scalar(local, inv_b * cfg.kl_weight);
    let kl_scaled = tape.mul_scalar(kl_g, -cfg.kl_weight / batch.n_total as f64);
    let j_rec = tape.add(ll_mean, local_mean)?;
    let j_rec = tape.add(j_rec, kl_scaled)?;

    // --- artifact disentanglement ----------------------------------------
    let j_ade = if batch.ade_rows.is_empty() {
        tape.scalar(0.0)
    } else {
        // both posteriors share the subset's treatments and the flipped
        // artifact mask; only the expression input differs
        let k = batch.ade_rows.len();
        let p_sub = tape.constant(batch.p.select_rows(&batch.ade_rows));
        let z_pert_sub = tape.matmul(p_sub, masked_effects)?;
        let qc_flip = Matrix::from_fn(k, 1, |i, _| 1.0 - batch.qc.get(batch.ade_rows[i], 0));
        let qc_flip_const = tape.constant(qc_flip);
        let z_art_cf = tape.matmul(qc_flip_const, art_embed)?;
        let logx_sub = tape.constant(batch.logx.select_rows(&batch.ade_rows));
        let cf_in = tape.concat_cols(&[logx_sub, z_pert_sub, z_art_cf])?;
        let (cf_mean, cf_scale) = encoder_on_tape(tape, vars, mcfg.enc_layers, cf_in)?;
        let ref_logx = tape.constant(batch.ade_logx_ref.clone());
        let ref_in = tape.concat_cols(&[ref_logx, z_pert_sub, z_art_cf])?;
        let (ref_mean, ref_scale) = encoder_on_tape(tape, vars, mcfg.enc_layers, ref_in)?;
        let kl = gaussian_kl_pair(tape, cf_mean, cf_scale, ref_mean, ref_scale)?;
        tape.mul_scalar(kl, 1.0 / k as f64)
    };

    // --- edge losses -------------------------------------------------------
    let probs = tape.sigmoid(logits);
    let n_included = batch.included.iter().filter(|&&i| i).count();
    let dge_all_excluded = n_included == 0;
    let k_for_dge = match cfg.ablation {
        Ablation::DgeOnly => 1,
        _ => cfg.k_hops,
    };
    let j_dge_k = if dge_all_excluded {
        tape.scalar(0.0)
    } else {
        let t = power_sum_on_tape(tape, probs, k_for_dge, 1.0 / m as f64)?;
        let pt = tape.matmul(p_const, t)?;
        let delta_const = tape.constant(batch.delta.clone());
        let diff = tape.sub(pt, delta_const)?;
        let row_mask = tape.constant(Matrix::from_fn(b_rows, m, |i, _| {
            batch.included[i] as u8 as f64
        }));
        let masked = tape.hadamard(diff, row_mask)?;
        let l1 = tape.l1_norm(masked);
        tape.mul_scalar(l1, 1.0 / n_included as f64)
    };
    let l1_probs = tape.l1_norm(probs);
    let j_sp = tape.mul_scalar(l1_probs, cfg.sp_weight / (m * m) as f64);

    let zero = tape.scalar(0.0);
    let (dge_part, sp_part) = match cfg.ablation {
        Ablation::Full => (j_dge_k, j_sp),
        Ablation::SpOnly => (zero, j_sp),
        Ablation::DgeOnly | Ablation::DgeKOnly => (j_dge_k, zero),
    };
    let j_gpo = tape.add(dge_part, sp_part)?;

    // total = (-j_rec + alpha * j_ade) + beta * j_gpo
    let neg_rec = tape.neg(j_rec);
    let ade_w = tape.mul_scalar(j_ade, cfg.alpha);
    let partial = tape.add(neg_rec, ade_w)?;
    let gpo_w = tape.mul_scalar(j_gpo, cfg.beta);
    let total = tape.add(partial, gpo_w)?;

    Ok(LossVars {
        j_rec,
        j_ade,
        j_dge_k: dge_part,
        j_sp: sp_part,
        j_gpo,
        total,
        dge_all_excluded,
    })
}

/// Evaluate every loss component for a batch without gradients.
pub fn evaluate_losses(
    state: &ModelState,
    batch: &Batch,
    noise: &NoiseDraws,
    cfg: &LossConfig,
) -> DiffResult<LossBreakdown> {
    let mut tape = Tape::new();
    let mut vars = BTreeMap::new();
    for (name, value) in state.named_params() {
        vars.insert(name, tape.leaf(value.clone()));
    }
    let lv = build_total_loss(&mut tape, &vars, &state.config, batch, noise, cfg)?;
    Ok(combine_losses(
        tape.value(lv.j_rec).get(0, 0),
        tape.value(lv.j_ade).get(0, 0),
        tape.value(lv.j_dge_k).get(0, 0),
        tape.value(lv.j_sp).get(0, 0),
        cfg.alpha,
        cfg.beta,
        cfg.k_hops,
    ))
}

/// The evidence-lower-bound term alone (per-datum average, globals
/// amortized). Higher is better.
pub fn elbo(
    state: &ModelState,
    batch: &Batch,
    noise: &NoiseDraws,
    cfg: &LossConfig,
) -> DiffResult<f64> {
    Ok(evaluate_losses(state, batch, noise, cfg)?.j_rec)
}

/// KL divergence between diagonal Gaussian posteriors, averaged over rows.
/// Zero exactly when the two parameter sets coincide.
pub fn ade_loss(
    mean_cf: &Matrix,
    scale_cf: &Matrix,
    mean_ref: &Matrix,
    scale_ref: &Matrix,
) -> DiffResult<f64> {
    if mean_cf.shape() != mean_ref.shape() || scale_cf.shape() != scale_ref.shape() {
        return Err(DiffError::Shape {
            op: "ade_loss",
            lhs: mean_cf.shape(),
            rhs: mean_ref.shape(),
        });
    }
    if scale_cf.data().iter().any(|&s| s <= 0.0)
        || scale_ref.data().iter().any(|&s| s <= 0.0)
    {
        return Err(DiffError::Domain {
            op: "ade_loss",
            msg: "scales must be positive".into(),
        });
    }
    let mut total = 0.0;
    for i in 0..mean_cf.rows() {
        for j in 0..mean_cf.cols() {
            let (m1, s1) = (mean_cf.get(i, j), scale_cf.get(i, j));
            let (m2, s2) = (mean_ref.get(i, j), scale_ref.get(i, j));
            total += (s2 / s1).ln() + (s1 * s1 + (m1 - m2) * (m1 - m2)) / (2.0 * s2 * s2) - 0.5;
        }
    }
    Ok(total / mean_cf.rows() as f64)
}

/// Reference-guided edge loss on an already-accumulated matrix: the mean
/// over included rows of the L1 distance between the row the treatment
/// selects and the reference profile. Returns the number of included rows;
/// zero included rows yields a loss of zero, which callers should surface.
pub fn dge_loss(
    accumulated: &Matrix,
    p: &Matrix,
    delta: &Matrix,
    excluded: &[bool],
) -> DiffResult<(f64, usize)> {
    if p.cols() != accumulated.rows() || accumulated.rows() != accumulated.cols() {
        return Err(DiffError::Shape {
            op: "dge_loss",
            lhs: p.shape(),
            rhs: accumulated.shape(),
        });
    }
    if delta.rows() != p.rows() || delta.cols() != accumulated.cols() {
        return Err(DiffError::Shape {
            op: "dge_loss",
            lhs: delta.shape(),
            rhs: (p.rows(), accumulated.cols()),
        });
    }
    if excluded.len() != p.rows() {
        return Err(DiffError::InvalidArgument(
            "exclusion flags must cover every row".into(),
        ));
    }
    let pt = p.matmul(accumulated)?;
    let mut total = 0.0;
    let mut included = 0usize;
    for row in 0..p.rows() {
        if excluded[row] {
            continue;
        }
        included += 1;
        for (a, b) in pt.row(row).iter().zip(delta.row(row)) {
            total += (a - b).abs();
        }
    }
    if included == 0 {
        return Ok((0.0, 0));
    }
    Ok((total / included as f64, included))
}

/// All three edge-loss components from the logits.
pub fn gpo_loss(
    causal: &CausalParams,
    p: &Matrix,
    delta: &Matrix,
    k_hops: usize,
    excluded: &[bool],
) -> DiffResult<(f64, f64, f64)> {
    let m = causal.dim();
    let probs = causal.prob();
    let accumulated = matrix_power_sum(&probs, k_hops, 1.0 / m as f64)?;
    let (j_dge_k, _) = dge_loss(&accumulated, p, delta, excluded)?;
    let j_sp = probs.l1_norm() / (m * m) as f64;
    Ok((j_dge_k, j_sp, j_dge_k + j_sp))
}
