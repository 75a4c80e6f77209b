//! Model parameters and the generative pieces: edge-logit matrix, effect
//! network, artifact prior, basal encoder, Gamma-Poisson decoder.

mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{DiffError, DiffResult, Matrix};

pub use ops::{
    decode_nb_params, encode_artifact, encode_basal, encode_perturbation, mask_noise,
    nb_log_likelihood, nb_log_mass, sample_effects, sample_mask, standard_normal_matrix,
    MaskMode,
};

/// Shape and prior settings the parameters are built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Total measured genes.
    pub n_genes: usize,
    /// Modeled genes (perturbed plus extended); the edge matrix is square
    /// over these.
    pub n_modeled: usize,
    /// Basal/artifact latent dimension.
    pub latent_dim: usize,
    pub enc_hidden: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub effect_hidden: usize,
    /// Prior edge probability; logits start at its logit.
    pub mask_prior: f64,
}

/// Trainable edge logits; their sigmoid is the edge-probability matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalParams {
    pub logits: Matrix,
}

impl CausalParams {
    pub fn new(logits: Matrix) -> DiffResult<Self> {
        if logits.rows() != logits.cols() {
            return Err(DiffError::Shape {
                op: "causal params",
                lhs: logits.shape(),
                rhs: (logits.cols(), logits.rows()),
            });
        }
        Ok(CausalParams { logits })
    }

    pub fn dim(&self) -> usize {
        self.logits.rows()
    }

    /// Edge probabilities in (0, 1).
    pub fn prob(&self) -> Matrix {
        self.logits.map(|v| 1.0 / (1.0 + (-v).exp()))
    }
}

/// Shared row-wise map from a mask row to the mean and scale of the
/// corresponding effect row. The mean head carries a linear skip term so
/// per-position couplings (a masked gene shifts its own expression) are
/// representable and transfer to rows never selected during training.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectNet {
    pub w_hidden: Matrix,
    pub b_hidden: Matrix,
    pub w_mean: Matrix,
    pub b_mean: Matrix,
    pub w_skip: Matrix,
    pub w_scale: Matrix,
    pub b_scale: Matrix,
}

impl EffectNet {
    /// (mean, scale) rows for every mask row; scale is softplus of the raw
    /// head output, hence strictly positive.
    pub fn forward(&self, mask: &Matrix) -> DiffResult<(Matrix, Matrix)> {
        let h = affine(mask, &self.w_hidden, &self.b_hidden)?.map(f64::tanh);
        let mean = affine(&h, &self.w_mean, &self.b_mean)?.add(&mask.matmul(&self.w_skip)?)?;
        let scale = affine(&h, &self.w_scale, &self.b_scale)?.map(softplus);
        Ok((mean, scale))
    }
}

/// Global artifact embedding prior: mean and log-scale vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactPrior {
    pub mean: Matrix,
    pub log_scale: Matrix,
}

impl ArtifactPrior {
    pub fn scale(&self) -> Matrix {
        self.log_scale.map(f64::exp)
    }

    pub fn dim(&self) -> usize {
        self.mean.cols()
    }
}

/// Basal-state encoder: hidden tanh layers, then mean and softplus-scale
/// heads of the latent dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct BasalEncoderNet {
    pub layers: Vec<(Matrix, Matrix)>,
    pub head_mean: (Matrix, Matrix),
    pub head_scale: (Matrix, Matrix),
}

impl BasalEncoderNet {
    pub fn forward(&self, input: &Matrix) -> DiffResult<(Matrix, Matrix)> {
        let mut h = input.clone();
        for (w, b) in &self.layers {
            h = affine(&h, w, b)?.map(f64::tanh);
        }
        let mean = affine(&h, &self.head_mean.0, &self.head_mean.1)?;
        let scale = affine(&h, &self.head_scale.0, &self.head_scale.1)?.map(softplus);
        Ok((mean, scale))
    }
}

/// Decoder network: optional tanh hidden layers, final linear layer emitting
/// one logit per gene; row-wise softmax turns logits into rate fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderNet {
    pub layers: Vec<(Matrix, Matrix)>,
}

impl DecoderNet {
    /// Positive fractions, each row summing to one.
    pub fn forward(&self, input: &Matrix) -> DiffResult<Matrix> {
        let mut h = input.clone();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            h = affine(&h, w, b)?;
            if i + 1 < self.layers.len() {
                h = h.map(f64::tanh);
            }
        }
        Ok(softmax_rows(&h))
    }
}

/// All trainable parameters plus the settings they were built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub config: ModelConfig,
    pub causal: CausalParams,
    pub effect: EffectNet,
    pub artifact: ArtifactPrior,
    pub encoder: BasalEncoderNet,
    pub decoder: DecoderNet,
    /// Per-gene dispersion in log space; the decoder uses its exp.
    pub theta_log: Matrix,
    /// Library size used when generating from scratch; set from training
    /// data (median library size).
    pub gen_library_size: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        let row = m.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for (o, &x) in out.row_mut(i).iter_mut().zip(row) {
            let e = (x - max).exp();
            *o = e;
            denom += e;
        }
        for o in out.row_mut(i) {
            *o /= denom;
        }
    }
    out
}

/// x * w + b with the bias row broadcast over rows.
pub(crate) fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> DiffResult<Matrix> {
    let mut out = x.matmul(w)?;
    if b.rows() != 1 || b.cols() != out.cols() {
        return Err(DiffError::Shape {
            op: "affine bias",
            lhs: out.shape(),
            rhs: b.shape(),
        });
    }
    for i in 0..out.rows() {
        for (o, &bv) in out.row_mut(i).iter_mut().zip(b.row(0)) {
            *o += bv;
        }
    }
    Ok(out)
}

fn xavier(rng: &mut ChaCha12Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-bound..bound))
}

/// softplus(x) == 1 at this input; used to start scale heads at unit scale.
const UNIT_SCALE_BIAS: f64 = 0.541_324_854_612_918_1;

impl ModelState {
    /// Deterministic initialization. Edge probabilities start exactly at the
    /// mask prior; every variational scale starts at one.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let m = config.n_modeled;
        let d = config.latent_dim;
        let g = config.n_genes;

        let logit_prior = (config.mask_prior / (1.0 - config.mask_prior)).ln();
        let causal = CausalParams {
            logits: Matrix::filled(m, m, logit_prior),
        };

        let eh = config.effect_hidden;
        let effect = EffectNet {
            w_hidden: xavier(&mut rng, m, eh),
            b_hidden: Matrix::zeros(1, eh),
            w_mean: xavier(&mut rng, eh, m).scale(0.1),
            b_mean: Matrix::zeros(1, m),
            w_skip: Matrix::zeros(m, m),
            w_scale: Matrix::zeros(eh, m),
            b_scale: Matrix::filled(1, m, UNIT_SCALE_BIAS),
        };

        let artifact = ArtifactPrior {
            mean: Matrix::zeros(1, d),
            log_scale: Matrix::zeros(1, d),
        };

        let enc_in = g + m + d;
        let mut layers = Vec::new();
        let mut width = enc_in;
        for _ in 0..config.enc_layers {
            layers.push((
                xavier(&mut rng, width, config.enc_hidden),
                Matrix::zeros(1, config.enc_hidden),
            ));
            width = config.enc_hidden;
        }
        let encoder = BasalEncoderNet {
            layers,
            head_mean: (xavier(&mut rng, width, d).scale(0.1), Matrix::zeros(1, d)),
            head_scale: (Matrix::zeros(width, d), Matrix::filled(1, d, UNIT_SCALE_BIAS)),
        };

        let dec_in = d + m + d;
        let mut dec_layers = Vec::new();
        let mut dwidth = dec_in;
        for i in 0..config.dec_layers.max(1) {
            let last = i + 1 == config.dec_layers.max(1);
            let out = if last { g } else { config.enc_hidden };
            let w = if last {
                xavier(&mut rng, dwidth, out).scale(0.1)
            } else {
                xavier(&mut rng, dwidth, out)
            };
            dec_layers.push((w, Matrix::zeros(1, out)));
            dwidth = out;
        }
        let decoder = DecoderNet { layers: dec_layers };

        ModelState {
            config,
            causal,
            effect,
            artifact,
            encoder,
            decoder,
            theta_log: Matrix::zeros(1, g),
            gen_library_size: 0.0,
        }
    }

    /// Per-gene dispersion, strictly positive.
    pub fn theta(&self) -> Matrix {
        self.theta_log.map(f64::exp)
    }

    /// Stable (name, matrix) listing of every trainable parameter.
    pub fn named_params(&self) -> Vec<(String, &Matrix)> {
        let mut out: Vec<(String, &Matrix)> = vec![
            ("edge_logits".into(), &self.causal.logits),
            ("effect.w_hidden".into(), &self.effect.w_hidden),
            ("effect.b_hidden".into(), &self.effect.b_hidden),
            ("effect.w_mean".into(), &self.effect.w_mean),
            ("effect.b_mean".into(), &self.effect.b_mean),
            ("effect.w_skip".into(), &self.effect.w_skip),
            ("effect.w_scale".into(), &self.effect.w_scale),
            ("effect.b_scale".into(), &self.effect.b_scale),
            ("artifact.mean".into(), &self.artifact.mean),
            ("artifact.log_scale".into(), &self.artifact.log_scale),
        ];
        for (i, (w, b)) in self.encoder.layers.iter().enumerate() {
            out.push((format!("encoder.layer{i}.w"), w));
            out.push((format!("encoder.layer{i}.b"), b));
        }
        out.push(("encoder.mean.w".into(), &self.encoder.head_mean.0));
        out.push(("encoder.mean.b".into(), &self.encoder.head_mean.1));
        out.push(("encoder.scale.w".into(), &self.encoder.head_scale.0));
        out.push(("encoder.scale.b".into(), &self.encoder.head_scale.1));
        for (i, (w, b)) in self.decoder.layers.iter().enumerate() {
            out.push((format!("decoder.layer{i}.w"), w));
            out.push((format!("decoder.layer{i}.b"), b));
        }
        out.push(("theta_log".into(), &self.theta_log));
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        self.named_params().into_iter().map(|(n, _)| n).collect()
    }

    pub fn get_param(&self, name: &str) -> Option<&Matrix> {
        self.named_params()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
    }

    pub fn set_param(&mut self, name: &str, value: Matrix) -> DiffResult<()> {
        let slot = self.param_slot(name).ok_or_else(|| {
            DiffError::InvalidArgument(format!("unknown parameter {name:?}"))
        })?;
        if slot.shape() != value.shape() {
            return Err(DiffError::Shape {
                op: "set_param",
                lhs: slot.shape(),
                rhs: value.shape(),
            });
        }
        *slot = value;
        Ok(())
    }

    fn param_slot(&mut self, name: &str) -> Option<&mut Matrix> {
        match name {
            "edge_logits" => return Some(&mut self.causal.logits),
            "effect.w_hidden" => return Some(&mut self.effect.w_hidden),
            "effect.b_hidden" => return Some(&mut self.effect.b_hidden),
            "effect.w_mean" => return Some(&mut self.effect.w_mean),
            "effect.b_mean" => return Some(&mut self.effect.b_mean),
            "effect.w_skip" => return Some(&mut self.effect.w_skip),
            "effect.w_scale" => return Some(&mut self.effect.w_scale),
            "effect.b_scale" => return Some(&mut self.effect.b_scale),
            "artifact.mean" => return Some(&mut self.artifact.mean),
            "artifact.log_scale" => return Some(&mut self.artifact.log_scale),
            "encoder.mean.w" => return Some(&mut self.encoder.head_mean.0),
            "encoder.mean.b" => return Some(&mut self.encoder.head_mean.1),
            "encoder.scale.w" => return Some(&mut self.encoder.head_scale.0),
            "encoder.scale.b" => return Some(&mut self.encoder.head_scale.1),
            "theta_log" => return Some(&mut self.theta_log),
            _ => {}
        }
        if let Some(rest) = name.strip_prefix("encoder.layer") {
            let (idx, field) = rest.split_once('.')?;
            let idx: usize = idx.parse().ok()?;
            let layer = self.encoder.layers.get_mut(idx)?;
            return match field {
                "w" => Some(&mut layer.0),
                "b" => Some(&mut layer.1),
                _ => None,
            };
        }
        if let Some(rest) = name.strip_prefix("decoder.layer") {
            let (idx, field) = rest.split_once('.')?;
            let idx: usize = idx.parse().ok()?;
            let layer = self.decoder.layers.get_mut(idx)?;
            return match field {
                "w" => Some(&mut layer.0),
                "b" => Some(&mut layer.1),
                _ => None,
            };
        }
        None
    }

    pub fn is_finite(&self) -> bool {
        self.named_params().iter().all(|(_, m)| m.is_finite())
    }
}

/// Latents drawn for one batch during a forward pass.
#[derive(Debug, Clone)]
pub struct LatentBatch {
    pub mask: Matrix,
    pub effects: Matrix,
    pub z_pert: Matrix,
    pub z_art: Matrix,
    pub z_art_cf: Matrix,
    pub art_embed: Matrix,
    pub z_basal: Matrix,
    pub z_basal_cf: Matrix,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            n_genes: 8,
            n_modeled: 6,
            latent_dim: 4,
            enc_hidden: 8,
            enc_layers: 2,
            dec_layers: 1,
            effect_hidden: 8,
            mask_prior: 0.3,
        }
    }

    #[test]
    fn init_starts_probs_exactly_at_the_prior() {
        let s = ModelState::init(tiny_config(), 0);
        for &p in s.causal.prob().data() {
            assert!((p - 0.3).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_deterministic_and_scales_start_at_one() {
        let a = ModelState::init(tiny_config(), 7);
        let b = ModelState::init(tiny_config(), 7);
        assert_eq!(a, b);
        let mask = Matrix::zeros(6, 6);
        let (_, scale) = a.effect.forward(&mask).unwrap();
        for &s in scale.data() {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn set_param_round_trips_every_name() {
        let mut s = ModelState::init(tiny_config(), 3);
        let names = s.param_names();
        for name in names {
            let v = s.get_param(&name).unwrap().clone();
            let bumped = v.map(|x| x + 1.0);
            s.set_param(&name, bumped.clone()).unwrap();
            assert_eq!(s.get_param(&name).unwrap(), &bumped);
        }
        assert!(s.set_param("nope", Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn decoder_fractions_sum_to_one() {
        let s = ModelState::init(tiny_config(), 1);
        let input = Matrix::from_fn(3, 4 + 6 + 4, |i, j| ((i + j) as f64).sin());
        let fractions = s.decoder.forward(&input).unwrap();
        for i in 0..3 {
            let sum: f64 = fractions.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(fractions.row(i).iter().all(|&f| f > 0.0));
        }
    }
}
