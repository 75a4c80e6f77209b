//! Sampling and encoding operations. Every one is a pure function of its
//! inputs and the seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::diffcore::{DiffError, DiffResult, Matrix};

use super::{ArtifactPrior, BasalEncoderNet, CausalParams, DecoderNet, EffectNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Concrete relaxation: smooth in the logits, entries in (0, 1).
    Relaxed,
    /// Plain Bernoulli threshold draws in {0, 1}.
    Hard,
}

pub fn standard_normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Logistic noise for the concrete relaxation: ln u - ln(1 - u).
pub fn mask_noise(dim: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Matrix::from_fn(dim, dim, |_, _| {
        let u: f64 = rng.gen_range(1e-12..1.0 - 1e-12);
        u.ln() - (1.0 - u).ln()
    })
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Draw the sparsity mask from the edge logits.
///
/// Relaxed mode applies the concrete relaxation
/// sigmoid((logit + noise) / temperature) and is differentiable in the
/// logits; hard mode thresholds uniform draws against the edge
/// probabilities. Deterministic per seed.
pub fn sample_mask(
    params: &CausalParams,
    temperature: f64,
    mode: MaskMode,
    seed: u64,
) -> DiffResult<Matrix> {
    match mode {
        MaskMode::Relaxed => {
            if temperature <= 0.0 {
                return Err(DiffError::InvalidArgument(format!(
                    "relaxed mask needs a positive temperature, got {temperature}"
                )));
            }
            let noise = mask_noise(params.dim(), seed);
            let mut out = params.logits.clone();
            for (o, &g) in out.data_mut().iter_mut().zip(noise.data()) {
                *o = sigmoid((*o + g) / temperature);
            }
            Ok(out)
        }
        MaskMode::Hard => {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            Ok(params.logits.map(|logit| {
                let u: f64 = rng.gen();
                (u < sigmoid(logit)) as u8 as f64
            }))
        }
    }
}

/// Reparameterized effect draw: mean(mask) + scale(mask) * eps.
pub fn sample_effects(net: &EffectNet, mask: &Matrix, seed: u64) -> DiffResult<Matrix> {
    if mask.rows() != mask.cols() || mask.rows() != net.w_hidden.rows() {
        return Err(DiffError::Shape {
            op: "sample_effects",
            lhs: mask.shape(),
            rhs: (net.w_hidden.rows(), net.w_hidden.rows()),
        });
    }
    let (mean, scale) = net.forward(mask)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let eps = standard_normal_matrix(mean.rows(), mean.cols(), &mut rng);
    Ok(Matrix::from_vec(
        mean.rows(),
        mean.cols(),
        mean.data()
            .iter()
            .zip(scale.data().iter().zip(eps.data()))
            .map(|(&m, (&s, &e))| m + s * e)
            .collect(),
    )?)
}

/// Per-row perturbation latent: the treatment one-hot picks a row of the
/// masked effects. Control rows map to zero vectors.
pub fn encode_perturbation(p: &Matrix, effects: &Matrix, mask: &Matrix) -> DiffResult<Matrix> {
    if effects.shape() != mask.shape() {
        return Err(DiffError::Shape {
            op: "encode_perturbation",
            lhs: effects.shape(),
            rhs: mask.shape(),
        });
    }
    if p.cols() != effects.rows() {
        return Err(DiffError::Shape {
            op: "encode_perturbation",
            lhs: p.shape(),
            rhs: effects.shape(),
        });
    }
    p.matmul(&effects.hadamard(mask)?)
}

/// Draw the global artifact embedding and mask it by the QC column:
/// flagged rows carry the embedding, clean rows carry zero, and the
/// counterfactual swaps the two.
pub fn encode_artifact(
    a: &Matrix,
    prior: &ArtifactPrior,
    seed: u64,
) -> DiffResult<(Matrix, Matrix, Matrix)> {
    if a.cols() != 1 {
        return Err(DiffError::Shape {
            op: "encode_artifact",
            lhs: a.shape(),
            rhs: (a.rows(), 1),
        });
    }
    if a.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(DiffError::Domain {
            op: "encode_artifact",
            msg: "QC flags must be 0 or 1".into(),
        });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let eps = standard_normal_matrix(1, prior.dim(), &mut rng);
    let scale = prior.scale();
    let embed = Matrix::from_vec(
        1,
        prior.dim(),
        prior
            .mean
            .data()
            .iter()
            .zip(scale.data().iter().zip(eps.data()))
            .map(|(&m, (&s, &e))| m + s * e)
            .collect(),
    )?;
    let z_art = a.matmul(&embed)?;
    let a_flip = a.map(|v| 1.0 - v);
    let z_art_cf = a_flip.matmul(&embed)?;
    Ok((z_art, z_art_cf, embed))
}

/// Posterior parameters and a reparameterized draw of the basal state from
/// log1p counts, the perturbation latent, and the artifact latent.
pub fn encode_basal(
    net: &BasalEncoderNet,
    x: &Matrix,
    z_pert: &Matrix,
    z_art: &Matrix,
    seed: u64,
) -> DiffResult<(Matrix, Matrix, Matrix)> {
    if x.rows() != z_pert.rows() || x.rows() != z_art.rows() {
        return Err(DiffError::Shape {
            op: "encode_basal",
            lhs: x.shape(),
            rhs: z_pert.shape(),
        });
    }
    let logx = x.map(f64::ln_1p);
    let input = Matrix::concat_cols(&[&logx, z_pert, z_art])?;
    let (mean, scale) = net.forward(&input)?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let eps = standard_normal_matrix(mean.rows(), mean.cols(), &mut rng);
    let z = Matrix::from_vec(
        mean.rows(),
        mean.cols(),
        mean.data()
            .iter()
            .zip(scale.data().iter().zip(eps.data()))
            .map(|(&m, (&s, &e))| m + s * e)
            .collect(),
    )?;
    Ok((mean, scale, z))
}

/// Decode latents to the negative-binomial rate and dispersion.
///
/// The decoder emits positive fractions summing to one per row; rates are
/// the fractions scaled by each row's library size, so predicted counts
/// preserve it. Dispersion is the per-gene theta broadcast over rows.
pub fn decode_nb_params(
    net: &DecoderNet,
    z_basal: &Matrix,
    z_pert: &Matrix,
    z_art: &Matrix,
    library: &[f64],
    theta: &Matrix,
) -> DiffResult<(Matrix, Matrix)> {
    let n = z_basal.rows();
    if library.len() != n {
        return Err(DiffError::Shape {
            op: "decode_nb_params",
            lhs: (library.len(), 1),
            rhs: (n, 1),
        });
    }
    if library.iter().any(|&l| l <= 0.0 || !l.is_finite()) {
        return Err(DiffError::Domain {
            op: "decode_nb_params",
            msg: "library sizes must be positive".into(),
        });
    }
    if theta.rows() != 1 {
        return Err(DiffError::Shape {
            op: "decode_nb_params",
            lhs: theta.shape(),
            rhs: (1, theta.cols()),
        });
    }
    if theta.data().iter().any(|&t| t <= 0.0) {
        return Err(DiffError::Domain {
            op: "decode_nb_params",
            msg: "dispersion must be positive".into(),
        });
    }
    let input = Matrix::concat_cols(&[z_basal, z_pert, z_art])?;
    let fractions = net.forward(&input)?;
    let mut rate = fractions;
    for i in 0..n {
        for v in rate.row_mut(i) {
            *v *= library[i];
        }
    }
    let dispersion = Matrix::from_fn(n, theta.cols(), |_, j| theta.get(0, j));
    Ok((rate, dispersion))
}

/// Log-mass of counts under the Gamma-Poisson mixture marginal
/// (negative binomial), summed over genes per row.
pub fn nb_log_likelihood(x: &Matrix, rate: &Matrix, dispersion: &Matrix) -> DiffResult<Vec<f64>> {
    if x.shape() != rate.shape() || x.shape() != dispersion.shape() {
        return Err(DiffError::Shape {
            op: "nb_log_likelihood",
            lhs: x.shape(),
            rhs: rate.shape(),
        });
    }
    if rate.data().iter().any(|&r| r <= 0.0)
        || dispersion.data().iter().any(|&t| t <= 0.0)
    {
        return Err(DiffError::Domain {
            op: "nb_log_likelihood",
            msg: "rate and dispersion must be positive".into(),
        });
    }
    if x.data().iter().any(|&v| v < 0.0 || v.fract() != 0.0) {
        return Err(DiffError::Domain {
            op: "nb_log_likelihood",
            msg: "counts must be non-negative integers".into(),
        });
    }
    let mut out = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let mut acc = 0.0;
        for ((&k, &mu), &r) in x.row(i).iter().zip(rate.row(i)).zip(dispersion.row(i)) {
            acc += nb_log_mass(k, mu, r);
        }
        out.push(acc);
    }
    Ok(out)
}

/// Single-entry negative-binomial log-mass with mean `mu`, dispersion `r`.
pub fn nb_log_mass(k: f64, mu: f64, r: f64) -> f64 {
    ln_gamma(k + r) - ln_gamma(r) - ln_gamma(k + 1.0) + r * (r / (r + mu)).ln()
        + k * (mu / (r + mu)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, ModelState};
    use approx::assert_abs_diff_eq;
    use rand_distr::Gamma;

    fn state() -> ModelState {
        ModelState::init(
            ModelConfig {
                n_genes: 8,
                n_modeled: 6,
                latent_dim: 4,
                enc_hidden: 8,
                enc_layers: 2,
                dec_layers: 1,
                effect_hidden: 8,
                mask_prior: 0.3,
            },
            42,
        )
    }

    #[test]
    fn saturated_logits_give_all_ones_in_both_modes() {
        let params = CausalParams::new(Matrix::filled(4, 4, 30.0)).unwrap();
        for mode in [MaskMode::Relaxed, MaskMode::Hard] {
            let m = sample_mask(&params, 0.5, mode, 3).unwrap();
            for &v in m.data() {
                assert!(v > 0.999, "{mode:?}: {v}");
            }
        }
    }

    #[test]
    fn hard_mode_matches_probability_in_the_mean() {
        let params = CausalParams::new(Matrix::zeros(1, 1)).unwrap();
        let draws = 100_000;
        let mut total = 0.0;
        for seed in 0..draws {
            total += sample_mask(&params, 1.0, MaskMode::Hard, seed).unwrap().get(0, 0);
        }
        let mean = total / draws as f64;
        assert!((mean - 0.5).abs() < 0.01, "empirical mean {mean}");
    }

    #[test]
    fn near_zero_temperature_saturates_relaxed_draws() {
        let params = CausalParams::new(Matrix::filled(5, 5, 0.4)).unwrap();
        let m = sample_mask(&params, 1e-4, MaskMode::Relaxed, 9).unwrap();
        for &v in m.data() {
            assert!(v < 1e-3 || v > 1.0 - 1e-3, "entry {v} not saturated");
        }
    }

    #[test]
    fn non_positive_temperature_is_rejected_in_relaxed_mode() {
        let params = CausalParams::new(Matrix::zeros(2, 2)).unwrap();
        assert!(sample_mask(&params, 0.0, MaskMode::Relaxed, 0).is_err());
        assert!(sample_mask(&params, 0.0, MaskMode::Hard, 0).is_ok());
    }

    #[test]
    fn zero_scale_makes_effects_equal_the_mean() {
        let mut s = state();
        // force the scale head to a hugely negative raw output
        s.effect.b_scale = Matrix::filled(1, 6, -50.0);
        let mask = sample_mask(&s.causal, 1.0, MaskMode::Hard, 5).unwrap();
        let e = sample_effects(&s.effect, &mask, 11).unwrap();
        let (mean, _) = s.effect.forward(&mask).unwrap();
        assert!(e.max_abs_diff(&mean) < 1e-12);
    }

    #[test]
    fn identical_seeds_give_identical_effects() {
        let s = state();
        let mask = sample_mask(&s.causal, 1.0, MaskMode::Relaxed, 5).unwrap();
        let a = sample_effects(&s.effect, &mask, 11).unwrap();
        let b = sample_effects(&s.effect, &mask, 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn effect_sample_mean_concentrates_on_the_net_mean() {
        let s = state();
        let mask = Matrix::filled(6, 6, 1.0);
        let (mean, scale) = s.effect.forward(&mask).unwrap();
        let n = 10_000;
        let mut acc = Matrix::zeros(6, 6);
        for seed in 0..n {
            let e = sample_effects(&s.effect, &mask, seed).unwrap();
            acc = acc.add(&e).unwrap();
        }
        let avg = acc.scale(1.0 / n as f64);
        for ((&a, &m), &sc) in avg.data().iter().zip(mean.data()).zip(scale.data()) {
            let bound = 3.0 * sc / (n as f64).sqrt();
            assert!((a - m).abs() < bound, "{a} vs {m} (bound {bound})");
        }
    }

    #[test]
    fn one_hot_rows_select_masked_effect_rows() {
        let effects = Matrix::from_rows(&[
            vec![1.0, 2.0, 3.0],
            vec![4.0, 5.0, 6.0],
            vec![7.0, 8.0, 9.0],
        ]);
        let mask = Matrix::from_rows(&[
            vec![1.0, 0.0, 1.0],
            vec![0.0, 1.0, 0.0],
            vec![1.0, 1.0, 1.0],
        ]);
        let p = Matrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 0.0]]);
        let z = encode_perturbation(&p, &effects, &mask).unwrap();
        assert_eq!(z.row(0), &[0.0, 5.0, 0.0]);
        assert_eq!(z.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn perturbation_encoding_matches_dense_product() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let e = standard_normal_matrix(3, 3, &mut rng);
        let m = standard_normal_matrix(3, 3, &mut rng).map(|v| (v > 0.0) as u8 as f64);
        let p = Matrix::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]]);
        let got = encode_perturbation(&p, &e, &m).unwrap();
        let want = p.matmul(&e.hadamard(&m).unwrap()).unwrap();
        assert_eq!(got, want);
    }

    #[test]
    fn artifact_masks_are_complementary() {
        let s = state();
        let a = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![1.0], vec![0.0]]);
        let (z, z_cf, embed) = encode_artifact(&a, &s.artifact, 17).unwrap();
        for i in 0..4 {
            for j in 0..s.artifact.dim() {
                assert_abs_diff_eq!(
                    z.get(i, j) + z_cf.get(i, j),
                    embed.get(0, j),
                    epsilon = 1e-15
                );
            }
            let zero_row = |m: &Matrix, i: usize| m.row(i).iter().all(|&v| v == 0.0);
            if a.get(i, 0) == 0.0 {
                assert!(zero_row(&z, i));
            } else {
                assert!(zero_row(&z_cf, i));
            }
        }
    }

    #[test]
    fn non_binary_qc_column_is_rejected() {
        let s = state();
        let a = Matrix::from_rows(&[vec![0.5]]);
        assert!(encode_artifact(&a, &s.artifact, 0).is_err());
    }

    #[test]
    fn basal_encoding_is_row_wise() {
        let s = state();
        let x = Matrix::from_fn(4, 8, |i, j| ((i * 3 + j) % 5) as f64);
        let zp = Matrix::zeros(4, 6);
        let za = Matrix::zeros(4, 4);
        let (mean, _, _) = encode_basal(&s.encoder, &x, &zp, &za, 0).unwrap();
        let perm = [2usize, 0, 3, 1];
        let xp = x.select_rows(&perm);
        let (mean_p, _, _) = encode_basal(&s.encoder, &xp, &zp, &za, 0).unwrap();
        for (i, &src) in perm.iter().enumerate() {
            assert_eq!(mean_p.row(i), mean.row(src));
        }
    }

    #[test]
    fn zero_scale_head_makes_basal_sample_equal_mean() {
        let mut s = state();
        s.encoder.head_scale.1 = Matrix::filled(1, 4, -50.0);
        let x = Matrix::from_fn(3, 8, |i, j| ((i + j) % 4) as f64);
        let zp = Matrix::zeros(3, 6);
        let za = Matrix::zeros(3, 4);
        let (mean, _, z) = encode_basal(&s.encoder, &x, &zp, &za, 31).unwrap();
        assert!(z.max_abs_diff(&mean) < 1e-12);
    }

    #[test]
    fn uniform_fractions_split_the_library_evenly() {
        let mut s = state();
        // zero decoder weights emit equal logits, hence uniform fractions
        for (w, b) in s.decoder.layers.iter_mut() {
            *w = Matrix::zeros(w.rows(), w.cols());
            *b = Matrix::zeros(b.rows(), b.cols());
        }
        let zb = Matrix::zeros(2, 4);
        let zp = Matrix::zeros(2, 6);
        let za = Matrix::zeros(2, 4);
        let (rate, _) =
            decode_nb_params(&s.decoder, &zb, &zp, &za, &[1000.0, 1000.0], &s.theta()).unwrap();
        for &r in rate.data() {
            assert_abs_diff_eq!(r, 1000.0 / 8.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn rates_are_linear_in_library_size() {
        let s = state();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let zb = standard_normal_matrix(3, 4, &mut rng);
        let zp = standard_normal_matrix(3, 6, &mut rng);
        let za = Matrix::zeros(3, 4);
        let (r1, _) =
            decode_nb_params(&s.decoder, &zb, &zp, &za, &[500.0, 500.0, 500.0], &s.theta())
                .unwrap();
        let (r2, _) =
            decode_nb_params(&s.decoder, &zb, &zp, &za, &[1000.0, 1000.0, 1000.0], &s.theta())
                .unwrap();
        assert!(r2.max_abs_diff(&r1.scale(2.0)) < 1e-9);
    }

    #[test]
    fn fraction_rows_sum_to_library() {
        let s = state();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..5 {
            let zb = standard_normal_matrix(2, 4, &mut rng);
            let zp = standard_normal_matrix(2, 6, &mut rng);
            let za = standard_normal_matrix(2, 4, &mut rng);
            let lib = [777.0, 123.0];
            let (rate, _) =
                decode_nb_params(&s.decoder, &zb, &zp, &za, &lib, &s.theta()).unwrap();
            for (i, &l) in lib.iter().enumerate() {
                let sum: f64 = rate.row(i).iter().sum();
                assert_abs_diff_eq!(sum / l, 1.0, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn non_positive_library_is_rejected() {
        let s = state();
        let zb = Matrix::zeros(1, 4);
        let zp = Matrix::zeros(1, 6);
        let za = Matrix::zeros(1, 4);
        assert!(decode_nb_params(&s.decoder, &zb, &zp, &za, &[0.0], &s.theta()).is_err());
    }

    #[test]
    fn nb_log_mass_approaches_poisson_at_huge_dispersion() {
        let rate = 3.0;
        for k in 0..12 {
            let kf = k as f64;
            let nb = nb_log_mass(kf, rate, 1e8);
            let poisson = kf * rate.ln() - rate - ln_gamma(kf + 1.0);
            assert!((nb - poisson).abs() < 1e-4, "k={k}: {nb} vs {poisson}");
        }
    }

    #[test]
    fn nb_log_mass_normalizes_over_truncated_support() {
        let total: f64 = (0..=500)
            .map(|k| nb_log_mass(k as f64, 3.0, 2.0).exp())
            .sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn nb_log_mass_matches_gamma_poisson_monte_carlo() {
        // mixture oracle: sample the rate from the Gamma stage, average the
        // Poisson mass at a fixed count
        let (k, mu, r) = (4.0, 3.0, 2.0);
        let draws = 1_000_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        let gamma = Gamma::new(r, mu / r).unwrap();
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..draws {
            let lambda: f64 = gamma.sample(&mut rng);
            let mass = (k * lambda.ln() - lambda - ln_gamma(k + 1.0)).exp();
            sum += mass;
            sumsq += mass * mass;
        }
        let mc = sum / draws as f64;
        let var = (sumsq / draws as f64 - mc * mc) / draws as f64;
        let se = var.sqrt();
        let analytic = nb_log_mass(k, mu, r).exp();
        assert!(
            (mc - analytic).abs() < 3.0 * se,
            "MC {mc} vs analytic {analytic} (se {se})"
        );
    }

    #[test]
    fn nb_log_likelihood_validates_domains() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let rate = Matrix::from_rows(&[vec![1.0, 0.0]]);
        let disp = Matrix::from_rows(&[vec![1.0, 1.0]]);
        assert!(nb_log_likelihood(&x, &rate, &disp).is_err());
        let rate = Matrix::from_rows(&[vec![1.0, 1.0]]);
        let bad_x = Matrix::from_rows(&[vec![1.0, 2.5]]);
        assert!(nb_log_likelihood(&bad_x, &rate, &disp).is_err());
        let ok = nb_log_likelihood(&x, &rate, &disp).unwrap();
        assert_eq!(ok.len(), 1);
    }
}
