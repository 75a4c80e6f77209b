//! Check the reverse-mode gradients of every loss term against the
//! central finite-difference oracle on a tiny model.

use std::collections::BTreeMap;

use pertvae::dataio::{build_ade_partners, build_reference_dge, synthesize_dataset, SynthConfig};
use pertvae::diffcore::{eval_with_grad, finite_diff_grad, GradientRecord, Tape, Var};
use pertvae::model::{ModelConfig, ModelState};
use pertvae::objective::{build_total_loss, Ablation, Batch, LossConfig, NoiseDraws};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sim = SynthConfig {
        n_perturbed: 4,
        n_extended: 2,
        n_measured: 1,
        n_rows: 20,
        edge_density: 0.25,
        seed: 5,
        ..SynthConfig::default()
    };
    let (dataset, _) = synthesize_dataset(&sim)?;
    let (_, reference) = build_reference_dge(&dataset)?;
    let partners = build_ade_partners(&dataset)?;
    let rows: Vec<usize> = (0..dataset.n_rows()).collect();
    let batch = Batch::gather(&dataset, &reference, &partners, &rows);

    let state = ModelState::init(
        ModelConfig {
            n_genes: dataset.catalog().n_genes(),
            n_modeled: dataset.catalog().n_modeled(),
            latent_dim: 3,
            enc_hidden: 6,
            enc_layers: 1,
            dec_layers: 1,
            effect_hidden: 4,
            mask_prior: 0.3,
        },
        11,
    );
    let noise = NoiseDraws::draw(6, 3, batch.len(), 3);
    let cfg = LossConfig {
        alpha: 1.0,
        beta: 1.0,
        sp_weight: 1.0,
        kl_weight: 1.0,
        k_hops: 3,
        mask_prior: 0.3,
        temperature: 0.7,
        ablation: Ablation::Full,
    };

    let mcfg = state.config.clone();
    let objective = |tape: &mut Tape, vars: &BTreeMap<String, Var>| {
        build_total_loss(tape, vars, &mcfg, &batch, &noise, &cfg).map(|lv| lv.total)
    };

    let mut analytic: Vec<GradientRecord> = state
        .named_params()
        .into_iter()
        .map(|(name, value)| GradientRecord::new(name, value.clone()))
        .collect();
    let value = eval_with_grad(&objective, &mut analytic)?;
    println!("total loss = {value:.6}");

    let mut numeric: Vec<GradientRecord> = analytic
        .iter()
        .map(|r| GradientRecord::new(r.name.clone(), r.value.clone()))
        .collect();
    finite_diff_grad(&objective, &mut numeric, 1e-5)?;

    println!("{:<22} {:>12} {:>12}", "parameter", "max |grad|", "max rel err");
    for (a, n) in analytic.iter().zip(&numeric) {
        let max_abs = a.gradient.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let max_rel = a
            .gradient
            .data()
            .iter()
            .zip(n.gradient.data())
            .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(3e-3))
            .fold(0.0f64, f64::max);
        println!("{:<22} {max_abs:>12.3e} {max_rel:>12.3e}", a.name);
        assert!(max_rel < 1e-4, "{} disagrees with the oracle", a.name);
    }
    println!("all gradients agree with central finite differences");
    Ok(())
}
