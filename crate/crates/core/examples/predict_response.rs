//! Predict the expression response to a perturbation and compare against
//! held-out observations.

use pertvae::dataio::{split_dataset, synthesize_dataset, SynthConfig};
use pertvae::evalharness::{ate_pearson, jaccard_topk};
use pertvae::inference::{estimate_ate, observed_de};
use pertvae::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sim = SynthConfig {
        n_perturbed: 8,
        n_extended: 3,
        n_measured: 1,
        n_rows: 700,
        edge_density: 0.18,
        knockdown: 0.9,
        attenuation: 0.85,
        seed: 12,
        ..SynthConfig::default()
    };
    let (dataset, _) = synthesize_dataset(&sim)?;
    let (train_set, val_set, test_set) = split_dataset(&dataset, 0, &[])?;
    let cfg = TrainConfig {
        epochs: 600,
        batch_size: 64,
        learning_rate: 1e-2,
        beta_gpo: 5.0,
        latent_dim: 6,
        enc_hidden: 24,
        enc_layers: 1,
        effect_hidden: 12,
        seed: 3,
        ..TrainConfig::default()
    };
    let (state, _) = train(&train_set, &val_set, &cfg)?;

    let treatment = 0;
    let name = dataset.catalog().modeled_name(treatment);
    let prediction = estimate_ate(&state, treatment, name, 2500, 17)?;
    let observed = observed_de(&test_set, treatment)?;

    let rho = ate_pearson(&prediction.ate, &observed)?;
    let jac = jaccard_topk(&prediction.ate, &observed, 5)?;
    println!("treatment {name}: ATE correlation {rho:.3}, Jaccard@5 {jac:.3}");

    println!("strongest predicted changes:");
    let mut idx: Vec<usize> = (0..prediction.ate.len()).collect();
    idx.sort_by(|&a, &b| prediction.ate[b].abs().total_cmp(&prediction.ate[a].abs()));
    println!("{:<8} {:>10} {:>10}", "gene", "predicted", "observed");
    for &g in idx.iter().take(6) {
        println!(
            "{:<8} {:>10.4} {:>10.4}",
            dataset.catalog().name(g),
            prediction.ate[g],
            observed[g]
        );
    }
    Ok(())
}
