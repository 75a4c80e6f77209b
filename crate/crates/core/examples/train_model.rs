//! Train on a small synthetic screen and watch the loss components.

use pertvae::dataio::{split_dataset, synthesize_dataset, SynthConfig};
use pertvae::trainer::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sim = SynthConfig {
        n_perturbed: 8,
        n_extended: 3,
        n_measured: 1,
        n_rows: 600,
        edge_density: 0.15,
        seed: 2,
        ..SynthConfig::default()
    };
    let (dataset, _) = synthesize_dataset(&sim)?;
    let (train_set, val_set, _) = split_dataset(&dataset, 0, &[])?;

    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 128,
        learning_rate: 5e-3,
        latent_dim: 6,
        enc_hidden: 24,
        enc_layers: 1,
        effect_hidden: 12,
        k_hops: 5,
        beta_gpo: 5.0,
        seed: 1,
        ..TrainConfig::default()
    };
    let (state, history) = train(&train_set, &val_set, &cfg)?;

    println!("epoch   j_rec     j_ade   j_dge_k      j_sp     total  val_elbo");
    for record in history.epochs.iter().step_by(10) {
        let l = &record.losses;
        println!(
            "{:>5} {:>8.2} {:>9.4} {:>9.4} {:>9.4} {:>9.2} {:>9.2}",
            record.epoch, l.j_rec, l.j_ade, l.j_dge_k, l.j_sp, l.total, record.val_elbo
        );
    }
    println!(
        "best validation epoch: {} (elbo {:.3})",
        history.best_epoch,
        history.epochs[history.best_epoch].val_elbo
    );
    let probs = state.causal.prob();
    let mean_prob = probs.sum() / (probs.rows() * probs.cols()) as f64;
    println!("mean edge probability after training: {mean_prob:.4}");
    Ok(())
}
