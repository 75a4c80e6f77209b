//! Train every loss variant on shared data and print the comparison table.

use pertvae::dataio::SynthConfig;
use pertvae::pipeline::{cmd_ablate, cmd_simulate, Ctx, EvalSection, PipelineConfig, SplitSection};
use pertvae::trainer::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join("pertvae_ablation_compare");
    let data_dir = root.join("data");
    let _ = std::fs::remove_dir_all(&root);

    let config = PipelineConfig {
        seed: 2,
        out_dir: None,
        data_dir: Some(data_dir.clone()),
        simulate: Some(SynthConfig {
            n_perturbed: 6,
            n_extended: 2,
            n_measured: 1,
            n_rows: 400,
            edge_density: 0.2,
            seed: 2,
            ..SynthConfig::default()
        }),
        split: Some(SplitSection::default()),
        train: Some(TrainConfig {
            epochs: 50,
            batch_size: 64,
            learning_rate: 1e-2,
            beta_gpo: 5.0,
            latent_dim: 4,
            enc_hidden: 16,
            enc_layers: 1,
            effect_hidden: 8,
            seed: 2,
            ..TrainConfig::default()
        }),
        eval: Some(EvalSection {
            particles: 200,
            n_negatives: 50,
            k_top: 5,
            ..EvalSection::default()
        }),
    };

    cmd_simulate(&Ctx::from_config(config.clone(), data_dir.clone()))?;
    let out = root.join("ablate");
    cmd_ablate(&Ctx::from_config(config, out.clone()))?;
    print!(
        "{}",
        std::fs::read_to_string(out.join("ablation_table.tsv"))?
    );
    Ok(())
}
