//! The whole command pipeline in-process: simulate, train, extract the
//! graph, evaluate. The `pertvae` binary exposes the same steps as
//! subcommands; see scripts/run_pipeline.sh for the shell version.

use pertvae::dataio::SynthConfig;
use pertvae::pipeline::{
    cmd_eval, cmd_grn, cmd_simulate, cmd_train, Ctx, EvalSection, PipelineConfig, SplitSection,
};
use pertvae::trainer::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join("pertvae_full_pipeline");
    let data_dir = root.join("data");
    let _ = std::fs::remove_dir_all(&root);

    let config = PipelineConfig {
        seed: 5,
        out_dir: None,
        data_dir: Some(data_dir.clone()),
        simulate: Some(SynthConfig {
            n_perturbed: 6,
            n_extended: 2,
            n_measured: 1,
            n_rows: 400,
            edge_density: 0.2,
            seed: 5,
            ..SynthConfig::default()
        }),
        split: Some(SplitSection::default()),
        train: Some(TrainConfig {
            epochs: 60,
            batch_size: 64,
            learning_rate: 1e-2,
            beta_gpo: 5.0,
            latent_dim: 4,
            enc_hidden: 16,
            enc_layers: 1,
            effect_hidden: 8,
            seed: 5,
            ..TrainConfig::default()
        }),
        eval: Some(EvalSection {
            particles: 300,
            n_negatives: 60,
            k_top: 5,
            ..EvalSection::default()
        }),
    };

    println!("simulating into {}", data_dir.display());
    cmd_simulate(&Ctx::from_config(config.clone(), data_dir.clone()))?;

    let train_dir = root.join("train");
    println!("training into {}", train_dir.display());
    cmd_train(&Ctx::from_config(config.clone(), train_dir.clone()))?;
    let checkpoint = train_dir.join("checkpoint.json");

    let grn_dir = root.join("grn");
    cmd_grn(&Ctx::from_config(config.clone(), grn_dir.clone()), &checkpoint)?;
    let edges = std::fs::read_to_string(grn_dir.join("edges.tsv"))?;
    println!("extracted edges:\n{edges}");

    let eval_dir = root.join("eval");
    cmd_eval(&Ctx::from_config(config, eval_dir.clone()), &checkpoint)?;
    let metrics = std::fs::read_to_string(eval_dir.join("metrics.json"))?;
    let parsed: serde_json::Value = serde_json::from_str(&metrics)?;
    println!(
        "metrics: mean ATE correlation {}, mean WD {}, FOR {}, {} edges",
        parsed["mean_ate_pearson"], parsed["grn"]["mean_wd"], parsed["grn"]["for_rate"],
        parsed["grn"]["n_edges"]
    );
    println!("outputs under {}", root.display());
    Ok(())
}
