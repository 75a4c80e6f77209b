//! End-to-end checks of the command surface, including the installed binary.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use pertvae::dataio::SynthConfig;
use pertvae::pipeline::{
    cmd_ablate, cmd_predict, cmd_simulate, cmd_train, Ctx, EvalSection, PipelineConfig,
    SplitSection,
};
use pertvae::trainer::TrainConfig;

fn tiny_config(data_dir: &Path, epochs: usize) -> PipelineConfig {
    PipelineConfig {
        seed: 11,
        out_dir: None,
        data_dir: Some(data_dir.to_path_buf()),
        simulate: Some(SynthConfig {
            n_perturbed: 6,
            n_extended: 2,
            n_measured: 1,
            n_rows: 400,
            edge_density: 0.2,
            seed: 11,
            ..SynthConfig::default()
        }),
        split: Some(SplitSection::default()),
        train: Some(TrainConfig {
            epochs,
            batch_size: 64,
            learning_rate: 1e-2,
            latent_dim: 4,
            enc_hidden: 16,
            enc_layers: 1,
            effect_hidden: 8,
            beta_gpo: 5.0,
            seed: 11,
            ..TrainConfig::default()
        }),
        eval: Some(EvalSection {
            particles: 150,
            n_negatives: 40,
            k_top: 5,
            ..EvalSection::default()
        }),
    }
}

#[test]
fn smoke_training_completes_quickly() {
    // 6 genes, 400 rows, 200 epochs within a minute of wall clock
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let config = tiny_config(&data, 200);
    cmd_simulate(&Ctx::from_config(config.clone(), data.clone())).unwrap();
    let t0 = Instant::now();
    cmd_train(&Ctx::from_config(config, root.path().join("run"))).unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "smoke training took {elapsed:.1}s");
}

#[test]
fn predict_writes_per_treatment_tables() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let config = tiny_config(&data, 20);
    cmd_simulate(&Ctx::from_config(config.clone(), data.clone())).unwrap();
    let run = root.path().join("run");
    cmd_train(&Ctx::from_config(config.clone(), run.clone())).unwrap();
    let out = root.path().join("pred");
    let files = cmd_predict(
        &Ctx::from_config(config, out.clone()),
        &run.join("checkpoint.json"),
        &[],
    )
    .unwrap();
    assert!(files.iter().any(|f| f.ends_with("ate_summary.json")));
    let tables: Vec<_> = files
        .iter()
        .filter(|f| f.extension().is_some_and(|e| e == "tsv"))
        .collect();
    assert!(!tables.is_empty());
    let text = std::fs::read_to_string(tables[0]).unwrap();
    assert!(text.starts_with("gene\tpredicted_de\tobserved_de\n"));
}

#[test]
fn ablate_emits_a_four_row_table() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let mut config = tiny_config(&data, 12);
    config.eval.as_mut().unwrap().particles = 60;
    cmd_simulate(&Ctx::from_config(config.clone(), data.clone())).unwrap();
    let out = root.path().join("ablate");
    cmd_ablate(&Ctx::from_config(config, out.clone())).unwrap();
    let table = std::fs::read_to_string(out.join("ablation_table.tsv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(
        lines[0],
        "variant\tate_pearson\tate_r2\tjaccard\tmean_wd\tfor_rate\tn_edges"
    );
    assert_eq!(lines.len(), 5, "header plus exactly four variants");
    for variant in ["sp_only", "dge_only", "dge_k_only", "full"] {
        assert!(
            lines.iter().any(|l| l.starts_with(variant)),
            "missing {variant}"
        );
    }
}

#[test]
fn binary_runs_the_full_pipeline_from_a_config_file() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let mut config = tiny_config(&data, 15);
    config.eval.as_mut().unwrap().particles = 60;
    let config_path = root.path().join("config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    let bin = env!("CARGO_BIN_EXE_pertvae");

    let run = |args: &[&str]| {
        let output = Command::new(bin).args(args).output().unwrap();
        assert!(
            output.status.success(),
            "pertvae {args:?} failed:\n{}",
            String::from_utf8_lossy(&output.stderr)
        );
    };
    let cfg = config_path.to_str().unwrap();
    let data_s = data.to_str().unwrap().to_string();
    run(&["simulate", "--config", cfg, "--out", &data_s]);
    let train_dir = root.path().join("train");
    run(&[
        "train",
        "--config",
        cfg,
        "--out",
        train_dir.to_str().unwrap(),
    ]);
    let ckpt = train_dir.join("checkpoint.json");
    let grn_dir = root.path().join("grn");
    run(&[
        "grn",
        "--config",
        cfg,
        "--out",
        grn_dir.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    let eval_dir = root.path().join("eval");
    run(&[
        "eval",
        "--config",
        cfg,
        "--out",
        eval_dir.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert!(grn_dir.join("edges.tsv").exists());
    assert!(eval_dir.join("metrics.json").exists());
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("metrics.json")).unwrap())
            .unwrap();
    assert!(metrics["grn"]["for_rate"].is_number());
    assert!(metrics.get("grn").and_then(|g| g.get("mean_wd")).is_some());

    // evaluating an explicit edge list (the synthetic ground truth) works too
    let eval_truth = root.path().join("eval_truth");
    run(&[
        "eval",
        "--config",
        cfg,
        "--out",
        eval_truth.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--graph",
        data.join("truth_edges.tsv").to_str().unwrap(),
    ]);
    let truth_metrics: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(eval_truth.join("metrics.json")).unwrap(),
    )
    .unwrap();
    assert!(truth_metrics["grn"]["n_edges"].as_u64().unwrap() > 0);

    // nonzero exit and a named field on a broken config
    let broken = root.path().join("broken.json");
    std::fs::write(&broken, "{}").unwrap();
    let output = Command::new(bin)
        .args(["simulate", "--config", broken.to_str().unwrap(), "--out", "/tmp/x"])
        .output()
        .unwrap();
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("simulate"));
}
