//! Thin command-line wrapper over the pipeline functions.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pertvae::grn::Restrict;
use pertvae::objective::Ablation;
use pertvae::pipeline::{
    cmd_ablate, cmd_eval, cmd_grn, cmd_predict, cmd_simulate, cmd_train, Ctx, PipelineError,
};

#[derive(Parser)]
#[command(name = "pertvae", version, about = "Perturbation-response model with an explicit regulatory graph")]
struct Cli {
    /// JSON config file driving every command.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides the config's out_dir).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed override applied to every seeded section.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a synthetic screen with a known ground-truth graph.
    Simulate,
    /// Train on the dataset in data_dir and write a checkpoint.
    Train {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        latent_dim: Option<usize>,
        #[arg(long)]
        k_hops: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta_gpo: Option<f64>,
        #[arg(long)]
        kl_weight: Option<f64>,
        #[arg(long)]
        mask_prior: Option<f64>,
        /// full, sp_only, dge_only or dge_k_only.
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Predicted vs observed differential expression per treatment.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Specific treatments (default: all perturbed genes in the test split).
        #[arg(long)]
        treatment: Vec<String>,
    },
    /// Extract and export the thresholded graph.
    Grn {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
        /// all or perturbed_only.
        #[arg(long)]
        restrict: Option<String>,
    },
    /// Graph statistics plus response metrics.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Score this edge list instead of the checkpoint's graph.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Train and evaluate every loss variant on shared data.
    Ablate,
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, PipelineError> {
    let config_path = cli
        .config
        .ok_or(PipelineError::MissingField("--config"))?;
    let mut ctx = Ctx::load(&config_path, cli.out, cli.seed)?;
    match cli.command {
        Command::Simulate => cmd_simulate(&ctx),
        Command::Train {
            epochs,
            batch_size,
            learning_rate,
            latent_dim,
            k_hops,
            alpha,
            beta_gpo,
            kl_weight,
            mask_prior,
            ablation,
        } => {
            let train = ctx
                .config
                .train
                .as_mut()
                .ok_or(PipelineError::MissingField("train"))?;
            if let Some(v) = epochs {
                train.epochs = v;
            }
            if let Some(v) = batch_size {
                train.batch_size = v;
            }
            if let Some(v) = learning_rate {
                train.learning_rate = v;
            }
            if let Some(v) = latent_dim {
                train.latent_dim = v;
            }
            if let Some(v) = k_hops {
                train.k_hops = v;
            }
            if let Some(v) = alpha {
                train.alpha = v;
            }
            if let Some(v) = beta_gpo {
                train.beta_gpo = v;
            }
            if let Some(v) = kl_weight {
                train.kl_weight = v;
            }
            if let Some(v) = mask_prior {
                train.mask_prior = v;
            }
            if let Some(v) = ablation {
                train.ablation = Ablation::parse(&v).ok_or_else(|| {
                    PipelineError::Config(format!(
                        "unknown ablation {v:?}; expected full, sp_only, dge_only or dge_k_only"
                    ))
                })?;
            }
            cmd_train(&ctx)
        }
        Command::Predict {
            checkpoint,
            treatment,
        } => cmd_predict(&ctx, &checkpoint, &treatment),
        Command::Grn {
            checkpoint,
            threshold,
            restrict,
        } => {
            let eval = ctx.config.eval.get_or_insert_with(Default::default);
            if let Some(v) = threshold {
                eval.grn_threshold = v;
            }
            if let Some(v) = restrict {
                eval.restrict = match v.as_str() {
                    "all" => Restrict::All,
                    "perturbed_only" => Restrict::PerturbedOnly,
                    other => {
                        return Err(PipelineError::Config(format!(
                            "unknown restrict {other:?}; expected all or perturbed_only"
                        )))
                    }
                };
            }
            cmd_grn(&ctx, &checkpoint)
        }
        Command::Eval { checkpoint, graph } => {
            if graph.is_some() {
                ctx.config.eval.get_or_insert_with(Default::default).graph_tsv = graph;
            }
            cmd_eval(&ctx, &checkpoint)
        }
        Command::Ablate => cmd_ablate(&ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
