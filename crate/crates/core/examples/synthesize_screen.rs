//! Draw a synthetic perturbation screen with a known generating graph and
//! write the dataset files.

use pertvae::dataio::{save_dataset, save_truth_edges, synthesize_dataset, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SynthConfig {
        n_perturbed: 10,
        n_extended: 4,
        n_measured: 2,
        n_rows: 800,
        edge_density: 0.12,
        seed: 7,
        ..SynthConfig::default()
    };
    let (dataset, truth) = synthesize_dataset(&cfg)?;

    println!(
        "{} cells x {} genes ({} modeled), {} controls, {} artifact-flagged",
        dataset.n_rows(),
        dataset.catalog().n_genes(),
        dataset.catalog().n_modeled(),
        dataset.control_rows().len(),
        dataset.qc().iter().filter(|&&a| a == 1).count(),
    );
    println!("ground truth: {} directed edges (acyclic: {})",
        truth.n_edges(),
        truth.topological_order().is_some(),
    );
    for (s, t, w) in truth.edges().iter().take(5) {
        println!(
            "  {} -> {} ({w:+.3})",
            dataset.catalog().modeled_name(*s),
            dataset.catalog().modeled_name(*t),
        );
    }

    let dir = std::env::temp_dir().join("pertvae_synthesize_screen");
    std::fs::create_dir_all(&dir)?;
    save_dataset(
        &dataset,
        &dir.join("expression.tsv"),
        &dir.join("treatments.tsv"),
        &dir.join("qc.tsv"),
        &dir.join("catalog.tsv"),
    )?;
    save_truth_edges(&truth, dataset.catalog(), &dir.join("truth_edges.tsv"))?;
    println!("wrote dataset files to {}", dir.display());
    Ok(())
}
