//! Score graphs against a dataset: mean edge Wasserstein distance and
//! false omission rate, comparing the generating graph with a random one.

use pertvae::dataio::{synthesize_dataset, SynthConfig};
use pertvae::diffcore::Matrix;
use pertvae::evalharness::{false_omission_rate, mean_wd};
use pertvae::grn::GrnGraph;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let sim = SynthConfig {
        n_perturbed: 10,
        n_extended: 4,
        n_measured: 0,
        n_rows: 1500,
        edge_density: 0.15,
        seed: 8,
        ..SynthConfig::default()
    };
    let (dataset, truth) = synthesize_dataset(&sim)?;
    let names = dataset.catalog().modeled_names();
    let n = names.len();

    let truth_probs = Matrix::from_fn(n, n, |i, j| if truth.has_edge(i, j) { 0.9 } else { 0.0 });
    let truth_graph = GrnGraph::new(
        names.clone(),
        dataset.catalog().n_perturbed(),
        truth_probs,
        0.5,
    )?;

    // random graph with the same number of edges
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let mut pairs: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    pairs.shuffle(&mut rng);
    let mut random_probs = Matrix::zeros(n, n);
    for &(i, j) in pairs.iter().take(truth_graph.n_edges()) {
        random_probs.set(i, j, 0.9);
    }
    let random_graph = GrnGraph::new(names, dataset.catalog().n_perturbed(), random_probs, 0.5)?;

    for (label, graph) in [("ground truth", &truth_graph), ("random", &random_graph)] {
        let wd = mean_wd(graph, &dataset)?;
        let fo = false_omission_rate(graph, &dataset, 300, 0.05, 5)?;
        println!(
            "{label:>12}: {} edges, mean WD {:?}, FOR {:.3} ({} negatives tested)",
            graph.n_edges(),
            wd.mean.map(|m| (m * 1000.0).round() / 1000.0),
            fo.rate,
            fo.n_sampled
        );
    }
    println!("the generating graph should score a much higher mean WD");
    Ok(())
}
