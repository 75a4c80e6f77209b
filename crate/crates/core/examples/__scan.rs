use pertvae::dataio::{split_dataset, synthesize_dataset, SynthConfig};
use pertvae::grn::{extract_grn, Restrict};
use pertvae::trainer::{train, TrainConfig};
use rayon::prelude::*;

fn main() {
    let results: Vec<String> = (1..11u64).into_par_iter().map(|seed| {
        let sim = SynthConfig {
            n_perturbed: 8, n_extended: 3, n_measured: 1, n_rows: 700,
            edge_density: 0.18, knockdown: 0.9, attenuation: 0.85, seed,
            ..SynthConfig::default()
        };
        let (dataset, truth) = synthesize_dataset(&sim).unwrap();
        let (tr, va, _) = split_dataset(&dataset, 0, &[]).unwrap();
        let cfg = TrainConfig {
            epochs: 600, batch_size: 64, learning_rate: 1e-2, beta_gpo: 5.0,
            latent_dim: 6, enc_hidden: 24, enc_layers: 1, effect_hidden: 12,
            seed: 9, log_every: 0, ..TrainConfig::default()
        };
        let (state, _) = train(&tr, &va, &cfg).unwrap();
        let g = extract_grn(&state.causal, dataset.catalog(), 0.5, Restrict::All).unwrap();
        let offdiag: Vec<_> = g.edges().iter().filter(|(s, t, _)| s != t).collect();
        let hits = offdiag.iter().filter(|(s, t, _)| truth.has_edge(*s, *t)).count();
        format!("seed {seed}: {} off-diag edges, {hits} true, {} truth edges", offdiag.len(), truth.n_edges())
    }).collect();
    for r in results { println!("{r}"); }
}
