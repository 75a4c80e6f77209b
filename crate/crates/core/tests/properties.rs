//! Property tests for the spec-level invariants that quantify well.

mod common;

use pertvae::dataio::{
    build_reference_dge, pair_optimal_transport, synthesize_dataset, SynthConfig,
};
use pertvae::diffcore::{matrix_power_sum, Matrix};
use pertvae::evalharness::{jaccard_topk, wasserstein_1d};
use pertvae::grn::GrnGraph;
use proptest::prelude::*;

fn small_matrix(max_dim: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_dim).prop_flat_map(move |n| {
        proptest::collection::vec(-3.0..3.0f64, n * n)
            .prop_map(move |data| Matrix::from_vec(n, n, data).unwrap())
    })
}

fn sample_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-50.0..50.0f64, 1..=max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn one_hop_power_sum_is_identity(w in small_matrix(6), scale in 0.01..2.0f64) {
        let got = matrix_power_sum(&w, 1, scale).unwrap();
        prop_assert_eq!(got, w);
    }

    #[test]
    fn wasserstein_is_a_metric_on_multisets(
        a in sample_vec(12),
        b in sample_vec(12),
        c in sample_vec(12),
    ) {
        let dab = wasserstein_1d(&a, &b).unwrap();
        let dba = wasserstein_1d(&b, &a).unwrap();
        prop_assert!((dab - dba).abs() < 1e-9, "symmetry: {dab} vs {dba}");
        let daa = wasserstein_1d(&a, &a).unwrap();
        prop_assert!(daa.abs() < 1e-12, "identity: {daa}");
        let dac = wasserstein_1d(&a, &c).unwrap();
        let dcb = wasserstein_1d(&c, &b).unwrap();
        prop_assert!(dab <= dac + dcb + 1e-9, "triangle: {dab} > {dac} + {dcb}");
    }

    #[test]
    fn jaccard_of_a_vector_with_itself_is_one(
        v in proptest::collection::vec(-10.0..10.0f64, 3..30),
        k in 1..5usize,
    ) {
        prop_assume!(k <= v.len());
        prop_assert_eq!(jaccard_topk(&v, &v, k).unwrap(), 1.0);
    }

    #[test]
    fn raising_the_threshold_never_adds_edges(
        probs in small_matrix(6).prop_map(|m| m.map(|v| (v.abs() / 3.0).min(0.999))),
        lo in 0.05..0.45f64,
        hi in 0.5..0.95f64,
    ) {
        let n = probs.rows();
        let names: Vec<String> = (0..n).map(|i| format!("g{i}")).collect();
        let g_lo = GrnGraph::new(names.clone(), n, probs.clone(), lo).unwrap();
        let g_hi = GrnGraph::new(names, n, probs, hi).unwrap();
        prop_assert!(g_hi.n_edges() <= g_lo.n_edges());
        for (s, t) in g_hi.edge_set() {
            prop_assert!(g_lo.edge_set().contains(&(s, t)));
        }
    }

    #[test]
    fn assignment_cost_never_exceeds_identity_pairing(
        rows in 1..6usize,
        seed in 0..1000u64,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let n_genes = 4;
        let make = |rng: &mut rand_chacha::ChaCha12Rng, n: usize| {
            Matrix::from_fn(n, n_genes, |_, _| rng.gen_range(0.0..200.0f64).round())
        };
        let perturbed = make(&mut rng, rows);
        let controls = make(&mut rng, rows);
        let plan = pair_optimal_transport(&perturbed, &controls).unwrap();
        let cost = |p: usize, c: usize| -> f64 {
            perturbed
                .row(p)
                .iter()
                .zip(controls.row(c))
                .map(|(&a, &b)| {
                    let d = a.ln_1p() - b.ln_1p();
                    d * d
                })
                .sum()
        };
        let plan_cost: f64 = plan.pairs.iter().map(|&(p, c)| cost(p, c)).sum();
        let identity_cost: f64 = (0..rows).map(|i| cost(i, i)).sum();
        prop_assert!(plan_cost <= identity_cost + 1e-9);
    }
}

// reference profiles stay in the unit interval and exclusion marks exactly
// the rows without a pair
#[test]
fn reference_profiles_live_in_the_unit_interval() {
    for seed in 0..5 {
        let cfg = SynthConfig {
            n_perturbed: 5,
            n_extended: 2,
            n_measured: 1,
            n_rows: 120,
            edge_density: 0.2,
            seed,
            ..SynthConfig::default()
        };
        let (dataset, _) = synthesize_dataset(&cfg).unwrap();
        let (plan, reference) = build_reference_dge(&dataset).unwrap();
        assert!(reference
            .values
            .data()
            .iter()
            .all(|&v| (0.0..=1.0).contains(&v)));
        let paired: std::collections::BTreeSet<usize> =
            plan.pairs.iter().map(|&(p, _)| p).collect();
        for row in 0..dataset.n_rows() {
            assert_eq!(reference.excluded[row], !paired.contains(&row));
            if reference.excluded[row] {
                assert!(reference.values.row(row).iter().all(|&v| v == 0.0));
            }
        }
        // control rows are never paired as the perturbed side
        for row in dataset.control_rows() {
            assert!(reference.excluded[row]);
        }
    }
}
