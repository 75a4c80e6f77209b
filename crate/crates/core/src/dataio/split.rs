//! Train/validation/test splitting with optional held-out perturbations.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::{DataError, DataResult, PerturbDataset};

/// Split a dataset 80/10/10 by a seeded shuffle. Every row treated with a
/// holdout gene goes to the test split regardless of the shuffle; holdout
/// genes must be perturbed genes.
pub fn split_dataset(
    dataset: &PerturbDataset,
    seed: u64,
    holdout_perturbations: &[String],
) -> DataResult<(PerturbDataset, PerturbDataset, PerturbDataset)> {
    let catalog = dataset.catalog();
    let mut holdout_modeled = Vec::new();
    for name in holdout_perturbations {
        let modeled = catalog.modeled_index_of(name).ok_or_else(|| {
            DataError::Config(format!("holdout gene {name:?} is not a modeled gene"))
        })?;
        if !catalog.modeled_is_perturbed(modeled) {
            return Err(DataError::Config(format!(
                "holdout gene {name:?} has no interventional data"
            )));
        }
        holdout_modeled.push(modeled);
    }

    let mut held: Vec<usize> = Vec::new();
    let mut rest: Vec<usize> = Vec::new();
    for row in 0..dataset.n_rows() {
        match dataset.treatment(row) {
            Some(t) if holdout_modeled.contains(&t) => held.push(row),
            _ => rest.push(row),
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rest.shuffle(&mut rng);
    let n = rest.len();
    let n_val = ((n as f64) * 0.1).round() as usize;
    let n_test = ((n as f64) * 0.1).round() as usize;
    let (val_rows, tail) = rest.split_at(n_val.min(n));
    let (test_rows, train_rows) = tail.split_at(n_test.min(tail.len()));

    let mut test: Vec<usize> = test_rows.to_vec();
    test.extend(&held);

    Ok((
        dataset.select_rows(train_rows),
        dataset.select_rows(val_rows),
        dataset.select_rows(&test),
    ))
}
