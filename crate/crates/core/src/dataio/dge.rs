//! Reference differential-expression profiles over the modeled genes.

use crate::diffcore::Matrix;

use super::{DataResult, PairingPlan, PerturbDataset};

/// Per-row reference profiles in [0, 1] plus the exclusion flags.
///
/// A row is excluded exactly when it has no treatment (control) or no pair;
/// excluded rows hold zero vectors and contribute nothing to any loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DgeReference {
    pub values: Matrix,
    pub excluded: Vec<bool>,
}

/// For each paired row, the absolute log2 fold change of its profile
/// against the paired control over the modeled genes, scaled by the row
/// maximum into [0, 1]. Rows without a pair are zero and excluded.
pub fn compute_reference_dge(
    dataset: &PerturbDataset,
    plan: &PairingPlan,
) -> DataResult<DgeReference> {
    let n = dataset.n_rows();
    let modeled = dataset.catalog().modeled_indices().to_vec();
    let mut values = Matrix::zeros(n, modeled.len());
    let mut excluded = vec![true; n];

    for &(p_row, c_row) in &plan.pairs {
        let mut row_max: f64 = 0.0;
        let mut fold = vec![0.0; modeled.len()];
        for (slot, &gene) in fold.iter_mut().zip(&modeled) {
            let xp = dataset.x().get(p_row, gene);
            let xc = dataset.x().get(c_row, gene);
            let lfc = ((xp + 1.0) / (xc + 1.0)).log2().abs();
            *slot = lfc;
            row_max = row_max.max(lfc);
        }
        if row_max > 0.0 {
            for (j, f) in fold.iter().enumerate() {
                values.set(p_row, j, f / row_max);
            }
        }
        excluded[p_row] = false;
    }
    Ok(DgeReference { values, excluded })
}
