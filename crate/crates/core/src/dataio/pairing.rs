//! Optimal-transport pairing of perturbed cells with controls, and
//! counterfactual reference partners for artifact-flagged cells.

use crate::diffcore::Matrix;

use super::{assign::solve_assignment, DataError, DataResult, PerturbDataset};

/// Result of pairing one set of profiles against another.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingPlan {
    /// (perturbed row index, control row index), perturbed index ascending.
    pub pairs: Vec<(usize, usize)>,
    /// Controls no pair uses, ascending.
    pub unmatched_controls: Vec<usize>,
}

fn log1p_rows(m: &Matrix) -> Matrix {
    m.map(f64::ln_1p)
}

fn squared_euclidean_cost(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), b.rows(), |i, j| {
        a.row(i)
            .iter()
            .zip(b.row(j))
            .map(|(&x, &y)| (x - y) * (x - y))
            .sum()
    })
}

/// Exact minimum-total-cost matching of perturbed profiles to controls
/// under squared Euclidean cost on log1p counts.
///
/// When the sets differ in size, every profile of the smaller side is
/// matched and the surplus of the other side is left unmatched; leftover
/// perturbed rows are simply absent from `pairs` and fall under the
/// zero-vector exclusion rule downstream.
pub fn pair_optimal_transport(
    perturbed_rows: &Matrix,
    control_rows: &Matrix,
) -> DataResult<PairingPlan> {
    if control_rows.rows() == 0 {
        return Err(DataError::Pairing("empty control set".into()));
    }
    if perturbed_rows.rows() == 0 {
        return Err(DataError::Pairing("empty perturbed set".into()));
    }
    if perturbed_rows.cols() != control_rows.cols() {
        return Err(DataError::Dimension(format!(
            "profiles disagree on gene count: {} vs {}",
            perturbed_rows.cols(),
            control_rows.cols()
        )));
    }
    let cost = squared_euclidean_cost(&log1p_rows(perturbed_rows), &log1p_rows(control_rows));
    let (pairs, _) = solve_assignment(&cost)?;
    let mut used = vec![false; control_rows.rows()];
    for &(_, c) in &pairs {
        used[c] = true;
    }
    let unmatched_controls = (0..control_rows.rows()).filter(|&c| !used[c]).collect();
    Ok(PairingPlan {
        pairs,
        unmatched_controls,
    })
}

/// Pair every treatment group of a dataset against the control pool.
///
/// Groups are matched independently, so a control may serve several
/// treatments; pair indices refer to dataset rows. Controls matched in no
/// group are reported unmatched.
pub fn dataset_pairing(dataset: &PerturbDataset) -> DataResult<PairingPlan> {
    let controls = dataset.control_rows();
    if controls.is_empty() {
        return Err(DataError::Pairing(
            "dataset has no control rows to pair against".into(),
        ));
    }
    let control_x = dataset.x().select_rows(&controls);
    let control_log = log1p_rows(&control_x);

    let mut pairs = Vec::new();
    let mut control_used = vec![false; controls.len()];
    for t in 0..dataset.catalog().n_modeled() {
        let rows = dataset.rows_with_treatment(t);
        if rows.is_empty() {
            continue;
        }
        let group_log = log1p_rows(&dataset.x().select_rows(&rows));
        let cost = squared_euclidean_cost(&group_log, &control_log);
        let (group_pairs, _) = solve_assignment(&cost)?;
        for (gi, ci) in group_pairs {
            pairs.push((rows[gi], controls[ci]));
            control_used[ci] = true;
        }
    }
    pairs.sort_unstable();
    let unmatched_controls = controls
        .iter()
        .enumerate()
        .filter(|(ci, _)| !control_used[*ci])
        .map(|(_, &row)| row)
        .collect();
    Ok(PairingPlan {
        pairs,
        unmatched_controls,
    })
}

/// Pairing plus reference differential-expression profiles in one call.
pub fn build_reference_dge(
    dataset: &PerturbDataset,
) -> DataResult<(PairingPlan, super::DgeReference)> {
    let plan = dataset_pairing(dataset)?;
    let reference = super::compute_reference_dge(dataset, &plan)?;
    Ok((plan, reference))
}

/// For each artifact-flagged row, the QC-pass row (same treatment) that
/// serves as its clean counterfactual reference, assigned by the same
/// optimal-transport machinery. Rows without a same-treatment QC-pass
/// partner get `None` and are skipped by the disentanglement loss.
pub fn build_ade_partners(dataset: &PerturbDataset) -> DataResult<Vec<Option<usize>>> {
    let n = dataset.n_rows();
    let mut partner: Vec<Option<usize>> = vec![None; n];
    // group key: None = control, Some(t) = treatment t
    let mut groups: Vec<Option<usize>> = vec![None];
    groups.extend((0..dataset.catalog().n_modeled()).map(Some));

    for key in groups {
        let flagged: Vec<usize> = (0..n)
            .filter(|&r| dataset.treatment(r) == key && dataset.qc()[r] == 1)
            .collect();
        if flagged.is_empty() {
            continue;
        }
        let clean: Vec<usize> = (0..n)
            .filter(|&r| dataset.treatment(r) == key && dataset.qc()[r] == 0)
            .collect();
        if clean.is_empty() {
            continue;
        }
        let flagged_log = log1p_rows(&dataset.x().select_rows(&flagged));
        let clean_log = log1p_rows(&dataset.x().select_rows(&clean));
        let cost = squared_euclidean_cost(&flagged_log, &clean_log);
        let (pairs, _) = solve_assignment(&cost)?;
        for (fi, ci) in pairs {
            partner[flagged[fi]] = Some(clean[ci]);
        }
    }
    Ok(partner)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_single_rows_pair_at_zero_cost() {
        let a = Matrix::from_rows(&[vec![3.0, 1.0]]);
        let plan = pair_optimal_transport(&a, &a.clone()).unwrap();
        assert_eq!(plan.pairs, vec![(0, 0)]);
        assert!(plan.unmatched_controls.is_empty());
    }

    #[test]
    fn unique_optimum_is_found() {
        // perturbed {0, 10} vs controls {9, 1}: 0 pairs with 1, 10 with 9.
        let perturbed = Matrix::from_rows(&[vec![0.0], vec![10.0]]);
        let controls = Matrix::from_rows(&[vec![9.0], vec![1.0]]);
        let plan = pair_optimal_transport(&perturbed, &controls).unwrap();
        assert_eq!(plan.pairs, vec![(0, 1), (1, 0)]);
    }

    #[test]
    fn empty_controls_error() {
        let a = Matrix::from_rows(&[vec![1.0]]);
        let none = Matrix::zeros(0, 1);
        assert!(matches!(
            pair_optimal_transport(&a, &none),
            Err(DataError::Pairing(_))
        ));
    }

    #[test]
    fn surplus_controls_are_reported() {
        let perturbed = Matrix::from_rows(&[vec![5.0]]);
        let controls = Matrix::from_rows(&[vec![5.0], vec![100.0], vec![90.0]]);
        let plan = pair_optimal_transport(&perturbed, &controls).unwrap();
        assert_eq!(plan.pairs, vec![(0, 0)]);
        assert_eq!(plan.unmatched_controls, vec![1, 2]);
    }
}
