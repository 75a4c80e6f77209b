//! Exact minimum-cost assignment (Hungarian method with potentials).

use crate::diffcore::Matrix;

use super::{DataError, DataResult};

/// Solve the rectangular assignment problem exactly.
///
/// Every row of the smaller dimension is matched to a distinct column (or
/// row) of the larger one; returns pairs as (row, col) plus total cost.
/// O(n^2 m) shortest-augmenting-path with dual potentials.
pub fn solve_assignment(cost: &Matrix) -> DataResult<(Vec<(usize, usize)>, f64)> {
    if cost.rows() == 0 || cost.cols() == 0 {
        return Err(DataError::Pairing("empty cost matrix".into()));
    }
    if !cost.is_finite() {
        return Err(DataError::Pairing("non-finite pair cost".into()));
    }
    if cost.rows() <= cost.cols() {
        Ok(solve_rows_le_cols(cost))
    } else {
        let (pairs, total) = solve_rows_le_cols(&cost.transpose());
        Ok((pairs.into_iter().map(|(r, c)| (c, r)).collect(), total))
    }
}

fn solve_rows_le_cols(cost: &Matrix) -> (Vec<(usize, usize)>, f64) {
    let n = cost.rows();
    let m = cost.cols();
    // 1-based potentials; column 0 is the virtual start.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut matched_row = vec![0usize; m + 1]; // row matched to each column, 0 = free
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        // augment along the recorded path
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::with_capacity(n);
    let mut total = 0.0;
    for j in 1..=m {
        if matched_row[j] != 0 {
            let row = matched_row[j] - 1;
            pairs.push((row, j - 1));
            total += cost.get(row, j - 1);
        }
    }
    pairs.sort_unstable();
    (pairs, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn brute_force_min(cost: &Matrix) -> f64 {
        // over all injections of rows into columns (rows <= cols)
        fn recurse(cost: &Matrix, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.rows() {
                *best = best.min(acc);
                return;
            }
            for col in 0..cost.cols() {
                if used[col] {
                    continue;
                }
                used[col] = true;
                recurse(cost, row + 1, used, acc + cost.get(row, col), best);
                used[col] = false;
            }
        }
        let mut best = f64::INFINITY;
        recurse(cost, 0, &mut vec![false; cost.cols()], 0.0, &mut best);
        best
    }

    #[test]
    fn matches_brute_force_on_square_and_rectangular_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for trial in 0..50 {
            let n = rng.gen_range(1..=5);
            let m = rng.gen_range(n..=6);
            let cost = Matrix::from_fn(n, m, |_, _| rng.gen_range(0.0..10.0));
            let (pairs, total) = solve_assignment(&cost).unwrap();
            assert_eq!(pairs.len(), n);
            let want = brute_force_min(&cost);
            assert!(
                (total - want).abs() < 1e-9,
                "trial {trial}: {total} vs {want}"
            );
        }
    }

    #[test]
    fn tall_matrices_match_every_column() {
        let cost = Matrix::from_rows(&[vec![5.0], vec![1.0], vec![3.0]]);
        let (pairs, total) = solve_assignment(&cost).unwrap();
        assert_eq!(pairs, vec![(1, 0)]);
        assert_eq!(total, 1.0);
    }

    #[test]
    fn empty_cost_is_an_error() {
        assert!(solve_assignment(&Matrix::zeros(0, 3)).is_err());
    }
}
