//! Independent oracles shared by the integration suites. Everything here is
//! deliberately implemented through a different route than the library code
//! it checks.

#![allow(dead_code)]

use pertvae::diffcore::Matrix;

/// Midrank AUROC of scores against binary labels.
pub fn auroc(scores: &[(f64, bool)]) -> f64 {
    let mut sorted: Vec<&(f64, bool)> = scores.iter().collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_pos = sorted.iter().filter(|s| s.1).count() as f64;
    let n_neg = sorted.len() as f64 - n_pos;
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1].0 == sorted[i].0 {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0;
        for s in &sorted[i..=j] {
            if s.1 {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// Sum over every directed walk of length <= k of the product of its edge
/// weights, with walks longer than one hop scaled; depth-first enumeration.
pub fn walk_sum(w: &Matrix, k: usize, scale: f64) -> Matrix {
    let n = w.rows();
    let mut acc = Matrix::zeros(n, n);
    fn extend(
        w: &Matrix,
        acc: &mut Matrix,
        start: usize,
        node: usize,
        product: f64,
        hops: usize,
        max_hops: usize,
        scale: f64,
    ) {
        for next in 0..w.rows() {
            let weight = w.get(node, next);
            if weight == 0.0 {
                continue;
            }
            let p = product * weight;
            let s = if hops + 1 == 1 { 1.0 } else { scale };
            let cur = acc.get(start, next);
            acc.set(start, next, cur + s * p);
            if hops + 1 < max_hops {
                extend(w, acc, start, next, p, hops + 1, max_hops, scale);
            }
        }
    }
    for start in 0..n {
        extend(w, &mut acc, start, start, 1.0, 0, k, scale);
    }
    acc
}

/// Minimum assignment cost over every injection of rows into columns.
pub fn brute_force_assignment_cost(cost: &Matrix) -> f64 {
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

/// |F_a - F_b| integrated exactly in value space: the integrand is a step
/// function, so summing over the sorted union of sample points is the
/// CDF integral without discretization error. A different route from the
/// quantile-space computation it checks.
pub fn wasserstein_cdf_integral(a: &[f64], b: &[f64]) -> f64 {
    let mut points: Vec<f64> = a.iter().chain(b).copied().collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    let mut total = 0.0;
    for w in points.windows(2) {
        total += (w[1] - w[0]) * (cdf(a, w[0]) - cdf(b, w[0])).abs();
    }
    total
}

/// |F_a - F_b| integrated over a fine grid.
pub fn wasserstein_grid(a: &[f64], b: &[f64], steps: usize) -> f64 {
    let lo = a.iter().chain(b).fold(f64::INFINITY, |m, &v| m.min(v)) - 1.0;
    let hi = a
        .iter()
        .chain(b)
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v))
        + 1.0;
    let dx = (hi - lo) / steps as f64;
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    let mut total = 0.0;
    for i in 0..steps {
        let x = lo + (i as f64 + 0.5) * dx;
        total += (cdf(a, x) - cdf(b, x)).abs() * dx;
    }
    total
}

/// Exact two-sided rank-test p-value by iterating bitmask subsets: the
/// symmetric-tail probability P(|U - mu| >= |u_obs - mu|).
pub fn exact_rank_p_by_bitmask(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() + b.len();
    assert!(n <= 20, "bitmask oracle limited to small pools");
    let mut pooled: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
    pooled.sort_by(f64::total_cmp);
    // midranks of sorted pool positions
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pooled[j + 1] == pooled[i] {
            j += 1;
        }
        let mid = (i + j + 2) as f64 / 2.0;
        for r in ranks.iter_mut().take(j + 1).skip(i) {
            *r = mid;
        }
        i = j + 1;
    }
    // observed U for sample a: rank-sum within the pooled ordering
    let mut all: Vec<(f64, usize)> = a
        .iter()
        .map(|&v| (v, 0usize))
        .chain(b.iter().map(|&v| (v, 1usize)))
        .collect();
    all.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut obs_rank_sum = 0.0;
    for (pos, &(_, which)) in all.iter().enumerate() {
        if which == 0 {
            obs_rank_sum += ranks[pos];
        }
    }
    let na = a.len();
    let offset = (na * (na + 1)) as f64 / 2.0;
    let mu = (na * b.len()) as f64 / 2.0;
    let dev_obs = (obs_rank_sum - offset - mu).abs();

    let mut extreme = 0u64;
    let mut total = 0u64;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        let mut rank_sum = 0.0;
        for (pos, &r) in ranks.iter().enumerate() {
            if mask & (1 << pos) != 0 {
                rank_sum += r;
            }
        }
        let u = rank_sum - offset;
        total += 1;
        if (u - mu).abs() >= dev_obs - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / total as f64
}

/// Rewire a graph keeping every node's out-degree, targets drawn without
/// replacement among the other nodes.
pub fn degree_matched_random_edges(
    n_nodes: usize,
    out_degrees: &[usize],
    seed: u64,
) -> Vec<(usize, usize)> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for (source, &degree) in out_degrees.iter().enumerate() {
        let mut targets: Vec<usize> = (0..n_nodes).filter(|&t| t != source).collect();
        targets.shuffle(&mut rng);
        for &t in targets.iter().take(degree) {
            edges.push((source, t));
        }
    }
    edges
}
