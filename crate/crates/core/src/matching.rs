//! Maximum-weight bipartite matching (Hungarian algorithm with potentials).

/// Maximum-weight matching between the rows and columns of `weights`.
///
/// Every vertex on the smaller side is matched. Returns `(row, col)` pairs
/// sorted by row. Rows with identical weight vectors are interchangeable;
/// among them the lowest row receives the lowest column, which makes the
/// result independent of the solver's internal visiting order.
pub fn max_weight_matching(weights: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let rows = weights.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = weights[0].len();
    if cols == 0 {
        return Vec::new();
    }
    debug_assert!(weights.iter().all(|r| r.len() == cols));

    // Rescale so the solver works on O(1) numbers; gains can be ~1e-10.
    let scale = weights
        .iter()
        .flatten()
        .fold(0.0f64, |m, w| m.max(w.abs()));
    let scale = if scale > 0.0 { scale } else { 1.0 };

    let mut pairs = if rows <= cols {
        let cost: Vec<Vec<f64>> = weights
            .iter()
            .map(|r| r.iter().map(|w| -w / scale).collect())
            .collect();
        hungarian_min(&cost)
    } else {
        let cost: Vec<Vec<f64>> = (0..cols)
            .map(|c| (0..rows).map(|r| -weights[r][c] / scale).collect())
            .collect();
        hungarian_min(&cost).into_iter().map(|(c, r)| (r, c)).collect()
    };
    pairs.sort_unstable();
    canonicalize_identical_rows(weights, &mut pairs);
    pairs
}

pub fn matching_weight(weights: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| weights[r][c]).sum()
}

fn canonicalize_identical_rows(weights: &[Vec<f64>], pairs: &mut [(usize, usize)]) {
    let mut done = vec![false; pairs.len()];
    for i in 0..pairs.len() {
        if done[i] {
            continue;
        }
        let group: Vec<usize> = (i..pairs.len())
            .filter(|&j| !done[j] && weights[pairs[j].0] == weights[pairs[i].0])
            .collect();
        let mut cols: Vec<usize> = group.iter().map(|&j| pairs[j].1).collect();
        cols.sort_unstable();
        for (&j, c) in group.iter().zip(cols) {
            pairs[j].1 = c;
            done[j] = true;
        }
    }
}

/// Minimum-cost assignment of every row to a distinct column, `rows <= cols`.
fn hungarian_min(cost: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost[0].len();
    // 1-based potentials; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| (owner[j] - 1, j - 1))
        .collect()
}
