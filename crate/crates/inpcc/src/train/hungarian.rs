//! Minimum-cost bipartite assignment between predictions (rows) and ground
//! truths (columns), with deterministic tie-breaking: among all optimal
//! assignments, the lexicographically smallest (prediction, ground-truth)
//! pair list is returned.

use crate::error::{Error, Result};
use crate::Tensor;

/// One-to-one assignment of min(N, G) prediction-to-GT pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// (prediction index, ground-truth index), ascending by prediction.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_predictions: Vec<usize>,
}

/// Kuhn-Munkres with row/column potentials on a zero-padded square matrix.
/// Returns the minimum total over exactly min(rows, cols) real pairs.
fn best_total(cost: &[Vec<f64>], skip_rows: &[bool], skip_cols: &[bool]) -> f64 {
    let rows: Vec<usize> = (0..skip_rows.len()).filter(|&i| !skip_rows[i]).collect();
    let cols: Vec<usize> = (0..skip_cols.len()).filter(|&j| !skip_cols[j]).collect();
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    let n = rows.len().max(cols.len());
    // Padded square view; dummy cells cost 0 so they never distort the real
    // total, and exactly min(|rows|, |cols|) real pairs get matched.
    let at = |i: usize, j: usize| -> f64 {
        if i < rows.len() && j < cols.len() {
            cost[rows[i]][cols[j]]
        } else {
            0.0
        }
    };

    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned_row = vec![0usize; n + 1]; // column -> row (1-based, 0 = free)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        assigned_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = assigned_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = at(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[assigned_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if assigned_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut total = 0.0;
    for j in 1..=n {
        let i = assigned_row[j];
        if i >= 1 && i - 1 < rows.len() && j - 1 < cols.len() {
            total += at(i - 1, j - 1);
        }
    }
    total
}

/// Minimum-cost assignment of min(N, G) pairs. Among equal-cost optima the
/// lexicographically smallest pair list wins, established by fixing pairs
/// greedily: for each prediction in order, the smallest ground truth that
/// keeps the optimal total reachable.
pub fn hungarian_match(cost: &Tensor) -> Result<MatchResult> {
    let shape = cost.shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::Dimension {
            op: "hungarian_match",
            lhs: shape,
            rhs: vec![0, 0],
        });
    }
    let (n, g) = (shape[0], shape[1]);
    let data = cost.to_vec();
    if data.iter().any(|x| !x.is_finite()) {
        return Err(Error::Parameter(
            "hungarian_match requires a finite cost matrix".to_string(),
        ));
    }
    let matrix: Vec<Vec<f64>> = (0..n).map(|i| data[i * g..(i + 1) * g].to_vec()).collect();

    let mut skip_rows = vec![false; n];
    let mut skip_cols = vec![false; g];
    let optimum = best_total(&matrix, &skip_rows, &skip_cols);
    let scale = 1.0f64.max(optimum.abs());
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * scale;

    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    let mut fixed_cost = 0.0;
    let want = n.min(g);
    for p in 0..n {
        if pairs.len() == want {
            unmatched.push(p);
            continue;
        }
        skip_rows[p] = true;
        let mut chosen = None;
        for q in 0..g {
            if skip_cols[q] {
                continue;
            }
            skip_cols[q] = true;
            let rest = best_total(&matrix, &skip_rows, &skip_cols);
            skip_cols[q] = false;
            if close(fixed_cost + matrix[p][q] + rest, optimum) {
                chosen = Some(q);
                break;
            }
        }
        match chosen {
            Some(q) => {
                skip_cols[q] = true;
                fixed_cost += matrix[p][q];
                pairs.push((p, q));
            }
            None => {
                // Every optimum leaves this prediction out; confirm the
                // remaining rows still reach it.
                let rest = best_total(&matrix, &skip_rows, &skip_cols);
                debug_assert!(close(fixed_cost + rest, optimum));
                unmatched.push(p);
            }
        }
    }
    Ok(MatchResult {
        pairs,
        unmatched_predictions: unmatched,
    })
}
