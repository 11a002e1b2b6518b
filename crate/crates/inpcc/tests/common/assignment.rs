//! Brute-force assignment oracle: enumerates every maximal one-to-one
//! assignment of rows to columns and keeps the cheapest, breaking cost ties
//! by the lexicographically smallest pair list. Exponential, fine up to 6×6.

/// Returns (minimum total cost, pairs sorted by row index).
pub fn brute_force(cost: &[Vec<f64>]) -> (f64, Vec<(usize, usize)>) {
    let n = cost.len();
    let g = if n == 0 { 0 } else { cost[0].len() };
    let size = n.min(g);
    let mut best_cost = f64::INFINITY;
    let mut best_pairs: Vec<(usize, usize)> = Vec::new();
    let mut current: Vec<(usize, usize)> = Vec::new();
    let mut used_cols = vec![false; g];

    // Rows are visited in increasing order; a row may be skipped only when
    // more rows remain than assignments still needed.
    fn recurse(
        cost: &[Vec<f64>],
        row: usize,
        remaining: usize,
        acc: f64,
        current: &mut Vec<(usize, usize)>,
        used_cols: &mut [bool],
        best_cost: &mut f64,
        best_pairs: &mut Vec<(usize, usize)>,
    ) {
        let n = cost.len();
        if remaining == 0 {
            if acc < *best_cost - 1e-12
                || ((acc - *best_cost).abs() <= 1e-12 && current[..] < best_pairs[..])
            {
                *best_cost = acc;
                *best_pairs = current.clone();
            }
            return;
        }
        if row >= n || n - row < remaining {
            return;
        }
        for col in 0..used_cols.len() {
            if !used_cols[col] {
                used_cols[col] = true;
                current.push((row, col));
                recurse(
                    cost,
                    row + 1,
                    remaining - 1,
                    acc + cost[row][col],
                    current,
                    used_cols,
                    best_cost,
                    best_pairs,
                );
                current.pop();
                used_cols[col] = false;
            }
        }
        if n - row > remaining {
            recurse(
                cost,
                row + 1,
                remaining,
                acc,
                current,
                used_cols,
                best_cost,
                best_pairs,
            );
        }
    }

    if size > 0 {
        best_pairs = vec![(usize::MAX, usize::MAX); size];
        recurse(
            cost,
            0,
            size,
            0.0,
            &mut current,
            &mut used_cols,
            &mut best_cost,
            &mut best_pairs,
        );
    } else {
        best_cost = 0.0;
    }
    (best_cost, best_pairs)
}
