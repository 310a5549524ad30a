//! Minimum-cost one-to-one assignment (Hungarian algorithm with potentials,
//! O(n^2 m)). Costs of `f64::INFINITY` mark gated-out pairs: they never
//! appear in the result even if that leaves rows or columns unmatched.

/// Result of an assignment over an n x m cost matrix.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Assignment {
    /// Matched `(row, col)` pairs, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
    /// Total cost over matched pairs.
    pub total_cost: f64,
}

const BIG: f64 = 1e15;

/// Solve the rectangular assignment problem, minimizing total cost over
/// `min(n, m)` pairs (fewer when infinite costs exclude pairs).
pub fn hungarian(cost: &[Vec<f64>]) -> Assignment {
    let n = cost.len();
    let m = if n == 0 { 0 } else { cost[0].len() };
    if n == 0 || m == 0 {
        return Assignment {
            pairs: Vec::new(),
            unmatched_rows: (0..n).collect(),
            unmatched_cols: (0..m).collect(),
            total_cost: 0.0,
        };
    }
    debug_assert!(cost.iter().all(|r| r.len() == m), "ragged cost matrix");

    // The potentials formulation needs rows <= cols; transpose if needed.
    let transposed = n > m;
    let (rows, cols) = if transposed { (m, n) } else { (n, m) };
    let at = |r: usize, c: usize| -> f64 {
        let v = if transposed { cost[c][r] } else { cost[r][c] };
        if v.is_finite() {
            v
        } else {
            BIG
        }
    };

    // 1-indexed buffers; p[j] is the row matched to column j.
    let mut u = vec![0.0f64; rows + 1];
    let mut v = vec![0.0f64; cols + 1];
    let mut p = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];

    for i in 1..=rows {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
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
            for j in 0..=cols {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::new();
    let mut row_matched = vec![false; n];
    let mut col_matched = vec![false; m];
    let mut total = 0.0f64;
    for j in 1..=cols {
        if p[j] == 0 {
            continue;
        }
        let (row, col) = if transposed { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) };
        // Drop gated (infinite) pairs picked only to complete the matching.
        if !cost[row][col].is_finite() || cost[row][col] >= BIG {
            continue;
        }
        pairs.push((row, col));
        row_matched[row] = true;
        col_matched[col] = true;
        total += cost[row][col];
    }
    pairs.sort_unstable();

    Assignment {
        pairs,
        unmatched_rows: (0..n).filter(|&r| !row_matched[r]).collect(),
        unmatched_cols: (0..m).filter(|&c| !col_matched[c]).collect(),
        total_cost: total,
    }
}
