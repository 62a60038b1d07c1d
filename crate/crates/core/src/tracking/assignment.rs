//! Minimum-cost bipartite assignment (Hungarian method with potentials).

/// Solves the gated assignment problem for an `n×m` cost matrix.
///
/// Entries greater than `gate` are forbidden and never returned. Among all
/// one-to-one assignments the solver first maximizes the number of allowed
/// pairs, then minimizes their total cost. Pairs come back sorted by row.
pub fn hungarian_assign(cost: &[Vec<f64>], gate: f64) -> Vec<(usize, usize)> {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Vec::new();
    }
    debug_assert!(cost.iter().all(|row| row.len() == m), "ragged cost matrix");

    let allowed = |c: f64| c.is_finite() && c <= gate;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &c in cost.iter().flatten() {
        if allowed(c) {
            lo = lo.min(c);
            hi = hi.max(c);
        }
    }
    if !lo.is_finite() {
        return Vec::new();
    }

    // Shift allowed costs to [0, span] and price forbidden entries above any
    // possible difference between allowed totals.
    let k = n.min(m) as f64;
    let forbidden = (hi - lo) * k + 1.0;
    let transpose = n > m;
    let (rows, cols) = if transpose { (m, n) } else { (n, m) };
    let at = |r: usize, c: usize| -> f64 {
        let v = if transpose { cost[c][r] } else { cost[r][c] };
        if allowed(v) {
            v - lo
        } else {
            forbidden
        }
    };

    let col_of_row = solve_rows_le_cols(rows, cols, at);

    let mut pairs: Vec<(usize, usize)> = col_of_row
        .into_iter()
        .enumerate()
        .map(|(r, c)| if transpose { (c, r) } else { (r, c) })
        .filter(|&(r, c)| allowed(cost[r][c]))
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Dense Hungarian algorithm for `rows <= cols`; returns the column assigned
/// to each row.
fn solve_rows_le_cols(rows: usize, cols: usize, a: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-indexed potentials; index 0 is the virtual source column.
    let mut u = vec![0.0; rows + 1];
    let mut v = vec![0.0; cols + 1];
    let mut row_of_col = vec![0usize; cols + 1];
    let mut way = vec![0usize; cols + 1];

    for i in 1..=rows {
        row_of_col[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; cols + 1];
        let mut used = vec![false; cols + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=cols {
                if used[j] {
                    continue;
                }
                let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut col_of_row = vec![0usize; rows];
    for j in 1..=cols {
        if row_of_col[j] != 0 {
            col_of_row[row_of_col[j] - 1] = j - 1;
        }
    }
    col_of_row
}

/// Sum of costs over the given pairs.
pub fn assignment_cost(cost: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| cost[r][c]).sum()
}
