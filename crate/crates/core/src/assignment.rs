//! Dense linear assignment by shortest augmenting paths (Jonker-Volgenant
//! style, with row and column potentials). `O(n^3)` worst case.

use ndarray::Array2;

use crate::error::{Error, Result};

/// Minimum-cost perfect matching on a square cost matrix. Returns
/// `col_for_row` with `col_for_row[i]` the column assigned to row `i`.
pub fn solve(cost: &Array2<f64>) -> Result<Vec<usize>> {
    let (n, m) = cost.dim();
    if n != m {
        return Err(Error::Shape {
            context: "assignment cost matrix",
            expected: (n, n),
            found: (n, m),
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("assignment cost matrix"));
    }

    const NONE: usize = usize::MAX;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut col_for_row = vec![NONE; n];
    let mut row_for_col = vec![NONE; n];
    let mut shortest = vec![f64::INFINITY; n];
    let mut path = vec![NONE; n];
    let mut scanned_rows = vec![false; n];
    let mut scanned_cols = vec![false; n];
    let mut remaining = vec![0usize; n];

    for cur_row in 0..n {
        // Dijkstra over reduced costs from `cur_row` to the nearest free column.
        shortest.fill(f64::INFINITY);
        path.fill(NONE);
        scanned_rows.fill(false);
        scanned_cols.fill(false);
        for (it, r) in remaining.iter_mut().enumerate() {
            *r = n - it - 1;
        }
        let mut num_remaining = n;
        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink = loop {
            scanned_rows[i] = true;
            let mut lowest = f64::INFINITY;
            let mut index = NONE;
            for it in 0..num_remaining {
                let j = remaining[it];
                let r = min_val + cost[[i, j]] - u[i] - v[j];
                if r < shortest[j] {
                    path[j] = i;
                    shortest[j] = r;
                }
                if shortest[j] < lowest || (shortest[j] == lowest && row_for_col[j] == NONE) {
                    lowest = shortest[j];
                    index = it;
                }
            }
            if index == NONE {
                return Err(Error::Invariant("assignment problem is infeasible".into()));
            }
            min_val = lowest;
            let j = remaining[index];
            scanned_cols[j] = true;
            num_remaining -= 1;
            remaining[index] = remaining[num_remaining];
            if row_for_col[j] == NONE {
                break j;
            }
            i = row_for_col[j];
        };

        u[cur_row] += min_val;
        for r in 0..n {
            if scanned_rows[r] && r != cur_row {
                u[r] += min_val - shortest[col_for_row[r]];
            }
        }
        for c in 0..n {
            if scanned_cols[c] {
                v[c] -= min_val - shortest[c];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row_for_col[j] = r;
            std::mem::swap(&mut col_for_row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }
    Ok(col_for_row)
}

/// Total cost of an assignment.
pub fn assignment_cost(cost: &Array2<f64>, col_for_row: &[usize]) -> f64 {
    col_for_row.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum()
}
