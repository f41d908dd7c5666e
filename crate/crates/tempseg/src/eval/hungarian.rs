//! Minimum-cost perfect assignment (Kuhn-Munkres with potentials).

use ndarray::Array2;

/// Returns, for each row, its assigned column. `cost` must be square.
/// `O(n^3)`; fully deterministic, scanning columns in ascending order so
/// equal-cost solutions always resolve the same way.
pub fn min_cost_assignment(cost: &Array2<i64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "cost matrix must be square");
    if n == 0 {
        return Vec::new();
    }
    const NONE: usize = usize::MAX;
    let virt = n; // virtual column that hosts the row being inserted
    let mut u = vec![0i64; n]; // row potentials
    let mut v = vec![0i64; n + 1]; // column potentials
    let mut matched = vec![NONE; n + 1]; // matched[j] = row on column j
    let mut way = vec![0usize; n + 1];

    for row in 0..n {
        matched[virt] = row;
        let mut j0 = virt;
        let mut minv = vec![i64::MAX; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched[j0];
            let mut delta = i64::MAX;
            let mut j1 = virt;
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let reduced = cost[[i0, j]] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            debug_assert!(delta < i64::MAX, "some unused column must remain");
            for j in 0..=n {
                if used[j] {
                    u[matched[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched[j0] == NONE {
                break;
            }
        }
        // Augment along the alternating path back to the virtual column.
        while j0 != virt {
            let j1 = way[j0];
            matched[j0] = matched[j1];
            j0 = j1;
        }
    }

    let mut result = vec![NONE; n];
    for j in 0..n {
        if matched[j] != NONE {
            result[matched[j]] = j;
        }
    }
    debug_assert!(result.iter().all(|&j| j != NONE));
    result
}
