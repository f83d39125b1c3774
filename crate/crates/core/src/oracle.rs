//! Exact linear assignment, used only to verify the entropic solver on small
//! square instances.

use crate::cost::CostMatrix;
use crate::error::{Error, Result};
use crate::sinkhorn::CorrespondenceSet;

pub const EXACT_LIMIT: usize = 64;
pub const EXHAUSTIVE_LIMIT: usize = 8;

fn check_square(cost: &CostMatrix, limit: usize) -> Result<usize> {
    let (rows, cols) = (cost.nrows(), cost.ncols());
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    if rows > limit {
        return Err(Error::OracleTooLarge { n: rows, limit });
    }
    Ok(rows)
}

/// Minimum-cost perfect matching via the Hungarian method (shortest
/// augmenting paths with dual potentials). Returns the permutation and its
/// total cost.
pub fn exact_assignment(cost: &CostMatrix) -> Result<(CorrespondenceSet, f64)> {
    let n = check_square(cost, EXACT_LIMIT)?;
    if n == 0 {
        return Ok((CorrespondenceSet::new(Vec::new()), 0.0));
    }
    // 1-based bookkeeping; column 0 is the virtual root of each search
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        row_of_col[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let i0 = row_of_col[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = col0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
            if row_of_col[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            row_of_col[col0] = row_of_col[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }

    let mut target = vec![0usize; n];
    for j in 1..=n {
        target[row_of_col[j] - 1] = j - 1;
    }
    let corr = CorrespondenceSet::new(target);
    let total = corr.total_cost(cost);
    Ok((corr, total))
}

/// Brute-force minimum over all `n!` permutations (n <= 8). Among equal-cost
/// permutations the lexicographically first wins.
pub fn exhaustive_assignment(cost: &CostMatrix) -> Result<(CorrespondenceSet, f64)> {
    let n = check_square(cost, EXHAUSTIVE_LIMIT)?;
    let mut best: Option<(Vec<usize>, f64)> = None;
    for_each_permutation(n, |perm| {
        let total: f64 = perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum();
        if best.as_ref().is_none_or(|(_, b)| total < *b) {
            best = Some((perm.to_vec(), total));
        }
    });
    let (perm, total) = best.unwrap_or((Vec::new(), 0.0));
    Ok((CorrespondenceSet::new(perm), total))
}

/// All permutation costs sorted ascending; useful for checking optimum
/// uniqueness in tests.
pub fn all_assignment_costs(cost: &CostMatrix) -> Result<Vec<f64>> {
    let n = check_square(cost, EXHAUSTIVE_LIMIT)?;
    let mut out = Vec::new();
    for_each_permutation(n, |perm| {
        out.push(perm.iter().enumerate().map(|(i, &j)| cost.get(i, j)).sum());
    });
    out.sort_by(f64::total_cmp);
    Ok(out)
}

/// Visits permutations of `0..n` in lexicographic order.
fn for_each_permutation(n: usize, mut visit: impl FnMut(&[usize])) {
    let mut perm: Vec<usize> = (0..n).collect();
    loop {
        visit(&perm);
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| perm[i - 1] < perm[i]) else {
            return;
        };
        let j = (i..n).rev().find(|&j| perm[j] > perm[i - 1]).unwrap();
        perm.swap(i - 1, j);
        perm[i..].reverse();
    }
}
