//! Exact square assignment solver.
//!
//! [`solve_max`] maximizes the total utility of a row-to-column matching in
//! O(n^3) using the potentials form of the Hungarian method, then canonizes
//! the answer: among all optimal matchings (utility ties happen, e.g. with
//! duplicated columns) it returns the lexicographically smallest row-to-
//! column map. Canonization works on the graph of reduced-cost-tight edges,
//! where every perfect matching is optimal by complementary slackness.

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LapSolution {
    /// Column assigned to each row.
    pub row_to_col: Vec<usize>,
    /// Total utility of the matching.
    pub total: f64,
}

/// Maximum-total-utility perfect matching on a square matrix.
pub fn solve_max(utility: &Array2<f64>) -> Result<LapSolution> {
    let (rows, cols) = utility.dim();
    if rows != cols {
        return Err(Error::Shape(format!("utility matrix must be square, got {} x {}", rows, cols)));
    }
    if utility.iter().any(|u| !u.is_finite()) {
        return Err(Error::invalid("utility", "all entries must be finite"));
    }
    let n = rows;
    if n == 0 {
        return Ok(LapSolution { row_to_col: vec![], total: 0.0 });
    }

    // Maximization as minimization against the largest entry keeps all
    // costs non-negative.
    let top = utility.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let cost = utility.mapv(|u| top - u);

    let (col_to_row, row_pot, col_pot) = min_cost_matching(&cost);

    // Tight edges: reduced cost numerically zero under the optimal duals.
    let scale = cost.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let tol = 1e-9 * (1.0 + scale);
    let mut tight: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if cost[[i, j]] - row_pot[i] - col_pot[j] <= tol {
                tight[i].push(j);
            }
        }
    }
    let row_to_col = lex_smallest_perfect_matching(&tight, &col_to_row);
    let total = row_to_col.iter().enumerate().map(|(i, j)| utility[[i, *j]]).sum();
    Ok(LapSolution { row_to_col, total })
}

/// Potentials-based Hungarian method on a square cost matrix. Returns the
/// matching as `col -> row` plus the final dual potentials.
fn min_cost_matching(cost: &Array2<f64>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.nrows();
    const FREE: usize = usize::MAX;
    let mut row_pot = vec![0.0f64; n];
    let mut col_pot = vec![0.0f64; n + 1];
    // Index n is the virtual start column of each augmenting search.
    let mut col_to_row = vec![FREE; n + 1];
    let mut way = vec![n; n + 1];

    for i in 0..n {
        col_to_row[n] = i;
        let mut j0 = n;
        let mut min_slack = vec![f64::INFINITY; n];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_to_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = n;
            for j in 0..n {
                if used[j] {
                    continue;
                }
                let slack = cost[[i0, j]] - row_pot[i0] - col_pot[j];
                if slack < min_slack[j] {
                    min_slack[j] = slack;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    row_pot[col_to_row[j]] += delta;
                    col_pot[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if col_to_row[j0] == FREE {
                break;
            }
        }
        // Walk the alternating path back, flipping matched edges.
        while j0 != n {
            let j1 = way[j0];
            col_to_row[j0] = col_to_row[j1];
            j0 = j1;
        }
    }
    col_pot.truncate(n);
    col_to_row.truncate(n);
    (col_to_row, row_pot, col_pot)
}

/// Greedy row-by-row canonization: fix the smallest tight column for each
/// row that still leaves the remaining rows perfectly matchable. Starts
/// from a known perfect matching and repairs it with single augmenting
/// searches, so each probe is linear in the number of tight edges.
fn lex_smallest_perfect_matching(tight: &[Vec<usize>], col_to_row: &[usize]) -> Vec<usize> {
    let n = tight.len();
    const FREE: usize = usize::MAX;
    let mut col_match = col_to_row.to_vec();
    let mut row_match = vec![FREE; n];
    for (j, i) in col_match.iter().enumerate() {
        row_match[*i] = j;
    }
    for i in 0..n {
        let current = row_match[i];
        for &j in &tight[i] {
            if j == current {
                break;
            }
            // Try to steal column j from its current row and re-augment
            // that row elsewhere; rows < i and their columns are frozen.
            let displaced = col_match[j];
            if displaced < i {
                continue;
            }
            row_match[i] = j;
            col_match[j] = i;
            row_match[displaced] = FREE;
            col_match[current] = FREE;
            let mut visited = vec![false; n];
            visited[j] = true;
            if augment(displaced, tight, &mut col_match, &mut row_match, &mut visited, i) {
                break;
            }
            // Revert and try the next candidate column.
            row_match[displaced] = j;
            col_match[j] = displaced;
            row_match[i] = current;
            col_match[current] = i;
        }
    }
    row_match
}

fn augment(
    row: usize,
    tight: &[Vec<usize>],
    col_match: &mut [usize],
    row_match: &mut [usize],
    visited: &mut [bool],
    frozen_below: usize,
) -> bool {
    const FREE: usize = usize::MAX;
    for &j in &tight[row] {
        if visited[j] {
            continue;
        }
        let owner = col_match[j];
        if owner != FREE && owner <= frozen_below {
            continue;
        }
        visited[j] = true;
        if owner == FREE || augment(owner, tight, col_match, row_match, visited, frozen_below) {
            col_match[j] = row;
            row_match[row] = j;
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Exhaustive maximum over all permutations; first-seen maximum in
    /// lexicographic enumeration order, hence lexicographically smallest.
    fn brute_force(utility: &Array2<f64>) -> (Vec<usize>, f64) {
        let n = utility.nrows();
        let mut used = vec![false; n];
        let mut current = Vec::with_capacity(n);
        let mut best_perm = Vec::new();
        let mut best = f64::NEG_INFINITY;
        descend(utility, &mut used, &mut current, 0.0, &mut best, &mut best_perm);
        (best_perm, best)
    }

    fn descend(
        utility: &Array2<f64>,
        used: &mut [bool],
        current: &mut Vec<usize>,
        partial: f64,
        best: &mut f64,
        best_perm: &mut Vec<usize>,
    ) {
        let n = used.len();
        if current.len() == n {
            if partial > *best {
                *best = partial;
                best_perm.clone_from(current);
            }
            return;
        }
        let row = current.len();
        for col in 0..n {
            if used[col] {
                continue;
            }
            used[col] = true;
            current.push(col);
            descend(utility, used, current, partial + utility[[row, col]], best, best_perm);
            current.pop();
            used[col] = false;
        }
    }

    #[test]
    fn two_by_two_prefers_the_anti_diagonal() {
        let solution = solve_max(&arr2(&[[1.0, 2.0], [2.0, 1.0]])).unwrap();
        assert_eq!(solution.row_to_col, vec![1, 0]);
        assert_eq!(solution.total, 4.0);
    }

    #[test]
    fn identity_utility_maps_identically() {
        let n = 5;
        let eye = Array2::from_shape_fn((n, n), |(i, j)| if i == j { 1.0 } else { 0.0 });
        let solution = solve_max(&eye).unwrap();
        assert_eq!(solution.row_to_col, (0..n).collect::<Vec<_>>());
        assert_eq!(solution.total, n as f64);
    }

    #[test]
    fn all_ties_resolve_to_the_identity() {
        let flat = Array2::from_elem((4, 4), 3.5);
        let solution = solve_max(&flat).unwrap();
        assert_eq!(solution.row_to_col, vec![0, 1, 2, 3]);
    }

    #[test]
    fn duplicated_columns_pick_the_lowest_indices() {
        // Columns 1 and 2 are identical; the optimum must use both but the
        // canonical answer pairs row 0 with the smaller index.
        let utility = arr2(&[[5.0, 9.0, 9.0], [1.0, 8.0, 8.0], [9.0, 2.0, 2.0]]);
        let solution = solve_max(&utility).unwrap();
        assert_eq!(solution.row_to_col, vec![1, 2, 0]);
        assert_eq!(solution.total, 26.0);
    }

    #[test]
    fn rejects_non_square_input() {
        let err = solve_max(&Array2::zeros((2, 3))).unwrap_err();
        assert!(err.to_string().contains("square"));
    }

    #[test]
    fn empty_matrix_yields_empty_matching() {
        let solution = solve_max(&Array2::zeros((0, 0))).unwrap();
        assert!(solution.row_to_col.is_empty());
        assert_eq!(solution.total, 0.0);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for round in 0..60 {
            let n = 1 + round % 6;
            let m = Array2::from_shape_fn((n, n), |_| rng.random_range(-10.0..10.0));
            let fast = solve_max(&m).unwrap();
            let (slow_perm, slow_total) = brute_force(&m);
            assert_eq!(fast.total, slow_total, "round {}", round);
            assert_eq!(fast.row_to_col, slow_perm, "round {}", round);
        }
    }

    #[test]
    fn matches_brute_force_on_tied_integer_matrices() {
        // Integer entries force plenty of exact ties; the canonical answer
        // must still agree with lexicographic brute force.
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for round in 0..60 {
            let n = 2 + round % 5;
            let m = Array2::from_shape_fn((n, n), |_| rng.random_range(0..4) as f64);
            let fast = solve_max(&m).unwrap();
            let (slow_perm, slow_total) = brute_force(&m);
            assert_eq!(fast.total, slow_total, "round {}", round);
            assert_eq!(fast.row_to_col, slow_perm, "round {} matrix {:?}", round, m);
        }
    }
}
