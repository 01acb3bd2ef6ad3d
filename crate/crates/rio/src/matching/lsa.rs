//! Minimum-cost linear sum assignment (Munkres) for rectangular matrices.
//!
//! Shortest-augmenting-path formulation with dual potentials, O(n³). The
//! rectangular case is padded to square with a constant sentinel cost, which
//! leaves the optimal real-pair subset unchanged (every padded row pays the
//! same constant wherever it lands).

use nalgebra::DMatrix;

/// Solves the assignment problem on `cost`, returning exactly
/// `min(rows, cols)` pairs `(row, col)` sorted by row index.
pub fn lsa_solve(cost: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (r, c) = cost.shape();
    if r == 0 || c == 0 {
        return Vec::new();
    }
    if r > c {
        let t = cost.transpose();
        let mut pairs: Vec<(usize, usize)> = solve_wide(&t)
            .into_iter()
            .map(|(row, col)| (col, row))
            .collect();
        pairs.sort_unstable();
        return pairs;
    }
    solve_wide(cost)
}

/// `rows <= cols`; conceptually pads to a square matrix with sentinel rows.
fn solve_wide(cost: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let (rows, n) = cost.shape();
    let sentinel = cost.iter().fold(0.0f64, |m, &v| m.max(v.abs())) + 1.0;
    let at = |i: usize, j: usize| -> f64 {
        // 1-indexed; rows beyond the real matrix are sentinel padding.
        if i <= rows {
            cost[(i - 1, j - 1)]
        } else {
            sentinel
        }
    };

    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut assigned_row = vec![0usize; n + 1]; // column -> row, 0 = free
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
                    let cur = at(i0, j) - u[i0] - v[j];
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
        // Augment along the alternating path.
        loop {
            let j1 = way[j0];
            assigned_row[j0] = assigned_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs = Vec::with_capacity(rows);
    for j in 1..=n {
        let i = assigned_row[j];
        if (1..=rows).contains(&i) {
            pairs.push((i - 1, j - 1));
        }
    }
    pairs.sort_unstable();
    pairs
}

#[cfg(test)]
pub(crate) fn brute_force(cost: &DMatrix<f64>) -> (f64, Vec<(usize, usize)>) {
    // Exhaustive search over all injections of the smaller dimension into the
    // larger one. Exponential; oracle use only.
    let (r, c) = cost.shape();
    if r > c {
        let (total, pairs) = brute_force(&cost.transpose());
        let mut swapped: Vec<(usize, usize)> = pairs.into_iter().map(|(a, b)| (b, a)).collect();
        swapped.sort_unstable();
        return (total, swapped);
    }
    fn rec(
        cost: &DMatrix<f64>,
        row: usize,
        used: &mut Vec<bool>,
        current: &mut Vec<(usize, usize)>,
        acc: f64,
        best: &mut (f64, Vec<(usize, usize)>),
    ) {
        let (r, c) = cost.shape();
        if row == r {
            if acc < best.0 {
                *best = (acc, current.clone());
            }
            return;
        }
        for j in 0..c {
            if !used[j] {
                used[j] = true;
                current.push((row, j));
                rec(cost, row + 1, used, current, acc + cost[(row, j)], best);
                current.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    let mut used = vec![false; c];
    rec(cost, 0, &mut used, &mut Vec::new(), 0.0, &mut best);
    best.1.sort_unstable();
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_matrix(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(0.0..10.0))
    }

    #[test]
    fn known_3x3() {
        // Classic example: optimum picks the anti-diagonal.
        let cost = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        let pairs = lsa_solve(&cost);
        assert_eq!(pairs, vec![(0, 1), (1, 0), (2, 2)]);
    }

    #[test]
    fn matches_brute_force_square_and_rectangular() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for trial in 0..200 {
            let r = rng.random_range(1..=5);
            let c = rng.random_range(1..=5);
            let cost = random_matrix(&mut rng, r, c);
            let pairs = lsa_solve(&cost);
            let (best_total, best_pairs) = brute_force(&cost);
            assert_eq!(pairs.len(), r.min(c), "trial {trial}");
            let total: f64 = pairs.iter().map(|&(i, j)| cost[(i, j)]).sum();
            assert_eq!(pairs, best_pairs, "trial {trial}: {cost}");
            assert!((total - best_total).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_and_degenerate() {
        assert!(lsa_solve(&DMatrix::zeros(0, 4)).is_empty());
        assert!(lsa_solve(&DMatrix::zeros(3, 0)).is_empty());
        let one = DMatrix::from_row_slice(1, 1, &[2.5]);
        assert_eq!(lsa_solve(&one), vec![(0, 0)]);
    }

    #[test]
    fn one_row_picks_min() {
        let cost = DMatrix::from_row_slice(1, 4, &[3.0, 0.5, 2.0, 1.0]);
        assert_eq!(lsa_solve(&cost), vec![(0, 1)]);
        // One column: the cheapest row wins.
        let tall = DMatrix::from_row_slice(4, 1, &[3.0, 0.5, 2.0, 1.0]);
        assert_eq!(lsa_solve(&tall), vec![(1, 0)]);
    }
}
