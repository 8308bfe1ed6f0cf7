//! Maximum-weight linear sum assignment.
//!
//! Dense shortest-augmenting-path solver with row and column potentials, run
//! on negated weights so that it minimizes cost. Rectangular problems are
//! transposed internally so that rows never outnumber columns. During each
//! shortest-path search ties resolve toward the lowest column index, which
//! makes the returned assignment deterministic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of finite weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::InvalidParams(format!(
                "{} entries for a {n_rows} x {n_cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParams(
                "weight matrix entries must be finite".into(),
            ));
        }
        Ok(WeightMatrix {
            n_rows,
            n_cols,
            data,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::InvalidParams("ragged weight matrix".into()));
        }
        Self::new(rows.len(), n_cols, rows.concat())
    }

    pub fn filled(n_rows: usize, n_cols: usize, value: f64) -> Self {
        WeightMatrix {
            n_rows,
            n_cols,
            data: vec![value; n_rows * n_cols],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    /// Panics if `value` is not finite.
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        assert!(value.is_finite(), "weight matrix entries must be finite");
        self.data[row * self.n_cols + col] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.n_rows,
            self.n_cols,
            self.data.iter().map(|&w| f(w)).collect(),
        )
    }

    fn is_empty(&self) -> bool {
        self.n_rows == 0 || self.n_cols == 0
    }
}

/// A one-to-one set of `(row, col)` links sorted by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub pairs: Vec<(usize, usize)>,
    pub objective: f64,
}

impl Assignment {
    pub fn empty() -> Self {
        Assignment {
            pairs: Vec::new(),
            objective: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn row_to_col(&self, n_rows: usize) -> Vec<Option<usize>> {
        let mut map = vec![None; n_rows];
        for &(r, c) in &self.pairs {
            map[r] = Some(c);
        }
        map
    }
}

/// Starting matching and column prices for a later solve, stored in the
/// solver's internal (rows <= columns) orientation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverHint {
    n_rows: usize,
    n_cols: usize,
    /// internal row -> internal column
    seed: Vec<Option<usize>>,
    col_prices: Vec<f64>,
}

impl SolverHint {
    pub fn is_empty(&self) -> bool {
        self.seed.iter().all(Option::is_none)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub assignment: Assignment,
    /// Number of shortest augmenting path searches that were run.
    pub augmentations: usize,
    hint: SolverHint,
}

/// A hint that reproduces `previous`'s matching and prices. Hints whose
/// dimensions do not match the next matrix are ignored by the solver.
pub fn warm_start_hint(previous: &Solution) -> SolverHint {
    previous.hint.clone()
}

pub fn solve_lsap(w: &WeightMatrix) -> Assignment {
    solve_lsap_with_hint(w, None).assignment
}

/// Maximum-weight assignment covering the smaller side completely.
pub fn solve_lsap_with_hint(w: &WeightMatrix, hint: Option<&SolverHint>) -> Solution {
    if w.is_empty() {
        return Solution {
            assignment: Assignment::empty(),
            augmentations: 0,
            hint: SolverHint::default(),
        };
    }
    let transposed = w.n_rows > w.n_cols;
    let (n, m) = if transposed {
        (w.n_cols, w.n_rows)
    } else {
        (w.n_rows, w.n_cols)
    };
    let cost = |i: usize, j: usize| -> f64 {
        if transposed {
            -w.get(j, i)
        } else {
            -w.get(i, j)
        }
    };
    let hint = hint.filter(|h| h.n_rows == w.n_rows && h.n_cols == w.n_cols && !h.is_empty());

    // 1-based rows and columns; column 0 is the search root.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];

    if let Some(h) = hint {
        for &c in h.seed.iter().flatten() {
            v[c + 1] = h.col_prices[c].min(0.0);
        }
        // Columns left unmatched must have zero price, and zeroing one can
        // make another seeded row lose tightness, so repeat until stable.
        loop {
            p.iter_mut().for_each(|x| *x = 0);
            for (i, &c) in h.seed.iter().enumerate() {
                let Some(c) = c else { continue };
                let best = (0..m)
                    .map(|j| cost(i, j) - v[j + 1])
                    .fold(f64::INFINITY, f64::min);
                let slack = cost(i, c) - v[c + 1] - best;
                if slack <= 1e-9 * (1.0 + best.abs()) && p[c + 1] == 0 {
                    u[i + 1] = best;
                    p[c + 1] = i + 1;
                } else {
                    u[i + 1] = 0.0;
                }
            }
            let mut changed = false;
            for j in 1..=m {
                if p[j] == 0 && v[j] != 0.0 {
                    v[j] = 0.0;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
    }

    let mut matched_rows = vec![false; n + 1];
    for j in 1..=m {
        matched_rows[p[j]] = true;
    }

    let mut minv = vec![f64::INFINITY; m + 1];
    let mut used = vec![false; m + 1];
    let mut augmentations = 0;
    for (i, &matched) in matched_rows.iter().enumerate().skip(1) {
        if matched {
            continue;
        }
        augmentations += 1;
        p[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|x| *x = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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

    let mut seed = vec![None; n];
    let mut pairs = Vec::with_capacity(n);
    for j in 1..=m {
        if p[j] != 0 {
            seed[p[j] - 1] = Some(j - 1);
            let (i, j) = (p[j] - 1, j - 1);
            pairs.push(if transposed { (j, i) } else { (i, j) });
        }
    }
    pairs.sort_unstable();
    let objective = pairs.iter().map(|&(r, c)| w.get(r, c)).sum();
    Solution {
        assignment: Assignment { pairs, objective },
        augmentations,
        hint: SolverHint {
            n_rows: w.n_rows,
            n_cols: w.n_cols,
            seed,
            col_prices: v[1..].to_vec(),
        },
    }
}

pub fn solve_thresholded(w: &WeightMatrix, theta: f64) -> Assignment {
    solve_thresholded_with_hint(w, theta, None).assignment
}

/// Maximizes `sum C_ab (w_ab - theta)` over partial one-to-one matchings.
///
/// Solves the complete assignment on `max(w - theta, 0)` and drops the links
/// whose soft-thresholded weight is zero. The objective is reported on the
/// `w - theta` scale.
pub fn solve_thresholded_with_hint(
    w: &WeightMatrix,
    theta: f64,
    hint: Option<&SolverHint>,
) -> Solution {
    let shrunk = WeightMatrix {
        n_rows: w.n_rows,
        n_cols: w.n_cols,
        data: w.data.iter().map(|&x| (x - theta).max(0.0)).collect(),
    };
    let mut sol = solve_lsap_with_hint(&shrunk, hint);
    sol.assignment
        .pairs
        .retain(|&(r, c)| shrunk.get(r, c) > 0.0);
    sol.assignment.objective = sol
        .assignment
        .pairs
        .iter()
        .map(|&(r, c)| w.get(r, c) - theta)
        .sum();
    sol
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_complete(w: &WeightMatrix) -> f64 {
        fn rec(w: &WeightMatrix, row: usize, used: &mut Vec<bool>, transposed: bool) -> f64 {
            let (n, m) = if transposed {
                (w.n_cols(), w.n_rows())
            } else {
                (w.n_rows(), w.n_cols())
            };
            if row == n {
                return 0.0;
            }
            let mut best = f64::NEG_INFINITY;
            for c in 0..m {
                if !used[c] {
                    used[c] = true;
                    let x = if transposed {
                        w.get(c, row)
                    } else {
                        w.get(row, c)
                    };
                    best = best.max(x + rec(w, row + 1, used, transposed));
                    used[c] = false;
                }
            }
            best
        }
        if w.is_empty() {
            return 0.0;
        }
        let transposed = w.n_rows() > w.n_cols();
        let m = w.n_rows().max(w.n_cols());
        rec(w, 0, &mut vec![false; m], transposed)
    }

    fn brute_partial(w: &WeightMatrix, theta: f64) -> f64 {
        fn rec(w: &WeightMatrix, theta: f64, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == w.n_rows() {
                return 0.0;
            }
            let mut best = rec(w, theta, row + 1, used);
            for c in 0..w.n_cols() {
                if !used[c] {
                    used[c] = true;
                    best = best.max(w.get(row, c) - theta + rec(w, theta, row + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        rec(w, theta, 0, &mut vec![false; w.n_cols()])
    }

    fn random_matrix(rng: &mut ChaCha8Rng, max_n: usize) -> WeightMatrix {
        let r = rng.random_range(1..=max_n);
        let c = rng.random_range(1..=max_n);
        let data = (0..r * c).map(|_| rng.random_range(-10.0..10.0)).collect();
        WeightMatrix::new(r, c, data).unwrap()
    }

    fn assert_injective(a: &Assignment) {
        let rows: std::collections::HashSet<_> = a.pairs.iter().map(|p| p.0).collect();
        let cols: std::collections::HashSet<_> = a.pairs.iter().map(|p| p.1).collect();
        assert_eq!(rows.len(), a.len());
        assert_eq!(cols.len(), a.len());
    }

    #[test]
    fn one_by_one() {
        let a = solve_lsap(&WeightMatrix::from_rows(&[vec![-3.5]]).unwrap());
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.objective, -3.5);
    }

    #[test]
    fn two_by_two() {
        let a = solve_lsap(&WeightMatrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 3.0]]).unwrap());
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.objective, 5.0);
    }

    #[test]
    fn two_by_three_and_transpose() {
        let w = WeightMatrix::from_rows(&[vec![5.0, 1.0, 0.0], vec![0.0, 6.0, 1.0]]).unwrap();
        let a = solve_lsap(&w);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.objective, 11.0);
        let t = WeightMatrix::from_rows(&[vec![5.0, 0.0], vec![1.0, 6.0], vec![0.0, 1.0]]).unwrap();
        let b = solve_lsap(&t);
        assert_eq!(b.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(b.objective, 11.0);
    }

    #[test]
    fn empty_matrix() {
        assert!(solve_lsap(&WeightMatrix::new(0, 4, vec![]).unwrap()).is_empty());
        assert!(solve_thresholded(&WeightMatrix::new(3, 0, vec![]).unwrap(), 1.0).is_empty());
    }

    #[test]
    fn rejects_non_finite() {
        assert!(WeightMatrix::new(1, 1, vec![f64::NAN]).is_err());
        assert!(WeightMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn threshold_above_everything() {
        let w = WeightMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 0.5]]).unwrap();
        let a = solve_thresholded(&w, 3.5);
        assert!(a.is_empty());
        assert_eq!(a.objective, 0.0);
    }

    #[test]
    fn thresholded_examples() {
        let w = WeightMatrix::from_rows(&[vec![5.0, 4.0], vec![4.0, -1.0]]).unwrap();
        let a = solve_thresholded(&w, 4.5);
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert!((a.objective - 0.5).abs() < 1e-12);
        assert!((brute_partial(&w, 4.5) - 0.5).abs() < 1e-12);

        let w = WeightMatrix::from_rows(&[vec![5.0, 4.6], vec![4.6, 5.0]]).unwrap();
        let a = solve_thresholded(&w, 4.0);
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert!((a.objective - 2.0).abs() < 1e-12);
        assert!((brute_partial(&w, 4.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn optimal_against_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..300 {
            let w = random_matrix(&mut rng, 6);
            let a = solve_lsap(&w);
            assert_injective(&a);
            assert_eq!(a.len(), w.n_rows().min(w.n_cols()));
            assert!((a.objective - brute_complete(&w)).abs() < 1e-9);
            let theta = rng.random_range(-5.0..8.0);
            let t = solve_thresholded(&w, theta);
            assert_injective(&t);
            assert!((t.objective - brute_partial(&w, theta)).abs() < 1e-9);
            assert!(t.pairs.iter().all(|&(r, c)| w.get(r, c) > theta));
        }
    }

    #[test]
    fn ties_break_deterministically() {
        let w = WeightMatrix::filled(3, 3, 1.0);
        let a = solve_lsap(&w);
        assert_eq!(a, solve_lsap(&w));
        assert_eq!(a.objective, 3.0);
    }

    #[test]
    fn warm_start_on_same_matrix_needs_no_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let w = random_matrix(&mut rng, 12);
            let cold = solve_lsap_with_hint(&w, None);
            let warm = solve_lsap_with_hint(&w, Some(&warm_start_hint(&cold)));
            assert!(warm.augmentations <= 1, "{}", warm.augmentations);
            assert!((warm.assignment.objective - cold.assignment.objective).abs() < 1e-9);
        }
    }

    #[test]
    fn warm_start_after_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let data: Vec<f64> = (0..2500).map(|_| rng.random_range(-10.0..10.0)).collect();
            let w = WeightMatrix::new(50, 50, data).unwrap();
            let first = solve_lsap_with_hint(&w, None);
            let mut w2 = w.clone();
            let (r, c) = (rng.random_range(0..50), rng.random_range(0..50));
            w2.set(r, c, rng.random_range(-10.0..10.0));
            let cold = solve_lsap(&w2);
            let warm = solve_lsap_with_hint(&w2, Some(&warm_start_hint(&first)));
            assert!((warm.assignment.objective - cold.objective).abs() < 1e-9);
            assert_injective(&warm.assignment);
        }
    }

    #[test]
    fn empty_or_mismatched_hint_is_cold_start() {
        let w = WeightMatrix::from_rows(&[vec![2.0, 0.0], vec![1.0, 3.0]]).unwrap();
        let empty = SolverHint::default();
        assert_eq!(
            solve_lsap_with_hint(&w, Some(&empty)).assignment,
            solve_lsap(&w)
        );
        let other = solve_lsap_with_hint(&WeightMatrix::filled(3, 2, 1.0), None);
        let sol = solve_lsap_with_hint(&w, Some(&warm_start_hint(&other)));
        assert_eq!(sol.augmentations, 2);
        assert_eq!(sol.assignment.objective, 5.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn shift_moves_objective_by_constant(seed in any::<u64>(), shift in -20.0f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_matrix(&mut rng, 6);
            let base = solve_lsap(&w);
            let shifted = solve_lsap(&w.map(|x| x + shift).unwrap());
            let k = w.n_rows().min(w.n_cols()) as f64;
            prop_assert!((shifted.objective - (base.objective + shift * k)).abs() < 1e-9);
            let resum: f64 = shifted.pairs.iter().map(|&(r, c)| w.get(r, c)).sum();
            prop_assert!((resum - base.objective).abs() < 1e-9);
        }
    }
}
