//! Brute-force oracles and small problem builders shared by the integration tests.
#![allow(dead_code)]

use penlink_core::comparison::{
    aggregate_patterns, CandidatePairSet, ComparisonPattern, Comparisons,
};
use penlink_core::mixture::MixtureParams;

/// Every partial one-to-one matching using only `admissible` pairs.
pub fn partial_matchings(
    n_a: usize,
    n_b: usize,
    admissible: &[(usize, usize)],
) -> Vec<Vec<(usize, usize)>> {
    fn walk(
        a: usize,
        n_a: usize,
        admissible: &[(usize, usize)],
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if a == n_a {
            out.push(cur.clone());
            return;
        }
        walk(a + 1, n_a, admissible, used, cur, out);
        for &(x, b) in admissible {
            if x == a && !used[b] {
                used[b] = true;
                cur.push((a, b));
                walk(a + 1, n_a, admissible, used, cur, out);
                cur.pop();
                used[b] = false;
            }
        }
    }
    let mut out = Vec::new();
    walk(
        0,
        n_a,
        admissible,
        &mut vec![false; n_b],
        &mut Vec::new(),
        &mut out,
    );
    out
}

/// Best complete assignment value of a rectangular matrix by exhaustive
/// search over injections of the smaller side into the larger.
pub fn brute_lsap(w: &[Vec<f64>]) -> f64 {
    let (r, c) = (w.len(), w.first().map_or(0, Vec::len));
    if r == 0 || c == 0 {
        return 0.0;
    }
    let m: Vec<Vec<f64>> = if r <= c {
        w.to_vec()
    } else {
        (0..c).map(|j| (0..r).map(|i| w[i][j]).collect()).collect()
    };
    fn walk(m: &[Vec<f64>], row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        if row == m.len() {
            *best = best.max(acc);
            return;
        }
        for col in 0..used.len() {
            if !used[col] {
                used[col] = true;
                walk(m, row + 1, used, acc + m[row][col], best);
                used[col] = false;
            }
        }
    }
    let mut best = f64::NEG_INFINITY;
    walk(&m, 0, &mut vec![false; m[0].len()], 0.0, &mut best);
    best
}

/// Best value of `sum C (w - theta)` over all partial matchings.
pub fn brute_thresholded(w: &[Vec<f64>], theta: f64) -> f64 {
    let (r, c) = (w.len(), w.first().map_or(0, Vec::len));
    let all: Vec<(usize, usize)> = (0..r).flat_map(|i| (0..c).map(move |j| (i, j))).collect();
    partial_matchings(r, c, &all)
        .into_iter()
        .map(|m| m.iter().map(|&(i, j)| w[i][j] - theta).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Comparisons over the full cross product, one field whose level for the
/// pair `(a, b)` is `a * n_b + b + 1`. Every pair thus has its own pattern.
pub fn distinct_pattern_problem(n_a: usize, n_b: usize) -> Comparisons {
    let pairs: Vec<(usize, usize)> = (0..n_a)
        .flat_map(|a| (0..n_b).map(move |b| (a, b)))
        .collect();
    let levels = n_a * n_b;
    let patterns: Vec<ComparisonPattern> = pairs
        .iter()
        .map(|&(a, b)| ComparisonPattern::new(vec![(a * n_b + b + 1) as u8]))
        .collect();
    let set = CandidatePairSet {
        n_a,
        n_b,
        pairs,
        groups: Vec::new(),
    };
    let (table, idx) = aggregate_patterns(&[levels], &set, &patterns).unwrap();
    Comparisons::new(set, idx, table).unwrap()
}

/// Parameters for [`distinct_pattern_problem`] with u uniform and m
/// proportional to `exp(w)`. Realized weights differ from `weights` by a
/// constant; read them back with `pair_weights`.
pub fn params_for_weights(weights: &[f64]) -> MixtureParams {
    let k = weights.len();
    let m_raw: Vec<f64> = weights.iter().map(|w| w.exp()).collect();
    let s: f64 = m_raw.iter().sum();
    let m = m_raw.iter().map(|x| x / s).collect();
    MixtureParams::new(vec![m], vec![vec![1.0 / k as f64; k]], 0.1).unwrap()
}
