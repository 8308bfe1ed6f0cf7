//! Point estimates of the linkage structure.
//!
//! * [`fs_decide`]: the Fellegi-Sunter threshold rule with an indeterminate band.
//! * [`em_lsap_estimate`]: EM on the independent-pairs mixture, a complete
//!   assignment on the EM weights, then deletion of links with weight <= mu.
//! * [`penalized_likelihood_fit`]: alternating maximization of the joint
//!   log-likelihood in `(C, m, u)` with a cost `theta` per link.
//!
//! Candidate pairs are split into the connected components of the candidate
//! graph (the traditional blocks) and one assignment problem is solved per
//! component, in parallel.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{
    solve_lsap, solve_thresholded_with_hint, warm_start_hint, Assignment, SolverHint, WeightMatrix,
};
use crate::comparison::{CandidatePairSet, Comparisons};
use crate::dsu::DisjointSets;
use crate::error::{Error, Result};
use crate::matching::Matching;
use crate::mixture::{
    em_fit, floored_ln, weight_table, DirichletPrior, EmFit, EmOptions, MixtureParams, WeightTable,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    Link,
    NonLink,
    Indeterminate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsDecision {
    pub lambda: f64,
    pub mu: f64,
    pub decisions: Vec<Decision>,
}

/// `w > lambda` links, `w < mu` rejects, anything in `[mu, lambda]` is
/// indeterminate.
pub fn fs_decide(weights: &[f64], lambda: f64, mu: f64) -> Result<FsDecision> {
    if lambda < mu || lambda.is_nan() || mu.is_nan() {
        return Err(Error::ThresholdOrder { lambda, mu });
    }
    let decisions = weights
        .iter()
        .map(|&w| {
            if w > lambda {
                Decision::Link
            } else if w < mu {
                Decision::NonLink
            } else {
                Decision::Indeterminate
            }
        })
        .collect();
    Ok(FsDecision {
        lambda,
        mu,
        decisions,
    })
}

/// Weight of every candidate pair, in candidate order.
pub fn pair_weights(comparisons: &Comparisons, params: &MixtureParams) -> Result<Vec<f64>> {
    let table = weight_table(&comparisons.table, params)?;
    Ok(expand_weights(comparisons, &table))
}

pub fn expand_weights(comparisons: &Comparisons, table: &WeightTable) -> Vec<f64> {
    comparisons
        .pair_pattern
        .iter()
        .map(|&g| table.rows[g].weight)
        .collect()
}

/// One independent assignment subproblem: a connected component of the
/// candidate-pair graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairComponent {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    /// `(pair index, local row, local column)`.
    pub cells: Vec<(usize, usize, usize)>,
}

/// Splits candidate pairs into connected components, ordered by smallest
/// member of file A.
pub fn pair_components(pairs: &CandidatePairSet) -> Vec<PairComponent> {
    let n_a = pairs.n_a;
    let mut dsu = DisjointSets::new(n_a + pairs.n_b);
    for &(a, b) in &pairs.pairs {
        dsu.union(a, n_a + b);
    }
    let mut comp_of_root = vec![usize::MAX; n_a + pairs.n_b];
    let mut comps: Vec<PairComponent> = Vec::new();
    let mut local_a = vec![usize::MAX; n_a];
    let mut local_b = vec![usize::MAX; pairs.n_b];
    // Visiting A records in index order numbers components by smallest A member.
    let mut touched = vec![false; n_a + pairs.n_b];
    for &(a, b) in &pairs.pairs {
        touched[a] = true;
        touched[n_a + b] = true;
    }
    for node in 0..n_a + pairs.n_b {
        if !touched[node] {
            continue;
        }
        let root = dsu.find(node);
        if comp_of_root[root] == usize::MAX {
            comp_of_root[root] = comps.len();
            comps.push(PairComponent {
                a: Vec::new(),
                b: Vec::new(),
                cells: Vec::new(),
            });
        }
        let c = &mut comps[comp_of_root[root]];
        if node < n_a {
            local_a[node] = c.a.len();
            c.a.push(node);
        } else {
            local_b[node - n_a] = c.b.len();
            c.b.push(node - n_a);
        }
    }
    for (idx, &(a, b)) in pairs.pairs.iter().enumerate() {
        let c = comp_of_root[dsu.find(a)];
        comps[c].cells.push((idx, local_a[a], local_b[b]));
    }
    comps
}

/// Solves the thresholded assignment per component, keeping per-component
/// solver hints for warm starts.
#[derive(Debug, Clone)]
pub struct LinkSolver {
    components: Vec<PairComponent>,
    hints: Vec<Option<SolverHint>>,
}

impl LinkSolver {
    pub fn new(pairs: &CandidatePairSet) -> Self {
        let components = pair_components(pairs);
        let hints = vec![None; components.len()];
        LinkSolver { components, hints }
    }

    pub fn components(&self) -> &[PairComponent] {
        &self.components
    }

    /// Maximizes `sum C_ab (w_ab - theta)`; returns linked pair indices in
    /// ascending order.
    pub fn solve_thresholded(&mut self, weights: &[f64], theta: f64) -> Vec<usize> {
        let results: Vec<(Vec<usize>, SolverHint)> = self
            .components
            .par_iter()
            .zip(self.hints.par_iter())
            .map(|(comp, hint)| {
                // Cells that are not candidate pairs sit exactly at theta and are
                // always dropped.
                let mut w = WeightMatrix::filled(comp.a.len(), comp.b.len(), theta);
                let mut pair_at = vec![usize::MAX; comp.a.len() * comp.b.len()];
                for &(idx, r, c) in &comp.cells {
                    w.set(r, c, weights[idx]);
                    pair_at[r * comp.b.len() + c] = idx;
                }
                let sol = solve_thresholded_with_hint(&w, theta, hint.as_ref());
                let links = sol
                    .assignment
                    .pairs
                    .iter()
                    .map(|&(r, c)| pair_at[r * comp.b.len() + c])
                    .collect();
                (links, warm_start_hint(&sol))
            })
            .collect();
        let mut linked = Vec::new();
        for (slot, (links, hint)) in self.hints.iter_mut().zip(results) {
            linked.extend(links);
            *slot = Some(hint);
        }
        linked.sort_unstable();
        linked
    }

    /// Complete assignment per component on `weights`. Non-candidate cells
    /// are forbidden: they only appear when a component has no alternative
    /// and are never reported.
    pub fn solve_complete(&self, weights: &[f64]) -> Vec<usize> {
        let mut linked: Vec<usize> = self
            .components
            .par_iter()
            .flat_map_iter(|comp| {
                let (lo, hi) = comp
                    .cells
                    .iter()
                    .fold((0.0f64, 0.0f64), |(lo, hi), &(idx, _, _)| {
                        (lo.min(weights[idx]), hi.max(weights[idx]))
                    });
                let span = (hi - lo + 1.0) * (comp.a.len().min(comp.b.len()) as f64 + 1.0);
                let forbidden = lo - span;
                let mut w = WeightMatrix::filled(comp.a.len(), comp.b.len(), forbidden);
                let mut pair_at = vec![usize::MAX; comp.a.len() * comp.b.len()];
                for &(idx, r, c) in &comp.cells {
                    w.set(r, c, weights[idx]);
                    pair_at[r * comp.b.len() + c] = idx;
                }
                let Assignment { pairs, .. } = solve_lsap(&w);
                pairs
                    .into_iter()
                    .map(move |(r, c)| pair_at[r * comp.b.len() + c])
                    .filter(|&idx| idx != usize::MAX)
            })
            .collect();
        linked.sort_unstable();
        linked
    }
}

fn matching_from_pairs(comparisons: &Comparisons, linked: &[usize]) -> Matching {
    let links = linked.iter().map(|&i| comparisons.pairs.pairs[i]).collect();
    Matching::new(comparisons.n_a(), comparisons.n_b(), links)
        .expect("assignment output is one-to-one")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmLsapResult {
    pub em: EmFit,
    pub weights: WeightTable,
    /// Stage-two complete assignment before deletion.
    pub assignment: Matching,
    pub matching: Matching,
    pub mu: f64,
}

/// The three-stage EM + assignment estimator.
pub fn em_lsap_estimate(
    comparisons: &Comparisons,
    init: &MixtureParams,
    mu: f64,
    em_options: EmOptions,
) -> Result<EmLsapResult> {
    let em = em_fit(&comparisons.table, init, em_options)?;
    let weights = weight_table(&comparisons.table, &em.params)?;
    let pair_w = expand_weights(comparisons, &weights);
    let solver = LinkSolver::new(&comparisons.pairs);
    let complete = solver.solve_complete(&pair_w);
    let kept: Vec<usize> = complete
        .iter()
        .copied()
        .filter(|&i| pair_w[i] > mu)
        .collect();
    Ok(EmLsapResult {
        assignment: matching_from_pairs(comparisons, &complete),
        matching: matching_from_pairs(comparisons, &kept),
        em,
        weights,
        mu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenalizedOptions {
    pub theta: f64,
    pub max_outer: usize,
    /// When false, `(m, u)` stay at their initial values and only the link
    /// step runs.
    pub update_params: bool,
}

impl PenalizedOptions {
    pub fn new(theta: f64) -> Self {
        PenalizedOptions {
            theta,
            max_outer: 50,
            update_params: true,
        }
    }

    pub fn fixed_params(mut self) -> Self {
        self.update_params = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenalizedFitResult {
    pub matching: Matching,
    pub params: MixtureParams,
    /// Penalized objective after every outer iteration.
    pub trace: Vec<f64>,
    pub theta: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Per-field, per-level counts over the linked pairs (0-based levels).
pub fn linked_level_counts(comparisons: &Comparisons, linked: &[usize]) -> Vec<Vec<u64>> {
    let mut counts: Vec<Vec<u64>> = comparisons
        .table
        .level_counts
        .iter()
        .map(|&k| vec![0; k])
        .collect();
    for &i in linked {
        for (j, &h) in comparisons.pattern_of(i).levels().iter().enumerate() {
            counts[j][h as usize - 1] += 1;
        }
    }
    counts
}

/// Closed-form maximizers of the joint likelihood in `(m, u)` for a fixed
/// link set, regularized by the prior's pseudocounts. A field whose
/// numerator vanishes entirely keeps its previous probabilities.
pub fn penalized_m_step(
    comparisons: &Comparisons,
    linked: &[usize],
    prior: &DirichletPrior,
    prev: &MixtureParams,
) -> MixtureParams {
    let linked_counts = linked_level_counts(comparisons, linked);
    let totals = comparisons.table.level_totals();
    let update = |pseudo: &[Vec<f64>],
                  counts: &dyn Fn(usize, usize) -> f64,
                  old: &[Vec<f64>]|
     -> Vec<Vec<f64>> {
        pseudo
            .iter()
            .enumerate()
            .map(|(j, pj)| {
                let num: Vec<f64> = pj
                    .iter()
                    .enumerate()
                    .map(|(h, &n)| n + counts(j, h))
                    .collect();
                let den: f64 = num.iter().sum();
                if den > 0.0 {
                    num.iter().map(|x| x / den).collect()
                } else {
                    old[j].clone()
                }
            })
            .collect()
    };
    let m = update(
        &prior.pseudo_m,
        &|j, h| linked_counts[j][h] as f64,
        prev.m(),
    );
    let u = update(
        &prior.pseudo_u,
        &|j, h| (totals[j][h] - linked_counts[j][h]) as f64,
        prev.u(),
    );
    let total = comparisons.len().max(1) as f64;
    MixtureParams::from_parts_unchecked(m, u, linked.len() as f64 / total)
}

/// `sum_ab log u_ab + sum_ab C_ab (w_ab - theta)` plus the pseudocount terms
/// `sum_jh n_mjh log m_jh + n_ujh log u_jh`, with the same probability floor
/// as the weights. The first sum runs over every candidate pair.
pub fn penalized_objective(
    comparisons: &Comparisons,
    linked: &[usize],
    params: &MixtureParams,
    prior: &DirichletPrior,
    theta: f64,
) -> f64 {
    let logs = params.log_tables();
    let base: f64 = comparisons
        .table
        .entries
        .iter()
        .map(|e| e.count as f64 * logs.log_likelihoods(&e.pattern).1)
        .sum();
    let links: f64 = linked
        .iter()
        .map(|&i| logs.weight(comparisons.pattern_of(i)) - theta)
        .sum();
    let pseudo = |n: &[Vec<f64>], p: &[Vec<f64>]| -> f64 {
        n.iter()
            .zip(p)
            .flat_map(|(nj, pj)| nj.iter().zip(pj))
            .filter(|(n, _)| **n > 0.0)
            .map(|(n, p)| n * floored_ln(*p))
            .sum()
    };
    base + links + pseudo(&prior.pseudo_m, params.m()) + pseudo(&prior.pseudo_u, params.u())
}

/// Alternates the thresholded assignment step and the closed-form
/// parameter step until the link set repeats.
pub fn penalized_likelihood_fit(
    comparisons: &Comparisons,
    prior: &DirichletPrior,
    init: &MixtureParams,
    options: PenalizedOptions,
) -> Result<PenalizedFitResult> {
    let mut solver = LinkSolver::new(&comparisons.pairs);
    penalized_fit_with(&mut solver, comparisons, prior, init, options)
}

fn check_inputs(
    comparisons: &Comparisons,
    prior: &DirichletPrior,
    init: &MixtureParams,
    theta: f64,
) -> Result<()> {
    if !theta.is_finite() {
        return Err(Error::InvalidParams(format!(
            "theta = {theta} is not finite"
        )));
    }
    init.check_table(&comparisons.table)?;
    if prior.level_counts() != comparisons.table.level_counts {
        return Err(Error::InvalidParams(
            "prior shape does not match the pattern table".into(),
        ));
    }
    prior.validate()
}

fn penalized_fit_with(
    solver: &mut LinkSolver,
    comparisons: &Comparisons,
    prior: &DirichletPrior,
    init: &MixtureParams,
    options: PenalizedOptions,
) -> Result<PenalizedFitResult> {
    let theta = options.theta;
    check_inputs(comparisons, prior, init, theta)?;
    let mut params = init.clone();
    let mut prev_links: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut links = Vec::new();

    while iterations < options.max_outer.max(1) {
        iterations += 1;
        let weights = pair_weights(comparisons, &params)?;
        links = solver.solve_thresholded(&weights, theta);
        if options.update_params {
            params = penalized_m_step(comparisons, &links, prior, &params);
        }
        trace.push(penalized_objective(
            comparisons,
            &links,
            &params,
            prior,
            theta,
        ));
        if !options.update_params || links == prev_links {
            converged = true;
            break;
        }
        prev_links = links.clone();
    }

    if !converged {
        // Re-solve the links under the final parameters so that every
        // reported link clears theta.
        let weights = pair_weights(comparisons, &params)?;
        links = solver.solve_thresholded(&weights, theta);
        trace.push(penalized_objective(
            comparisons,
            &links,
            &params,
            prior,
            theta,
        ));
    }

    Ok(PenalizedFitResult {
        matching: matching_from_pairs(comparisons, &links),
        params,
        trace,
        theta,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub theta: f64,
    pub link_count: usize,
    pub fit: PenalizedFitResult,
}

/// One penalized fit per grid value, each warm-started from the previous
/// fit's parameters and assignment prices.
pub fn theta_sweep(
    comparisons: &Comparisons,
    prior: &DirichletPrior,
    init: &MixtureParams,
    grid: &[f64],
    options: PenalizedOptions,
) -> Result<Vec<SweepPoint>> {
    if let Some(bad) = grid.iter().find(|t| !t.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "theta grid value {bad} is not finite"
        )));
    }
    let mut solver = LinkSolver::new(&comparisons.pairs);
    let mut start = init.clone();
    let mut out = Vec::with_capacity(grid.len());
    for &theta in grid {
        let fit = penalized_fit_with(
            &mut solver,
            comparisons,
            prior,
            &start,
            PenalizedOptions { theta, ..options },
        )?;
        if options.update_params {
            start = fit.params.clone();
        }
        out.push(SweepPoint {
            theta,
            link_count: fit.matching.len(),
            fit,
        });
    }
    Ok(out)
}
