//! Restricted MCMC over one-to-one link sets.
//!
//! Links may only use admissible pairs of the post-hoc blocks. Given the m/u
//! parameters the blocks are conditionally independent, so each sweep
//! updates every block in parallel and then draws new parameters from their
//! Dirichlet full conditionals. The link-set target within a block is
//! `p(C | m, u) ∝ exp(sum_ab C_ab (w_ab - theta))`.
//!
//! Every block owns a ChaCha8 stream keyed by its block id and the parameter
//! draws use a separate stream, so results depend only on the seed and not
//! on how blocks are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocking::PostHocBlocks;
use crate::comparison::Comparisons;
use crate::error::{Error, Result};
use crate::matching::Matching;
use crate::mixture::{DirichletPrior, MixtureParams};

const PARAM_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkagePrior {
    /// Per-link cost in `p(C) ∝ exp(-theta L)`.
    pub theta: f64,
    pub dirichlet: DirichletPrior,
}

impl LinkagePrior {
    pub fn new(theta: f64, dirichlet: DirichletPrior) -> Result<Self> {
        if !theta.is_finite() {
            return Err(Error::InvalidParams(format!(
                "theta = {theta} is not finite"
            )));
        }
        dirichlet.validate()?;
        Ok(LinkagePrior { theta, dirichlet })
    }
}

/// Relative proposal probabilities of the three Metropolis-Hastings moves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MoveMix {
    pub add: f64,
    pub drop: f64,
    pub swap: f64,
}

impl Default for MoveMix {
    fn default() -> Self {
        MoveMix {
            add: 0.4,
            drop: 0.4,
            swap: 0.2,
        }
    }
}

impl MoveMix {
    pub fn validate(&self) -> Result<()> {
        let all = [self.add, self.drop, self.swap];
        if all.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidParams(
                "move probabilities must be finite and nonnegative".into(),
            ));
        }
        if self.add <= 0.0 || self.drop <= 0.0 {
            return Err(Error::InvalidParams(
                "add and drop moves need positive probability".into(),
            ));
        }
        Ok(())
    }

    /// Probabilities renormalized over the moves that are possible.
    fn available(&self, can_add: bool, can_drop: bool, can_swap: bool) -> [f64; 3] {
        let raw = [
            if can_add { self.add } else { 0.0 },
            if can_drop { self.drop } else { 0.0 },
            if can_swap { self.swap } else { 0.0 },
        ];
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.map(|p| p / total)
        } else {
            [0.0; 3]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcOptions {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Blocks with at most this many partial matchings are updated by exact
    /// enumeration instead of Metropolis-Hastings.
    pub gibbs_cap: usize,
    pub move_mix: MoveMix,
    /// Metropolis-Hastings moves per block per sweep; defaults to the
    /// block's admissible pair count.
    pub moves_per_sweep: Option<usize>,
    /// When false, (m, u) stay at their initial values.
    pub update_params: bool,
}

impl Default for McmcOptions {
    fn default() -> Self {
        McmcOptions {
            iterations: 1000,
            burn_in: 100,
            seed: 0,
            gibbs_cap: 64,
            move_mix: MoveMix::default(),
            moves_per_sweep: None,
            update_params: true,
        }
    }
}

impl McmcOptions {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidParams(format!(
                "burn-in {} must be below the iteration count {}",
                self.burn_in, self.iterations
            )));
        }
        if self.moves_per_sweep == Some(0) {
            return Err(Error::InvalidParams(
                "moves per sweep must be positive".into(),
            ));
        }
        self.move_mix.validate()
    }
}

/// Proposal and acceptance counts per move type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveStats {
    pub add_proposed: u64,
    pub add_accepted: u64,
    pub drop_proposed: u64,
    pub drop_accepted: u64,
    pub swap_proposed: u64,
    pub swap_accepted: u64,
    pub gibbs_updates: u64,
}

impl MoveStats {
    fn merge(&mut self, o: &MoveStats) {
        self.add_proposed += o.add_proposed;
        self.add_accepted += o.add_accepted;
        self.drop_proposed += o.drop_proposed;
        self.drop_accepted += o.drop_accepted;
        self.swap_proposed += o.swap_proposed;
        self.swap_accepted += o.swap_accepted;
        self.gibbs_updates += o.gibbs_updates;
    }

    pub fn rates(&self) -> AcceptanceRates {
        let rate = |acc: u64, prop: u64| (prop > 0).then(|| acc as f64 / prop as f64);
        AcceptanceRates {
            add: rate(self.add_accepted, self.add_proposed),
            drop: rate(self.drop_accepted, self.drop_proposed),
            swap: rate(self.swap_accepted, self.swap_proposed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub add: Option<f64>,
    pub drop: Option<f64>,
    pub swap: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct LocalEdge {
    row: usize,
    col: usize,
    pair: usize,
    pattern: usize,
}

/// A proposal that removes up to two links and adds up to two.
#[derive(Debug, Clone, Copy)]
struct Swap {
    remove: [usize; 2],
    add: [usize; 2],
    width: usize,
}

#[derive(Debug, Clone)]
struct BlockChain {
    a: Vec<usize>,
    b: Vec<usize>,
    edges: Vec<LocalEdge>,
    /// Sorted `(col, edge)` per local row and `(row, edge)` per local column.
    row_adj: Vec<Vec<(usize, usize)>>,
    col_adj: Vec<Vec<(usize, usize)>>,
    row_link: Vec<Option<usize>>,
    col_link: Vec<Option<usize>>,
    links: Vec<usize>,
    link_pos: Vec<usize>,
    /// Edges whose row and column are both unlinked.
    n_addable: usize,
    linked_levels: Vec<Vec<u64>>,
    enumeration: Option<Vec<Vec<usize>>>,
    rng: ChaCha8Rng,
    hits: Vec<u64>,
    stats: MoveStats,
}

impl BlockChain {
    fn new(
        block: &crate::blocking::Block,
        comparisons: &Comparisons,
        level_counts: &[usize],
        seed: u64,
        gibbs_cap: usize,
    ) -> Self {
        let mut local_a = std::collections::HashMap::with_capacity(block.a.len());
        for (i, &a) in block.a.iter().enumerate() {
            local_a.insert(a, i);
        }
        let mut local_b = std::collections::HashMap::with_capacity(block.b.len());
        for (i, &b) in block.b.iter().enumerate() {
            local_b.insert(b, i);
        }
        let edges: Vec<LocalEdge> = block
            .edges
            .iter()
            .map(|e| LocalEdge {
                row: local_a[&e.a],
                col: local_b[&e.b],
                pair: e.pair,
                pattern: comparisons.pair_pattern[e.pair],
            })
            .collect();
        let mut row_adj = vec![Vec::new(); block.a.len()];
        let mut col_adj = vec![Vec::new(); block.b.len()];
        for (i, e) in edges.iter().enumerate() {
            row_adj[e.row].push((e.col, i));
            col_adj[e.col].push((e.row, i));
        }
        row_adj.iter_mut().for_each(|v| v.sort_unstable());
        col_adj.iter_mut().for_each(|v| v.sort_unstable());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(block.id as u64);
        let mut chain = BlockChain {
            a: block.a.clone(),
            b: block.b.clone(),
            row_link: vec![None; block.a.len()],
            col_link: vec![None; block.b.len()],
            links: Vec::new(),
            link_pos: vec![usize::MAX; edges.len()],
            n_addable: edges.len(),
            linked_levels: level_counts.iter().map(|&k| vec![0; k]).collect(),
            enumeration: None,
            rng,
            hits: vec![0; edges.len()],
            stats: MoveStats::default(),
            edges,
            row_adj,
            col_adj,
        };
        chain.enumeration = chain.enumerate_matchings(gibbs_cap);
        chain
    }

    fn edge_at(&self, row: usize, col: usize) -> Option<usize> {
        let adj = &self.row_adj[row];
        adj.binary_search_by_key(&col, |&(c, _)| c)
            .ok()
            .map(|i| adj[i].1)
    }

    fn is_free(&self, e: usize) -> bool {
        let LocalEdge { row, col, .. } = self.edges[e];
        self.row_link[row].is_none() && self.col_link[col].is_none()
    }

    /// Addable edges through `row` plus those through `col`, counting the
    /// edge `(row, col)` once.
    fn addable_through(&self, row: usize, col: usize) -> usize {
        let in_row = self.row_adj[row]
            .iter()
            .filter(|&&(c, _)| self.col_link[c].is_none())
            .count();
        let in_col = self.col_adj[col]
            .iter()
            .filter(|&&(r, _)| self.row_link[r].is_none())
            .count();
        in_row + in_col - 1
    }

    fn add_link(&mut self, e: usize, comparisons: &Comparisons) {
        let LocalEdge {
            row, col, pattern, ..
        } = self.edges[e];
        debug_assert!(self.is_free(e));
        self.n_addable -= self.addable_through(row, col);
        self.row_link[row] = Some(e);
        self.col_link[col] = Some(e);
        self.link_pos[e] = self.links.len();
        self.links.push(e);
        for (j, &h) in comparisons.table.entries[pattern]
            .pattern
            .levels()
            .iter()
            .enumerate()
        {
            self.linked_levels[j][h as usize - 1] += 1;
        }
    }

    fn remove_link(&mut self, e: usize, comparisons: &Comparisons) {
        let LocalEdge {
            row, col, pattern, ..
        } = self.edges[e];
        self.row_link[row] = None;
        self.col_link[col] = None;
        self.n_addable += self.addable_through(row, col);
        let pos = self.link_pos[e];
        self.links.swap_remove(pos);
        if let Some(&moved) = self.links.get(pos) {
            self.link_pos[moved] = pos;
        }
        self.link_pos[e] = usize::MAX;
        for (j, &h) in comparisons.table.entries[pattern]
            .pattern
            .levels()
            .iter()
            .enumerate()
        {
            self.linked_levels[j][h as usize - 1] -= 1;
        }
    }

    fn set_links(&mut self, target: &[usize], comparisons: &Comparisons) {
        while let Some(&e) = self.links.last() {
            self.remove_link(e, comparisons);
        }
        for &e in target {
            self.add_link(e, comparisons);
        }
    }

    /// Every partial matching as a list of edges, or `None` past `cap`.
    fn enumerate_matchings(&self, cap: usize) -> Option<Vec<Vec<usize>>> {
        fn walk(
            chain: &BlockChain,
            row: usize,
            used: &mut Vec<bool>,
            current: &mut Vec<usize>,
            out: &mut Vec<Vec<usize>>,
            cap: usize,
        ) -> bool {
            if row == chain.a.len() {
                out.push(current.clone());
                return out.len() <= cap;
            }
            if !walk(chain, row + 1, used, current, out, cap) {
                return false;
            }
            for &(col, e) in &chain.row_adj[row] {
                if !used[col] {
                    used[col] = true;
                    current.push(e);
                    let ok = walk(chain, row + 1, used, current, out, cap);
                    current.pop();
                    used[col] = false;
                    if !ok {
                        return false;
                    }
                }
            }
            true
        }
        let mut out = Vec::new();
        let mut used = vec![false; self.b.len()];
        walk(self, 0, &mut used, &mut Vec::new(), &mut out, cap).then_some(out)
    }

    /// Edges sharing a record with `e`, excluding `e` itself.
    fn neighbourhood(&self, e: usize) -> usize {
        let LocalEdge { row, col, .. } = self.edges[e];
        self.row_adj[row].len() + self.col_adj[col].len() - 2
    }

    fn neighbour(&self, e: usize, mut k: usize) -> usize {
        let LocalEdge { row, col, .. } = self.edges[e];
        for &(_, f) in self.row_adj[row].iter().chain(&self.col_adj[col]) {
            if f == e {
                continue;
            }
            if k == 0 {
                return f;
            }
            k -= 1;
        }
        unreachable!("neighbour index within the neighbourhood")
    }

    /// Builds the swap reached from link `l` through neighbouring edge `f`,
    /// or `None` when the exchange partner edge is not admissible.
    fn swap_via(&self, l: usize, f: usize) -> Option<Swap> {
        let LocalEdge { row, col, .. } = self.edges[l];
        let LocalEdge {
            row: fr, col: fc, ..
        } = self.edges[f];
        let other = if fr == row {
            self.col_link[fc]
        } else {
            self.row_link[fr]
        };
        match other {
            None => Some(Swap {
                remove: [l, 0],
                add: [f, 0],
                width: 1,
            }),
            Some(l2) => {
                let LocalEdge {
                    row: r2, col: c2, ..
                } = self.edges[l2];
                // l = (row, col), l2 = (r2, c2) become (row, c2) and (r2, col).
                let e1 = self.edge_at(row, c2)?;
                let e2 = self.edge_at(r2, col)?;
                Some(Swap {
                    remove: [l, l2],
                    add: [e1, e2],
                    width: 2,
                })
            }
        }
    }

    /// Proposal weight of reaching the swap's target, up to the shared
    /// `p_swap / L` factor: the sum of `1 / |neighbourhood|` over routes.
    fn swap_routes(&self, s: &Swap) -> f64 {
        if s.width == 1 {
            1.0 / self.neighbourhood(s.remove[0]) as f64
        } else {
            2.0 / self.neighbourhood(s.remove[0]) as f64
                + 2.0 / self.neighbourhood(s.remove[1]) as f64
        }
    }

    fn reverse(s: &Swap) -> Swap {
        Swap {
            remove: s.add,
            add: s.remove,
            width: s.width,
        }
    }

    fn apply_swap(&mut self, s: &Swap, comparisons: &Comparisons) {
        for &e in &s.remove[..s.width] {
            self.remove_link(e, comparisons);
        }
        for &e in &s.add[..s.width] {
            self.add_link(e, comparisons);
        }
    }

    fn gain(&self, e: usize, weights: &[f64], theta: f64) -> f64 {
        weights[self.edges[e].pattern] - theta
    }

    /// Add, drop and swap probabilities in the current state. Swaps are
    /// offered whenever a link exists, even if the drawn one turns out void.
    fn move_probs(&self, mix: &MoveMix) -> [f64; 3] {
        let linked = !self.links.is_empty();
        mix.available(self.n_addable > 0, linked, linked)
    }

    fn mh_move(&mut self, weights: &[f64], theta: f64, mix: &MoveMix, comparisons: &Comparisons) {
        let probs = self.move_probs(mix);
        if probs.iter().sum::<f64>() == 0.0 {
            return;
        }
        let pick: f64 = self.rng.random();
        let kind = if pick < probs[0] {
            0
        } else if pick < probs[0] + probs[1] {
            1
        } else {
            2
        };
        let kind = if probs[kind] > 0.0 {
            kind
        } else {
            (0..3).rev().find(|&k| probs[k] > 0.0).unwrap()
        };
        match kind {
            0 => {
                let n_add = self.n_addable;
                let e = loop {
                    let e = self.rng.random_range(0..self.edges.len());
                    if self.is_free(e) {
                        break e;
                    }
                };
                let log_fwd = probs[0].ln() - (n_add as f64).ln();
                self.add_link(e, comparisons);
                let log_rev = self.move_probs(mix)[1].ln() - (self.links.len() as f64).ln();
                self.stats.add_proposed += 1;
                if self.accept(self.gain(e, weights, theta) + log_rev - log_fwd) {
                    self.stats.add_accepted += 1;
                } else {
                    self.remove_link(e, comparisons);
                }
            }
            1 => {
                let n_links = self.links.len();
                let e = self.links[self.rng.random_range(0..n_links)];
                let log_fwd = probs[1].ln() - (n_links as f64).ln();
                self.remove_link(e, comparisons);
                let log_rev = self.move_probs(mix)[0].ln() - (self.n_addable as f64).ln();
                self.stats.drop_proposed += 1;
                if self.accept(-self.gain(e, weights, theta) + log_rev - log_fwd) {
                    self.stats.drop_accepted += 1;
                } else {
                    self.add_link(e, comparisons);
                }
            }
            _ => {
                self.stats.swap_proposed += 1;
                let l = self.links[self.rng.random_range(0..self.links.len())];
                let size = self.neighbourhood(l);
                if size == 0 {
                    return;
                }
                let k = self.rng.random_range(0..size);
                let f = self.neighbour(l, k);
                let Some(s) = self.swap_via(l, f) else {
                    return;
                };
                let back = Self::reverse(&s);
                // The link count is unchanged, so the 1 / L factors cancel.
                let log_fwd = probs[2].ln() + self.swap_routes(&s).ln();
                let delta: f64 = s.add[..s.width]
                    .iter()
                    .map(|&e| self.gain(e, weights, theta))
                    .sum::<f64>()
                    - s.remove[..s.width]
                        .iter()
                        .map(|&e| self.gain(e, weights, theta))
                        .sum::<f64>();
                self.apply_swap(&s, comparisons);
                let log_rev = self.move_probs(mix)[2].ln() + self.swap_routes(&back).ln();
                if self.accept(delta + log_rev - log_fwd) {
                    self.stats.swap_accepted += 1;
                } else {
                    self.apply_swap(&back, comparisons);
                }
            }
        }
    }

    fn accept(&mut self, log_alpha: f64) -> bool {
        log_alpha >= 0.0 || self.rng.random::<f64>().ln() < log_alpha
    }

    fn gibbs_update(&mut self, weights: &[f64], theta: f64, comparisons: &Comparisons) {
        let Some(all) = self.enumeration.take() else {
            return;
        };
        let scores: Vec<f64> = all
            .iter()
            .map(|m| m.iter().map(|&e| self.gain(e, weights, theta)).sum())
            .collect();
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mass: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let total: f64 = mass.iter().sum();
        let mut draw = self.rng.random::<f64>() * total;
        let mut chosen = all.len() - 1;
        for (i, p) in mass.iter().enumerate() {
            if draw < *p {
                chosen = i;
                break;
            }
            draw -= p;
        }
        self.set_links(&all[chosen], comparisons);
        self.enumeration = Some(all);
        self.stats.gibbs_updates += 1;
    }

    fn sweep(
        &mut self,
        weights: &[f64],
        theta: f64,
        options: &McmcOptions,
        comparisons: &Comparisons,
    ) {
        if self.edges.is_empty() {
            return;
        }
        if self.enumeration.is_some() {
            self.gibbs_update(weights, theta, comparisons);
        } else {
            let moves = options.moves_per_sweep.unwrap_or(self.edges.len());
            for _ in 0..moves {
                self.mh_move(weights, theta, &options.move_mix, comparisons);
            }
        }
    }

    fn recount(&self, comparisons: &Comparisons, level_counts: &[usize]) -> Vec<Vec<u64>> {
        let mut counts: Vec<Vec<u64>> = level_counts.iter().map(|&k| vec![0; k]).collect();
        for &e in &self.links {
            for (j, &h) in comparisons.table.entries[self.edges[e].pattern]
                .pattern
                .levels()
                .iter()
                .enumerate()
            {
                counts[j][h as usize - 1] += 1;
            }
        }
        counts
    }
}

/// Draws `m_j ~ Dirichlet(alpha_m + linked)` and
/// `u_j ~ Dirichlet(alpha_u + totals - linked)` for every field.
pub fn update_params<R: Rng + ?Sized>(
    linked: &[Vec<u64>],
    totals: &[Vec<u64>],
    prior: &DirichletPrior,
    pi: f64,
    rng: &mut R,
) -> MixtureParams {
    let draw = |alpha: &[f64], counts: &dyn Fn(usize) -> u64, rng: &mut R| -> Vec<f64> {
        let g: Vec<f64> = alpha
            .iter()
            .enumerate()
            .map(|(h, &a)| {
                Gamma::new(a + counts(h) as f64, 1.0)
                    .expect("validated concentration")
                    .sample(rng)
            })
            .collect();
        let total: f64 = g.iter().sum();
        if total > 0.0 && total.is_finite() {
            g.iter().map(|x| x / total).collect()
        } else {
            let shapes: Vec<f64> = alpha
                .iter()
                .enumerate()
                .map(|(h, &a)| a + counts(h) as f64)
                .collect();
            let s: f64 = shapes.iter().sum();
            shapes.iter().map(|x| x / s).collect()
        }
    };
    let mut m = Vec::with_capacity(linked.len());
    let mut u = Vec::with_capacity(linked.len());
    for j in 0..linked.len() {
        m.push(draw(&prior.alpha_m[j], &|h| linked[j][h], rng));
        u.push(draw(
            &prior.alpha_u[j],
            &|h| totals[j][h] - linked[j][h],
            rng,
        ));
    }
    MixtureParams::from_parts_unchecked(m, u, pi)
}

/// Chain state over all blocks. Each call to [`Chain::step`] is one sweep.
#[derive(Debug, Clone)]
pub struct Chain<'a> {
    comparisons: &'a Comparisons,
    prior: LinkagePrior,
    options: McmcOptions,
    n_a: usize,
    n_b: usize,
    blocks: Vec<BlockChain>,
    params: MixtureParams,
    totals: Vec<Vec<u64>>,
    param_rng: ChaCha8Rng,
    sweeps: usize,
}

impl<'a> Chain<'a> {
    /// Starts from `init_matching` restricted to admissible pairs.
    pub fn new(
        blocks: &PostHocBlocks,
        comparisons: &'a Comparisons,
        prior: LinkagePrior,
        init_params: &MixtureParams,
        init_matching: Option<&Matching>,
        options: McmcOptions,
    ) -> Result<Self> {
        options.validate()?;
        prior.dirichlet.validate()?;
        init_params.check_table(&comparisons.table)?;
        if prior.dirichlet.level_counts() != comparisons.table.level_counts {
            return Err(Error::InvalidParams(
                "prior shape does not match the pattern table".into(),
            ));
        }
        if blocks.n_a != comparisons.n_a() || blocks.n_b != comparisons.n_b() {
            return Err(Error::InvalidParams(
                "blocks and comparisons describe different files".into(),
            ));
        }
        let level_counts = comparisons.table.level_counts.clone();
        let mut chains: Vec<BlockChain> = blocks
            .blocks
            .par_iter()
            .map(|b| {
                BlockChain::new(
                    b,
                    comparisons,
                    &level_counts,
                    options.seed,
                    options.gibbs_cap,
                )
            })
            .collect();
        if let Some(init) = init_matching {
            let (of_a, _) = blocks.membership();
            for &(a, b) in init.links() {
                let Some(id) = of_a.get(a).copied().flatten() else {
                    continue;
                };
                let chain = &mut chains[id];
                let row = chain.a.binary_search(&a).expect("member of block");
                let Ok(col) = chain.b.binary_search(&b) else {
                    continue;
                };
                if let Some(e) = chain.edge_at(row, col) {
                    if chain.row_link[row].is_none() && chain.col_link[col].is_none() {
                        chain.add_link(e, comparisons);
                    }
                }
            }
        }
        let mut param_rng = ChaCha8Rng::seed_from_u64(options.seed);
        param_rng.set_stream(PARAM_STREAM);
        Ok(Chain {
            comparisons,
            prior,
            options,
            n_a: blocks.n_a,
            n_b: blocks.n_b,
            blocks: chains,
            params: init_params.clone(),
            totals: comparisons.table.level_totals(),
            param_rng,
            sweeps: 0,
        })
    }

    /// Updates every block given the current parameters, then the parameters
    /// given all blocks.
    pub fn step(&mut self) {
        let logs = self.params.log_tables();
        let weights: Vec<f64> = self
            .comparisons
            .table
            .entries
            .iter()
            .map(|e| logs.weight(&e.pattern))
            .collect();
        let theta = self.prior.theta;
        let options = self.options;
        let comparisons = self.comparisons;
        self.blocks
            .par_iter_mut()
            .for_each(|b| b.sweep(&weights, theta, &options, comparisons));
        if self.options.update_params {
            let linked = self.linked_level_counts();
            self.params = update_params(
                &linked,
                &self.totals,
                &self.prior.dirichlet,
                self.params.pi(),
                &mut self.param_rng,
            );
        }
        self.sweeps += 1;
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn params(&self) -> &MixtureParams {
        &self.params
    }

    pub fn link_count(&self) -> usize {
        self.blocks.iter().map(|b| b.links.len()).sum()
    }

    pub fn matching(&self) -> Matching {
        let links = self
            .blocks
            .iter()
            .flat_map(|b| {
                b.links
                    .iter()
                    .map(|&e| (b.a[b.edges[e].row], b.b[b.edges[e].col]))
            })
            .collect();
        Matching::new(self.n_a, self.n_b, links).expect("chain state is one-to-one")
    }

    /// Candidate pair indices of the current links, ascending.
    pub fn linked_pairs(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .blocks
            .iter()
            .flat_map(|b| b.links.iter().map(|&e| b.edges[e].pair))
            .collect();
        out.sort_unstable();
        out
    }

    /// Incrementally maintained linked level counts.
    pub fn linked_level_counts(&self) -> Vec<Vec<u64>> {
        let mut total: Vec<Vec<u64>> = self.totals.iter().map(|v| vec![0; v.len()]).collect();
        for b in &self.blocks {
            for (t, l) in total.iter_mut().zip(&b.linked_levels) {
                t.iter_mut().zip(l).for_each(|(x, y)| *x += y);
            }
        }
        total
    }

    /// Linked level counts recomputed from the link set.
    pub fn recount_linked_level_counts(&self) -> Vec<Vec<u64>> {
        let level_counts = &self.comparisons.table.level_counts;
        let mut total: Vec<Vec<u64>> = level_counts.iter().map(|&k| vec![0; k]).collect();
        for b in &self.blocks {
            for (t, l) in total
                .iter_mut()
                .zip(b.recount(self.comparisons, level_counts))
            {
                t.iter_mut().zip(l).for_each(|(x, y)| *x += y);
            }
        }
        total
    }

    pub fn move_stats(&self) -> MoveStats {
        let mut s = MoveStats::default();
        self.blocks.iter().for_each(|b| s.merge(&b.stats));
        s
    }

    /// Number of blocks updated by exact enumeration.
    pub fn enumerated_blocks(&self) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.enumeration.is_some())
            .count()
    }

    fn record_sample(&mut self) {
        self.blocks.par_iter_mut().for_each(|b| {
            for &e in &b.links {
                b.hits[e] += 1;
            }
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairFrequency {
    pub a: usize,
    pub b: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub n_a: usize,
    pub n_b: usize,
    /// Every admissible pair, sorted by `(a, b)`.
    pub pairs: Vec<PairFrequency>,
    /// Total link count after each sweep, burn-in included.
    pub l_trace: Vec<usize>,
    pub samples: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub moves: MoveStats,
    pub acceptance: AcceptanceRates,
    pub params: MixtureParams,
}

impl PosteriorSummary {
    /// `sum_b freq(a, b)` for every record of file A.
    pub fn row_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_a];
        for p in &self.pairs {
            sums[p.a] += p.frequency;
        }
        sums
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.n_b];
        for p in &self.pairs {
            sums[p.b] += p.frequency;
        }
        sums
    }
}

pub fn run_chain(
    blocks: &PostHocBlocks,
    comparisons: &Comparisons,
    prior: LinkagePrior,
    init_params: &MixtureParams,
    init_matching: Option<&Matching>,
    options: McmcOptions,
) -> Result<PosteriorSummary> {
    let mut chain = Chain::new(
        blocks,
        comparisons,
        prior,
        init_params,
        init_matching,
        options,
    )?;
    let mut l_trace = Vec::with_capacity(options.iterations);
    for it in 0..options.iterations {
        chain.step();
        l_trace.push(chain.link_count());
        if it >= options.burn_in {
            chain.record_sample();
        }
    }
    let samples = options.iterations - options.burn_in;
    let mut pairs: Vec<PairFrequency> = chain
        .blocks
        .iter()
        .flat_map(|b| {
            b.edges.iter().zip(&b.hits).map(|(e, &h)| PairFrequency {
                a: b.a[e.row],
                b: b.b[e.col],
                frequency: h as f64 / samples as f64,
            })
        })
        .collect();
    pairs.sort_unstable_by_key(|p| (p.a, p.b));
    let moves = chain.move_stats();
    Ok(PosteriorSummary {
        n_a: blocks.n_a,
        n_b: blocks.n_b,
        pairs,
        l_trace,
        samples,
        burn_in: options.burn_in,
        seed: options.seed,
        moves,
        acceptance: moves.rates(),
        params: chain.params.clone(),
    })
}

/// Links the pairs with posterior frequency strictly above one half. Should
/// Monte Carlo error let two such pairs share a record, the higher frequency
/// wins.
pub fn bayes_estimate(summary: &PosteriorSummary) -> Matching {
    let mut above: Vec<&PairFrequency> =
        summary.pairs.iter().filter(|p| p.frequency > 0.5).collect();
    above.sort_by(|x, y| {
        y.frequency
            .total_cmp(&x.frequency)
            .then((x.a, x.b).cmp(&(y.a, y.b)))
    });
    let mut used_a = vec![false; summary.n_a];
    let mut used_b = vec![false; summary.n_b];
    let mut links = Vec::new();
    for p in above {
        if !used_a[p.a] && !used_b[p.b] {
            used_a[p.a] = true;
            used_b[p.b] = true;
            links.push((p.a, p.b));
        }
    }
    Matching::new(summary.n_a, summary.n_b, links).expect("greedy selection is one-to-one")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocking::post_hoc_blocks;
    use crate::comparison::{aggregate_patterns, CandidatePairSet, ComparisonPattern};

    /// One binary field; pattern 2 is "agree". Pairs listed get `agree`.
    fn binary_problem(n_a: usize, n_b: usize, agree: &[(usize, usize)]) -> Comparisons {
        let pairs: Vec<(usize, usize)> = (0..n_a)
            .flat_map(|a| (0..n_b).map(move |b| (a, b)))
            .collect();
        let patterns: Vec<ComparisonPattern> = pairs
            .iter()
            .map(|p| ComparisonPattern::new(vec![if agree.contains(p) { 2 } else { 1 }]))
            .collect();
        let set = CandidatePairSet {
            n_a,
            n_b,
            pairs,
            groups: Vec::new(),
        };
        let (table, idx) = aggregate_patterns(&[2], &set, &patterns).unwrap();
        Comparisons::new(set, idx, table).unwrap()
    }

    /// Parameters with agree weight `w` and disagree weight `-w`.
    fn params_with_weight(w: f64) -> MixtureParams {
        let p = 1.0 / (1.0 + (-w).exp());
        MixtureParams::new(vec![vec![1.0 - p, p]], vec![vec![p, 1.0 - p]], 0.1).unwrap()
    }

    fn fixed_options(seed: u64, iterations: usize, gibbs_cap: usize) -> McmcOptions {
        McmcOptions {
            iterations,
            burn_in: 0,
            seed,
            gibbs_cap,
            update_params: false,
            ..McmcOptions::default()
        }
    }

    fn prior(theta: f64) -> LinkagePrior {
        LinkagePrior::new(theta, DirichletPrior::flat(&[2])).unwrap()
    }

    #[test]
    fn single_pair_link_probability() {
        let cmp = binary_problem(1, 1, &[(0, 0)]);
        let params = params_with_weight(3f64.ln());
        let blocks = post_hoc_blocks(&cmp.pairs, &[3f64.ln()], f64::NEG_INFINITY).unwrap();
        for cap in [0, 64] {
            let s = run_chain(
                &blocks,
                &cmp,
                prior(0.0),
                &params,
                None,
                fixed_options(7, 40_000, cap),
            )
            .unwrap();
            assert!(
                (s.pairs[0].frequency - 0.75).abs() < 0.01,
                "cap {cap}: {}",
                s.pairs[0].frequency
            );
        }
    }

    #[test]
    fn equal_weights_uniform_over_seven() {
        let cmp = binary_problem(2, 2, &[]);
        let params = params_with_weight(0.0);
        let blocks = post_hoc_blocks(&cmp.pairs, &[0.0; 4], f64::NEG_INFINITY).unwrap();
        for cap in [0, 64] {
            let mut chain = Chain::new(
                &blocks,
                &cmp,
                prior(0.0),
                &params,
                None,
                fixed_options(3, 1, cap),
            )
            .unwrap();
            let mut counts = std::collections::BTreeMap::new();
            let n = 70_000;
            for _ in 0..n {
                chain.step();
                *counts
                    .entry(chain.matching().links().to_vec())
                    .or_insert(0usize) += 1;
            }
            assert_eq!(counts.len(), 7);
            for (m, c) in counts {
                let f = c as f64 / n as f64;
                assert!((f - 1.0 / 7.0).abs() < 0.01, "cap {cap}: {m:?} at {f}");
            }
        }
    }

    #[test]
    fn enumeration_respects_cap() {
        let cmp = binary_problem(2, 2, &[]);
        let params = params_with_weight(0.0);
        let blocks = post_hoc_blocks(&cmp.pairs, &[0.0; 4], f64::NEG_INFINITY).unwrap();
        let chain = Chain::new(
            &blocks,
            &cmp,
            prior(0.0),
            &params,
            None,
            fixed_options(0, 1, 7),
        )
        .unwrap();
        assert_eq!(chain.enumerated_blocks(), 1);
        let chain = Chain::new(
            &blocks,
            &cmp,
            prior(0.0),
            &params,
            None,
            fixed_options(0, 1, 6),
        )
        .unwrap();
        assert_eq!(chain.enumerated_blocks(), 0);
    }

    #[test]
    fn dirichlet_posterior_mean() {
        let prior =
            DirichletPrior::from_alphas(vec![vec![1.0, 1.0]], vec![vec![1.0, 1.0]]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let p = update_params(&[vec![0, 2]], &[vec![5, 5]], &prior, 0.1, &mut rng);
            sum += p.m()[0][1];
            sq += p.m()[0][1].powi(2);
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 0.75).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn large_concentration_hits_truth() {
        let big = 1e7;
        let prior = DirichletPrior::from_alphas(
            vec![vec![0.2 * big, 0.8 * big]],
            vec![vec![0.9 * big, 0.1 * big]],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = update_params(&[vec![0, 0]], &[vec![0, 0]], &prior, 0.1, &mut rng);
        assert!((p.m()[0][1] - 0.8).abs() < 1e-3);
        assert!((p.u()[0][0] - 0.9).abs() < 1e-3);
    }

    #[test]
    fn bayes_estimate_rules() {
        let summary = |pairs: Vec<PairFrequency>| PosteriorSummary {
            n_a: 3,
            n_b: 3,
            pairs,
            l_trace: Vec::new(),
            samples: 1,
            burn_in: 0,
            seed: 0,
            moves: MoveStats::default(),
            acceptance: MoveStats::default().rates(),
            params: MixtureParams::uniform(&[2], 0.1).unwrap(),
        };
        let f = |a, b, frequency| PairFrequency { a, b, frequency };
        let m = bayes_estimate(&summary(vec![
            f(0, 0, 0.6),
            f(1, 1, 0.5),
            f(2, 0, 0.45),
            f(2, 2, 0.45),
        ]));
        assert_eq!(m.links(), &[(0, 0)]);
        let m = bayes_estimate(&summary(vec![f(0, 0, 0.55), f(0, 1, 0.52)]));
        assert_eq!(m.links(), &[(0, 0)]);
        assert!(bayes_estimate(&summary(Vec::new())).is_empty());
    }

    #[test]
    fn chain_moves_from_fit_start() {
        // Two admissible pairs sharing a record, equal weights.
        let cmp = binary_problem(1, 2, &[(0, 0), (0, 1)]);
        let params = params_with_weight(2.0);
        let blocks = post_hoc_blocks(&cmp.pairs, &[2.0, 2.0], 0.0).unwrap();
        let start = Matching::new(1, 2, vec![(0, 0)]).unwrap();
        let s = run_chain(
            &blocks,
            &cmp,
            prior(0.0),
            &params,
            Some(&start),
            fixed_options(5, 200, 0),
        )
        .unwrap();
        assert!(s.moves.swap_accepted + s.moves.drop_accepted > 0);
        assert!(s.pairs[1].frequency > 0.0);
    }

    #[test]
    fn sufficient_statistics_stay_consistent() {
        let agree = [(0, 0), (1, 1), (2, 2), (3, 3), (0, 1)];
        let cmp = binary_problem(4, 4, &agree);
        let init = MixtureParams::new(vec![vec![0.1, 0.9]], vec![vec![0.8, 0.2]], 0.1).unwrap();
        let weights = crate::estimators::pair_weights(&cmp, &init).unwrap();
        let blocks = post_hoc_blocks(&cmp.pairs, &weights, f64::NEG_INFINITY).unwrap();
        let options = McmcOptions {
            seed: 9,
            gibbs_cap: 0,
            ..McmcOptions::default()
        };
        let mut chain = Chain::new(&blocks, &cmp, prior(1.0), &init, None, options).unwrap();
        for _ in 0..300 {
            chain.step();
            assert_eq!(
                chain.linked_level_counts(),
                chain.recount_linked_level_counts()
            );
            let m = chain.matching();
            assert!(m
                .links()
                .iter()
                .all(|&(a, b)| blocks.blocks[0].edges.iter().any(|e| (e.a, e.b) == (a, b))));
        }
    }

    #[test]
    fn restricted_to_admissible_pairs() {
        let cmp = binary_problem(3, 3, &[(0, 0), (1, 1)]);
        let params = params_with_weight(3.0);
        let weights = crate::estimators::pair_weights(&cmp, &params).unwrap();
        let blocks = post_hoc_blocks(&cmp.pairs, &weights, 0.0).unwrap();
        let mut chain = Chain::new(
            &blocks,
            &cmp,
            prior(0.0),
            &params,
            None,
            fixed_options(1, 1, 0),
        )
        .unwrap();
        for _ in 0..500 {
            chain.step();
            assert!(chain
                .matching()
                .links()
                .iter()
                .all(|&(a, b)| a == b && a < 2));
        }
    }
}
