//! Post-hoc blocking: threshold fitted pair weights into a bipartite graph
//! and split it into connected components that can be sampled independently.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::comparison::CandidatePairSet;
use crate::dsu::DisjointSets;
use crate::error::{Error, Result};
use crate::matching::Matching;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEdge {
    /// Index into the candidate pair set.
    pub pair: usize,
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Candidate pairs whose weight is strictly above `w0`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockGraph {
    pub n_a: usize,
    pub n_b: usize,
    pub w0: f64,
    pub edges: Vec<BlockEdge>,
}

pub fn build_block_graph(pairs: &CandidatePairSet, weights: &[f64], w0: f64) -> Result<BlockGraph> {
    if weights.len() != pairs.len() {
        return Err(Error::InvalidParams(format!(
            "{} weights for {} candidate pairs",
            weights.len(),
            pairs.len()
        )));
    }
    let edges = pairs
        .pairs
        .par_iter()
        .zip(weights.par_iter())
        .enumerate()
        .filter(|(_, (_, &w))| w > w0)
        .map(|(pair, (&(a, b), &weight))| BlockEdge { pair, a, b, weight })
        .collect();
    Ok(BlockGraph {
        n_a: pairs.n_a,
        n_b: pairs.n_b,
        w0,
        edges,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: usize,
    /// Sorted member records of file A.
    pub a: Vec<usize>,
    /// Sorted member records of file B.
    pub b: Vec<usize>,
    /// Admissible pairs, in candidate order.
    pub edges: Vec<BlockEdge>,
}

impl Block {
    pub fn pair_count(&self) -> usize {
        self.edges.len()
    }

    pub fn record_count(&self) -> usize {
        self.a.len() + self.b.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostHocBlocks {
    pub n_a: usize,
    pub n_b: usize,
    pub w0: f64,
    /// Numbered by smallest member of file A.
    pub blocks: Vec<Block>,
    pub unblocked_a: Vec<usize>,
    pub unblocked_b: Vec<usize>,
}

impl PostHocBlocks {
    pub fn retained_pairs(&self) -> usize {
        self.blocks.iter().map(Block::pair_count).sum()
    }

    pub fn max_block_pairs(&self) -> usize {
        self.blocks.iter().map(Block::pair_count).max().unwrap_or(0)
    }

    /// Block id of every A record and every B record.
    pub fn membership(&self) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
        let mut of_a = vec![None; self.n_a];
        let mut of_b = vec![None; self.n_b];
        for block in &self.blocks {
            for &a in &block.a {
                of_a[a] = Some(block.id);
            }
            for &b in &block.b {
                of_b[b] = Some(block.id);
            }
        }
        (of_a, of_b)
    }
}

pub fn connected_components(graph: &BlockGraph) -> PostHocBlocks {
    let n_a = graph.n_a;
    let mut dsu = DisjointSets::new(n_a + graph.n_b);
    let mut touched = vec![false; n_a + graph.n_b];
    for e in &graph.edges {
        dsu.union(e.a, n_a + e.b);
        touched[e.a] = true;
        touched[n_a + e.b] = true;
    }
    let mut block_of_root = vec![usize::MAX; n_a + graph.n_b];
    let mut blocks: Vec<Block> = Vec::new();
    let mut unblocked_a = Vec::new();
    let mut unblocked_b = Vec::new();
    // Every block holds an A record, so scanning A first numbers blocks by
    // their smallest A member.
    for (node, &seen) in touched.iter().enumerate() {
        if !seen {
            if node < n_a {
                unblocked_a.push(node);
            } else {
                unblocked_b.push(node - n_a);
            }
            continue;
        }
        let root = dsu.find(node);
        if block_of_root[root] == usize::MAX {
            block_of_root[root] = blocks.len();
            blocks.push(Block {
                id: blocks.len(),
                a: Vec::new(),
                b: Vec::new(),
                edges: Vec::new(),
            });
        }
        let block = &mut blocks[block_of_root[root]];
        if node < n_a {
            block.a.push(node);
        } else {
            block.b.push(node - n_a);
        }
    }
    for e in &graph.edges {
        let id = block_of_root[dsu.find(e.a)];
        blocks[id].edges.push(*e);
    }
    PostHocBlocks {
        n_a,
        n_b: graph.n_b,
        w0: graph.w0,
        blocks,
        unblocked_a,
        unblocked_b,
    }
}

pub fn post_hoc_blocks(
    pairs: &CandidatePairSet,
    weights: &[f64],
    w0: f64,
) -> Result<PostHocBlocks> {
    Ok(connected_components(&build_block_graph(
        pairs, weights, w0,
    )?))
}

/// Nearest-rank quantiles; all zero when there are no blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizeQuantiles {
    pub min: usize,
    pub median: usize,
    pub p90: usize,
    pub max: usize,
}

impl SizeQuantiles {
    fn of(mut sizes: Vec<usize>) -> Self {
        if sizes.is_empty() {
            return SizeQuantiles {
                min: 0,
                median: 0,
                p90: 0,
                max: 0,
            };
        }
        sizes.sort_unstable();
        let rank =
            |q: f64| sizes[((q * sizes.len() as f64).ceil() as usize).clamp(1, sizes.len()) - 1];
        SizeQuantiles {
            min: sizes[0],
            median: rank(0.5),
            p90: rank(0.9),
            max: sizes[sizes.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockingDiagnostics {
    pub w0: f64,
    pub n_blocks: usize,
    pub block_records: SizeQuantiles,
    pub block_pairs: SizeQuantiles,
    pub candidate_pairs: usize,
    pub retained_pairs: usize,
    pub reduction_ratio: f64,
    /// Present only when the true matching is known and nonempty.
    pub pairs_completeness: Option<f64>,
}

/// Summarizes a blocking. A true link counts as retained only when it is an
/// admissible pair of some block.
pub fn diagnostics(
    blocks: &PostHocBlocks,
    candidate_count: usize,
    truth: Option<&Matching>,
) -> Result<BlockingDiagnostics> {
    let retained = blocks.retained_pairs();
    if candidate_count < retained {
        return Err(Error::InvalidParams(format!(
            "{retained} retained pairs exceed {candidate_count} candidates"
        )));
    }
    let pairs_completeness = match truth {
        Some(truth) => {
            if let Some(&(a, b)) = truth
                .links()
                .iter()
                .find(|&&(a, b)| a >= blocks.n_a || b >= blocks.n_b)
            {
                return Err(Error::UnknownRecord {
                    a,
                    b,
                    n_a: blocks.n_a,
                    n_b: blocks.n_b,
                });
            }
            if truth.is_empty() {
                None
            } else {
                let admissible: HashSet<(usize, usize)> = blocks
                    .blocks
                    .iter()
                    .flat_map(|bl| bl.edges.iter().map(|e| (e.a, e.b)))
                    .collect();
                let kept = truth
                    .links()
                    .iter()
                    .filter(|l| admissible.contains(l))
                    .count();
                Some(kept as f64 / truth.len() as f64)
            }
        }
        None => None,
    };
    let reduction_ratio = if candidate_count == 0 {
        0.0
    } else {
        1.0 - retained as f64 / candidate_count as f64
    };
    Ok(BlockingDiagnostics {
        w0: blocks.w0,
        n_blocks: blocks.blocks.len(),
        block_records: SizeQuantiles::of(blocks.blocks.iter().map(Block::record_count).collect()),
        block_pairs: SizeQuantiles::of(blocks.blocks.iter().map(Block::pair_count).collect()),
        candidate_pairs: candidate_count,
        retained_pairs: retained,
        reduction_ratio,
        pairs_completeness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct W0Selection {
    pub w0: f64,
    /// False when no grid value met the budget and the largest was returned.
    pub within_budget: bool,
    pub budget: usize,
    /// One entry per grid value, in ascending `w0` order.
    pub curve: Vec<BlockingDiagnostics>,
}

/// Picks the smallest grid threshold whose largest block has at most
/// `budget` admissible pairs.
pub fn select_w0(
    pairs: &CandidatePairSet,
    weights: &[f64],
    budget: usize,
    grid: &[f64],
    truth: Option<&Matching>,
) -> Result<W0Selection> {
    if grid.is_empty() {
        return Err(Error::InvalidParams("w0 grid is empty".into()));
    }
    if grid.iter().any(|w| w.is_nan()) {
        return Err(Error::InvalidParams("w0 grid contains NaN".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let evaluated: Vec<(usize, BlockingDiagnostics)> = grid
        .par_iter()
        .map(|&w0| {
            let blocks = post_hoc_blocks(pairs, weights, w0)?;
            Ok((
                blocks.max_block_pairs(),
                diagnostics(&blocks, pairs.len(), truth)?,
            ))
        })
        .collect::<Result<_>>()?;
    let chosen = evaluated.iter().position(|(largest, _)| *largest <= budget);
    let (w0, within_budget) = match chosen {
        Some(i) => (grid[i], true),
        None => (grid[grid.len() - 1], false),
    };
    Ok(W0Selection {
        w0,
        within_budget,
        budget,
        curve: evaluated.into_iter().map(|(_, d)| d).collect(),
    })
}
