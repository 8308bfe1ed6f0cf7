use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A one-to-one link set between records of file A and file B.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matching {
    n_a: usize,
    n_b: usize,
    links: Vec<(usize, usize)>,
}

impl Matching {
    pub fn new(n_a: usize, n_b: usize, mut links: Vec<(usize, usize)>) -> Result<Self> {
        links.sort_unstable();
        let mut seen_b = HashSet::with_capacity(links.len());
        let mut last_a = None;
        for &(a, b) in &links {
            if a >= n_a || b >= n_b {
                return Err(Error::UnknownRecord { a, b, n_a, n_b });
            }
            if last_a == Some(a) {
                return Err(Error::NotOneToOne {
                    side: 'A',
                    index: a,
                });
            }
            if !seen_b.insert(b) {
                return Err(Error::NotOneToOne {
                    side: 'B',
                    index: b,
                });
            }
            last_a = Some(a);
        }
        Ok(Matching { n_a, n_b, links })
    }

    pub fn empty(n_a: usize, n_b: usize) -> Self {
        Matching {
            n_a,
            n_b,
            links: Vec::new(),
        }
    }

    pub fn n_a(&self) -> usize {
        self.n_a
    }

    pub fn n_b(&self) -> usize {
        self.n_b
    }

    /// Links sorted by `(a, b)`.
    pub fn links(&self) -> &[(usize, usize)] {
        &self.links
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.links.binary_search(&(a, b)).is_ok()
    }

    pub fn partner_of_a(&self, a: usize) -> Option<usize> {
        let i = self.links.partition_point(|&(x, _)| x < a);
        self.links.get(i).filter(|&&(x, _)| x == a).map(|&(_, b)| b)
    }

    pub fn is_subset_of(&self, other: &Matching) -> bool {
        self.links.iter().all(|&(a, b)| other.contains(a, b))
    }
}
