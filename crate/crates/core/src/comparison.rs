//! Field-by-field comparison of record pairs into ordinal agreement patterns.
//!
//! Levels are 1-based. For a field with `k` agreement levels, level `k` is
//! exact agreement and level 1 the strongest disagreement. When a field has
//! a dedicated missing level, that level is 1 and the agreement levels move
//! up to `2..=k+1`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{Record, RecordFile};

/// Upper cut points for the four-level discretized Levenshtein comparator:
/// exact agreement, (0, .25], (.25, .50] and (.50, 1.0].
pub const FOUR_LEVEL_CUTS: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

const MAX_LEVELS: usize = u8::MAX as usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Comparator {
    /// Two levels: disagree (1) or agree (2).
    Exact,
    /// Normalized Levenshtein distance binned by increasing upper cut points.
    Levenshtein { cuts: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSchema {
    pub name: String,
    pub comparator: Comparator,
    #[serde(default)]
    pub missing_level: bool,
}

impl FieldSchema {
    pub fn exact(name: impl Into<String>) -> Self {
        FieldSchema {
            name: name.into(),
            comparator: Comparator::Exact,
            missing_level: false,
        }
    }

    pub fn levenshtein(name: impl Into<String>, cuts: &[f64]) -> Self {
        FieldSchema {
            name: name.into(),
            comparator: Comparator::Levenshtein {
                cuts: cuts.to_vec(),
            },
            missing_level: false,
        }
    }

    pub fn with_missing_level(mut self) -> Self {
        self.missing_level = true;
        self
    }

    /// Number of non-missing agreement levels.
    pub fn agreement_levels(&self) -> usize {
        match &self.comparator {
            Comparator::Exact => 2,
            Comparator::Levenshtein { cuts } => cuts.len(),
        }
    }

    /// Total level count `k_j`, including the missing level when enabled.
    pub fn levels(&self) -> usize {
        self.agreement_levels() + usize::from(self.missing_level)
    }

    /// Level of the strongest disagreement among the non-missing levels.
    pub fn lowest_agreement_level(&self) -> u8 {
        1 + u8::from(self.missing_level)
    }

    fn validate(&self) -> Result<()> {
        if let Comparator::Levenshtein { cuts } = &self.comparator {
            let bad = |msg: &str| {
                Err(Error::InvalidSchema(format!(
                    "field `{}`: {msg}",
                    self.name
                )))
            };
            if cuts.len() < 2 {
                return bad("at least two cut points are required");
            }
            if cuts.iter().any(|c| !(0.0..=1.0).contains(c)) {
                return bad("cut points must lie in [0, 1]");
            }
            if cuts.windows(2).any(|w| w[0] >= w[1]) {
                return bad("cut points must be strictly increasing");
            }
            if *cuts.last().unwrap() != 1.0 {
                return bad("the last cut point must be 1.0");
            }
        }
        if self.levels() > MAX_LEVELS {
            return Err(Error::InvalidSchema(format!(
                "field `{}` has too many levels",
                self.name
            )));
        }
        Ok(())
    }

    fn compare(&self, a: Option<&str>, b: Option<&str>) -> u8 {
        let shift = u8::from(self.missing_level);
        let (a, b) = match (a, b) {
            (Some(a), Some(b)) => (a, b),
            // The missing level when enabled, otherwise the strongest disagreement.
            _ => return 1,
        };
        let level = match &self.comparator {
            Comparator::Exact => {
                if a == b {
                    2
                } else {
                    1
                }
            }
            Comparator::Levenshtein { cuts } => {
                let dist = normalized_levenshtein(a, b);
                let bin = cuts
                    .iter()
                    .position(|&c| dist <= c)
                    .unwrap_or(cuts.len() - 1);
                (cuts.len() - bin) as u8
            }
        };
        level + shift
    }
}

/// Levenshtein distance divided by the longer string's length, after
/// trimming and case folding. Two empty strings are at distance 0.
pub fn normalized_levenshtein(a: &str, b: &str) -> f64 {
    let a = a.trim().to_lowercase();
    let b = b.trim().to_lowercase();
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    strsim::levenshtein(&a, &b) as f64 / longest as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSchema {
    pub fields: Vec<FieldSchema>,
}

impl ComparisonSchema {
    pub fn new(fields: Vec<FieldSchema>) -> Result<Self> {
        let schema = ComparisonSchema { fields };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fields.is_empty() {
            return Err(Error::InvalidSchema("no fields".into()));
        }
        self.fields.iter().try_for_each(FieldSchema::validate)
    }

    pub fn arity(&self) -> usize {
        self.fields.len()
    }

    pub fn level_counts(&self) -> Vec<usize> {
        self.fields.iter().map(FieldSchema::levels).collect()
    }
}

/// Ordinal agreement levels of one record pair, one entry per field.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ComparisonPattern(pub Vec<u8>);

impl ComparisonPattern {
    pub fn new(levels: Vec<u8>) -> Self {
        ComparisonPattern(levels)
    }

    pub fn levels(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks every entry against its field's level range.
    pub fn check(&self, level_counts: &[usize]) -> Result<()> {
        if self.len() != level_counts.len() {
            return Err(Error::ArityMismatch {
                expected: level_counts.len(),
                found: self.len(),
            });
        }
        for (field, (&level, &levels)) in self.0.iter().zip(level_counts).enumerate() {
            if level == 0 || level as usize > levels {
                return Err(Error::LevelOutOfRange {
                    field,
                    level: level as usize,
                    levels,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for ComparisonPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u8::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

pub fn compare_pair(
    rec_a: &Record,
    rec_b: &Record,
    schema: &ComparisonSchema,
) -> Result<ComparisonPattern> {
    for rec in [rec_a, rec_b] {
        if rec.fields.len() != schema.arity() {
            return Err(Error::ArityMismatch {
                expected: schema.arity(),
                found: rec.fields.len(),
            });
        }
    }
    let levels = schema
        .fields
        .iter()
        .zip(rec_a.fields.iter().zip(&rec_b.fields))
        .map(|(field, (a, b))| field.compare(a.as_deref(), b.as_deref()))
        .collect();
    Ok(ComparisonPattern(levels))
}

/// A run of candidate pairs sharing one traditional blocking key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairGroup {
    pub key: Option<String>,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CandidatePairSet {
    pub n_a: usize,
    pub n_b: usize,
    /// `(a, b)` record indices, contiguous per group.
    pub pairs: Vec<(usize, usize)>,
    pub groups: Vec<PairGroup>,
}

impl CandidatePairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// All pairs, or with `blocking` only the pairs whose records share a
/// blocking key. Records without a key are never paired under blocking.
pub fn build_candidate_pairs(
    file_a: &RecordFile,
    file_b: &RecordFile,
    blocking: bool,
) -> Result<CandidatePairSet> {
    let (n_a, n_b) = (file_a.len(), file_b.len());
    if !blocking {
        let pairs: Vec<_> = (0..n_a)
            .flat_map(|a| (0..n_b).map(move |b| (a, b)))
            .collect();
        let end = pairs.len();
        return Ok(CandidatePairSet {
            n_a,
            n_b,
            pairs,
            groups: vec![PairGroup {
                key: None,
                start: 0,
                end,
            }],
        });
    }
    for file in [file_a, file_b] {
        if !file.has_blocking_key {
            return Err(Error::NoBlockingKey(file.file_id.letter()));
        }
    }

    let mut by_key: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for r in &file_a.records {
        if let Some(k) = r.blocking_key.as_deref() {
            by_key.entry(k).or_default().0.push(r.index);
        }
    }
    for r in &file_b.records {
        if let Some(k) = r.blocking_key.as_deref() {
            by_key.entry(k).or_default().1.push(r.index);
        }
    }

    let mut set = CandidatePairSet {
        n_a,
        n_b,
        ..Default::default()
    };
    for (key, (a_idx, b_idx)) in by_key {
        if a_idx.is_empty() || b_idx.is_empty() {
            continue;
        }
        let start = set.pairs.len();
        for &a in &a_idx {
            set.pairs.extend(b_idx.iter().map(|&b| (a, b)));
        }
        set.groups.push(PairGroup {
            key: Some(key.to_string()),
            start,
            end: set.pairs.len(),
        });
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternEntry {
    pub pattern: ComparisonPattern,
    pub count: u64,
}

/// Unique comparison patterns with their multiplicities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternTable {
    pub level_counts: Vec<usize>,
    pub entries: Vec<PatternEntry>,
    pub total_pairs: u64,
}

impl PatternTable {
    /// Builds a table from explicit entries, merging repeated patterns.
    pub fn from_entries(
        level_counts: Vec<usize>,
        entries: impl IntoIterator<Item = (ComparisonPattern, u64)>,
    ) -> Result<Self> {
        let mut merged: BTreeMap<ComparisonPattern, u64> = BTreeMap::new();
        for (pattern, count) in entries {
            pattern.check(&level_counts)?;
            if count == 0 {
                continue;
            }
            *merged.entry(pattern).or_default() += count;
        }
        let entries: Vec<_> = merged
            .into_iter()
            .rev()
            .map(|(pattern, count)| PatternEntry { pattern, count })
            .collect();
        let total_pairs = entries.iter().map(|e| e.count).sum();
        Ok(PatternTable {
            level_counts,
            entries,
            total_pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fields(&self) -> usize {
        self.level_counts.len()
    }

    pub fn index_of(&self, pattern: &ComparisonPattern) -> Option<usize> {
        self.entries.iter().position(|e| &e.pattern == pattern)
    }

    /// Per-field, per-level totals `sum_g count(g) [g_j = h]`, 0-based levels.
    pub fn level_totals(&self) -> Vec<Vec<u64>> {
        let mut totals: Vec<Vec<u64>> = self.level_counts.iter().map(|&k| vec![0; k]).collect();
        for e in &self.entries {
            for (j, &h) in e.pattern.levels().iter().enumerate() {
                totals[j][h as usize - 1] += e.count;
            }
        }
        totals
    }
}

/// Groups identical patterns. Returns the table together with the index of
/// each pair's pattern in the table. Table rows are sorted with the highest
/// agreement patterns first.
pub fn aggregate_patterns(
    level_counts: &[usize],
    pairs: &CandidatePairSet,
    patterns: &[ComparisonPattern],
) -> Result<(PatternTable, Vec<usize>)> {
    if patterns.len() != pairs.len() {
        return Err(Error::Artifact(format!(
            "{} patterns supplied for {} candidate pairs",
            patterns.len(),
            pairs.len()
        )));
    }
    let mut counts: HashMap<&ComparisonPattern, u64> = HashMap::new();
    for p in patterns {
        *counts.entry(p).or_default() += 1;
    }
    let table = PatternTable::from_entries(
        level_counts.to_vec(),
        counts.into_iter().map(|(p, c)| (p.clone(), c)),
    )?;
    let index: HashMap<&ComparisonPattern, usize> = table
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| (&e.pattern, i))
        .collect();
    let pair_pattern = patterns.iter().map(|p| index[p]).collect();
    Ok((table, pair_pattern))
}

/// Everything the estimators need: candidate pairs, each pair's pattern
/// and the aggregated pattern table.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparisons {
    pub pairs: CandidatePairSet,
    pub pair_pattern: Vec<usize>,
    pub table: PatternTable,
}

impl Comparisons {
    pub fn new(
        pairs: CandidatePairSet,
        pair_pattern: Vec<usize>,
        table: PatternTable,
    ) -> Result<Self> {
        if pair_pattern.len() != pairs.len() {
            return Err(Error::Artifact("pair/pattern length mismatch".into()));
        }
        if let Some(&bad) = pair_pattern.iter().find(|&&p| p >= table.len()) {
            return Err(Error::Artifact(format!("pattern id {bad} not in table")));
        }
        if table.total_pairs != pairs.len() as u64 {
            return Err(Error::Artifact(format!(
                "pattern counts sum to {} but there are {} pairs",
                table.total_pairs,
                pairs.len()
            )));
        }
        if let Some(&(a, b)) = pairs
            .pairs
            .iter()
            .find(|&&(a, b)| a >= pairs.n_a || b >= pairs.n_b)
        {
            return Err(Error::UnknownRecord {
                a,
                b,
                n_a: pairs.n_a,
                n_b: pairs.n_b,
            });
        }
        Ok(Comparisons {
            pairs,
            pair_pattern,
            table,
        })
    }

    pub fn n_a(&self) -> usize {
        self.pairs.n_a
    }

    pub fn n_b(&self) -> usize {
        self.pairs.n_b
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pattern_of(&self, pair: usize) -> &ComparisonPattern {
        &self.table.entries[self.pair_pattern[pair]].pattern
    }
}

/// Compares every candidate pair of two files under `schema`.
pub fn compare_files(
    file_a: &RecordFile,
    file_b: &RecordFile,
    schema: &ComparisonSchema,
    blocking: bool,
) -> Result<Comparisons> {
    schema.validate()?;
    let pairs = build_candidate_pairs(file_a, file_b, blocking)?;
    let patterns = pairs
        .pairs
        .par_iter()
        .map(|&(a, b)| compare_pair(&file_a.records[a], &file_b.records[b], schema))
        .collect::<Result<Vec<_>>>()?;
    let (table, pair_pattern) = aggregate_patterns(&schema.level_counts(), &pairs, &patterns)?;
    Comparisons::new(pairs, pair_pattern, table)
}
