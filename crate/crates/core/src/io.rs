//! CSV and JSON artifacts exchanged between pipeline stages.
//!
//! Every reader validates what it parses and returns an error rather than
//! panicking on malformed input. Floats are written with Rust's shortest
//! round-trip formatting, so re-running a stage on the same inputs
//! reproduces its files byte for byte.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bench::ResultRow;
use crate::blocking::{BlockingDiagnostics, PostHocBlocks};
use crate::comparison::{
    CandidatePairSet, ComparisonPattern, ComparisonSchema, Comparisons, PatternEntry, PatternTable,
};
use crate::error::{Error, Result};
use crate::estimators::Decision;
use crate::matching::Matching;
use crate::mcmc::PosteriorSummary;
use crate::mixture::{MixtureParams, WeightTable};
use crate::records::RecordFile;

fn bad(msg: impl Into<String>) -> Error {
    Error::Artifact(msg.into())
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(false).from_writer(w)
}

fn csv_reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(r)
}

fn expect_header<R: Read>(rdr: &mut csv::Reader<R>, want: &[&str]) -> Result<()> {
    let got: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if got != want {
        return Err(bad(format!(
            "expected header {}, found {}",
            want.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

fn rows<R: Read>(
    rdr: &mut csv::Reader<R>,
    width: usize,
) -> impl Iterator<Item = Result<csv::StringRecord>> + '_ {
    rdr.records().enumerate().map(move |(i, row)| {
        let row = row?;
        if row.len() != width {
            return Err(Error::RaggedRow {
                row: i + 1,
                expected: width,
                found: row.len(),
            });
        }
        Ok(row)
    })
}

fn parse<T: std::str::FromStr>(row: &csv::StringRecord, col: usize, what: &str) -> Result<T> {
    let cell = row.get(col).unwrap_or("").trim();
    cell.parse()
        .map_err(|_| bad(format!("cannot parse {what} from `{cell}`")))
}

fn parse_finite(row: &csv::StringRecord, col: usize, what: &str) -> Result<f64> {
    let v: f64 = parse(row, col, what)?;
    if !v.is_finite() {
        return Err(bad(format!("{what} must be finite")));
    }
    Ok(v)
}

fn optional(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_json<W: Write, T: Serialize>(w: W, value: &T) -> Result<()> {
    let mut w = w;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_json<R: Read, T: DeserializeOwned>(r: R) -> Result<T> {
    Ok(serde_json::from_reader(r)?)
}

/// Shape of a comparison run, stored next to the pattern table and the
/// pair index so later stages can rebuild [`Comparisons`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonMeta {
    pub n_a: usize,
    pub n_b: usize,
    pub schema: ComparisonSchema,
    pub blocking: bool,
}

/// Columns `level_1..level_d,count`, one row per unique pattern.
pub fn write_pattern_table<W: Write>(w: W, table: &PatternTable) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header: Vec<String> = (1..=table.fields()).map(|j| format!("level_{j}")).collect();
    header.push("count".into());
    out.write_record(&header)?;
    for e in &table.entries {
        let mut row: Vec<String> = e.pattern.levels().iter().map(u8::to_string).collect();
        row.push(e.count.to_string());
        out.write_record(&row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a pattern table whose fields have the given level counts. Row
/// order is kept, so row `i` is pattern id `i`; repeated patterns are
/// rejected rather than merged.
pub fn read_pattern_table<R: Read>(r: R, level_counts: &[usize]) -> Result<PatternTable> {
    let mut rdr = csv_reader(r);
    let mut header: Vec<String> = (1..=level_counts.len())
        .map(|j| format!("level_{j}"))
        .collect();
    header.push("count".into());
    expect_header(
        &mut rdr,
        &header.iter().map(String::as_str).collect::<Vec<_>>(),
    )?;
    let d = level_counts.len();
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    let mut total: u64 = 0;
    for row in rows(&mut rdr, d + 1) {
        let row = row?;
        let levels = (0..d)
            .map(|j| parse::<u8>(&row, j, "level"))
            .collect::<Result<Vec<_>>>()?;
        let pattern = ComparisonPattern::new(levels);
        pattern.check(level_counts)?;
        let count: u64 = parse(&row, d, "count")?;
        if count == 0 {
            return Err(bad("pattern counts must be positive"));
        }
        if !seen.insert(pattern.clone()) {
            return Err(bad(format!("pattern {pattern} appears twice")));
        }
        total = total
            .checked_add(count)
            .ok_or_else(|| bad("pattern counts overflow"))?;
        entries.push(PatternEntry { pattern, count });
    }
    Ok(PatternTable {
        level_counts: level_counts.to_vec(),
        entries,
        total_pairs: total,
    })
}

/// Columns `a_index,b_index,pattern_id`, in candidate order.
pub fn write_pairs<W: Write>(w: W, comparisons: &Comparisons) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["a_index", "b_index", "pattern_id"])?;
    for (&(a, b), &p) in comparisons
        .pairs
        .pairs
        .iter()
        .zip(&comparisons.pair_pattern)
    {
        out.write_record([a.to_string(), b.to_string(), p.to_string()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads `(a, b, pattern_id)` triples, rejecting repeated pairs.
pub fn read_pairs<R: Read>(r: R) -> Result<Vec<(usize, usize, usize)>> {
    let mut rdr = csv_reader(r);
    expect_header(&mut rdr, &["a_index", "b_index", "pattern_id"])?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for row in rows(&mut rdr, 3) {
        let row = row?;
        let (a, b) = (parse(&row, 0, "a_index")?, parse(&row, 1, "b_index")?);
        if !seen.insert((a, b)) {
            return Err(bad(format!("pair ({a}, {b}) appears twice")));
        }
        out.push((a, b, parse(&row, 2, "pattern_id")?));
    }
    Ok(out)
}

/// Rebuilds comparisons from the three comparison artifacts, checking that
/// the pair index agrees with the pattern counts.
pub fn assemble_comparisons(
    meta: &ComparisonMeta,
    table: PatternTable,
    pairs: Vec<(usize, usize, usize)>,
) -> Result<Comparisons> {
    let mut tally = vec![0u64; table.len()];
    for &(_, _, p) in &pairs {
        match tally.get_mut(p) {
            Some(t) => *t += 1,
            None => return Err(bad(format!("pattern id {p} not in table"))),
        }
    }
    if let Some(i) = (0..table.len()).find(|&i| tally[i] != table.entries[i].count) {
        return Err(bad(format!(
            "pattern {i} has count {} but {} pairs refer to it",
            table.entries[i].count, tally[i]
        )));
    }
    let set = CandidatePairSet {
        n_a: meta.n_a,
        n_b: meta.n_b,
        pairs: pairs.iter().map(|&(a, b, _)| (a, b)).collect(),
        groups: Vec::new(),
    };
    Comparisons::new(set, pairs.iter().map(|&(_, _, p)| p).collect(), table)
}

/// Columns `level_1..level_d,count,log_m,log_u,weight`.
pub fn write_weight_table<W: Write>(
    w: W,
    table: &PatternTable,
    weights: &WeightTable,
) -> Result<()> {
    let mut out = csv_writer(w);
    let mut header: Vec<String> = (1..=table.fields()).map(|j| format!("level_{j}")).collect();
    header.extend(["count", "log_m", "log_u", "weight"].map(String::from));
    out.write_record(&header)?;
    for (e, r) in table.entries.iter().zip(&weights.rows) {
        let mut row: Vec<String> = e.pattern.levels().iter().map(u8::to_string).collect();
        row.extend([
            e.count.to_string(),
            r.log_m.to_string(),
            r.log_u.to_string(),
            r.weight.to_string(),
        ]);
        out.write_record(&row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_params<W: Write>(w: W, params: &MixtureParams) -> Result<()> {
    write_json(w, params)
}

/// Parses and validates fitted parameters.
pub fn read_params<R: Read>(r: R) -> Result<MixtureParams> {
    read_json(r)
}

/// Columns `a_index,b_index,weight`, sorted by `a_index`.
pub fn write_matching<W: Write>(w: W, links: &[(usize, usize, f64)]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["a_index", "b_index", "weight"])?;
    for &(a, b, weight) in links {
        out.write_record([a.to_string(), b.to_string(), weight.to_string()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads a matching file into a validated one-to-one matching and the
/// weight recorded for each link (in the matching's link order).
pub fn read_matching<R: Read>(r: R, n_a: usize, n_b: usize) -> Result<(Matching, Vec<f64>)> {
    let mut rdr = csv_reader(r);
    expect_header(&mut rdr, &["a_index", "b_index", "weight"])?;
    let mut links = Vec::new();
    for row in rows(&mut rdr, 3) {
        let row = row?;
        links.push((
            parse::<usize>(&row, 0, "a_index")?,
            parse::<usize>(&row, 1, "b_index")?,
            parse_finite(&row, 2, "weight")?,
        ));
    }
    let matching = Matching::new(n_a, n_b, links.iter().map(|&(a, b, _)| (a, b)).collect())?;
    links.sort_by_key(|&(a, _, _)| a);
    Ok((matching, links.into_iter().map(|(_, _, w)| w).collect()))
}

/// Columns `a_index,b_index,weight,decision` for the pairs that are not
/// rejected outright.
pub fn write_fs_decisions<W: Write>(w: W, rows: &[(usize, usize, f64, Decision)]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["a_index", "b_index", "weight", "decision"])?;
    for &(a, b, weight, d) in rows {
        let label = match d {
            Decision::Link => "link",
            Decision::NonLink => "non_link",
            Decision::Indeterminate => "indeterminate",
        };
        out.write_record([
            a.to_string(),
            b.to_string(),
            weight.to_string(),
            label.to_string(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Columns `a_index,b_index`; the ground-truth format.
pub fn write_links<W: Write>(w: W, matching: &Matching) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["a_index", "b_index"])?;
    for &(a, b) in matching.links() {
        out.write_record([a.to_string(), b.to_string()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_links<R: Read>(r: R, n_a: usize, n_b: usize) -> Result<Matching> {
    let mut rdr = csv_reader(r);
    expect_header(&mut rdr, &["a_index", "b_index"])?;
    let mut links = Vec::new();
    for row in rows(&mut rdr, 2) {
        let row = row?;
        links.push((parse(&row, 0, "a_index")?, parse(&row, 1, "b_index")?));
    }
    Matching::new(n_a, n_b, links)
}

/// Columns `theta,link_count,objective`.
pub fn write_theta_sweep<W: Write>(w: W, points: &[(f64, usize, f64)]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["theta", "link_count", "objective"])?;
    for &(theta, links, objective) in points {
        out.write_record([theta.to_string(), links.to_string(), objective.to_string()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Columns `block_id,side,record_index`; side is `A` or `B`.
pub fn write_blocks<W: Write>(w: W, blocks: &PostHocBlocks) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["block_id", "side", "record_index"])?;
    for block in &blocks.blocks {
        for (side, members) in [("A", &block.a), ("B", &block.b)] {
            for r in members {
                out.write_record([block.id.to_string(), side.to_string(), r.to_string()])?;
            }
        }
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Block membership per record of each file, `None` for unblocked records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockMembership {
    pub a: Vec<Option<usize>>,
    pub b: Vec<Option<usize>>,
}

pub fn read_blocks<R: Read>(r: R, n_a: usize, n_b: usize) -> Result<BlockMembership> {
    let mut rdr = csv_reader(r);
    expect_header(&mut rdr, &["block_id", "side", "record_index"])?;
    let mut m = BlockMembership {
        a: vec![None; n_a],
        b: vec![None; n_b],
    };
    for row in rows(&mut rdr, 3) {
        let row = row?;
        let block: usize = parse(&row, 0, "block_id")?;
        let index: usize = parse(&row, 2, "record_index")?;
        let slots = match row.get(1).map(str::trim) {
            Some("A") => &mut m.a,
            Some("B") => &mut m.b,
            other => {
                return Err(bad(format!(
                    "side must be A or B, found `{}`",
                    other.unwrap_or("")
                )))
            }
        };
        let slot = slots
            .get_mut(index)
            .ok_or_else(|| bad(format!("record {index} outside the file")))?;
        if slot.replace(block).is_some() {
            return Err(bad(format!("record {index} listed in two blocks")));
        }
    }
    Ok(m)
}

/// Columns `w0,n_blocks,max_block_pairs,reduction_ratio,pairs_completeness`;
/// completeness is left empty when unknown.
pub fn write_block_curve<W: Write>(w: W, curve: &[BlockingDiagnostics]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record([
        "w0",
        "n_blocks",
        "max_block_pairs",
        "reduction_ratio",
        "pairs_completeness",
    ])?;
    for d in curve {
        out.write_record([
            d.w0.to_string(),
            d.n_blocks.to_string(),
            d.block_pairs.max.to_string(),
            d.reduction_ratio.to_string(),
            optional(d.pairs_completeness),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Columns `a_index,b_index,frequency` over every admissible pair.
pub fn write_posterior<W: Write>(w: W, summary: &PosteriorSummary) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["a_index", "b_index", "frequency"])?;
    for p in &summary.pairs {
        out.write_record([p.a.to_string(), p.b.to_string(), p.frequency.to_string()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Reads posterior link frequencies, each in `[0, 1]`.
pub fn read_posterior<R: Read>(r: R) -> Result<Vec<(usize, usize, f64)>> {
    let mut rdr = csv_reader(r);
    expect_header(&mut rdr, &["a_index", "b_index", "frequency"])?;
    let mut out = Vec::new();
    for row in rows(&mut rdr, 3) {
        let row = row?;
        let f = parse_finite(&row, 2, "frequency")?;
        if !(0.0..=1.0).contains(&f) {
            return Err(bad(format!("frequency {f} outside [0, 1]")));
        }
        out.push((parse(&row, 0, "a_index")?, parse(&row, 1, "b_index")?, f));
    }
    Ok(out)
}

/// Columns `iteration,L`, one row per sweep starting at 1.
pub fn write_l_trace<W: Write>(w: W, trace: &[usize]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["iteration", "L"])?;
    for (i, l) in trace.iter().enumerate() {
        out.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// One row per (scenario, replicate, estimator); absent values are empty.
pub fn write_results<W: Write>(w: W, rows: &[ResultRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record([
        "scenario",
        "n",
        "overlap",
        "errors",
        "replicate",
        "seed",
        "estimator",
        "theta",
        "estimated_links",
        "true_links",
        "correct_links",
        "precision",
        "recall",
        "wall_time_ms",
        "error",
    ])?;
    for r in rows {
        let count = |f: fn(&crate::bench::ScoreReport) -> usize| {
            r.score
                .as_ref()
                .map(|s| f(s).to_string())
                .unwrap_or_default()
        };
        out.write_record([
            r.scenario.to_string(),
            r.n.to_string(),
            r.overlap.to_string(),
            r.errors.to_string(),
            r.replicate.to_string(),
            r.seed.to_string(),
            r.estimator.name().to_string(),
            r.theta.to_string(),
            count(|s| s.estimated_links),
            count(|s| s.true_links),
            count(|s| s.correct_links),
            optional(r.score.and_then(|s| s.precision)),
            optional(r.score.and_then(|s| s.recall)),
            optional(r.wall_time_ms),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Writes a record file with a header of field names, plus a `block_key`
/// column when any record carries a blocking key. Missing values are empty.
pub fn write_records<W: Write>(w: W, file: &RecordFile) -> Result<()> {
    let mut out = csv_writer(w);
    let keyed = file.records.iter().any(|r| r.blocking_key.is_some());
    let mut header = file.field_names.clone();
    if keyed {
        header.push(BLOCK_KEY_COLUMN.into());
    }
    out.write_record(&header)?;
    for rec in &file.records {
        let mut row: Vec<&str> = rec
            .fields
            .iter()
            .map(|f| f.as_deref().unwrap_or(""))
            .collect();
        if keyed {
            row.push(rec.blocking_key.as_deref().unwrap_or(""));
        }
        out.write_record(&row)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Column name used for blocking keys in generated record files.
pub const BLOCK_KEY_COLUMN: &str = "block_key";
