//! Synthetic pairs of record files with a known true matching.
//!
//! File A is drawn from frequency-weighted value pools. File B holds
//! corrupted copies of a random subset of A plus fresh records, in shuffled
//! order. Corruption touches exactly `errors_per_record` distinct fields of
//! a copy: a single character substitution, insertion or deletion for name
//! fields, and a resample to a different category for categorical fields.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::comparison::{ComparisonSchema, FieldSchema, FOUR_LEVEL_CUTS};
use crate::error::{Error, Result};
use crate::matching::Matching;
use crate::records::{FileId, Record, RecordFile};

/// Given names, most frequent first.
const GIVEN_NAMES: &[&str] = &[
    "mary",
    "james",
    "john",
    "patricia",
    "robert",
    "jennifer",
    "michael",
    "linda",
    "william",
    "elizabeth",
    "david",
    "barbara",
    "richard",
    "susan",
    "joseph",
    "jessica",
    "thomas",
    "sarah",
    "charles",
    "karen",
    "christopher",
    "nancy",
    "daniel",
    "lisa",
    "matthew",
    "betty",
    "anthony",
    "margaret",
    "mark",
    "sandra",
    "donald",
    "ashley",
    "steven",
    "kimberly",
    "paul",
    "emily",
    "andrew",
    "donna",
    "joshua",
    "michelle",
    "kenneth",
    "dorothy",
    "kevin",
    "carol",
    "brian",
    "amanda",
    "george",
    "melissa",
    "timothy",
    "deborah",
    "ronald",
    "stephanie",
    "edward",
    "rebecca",
    "jason",
    "sharon",
    "jeffrey",
    "laura",
    "ryan",
    "cynthia",
    "jacob",
    "kathleen",
    "gary",
    "amy",
    "nicholas",
    "angela",
    "eric",
    "shirley",
    "jonathan",
    "anna",
    "stephen",
    "brenda",
    "larry",
    "pamela",
    "justin",
    "emma",
    "scott",
    "nicole",
    "brandon",
    "helen",
    "benjamin",
    "samantha",
    "samuel",
    "katherine",
    "gregory",
    "christine",
    "alexander",
    "debra",
    "frank",
    "rachel",
    "patrick",
    "carolyn",
    "raymond",
    "janet",
    "jack",
    "catherine",
    "dennis",
    "maria",
    "jerry",
    "heather",
    "tyler",
    "diane",
    "aaron",
    "ruth",
    "jose",
    "julie",
    "adam",
    "olivia",
    "nathan",
    "joyce",
    "henry",
    "virginia",
    "douglas",
    "victoria",
    "zachary",
    "kelly",
    "peter",
    "lauren",
    "kyle",
    "christina",
];

/// Family names, most frequent first.
const FAMILY_NAMES: &[&str] = &[
    "smith",
    "johnson",
    "williams",
    "brown",
    "jones",
    "garcia",
    "miller",
    "davis",
    "rodriguez",
    "martinez",
    "hernandez",
    "lopez",
    "gonzalez",
    "wilson",
    "anderson",
    "thomas",
    "taylor",
    "moore",
    "jackson",
    "martin",
    "lee",
    "perez",
    "thompson",
    "white",
    "harris",
    "sanchez",
    "clark",
    "ramirez",
    "lewis",
    "robinson",
    "walker",
    "young",
    "allen",
    "king",
    "wright",
    "scott",
    "torres",
    "nguyen",
    "hill",
    "flores",
    "green",
    "adams",
    "nelson",
    "baker",
    "hall",
    "rivera",
    "campbell",
    "mitchell",
    "carter",
    "roberts",
    "gomez",
    "phillips",
    "evans",
    "turner",
    "diaz",
    "parker",
    "cruz",
    "edwards",
    "collins",
    "reyes",
    "stewart",
    "morris",
    "morales",
    "murphy",
    "cook",
    "rogers",
    "gutierrez",
    "ortiz",
    "morgan",
    "cooper",
    "peterson",
    "bailey",
    "reed",
    "kelly",
    "howard",
    "ramos",
    "kim",
    "cox",
    "ward",
    "richardson",
    "watson",
    "brooks",
    "chavez",
    "wood",
    "james",
    "bennett",
    "gray",
    "mendoza",
    "ruiz",
    "hughes",
    "price",
    "alvarez",
    "castillo",
    "sanders",
    "patel",
    "myers",
    "long",
    "ross",
    "foster",
    "jimenez",
    "powell",
    "jenkins",
    "perry",
    "russell",
    "sullivan",
    "bell",
    "coleman",
    "butler",
    "henderson",
    "barnes",
    "gonzales",
    "fisher",
    "vasquez",
    "simmons",
    "romero",
    "jordan",
    "patterson",
    "alexander",
    "hamilton",
    "graham",
    "reynolds",
    "griffin",
    "wallace",
    "moreno",
    "west",
    "cole",
    "hayes",
    "bryant",
    "herrera",
    "gibson",
    "ellis",
    "tran",
    "medina",
    "aguilar",
    "stevens",
    "murray",
    "ford",
    "castro",
    "marshall",
];

/// Rank-frequency exponent applied to the name pools.
const NAME_SKEW: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SynthFieldKind {
    GivenName,
    FamilyName,
    /// Values `"{field}{index}"` with weights `1 / (index + 1)^skew`.
    Categorical {
        categories: usize,
        skew: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthField {
    pub name: String,
    #[serde(flatten)]
    pub kind: SynthFieldKind,
}

impl SynthField {
    pub fn given_name(name: &str) -> Self {
        SynthField {
            name: name.into(),
            kind: SynthFieldKind::GivenName,
        }
    }

    pub fn family_name(name: &str) -> Self {
        SynthField {
            name: name.into(),
            kind: SynthFieldKind::FamilyName,
        }
    }

    pub fn categorical(name: &str, categories: usize, skew: f64) -> Self {
        SynthField {
            name: name.into(),
            kind: SynthFieldKind::Categorical { categories, skew },
        }
    }

    fn is_string(&self) -> bool {
        !matches!(self.kind, SynthFieldKind::Categorical { .. })
    }

    /// Four-level Levenshtein comparison for names, exact for categories.
    pub fn comparison(&self) -> FieldSchema {
        if self.is_string() {
            FieldSchema::levenshtein(self.name.clone(), &FOUR_LEVEL_CUTS)
        } else {
            FieldSchema::exact(self.name.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_a: usize,
    pub n_b: usize,
    /// Fraction of file A with a corrupted copy in file B.
    pub overlap: f64,
    pub errors_per_record: usize,
    /// Chance that a copy is corrupted at all.
    #[serde(default = "one")]
    pub corruption_prob: f64,
    /// A corrupted name receives between 1 and this many character edits.
    #[serde(default = "one_edit")]
    pub max_string_edits: usize,
    pub fields: Vec<SynthField>,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

fn one_edit() -> usize {
    1
}

impl SynthConfig {
    /// Two name fields and two categorical fields, `n` records per file.
    pub fn four_field(n: usize, overlap: f64, errors_per_record: usize, seed: u64) -> Self {
        SynthConfig {
            n_a: n,
            n_b: n,
            overlap,
            errors_per_record,
            corruption_prob: 1.0,
            max_string_edits: 2,
            fields: vec![
                SynthField::given_name("given_name"),
                SynthField::family_name("family_name"),
                SynthField::categorical("age", 80, 0.2),
                SynthField::categorical("occupation", 60, 0.7),
            ],
            seed,
        }
    }

    /// A small two-file problem with three categorical fields compared by
    /// exact agreement: 34 and 45 records, 17 true matches.
    pub fn census_like(seed: u64) -> Self {
        SynthConfig {
            n_a: 34,
            n_b: 45,
            overlap: 0.5,
            errors_per_record: 1,
            corruption_prob: 0.3,
            max_string_edits: 1,
            fields: vec![
                SynthField::categorical("surname_prefix", 339, 1.0),
                SynthField::categorical("sex", 2, 0.0),
                SynthField::categorical("education", 17, 0.5),
            ],
            seed,
        }
    }

    pub fn true_matches(&self) -> usize {
        (self.overlap * self.n_a as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..=1.0).contains(&self.overlap) {
            return bad(format!("overlap {} outside [0, 1]", self.overlap));
        }
        let exact = self.overlap * self.n_a as f64;
        if (exact - exact.round()).abs() > 1e-6 {
            return bad(format!(
                "overlap {} of {} records is not a whole number",
                self.overlap, self.n_a
            ));
        }
        if self.true_matches() > self.n_b {
            return bad(format!(
                "{} true matches do not fit in {} records",
                self.true_matches(),
                self.n_b
            ));
        }
        if self.fields.is_empty() {
            return bad("no fields".into());
        }
        if self.max_string_edits == 0 {
            return bad("max_string_edits must be at least 1".to_string());
        }
        if self.errors_per_record > self.fields.len() {
            return bad(format!(
                "{} errors per record exceed {} fields",
                self.errors_per_record,
                self.fields.len()
            ));
        }
        if !(0.0..=1.0).contains(&self.corruption_prob) {
            return bad(format!(
                "corruption probability {} outside [0, 1]",
                self.corruption_prob
            ));
        }
        for f in &self.fields {
            if let SynthFieldKind::Categorical { categories, skew } = f.kind {
                if categories < 2 || !skew.is_finite() || skew < 0.0 {
                    return bad(format!(
                        "field `{}` needs at least two categories and a finite skew >= 0",
                        f.name
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn schema(&self) -> ComparisonSchema {
        ComparisonSchema {
            fields: self.fields.iter().map(SynthField::comparison).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corruption {
    pub a: usize,
    pub b: usize,
    /// Indices of the altered fields.
    pub fields: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub matching: Matching,
    /// One entry per true match, sorted by `b`.
    pub corruptions: Vec<Corruption>,
}

struct Pool {
    values: Vec<String>,
    weights: WeightedIndex<f64>,
    raw: Vec<f64>,
}

impl Pool {
    fn ranked(values: Vec<String>, skew: f64) -> Self {
        let raw: Vec<f64> = (0..values.len())
            .map(|i| 1.0 / ((i + 1) as f64).powf(skew))
            .collect();
        Pool {
            weights: WeightedIndex::new(&raw).expect("positive weights"),
            values,
            raw,
        }
    }

    fn for_field(field: &SynthField) -> Self {
        match &field.kind {
            SynthFieldKind::GivenName => Self::ranked(
                GIVEN_NAMES.iter().map(|s| s.to_string()).collect(),
                NAME_SKEW,
            ),
            SynthFieldKind::FamilyName => Self::ranked(
                FAMILY_NAMES.iter().map(|s| s.to_string()).collect(),
                NAME_SKEW,
            ),
            SynthFieldKind::Categorical { categories, skew } => Self::ranked(
                (0..*categories)
                    .map(|i| format!("{}{i}", field.name))
                    .collect(),
                *skew,
            ),
        }
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> String {
        self.values[self.weights.sample(rng)].clone()
    }

    /// A value other than `current`, by the pool weights.
    fn draw_other<R: Rng>(&self, current: &str, rng: &mut R) -> String {
        let raw: Vec<f64> = self
            .values
            .iter()
            .zip(&self.raw)
            .map(|(v, &w)| if v == current { 0.0 } else { w })
            .collect();
        let idx = WeightedIndex::new(&raw)
            .expect("at least two values")
            .sample(rng);
        self.values[idx].clone()
    }
}

fn random_letter<R: Rng>(rng: &mut R) -> char {
    char::from(b'a' + rng.random_range(0..26u8))
}

/// One substitution, insertion or deletion, chosen uniformly. Deletion on a
/// single character falls back to substitution so the value stays nonempty.
pub fn edit_string<R: Rng>(value: &str, rng: &mut R) -> String {
    let mut chars: Vec<char> = value.chars().collect();
    let op = rng.random_range(0..3);
    if op == 1 {
        let at = rng.random_range(0..=chars.len());
        chars.insert(at, random_letter(rng));
    } else if op == 2 && chars.len() > 1 {
        let at = rng.random_range(0..chars.len());
        chars.remove(at);
    } else if chars.is_empty() {
        chars.push(random_letter(rng));
    } else {
        let at = rng.random_range(0..chars.len());
        let old = chars[at];
        let mut new = random_letter(rng);
        while new == old {
            new = random_letter(rng);
        }
        chars[at] = new;
    }
    chars.into_iter().collect()
}

/// Applies a uniform number of edits in `1..=max_edits`, retrying until the
/// result differs from the input.
pub fn corrupt_string<R: Rng>(value: &str, max_edits: usize, rng: &mut R) -> String {
    let edits = rng.random_range(1..=max_edits.max(1));
    loop {
        let mut out = value.to_string();
        for _ in 0..edits {
            out = edit_string(&out, rng);
        }
        if out != value {
            return out;
        }
    }
}

fn field_names(config: &SynthConfig) -> Vec<String> {
    config.fields.iter().map(|f| f.name.clone()).collect()
}

/// Field values of a B row and, for copies, the source A index with the
/// corrupted fields.
type BRow = (Vec<String>, Option<(usize, Vec<usize>)>);

pub fn generate(config: &SynthConfig) -> Result<(RecordFile, RecordFile, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pools: Vec<Pool> = config.fields.iter().map(Pool::for_field).collect();
    let fresh =
        |rng: &mut ChaCha8Rng| -> Vec<String> { pools.iter().map(|p| p.draw(rng)).collect() };

    let a_values: Vec<Vec<String>> = (0..config.n_a).map(|_| fresh(&mut rng)).collect();
    let matches = config.true_matches();
    let mut sources: Vec<usize> = sample(&mut rng, config.n_a, matches).into_vec();
    sources.sort_unstable();

    // Rows of B before shuffling: copies first, then fresh records.
    let mut b_rows: Vec<BRow> = Vec::with_capacity(config.n_b);
    for &a in &sources {
        let mut values = a_values[a].clone();
        let mut altered = Vec::new();
        if config.errors_per_record > 0 && rng.random::<f64>() < config.corruption_prob {
            altered = sample(&mut rng, config.fields.len(), config.errors_per_record).into_vec();
            altered.sort_unstable();
            for &j in &altered {
                values[j] = if config.fields[j].is_string() {
                    corrupt_string(&values[j], config.max_string_edits, &mut rng)
                } else {
                    pools[j].draw_other(&values[j], &mut rng)
                };
            }
        }
        b_rows.push((values, Some((a, altered))));
    }
    while b_rows.len() < config.n_b {
        b_rows.push((fresh(&mut rng), None));
    }
    b_rows.shuffle(&mut rng);

    let to_record = |i: usize, prefix: char, values: Vec<String>| {
        let mut r = Record::new(i, values.into_iter().map(Some));
        r.id = Some(format!("{prefix}{i}"));
        r
    };
    let a_records = a_values
        .into_iter()
        .enumerate()
        .map(|(i, v)| to_record(i, 'a', v))
        .collect();
    let mut links = Vec::with_capacity(matches);
    let mut corruptions = Vec::with_capacity(matches);
    let mut b_records = Vec::with_capacity(config.n_b);
    for (b, (values, origin)) in b_rows.into_iter().enumerate() {
        if let Some((a, fields)) = origin {
            links.push((a, b));
            corruptions.push(Corruption { a, b, fields });
        }
        b_records.push(to_record(b, 'b', values));
    }
    let file_a = RecordFile::new(FileId::A, field_names(config), a_records)?;
    let file_b = RecordFile::new(FileId::B, field_names(config), b_records)?;
    let truth = GroundTruth {
        matching: Matching::new(config.n_a, config.n_b, links)?,
        corruptions,
    };
    Ok((file_a, file_b, truth))
}

/// Concatenates `copies` independent draws, each tagged with its own
/// blocking key, so that traditional blocking recovers the draws.
pub fn generate_stacked(
    config: &SynthConfig,
    copies: usize,
) -> Result<(RecordFile, RecordFile, GroundTruth)> {
    let mut a_records = Vec::new();
    let mut b_records = Vec::new();
    let mut links = Vec::new();
    let mut corruptions = Vec::new();
    for copy in 0..copies {
        let draw = SynthConfig {
            seed: crate::seed::derive_seed(config.seed, &format!("stack/{copy}")),
            ..config.clone()
        };
        let (a, b, truth) = generate(&draw)?;
        let (off_a, off_b) = (a_records.len(), b_records.len());
        let key = format!("k{copy}");
        for mut r in a.records {
            r.index += off_a;
            r.id = Some(format!("a{}", r.index));
            a_records.push(r.with_blocking_key(key.clone()));
        }
        for mut r in b.records {
            r.index += off_b;
            r.id = Some(format!("b{}", r.index));
            b_records.push(r.with_blocking_key(key.clone()));
        }
        links.extend(
            truth
                .matching
                .links()
                .iter()
                .map(|&(a, b)| (a + off_a, b + off_b)),
        );
        corruptions.extend(truth.corruptions.into_iter().map(|c| Corruption {
            a: c.a + off_a,
            b: c.b + off_b,
            fields: c.fields,
        }));
    }
    let (n_a, n_b) = (a_records.len(), b_records.len());
    Ok((
        RecordFile::new(FileId::A, field_names(config), a_records)?,
        RecordFile::new(FileId::B, field_names(config), b_records)?,
        GroundTruth {
            matching: Matching::new(n_a, n_b, links)?,
            corruptions,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn differing_fields(a: &Record, b: &Record) -> Vec<usize> {
        (0..a.fields.len())
            .filter(|&j| a.fields[j] != b.fields[j])
            .collect()
    }

    #[test]
    fn full_overlap_size() {
        let (a, b, truth) = generate(&SynthConfig::four_field(500, 1.0, 1, 3)).unwrap();
        assert_eq!((a.len(), b.len()), (500, 500));
        assert_eq!(truth.matching.len(), 500);
    }

    #[test]
    fn zero_errors_copy_exactly() {
        let (a, b, truth) = generate(&SynthConfig::four_field(60, 0.5, 0, 4)).unwrap();
        assert_eq!(truth.matching.len(), 30);
        for &(x, y) in truth.matching.links() {
            assert_eq!(a.records[x].fields, b.records[y].fields);
        }
    }

    #[test]
    fn corruption_touches_exact_field_count() {
        for errors in 1..=4 {
            let (a, b, truth) = generate(&SynthConfig::four_field(
                80,
                0.5,
                errors,
                10 + errors as u64,
            ))
            .unwrap();
            for c in &truth.corruptions {
                assert_eq!(c.fields.len(), errors);
                assert_eq!(differing_fields(&a.records[c.a], &b.records[c.b]), c.fields);
            }
        }
    }

    #[test]
    fn single_edit_is_distance_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for name in ["a", "smith", "jo"] {
            for _ in 0..50 {
                let edited = edit_string(name, &mut rng);
                assert_eq!(strsim::levenshtein(name, &edited), 1, "{name} -> {edited}");
            }
        }
    }

    #[test]
    fn corrupted_names_stay_within_edit_budget() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = [false; 3];
        for _ in 0..200 {
            let edited = corrupt_string("garcia", 2, &mut rng);
            let d = strsim::levenshtein("garcia", &edited);
            assert!((1..=2).contains(&d), "garcia -> {edited}");
            seen[d] = true;
        }
        assert!(seen[1] && seen[2]);
    }

    #[test]
    fn same_seed_same_files() {
        let config = SynthConfig::census_like(8);
        let first = generate(&config).unwrap();
        let second = generate(&config).unwrap();
        assert_eq!(first.0, second.0);
        assert_eq!(first.1, second.1);
        assert_eq!(first.2, second.2);
        assert_eq!(first.2.matching.len(), 17);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(generate(&SynthConfig::four_field(10, 0.25, 1, 0)).is_err());
        assert!(generate(&SynthConfig::four_field(10, 0.5, 5, 0)).is_err());
        let mut c = SynthConfig::four_field(10, 1.0, 1, 0);
        c.n_b = 5;
        assert!(generate(&c).is_err());
    }

    #[test]
    fn stacked_draws_keep_keys_apart() {
        let (a, b, truth) = generate_stacked(&SynthConfig::four_field(20, 0.5, 1, 2), 3).unwrap();
        assert_eq!((a.len(), b.len(), truth.matching.len()), (60, 60, 30));
        for &(x, y) in truth.matching.links() {
            assert_eq!(a.records[x].blocking_key, b.records[y].blocking_key);
        }
    }
}
