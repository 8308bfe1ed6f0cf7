//! Delimited record files.
//!
//! A file is read with its header row. Every data row becomes one [`Record`]
//! whose `index` is its 0-based position among the data rows. Empty cells
//! (after trimming) are treated as missing values.

use std::collections::HashSet;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which side of the linkage problem a file sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FileId {
    A,
    B,
}

impl FileId {
    pub fn letter(self) -> char {
        match self {
            FileId::A => 'A',
            FileId::B => 'B',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub index: usize,
    /// Optional external identifier taken from the configured id column.
    pub id: Option<String>,
    /// Compared field values, `None` when the cell was empty.
    pub fields: Vec<Option<String>>,
    pub blocking_key: Option<String>,
}

impl Record {
    pub fn new<S: Into<String>>(index: usize, fields: impl IntoIterator<Item = Option<S>>) -> Self {
        Record {
            index,
            id: None,
            fields: fields.into_iter().map(|f| f.map(Into::into)).collect(),
            blocking_key: None,
        }
    }

    pub fn with_blocking_key(mut self, key: impl Into<String>) -> Self {
        self.blocking_key = Some(key.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordFile {
    pub file_id: FileId,
    /// Names of the compared fields, in record field order.
    pub field_names: Vec<String>,
    pub records: Vec<Record>,
    /// Whether the file was loaded with a blocking key column.
    pub has_blocking_key: bool,
}

impl RecordFile {
    pub fn new(file_id: FileId, field_names: Vec<String>, records: Vec<Record>) -> Result<Self> {
        let has_blocking_key = records.iter().any(|r| r.blocking_key.is_some());
        let file = RecordFile {
            file_id,
            field_names,
            records,
            has_blocking_key,
        };
        file.validate()?;
        Ok(file)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn arity(&self) -> usize {
        self.field_names.len()
    }

    fn validate(&self) -> Result<()> {
        for (pos, rec) in self.records.iter().enumerate() {
            if rec.index != pos {
                return Err(Error::Artifact(format!(
                    "record at position {pos} carries index {}",
                    rec.index
                )));
            }
            if rec.fields.len() != self.arity() {
                return Err(Error::ArityMismatch {
                    expected: self.arity(),
                    found: rec.fields.len(),
                });
            }
        }
        Ok(())
    }
}

/// Options controlling how a delimited file maps onto records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    pub delimiter: u8,
    /// Column holding an external record identifier; must be unique.
    pub id_column: Option<String>,
    /// Column holding the traditional blocking key.
    pub blocking_column: Option<String>,
    /// Columns to compare, in order. Empty means every column except the
    /// id and blocking columns.
    pub fields: Vec<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            delimiter: b',',
            id_column: None,
            blocking_column: None,
            fields: Vec::new(),
        }
    }
}

pub fn load_records(path: &Path, file_id: FileId, options: &LoadOptions) -> Result<RecordFile> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_records(file, file_id, options)
}

/// Parses a delimited file with a header row from any reader.
pub fn read_records<R: Read>(
    reader: R,
    file_id: FileId,
    options: &LoadOptions,
) -> Result<RecordFile> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(options.delimiter)
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);

    let header: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let column_of = |name: &str| -> Result<usize> {
        let mut hits = header
            .iter()
            .enumerate()
            .filter(|(_, h)| h.as_str() == name);
        let first = hits
            .next()
            .map(|(i, _)| i)
            .ok_or_else(|| Error::MissingColumn(name.into()))?;
        if hits.next().is_some() {
            return Err(Error::DuplicateColumn(name.into()));
        }
        Ok(first)
    };

    let id_col = options.id_column.as_deref().map(column_of).transpose()?;
    let key_col = options
        .blocking_column
        .as_deref()
        .map(column_of)
        .transpose()?;
    let field_cols: Vec<usize> = if options.fields.is_empty() {
        (0..header.len())
            .filter(|c| Some(*c) != id_col && Some(*c) != key_col)
            .collect()
    } else {
        options
            .fields
            .iter()
            .map(|f| column_of(f))
            .collect::<Result<_>>()?
    };
    let field_names = field_cols.iter().map(|&c| header[c].clone()).collect();

    let cell = |row: &csv::StringRecord, col: usize| -> Option<String> {
        let v = row.get(col).unwrap_or("").trim();
        (!v.is_empty()).then(|| v.to_string())
    };

    let mut seen_ids = HashSet::new();
    let mut records = Vec::new();
    for (row_no, row) in rdr.records().enumerate() {
        let row = row?;
        if row.len() != header.len() {
            return Err(Error::RaggedRow {
                row: row_no + 1,
                expected: header.len(),
                found: row.len(),
            });
        }
        let id = id_col.and_then(|c| cell(&row, c));
        if let Some(id) = &id {
            if !seen_ids.insert(id.clone()) {
                return Err(Error::DuplicateId(id.clone()));
            }
        }
        records.push(Record {
            index: records.len(),
            id,
            fields: field_cols.iter().map(|&c| cell(&row, c)).collect(),
            blocking_key: key_col.and_then(|c| cell(&row, c)),
        });
    }

    Ok(RecordFile {
        file_id,
        field_names,
        records,
        has_blocking_key: key_col.is_some(),
    })
}
