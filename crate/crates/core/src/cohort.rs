//! Domain types, file ingestion, schema validation, and cohort summary tables.
//!
//! An [`EmbeddingSet`] holds the backbone feature vectors; a [`Cohort`] holds
//! per-sample metadata (patient, sex, race, age, disease labels, split). Both
//! are immutable after construction and safe to share across threads.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMB1";
const MAX_AGE: f64 = 130.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    Male,
    Female,
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sex::Male => write!(f, "Male"),
            Sex::Female => write!(f, "Female"),
        }
    }
}

impl FromStr for Sex {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "Male" => Ok(Sex::Male),
            "Female" => Ok(Sex::Female),
            other => Err(format!("unknown sex {other:?} (expected Male or Female)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Validation => write!(f, "validation"),
            Split::Test => write!(f, "test"),
        }
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!(
                "unknown split {other:?} (expected train, validation or test)"
            )),
        }
    }
}

/// Selects a subgroup of a cohort by one attribute value.
///
/// Samples with a missing value for the attribute (only labels can be
/// missing) are never part of the selected group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GroupSelector {
    Sex(Sex),
    Race(String),
    Label { name: String, value: bool },
}

impl GroupSelector {
    /// Short column name used in report tables, e.g. `Female` or `no_finding=1`.
    pub fn short_name(&self) -> String {
        match self {
            GroupSelector::Sex(s) => s.to_string(),
            GroupSelector::Race(r) => r.clone(),
            GroupSelector::Label { name, value } => {
                format!("{}={}", name, if *value { 1 } else { 0 })
            }
        }
    }
}

impl fmt::Display for GroupSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupSelector::Sex(s) => write!(f, "sex={s}"),
            GroupSelector::Race(r) => write!(f, "race={r}"),
            GroupSelector::Label { name, value } => {
                write!(f, "label:{}={}", name, if *value { 1 } else { 0 })
            }
        }
    }
}

impl FromStr for GroupSelector {
    type Err = String;

    /// Parses `sex=<Male|Female>`, `race=<value>` or `label:<name>=<0|1>`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (attr, value) = s
            .split_once('=')
            .ok_or_else(|| format!("selector {s:?} is not of the form attr=value"))?;
        match attr {
            "sex" => Ok(GroupSelector::Sex(value.parse()?)),
            "race" => Ok(GroupSelector::Race(value.to_string())),
            _ => match attr.strip_prefix("label:") {
                Some(name) => {
                    let value = match value {
                        "0" => false,
                        "1" => true,
                        other => return Err(format!("label value {other:?} is not 0 or 1")),
                    };
                    Ok(GroupSelector::Label {
                        name: name.to_string(),
                        value,
                    })
                }
                None => Err(format!(
                    "unknown attribute {attr:?} (expected sex, race or label:<name>)"
                )),
            },
        }
    }
}

/// An n x d matrix of finite embedding activations with aligned sample ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    ids: Vec<String>,
    matrix: Array2<f64>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(ids: Vec<String>, matrix: Array2<f64>) -> Result<Self> {
        let (n, d) = matrix.dim();
        if n == 0 || d == 0 {
            return Err(Error::invalid(
                "embedding set",
                format!("matrix must be non-empty, got {n}x{d}"),
            ));
        }
        if ids.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: ids.len(),
                context: "ids vs matrix rows".into(),
            });
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(
                    "embedding set",
                    format!("duplicate sample id {id:?} at row {}", i + 1),
                ));
            }
        }
        for ((i, j), v) in matrix.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::invalid(
                    "embedding set",
                    format!("non-finite value at row {}, column {j}", i + 1),
                ));
            }
        }
        Ok(EmbeddingSet { ids, matrix, index })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// New set restricted to the given rows, in the given order.
    /// Rows may not repeat (ids must stay unique).
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let ids = rows.iter().map(|&r| self.ids[r].clone()).collect();
        let mut m = Array2::zeros((rows.len(), self.dim()));
        for (out, &r) in rows.iter().enumerate() {
            m.row_mut(out).assign(&self.matrix.row(r));
        }
        EmbeddingSet::new(ids, m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortRow {
    pub sample_id: String,
    pub patient_id: String,
    pub sex: Sex,
    pub race: String,
    pub age: f64,
    pub split: Split,
    /// Aligned with `Cohort::label_names`; `None` is a missing label.
    pub labels: Vec<Option<bool>>,
}

/// Per-sample metadata keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    label_names: Vec<String>,
    rows: Vec<CohortRow>,
    index: HashMap<String, usize>,
}

impl Cohort {
    pub fn new(label_names: Vec<String>, rows: Vec<CohortRow>) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if index.insert(row.sample_id.clone(), i).is_some() {
                return Err(Error::invalid(
                    "cohort",
                    format!("duplicate sample id {:?} at row {}", row.sample_id, i + 1),
                ));
            }
            if !(0.0..=MAX_AGE).contains(&row.age) {
                return Err(Error::invalid(
                    "cohort",
                    format!("age {} out of [0, {MAX_AGE}] at row {}", row.age, i + 1),
                ));
            }
            if row.labels.len() != label_names.len() {
                return Err(Error::DimensionMismatch {
                    expected: label_names.len(),
                    found: row.labels.len(),
                    context: format!("labels at row {}", i + 1),
                });
            }
        }
        Ok(Cohort {
            label_names,
            rows,
            index,
        })
    }

    pub fn label_names(&self) -> &[String] {
        &self.label_names
    }

    pub fn rows(&self) -> &[CohortRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row_of(&self, sample_id: &str) -> Option<usize> {
        self.index.get(sample_id).copied()
    }

    pub fn label_index(&self, name: &str) -> Option<usize> {
        self.label_names.iter().position(|l| l == name)
    }

    /// Label value of row `row` for label `name` (`None` if missing).
    pub fn label_value(&self, row: usize, label_idx: usize) -> Option<bool> {
        self.rows[row].labels[label_idx]
    }

    /// Distinct race values in lexicographic order.
    pub fn race_values(&self) -> Vec<String> {
        let mut set: Vec<String> = self
            .rows
            .iter()
            .map(|r| r.race.clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        set.sort();
        set
    }

    /// Whether row `row` matches the selector. `None` when the attribute
    /// value is missing for that row.
    fn matches(&self, row: usize, selector: &GroupSelector) -> Option<bool> {
        let r = &self.rows[row];
        match selector {
            GroupSelector::Sex(s) => Some(r.sex == *s),
            GroupSelector::Race(race) => Some(&r.race == race),
            GroupSelector::Label { name, value } => {
                let idx = self.label_index(name)?;
                r.labels[idx].map(|v| v == *value)
            }
        }
    }

    /// Row indices of the samples matching the selector, in row order.
    /// Samples with a missing value for the attribute are excluded.
    pub fn select_rows(&self, selector: &GroupSelector) -> Vec<usize> {
        (0..self.rows.len())
            .filter(|&i| self.matches(i, selector) == Some(true))
            .collect()
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let selected = rows.iter().map(|&r| self.rows[r].clone()).collect();
        Cohort::new(self.label_names.clone(), selected)
    }
}

/// Sample ids matching the selector, in cohort row order.
pub fn select_group(cohort: &Cohort, selector: &GroupSelector) -> Vec<String> {
    cohort
        .select_rows(selector)
        .into_iter()
        .map(|i| cohort.rows()[i].sample_id.clone())
        .collect()
}

/// Joint-use check: every embedding sample id must exist in the cohort.
pub fn check_alignment(embeddings: &EmbeddingSet, cohort: &Cohort) -> Result<()> {
    for id in embeddings.ids() {
        if cohort.row_of(id).is_none() {
            return Err(Error::Alignment {
                detail: format!("embedding sample id {id:?} not present in cohort"),
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingFormat {
    Binary,
    Csv,
}

impl FromStr for EmbeddingFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "binary" => Ok(EmbeddingFormat::Binary),
            "csv" => Ok(EmbeddingFormat::Csv),
            other => Err(format!("unknown format {other:?} (expected binary or csv)")),
        }
    }
}

/// Sidecar id file path for a binary embedding file: `<path>.ids`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    PathBuf::from(format!("{}.ids", path.display()))
}

pub fn load_embeddings(path: &Path, format: EmbeddingFormat) -> Result<EmbeddingSet> {
    match format {
        EmbeddingFormat::Binary => load_embeddings_binary(path),
        EmbeddingFormat::Csv => load_embeddings_csv(path),
    }
}

pub fn save_embeddings(set: &EmbeddingSet, path: &Path, format: EmbeddingFormat) -> Result<()> {
    match format {
        EmbeddingFormat::Binary => save_embeddings_binary(set, path),
        EmbeddingFormat::Csv => save_embeddings_csv(set, path),
    }
}

fn load_embeddings_binary(path: &Path) -> Result<EmbeddingSet> {
    let ioerr = |e| Error::io(path, e);
    let mut reader = BufReader::new(File::open(path).map_err(ioerr)?);

    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic).map_err(ioerr)?;
    if &magic != MAGIC {
        return Err(Error::MalformedHeader {
            path: path.into(),
            detail: format!("bad magic bytes {magic:?}, expected {MAGIC:?}"),
        });
    }
    let mut u64buf = [0u8; 8];
    reader.read_exact(&mut u64buf).map_err(ioerr)?;
    let n = u64::from_le_bytes(u64buf);
    reader.read_exact(&mut u64buf).map_err(ioerr)?;
    let d = u64::from_le_bytes(u64buf);
    if n == 0 || d == 0 {
        return Err(Error::MalformedHeader {
            path: path.into(),
            detail: format!("declared empty matrix {n}x{d}"),
        });
    }
    let total = n
        .checked_mul(d)
        .and_then(|t| usize::try_from(t).ok())
        .ok_or_else(|| Error::MalformedHeader {
            path: path.into(),
            detail: format!("declared size {n}x{d} overflows"),
        })?;

    let mut values = Vec::with_capacity(total);
    let mut f32buf = [0u8; 4];
    for k in 0..total {
        if let Err(e) = reader.read_exact(&mut f32buf) {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                return Err(Error::PayloadTruncated {
                    path: path.into(),
                    expected: n * d,
                    found: k as u64,
                });
            }
            return Err(ioerr(e));
        }
        let v = f32::from_le_bytes(f32buf);
        if !v.is_finite() {
            return Err(Error::NonFiniteValue {
                path: path.into(),
                row: k / (d as usize) + 1,
                column: format!("f{}", k % (d as usize)),
            });
        }
        values.push(f64::from(v));
    }
    let mut rest = [0u8; 1];
    if reader.read(&mut rest).map_err(ioerr)? != 0 {
        return Err(Error::MalformedHeader {
            path: path.into(),
            detail: format!("trailing bytes after {n}x{d} payload"),
        });
    }

    let ids_path = sidecar_path(path);
    let ids = load_id_sidecar(&ids_path)?;
    if ids.len() as u64 != n {
        return Err(Error::DimensionMismatch {
            expected: n as usize,
            found: ids.len(),
            context: format!("ids in {}", ids_path.display()),
        });
    }
    check_unique_ids(&ids, path)?;

    let matrix = Array2::from_shape_vec((n as usize, d as usize), values)
        .expect("shape checked above");
    EmbeddingSet::new(ids, matrix)
}

fn load_id_sidecar(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.is_empty() {
            ids.push(line);
        }
    }
    Ok(ids)
}

fn check_unique_ids(ids: &[String], path: &Path) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if !seen.insert(id) {
            return Err(Error::DuplicateId {
                path: path.into(),
                row: i + 1,
                id: id.clone(),
            });
        }
    }
    Ok(())
}

fn save_embeddings_binary(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let ioerr = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(ioerr)?);
    w.write_all(MAGIC).map_err(ioerr)?;
    w.write_all(&(set.len() as u64).to_le_bytes()).map_err(ioerr)?;
    w.write_all(&(set.dim() as u64).to_le_bytes()).map_err(ioerr)?;
    for v in set.matrix().iter() {
        w.write_all(&(*v as f32).to_le_bytes()).map_err(ioerr)?;
    }
    w.flush().map_err(ioerr)?;

    let ids_path = sidecar_path(path);
    let mut w = BufWriter::new(File::create(&ids_path).map_err(|e| Error::io(&ids_path, e))?);
    for id in set.ids() {
        writeln!(w, "{id}").map_err(|e| Error::io(&ids_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&ids_path, e))?;
    Ok(())
}

fn load_embeddings_csv(path: &Path) -> Result<EmbeddingSet> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::MalformedHeader {
        path: path.into(),
        detail: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedHeader {
            path: path.into(),
            detail: e.to_string(),
        })?
        .clone();
    if headers.is_empty() || &headers[0] != "sample_id" {
        return Err(Error::MalformedHeader {
            path: path.into(),
            detail: "first column must be sample_id".into(),
        });
    }
    let d = headers.len() - 1;
    if d == 0 {
        return Err(Error::MalformedHeader {
            path: path.into(),
            detail: "no feature columns".into(),
        });
    }
    for (j, name) in headers.iter().skip(1).enumerate() {
        if name != format!("f{j}") {
            return Err(Error::MalformedHeader {
                path: path.into(),
                detail: format!("feature column {} named {name:?}, expected \"f{j}\"", j + 1),
            });
        }
    }

    let mut ids = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::ParseField {
            path: path.into(),
            row,
            column: "<record>".into(),
            value: e.to_string(),
        })?;
        if record.len() != d + 1 {
            return Err(Error::DimensionMismatch {
                expected: d + 1,
                found: record.len(),
                context: format!("{}: row {row}", path.display()),
            });
        }
        ids.push(record[0].to_string());
        for j in 0..d {
            let cell = &record[j + 1];
            // canonical on-disk precision is f32 for both encodings
            let v: f32 = cell.parse().map_err(|_| Error::ParseField {
                path: path.into(),
                row,
                column: format!("f{j}"),
                value: cell.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    path: path.into(),
                    row,
                    column: format!("f{j}"),
                });
            }
            values.push(f64::from(v));
        }
    }
    if ids.is_empty() {
        return Err(Error::EmptySample {
            context: format!("{}", path.display()),
        });
    }
    check_unique_ids(&ids, path)?;
    let matrix =
        Array2::from_shape_vec((ids.len(), d), values).expect("row length checked above");
    EmbeddingSet::new(ids, matrix)
}

fn save_embeddings_csv(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::MalformedHeader {
        path: path.into(),
        detail: e.to_string(),
    })?;
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..set.dim()).map(|j| format!("f{j}")));
    w.write_record(&header).map_err(csv_io(path))?;
    for (i, id) in set.ids().iter().enumerate() {
        let mut record = vec![id.clone()];
        record.extend(set.matrix().row(i).iter().map(|v| format!("{}", *v as f32)));
        w.write_record(&record).map_err(csv_io(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn csv_io(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::invalid("csv write", format!("{}: {e}", path.display()))
}

const REQUIRED_COLUMNS: [&str; 6] = ["sample_id", "patient_id", "sex", "race", "age", "split"];
const LABEL_PREFIX: &str = "label_";

pub fn load_cohort(path: &Path) -> Result<Cohort> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::MalformedHeader {
        path: path.into(),
        detail: e.to_string(),
    })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedHeader {
            path: path.into(),
            detail: e.to_string(),
        })?
        .clone();

    let mut col: HashMap<&str, usize> = HashMap::new();
    let mut label_cols: Vec<(String, usize)> = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        if REQUIRED_COLUMNS.contains(&name) {
            col.insert(headers.get(j).unwrap(), j);
        } else if let Some(label) = name.strip_prefix(LABEL_PREFIX) {
            label_cols.push((label.to_string(), j));
        } else {
            log::warn!("{}: ignoring unknown column {name:?}", path.display());
        }
    }
    for required in REQUIRED_COLUMNS {
        if !col.contains_key(required) {
            return Err(Error::MissingColumn {
                path: path.into(),
                column: required.into(),
            });
        }
    }

    let parse_err = |row: usize, column: &str, value: &str| Error::ParseField {
        path: path.into(),
        row,
        column: column.into(),
        value: value.into(),
    };

    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| parse_err(row, "<record>", &e.to_string()))?;
        let field = |name: &str| record.get(col[name]).unwrap_or("");

        let age_str = field("age");
        let age: f64 = age_str
            .parse()
            .map_err(|_| parse_err(row, "age", age_str))?;
        if !age.is_finite() || !(0.0..=MAX_AGE).contains(&age) {
            return Err(parse_err(row, "age", age_str));
        }
        let sex: Sex = field("sex")
            .parse()
            .map_err(|_| parse_err(row, "sex", field("sex")))?;
        let split: Split = field("split")
            .parse()
            .map_err(|_| parse_err(row, "split", field("split")))?;

        let mut labels = Vec::with_capacity(label_cols.len());
        for (name, j) in &label_cols {
            let cell = record.get(*j).unwrap_or("");
            let value = match cell {
                "" => None,
                "0" => Some(false),
                "1" => Some(true),
                other => return Err(parse_err(row, &format!("{LABEL_PREFIX}{name}"), other)),
            };
            labels.push(value);
        }

        rows.push(CohortRow {
            sample_id: field("sample_id").to_string(),
            patient_id: field("patient_id").to_string(),
            sex,
            race: field("race").to_string(),
            age,
            split,
            labels,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptySample {
            context: format!("{}", path.display()),
        });
    }

    let label_names = label_cols.into_iter().map(|(name, _)| name).collect();
    Cohort::new(label_names, rows).map_err(|e| match e {
        Error::Invalid { detail, .. } => Error::invalid(format!("{}", path.display()), detail),
        other => other,
    })
}

pub fn save_cohort(cohort: &Cohort, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::MalformedHeader {
        path: path.into(),
        detail: e.to_string(),
    })?;
    let mut header: Vec<String> = REQUIRED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(
        cohort
            .label_names()
            .iter()
            .map(|l| format!("{LABEL_PREFIX}{l}")),
    );
    w.write_record(&header).map_err(csv_io(path))?;
    for row in cohort.rows() {
        let mut record = vec![
            row.sample_id.clone(),
            row.patient_id.clone(),
            row.sex.to_string(),
            row.race.clone(),
            format!("{}", row.age),
            row.split.to_string(),
        ];
        record.extend(row.labels.iter().map(|l| match l {
            None => String::new(),
            Some(true) => "1".to_string(),
            Some(false) => "0".to_string(),
        }));
        w.write_record(&record).map_err(csv_io(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Attributes whose values become summary columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Sex,
    Race,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryCell {
    pub group: String,
    pub patients: usize,
    pub scans: usize,
    /// Percentage of the block's scans.
    pub scan_pct: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    /// Per label: positive count and percentage of the group's scans.
    pub label_positive: Vec<(String, usize, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryBlock {
    /// `all`, `train`, `validation` or `test`.
    pub block: String,
    pub cells: Vec<SummaryCell>,
}

/// Table-1-style cohort summary: one block per split plus an `all` block,
/// one column per group value plus a leading `All` column.
#[derive(Debug, Clone, Serialize)]
pub struct CohortSummary {
    pub blocks: Vec<SummaryBlock>,
}

pub fn summarize_cohort(cohort: &Cohort, group_by: &[GroupBy]) -> Result<CohortSummary> {
    if cohort.is_empty() {
        return Err(Error::EmptySample {
            context: "summarize_cohort".into(),
        });
    }

    let mut groups: Vec<(String, Option<GroupSelector>)> = vec![("All".into(), None)];
    for attr in group_by {
        match attr {
            GroupBy::Race => {
                for race in cohort.race_values() {
                    groups.push((race.clone(), Some(GroupSelector::Race(race))));
                }
            }
            GroupBy::Sex => {
                for sex in [Sex::Male, Sex::Female] {
                    groups.push((sex.to_string(), Some(GroupSelector::Sex(sex))));
                }
            }
        }
    }

    let blocks_spec: Vec<(String, Option<Split>)> = vec![
        ("all".into(), None),
        ("train".into(), Some(Split::Train)),
        ("validation".into(), Some(Split::Validation)),
        ("test".into(), Some(Split::Test)),
    ];

    let mut blocks = Vec::new();
    for (block_name, split) in blocks_spec {
        let block_rows: Vec<usize> = (0..cohort.len())
            .filter(|&i| split.is_none_or(|s| cohort.rows()[i].split == s))
            .collect();
        let total_scans = block_rows.len();

        let mut cells = Vec::new();
        for (group_name, selector) in &groups {
            let rows: Vec<usize> = match selector {
                None => block_rows.clone(),
                Some(sel) => block_rows
                    .iter()
                    .copied()
                    .filter(|&i| cohort.matches(i, sel) == Some(true))
                    .collect(),
            };
            let patients: HashSet<&str> = rows
                .iter()
                .map(|&i| cohort.rows()[i].patient_id.as_str())
                .collect();
            let ages: Vec<f64> = rows.iter().map(|&i| cohort.rows()[i].age).collect();
            let (age_mean, age_sd) = mean_sd(&ages);
            let scan_pct = if total_scans == 0 {
                0.0
            } else {
                100.0 * rows.len() as f64 / total_scans as f64
            };
            let mut label_positive = Vec::new();
            for (li, label) in cohort.label_names().iter().enumerate() {
                let pos = rows
                    .iter()
                    .filter(|&&i| cohort.rows()[i].labels[li] == Some(true))
                    .count();
                let pct = if rows.is_empty() {
                    0.0
                } else {
                    100.0 * pos as f64 / rows.len() as f64
                };
                label_positive.push((label.clone(), pos, pct));
            }
            cells.push(SummaryCell {
                group: group_name.clone(),
                patients: patients.len(),
                scans: rows.len(),
                scan_pct,
                age_mean,
                age_sd,
                label_positive,
            });
        }
        blocks.push(SummaryBlock {
            block: block_name,
            cells,
        });
    }
    Ok(CohortSummary { blocks })
}

/// Mean and sample standard deviation; zeros for empty, sd 0 for singleton.
fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl CohortSummary {
    /// Table-1-shaped CSV: `block,metric,<group columns...>` with cells like
    /// `127118 (78)` for counts and `63 ± 17` for age.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let groups: Vec<&str> = self.blocks[0]
            .cells
            .iter()
            .map(|c| c.group.as_str())
            .collect();
        out.push_str("block,metric");
        for g in &groups {
            out.push(',');
            out.push_str(&csv_escape(g));
        }
        out.push('\n');

        for block in &self.blocks {
            let mut push_row = |metric: &str, cells: Vec<String>| {
                out.push_str(&csv_escape(&block.block));
                out.push(',');
                out.push_str(&csv_escape(metric));
                for c in cells {
                    out.push(',');
                    out.push_str(&csv_escape(&c));
                }
                out.push('\n');
            };
            push_row(
                "patients",
                block.cells.iter().map(|c| c.patients.to_string()).collect(),
            );
            push_row(
                "scans",
                block
                    .cells
                    .iter()
                    .map(|c| format!("{} ({:.0})", c.scans, c.scan_pct))
                    .collect(),
            );
            push_row(
                "age",
                block
                    .cells
                    .iter()
                    .map(|c| format!("{:.0} ± {:.0}", c.age_mean, c.age_sd))
                    .collect(),
            );
            let label_count = block.cells[0].label_positive.len();
            for li in 0..label_count {
                let name = block.cells[0].label_positive[li].0.clone();
                push_row(
                    &name,
                    block
                        .cells
                        .iter()
                        .map(|c| {
                            let (_, pos, pct) = &c.label_positive[li];
                            format!("{pos} ({pct:.0})")
                        })
                        .collect(),
                );
            }
        }
        out
    }
}

pub(crate) fn csv_escape(cell: &str) -> String {
    if cell.contains(',') || cell.contains('"') || cell.contains('\n') {
        format!("\"{}\"", cell.replace('"', "\"\""))
    } else {
        cell.to_string()
    }
}

/// Extracts a label column (scores aligned to `embeddings` rows) from the
/// cohort for the rows where the label is present.
pub fn label_targets(
    embeddings: &EmbeddingSet,
    cohort: &Cohort,
    label: &str,
) -> Result<Vec<(usize, bool)>> {
    let li = cohort
        .label_index(label)
        .ok_or_else(|| Error::invalid("label", format!("unknown label {label:?}")))?;
    let mut out = Vec::new();
    for (row, id) in embeddings.ids().iter().enumerate() {
        let crow = cohort.row_of(id).ok_or_else(|| Error::Alignment {
            detail: format!("embedding sample id {id:?} not present in cohort"),
        })?;
        if let Some(v) = cohort.label_value(crow, li) {
            out.push((row, v));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::tempdir;

    fn row(id: &str, patient: &str, sex: Sex, race: &str, age: f64, split: Split) -> CohortRow {
        CohortRow {
            sample_id: id.into(),
            patient_id: patient.into(),
            sex,
            race: race.into(),
            age,
            split,
            labels: vec![],
        }
    }

    fn small_cohort() -> Cohort {
        let mut rows = vec![
            row("s1", "p1", Sex::Female, "White", 50.0, Split::Test),
            row("s2", "p1", Sex::Female, "White", 60.0, Split::Test),
            row("s3", "p2", Sex::Male, "Black", 70.0, Split::Test),
            row("s4", "p3", Sex::Male, "Asian", 40.0, Split::Train),
            row("s5", "p4", Sex::Female, "Black", 55.0, Split::Train),
        ];
        for (i, r) in rows.iter_mut().enumerate() {
            r.labels = vec![match i {
                0 => Some(true),
                1 => Some(false),
                2 => None,
                _ => Some(true),
            }];
        }
        Cohort::new(vec!["effusion".into()], rows).unwrap()
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let set = EmbeddingSet::new(
            vec!["a".into(), "b".into()],
            array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
        )
        .unwrap();
        save_embeddings(&set, &path, EmbeddingFormat::Binary).unwrap();
        let loaded = load_embeddings(&path, EmbeddingFormat::Binary).unwrap();
        assert_eq!(set.ids(), loaded.ids());
        assert_eq!(set.matrix(), loaded.matrix());
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        for v in [1f32, 2.0, 3.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        std::fs::write(sidecar_path(&path), "a\nb\n").unwrap();
        let err = load_embeddings(&path, EmbeddingFormat::Binary).unwrap_err();
        assert!(
            matches!(err, Error::PayloadTruncated { expected: 6, found: 3, .. }),
            "{err}"
        );
        assert!(err.to_string().contains("payload truncated"));
    }

    #[test]
    fn bad_magic_is_malformed_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        std::fs::write(&path, b"NOPE").unwrap();
        let err = load_embeddings(&path, EmbeddingFormat::Binary).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader { .. }), "{err}");
    }

    #[test]
    fn non_finite_value_reports_row() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&2u64.to_le_bytes());
        for v in [1f32, 2.0, f32::NAN, 4.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        std::fs::write(sidecar_path(&path), "a\nb\n").unwrap();
        let err = load_embeddings(&path, EmbeddingFormat::Binary).unwrap_err();
        assert!(matches!(err, Error::NonFiniteValue { row: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_id_reports_row() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("emb.bin");
        let set = EmbeddingSet::new(
            vec!["a".into(), "b".into()],
            array![[1.0, 2.0], [3.0, 4.0]],
        )
        .unwrap();
        save_embeddings(&set, &path, EmbeddingFormat::Binary).unwrap();
        std::fs::write(sidecar_path(&path), "a\na\n").unwrap();
        let err = load_embeddings(&path, EmbeddingFormat::Binary).unwrap_err();
        assert!(
            matches!(err, Error::DuplicateId { row: 2, .. }),
            "{err}"
        );
    }

    #[test]
    fn csv_and_binary_encodings_load_equal() {
        // one random-ish 5x4 matrix through both encodings
        let mut vals = Vec::new();
        let mut state = 0x9E37u64;
        for _ in 0..20 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            vals.push(((state >> 11) as f64 / (1u64 << 53) as f64) * 10.0 - 5.0);
        }
        let ids: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
        let set =
            EmbeddingSet::new(ids, Array2::from_shape_vec((5, 4), vals).unwrap()).unwrap();

        let dir = tempdir().unwrap();
        let bin = dir.path().join("emb.bin");
        let csvp = dir.path().join("emb.csv");
        save_embeddings(&set, &bin, EmbeddingFormat::Binary).unwrap();
        save_embeddings(&set, &csvp, EmbeddingFormat::Csv).unwrap();
        let from_bin = load_embeddings(&bin, EmbeddingFormat::Binary).unwrap();
        let from_csv = load_embeddings(&csvp, EmbeddingFormat::Csv).unwrap();
        assert_eq!(from_bin.ids(), from_csv.ids());
        assert_eq!(from_bin.matrix(), from_csv.matrix());
    }

    #[test]
    fn cohort_csv_round_trip() {
        let cohort = small_cohort();
        let dir = tempdir().unwrap();
        let path = dir.path().join("meta.csv");
        save_cohort(&cohort, &path).unwrap();
        let loaded = load_cohort(&path).unwrap();
        assert_eq!(cohort, loaded);
    }

    #[test]
    fn load_cohort_reports_bad_age_row() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("meta.csv");
        std::fs::write(
            &path,
            "sample_id,patient_id,sex,race,age,split\n\
             s1,p1,Male,White,50,test\n\
             s2,p2,Female,Black,abc,test\n",
        )
        .unwrap();
        let err = load_cohort(&path).unwrap_err();
        match err {
            Error::ParseField { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "age");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_label_is_kept_as_missing() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("meta.csv");
        std::fs::write(
            &path,
            "sample_id,patient_id,sex,race,age,split,label_pneumothorax\n\
             s1,p1,Male,White,50,test,\n",
        )
        .unwrap();
        let cohort = load_cohort(&path).unwrap();
        assert_eq!(cohort.len(), 1);
        assert_eq!(cohort.rows()[0].labels[0], None);
    }

    #[test]
    fn missing_required_column_errors() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("meta.csv");
        std::fs::write(&path, "sample_id,patient_id,sex,race,age\ns1,p1,Male,W,50\n").unwrap();
        let err = load_cohort(&path).unwrap_err();
        assert!(matches!(err, Error::MissingColumn { column, .. } if column == "split"));
    }

    #[test]
    fn select_group_excludes_missing_and_partitions() {
        let cohort = small_cohort();
        let females = select_group(&cohort, &GroupSelector::Sex(Sex::Female));
        assert_eq!(females, vec!["s1", "s2", "s5"]);
        let males = select_group(&cohort, &GroupSelector::Sex(Sex::Male));
        assert_eq!(males, vec!["s3", "s4"]);
        assert_eq!(females.len() + males.len(), cohort.len());

        let positive = select_group(
            &cohort,
            &GroupSelector::Label {
                name: "effusion".into(),
                value: true,
            },
        );
        // s3 has a missing label and is excluded
        assert_eq!(positive, vec!["s1", "s4", "s5"]);

        let martians = select_group(&cohort, &GroupSelector::Race("Martian".into()));
        assert!(martians.is_empty());
    }

    #[test]
    fn summary_matches_table_layout_arithmetic() {
        let mut rows = Vec::new();
        for i in 0..10 {
            let sex = if i < 4 { Sex::Female } else { Sex::Male };
            rows.push(row(&format!("s{i}"), &format!("p{i}"), sex, "White", 50.0, Split::Test));
        }
        let cohort = Cohort::new(vec![], rows).unwrap();
        let summary = summarize_cohort(&cohort, &[GroupBy::Sex]).unwrap();
        let all_block = &summary.blocks[0];
        let female = all_block.cells.iter().find(|c| c.group == "Female").unwrap();
        assert_eq!(female.scans, 4);
        assert!((female.scan_pct - 40.0).abs() < 1e-12);
        let csv = summary.to_csv();
        assert!(csv.contains("4 (40)"), "{csv}");
    }

    #[test]
    fn summary_age_mean_sd() {
        let ages = [50.0, 60.0, 70.0];
        let rows: Vec<CohortRow> = ages
            .iter()
            .enumerate()
            .map(|(i, &a)| row(&format!("s{i}"), &format!("p{i}"), Sex::Male, "W", a, Split::Test))
            .collect();
        let cohort = Cohort::new(vec![], rows).unwrap();
        let summary = summarize_cohort(&cohort, &[]).unwrap();
        let all = &summary.blocks[0].cells[0];
        assert!((all.age_mean - 60.0).abs() < 1e-12);
        assert!((all.age_sd - 10.0).abs() < 1e-12);
        assert!(summary.to_csv().contains("60 ± 10"));
    }

    #[test]
    fn summary_counts_patients_and_scans_separately() {
        let rows = vec![
            row("s1", "p1", Sex::Male, "W", 50.0, Split::Test),
            row("s2", "p1", Sex::Male, "W", 50.0, Split::Test),
            row("s3", "p2", Sex::Male, "W", 50.0, Split::Test),
            row("s4", "p2", Sex::Male, "W", 50.0, Split::Test),
        ];
        let cohort = Cohort::new(vec![], rows).unwrap();
        let summary = summarize_cohort(&cohort, &[]).unwrap();
        let all = &summary.blocks[0].cells[0];
        assert_eq!(all.patients, 2);
        assert_eq!(all.scans, 4);
    }

    #[test]
    fn summary_percentages_sum_to_100() {
        let cohort = small_cohort();
        let summary = summarize_cohort(&cohort, &[GroupBy::Sex]).unwrap();
        let all_block = &summary.blocks[0];
        let sum: f64 = all_block
            .cells
            .iter()
            .filter(|c| c.group == "Male" || c.group == "Female")
            .map(|c| c.scan_pct)
            .sum();
        assert!((sum - 100.0).abs() < 1e-9);
    }

    #[test]
    fn selector_parse_round_trip() {
        for s in ["sex=Female", "race=Black", "label:no_finding=1"] {
            let sel: GroupSelector = s.parse().unwrap();
            assert_eq!(sel.to_string(), s);
        }
        assert!("age=5".parse::<GroupSelector>().is_err());
        assert!("sex".parse::<GroupSelector>().is_err());
    }

    #[test]
    fn alignment_check_flags_unknown_id() {
        let cohort = small_cohort();
        let set = EmbeddingSet::new(vec!["zz".into()], array![[1.0, 2.0]]).unwrap();
        assert!(check_alignment(&set, &cohort).is_err());
    }
}
