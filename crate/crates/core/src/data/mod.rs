//! Tabular ingestion: schema-driven CSV parsing, dummy coding, stratified
//! splitting and train-only standardization.

pub mod synth;

use crate::dist::RngStream;
use crate::error::{Error, Result};
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

/// Values treated as missing; rows containing one are dropped.
pub const MISSING_MARKERS: [&str; 2] = ["", "?"];

pub const TRAIN_PERCENT: usize = 70;
pub const VAL_PERCENT: usize = 15;
pub const MIN_SPLIT_ROWS: usize = 20;
const MIN_STRATUM_ROWS: usize = 3;
const SPLIT_STREAM: u64 = 0x5b117;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
    Label,
    Sensitive,
}

/// How the sensitive column enters the feature matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensitiveEncoding {
    /// One 0/1 column holding `s`.
    #[default]
    Indicator,
    /// The raw numeric value, standardized like any numeric column.
    Numeric,
    /// Not a feature.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
    /// Sensitive value that marks the privileged group (`s = 1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privileged_value: Option<String>,
    /// For a numeric sensitive column: values `>= privileged_min` are privileged.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privileged_min: Option<f64>,
    /// Label value mapped to `y = 1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encode: Option<SensitiveEncoding>,
}

impl ColumnSchema {
    pub fn numeric(name: &str) -> Self {
        Self::bare(name, ColumnKind::Numeric)
    }

    pub fn categorical(name: &str, categories: &[&str]) -> Self {
        Self {
            categories: categories.iter().map(|c| c.to_string()).collect(),
            ..Self::bare(name, ColumnKind::Categorical)
        }
    }

    pub fn label(name: &str, positive: &str) -> Self {
        Self {
            positive_label: Some(positive.into()),
            ..Self::bare(name, ColumnKind::Label)
        }
    }

    pub fn sensitive(name: &str, privileged: &str, encode: SensitiveEncoding) -> Self {
        Self {
            privileged_value: Some(privileged.into()),
            encode: Some(encode),
            ..Self::bare(name, ColumnKind::Sensitive)
        }
    }

    fn bare(name: &str, kind: ColumnKind) -> Self {
        Self {
            name: name.into(),
            kind,
            categories: Vec::new(),
            privileged_value: None,
            privileged_min: None,
            positive_label: None,
            encode: None,
        }
    }

    fn encoding(&self) -> SensitiveEncoding {
        self.encode.unwrap_or_default()
    }

    fn feature_width(&self) -> usize {
        match self.kind {
            ColumnKind::Numeric => 1,
            ColumnKind::Categorical => self.categories.len(),
            ColumnKind::Label => 0,
            ColumnKind::Sensitive => match self.encoding() {
                SensitiveEncoding::None => 0,
                _ => 1,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    pub name: String,
    pub columns: Vec<ColumnSchema>,
    /// Dummy-coded width the schema is expected to produce.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_width: Option<usize>,
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Self> {
        let schema: Schema = serde_json::from_str(text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read schema {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let count = |k| self.columns.iter().filter(|c| c.kind == k).count();
        if count(ColumnKind::Label) != 1 {
            return Err(Error::Config(format!("schema '{}' needs exactly one label column", self.name)));
        }
        if count(ColumnKind::Sensitive) != 1 {
            return Err(Error::Config(format!("schema '{}' needs exactly one sensitive column", self.name)));
        }
        let mut seen = std::collections::HashSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Config(format!("duplicate column '{}'", c.name)));
            }
            let mut cats = std::collections::HashSet::new();
            if c.categories.iter().any(|v| !cats.insert(v.as_str())) {
                return Err(Error::Config(format!("column '{}' has duplicate categories", c.name)));
            }
            match c.kind {
                ColumnKind::Categorical if c.categories.is_empty() => {
                    return Err(Error::Config(format!("categorical column '{}' has no categories", c.name)));
                }
                ColumnKind::Label if c.positive_label.is_none() => {
                    return Err(Error::Config(format!("label column '{}' needs positive_label", c.name)));
                }
                ColumnKind::Sensitive => {
                    match (&c.privileged_value, c.privileged_min) {
                        (Some(_), None) | (None, Some(_)) => {}
                        _ => {
                            return Err(Error::Config(format!(
                                "sensitive column '{}' needs exactly one of privileged_value, privileged_min",
                                c.name
                            )))
                        }
                    }
                    if c.encoding() == SensitiveEncoding::Numeric && c.privileged_min.is_none() {
                        return Err(Error::Config(format!(
                            "sensitive column '{}' can only be encoded numerically with privileged_min",
                            c.name
                        )));
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn feature_width(&self) -> usize {
        self.columns.iter().map(ColumnSchema::feature_width).sum()
    }

    pub fn label(&self) -> &ColumnSchema {
        self.columns.iter().find(|c| c.kind == ColumnKind::Label).expect("validated")
    }

    pub fn sensitive(&self) -> &ColumnSchema {
        self.columns.iter().find(|c| c.kind == ColumnKind::Sensitive).expect("validated")
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("schema serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Schema columns of a CSV, as strings, after dropping incomplete rows.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    /// Schema column names, in schema order.
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    /// 1-based data-row number in the source file for each kept row.
    pub source_rows: Vec<usize>,
    pub dropped_missing: usize,
    pub source: String,
    /// Hex sha256 of the source bytes.
    pub content_hash: String,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<RawTable> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::ingest(path.display().to_string(), e.to_string()))?
        .read_to_end(&mut bytes)?;
    parse_csv(&bytes, &path.display().to_string(), schema)
}

/// Parses CSV bytes against `schema`. Columns not named in the schema are
/// ignored.
pub fn parse_csv(bytes: &[u8], source: &str, schema: &Schema) -> Result<RawTable> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut positions = Vec::with_capacity(schema.columns.len());
    for col in &schema.columns {
        let pos = header
            .iter()
            .position(|h| h == &col.name)
            .ok_or_else(|| Error::ingest("header", format!("missing column '{}'", col.name)))?;
        positions.push(pos);
    }
    let mut rows = Vec::new();
    let mut source_rows = Vec::new();
    let mut dropped = 0;
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| Error::ingest(format!("row {row_no}"), e.to_string()))?;
        let values: Vec<String> = positions
            .iter()
            .map(|&p| record.get(p).unwrap_or("").trim().to_string())
            .collect();
        if values.iter().any(|v| MISSING_MARKERS.contains(&v.as_str())) {
            dropped += 1;
            continue;
        }
        for (col, value) in schema.columns.iter().zip(&values) {
            check_value(col, value, row_no)?;
        }
        rows.push(values);
        source_rows.push(row_no);
    }
    if dropped > 0 {
        log::warn!("{source}: dropped {dropped} rows with missing values");
    }
    Ok(RawTable {
        columns: schema.columns.iter().map(|c| c.name.clone()).collect(),
        rows,
        source_rows,
        dropped_missing: dropped,
        source: source.to_string(),
        content_hash: sha256_hex(bytes),
    })
}

fn check_value(col: &ColumnSchema, value: &str, row_no: usize) -> Result<()> {
    let loc = || format!("row {row_no}, column '{}'", col.name);
    let numeric_sensitive = col.kind == ColumnKind::Sensitive && col.privileged_min.is_some();
    if col.kind == ColumnKind::Numeric || numeric_sensitive {
        let v: f64 = value
            .parse()
            .map_err(|_| Error::ingest(loc(), format!("cannot parse '{value}' as a number")))?;
        if !v.is_finite() {
            return Err(Error::ingest(loc(), format!("non-finite value '{value}'")));
        }
    } else if !col.categories.is_empty() && !col.categories.iter().any(|c| c == value) {
        return Err(Error::ingest(loc(), format!("category '{value}' is not in the schema")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub schema_hash: String,
    pub content_hash: String,
}

/// Dummy-coded data: `features` is `[n, d]`, `s = 1` marks the privileged group.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub features: Array2<f64>,
    pub y: Vec<u8>,
    pub s: Vec<u8>,
    pub feature_names: Vec<String>,
    /// Columns that standardization rescales.
    pub numeric: Vec<bool>,
    /// Index of each row in the source [`RawTable`].
    pub row_ids: Vec<usize>,
    pub provenance: Provenance,
}

impl TabularDataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.ncols()
    }

    pub fn subset(&self, idx: &[usize]) -> TabularDataset {
        TabularDataset {
            features: self.features.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            s: idx.iter().map(|&i| self.s[i]).collect(),
            feature_names: self.feature_names.clone(),
            numeric: self.numeric.clone(),
            row_ids: idx.iter().map(|&i| self.row_ids[i]).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Labels and groups as `[n, 1]` float columns.
    pub fn y_column(&self) -> Array2<f64> {
        column(&self.y)
    }

    pub fn s_column(&self) -> Array2<f64> {
        column(&self.s)
    }

    /// Both classes and both groups present, all features finite.
    pub fn check_nondegenerate(&self) -> Result<()> {
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite feature value".into()));
        }
        for (name, v) in [("label", &self.y), ("sensitive attribute", &self.s)] {
            let ones = v.iter().filter(|&&b| b == 1).count();
            if ones == 0 || ones == v.len() {
                return Err(Error::DegenerateData(format!("{name} is constant")));
            }
        }
        Ok(())
    }
}

fn column(v: &[u8]) -> Array2<f64> {
    Array2::from_shape_fn((v.len(), 1), |(i, _)| f64::from(v[i]))
}

pub fn dummy_code(raw: &RawTable, schema: &Schema) -> Result<TabularDataset> {
    let n = raw.len();
    let d = schema.feature_width();
    let mut features = Array2::zeros((n, d));
    let mut names = Vec::with_capacity(d);
    let mut numeric = Vec::with_capacity(d);
    let mut y = vec![0u8; n];
    let mut s = vec![0u8; n];
    let mut offset = 0;
    for (j, col) in schema.columns.iter().enumerate() {
        let loc = |i: usize| format!("row {}, column '{}'", raw.source_rows[i], col.name);
        let parse = |i: usize| -> Result<f64> {
            raw.rows[i][j]
                .parse::<f64>()
                .map_err(|_| Error::ingest(loc(i), format!("cannot parse '{}'", raw.rows[i][j])))
        };
        match col.kind {
            ColumnKind::Numeric => {
                for i in 0..n {
                    features[[i, offset]] = parse(i)?;
                }
                names.push(col.name.clone());
                numeric.push(true);
                offset += 1;
            }
            ColumnKind::Categorical => {
                let index: HashMap<&str, usize> =
                    col.categories.iter().enumerate().map(|(k, c)| (c.as_str(), k)).collect();
                for i in 0..n {
                    let k = *index
                        .get(raw.rows[i][j].as_str())
                        .ok_or_else(|| Error::ingest(loc(i), format!("category '{}' is not in the schema", raw.rows[i][j])))?;
                    features[[i, offset + k]] = 1.0;
                }
                names.extend(col.categories.iter().map(|c| format!("{}={}", col.name, c)));
                numeric.extend(std::iter::repeat_n(false, col.categories.len()));
                offset += col.categories.len();
            }
            ColumnKind::Label => {
                let positive = col.positive_label.as_deref().expect("validated");
                for i in 0..n {
                    y[i] = u8::from(raw.rows[i][j] == positive);
                }
            }
            ColumnKind::Sensitive => {
                for i in 0..n {
                    s[i] = match (&col.privileged_value, col.privileged_min) {
                        (Some(p), _) => u8::from(&raw.rows[i][j] == p),
                        (None, Some(min)) => u8::from(parse(i)? >= min),
                        (None, None) => unreachable!("validated"),
                    };
                }
                match col.encoding() {
                    SensitiveEncoding::Indicator => {
                        for i in 0..n {
                            features[[i, offset]] = f64::from(s[i]);
                        }
                        names.push(col.name.clone());
                        numeric.push(false);
                        offset += 1;
                    }
                    SensitiveEncoding::Numeric => {
                        for i in 0..n {
                            features[[i, offset]] = parse(i)?;
                        }
                        names.push(col.name.clone());
                        numeric.push(true);
                        offset += 1;
                    }
                    SensitiveEncoding::None => {}
                }
            }
        }
    }
    let ds = TabularDataset {
        features,
        y,
        s,
        feature_names: names,
        numeric,
        row_ids: (0..n).collect(),
        provenance: Provenance {
            source: raw.source.clone(),
            schema_hash: schema.hash(),
            content_hash: raw.content_hash.clone(),
        },
    };
    ds.check_nondegenerate()?;
    Ok(ds)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSet {
    pub train: TabularDataset,
    pub val: TabularDataset,
    pub test: TabularDataset,
    pub seed: u64,
}

impl SplitSet {
    pub fn width(&self) -> usize {
        self.train.width()
    }
}

/// `(train, val, test)` sizes of the 70/15/15 partition.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * TRAIN_PERCENT / 100;
    let val = n * VAL_PERCENT / 100;
    (train, val, n - train - val)
}

/// Row indices of a 70/15/15 partition stratified on `(y, s)`.
///
/// Within each stratum rows are shuffled, then every row is ranked by its
/// relative position in its stratum, so each prefix of the ranking holds the
/// strata in proportion.
pub fn split_indices(y: &[u8], s: &[u8], seed: u64) -> Result<[Vec<usize>; 3]> {
    let n = y.len();
    if n < MIN_SPLIT_ROWS {
        return Err(Error::Config(format!("need at least {MIN_SPLIT_ROWS} rows to split, got {n}")));
    }
    let mut rng = RngStream::derive(seed, SPLIT_STREAM);
    let mut strata: [Vec<usize>; 4] = Default::default();
    for i in 0..n {
        strata[usize::from(y[i]) * 2 + usize::from(s[i])].push(i);
    }
    let order: Vec<usize> = if strata.iter().any(|st| !st.is_empty() && st.len() < MIN_STRATUM_ROWS) {
        log::warn!("a (y, s) stratum has fewer than {MIN_STRATUM_ROWS} rows; falling back to an unstratified split");
        let mut all: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut all);
        all
    } else {
        let mut keyed = Vec::with_capacity(n);
        for (k, st) in strata.iter_mut().enumerate() {
            rng.shuffle(st);
            let len = st.len() as f64;
            keyed.extend(st.iter().enumerate().map(|(i, &row)| ((i as f64 + 0.5) / len, k, row)));
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, _, row)| row).collect()
    };
    let (n_train, n_val, _) = split_sizes(n);
    Ok([
        order[..n_train].to_vec(),
        order[n_train..n_train + n_val].to_vec(),
        order[n_train + n_val..].to_vec(),
    ])
}

pub fn split(ds: &TabularDataset, seed: u64) -> Result<SplitSet> {
    let [train, val, test] = split_indices(&ds.y, &ds.s, seed)?;
    Ok(SplitSet {
        train: ds.subset(&train),
        val: ds.subset(&val),
        test: ds.subset(&test),
        seed,
    })
}

/// Train-split statistics used to rescale numeric columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    /// `(column name, mean, std)` for every rescaled column.
    pub columns: Vec<(String, f64, f64)>,
    pub dropped: Vec<String>,
}

/// Rescales numeric columns to zero mean and unit (population) variance
/// using train statistics; zero-variance numeric columns are dropped from
/// every split.
pub fn standardize(split: SplitSet) -> Result<(SplitSet, Standardizer)> {
    if split.train.is_empty() {
        return Err(Error::Config("cannot standardize with an empty train split".into()));
    }
    let train = &split.train;
    let mut keep = Vec::new();
    let mut stats = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..train.width() {
        if !train.numeric[j] {
            keep.push(j);
            continue;
        }
        let col = train.features.column(j);
        let mean = col.mean().expect("non-empty");
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64;
        let std = var.sqrt();
        if std < 1e-12 {
            log::warn!("dropping zero-variance column '{}'", train.feature_names[j]);
            dropped.push(train.feature_names[j].clone());
            continue;
        }
        keep.push(j);
        stats.push((j, mean, std));
    }
    let apply = |ds: &TabularDataset| -> TabularDataset {
        let mut out = ds.clone();
        for &(j, mean, std) in &stats {
            out.features.column_mut(j).mapv_inplace(|v| (v - mean) / std);
        }
        out.features = out.features.select(Axis(1), &keep);
        out.feature_names = keep.iter().map(|&j| ds.feature_names[j].clone()).collect();
        out.numeric = keep.iter().map(|&j| ds.numeric[j]).collect();
        out
    };
    let standardizer = Standardizer {
        columns: stats
            .iter()
            .map(|&(j, m, s)| (train.feature_names[j].clone(), m, s))
            .collect(),
        dropped,
    };
    Ok((
        SplitSet {
            train: apply(&split.train),
            val: apply(&split.val),
            test: apply(&split.test),
            seed: split.seed,
        },
        standardizer,
    ))
}

/// Everything a training run needs from one CSV.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub raw: RawTable,
    pub splits: SplitSet,
    pub standardizer: Standardizer,
}

/// Load, dummy-code, split and standardize in one go.
pub fn prepare(csv_path: impl AsRef<Path>, schema: &Schema, seed: u64) -> Result<Prepared> {
    let raw = load_csv(csv_path, schema)?;
    prepare_raw(raw, schema, seed)
}

pub fn prepare_raw(raw: RawTable, schema: &Schema, seed: u64) -> Result<Prepared> {
    let ds = dummy_code(&raw, schema)?;
    if let Some(expected) = schema.expected_width {
        if expected != ds.width() {
            log::warn!("schema '{}' expected width {expected}, got {}", schema.name, ds.width());
        }
    }
    let (splits, standardizer) = standardize(split(&ds, seed)?)?;
    Ok(Prepared { raw, splits, standardizer })
}

/// Path of a file in the workspace `fixtures/` directory.
pub fn fixture_path(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}
