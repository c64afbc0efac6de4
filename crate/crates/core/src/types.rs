//! Schema, dataset container, and serialization for mixed-type observations.
//!
//! Continuous cells hold real values. Discrete cells hold the category index
//! in `[0, cardinality)` stored as an `f64`, so a row is always a plain
//! `&[f64]`. Category index 0 is the reference category used by the GPM
//! statistics.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarKind {
    Continuous,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VarKind,
    /// Ordered category labels; empty for continuous variables.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub codes: Vec<String>,
}

impl VariableSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: VarKind::Continuous, codes: Vec::new() }
    }

    pub fn discrete(name: impl Into<String>, codes: Vec<String>) -> Self {
        Self { name: name.into(), kind: VarKind::Discrete, codes }
    }

    /// Discrete variable with labels `"0"..="M-1"`.
    pub fn discrete_indexed(name: impl Into<String>, cardinality: usize) -> Self {
        Self::discrete(name, (0..cardinality).map(|v| v.to_string()).collect())
    }

    pub fn is_discrete(&self) -> bool {
        self.kind == VarKind::Discrete
    }

    /// Number of categories (0 for continuous variables).
    pub fn cardinality(&self) -> usize {
        self.codes.len()
    }

    fn type_tag(&self) -> String {
        match self.kind {
            VarKind::Continuous => "c".to_string(),
            VarKind::Discrete => format!("d:{}:{}", self.codes.len(), self.codes.join("|")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub vars: Vec<VariableSpec>,
}

impl Schema {
    pub fn new(vars: Vec<VariableSpec>) -> Result<Self> {
        let schema = Self { vars };
        schema.validate()?;
        Ok(schema)
    }

    /// All-continuous schema with names `x0, x1, …`.
    pub fn continuous(d: usize) -> Self {
        Self { vars: (0..d).map(|i| VariableSpec::continuous(format!("x{i}"))).collect() }
    }

    /// All-discrete schema with the given cardinalities.
    pub fn discrete(cards: &[usize]) -> Result<Self> {
        Self::new(cards.iter().enumerate().map(|(i, &m)| VariableSpec::discrete_indexed(format!("x{i}"), m)).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for v in &self.vars {
            if !seen.insert(v.name.as_str()) {
                return Err(Error::Schema(format!("duplicate variable name {:?}", v.name)));
            }
            match v.kind {
                VarKind::Discrete => {
                    if v.codes.len() < 2 {
                        return Err(Error::Schema(format!("discrete variable {:?} needs cardinality >= 2", v.name)));
                    }
                    let distinct: HashSet<&String> = v.codes.iter().collect();
                    if distinct.len() != v.codes.len() {
                        return Err(Error::Schema(format!("duplicate codes in {:?}", v.name)));
                    }
                }
                VarKind::Continuous => {
                    if !v.codes.is_empty() {
                        return Err(Error::Schema(format!("continuous variable {:?} carries category codes", v.name)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn is_discrete(&self, i: usize) -> bool {
        self.vars[i].is_discrete()
    }

    pub fn cardinality(&self, i: usize) -> usize {
        self.vars[i].cardinality()
    }

    pub fn continuous_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.is_discrete(i)).collect()
    }

    pub fn discrete_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_discrete(i)).collect()
    }

    /// Checks that `row` has the right width, finite continuous values, and
    /// in-range category indices.
    pub fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.len() {
            return Err(Error::DimensionMismatch { expected: self.len(), got: row.len() });
        }
        for (i, (&x, v)) in row.iter().zip(&self.vars).enumerate() {
            if !x.is_finite() {
                return Err(Error::NonFinite(format!("variable {i} has value {x}")));
            }
            if v.is_discrete() && !is_category(x, v.cardinality()) {
                return Err(Error::pre(format!("variable {i} category {x} outside [0, {})", v.cardinality())));
            }
        }
        Ok(())
    }
}

fn is_category(x: f64, m: usize) -> bool {
    x >= 0.0 && x.fract() == 0.0 && (x as usize) < m
}

/// An `n × d` table of observations conforming to a [`Schema`].
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    n: usize,
    data: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from row-major values, validating every cell.
    pub fn new(schema: Schema, data: Vec<f64>) -> Result<Self> {
        schema.validate()?;
        let d = schema.len();
        if d == 0 {
            return Err(Error::Schema("schema has no variables".into()));
        }
        if data.len() % d != 0 {
            return Err(Error::DimensionMismatch { expected: d, got: data.len() % d });
        }
        let n = data.len() / d;
        if n == 0 {
            return Err(Error::pre("n ≥ 1 violated: dataset has no rows"));
        }
        for (r, row) in data.chunks_exact(d).enumerate() {
            schema.check_row(row).map_err(|e| match e {
                Error::Precondition(msg) | Error::NonFinite(msg) => Error::pre(format!("row {}: {msg}", r + 1)),
                other => other,
            })?;
        }
        Ok(Self { schema, n, data })
    }

    pub fn from_rows(schema: Schema, rows: &[Vec<f64>]) -> Result<Self> {
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(schema, data)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.schema.len()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let d = self.d();
        &self.data[r * d..(r + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// New dataset holding the selected rows, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Result<Self> {
        let data = idx.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        Self::new(self.schema.clone(), data)
    }

    /// Writes the dataset in whichever format the extension selects (`.json`
    /// or CSV otherwise).
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = if is_json(path) { self.to_json_string()? } else { self.to_csv_string()? };
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// CSV with a name row and a type row. Discrete type tags carry their
    /// labels (`d:<M>:<l0>|<l1>|…`) so that reloading is exact.
    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(self.schema.vars.iter().map(|v| v.name.as_str()))?;
        w.write_record(self.schema.vars.iter().map(VariableSpec::type_tag))?;
        for row in self.rows() {
            let cells = row.iter().zip(&self.schema.vars).map(|(&x, v)| match v.kind {
                VarKind::Continuous => format_f64(x),
                VarKind::Discrete => v.codes[x as usize].clone(),
            });
            w.write_record(cells)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("<csv buffer>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv writer emits UTF-8"))
    }

    pub fn to_json_string(&self) -> Result<String> {
        let rows = self
            .rows()
            .map(|row| {
                row.iter()
                    .zip(&self.schema.vars)
                    .map(|(&x, v)| match v.kind {
                        VarKind::Continuous => serde_json::json!(x),
                        VarKind::Discrete => serde_json::json!(v.codes[x as usize]),
                    })
                    .collect::<Vec<_>>()
            })
            .collect::<Vec<_>>();
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "schema": self.schema,
            "rows": rows,
        }))?)
    }
}

/// Shortest decimal string that parses back to the identical `f64`.
pub fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

/// Loads a dataset from CSV or JSON (selected by extension).
///
/// CSV layout: a header row of names, then (only when `schema` is `None`) a
/// type row with `c` for continuous and `d:<M>` or `d:<M>:<l0>|…|<lM-1>` for
/// discrete variables. Without declared labels, integer labels in `[0, M)`
/// map to their value and anything else maps in order of first appearance.
/// Rows and columns in error messages are 1-based and count data rows only.
pub fn load_dataset(path: &Path, schema: Option<&Schema>) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if is_json(path) {
        parse_json(&text, schema)
    } else {
        parse_csv(&text, schema)
    }
}

pub fn parse_csv(text: &str, schema: Option<&Schema>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(text.as_bytes());
    let mut records = rdr.records();
    let header = records.next().ok_or_else(|| Error::Parse { row: 0, col: 0, msg: "missing header row".into() })??;
    let names: Vec<String> = header.iter().map(|s| s.trim().to_string()).collect();
    let d = names.len();

    let mut pending: Vec<PendingVar> = match schema {
        Some(s) => {
            if s.len() != d {
                return Err(Error::DimensionMismatch { expected: s.len(), got: d });
            }
            for (j, (n, v)) in names.iter().zip(&s.vars).enumerate() {
                if *n != v.name {
                    return Err(Error::Parse { row: 0, col: j + 1, msg: format!("header {n:?} does not match schema name {:?}", v.name) });
                }
            }
            s.vars.iter().map(PendingVar::from_spec).collect()
        }
        None => {
            let tags = records.next().ok_or_else(|| Error::Parse { row: 0, col: 0, msg: "missing type row".into() })??;
            if tags.len() != d {
                return Err(Error::Parse {
                    row: 0,
                    col: tags.len().min(d) + 1,
                    msg: format!("type row has {} entries, header has {d}", tags.len()),
                });
            }
            tags.iter().zip(&names).enumerate().map(|(j, (t, n))| PendingVar::from_tag(n, t.trim(), j + 1)).collect::<Result<_>>()?
        }
    };

    let mut data = Vec::new();
    for (r, rec) in records.enumerate() {
        let row_no = r + 1;
        let rec = rec?;
        if rec.len() == 1 && rec.get(0).is_some_and(|s| s.trim().is_empty()) {
            continue;
        }
        if rec.len() != d {
            return Err(Error::Parse { row: row_no, col: rec.len().min(d) + 1, msg: format!("expected {d} cells, found {}", rec.len()) });
        }
        for (j, cell) in rec.iter().enumerate() {
            data.push(pending[j].encode(cell.trim(), row_no, j + 1)?);
        }
    }
    if data.is_empty() {
        return Err(Error::pre("n ≥ 1 violated: no data rows"));
    }
    let vars = pending.iter_mut().map(PendingVar::finish).collect::<Vec<_>>();
    let mut ds_data = data;
    // Undeclared labels whose numbering was deferred get resolved now.
    for (j, p) in pending.iter().enumerate() {
        if let Some(remap) = &p.remap {
            for r in 0..ds_data.len() / d {
                let v = &mut ds_data[r * d + j];
                *v = remap[*v as usize] as f64;
            }
        }
    }
    Dataset::new(Schema::new(vars)?, ds_data)
}

struct PendingVar {
    name: String,
    kind: VarKind,
    cardinality: usize,
    /// Declared labels, or labels in first-appearance order when undeclared.
    codes: Vec<String>,
    lookup: HashMap<String, usize>,
    declared: bool,
    remap: Option<Vec<usize>>,
}

impl PendingVar {
    fn from_spec(v: &VariableSpec) -> Self {
        Self {
            name: v.name.clone(),
            kind: v.kind,
            cardinality: v.cardinality(),
            codes: v.codes.clone(),
            lookup: v.codes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect(),
            declared: true,
            remap: None,
        }
    }

    fn from_tag(name: &str, tag: &str, col: usize) -> Result<Self> {
        let bad = |msg: String| Error::Parse { row: 0, col, msg };
        if tag == "c" {
            return Ok(Self {
                name: name.to_string(),
                kind: VarKind::Continuous,
                cardinality: 0,
                codes: Vec::new(),
                lookup: HashMap::new(),
                declared: true,
                remap: None,
            });
        }
        let rest = tag.strip_prefix("d:").ok_or_else(|| bad(format!("unknown type tag {tag:?} (expected \"c\" or \"d:<M>\")")))?;
        let (m_str, labels) = match rest.split_once(':') {
            Some((m, l)) => (m, Some(l)),
            None => (rest, None),
        };
        let m: usize = m_str.parse().map_err(|_| bad(format!("bad cardinality in tag {tag:?}")))?;
        if m < 2 {
            return Err(bad(format!("cardinality must be >= 2 in tag {tag:?}")));
        }
        let (codes, declared) = match labels {
            Some(l) => {
                let codes: Vec<String> = l.split('|').map(str::to_string).collect();
                if codes.len() != m {
                    return Err(bad(format!("tag {tag:?} declares {m} categories but lists {}", codes.len())));
                }
                (codes, true)
            }
            None => (Vec::new(), false),
        };
        Ok(Self {
            name: name.to_string(),
            kind: VarKind::Discrete,
            cardinality: m,
            lookup: codes.iter().enumerate().map(|(i, c)| (c.clone(), i)).collect(),
            codes,
            declared,
            remap: None,
        })
    }

    fn encode(&mut self, cell: &str, row: usize, col: usize) -> Result<f64> {
        if cell.is_empty() {
            return Err(Error::Parse { row, col, msg: "missing value".into() });
        }
        match self.kind {
            VarKind::Continuous => {
                let x: f64 = cell.parse().map_err(|_| Error::Parse { row, col, msg: format!("cannot parse {cell:?} as a number") })?;
                if !x.is_finite() {
                    return Err(Error::Parse { row, col, msg: format!("non-finite value {cell:?}") });
                }
                Ok(x)
            }
            VarKind::Discrete => {
                if let Some(&i) = self.lookup.get(cell) {
                    return Ok(i as f64);
                }
                if self.declared || self.codes.len() == self.cardinality {
                    return Err(Error::Parse {
                        row,
                        col,
                        msg: format!("category {cell:?} out of range for {:?} (codes {:?})", self.name, self.codes),
                    });
                }
                let i = self.codes.len();
                self.codes.push(cell.to_string());
                self.lookup.insert(cell.to_string(), i);
                Ok(i as f64)
            }
        }
    }

    fn finish(&mut self) -> VariableSpec {
        match self.kind {
            VarKind::Continuous => VariableSpec::continuous(self.name.clone()),
            VarKind::Discrete if self.declared => VariableSpec::discrete(self.name.clone(), self.codes.clone()),
            VarKind::Discrete => {
                let m = self.cardinality;
                let ints: Option<Vec<usize>> = self.codes.iter().map(|c| c.parse::<usize>().ok().filter(|&v| v < m)).collect();
                match ints {
                    Some(vals) => {
                        self.remap = Some(vals);
                        VariableSpec::discrete_indexed(self.name.clone(), m)
                    }
                    None => {
                        let mut codes = self.codes.clone();
                        let mut k = 0;
                        while codes.len() < m {
                            let filler = format!("<unobserved {k}>");
                            if !codes.contains(&filler) {
                                codes.push(filler);
                            }
                            k += 1;
                        }
                        VariableSpec::discrete(self.name.clone(), codes)
                    }
                }
            }
        }
    }
}

#[derive(Deserialize)]
struct JsonDataset {
    schema: Schema,
    rows: Vec<Vec<serde_json::Value>>,
}

pub fn parse_json(text: &str, schema: Option<&Schema>) -> Result<Dataset> {
    let parsed: JsonDataset = serde_json::from_str(text)?;
    if let Some(s) = schema {
        if *s != parsed.schema {
            return Err(Error::Schema("embedded schema differs from the supplied schema".into()));
        }
    }
    let schema = parsed.schema;
    schema.validate()?;
    let d = schema.len();
    let mut data = Vec::with_capacity(parsed.rows.len() * d);
    for (r, row) in parsed.rows.iter().enumerate() {
        if row.len() != d {
            return Err(Error::Parse { row: r + 1, col: row.len().min(d) + 1, msg: format!("expected {d} cells, found {}", row.len()) });
        }
        for (j, (cell, v)) in row.iter().zip(&schema.vars).enumerate() {
            let err = |msg: String| Error::Parse { row: r + 1, col: j + 1, msg };
            let x = match (v.kind, cell) {
                (VarKind::Continuous, serde_json::Value::Number(num)) => num.as_f64().ok_or_else(|| err("bad number".into()))?,
                (VarKind::Discrete, serde_json::Value::String(s)) => {
                    v.codes.iter().position(|c| c == s).ok_or_else(|| err(format!("category {s:?} out of range (codes {:?})", v.codes)))?
                        as f64
                }
                (VarKind::Discrete, serde_json::Value::Number(num)) => {
                    let i = num.as_u64().ok_or_else(|| err("category index must be a nonnegative integer".into()))?;
                    if i as usize >= v.cardinality() {
                        return Err(err(format!("category index {i} out of range")));
                    }
                    i as f64
                }
                (_, serde_json::Value::Null) => return Err(err("missing value".into())),
                (_, other) => return Err(err(format!("unexpected cell {other}"))),
            };
            data.push(x);
        }
    }
    if parsed.rows.is_empty() {
        return Err(Error::pre("n ≥ 1 violated: no data rows"));
    }
    Dataset::new(schema, data)
}

/// Per-variable affine map applied by [`standardize`]: `z = (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(d: usize) -> Self {
        Self { shift: vec![0.0; d], scale: vec![1.0; d] }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(self.shift.iter().zip(&self.scale)).map(|(&x, (&s, &c))| (x - s) / c).collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter().zip(self.shift.iter().zip(&self.scale)).map(|(&z, (&s, &c))| z * c + s).collect()
    }
}

/// Centers and scales continuous columns to mean 0 and population sd 1.
/// Zero-variance columns are centered with scale 1; discrete columns pass
/// through unchanged.
pub fn standardize(ds: &Dataset) -> (Dataset, Standardization) {
    let d = ds.d();
    let n = ds.n() as f64;
    let mut rec = Standardization::identity(d);
    for j in ds.schema().continuous_indices() {
        let mean = ds.rows().map(|r| r[j]).sum::<f64>() / n;
        let var = ds.rows().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        rec.shift[j] = mean;
        rec.scale[j] = if sd > 0.0 && sd.is_finite() { sd } else { 1.0 };
    }
    let data = ds.rows().flat_map(|r| rec.apply(r)).collect();
    let out = Dataset { schema: ds.schema().clone(), n: ds.n(), data };
    (out, rec)
}
