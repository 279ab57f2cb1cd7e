//! Questions, their categories, and the block one-hot encoding of raw rows.
//!
//! A schema is inferred once from a raw delimited table plus a directive file
//! and then frozen: category order and bin edges never change afterwards, and
//! every column index downstream refers to that order.
//!
//! Directive files are TOML, one table per column:
//!
//! ```toml
//! [columns.PINCP]
//! kind = "quantile"      # deciles by default: bins = 10
//! bins = 10
//! missing = ["NA"]       # trailing extra categories
//!
//! [columns.SCHL]
//! kind = "merged"
//! merge = [["1", "none"], ["2", "none"], ["16", "hs"]]
//!
//! [columns.SERIALNO]
//! kind = "skip"
//! ```
//!
//! Columns without a directive are plain categorical, with categories in
//! order of first appearance.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::ResponseMatrix;
use crate::error::{Error, Result};
use crate::layout::BlockLayout;

pub const SCHEMA_FORMAT: &str = "modp-schema";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Categorical,
    Quantile,
    Merged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionSpec {
    pub name: String,
    pub kind: QuestionKind,
    pub categories: Vec<String>,
    /// Ascending cut points of a quantile-binned question. A value equal to an
    /// edge belongs to the lower bin.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bin_edges: Option<Vec<f64>>,
    /// Special raw codes of a quantile-binned question; they are the trailing
    /// categories, in this order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing_codes: Vec<String>,
    /// Raw label to category label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merge_map: Option<BTreeMap<String, String>>,
}

impl QuestionSpec {
    pub fn categorical(name: impl Into<String>, categories: &[&str]) -> Self {
        QuestionSpec {
            name: name.into(),
            kind: QuestionKind::Categorical,
            categories: categories.iter().map(|s| s.to_string()).collect(),
            bin_edges: None,
            missing_codes: Vec::new(),
            merge_map: None,
        }
    }

    pub fn n_categories(&self) -> usize {
        self.categories.len()
    }

    fn n_bins(&self) -> usize {
        self.bin_edges.as_ref().map_or(0, |e| e.len() + 1)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSchema(format!("question `{}`: {msg}", self.name)));
        if self.categories.len() < 2 {
            return bad(format!("{} categories, need at least 2", self.categories.len()));
        }
        let mut seen = HashMap::new();
        for (k, c) in self.categories.iter().enumerate() {
            if let Some(prev) = seen.insert(c.as_str(), k) {
                return bad(format!("category `{c}` repeated at {prev} and {k}"));
            }
        }
        match self.kind {
            QuestionKind::Categorical => {
                if self.bin_edges.is_some() || self.merge_map.is_some() || !self.missing_codes.is_empty() {
                    return bad("plain categorical question carries bin edges, missing codes or a merge map".into());
                }
            }
            QuestionKind::Quantile => {
                let Some(edges) = &self.bin_edges else {
                    return bad("quantile question without bin edges".into());
                };
                if edges.iter().any(|e| !e.is_finite()) || edges.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("bin edges must be finite and strictly increasing".into());
                }
                if self.merge_map.is_some() {
                    return bad("quantile question carries a merge map".into());
                }
                if self.n_bins() + self.missing_codes.len() != self.categories.len() {
                    return bad(format!(
                        "{} edges and {} missing codes do not account for {} categories",
                        edges.len(),
                        self.missing_codes.len(),
                        self.categories.len()
                    ));
                }
                if self.categories[self.n_bins()..] != self.missing_codes[..] {
                    return bad("missing codes must be the trailing categories".into());
                }
            }
            QuestionKind::Merged => {
                let Some(map) = &self.merge_map else {
                    return bad("merged question without a merge map".into());
                };
                if self.bin_edges.is_some() || !self.missing_codes.is_empty() {
                    return bad("merged question carries bin edges or missing codes".into());
                }
                let mut hit = vec![false; self.categories.len()];
                for (raw, target) in map {
                    match seen.get(target.as_str()) {
                        Some(&k) => hit[k] = true,
                        None => return bad(format!("raw label `{raw}` merges into unknown category `{target}`")),
                    }
                }
                if let Some(k) = hit.iter().position(|h| !h) {
                    return bad(format!("category `{}` is not the image of any raw label", self.categories[k]));
                }
            }
        }
        Ok(())
    }
}

/// The frozen question list and its column layout.
#[derive(Debug, Clone)]
pub struct CategoricalSchema {
    questions: Vec<QuestionSpec>,
    layout: BlockLayout,
    lookup: Vec<HashMap<String, usize>>,
}

impl PartialEq for CategoricalSchema {
    fn eq(&self, other: &Self) -> bool {
        self.questions == other.questions
    }
}

#[derive(Serialize, Deserialize)]
struct SchemaDoc {
    format: String,
    version: u32,
    total_columns: usize,
    block_starts: Vec<usize>,
    questions: Vec<QuestionSpec>,
}

impl CategoricalSchema {
    pub fn new(questions: Vec<QuestionSpec>) -> Result<Self> {
        if questions.is_empty() {
            return Err(Error::InvalidSchema("no questions".into()));
        }
        let mut names = HashMap::new();
        for (i, q) in questions.iter().enumerate() {
            q.validate()?;
            if names.insert(q.name.as_str(), i).is_some() {
                return Err(Error::InvalidSchema(format!("question name `{}` repeated", q.name)));
            }
        }
        let sizes: Vec<usize> = questions.iter().map(QuestionSpec::n_categories).collect();
        let layout = BlockLayout::from_sizes(&sizes)?;
        let lookup = questions
            .iter()
            .map(|q| match (&q.kind, &q.merge_map) {
                (QuestionKind::Merged, Some(map)) => {
                    let mut m: HashMap<String, usize> = map
                        .iter()
                        .map(|(raw, t)| (raw.clone(), q.categories.iter().position(|c| c == t).unwrap()))
                        .collect();
                    // merged labels re-encode to themselves unless shadowed by a raw label
                    for (k, c) in q.categories.iter().enumerate() {
                        m.entry(c.clone()).or_insert(k);
                    }
                    m
                }
                // quantile questions also accept their bin labels verbatim
                _ => q.categories.iter().enumerate().map(|(k, c)| (c.clone(), k)).collect(),
            })
            .collect();
        Ok(CategoricalSchema {
            questions,
            layout,
            lookup,
        })
    }

    pub fn questions(&self) -> &[QuestionSpec] {
        &self.questions
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn block_starts(&self) -> &[usize] {
        self.layout.starts()
    }

    pub fn n_questions(&self) -> usize {
        self.questions.len()
    }

    pub fn n_cols(&self) -> usize {
        self.layout.n_cols()
    }

    /// Category index of a raw value for question `q`.
    pub fn encode_value(&self, q: usize, raw: &str) -> Result<usize> {
        let spec = &self.questions[q];
        let unmappable = || Error::Unmappable {
            question: spec.name.clone(),
            value: raw.to_string(),
        };
        if let Some(&k) = self.lookup[q].get(raw) {
            return Ok(k);
        }
        match spec.kind {
            QuestionKind::Quantile => {
                let v = parse_number(raw).ok_or_else(unmappable)?;
                Ok(bin_index(spec.bin_edges.as_deref().unwrap_or(&[]), v))
            }
            _ => Err(unmappable()),
        }
    }

    /// Category index per question.
    pub fn encode_codes<S: AsRef<str>>(&self, raw_row: &[S]) -> Result<Vec<usize>> {
        if raw_row.len() != self.n_questions() {
            return Err(Error::shape(format!(
                "row has {} values, schema has {} questions",
                raw_row.len(),
                self.n_questions()
            )));
        }
        raw_row
            .iter()
            .enumerate()
            .map(|(q, v)| self.encode_value(q, v.as_ref()))
            .collect()
    }

    /// Block one-hot vector of length `n_cols`.
    pub fn encode_row<S: AsRef<str>>(&self, raw_row: &[S]) -> Result<Vec<u8>> {
        let codes = self.encode_codes(raw_row)?;
        let mut bits = vec![0u8; self.n_cols()];
        for (q, k) in codes.into_iter().enumerate() {
            bits[self.layout.starts()[q] + k] = 1;
        }
        Ok(bits)
    }

    /// Category label per question. Quantile bins decode to their bin label.
    pub fn decode_row(&self, bits: &[u8]) -> Result<Vec<String>> {
        if bits.len() != self.n_cols() {
            return Err(Error::shape(format!(
                "bit vector has {} entries, schema has {} columns",
                bits.len(),
                self.n_cols()
            )));
        }
        self.layout
            .blocks()
            .enumerate()
            .map(|(q, b)| {
                let block = &bits[b];
                let ones = block.iter().filter(|&&x| x != 0).count();
                if ones != 1 {
                    return Err(Error::OneHot { row: 0, question: q, ones });
                }
                let k = block.iter().position(|&x| x != 0).unwrap();
                Ok(self.questions[q].categories[k].clone())
            })
            .collect()
    }

    /// Encodes every row of `table`, matching questions to header names.
    pub fn encode_table(&self, table: &RawTable) -> Result<ResponseMatrix> {
        let cols: Vec<usize> = self
            .questions
            .iter()
            .map(|q| table.column(&q.name).ok_or_else(|| Error::UnknownColumn(q.name.clone())))
            .collect::<Result<_>>()?;
        let q_count = self.n_questions();
        let mut codes = Vec::with_capacity(table.rows.len() * q_count);
        for row in &table.rows {
            for (q, &c) in cols.iter().enumerate() {
                codes.push(self.encode_value(q, &row[c])? as u32);
            }
        }
        ResponseMatrix::from_codes(self.layout.clone(), &codes)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        let doc = SchemaDoc {
            format: SCHEMA_FORMAT.into(),
            version: SCHEMA_VERSION,
            total_columns: self.n_cols(),
            block_starts: self.block_starts().to_vec(),
            questions: self.questions.clone(),
        };
        Ok(toml::to_string(&doc)?)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let doc: SchemaDoc = toml::from_str(s)?;
        if doc.format != SCHEMA_FORMAT {
            return Err(Error::Format(format!("expected `{SCHEMA_FORMAT}`, found `{}`", doc.format)));
        }
        if doc.version != SCHEMA_VERSION {
            return Err(Error::Version {
                artifact: "schema",
                found: doc.version,
                expected: SCHEMA_VERSION,
            });
        }
        let schema = Self::new(doc.questions)?;
        if schema.block_starts() != doc.block_starts || schema.n_cols() != doc.total_columns {
            return Err(Error::InvalidSchema(
                "declared block_starts disagree with the question list".into(),
            ));
        }
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }
}

fn parse_number(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Number of edges strictly below `v`: values equal to an edge go low.
pub fn bin_index(edges: &[f64], v: f64) -> usize {
    edges.partition_point(|&e| e < v)
}

/// Cut points for `bins` quantile bins with the "lower" rule: the k-th edge is
/// the order statistic at `floor(k (n - 1) / bins)`. Repeated edges (heavy
/// ties) are merged, so fewer bins may result.
pub fn quantile_edges(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut edges: Vec<f64> = (1..bins).map(|k| sorted[k * (n - 1) / bins]).collect();
    edges.dedup();
    edges
}

/// A raw delimited table: header plus string cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl RawTable {
    /// Parses comma- or tab-delimited text; the delimiter is tab when the
    /// header line contains one.
    pub fn parse(text: &str) -> Result<Self> {
        let first = text.lines().next().unwrap_or("");
        let delimiter = if first.contains('\t') { b'\t' } else { b',' };
        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .has_headers(true)
            .from_reader(text.as_bytes());
        let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(rec.iter().map(|c| c.trim().to_string()).collect());
        }
        Ok(RawTable { headers, rows })
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        let mut s = String::new();
        r.read_to_string(&mut s)?;
        Self::parse(&s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnDirective {
    Categorical {
        /// Fixes category order and admits categories absent from the data.
        #[serde(default)]
        categories: Option<Vec<String>>,
    },
    Quantile {
        #[serde(default = "default_bins")]
        bins: usize,
        #[serde(default)]
        missing: Vec<String>,
    },
    Merged {
        merge: Vec<(String, String)>,
    },
    Skip,
}

fn default_bins() -> usize {
    10
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
pub struct Directives {
    #[serde(default)]
    pub columns: BTreeMap<String, ColumnDirective>,
}

impl Directives {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Builds a schema from observed data. Columns appear in header order.
pub fn infer_schema(table: &RawTable, directives: &Directives) -> Result<CategoricalSchema> {
    for name in directives.columns.keys() {
        if table.column(name).is_none() {
            return Err(Error::UnknownColumn(name.clone()));
        }
    }
    let default = ColumnDirective::Categorical { categories: None };
    let mut questions = Vec::new();
    for (c, name) in table.headers.iter().enumerate() {
        let directive = directives.columns.get(name).unwrap_or(&default);
        if matches!(directive, ColumnDirective::Skip) {
            continue;
        }
        if table.rows.is_empty() {
            return Err(Error::EmptyColumn(name.clone()));
        }
        let cells = table.rows.iter().map(|r| r[c].as_str());
        let spec = infer_question(name, directive, cells)?;
        if spec.categories.len() < 2 {
            return Err(Error::DegenerateColumn {
                column: name.clone(),
                categories: spec.categories.len(),
            });
        }
        questions.push(spec);
    }
    CategoricalSchema::new(questions)
}

fn infer_question<'a>(
    name: &str,
    directive: &ColumnDirective,
    cells: impl Iterator<Item = &'a str>,
) -> Result<QuestionSpec> {
    let unmappable = |v: &str| Error::Unmappable {
        question: name.to_string(),
        value: v.to_string(),
    };
    let mut spec = QuestionSpec {
        name: name.to_string(),
        kind: QuestionKind::Categorical,
        categories: Vec::new(),
        bin_edges: None,
        missing_codes: Vec::new(),
        merge_map: None,
    };
    match directive {
        ColumnDirective::Categorical { categories: None } => {
            let mut seen = HashMap::new();
            for v in cells {
                if !seen.contains_key(v) {
                    seen.insert(v, ());
                    spec.categories.push(v.to_string());
                }
            }
        }
        ColumnDirective::Categorical { categories: Some(fixed) } => {
            for v in cells {
                if !fixed.iter().any(|c| c == v) {
                    return Err(unmappable(v));
                }
            }
            spec.categories = fixed.clone();
        }
        ColumnDirective::Quantile { bins, missing } => {
            if *bins == 0 {
                return Err(Error::InvalidDirective(format!("column `{name}`: bins must be positive")));
            }
            let mut values = Vec::new();
            for v in cells {
                if missing.iter().any(|m| m == v) {
                    continue;
                }
                values.push(parse_number(v).ok_or_else(|| unmappable(v))?);
            }
            if values.is_empty() {
                return Err(Error::EmptyColumn(name.to_string()));
            }
            let mut distinct = values.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() < *bins {
                return Err(Error::TooFewDistinct {
                    column: name.to_string(),
                    distinct: distinct.len(),
                    bins: *bins,
                });
            }
            let edges = quantile_edges(&values, *bins);
            spec.kind = QuestionKind::Quantile;
            spec.categories = (1..=edges.len() + 1).map(|k| format!("q{k}")).collect();
            spec.categories.extend(missing.iter().cloned());
            spec.bin_edges = Some(edges);
            spec.missing_codes = missing.clone();
        }
        ColumnDirective::Merged { merge } => {
            let mut map = BTreeMap::new();
            for (raw, target) in merge {
                if let Some(prev) = map.insert(raw.clone(), target.clone()) {
                    if &prev != target {
                        return Err(Error::InvalidDirective(format!(
                            "column `{name}`: raw label `{raw}` merged into both `{prev}` and `{target}`"
                        )));
                    }
                }
                if !spec.categories.contains(target) {
                    spec.categories.push(target.clone());
                }
            }
            for v in cells {
                if !map.contains_key(v) {
                    return Err(unmappable(v));
                }
            }
            spec.kind = QuestionKind::Merged;
            spec.merge_map = Some(map);
        }
        ColumnDirective::Skip => unreachable!("skipped columns are filtered by the caller"),
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sex_abc() -> CategoricalSchema {
        CategoricalSchema::new(vec![
            QuestionSpec::categorical("Q1", &["M", "F"]),
            QuestionSpec::categorical("Q2", &["A", "B", "C"]),
        ])
        .unwrap()
    }

    fn ramp_table() -> RawTable {
        let mut text = String::from("X,S\n");
        for v in 1..=100 {
            text.push_str(&format!("{v},{}\n", if v % 2 == 0 { "M" } else { "F" }));
        }
        RawTable::parse(&text).unwrap()
    }

    #[test]
    fn encode_and_decode_small_rows() {
        let s = sex_abc();
        assert_eq!(s.encode_row(&["F", "B"]).unwrap(), vec![0, 1, 0, 1, 0]);
        assert_eq!(s.encode_row(&["M", "A"]).unwrap(), vec![1, 0, 1, 0, 0]);
        assert_eq!(s.decode_row(&[0, 1, 0, 1, 0]).unwrap(), vec!["F", "B"]);
        assert_eq!(s.decode_row(&[1, 0, 0, 0, 1]).unwrap(), vec!["M", "C"]);
        match s.decode_row(&[1, 1, 0, 1, 0]) {
            Err(Error::OneHot { question: 0, ones: 2, .. }) => {}
            other => panic!("expected one-hot error, got {other:?}"),
        }
        assert!(matches!(s.decode_row(&[1, 0, 0, 0, 0]), Err(Error::OneHot { question: 1, ones: 0, .. })));
        assert!(matches!(s.encode_row(&["X", "A"]), Err(Error::Unmappable { .. })));
    }

    #[test]
    fn deciles_of_a_ramp() {
        let mut d = Directives::default();
        d.columns.insert("X".into(), ColumnDirective::Quantile { bins: 10, missing: vec![] });
        let s = infer_schema(&ramp_table(), &d).unwrap();
        let x = &s.questions()[0];
        assert_eq!(x.bin_edges.as_deref().unwrap(), &[10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0]);
        assert_eq!(s.encode_value(0, "5").unwrap(), 0);
        assert_eq!(s.encode_value(0, "95").unwrap(), 9);
        // edge values go to the lower bin
        assert_eq!(s.encode_value(0, "10").unwrap(), 0);
        assert_eq!(s.encode_value(0, "10.5").unwrap(), 1);
        // plain categorical second column in first-appearance order
        assert_eq!(s.questions()[1].categories, vec!["F", "M"]);
        let mut bits = vec![0u8; 12];
        bits[9] = 1;
        bits[11] = 1;
        assert_eq!(s.encode_row(&["95", "M"]).unwrap(), bits);
    }

    #[test]
    fn merge_directive_image() {
        let t = RawTable::parse("L\na\nb\nc\na\n").unwrap();
        let d = Directives::parse(
            r#"
            [columns.L]
            kind = "merged"
            merge = [["a", "x"], ["b", "x"], ["c", "y"]]
            "#,
        )
        .unwrap();
        let s = infer_schema(&t, &d).unwrap();
        assert_eq!(s.questions()[0].categories, vec!["x", "y"]);
        assert_eq!(s.encode_value(0, "b").unwrap(), 0);
        assert_eq!(s.encode_value(0, "c").unwrap(), 1);
    }

    #[test]
    fn missing_codes_are_trailing_categories() {
        let mut text = String::from("X\n");
        for v in 1..=20 {
            text.push_str(&format!("{v}\n"));
        }
        text.push_str("NA\nNA\n");
        let t = RawTable::parse(&text).unwrap();
        let d = Directives::parse("[columns.X]\nkind = \"quantile\"\nbins = 4\nmissing = [\"NA\"]\n").unwrap();
        let s = infer_schema(&t, &d).unwrap();
        assert_eq!(s.questions()[0].categories, vec!["q1", "q2", "q3", "q4", "NA"]);
        assert_eq!(s.encode_value(0, "NA").unwrap(), 4);
        let m = s.encode_table(&t).unwrap();
        assert_eq!(m.n_rows(), 22);
    }

    #[test]
    fn inference_errors() {
        let t = ramp_table();
        let mut d = Directives::default();
        d.columns.insert("nope".into(), ColumnDirective::Skip);
        assert!(matches!(infer_schema(&t, &d), Err(Error::UnknownColumn(c)) if c == "nope"));

        let mut d = Directives::default();
        d.columns.insert("X".into(), ColumnDirective::Quantile { bins: 200, missing: vec![] });
        assert!(matches!(infer_schema(&t, &d), Err(Error::TooFewDistinct { distinct: 100, bins: 200, .. })));

        let empty = RawTable::parse("X,S\n").unwrap();
        assert!(matches!(infer_schema(&empty, &Directives::default()), Err(Error::EmptyColumn(_))));

        let mut d = Directives::default();
        d.columns.insert("S".into(), ColumnDirective::Quantile { bins: 2, missing: vec![] });
        assert!(matches!(infer_schema(&t, &d), Err(Error::Unmappable { .. })));

        let constant = RawTable::parse("C\nz\nz\n").unwrap();
        assert!(matches!(
            infer_schema(&constant, &Directives::default()),
            Err(Error::DegenerateColumn { categories: 1, .. })
        ));
    }

    #[test]
    fn schema_text_is_stable_and_round_trips() {
        let mut d = Directives::default();
        d.columns.insert("X".into(), ColumnDirective::Quantile { bins: 10, missing: vec!["NA".into()] });
        let s = infer_schema(&ramp_table(), &d).unwrap();
        let a = s.to_toml_string().unwrap();
        let b = infer_schema(&ramp_table(), &d).unwrap().to_toml_string().unwrap();
        assert_eq!(a, b);
        assert!(a.contains("version = 1"));
        let back = CategoricalSchema::from_toml_str(&a).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.to_toml_string().unwrap(), a);

        let bumped = a.replace("version = 1", "version = 2");
        assert!(matches!(CategoricalSchema::from_toml_str(&bumped), Err(Error::Version { found: 2, .. })));
    }

    #[test]
    fn tab_delimited_tables() {
        let t = RawTable::parse("a\tb\n1\tx\n2\ty\n").unwrap();
        assert_eq!(t.headers, vec!["a", "b"]);
        assert_eq!(t.rows[1], vec!["2", "y"]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut q = QuestionSpec::categorical("A", &["x", "x"]);
        assert!(CategoricalSchema::new(vec![q.clone()]).is_err());
        q.categories = vec!["x".into()];
        assert!(CategoricalSchema::new(vec![q]).is_err());
        let bad_edges = QuestionSpec {
            name: "B".into(),
            kind: QuestionKind::Quantile,
            categories: vec!["q1".into(), "q2".into(), "q3".into()],
            bin_edges: Some(vec![2.0, 1.0]),
            missing_codes: vec![],
            merge_map: None,
        };
        assert!(CategoricalSchema::new(vec![bad_edges]).is_err());
    }

    fn arb_schema() -> impl Strategy<Value = CategoricalSchema> {
        prop::collection::vec(2usize..6, 1..6).prop_map(|sizes| {
            let qs = sizes
                .iter()
                .enumerate()
                .map(|(i, &n)| QuestionSpec {
                    name: format!("q{i}"),
                    kind: QuestionKind::Categorical,
                    categories: (0..n).map(|k| format!("c{i}_{k}")).collect(),
                    bin_edges: None,
                    missing_codes: vec![],
                    merge_map: None,
                })
                .collect();
            CategoricalSchema::new(qs).unwrap()
        })
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(schema in arb_schema(), picks in prop::collection::vec(0usize..100, 6)) {
            let labels: Vec<String> = schema
                .questions()
                .iter()
                .enumerate()
                .map(|(q, s)| s.categories[picks[q] % s.n_categories()].clone())
                .collect();
            let bits = schema.encode_row(&labels).unwrap();
            for b in schema.layout().blocks() {
                prop_assert_eq!(bits[b].iter().map(|&x| x as usize).sum::<usize>(), 1);
            }
            prop_assert_eq!(schema.decode_row(&bits).unwrap(), labels);
        }

        #[test]
        fn quantile_bins_partition_the_line(
            mut edges in prop::collection::vec(-1e6f64..1e6, 1..12),
            v in -2e6f64..2e6,
        ) {
            edges.sort_by(f64::total_cmp);
            edges.dedup();
            let k = bin_index(&edges, v);
            prop_assert!(k <= edges.len());
            // exactly one bin (lo, hi] contains v
            let lo = if k == 0 { f64::NEG_INFINITY } else { edges[k - 1] };
            let hi = if k == edges.len() { f64::INFINITY } else { edges[k] };
            prop_assert!(lo < v && v <= hi);
        }
    }
}
