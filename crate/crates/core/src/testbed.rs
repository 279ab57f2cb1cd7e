//! Synthetic populations with known structure.
//!
//! A population is a mixture of subpopulations. Inside a subpopulation every
//! question depends on at most one parent question, through a conditional
//! table drawn from a symmetric Dirichlet distribution. Questions may also be
//! pinned to one answer (which creates structural zeros) or copy their
//! parent deterministically.
//!
//! ```toml
//! rows = 50000
//! concentration = 1.0
//!
//! [[questions]]
//! name = "q1"
//! categories = 3
//!
//! [[subpopulations]]
//! weight = 0.6
//! parents = { q2 = "q1" }
//! fixed = { q3 = 0 }
//! copy = ["q2"]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::dataset::ResponseMatrix;
use crate::error::{Error, Result};
use crate::rng::{keyed, Domain};
use crate::schema::{CategoricalSchema, QuestionSpec, RawTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestbedQuestion {
    pub name: String,
    pub categories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Subpopulation {
    pub weight: f64,
    /// Child question name to parent question name.
    #[serde(default)]
    pub parents: BTreeMap<String, String>,
    /// Questions answered identically by every member.
    #[serde(default)]
    pub fixed: BTreeMap<String, usize>,
    /// Children whose answer is the parent's answer modulo their size.
    #[serde(default)]
    pub copy: Vec<String>,
    /// Overrides the population concentration.
    #[serde(default)]
    pub concentration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub rows: usize,
    #[serde(default = "default_concentration")]
    pub concentration: f64,
    pub questions: Vec<TestbedQuestion>,
    pub subpopulations: Vec<Subpopulation>,
}

fn default_concentration() -> f64 {
    1.0
}

/// How one question is answered inside one subpopulation.
#[derive(Debug, Clone, PartialEq)]
enum Rule {
    Fixed(usize),
    Copy(usize),
    /// Optional parent and one distribution per parent category.
    Table(Option<usize>, Vec<Vec<f64>>),
}

/// Sampled conditional structure of one subpopulation.
#[derive(Debug, Clone, PartialEq)]
struct Compiled {
    order: Vec<usize>,
    rules: Vec<Rule>,
}

/// Category label `k` of every question.
pub fn category_label(k: usize) -> String {
    format!("c{k}")
}

impl PopulationSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let spec: PopulationSpec = toml::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.questions
            .iter()
            .position(|q| q.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSchema(m));
        if self.questions.is_empty() || self.subpopulations.is_empty() {
            return bad("a population needs questions and subpopulations".into());
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return bad("concentration must be positive".into());
        }
        for (i, q) in self.questions.iter().enumerate() {
            if q.categories < 2 {
                return bad(format!("question `{}` needs at least two categories", q.name));
            }
            if self.questions[..i].iter().any(|p| p.name == q.name) {
                return bad(format!("duplicate question `{}`", q.name));
            }
        }
        let total: f64 = self.subpopulations.iter().map(|s| s.weight).sum();
        if self.subpopulations.iter().any(|s| !(s.weight >= 0.0) || !s.weight.is_finite()) || !(total > 0.0) {
            return bad("subpopulation weights must be nonnegative with a positive sum".into());
        }
        for s in &self.subpopulations {
            if let Some(c) = s.concentration {
                if !(c > 0.0 && c.is_finite()) {
                    return bad("concentration must be positive".into());
                }
            }
            for (child, parent) in &s.parents {
                self.index_of(child)?;
                self.index_of(parent)?;
                if child == parent {
                    return Err(Error::Cycle(format!("`{child}` is its own parent")));
                }
            }
            for (name, &k) in &s.fixed {
                let q = self.index_of(name)?;
                if k >= self.questions[q].categories {
                    return bad(format!("fixed answer {k} out of range for `{name}`"));
                }
            }
            for name in &s.copy {
                self.index_of(name)?;
                if !s.parents.contains_key(name) {
                    return bad(format!("copied question `{name}` has no parent"));
                }
            }
            self.topological_order(s)?;
        }
        Ok(())
    }

    /// Parents before children; `Error::Cycle` names a question on a cycle.
    fn topological_order(&self, s: &Subpopulation) -> Result<Vec<usize>> {
        let n = self.questions.len();
        let mut parent = vec![None; n];
        for (child, p) in &s.parents {
            parent[self.index_of(child)?] = Some(self.index_of(p)?);
        }
        // 0 unvisited, 1 on the current path, 2 done
        let mut state = vec![0u8; n];
        let mut order = Vec::with_capacity(n);
        for start in 0..n {
            let mut path = Vec::new();
            let mut q = start;
            loop {
                match state[q] {
                    2 => break,
                    1 => return Err(Error::Cycle(format!("question `{}` is its own ancestor", self.questions[q].name))),
                    _ => {}
                }
                state[q] = 1;
                path.push(q);
                match parent[q] {
                    Some(p) => q = p,
                    None => break,
                }
            }
            for &q in path.iter().rev() {
                state[q] = 2;
                order.push(q);
            }
        }
        Ok(order)
    }

    fn compile(&self, rng: &mut impl Rng) -> Result<Vec<Compiled>> {
        self.subpopulations
            .iter()
            .map(|s| {
                let alpha = s.concentration.unwrap_or(self.concentration);
                let gamma = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidParameter(e.to_string()))?;
                let order = self.topological_order(s)?;
                let mut rules = Vec::with_capacity(self.questions.len());
                for (qi, q) in self.questions.iter().enumerate() {
                    let parent = s.parents.get(&q.name).map(|p| self.index_of(p)).transpose()?;
                    let rule = if let Some(&k) = s.fixed.get(&q.name) {
                        Rule::Fixed(k)
                    } else if s.copy.contains(&q.name) {
                        Rule::Copy(parent.expect("validated"))
                    } else {
                        let rows = parent.map_or(1, |p| self.questions[p].categories);
                        let tables = (0..rows)
                            .map(|_| {
                                let g: Vec<f64> = (0..q.categories).map(|_| gamma.sample(rng).max(1e-300)).collect();
                                let sum: f64 = g.iter().sum();
                                g.into_iter().map(|x| x / sum).collect()
                            })
                            .collect();
                        Rule::Table(parent, tables)
                    };
                    debug_assert_eq!(rules.len(), qi);
                    rules.push(rule);
                }
                Ok(Compiled { order, rules })
            })
            .collect()
    }

    pub fn schema(&self) -> Result<CategoricalSchema> {
        CategoricalSchema::new(
            self.questions
                .iter()
                .map(|q| {
                    let labels: Vec<String> = (0..q.categories).map(category_label).collect();
                    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
                    QuestionSpec::categorical(q.name.clone(), &refs)
                })
                .collect(),
        )
    }
}

fn draw(rng: &mut impl Rng, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return k;
        }
    }
    p.len() - 1
}

/// A generated population and its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Testbed {
    pub schema: CategoricalSchema,
    /// `rows x questions` category indices.
    pub codes: Vec<u32>,
    /// Subpopulation of every row.
    pub labels: Vec<usize>,
    spec: PopulationSpec,
    compiled: Vec<Compiled>,
}

pub fn generate(spec: &PopulationSpec, seed: u64) -> Result<Testbed> {
    spec.validate()?;
    let mut rng = keyed(seed, Domain::Testbed);
    let compiled = spec.compile(&mut rng)?;
    let total: f64 = spec.subpopulations.iter().map(|s| s.weight).sum();
    let weights: Vec<f64> = spec.subpopulations.iter().map(|s| s.weight / total).collect();
    let q = spec.questions.len();
    let mut codes = vec![0u32; spec.rows * q];
    let mut labels = Vec::with_capacity(spec.rows);
    for row in codes.chunks_exact_mut(q) {
        let sub = draw(&mut rng, &weights);
        labels.push(sub);
        let c = &compiled[sub];
        for &qi in &c.order {
            row[qi] = match &c.rules[qi] {
                Rule::Fixed(k) => *k as u32,
                Rule::Copy(p) => row[*p] % spec.questions[qi].categories as u32,
                Rule::Table(None, t) => draw(&mut rng, &t[0]) as u32,
                Rule::Table(Some(p), t) => draw(&mut rng, &t[row[*p] as usize]) as u32,
            };
        }
    }
    Ok(Testbed {
        schema: spec.schema()?,
        codes,
        labels,
        spec: spec.clone(),
        compiled,
    })
}

impl Testbed {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn matrix(&self) -> Result<ResponseMatrix> {
        ResponseMatrix::from_codes(self.schema.layout().clone(), &self.codes)
    }

    /// Raw table with `c<k>` labels, ready for schema inference.
    pub fn table(&self) -> RawTable {
        let q = self.spec.questions.len();
        RawTable {
            headers: self.spec.questions.iter().map(|x| x.name.clone()).collect(),
            rows: self
                .codes
                .chunks_exact(q)
                .map(|r| r.iter().map(|&k| category_label(k as usize)).collect())
                .collect(),
        }
    }

    /// `row,subpopulation`.
    pub fn labels_to_delimited(&self) -> String {
        let mut s = String::from("row,subpopulation\n");
        for (r, l) in self.labels.iter().enumerate() {
            let _ = writeln!(s, "{r},{l}");
        }
        s
    }

    /// Every subpopulation's weight and conditional tables:
    /// `subpopulation,weight,question,parent,parent_category,category,probability`.
    pub fn ground_truth(&self) -> String {
        let total: f64 = self.spec.subpopulations.iter().map(|s| s.weight).sum();
        let mut s = String::from("subpopulation,weight,question,parent,parent_category,category,probability\n");
        for (si, c) in self.compiled.iter().enumerate() {
            let w = self.spec.subpopulations[si].weight / total;
            for (qi, rule) in c.rules.iter().enumerate() {
                let name = &self.spec.questions[qi].name;
                let n_cat = self.spec.questions[qi].categories;
                match rule {
                    Rule::Fixed(k) => {
                        for cat in 0..n_cat {
                            let p = if cat == *k { 1.0 } else { 0.0 };
                            let _ = writeln!(s, "{si},{w},{name},,,{},{p}", category_label(cat));
                        }
                    }
                    Rule::Copy(p) => {
                        let parent = &self.spec.questions[*p];
                        for pc in 0..parent.categories {
                            for cat in 0..n_cat {
                                let prob = if pc % n_cat == cat { 1.0 } else { 0.0 };
                                let _ = writeln!(
                                    s,
                                    "{si},{w},{name},{},{},{},{prob}",
                                    parent.name,
                                    category_label(pc),
                                    category_label(cat)
                                );
                            }
                        }
                    }
                    Rule::Table(parent, tables) => {
                        for (pc, t) in tables.iter().enumerate() {
                            let (pname, plabel) = match parent {
                                Some(p) => (self.spec.questions[*p].name.as_str(), category_label(pc)),
                                None => ("", String::new()),
                            };
                            for (cat, prob) in t.iter().enumerate() {
                                let _ = writeln!(s, "{si},{w},{name},{pname},{plabel},{},{prob}", category_label(cat));
                            }
                        }
                    }
                }
            }
        }
        s
    }
}
