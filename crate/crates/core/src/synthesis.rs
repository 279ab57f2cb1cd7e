//! Sampling synthetic rows from predicted probabilities, and the
//! post-processes applied to them.
//!
//! Every draw is addressed by `(instance, row, question)` on a seeded stream,
//! so generating a second instance never changes the first, and removing rows
//! never changes the draws of the rows that remain.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{crosstab, Crosstab, ResponseMatrix};
use crate::error::{Error, Result};
use crate::layout::BlockLayout;
use crate::metrics::logdev_cell;
use crate::model::{MultiBladeModel, ProbabilityMatrix};
use crate::rng::{CellStream, Domain};

const ROW_CHUNK: usize = 1024;
const ENTROPY_EPS: f64 = 1e-10;

/// A row dropped by structural-zero removal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RemovedRow {
    pub source: usize,
    pub entropy_bits: f64,
    pub instance: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub rows: ResponseMatrix,
    /// Total entropy of each row's draws, in bits.
    pub entropy_bits: Vec<f64>,
    /// `N x Q` per-question entropies; they sum to `entropy_bits`. Empty for
    /// results reloaded from a sidecar, which stores row totals only.
    pub block_entropy: Vec<f64>,
    /// Index of the true row each synthetic row was generated from.
    pub source_rows: Vec<usize>,
    /// Instance that produced each row.
    pub instances: Vec<u32>,
    pub removed: Vec<RemovedRow>,
}

impl SynthesisResult {
    pub fn n_rows(&self) -> usize {
        self.rows.n_rows()
    }

    pub fn layout(&self) -> &BlockLayout {
        self.rows.layout()
    }

    pub fn block_entropy_row(&self, r: usize) -> &[f64] {
        let q = self.layout().n_questions();
        &self.block_entropy[r * q..(r + 1) * q]
    }

    pub fn has_block_entropy(&self) -> bool {
        self.block_entropy.len() == self.n_rows() * self.layout().n_questions()
    }

    fn require_block_entropy(&self) -> Result<()> {
        if self.has_block_entropy() {
            Ok(())
        } else {
            Err(Error::Format("per-question entropies are not available for this synthetic result".into()))
        }
    }

    /// Rebuilds a result from a synthetic matrix and its sidecar. Sidecar
    /// lines not flagged as removed must align, in order, with `rows`.
    pub fn from_sidecar(rows: ResponseMatrix, sidecar: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(sidecar.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != ["row", "entropy_bits", "removed", "instance"] {
            return Err(Error::Format(format!("unexpected sidecar header {header:?}")));
        }
        let mut out = SynthesisResult {
            entropy_bits: Vec::with_capacity(rows.n_rows()),
            block_entropy: Vec::new(),
            source_rows: Vec::with_capacity(rows.n_rows()),
            instances: Vec::with_capacity(rows.n_rows()),
            removed: Vec::new(),
            rows,
        };
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let field = |k: usize| -> Result<&str> {
                rec.get(k).ok_or_else(|| Error::Format(format!("sidecar line {}: missing field {k}", line + 2)))
            };
            let bad = |e: &dyn std::fmt::Display| Error::Format(format!("sidecar line {}: {e}", line + 2));
            let source: usize = field(0)?.parse().map_err(|e| bad(&e))?;
            let entropy_bits: f64 = field(1)?.parse().map_err(|e| bad(&e))?;
            let instance: u32 = field(3)?.parse().map_err(|e| bad(&e))?;
            match field(2)? {
                "0" => {
                    out.source_rows.push(source);
                    out.entropy_bits.push(entropy_bits);
                    out.instances.push(instance);
                }
                "1" => out.removed.push(RemovedRow {
                    source,
                    entropy_bits,
                    instance,
                }),
                other => return Err(bad(&format!("removed flag `{other}`"))),
            }
        }
        if out.source_rows.len() != out.rows.n_rows() {
            return Err(Error::shape(format!(
                "sidecar lists {} kept rows for a {}-row synthetic matrix",
                out.source_rows.len(),
                out.rows.n_rows()
            )));
        }
        Ok(out)
    }

    fn select(&self, keep: &[usize]) -> Self {
        let q = self.layout().n_questions();
        SynthesisResult {
            rows: self.rows.select_rows(keep),
            entropy_bits: keep.iter().map(|&r| self.entropy_bits[r]).collect(),
            block_entropy: if self.has_block_entropy() {
                keep.iter()
                    .flat_map(|&r| self.block_entropy[r * q..(r + 1) * q].iter().copied())
                    .collect()
            } else {
                Vec::new()
            },
            source_rows: keep.iter().map(|&r| self.source_rows[r]).collect(),
            instances: keep.iter().map(|&r| self.instances[r]).collect(),
            removed: self.removed.clone(),
        }
    }

    /// `row,entropy_bits,removed,instance`, one line per source row in
    /// source order, including removed rows.
    pub fn sidecar(&self) -> String {
        let mut lines: Vec<(usize, f64, u8, u32)> = (0..self.n_rows())
            .map(|r| (self.source_rows[r], self.entropy_bits[r], 0, self.instances[r]))
            .chain(self.removed.iter().map(|x| (x.source, x.entropy_bits, 1, x.instance)))
            .collect();
        lines.sort_by_key(|l| l.0);
        let mut s = String::from("row,entropy_bits,removed,instance\n");
        for (row, e, removed, inst) in lines {
            let _ = writeln!(s, "{row},{e},{removed},{inst}");
        }
        s
    }

    pub fn save_sidecar(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.sidecar())?;
        Ok(())
    }
}

/// Entropy in bits of one normalized block, with the additive stabilizer,
/// clamped to `[0, log2(len)]`.
pub fn block_entropy_bits(q: &[f64]) -> f64 {
    let h: f64 = -q.iter().map(|&p| (p + ENTROPY_EPS) * (p + ENTROPY_EPS).ln()).sum::<f64>() / std::f64::consts::LN_2;
    h.clamp(0.0, (q.len() as f64).log2())
}

/// Normalizes every question block of every row, draws one category per
/// block and records the draw entropies. `instance` selects an independent
/// family of draws.
pub fn instantiate(probs: &ProbabilityMatrix, layout: &BlockLayout, seed: u64, instance: u32) -> Result<SynthesisResult> {
    let n = layout.n_cols();
    if probs.n_cols() != n {
        return Err(Error::shape(format!("{} probability columns for {n} encoded columns", probs.n_cols())));
    }
    let n_rows = probs.n_rows();
    let n_q = layout.n_questions();
    let mut cells = vec![0u8; n_rows * n];
    let mut block_entropy = vec![0.0; n_rows * n_q];
    let base = CellStream::new(seed, Domain::Instantiate);
    cells
        .par_chunks_mut(ROW_CHUNK * n)
        .zip(block_entropy.par_chunks_mut(ROW_CHUNK * n_q))
        .enumerate()
        .for_each(|(c, (cell_chunk, ent_chunk))| {
            let mut stream = base.clone();
            let mut q = Vec::new();
            for (k, (row, ent)) in cell_chunk.chunks_exact_mut(n).zip(ent_chunk.chunks_exact_mut(n_q)).enumerate() {
                let r = c * ROW_CHUNK + k;
                let p = probs.row(r);
                for (qi, block) in layout.blocks().enumerate() {
                    q.clear();
                    q.extend_from_slice(&p[block.clone()]);
                    let sum: f64 = q.iter().sum();
                    if sum > 0.0 && sum.is_finite() {
                        q.iter_mut().for_each(|x| *x /= sum);
                    } else {
                        let u = 1.0 / q.len() as f64;
                        q.fill(u);
                    }
                    ent[qi] = block_entropy_bits(&q);
                    let u = stream.uniform(u64::from(instance), (r * n_q + qi) as u64);
                    row[block.start + pick(&q, u)] = 1;
                }
            }
        });
    let entropy_bits = block_entropy.chunks_exact(n_q).map(|b| b.iter().sum()).collect();
    Ok(SynthesisResult {
        rows: ResponseMatrix::from_cells(layout.clone(), cells)?,
        entropy_bits,
        block_entropy,
        source_rows: (0..n_rows).collect(),
        instances: vec![instance; n_rows],
        removed: Vec::new(),
    })
}

/// Inverse-CDF draw; rounding slack falls on the last positive category.
fn pick(q: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, &p) in q.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    q.iter().rposition(|&p| p > 0.0).unwrap_or(q.len() - 1)
}

/// Per (row, question), keeps the true answer with probability `p` and the
/// synthetic draw otherwise. Kept true answers contribute no entropy.
pub fn randomized_response(
    true_rows: &ResponseMatrix,
    synth: &SynthesisResult,
    p: f64,
    seed: u64,
) -> Result<SynthesisResult> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!("pass-through probability {p} is outside [0, 1]")));
    }
    true_rows.layout().ensure_same(synth.layout(), "true vs synthetic rows")?;
    synth.require_block_entropy()?;
    if let Some(&bad) = synth.source_rows.iter().find(|&&s| s >= true_rows.n_rows()) {
        return Err(Error::shape(format!("synthetic row refers to true row {bad} of {}", true_rows.n_rows())));
    }
    let layout = synth.layout();
    let n = layout.n_cols();
    let n_q = layout.n_questions();
    let mut out = synth.clone();
    let mut stream = CellStream::new(seed, Domain::RandomizedResponse);
    let mut cells = synth.rows.cells().to_vec();
    for r in 0..synth.n_rows() {
        let src = synth.source_rows[r];
        let truth = true_rows.row(src);
        let row = &mut cells[r * n..(r + 1) * n];
        for (qi, block) in layout.blocks().enumerate() {
            if stream.uniform(0, (src * n_q + qi) as u64) < p {
                row[block.clone()].copy_from_slice(&truth[block.clone()]);
                out.block_entropy[r * n_q + qi] = 0.0;
            }
        }
        out.entropy_bits[r] = out.block_entropy[r * n_q..(r + 1) * n_q].iter().sum();
    }
    out.rows = ResponseMatrix::from_cells(layout.clone(), cells)?;
    Ok(out)
}

/// True if the row sets some pair of columns whose true count is zero.
fn hits_zero_cell(true_ct: &Crosstab, active: &[u32]) -> bool {
    active
        .iter()
        .enumerate()
        .any(|(a, &i)| active[a + 1..].iter().any(|&j| true_ct.get(i as usize, j as usize) == 0))
}

/// Drops every synthetic row that would add a count to a cell whose true
/// count is zero. Returns the survivors and the positions (in `synth`) of the
/// removed rows.
pub fn remove_structural_zero_rows(true_ct: &Crosstab, synth: &SynthesisResult) -> Result<(SynthesisResult, Vec<usize>)> {
    true_ct.layout().ensure_same(synth.layout(), "true crosstab vs synthetic rows")?;
    let mut keep = Vec::with_capacity(synth.n_rows());
    let mut removed = Vec::new();
    let mut active = Vec::new();
    for r in 0..synth.n_rows() {
        synth.rows.row_active(r, &mut active);
        if hits_zero_cell(true_ct, &active) {
            removed.push(r);
        } else {
            keep.push(r);
        }
    }
    let mut out = synth.select(&keep);
    out.removed.extend(removed.iter().map(|&r| RemovedRow {
        source: synth.source_rows[r],
        entropy_bits: synth.entropy_bits[r],
        instance: synth.instances[r],
    }));
    Ok((out, removed))
}

/// Cell weight of the two-instance rowwise loss, from `inst1`'s crosstab
/// against the true one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellWeight {
    /// `|ln((s + c) / (t + c))|`.
    Abs,
    /// `ln((s + c) / (t + c))`: over-counted cells push a row toward its
    /// second instance, under-counted cells hold it back.
    #[default]
    Signed,
    /// `max(0, ln((s + c) / (t + c)))`.
    Excess,
}

impl CellWeight {
    pub fn weight(self, synth: f64, truth: f64, pseudocount: f64) -> f64 {
        let d = ((synth + pseudocount) / (truth + pseudocount)).ln();
        match self {
            CellWeight::Abs => logdev_cell(synth, truth, pseudocount),
            CellWeight::Signed => d,
            CellWeight::Excess => d.max(0.0),
        }
    }
}

/// Sum over each row's cross-question column pairs of the pair's cell
/// weight.
pub fn rowwise_losses(true_ct: &Crosstab, inst1: &SynthesisResult, pseudocount: f64, kind: CellWeight) -> Result<Vec<f64>> {
    true_ct.layout().ensure_same(inst1.layout(), "true crosstab vs synthetic rows")?;
    let synth_ct = crosstab(&inst1.rows);
    let n = true_ct.n_cols();
    let weight: Vec<f64> = (0..n * n)
        .map(|k| kind.weight(synth_ct.counts()[k] as f64, true_ct.counts()[k] as f64, pseudocount))
        .collect();
    let mut active = Vec::new();
    Ok((0..inst1.n_rows())
        .map(|r| {
            inst1.rows.row_active(r, &mut active);
            let mut loss = 0.0;
            for (a, &i) in active.iter().enumerate() {
                for &j in &active[a + 1..] {
                    loss += weight[i as usize * n + j as usize];
                }
            }
            loss
        })
        .collect())
}

/// How the two-instance threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Threshold {
    Value(f64),
    /// Quantile of the rowwise losses, linear between order statistics.
    Quantile(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Quantile(0.9)
    }
}

/// Linear-interpolation quantile of `values` (`q` in `[0, 1]`).
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Emits `inst2`'s row wherever `inst1`'s rowwise loss exceeds `threshold`,
/// and `inst1`'s row otherwise.
pub fn two_instance_select(
    true_ct: &Crosstab,
    inst1: &SynthesisResult,
    inst2: &SynthesisResult,
    threshold: f64,
    pseudocount: f64,
    kind: CellWeight,
) -> Result<SynthesisResult> {
    inst1.layout().ensure_same(inst2.layout(), "first vs second instance")?;
    inst1.require_block_entropy()?;
    inst2.require_block_entropy()?;
    if inst1.source_rows != inst2.source_rows {
        return Err(Error::shape("instances are not row-aligned"));
    }
    let losses = rowwise_losses(true_ct, inst1, pseudocount, kind)?;
    Ok(select_by_loss(inst1, inst2, &losses, threshold))
}

fn select_by_loss(inst1: &SynthesisResult, inst2: &SynthesisResult, losses: &[f64], threshold: f64) -> SynthesisResult {
    let n = inst1.layout().n_cols();
    let n_q = inst1.layout().n_questions();
    let mut out = inst1.clone();
    let mut cells = inst1.rows.cells().to_vec();
    for (r, &loss) in losses.iter().enumerate() {
        if loss > threshold {
            cells[r * n..(r + 1) * n].copy_from_slice(inst2.rows.row(r));
            out.block_entropy[r * n_q..(r + 1) * n_q].copy_from_slice(inst2.block_entropy_row(r));
            out.entropy_bits[r] = inst2.entropy_bits[r];
            out.instances[r] = inst2.instances[r];
        }
    }
    out.rows = ResponseMatrix::from_cells(inst1.layout().clone(), cells).expect("rows copied from valid matrices");
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisConfig {
    pub seed: u64,
    /// 1 or 2.
    pub instances: u32,
    pub threshold: Threshold,
    /// Pass-through probability of randomized responses; `None` disables.
    pub rr_p: Option<f64>,
    pub fix_structural_zeros: bool,
    /// Pseudocount of the two-instance cell weights.
    pub pseudocount: f64,
    pub cell_weight: CellWeight,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            seed: 0,
            instances: 1,
            threshold: Threshold::default(),
            rr_p: None,
            fix_structural_zeros: false,
            pseudocount: 0.5,
            cell_weight: CellWeight::default(),
        }
    }
}

/// Full synthesis: predict, draw one or two instances, then optionally
/// apply randomized responses and structural-zero removal, in that order.
pub fn synthesize(model: &MultiBladeModel, true_rows: &ResponseMatrix, cfg: &SynthesisConfig) -> Result<SynthesisResult> {
    if true_rows.is_empty() {
        return Err(Error::EmptyData);
    }
    if !(1..=2).contains(&cfg.instances) {
        return Err(Error::InvalidParameter(format!("instances must be 1 or 2, got {}", cfg.instances)));
    }
    let probs = model.forward(true_rows)?;
    let layout = model.layout();
    let mut result = instantiate(&probs, layout, cfg.seed, 0)?;
    let true_ct = crosstab(true_rows);
    if cfg.instances == 2 {
        let second = instantiate(&probs, layout, cfg.seed, 1)?;
        let losses = rowwise_losses(&true_ct, &result, cfg.pseudocount, cfg.cell_weight)?;
        let t = match cfg.threshold {
            Threshold::Value(v) => v,
            Threshold::Quantile(q) => quantile(&losses, q),
        };
        result = select_by_loss(&result, &second, &losses, t);
    }
    if let Some(p) = cfg.rr_p {
        result = randomized_response(true_rows, &result, p, cfg.seed)?;
    }
    if cfg.fix_structural_zeros {
        result = remove_structural_zero_rows(&true_ct, &result)?.0;
    }
    Ok(result)
}

#[cfg(test)]
mod tests;
