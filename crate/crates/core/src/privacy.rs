//! Empirical privacy measures: how many true rows look like a given one, how
//! much randomness went into each synthetic row, and whether a synthetic row
//! points back to the true row it was generated from.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rayon::prelude::*;

use crate::dataset::ResponseMatrix;
use crate::error::{Error, Result};
use crate::rng::{keyed, Domain};
use crate::synthesis::SynthesisResult;

/// Default number of synthetic rows audited by [`privacy_report`].
pub const DEFAULT_SAMPLE: usize = 10_000;

/// For each row, how many rows of `m` (itself included) are bitwise equal.
pub fn true_multiplicity(m: &ResponseMatrix) -> Vec<u64> {
    let mut counts: HashMap<&[u8], u64> = HashMap::with_capacity(m.n_rows());
    for row in m.rows() {
        *counts.entry(row).or_default() += 1;
    }
    m.rows().map(|row| counts[row]).collect()
}

/// `multiplicity * 2^bits`, elementwise.
pub fn effective_multiplicity(multiplicity: &[u64], entropy_bits: &[f64]) -> Vec<f64> {
    multiplicity
        .iter()
        .zip(entropy_bits)
        .map(|(&m, &b)| m as f64 * b.exp2())
        .collect()
}

/// Number of questions on which two code rows differ.
pub fn hamming(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// For each listed synthetic row, the number of true rows at question-level
/// Hamming distance no larger than that of its causal partner (the partner
/// included, so the minimum is 1).
pub fn hamming_causal_rank(true_m: &ResponseMatrix, synth: &SynthesisResult, sample: &[usize]) -> Result<Vec<u64>> {
    true_m.layout().ensure_same(synth.layout(), "true vs synthetic rows")?;
    let q = true_m.layout().n_questions();
    let true_codes = true_m.codes();
    let synth_codes = synth.rows.codes();
    for &s in sample {
        if s >= synth.n_rows() {
            return Err(Error::shape(format!("sampled row {s} of {} synthetic rows", synth.n_rows())));
        }
        if synth.source_rows[s] >= true_m.n_rows() {
            return Err(Error::shape(format!(
                "synthetic row {s} refers to true row {} of {}",
                synth.source_rows[s],
                true_m.n_rows()
            )));
        }
    }
    Ok(sample
        .par_iter()
        .map(|&s| {
            let srow = &synth_codes[s * q..(s + 1) * q];
            let t = synth.source_rows[s];
            let h_causal = hamming(srow, &true_codes[t * q..(t + 1) * q]);
            true_codes.chunks_exact(q).filter(|x| hamming(srow, x) <= h_causal).count() as u64
        })
        .collect())
}

/// Sorted row indices: all rows when `size >= n`, else a seeded sample
/// without replacement.
pub fn sample_rows(n: usize, size: usize, seed: u64) -> Vec<usize> {
    if size >= n {
        return (0..n).collect();
    }
    let mut rng = keyed(seed, Domain::PrivacySample);
    let mut v = index::sample(&mut rng, n, size).into_vec();
    v.sort_unstable();
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyRow {
    /// Synthetic row index.
    pub row: usize,
    /// True row it was generated from.
    pub source: usize,
    pub entropy_bits: f64,
    /// Multiplicity of the causal true row.
    pub multiplicity: u64,
    pub effective_multiplicity: f64,
    pub causal_rank: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrivacyReport {
    pub rows: Vec<PrivacyRow>,
}

pub fn privacy_report(true_m: &ResponseMatrix, synth: &SynthesisResult, sample_size: usize, seed: u64) -> Result<PrivacyReport> {
    let sample = sample_rows(synth.n_rows(), sample_size, seed);
    let ranks = hamming_causal_rank(true_m, synth, &sample)?;
    let mult = true_multiplicity(true_m);
    let rows = sample
        .iter()
        .zip(ranks)
        .map(|(&s, rank)| {
            let source = synth.source_rows[s];
            let bits = synth.entropy_bits[s];
            PrivacyRow {
                row: s,
                source,
                entropy_bits: bits,
                multiplicity: mult[source],
                effective_multiplicity: mult[source] as f64 * bits.exp2(),
                causal_rank: rank,
            }
        })
        .collect();
    Ok(PrivacyReport { rows })
}

impl PrivacyReport {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Fraction of audited rows whose causal rank is at most `k`.
    pub fn rank_fraction(&self, k: u64) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.causal_rank <= k).count() as f64 / self.rows.len() as f64
    }

    /// `row,entropy_bits,multiplicity,effective_multiplicity,causal_rank`.
    pub fn to_delimited(&self) -> String {
        let mut s = String::from("row,entropy_bits,multiplicity,effective_multiplicity,causal_rank\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.row, r.entropy_bits, r.multiplicity, r.effective_multiplicity, r.causal_rank
            );
        }
        s
    }

    /// `bits_lo,bits_hi,count` over 1-bit bins.
    pub fn entropy_histogram(&self) -> String {
        let bins = self.rows.iter().map(|r| r.entropy_bits.floor() as usize + 1).max().unwrap_or(0);
        let mut counts = vec![0u64; bins];
        for r in &self.rows {
            counts[r.entropy_bits.floor() as usize] += 1;
        }
        let mut s = String::from("bits_lo,bits_hi,count\n");
        for (b, c) in counts.iter().enumerate() {
            let _ = writeln!(s, "{b},{},{c}", b + 1);
        }
        s
    }

    /// `entropy_bits,multiplicity` per audited row.
    pub fn multiplicity_scatter(&self) -> String {
        let mut s = String::from("entropy_bits,multiplicity\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{}", r.entropy_bits, r.multiplicity);
        }
        s
    }

    /// `log10_lo,log10_hi,count` over quarter-decade bins.
    pub fn effective_multiplicity_histogram(&self) -> String {
        let bin = |v: f64| (v.log10() * 4.0).floor().max(0.0) as usize;
        let bins = self.rows.iter().map(|r| bin(r.effective_multiplicity) + 1).max().unwrap_or(0);
        let mut counts = vec![0u64; bins];
        for r in &self.rows {
            counts[bin(r.effective_multiplicity)] += 1;
        }
        let mut s = String::from("log10_lo,log10_hi,count\n");
        for (b, c) in counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{c}", b as f64 / 4.0, (b + 1) as f64 / 4.0);
        }
        s
    }

    /// `rank,fraction`: share of audited rows with causal rank at most `rank`,
    /// at every distinct rank.
    pub fn causal_rank_cdf(&self) -> String {
        let mut ranks: Vec<u64> = self.rows.iter().map(|r| r.causal_rank).collect();
        ranks.sort_unstable();
        let n = ranks.len() as f64;
        let mut s = String::from("rank,fraction\n");
        for (i, &r) in ranks.iter().enumerate() {
            if ranks.get(i + 1) != Some(&r) {
                let _ = writeln!(s, "{r},{}", (i + 1) as f64 / n);
            }
        }
        s
    }

    pub fn export_plot_data(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let files = [
            ("entropy_histogram.csv", self.entropy_histogram()),
            ("multiplicity_scatter.csv", self.multiplicity_scatter()),
            ("effective_multiplicity_histogram.csv", self.effective_multiplicity_histogram()),
            ("causal_rank_cdf.csv", self.causal_rank_cdf()),
        ];
        let mut paths = Vec::with_capacity(files.len());
        for (name, text) in files {
            let p = dir.join(name);
            fs::write(&p, text)?;
            paths.push(p);
        }
        Ok(paths)
    }
}
