//! Crosstab accuracy: per-cell z-value, log deviation and blended figure of
//! merit, their aggregates, and plot-ready exports.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Crosstab;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricConfig {
    /// Pseudocount `c` of the log deviation.
    pub pseudocount: f64,
    pub d0: f64,
    pub z0: f64,
    pub variance_floor: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            pseudocount: 0.5,
            d0: 0.1,
            z0: 1.0,
            variance_floor: 1e-5,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("pseudocount", self.pseudocount),
            ("d0", self.d0),
            ("z0", self.z0),
            ("variance_floor", self.variance_floor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Pooled two-proportion z statistic of `n1` out of `big_n1` against `n2`
/// out of `big_n2`. The variance is floored at `variance_floor`.
pub fn zvalue_cell(n1: f64, big_n1: f64, n2: f64, big_n2: f64, variance_floor: f64) -> f64 {
    let p1 = n1 / big_n1;
    let p2 = n2 / big_n2;
    let pooled = (n1 + n2) / (big_n1 + big_n2);
    let var = pooled * (1.0 - pooled) * (1.0 / big_n1 + 1.0 / big_n2);
    (p1 - p2) / var.max(variance_floor).sqrt()
}

/// `|ln((c_syn + c) / (c_true + c))|`.
pub fn logdev_cell(c_syn: f64, c_true: f64, c: f64) -> f64 {
    ((c_syn + c) / (c_true + c)).ln().abs()
}

/// `2 / (d0/|d| + z0/|z|)`, zero when either deviation is zero.
pub fn blended_fm(d: f64, z: f64, d0: f64, z0: f64) -> f64 {
    let (d, z) = (d.abs(), z.abs());
    if d == 0.0 || z == 0.0 {
        return 0.0;
    }
    2.0 / (d0 / d + z0 / z)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellMetric {
    pub i: usize,
    pub j: usize,
    pub true_count: u64,
    pub synth_count: u64,
    /// Positive when the synthetic proportion is larger.
    pub z: f64,
    pub d: f64,
    pub fm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateAccuracy {
    pub median: f64,
    pub mean_abs: f64,
    pub rms: f64,
    pub cells: usize,
}

impl AggregateAccuracy {
    /// Median (midpoint of the middle pair for even counts), mean of absolute
    /// values and root mean square.
    pub fn from_values(values: &[f64]) -> Self {
        let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
        abs.sort_by(f64::total_cmp);
        let k = abs.len();
        let median = match k {
            0 => 0.0,
            _ if k % 2 == 1 => abs[k / 2],
            _ => 0.5 * (abs[k / 2 - 1] + abs[k / 2]),
        };
        let denom = k.max(1) as f64;
        AggregateAccuracy {
            median,
            mean_abs: abs.iter().sum::<f64>() / denom,
            rms: (abs.iter().map(|v| v * v).sum::<f64>() / denom).sqrt(),
            cells: k,
        }
    }
}

/// Every upper-triangle cell of a true/synthetic crosstab pair.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub n_true: u64,
    pub n_synth: u64,
    pub config: MetricConfig,
    pub n_cols: usize,
    /// Row-major over `i <= j`.
    pub cells: Vec<CellMetric>,
    /// Aggregates of `d`.
    pub accuracy: AggregateAccuracy,
    /// Aggregates of `z`.
    pub z_summary: AggregateAccuracy,
}

pub fn evaluate(true_ct: &Crosstab, synth_ct: &Crosstab, config: MetricConfig) -> Result<MetricsReport> {
    config.validate()?;
    true_ct.layout().ensure_same(synth_ct.layout(), "true vs synthetic crosstab")?;
    if true_ct.n_rows() == 0 || synth_ct.n_rows() == 0 {
        return Err(Error::EmptyData);
    }
    let n = true_ct.n_cols();
    let nt = true_ct.n_rows() as f64;
    let ns = synth_ct.n_rows() as f64;
    let mut cells = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i..n {
            let t = true_ct.get(i, j);
            let s = synth_ct.get(i, j);
            let z = zvalue_cell(s as f64, ns, t as f64, nt, config.variance_floor);
            let d = logdev_cell(s as f64, t as f64, config.pseudocount);
            cells.push(CellMetric {
                i,
                j,
                true_count: t,
                synth_count: s,
                z,
                d,
                fm: blended_fm(d, z, config.d0, config.z0),
            });
        }
    }
    let ds: Vec<f64> = cells.iter().map(|c| c.d).collect();
    let zs: Vec<f64> = cells.iter().map(|c| c.z).collect();
    Ok(MetricsReport {
        n_true: true_ct.n_rows(),
        n_synth: synth_ct.n_rows(),
        config,
        n_cols: n,
        cells,
        accuracy: AggregateAccuracy::from_values(&ds),
        z_summary: AggregateAccuracy::from_values(&zs),
    })
}

/// Width of the figure-of-merit histogram bins.
const FM_BIN_WIDTH: f64 = 0.1;

impl MetricsReport {
    pub fn cell(&self, i: usize, j: usize) -> &CellMetric {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let n = self.n_cols;
        // cells before row i: i*n - i*(i-1)/2
        &self.cells[i * n - i * i.saturating_sub(1) / 2 + (j - i)]
    }

    /// Header lines, one line per cell, then a keyed summary block.
    pub fn to_delimited(&self) -> String {
        let c = &self.config;
        let mut s = String::new();
        let _ = writeln!(s, "# N_true={}", self.n_true);
        let _ = writeln!(s, "# N_synth={}", self.n_synth);
        let _ = writeln!(s, "# c={}", c.pseudocount);
        let _ = writeln!(s, "# d0={}", c.d0);
        let _ = writeln!(s, "# z0={}", c.z0);
        let _ = writeln!(s, "# variance_floor={}", c.variance_floor);
        s.push_str("i,j,true,synth,z,d,fm\n");
        for m in &self.cells {
            let _ = writeln!(s, "{},{},{},{},{},{},{}", m.i, m.j, m.true_count, m.synth_count, m.z, m.d, m.fm);
        }
        let a = &self.accuracy;
        s.push_str("[summary]\n");
        let _ = writeln!(s, "cells={}", a.cells);
        let _ = writeln!(s, "d_median={}", a.median);
        let _ = writeln!(s, "d_mean_abs={}", a.mean_abs);
        let _ = writeln!(s, "d_rms={}", a.rms);
        let _ = writeln!(s, "z_median_abs={}", self.z_summary.median);
        let _ = writeln!(s, "z_mean_abs={}", self.z_summary.mean_abs);
        let _ = writeln!(s, "z_rms={}", self.z_summary.rms);
        s
    }

    /// `i,j,true,synth` with zero counts replaced by 1.
    pub fn counts_scatter(&self) -> String {
        let mut s = String::from("i,j,true,synth\n");
        for m in &self.cells {
            let _ = writeln!(s, "{},{},{},{}", m.i, m.j, m.true_count.max(1), m.synth_count.max(1));
        }
        s
    }

    /// `i,j,abs_d,abs_z,decile`; deciles rank cells by true count, tied
    /// counts share the decile of their lowest rank.
    pub fn deviation_scatter(&self) -> String {
        let deciles = self.true_count_deciles();
        let mut s = String::from("i,j,abs_d,abs_z,decile\n");
        for (m, dec) in self.cells.iter().zip(deciles) {
            let _ = writeln!(s, "{},{},{},{},{dec}", m.i, m.j, m.d.abs(), m.z.abs());
        }
        s
    }

    fn true_count_deciles(&self) -> Vec<usize> {
        let k = self.cells.len();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by_key(|&c| self.cells[c].true_count);
        let mut deciles = vec![0; k];
        let mut first_rank = 0;
        for (rank, &c) in order.iter().enumerate() {
            if rank > 0 && self.cells[c].true_count != self.cells[order[rank - 1]].true_count {
                first_rank = rank;
            }
            deciles[c] = 10 * first_rank / k;
        }
        deciles
    }

    /// `bin_lo,bin_hi,count` over fixed-width bins starting at 0.
    pub fn fm_histogram(&self) -> String {
        let max = self.cells.iter().map(|m| m.fm).fold(0.0, f64::max);
        let bins = ((max / FM_BIN_WIDTH).floor() as usize) + 1;
        let mut counts = vec![0u64; bins];
        for m in &self.cells {
            counts[((m.fm / FM_BIN_WIDTH).floor() as usize).min(bins - 1)] += 1;
        }
        let mut s = String::from("bin_lo,bin_hi,count\n");
        for (b, c) in counts.iter().enumerate() {
            let _ = writeln!(s, "{},{},{c}", b as f64 * FM_BIN_WIDTH, (b + 1) as f64 * FM_BIN_WIDTH);
        }
        s
    }

    /// Full symmetric `n x n` grid of figures of merit, one text row per
    /// matrix row.
    pub fn fm_heatmap(&self) -> String {
        let n = self.n_cols;
        let mut grid = vec![0.0; n * n];
        for m in &self.cells {
            grid[m.i * n + m.j] = m.fm;
            grid[m.j * n + m.i] = m.fm;
        }
        let mut s = String::new();
        for row in grid.chunks_exact(n.max(1)) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(","));
            s.push('\n');
        }
        s
    }

    /// Writes the four plot files into `dir` and returns their paths.
    pub fn export_plot_data(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        let files = [
            ("counts_scatter.csv", self.counts_scatter()),
            ("deviation_scatter.csv", self.deviation_scatter()),
            ("fm_histogram.csv", self.fm_histogram()),
            ("fm_heatmap.csv", self.fm_heatmap()),
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
