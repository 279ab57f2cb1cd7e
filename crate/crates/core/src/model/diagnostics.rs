//! Blade specialization: which blade dominates each row, how sharply, and
//! what the rows of each blade answer.

use std::fmt::Write as _;

use super::{gating_forward, GateWeights, MultiBladeModel};
use crate::dataset::ResponseMatrix;
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct BladeDiagnostics {
    pub n_blades: usize,
    pub gates: GateWeights,
    /// Argmax of each row's blade weights; ties go to the lowest index.
    pub dominant: Vec<usize>,
    pub rows_per_blade: Vec<usize>,
    /// `B x n`: percent of a blade's dominant rows with each column set.
    /// Zero for blades that dominate no rows.
    pub category_percent: Vec<f64>,
    n_cols: usize,
}

pub fn blade_diagnostics(model: &MultiBladeModel, m: &ResponseMatrix) -> Result<BladeDiagnostics> {
    model.layout().ensure_same(m.layout(), "model vs data")?;
    let gates = gating_forward(model.gating(), m)?;
    let b = model.n_blades();
    let n = m.n_cols();
    let dominant: Vec<usize> = (0..m.n_rows())
        .map(|r| {
            let w = gates.row(r);
            let mut best = 0;
            for k in 1..b {
                if w[k] > w[best] {
                    best = k;
                }
            }
            best
        })
        .collect();
    let mut rows_per_blade = vec![0usize; b];
    let mut counts = vec![0u64; b * n];
    for (r, &d) in dominant.iter().enumerate() {
        rows_per_blade[d] += 1;
        for (c, &x) in counts[d * n..(d + 1) * n].iter_mut().zip(m.row(r)) {
            *c += u64::from(x);
        }
    }
    let category_percent = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let rows = rows_per_blade[i / n];
            if rows == 0 {
                0.0
            } else {
                100.0 * c as f64 / rows as f64
            }
        })
        .collect();
    Ok(BladeDiagnostics {
        n_blades: b,
        gates,
        dominant,
        rows_per_blade,
        category_percent,
        n_cols: n,
    })
}

impl BladeDiagnostics {
    pub fn percent(&self, blade: usize, col: usize) -> f64 {
        self.category_percent[blade * self.n_cols + col]
    }

    /// Ascending values of every row's `rank`-th largest weight (rank 0 is
    /// the largest); the empirical CDF puts mass `1/N` on each.
    pub fn ranked_weight_cdf(&self, rank: usize) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.gates.n_rows)
            .map(|r| {
                let mut w = self.gates.row(r).to_vec();
                w.sort_by(|a, b| b.total_cmp(a));
                w[rank]
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }

    /// `row,blade_0..blade_{B-1},dominant`.
    pub fn weights_to_delimited(&self) -> String {
        let mut s = String::from("row");
        for b in 0..self.n_blades {
            let _ = write!(s, ",w{b}");
        }
        s.push_str(",dominant\n");
        for r in 0..self.gates.n_rows {
            let _ = write!(s, "{r}");
            for w in self.gates.row(r) {
                let _ = write!(s, ",{w}");
            }
            let _ = writeln!(s, ",{}", self.dominant[r]);
        }
        s
    }

    /// `rank,weight,cdf` for every rank.
    pub fn cdf_to_delimited(&self) -> String {
        let mut s = String::from("rank,weight,cdf\n");
        let n = self.gates.n_rows as f64;
        for rank in 0..self.n_blades {
            for (i, w) in self.ranked_weight_cdf(rank).into_iter().enumerate() {
                let _ = writeln!(s, "{},{w},{}", rank + 1, (i + 1) as f64 / n);
            }
        }
        s
    }

    /// `blade,rows,column,percent`.
    pub fn percent_to_delimited(&self) -> String {
        let mut s = String::from("blade,rows,column,percent\n");
        for b in 0..self.n_blades {
            for c in 0..self.n_cols {
                let _ = writeln!(s, "{b},{},{c},{}", self.rows_per_blade[b], self.percent(b, c));
            }
        }
        s
    }
}

/// `co[a][b]` counts rows dominated by blade `a` of the first model and blade
/// `b` of the second.
pub fn co_assignment(first: &BladeDiagnostics, second: &BladeDiagnostics) -> Vec<Vec<u64>> {
    assert_eq!(first.dominant.len(), second.dominant.len(), "diagnostics over different rows");
    let mut co = vec![vec![0u64; second.n_blades]; first.n_blades];
    for (&a, &b) in first.dominant.iter().zip(&second.dominant) {
        co[a][b] += 1;
    }
    co
}
