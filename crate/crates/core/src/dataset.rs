//! Block one-hot response matrices, crosstabulation, and bootstrap resampling.
//!
//! # Matrix file format
//!
//! All integers little-endian.
//!
//! | bytes        | field                                         |
//! |--------------|-----------------------------------------------|
//! | 8            | magic `MODPMAT\0`                             |
//! | 4            | format version (`u32`, currently 1)           |
//! | 8            | master seed that produced the rows (`u64`)    |
//! | 8            | row count N (`u64`)                           |
//! | 4            | column count (`u32`)                          |
//! | 4            | question count Q (`u32`)                      |
//! | 4 (Q+1)      | block starts (`u32` each)                     |
//! | N x columns  | cells, row-major, one byte each (0 or 1)      |

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::binio::{expect_magic, get_u32, get_u64, put_u32, put_u64};
use crate::error::{Error, Result};
use crate::layout::BlockLayout;
use crate::rng::{keyed, Domain};

pub const MATRIX_MAGIC: &[u8; 8] = b"MODPMAT\0";
pub const MATRIX_VERSION: u32 = 1;

const ROW_CHUNK: usize = 2048;

/// N x columns binary matrix, one-hot within every question block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResponseMatrix {
    layout: BlockLayout,
    n_rows: usize,
    cells: Vec<u8>,
}

impl ResponseMatrix {
    pub fn empty(layout: BlockLayout) -> Self {
        ResponseMatrix {
            layout,
            n_rows: 0,
            cells: Vec::new(),
        }
    }

    /// Validates every row; the error names the first offending row.
    pub fn from_rows<R: AsRef<[u8]>>(layout: BlockLayout, rows: impl IntoIterator<Item = R>) -> Result<Self> {
        let n_cols = layout.n_cols();
        let mut cells = Vec::new();
        let mut n_rows = 0;
        for (r, row) in rows.into_iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n_cols {
                return Err(Error::shape(format!("row {r} has {} cells, expected {n_cols}", row.len())));
            }
            check_row(&layout, r, row)?;
            cells.extend_from_slice(row);
            n_rows += 1;
        }
        Ok(ResponseMatrix { layout, n_rows, cells })
    }

    /// From row-major cells; validates the one-hot invariant.
    pub fn from_cells(layout: BlockLayout, cells: Vec<u8>) -> Result<Self> {
        let n_cols = layout.n_cols();
        if cells.len() % n_cols != 0 {
            return Err(Error::shape(format!("{} cells is not a multiple of {n_cols}", cells.len())));
        }
        let n_rows = cells.len() / n_cols;
        for (r, row) in cells.chunks_exact(n_cols).enumerate() {
            check_row(&layout, r, row)?;
        }
        Ok(ResponseMatrix { layout, n_rows, cells })
    }

    /// From per-question category indices (`N x Q`, row-major).
    pub fn from_codes(layout: BlockLayout, codes: &[u32]) -> Result<Self> {
        let q = layout.n_questions();
        if codes.len() % q != 0 {
            return Err(Error::shape(format!("{} codes is not a multiple of {q} questions", codes.len())));
        }
        let n_rows = codes.len() / q;
        let n_cols = layout.n_cols();
        let mut cells = vec![0u8; n_rows * n_cols];
        for (r, row_codes) in codes.chunks_exact(q).enumerate() {
            for (qi, &k) in row_codes.iter().enumerate() {
                let k = k as usize;
                if k >= layout.size(qi) {
                    return Err(Error::shape(format!(
                        "row {r}: category {k} out of range for question {qi} ({} categories)",
                        layout.size(qi)
                    )));
                }
                cells[r * n_cols + layout.starts()[qi] + k] = 1;
            }
        }
        Ok(ResponseMatrix { layout, n_rows, cells })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.layout.n_cols()
    }

    pub fn is_empty(&self) -> bool {
        self.n_rows == 0
    }

    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[u8] {
        let n = self.n_cols();
        &self.cells[r * n..(r + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.cells.chunks_exact(self.n_cols().max(1))
    }

    /// Absolute column index of the set cell in every block of row `r`.
    pub fn row_active(&self, r: usize, out: &mut Vec<u32>) {
        out.clear();
        let row = self.row(r);
        for b in self.layout.blocks() {
            let k = row[b.clone()].iter().position(|&x| x != 0).unwrap();
            out.push((b.start + k) as u32);
        }
    }

    /// `N x Q` active column indices, row-major.
    pub fn active_columns(&self) -> Vec<u32> {
        let mut out = Vec::with_capacity(self.n_rows * self.layout.n_questions());
        let mut buf = Vec::new();
        for r in 0..self.n_rows {
            self.row_active(r, &mut buf);
            out.extend_from_slice(&buf);
        }
        out
    }

    /// `N x Q` category indices within each block, row-major.
    pub fn codes(&self) -> Vec<u32> {
        let starts = self.layout.starts();
        let q = self.layout.n_questions();
        self.active_columns()
            .into_iter()
            .enumerate()
            .map(|(i, c)| c - starts[i % q] as u32)
            .collect()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut cells = Vec::with_capacity(indices.len() * self.n_cols());
        for &r in indices {
            cells.extend_from_slice(self.row(r));
        }
        ResponseMatrix {
            layout: self.layout.clone(),
            n_rows: indices.len(),
            cells,
        }
    }

    pub fn write_to(&self, w: &mut impl Write, seed: u64) -> Result<()> {
        w.write_all(MATRIX_MAGIC)?;
        put_u32(w, MATRIX_VERSION)?;
        put_u64(w, seed)?;
        put_u64(w, self.n_rows as u64)?;
        put_u32(w, self.n_cols() as u32)?;
        put_u32(w, self.layout.n_questions() as u32)?;
        for &s in self.layout.starts() {
            put_u32(w, s as u32)?;
        }
        w.write_all(&self.cells)?;
        Ok(())
    }

    /// Returns the matrix and the seed recorded in its header.
    pub fn read_from(r: &mut impl Read) -> Result<(Self, u64)> {
        expect_magic(r, MATRIX_MAGIC, "matrix")?;
        let version = get_u32(r)?;
        if version != MATRIX_VERSION {
            return Err(Error::Version {
                artifact: "matrix",
                found: version,
                expected: MATRIX_VERSION,
            });
        }
        let seed = get_u64(r)?;
        let n_rows = get_u64(r)? as usize;
        let n_cols = get_u32(r)? as usize;
        let n_q = get_u32(r)? as usize;
        let starts = (0..=n_q).map(|_| get_u32(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let layout = BlockLayout::new(starts)?;
        if layout.n_cols() != n_cols {
            return Err(Error::Format("column count disagrees with block starts".into()));
        }
        let mut cells = vec![0u8; n_rows * n_cols];
        r.read_exact(&mut cells)
            .map_err(|_| Error::Format("matrix file is truncated".into()))?;
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Format("trailing bytes after matrix cells".into()));
        }
        Ok((Self::from_cells(layout, cells)?, seed))
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: u64) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        self.write_to(&mut w, seed)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, u64)> {
        Self::read_from(&mut BufReader::new(fs::File::open(path)?))
    }
}

fn check_row(layout: &BlockLayout, r: usize, row: &[u8]) -> Result<()> {
    for (q, b) in layout.blocks().enumerate() {
        let block = &row[b];
        if block.iter().any(|&x| x > 1) {
            return Err(Error::shape(format!("row {r}: non-binary cell in question {q}")));
        }
        let ones = block.iter().filter(|&&x| x == 1).count();
        if ones != 1 {
            return Err(Error::OneHot { row: r, question: q, ones });
        }
    }
    Ok(())
}

/// Pairwise co-occurrence counts `RᵀR`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Crosstab {
    layout: BlockLayout,
    n_rows: u64,
    counts: Vec<u64>,
}

impl Crosstab {
    pub fn from_counts(layout: BlockLayout, n_rows: u64, counts: Vec<u64>) -> Result<Self> {
        let n = layout.n_cols();
        if counts.len() != n * n {
            return Err(Error::shape(format!("{} counts for {n} columns", counts.len())));
        }
        Ok(Crosstab { layout, n_rows, counts })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn n_cols(&self) -> usize {
        self.layout.n_cols()
    }

    /// Number of contributing rows.
    pub fn n_rows(&self) -> u64 {
        self.n_rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.n_cols() + j]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn diagonal(&self) -> Vec<u64> {
        (0..self.n_cols()).map(|i| self.get(i, i)).collect()
    }

    /// Upper triangle as `i,j,count` lines (j >= i).
    pub fn to_delimited(&self) -> String {
        let n = self.n_cols();
        let mut s = format!("# n_rows={}\ni,j,count\n", self.n_rows);
        for i in 0..n {
            for j in i..n {
                s.push_str(&format!("{i},{j},{}\n", self.get(i, j)));
            }
        }
        s
    }
}

/// `RᵀR` over all rows. Rows are split across workers and the partial count
/// matrices summed; integer addition keeps the result exact.
pub fn crosstab(m: &ResponseMatrix) -> Crosstab {
    let n = m.n_cols();
    let q = m.layout().n_questions();
    let active = m.active_columns();
    let counts = active
        .par_chunks((ROW_CHUNK * q).max(1))
        .map(|chunk| {
            let mut part = vec![0u64; n * n];
            for row in chunk.chunks_exact(q) {
                for &a in row {
                    let base = a as usize * n;
                    for &b in row {
                        part[base + b as usize] += 1;
                    }
                }
            }
            part
        })
        .reduce(
            || vec![0u64; n * n],
            |mut acc, part| {
                acc.iter_mut().zip(part).for_each(|(a, p)| *a += p);
                acc
            },
        );
    Crosstab {
        layout: m.layout().clone(),
        n_rows: m.n_rows() as u64,
        counts,
    }
}

/// Column sums.
pub fn univariate_counts(m: &ResponseMatrix) -> Vec<u64> {
    let mut counts = vec![0u64; m.n_cols()];
    for row in m.rows() {
        for (c, &x) in counts.iter_mut().zip(row) {
            *c += u64::from(x);
        }
    }
    counts
}

/// N rows drawn uniformly with replacement.
pub fn bootstrap_resample(m: &ResponseMatrix, seed: u64) -> Result<ResponseMatrix> {
    if m.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut rng = keyed(seed, Domain::Bootstrap);
    let n = m.n_rows();
    let picks: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
    Ok(m.select_rows(&picks))
}
