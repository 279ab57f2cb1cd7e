use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column block boundaries of a block one-hot encoding.
///
/// `starts[q]..starts[q + 1]` are the columns of question `q`;
/// `starts[0] == 0` and the last entry is the total column count.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct BlockLayout {
    starts: Vec<usize>,
}

impl BlockLayout {
    pub fn new(starts: Vec<usize>) -> Result<Self> {
        if starts.len() < 2 {
            return Err(Error::InvalidSchema(
                "block_starts needs at least one question".into(),
            ));
        }
        if starts[0] != 0 {
            return Err(Error::InvalidSchema("block_starts must begin at 0".into()));
        }
        if let Some(w) = starts.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidSchema(format!(
                "block_starts not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(BlockLayout { starts })
    }

    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        let mut starts = Vec::with_capacity(sizes.len() + 1);
        starts.push(0);
        let mut acc = 0;
        for &s in sizes {
            acc += s;
            starts.push(acc);
        }
        Self::new(starts)
    }

    #[inline]
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    #[inline]
    pub fn n_questions(&self) -> usize {
        self.starts.len() - 1
    }

    #[inline]
    pub fn n_cols(&self) -> usize {
        *self.starts.last().unwrap()
    }

    #[inline]
    pub fn block(&self, q: usize) -> Range<usize> {
        self.starts[q]..self.starts[q + 1]
    }

    pub fn size(&self, q: usize) -> usize {
        self.starts[q + 1] - self.starts[q]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.starts.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn blocks(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.starts.windows(2).map(|w| w[0]..w[1])
    }

    /// Question owning column `col`.
    pub fn question_of(&self, col: usize) -> usize {
        debug_assert!(col < self.n_cols());
        self.starts.partition_point(|&s| s <= col) - 1
    }

    /// Per-column question index, handy in inner loops.
    pub fn column_questions(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_cols());
        for (q, b) in self.blocks().enumerate() {
            out.extend(std::iter::repeat_n(q, b.len()));
        }
        out
    }

    #[inline]
    pub fn same_block(&self, i: usize, j: usize) -> bool {
        self.question_of(i) == self.question_of(j)
    }

    pub fn ensure_same(&self, other: &BlockLayout, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::BlockMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.starts, other.starts
            )));
        }
        Ok(())
    }
}

impl TryFrom<Vec<usize>> for BlockLayout {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        BlockLayout::new(v)
    }
}

impl From<BlockLayout> for Vec<usize> {
    fn from(l: BlockLayout) -> Self {
        l.starts
    }
}
