//! Binary checkpoints.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic            8 bytes  "MODPCKPT"
//! version          u32      1
//! seed             u64      master seed of the training run
//! blades B         u32
//! reduced feat. F  u32
//! columns n        u32
//! questions Q      u32
//! block starts     u32 x (Q + 1)
//! name length      u32, then UTF-8 name ("model_B_F")
//! per blade        weights n*n f64 (row-major by input column), bias n f64
//! gating           w1 n*F f64, b1 F f64, w2 F*B f64, b2 B f64
//! ```
//!
//! Floats are stored as raw IEEE-754 bits, so a save/load round trip is exact.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{GatingNet, MaskedAffine, MultiBladeModel};
use crate::binio::{expect_magic, get_f64s, get_u32, get_u64, put_f64s, put_u32, put_u64};
use crate::error::{Error, Result};
use crate::layout::BlockLayout;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MODPCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

impl MultiBladeModel {
    pub fn write_to(&self, w: &mut impl Write, seed: u64) -> Result<()> {
        let name = self.name();
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION)?;
        put_u64(w, seed)?;
        put_u32(w, self.n_blades() as u32)?;
        put_u32(w, self.reduced_features() as u32)?;
        put_u32(w, self.n_cols() as u32)?;
        put_u32(w, self.layout.n_questions() as u32)?;
        for &s in self.layout.starts() {
            put_u32(w, s as u32)?;
        }
        put_u32(w, name.len() as u32)?;
        w.write_all(name.as_bytes())?;
        for b in &self.blades {
            put_f64s(w, &b.weights)?;
            put_f64s(w, &b.bias)?;
        }
        let g = &self.gating;
        for part in [&g.w1, &g.b1, &g.w2, &g.b2] {
            put_f64s(w, part)?;
        }
        Ok(())
    }

    /// Returns the model and the seed recorded in the header.
    pub fn read_from(r: &mut impl Read) -> Result<(Self, u64)> {
        expect_magic(r, CHECKPOINT_MAGIC, "checkpoint")?;
        let version = get_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                artifact: "checkpoint",
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let seed = get_u64(r)?;
        let n_blades = get_u32(r)? as usize;
        let hidden = get_u32(r)? as usize;
        let n = get_u32(r)? as usize;
        let n_q = get_u32(r)? as usize;
        if n_blades == 0 || hidden == 0 || n_q == 0 || n_q > n {
            return Err(Error::Format("implausible checkpoint dimensions".into()));
        }
        let starts = (0..=n_q).map(|_| get_u32(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let layout = BlockLayout::new(starts)?;
        if layout.n_cols() != n {
            return Err(Error::Format("column count disagrees with block starts".into()));
        }
        let name_len = get_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| Error::Format("checkpoint is truncated".into()))?;
        let expected = format!("model_{n_blades}_{hidden}");
        if name != expected.as_bytes() {
            return Err(Error::Format(format!(
                "checkpoint name `{}` does not match its dimensions",
                String::from_utf8_lossy(&name)
            )));
        }
        let mut blades = Vec::with_capacity(n_blades);
        for _ in 0..n_blades {
            let weights = get_f64s(r, n * n)?;
            let bias = get_f64s(r, n)?;
            let blade = MaskedAffine {
                layout: layout.clone(),
                weights,
                bias,
            };
            if !blade.mask_holds() {
                return Err(Error::Format("blade has nonzero within-question weights".into()));
            }
            blades.push(blade);
        }
        let gating = GatingNet {
            n_in: n,
            hidden,
            n_blades,
            w1: get_f64s(r, n * hidden)?,
            b1: get_f64s(r, hidden)?,
            w2: get_f64s(r, hidden * n_blades)?,
            b2: get_f64s(r, n_blades)?,
        };
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok((MultiBladeModel { layout, blades, gating }, seed))
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
