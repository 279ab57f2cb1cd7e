//! The learned prediction function: masked logistic blades mixed per row by a
//! gating network.
//!
//! A blade maps a response row `x` to `sigmoid(x W + c)` where `W[j][i]` is
//! zero whenever input column `j` and output column `i` belong to the same
//! question, so no question ever sees its own answer. Blades are never
//! stacked (a second layer would leak a question back into itself); instead
//! several blades run in parallel and a two-layer gating net assigns each row
//! a convex combination of them.
//!
//! Inputs are always block one-hot, so the affine maps are evaluated as sums
//! of the weight rows selected by a row's active columns.

mod checkpoint;
mod diagnostics;

use rand::Rng;
use rayon::prelude::*;

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use diagnostics::{blade_diagnostics, co_assignment, BladeDiagnostics};

use crate::dataset::ResponseMatrix;
use crate::error::{Error, Result};
use crate::layout::BlockLayout;
use crate::rng::{keyed, Domain};

pub const DEFAULT_BLADES: usize = 5;
pub const DEFAULT_REDUCED_FEATURES: usize = 15;

const ROW_CHUNK: usize = 1024;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Real `N x columns` matrix of (not block-normalized) probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl ProbabilityMatrix {
    pub fn new(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::shape(format!("{} entries for {n_rows}x{n_cols}", data.len())));
        }
        Ok(ProbabilityMatrix { n_rows, n_cols, data })
    }

    /// The binary matrix viewed as reals.
    pub fn from_responses(m: &ResponseMatrix) -> Self {
        ProbabilityMatrix {
            n_rows: m.n_rows(),
            n_cols: m.n_cols(),
            data: m.cells().iter().map(|&x| f64::from(x)).collect(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_cols..(r + 1) * self.n_cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.n_cols + c]
    }
}

/// Per-row blade weights, `N x B`.
#[derive(Debug, Clone, PartialEq)]
pub struct GateWeights {
    pub n_rows: usize,
    pub n_blades: usize,
    pub data: Vec<f64>,
}

impl GateWeights {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.n_blades..(r + 1) * self.n_blades]
    }
}

/// One non-self-predicting logistic map.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedAffine {
    layout: BlockLayout,
    /// `n x n`, row-major by input column: `weights[j * n + i]` feeds input
    /// column `j` into output column `i`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl MaskedAffine {
    pub fn zeros(layout: BlockLayout) -> Self {
        let n = layout.n_cols();
        MaskedAffine {
            layout,
            weights: vec![0.0; n * n],
            bias: vec![0.0; n],
        }
    }

    pub fn from_parts(layout: BlockLayout, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        let n = layout.n_cols();
        if weights.len() != n * n || bias.len() != n {
            return Err(Error::shape(format!(
                "blade parameters {}+{} do not fit {n} columns",
                weights.len(),
                bias.len()
            )));
        }
        let mut blade = MaskedAffine { layout, weights, bias };
        blade.apply_mask();
        Ok(blade)
    }

    /// Glorot-uniform weights, biases uniform in `±1/sqrt(n)`, then masked.
    fn random(layout: BlockLayout, rng: &mut impl Rng) -> Self {
        let n = layout.n_cols();
        let mut blade = MaskedAffine::zeros(layout);
        fill_uniform(rng, &mut blade.weights, (6.0 / (2 * n) as f64).sqrt());
        fill_uniform(rng, &mut blade.bias, 1.0 / (n as f64).sqrt());
        blade.apply_mask();
        blade
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn n_cols(&self) -> usize {
        self.layout.n_cols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Raw mutable access; call [`MaskedAffine::apply_mask`] afterwards.
    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    /// Weight from input column `j` to output column `i`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[j * self.n_cols() + i]
    }

    /// Zeroes every within-question weight. Idempotent.
    pub fn apply_mask(&mut self) {
        zero_diagonal_blocks(&self.layout, &mut self.weights);
    }

    pub fn mask_holds(&self) -> bool {
        let n = self.n_cols();
        self.layout
            .blocks()
            .all(|b| b.clone().all(|j| self.weights[j * n + b.start..j * n + b.end].iter().all(|&w| w == 0.0)))
    }

    /// Sigmoid outputs for one row given its active columns.
    #[inline]
    pub(crate) fn forward_active(&self, active: &[u32], out: &mut [f64]) {
        let n = self.n_cols();
        out.copy_from_slice(&self.bias);
        for &j in active {
            let w = &self.weights[j as usize * n..(j as usize + 1) * n];
            out.iter_mut().zip(w).for_each(|(o, w)| *o += w);
        }
        out.iter_mut().for_each(|o| *o = sigmoid(*o));
    }
}

/// Sets every `[start..end, start..end]` block of an `n x n` matrix to zero.
pub(crate) fn zero_diagonal_blocks(layout: &BlockLayout, m: &mut [f64]) {
    let n = layout.n_cols();
    for b in layout.blocks() {
        for j in b.clone() {
            m[j * n + b.start..j * n + b.end].fill(0.0);
        }
    }
}

fn fill_uniform(rng: &mut impl Rng, xs: &mut [f64], bound: f64) {
    for x in xs {
        *x = rng.random_range(-bound..bound);
    }
}

/// Row-wise blade selector: `softmax(W2 relu(W1 x + b1) + b2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GatingNet {
    n_in: usize,
    hidden: usize,
    n_blades: usize,
    /// `n_in x hidden`, row-major by input.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `hidden x n_blades`, row-major by hidden unit.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl GatingNet {
    pub fn zeros(n_in: usize, hidden: usize, n_blades: usize) -> Self {
        GatingNet {
            n_in,
            hidden,
            n_blades,
            w1: vec![0.0; n_in * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * n_blades],
            b2: vec![0.0; n_blades],
        }
    }

    fn random(n_in: usize, hidden: usize, n_blades: usize, rng: &mut impl Rng) -> Self {
        let mut g = GatingNet::zeros(n_in, hidden, n_blades);
        fill_uniform(rng, &mut g.w1, (6.0 / (n_in + hidden) as f64).sqrt());
        fill_uniform(rng, &mut g.b1, 1.0 / (hidden as f64).sqrt());
        fill_uniform(rng, &mut g.w2, (6.0 / (hidden + n_blades) as f64).sqrt());
        fill_uniform(rng, &mut g.b2, 1.0 / (n_blades as f64).sqrt());
        g
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn n_blades(&self) -> usize {
        self.n_blades
    }

    /// Writes hidden pre-activations and the blade weights for one row.
    #[inline]
    pub(crate) fn forward_active(&self, active: &[u32], hidden_pre: &mut [f64], gates: &mut [f64]) {
        let f = self.hidden;
        hidden_pre.copy_from_slice(&self.b1);
        for &j in active {
            let w = &self.w1[j as usize * f..(j as usize + 1) * f];
            hidden_pre.iter_mut().zip(w).for_each(|(h, w)| *h += w);
        }
        gates.copy_from_slice(&self.b2);
        for (k, &h) in hidden_pre.iter().enumerate() {
            if h > 0.0 {
                let w = &self.w2[k * self.n_blades..(k + 1) * self.n_blades];
                gates.iter_mut().zip(w).for_each(|(g, w)| *g += h * w);
            }
        }
        softmax_in_place(gates);
    }
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    xs.iter_mut().for_each(|x| *x /= sum);
}

/// Scratch buffers for evaluating one row.
#[derive(Debug, Clone)]
pub(crate) struct RowCache {
    pub active: Vec<u32>,
    /// `B x n` blade outputs.
    pub blade_probs: Vec<f64>,
    pub hidden_pre: Vec<f64>,
    pub gates: Vec<f64>,
    pub output: Vec<f64>,
}

impl RowCache {
    pub fn new(model: &MultiBladeModel) -> Self {
        let n = model.n_cols();
        RowCache {
            active: Vec::with_capacity(model.layout.n_questions()),
            blade_probs: vec![0.0; model.n_blades() * n],
            hidden_pre: vec![0.0; model.gating.hidden],
            gates: vec![0.0; model.n_blades()],
            output: vec![0.0; n],
        }
    }
}

/// `B` masked blades plus the gating network.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiBladeModel {
    layout: BlockLayout,
    pub(crate) blades: Vec<MaskedAffine>,
    pub(crate) gating: GatingNet,
}

impl MultiBladeModel {
    /// Randomly initialized model, deterministic in `seed`.
    pub fn new(layout: BlockLayout, n_blades: usize, reduced_features: usize, seed: u64) -> Result<Self> {
        if n_blades == 0 || reduced_features == 0 {
            return Err(Error::InvalidParameter(
                "a model needs at least one blade and one reduced feature".into(),
            ));
        }
        let mut rng = keyed(seed, Domain::Init);
        let blades = (0..n_blades).map(|_| MaskedAffine::random(layout.clone(), &mut rng)).collect();
        let gating = GatingNet::random(layout.n_cols(), reduced_features, n_blades, &mut rng);
        Ok(MultiBladeModel { layout, blades, gating })
    }

    pub fn from_parts(blades: Vec<MaskedAffine>, gating: GatingNet) -> Result<Self> {
        let layout = blades
            .first()
            .ok_or_else(|| Error::InvalidParameter("no blades".into()))?
            .layout
            .clone();
        if blades.iter().any(|b| b.layout != layout) {
            return Err(Error::BlockMismatch("blades disagree on block layout".into()));
        }
        if gating.n_in != layout.n_cols() || gating.n_blades != blades.len() {
            return Err(Error::shape("gating net does not match blades"));
        }
        Ok(MultiBladeModel { layout, blades, gating })
    }

    pub fn layout(&self) -> &BlockLayout {
        &self.layout
    }

    pub fn n_cols(&self) -> usize {
        self.layout.n_cols()
    }

    pub fn n_blades(&self) -> usize {
        self.blades.len()
    }

    pub fn reduced_features(&self) -> usize {
        self.gating.hidden
    }

    /// `model_<blades>_<reduced features>`.
    pub fn name(&self) -> String {
        format!("model_{}_{}", self.n_blades(), self.reduced_features())
    }

    pub fn blades(&self) -> &[MaskedAffine] {
        &self.blades
    }

    pub fn blades_mut(&mut self) -> &mut [MaskedAffine] {
        &mut self.blades
    }

    pub fn gating(&self) -> &GatingNet {
        &self.gating
    }

    pub fn gating_mut(&mut self) -> &mut GatingNet {
        &mut self.gating
    }

    pub fn apply_mask(&mut self) {
        self.blades.iter_mut().for_each(MaskedAffine::apply_mask);
    }

    pub fn mask_holds(&self) -> bool {
        self.blades.iter().all(MaskedAffine::mask_holds)
    }

    /// Parameter groups in a fixed order: each blade's weights then bias,
    /// then gating `w1, b1, w2, b2`.
    pub fn params(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::with_capacity(2 * self.blades.len() + 4);
        for b in &self.blades {
            v.push(&b.weights);
            v.push(&b.bias);
        }
        v.extend([&self.gating.w1[..], &self.gating.b1, &self.gating.w2, &self.gating.b2]);
        v
    }

    /// Mutable view in [`MultiBladeModel::params`] order.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::with_capacity(2 * self.blades.len() + 4);
        for b in &mut self.blades {
            v.push(&mut b.weights);
            v.push(&mut b.bias);
        }
        let g = &mut self.gating;
        v.extend([&mut g.w1[..], &mut g.b1[..], &mut g.w2[..], &mut g.b2[..]]);
        v
    }

    /// Fills `cache` with every intermediate for one row (active columns must
    /// already be in `cache.active`).
    #[inline]
    pub(crate) fn forward_cached(&self, cache: &mut RowCache) {
        let n = self.n_cols();
        let RowCache {
            active,
            blade_probs,
            hidden_pre,
            gates,
            output,
        } = cache;
        for (b, blade) in self.blades.iter().enumerate() {
            blade.forward_active(active, &mut blade_probs[b * n..(b + 1) * n]);
        }
        self.gating.forward_active(active, hidden_pre, gates);
        output.fill(0.0);
        for (b, &g) in gates.iter().enumerate() {
            let p = &blade_probs[b * n..(b + 1) * n];
            output.iter_mut().zip(p).for_each(|(o, p)| *o += g * p);
        }
    }

    fn check_input(&self, m: &ResponseMatrix) -> Result<()> {
        self.layout.ensure_same(m.layout(), "model vs data")
    }

    /// Gated mixture of blade outputs for every row.
    pub fn forward(&self, m: &ResponseMatrix) -> Result<ProbabilityMatrix> {
        self.check_input(m)?;
        let n = self.n_cols();
        let mut data = vec![0.0; m.n_rows() * n];
        data.par_chunks_mut(ROW_CHUNK * n).enumerate().for_each(|(c, chunk)| {
            let mut cache = RowCache::new(self);
            for (k, out) in chunk.chunks_exact_mut(n).enumerate() {
                m.row_active(c * ROW_CHUNK + k, &mut cache.active);
                self.forward_cached(&mut cache);
                out.copy_from_slice(&cache.output);
            }
        });
        ProbabilityMatrix::new(m.n_rows(), n, data)
    }

    /// Smallest absolute gating pre-activation over the rows of `m`: the
    /// distance to the nearest relu kink.
    pub fn relu_margin(&self, m: &ResponseMatrix) -> Result<f64> {
        self.check_input(m)?;
        let mut cache = RowCache::new(self);
        let mut min = f64::INFINITY;
        for r in 0..m.n_rows() {
            m.row_active(r, &mut cache.active);
            self.forward_cached(&mut cache);
            min = cache.hidden_pre.iter().fold(min, |acc, h| acc.min(h.abs()));
        }
        Ok(min)
    }

    /// Mixture with externally supplied (frozen) blade weights.
    pub fn forward_with_gates(&self, m: &ResponseMatrix, gates: &GateWeights) -> Result<ProbabilityMatrix> {
        self.check_input(m)?;
        if gates.n_rows != m.n_rows() || gates.n_blades != self.n_blades() {
            return Err(Error::shape("gate weights do not match rows x blades"));
        }
        let n = self.n_cols();
        let mut data = vec![0.0; m.n_rows() * n];
        let mut active = Vec::new();
        let mut p = vec![0.0; n];
        for (r, out) in data.chunks_exact_mut(n).enumerate() {
            m.row_active(r, &mut active);
            for (blade, &g) in self.blades.iter().zip(gates.row(r)) {
                blade.forward_active(&active, &mut p);
                out.iter_mut().zip(&p).for_each(|(o, p)| *o += g * p);
            }
        }
        ProbabilityMatrix::new(m.n_rows(), n, data)
    }
}

/// `sigmoid(x W + c)` for every row.
pub fn blade_forward(blade: &MaskedAffine, m: &ResponseMatrix) -> Result<ProbabilityMatrix> {
    blade.layout.ensure_same(m.layout(), "blade vs data")?;
    let n = blade.n_cols();
    let mut data = vec![0.0; m.n_rows() * n];
    let mut active = Vec::new();
    for (r, out) in data.chunks_exact_mut(n).enumerate() {
        m.row_active(r, &mut active);
        blade.forward_active(&active, out);
    }
    ProbabilityMatrix::new(m.n_rows(), n, data)
}

/// Softmax blade weights for every row.
pub fn gating_forward(g: &GatingNet, m: &ResponseMatrix) -> Result<GateWeights> {
    if g.n_in != m.n_cols() {
        return Err(Error::shape(format!("gating expects {} columns, data has {}", g.n_in, m.n_cols())));
    }
    let mut data = vec![0.0; m.n_rows() * g.n_blades];
    let mut active = Vec::new();
    let mut hidden = vec![0.0; g.hidden];
    for (r, out) in data.chunks_exact_mut(g.n_blades).enumerate() {
        m.row_active(r, &mut active);
        g.forward_active(&active, &mut hidden, out);
    }
    Ok(GateWeights {
        n_rows: m.n_rows(),
        n_blades: g.n_blades,
        data,
    })
}
