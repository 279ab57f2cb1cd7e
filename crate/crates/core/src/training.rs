//! Losses, exact gradients and the two-phase training schedule.
//!
//! Training first fits row-by-row predictions with mean squared error, then
//! switches to the z-value loss, which compares the crosstab of the model's
//! probabilities with the crosstab of the batch. Inputs and targets are the
//! same batch of rows throughout.
//!
//! Gradients are derived by hand for the fixed architecture. A batch is cut
//! into row chunks that are processed in parallel; partial gradients are
//! summed in chunk order, so results do not depend on the thread count.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{crosstab, ResponseMatrix};
use crate::error::{Error, Result};
use crate::layout::BlockLayout;
use crate::model::{MultiBladeModel, ProbabilityMatrix, RowCache};
use crate::rng::{keyed, Domain};

const ROW_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    Zval,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Zval => "zval",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
    Sgd,
}

/// Constants of the z-value loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams {
    pub pseudocount: f64,
    pub variance_floor: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams {
            pseudocount: 0.01,
            variance_floor: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub mse_epochs: usize,
    pub zval_epochs: usize,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub pseudocount_loss: f64,
    pub variance_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4096,
            mse_epochs: 30,
            zval_epochs: 100,
            optimizer: Optimizer::Adam,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            pseudocount_loss: 0.01,
            variance_floor: 1e-5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.pseudocount_loss.is_finite() && self.pseudocount_loss > 0.0) {
            return bad("pseudocount_loss must be positive");
        }
        if !(self.variance_floor.is_finite() && self.variance_floor > 0.0) {
            return bad("variance_floor must be positive");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        Ok(())
    }

    pub fn loss_params(&self) -> LossParams {
        LossParams {
            pseudocount: self.pseudocount_loss,
            variance_floor: self.variance_floor,
        }
    }
}

/// One array per parameter group, in [`MultiBladeModel::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    n_blades: usize,
    groups: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(model: &MultiBladeModel) -> Self {
        GradientSet {
            n_blades: model.n_blades(),
            groups: model.params().iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn groups(&self) -> &[Vec<f64>] {
        &self.groups
    }

    pub fn blade_weights(&self, b: usize) -> &[f64] {
        &self.groups[2 * b]
    }

    pub fn blade_bias(&self, b: usize) -> &[f64] {
        &self.groups[2 * b + 1]
    }

    pub fn gating_w1(&self) -> &[f64] {
        &self.groups[2 * self.n_blades]
    }

    pub fn gating_b1(&self) -> &[f64] {
        &self.groups[2 * self.n_blades + 1]
    }

    pub fn gating_w2(&self) -> &[f64] {
        &self.groups[2 * self.n_blades + 2]
    }

    pub fn gating_b2(&self) -> &[f64] {
        &self.groups[2 * self.n_blades + 3]
    }

    /// Every within-question blade-weight entry is exactly zero.
    pub fn mask_holds(&self, layout: &BlockLayout) -> bool {
        let n = layout.n_cols();
        (0..self.n_blades).all(|b| {
            let w = self.blade_weights(b);
            layout
                .blocks()
                .all(|bl| bl.clone().all(|j| w[j * n + bl.start..j * n + bl.end].iter().all(|&g| g.to_bits() == 0)))
        })
    }

    fn add(&mut self, other: &GradientSet) {
        for (a, b) in self.groups.iter_mut().zip(&other.groups) {
            a.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
    }

    fn apply_mask(&mut self, layout: &BlockLayout) {
        for b in 0..self.n_blades {
            crate::model::zero_diagonal_blocks(layout, &mut self.groups[2 * b]);
        }
    }

    fn is_finite(&self) -> bool {
        self.groups.iter().flatten().all(|g| g.is_finite())
    }
}

fn check_congruent(output: &ProbabilityMatrix, target: &ResponseMatrix) -> Result<()> {
    if output.n_rows() != target.n_rows() || output.n_cols() != target.n_cols() {
        return Err(Error::shape(format!(
            "output is {}x{}, target is {}x{}",
            output.n_rows(),
            output.n_cols(),
            target.n_rows(),
            target.n_cols()
        )));
    }
    Ok(())
}

/// Mean of `(output - target)^2` over every entry.
pub fn mse_loss(output: &ProbabilityMatrix, target: &ResponseMatrix) -> Result<f64> {
    check_congruent(output, target)?;
    if output.data().is_empty() {
        return Err(Error::EmptyData);
    }
    let sum: f64 = output
        .data()
        .iter()
        .zip(target.cells())
        .map(|(&o, &t)| (o - f64::from(t)).powi(2))
        .sum();
    Ok(sum / output.data().len() as f64)
}

/// `output^T output` over all rows, row-major `n x n`.
fn gram(output: &ProbabilityMatrix) -> Vec<f64> {
    let n = output.n_cols();
    let partials: Vec<Vec<f64>> = output
        .data()
        .par_chunks(ROW_CHUNK * n.max(1))
        .map(|chunk| {
            let mut g = vec![0.0; n * n];
            for row in chunk.chunks_exact(n) {
                for (k, &a) in row.iter().enumerate() {
                    if a != 0.0 {
                        g[k * n..(k + 1) * n].iter_mut().zip(row).for_each(|(g, &b)| *g += a * b);
                    }
                }
            }
            g
        })
        .collect();
    let mut g = vec![0.0; n * n];
    for p in &partials {
        g.iter_mut().zip(p).for_each(|(g, p)| *g += p);
    }
    g
}

/// Z-value loss from raw (pseudocount-free) crosstabs. Returns the loss and,
/// if asked, `dL/d(output^T output)`.
fn zval_from_gram(
    gram_out: &[f64],
    target_counts: &[u64],
    n_out: usize,
    n_target: usize,
    layout: &BlockLayout,
    params: LossParams,
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let n = layout.n_cols();
    let nt = n_target as f64;
    let no = n_out as f64;
    let inv_sum = 1.0 / nt + 1.0 / no;
    let scale = 1.0 / (n * n) as f64;
    let qs = layout.column_questions();
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; n * n]);
    for k in 0..n {
        for l in 0..n {
            if qs[k] == qs[l] {
                continue;
            }
            let ct = target_counts[k * n + l] as f64 + params.pseudocount;
            let co = gram_out[k * n + l] + params.pseudocount;
            let diff = ct / nt - co / no;
            let pooled = (ct + co) / (nt + no);
            let var = pooled * (1.0 - pooled) * inv_sum + params.variance_floor;
            total += diff * diff / var;
            if let Some(g) = grad.as_mut() {
                let dvar = (1.0 - 2.0 * pooled) * inv_sum / (nt + no);
                g[k * n + l] = scale * (-2.0 * diff / (no * var) - diff * diff / (var * var) * dvar);
            }
        }
    }
    (total * scale, grad)
}

/// Mean over all `n x n` cells of the masked per-cell squared z statistic
/// comparing the crosstab of `output` with that of `target`.
pub fn zval_loss(
    output: &ProbabilityMatrix,
    target: &ResponseMatrix,
    layout: &BlockLayout,
    params: LossParams,
) -> Result<f64> {
    check_congruent(output, target)?;
    layout.ensure_same(target.layout(), "loss layout vs target")?;
    if target.is_empty() {
        return Err(Error::EmptyData);
    }
    let ct = crosstab(target);
    let g = gram(output);
    Ok(zval_from_gram(&g, ct.counts(), output.n_rows(), target.n_rows(), layout, params, false).0)
}

/// Loss of the model on `data` used as both input and target.
pub fn evaluate_loss(model: &MultiBladeModel, data: &ResponseMatrix, kind: LossKind, params: LossParams) -> Result<f64> {
    let out = model.forward(data)?;
    match kind {
        LossKind::Mse => mse_loss(&out, data),
        LossKind::Zval => zval_loss(&out, data, model.layout(), params),
    }
}

/// Scratch space for one row's backward pass.
struct RowGrad {
    cache: RowCache,
    obar: Vec<f64>,
    dz: Vec<f64>,
    s: Vec<f64>,
    da: Vec<f64>,
    dh: Vec<f64>,
}

impl RowGrad {
    fn new(model: &MultiBladeModel) -> Self {
        RowGrad {
            cache: RowCache::new(model),
            obar: vec![0.0; model.n_cols()],
            dz: vec![0.0; model.n_cols()],
            s: vec![0.0; model.n_blades()],
            da: vec![0.0; model.n_blades()],
            dh: vec![0.0; model.reduced_features()],
        }
    }

    /// Adds this row's contribution given `obar = dL/d(output row)`. The
    /// forward pass must already be in `cache`.
    fn accumulate(&mut self, model: &MultiBladeModel, grad: &mut GradientSet) {
        let n = model.n_cols();
        let n_blades = model.n_blades();
        let hidden = model.reduced_features();
        let RowGrad {
            cache,
            obar,
            dz,
            s,
            da,
            dh,
        } = self;

        for b in 0..n_blades {
            let p = &cache.blade_probs[b * n..(b + 1) * n];
            let g = cache.gates[b];
            s[b] = obar.iter().zip(p).map(|(o, p)| o * p).sum();
            for ((d, &o), &p) in dz.iter_mut().zip(obar.iter()).zip(p) {
                *d = g * o * p * (1.0 - p);
            }
            let (w_group, rest) = grad.groups[2 * b..].split_at_mut(1);
            let w = &mut w_group[0];
            for &j in &cache.active {
                let j = j as usize;
                w[j * n..(j + 1) * n].iter_mut().zip(dz.iter()).for_each(|(w, d)| *w += d);
            }
            rest[0].iter_mut().zip(dz.iter()).for_each(|(c, d)| *c += d);
        }

        let mean: f64 = cache.gates.iter().zip(s.iter()).map(|(g, s)| g * s).sum();
        for b in 0..n_blades {
            da[b] = cache.gates[b] * (s[b] - mean);
        }

        let base = 2 * n_blades;
        let w2 = &model.gating().w2;
        {
            let gw2 = &mut grad.groups[base + 2];
            for k in 0..hidden {
                let h = cache.hidden_pre[k];
                if h > 0.0 {
                    gw2[k * n_blades..(k + 1) * n_blades]
                        .iter_mut()
                        .zip(da.iter())
                        .for_each(|(g, d)| *g += h * d);
                    dh[k] = w2[k * n_blades..(k + 1) * n_blades].iter().zip(da.iter()).map(|(w, d)| w * d).sum();
                } else {
                    dh[k] = 0.0;
                }
            }
        }
        grad.groups[base + 3].iter_mut().zip(da.iter()).for_each(|(g, d)| *g += d);
        {
            let gw1 = &mut grad.groups[base];
            for &j in &cache.active {
                let j = j as usize;
                gw1[j * hidden..(j + 1) * hidden]
                    .iter_mut()
                    .zip(dh.iter())
                    .for_each(|(g, d)| *g += d);
            }
        }
        grad.groups[base + 1].iter_mut().zip(dh.iter()).for_each(|(g, d)| *g += d);
    }
}

/// Runs `row_fn` over every row in fixed chunks and sums the chunk results in
/// chunk order. `row_fn` fills `obar` for the row and returns its loss term.
fn reduce_rows<F>(model: &MultiBladeModel, batch: &ResponseMatrix, row_fn: F) -> (f64, GradientSet)
where
    F: Fn(usize, &RowCache, &mut [f64]) -> f64 + Sync,
{
    let n_rows = batch.n_rows();
    let n_chunks = n_rows.div_ceil(ROW_CHUNK);
    let partials: Vec<(f64, GradientSet)> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut grad = GradientSet::zeros_like(model);
            let mut rg = RowGrad::new(model);
            let mut loss = 0.0;
            for r in c * ROW_CHUNK..((c + 1) * ROW_CHUNK).min(n_rows) {
                batch.row_active(r, &mut rg.cache.active);
                model.forward_cached(&mut rg.cache);
                loss += row_fn(r, &rg.cache, &mut rg.obar);
                rg.accumulate(model, &mut grad);
            }
            (loss, grad)
        })
        .collect();
    let mut grad = GradientSet::zeros_like(model);
    let mut loss = 0.0;
    for (l, g) in &partials {
        loss += l;
        grad.add(g);
    }
    grad.apply_mask(model.layout());
    (loss, grad)
}

/// Loss and exact gradient of `kind` for `batch` used as input and target.
/// Within-question blade-weight gradients are exactly zero.
pub fn backward(
    model: &MultiBladeModel,
    batch: &ResponseMatrix,
    kind: LossKind,
    params: LossParams,
) -> Result<(f64, GradientSet)> {
    model.layout().ensure_same(batch.layout(), "model vs batch")?;
    if batch.is_empty() {
        return Err(Error::EmptyData);
    }
    let n = model.n_cols();
    let count = (batch.n_rows() * n) as f64;
    match kind {
        LossKind::Mse => {
            let (sum, grad) = reduce_rows(model, batch, |r, cache, obar| {
                let mut sq = 0.0;
                for ((o, &p), &t) in obar.iter_mut().zip(&cache.output).zip(batch.row(r)) {
                    let d = p - f64::from(t);
                    sq += d * d;
                    *o = 2.0 * d / count;
                }
                sq
            });
            Ok((sum / count, grad))
        }
        LossKind::Zval => {
            let output = model.forward(batch)?;
            let ct = crosstab(batch);
            let g = gram(&output);
            let (loss, dgram) =
                zval_from_gram(&g, ct.counts(), batch.n_rows(), batch.n_rows(), model.layout(), params, true);
            let dgram = dgram.expect("gradient requested");
            // d(O^T O)/dO_r contracts to 2 O_r G for symmetric G.
            let (_, grad) = reduce_rows(model, batch, |_, cache, obar| {
                obar.fill(0.0);
                for (k, &a) in cache.output.iter().enumerate() {
                    obar.iter_mut().zip(&dgram[k * n..(k + 1) * n]).for_each(|(o, g)| *o += 2.0 * a * g);
                }
                0.0
            });
            Ok((loss, grad))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    /// Optimizer step, counted from 0 across both phases.
    pub step: usize,
    /// Epoch, counted from 0 across both phases.
    pub epoch: usize,
    pub kind: LossKind,
    /// Batch loss before the step's update.
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<LossRecord>,
}

impl TrainHistory {
    /// `step,epoch,loss_kind,loss`.
    pub fn to_delimited(&self) -> String {
        let mut s = String::from("step,epoch,loss_kind,loss\n");
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{}", r.step, r.epoch, r.kind.as_str(), r.loss);
        }
        s
    }
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    fn new(cfg: &TrainConfig, model: &MultiBladeModel) -> Self {
        let zeros: Vec<Vec<f64>> = model.params().iter().map(|p| vec![0.0; p.len()]).collect();
        OptimizerState {
            kind: cfg.optimizer,
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn step(&mut self, model: &mut MultiBladeModel, grad: &GradientSet) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (gi, param) in model.params_mut().into_iter().enumerate() {
            let g = &grad.groups[gi];
            match self.kind {
                Optimizer::Sgd => param.iter_mut().zip(g).for_each(|(p, g)| *p -= self.lr * g),
                Optimizer::Adam => {
                    let (m, v) = (&mut self.m[gi], &mut self.v[gi]);
                    for i in 0..param.len() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                        param[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                    }
                }
            }
        }
        model.apply_mask();
    }
}

/// Runs `mse_epochs` of minibatch descent on the MSE loss, then
/// `zval_epochs` on the z-value loss. `progress` sees every step's record.
pub fn train(
    model: &mut MultiBladeModel,
    data: &ResponseMatrix,
    cfg: &TrainConfig,
    progress: &mut dyn FnMut(&LossRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    model.layout().ensure_same(data.layout(), "model vs data")?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    model.apply_mask();
    let params = cfg.loss_params();
    let mut rng = keyed(cfg.seed, Domain::Shuffle);
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    let mut opt = OptimizerState::new(cfg, model);
    let mut history = TrainHistory::default();
    let phases = std::iter::repeat_n(LossKind::Mse, cfg.mse_epochs).chain(std::iter::repeat_n(LossKind::Zval, cfg.zval_epochs));
    let mut step = 0;
    for (epoch, kind) in phases.enumerate() {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.batch_size) {
            let batch = data.select_rows(idx);
            let (loss, grad) = backward(model, &batch, kind, params)?;
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    epoch,
                    kind: kind.as_str(),
                });
            }
            opt.step(model, &grad);
            let rec = LossRecord { step, epoch, kind, loss };
            progress(&rec);
            history.records.push(rec);
            step += 1;
        }
    }
    Ok(history)
}
