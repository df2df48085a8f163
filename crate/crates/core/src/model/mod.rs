//! Toy residual network standing in for the proprietary backbone.
//!
//! ```text
//! X_0     = E · x                      (E frozen, width × input_dim)
//! X_{i+1} = X_i + W2_i · tanh(W1_i · X_i + b1_i) + b2_i
//! y       = H · X_B + h
//! ```
//!
//! Only block and head parameters are trainable; they live in one
//! [`FlatParams`] whose layout names every tensor (`blocks.{i}.w1`, ...,
//! `head.w`, `head.b`). Gradients are derived by hand, no autodiff.

mod task;
mod train;

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{FlatParams, ParamLayout};
use crate::seed;

pub use task::{
    make_scenario, public_task, ScenarioKind, TaskSpec, TeacherComponent, EVAL_STREAM, TRAIN_STREAM,
};
pub use train::{evaluate, local_sgd, EvalResult, ExtraGrad, SgdOptions, SgdOutcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over samples of the squared output error.
    Regression,
    /// Mean logistic loss on {0, 1} targets, one logit per output.
    #[serde(alias = "classification")]
    BinaryClassification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub width: usize,
    pub out_dim: usize,
    pub blocks: usize,
}

impl Architecture {
    pub fn layout(&self) -> ParamLayout {
        let w = self.width;
        let mut parts = Vec::with_capacity(4 * self.blocks + 2);
        for i in 0..self.blocks {
            parts.push((format!("blocks.{i}.w1"), w * w));
            parts.push((format!("blocks.{i}.b1"), w));
            parts.push((format!("blocks.{i}.w2"), w * w));
            parts.push((format!("blocks.{i}.b2"), w));
        }
        parts.push(("head.w".to_owned(), self.out_dim * w));
        parts.push(("head.b".to_owned(), self.out_dim));
        ParamLayout::packed(parts).expect("generated names are unique")
    }

    pub fn block_dim(&self) -> usize {
        2 * self.width * self.width + 2 * self.width
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 || self.out_dim == 0 {
            return Err(Error::InvalidArgument(format!("degenerate architecture {self:?}")));
        }
        Ok(())
    }
}

/// Borrowed view of one residual block: `g(x) = W2·tanh(W1·x + b1) + b2`.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams<'a> {
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
}

/// A block-structured network with a frozen input embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualStack {
    arch: Architecture,
    embed: Arc<Vec<f64>>,
    params: FlatParams,
}

impl ResidualStack {
    pub fn new(arch: Architecture, embed: Arc<Vec<f64>>, params: FlatParams) -> Result<Self> {
        arch.validate()?;
        if embed.len() != arch.width * arch.input_dim {
            return Err(Error::Dimension(format!(
                "embedding has {} entries, expected {}×{}",
                embed.len(),
                arch.width,
                arch.input_dim
            )));
        }
        let expected = arch.layout();
        if **params.layout() != expected {
            return Err(Error::Dimension(format!(
                "parameter layout ({} dims) does not match a {}-block network ({} dims)",
                params.dim(),
                arch.blocks,
                expected.total_dim()
            )));
        }
        Ok(Self { arch, embed, params })
    }

    /// Random network: Gaussian block weights with standard deviation
    /// `init_scale / sqrt(width)`, zero biases, and an isometric embedding.
    pub fn random(arch: Architecture, seed: u64, init_scale: f64) -> Result<Self> {
        arch.validate()?;
        let embed = Arc::new(orthonormal_embedding(arch.width, arch.input_dim, seed::derive(seed, &[seed::tag::EMBEDDING])));
        let layout = Arc::new(arch.layout());
        let mut rng = seed::rng(seed::derive(seed, &[seed::tag::BACKBONE_INIT]));
        let sd = init_scale / (arch.width as f64).sqrt();
        let mut values = vec![0.0; layout.total_dim()];
        for seg in layout.segments() {
            let is_weight = seg.name.ends_with(".w1") || seg.name.ends_with(".w2") || seg.name == "head.w";
            if is_weight {
                let s = if seg.name == "head.w" { 1.0 / (arch.width as f64).sqrt() } else { sd };
                for v in &mut values[seg.range()] {
                    *v = s * rng.sample::<f64, _>(StandardNormal);
                }
            }
        }
        let params = FlatParams::new(layout, values)?;
        Self::new(arch, embed, params)
    }

    pub fn arch(&self) -> Architecture {
        self.arch
    }

    pub fn embedding(&self) -> &Arc<Vec<f64>> {
        &self.embed
    }

    pub fn params(&self) -> &FlatParams {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut FlatParams {
        &mut self.params
    }

    pub fn with_params(&self, params: FlatParams) -> Result<Self> {
        Self::new(self.arch, self.embed.clone(), params)
    }

    pub fn num_blocks(&self) -> usize {
        self.arch.blocks
    }

    pub fn block(&self, i: usize) -> BlockParams<'_> {
        let w = self.arch.width;
        let base = i * self.arch.block_dim();
        let v = self.params.values();
        BlockParams {
            w1: &v[base..base + w * w],
            b1: &v[base + w * w..base + w * w + w],
            w2: &v[base + w * w + w..base + 2 * w * w + w],
            b2: &v[base + 2 * w * w + w..base + self.arch.block_dim()],
        }
    }

    fn head(&self) -> (&[f64], &[f64]) {
        let start = self.arch.blocks * self.arch.block_dim();
        let hw = self.arch.out_dim * self.arch.width;
        let v = self.params.values();
        (&v[start..start + hw], &v[start + hw..start + hw + self.arch.out_dim])
    }
}

/// Gaussian matrix whose columns (or rows, when it is wide) are
/// Gram-Schmidt orthonormalized.
fn orthonormal_embedding(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    let mut m: Vec<f64> = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    let tall = rows >= cols;
    let (count, len) = if tall { (cols, rows) } else { (rows, cols) };
    let idx = |v: usize, k: usize| if tall { k * cols + v } else { v * cols + k };
    for v in 0..count {
        for u in 0..v {
            let mut proj = 0.0;
            for k in 0..len {
                proj += m[idx(v, k)] * m[idx(u, k)];
            }
            for k in 0..len {
                m[idx(v, k)] -= proj * m[idx(u, k)];
            }
        }
        let mut n = 0.0;
        for k in 0..len {
            n += m[idx(v, k)] * m[idx(v, k)];
        }
        let n = n.sqrt();
        for k in 0..len {
            m[idx(v, k)] /= n;
        }
    }
    m
}

/// Inputs and targets for `n` samples, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub n: usize,
    pub input_dim: usize,
    pub out_dim: usize,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, targets: Vec<f64>, input_dim: usize, out_dim: usize) -> Result<Self> {
        if input_dim == 0 || inputs.is_empty() || inputs.len() % input_dim != 0 {
            return Err(Error::Dimension(format!(
                "{} input values are not a whole number of {input_dim}-dim rows",
                inputs.len()
            )));
        }
        let n = inputs.len() / input_dim;
        if targets.len() != n * out_dim {
            return Err(Error::Dimension(format!(
                "{} targets for {n} samples of out_dim {out_dim}",
                targets.len()
            )));
        }
        if inputs.iter().chain(&targets).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("batch contains non-finite values".into()));
        }
        Ok(Self {
            inputs,
            targets,
            n,
            input_dim,
            out_dim,
        })
    }

    pub fn rows(&self, idx: &[usize]) -> Batch {
        let mut inputs = Vec::with_capacity(idx.len() * self.input_dim);
        let mut targets = Vec::with_capacity(idx.len() * self.out_dim);
        for &i in idx {
            inputs.extend_from_slice(&self.inputs[i * self.input_dim..(i + 1) * self.input_dim]);
            targets.extend_from_slice(&self.targets[i * self.out_dim..(i + 1) * self.out_dim]);
        }
        Batch {
            inputs,
            targets,
            n: idx.len(),
            input_dim: self.input_dim,
            out_dim: self.out_dim,
        }
    }

    /// Concatenate batches with matching shapes.
    pub fn concat(batches: &[&Batch]) -> Result<Batch> {
        let first = batches
            .first()
            .ok_or_else(|| Error::InvalidArgument("no batches to concatenate".into()))?;
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for b in batches {
            if b.input_dim != first.input_dim || b.out_dim != first.out_dim {
                return Err(Error::Dimension("batch shapes differ".into()));
            }
            inputs.extend_from_slice(&b.inputs);
            targets.extend_from_slice(&b.targets);
        }
        Batch::new(inputs, targets, first.input_dim, first.out_dim)
    }
}

/// Hidden states of every residual stage plus the network output.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `hidden[i]` is the `n × width` matrix entering block `i`;
    /// `hidden[B]` is the final residual stream.
    pub hidden: Vec<Vec<f64>>,
    /// `tanh` activations inside each block, `n × width`.
    pub activations: Vec<Vec<f64>>,
    /// `n × out_dim`.
    pub outputs: Vec<f64>,
}

fn check_batch(model: &ResidualStack, batch: &Batch) -> Result<()> {
    if batch.input_dim != model.arch.input_dim || batch.out_dim != model.arch.out_dim {
        return Err(Error::Dimension(format!(
            "batch is {}→{}, model is {}→{}",
            batch.input_dim, batch.out_dim, model.arch.input_dim, model.arch.out_dim
        )));
    }
    Ok(())
}

/// `out[r, o] = b[o] + Σ_i w[o, i] · x[r, i]`, summed in index order.
fn affine(x: &[f64], n: usize, in_dim: usize, w: &[f64], b: &[f64], out_dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * out_dim];
    for r in 0..n {
        let row = &x[r * in_dim..(r + 1) * in_dim];
        for o in 0..out_dim {
            let wrow = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = b[o];
            for i in 0..in_dim {
                acc += wrow[i] * row[i];
            }
            out[r * out_dim + o] = acc;
        }
    }
    out
}

fn embed_inputs(model: &ResidualStack, batch: &Batch) -> Vec<f64> {
    let zeros = vec![0.0; model.arch.width];
    affine(&batch.inputs, batch.n, batch.input_dim, &model.embed, &zeros, model.arch.width)
}

pub fn forward_with_trace(model: &ResidualStack, batch: &Batch) -> Result<ForwardTrace> {
    check_batch(model, batch)?;
    let n = batch.n;
    let w = model.arch.width;
    let mut hidden = Vec::with_capacity(model.arch.blocks + 1);
    let mut activations = Vec::with_capacity(model.arch.blocks);
    hidden.push(embed_inputs(model, batch));
    for i in 0..model.arch.blocks {
        let blk = model.block(i);
        let x = hidden.last().unwrap();
        let mut a = affine(x, n, w, blk.w1, blk.b1, w);
        a.iter_mut().for_each(|z| *z = z.tanh());
        let g = affine(&a, n, w, blk.w2, blk.b2, w);
        let next: Vec<f64> = x.iter().zip(&g).map(|(xv, gv)| xv + gv).collect();
        activations.push(a);
        hidden.push(next);
    }
    let (hw, hb) = model.head();
    let outputs = affine(hidden.last().unwrap(), n, w, hw, hb, model.arch.out_dim);
    Ok(ForwardTrace {
        hidden,
        activations,
        outputs,
    })
}

pub fn forward(model: &ResidualStack, batch: &Batch) -> Result<Vec<f64>> {
    Ok(forward_with_trace(model, batch)?.outputs)
}

fn check_targets(batch: &Batch, kind: LossKind) -> Result<()> {
    if kind == LossKind::BinaryClassification && batch.targets.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::InvalidArgument("classification targets must be 0 or 1".into()));
    }
    Ok(())
}

/// Numerically stable `ln(1 + e^z)`.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Per-batch loss from precomputed outputs, plus `∂loss/∂outputs` when asked.
fn loss_from_outputs(outputs: &[f64], batch: &Batch, kind: LossKind, want_grad: bool) -> (f64, Vec<f64>) {
    let n = batch.n as f64;
    let mut total = 0.0;
    let mut d = if want_grad { vec![0.0; outputs.len()] } else { Vec::new() };
    for (i, (&y, &t)) in outputs.iter().zip(&batch.targets).enumerate() {
        match kind {
            LossKind::Regression => {
                let e = y - t;
                total += e * e;
                if want_grad {
                    d[i] = 2.0 * e / n;
                }
            }
            LossKind::BinaryClassification => {
                total += softplus(y) - t * y;
                if want_grad {
                    d[i] = (sigmoid(y) - t) / n;
                }
            }
        }
    }
    (total / n, d)
}

pub fn task_loss(model: &ResidualStack, batch: &Batch, kind: LossKind) -> Result<f64> {
    check_targets(batch, kind)?;
    let outputs = forward(model, batch)?;
    Ok(loss_from_outputs(&outputs, batch, kind, false).0)
}

/// Task loss and its exact gradient with respect to the trainable parameters.
pub fn loss_and_grad(model: &ResidualStack, batch: &Batch, kind: LossKind) -> Result<(f64, FlatParams)> {
    check_targets(batch, kind)?;
    let trace = forward_with_trace(model, batch)?;
    let (loss, dy) = loss_from_outputs(&trace.outputs, batch, kind, true);

    let n = batch.n;
    let w = model.arch.width;
    let out_dim = model.arch.out_dim;
    let bd = model.arch.block_dim();
    let mut grad = vec![0.0; model.params.dim()];

    let head_start = model.arch.blocks * bd;
    let (hw, _) = model.head();
    let xb = &trace.hidden[model.arch.blocks];
    {
        let (gw, gb) = grad[head_start..].split_at_mut(out_dim * w);
        for r in 0..n {
            for o in 0..out_dim {
                let g = dy[r * out_dim + o];
                gb[o] += g;
                for i in 0..w {
                    gw[o * w + i] += g * xb[r * w + i];
                }
            }
        }
    }
    // dL/dX_B
    let mut dx = vec![0.0; n * w];
    for r in 0..n {
        for i in 0..w {
            let mut acc = 0.0;
            for o in 0..out_dim {
                acc += dy[r * out_dim + o] * hw[o * w + i];
            }
            dx[r * w + i] = acc;
        }
    }

    for blk_idx in (0..model.arch.blocks).rev() {
        let blk = model.block(blk_idx);
        let x = &trace.hidden[blk_idx];
        let a = &trace.activations[blk_idx];
        let base = blk_idx * bd;
        let (gw1, rest) = grad[base..base + bd].split_at_mut(w * w);
        let (gb1, rest) = rest.split_at_mut(w);
        let (gw2, gb2) = rest.split_at_mut(w * w);

        let mut dz = vec![0.0; n * w];
        for r in 0..n {
            for o in 0..w {
                let g = dx[r * w + o];
                gb2[o] += g;
                for j in 0..w {
                    gw2[o * w + j] += g * a[r * w + j];
                }
            }
            for j in 0..w {
                let mut da = 0.0;
                for o in 0..w {
                    da += dx[r * w + o] * blk.w2[o * w + j];
                }
                let aj = a[r * w + j];
                dz[r * w + j] = da * (1.0 - aj * aj);
            }
        }
        for r in 0..n {
            for j in 0..w {
                let g = dz[r * w + j];
                gb1[j] += g;
                for k in 0..w {
                    gw1[j * w + k] += g * x[r * w + k];
                }
            }
            for k in 0..w {
                let mut acc = 0.0;
                for j in 0..w {
                    acc += dz[r * w + j] * blk.w1[j * w + k];
                }
                dx[r * w + k] += acc;
            }
        }
    }

    Ok((loss, model.params.with_values(grad)?))
}

pub fn grad(model: &ResidualStack, batch: &Batch, kind: LossKind) -> Result<FlatParams> {
    Ok(loss_and_grad(model, batch, kind)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(blocks: usize) -> Architecture {
        Architecture {
            input_dim: 3,
            width: 4,
            out_dim: 1,
            blocks,
        }
    }

    fn batch(n: usize, seed: u64, model: &ResidualStack) -> Batch {
        let mut rng = seed::rng(seed);
        let a = model.arch();
        let inputs = (0..n * a.input_dim).map(|_| rng.sample(StandardNormal)).collect();
        let targets = (0..n * a.out_dim).map(|_| rng.sample(StandardNormal)).collect();
        Batch::new(inputs, targets, a.input_dim, a.out_dim).unwrap()
    }

    fn zeroed_blocks(model: &ResidualStack) -> ResidualStack {
        let mut v = model.params().values().to_vec();
        let end = model.arch().blocks * model.arch().block_dim();
        v[..end].iter_mut().for_each(|x| *x = 0.0);
        model.with_params(model.params().with_values(v).unwrap()).unwrap()
    }

    #[test]
    fn layout_names_and_sizes() {
        let l = arch(2).layout();
        assert_eq!(l.segments().len(), 10);
        assert_eq!(l.segment("blocks.1.b2").unwrap().len, 4);
        assert_eq!(l.segment("head.w").unwrap().len, 4);
        assert_eq!(l.total_dim(), 2 * (16 + 4 + 16 + 4) + 4 + 1);
    }

    #[test]
    fn embedding_is_isometric() {
        let e = orthonormal_embedding(6, 3, 11);
        for c1 in 0..3 {
            for c2 in 0..3 {
                let d: f64 = (0..6).map(|r| e[r * 3 + c1] * e[r * 3 + c2]).sum();
                let expected = if c1 == c2 { 1.0 } else { 0.0 };
                assert!((d - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_residual_is_identity() {
        let m = zeroed_blocks(&ResidualStack::random(arch(3), 5, 1.0).unwrap());
        let b = batch(5, 1, &m);
        let t = forward_with_trace(&m, &b).unwrap();
        for h in &t.hidden[1..] {
            assert_eq!(h, &t.hidden[0]);
        }
    }

    #[test]
    fn zeroed_outputs_do_not_depend_on_depth() {
        let shallow = zeroed_blocks(&ResidualStack::random(arch(1), 5, 1.0).unwrap());
        let deep = zeroed_blocks(&ResidualStack::random(arch(4), 5, 1.0).unwrap());
        let mut v = deep.params().values().to_vec();
        let sp = shallow.params();
        let head = sp.segment_values("head.w").unwrap().len() + sp.segment_values("head.b").unwrap().len();
        let (vn, sn) = (v.len(), shallow.params().dim());
        v[vn - head..].copy_from_slice(&shallow.params().values()[sn - head..]);
        let deep = deep.with_params(deep.params().with_values(v).unwrap()).unwrap();
        let b = batch(7, 2, &shallow);
        // same seed gives the same embedding; the head is shared above
        assert_eq!(forward(&shallow, &b).unwrap(), forward(&deep, &b).unwrap());
    }

    #[test]
    fn loss_conventions() {
        let m = ResidualStack::random(arch(1), 3, 1.0).unwrap();
        let b = batch(4, 9, &m);
        let out = forward(&m, &b).unwrap();
        let exact = Batch::new(b.inputs.clone(), out.clone(), 3, 1).unwrap();
        assert_eq!(task_loss(&m, &exact, LossKind::Regression).unwrap(), 0.0);
        let shifted = Batch::new(b.inputs.clone(), out.iter().map(|y| y - 1.0).collect(), 3, 1).unwrap();
        assert!((task_loss(&m, &shifted, LossKind::Regression).unwrap() - 1.0).abs() < 1e-12);

        let (l, d) = loss_from_outputs(&[0.0, 0.0], &Batch::new(vec![0.0; 6], vec![0.0, 1.0], 3, 1).unwrap(), LossKind::BinaryClassification, true);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(d, vec![0.25, -0.25]);
    }

    #[test]
    fn classification_rejects_soft_targets() {
        let m = ResidualStack::random(arch(1), 3, 1.0).unwrap();
        let b = batch(4, 9, &m);
        assert!(task_loss(&m, &b, LossKind::BinaryClassification).is_err());
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let m = ResidualStack::random(arch(1), 3, 1.0).unwrap();
        let b = Batch::new(vec![0.0; 4], vec![0.0; 2], 2, 1).unwrap();
        assert!(matches!(forward(&m, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn gradient_is_zero_at_exact_fit() {
        let m = ResidualStack::random(arch(2), 8, 1.0).unwrap();
        let b = batch(6, 4, &m);
        let exact = Batch::new(b.inputs.clone(), forward(&m, &b).unwrap(), 3, 1).unwrap();
        let g = grad(&m, &exact, LossKind::Regression).unwrap();
        assert!(g.norm() < 1e-8);
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0 && softplus(-1000.0) < 1e-300);
        assert!((sigmoid(-800.0)).is_finite());
    }
}
