use rand::seq::SliceRandom;

use super::{forward, loss_and_grad, Batch, LossKind, ResidualStack};
use crate::error::{Error, Result};
use crate::params::FlatParams;
use crate::seed;

/// Gradient of an additional objective term (PCR or proximal penalty),
/// evaluated at the current parameters.
pub type ExtraGrad<'a> = &'a (dyn Fn(&FlatParams) -> Result<FlatParams> + Sync);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdOptions {
    pub steps: usize,
    pub lr: f64,
    /// Samples per step. At or above the dataset size every step uses the
    /// whole dataset in its stored order.
    pub batch_size: usize,
    /// Seeds the per-epoch shuffles.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SgdOutcome {
    pub params: FlatParams,
    /// Minibatch task loss before each step.
    pub losses: Vec<f64>,
}

/// Plain minibatch SGD on `data`, optionally adding `extra` to every
/// task gradient. Deterministic in `opts.seed`.
pub fn local_sgd(
    model: &ResidualStack,
    data: &Batch,
    kind: LossKind,
    opts: &SgdOptions,
    extra: Option<ExtraGrad<'_>>,
) -> Result<SgdOutcome> {
    if !(opts.lr > 0.0 && opts.lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", opts.lr)));
    }
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be positive".into()));
    }
    let mut current = model.clone();
    let mut losses = Vec::with_capacity(opts.steps);
    let full_batch = opts.batch_size >= data.n;
    let per_epoch = data.n.div_ceil(opts.batch_size);
    let mut order: Vec<usize> = (0..data.n).collect();

    for step in 0..opts.steps {
        let diverged = |e| match e {
            Error::Numerical(_) => Error::Diverged {
                step,
                loss: f64::NAN,
                client: None,
            },
            other => other,
        };
        let (loss, mut g) = if full_batch {
            loss_and_grad(&current, data, kind).map_err(diverged)?
        } else {
            let epoch = step / per_epoch;
            let slot = step % per_epoch;
            if slot == 0 {
                order = (0..data.n).collect();
                order.shuffle(&mut seed::rng(seed::derive(opts.seed, &[epoch as u64])));
            }
            let end = ((slot + 1) * opts.batch_size).min(data.n);
            let mb = data.rows(&order[slot * opts.batch_size..end]);
            loss_and_grad(&current, &mb, kind).map_err(diverged)?
        };
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss, client: None });
        }
        if let Some(extra) = extra {
            let r = extra(current.params())?;
            g = g.add(&r)?;
        }
        let lr = opts.lr;
        let mut bad = false;
        for (p, gi) in current.params_mut().values_mut().iter_mut().zip(g.values()) {
            *p -= lr * gi;
            bad |= !p.is_finite();
        }
        if bad {
            return Err(Error::Diverged { step, loss, client: None });
        }
        losses.push(loss);
    }
    Ok(SgdOutcome {
        params: current.params().clone(),
        losses,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    /// 0/1 accuracy for classification tasks (logit > 0 predicts 1).
    pub accuracy: Option<f64>,
}

pub fn evaluate(model: &ResidualStack, batch: &Batch, kind: LossKind) -> Result<EvalResult> {
    let loss = super::task_loss(model, batch, kind)?;
    let accuracy = match kind {
        LossKind::Regression => None,
        LossKind::BinaryClassification => {
            let out = forward(model, batch)?;
            let hits = out
                .iter()
                .zip(&batch.targets)
                .filter(|(&y, &t)| (y > 0.0) == (t == 1.0))
                .count();
            Some(hits as f64 / out.len() as f64)
        }
    };
    Ok(EvalResult { loss, accuracy })
}
