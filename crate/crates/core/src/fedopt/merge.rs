use crate::error::{Error, Result};
use crate::params::{FlatParams, TaskVector};

const WEIGHT_SUM_TOL: f64 = 1e-6;

fn check_weights(weights: &[f64], k: usize) -> Result<()> {
    if weights.len() != k {
        return Err(Error::Dimension(format!("{} weights for {k} clients", weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidArgument("weights must be finite and non-negative".into()));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidArgument(format!("weights sum to {sum}, expected 1")));
    }
    Ok(())
}

/// Indices of the `keep` largest-magnitude entries; ties favor the lower index.
fn top_magnitude(values: &[f64], keep: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[j].abs().total_cmp(&values[i].abs()).then(i.cmp(&j)));
    order.truncate(keep);
    order
}

/// `⌈fraction · dim⌉`, tolerant of representation error in `fraction`.
fn keep_count(fraction: f64, dim: usize) -> usize {
    (((fraction * dim as f64) - 1e-9).ceil().max(0.0) as usize).min(dim)
}

fn trim(values: &[f64], fraction: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    for i in top_magnitude(values, keep_count(fraction, values.len())) {
        out[i] = values[i];
    }
    out
}

/// Keep the `⌈r·D⌉` largest-magnitude entries of `tau` and zero the rest.
pub fn hties_sparsify(tau: &TaskVector, retention: f64) -> Result<TaskVector> {
    if !(0.0..=1.0).contains(&retention) {
        return Err(Error::InvalidArgument(format!("retention must be in [0, 1], got {retention}")));
    }
    if retention == 1.0 {
        return Ok(tau.clone());
    }
    Ok(TaskVector {
        delta: tau.delta.with_values(trim(tau.values(), retention))?,
        client_id: tau.client_id,
        round: tau.round,
    })
}

/// Per-dimension record of which dominance branch fired.
#[derive(Debug, Clone, PartialEq)]
pub struct HtiesOutcome {
    pub delta: FlatParams,
    pub positive: usize,
    pub negative: usize,
    pub neither: usize,
    /// Dimensions where both dominance conditions held. Always zero for
    /// `rho ≥ 1` and `eps > 0`; counted so callers can check.
    pub both: usize,
}

/// Weighted dominant-sign merge of sparsified task vectors.
///
/// Per dimension, with `t_k = w_k·τ̃_k[d]`, `P = Σ_{t>0} t`, `N = Σ_{t<0} |t|`:
/// if `P/(N+ε) ≥ ρ` the update is `Σ_{t>0} t / Σ_{t>0} w_k`; symmetrically
/// for the negative side; otherwise zero. Entries trimmed to zero do not
/// conform to either sign.
pub fn hties_merge_detailed(sparsified: &[TaskVector], weights: &[f64], rho: f64, eps: f64) -> Result<HtiesOutcome> {
    let first = sparsified
        .first()
        .ok_or_else(|| Error::InvalidArgument("no task vectors to merge".into()))?;
    check_weights(weights, sparsified.len())?;
    if !(rho >= 1.0) {
        return Err(Error::InvalidArgument(format!("rho must be ≥ 1, got {rho}")));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be > 0, got {eps}")));
    }
    for t in sparsified {
        t.delta.check_same_layout(&first.delta)?;
    }

    let dim = first.delta.dim();
    let mut delta = vec![0.0; dim];
    let (mut positive, mut negative, mut neither, mut both) = (0, 0, 0, 0);
    for (d, out) in delta.iter_mut().enumerate() {
        let (mut pos_mass, mut neg_mass, mut pos_w, mut neg_w) = (0.0, 0.0, 0.0, 0.0);
        for (t, &w) in sparsified.iter().zip(weights) {
            let scaled = w * t.values()[d];
            if scaled > 0.0 {
                pos_mass += scaled;
                pos_w += w;
            } else if scaled < 0.0 {
                neg_mass -= scaled;
                neg_w += w;
            }
        }
        let pos_fires = pos_mass / (neg_mass + eps) >= rho;
        let neg_fires = neg_mass / (pos_mass + eps) >= rho;
        match (pos_fires, neg_fires) {
            (true, false) => {
                *out = pos_mass / pos_w;
                positive += 1;
            }
            (false, true) => {
                *out = -neg_mass / neg_w;
                negative += 1;
            }
            (false, false) => neither += 1,
            (true, true) => both += 1,
        }
    }
    debug_assert_eq!(both, 0, "dominance branches co-fired");
    Ok(HtiesOutcome {
        delta: first.delta.with_values(delta)?,
        positive,
        negative,
        neither,
        both,
    })
}

pub fn hties_merge(sparsified: &[TaskVector], weights: &[f64], rho: f64, eps: f64) -> Result<FlatParams> {
    Ok(hties_merge_detailed(sparsified, weights, rho, eps)?.delta)
}

/// Classic TIES: trim each vector to its top `density` fraction by
/// magnitude, elect the sign with the larger total mass per dimension
/// (ties elect +), average the entries agreeing with it, scale by `lam`.
pub fn ties_merge_baseline(task_vectors: &[TaskVector], density: f64, lam: f64) -> Result<FlatParams> {
    let first = task_vectors
        .first()
        .ok_or_else(|| Error::InvalidArgument("no task vectors to merge".into()))?;
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!("density must be in (0, 1], got {density}")));
    }
    for t in task_vectors {
        t.delta.check_same_layout(&first.delta)?;
    }
    let trimmed: Vec<Vec<f64>> = task_vectors
        .iter()
        .map(|t| if density == 1.0 { t.values().to_vec() } else { trim(t.values(), density) })
        .collect();
    let dim = first.delta.dim();
    let mut out = vec![0.0; dim];
    for (d, o) in out.iter_mut().enumerate() {
        let (mut pos, mut neg) = (0.0, 0.0);
        for t in &trimmed {
            let v = t[d];
            if v > 0.0 {
                pos += v;
            } else {
                neg -= v;
            }
        }
        let elect_positive = pos >= neg;
        let (mut sum, mut count) = (0.0, 0usize);
        for t in &trimmed {
            let v = t[d];
            if (elect_positive && v > 0.0) || (!elect_positive && v < 0.0) {
                sum += v;
                count += 1;
            }
        }
        if count > 0 {
            *o = lam * (sum / count as f64);
        }
    }
    first.delta.with_values(out)
}

/// `Σ_k w_k φ_k`, accumulated in client order.
pub fn fedavg_merge(client_params: &[FlatParams], weights: &[f64]) -> Result<FlatParams> {
    let first = client_params
        .first()
        .ok_or_else(|| Error::InvalidArgument("no client models to average".into()))?;
    check_weights(weights, client_params.len())?;
    let mut acc = first.scale(weights[0]).into_values();
    for (p, &w) in client_params.iter().zip(weights).skip(1) {
        p.check_same_layout(first)?;
        for (a, v) in acc.iter_mut().zip(p.values()) {
            *a += w * v;
        }
    }
    first.with_values(acc)
}

/// `φ^(t) = φ^(t−1) + Δφ^(t)`.
pub fn apply_update(global_prev: &FlatParams, delta: &FlatParams) -> Result<FlatParams> {
    global_prev.add(delta)
}
