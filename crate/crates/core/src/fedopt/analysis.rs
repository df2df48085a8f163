use crate::error::{Error, Result};
use crate::params::{cosine, sign, FlatParams, TaskVector};

/// Server statistics for one round of task vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerAnalysis {
    /// Pairwise cosine similarity, K × K, unit diagonal.
    pub similarity: Vec<Vec<f64>>,
    /// `h_k = 1 − mean_{j≠k} max(0, S_kj)`.
    pub heterogeneity: Vec<f64>,
    /// Min-max normalized heterogeneity; all zero when the spread vanishes.
    pub heterogeneity_norm: Vec<f64>,
    /// Softmax of `Σ_{j≠k} |S_kj|`.
    pub weights: Vec<f64>,
    /// Per-dimension sign conflict `1 − |Σ_k sign(τ_k[d])| / K`.
    pub conflict: Vec<f64>,
    pub round: usize,
}

impl ServerAnalysis {
    /// Statistics for a single client, which has nobody to disagree with.
    pub fn single(dim: usize, round: usize) -> Self {
        Self {
            similarity: vec![vec![1.0]],
            heterogeneity: vec![0.0],
            heterogeneity_norm: vec![0.0],
            weights: vec![1.0],
            conflict: vec![0.0; dim],
            round,
        }
    }

    pub fn mean_conflict(&self) -> f64 {
        if self.conflict.is_empty() {
            return 0.0;
        }
        self.conflict.iter().sum::<f64>() / self.conflict.len() as f64
    }
}

/// Spread below which heterogeneity is treated as uniform.
const H_SPREAD_TOL: f64 = 1e-12;

/// Conflict score per dimension. A dimension no client moved has no
/// disagreement and scores 0.
pub fn conflict_scores(vectors: &[&[f64]]) -> Vec<f64> {
    let k = vectors.len();
    let dim = vectors.first().map_or(0, |v| v.len());
    (0..dim)
        .map(|d| {
            let mut sum = 0i64;
            let mut any = false;
            for v in vectors {
                let s = sign(v[d]);
                any |= s != 0;
                sum += i64::from(s);
            }
            if any {
                1.0 - sum.unsigned_abs() as f64 / k as f64
            } else {
                0.0
            }
        })
        .collect()
}

pub fn analyze_round(task_vectors: &[TaskVector], prev_global: &FlatParams) -> Result<ServerAnalysis> {
    let k = task_vectors.len();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("server analysis needs K ≥ 2 task vectors, got {k}")));
    }
    for tv in task_vectors {
        tv.delta.check_same_layout(prev_global)?;
    }
    let vals: Vec<&[f64]> = task_vectors.iter().map(|t| t.values()).collect();

    let mut similarity = vec![vec![0.0; k]; k];
    for i in 0..k {
        similarity[i][i] = 1.0;
        for j in i + 1..k {
            let s = cosine(vals[i], vals[j]);
            similarity[i][j] = s;
            similarity[j][i] = s;
        }
    }

    let peers = (k - 1) as f64;
    let heterogeneity: Vec<f64> = (0..k)
        .map(|i| {
            let mut acc = 0.0;
            for j in (0..k).filter(|&j| j != i) {
                acc += similarity[i][j].max(0.0);
            }
            1.0 - acc / peers
        })
        .collect();

    let h_min = heterogeneity.iter().copied().fold(f64::INFINITY, f64::min);
    let h_max = heterogeneity.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let heterogeneity_norm = if h_max - h_min <= H_SPREAD_TOL {
        vec![0.0; k]
    } else {
        heterogeneity.iter().map(|h| (h - h_min) / (h_max - h_min)).collect()
    };

    let consensus: Vec<f64> = (0..k)
        .map(|i| {
            let mut acc = 0.0;
            for j in (0..k).filter(|&j| j != i) {
                acc += similarity[i][j].abs();
            }
            acc
        })
        .collect();
    // exp(s − max) keeps the softmax finite for large K; the ratio is unchanged.
    let top = consensus.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = consensus.iter().map(|s| (s - top).exp()).collect();
    let z: f64 = exps.iter().sum();
    let weights = exps.iter().map(|e| e / z).collect();

    Ok(ServerAnalysis {
        similarity,
        heterogeneity,
        heterogeneity_norm,
        weights,
        conflict: conflict_scores(&vals),
        round: task_vectors[0].round,
    })
}

/// `clamp(r0 − δ·h_norm, 0, 1)`.
pub fn retention_rate(r0: f64, delta_adapt: f64, h_norm: f64) -> f64 {
    (r0 - delta_adapt * h_norm).clamp(0.0, 1.0)
}
