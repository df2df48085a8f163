//! Depth compression of a backbone into a proxy by block influence.
//!
//! A block's influence is one minus the mean cosine similarity between the
//! residual stream entering and leaving it, over public samples. Blocks
//! with the highest influence are retained; the rest are dropped. The head
//! is always retained.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{forward, forward_with_trace, Architecture, ResidualStack, TaskSpec};
use crate::params::{cosine, norm, FlatParams, ParamLayout, SubspaceMask};

#[derive(Debug, Clone, PartialEq)]
pub struct BlockInfluenceReport {
    pub scores: Vec<f64>,
    pub samples_used: usize,
    pub dataset_id: String,
}

impl BlockInfluenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("block_index,bi_score\n");
        for (i, v) in self.scores.iter().enumerate() {
            s.push_str(&format!("{i},{v:.17e}\n"));
        }
        s
    }
}

/// Influence scores from a precomputed trace of `n × width` hidden states.
/// Rows where either state is exactly zero count as unchanged (cosine 1).
pub fn block_influence_from_trace(hidden: &[Vec<f64>], n: usize, width: usize) -> Vec<f64> {
    let mut degenerate = 0usize;
    let scores = hidden
        .windows(2)
        .map(|pair| {
            let mut sum = 0.0;
            for r in 0..n {
                let a = &pair[0][r * width..(r + 1) * width];
                let b = &pair[1][r * width..(r + 1) * width];
                if norm(a) == 0.0 || norm(b) == 0.0 {
                    degenerate += 1;
                    sum += 1.0;
                } else {
                    sum += cosine(a, b);
                }
            }
            1.0 - sum / n as f64
        })
        .collect();
    if degenerate > 0 {
        log::warn!("block influence: {degenerate} zero hidden-state rows treated as unchanged");
    }
    scores
}

pub fn block_influence(
    model: &ResidualStack,
    public_task: &TaskSpec,
    n_samples: usize,
    stream: u64,
) -> Result<BlockInfluenceReport> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("block influence needs at least one sample".into()));
    }
    let batch = public_task.sample(n_samples, stream)?;
    let trace = forward_with_trace(model, &batch)?;
    Ok(BlockInfluenceReport {
        scores: block_influence_from_trace(&trace.hidden, batch.n, model.arch().width),
        samples_used: batch.n,
        dataset_id: format!("public:{:016x}/{}", public_task.seed, stream),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneMask {
    pub keep_block: Vec<bool>,
    pub kappa: f64,
}

impl PruneMask {
    pub fn retained(&self) -> Vec<usize> {
        self.keep_block
            .iter()
            .enumerate()
            .filter_map(|(i, &k)| k.then_some(i))
            .collect()
    }
}

/// Number of blocks kept at compression ratio `kappa`: ⌈(1−κ)·B⌉.
pub fn retained_count(blocks: usize, kappa: f64) -> usize {
    let exact = (1.0 - kappa) * blocks as f64;
    // Absorb representation error so that e.g. κ = 0.3, B = 10 keeps 7.
    (exact - 1e-9).ceil().max(0.0) as usize
}

/// Retain the ⌈(1−κ)·B⌉ blocks with the highest influence; ties keep the
/// lower block index.
pub fn select_mask(report: &BlockInfluenceReport, kappa: f64) -> Result<PruneMask> {
    if !(0.0..1.0).contains(&kappa) {
        return Err(Error::InvalidArgument(format!("compression ratio must be in [0, 1), got {kappa}")));
    }
    if report.scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite block influence score".into()));
    }
    let b = report.scores.len();
    let keep = retained_count(b, kappa);
    if keep == 0 {
        return Err(Error::InvalidArgument(format!("κ = {kappa} retains no blocks out of {b}")));
    }
    let mut order: Vec<usize> = (0..b).collect();
    order.sort_by(|&i, &j| report.scores[j].total_cmp(&report.scores[i]).then(i.cmp(&j)));
    let mut keep_block = vec![false; b];
    for &i in &order[..keep] {
        keep_block[i] = true;
    }
    Ok(PruneMask { keep_block, kappa })
}

/// Segment-level map from proxy parameters to backbone parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Correspondence {
    proxy: Arc<ParamLayout>,
    backbone: Arc<ParamLayout>,
    /// `(proxy segment index, backbone segment index)`.
    pairs: Vec<(usize, usize)>,
}

impl Correspondence {
    pub fn new(proxy: Arc<ParamLayout>, backbone: Arc<ParamLayout>, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut proxy_seen = vec![false; proxy.segments().len()];
        let mut backbone_seen = vec![false; backbone.segments().len()];
        for &(p, b) in &pairs {
            let ps = proxy
                .segments()
                .get(p)
                .ok_or_else(|| Error::Dimension(format!("proxy segment {p} out of range")))?;
            let bs = backbone
                .segments()
                .get(b)
                .ok_or_else(|| Error::Dimension(format!("backbone segment {b} out of range")))?;
            if ps.len != bs.len {
                return Err(Error::Dimension(format!(
                    "'{}' ({}) cannot map onto '{}' ({})",
                    ps.name, ps.len, bs.name, bs.len
                )));
            }
            if std::mem::replace(&mut proxy_seen[p], true) || std::mem::replace(&mut backbone_seen[b], true) {
                return Err(Error::Dimension("correspondence is not injective".into()));
            }
        }
        if let Some(p) = proxy_seen.iter().position(|s| !s) {
            return Err(Error::Dimension(format!(
                "proxy segment '{}' has no backbone counterpart",
                proxy.segments()[p].name
            )));
        }
        Ok(Self { proxy, backbone, pairs })
    }

    pub fn identity(layout: Arc<ParamLayout>) -> Self {
        let pairs = (0..layout.segments().len()).map(|i| (i, i)).collect();
        Self {
            proxy: layout.clone(),
            backbone: layout,
            pairs,
        }
    }

    pub fn proxy_layout(&self) -> &Arc<ParamLayout> {
        &self.proxy
    }

    pub fn backbone_layout(&self) -> &Arc<ParamLayout> {
        &self.backbone
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Backbone dimension of every proxy dimension.
    pub fn dim_map(&self) -> Vec<usize> {
        let mut map = vec![0; self.proxy.total_dim()];
        for &(p, b) in &self.pairs {
            let ps = &self.proxy.segments()[p];
            let bs = &self.backbone.segments()[b];
            for k in 0..ps.len {
                map[ps.offset + k] = bs.offset + k;
            }
        }
        map
    }

    /// Backbone dimensions covered by the proxy.
    pub fn backbone_mask(&self) -> SubspaceMask {
        let mut keep = vec![false; self.backbone.total_dim()];
        for d in self.dim_map() {
            keep[d] = true;
        }
        SubspaceMask::new(self.backbone.clone(), keep).expect("sized from layout")
    }

    /// Fraction of backbone parameters with no proxy counterpart,
    /// `1 − |φ|/|θ|`.
    pub fn alpha(&self) -> f64 {
        1.0 - self.proxy.total_dim() as f64 / self.backbone.total_dim() as f64
    }

    pub(crate) fn check_backbone(&self, p: &FlatParams) -> Result<()> {
        if **p.layout() != *self.backbone {
            return Err(Error::Dimension("parameters do not match the correspondence backbone layout".into()));
        }
        Ok(())
    }

    pub(crate) fn check_proxy(&self, p: &FlatParams) -> Result<()> {
        if **p.layout() != *self.proxy {
            return Err(Error::Dimension("parameters do not match the correspondence proxy layout".into()));
        }
        Ok(())
    }

    /// Read the proxy-shaped sub-vector out of backbone parameters.
    pub fn gather(&self, backbone: &FlatParams) -> Result<FlatParams> {
        self.check_backbone(backbone)?;
        let src = backbone.values();
        let values = self.dim_map().into_iter().map(|d| src[d]).collect();
        FlatParams::new(self.proxy.clone(), values)
    }
}

/// Build the proxy network from the retained blocks and the head.
/// Proxy parameters are bit-identical to the backbone at extraction.
pub fn extract_proxy(model: &ResidualStack, mask: &PruneMask) -> Result<(ResidualStack, Correspondence)> {
    let arch = model.arch();
    if mask.keep_block.len() != arch.blocks {
        return Err(Error::Dimension(format!(
            "mask covers {} blocks, model has {}",
            mask.keep_block.len(),
            arch.blocks
        )));
    }
    let retained = mask.retained();
    if retained.is_empty() {
        return Err(Error::InvalidArgument("mask retains no blocks".into()));
    }
    let proxy_arch = Architecture {
        blocks: retained.len(),
        ..arch
    };
    let proxy_layout = Arc::new(proxy_arch.layout());
    let backbone_layout = model.params().layout().clone();
    let mut pairs = Vec::with_capacity(proxy_layout.segments().len());
    for (p_idx, seg) in proxy_layout.segments().iter().enumerate() {
        let backbone_name = match seg.name.strip_prefix("blocks.") {
            Some(rest) => {
                let (j, tensor) = rest.split_once('.').expect("block segment names are blocks.{i}.{t}");
                let j: usize = j.parse().expect("numeric block index");
                format!("blocks.{}.{tensor}", retained[j])
            }
            None => seg.name.clone(),
        };
        let b_idx = backbone_layout
            .index_of(&backbone_name)
            .ok_or_else(|| Error::Dimension(format!("backbone lacks segment '{backbone_name}'")))?;
        pairs.push((p_idx, b_idx));
    }
    let corr = Correspondence::new(proxy_layout, backbone_layout, pairs)?;
    let proxy_params = corr.gather(model.params())?;
    let proxy = ResidualStack::new(proxy_arch, model.embedding().clone(), proxy_params)?;
    Ok((proxy, corr))
}

/// Empirical compression distortion
/// `max_x ‖f_φ(x) − f_{θ|φ}(x)‖ / max(‖f_θ(x)‖, 1e−12)`, where `f_{θ|φ}` is
/// the backbone's retained-block sub-network carrying the backbone's own
/// parameter values.
pub fn estimate_distortion(
    backbone: &ResidualStack,
    proxy: &ResidualStack,
    corr: &Correspondence,
    task: &TaskSpec,
    n_samples: usize,
    stream: u64,
) -> Result<f64> {
    corr.check_proxy(proxy.params())?;
    let sub = proxy.with_params(corr.gather(backbone.params())?)?;
    let batch = task.sample(n_samples, stream)?;
    let f_proxy = forward(proxy, &batch)?;
    let f_sub = forward(&sub, &batch)?;
    let f_full = forward(backbone, &batch)?;
    let od = backbone.arch().out_dim;
    let mut eta: f64 = 0.0;
    for r in 0..batch.n {
        let rows = r * od..(r + 1) * od;
        let diff: Vec<f64> = f_proxy[rows.clone()]
            .iter()
            .zip(&f_sub[rows.clone()])
            .map(|(a, b)| a - b)
            .collect();
        eta = eta.max(norm(&diff) / norm(&f_full[rows]).max(1e-12));
    }
    Ok(eta)
}
