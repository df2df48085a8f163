//! Flat parameter vectors with a named-segment layout.
//!
//! Every model in the crate is viewed by the federated machinery as one
//! contiguous `f64` vector. The [`ParamLayout`] records which named tensor
//! occupies which range, so that compression and fusion can map dimensions
//! between a backbone and its proxy by segment name.
//!
//! Reductions (dot products, norms) always run left to right over the
//! dimension index so results are bit-reproducible.

use std::sync::Arc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

impl Segment {
    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len
    }
}

/// Ordered, contiguous, non-overlapping table of named segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total_dim: usize,
}

impl ParamLayout {
    /// Build a layout by packing `(name, len)` pairs back to back.
    pub fn packed<I, S>(parts: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, usize)>,
        S: Into<String>,
    {
        let mut offset = 0;
        let segments = parts
            .into_iter()
            .map(|(name, len)| {
                let seg = Segment {
                    name: name.into(),
                    offset,
                    len,
                };
                offset += len;
                seg
            })
            .collect();
        Self::from_segments(segments)
    }

    /// Validate an explicit segment table (e.g. one read from disk).
    pub fn from_segments(segments: Vec<Segment>) -> Result<Self> {
        let mut expected = 0usize;
        let mut seen = std::collections::HashSet::new();
        for seg in &segments {
            if seg.offset != expected {
                return Err(Error::Format(format!(
                    "segment '{}' starts at {} but previous segment ends at {}",
                    seg.name, seg.offset, expected
                )));
            }
            if !seen.insert(seg.name.as_str()) {
                return Err(Error::Format(format!("duplicate segment name '{}'", seg.name)));
            }
            expected = expected
                .checked_add(seg.len)
                .ok_or_else(|| Error::Format("segment table overflows".into()))?;
        }
        Ok(Self {
            segments,
            total_dim: expected,
        })
    }

    /// Single anonymous segment covering `dim` values.
    pub fn flat(dim: usize) -> Self {
        Self {
            segments: vec![Segment {
                name: "flat".into(),
                offset: 0,
                len: dim,
            }],
            total_dim: dim,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }
}

fn same_layout(a: &Arc<ParamLayout>, b: &Arc<ParamLayout>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// A model's parameters as one contiguous real vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl FlatParams {
    pub fn new(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total_dim() {
            return Err(Error::Dimension(format!(
                "{} values for a layout of {} dims",
                values.len(),
                layout.total_dim()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite value at dim {i}")));
        }
        Ok(Self { values, layout })
    }

    /// Wrap a plain vector in a single-segment layout.
    pub fn from_vec(values: Vec<f64>) -> Self {
        let layout = Arc::new(ParamLayout::flat(values.len()));
        Self::new(layout, values).expect("flat layout always matches")
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let values = vec![0.0; layout.total_dim()];
        Self { values, layout }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn segment_values(&self, name: &str) -> Option<&[f64]> {
        self.layout.segment(name).map(|s| &self.values[s.range()])
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.layout.clone(), values)
    }

    pub fn check_same_layout(&self, other: &FlatParams) -> Result<()> {
        if same_layout(&self.layout, &other.layout) {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "layouts differ ({} vs {} dims)",
                self.dim(),
                other.dim()
            )))
        }
    }

    pub fn dot(&self, other: &FlatParams) -> Result<f64> {
        self.check_same_layout(other)?;
        Ok(dot(&self.values, &other.values))
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.values, &self.values)
    }

    pub fn add(&self, other: &FlatParams) -> Result<FlatParams> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &FlatParams) -> Result<FlatParams> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, factor: f64) -> FlatParams {
        self.map(|v| v * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FlatParams {
        FlatParams {
            values: self.values.iter().map(|&v| f(v)).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn zip_with(&self, other: &FlatParams, f: impl Fn(f64, f64) -> f64) -> Result<FlatParams> {
        self.check_same_layout(other)?;
        Ok(FlatParams {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            layout: self.layout.clone(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity on raw slices; zero if either vector has zero norm.
pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na2 = dot(a, a);
    let nb2 = dot(b, b);
    if na2 == 0.0 || nb2 == 0.0 {
        return 0.0;
    }
    // sqrt(x·x) rounds back to x, so cos(a, a) is exactly 1.
    (dot(a, b) / (na2 * nb2).sqrt()).clamp(-1.0, 1.0)
}

/// Cosine similarity of two parameter vectors.
///
/// Returns 0 when either vector is exactly zero, so a client that did not
/// move contributes neutral consensus to the server statistics.
pub fn cosine_similarity(a: &FlatParams, b: &FlatParams) -> Result<f64> {
    a.check_same_layout(b)?;
    Ok(cosine(&a.values, &b.values))
}

/// Exact sign per entry: -1, 0 or +1. No dead zone.
pub fn signs(p: &FlatParams) -> Vec<i8> {
    p.values.iter().map(|&v| sign(v)).collect()
}

#[inline]
pub(crate) fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Indicator vector over the dimensions of a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceMask {
    keep: Vec<bool>,
    layout: Arc<ParamLayout>,
}

impl SubspaceMask {
    pub fn new(layout: Arc<ParamLayout>, keep: Vec<bool>) -> Result<Self> {
        if keep.len() != layout.total_dim() {
            return Err(Error::Dimension(format!(
                "mask of {} entries for a layout of {} dims",
                keep.len(),
                layout.total_dim()
            )));
        }
        Ok(Self { keep, layout })
    }

    pub fn from_dims(layout: Arc<ParamLayout>, dims: &[usize]) -> Result<Self> {
        let mut keep = vec![false; layout.total_dim()];
        for &d in dims {
            *keep.get_mut(d).ok_or_else(|| {
                Error::Dimension(format!("mask dim {d} out of range {}", layout.total_dim()))
            })? = true;
        }
        Ok(Self { keep, layout })
    }

    pub fn all(layout: Arc<ParamLayout>) -> Self {
        let keep = vec![true; layout.total_dim()];
        Self { keep, layout }
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }

    /// Fraction of dimensions outside the mask.
    pub fn removed_fraction(&self) -> f64 {
        if self.keep.is_empty() {
            return 0.0;
        }
        (self.keep.len() - self.kept()) as f64 / self.keep.len() as f64
    }

    pub fn complement(&self) -> SubspaceMask {
        SubspaceMask {
            keep: self.keep.iter().map(|k| !k).collect(),
            layout: self.layout.clone(),
        }
    }
}

/// Keep entries inside the mask (or, with `keep_inside = false`, its
/// complement) and zero the rest.
pub fn masked_project(p: &FlatParams, mask: &SubspaceMask, keep_inside: bool) -> Result<FlatParams> {
    if !same_layout(&p.layout, &mask.layout) {
        return Err(Error::Dimension("mask layout differs from parameter layout".into()));
    }
    let values = p
        .values
        .iter()
        .zip(&mask.keep)
        .map(|(&v, &k)| if k == keep_inside { v } else { 0.0 })
        .collect();
    Ok(FlatParams {
        values,
        layout: p.layout.clone(),
    })
}

/// A client's update relative to the round-start global model.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    pub delta: FlatParams,
    pub client_id: usize,
    pub round: usize,
}

impl TaskVector {
    pub fn between(trained: &FlatParams, global: &FlatParams, client_id: usize, round: usize) -> Result<Self> {
        Ok(Self {
            delta: trained.sub(global)?,
            client_id,
            round,
        })
    }

    pub fn values(&self) -> &[f64] {
        self.delta.values()
    }
}
