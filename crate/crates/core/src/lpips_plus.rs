//! Semantically re-weighted multi-scale perceptual metric.
//!
//! Per pyramid level, both feature maps are unit-normalized along the
//! channel axis and their squared distance is mapped to a similarity in
//! `[0, 1]`. A reference-feature activation map, bilinearly resized to
//! each level, acts as a spatial weight; the metric is the sum over
//! levels of the weighted spatial means. Needs no training.

use crate::backbone::FeaturePyramid;
use crate::error::{Error, Result};
use crate::metrics::srcc;
use crate::tensor::{bilinear_resize, Scalar, Tensor};

const NORM_EPS: f64 = 1e-10;

/// Map orientation: similarities (higher is better) by default, raw
/// unit-normalized squared distances on request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MapOrientation {
    #[default]
    Similarity,
    Distance,
}

/// One single-channel spatial quality map per pyramid level.
#[derive(Debug, Clone)]
pub struct QualityMapSet<T> {
    pub maps: Vec<Tensor<T>>,
    pub orientation: MapOrientation,
}

/// Non-negative single-channel weight map from reference features.
#[derive(Debug, Clone)]
pub struct SemanticWeightMap<T> {
    pub map: Tensor<T>,
    /// Set when rectification zeroed everything; consumers fall back to
    /// uniform weighting.
    pub degenerate: bool,
}

/// Per-level spatial quality maps from an aligned pyramid pair.
///
/// At each position the channel vectors are normalized to unit length and
/// compared by squared euclidean distance (0 for identical directions, 2
/// for orthogonal ones); similarity orientation maps distance d to
/// `clamp(1 - d, 0, 1)`.
#[allow(clippy::needless_range_loop)]
pub fn quality_maps<T: Scalar>(
    pyr_dist: &FeaturePyramid<T>,
    pyr_ref: &FeaturePyramid<T>,
    orientation: MapOrientation,
) -> Result<QualityMapSet<T>> {
    if pyr_dist.depth() != pyr_ref.depth() {
        return Err(Error::ShapeMismatch(format!(
            "pyramid depths differ: {} vs {}",
            pyr_dist.depth(),
            pyr_ref.depth()
        )));
    }
    let mut maps = Vec::with_capacity(pyr_dist.depth());
    for (fd, fr) in pyr_dist.levels.iter().zip(&pyr_ref.levels) {
        if fd.shape() != fr.shape() {
            return Err(Error::ShapeMismatch(format!(
                "pyramid level shapes differ: {:?} vs {:?}",
                fd.shape(),
                fr.shape()
            )));
        }
        let (c, h, w) = (fd.shape()[0], fd.shape()[1], fd.shape()[2]);
        let hw = h * w;
        let mut out = vec![T::zero(); hw];
        for p in 0..hw {
            let mut nd = 0.0;
            let mut nr = 0.0;
            for ci in 0..c {
                let a = fd.data()[ci * hw + p].as_f64();
                let b = fr.data()[ci * hw + p].as_f64();
                nd += a * a;
                nr += b * b;
            }
            let nd = nd.sqrt().max(NORM_EPS);
            let nr = nr.sqrt().max(NORM_EPS);
            let mut d = 0.0;
            for ci in 0..c {
                let a = fd.data()[ci * hw + p].as_f64() / nd;
                let b = fr.data()[ci * hw + p].as_f64() / nr;
                d += (a - b) * (a - b);
            }
            out[p] = T::from_f64(match orientation {
                MapOrientation::Similarity => (1.0 - d).clamp(0.0, 1.0),
                MapOrientation::Distance => d,
            });
        }
        maps.push(Tensor::new(vec![1, h, w], out)?);
    }
    Ok(QualityMapSet { maps, orientation })
}

/// Channel-mean rectified activation of one reference level, the rough
/// semantic saliency estimate used as the spatial weight.
#[allow(clippy::needless_range_loop)]
pub fn semantic_weight<T: Scalar>(
    pyr_ref: &FeaturePyramid<T>,
    layer: usize,
) -> Result<SemanticWeightMap<T>> {
    if layer == 0 || layer > pyr_ref.depth() {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} out of range 1..={}",
            pyr_ref.depth()
        )));
    }
    let f = pyr_ref.level(layer);
    let (c, h, w) = (f.shape()[0], f.shape()[1], f.shape()[2]);
    let hw = h * w;
    let mut out = vec![T::zero(); hw];
    let mut any_positive = false;
    for p in 0..hw {
        let mut acc = 0.0;
        for ci in 0..c {
            acc += f.data()[ci * hw + p].as_f64().max(0.0);
        }
        let v = acc / c as f64;
        if v > 0.0 {
            any_positive = true;
        }
        out[p] = T::from_f64(v);
    }
    Ok(SemanticWeightMap {
        map: Tensor::new(vec![1, h, w], out)?,
        degenerate: !any_positive,
    })
}

/// Metric evaluation result.
#[derive(Debug, Clone)]
pub struct LpipsPlusValue {
    /// Sum over levels of the weighted spatial means.
    pub value: f64,
    pub per_layer: Vec<f64>,
    /// True when the weight map was unusable and uniform weighting was
    /// substituted.
    pub uniform_fallback: bool,
}

/// Weighted multi-scale pooling of the quality maps: the weight map is
/// bilinearly resized to each level, each level contributes its weighted
/// mean, and the levels are summed. An all-zero weight map falls back to
/// uniform weights and flags the result.
pub fn lpips_plus<T: Scalar>(
    maps: &QualityMapSet<T>,
    weight: &SemanticWeightMap<T>,
) -> Result<LpipsPlusValue> {
    let mut per_layer = Vec::with_capacity(maps.maps.len());
    let mut fallback = weight.degenerate;
    for map in &maps.maps {
        let (h, w) = (map.shape()[1], map.shape()[2]);
        let term = if weight.degenerate {
            spatial_mean(map)
        } else {
            let resized = bilinear_resize(&weight.map, h, w)?;
            let denom: f64 = resized.iter().map(|v| v.as_f64()).sum();
            if denom <= 0.0 {
                fallback = true;
                spatial_mean(map)
            } else {
                let num: f64 = resized
                    .iter()
                    .zip(map.iter())
                    .map(|(&w, &s)| w.as_f64() * s.as_f64())
                    .sum();
                num / denom
            }
        };
        per_layer.push(term);
    }
    Ok(LpipsPlusValue {
        value: per_layer.iter().sum(),
        per_layer,
        uniform_fallback: fallback,
    })
}

fn spatial_mean<T: Scalar>(map: &Tensor<T>) -> f64 {
    map.iter().map(|v| v.as_f64()).sum::<f64>() / map.numel() as f64
}

/// Uniform-weight metric (the plain multi-scale mean), the layer-0
/// baseline of the sweep.
pub fn lpips_plus_uniform<T: Scalar>(maps: &QualityMapSet<T>) -> LpipsPlusValue {
    let per_layer: Vec<f64> = maps.maps.iter().map(spatial_mean).collect();
    LpipsPlusValue { value: per_layer.iter().sum(), per_layer, uniform_fallback: false }
}

/// One row of the layer-selection study.
#[derive(Debug, Clone)]
pub struct LayerSweepRow {
    /// 0 denotes the uniform-weight baseline.
    pub layer: usize,
    pub srcc: f64,
}

/// Evaluates the metric under every weight-layer choice (plus the uniform
/// baseline as layer 0) against MOS labels and reports rank correlation
/// per choice. `pairs` are aligned pyramid pairs (distorted, reference).
pub fn layer_sweep<T: Scalar>(
    pairs: &[(FeaturePyramid<T>, FeaturePyramid<T>)],
    mos: &[f64],
    orientation: MapOrientation,
) -> Result<Vec<LayerSweepRow>> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty dataset".into()));
    }
    if pairs.len() != mos.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} pairs vs {} labels",
            pairs.len(),
            mos.len()
        )));
    }
    let depth = pairs[0].0.depth();
    let map_sets: Vec<QualityMapSet<T>> = pairs
        .iter()
        .map(|(d, r)| quality_maps(d, r, orientation))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(depth + 1);
    let uniform: Vec<f64> = map_sets.iter().map(|m| lpips_plus_uniform(m).value).collect();
    rows.push(LayerSweepRow { layer: 0, srcc: srcc(&uniform, mos)? });
    for layer in 1..=depth {
        let values: Vec<f64> = pairs
            .iter()
            .zip(&map_sets)
            .map(|((_, pyr_ref), maps)| {
                let w = semantic_weight(pyr_ref, layer)?;
                Ok(lpips_plus(maps, &w)?.value)
            })
            .collect::<Result<_>>()?;
        rows.push(LayerSweepRow { layer, srcc: srcc(&values, mos)? });
    }
    Ok(rows)
}

/// Default weight layer when none is requested.
pub const DEFAULT_WEIGHT_LAYER: usize = 3;
