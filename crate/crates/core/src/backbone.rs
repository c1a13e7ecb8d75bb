//! Small convolutional feature extractor with a dyadic pyramid schedule.
//!
//! Each level halves the spatial extents with a stride-2 convolution and
//! refines with residual 3×3 convolutions under GELU; there are no
//! normalization layers, so a frozen backbone is exactly reproducible.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{bind, Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Backbone hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    /// Pyramid depth n; level i halves the input i times.
    pub levels: usize,
    /// Channel width per level, length must equal `levels`.
    pub channels: Vec<usize>,
    /// Residual refinement convolutions per level.
    pub blocks: usize,
    /// Frozen backbones receive no gradient and are never updated.
    pub freeze: bool,
}

impl BackboneConfig {
    pub fn new(channels: Vec<usize>) -> Self {
        Self {
            levels: channels.len(),
            channels,
            blocks: 1,
            freeze: false,
        }
    }

    /// Default widths keep a desk-scale runtime while preserving the
    /// increasing-width structure of the usual pretrained stages.
    pub fn default_five_level() -> Self {
        Self::new(vec![16, 32, 64, 96, 128])
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels < 2 {
            return Err(Error::InvalidArgument(format!(
                "backbone needs at least 2 levels, got {}",
                self.levels
            )));
        }
        if self.channels.len() != self.levels {
            return Err(Error::InvalidArgument(format!(
                "channel list length {} does not match {} levels",
                self.channels.len(),
                self.levels
            )));
        }
        if self.blocks == 0 {
            return Err(Error::InvalidArgument("blocks must be positive".into()));
        }
        if self.channels.contains(&0) {
            return Err(Error::InvalidArgument("channel widths must be positive".into()));
        }
        Ok(())
    }
}

/// Per-level feature maps F_1..F_n with H_i = H / 2^i.
#[derive(Debug, Clone)]
pub struct FeaturePyramid<T> {
    pub levels: Vec<Tensor<T>>,
}

impl<T: Scalar> FeaturePyramid<T> {
    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Level by 1-based index, matching the schedule notation.
    pub fn level(&self, i: usize) -> &Tensor<T> {
        &self.levels[i - 1]
    }
}

/// Fan-in-scaled uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub(crate) fn fan_in_uniform<T: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: Vec<usize>,
    fan_in: usize,
) -> Tensor<T> {
    let limit = 1.0 / (fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<T> = (0..numel)
        .map(|_| T::from_f64((rng.gen::<f64>() * 2.0 - 1.0) * limit))
        .collect();
    Tensor::new(shape, data).expect("init shape")
}

fn weight_name(level: usize, part: &str, what: &str) -> String {
    format!("backbone.l{level}.{part}.{what}")
}

/// Registers all backbone parameters. Draw order is fixed so seeded
/// initialization is reproducible.
pub fn register_params<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    cfg: &BackboneConfig,
) {
    let mut in_ch = 3;
    for (idx, &out_ch) in cfg.channels.iter().enumerate() {
        let level = idx + 1;
        let w = fan_in_uniform::<T>(rng, vec![out_ch, in_ch, 3, 3], in_ch * 9);
        store.insert(weight_name(level, "down", "w"), w, cfg.freeze, true);
        store.insert(
            weight_name(level, "down", "b"),
            Tensor::zeros(vec![out_ch]),
            cfg.freeze,
            false,
        );
        for blk in 0..cfg.blocks {
            let w = fan_in_uniform::<T>(rng, vec![out_ch, out_ch, 3, 3], out_ch * 9);
            store.insert(weight_name(level, &format!("res{blk}"), "w"), w, cfg.freeze, true);
            store.insert(
                weight_name(level, &format!("res{blk}"), "b"),
                Tensor::zeros(vec![out_ch]),
                cfg.freeze,
                false,
            );
        }
        in_ch = out_ch;
    }
}

fn check_image_extents(shape: &[usize], levels: usize) -> Result<(usize, usize)> {
    let (c, h, w) = match shape {
        [c, h, w] => (*c, *h, *w),
        other => {
            return Err(Error::ShapeMismatch(format!(
                "backbone expects a 3×H×W image, got {other:?}"
            )))
        }
    };
    if c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "backbone expects 3 input channels, got {c}"
        )));
    }
    let factor = 1usize << levels;
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "input extents {h}×{w} not divisible by 2^{levels}"
        )));
    }
    Ok((h, w))
}

/// Builds the pyramid inside an existing graph; returns one Var per level.
pub fn extract_vars<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    image: Var,
    cfg: &BackboneConfig,
) -> Result<Vec<Var>> {
    cfg.validate()?;
    check_image_extents(graph.value(image).shape(), cfg.levels)?;
    let mut levels = Vec::with_capacity(cfg.levels);
    let mut x = image;
    for level in 1..=cfg.levels {
        let w = bound.var(&weight_name(level, "down", "w"));
        let b = bound.var(&weight_name(level, "down", "b"));
        x = graph.conv2d(x, w, Some(b), 2, 1)?;
        x = graph.gelu(x);
        for blk in 0..cfg.blocks {
            let w = bound.var(&weight_name(level, &format!("res{blk}"), "w"));
            let b = bound.var(&weight_name(level, &format!("res{blk}"), "b"));
            let conv = graph.conv2d(x, w, Some(b), 1, 1)?;
            let act = graph.gelu(conv);
            x = graph.add(x, act)?;
        }
        levels.push(x);
    }
    Ok(levels)
}

/// Runs the extractor outside any training pass and returns plain tensors.
pub fn extract_pyramid<T: Scalar>(
    image: &Tensor<T>,
    cfg: &BackboneConfig,
    store: &ParamStore<T>,
) -> Result<FeaturePyramid<T>> {
    let mut graph = Graph::new();
    let bound = bind(&mut graph, store, false);
    let img = graph.constant(image.clone());
    let vars = extract_vars(&mut graph, &bound, img, cfg)?;
    Ok(FeaturePyramid {
        levels: vars.into_iter().map(|v| graph.value(v).clone()).collect(),
    })
}

/// Extracts both pyramids of a pair with the same (shared) parameters.
pub fn extract_pair<T: Scalar>(
    distorted: &Tensor<T>,
    reference: &Tensor<T>,
    cfg: &BackboneConfig,
    store: &ParamStore<T>,
) -> Result<(FeaturePyramid<T>, FeaturePyramid<T>)> {
    if distorted.shape() != reference.shape() {
        return Err(Error::ShapeMismatch(format!(
            "pair shapes differ: {:?} vs {:?}",
            distorted.shape(),
            reference.shape()
        )));
    }
    Ok((
        extract_pyramid(distorted, cfg, store)?,
        extract_pyramid(reference, cfg, store)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn toy_store(cfg: &BackboneConfig, seed: u64) -> ParamStore<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        register_params(&mut store, &mut rng, cfg);
        store
    }

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..3 * h * w).map(|_| rng.gen::<f64>()).collect();
        Tensor::new(vec![3, h, w], data).unwrap()
    }

    #[test]
    fn dyadic_schedule_holds() {
        // 64x64 with n=3 -> (C1,32,32), (C2,16,16), (C3,8,8)
        let cfg = BackboneConfig::new(vec![4, 6, 8]);
        let store = toy_store(&cfg, 1);
        let img = random_image(64, 64, 2);
        let pyr = extract_pyramid(&img, &cfg, &store).unwrap();
        assert_eq!(pyr.level(1).shape(), &[4, 32, 32]);
        assert_eq!(pyr.level(2).shape(), &[6, 16, 16]);
        assert_eq!(pyr.level(3).shape(), &[8, 8, 8]);
    }

    #[test]
    fn five_level_schedule_on_224() {
        let cfg = BackboneConfig::default_five_level();
        let store: ParamStore<f32> = {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let mut store = ParamStore::new();
            register_params(&mut store, &mut rng, &cfg);
            store
        };
        let img = Tensor::<f32>::zeros(vec![3, 224, 224]);
        let pyr = extract_pyramid(&img, &cfg, &store).unwrap();
        let expect = [(16, 112), (32, 56), (64, 28), (96, 14), (128, 7)];
        for (i, (c, s)) in expect.iter().enumerate() {
            assert_eq!(pyr.levels[i].shape(), &[*c, *s, *s]);
        }
    }

    #[test]
    fn indivisible_extents_rejected() {
        let cfg = BackboneConfig::new(vec![4, 6, 8]);
        let store = toy_store(&cfg, 1);
        let img = random_image(60, 64, 2);
        assert!(matches!(
            extract_pyramid(&img, &cfg, &store),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn pair_shares_weights_bitwise() {
        let cfg = BackboneConfig::new(vec![4, 6]);
        let store = toy_store(&cfg, 3);
        let a = random_image(16, 16, 4);
        let b = random_image(16, 16, 5);
        let (pa, pb) = extract_pair(&a, &b, &cfg, &store).unwrap();
        let solo = extract_pyramid(&a, &cfg, &store).unwrap();
        for (x, y) in pa.levels.iter().zip(&solo.levels) {
            assert_eq!(x.data(), y.data());
        }
        // swapped arguments swap the outputs
        let (qa, qb) = extract_pair(&b, &a, &cfg, &store).unwrap();
        for (x, y) in qa.levels.iter().zip(&pb.levels) {
            assert_eq!(x.data(), y.data());
        }
        for (x, y) in qb.levels.iter().zip(&pa.levels) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn identical_inputs_identical_pyramids() {
        let cfg = BackboneConfig::new(vec![4, 6]);
        let store = toy_store(&cfg, 3);
        let a = random_image(16, 16, 9);
        let (pa, pb) = extract_pair(&a, &a, &cfg, &store).unwrap();
        for (x, y) in pa.levels.iter().zip(&pb.levels) {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn frozen_backbone_gets_zero_gradient() {
        let mut cfg = BackboneConfig::new(vec![3, 4]);
        cfg.freeze = true;
        let store = toy_store(&cfg, 7);
        let img = random_image(16, 16, 8);

        let mut graph = Graph::new();
        let bound = bind(&mut graph, &store, true);
        let x = graph.constant(img);
        let levels = extract_vars(&mut graph, &bound, x, &cfg).unwrap();
        let top = *levels.last().unwrap();
        let loss = graph.mean_all(top);
        graph.backward(loss).unwrap();
        for name in store.names() {
            let g = graph.grad(bound.var(name));
            assert!(
                g.is_none() || g.unwrap().iter().all(|&v| v == 0.0),
                "frozen parameter '{name}' accumulated gradient"
            );
        }
    }
}
