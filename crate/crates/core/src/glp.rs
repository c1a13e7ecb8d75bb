//! Gated local pooling: mask-gated feature selection, window pooling down
//! to the coarsest grid, and a per-token linear reduction to the shared
//! token width D.
//!
//! The gate is a single-channel sigmoid mask from a bottleneck convolution
//! block (1×1 reduce, 3×3 process, 1×1 project; GELU after the first two).
//! Full-reference mode gates the concatenation of distorted, reference and
//! absolute-difference features by a mask computed from the difference;
//! no-reference mode gates a ReLU feature branch by a mask computed from
//! the features themselves.

use crate::autodiff::{Graph, Var};
use crate::backbone::fan_in_uniform;
use crate::error::{Error, Result};
use crate::params::{bind, Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};
use rand_chacha::ChaCha8Rng;

/// Default bottleneck width of the mask branch.
pub const DEFAULT_MASK_HIDDEN: usize = 64;

/// Gate behavior toggles used by tests and ablations; the model always
/// runs with `GlpOptions::default()`.
#[derive(Debug, Clone, Copy, Default)]
pub struct GlpOptions {
    /// Bypass the learned gate with an all-ones mask.
    pub force_mask_one: bool,
    /// Replace window pooling with bilinear resize to the coarsest grid.
    pub resize_instead_of_pool: bool,
}

/// Token grid for one level with its retained coarse geometry.
#[derive(Debug, Clone)]
pub struct PooledFeature<T> {
    /// `(grid_h * grid_w) × D` token matrix.
    pub tokens: Tensor<T>,
    pub grid_h: usize,
    pub grid_w: usize,
}

/// Graph handles produced by one GLP application.
#[derive(Debug, Clone, Copy)]
pub struct GlpVars {
    /// `(H_n·W_n) × D` token matrix.
    pub tokens: Var,
    /// Sigmoid gate before pooling, `1 × H_i × W_i`.
    pub mask: Var,
}

fn name(level: usize, part: &str) -> String {
    format!("glp.l{level}.{part}")
}

fn register_mask_block<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    level: usize,
    in_ch: usize,
    hidden: usize,
) {
    let w1 = fan_in_uniform::<T>(rng, vec![hidden, in_ch, 1, 1], in_ch);
    store.insert(name(level, "mask.c1.w"), w1, false, true);
    store.insert(name(level, "mask.c1.b"), Tensor::zeros(vec![hidden]), false, false);
    let w2 = fan_in_uniform::<T>(rng, vec![hidden, hidden, 3, 3], hidden * 9);
    store.insert(name(level, "mask.c2.w"), w2, false, true);
    store.insert(name(level, "mask.c2.b"), Tensor::zeros(vec![hidden]), false, false);
    let w3 = fan_in_uniform::<T>(rng, vec![1, hidden, 1, 1], hidden);
    store.insert(name(level, "mask.c3.w"), w3, false, true);
    // zero final bias keeps the untrained gate at 0.5 everywhere
    store.insert(name(level, "mask.c3.b"), Tensor::zeros(vec![1]), false, false);
}

fn register_reducer<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    level: usize,
    in_dim: usize,
    token_dim: usize,
) {
    let w = fan_in_uniform::<T>(rng, vec![in_dim, token_dim], in_dim);
    store.insert(name(level, "reduce.w"), w, false, true);
    store.insert(name(level, "reduce.b"), Tensor::zeros(vec![token_dim]), false, false);
}

/// Registers full-reference GLP parameters for every level.
pub fn register_params_fr<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    channels: &[usize],
    token_dim: usize,
    hidden: usize,
) {
    for (idx, &c) in channels.iter().enumerate() {
        let level = idx + 1;
        register_mask_block(store, rng, level, c, hidden);
        register_reducer(store, rng, level, 3 * c, token_dim);
    }
}

/// Registers no-reference GLP parameters (adds the ReLU feature branch).
pub fn register_params_nr<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    channels: &[usize],
    token_dim: usize,
    hidden: usize,
) {
    for (idx, &c) in channels.iter().enumerate() {
        let level = idx + 1;
        register_mask_block(store, rng, level, c, hidden);
        let wf = fan_in_uniform::<T>(rng, vec![c, c, 1, 1], c);
        store.insert(name(level, "feat.w"), wf, false, true);
        store.insert(name(level, "feat.b"), Tensor::zeros(vec![c]), false, false);
        register_reducer(store, rng, level, c, token_dim);
    }
}

fn mask_block<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    level: usize,
    input: Var,
) -> Result<Var> {
    let c1 = graph.conv2d(
        input,
        bound.var(&name(level, "mask.c1.w")),
        Some(bound.var(&name(level, "mask.c1.b"))),
        1,
        0,
    )?;
    let a1 = graph.gelu(c1);
    let c2 = graph.conv2d(
        a1,
        bound.var(&name(level, "mask.c2.w")),
        Some(bound.var(&name(level, "mask.c2.b"))),
        1,
        1,
    )?;
    let a2 = graph.gelu(c2);
    let c3 = graph.conv2d(
        a2,
        bound.var(&name(level, "mask.c3.w")),
        Some(bound.var(&name(level, "mask.c3.b"))),
        1,
        0,
    )?;
    Ok(graph.sigmoid(c3))
}

/// Pooling window for `level` in an `n`-level pyramid; level n pools with
/// window 1, i.e. the identity.
pub fn pool_window(level: usize, levels: usize) -> usize {
    1 << (levels - level)
}

fn pool_and_reduce<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    gated: Var,
    level: usize,
    levels: usize,
    opts: GlpOptions,
) -> Result<Var> {
    let window = pool_window(level, levels);
    let pooled = if opts.resize_instead_of_pool {
        let shape = graph.value(gated).shape().to_vec();
        graph.bilinear_resize(gated, shape[1] / window, shape[2] / window)?
    } else {
        graph.window_avg_pool(gated, window)?
    };
    let tokens = graph.chw_to_tokens(pooled)?;
    graph.dense(
        tokens,
        bound.var(&name(level, "reduce.w")),
        bound.var(&name(level, "reduce.b")),
    )
}

fn force_one_mask<T: Scalar>(graph: &mut Graph<T>, like: Var) -> Var {
    let shape = graph.value(like).shape();
    let ones = Tensor::full(vec![1, shape[1], shape[2]], T::one());
    graph.constant(ones)
}

/// Full-reference GLP for one level.
pub fn glp_fr<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    f_dist: Var,
    f_ref: Var,
    level: usize,
    levels: usize,
    opts: GlpOptions,
) -> Result<GlpVars> {
    if graph.value(f_dist).shape() != graph.value(f_ref).shape() {
        return Err(Error::ShapeMismatch(format!(
            "glp_fr level {level}: {:?} vs {:?}",
            graph.value(f_dist).shape(),
            graph.value(f_ref).shape()
        )));
    }
    let diff = graph.sub(f_dist, f_ref)?;
    let diff = graph.abs(diff);
    let mask = if opts.force_mask_one {
        force_one_mask(graph, f_dist)
    } else {
        mask_block(graph, bound, level, diff)?
    };
    let cat = graph.concat_channels(&[f_dist, f_ref, diff])?;
    let gated = graph.mul_mask(mask, cat)?;
    let tokens = pool_and_reduce(graph, bound, gated, level, levels, opts)?;
    Ok(GlpVars { tokens, mask })
}

/// No-reference GLP for one level.
pub fn glp_nr<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    features: Var,
    level: usize,
    levels: usize,
    opts: GlpOptions,
) -> Result<GlpVars> {
    let mask = if opts.force_mask_one {
        force_one_mask(graph, features)
    } else {
        mask_block(graph, bound, level, features)?
    };
    let feat = graph.conv2d(
        features,
        bound.var(&name(level, "feat.w")),
        Some(bound.var(&name(level, "feat.b"))),
        1,
        0,
    )?;
    let feat = graph.relu(feat);
    let gated = graph.mul_mask(mask, feat)?;
    let tokens = pool_and_reduce(graph, bound, gated, level, levels, opts)?;
    Ok(GlpVars { tokens, mask })
}

/// Runs FR gating outside a training pass: returns the token grid and mask.
pub fn glp_fr_values<T: Scalar>(
    f_dist: &Tensor<T>,
    f_ref: &Tensor<T>,
    level: usize,
    levels: usize,
    store: &ParamStore<T>,
) -> Result<(PooledFeature<T>, Tensor<T>)> {
    let mut graph = Graph::new();
    let bound = bind(&mut graph, store, false);
    let fd = graph.constant(f_dist.clone());
    let fr = graph.constant(f_ref.clone());
    let out = glp_fr(&mut graph, &bound, fd, fr, level, levels, GlpOptions::default())?;
    let window = pool_window(level, levels);
    let shape = f_dist.shape();
    Ok((
        PooledFeature {
            tokens: graph.value(out.tokens).clone(),
            grid_h: shape[1] / window,
            grid_w: shape[2] / window,
        },
        graph.value(out.mask).clone(),
    ))
}

/// The sigmoid gate alone, before any pooling, for visualization.
pub fn export_mask_fr<T: Scalar>(
    f_dist: &Tensor<T>,
    f_ref: &Tensor<T>,
    level: usize,
    store: &ParamStore<T>,
) -> Result<Tensor<T>> {
    let mut graph = Graph::new();
    let bound = bind(&mut graph, store, false);
    let fd = graph.constant(f_dist.clone());
    let fr = graph.constant(f_ref.clone());
    let diff = graph.sub(fd, fr)?;
    let diff = graph.abs(diff);
    let mask = mask_block(&mut graph, &bound, level, diff)?;
    Ok(graph.value(mask).clone())
}

/// No-reference counterpart of [`export_mask_fr`].
pub fn export_mask_nr<T: Scalar>(
    features: &Tensor<T>,
    level: usize,
    store: &ParamStore<T>,
) -> Result<Tensor<T>> {
    let mut graph = Graph::new();
    let bound = bind(&mut graph, store, false);
    let f = graph.constant(features.clone());
    let mask = mask_block(&mut graph, &bound, level, f)?;
    Ok(graph.value(mask).clone())
}
