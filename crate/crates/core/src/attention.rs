//! Scaled dot-product attention and the blocks built from it:
//! per-level self-attention, cross-scale attention where coarse tokens
//! query fine tokens, the top-down chain over all levels, the shared
//! learnable position encoding, and the attention-pooled score head.

use crate::autodiff::{Graph, Var};
use crate::backbone::fan_in_uniform;
use crate::error::{Error, Result};
use crate::params::{bind, Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Score head output arity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Single scalar prediction.
    Scalar,
    /// Probability vector over K ordered score bins.
    Distribution(usize),
}

impl HeadKind {
    pub fn out_dim(&self) -> usize {
        match self {
            HeadKind::Scalar => 1,
            HeadKind::Distribution(k) => *k,
        }
    }
}

/// Attention application with its row-stochastic weight matrices exposed
/// (one per head).
#[derive(Debug, Clone)]
pub struct AttnVars {
    pub out: Var,
    pub weights: Vec<Var>,
}

/// `softmax(Q Kᵀ / sqrt(d_k)) V` with optional even head splitting.
///
/// Q is `[N_q, D]`, K `[N_v, D]`, V `[N_v, D_v]`; every output row is a
/// convex combination of V rows.
pub fn scaled_dot_attention<T: Scalar>(
    graph: &mut Graph<T>,
    q: Var,
    k: Var,
    v: Var,
    heads: usize,
) -> Result<AttnVars> {
    let (nq, dk) = dims2(graph.value(q).shape(), "attention query")?;
    let (nv, dk2) = dims2(graph.value(k).shape(), "attention key")?;
    let (nv2, dv) = dims2(graph.value(v).shape(), "attention value")?;
    if dk != dk2 {
        return Err(Error::ShapeMismatch(format!(
            "query width {dk} != key width {dk2}"
        )));
    }
    if nv != nv2 {
        return Err(Error::ShapeMismatch(format!(
            "key rows {nv} != value rows {nv2}"
        )));
    }
    if heads == 0 || dk % heads != 0 || dv % heads != 0 {
        return Err(Error::InvalidArgument(format!(
            "head count {heads} must divide widths {dk} and {dv}"
        )));
    }
    let _ = nq;
    let head_dk = dk / heads;
    let head_dv = dv / heads;
    let scale = T::from_f64(1.0 / (head_dk as f64).sqrt());

    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                graph.slice_cols(q, h * head_dk, head_dk)?,
                graph.slice_cols(k, h * head_dk, head_dk)?,
                graph.slice_cols(v, h * head_dv, head_dv)?,
            )
        };
        let kt = graph.transpose(kh)?;
        let logits = graph.matmul(qh, kt)?;
        let scaled = graph.scale(logits, scale);
        let w = graph.softmax(scaled, 1)?;
        let out = graph.matmul(w, vh)?;
        outs.push(out);
        weights.push(w);
    }
    let out = if heads == 1 {
        outs[0]
    } else {
        graph.concat_cols(&outs)?
    };
    Ok(AttnVars { out, weights })
}

fn dims2(shape: &[usize], what: &str) -> Result<(usize, usize)> {
    match shape {
        [n, d] => Ok((*n, *d)),
        other => Err(Error::ShapeMismatch(format!(
            "{what} must be 2-D, got {other:?}"
        ))),
    }
}

fn proj(prefix: &str, which: &str) -> String {
    format!("{prefix}.{which}")
}

/// Registers the three D→D projection maps of one attention block.
pub fn register_projections<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    dim: usize,
) {
    for which in ["wq", "wk", "wv"] {
        let w = fan_in_uniform::<T>(rng, vec![dim, dim], dim);
        store.insert(proj(prefix, which), w, false, true);
    }
}

fn project<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    prefix: &str,
    x: Var,
) -> Result<(Var, Var, Var)> {
    let q = graph.matmul(x, bound.var(&proj(prefix, "wq")))?;
    let k = graph.matmul(x, bound.var(&proj(prefix, "wk")))?;
    let v = graph.matmul(x, bound.var(&proj(prefix, "wv")))?;
    Ok((q, k, v))
}

/// Self-attention with residual: `Attn(G Wq, G Wk, G Wv) + G`.
pub fn sa_block<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    prefix: &str,
    tokens: Var,
    heads: usize,
) -> Result<AttnVars> {
    let (q, k, v) = project(graph, bound, prefix, tokens)?;
    let attn = scaled_dot_attention(graph, q, k, v, heads)?;
    let out = graph.add(attn.out, tokens)?;
    Ok(AttnVars { out, weights: attn.weights })
}

/// Cross-scale attention: coarse tokens query fine tokens, the residual
/// keeps the coarse operand.
pub fn csa_block<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    prefix: &str,
    fine: Var,
    coarse: Var,
    heads: usize,
) -> Result<AttnVars> {
    if graph.value(fine).shape() != graph.value(coarse).shape() {
        return Err(Error::ShapeMismatch(format!(
            "cross-scale operands differ: {:?} vs {:?}",
            graph.value(fine).shape(),
            graph.value(coarse).shape()
        )));
    }
    let q = graph.matmul(coarse, bound.var(&proj(prefix, "wq")))?;
    let k = graph.matmul(fine, bound.var(&proj(prefix, "wk")))?;
    let v = graph.matmul(fine, bound.var(&proj(prefix, "wv")))?;
    let attn = scaled_dot_attention(graph, q, k, v, heads)?;
    let out = graph.add(attn.out, coarse)?;
    Ok(AttnVars { out, weights: attn.weights })
}

/// Progressive top-down fusion: starting from the coarsest enhanced level,
/// each step queries the next finer level. Returns the final tokens plus
/// the per-step attention weights, ordered from the coarsest pair
/// (between levels n and n-1) down to the finest (levels 2 and 1).
pub fn csa_chain<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    enhanced: &[Var],
    heads: usize,
) -> Result<(Var, Vec<Vec<Var>>)> {
    let n = enhanced.len();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "cross-scale chain needs at least 2 levels, got {n}"
        )));
    }
    let mut acc = enhanced[n - 1];
    let mut weights = Vec::with_capacity(n - 1);
    for i in (1..n).rev() {
        // pair index i fuses level i (fine) with level i+1 (coarse)
        let out = csa_block(graph, bound, &format!("csa.p{i}"), enhanced[i - 1], acc, heads)?;
        acc = out.out;
        weights.push(out.weights);
    }
    Ok((acc, weights))
}

/// Registers one SA block per level and one CSA block per adjacent pair.
pub fn register_level_attention<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    levels: usize,
    dim: usize,
) {
    for i in 1..=levels {
        register_projections(store, rng, &format!("sa.l{i}"), dim);
    }
    for i in 1..levels {
        register_projections(store, rng, &format!("csa.p{i}"), dim);
    }
}

pub const POS_ENCODING: &str = "pos.enc";

/// One learnable `[tokens, D]` offset shared by every level; initialized
/// to zero and excluded from weight decay.
pub fn register_position_encoding<T: Scalar>(store: &mut ParamStore<T>, tokens: usize, dim: usize) {
    store.insert(POS_ENCODING, Tensor::zeros(vec![tokens, dim]), false, false);
}

/// Adds the shared position encoding to every level's tokens, once,
/// between pooling and the self-attention blocks.
pub fn add_position_encoding<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    levels: &[Var],
) -> Result<Vec<Var>> {
    let pe = bound.var(POS_ENCODING);
    levels.iter().map(|&l| graph.add(l, pe)).collect()
}

/// Registers the attention-pooled MLP head: one SA block with its own
/// projections, then D→D GELU→K with a zero-initialized final bias.
pub fn register_head<T: Scalar>(
    store: &mut ParamStore<T>,
    rng: &mut ChaCha8Rng,
    dim: usize,
    kind: HeadKind,
) {
    register_projections(store, rng, "head.sa", dim);
    let w1 = fan_in_uniform::<T>(rng, vec![dim, dim], dim);
    store.insert("head.mlp.fc1.w", w1, false, true);
    store.insert("head.mlp.fc1.b", Tensor::zeros(vec![dim]), false, false);
    let w2 = fan_in_uniform::<T>(rng, vec![dim, kind.out_dim()], dim);
    store.insert("head.mlp.fc2.w", w2, false, true);
    store.insert("head.mlp.fc2.b", Tensor::zeros(vec![kind.out_dim()]), false, false);
}

/// Score regression: self-attention over the final tokens, token-average
/// pooling, and the two-layer MLP. Distribution heads apply softmax so the
/// output sums to one.
pub fn score_head<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    tokens: Var,
    kind: HeadKind,
    heads: usize,
) -> Result<Var> {
    let sa = sa_block(graph, bound, "head.sa", tokens, heads)?;
    let pooled = graph.mean_rows(sa.out)?;
    let h = graph.dense(pooled, bound.var("head.mlp.fc1.w"), bound.var("head.mlp.fc1.b"))?;
    let h = graph.gelu(h);
    let out = graph.dense(h, bound.var("head.mlp.fc2.w"), bound.var("head.mlp.fc2.b"))?;
    match kind {
        HeadKind::Scalar => Ok(out),
        HeadKind::Distribution(_) => graph.softmax(out, 1),
    }
}

/// Plain-tensor attention for direct inspection and oracle tests.
pub fn attention_values<T: Scalar>(
    q: &Tensor<T>,
    k: &Tensor<T>,
    v: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let mut graph = Graph::new();
    let qv = graph.constant(q.clone());
    let kv = graph.constant(k.clone());
    let vv = graph.constant(v.clone());
    let attn = scaled_dot_attention(&mut graph, qv, kv, vv, 1)?;
    Ok((
        graph.value(attn.out).clone(),
        graph.value(attn.weights[0]).clone(),
    ))
}

/// Recomputes the cross-scale softmax weight matrix for visualization.
/// Uses the same code path as [`csa_block`], so the matrix matches the
/// weights used inside the block bitwise. With several heads the per-head
/// matrices are averaged, which preserves row sums.
pub fn export_csa_weights<T: Scalar>(
    fine: &Tensor<T>,
    coarse: &Tensor<T>,
    pair: usize,
    store: &ParamStore<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let mut graph = Graph::new();
    let bound = bind(&mut graph, store, false);
    let f = graph.constant(fine.clone());
    let c = graph.constant(coarse.clone());
    let out = csa_block(&mut graph, &bound, &format!("csa.p{pair}"), f, c, heads)?;
    average_weights(&mut graph, &out.weights)
}

pub(crate) fn average_weights<T: Scalar>(
    graph: &mut Graph<T>,
    weights: &[Var],
) -> Result<Tensor<T>> {
    if weights.len() == 1 {
        return Ok(graph.value(weights[0]).clone());
    }
    let mut acc = weights[0];
    for &w in &weights[1..] {
        acc = graph.add(acc, w)?;
    }
    let avg = graph.scale(acc, T::from_f64(1.0 / weights.len() as f64));
    Ok(graph.value(avg).clone())
}
