//! Assembles backbone, gated local pooling, position encoding, the
//! attention stack and the score head into the full- and no-reference
//! quality models, and owns parameter initialization.

use crate::attention::{
    add_position_encoding, average_weights, csa_chain, register_head,
    register_level_attention, register_position_encoding, sa_block, score_head, HeadKind,
};
use crate::autodiff::{Graph, Var};
use crate::backbone::{self, BackboneConfig};
use crate::error::{Error, Result};
use crate::glp::{self, GlpOptions};
use crate::metrics::bin_expectation;
use crate::params::{bind, Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Whether the model scores a distorted/reference pair or a single image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[serde(rename = "fr")]
    FullReference,
    #[serde(rename = "nr")]
    NoReference,
}

/// Architecture hyperparameters. The token grid is fixed by the input
/// extents, so models are built for one training resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    pub backbone: BackboneConfig,
    /// Shared token width D after the per-level reduction.
    pub token_dim: usize,
    pub head: HeadKind,
    /// Attention head count; must divide `token_dim`.
    pub attention_heads: usize,
    /// Bottleneck width of the gate mask branch.
    pub glp_hidden: usize,
    pub input_h: usize,
    pub input_w: usize,
}

/// Default full-reference token width.
pub const DEFAULT_TOKEN_DIM_FR: usize = 256;
/// Default no-reference token width.
pub const DEFAULT_TOKEN_DIM_NR: usize = 512;

impl ModelConfig {
    pub fn full_reference(backbone: BackboneConfig, input_h: usize, input_w: usize) -> Self {
        Self {
            mode: Mode::FullReference,
            backbone,
            token_dim: DEFAULT_TOKEN_DIM_FR,
            head: HeadKind::Scalar,
            attention_heads: 1,
            glp_hidden: glp::DEFAULT_MASK_HIDDEN,
            input_h,
            input_w,
        }
    }

    pub fn no_reference(backbone: BackboneConfig, input_h: usize, input_w: usize) -> Self {
        Self {
            mode: Mode::NoReference,
            backbone,
            token_dim: DEFAULT_TOKEN_DIM_NR,
            head: HeadKind::Scalar,
            attention_heads: 1,
            glp_hidden: glp::DEFAULT_MASK_HIDDEN,
            input_h,
            input_w,
        }
    }

    /// Small full-reference configuration used throughout the test suite.
    pub fn toy_fr() -> Self {
        let mut cfg = Self::full_reference(BackboneConfig::new(vec![8, 16, 32]), 64, 64);
        cfg.token_dim = 32;
        cfg.glp_hidden = 16;
        cfg
    }

    /// Small no-reference counterpart of [`ModelConfig::toy_fr`].
    pub fn toy_nr() -> Self {
        let mut cfg = Self::no_reference(BackboneConfig::new(vec![8, 16, 32]), 64, 64);
        cfg.token_dim = 32;
        cfg.glp_hidden = 16;
        cfg
    }

    pub fn levels(&self) -> usize {
        self.backbone.levels
    }

    /// Coarsest-grid extents `(H_n, W_n)`.
    pub fn token_grid(&self) -> (usize, usize) {
        let f = 1usize << self.levels();
        (self.input_h / f, self.input_w / f)
    }

    pub fn token_count(&self) -> usize {
        let (h, w) = self.token_grid();
        h * w
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        let f = 1usize << self.levels();
        if !self.input_h.is_multiple_of(f) || !self.input_w.is_multiple_of(f) {
            return Err(Error::InvalidArgument(format!(
                "input extents {}×{} not divisible by 2^{}",
                self.input_h,
                self.input_w,
                self.levels()
            )));
        }
        if self.token_dim == 0 || self.glp_hidden == 0 {
            return Err(Error::InvalidArgument("widths must be positive".into()));
        }
        if self.attention_heads == 0 || !self.token_dim.is_multiple_of(self.attention_heads) {
            return Err(Error::InvalidArgument(format!(
                "attention heads {} must divide token width {}",
                self.attention_heads, self.token_dim
            )));
        }
        if let HeadKind::Distribution(k) = self.head {
            if k < 2 {
                return Err(Error::InvalidArgument(
                    "distribution head needs at least 2 bins".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Builds and initializes all parameters of a model, seeded.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    backbone::register_params(&mut store, &mut rng, &cfg.backbone);
    match cfg.mode {
        Mode::FullReference => glp::register_params_fr(
            &mut store,
            &mut rng,
            &cfg.backbone.channels,
            cfg.token_dim,
            cfg.glp_hidden,
        ),
        Mode::NoReference => glp::register_params_nr(
            &mut store,
            &mut rng,
            &cfg.backbone.channels,
            cfg.token_dim,
            cfg.glp_hidden,
        ),
    }
    register_position_encoding(&mut store, cfg.token_count(), cfg.token_dim);
    register_level_attention(&mut store, &mut rng, cfg.levels(), cfg.token_dim);
    register_head(&mut store, &mut rng, cfg.token_dim, cfg.head);
    Ok(store)
}

/// Graph handles of one forward pass, including the visualization taps.
pub struct ForwardVars {
    /// `[1,1]` scalar or `[1,K]` distribution node.
    pub prediction: Var,
    /// Sigmoid gate per level, finest first.
    pub glp_masks: Vec<Var>,
    /// Cross-scale weight matrices per chain step, coarsest pair first;
    /// inner vector is one matrix per attention head.
    pub csa_weights: Vec<Vec<Var>>,
}

fn check_input<T: Scalar>(graph: &Graph<T>, cfg: &ModelConfig, image: Var) -> Result<()> {
    let shape = graph.value(image).shape();
    if shape != [3, cfg.input_h, cfg.input_w] {
        return Err(Error::ShapeMismatch(format!(
            "model expects 3×{}×{} input, got {:?}",
            cfg.input_h, cfg.input_w, shape
        )));
    }
    Ok(())
}

fn attend_and_score<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    cfg: &ModelConfig,
    level_tokens: Vec<Var>,
) -> Result<(Var, Vec<Vec<Var>>)> {
    let with_pe = add_position_encoding(graph, bound, &level_tokens)?;
    let mut enhanced = Vec::with_capacity(with_pe.len());
    for (idx, &tokens) in with_pe.iter().enumerate() {
        let sa = sa_block(
            graph,
            bound,
            &format!("sa.l{}", idx + 1),
            tokens,
            cfg.attention_heads,
        )?;
        enhanced.push(sa.out);
    }
    let (fused, csa_weights) = csa_chain(graph, bound, &enhanced, cfg.attention_heads)?;
    let prediction = score_head(graph, bound, fused, cfg.head, cfg.attention_heads)?;
    Ok((prediction, csa_weights))
}

/// Full-reference forward pass inside an existing graph.
pub fn forward_fr_vars<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    cfg: &ModelConfig,
    distorted: Var,
    reference: Var,
) -> Result<ForwardVars> {
    if cfg.mode != Mode::FullReference {
        return Err(Error::InvalidArgument(
            "forward_fr on a no-reference model".into(),
        ));
    }
    check_input(graph, cfg, distorted)?;
    check_input(graph, cfg, reference)?;
    let dist_pyr = backbone::extract_vars(graph, bound, distorted, &cfg.backbone)?;
    let ref_pyr = backbone::extract_vars(graph, bound, reference, &cfg.backbone)?;

    let n = cfg.levels();
    let mut tokens = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for level in 1..=n {
        let out = glp::glp_fr(
            graph,
            bound,
            dist_pyr[level - 1],
            ref_pyr[level - 1],
            level,
            n,
            GlpOptions::default(),
        )?;
        tokens.push(out.tokens);
        masks.push(out.mask);
    }
    let (prediction, csa_weights) = attend_and_score(graph, bound, cfg, tokens)?;
    Ok(ForwardVars { prediction, glp_masks: masks, csa_weights })
}

/// No-reference forward pass inside an existing graph.
pub fn forward_nr_vars<T: Scalar>(
    graph: &mut Graph<T>,
    bound: &Bound,
    cfg: &ModelConfig,
    image: Var,
) -> Result<ForwardVars> {
    if cfg.mode != Mode::NoReference {
        return Err(Error::InvalidArgument(
            "forward_nr on a full-reference model".into(),
        ));
    }
    check_input(graph, cfg, image)?;
    let pyr = backbone::extract_vars(graph, bound, image, &cfg.backbone)?;
    let n = cfg.levels();
    let mut tokens = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    for level in 1..=n {
        let out = glp::glp_nr(
            graph,
            bound,
            pyr[level - 1],
            level,
            n,
            GlpOptions::default(),
        )?;
        tokens.push(out.tokens);
        masks.push(out.mask);
    }
    let (prediction, csa_weights) = attend_and_score(graph, bound, cfg, tokens)?;
    Ok(ForwardVars { prediction, glp_masks: masks, csa_weights })
}

/// A finished prediction outside the graph.
#[derive(Debug, Clone)]
pub enum Prediction<T> {
    Scalar(T),
    Distribution(Vec<T>),
}

impl<T: Scalar> Prediction<T> {
    /// Scalar view: the value itself, or the bin expectation over 1..K.
    pub fn scalar_reduced(&self) -> f64 {
        match self {
            Prediction::Scalar(v) => v.as_f64(),
            Prediction::Distribution(p) => {
                bin_expectation(&p.iter().map(|v| v.as_f64()).collect::<Vec<_>>())
            }
        }
    }
}

/// Forward trace with the attention maps materialized for export.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    pub prediction: Prediction<T>,
    /// Gate masks, level 1..n, each `1 × H_i × W_i`.
    pub glp_masks: Vec<Tensor<T>>,
    /// Cross-scale weight matrices ordered from the coarsest pair
    /// (levels n to n-1) to the finest (levels 2 to 1); heads averaged.
    pub csa_weights: Vec<Tensor<T>>,
}

fn extract_prediction<T: Scalar>(graph: &Graph<T>, cfg: &ModelConfig, var: Var) -> Prediction<T> {
    match cfg.head {
        HeadKind::Scalar => Prediction::Scalar(graph.value(var).item()),
        HeadKind::Distribution(_) => Prediction::Distribution(graph.value(var).data().to_vec()),
    }
}

fn materialize_trace<T: Scalar>(
    graph: &mut Graph<T>,
    cfg: &ModelConfig,
    vars: ForwardVars,
) -> Result<ForwardTrace<T>> {
    let prediction = extract_prediction(graph, cfg, vars.prediction);
    let glp_masks = vars
        .glp_masks
        .iter()
        .map(|&m| graph.value(m).clone())
        .collect();
    let mut csa_weights = Vec::with_capacity(vars.csa_weights.len());
    for step in &vars.csa_weights {
        csa_weights.push(average_weights(graph, step)?);
    }
    Ok(ForwardTrace { prediction, glp_masks, csa_weights })
}

/// Scores a distorted/reference pair without gradients.
pub fn forward_fr<T: Scalar>(
    cfg: &ModelConfig,
    store: &ParamStore<T>,
    distorted: &Tensor<T>,
    reference: &Tensor<T>,
) -> Result<Prediction<T>> {
    Ok(forward_fr_traced(cfg, store, distorted, reference)?.prediction)
}

/// Scores a pair and keeps the attention maps.
pub fn forward_fr_traced<T: Scalar>(
    cfg: &ModelConfig,
    store: &ParamStore<T>,
    distorted: &Tensor<T>,
    reference: &Tensor<T>,
) -> Result<ForwardTrace<T>> {
    let mut graph = Graph::new();
    let bound = bind(&mut graph, store, false);
    let d = graph.constant(distorted.clone());
    let r = graph.constant(reference.clone());
    let vars = forward_fr_vars(&mut graph, &bound, cfg, d, r)?;
    materialize_trace(&mut graph, cfg, vars)
}

/// Scores a single image without gradients.
pub fn forward_nr<T: Scalar>(
    cfg: &ModelConfig,
    store: &ParamStore<T>,
    image: &Tensor<T>,
) -> Result<Prediction<T>> {
    Ok(forward_nr_traced(cfg, store, image)?.prediction)
}

/// Scores a single image and keeps the attention maps.
pub fn forward_nr_traced<T: Scalar>(
    cfg: &ModelConfig,
    store: &ParamStore<T>,
    image: &Tensor<T>,
) -> Result<ForwardTrace<T>> {
    let mut graph = Graph::new();
    let bound = bind(&mut graph, store, false);
    let img = graph.constant(image.clone());
    let vars = forward_nr_vars(&mut graph, &bound, cfg, img)?;
    materialize_trace(&mut graph, cfg, vars)
}

/// Names of the mode-independent parameters (position encoding, level and
/// cross-scale attention, score head). Both modes must expose identical
/// sets here; only GLP internals and backbone arity may differ.
pub fn shared_stack_names<T: Scalar>(store: &ParamStore<T>) -> Vec<String> {
    store
        .names()
        .filter(|n| {
            n.starts_with("sa.") || n.starts_with("csa.") || n.starts_with("head.") || n.starts_with("pos.")
        })
        .cloned()
        .collect()
}
