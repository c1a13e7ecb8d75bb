//! Flat JSON training configuration: one object whose fields mirror the
//! model and trainer settings.

use iqa_core::attention::HeadKind;
use iqa_core::backbone::BackboneConfig;
use iqa_core::data::AugmentConfig;
use iqa_core::model::{Mode, ModelConfig, DEFAULT_TOKEN_DIM_FR, DEFAULT_TOKEN_DIM_NR};
use iqa_core::trainer::TrainConfig;
use serde::Deserialize;

const DEFAULT_WIDTHS: [usize; 5] = [16, 32, 64, 96, 128];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatConfig {
    pub mode: Mode,
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Per-level channel widths; defaults to the standard widths
    /// truncated to `levels`.
    pub channels: Option<Vec<usize>>,
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(default)]
    pub freeze: bool,
    /// Token width D; defaults to 256 (FR) or 512 (NR).
    pub token_dim: Option<usize>,
    /// 0 for a scalar head, otherwise the distribution bin count.
    #[serde(default)]
    pub head_bins: usize,
    #[serde(default = "default_heads")]
    pub attention_heads: usize,
    #[serde(default = "default_glp_hidden")]
    pub glp_hidden: usize,
    #[serde(default = "default_input")]
    pub input_h: usize,
    #[serde(default = "default_input")]
    pub input_w: usize,

    /// Peak learning rate; defaults per mode (1e-4 FR, 3e-5 NR).
    pub lr: Option<f64>,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    #[serde(default)]
    pub eta_min: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub restart: bool,

    /// Optional square-ish random crop; both extents must be set.
    pub crop_h: Option<usize>,
    pub crop_w: Option<usize>,
    #[serde(default)]
    pub hflip_prob: f64,
    #[serde(default)]
    pub vflip_prob: f64,
    /// Random shorter-side band drawn per sample during augmentation;
    /// both bounds must be set together.
    pub resize_shorter_min: Option<usize>,
    pub resize_shorter_max: Option<usize>,

    /// Fixed aspect-preserving shorter-side resize at load time.
    pub resize_shorter: Option<usize>,
    /// Declared legal MOS range for manifest validation.
    pub mos_lo: Option<f64>,
    pub mos_hi: Option<f64>,
}

fn default_levels() -> usize {
    5
}
fn default_blocks() -> usize {
    1
}
fn default_heads() -> usize {
    1
}
fn default_glp_hidden() -> usize {
    64
}
fn default_input() -> usize {
    224
}
fn default_weight_decay() -> f64 {
    1e-5
}
fn default_t_max() -> usize {
    50
}
fn default_max_epochs() -> usize {
    200
}
fn default_batch_size() -> usize {
    8
}
fn default_patience() -> usize {
    20
}
fn default_true() -> bool {
    true
}

/// Loader options that sit outside the model and trainer configs.
pub struct DataOptions {
    pub resize_shorter: Option<usize>,
    pub declared_mos_range: Option<(f64, f64)>,
}

impl FlatConfig {
    pub fn build(self) -> Result<(ModelConfig, TrainConfig, DataOptions), String> {
        let channels = match self.channels {
            Some(c) => c,
            None => {
                if self.levels > DEFAULT_WIDTHS.len() {
                    return Err(format!(
                        "no default channels for {} levels; set \"channels\"",
                        self.levels
                    ));
                }
                DEFAULT_WIDTHS[..self.levels].to_vec()
            }
        };
        if channels.len() != self.levels {
            return Err(format!(
                "channels length {} does not match levels {}",
                channels.len(),
                self.levels
            ));
        }
        let mut backbone = BackboneConfig::new(channels);
        backbone.blocks = self.blocks;
        backbone.freeze = self.freeze;

        let mut model = match self.mode {
            Mode::FullReference => ModelConfig::full_reference(backbone, self.input_h, self.input_w),
            Mode::NoReference => ModelConfig::no_reference(backbone, self.input_h, self.input_w),
        };
        model.token_dim = self.token_dim.unwrap_or(match self.mode {
            Mode::FullReference => DEFAULT_TOKEN_DIM_FR,
            Mode::NoReference => DEFAULT_TOKEN_DIM_NR,
        });
        model.head = if self.head_bins == 0 {
            HeadKind::Scalar
        } else {
            HeadKind::Distribution(self.head_bins)
        };
        model.attention_heads = self.attention_heads;
        model.glp_hidden = self.glp_hidden;
        model.validate().map_err(|e| e.to_string())?;

        let mut train = TrainConfig::default_for(self.mode);
        if let Some(lr) = self.lr {
            train.lr = lr;
        }
        train.weight_decay = self.weight_decay;
        train.t_max = self.t_max;
        train.eta_min = self.eta_min;
        train.max_epochs = self.max_epochs;
        train.batch_size = self.batch_size;
        train.patience = self.patience;
        train.seed = self.seed;
        train.restart = self.restart;
        let resize_shorter_range = match (self.resize_shorter_min, self.resize_shorter_max) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            (None, None) => None,
            _ => return Err("resize_shorter_min and resize_shorter_max must be set together".into()),
        };
        train.augment = match (self.crop_h, self.crop_w) {
            (Some(h), Some(w)) => Some(AugmentConfig {
                crop_h: h,
                crop_w: w,
                hflip_prob: self.hflip_prob,
                vflip_prob: self.vflip_prob,
                resize_shorter_range,
                seed: self.seed,
            }),
            (None, None) if resize_shorter_range.is_some() => {
                return Err("the shorter-side band needs crop_h and crop_w".into())
            }
            (None, None) => None,
            _ => return Err("crop_h and crop_w must be set together".into()),
        };
        train.validate().map_err(|e| e.to_string())?;

        let declared_mos_range = match (self.mos_lo, self.mos_hi) {
            (Some(lo), Some(hi)) => Some((lo, hi)),
            (None, None) => None,
            _ => return Err("mos_lo and mos_hi must be set together".into()),
        };
        Ok((
            model,
            train,
            DataOptions { resize_shorter: self.resize_shorter, declared_mos_range },
        ))
    }
}
