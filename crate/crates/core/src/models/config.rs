use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Output filters per CNN[CLS] filter bank.
pub const BANK_FILTERS: usize = 4;
/// Rows of a CNN[CLS] output: three banks of four filters.
pub const CNN_ROWS: usize = 3 * BANK_FILTERS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    CnnTransEnc,
    TransEnc,
    CnnCls,
    KimCnn,
    Softmax,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::CnnTransEnc,
        Variant::TransEnc,
        Variant::CnnCls,
        Variant::KimCnn,
        Variant::Softmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CnnTransEnc => "cnn-trans-enc",
            Variant::TransEnc => "trans-enc",
            Variant::CnnCls => "cnn-cls",
            Variant::KimCnn => "kim-cnn",
            Variant::Softmax => "softmax",
        }
    }

    /// Stable numeric id used by the checkpoint header.
    pub fn id(self) -> u32 {
        match self {
            Variant::CnnTransEnc => 0,
            Variant::TransEnc => 1,
            Variant::CnnCls => 2,
            Variant::KimCnn => 3,
            Variant::Softmax => 4,
        }
    }

    pub fn from_id(id: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.id() == id)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|v| v.name()).collect();
            Error::Config(format!("unknown variant {s:?}; valid variants: {}", names.join(", ")))
        })
    }
}

/// How a CNN[CLS] filter bank mixes the twelve input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QkvMode {
    /// Four filters spanning all input channels (`4 × n_layers × l` kernels).
    Full,
    /// One shared `4 × l` kernel slid over channel groups 0-3, 4-7, 8-11; the
    /// three resulting rows are padded with a zero row to four.
    Literal,
}

fn d_default() -> usize {
    380
}
fn outdim_default() -> usize {
    320
}
fn heads_default() -> usize {
    20
}
fn dk_default() -> usize {
    19
}
fn filter_default() -> usize {
    5
}
fn stride_default() -> usize {
    2
}
fn dropout_default() -> f64 {
    0.3
}
fn classes_default() -> usize {
    2
}
fn variant_default() -> Variant {
    Variant::CnnTransEnc
}
fn qkv_default() -> QkvMode {
    QkvMode::Full
}
fn layers_default() -> usize {
    12
}
fn hidden_default() -> usize {
    768
}
fn kim_default() -> [usize; 3] {
    [5, 10, 15]
}
fn eps_default() -> f64 {
    1e-5
}

/// Architecture hyperparameters. Absent JSON fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "d_default")]
    pub d_model: usize,
    #[serde(default = "outdim_default")]
    pub outdim: usize,
    #[serde(default = "heads_default")]
    pub heads: usize,
    /// Per-head query/key width; values use the same width.
    #[serde(default = "dk_default")]
    pub d_k: usize,
    #[serde(default = "filter_default")]
    pub filter_length: usize,
    #[serde(default = "stride_default")]
    pub stride: usize,
    #[serde(default = "dropout_default")]
    pub dropout: f64,
    #[serde(default = "classes_default")]
    pub n_classes: usize,
    #[serde(default = "variant_default")]
    pub variant: Variant,
    #[serde(default = "qkv_default")]
    pub qkv_mode: QkvMode,
    #[serde(default = "layers_default")]
    pub n_layers: usize,
    #[serde(default = "hidden_default")]
    pub hidden: usize,
    #[serde(default = "kim_default")]
    pub kim_windows: [usize; 3],
    #[serde(default = "eps_default")]
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: d_default(),
            outdim: outdim_default(),
            heads: heads_default(),
            d_k: dk_default(),
            filter_length: filter_default(),
            stride: stride_default(),
            dropout: dropout_default(),
            n_classes: classes_default(),
            variant: variant_default(),
            qkv_mode: qkv_default(),
            n_layers: layers_default(),
            hidden: hidden_default(),
            kim_windows: kim_default(),
            layer_norm_eps: eps_default(),
        }
    }
}

fn config_err(msg: String) -> Error {
    Error::Config(msg)
}

impl ModelConfig {
    pub fn new(variant: Variant, n_classes: usize) -> Self {
        Self {
            variant,
            n_classes,
            ..Self::default()
        }
    }

    pub fn d_v(&self) -> usize {
        self.d_k
    }

    /// Output length of a strided window of `width` over the hidden axis.
    pub fn conv_len(&self, width: usize) -> usize {
        if width > self.hidden || self.stride == 0 {
            0
        } else {
            (self.hidden - width) / self.stride + 1
        }
    }

    /// Adaptive-pool target for one Kim-CNN filter: `d_model`, capped by the
    /// filter's own output length.
    pub fn kim_pool_target(&self, width: usize) -> usize {
        self.d_model.min(self.conv_len(width))
    }

    pub fn kim_feature_len(&self) -> usize {
        self.kim_windows.iter().map(|&w| self.kim_pool_target(w)).sum()
    }

    /// Rows of the layer-1 attention input.
    pub fn sequence_len(&self) -> usize {
        match self.variant {
            Variant::TransEnc => self.n_layers,
            _ => CNN_ROWS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(config_err(format!("n_classes must be >= 2, got {}", self.n_classes)));
        }
        if self.n_layers == 0 || self.hidden == 0 {
            return Err(config_err("n_layers and hidden must be positive".to_string()));
        }
        if self.stride == 0 {
            return Err(Error::InvalidStride(0));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidRatio(self.dropout));
        }
        if self.layer_norm_eps.is_nan() || self.layer_norm_eps <= 0.0 {
            return Err(config_err(format!(
                "layer_norm_eps must be > 0, got {}",
                self.layer_norm_eps
            )));
        }
        let uses_cnn = matches!(self.variant, Variant::CnnTransEnc | Variant::CnnCls);
        let uses_encoder = matches!(self.variant, Variant::CnnTransEnc | Variant::TransEnc);
        if (uses_cnn || uses_encoder) && self.d_model == 0 {
            return Err(config_err("d_model must be positive".to_string()));
        }
        if uses_encoder {
            if self.heads == 0 || self.heads * self.d_v() != self.d_model {
                return Err(config_err(format!(
                    "heads * d_v must equal d_model: {} * {} != {}",
                    self.heads,
                    self.d_v(),
                    self.d_model
                )));
            }
            if self.outdim < self.n_classes {
                return Err(config_err(format!(
                    "outdim {} is smaller than n_classes {}",
                    self.outdim, self.n_classes
                )));
            }
        }
        if uses_cnn {
            if self.filter_length == 0 || self.filter_length > self.hidden {
                return Err(Error::InvalidKernel {
                    kernel: self.filter_length,
                    input: self.hidden,
                });
            }
            let pooled_from = self.conv_len(self.filter_length);
            if self.d_model > pooled_from {
                return Err(config_err(format!(
                    "d_model {} exceeds the convolution output length {pooled_from}",
                    self.d_model
                )));
            }
            if self.qkv_mode == QkvMode::Literal && self.n_layers != CNN_ROWS {
                return Err(config_err(format!("literal qkv mode needs {CNN_ROWS} layers")));
            }
        }
        if self.variant == Variant::CnnTransEnc && self.n_layers != CNN_ROWS {
            return Err(config_err(format!(
                "cnn-trans-enc adds the input stack to a {CNN_ROWS}-row attention output; n_layers is {}",
                self.n_layers
            )));
        }
        if self.variant == Variant::KimCnn {
            for &w in &self.kim_windows {
                if w == 0 || w > self.hidden {
                    return Err(Error::InvalidKernel {
                        kernel: w,
                        input: self.hidden,
                    });
                }
            }
            if self.d_model == 0 {
                return Err(config_err("d_model must be positive".to_string()));
            }
        }
        Ok(())
    }
}
