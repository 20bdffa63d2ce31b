use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{StftConfig, DEFAULT_HOP, DEFAULT_WIN_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskActivation {
    #[default]
    Sigmoid,
    Relu,
}

/// Normalisation inside TCN blocks. `None` exists so the receptive field
/// can be probed; global layer norm couples every frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    #[default]
    Global,
    None,
}

/// Normalisation of STFT magnitudes before the mask network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNorm {
    /// Per-utterance, per-bin zero mean and unit variance.
    #[default]
    MeanVar,
    None,
}

fn relu() -> MaskActivation {
    MaskActivation::Relu
}

fn default_win_len() -> usize {
    DEFAULT_WIN_LEN
}

fn default_hop() -> usize {
    DEFAULT_HOP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TasNetConfig {
    pub encoder_filters: usize,
    pub filter_len: usize,
    pub stride: usize,
    pub bottleneck_channels: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub blocks_per_repeat: usize,
    pub repeats: usize,
    pub num_outputs: usize,
    #[serde(default)]
    pub mask_activation: MaskActivation,
    #[serde(default)]
    pub norm: NormKind,
}

impl TasNetConfig {
    /// Full-size network.
    pub fn full(num_outputs: usize) -> Self {
        Self {
            encoder_filters: 256,
            filter_len: 20,
            stride: 10,
            bottleneck_channels: 256,
            hidden_channels: 512,
            kernel_size: 3,
            blocks_per_repeat: 8,
            repeats: 4,
            num_outputs,
            mask_activation: MaskActivation::Sigmoid,
            norm: NormKind::Global,
        }
    }

    /// Small network for tests and desk-scale experiments.
    pub fn toy(num_outputs: usize) -> Self {
        Self {
            encoder_filters: 16,
            filter_len: 8,
            stride: 4,
            bottleneck_channels: 16,
            hidden_channels: 32,
            kernel_size: 3,
            blocks_per_repeat: 2,
            repeats: 2,
            num_outputs,
            mask_activation: MaskActivation::Sigmoid,
            norm: NormKind::Global,
        }
    }

    pub(crate) fn tcn(&self) -> TcnShape {
        TcnShape {
            in_channels: self.encoder_filters,
            bottleneck: self.bottleneck_channels,
            hidden: self.hidden_channels,
            kernel: self.kernel_size,
            blocks: self.blocks_per_repeat,
            repeats: self.repeats,
            out_channels: self.num_outputs * self.encoder_filters,
            norm: self.norm,
        }
    }

    fn validate(&self) -> Result<()> {
        let sizes = [
            self.encoder_filters,
            self.filter_len,
            self.stride,
            self.bottleneck_channels,
            self.hidden_channels,
            self.kernel_size,
            self.blocks_per_repeat,
            self.repeats,
        ];
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument("tasnet sizes must be positive".into()));
        }
        if !self.filter_len.is_multiple_of(2) || self.stride * 2 != self.filter_len {
            return Err(Error::InvalidArgument(format!(
                "tasnet stride {} must be half the filter length {}",
                self.stride, self.filter_len
            )));
        }
        check_kernel(self.kernel_size)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdBlstmConfig {
    pub num_layers: usize,
    /// Units per direction.
    pub hidden_units: usize,
    #[serde(default = "default_win_len")]
    pub win_len: usize,
    #[serde(default = "default_hop")]
    pub hop: usize,
    pub num_outputs: usize,
    #[serde(default = "relu")]
    pub mask_activation: MaskActivation,
    #[serde(default)]
    pub input_norm: InputNorm,
}

impl FdBlstmConfig {
    pub fn full(num_outputs: usize) -> Self {
        Self::sized(3, 896, num_outputs)
    }

    /// Same layout as [`FdBlstmConfig::full`] at a size comparable to the
    /// toy TasNet.
    pub fn toy(num_outputs: usize) -> Self {
        Self::sized(3, 2, num_outputs)
    }

    fn sized(num_layers: usize, hidden_units: usize, num_outputs: usize) -> Self {
        Self {
            num_layers,
            hidden_units,
            win_len: DEFAULT_WIN_LEN,
            hop: DEFAULT_HOP,
            num_outputs,
            mask_activation: MaskActivation::Relu,
            input_norm: InputNorm::MeanVar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdConvConfig {
    pub bottleneck_channels: usize,
    pub hidden_channels: usize,
    pub kernel_size: usize,
    pub blocks_per_repeat: usize,
    pub repeats: usize,
    #[serde(default = "default_win_len")]
    pub win_len: usize,
    #[serde(default = "default_hop")]
    pub hop: usize,
    pub num_outputs: usize,
    #[serde(default)]
    pub mask_activation: MaskActivation,
    #[serde(default)]
    pub norm: NormKind,
    #[serde(default)]
    pub input_norm: InputNorm,
}

impl FdConvConfig {
    pub fn full(num_outputs: usize) -> Self {
        let t = TasNetConfig::full(num_outputs);
        Self::from_tcn(&t)
    }

    pub fn toy(num_outputs: usize) -> Self {
        Self::from_tcn(&TasNetConfig::toy(num_outputs))
    }

    fn from_tcn(t: &TasNetConfig) -> Self {
        Self {
            bottleneck_channels: t.bottleneck_channels,
            hidden_channels: t.hidden_channels,
            kernel_size: t.kernel_size,
            blocks_per_repeat: t.blocks_per_repeat,
            repeats: t.repeats,
            win_len: DEFAULT_WIN_LEN,
            hop: DEFAULT_HOP,
            num_outputs: t.num_outputs,
            mask_activation: MaskActivation::Sigmoid,
            norm: NormKind::Global,
            input_norm: InputNorm::MeanVar,
        }
    }

    pub(crate) fn tcn(&self) -> TcnShape {
        let bins = self.win_len / 2 + 1;
        TcnShape {
            in_channels: bins,
            bottleneck: self.bottleneck_channels,
            hidden: self.hidden_channels,
            kernel: self.kernel_size,
            blocks: self.blocks_per_repeat,
            repeats: self.repeats,
            out_channels: self.num_outputs * bins,
            norm: self.norm,
        }
    }
}

/// Sizes of one TCN mask estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct TcnShape {
    pub in_channels: usize,
    pub bottleneck: usize,
    pub hidden: usize,
    pub kernel: usize,
    pub blocks: usize,
    pub repeats: usize,
    pub out_channels: usize,
    pub norm: NormKind,
}

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "kernel size {kernel} must be odd for symmetric padding"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Tasnet(TasNetConfig),
    FdBlstm(FdBlstmConfig),
    FdConv(FdConvConfig),
}

impl ModelConfig {
    pub fn num_outputs(&self) -> usize {
        match self {
            ModelConfig::Tasnet(c) => c.num_outputs,
            ModelConfig::FdBlstm(c) => c.num_outputs,
            ModelConfig::FdConv(c) => c.num_outputs,
        }
    }

    pub fn is_frequency_domain(&self) -> bool {
        !matches!(self, ModelConfig::Tasnet(_))
    }

    pub fn stft(&self) -> Option<StftConfig> {
        let (win, hop) = match self {
            ModelConfig::Tasnet(_) => return None,
            ModelConfig::FdBlstm(c) => (c.win_len, c.hop),
            ModelConfig::FdConv(c) => (c.win_len, c.hop),
        };
        Some(StftConfig {
            win_len: win,
            hop,
            ..StftConfig::default()
        })
    }

    /// Shortest accepted input in samples.
    pub fn min_input_len(&self) -> usize {
        match self {
            ModelConfig::Tasnet(c) => c.filter_len,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.num_outputs()) {
            return Err(Error::InvalidArgument(format!(
                "num_outputs must be 1 or 2, got {}",
                self.num_outputs()
            )));
        }
        if let Some(stft) = self.stft() {
            stft.validate()?;
        }
        match self {
            ModelConfig::Tasnet(c) => c.validate(),
            ModelConfig::FdBlstm(c) => {
                if c.num_layers == 0 || c.hidden_units == 0 {
                    return Err(Error::InvalidArgument("blstm sizes must be positive".into()));
                }
                Ok(())
            }
            ModelConfig::FdConv(c) => {
                let sizes = [
                    c.bottleneck_channels,
                    c.hidden_channels,
                    c.kernel_size,
                    c.blocks_per_repeat,
                    c.repeats,
                ];
                if sizes.contains(&0) {
                    return Err(Error::InvalidArgument("fd_conv sizes must be positive".into()));
                }
                check_kernel(c.kernel_size)
            }
        }
    }
}
