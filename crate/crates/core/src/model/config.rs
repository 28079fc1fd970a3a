use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the lower-resolution probability maps are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SideOutput {
    /// Decode every scale with the shared decoder modules.
    Sdm,
    /// One independent 1x1 convolution per decoder scale.
    Conv1x1,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpnetConfig {
    /// Encoder depth `L`; the network has `2L` layers.
    pub depth: usize,
    /// Channels of the first encoder layer; doubles per level.
    pub base_channels: usize,
    pub in_channels: usize,
    /// Number of side outputs `K` beyond the full-resolution map.
    pub pyramid_levels: usize,
    pub share_decoder: bool,
    pub side_output: SideOutput,
    pub use_batchnorm: bool,
}

impl Default for SpnetConfig {
    fn default() -> Self {
        Self {
            depth: 5,
            base_channels: 16,
            in_channels: 1,
            pyramid_levels: 3,
            share_decoder: true,
            side_output: SideOutput::Sdm,
            use_batchnorm: true,
        }
    }
}

impl SpnetConfig {
    pub fn full_scale() -> Self {
        Self {
            base_channels: 64,
            ..Self::default()
        }
    }

    /// Four base channels, no batch norm: the gradient-check configuration.
    pub fn toy() -> Self {
        Self {
            base_channels: 4,
            use_batchnorm: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 3 {
            return Err(Error::InvalidArgument(format!(
                "depth must be at least 3, got {}",
                self.depth
            )));
        }
        if self.base_channels == 0 || self.in_channels == 0 {
            return Err(Error::InvalidArgument(
                "channel counts must be positive".into(),
            ));
        }
        let max_levels = self.depth - 2;
        match self.side_output {
            SideOutput::Sdm if self.pyramid_levels != max_levels => {
                Err(Error::InvalidArgument(format!(
                    "shared decoder outputs require pyramid_levels = depth - 2 = {max_levels}, got {}",
                    self.pyramid_levels
                )))
            }
            SideOutput::Conv1x1 if self.pyramid_levels > max_levels => {
                Err(Error::InvalidArgument(format!(
                    "at most {max_levels} side outputs for depth {}",
                    self.depth
                )))
            }
            _ => Ok(()),
        }
    }

    /// Channels of encoder output `E_l`, `l = 1..=L`.
    pub fn encoder_channels(&self, level: usize) -> usize {
        self.base_channels << (level - 1)
    }

    /// Channels of decoder output `D_i`, `i = 1..=L-1`.
    pub fn decoder_channels(&self, i: usize) -> usize {
        self.base_channels << (self.depth - 1 - i)
    }

    /// Input height and width must be multiples of this.
    pub fn input_multiple(&self) -> usize {
        1 << (self.depth - 1)
    }

    pub fn output_count(&self) -> usize {
        self.pyramid_levels + 1
    }

    /// Number of decoder-module branches at SDM-`i` that reuse its weights
    /// besides the main path.
    pub fn branch_count(&self, i: usize) -> usize {
        match self.side_output {
            SideOutput::Sdm => i,
            SideOutput::Conv1x1 => 0,
        }
    }
}
