use std::fmt;

use crate::error::{Error, Result};
use crate::label::MAX_CLASSES;

/// Number of convolution blocks in the network.
pub const BLOCKS: usize = 4;

/// Total downsampling of the deep path (one 2x pool per block).
pub const STRIDE: usize = 1 << BLOCKS;

/// Smallest accepted input extent.
pub const MIN_INPUT: usize = 32;

/// Topology hyper-parameters of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NetworkSpec {
    /// Classes scored per pixel; also the width of every score head and
    /// upsampling layer.
    pub num_classes: usize,
    pub block_channels: [usize; BLOCKS],
    pub convs_per_block: [usize; BLOCKS],
    /// Width of the two 1x1 layers after the last block.
    pub head_channels: usize,
    /// 1 (grayscale) or 3 (color).
    pub input_channels: usize,
}

impl NetworkSpec {
    /// Default widths: blocks of (16, 32, 64, 128) channels with two 3x3
    /// convolutions each and 256-wide 1x1 layers.
    pub fn desk(num_classes: usize) -> Self {
        NetworkSpec {
            num_classes,
            block_channels: [16, 32, 64, 128],
            convs_per_block: [2, 2, 2, 2],
            head_channels: 256,
            input_channels: 1,
        }
    }

    /// A narrow network for gradient checks and quick runs.
    pub fn reduced(num_classes: usize) -> Self {
        NetworkSpec {
            num_classes,
            block_channels: [4, 4, 6, 6],
            convs_per_block: [1, 1, 1, 1],
            head_channels: 8,
            input_channels: 1,
        }
    }

    /// A mid-size network used by the bundled experiment presets.
    pub fn compact(num_classes: usize) -> Self {
        NetworkSpec {
            num_classes,
            block_channels: [8, 16, 32, 32],
            convs_per_block: [2, 2, 2, 1],
            head_channels: 64,
            input_channels: 1,
        }
    }

    pub fn with_input_channels(mut self, channels: usize) -> Self {
        self.input_channels = channels;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "network needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.num_classes > MAX_CLASSES {
            return Err(Error::InvalidArgument(format!(
                "at most {MAX_CLASSES} classes are supported, got {}",
                self.num_classes
            )));
        }
        if self.input_channels != 1 && self.input_channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "input channels must be 1 or 3, got {}",
                self.input_channels
            )));
        }
        if self.block_channels.contains(&0)
            || self.convs_per_block.contains(&0)
            || self.head_channels == 0
        {
            return Err(Error::InvalidArgument(
                "layer widths and depths must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Every parametrized layer in storage order.
    pub fn layers(&self) -> Vec<LayerDef> {
        let mut out = Vec::new();
        let mut in_ch = self.input_channels;
        for b in 0..BLOCKS {
            for i in 0..self.convs_per_block[b] {
                out.push(LayerDef {
                    name: format!("conv{}_{}", b + 1, i + 1),
                    kind: LayerKind::Conv,
                    out_channels: self.block_channels[b],
                    in_channels: in_ch,
                    kernel: 3,
                    stride: 1,
                    padding: 1,
                });
                in_ch = self.block_channels[b];
            }
        }
        let c = self.num_classes;
        let h = self.head_channels;
        let one = |name: &str, out_channels, in_channels| LayerDef {
            name: name.to_string(),
            kind: LayerKind::Conv,
            out_channels,
            in_channels,
            kernel: 1,
            stride: 1,
            padding: 0,
        };
        out.push(one("conv5", h, self.block_channels[3]));
        out.push(one("conv6", h, h));
        out.push(one("score", c, h));
        for b in 0..BLOCKS - 1 {
            out.push(one(
                &format!("score_pool{}", b + 1),
                c,
                self.block_channels[b],
            ));
        }
        for name in ["up_score", "up_fuse3", "up_fuse2", "up_final"] {
            out.push(LayerDef {
                name: name.to_string(),
                kind: LayerKind::Upsample,
                out_channels: c,
                in_channels: c,
                kernel: 4,
                stride: 2,
                padding: 0,
            });
        }
        out
    }

    /// Closed-form learnable parameter count.
    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerDef::param_count).sum()
    }
}

impl fmt::Display for NetworkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "classes={} blocks={:?} convs={:?} head={} input={}",
            self.num_classes,
            self.block_channels,
            self.convs_per_block,
            self.head_channels,
            self.input_channels
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    /// Convolution followed (inside the blocks and conv5/6) by ReLU.
    Conv,
    /// Learned 2x upsampling (transposed convolution, bilinear init).
    Upsample,
}

/// Shape of one parametrized layer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerDef {
    pub name: String,
    pub kind: LayerKind,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl LayerDef {
    /// Weight extents as stored (`in x out` first for transposed layers).
    pub fn weight_shape(&self) -> [usize; 4] {
        match self.kind {
            LayerKind::Conv => [
                self.out_channels,
                self.in_channels,
                self.kernel,
                self.kernel,
            ],
            LayerKind::Upsample => [
                self.in_channels,
                self.out_channels,
                self.kernel,
                self.kernel,
            ],
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}
