//! The fully-convolutional texture network.
//!
//! Four blocks of 3x3 convolutions + ReLU, each followed by 2x2 max pooling;
//! two 1x1 layers (`conv5`, `conv6`) and a 1x1 class-score head on the
//! deepest output. Three further 1x1 score heads read the pooled outputs of
//! blocks 1-3 (at strides 2, 4 and 8). The deep scores are upsampled 2x and
//! summed with the block-3 head, upsampled and summed with the block-2 head,
//! upsampled and summed with the block-1 head, then upsampled once more to
//! input resolution. Every upsampling layer is a learned transposed
//! convolution initialized to bilinear interpolation.

mod checkpoint;
mod forward;
mod spec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::label::{LabelMap, RankedLabels, ScoreVolume};
use crate::ops::upsample::bilinear_upsample_params;
use crate::ops::{xavier_init, ConvGrads, ConvParams};
use crate::tensor::Tensor;

pub use forward::{backward, forward, forward_with, ForwardCache, Fusion};
pub use spec::{LayerDef, LayerKind, NetworkSpec, BLOCKS, MIN_INPUT, STRIDE};

/// One parametrized layer with its momentum buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub def: LayerDef,
    pub params: ConvParams,
    pub velocity: ConvGrads,
}

/// Learnable state of a network built from a [`NetworkSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    spec: NetworkSpec,
    seed: u64,
    layers: Vec<Layer>,
}

/// Parameter gradients, aligned with [`NetworkState::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    layers: Vec<ConvGrads>,
}

/// Builds a freshly initialized network: Xavier-uniform weights and zero
/// biases for convolutions, bilinear kernels for the upsampling layers.
pub fn build_fcnt(spec: &NetworkSpec, seed: u64) -> Result<NetworkState> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .layers()
        .into_iter()
        .map(|def| {
            let params = match def.kind {
                LayerKind::Conv => ConvParams::new(
                    xavier_init(def.weight_shape(), &mut rng),
                    vec![0.0; def.out_channels],
                    def.stride,
                    def.padding,
                )?,
                LayerKind::Upsample => bilinear_upsample_params(def.out_channels, def.stride)?,
            };
            let velocity = params.zero_grads();
            Ok(Layer {
                def,
                params,
                velocity,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkState {
        spec: *spec,
        seed,
        layers,
    })
}

/// A network for `num_classes` classes whose feature layers (the blocks,
/// `conv5` and `conv6`) are copied from `trunk`. Score heads and upsampling
/// layers are freshly initialized from `seed`; momentum starts at zero.
pub fn build_from_trunk(
    trunk: &NetworkState,
    num_classes: usize,
    seed: u64,
) -> Result<NetworkState> {
    let spec = NetworkSpec {
        num_classes,
        ..trunk.spec
    };
    let mut state = build_fcnt(&spec, seed)?;
    for (dst, src) in state.layers.iter_mut().zip(&trunk.layers) {
        if dst.def.name.starts_with("conv") {
            debug_assert_eq!(dst.def, src.def);
            dst.params = src.params.clone();
        }
    }
    Ok(state)
}

impl NetworkState {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.def.name == name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Layer> {
        self.layers.iter_mut().find(|l| l.def.name == name)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.param_count()).sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            layers: self.layers.iter().map(|l| l.params.zero_grads()).collect(),
        }
    }

    /// Resets all momentum buffers.
    pub fn clear_velocity(&mut self) {
        for l in &mut self.layers {
            l.velocity = l.params.zero_grads();
        }
    }

    pub(crate) fn from_parts(spec: NetworkSpec, seed: u64, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        let defs = spec.layers();
        check_dim("layer count", defs.len(), layers.len())?;
        for (def, layer) in defs.iter().zip(&layers) {
            if def != &layer.def {
                return Err(Error::InvalidArgument(format!(
                    "layer {} does not match the network spec",
                    layer.def.name
                )));
            }
            let ws = layer.params.weight.shape().to_array();
            if ws != def.weight_shape() || layer.params.bias.len() != def.out_channels {
                return Err(Error::InvalidArgument(format!(
                    "layer {} has inconsistent parameter shapes",
                    def.name
                )));
            }
        }
        Ok(NetworkState { spec, seed, layers })
    }

    pub(crate) fn index_of(&self, name: &str) -> usize {
        self.layers
            .iter()
            .position(|l| l.def.name == name)
            .unwrap_or_else(|| panic!("no layer named {name}"))
    }
}

impl Gradients {
    pub fn layers(&self) -> &[ConvGrads] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvGrads] {
        &mut self.layers
    }

    pub fn scale(&mut self, k: f64) {
        self.layers.iter_mut().for_each(|g| g.scale(k));
    }

    /// All gradient entries, layer by layer (weights then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            out.extend_from_slice(g.weight.data());
            out.extend_from_slice(&g.bias);
        }
        out
    }

    /// Global L2 norm over all entries.
    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|g| g.weight.data().iter().chain(&g.bias))
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.flatten().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Per-pixel argmax; ties go to the lowest class index.
pub fn predict_labels(scores: &ScoreVolume) -> LabelMap {
    let (c, h, w) = (scores.classes(), scores.height(), scores.width());
    let plane = h * w;
    let s = scores.tensor().data();
    let labels = (0..plane)
        .map(|p| {
            let mut best = 0;
            for k in 1..c {
                if s[k * plane + p] > s[best * plane + p] {
                    best = k;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(h, w, labels).expect("plane-sized buffer")
}

/// Per-pixel classes sorted by descending score; equal scores keep
/// increasing class order.
pub fn rank_labels(scores: &ScoreVolume) -> RankedLabels {
    let (c, h, w) = (scores.classes(), scores.height(), scores.width());
    let plane = h * w;
    let s = scores.tensor().data();
    let mut ranks = vec![0u8; c * plane];
    let mut order: Vec<usize> = Vec::with_capacity(c);
    for p in 0..plane {
        order.clear();
        order.extend(0..c);
        order.sort_by(|&a, &b| s[b * plane + p].total_cmp(&s[a * plane + p]));
        for (r, &k) in order.iter().enumerate() {
            ranks[r * plane + p] = k as u8;
        }
    }
    RankedLabels::from_parts(c, h, w, ranks)
}

/// Intensity subtracted from every input pixel before the first layer.
pub const INPUT_MEAN: f64 = 0.5;

/// Factor applied to centred input pixels.
pub const INPUT_GAIN: f64 = 4.0;

/// Network input for an image with values in `[0, 1]`: channels adapted by
/// [`adapt_channels`], then centred on [`INPUT_MEAN`] and scaled by
/// [`INPUT_GAIN`].
pub fn prepare_input(image: &Tensor, spec: &NetworkSpec) -> Result<Tensor> {
    let mut x = adapt_channels(image, spec)?;
    x.data_mut()
        .iter_mut()
        .for_each(|v| *v = (*v - INPUT_MEAN) * INPUT_GAIN);
    Ok(x)
}

/// Gray image `1 x 1 x H x W` (or the matching color tensor) for a network
/// input, replicating channels when the network expects color.
pub fn adapt_channels(image: &Tensor, spec: &NetworkSpec) -> Result<Tensor> {
    let c = image.shape().c;
    if c == spec.input_channels {
        Ok(image.clone())
    } else if c == 1 {
        image.replicate_channels(spec.input_channels)
    } else {
        Err(Error::dim("input channels", spec.input_channels, c))
    }
}
