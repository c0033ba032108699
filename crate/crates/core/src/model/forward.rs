use crate::error::{check_dim, Error, Result};
use crate::label::ScoreVolume;
use crate::ops::activation::relu_inplace;
use crate::ops::{
    conv2d_backward, conv2d_forward, maxpool_backward, maxpool_forward, relu_backward, upsample,
    upsample_backward, ConvGrads, PoolIndices, UpsampleMode,
};
use crate::tensor::Tensor;

use super::{Gradients, NetworkState, BLOCKS, MIN_INPUT, STRIDE};

/// Which skip heads take part in the fusion. All on by default.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fusion {
    /// Indexed by block: `skips[0]` is the block-1 head.
    pub skips: [bool; BLOCKS - 1],
}

impl Default for Fusion {
    fn default() -> Self {
        Fusion {
            skips: [true; BLOCKS - 1],
        }
    }
}

impl Fusion {
    pub fn deep_only() -> Self {
        Fusion {
            skips: [false; BLOCKS - 1],
        }
    }
}

/// Activations kept by [`forward`] for [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    fusion: Fusion,
    input: Tensor,
    /// Post-ReLU output of every block convolution, in layer order.
    block_acts: Vec<Tensor>,
    pool_idx: Vec<PoolIndices>,
    pooled: Vec<Tensor>,
    conv5: Tensor,
    conv6: Tensor,
    deep: Tensor,
    /// Inputs of `up_fuse3`, `up_fuse2`, `up_final`.
    fused: [Tensor; BLOCKS - 1],
}

impl ForwardCache {
    /// Deep-path class scores at stride 16, before any upsampling.
    pub fn deep_scores(&self) -> &Tensor {
        &self.deep
    }

    pub fn input(&self) -> &Tensor {
        &self.input
    }
}

fn check_input(state: &NetworkState, image: &Tensor) -> Result<()> {
    let s = image.shape();
    check_dim("batch", 1, s.n)?;
    check_dim("input channels", state.spec.input_channels, s.c)?;
    if s.h < MIN_INPUT || s.w < MIN_INPUT {
        return Err(Error::ImageTooSmall {
            height: s.h,
            width: s.w,
            min: MIN_INPUT,
        });
    }
    if !s.h.is_multiple_of(STRIDE) || !s.w.is_multiple_of(STRIDE) {
        return Err(Error::InvalidArgument(format!(
            "input extents {}x{} must be multiples of {STRIDE}",
            s.h, s.w
        )));
    }
    Ok(())
}

/// Full-resolution class scores for a `1 x C_in x H x W` image whose
/// extents are multiples of 16 and at least 32.
pub fn forward(state: &NetworkState, image: &Tensor) -> Result<(ScoreVolume, ForwardCache)> {
    forward_with(state, image, Fusion::default())
}

/// [`forward`] with a chosen subset of skip heads.
pub fn forward_with(
    state: &NetworkState,
    image: &Tensor,
    fusion: Fusion,
) -> Result<(ScoreVolume, ForwardCache)> {
    check_input(state, image)?;
    let layers = &state.layers;
    let spec = &state.spec;
    let mut block_acts = Vec::new();
    let mut pool_idx = Vec::with_capacity(BLOCKS);
    let mut pooled: Vec<Tensor> = Vec::with_capacity(BLOCKS);
    let mut li = 0;
    for b in 0..BLOCKS {
        for i in 0..spec.convs_per_block[b] {
            let x = if i > 0 {
                block_acts.last().expect("previous conv")
            } else if b > 0 {
                &pooled[b - 1]
            } else {
                image
            };
            let mut y = conv2d_forward(x, &layers[li].params)?;
            relu_inplace(&mut y);
            block_acts.push(y);
            li += 1;
        }
        let (p, idx) = maxpool_forward(block_acts.last().expect("block has a conv"));
        pooled.push(p);
        pool_idx.push(idx);
    }
    let mut conv5 = conv2d_forward(&pooled[BLOCKS - 1], &layers[state.index_of("conv5")].params)?;
    relu_inplace(&mut conv5);
    let mut conv6 = conv2d_forward(&conv5, &layers[state.index_of("conv6")].params)?;
    relu_inplace(&mut conv6);
    let deep = conv2d_forward(&conv6, &layers[state.index_of("score")].params)?;

    let up_names = ["up_score", "up_fuse3", "up_fuse2"];
    let mut current = deep.clone();
    let mut fused: Vec<Tensor> = Vec::with_capacity(BLOCKS - 1);
    for (step, up_name) in up_names.iter().enumerate() {
        let block = BLOCKS - 2 - step; // 2, 1, 0
        let up = &layers[state.index_of(up_name)].params;
        let mut sum = upsample(&current, 2, UpsampleMode::Learned(up))?;
        if fusion.skips[block] {
            let head = &layers[state.index_of(&format!("score_pool{}", block + 1))].params;
            let h = conv2d_forward(&pooled[block], head)?;
            sum.add_assign(&h)?;
        }
        fused.push(sum.clone());
        current = sum;
    }
    let up_final = &layers[state.index_of("up_final")].params;
    let out = upsample(&current, 2, UpsampleMode::Learned(up_final))?;
    let fused: [Tensor; BLOCKS - 1] = fused.try_into().expect("three fusion stages");
    Ok((
        ScoreVolume::new(out)?,
        ForwardCache {
            fusion,
            input: image.clone(),
            block_acts,
            pool_idx,
            pooled,
            conv5,
            conv6,
            deep,
            fused,
        },
    ))
}

fn put(grads: &mut Gradients, state: &NetworkState, name: &str, g: ConvGrads) {
    grads.layers[state.index_of(name)] = g;
}

/// Parameter gradients given the loss gradient with respect to the scores.
/// Summation nodes pass their incoming gradient unchanged to both branches.
pub fn backward(
    state: &NetworkState,
    cache: &ForwardCache,
    grad_scores: &ScoreVolume,
) -> Result<Gradients> {
    let spec = &state.spec;
    let layers = &state.layers;
    let in_shape = cache.input.shape();
    grad_scores
        .tensor()
        .shape()
        .expect(&crate::tensor::Shape::new(
            1,
            spec.num_classes,
            in_shape.h,
            in_shape.w,
        ))?;
    let mut grads = state.zero_gradients();
    let mut pooled_grad: Vec<Option<Tensor>> = vec![None; BLOCKS];

    let up_final = &layers[state.index_of("up_final")].params;
    let (mut g, pg) = upsample_backward(
        &cache.fused[BLOCKS - 2],
        2,
        UpsampleMode::Learned(up_final),
        grad_scores.tensor(),
    )?;
    put(&mut grads, state, "up_final", pg.expect("learned"));

    // Walk the fusion chain back down: block 1 head, block 2 head, block 3 head.
    let up_names = ["up_fuse2", "up_fuse3", "up_score"];
    for (step, up_name) in up_names.iter().enumerate() {
        let block = step; // 0, 1, 2
        if cache.fusion.skips[block] {
            let name = format!("score_pool{}", block + 1);
            let head = &layers[state.index_of(&name)].params;
            let (gp, hg) = conv2d_backward(&cache.pooled[block], head, &g)?;
            put(&mut grads, state, &name, hg);
            pooled_grad[block] = Some(gp);
        }
        let up_input = if step + 1 < up_names.len() {
            &cache.fused[BLOCKS - 3 - step]
        } else {
            &cache.deep
        };
        let up = &layers[state.index_of(up_name)].params;
        let (gi, pg) = upsample_backward(up_input, 2, UpsampleMode::Learned(up), &g)?;
        put(&mut grads, state, up_name, pg.expect("learned"));
        g = gi;
    }

    let (g6, sg) = conv2d_backward(&cache.conv6, &layers[state.index_of("score")].params, &g)?;
    put(&mut grads, state, "score", sg);
    let g6 = relu_backward(&cache.conv6, &g6)?;
    let (g5, cg) = conv2d_backward(&cache.conv5, &layers[state.index_of("conv6")].params, &g6)?;
    put(&mut grads, state, "conv6", cg);
    let g5 = relu_backward(&cache.conv5, &g5)?;
    let (gp4, cg) = conv2d_backward(
        &cache.pooled[BLOCKS - 1],
        &layers[state.index_of("conv5")].params,
        &g5,
    )?;
    put(&mut grads, state, "conv5", cg);
    pooled_grad[BLOCKS - 1] = Some(gp4);

    let mut li = spec.convs_per_block.iter().sum::<usize>();
    let mut carry: Option<Tensor> = None;
    for b in (0..BLOCKS).rev() {
        let mut gp = pooled_grad[b]
            .take()
            .unwrap_or_else(|| Tensor::zeros(cache.pooled[b].shape()));
        if let Some(c) = carry.take() {
            gp.add_assign(&c)?;
        }
        let mut ga = maxpool_backward(&cache.pool_idx[b], &gp)?;
        for i in (0..spec.convs_per_block[b]).rev() {
            li -= 1;
            let out = &cache.block_acts[li];
            let gz = relu_backward(out, &ga)?;
            let input = if i > 0 {
                &cache.block_acts[li - 1]
            } else if b > 0 {
                &cache.pooled[b - 1]
            } else {
                &cache.input
            };
            let (gi, cg) = conv2d_backward(input, &layers[li].params, &gz)?;
            grads.layers[li] = cg;
            ga = gi;
        }
        if b > 0 {
            carry = Some(ga);
        }
    }
    Ok(grads)
}
