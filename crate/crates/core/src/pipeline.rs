//! End-to-end segmentation of one image: supervised (trained network, then
//! optional refinement) and unsupervised (pre-segmentation, fine-tuning on
//! the image itself, refinement).

use crate::error::{Error, Result};
use crate::label::{LabelMap, ScoreVolume};
use crate::manifest::Manifest;
use crate::model::{build_fcnt, build_from_trunk, NetworkSpec, NetworkState};
use crate::preseg::{preseg_clean, preseg_from_network, CleanedPreseg, PresegConfig};
use crate::refine::{refine, RefineReport};
use crate::tensor::Tensor;
use crate::train::{
    compact_classes, expand_classes, infer_full, train_unsupervised, valid_extent, EarlyStopConfig,
    StopReport, TrainConfig,
};

/// Output of [`segment`].
#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub scores: ScoreVolume,
    /// Per-pixel argmax.
    pub raw: LabelMap,
    pub refined: Option<RefineReport>,
}

impl Segmentation {
    /// Refined labels when refinement ran, raw labels otherwise.
    pub fn labels(&self) -> &LabelMap {
        self.refined.as_ref().map_or(&self.raw, |r| &r.labels)
    }
}

/// Runs a trained network on `image` and, given `refine_classes = Some(n)`,
/// refines the result to one region for each of `n` classes.
pub fn segment(
    state: &NetworkState,
    image: &Tensor,
    refine_classes: Option<usize>,
) -> Result<Segmentation> {
    let (scores, raw) = infer_full(state, image)?;
    let refined = refine_classes.map(|n| refine(&scores, n)).transpose()?;
    Ok(Segmentation {
        scores,
        raw,
        refined,
    })
}

/// Where the pre-segmentation comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum PresegSource {
    /// k-means over the scores of a pre-trained network.
    KMeans(PresegConfig),
    /// A label map produced elsewhere.
    Labels(LabelMap),
}

/// Settings of the unsupervised pipeline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnsupConfig {
    /// Chebyshev radius of the ignore band along pre-segmentation borders.
    pub border_radius: usize,
    pub finetune: TrainConfig,
    pub early: EarlyStopConfig,
    /// Train on the whole image every iteration instead of
    /// `finetune.crop_size` crops.
    pub full_image: bool,
    /// Start from the feature layers of the pre-trained network (when one
    /// is given) instead of a fresh network.
    pub reuse_trunk: bool,
    /// Topology of a fresh network; its class count is replaced by the
    /// number of pre-segmentation classes.
    pub spec: NetworkSpec,
    /// Seed of the freshly initialized layers.
    pub net_seed: u64,
}

impl Default for UnsupConfig {
    fn default() -> Self {
        UnsupConfig {
            border_radius: 3,
            finetune: TrainConfig {
                lr: 3e-3,
                max_iters: EarlyStopConfig::default().hard_cap,
                ..TrainConfig::default()
            },
            early: EarlyStopConfig::default(),
            full_image: true,
            reuse_trunk: true,
            spec: NetworkSpec::compact(2),
            net_seed: 0,
        }
    }
}

impl UnsupConfig {
    pub fn write_to(&self, m: &mut Manifest, prefix: &str) {
        m.set(format!("{prefix}border_radius"), self.border_radius);
        m.set(format!("{prefix}full_image"), self.full_image);
        m.set(format!("{prefix}reuse_trunk"), self.reuse_trunk);
        m.set(format!("{prefix}net_seed"), self.net_seed);
        m.set(format!("{prefix}spec"), self.spec);
        self.finetune.write_to(m, &format!("{prefix}finetune."));
        self.early.write_to(m, &format!("{prefix}early."));
    }
}

/// Output of [`segment_unsupervised`]. Every label map uses the class ids
/// of the pre-segmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct UnsupOutcome {
    pub preseg: LabelMap,
    pub cleaned: CleanedPreseg,
    pub stop: StopReport,
    /// Argmax of the fine-tuned network.
    pub raw: LabelMap,
    pub refined: RefineReport,
    pub state: NetworkState,
}

/// Pre-segments `image`, cleans the pre-segmentation, fine-tunes a network
/// with one class per surviving pre-segmentation class on the image itself
/// with early stopping, and refines its output to one region per class.
pub fn segment_unsupervised(
    pretrained: Option<&NetworkState>,
    image: &Tensor,
    source: &PresegSource,
    config: &UnsupConfig,
) -> Result<UnsupOutcome> {
    let preseg = match source {
        PresegSource::KMeans(pc) => {
            let net = pretrained.ok_or_else(|| {
                Error::InvalidArgument(
                    "k-means pre-segmentation needs a pre-trained network".into(),
                )
            })?;
            preseg_from_network(net, image, pc)?
        }
        PresegSource::Labels(l) => {
            let s = image.shape();
            if (l.height(), l.width()) != (s.h, s.w) {
                return Err(Error::InvalidArgument(format!(
                    "pre-segmentation is {}x{} but the image is {}x{}",
                    l.height(),
                    l.width(),
                    s.h,
                    s.w
                )));
            }
            l.clone()
        }
    };
    let cleaned = preseg_clean(&preseg, config.border_radius)?;
    if !cleaned.dropped.is_empty() {
        log::warn!(
            "pre-segmentation classes {:?} vanished during cleaning",
            cleaned.dropped
        );
    }
    let (compact, originals) = compact_classes(&cleaned.labels);
    let k = originals.len();
    if k < 2 {
        return Err(Error::SingleClass(k));
    }
    let state = match pretrained.filter(|_| config.reuse_trunk) {
        Some(trunk) => build_from_trunk(trunk, k, config.net_seed)?,
        None => build_fcnt(
            &NetworkSpec {
                num_classes: k,
                input_channels: image.shape().c,
                ..config.spec
            },
            config.net_seed,
        )?,
    };
    let mut ft = config.finetune;
    if config.full_image {
        let s = image.shape();
        ft.crop_size = valid_extent(s.h.max(s.w));
    }
    let (state, stop) = train_unsupervised(state, image, &compact, &ft, &config.early)?;
    let (scores, raw) = infer_full(&state, image)?;
    let mut refined = refine(&scores, k)?;
    refined.labels = expand_classes(&refined.labels, &originals);
    Ok(UnsupOutcome {
        preseg,
        cleaned,
        stop,
        raw: expand_classes(&raw, &originals),
        refined,
        state,
    })
}
