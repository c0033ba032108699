//! Training protocols and full-image inference.
//!
//! Supervised training draws one random crop of one random sample per SGD
//! iteration. Unsupervised fine-tuning trains on crops of the test image
//! labeled by a pre-segmentation and stops a fixed number of iterations
//! after the network first predicts every pre-segmentation class.

use std::fmt;
use std::io::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::label::{LabelMap, ScoreVolume, IGNORE};
use crate::manifest::Manifest;
use crate::model::{
    backward, forward, predict_labels, prepare_input, Gradients, NetworkState, MIN_INPUT, STRIDE,
};
use crate::ops::softmax_xent_pixelwise;
use crate::optim::{sgd_step, Sgd};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub max_iters: usize,
    /// Side of the square training crops; at least 32 and a multiple of 16.
    pub crop_size: usize,
    pub seed: u64,
    /// Largest global L2 norm of a gradient step; larger gradients are
    /// rescaled to it. 0 disables clipping.
    pub clip_norm: f64,
    /// Log the mean loss every this many iterations (0 disables).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
            max_iters: 2000,
            crop_size: 64,
            seed: 0,
            clip_norm: 5.0,
            eval_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(
                "momentum must be in [0, 1) and weight decay >= 0".into(),
            ));
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "clip norm must be >= 0, got {}",
                self.clip_norm
            )));
        }
        if self.crop_size < MIN_INPUT || !self.crop_size.is_multiple_of(STRIDE) {
            return Err(Error::InvalidArgument(format!(
                "crop size must be at least {MIN_INPUT} and a multiple of {STRIDE}, got {}",
                self.crop_size
            )));
        }
        Ok(())
    }

    pub fn sgd(&self) -> Sgd {
        Sgd {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn write_to(&self, m: &mut Manifest, prefix: &str) {
        m.set(format!("{prefix}lr"), self.lr);
        m.set(format!("{prefix}momentum"), self.momentum);
        m.set(format!("{prefix}weight_decay"), self.weight_decay);
        m.set(format!("{prefix}max_iters"), self.max_iters);
        m.set(format!("{prefix}crop_size"), self.crop_size);
        m.set(format!("{prefix}seed"), self.seed);
        m.set(format!("{prefix}clip_norm"), self.clip_norm);
        m.set(format!("{prefix}eval_every"), self.eval_every);
    }

    pub fn read_from(m: &Manifest, prefix: &str) -> Result<Self> {
        Ok(TrainConfig {
            lr: m.parse(&format!("{prefix}lr"))?,
            momentum: m.parse(&format!("{prefix}momentum"))?,
            weight_decay: m.parse(&format!("{prefix}weight_decay"))?,
            max_iters: m.parse(&format!("{prefix}max_iters"))?,
            crop_size: m.parse(&format!("{prefix}crop_size"))?,
            seed: m.parse(&format!("{prefix}seed"))?,
            clip_norm: m.parse(&format!("{prefix}clip_norm"))?,
            eval_every: m.parse(&format!("{prefix}eval_every"))?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EarlyStopConfig {
    /// Iterations to keep training once every class has been detected.
    pub grace_iters: usize,
    /// Iteration at which training stops regardless.
    pub hard_cap: usize,
    /// Run detection every this many iterations.
    pub check_every: usize,
}

impl Default for EarlyStopConfig {
    fn default() -> Self {
        EarlyStopConfig {
            grace_iters: 60,
            hard_cap: 400,
            check_every: 1,
        }
    }
}

impl EarlyStopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grace_iters == 0 || self.grace_iters > self.hard_cap || self.check_every == 0 {
            return Err(Error::InvalidArgument(format!(
                "early stop needs 0 < grace ({}) <= cap ({}) and check_every > 0",
                self.grace_iters, self.hard_cap
            )));
        }
        Ok(())
    }

    pub fn write_to(&self, m: &mut Manifest, prefix: &str) {
        m.set(format!("{prefix}grace_iters"), self.grace_iters);
        m.set(format!("{prefix}hard_cap"), self.hard_cap);
        m.set(format!("{prefix}check_every"), self.check_every);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopCause {
    /// The grace period after detection ran out.
    GraceElapsed,
    /// The hard cap was reached first.
    HardCap,
}

impl fmt::Display for StopCause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopCause::GraceElapsed => "grace_elapsed",
            StopCause::HardCap => "hard_cap",
        })
    }
}

/// The stopping rule on its own: fed one observation per checked
/// iteration, it says when to stop.
#[derive(Clone, Debug)]
pub struct EarlyStopper {
    config: EarlyStopConfig,
    trigger: Option<usize>,
}

impl EarlyStopper {
    pub fn new(config: EarlyStopConfig) -> Self {
        EarlyStopper {
            config,
            trigger: None,
        }
    }

    /// Whether detection should run after iteration `t` (1-based).
    pub fn wants_check(&self, t: usize) -> bool {
        self.trigger.is_none() && t.is_multiple_of(self.config.check_every)
    }

    /// Records the detection result of iteration `t`.
    pub fn observe(&mut self, t: usize, all_detected: bool) {
        if self.trigger.is_none() && all_detected {
            self.trigger = Some(t);
        }
    }

    pub fn trigger(&self) -> Option<usize> {
        self.trigger
    }

    /// Iteration at which training ends given what has been seen so far.
    pub fn stop_at(&self) -> usize {
        match self.trigger {
            Some(t) => (t + self.config.grace_iters).min(self.config.hard_cap),
            None => self.config.hard_cap,
        }
    }

    pub fn should_stop(&self, t: usize) -> bool {
        t >= self.stop_at()
    }

    pub fn cause(&self) -> StopCause {
        match self.trigger {
            Some(t) if t + self.config.grace_iters <= self.config.hard_cap => {
                StopCause::GraceElapsed
            }
            _ => StopCause::HardCap,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StopReport {
    /// First iteration at which every class was predicted.
    pub trigger: Option<usize>,
    /// Number of SGD iterations run.
    pub stopped_at: usize,
    pub cause: StopCause,
    pub losses: Vec<f64>,
}

impl StopReport {
    pub fn write_to(&self, m: &mut Manifest, prefix: &str) {
        m.set(
            format!("{prefix}trigger"),
            self.trigger.map_or("none".to_string(), |t| t.to_string()),
        );
        m.set(format!("{prefix}stopped_at"), self.stopped_at);
        m.set(format!("{prefix}cause"), self.cause);
    }
}

/// An image with per-pixel labels (uniform for non-segmented training
/// images; possibly with ignore pixels).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub image: Tensor,
    pub labels: LabelMap,
}

impl TrainSample {
    pub fn new(image: Tensor, labels: LabelMap) -> Result<Self> {
        let s = image.shape();
        if s.n != 1 || s.h != labels.height() || s.w != labels.width() {
            return Err(Error::InvalidArgument(format!(
                "sample image {}x{}x{}x{} does not match {}x{} labels",
                s.n,
                s.c,
                s.h,
                s.w,
                labels.height(),
                labels.width()
            )));
        }
        Ok(TrainSample { image, labels })
    }

    /// A non-segmented image: every pixel carries `class`.
    pub fn uniform(image: Tensor, class: u8) -> Result<Self> {
        let s = image.shape();
        Self::new(image, LabelMap::filled(s.h, s.w, class))
    }
}

/// Smallest extent the network accepts that is at least `n`.
pub fn valid_extent(n: usize) -> usize {
    n.div_ceil(STRIDE).max(MIN_INPUT / STRIDE) * STRIDE
}

/// Crop of a sample, padded to a valid network extent. Padded image pixels
/// replicate the border and padded labels are ignore.
fn crop_padded(
    sample: &TrainSample,
    y0: usize,
    x0: usize,
    h: usize,
    w: usize,
) -> Result<(Tensor, LabelMap)> {
    let img = sample.image.crop(y0, x0, h, w)?;
    let lab = sample.labels.crop(y0, x0, h, w)?;
    let (vh, vw) = (valid_extent(h), valid_extent(w));
    if (vh, vw) == (h, w) {
        return Ok((img, lab));
    }
    let padded = LabelMap::from_fn(vh, vw, |y, x| {
        if y < h && x < w {
            lab.get(y, x)
        } else {
            IGNORE
        }
    });
    Ok((img.pad_replicate(vh, vw), padded))
}

/// Loss and parameter gradients of one image/label pair.
pub fn train_step_gradients(
    state: &NetworkState,
    image: &Tensor,
    labels: &LabelMap,
) -> Result<(f64, Gradients)> {
    let image = prepare_input(image, state.spec())?;
    let (scores, cache) = forward(state, &image)?;
    let out = softmax_xent_pixelwise(&scores, labels)?;
    if !out.loss.is_finite() {
        return Err(Error::Numerical(format!(
            "training loss became {}",
            out.loss
        )));
    }
    let grads = backward(state, &cache, &out.grad)?;
    Ok((out.loss, grads))
}

/// One SGD step on a crop, with optional gradient clipping.
fn step(
    state: &mut NetworkState,
    img: &Tensor,
    lab: &LabelMap,
    sgd: &Sgd,
    clip_norm: f64,
) -> Result<f64> {
    let (loss, mut grads) = train_step_gradients(state, img, lab)?;
    if clip_norm > 0.0 {
        let norm = grads.norm();
        if norm > clip_norm {
            grads.scale(clip_norm / norm);
        }
    }
    sgd_step(state, &grads, sgd)?;
    Ok(loss)
}

/// Draws a crop with at least one labeled pixel.
fn draw_crop(
    samples: &[TrainSample],
    crop: usize,
    rng: &mut impl Rng,
) -> Result<(Tensor, LabelMap)> {
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        let s = &samples[rng.gen_range(0..samples.len())];
        let (h, w) = (s.labels.height().min(crop), s.labels.width().min(crop));
        let y0 = rng.gen_range(0..=s.labels.height() - h);
        let x0 = rng.gen_range(0..=s.labels.width() - w);
        let (img, lab) = crop_padded(s, y0, x0, h, w)?;
        if lab.count_ignored() < lab.len() {
            return Ok((img, lab));
        }
    }
    Err(Error::InvalidArgument(format!(
        "no crop with a labeled pixel found in {ATTEMPTS} draws"
    )))
}

fn check_samples(state: &NetworkState, samples: &[TrainSample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no training samples".into()));
    }
    for s in samples {
        s.labels.validate(state.num_classes())?;
    }
    Ok(())
}

fn log_progress(t: usize, losses: &[f64], every: usize) {
    if every > 0 && t.is_multiple_of(every) {
        let window = &losses[losses.len().saturating_sub(every)..];
        log::info!(
            "iteration {t}: mean loss {:.5}",
            window.iter().sum::<f64>() / window.len() as f64
        );
    }
}

/// Runs `config.max_iters` SGD iterations, each on one random crop of one
/// random sample. Returns the trained state and the per-iteration loss.
pub fn train_supervised(
    mut state: NetworkState,
    samples: &[TrainSample],
    config: &TrainConfig,
) -> Result<(NetworkState, Vec<f64>)> {
    config.validate()?;
    check_samples(&state, samples)?;
    let mut rng = seed::rng(config.seed, "train", 0);
    let sgd = config.sgd();
    let mut losses = Vec::with_capacity(config.max_iters);
    for t in 1..=config.max_iters {
        let (img, lab) = draw_crop(samples, config.crop_size, &mut rng)?;
        let loss = step(&mut state, &img, &lab, &sgd, config.clip_norm)?;
        losses.push(loss);
        log_progress(t, &losses, config.eval_every);
    }
    Ok((state, losses))
}

/// Fine-tunes `state` on crops of `image` labeled by `preseg` and stops by
/// the early-stop rule. Detection runs full-image inference and succeeds
/// when every class of `preseg` is somewhere in the argmax output.
pub fn train_unsupervised(
    mut state: NetworkState,
    image: &Tensor,
    preseg: &LabelMap,
    config: &TrainConfig,
    early: &EarlyStopConfig,
) -> Result<(NetworkState, StopReport)> {
    config.validate()?;
    early.validate()?;
    let classes = preseg.classes();
    if classes.len() < 2 {
        return Err(Error::SingleClass(classes.len()));
    }
    let sample = TrainSample::new(image.clone(), preseg.clone())?;
    let samples = std::slice::from_ref(&sample);
    check_samples(&state, samples)?;
    let mut rng = seed::rng(config.seed, "finetune", 0);
    let sgd = config.sgd();
    let mut stopper = EarlyStopper::new(*early);
    let mut losses = Vec::new();
    let mut t = 0;
    while !stopper.should_stop(t) {
        t += 1;
        let (img, lab) = draw_crop(samples, config.crop_size, &mut rng)?;
        let loss = step(&mut state, &img, &lab, &sgd, config.clip_norm)?;
        losses.push(loss);
        log_progress(t, &losses, config.eval_every);
        if stopper.wants_check(t) {
            let (_, pred) = infer_full(&state, image)?;
            let hist = pred.histogram();
            let detected = classes.iter().all(|&c| hist[c as usize] > 0);
            stopper.observe(t, detected);
            if detected {
                log::info!("all {} classes detected at iteration {t}", classes.len());
            }
        }
    }
    let report = StopReport {
        trigger: stopper.trigger(),
        stopped_at: t,
        cause: stopper.cause(),
        losses,
    };
    Ok((state, report))
}

/// Scores and argmax labels for an image of any size of at least 1x1: the
/// image is replicate-padded at the bottom and right to a valid network
/// extent and the outputs are cropped back.
pub fn infer_full(state: &NetworkState, image: &Tensor) -> Result<(ScoreVolume, LabelMap)> {
    let s = image.shape();
    if s.n != 1 || s.h == 0 || s.w == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot infer on a {}x{}x{}x{} tensor",
            s.n, s.c, s.h, s.w
        )));
    }
    let image = prepare_input(image, state.spec())?;
    let (vh, vw) = (valid_extent(s.h), valid_extent(s.w));
    let padded = if (vh, vw) == (s.h, s.w) {
        image
    } else {
        image.pad_replicate(vh, vw)
    };
    let (scores, _) = forward(state, &padded)?;
    let scores = if (vh, vw) == (s.h, s.w) {
        scores
    } else {
        ScoreVolume::new(scores.tensor().crop(0, 0, s.h, s.w)?)?
    };
    if !scores.tensor().all_finite() {
        return Err(Error::Numerical(
            "network produced non-finite scores".into(),
        ));
    }
    let labels = predict_labels(&scores);
    Ok((scores, labels))
}

/// Renumbers the classes of `labels` to `0..k` in ascending order. Returns
/// the compacted map and the original class of each new index.
pub fn compact_classes(labels: &LabelMap) -> (LabelMap, Vec<u8>) {
    let classes = labels.classes();
    let mut table: [u8; 256] = std::array::from_fn(|i| i as u8);
    for (i, &c) in classes.iter().enumerate() {
        table[c as usize] = i as u8;
    }
    (labels.remap(&table), classes)
}

/// Inverse of [`compact_classes`].
pub fn expand_classes(labels: &LabelMap, originals: &[u8]) -> LabelMap {
    let mut table: [u8; 256] = std::array::from_fn(|i| i as u8);
    for (i, &c) in originals.iter().enumerate() {
        table[i] = c;
    }
    labels.remap(&table)
}

/// Writes `iteration,loss` lines with a header.
pub fn write_loss_csv(path: impl AsRef<Path>, losses: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(losses.len() * 24 + 16);
    writeln!(out, "iteration,loss").expect("write to memory");
    for (i, l) in losses.iter().enumerate() {
        writeln!(out, "{},{l}", i + 1).expect("write to memory");
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
