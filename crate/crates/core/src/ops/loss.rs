//! Per-pixel softmax cross-entropy with an ignore label.

use crate::error::{check_dim, Result};
use crate::label::{LabelMap, ScoreVolume, IGNORE};
use crate::tensor::Tensor;

/// Result of [`softmax_xent_pixelwise`].
#[derive(Clone, Debug)]
pub struct LossOutput {
    /// Mean negative log-likelihood over counted pixels (0 when none).
    pub loss: f64,
    /// Gradient of `loss` with respect to the scores.
    pub grad: ScoreVolume,
    /// Number of non-ignored pixels.
    pub counted: usize,
    /// Set when every target pixel carries the ignore label.
    pub all_ignored: bool,
}

/// Mean cross-entropy over non-ignored pixels and its gradient
/// `(softmax - onehot) / count`; ignored pixels get zero gradient.
pub fn softmax_xent_pixelwise(scores: &ScoreVolume, target: &LabelMap) -> Result<LossOutput> {
    let (c, h, w) = (scores.classes(), scores.height(), scores.width());
    check_dim("target height", h, target.height())?;
    check_dim("target width", w, target.width())?;
    target.validate(c)?;
    let plane = h * w;
    let s = scores.tensor().data();
    let counted = target.as_slice().iter().filter(|&&l| l != IGNORE).count();
    let mut grad = Tensor::zeros(scores.shape());
    if counted == 0 {
        return Ok(LossOutput {
            loss: 0.0,
            grad: ScoreVolume::new(grad)?,
            counted,
            all_ignored: true,
        });
    }
    let inv = 1.0 / counted as f64;
    let g = grad.data_mut();
    let mut total = 0.0;
    let mut probs = vec![0.0; c];
    for (p, &label) in target.as_slice().iter().enumerate() {
        if label == IGNORE {
            continue;
        }
        let mut m = f64::NEG_INFINITY;
        for k in 0..c {
            m = m.max(s[k * plane + p]);
        }
        let mut z = 0.0;
        for (k, pr) in probs.iter_mut().enumerate() {
            *pr = (s[k * plane + p] - m).exp();
            z += *pr;
        }
        let t = label as usize;
        total += z.ln() - (s[t * plane + p] - m);
        for (k, pr) in probs.iter().enumerate() {
            let onehot = if k == t { 1.0 } else { 0.0 };
            g[k * plane + p] = (pr / z - onehot) * inv;
        }
    }
    Ok(LossOutput {
        loss: total * inv,
        grad: ScoreVolume::new(grad)?,
        counted,
        all_ignored: false,
    })
}
