//! Parametric grayscale textures.
//!
//! Every family produces a zero-mean pattern that is standardized, scaled
//! by the contrast and shifted to a mean intensity of 0.5, so classes
//! cannot be told apart by brightness alone.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

/// Smallest generated extent.
pub const MIN_EXTENT: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Family {
    /// Oriented sinusoid.
    Grating,
    /// Rotated checkerboard.
    Checkerboard,
    /// Sum of random sinusoids with frequencies in a band.
    BandNoise,
    /// Gaussian blobs at random positions.
    Blobs,
    /// Oriented stripes of random intensity.
    StripeNoise,
}

pub const FAMILIES: [Family; 5] = [
    Family::Grating,
    Family::Checkerboard,
    Family::BandNoise,
    Family::Blobs,
    Family::StripeNoise,
];

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Grating => "grating",
            Family::Checkerboard => "checkerboard",
            Family::BandNoise => "band_noise",
            Family::Blobs => "blobs",
            Family::StripeNoise => "stripe_noise",
        })
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        FAMILIES
            .into_iter()
            .find(|f| f.to_string() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown texture family {s:?}")))
    }
}

/// Parameters of one texture class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TextureSpec {
    pub family: Family,
    /// Dominant spatial frequency in cycles per pixel, in `(0, 0.5]`.
    pub frequency: f64,
    /// Orientation in radians (unused by isotropic families).
    pub orientation: f64,
    /// Standard deviation of the intensity pattern, in `[0, 0.5]`.
    pub contrast: f64,
    /// Pixel noise relative to the pattern, `>= 0`.
    pub noise: f64,
    pub class: u8,
}

impl TextureSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self.frequency > 0.0
            && self.frequency <= 0.5
            && (0.0..=0.5).contains(&self.contrast)
            && self.noise >= 0.0
            && self.orientation.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "texture parameters out of range: {self:?}"
            )))
        }
    }
}

/// The texture classes of a synthetic bank. Class `i` uses family
/// `i mod 5`; later rounds through the families rotate and rescale.
pub fn standard_bank(classes: usize) -> Vec<TextureSpec> {
    (0..classes)
        .map(|i| {
            let family = FAMILIES[i % FAMILIES.len()];
            let round = (i / FAMILIES.len()) as f64;
            let (frequency, degrees) = match family {
                Family::Grating => (0.12, 30.0),
                Family::Checkerboard => (0.07, 0.0),
                Family::BandNoise => (0.22, 0.0),
                Family::Blobs => (0.06, 0.0),
                Family::StripeNoise => (0.09, 120.0),
            };
            TextureSpec {
                family,
                frequency: (frequency * 1.25f64.powf(round)).min(0.45),
                orientation: (degrees + 45.0 * round).to_radians(),
                contrast: 0.2,
                noise: 0.25,
                class: i as u8,
            }
        })
        .collect()
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in v.iter_mut() {
        *x = if sd > 1e-12 { (*x - mean) / sd } else { 0.0 };
    }
}

fn pattern(spec: &TextureSpec, h: usize, w: usize, rng: &mut impl Rng) -> Vec<f64> {
    let f = spec.frequency;
    let (c, s) = (spec.orientation.cos(), spec.orientation.sin());
    let rot = |y: usize, x: usize| {
        let (xf, yf) = (x as f64, y as f64);
        (xf * c + yf * s, -xf * s + yf * c)
    };
    let mut out = vec![0.0; h * w];
    match spec.family {
        Family::Grating => {
            let phase = rng.gen::<f64>() * 2.0 * PI;
            for y in 0..h {
                for x in 0..w {
                    let (u, _) = rot(y, x);
                    out[y * w + x] = (2.0 * PI * f * u + phase).sin();
                }
            }
        }
        Family::Checkerboard => {
            let (pu, pv) = (rng.gen::<f64>(), rng.gen::<f64>());
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = rot(y, x);
                    let a = (2.0 * f * u + pu).floor() as i64;
                    let b = (2.0 * f * v + pv).floor() as i64;
                    out[y * w + x] = if (a + b).rem_euclid(2) == 0 {
                        1.0
                    } else {
                        -1.0
                    };
                }
            }
        }
        Family::BandNoise => {
            let waves: Vec<(f64, f64, f64)> = (0..24)
                .map(|_| {
                    let radius = f * rng.gen_range(0.75..1.25);
                    let angle = rng.gen::<f64>() * PI;
                    (
                        radius * angle.cos(),
                        radius * angle.sin(),
                        rng.gen::<f64>() * 2.0 * PI,
                    )
                })
                .collect();
            for y in 0..h {
                for x in 0..w {
                    out[y * w + x] = waves
                        .iter()
                        .map(|&(kx, ky, ph)| {
                            (2.0 * PI * (kx * x as f64 + ky * y as f64) + ph).sin()
                        })
                        .sum();
                }
            }
        }
        Family::Blobs => {
            let sigma = 0.25 / f;
            let area = (h as f64 + 6.0 * sigma) * (w as f64 + 6.0 * sigma);
            let count = ((area * f * f * 2.0).round() as usize).max(1);
            let centres: Vec<(f64, f64)> = (0..count)
                .map(|_| {
                    (
                        rng.gen_range(-3.0 * sigma..h as f64 + 3.0 * sigma),
                        rng.gen_range(-3.0 * sigma..w as f64 + 3.0 * sigma),
                    )
                })
                .collect();
            let reach = (3.0 * sigma).ceil() as isize;
            for &(cy, cx) in &centres {
                let (iy, ix) = (cy.round() as isize, cx.round() as isize);
                for y in (iy - reach).max(0)..(iy + reach + 1).min(h as isize) {
                    for x in (ix - reach).max(0)..(ix + reach + 1).min(w as isize) {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        out[y as usize * w + x as usize] += (-d2 / (2.0 * sigma * sigma)).exp();
                    }
                }
            }
        }
        Family::StripeNoise => {
            // Stripe index along u with a gentle wobble along v.
            let span = ((h + w) as f64 * f * 2.0).ceil() as i64 + 4;
            let levels: Vec<f64> = (0..2 * span + 1)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let wobble = rng.gen::<f64>() * 2.0 * PI;
            for y in 0..h {
                for x in 0..w {
                    let (u, v) = rot(y, x);
                    let k = (f * u + 0.3 * (2.0 * PI * f * 0.25 * v + wobble).sin()).floor() as i64;
                    out[y * w + x] = levels[(k + span).clamp(0, 2 * span) as usize];
                }
            }
        }
    }
    out
}

/// Generates a `1 x 1 x H x W` texture in `[0, 1]` with mean 0.5 (up to
/// clipping). `instance` selects the random phase, positions and noise.
pub fn gen_texture(
    spec: &TextureSpec,
    height: usize,
    width: usize,
    instance: u64,
) -> Result<Tensor> {
    spec.validate()?;
    if height < MIN_EXTENT || width < MIN_EXTENT {
        return Err(Error::ImageTooSmall {
            height,
            width,
            min: MIN_EXTENT,
        });
    }
    let mut rng = seed::rng(instance, "texture", u64::from(spec.class));
    let mut v = pattern(spec, height, width, &mut rng);
    standardize(&mut v);
    for x in v.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        *x = 0.5 + spec.contrast * (*x + spec.noise * n);
    }
    // Clipping shifts the mean slightly; recentre a few times.
    for _ in 0..3 {
        v.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x += 0.5 - mean);
    }
    v.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
    Tensor::from_vec([1, 1, height, width], v)
}

/// Normalized 8-bin histogram of gradient orientations (mod pi), weighted
/// by gradient magnitude, over the first channel.
pub fn orientation_histogram(image: &Tensor) -> [f64; 8] {
    let s = image.shape();
    let p = image.plane(0, 0);
    let mut hist = [0.0; 8];
    for y in 1..s.h - 1 {
        for x in 1..s.w - 1 {
            let gx = p[y * s.w + x + 1] - p[y * s.w + x - 1];
            let gy = p[(y + 1) * s.w + x] - p[(y - 1) * s.w + x];
            let mag = gx.hypot(gy);
            if mag > 0.0 {
                let a = gy.atan2(gx).rem_euclid(PI);
                hist[((a / PI * 8.0) as usize).min(7)] += mag;
            }
        }
    }
    let total: f64 = hist.iter().sum();
    if total > 0.0 {
        hist.iter_mut().for_each(|h| *h /= total);
    }
    hist
}

/// Symmetric chi-squared distance between histograms.
pub fn chi2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, y)| *x + *y > 0.0)
        .map(|(x, y)| (x - y) * (x - y) / (x + y))
        .sum::<f64>()
        / 2.0
}

/// Mean absolute gradient, a crude scale statistic.
pub fn mean_gradient(image: &Tensor) -> f64 {
    let s = image.shape();
    let p = image.plane(0, 0);
    let mut total = 0.0;
    for y in 0..s.h {
        for x in 0..s.w - 1 {
            total += (p[y * s.w + x + 1] - p[y * s.w + x]).abs();
        }
    }
    total / (s.h * (s.w - 1)) as f64
}
