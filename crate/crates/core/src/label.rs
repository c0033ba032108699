//! Label maps and per-pixel class-score volumes.

use std::collections::BTreeSet;

use crate::error::{check_dim, Error, Result};
use crate::tensor::{Shape, Tensor};

/// Reserved label excluded from losses, gradients and metrics.
pub const IGNORE: u8 = 255;

/// Largest number of classes a [`LabelMap`] can carry.
pub const MAX_CLASSES: usize = IGNORE as usize;

/// `height x width` class indices in row-major order.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        check_dim("label buffer length", height * width, labels.len())?;
        Ok(LabelMap {
            height,
            width,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        LabelMap {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut labels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                labels.push(f(y, x));
            }
        }
        LabelMap {
            height,
            width,
            labels,
        }
    }

    /// Parses rows of whitespace-separated digits, `.` meaning [`IGNORE`].
    /// Handy for small fixtures: `LabelMap::parse("0 0 1\n0 1 1")`.
    pub fn parse(text: &str) -> Result<Self> {
        let rows: Vec<Vec<u8>> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.split_whitespace()
                    .map(|t| {
                        if t == "." {
                            Ok(IGNORE)
                        } else {
                            t.parse::<u8>().map_err(|_| {
                                Error::InvalidArgument(format!("bad label token {t:?}"))
                            })
                        }
                    })
                    .collect::<Result<Vec<u8>>>()
            })
            .collect::<Result<_>>()?;
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::InvalidArgument("ragged label rows".into()));
        }
        LabelMap::new(height, width, rows.concat())
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.labels
    }

    pub fn as_mut_slice(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.labels
    }

    pub fn same_extents(&self, other: &LabelMap) -> Result<()> {
        check_dim("label height", self.height, other.height)?;
        check_dim("label width", self.width, other.width)
    }

    /// Distinct non-ignore labels in increasing order.
    pub fn classes(&self) -> Vec<u8> {
        self.labels
            .iter()
            .copied()
            .filter(|&l| l != IGNORE)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Pixel count per label value, `IGNORE` excluded.
    pub fn histogram(&self) -> [usize; 256] {
        let mut h = [0usize; 256];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h[IGNORE as usize] = 0;
        h
    }

    pub fn count_ignored(&self) -> usize {
        self.labels.iter().filter(|&&l| l == IGNORE).count()
    }

    /// Fails if any label is neither `< classes` nor [`IGNORE`].
    pub fn validate(&self, classes: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .position(|&l| l != IGNORE && l as usize >= classes)
        {
            Some(index) => Err(Error::LabelOutOfRange {
                label: self.labels[index],
                index,
                classes,
            }),
            None => Ok(()),
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<LabelMap> {
        if y0 + h > self.height {
            return Err(Error::dim("label height", self.height, y0 + h));
        }
        if x0 + w > self.width {
            return Err(Error::dim("label width", self.width, x0 + w));
        }
        Ok(LabelMap::from_fn(h, w, |y, x| self.get(y0 + y, x0 + x)))
    }

    /// Replaces each label through `map` (indexed by label value).
    pub fn remap(&self, map: &[u8; 256]) -> LabelMap {
        LabelMap {
            height: self.height,
            width: self.width,
            labels: self.labels.iter().map(|&l| map[l as usize]).collect(),
        }
    }
}

impl std::fmt::Debug for LabelMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "LabelMap {}x{}", self.height, self.width)?;
        if self.height * self.width <= 1024 {
            for y in 0..self.height {
                let row: Vec<String> = (0..self.width)
                    .map(|x| match self.get(y, x) {
                        IGNORE => ".".to_string(),
                        l => l.to_string(),
                    })
                    .collect();
                writeln!(f, "  {}", row.join(" "))?;
            }
        }
        Ok(())
    }
}

/// Per-pixel class scores, `1 x C x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreVolume(Tensor);

impl ScoreVolume {
    pub fn new(tensor: Tensor) -> Result<Self> {
        check_dim("score batch", 1, tensor.shape().n)?;
        if tensor.shape().c == 0 {
            return Err(Error::InvalidArgument(
                "score volume with no classes".into(),
            ));
        }
        Ok(ScoreVolume(tensor))
    }

    pub fn from_fn(
        classes: usize,
        h: usize,
        w: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        ScoreVolume(Tensor::from_fn([1, classes, h, w], |_, c, y, x| f(c, y, x)))
    }

    pub fn classes(&self) -> usize {
        self.0.shape().c
    }

    pub fn height(&self) -> usize {
        self.0.shape().h
    }

    pub fn width(&self) -> usize {
        self.0.shape().w
    }

    pub fn shape(&self) -> Shape {
        self.0.shape()
    }

    #[inline]
    pub fn score(&self, c: usize, y: usize, x: usize) -> f64 {
        self.0.at(0, c, y, x)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    /// Scores of all classes at one pixel.
    pub fn pixel(&self, y: usize, x: usize) -> Vec<f64> {
        (0..self.classes()).map(|c| self.score(c, y, x)).collect()
    }
}

/// Per-pixel class indices sorted best-first: `rank(r, y, x)` is the class
/// with the `r`-th highest score (0-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedLabels {
    classes: usize,
    height: usize,
    width: usize,
    ranks: Vec<u8>,
}

impl RankedLabels {
    pub(crate) fn from_parts(classes: usize, height: usize, width: usize, ranks: Vec<u8>) -> Self {
        debug_assert_eq!(ranks.len(), classes * height * width);
        RankedLabels {
            classes,
            height,
            width,
            ranks,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn rank(&self, r: usize, y: usize, x: usize) -> u8 {
        self.ranks[(r * self.height + y) * self.width + x]
    }

    /// The rank-`r` slice as a label map.
    pub fn slice(&self, r: usize) -> LabelMap {
        let plane = self.height * self.width;
        LabelMap {
            height: self.height,
            width: self.width,
            labels: self.ranks[r * plane..(r + 1) * plane].to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_fixture() {
        let m = LabelMap::parse("0 0 1\n. 1 1\n").unwrap();
        assert_eq!(m.height(), 2);
        assert_eq!(m.width(), 3);
        assert_eq!(m.get(1, 0), IGNORE);
        assert_eq!(m.classes(), vec![0, 1]);
        assert!(LabelMap::parse("0 1\n0").is_err());
    }

    #[test]
    fn validate_reports_first_bad_pixel() {
        let m = LabelMap::parse("0 3\n1 .").unwrap();
        assert!(m.validate(4).is_ok());
        match m.validate(3) {
            Err(Error::LabelOutOfRange {
                label: 3, index: 1, ..
            }) => {}
            other => panic!("{other:?}"),
        }
    }
}
