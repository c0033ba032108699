//! Synthetic datasets on disk: single-texture training images with uniform
//! labels, test mosaics with ground truth, and a manifest that is enough to
//! regenerate every file byte for byte.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::Rng;

use super::mosaic::{compose_mosaic, Layout, MosaicSpec, REGION_RANGE};
use super::texture::{gen_texture, standard_bank, TextureSpec};
use crate::error::{Error, Result};
use crate::imageio::{quantize, read_image, read_labels, write_gray, write_labels};
use crate::label::LabelMap;
use crate::manifest::{sha256_file, Manifest};
use crate::seed;
use crate::tensor::Tensor;

/// File name of the manifest inside a dataset directory.
pub const MANIFEST_NAME: &str = "dataset.txt";

const FORMAT: &str = "fcnt-dataset 1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub test_mosaics: usize,
    /// Inclusive range of regions per mosaic.
    pub min_regions: usize,
    pub max_regions: usize,
    /// Side of the square training images.
    pub train_size: usize,
    /// Side of the square test mosaics.
    pub test_size: usize,
    pub seed: u64,
    /// Permits region counts outside 2 to 5.
    pub allow_nonpaper: bool,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            classes: 5,
            train_per_class: 8,
            test_mosaics: 20,
            min_regions: 2,
            max_regions: 5,
            train_size: 128,
            test_size: 128,
            seed: 0,
            allow_nonpaper: false,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.classes < 2 || self.classes > 255 {
            return bad(format!(
                "a dataset needs 2 to 255 classes, got {}",
                self.classes
            ));
        }
        if self.min_regions > self.max_regions || self.min_regions == 0 {
            return bad(format!(
                "empty region range {}..{}",
                self.min_regions, self.max_regions
            ));
        }
        if !self.allow_nonpaper
            && (!REGION_RANGE.contains(&self.min_regions)
                || !REGION_RANGE.contains(&self.max_regions))
        {
            return bad(format!(
                "regions {}..{} outside 2..5 (pass allow_nonpaper to override)",
                self.min_regions, self.max_regions
            ));
        }
        if self.test_mosaics > 0 && self.max_regions > self.classes {
            return bad(format!(
                "mosaics with up to {} regions need at least that many classes, got {}",
                self.max_regions, self.classes
            ));
        }
        if self.train_size < super::texture::MIN_EXTENT
            || self.test_size < super::texture::MIN_EXTENT
        {
            return bad("image sizes must be at least 32".into());
        }
        Ok(())
    }

    fn write_to(&self, m: &mut Manifest) {
        m.set("seed", self.seed);
        m.set("classes", self.classes);
        m.set("train_per_class", self.train_per_class);
        m.set("test_mosaics", self.test_mosaics);
        m.set("min_regions", self.min_regions);
        m.set("max_regions", self.max_regions);
        m.set("train_size", self.train_size);
        m.set("test_size", self.test_size);
        m.set("allow_nonpaper", self.allow_nonpaper);
    }

    pub fn read_from(m: &Manifest) -> Result<Self> {
        Ok(DatasetConfig {
            classes: m.parse("classes")?,
            train_per_class: m.parse("train_per_class")?,
            test_mosaics: m.parse("test_mosaics")?,
            min_regions: m.parse("min_regions")?,
            max_regions: m.parse("max_regions")?,
            train_size: m.parse("train_size")?,
            test_size: m.parse("test_size")?,
            seed: m.parse("seed")?,
            allow_nonpaper: m.parse("allow_nonpaper")?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainImage {
    pub class: u8,
    /// Texture instance seed.
    pub seed: u64,
    pub image: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestMosaic {
    pub spec: MosaicSpec,
    pub image: Tensor,
    pub gt: LabelMap,
}

/// A generated dataset held in memory. Images are already quantized to 8
/// bits, so they equal what is read back from the written files.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub bank: Vec<TextureSpec>,
    pub train: Vec<TrainImage>,
    pub test: Vec<TestMosaic>,
}

impl Dataset {
    /// Texture instance seeds used by the test mosaics.
    pub fn test_instance_seeds(&self) -> Vec<u64> {
        self.test
            .iter()
            .flat_map(|m| {
                (0..m.spec.region_count())
                    .map(move |r| seed::derive(m.spec.seed, "region", r as u64))
            })
            .collect()
    }
}

fn quantized(mut t: Tensor) -> Tensor {
    t.data_mut()
        .iter_mut()
        .for_each(|v| *v = f64::from(quantize(*v)) / 255.0);
    t
}

/// Spec of the `j`-th test mosaic of a dataset.
pub fn mosaic_spec(config: &DatasetConfig, j: usize) -> MosaicSpec {
    let mut rng = seed::rng(config.seed, "mosaic", j as u64);
    let k = rng.gen_range(config.min_regions..=config.max_regions);
    let classes = sample(&mut rng, config.classes, k)
        .into_iter()
        .map(|c| c as u8)
        .collect();
    let layout = match rng.gen_range(0..4) {
        0 => Layout::VerticalStrips,
        1 => Layout::HorizontalStrips,
        _ => Layout::Voronoi,
    };
    MosaicSpec {
        height: config.test_size,
        width: config.test_size,
        layout,
        classes,
        seed: seed::derive(config.seed, "test", j as u64),
    }
}

/// Generates a dataset from its configuration alone.
pub fn generate(config: &DatasetConfig) -> Result<Dataset> {
    config.validate()?;
    let bank = standard_bank(config.classes);
    let mut train = Vec::with_capacity(config.classes * config.train_per_class);
    for (c, texture) in bank.iter().enumerate() {
        for i in 0..config.train_per_class {
            let s = seed::derive(
                config.seed,
                "train",
                (c * config.train_per_class + i) as u64,
            );
            let image = quantized(gen_texture(
                texture,
                config.train_size,
                config.train_size,
                s,
            )?);
            train.push(TrainImage {
                class: c as u8,
                seed: s,
                image,
            });
        }
    }
    let mut test = Vec::with_capacity(config.test_mosaics);
    for j in 0..config.test_mosaics {
        let spec = mosaic_spec(config, j);
        let (image, gt) = compose_mosaic(&spec, &bank)?;
        test.push(TestMosaic {
            spec,
            image: quantized(image),
            gt,
        });
    }
    Ok(Dataset {
        config: config.clone(),
        bank,
        train,
        test,
    })
}

fn train_names(c: u8, i: usize) -> (String, String) {
    (
        format!("train/c{c:02}_{i:03}.pgm"),
        format!("train/c{c:02}_{i:03}_labels.pgm"),
    )
}

fn test_names(j: usize) -> (String, String) {
    (format!("test/m{j:03}.pgm"), format!("test/m{j:03}_gt.pgm"))
}

/// Writes every image and label file of `data` under `dir` plus the
/// manifest, and returns the manifest.
pub fn write_dataset(data: &Dataset, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    let mut m = Manifest::new();
    m.set("format", FORMAT);
    data.config.write_to(&mut m);
    for (c, spec) in data.bank.iter().enumerate() {
        m.set(
            format!("bank.{c}"),
            format!(
                "{} frequency={} orientation={} contrast={} noise={}",
                spec.family, spec.frequency, spec.orientation, spec.contrast, spec.noise
            ),
        );
    }
    let mut counts = vec![0usize; data.config.classes];
    m.set("train.count", data.train.len());
    for (idx, t) in data.train.iter().enumerate() {
        let i = counts[t.class as usize];
        counts[t.class as usize] += 1;
        let (img, lab) = train_names(t.class, i);
        write_gray(dir.join(&img), &t.image)?;
        let s = t.image.shape();
        write_labels(dir.join(&lab), &LabelMap::filled(s.h, s.w, t.class))?;
        m.set(format!("train.{idx}.file"), &img);
        m.set(format!("train.{idx}.labels"), &lab);
        m.set(format!("train.{idx}.class"), t.class);
        m.set(format!("train.{idx}.seed"), t.seed);
        m.set(format!("train.{idx}.sha256"), sha256_file(dir.join(&img))?);
        m.set(
            format!("train.{idx}.labels_sha256"),
            sha256_file(dir.join(&lab))?,
        );
    }
    m.set("test.count", data.test.len());
    for (j, t) in data.test.iter().enumerate() {
        let (img, gt) = test_names(j);
        write_gray(dir.join(&img), &t.image)?;
        write_labels(dir.join(&gt), &t.gt)?;
        let classes: Vec<String> = t.spec.classes.iter().map(u8::to_string).collect();
        m.set(format!("test.{j}.file"), &img);
        m.set(format!("test.{j}.gt"), &gt);
        m.set(format!("test.{j}.layout"), t.spec.layout);
        m.set(format!("test.{j}.classes"), classes.join(","));
        m.set(format!("test.{j}.seed"), t.spec.seed);
        m.set(format!("test.{j}.sha256"), sha256_file(dir.join(&img))?);
        m.set(format!("test.{j}.gt_sha256"), sha256_file(dir.join(&gt))?);
    }
    m.write(dir.join(MANIFEST_NAME))?;
    Ok(m)
}

/// Generates and writes a dataset.
pub fn build_dataset(config: &DatasetConfig, dir: impl AsRef<Path>) -> Result<Manifest> {
    write_dataset(&generate(config)?, dir)
}

/// Every file listed in a manifest with its recorded checksum.
pub fn listed_files(m: &Manifest) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (k, v) in m.entries() {
        let file_key = k.strip_suffix(".file").map(|b| (b.to_string(), "sha256"));
        let other = k
            .strip_suffix(".labels")
            .map(|b| (b.to_string(), "labels_sha256"));
        let gt = k.strip_suffix(".gt").map(|b| (b.to_string(), "gt_sha256"));
        if let Some((base, sum)) = file_key.or(other).or(gt) {
            if let Some(h) = m.get(&format!("{base}.{sum}")) {
                out.push((v.clone(), h.to_string()));
            }
        }
    }
    out
}

/// Files whose checksum differs from the manifest (missing files included).
pub fn verify_dataset(dir: impl AsRef<Path>) -> Result<Vec<String>> {
    let dir = dir.as_ref();
    let m = Manifest::read(dir.join(MANIFEST_NAME))?;
    let mut bad = Vec::new();
    for (file, want) in listed_files(&m) {
        match sha256_file(dir.join(&file)) {
            Ok(h) if h == want => {}
            _ => bad.push(file),
        }
    }
    Ok(bad)
}

/// Rebuilds a synthetic dataset from its manifest into `out` and checks
/// that every file matches the recorded checksum.
pub fn regenerate(manifest: impl AsRef<Path>, out: impl AsRef<Path>) -> Result<Manifest> {
    let m = Manifest::read(manifest)?;
    if m.get("format") != Some(FORMAT) {
        return Err(Error::Manifest("not a synthetic dataset manifest".into()));
    }
    let config = DatasetConfig::read_from(&m)?;
    let rebuilt = build_dataset(&config, &out)?;
    let differ: Vec<String> = listed_files(&m)
        .into_iter()
        .zip(listed_files(&rebuilt))
        .filter(|(a, b)| a != b)
        .map(|(a, _)| a.0)
        .collect();
    if !differ.is_empty() {
        return Err(Error::Manifest(format!(
            "regenerated files differ: {}",
            differ.join(", ")
        )));
    }
    Ok(rebuilt)
}

/// Paths of a dataset on disk, as listed by its manifest.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetFiles {
    pub classes: usize,
    /// `(image, class)`.
    pub train: Vec<(PathBuf, u8)>,
    /// `(image, ground truth)`.
    pub test: Vec<(PathBuf, PathBuf)>,
}

impl DatasetFiles {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let m = Manifest::read(dir.join(MANIFEST_NAME))?;
        let count = |key: &str| -> Result<usize> { m.get(key).map_or(Ok(0), |_| m.parse(key)) };
        let mut out = DatasetFiles {
            classes: m.parse("classes")?,
            ..Default::default()
        };
        for i in 0..count("train.count")? {
            let file = dir.join(m.require(&format!("train.{i}.file"))?);
            out.train
                .push((file, m.parse(&format!("train.{i}.class"))?));
        }
        for j in 0..count("test.count")? {
            out.test.push((
                dir.join(m.require(&format!("test.{j}.file"))?),
                dir.join(m.require(&format!("test.{j}.gt"))?),
            ));
        }
        Ok(out)
    }

    /// Loads the training images (gray) with their classes.
    pub fn load_train(&self) -> Result<Vec<(Tensor, u8)>> {
        self.train
            .iter()
            .map(|(p, c)| Ok((read_image(p, 1)?, *c)))
            .collect()
    }

    pub fn load_test(&self) -> Result<Vec<(Tensor, LabelMap)>> {
        self.test
            .iter()
            .map(|(p, g)| Ok((read_image(p, 1)?, read_labels(g)?)))
            .collect()
    }
}
