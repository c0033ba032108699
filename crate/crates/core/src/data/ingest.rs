//! Import of a real texture collection laid out as one directory per class.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imageio::{read_image, write_gray, write_labels};
use crate::label::LabelMap;
use crate::manifest::{sha256_file, Manifest};
use crate::tensor::Tensor;

use super::dataset::MANIFEST_NAME;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IngestOptions {
    /// Centre crop to this square side when the image is large enough.
    pub center_crop: Option<usize>,
    /// Accepted file extensions, lower case.
    pub extensions: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            center_crop: Some(288),
            extensions: ["png", "pgm", "ppm", "pnm"].map(String::from).to_vec(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IngestReport {
    pub manifest: Manifest,
    /// Files that could not be read, with the reason.
    pub skipped: Vec<(PathBuf, String)>,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    v.sort();
    Ok(v)
}

fn center_crop(img: Tensor, side: usize) -> Result<Tensor> {
    let s = img.shape();
    if s.h < side || s.w < side {
        return Ok(img);
    }
    img.crop((s.h - side) / 2, (s.w - side) / 2, side, side)
}

/// Converts `root/<class>/<image>` into a dataset under `out` with the same
/// layout and manifest keys as a synthetic dataset (training part only).
/// Classes are numbered by sorted directory name. Unreadable files are
/// reported and skipped.
pub fn ingest_real_dataset(
    root: impl AsRef<Path>,
    options: &IngestOptions,
    out: impl AsRef<Path>,
) -> Result<IngestReport> {
    let (root, out) = (root.as_ref(), out.as_ref());
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.len() > 255 {
        return Err(Error::InvalidArgument(format!(
            "{} class directories; at most 255 are supported",
            class_dirs.len()
        )));
    }
    let mut m = Manifest::new();
    m.set("format", "fcnt-ingested 1");
    m.set("source", root.display());
    m.set("classes", class_dirs.len());
    let mut skipped = Vec::new();
    let mut idx = 0;
    for (c, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        m.set(format!("class.{c}.name"), &name);
        let mut i = 0;
        for path in sorted_entries(dir)? {
            let ext = path
                .extension()
                .and_then(|e| e.to_str())
                .map(str::to_ascii_lowercase);
            if !ext.is_some_and(|e| options.extensions.contains(&e)) {
                continue;
            }
            let img = match read_image(&path, 1) {
                Ok(img) => img,
                Err(e) => {
                    log::warn!("skipping {}: {e}", path.display());
                    skipped.push((path, e.to_string()));
                    continue;
                }
            };
            let img = match options.center_crop {
                Some(side) => center_crop(img, side)?,
                None => img,
            };
            let file = format!("train/c{c:02}_{i:03}.pgm");
            let labels = format!("train/c{c:02}_{i:03}_labels.pgm");
            write_gray(out.join(&file), &img)?;
            let s = img.shape();
            write_labels(out.join(&labels), &LabelMap::filled(s.h, s.w, c as u8))?;
            m.set(format!("train.{idx}.file"), &file);
            m.set(format!("train.{idx}.labels"), &labels);
            m.set(format!("train.{idx}.class"), c);
            m.set(format!("train.{idx}.source"), path.display());
            m.set(format!("train.{idx}.sha256"), sha256_file(out.join(&file))?);
            m.set(
                format!("train.{idx}.labels_sha256"),
                sha256_file(out.join(&labels))?,
            );
            idx += 1;
            i += 1;
        }
    }
    m.set("train.count", idx);
    m.set("test.count", 0);
    if idx == 0 {
        log::warn!("no images found under {}", root.display());
    }
    m.write(out.join(MANIFEST_NAME))?;
    Ok(IngestReport {
        manifest: m,
        skipped,
    })
}
