//! 8-bit image and label-map files (PGM or PNG, chosen by extension).
//!
//! Label palette: class `i` is stored as gray level `i`, the ignore label
//! as 255.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::label::LabelMap;
use crate::tensor::Tensor;

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("png") => Ok(ImageFormat::Png),
        Some("pgm") | Some("ppm") | Some("pnm") => Ok(ImageFormat::Pnm),
        _ => Err(Error::InvalidArgument(format!(
            "{}: unsupported image extension (use .png or .pgm)",
            path.display()
        ))),
    }
}

fn open(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory(&bytes).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn save(path: &Path, img: DynamicImage) -> Result<()> {
    let format = format_for(path)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    img.save_with_format(path, format)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Reads an image as a `1 x C x H x W` tensor in `[0, 1]`, `C` being 1
/// (luma) or 3 (RGB).
pub fn read_image(path: impl AsRef<Path>, channels: usize) -> Result<Tensor> {
    let path = path.as_ref();
    let img = open(path)?;
    match channels {
        1 => {
            let g = img.to_luma8();
            let (w, h) = g.dimensions();
            let data = g
                .into_raw()
                .into_iter()
                .map(|v| f64::from(v) / 255.0)
                .collect();
            Tensor::from_vec([1, 1, h as usize, w as usize], data)
        }
        3 => {
            let rgb = img.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            Ok(Tensor::from_fn([1, 3, h, w], |_, c, y, x| {
                f64::from(rgb.get_pixel(x as u32, y as u32)[c]) / 255.0
            }))
        }
        _ => Err(Error::InvalidArgument(format!(
            "cannot read an image with {channels} channels"
        ))),
    }
}

/// 8-bit quantization of `[0, 1]` values; out-of-range values are clamped.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes the first channel of a `1 x C x H x W` tensor as 8-bit gray.
pub fn write_gray(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let s = image.shape();
    let buf: Vec<u8> = image.plane(0, 0).iter().map(|&v| quantize(v)).collect();
    let g = GrayImage::from_raw(s.w as u32, s.h as u32, buf).expect("plane-sized buffer");
    save(path.as_ref(), DynamicImage::ImageLuma8(g))
}

/// Writes a label map with the gray-level palette.
pub fn write_labels(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    let g = GrayImage::from_raw(
        labels.width() as u32,
        labels.height() as u32,
        labels.as_slice().to_vec(),
    )
    .expect("map-sized buffer");
    save(path.as_ref(), DynamicImage::ImageLuma8(g))
}

/// Reads a label map stored with the gray-level palette. Color files are
/// accepted only when every pixel is gray.
pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let img = open(path)?;
    let palette = |reason: String| Error::Palette {
        path: path.to_path_buf(),
        reason,
    };
    let gray = match img {
        DynamicImage::ImageLuma8(g) => g,
        DynamicImage::ImageLumaA8(_) => img.to_luma8(),
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => {
            let rgb = img.to_rgb8();
            if let Some((x, y, p)) = rgb
                .enumerate_pixels()
                .find(|(_, _, p)| p[0] != p[1] || p[1] != p[2])
            {
                return Err(palette(format!("pixel ({y}, {x}) is not gray: {:?}", p.0)));
            }
            img.to_luma8()
        }
        other => {
            return Err(palette(format!(
                "expected an 8-bit image, got {:?}",
                other.color()
            )))
        }
    };
    let (w, h) = gray.dimensions();
    LabelMap::new(h as usize, w as usize, gray.into_raw())
}

/// Reads a label map and checks its extents against an image.
pub fn read_labels_for(path: impl AsRef<Path>, height: usize, width: usize) -> Result<LabelMap> {
    let path = path.as_ref();
    let m = read_labels(path)?;
    if m.height() != height || m.width() != width {
        return Err(Error::Palette {
            path: path.to_path_buf(),
            reason: format!(
                "label map is {}x{} but the image is {height}x{width}",
                m.height(),
                m.width()
            ),
        });
    }
    Ok(m)
}

/// Input image in gray with region boundaries drawn in red. Ignore pixels
/// are tinted blue.
pub fn render_overlay(image: &Tensor, labels: &LabelMap) -> Result<RgbImage> {
    let s = image.shape();
    if s.h != labels.height() || s.w != labels.width() {
        return Err(Error::InvalidArgument(format!(
            "overlay of {}x{} labels on a {}x{} image",
            labels.height(),
            labels.width(),
            s.h,
            s.w
        )));
    }
    let plane = image.plane(0, 0);
    let mut out = RgbImage::new(s.w as u32, s.h as u32);
    for y in 0..s.h {
        for x in 0..s.w {
            let l = labels.get(y, x);
            let edge = (x + 1 < s.w && labels.get(y, x + 1) != l)
                || (y + 1 < s.h && labels.get(y + 1, x) != l);
            let g = quantize(plane[y * s.w + x]);
            let px = if edge {
                Rgb([255, 0, 0])
            } else if l == crate::label::IGNORE {
                Rgb([g / 2, g / 2, 128 + g / 2])
            } else {
                Rgb([g, g, g])
            };
            out.put_pixel(x as u32, y as u32, px);
        }
    }
    Ok(out)
}

pub fn write_overlay(path: impl AsRef<Path>, image: &Tensor, labels: &LabelMap) -> Result<()> {
    let img = render_overlay(image, labels)?;
    save(path.as_ref(), DynamicImage::ImageRgb8(img))
}
