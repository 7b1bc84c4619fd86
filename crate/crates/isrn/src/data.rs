//! PNG image I/O, dataset directories and a synthetic toy corpus.
//!
//! Images travel through the crate as `(N, C, H, W)` tensors with values in
//! `[0, 1]` (8-bit value / 255). Loading always yields 3 channels; saving
//! accepts 3-channel color or 1-channel grayscale.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Load a PNG as a `(1, 3, H, W)` tensor in `[0, 1]`. Grayscale and alpha
/// inputs are converted to plain RGB first.
pub fn load_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let img = image::load_from_memory(&bytes)?.into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    let mut data = vec![0f32; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                data[c * h * w + y * w + x] = raw[(y * w + x) * 3 + c] as f32 / 255.0;
            }
        }
    }
    Tensor::new(Shape::new(1, 3, h, w), data)
}

fn quantize<E: Element>(v: E) -> u8 {
    (v.into_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Save a `(1, 3, H, W)` tensor as RGB PNG or a `(1, 1, H, W)` tensor as
/// grayscale PNG, rounding to 8 bits.
pub fn save_image<E: Element>(path: &Path, t: &Tensor<E>) -> Result<()> {
    let s = t.shape();
    if s.n != 1 || (s.c != 1 && s.c != 3) {
        return Err(Error::InvalidArgument(format!(
            "image save expects (1,1,h,w) or (1,3,h,w), got {s}"
        )));
    }
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
    }
    let plane = s.h * s.w;
    let img: DynamicImage = if s.c == 3 {
        let mut raw = vec![0u8; 3 * plane];
        for i in 0..plane {
            for c in 0..3 {
                raw[i * 3 + c] = quantize(t.data()[c * plane + i]);
            }
        }
        RgbImage::from_raw(s.w as u32, s.h as u32, raw)
            .expect("buffer sized from shape")
            .into()
    } else {
        let raw: Vec<u8> = t.data().iter().map(|&v| quantize(v)).collect();
        GrayImage::from_raw(s.w as u32, s.h as u32, raw)
            .expect("buffer sized from shape")
            .into()
    };
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Sorted list of the PNG files directly inside `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir)
        .map_err(|_| Error::Data(format!("cannot read image directory {}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|e| e.eq_ignore_ascii_case("png"))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no PNG images in {}", dir.display())));
    }
    Ok(paths)
}

/// An image plus its file stem, for per-image reporting.
pub struct NamedImage {
    pub name: String,
    pub image: Tensor<f32>,
}

/// Load every PNG in a directory, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<NamedImage>> {
    list_images(dir)?
        .into_iter()
        .map(|p| {
            Ok(NamedImage {
                name: p
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                image: load_image(&p)?,
            })
        })
        .collect()
}

/// Top-left crop to the largest extents divisible by `s` — the standard
/// preparation before degrading ground truth whose size is not a multiple
/// of the scale.
pub fn crop_to_multiple<E: Element>(t: &Tensor<E>, s: usize) -> Result<Tensor<E>> {
    let sh = t.shape();
    let (h, w) = (sh.h - sh.h % s, sh.w - sh.w % s);
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} smaller than scale {s}",
            sh.h, sh.w
        )));
    }
    t.crop(0, 0, h, w)
}

/// Write a deterministic synthetic corpus of flat-shaded geometric images:
/// `count` files named `img_00.png`, ... in `dir`. The content is dense,
/// posterized mosaic — many small hard-edged rectangles, discs and thin
/// bars — so fixed-kernel bicubic upscaling blurs a large fraction of each
/// image and a briefly trained model has something real to win on.
pub fn generate_toy_corpus(dir: &Path, count: usize, size: usize, seed: u64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(Error::io(dir))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = toy_image(size, &mut rng);
        let path = dir.join(format!("img_{i:02}.png"));
        save_image(&path, &img)?;
        paths.push(path);
    }
    Ok(paths)
}

fn paint_shape(
    planes: &mut [f64],
    size: usize,
    (x0, y0, w, h): (usize, usize, usize, usize),
    col: [f64; 3],
    disc: bool,
) {
    let (cx, cy) = (x0 as f64 + w as f64 / 2.0, y0 as f64 + h as f64 / 2.0);
    let r = (w.min(h) as f64) / 2.0;
    for y in y0..(y0 + h).min(size) {
        for x in x0..(x0 + w).min(size) {
            if disc {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if dx * dx + dy * dy > r * r {
                    continue;
                }
            }
            for c in 0..3 {
                planes[c * size * size + y * size + x] = col[c];
            }
        }
    }
}

fn toy_image(size: usize, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    // Every image shares one small palette: posterized, cartoon-like
    // content whose statistics a small model picks up quickly.
    const PALETTE: [[f64; 3]; 5] = [
        [0.95, 0.95, 0.92],
        [0.10, 0.12, 0.15],
        [0.85, 0.20, 0.18],
        [0.15, 0.45, 0.80],
        [0.92, 0.78, 0.20],
    ];
    let pick = |rng: &mut ChaCha8Rng| PALETTE[rng.random_range(0..PALETTE.len())];
    let bg = pick(rng);
    let mut planes = vec![0f64; 3 * size * size];
    for y in 0..size {
        for x in 0..size {
            for c in 0..3 {
                planes[c * size * size + y * size + x] = bg[c];
            }
        }
    }
    // Dense mosaic of small shapes: roughly one shape per 5x5 cell keeps a
    // large share of the pixels within a few pixels of a hard edge.
    let shapes = (size * size) / 25;
    for _ in 0..shapes {
        let w = rng.random_range(3..=10.min(size - 1));
        let h = rng.random_range(3..=10.min(size - 1));
        let x0 = rng.random_range(0..size - w);
        let y0 = rng.random_range(0..size - h);
        let col = pick(rng);
        let disc = rng.random::<f64>() < 0.3;
        paint_shape(&mut planes, size, (x0, y0, w, h), col, disc);
    }
    // A few thin bars, the structures interpolation degrades the most.
    for _ in 0..6 {
        let horizontal = rng.random::<f64>() < 0.5;
        let thickness = rng.random_range(1..=2);
        let len = rng.random_range(size / 3..size);
        let (w, h) = if horizontal { (len, thickness) } else { (thickness, len) };
        let x0 = rng.random_range(0..size - w);
        let y0 = rng.random_range(0..size - h);
        let col = pick(rng);
        paint_shape(&mut planes, size, (x0, y0, w, h), col, false);
    }
    let data: Vec<f32> = planes
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as f32 / 255.0)
        .collect();
    Tensor::new(Shape::new(1, 3, size, size), data).expect("sized buffer")
}
