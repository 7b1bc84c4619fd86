//! Low-resolution image synthesis and the shared bicubic resampler.
//!
//! Three degradation models generate training/evaluation inputs from a
//! high-resolution source:
//!
//! * **BI** — antialiased bicubic downscale.
//! * **BD** — 7×7 Gaussian blur (σ = 1.6) followed by the bicubic downscale.
//! * **DN** — bicubic downscale followed by additive Gaussian noise
//!   (σ = 30 on the 8-bit scale), clipped back into `[0, 1]`.
//!
//! The resampler is a float64 clone of the classic `imresize` contribution
//! algorithm: Keys cubic kernel with a = −0.5, half-pixel sample centers,
//! kernel support widened by the scale factor when downscaling with
//! antialias, per-row weight normalization, and edge replication at the
//! borders. Published bicubic baselines assume exactly this convention, so
//! every resize in the crate funnels through [`bicubic_resize`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// Keys cubic interpolation kernel with a = −0.5. Support is (−2, 2);
/// `keys(0) = 1` and `keys(n) = 0` at all other integers, so resampling at
/// unit scale is exact interpolation.
fn keys(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (1.5 * x - 2.5) * x * x + 1.0
    } else if x <= 2.0 {
        ((-0.5 * x + 2.5) * x - 4.0) * x + 2.0
    } else {
        0.0
    }
}

/// Per-output-sample source taps along one axis: `taps` weights and clamped
/// source indices per output position, rows normalized to sum to one.
struct Contributions {
    taps: usize,
    weights: Vec<f64>,
    indices: Vec<usize>,
}

fn contributions(in_len: usize, out_len: usize, antialias: bool) -> Contributions {
    let scale = out_len as f64 / in_len as f64;
    // When shrinking with antialias the kernel is stretched by 1/scale so it
    // spans the same source footprint a box of output pixels maps onto.
    let (width, kernel_scale) = if scale < 1.0 && antialias {
        (4.0 / scale, scale)
    } else {
        (4.0, 1.0)
    };
    let taps = width.ceil() as usize + 2;
    let mut weights = vec![0.0; out_len * taps];
    let mut indices = vec![0usize; out_len * taps];
    for o in 0..out_len {
        let u = (o as f64 + 0.5) / scale - 0.5;
        let left = (u - width / 2.0).floor() as i64;
        let row_w = &mut weights[o * taps..(o + 1) * taps];
        let mut sum = 0.0;
        for (p, w) in row_w.iter_mut().enumerate() {
            *w = kernel_scale * keys(kernel_scale * (u - (left + p as i64) as f64));
            sum += *w;
        }
        for w in row_w.iter_mut() {
            *w /= sum;
        }
        // Normalize first, then clamp: out-of-range taps fold onto the edge
        // sample (replication) while the row still sums to one.
        for (p, idx) in indices[o * taps..(o + 1) * taps].iter_mut().enumerate() {
            *idx = (left + p as i64).clamp(0, in_len as i64 - 1) as usize;
        }
    }
    Contributions {
        taps,
        weights,
        indices,
    }
}

/// Resample one axis of a row-major `rows × cols` float64 plane. `vertical`
/// picks whether the contribution table runs over rows or columns.
fn resample_axis(plane: &[f64], rows: usize, cols: usize, c: &Contributions, vertical: bool) -> Vec<f64> {
    if vertical {
        let out_rows = c.weights.len() / c.taps;
        let mut out = vec![0.0; out_rows * cols];
        for o in 0..out_rows {
            let w = &c.weights[o * c.taps..(o + 1) * c.taps];
            let idx = &c.indices[o * c.taps..(o + 1) * c.taps];
            let dst = &mut out[o * cols..(o + 1) * cols];
            for (wp, &ip) in w.iter().zip(idx) {
                let src = &plane[ip * cols..(ip + 1) * cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += wp * s;
                }
            }
        }
        out
    } else {
        let out_cols = c.weights.len() / c.taps;
        let mut out = vec![0.0; rows * out_cols];
        for y in 0..rows {
            let src = &plane[y * cols..(y + 1) * cols];
            let dst = &mut out[y * out_cols..(y + 1) * out_cols];
            for (o, d) in dst.iter_mut().enumerate() {
                let w = &c.weights[o * c.taps..(o + 1) * c.taps];
                let idx = &c.indices[o * c.taps..(o + 1) * c.taps];
                *d = w.iter().zip(idx).map(|(wp, &ip)| wp * src[ip]).sum();
            }
        }
        out
    }
}

/// Bicubic resize of an NCHW tensor to `out_h × out_w`. Antialias widens the
/// kernel on downscale; upscaling ignores the flag. Arithmetic runs in
/// float64 regardless of the element type, so results are reproducible
/// across precisions up to the final cast.
pub fn bicubic_resize<E: Element>(
    img: &Tensor<E>,
    out_h: usize,
    out_w: usize,
    antialias: bool,
) -> Result<Tensor<E>> {
    let s = img.shape();
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target {out_h}x{out_w} must be positive"
        )));
    }
    let vert = contributions(s.h, out_h, antialias);
    let horiz = contributions(s.w, out_w, antialias);
    let mut data = Vec::with_capacity(s.n * s.c * out_h * out_w);
    let plane_len = s.h * s.w;
    for p in 0..s.n * s.c {
        let plane: Vec<f64> = img.data()[p * plane_len..(p + 1) * plane_len]
            .iter()
            .map(|v| v.into_f64())
            .collect();
        let tall = resample_axis(&plane, s.h, s.w, &vert, true);
        let full = resample_axis(&tall, out_h, s.w, &horiz, false);
        data.extend(full.into_iter().map(E::from_f64));
    }
    Tensor::new(Shape::new(s.n, s.c, out_h, out_w), data)
}

/// Antialiased downscale by an integer factor; extents must divide evenly.
pub fn bicubic_down<E: Element>(img: &Tensor<E>, scale: usize) -> Result<Tensor<E>> {
    let s = img.shape();
    if scale == 0 || !s.h.is_multiple_of(scale) || !s.w.is_multiple_of(scale) {
        return Err(Error::InvalidArgument(format!(
            "extents {}x{} not divisible by scale {scale}",
            s.h, s.w
        )));
    }
    bicubic_resize(img, s.h / scale, s.w / scale, true)
}

/// Plain bicubic upscale by an integer factor (no antialias).
pub fn bicubic_up<E: Element>(img: &Tensor<E>, scale: usize) -> Result<Tensor<E>> {
    let s = img.shape();
    if scale == 0 {
        return Err(Error::InvalidArgument("upscale factor must be positive".into()));
    }
    bicubic_resize(img, s.h * scale, s.w * scale, false)
}

/// Normalized 2-D Gaussian blur with replicate borders, applied separably.
pub fn gaussian_blur<E: Element>(img: &Tensor<E>, ksize: usize, sigma: f64) -> Result<Tensor<E>> {
    if ksize.is_multiple_of(2) || ksize == 0 {
        return Err(Error::InvalidArgument(format!(
            "blur kernel size {ksize} must be odd"
        )));
    }
    if sigma <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "blur sigma {sigma} must be positive"
        )));
    }
    let r = (ksize / 2) as i64;
    let mut kernel: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = kernel.iter().sum();
    for k in &mut kernel {
        *k /= sum;
    }

    let s = img.shape();
    let plane_len = s.h * s.w;
    let clamp = |i: i64, len: usize| i.clamp(0, len as i64 - 1) as usize;
    let mut data = Vec::with_capacity(img.numel());
    for p in 0..s.n * s.c {
        let plane: Vec<f64> = img.data()[p * plane_len..(p + 1) * plane_len]
            .iter()
            .map(|v| v.into_f64())
            .collect();
        let mut tmp = vec![0.0; plane_len];
        for y in 0..s.h {
            for x in 0..s.w {
                tmp[y * s.w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * plane[y * s.w + clamp(x as i64 + i as i64 - r, s.w)])
                    .sum();
            }
        }
        for y in 0..s.h {
            for x in 0..s.w {
                let v: f64 = kernel
                    .iter()
                    .enumerate()
                    .map(|(i, k)| k * tmp[clamp(y as i64 + i as i64 - r, s.h) * s.w + x])
                    .sum();
                data.push(E::from_f64(v));
            }
        }
    }
    Tensor::new(s, data)
}

/// Which degradation model produces the low-resolution input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DegradationKind {
    /// Antialiased bicubic downscale only.
    #[serde(rename = "bi")]
    Bicubic,
    /// Gaussian blur, then bicubic downscale.
    #[serde(rename = "bd")]
    BlurDown,
    /// Bicubic downscale, then additive Gaussian noise.
    #[serde(rename = "dn")]
    DownNoise,
}

impl std::str::FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bi" => Ok(DegradationKind::Bicubic),
            "bd" => Ok(DegradationKind::BlurDown),
            "dn" => Ok(DegradationKind::DownNoise),
            other => Err(Error::Config(format!(
                "unknown degradation kind '{other}' (expected bi, bd or dn)"
            ))),
        }
    }
}

impl std::fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DegradationKind::Bicubic => "bi",
            DegradationKind::BlurDown => "bd",
            DegradationKind::DownNoise => "dn",
        })
    }
}

/// Full description of a degradation: kind, scale, blur/noise parameters and
/// the RNG seed for the noise. Blur parameters only matter for [`DegradationKind::BlurDown`],
/// the noise sigma (in 8-bit units) only for [`DegradationKind::DownNoise`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub scale: usize,
    pub blur_ksize: usize,
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DegradationSpec {
    /// Plain bicubic downscale at the given factor.
    pub fn bicubic(scale: usize) -> Self {
        DegradationSpec {
            kind: DegradationKind::Bicubic,
            scale,
            blur_ksize: 7,
            blur_sigma: 1.6,
            noise_sigma: 30.0,
            seed: 0,
        }
    }

    /// Blur-downscale with the conventional 7×7, σ = 1.6 kernel at ×3.
    pub fn blur_down() -> Self {
        DegradationSpec {
            kind: DegradationKind::BlurDown,
            scale: 3,
            ..DegradationSpec::bicubic(3)
        }
    }

    /// Downscale-noise with the conventional σ = 30 (8-bit) at ×3.
    pub fn down_noise() -> Self {
        DegradationSpec {
            kind: DegradationKind::DownNoise,
            scale: 3,
            ..DegradationSpec::bicubic(3)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Spec for one image of a batch/directory: same parameters, seed mixed
    /// with the image index so images decorrelate but stay reproducible.
    pub fn for_image(&self, index: u64) -> Self {
        DegradationSpec {
            seed: self.seed ^ index,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::InvalidArgument("degradation scale must be positive".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "noise sigma {} must be non-negative",
                self.noise_sigma
            )));
        }
        if self.kind == DegradationKind::BlurDown && (self.blur_ksize.is_multiple_of(2) || self.blur_sigma <= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "blur kernel {}x{} sigma {} invalid",
                self.blur_ksize, self.blur_ksize, self.blur_sigma
            )));
        }
        Ok(())
    }
}

/// Produce the low-resolution observation for a `[0, 1]` high-resolution
/// image. Output is clipped to `[0, 1]`; extents must divide by the scale.
/// Deterministic: the same spec (including seed) always yields bit-identical
/// output.
pub fn degrade<E: Element>(hr: &Tensor<E>, spec: &DegradationSpec) -> Result<Tensor<E>> {
    spec.validate()?;
    let lr = match spec.kind {
        DegradationKind::Bicubic => bicubic_down(hr, spec.scale)?,
        DegradationKind::BlurDown => {
            bicubic_down(&gaussian_blur(hr, spec.blur_ksize, spec.blur_sigma)?, spec.scale)?
        }
        DegradationKind::DownNoise => {
            let clean = bicubic_down(hr, spec.scale)?;
            add_noise(&clean, spec.noise_sigma / 255.0, spec.seed)
        }
    };
    Ok(lr.clamp(E::from_f64(0.0), E::from_f64(1.0)))
}

/// Additive Gaussian noise with the given sigma (in `[0, 1]` units), drawn
/// sequentially over the flattened tensor so the result is independent of
/// any parallel caller.
fn add_noise<E: Element>(img: &Tensor<E>, sigma: f64, seed: u64) -> Tensor<E> {
    if sigma == 0.0 {
        return img.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("sigma validated as finite non-negative");
    let data: Vec<E> = img
        .data()
        .iter()
        .map(|v| E::from_f64(v.into_f64() + normal.sample(&mut rng)))
        .collect();
    Tensor::new(img.shape(), data).expect("same shape as input")
}
