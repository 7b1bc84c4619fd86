//! Image-quality metrics under the evaluation conventions that published
//! super-resolution tables assume: ITU-R BT.601 luma, an s-pixel border
//! shave, and the original SSIM constants (11×11 Gaussian window, σ = 1.5,
//! K₁ = 0.01, K₂ = 0.03, dynamic range 1).
//!
//! [`psnr`] and [`ssim`] accept either a single-channel tensor (used as-is)
//! or a 3-channel RGB tensor (converted to luma first), so the same entry
//! points serve Y-channel evaluation and full-RGB diagnostics.

use crate::error::{Error, Result};
use crate::tensor::{Element, Shape, Tensor};

/// ITU-R BT.601 luma of a `[0, 1]` RGB tensor:
/// Y = (65.481·R + 128.553·G + 24.966·B + 16) / 255.
pub fn to_y_channel<E: Element>(rgb: &Tensor<E>) -> Result<Tensor<E>> {
    let s = rgb.shape();
    if s.c != 3 {
        return Err(Error::ShapeMismatch(format!(
            "luma conversion needs 3 channels, got {}",
            s.c
        )));
    }
    let plane = s.h * s.w;
    let data = rgb.data();
    let mut out = Vec::with_capacity(s.n * plane);
    for n in 0..s.n {
        let base = n * 3 * plane;
        for i in 0..plane {
            let r = data[base + i].into_f64();
            let g = data[base + plane + i].into_f64();
            let b = data[base + 2 * plane + i].into_f64();
            out.push(E::from_f64((65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0));
        }
    }
    Tensor::new(Shape::new(s.n, 1, s.h, s.w), out)
}

/// Shave-then-compare preamble shared by PSNR and SSIM: checks shapes,
/// converts RGB to luma, crops `shave` pixels off every border and returns
/// float64 planes.
fn comparison_planes<E: Element>(
    a: &Tensor<E>,
    b: &Tensor<E>,
    shave: usize,
) -> Result<(Tensor<f64>, Tensor<f64>)> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "metric inputs {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let prep = |t: &Tensor<E>| -> Result<Tensor<f64>> {
        let t = if t.shape().c == 3 { to_y_channel(t)? } else { t.clone() };
        let s = t.shape();
        if s.c != 1 {
            return Err(Error::ShapeMismatch(format!(
                "metrics expect 1 or 3 channels, got {}",
                s.c
            )));
        }
        if 2 * shave >= s.h || 2 * shave >= s.w {
            return Err(Error::InvalidArgument(format!(
                "shave {shave} leaves no pixels of {}x{}",
                s.h, s.w
            )));
        }
        Ok(t.crop(shave, shave, s.h - 2 * shave, s.w - 2 * shave)?.cast())
    };
    Ok((prep(a)?, prep(b)?))
}

/// Peak signal-to-noise ratio in dB on the border-shaved luma, dynamic
/// range 1. Identical inputs return the +∞ sentinel.
pub fn psnr<E: Element>(a: &Tensor<E>, b: &Tensor<E>, shave: usize) -> Result<f64> {
    let (ya, yb) = comparison_planes(a, b, shave)?;
    let mse = ya
        .data()
        .iter()
        .zip(yb.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / ya.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Valid-window correlation with the normalized 1-D Gaussian along both
/// axes: rows first, then columns.
fn window_means(plane: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = g
                .iter()
                .enumerate()
                .map(|(k, gk)| gk * plane[y * w + x + k])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = g
                .iter()
                .enumerate()
                .map(|(k, gk)| gk * rows[(y + k) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean structural similarity on the border-shaved luma: 11×11 Gaussian
/// window (σ = 1.5) over all fully-valid positions, K₁ = 0.01, K₂ = 0.03,
/// dynamic range 1.
pub fn ssim<E: Element>(a: &Tensor<E>, b: &Tensor<E>, shave: usize) -> Result<f64> {
    let (ya, yb) = comparison_planes(a, b, shave)?;
    let s = ya.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "image {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            s.h, s.w
        )));
    }
    let r = (SSIM_WINDOW / 2) as i64;
    let mut g: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let sum: f64 = g.iter().sum();
    for v in &mut g {
        *v /= sum;
    }

    let pa = ya.data();
    let pb = yb.data();
    let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| x * y).collect() };
    let mut total = 0.0;
    let mut count = 0usize;
    let plane = s.h * s.w;
    for n in 0..s.n {
        let (qa, qb) = (&pa[n * plane..(n + 1) * plane], &pb[n * plane..(n + 1) * plane]);
        let mu1 = window_means(qa, s.h, s.w, &g);
        let mu2 = window_means(qb, s.h, s.w, &g);
        let e11 = window_means(&prod(qa, qa), s.h, s.w, &g);
        let e22 = window_means(&prod(qb, qb), s.h, s.w, &g);
        let e12 = window_means(&prod(qa, qb), s.h, s.w, &g);
        for i in 0..mu1.len() {
            let (m1, m2) = (mu1[i], mu2[i]);
            let v1 = e11[i] - m1 * m1;
            let v2 = e22[i] - m2 * m2;
            let cov = e12[i] - m1 * m2;
            total += ((2.0 * m1 * m2 + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((m1 * m1 + m2 * m2 + SSIM_C1) * (v1 + v2 + SSIM_C2));
        }
        count += mu1.len();
    }
    Ok(total / count as f64)
}

/// Root mean squared error in 8-bit units over every channel (no shave, no
/// luma conversion).
pub fn rmse<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "metric inputs {} vs {}",
            a.shape(),
            b.shape()
        )));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.into_f64() - y.into_f64();
            d * d
        })
        .sum::<f64>()
        / a.numel() as f64;
    Ok(255.0 * mse.sqrt())
}

/// How a report's numbers were computed: luma vs full RGB, and the border
/// shave width (the scale factor, by convention).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct Convention {
    pub y_channel: bool,
    pub shave: usize,
}

/// One evaluated image pair.
#[derive(Debug, Clone)]
pub struct ImageMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub rmse: f64,
}

/// Per-image rows plus their means, tagged with the convention that
/// produced them.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub convention: Convention,
    pub rows: Vec<ImageMetrics>,
}

impl MetricsReport {
    pub fn new(convention: Convention) -> Self {
        MetricsReport {
            convention,
            rows: Vec::new(),
        }
    }

    /// Evaluate one pair under the report's convention and append the row.
    pub fn push<E: Element>(&mut self, name: &str, output: &Tensor<E>, reference: &Tensor<E>) -> Result<()> {
        let (a, b) = if self.convention.y_channel || output.shape().c == 1 {
            (output.clone(), reference.clone())
        } else {
            // Full-RGB diagnostics: feed each channel as its own plane.
            let s = output.shape();
            let split = Shape::new(s.n * s.c, 1, s.h, s.w);
            (
                Tensor::new(split, output.data().to_vec())?,
                Tensor::new(split, reference.data().to_vec())?,
            )
        };
        self.rows.push(ImageMetrics {
            name: name.to_string(),
            psnr: psnr(&a, &b, self.convention.shave)?,
            ssim: ssim(&a, &b, self.convention.shave)?,
            rmse: rmse(output, reference)?,
        });
        Ok(())
    }

    pub fn mean_psnr(&self) -> f64 {
        self.rows.iter().map(|r| r.psnr).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.rows.iter().map(|r| r.ssim).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_rmse(&self) -> f64 {
        self.rows.iter().map(|r| r.rmse).sum::<f64>() / self.rows.len() as f64
    }

    /// CSV with a header, one row per image and a trailing mean row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,psnr_db,ssim,rmse\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:.4},{:.6},{:.4}\n", r.name, r.psnr, r.ssim, r.rmse));
        }
        if !self.rows.is_empty() {
            out.push_str(&format!(
                "mean,{:.4},{:.6},{:.4}\n",
                self.mean_psnr(),
                self.mean_ssim(),
                self.mean_rmse()
            ));
        }
        out
    }

    /// Human-readable table for terminal output.
    pub fn table(&self) -> String {
        let channel = if self.convention.y_channel { "Y" } else { "RGB" };
        let mut out = format!(
            "{:<24} {:>9} {:>8} {:>8}   ({channel} channel, shave {})\n",
            "image", "PSNR(dB)", "SSIM", "RMSE", self.convention.shave
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<24} {:>9.4} {:>8.6} {:>8.4}\n",
                r.name, r.psnr, r.ssim, r.rmse
            ));
        }
        if !self.rows.is_empty() {
            out.push_str(&format!(
                "{:<24} {:>9.4} {:>8.6} {:>8.4}\n",
                "mean",
                self.mean_psnr(),
                self.mean_ssim(),
                self.mean_rmse()
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degrade::{bicubic_up, degrade, DegradationSpec};
    use approx::assert_abs_diff_eq;

    fn pattern(c: usize, h: usize, w: usize, salt: usize) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(1, c, h, w), |_, ch, y, x| {
            let idx = (y * w + x) * c + ch + salt;
            ((31 * idx + 7) % 97) as f64 / 96.0
        })
    }

    #[test]
    fn luma_formula_endpoints() {
        let black = Tensor::<f64>::zeros(Shape::new(1, 3, 2, 2));
        assert_abs_diff_eq!(to_y_channel(&black).unwrap().at(0, 0, 0, 0), 16.0 / 255.0);
        let white = Tensor::<f64>::full(Shape::new(1, 3, 2, 2), 1.0);
        assert_abs_diff_eq!(to_y_channel(&white).unwrap().at(0, 0, 0, 0), 235.0 / 255.0);
        let red = Tensor::from_fn(Shape::new(1, 3, 2, 2), |_, c, _, _| (c == 0) as usize as f64);
        assert_abs_diff_eq!(
            to_y_channel(&red).unwrap().at(0, 0, 1, 1),
            (65.481 + 16.0) / 255.0,
            epsilon = 1e-15
        );
        assert!(to_y_channel(&Tensor::<f64>::zeros(Shape::new(1, 2, 2, 2))).is_err());
    }

    #[test]
    fn psnr_identical_inputs_hit_the_sentinel() {
        let a = pattern(3, 16, 16, 1);
        assert_eq!(psnr(&a, &a, 2).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_of_uniform_luma_difference_is_closed_form() {
        // A uniform RGB offset of 1/219 moves luma by exactly 1/255, so
        // PSNR = 20·log10(255).
        let a = Tensor::<f64>::full(Shape::new(1, 3, 12, 12), 0.4);
        let b = a.map(|v| v + 1.0 / 219.0);
        assert_abs_diff_eq!(psnr(&a, &b, 2).unwrap(), 20.0 * 255.0f64.log10(), epsilon = 1e-6);
    }

    #[test]
    fn psnr_is_symmetric_and_validates_inputs() {
        let a = pattern(3, 16, 16, 1);
        let b = pattern(3, 16, 16, 8);
        assert_abs_diff_eq!(
            psnr(&a, &b, 3).unwrap(),
            psnr(&b, &a, 3).unwrap(),
            epsilon = 1e-12
        );
        assert!(psnr(&a, &pattern(3, 16, 15, 8), 0).is_err());
        assert!(psnr(&a, &b, 8).is_err());
    }

    #[test]
    fn psnr_strictly_decreases_with_noise_amplitude() {
        let a = pattern(1, 20, 20, 2);
        let noise = pattern(1, 20, 20, 55).map(|v| v - 0.5);
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let b = a.zip(&noise, |x, n| x + amp * n).unwrap();
            let p = psnr(&a, &b, 0).unwrap();
            assert!(p < last, "psnr {p} did not drop below {last} at amp {amp}");
            last = p;
        }
    }

    #[test]
    fn ssim_of_identical_images_is_exactly_one() {
        let a = pattern(1, 16, 16, 5);
        assert_eq!(ssim(&a, &a, 0).unwrap(), 1.0);
    }

    #[test]
    fn ssim_matches_reference_value() {
        let a = pattern(1, 16, 16, 5);
        let b = a
            .zip(&pattern(1, 16, 16, 40), |x, n| x + (n - 0.5) * 0.2)
            .unwrap()
            .clamp(0.0, 1.0);
        assert_abs_diff_eq!(ssim(&a, &b, 0).unwrap(), 0.9816258860588967, epsilon = 1e-12);
        assert_abs_diff_eq!(
            ssim(&a, &b, 0).unwrap(),
            ssim(&b, &a, 0).unwrap(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn ssim_of_contrast_inversion_is_negative() {
        let a = pattern(1, 16, 16, 3).map(|v| 0.5 + 0.4 * (v - 0.5));
        let b = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &b, 0).unwrap() < 0.0);
    }

    #[test]
    fn ssim_rejects_images_smaller_than_the_window() {
        let a = Tensor::<f64>::zeros(Shape::new(1, 1, 10, 16));
        assert!(ssim(&a, &a, 0).is_err());
        let b = Tensor::<f64>::zeros(Shape::new(1, 1, 16, 16));
        assert!(ssim(&b, &b, 3).is_err());
    }

    #[test]
    fn rmse_in_eight_bit_units() {
        let a = pattern(3, 8, 8, 0);
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let b = a.map(|v| v + 2.0 / 255.0);
        assert_abs_diff_eq!(rmse(&a, &b).unwrap(), 2.0, epsilon = 1e-12);
        // Independent scalar-loop oracle on a random-ish pair.
        let c = pattern(3, 8, 8, 33);
        let mut acc = 0.0;
        for (x, y) in a.data().iter().zip(c.data()) {
            acc += (x - y) * (x - y);
        }
        let want = 255.0 * (acc / a.numel() as f64).sqrt();
        assert_abs_diff_eq!(rmse(&a, &c).unwrap(), want, epsilon = 1e-6);
    }

    /// End-to-end convention anchor: degrade, clip, bicubic-upscale, clip,
    /// then Y-channel PSNR with an s-pixel shave. The frozen values pin the
    /// exact evaluation convention the published baselines assume.
    #[test]
    fn bicubic_baseline_psnr_matches_frozen_reference() {
        let hr = pattern(3, 48, 48, 17);
        for (s, want) in [
            (2, 25.080321659385522),
            (3, 23.20148846534496),
            (4, 21.507404484622086),
        ] {
            let lr = degrade(&hr, &DegradationSpec::bicubic(s)).unwrap();
            let up = bicubic_up(&lr, s).unwrap().clamp(0.0, 1.0);
            assert_abs_diff_eq!(psnr(&up, &hr, s).unwrap(), want, epsilon = 1e-9);
        }
    }

    #[test]
    fn report_collects_rows_and_emits_csv() {
        let mut report = MetricsReport::new(Convention {
            y_channel: true,
            shave: 2,
        });
        let a = pattern(3, 16, 16, 1);
        let b = a
            .zip(&pattern(3, 16, 16, 70), |x, n| x + (n - 0.5) * 0.1)
            .unwrap()
            .clamp(0.0, 1.0);
        report.push("one", &a, &b).unwrap();
        report.push("two", &a, &a).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.rows[1].rmse, 0.0);
        assert!(report.mean_psnr().is_infinite());
        let csv = report.to_csv();
        assert!(csv.starts_with("name,psnr_db,ssim,rmse\n"));
        assert!(csv.lines().count() == 4 && csv.contains("mean,"));
        assert!(report.table().contains("Y channel, shave 2"));
    }
}
