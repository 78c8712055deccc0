//! Image quality metrics: RMSE, SSIM, grayscale entropy and UCIQE.

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::filters::gaussian_kernel;
use crate::imgcore::{quantile_rank, select_rank, to_byte, to_grayscale, ImageBuf};

/// SSIM window side and Gaussian width.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
/// SSIM stabilizers for a dynamic range of 1.
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// UCIQE weights for chroma spread, lightness contrast and mean saturation.
pub const UCIQE_WEIGHTS: [f64; 3] = [0.4680, 0.2745, 0.2576];

/// Quality scores of one output image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    /// Against the reference, on the 0-255 scale.
    pub rmse: f64,
    pub ssim: f64,
    /// Bits.
    pub entropy: f64,
    pub uciqe: f64,
}

impl QualityReport {
    /// Full-reference scores of `output` against `reference`, no-reference
    /// scores of `output`.
    pub fn compute(reference: &ImageBuf, output: &ImageBuf) -> Result<Self> {
        Ok(Self {
            rmse: rmse(reference, output)?,
            ssim: ssim(reference, output)?,
            entropy: entropy(output),
            uciqe: uciqe(output),
        })
    }
}

/// Root mean square difference over all pixels and channels, 0-255 scale.
pub fn rmse(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    if a.is_empty() {
        return Err(Error::Empty("rmse needs at least one pixel"));
    }
    let mut sum = 0.0;
    for (pa, pb) in a.planes().into_iter().zip(b.planes()) {
        for (&x, &y) in pa.iter().zip(pb) {
            let d = 255.0 * x - 255.0 * y;
            sum += d * d;
        }
    }
    Ok((sum / (3 * a.len()) as f64).sqrt())
}

/// Separable 'valid' correlation: output shrinks by `k.len() - 1` per axis.
fn filter_valid(values: &[f64], width: usize, height: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (ow, oh) = (width + 1 - n, height + 1 - n);
    let mut rows = vec![0.0; ow * height];
    for y in 0..height {
        let src = &values[y * width..(y + 1) * width];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(w, v)| w * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(j, w)| w * rows[(y + j) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity of the grayscale images, Gaussian-weighted
/// 11x11 windows fully inside the image.
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    let (w, h) = a.dims();
    if w.min(h) < SSIM_WINDOW {
        return Err(Error::param(
            "image",
            format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"),
        ));
    }
    let (ga, gb) = (to_grayscale(a), to_grayscale(b));
    let (x, y) = (ga.values(), gb.values());
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let blur = |v: Vec<f64>| filter_valid(&v, w, h, &k).0;
    let mu_x = blur(x.to_vec());
    let mu_y = blur(y.to_vec());
    let xx = blur(x.iter().map(|v| v * v).collect());
    let yy = blur(y.iter().map(|v| v * v).collect());
    let xy = blur(x.iter().zip(y).map(|(p, q)| p * q).collect());
    let n = mu_x.len();
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = xx[i] - mx * mx;
        let vy = yy[i] - my * my;
        let cov = xy[i] - mx * my;
        total +=
            ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
    }
    Ok(total / n as f64)
}

/// Shannon entropy in bits of the 256-bin grayscale histogram.
pub fn entropy(img: &ImageBuf) -> f64 {
    let gray = to_grayscale(img);
    let mut hist = [0usize; 256];
    for &v in gray.values() {
        hist[to_byte(v) as usize] += 1;
    }
    let n = gray.len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// CIELab `(L, a, b)` of an sRGB colour under D65.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    // The white point is the image of sRGB white, so grays have a = b = 0.
    let xyz: [f64; 3] = std::array::from_fn(|i| {
        let row = SRGB_TO_XYZ[i];
        (row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]) / (row[0] + row[1] + row[2])
    });
    let [fx, fy, fz] = xyz.map(lab_f);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Largest CIELab chroma reachable inside the sRGB gamut (attained by pure
/// blue).
pub fn max_srgb_chroma() -> f64 {
    let [_, a, b] = srgb_to_lab([0.0, 0.0, 1.0]);
    a.hypot(b)
}

/// Underwater colour image quality evaluation: weighted sum of the chroma
/// standard deviation (chroma normalized to the sRGB maximum), the 1%-99%
/// lightness contrast, and the mean HSV saturation.
pub fn uciqe(img: &ImageBuf) -> f64 {
    let n = img.len();
    if n == 0 {
        return 0.0;
    }
    let c_max = max_srgb_chroma();
    let mut lightness = Vec::with_capacity(n);
    let mut chroma = Vec::with_capacity(n);
    let mut sat_sum = 0.0;
    for i in 0..n {
        let p = img.pixel(i);
        let [l, a, b] = srgb_to_lab(p);
        lightness.push(l);
        chroma.push(a.hypot(b) / c_max);
        let max = p[0].max(p[1]).max(p[2]);
        if max > 0.0 {
            sat_sum += (max - p[0].min(p[1]).min(p[2])) / max;
        }
    }
    let mean_c = chroma.iter().sum::<f64>() / n as f64;
    let sigma_c = (chroma.iter().map(|c| (c - mean_c) * (c - mean_c)).sum::<f64>() / n as f64).sqrt();
    let k = quantile_rank(n, 0.01);
    let hi = select_rank(&mut lightness, n - 1 - k);
    let lo = select_rank(&mut lightness[..n - k], k);
    let con_l = (hi - lo) / 100.0;
    let mu_s = sat_sum / n as f64;
    UCIQE_WEIGHTS[0] * sigma_c + UCIQE_WEIGHTS[1] * con_l + UCIQE_WEIGHTS[2] * mu_s
}
