//! Background-light estimation: the histogram-statistics model and the
//! dark-channel, maximum-intensity, quad-tree and blurriness baselines.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{self, Extremum, GuidedParams, WindowSpec, PATCH};
use crate::imgcore::{self, to_byte, to_grayscale, ImageBuf, ScalarMap, DEFAULT_TRIM};

/// Green/blue model: `AVG_COEF * avg + STD_COEF * std + OFFSET` (0-255 scale).
pub const GB_AVG_COEF: f64 = 1.13;
pub const GB_STD_COEF: f64 = 1.11;
pub const GB_OFFSET: f64 = -25.6;

/// Red model: `SCALE / (1 + GAIN * exp(RATE * median))` (0-255 scale).
pub const RED_SCALE: f64 = 140.0;
pub const RED_GAIN: f64 = 14.4;
pub const RED_RATE: f64 = -0.034;

/// Bounds applied to every statistical estimate on the 0-255 scale.
pub const BL_FLOOR: f64 = 5.0;
pub const BL_CEIL: f64 = 250.0;

/// Stop threshold of the quad-tree descent, as a fraction of image area.
pub const DEFAULT_QUADTREE_FRACTION: f64 = 0.01;

/// Weight of the brightest candidate in the blurriness estimator.
pub const DEFAULT_BLURRINESS_ALPHA: f64 = 0.5;

/// Global background light per channel, normalized to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackgroundLight {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl BackgroundLight {
    pub fn new(r: f64, g: f64, b: f64) -> Result<Self> {
        for (name, v) in [('r', r), ('g', g), ('b', b)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidBuffer(format!(
                    "background light {name} = {v} is outside [0, 1]"
                )));
            }
        }
        Ok(Self { r, g, b })
    }

    pub fn from_array(rgb: [f64; 3]) -> Result<Self> {
        Self::new(rgb[0], rgb[1], rgb[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    /// Components on the 0-255 scale, rounded half-up.
    pub fn to_bytes(self) -> [u8; 3] {
        [to_byte(self.r), to_byte(self.g), to_byte(self.b)]
    }

    pub fn max_component(self) -> f64 {
        self.r.max(self.g).max(self.b)
    }

    /// Fails unless every component is strictly positive.
    pub fn ensure_positive(self) -> Result<()> {
        for (channel, value) in [('r', self.r), ('g', self.g), ('b', self.b)] {
            if !(value > 0.0) {
                return Err(Error::NonPositiveBackgroundLight { channel, value });
            }
        }
        Ok(())
    }
}

/// Background-light estimator selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlMethod {
    Statistical,
    Dcp,
    Udcp,
    Mip,
    Quadtree,
    Blurriness,
}

impl BlMethod {
    pub const ALL: [BlMethod; 6] = [
        BlMethod::Statistical,
        BlMethod::Dcp,
        BlMethod::Udcp,
        BlMethod::Mip,
        BlMethod::Quadtree,
        BlMethod::Blurriness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlMethod::Statistical => "statistical",
            BlMethod::Dcp => "dcp",
            BlMethod::Udcp => "udcp",
            BlMethod::Mip => "mip",
            BlMethod::Quadtree => "quadtree",
            BlMethod::Blurriness => "blurriness",
        }
    }
}

impl fmt::Display for BlMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BlMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BlMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::param(
                    "bl-method",
                    format!("unknown method `{s}` (expected statistical, dcp, udcp, mip, quadtree or blurriness)"),
                )
            })
    }
}

/// Red-channel model evaluated on a median in 0-255 units (unclamped).
pub fn red_model(median: f64) -> f64 {
    RED_SCALE / (1.0 + RED_GAIN * (RED_RATE * median).exp())
}

/// Green/blue-channel model on 0-255 mean and deviation (unclamped).
pub fn green_blue_model(avg: f64, std: f64) -> f64 {
    GB_AVG_COEF * avg + GB_STD_COEF * std + GB_OFFSET
}

fn clamp_estimate(v: f64) -> f64 {
    v.clamp(BL_FLOOR, BL_CEIL) / 255.0
}

/// Background light from trimmed channel histograms: the red component
/// from the median, green and blue from the mean and deviation.
pub fn estimate_bl_statistical(img: &ImageBuf) -> BackgroundLight {
    let stats = |plane: &[f64]| imgcore::trimmed_stats_of(plane, DEFAULT_TRIM).expect("image planes are non-empty");
    let red = stats(img.r());
    let green = stats(img.g());
    let blue = stats(img.b());
    BackgroundLight {
        r: clamp_estimate(red_model(red.med)),
        g: clamp_estimate(green_blue_model(green.avg, green.std)),
        b: clamp_estimate(green_blue_model(blue.avg, blue.std)),
    }
}

/// Index of the first maximum in row-major order.
fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Dark channel: per-pixel minimum over RGB (or GB) followed by a window
/// minimum.
pub fn dark_channel(img: &ImageBuf, w: WindowSpec, gb_only: bool) -> ScalarMap {
    let (r, g, b) = (img.r(), img.g(), img.b());
    let values = (0..img.len())
        .map(|i| {
            let gb = g[i].min(b[i]);
            if gb_only {
                gb
            } else {
                gb.min(r[i])
            }
        })
        .collect();
    let per_pixel = ScalarMap::from_vec(img.width(), img.height(), values);
    filters::window_extremum(&per_pixel, w, Extremum::Min)
}

/// Input colour at the brightest dark-channel pixel.
pub fn estimate_bl_dcp(img: &ImageBuf, w: WindowSpec, gb_only: bool) -> BackgroundLight {
    let dark = dark_channel(img, w, gb_only);
    let i = argmax(dark.values().iter().copied());
    let [r, g, b] = img.pixel(i);
    BackgroundLight { r, g, b }
}

fn mip_score(p: [f64; 3]) -> f64 {
    (p[0] - p[1]).abs().max((p[0] - p[2]).abs())
}

/// Colour of the pixel with the largest red versus green/blue difference.
pub fn estimate_bl_mip(img: &ImageBuf) -> BackgroundLight {
    let i = argmax((0..img.len()).map(|i| mip_score(img.pixel(i))));
    let [r, g, b] = img.pixel(i);
    BackgroundLight { r, g, b }
}

/// Axis-aligned image rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Region {
    pub fn area(self) -> usize {
        self.w * self.h
    }

    /// Top-left, top-right, bottom-left, bottom-right.
    pub fn quadrants(self) -> [Region; 4] {
        let (w1, h1) = (self.w / 2, self.h / 2);
        let (w2, h2) = (self.w - w1, self.h - h1);
        [
            Region {
                x: self.x,
                y: self.y,
                w: w1,
                h: h1,
            },
            Region {
                x: self.x + w1,
                y: self.y,
                w: w2,
                h: h1,
            },
            Region {
                x: self.x,
                y: self.y + h1,
                w: w1,
                h: h2,
            },
            Region {
                x: self.x + w1,
                y: self.y + h1,
                w: w2,
                h: h2,
            },
        ]
    }

    pub fn indices(self, stride: usize) -> impl Iterator<Item = usize> {
        (self.y..self.y + self.h).flat_map(move |y| (self.x..self.x + self.w).map(move |x| y * stride + x))
    }

    fn mean_std(self, map: &ScalarMap) -> (f64, f64) {
        let n = self.area() as f64;
        let mean = self.indices(map.width()).map(|i| map.values()[i]).sum::<f64>() / n;
        let var = self
            .indices(map.width())
            .map(|i| (map.values()[i] - mean).powi(2))
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }
}

/// Repeatedly descends into the quadrant with the highest `score` while
/// the region is larger than `min_area_frac` of the image. Ties keep the
/// earlier quadrant.
pub fn quadtree_descend(
    width: usize,
    height: usize,
    min_area_frac: f64,
    mut score: impl FnMut(Region) -> f64,
) -> Region {
    let total = (width * height) as f64;
    let mut region = Region {
        x: 0,
        y: 0,
        w: width,
        h: height,
    };
    while region.area() as f64 > min_area_frac * total && region.w >= 2 && region.h >= 2 {
        let quads = region.quadrants();
        let mut best = (quads[0], score(quads[0]));
        for &q in &quads[1..] {
            let s = score(q);
            if s > best.1 {
                best = (q, s);
            }
        }
        region = best.0;
    }
    region
}

fn check_fraction(min_area_frac: f64) -> Result<()> {
    if min_area_frac > 0.0 && min_area_frac <= 1.0 {
        Ok(())
    } else {
        Err(Error::param(
            "min_area_frac",
            format!("{min_area_frac} must lie in (0, 1]"),
        ))
    }
}

/// Quad-tree search for the flattest bright region (mean minus standard
/// deviation of luma), then the maximum-intensity rule inside it.
pub fn estimate_bl_quadtree(img: &ImageBuf, min_area_frac: f64) -> Result<BackgroundLight> {
    check_fraction(min_area_frac)?;
    let gray = to_grayscale(img);
    let leaf = quadtree_descend(img.width(), img.height(), min_area_frac, |q| {
        let (m, s) = q.mean_std(&gray);
        m - s
    });
    let idx: Vec<usize> = leaf.indices(img.width()).collect();
    let best = argmax(idx.iter().map(|&i| mip_score(img.pixel(i))));
    let [r, g, b] = img.pixel(idx[best]);
    Ok(BackgroundLight { r, g, b })
}

/// Kernel sizes of the multi-scale blurriness measure.
pub const BLURRINESS_SCALES: [usize; 4] = [9, 17, 33, 65];

/// Mean absolute difference between luma and its Gaussian blurs at four
/// scales (`sigma = size / 6`).
pub fn initial_blurriness(gray: &ScalarMap) -> Result<ScalarMap> {
    let mut acc = vec![0.0; gray.len()];
    for &k in &BLURRINESS_SCALES {
        let blurred = filters::gaussian_blur(gray, k, k as f64 / 6.0)?;
        for ((a, &g), &b) in acc.iter_mut().zip(gray.values()).zip(blurred.values()) {
            *a += (g - b).abs();
        }
    }
    let n = BLURRINESS_SCALES.len() as f64;
    Ok(ScalarMap::from_vec(
        gray.width(),
        gray.height(),
        acc.into_iter().map(|v| v / n).collect(),
    ))
}

/// Refined blurriness map: 5x5 maximum, hole filling, then guided
/// smoothing with luma as the guide.
pub fn blurriness_map(img: &ImageBuf) -> Result<ScalarMap> {
    let gray = to_grayscale(img);
    let rough = filters::window_extremum(&initial_blurriness(&gray)?, WindowSpec::new(2), Extremum::Max);
    let filled = filters::fill_holes(&rough);
    let gp = GuidedParams::default();
    let refined = filters::guided_filter(&gray, &filled, WindowSpec::new(gp.radius), gp.epsilon)?;
    Ok(refined.map(|v| v.max(0.0)))
}

fn mean_color(img: &ImageBuf, idx: impl Iterator<Item = usize>) -> [f64; 3] {
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for i in idx {
        let p = img.pixel(i);
        for c in 0..3 {
            acc[c] += p[c];
        }
        n += 1;
    }
    acc.map(|v| v / n as f64)
}

/// Three candidates (blurriest 0.1 % of pixels, flattest quad-tree leaf,
/// blurriest quad-tree leaf) mixed as `alpha * max + (1 - alpha) * min`.
pub fn estimate_bl_blurriness(img: &ImageBuf, alpha: f64) -> Result<BackgroundLight> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::param("alpha", format!("{alpha} must lie in [0, 1]")));
    }
    let blur = blurriness_map(img)?;
    let n = img.len();
    let top = ((n as f64 * 0.001).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let values = blur.values();
    let by_blur = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    if top < n {
        order.select_nth_unstable_by(top - 1, by_blur);
    }
    let first = mean_color(img, order[..top].iter().copied());

    let gray = to_grayscale(img);
    let (w, h) = img.dims();
    let flat = quadtree_descend(w, h, DEFAULT_QUADTREE_FRACTION, |q| {
        let (_, s) = q.mean_std(&gray);
        -s
    });
    let second = mean_color(img, flat.indices(w));
    let blurry = quadtree_descend(w, h, DEFAULT_QUADTREE_FRACTION, |q| q.mean_std(&blur).0);
    let third = mean_color(img, blurry.indices(w));

    let mut out = [0.0; 3];
    for c in 0..3 {
        let hi = first[c].max(second[c]).max(third[c]);
        let lo = first[c].min(second[c]).min(third[c]);
        out[c] = (alpha * hi + (1.0 - alpha) * lo).clamp(0.0, 1.0);
    }
    BackgroundLight::from_array(out)
}

/// Runs the selected estimator with its default parameters and reports the
/// wall-clock time spent in the estimator.
pub fn estimate_bl(img: &ImageBuf, method: BlMethod) -> Result<(BackgroundLight, Duration)> {
    let start = Instant::now();
    let bl = match method {
        BlMethod::Statistical => estimate_bl_statistical(img),
        BlMethod::Dcp => estimate_bl_dcp(img, PATCH, false),
        BlMethod::Udcp => estimate_bl_dcp(img, PATCH, true),
        BlMethod::Mip => estimate_bl_mip(img),
        BlMethod::Quadtree => estimate_bl_quadtree(img, DEFAULT_QUADTREE_FRACTION)?,
        BlMethod::Blurriness => estimate_bl_blurriness(img, DEFAULT_BLURRINESS_ALPHA)?,
    };
    Ok((bl, start.elapsed()))
}
