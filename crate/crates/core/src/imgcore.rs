//! Image and scalar-plane containers, 8-bit file I/O, resampling and the
//! channel statistics used by the background-light model.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use image::codecs::png::PngEncoder;
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ColorType, DynamicImage, ImageEncoder, ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};

/// Luma weights used for every grayscale conversion in the crate.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Default working size (width, height) used when resizing is requested.
pub const STANDARD_SIZE: (usize, usize) = (600, 400);

/// Fraction trimmed from each end of a channel before computing statistics.
pub const DEFAULT_TRIM: f64 = 0.10;

/// An RGB image stored as three row-major planes of intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    width: usize,
    height: usize,
    r: Vec<f64>,
    g: Vec<f64>,
    b: Vec<f64>,
}

impl ImageBuf {
    /// Builds an image from three planes, rejecting mismatched lengths and
    /// values outside `[0, 1]`.
    pub fn new(width: usize, height: usize, r: Vec<f64>, g: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let n = width * height;
        if width == 0 || height == 0 {
            return Err(Error::InvalidBuffer(format!("zero dimension {width}x{height}")));
        }
        for (name, plane) in [("r", &r), ("g", &g), ("b", &b)] {
            if plane.len() != n {
                return Err(Error::InvalidBuffer(format!(
                    "plane {name} has {} values, expected {n}",
                    plane.len()
                )));
            }
            if let Some(i) = plane.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::InvalidBuffer(format!(
                    "plane {name} value {} at index {i} is outside [0, 1]",
                    plane[i]
                )));
            }
        }
        Ok(Self { width, height, r, g, b })
    }

    /// Builds an image from planes whose values are clamped into `[0, 1]`.
    /// Non-finite values become 0.
    pub fn from_planes_clamped(width: usize, height: usize, planes: [Vec<f64>; 3]) -> Result<Self> {
        let [mut r, mut g, mut b] = planes;
        for plane in [&mut r, &mut g, &mut b] {
            for v in plane.iter_mut() {
                *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
            }
        }
        Self::new(width, height, r, g, b)
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Result<Self> {
        let n = width * height;
        let (mut r, mut g, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for y in 0..height {
            for x in 0..width {
                let [pr, pg, pb] = f(x, y);
                r.push(pr);
                g.push(pg);
                b.push(pb);
            }
        }
        Self::new(width, height, r, g, b)
    }

    pub fn constant(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        let n = width * height;
        Self::new(width, height, vec![rgb[0]; n], vec![rgb[1]; n], vec![rgb[2]; n])
    }

    /// Interprets interleaved 8-bit RGB samples.
    pub fn from_rgb8(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::InvalidBuffer(format!(
                "expected {} bytes for {width}x{height} RGB, got {}",
                width * height * 3,
                data.len()
            )));
        }
        let mut planes = [Vec::new(), Vec::new(), Vec::new()];
        for (c, plane) in planes.iter_mut().enumerate() {
            *plane = data.iter().skip(c).step_by(3).map(|&v| f64::from(v) / 255.0).collect();
        }
        let [r, g, b] = planes;
        Self::new(width, height, r, g, b)
    }

    /// Interleaved 8-bit RGB samples, rounded half-up.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * 3);
        for i in 0..self.len() {
            out.push(to_byte(self.r[i]));
            out.push(to_byte(self.g[i]));
            out.push(to_byte(self.b[i]));
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn g(&self) -> &[f64] {
        &self.g
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn planes(&self) -> [&[f64]; 3] {
        [&self.r, &self.g, &self.b]
    }

    pub fn into_planes(self) -> [Vec<f64>; 3] {
        [self.r, self.g, self.b]
    }

    /// Copies channel `c` (0 = red, 1 = green, 2 = blue) into a map.
    pub fn channel(&self, c: usize) -> ScalarMap {
        ScalarMap {
            width: self.width,
            height: self.height,
            values: self.planes()[c].to_vec(),
        }
    }

    /// RGB value at row-major index `i`.
    pub fn pixel(&self, i: usize) -> [f64; 3] {
        [self.r[i], self.g[i], self.b[i]]
    }

    pub fn pixel_at(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixel(y * self.width + x)
    }

    /// Copies the rectangle `[x0, x0 + w) x [y0, y0 + h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::param("crop", "rectangle exceeds image bounds"));
        }
        Self::from_fn(w, h, |x, y| self.pixel_at(x0 + x, y0 + y))
    }
}

/// A real-valued plane (transmission, depth, saturation, blurriness, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidBuffer(format!(
                "map has {} values, expected {}",
                values.len(),
                width * height
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidBuffer(format!("non-finite map value at index {i}")));
        }
        Ok(Self { width, height, values })
    }

    /// Internal constructor for values already known to be finite.
    pub(crate) fn from_vec(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { width, height, values }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_vec(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarMap {
        Self::from_vec(self.width, self.height, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Element-wise combination of two maps of equal dimensions.
    pub fn zip_map(&self, other: &ScalarMap, f: impl Fn(f64, f64) -> f64) -> Result<ScalarMap> {
        check_dims(self.dims(), other.dims())?;
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Ok(Self::from_vec(self.width, self.height, values))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        (self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64).sqrt()
    }
}

/// Mean, median and standard deviation of a channel on the 0-255 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub avg: f64,
    pub med: f64,
    pub std: f64,
}

/// Converts a normalized intensity to a byte, rounding half-up.
pub fn to_byte(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Reads an 8-bit PNG or binary PPM file. Grayscale inputs are replicated
/// to all three planes and alpha is dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuf> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                message: format!("expected PNG or PPM, detected {other:?}"),
            })
        }
    }
    let decoded = reader.decode().map_err(|e| Error::Decode {
        path: path.into(),
        message: e.to_string(),
    })?;
    let rgb = match decoded {
        DynamicImage::ImageLuma8(_)
        | DynamicImage::ImageLumaA8(_)
        | DynamicImage::ImageRgb8(_)
        | DynamicImage::ImageRgba8(_) => decoded.to_rgb8(),
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.into(),
                message: format!("unsupported bit depth or colour type {:?}", other.color()),
            })
        }
    };
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    ImageBuf::from_rgb8(w, h, rgb.as_raw())
}

enum OutputKind {
    Png,
    Ppm,
}

fn output_kind(path: &Path) -> Result<OutputKind> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "png" => Ok(OutputKind::Png),
        "ppm" => Ok(OutputKind::Ppm),
        _ => Err(Error::UnsupportedFormat {
            path: path.into(),
            message: "output extension must be .png or .ppm".into(),
        }),
    }
}

fn write_8bit(path: &Path, width: usize, height: usize, data: &[u8], color: ColorType) -> Result<()> {
    let kind = output_kind(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let writer = BufWriter::new(file);
    let (w, h) = (width as u32, height as u32);
    let result = match kind {
        OutputKind::Png => PngEncoder::new(writer).write_image(data, w, h, color.into()),
        OutputKind::Ppm => {
            let subtype = if color == ColorType::L8 {
                PnmSubtype::Graymap(SampleEncoding::Binary)
            } else {
                PnmSubtype::Pixmap(SampleEncoding::Binary)
            };
            PnmEncoder::new(writer)
                .with_subtype(subtype)
                .write_image(data, w, h, color.into())
        }
    };
    result.map_err(|e| Error::Encode {
        path: path.into(),
        message: e.to_string(),
    })
}

/// Writes an 8-bit PNG or binary PPM (chosen by extension). Values are
/// scaled by 255 and rounded half-up.
pub fn save_image(img: &ImageBuf, path: impl AsRef<Path>) -> Result<()> {
    write_8bit(path.as_ref(), img.width, img.height, &img.to_rgb8(), ColorType::Rgb8)
}

/// Writes a map as an 8-bit grayscale image; values are clamped to `[0, 1]`.
pub fn save_map(map: &ScalarMap, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = map.values.iter().map(|&v| to_byte(v.clamp(0.0, 1.0))).collect();
    write_8bit(path.as_ref(), map.width, map.height, &bytes, ColorType::L8)
}

/// Reads an 8-bit image as a single plane (the luma of colour inputs).
pub fn load_map(path: impl AsRef<Path>) -> Result<ScalarMap> {
    Ok(to_grayscale(&load_image(path)?))
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Source sample positions for a half-pixel-centred resampling of one axis.
fn resample_axis(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|d| {
            let s = ((d as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling to exactly `width x height`.
pub fn resize_to_standard(img: &ImageBuf, width: usize, height: usize) -> Result<ImageBuf> {
    if width == 0 || height == 0 {
        return Err(Error::param(
            "size",
            format!("target {width}x{height} has a zero dimension"),
        ));
    }
    let xs = resample_axis(img.width, width);
    let ys = resample_axis(img.height, height);
    let sw = img.width;
    let resample = |plane: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(width * height);
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = lerp(plane[y0 * sw + x0], plane[y0 * sw + x1], fx);
                let bottom = lerp(plane[y1 * sw + x0], plane[y1 * sw + x1], fx);
                out.push(lerp(top, bottom, fy).clamp(0.0, 1.0));
            }
        }
        out
    };
    ImageBuf::new(width, height, resample(&img.r), resample(&img.g), resample(&img.b))
}

/// Per-pixel luma `0.299 r + 0.587 g + 0.114 b`.
pub fn to_grayscale(img: &ImageBuf) -> ScalarMap {
    let [wr, wg, wb] = LUMA_WEIGHTS;
    let values = (0..img.len())
        .map(|i| wr * img.r[i] + wg * img.g[i] + wb * img.b[i])
        .collect();
    ScalarMap::from_vec(img.width, img.height, values)
}

/// Index of the order statistic used for a lower quantile `q` of `n` values.
pub(crate) fn quantile_rank(n: usize, q: f64) -> usize {
    ((q * (n - 1) as f64) + 1e-9).floor() as usize
}

/// The `k`-th smallest value (0-based) of `values`, which is reordered.
pub(crate) fn select_rank(values: &mut [f64], k: usize) -> f64 {
    *values.select_nth_unstable_by(k, f64::total_cmp).1
}

/// Linearly maps the `[clip, 1 - clip]` quantile range of `map` onto
/// `[out_lo, out_hi]`, clamping the tails. A flat map becomes the midpoint.
pub fn histogram_stretch(map: &ScalarMap, clip: f64, out_lo: f64, out_hi: f64) -> Result<ScalarMap> {
    if !(out_lo < out_hi) {
        return Err(Error::param("stretch range", format!("({out_lo}, {out_hi}) is empty")));
    }
    if !(0.0..0.5).contains(&clip) {
        return Err(Error::param("clip", format!("{clip} must lie in [0, 0.5)")));
    }
    if map.is_empty() {
        return Ok(map.clone());
    }
    let n = map.len();
    let k = quantile_rank(n, clip);
    let mut scratch = map.values.clone();
    let hi = select_rank(&mut scratch, n - 1 - k);
    let lo = select_rank(&mut scratch[..n - k], k);
    if hi <= lo {
        return Ok(ScalarMap::filled(map.width, map.height, (out_lo + out_hi) / 2.0));
    }
    let scale = (out_hi - out_lo) / (hi - lo);
    Ok(map.map(|p| ((p - lo) * scale + out_lo).clamp(out_lo, out_hi)))
}

const BINS: usize = 256;

/// `floor(255 v + 0.5)` clamped to the bin range; truncation is floor on
/// the non-negative side. The comparisons also send NaN to bin 0.
#[inline]
fn bin_index(v: f64) -> i32 {
    let x = v * 255.0 + 0.5;
    let x = if x > 0.0 { x } else { 0.0 };
    let x = if x < (BINS - 1) as f64 { x } else { (BINS - 1) as f64 };
    // SAFETY: `x` is finite and lies in [0, 255], which fits `i32`.
    unsafe { x.to_int_unchecked::<i32>() }
}

fn bin_of(v: f64) -> usize {
    bin_index(v) as usize
}

#[inline]
fn bin_center(b: usize) -> f64 {
    b as f64 / 255.0
}

/// Rank-addressable summary of a plane: 256 intensity bins carrying counts
/// and sums of deviations from each bin centre. Bins holding more than one
/// distinct value are materialized and sorted only when a queried rank
/// falls inside them.
struct RankHistogram<'a> {
    values: &'a [f64],
    count: [usize; BINS],
    start: [usize; BINS],
    lo: [f64; BINS],
    hi: [f64; BINS],
    s1: [f64; BINS],
    s2: [f64; BINS],
    sorted: Vec<Option<Vec<f64>>>,
}

impl<'a> RankHistogram<'a> {
    fn new(values: &'a [f64]) -> Self {
        let mut count = [0usize; BINS];
        let mut lo = [f64::INFINITY; BINS];
        let mut hi = [f64::NEG_INFINITY; BINS];
        let mut s1 = [0.0; BINS];
        let mut s2 = [0.0; BINS];
        // 8-bit sources put every value on a bin centre; a counting pass
        // then determines everything else. Blocks of 16 let the conversion
        // and the centre test vectorize; four sub-histograms keep
        // consecutive increments independent.
        let mut lanes = [[0u32; BINS]; 4];
        // Lanes hold u32 counts; longer inputs take the general pass.
        let fits = values.len() <= u32::MAX as usize;
        let mut diff_bits = u64::from(!fits);
        let mut blocks = values[..if fits { values.len() } else { 0 }].chunks_exact(16);
        for block in &mut blocks {
            // i32 bins keep the centre reconstruction a single conversion.
            let mut bins = [0u8; 16];
            let mut diff = [0u64; 16];
            for k in 0..16 {
                let b = bin_index(block[k]);
                bins[k] = b as u8;
                diff[k] = (f64::from(b) / 255.0).to_bits() ^ block[k].to_bits();
            }
            diff_bits |= diff.iter().fold(0, |acc, d| acc | d);
            for (k, &b) in bins.iter().enumerate() {
                let slot = &mut lanes[k & 3][usize::from(b)];
                *slot = slot.wrapping_add(1);
            }
        }
        for &v in blocks.remainder() {
            let b = bin_of(v);
            lanes[0][b] += 1;
            diff_bits |= bin_center(b).to_bits() ^ v.to_bits();
        }
        for (b, c) in count.iter_mut().enumerate() {
            *c = lanes.iter().map(|lane| lane[b] as usize).sum();
        }
        let off_centre = diff_bits != 0;
        if off_centre {
            count = [0; BINS];
            for &v in values {
                let b = bin_of(v);
                count[b] += 1;
                lo[b] = lo[b].min(v);
                hi[b] = hi[b].max(v);
                let d = v - bin_center(b);
                s1[b] += d;
                s2[b] += d * d;
            }
        } else {
            for b in (0..BINS).filter(|&b| count[b] > 0) {
                lo[b] = bin_center(b);
                hi[b] = lo[b];
            }
        }
        let mut start = [0usize; BINS];
        for b in 1..BINS {
            start[b] = start[b - 1] + count[b - 1];
        }
        Self {
            values,
            count,
            start,
            lo,
            hi,
            s1,
            s2,
            sorted: vec![None; BINS],
        }
    }

    fn bin_of_rank(&self, rank: usize) -> usize {
        // Last bin whose start is <= rank and which is non-empty.
        let mut b = self.start.partition_point(|&s| s <= rank) - 1;
        while self.count[b] == 0 {
            b -= 1;
        }
        b
    }

    fn uniform(&self, b: usize) -> bool {
        self.lo[b] == self.hi[b]
    }

    /// Materializes the sorted contents of every mixed bin among `bins`.
    fn materialize(&mut self, bins: &[usize]) {
        let mut wanted: Vec<usize> = bins
            .iter()
            .copied()
            .filter(|&b| !self.uniform(b) && self.sorted[b].is_none())
            .collect();
        wanted.sort_unstable();
        wanted.dedup();
        if wanted.is_empty() {
            return;
        }
        let mut buckets: Vec<(usize, Vec<f64>)> =
            wanted.iter().map(|&b| (b, Vec::with_capacity(self.count[b]))).collect();
        for &v in self.values {
            let b = bin_of(v);
            if let Some((_, bucket)) = buckets.iter_mut().find(|(wb, _)| *wb == b) {
                bucket.push(v);
            }
        }
        for (b, mut bucket) in buckets {
            bucket.sort_by(f64::total_cmp);
            self.sorted[b] = Some(bucket);
        }
    }

    fn value_at(&self, rank: usize) -> f64 {
        let b = self.bin_of_rank(rank);
        if self.uniform(b) {
            self.lo[b]
        } else {
            self.sorted[b].as_ref().expect("bin materialized")[rank - self.start[b]]
        }
    }

    /// (count, sum of deviations, sum of squared deviations) from the bin
    /// centre over in-bin positions `[i, j)`.
    fn partial(&self, b: usize, i: usize, j: usize) -> (usize, f64, f64) {
        if i == 0 && j == self.count[b] {
            return (self.count[b], self.s1[b], self.s2[b]);
        }
        let c = bin_center(b);
        if self.uniform(b) {
            let k = j - i;
            let d = self.lo[b] - c;
            return (k, k as f64 * d, k as f64 * d * d);
        }
        let slice = &self.sorted[b].as_ref().expect("bin materialized")[i..j];
        let (s1, s2) = slice.iter().fold((0.0, 0.0), |(a, q), &v| {
            let d = v - c;
            (a + d, q + d * d)
        });
        (j - i, s1, s2)
    }

    /// Mean and population variance of the values with ranks `[first, last]`.
    fn range_moments(&self, first: usize, last: usize) -> (f64, f64) {
        let b_lo = self.bin_of_rank(first);
        let b_hi = self.bin_of_rank(last);
        let mut parts: Vec<(usize, usize, f64, f64)> = Vec::new();
        if b_lo == b_hi {
            let (k, s1, s2) = self.partial(b_lo, first - self.start[b_lo], last + 1 - self.start[b_lo]);
            parts.push((b_lo, k, s1, s2));
        } else {
            let (k, s1, s2) = self.partial(b_lo, first - self.start[b_lo], self.count[b_lo]);
            parts.push((b_lo, k, s1, s2));
            for b in b_lo + 1..b_hi {
                if self.count[b] > 0 {
                    parts.push((b, self.count[b], self.s1[b], self.s2[b]));
                }
            }
            let (k, s1, s2) = self.partial(b_hi, 0, last + 1 - self.start[b_hi]);
            parts.push((b_hi, k, s1, s2));
        }
        let n = (last + 1 - first) as f64;
        let centre_sum: f64 = parts.iter().map(|&(b, k, _, _)| k as f64 * bin_center(b)).sum();
        let dev_sum: f64 = parts.iter().map(|&(_, _, s1, _)| s1).sum();
        let mean = centre_sum / n + dev_sum / n;
        let ss: f64 = parts
            .iter()
            .map(|&(b, k, s1, s2)| {
                let e = bin_center(b) - mean;
                s2 + 2.0 * e * s1 + k as f64 * e * e
            })
            .sum();
        (mean, (ss / n).max(0.0))
    }
}

/// Mean, median and population standard deviation (all on the 0-255
/// scale) of the values left after discarding `floor(trim * n)` of the
/// smallest and of the largest values.
pub fn trimmed_channel_stats(plane: &ScalarMap, trim: f64) -> Result<ChannelStats> {
    trimmed_stats_of(&plane.values, trim)
}

pub(crate) fn trimmed_stats_of(values: &[f64], trim: f64) -> Result<ChannelStats> {
    let n = values.len();
    if n == 0 {
        return Err(Error::Empty("channel statistics need at least one value"));
    }
    if !(0.0..0.5).contains(&trim) {
        return Err(Error::param("trim", format!("{trim} must lie in [0, 0.5)")));
    }
    let cut = (trim * n as f64 + 1e-9).floor() as usize;
    let (mean, var, med) = if cut == 0 {
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let mut scratch = values.to_vec();
        let upper = select_rank(&mut scratch, n / 2);
        let med = if n % 2 == 1 {
            upper
        } else {
            (select_rank(&mut scratch[..n / 2], (n - 1) / 2) + upper) / 2.0
        };
        (mean, var, med)
    } else {
        let mut hist = RankHistogram::new(values);
        let (first, last) = (cut, n - cut - 1);
        let ranks = [first, last, (n - 1) / 2, n / 2];
        let bins: Vec<usize> = ranks.iter().map(|&r| hist.bin_of_rank(r)).collect();
        hist.materialize(&bins);
        let (mean, var) = hist.range_moments(first, last);
        // Symmetric trimming leaves the median unchanged.
        let med = (hist.value_at((n - 1) / 2) + hist.value_at(n / 2)) / 2.0;
        (mean, var, med)
    };
    Ok(ChannelStats {
        avg: mean * 255.0,
        med: med * 255.0,
        std: var.sqrt() * 255.0,
    })
}
