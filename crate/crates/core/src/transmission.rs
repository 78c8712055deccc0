//! Transmission maps: the red-channel estimate from the underwater dark
//! channel prior, compensated by the light-attenuation depth model and the
//! reversed-saturation map, then propagated to green and blue through the
//! per-channel attenuation ratios. Also the DCP, UDCP and MIP baselines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::backlight::BackgroundLight;
use crate::error::{check_dims, Error, Result};
use crate::filters::{self, Extremum, GuidedParams, WindowSpec, PATCH};
use crate::imgcore::{histogram_stretch, to_grayscale, ImageBuf, ScalarMap};

/// Lower bound kept on refined maps so that every transmission stays
/// strictly positive.
pub const MIN_TRANSMISSION: f64 = 1e-3;

/// Floor applied to the baseline transmission maps.
pub const BASELINE_FLOOR: f64 = 0.05;

/// Linear depth model coefficients: intercept, max(G, B) weight, R weight.
pub const ULAP_COEFFS: [f64; 3] = [0.53214829, 0.51309827, -0.91066194];

/// Three per-channel transmission maps of equal size, all in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionSet {
    t_r: ScalarMap,
    t_g: ScalarMap,
    t_b: ScalarMap,
}

impl TransmissionSet {
    pub fn new(t_r: ScalarMap, t_g: ScalarMap, t_b: ScalarMap) -> Result<Self> {
        check_dims(t_r.dims(), t_g.dims())?;
        check_dims(t_r.dims(), t_b.dims())?;
        for map in [&t_r, &t_g, &t_b] {
            check_unit_interval(map)?;
        }
        Ok(Self { t_r, t_g, t_b })
    }

    /// The same map for all three channels.
    pub fn uniform(t: ScalarMap) -> Result<Self> {
        Self::new(t.clone(), t.clone(), t)
    }

    /// Spatially constant maps with one value per channel.
    pub fn constant(width: usize, height: usize, t: [f64; 3]) -> Result<Self> {
        Self::new(
            ScalarMap::filled(width, height, t[0]),
            ScalarMap::filled(width, height, t[1]),
            ScalarMap::filled(width, height, t[2]),
        )
    }

    pub fn t_r(&self) -> &ScalarMap {
        &self.t_r
    }

    pub fn t_g(&self) -> &ScalarMap {
        &self.t_g
    }

    pub fn t_b(&self) -> &ScalarMap {
        &self.t_b
    }

    pub fn maps(&self) -> [&ScalarMap; 3] {
        [&self.t_r, &self.t_g, &self.t_b]
    }

    pub fn dims(&self) -> (usize, usize) {
        self.t_r.dims()
    }
}

fn check_unit_interval(map: &ScalarMap) -> Result<()> {
    match map.values().iter().position(|&v| !(v > 0.0)) {
        Some(index) => Err(Error::NonPositiveTransmission {
            index,
            value: map.values()[index],
        }),
        None => match map.values().iter().position(|&v| v > 1.0) {
            Some(i) => Err(Error::InvalidBuffer(format!(
                "transmission {} at index {i} exceeds 1",
                map.values()[i]
            ))),
            None => Ok(()),
        },
    }
}

/// Residual energy ratio per unit depth for each channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationProfile {
    pub nrer_r: f64,
    pub nrer_g: f64,
    pub nrer_b: f64,
}

impl AttenuationProfile {
    /// Accepted ranges per channel (clear open-ocean water).
    pub const BANDS: [(f64, f64); 3] = [(0.80, 0.85), (0.93, 0.97), (0.95, 0.99)];

    pub fn new(nrer_r: f64, nrer_g: f64, nrer_b: f64) -> Result<Self> {
        let prof = Self { nrer_r, nrer_g, nrer_b };
        prof.validate()?;
        Ok(prof)
    }

    pub fn validate(&self) -> Result<()> {
        let ratios = [self.nrer_r, self.nrer_g, self.nrer_b];
        for (v, (lo, hi)) in ratios.iter().zip(Self::BANDS) {
            if !(lo..=hi).contains(v) {
                return Err(Error::param("nrer", format!("{v} lies outside [{lo}, {hi}]")));
            }
        }
        if !(self.nrer_r <= self.nrer_g && self.nrer_g <= self.nrer_b) {
            return Err(Error::param("nrer", "ratios must not decrease from red to blue"));
        }
        Ok(())
    }
}

impl Default for AttenuationProfile {
    fn default() -> Self {
        Self {
            nrer_r: 0.83,
            nrer_g: 0.95,
            nrer_b: 0.97,
        }
    }
}

/// Parameters of the red transmission chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmParams {
    pub patch: WindowSpec,
    /// Assumed local minimum of a clear underwater scene, normalized.
    pub dark_prior: f64,
    /// Scale applied to the reversed-saturation map.
    pub lambda_arsm: f64,
    /// Converts relative depth to distance.
    pub d_inf: f64,
    pub stretch_clip: f64,
    pub stretch_range: (f64, f64),
    pub ulap: [f64; 3],
    pub guided: GuidedParams,
}

impl Default for TmParams {
    fn default() -> Self {
        Self {
            patch: PATCH,
            dark_prior: 0.1,
            lambda_arsm: 0.7,
            d_inf: 10.0,
            stretch_clip: 0.002,
            stretch_range: (0.1, 0.9),
            ulap: ULAP_COEFFS,
            guided: GuidedParams::default(),
        }
    }
}

impl TmParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dark_prior) {
            return Err(Error::param(
                "dark_prior",
                format!("{} must lie in [0, 1)", self.dark_prior),
            ));
        }
        if !(0.0..=1.0).contains(&self.lambda_arsm) {
            return Err(Error::param(
                "lambda",
                format!("{} must lie in [0, 1]", self.lambda_arsm),
            ));
        }
        if !(self.d_inf > 0.0 && self.d_inf.is_finite()) {
            return Err(Error::param("d_inf", format!("{} must be positive", self.d_inf)));
        }
        if !(0.0..0.5).contains(&self.stretch_clip) {
            return Err(Error::param(
                "stretch_clip",
                format!("{} must lie in [0, 0.5)", self.stretch_clip),
            ));
        }
        let (lo, hi) = self.stretch_range;
        if !(0.0 < lo && lo < hi && hi <= 1.0) {
            return Err(Error::param(
                "stretch_range",
                format!("({lo}, {hi}) must satisfy 0 < lo < hi <= 1"),
            ));
        }
        if !(self.guided.epsilon > 0.0) {
            return Err(Error::param(
                "epsilon",
                format!("{} must be positive", self.guided.epsilon),
            ));
        }
        if self.ulap.iter().any(|c| !c.is_finite()) {
            return Err(Error::param("ulap", "coefficients must be finite"));
        }
        Ok(())
    }
}

/// Per-pixel minimum over the channels of `I^c / B^c`, followed by a window
/// minimum.
fn normalized_dark_channel(img: &ImageBuf, bl: BackgroundLight, w: WindowSpec, channels: &[usize]) -> ScalarMap {
    let planes = img.planes();
    let bl = bl.to_array();
    let values = (0..img.len())
        .map(|i| {
            channels
                .iter()
                .map(|&c| planes[c][i] / bl[c])
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let ratio = ScalarMap::new(img.width(), img.height(), values).expect("positive background light");
    filters::window_extremum(&ratio, w, Extremum::Min)
}

/// Red transmission before stretching, clamped to `[0, 1]`.
pub fn nudcp_raw_tm(img: &ImageBuf, bl: BackgroundLight, p: &TmParams) -> Result<ScalarMap> {
    bl.ensure_positive()?;
    let denom = 1.0 - p.dark_prior / bl.max_component();
    if !(denom > 0.0) {
        return Err(Error::param(
            "dark_prior",
            format!("{} must be below the largest background-light component", p.dark_prior),
        ));
    }
    let dark = normalized_dark_channel(img, bl, p.patch, &[0, 1, 2]);
    Ok(dark.map(|m| ((1.0 - m) / denom).clamp(0.0, 1.0)))
}

/// Red transmission from the underwater dark channel prior, stretched to
/// the configured range.
pub fn nudcp_red_tm(img: &ImageBuf, bl: BackgroundLight, p: &TmParams) -> Result<ScalarMap> {
    let raw = nudcp_raw_tm(img, bl, p)?;
    histogram_stretch(&raw, p.stretch_clip, p.stretch_range.0, p.stretch_range.1)
}

/// Relative depth from the linear model, clamped to `[0, 1]`, unrefined.
pub fn ulap_depth_raw(img: &ImageBuf, p: &TmParams) -> ScalarMap {
    let [mu0, mu1, mu2] = p.ulap;
    let (r, g, b) = (img.r(), img.g(), img.b());
    let values = (0..img.len())
        .map(|i| (mu0 + mu1 * g[i].max(b[i]) + mu2 * r[i]).clamp(0.0, 1.0))
        .collect();
    ScalarMap::new(img.width(), img.height(), values).expect("finite depth")
}

fn refine(gray: &ScalarMap, map: &ScalarMap, g: GuidedParams, lo: f64, hi: f64) -> Result<ScalarMap> {
    let q = filters::guided_filter(gray, map, WindowSpec::new(g.radius), g.epsilon)?;
    Ok(q.map(|v| v.clamp(lo, hi)))
}

/// Relative depth map, refined by the guided filter with the grayscale
/// image as guide.
pub fn ulap_depth(img: &ImageBuf, p: &TmParams) -> Result<ScalarMap> {
    refine(&to_grayscale(img), &ulap_depth_raw(img, p), p.guided, 0.0, 1.0)
}

/// Distance of the closest scene point, from the largest normalized
/// deviation between the image and the background light.
pub fn base_depth(img: &ImageBuf, bl: BackgroundLight) -> f64 {
    let bl = bl.to_array();
    let mut worst: f64 = 0.0;
    for (plane, b) in img.planes().into_iter().zip(bl) {
        let norm = (1.0 - b).max(b);
        for &v in plane {
            worst = worst.max((b - v).abs() / norm);
        }
    }
    (1.0 - worst).clamp(0.0, 1.0)
}

/// `nrer ^ (d_inf * (depth + d0))` per pixel.
pub fn tm_from_depth(depth: &ScalarMap, d0: f64, nrer: f64, p: &TmParams) -> Result<ScalarMap> {
    if !(nrer > 0.0 && nrer < 1.0) {
        return Err(Error::param("nrer", format!("{nrer} must lie in (0, 1)")));
    }
    Ok(depth.map(|d| nrer.powf(p.d_inf * (d + d0))))
}

/// Element-wise minimum of the prior-based and depth-based maps.
pub fn compensate_tm(t_nudcp: &ScalarMap, t_ulap: &ScalarMap) -> Result<ScalarMap> {
    t_nudcp.zip_map(t_ulap, f64::min)
}

/// HSV saturation per pixel; black pixels count as fully saturated.
pub fn saturation_map(img: &ImageBuf) -> ScalarMap {
    let values = (0..img.len())
        .map(|i| {
            let [r, g, b] = img.pixel(i);
            let max = r.max(g).max(b);
            if max > 0.0 {
                (max - r.min(g).min(b)) / max
            } else {
                1.0
            }
        })
        .collect();
    ScalarMap::new(img.width(), img.height(), values).expect("finite saturation")
}

/// Reversed saturation map `1 - Sat`, high where white light dominates.
pub fn reversed_saturation(img: &ImageBuf) -> ScalarMap {
    saturation_map(img).map(|s| 1.0 - s)
}

/// Reversed saturation map scaled by `lambda`.
pub fn arsm(img: &ImageBuf, lambda: f64) -> Result<ScalarMap> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param("lambda", format!("{lambda} must lie in [0, 1]")));
    }
    Ok(saturation_map(img).map(|s| lambda * (1.0 - s)))
}

/// Element-wise maximum of the compensated map and the adjusted RSM.
pub fn fuse_tm(t_cps: &ScalarMap, arsm_map: &ScalarMap) -> Result<ScalarMap> {
    t_cps.zip_map(arsm_map, f64::max)
}

/// Green and blue transmissions from the red one through the depth it
/// implies.
pub fn derive_gb_tms(t_r: &ScalarMap, prof: &AttenuationProfile) -> Result<TransmissionSet> {
    check_unit_interval(t_r)?;
    let ln_r = prof.nrer_r.ln();
    let (ln_g, ln_b) = (prof.nrer_g.ln(), prof.nrer_b.ln());
    let (w, h) = t_r.dims();
    let mut t_g = Vec::with_capacity(t_r.len());
    let mut t_b = Vec::with_capacity(t_r.len());
    for &tr in t_r.values() {
        let d = tr.ln() / ln_r;
        // The ordering holds analytically; max() absorbs last-ulp rounding.
        let g = (ln_g * d).exp().clamp(tr, 1.0);
        t_g.push(g);
        t_b.push((ln_b * d).exp().clamp(g, 1.0));
    }
    TransmissionSet::new(t_r.clone(), ScalarMap::new(w, h, t_g)?, ScalarMap::new(w, h, t_b)?)
}

/// Baseline transmission estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineTm {
    Dcp,
    Udcp,
    Mip,
}

impl BaselineTm {
    pub const ALL: [BaselineTm; 3] = [BaselineTm::Dcp, BaselineTm::Udcp, BaselineTm::Mip];

    pub fn name(self) -> &'static str {
        match self {
            BaselineTm::Dcp => "dcp",
            BaselineTm::Udcp => "udcp",
            BaselineTm::Mip => "mip",
        }
    }
}

impl fmt::Display for BaselineTm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineTm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BaselineTm::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::param(
                    "tm-method",
                    format!("unknown baseline `{s}` (expected dcp, udcp or mip)"),
                )
            })
    }
}

/// Unrefined baseline transmission, floored at [`BASELINE_FLOOR`].
pub fn baseline_tm(img: &ImageBuf, bl: BackgroundLight, method: BaselineTm, w: WindowSpec) -> Result<ScalarMap> {
    let t = match method {
        BaselineTm::Dcp | BaselineTm::Udcp => {
            bl.ensure_positive()?;
            let channels: &[usize] = if method == BaselineTm::Dcp { &[0, 1, 2] } else { &[1, 2] };
            normalized_dark_channel(img, bl, w, channels).map(|m| 1.0 - m)
        }
        BaselineTm::Mip => {
            let red = filters::window_extremum(&img.channel(0), w, Extremum::Max);
            let gb = img.channel(1).zip_map(&img.channel(2), f64::max)?;
            let gb = filters::window_extremum(&gb, w, Extremum::Max);
            let diff = red.zip_map(&gb, |a, b| a - b)?;
            let shift = 1.0 - diff.max();
            diff.map(|d| d + shift)
        }
    };
    Ok(t.map(|v| v.clamp(BASELINE_FLOOR, 1.0)))
}

/// Baseline transmission refined by the guided filter and used for all
/// three channels.
pub fn build_baseline_transmission(
    img: &ImageBuf,
    bl: BackgroundLight,
    method: BaselineTm,
    p: &TmParams,
) -> Result<TransmissionSet> {
    let coarse = baseline_tm(img, bl, method, p.patch)?;
    let refined = refine(&to_grayscale(img), &coarse, p.guided, BASELINE_FLOOR, 1.0)?;
    TransmissionSet::uniform(refined)
}

/// Intermediate maps of the red transmission chain.
#[derive(Debug, Clone)]
pub struct TmStages {
    /// Refined relative depth.
    pub depth: ScalarMap,
    pub base_depth: f64,
    pub t_nudcp: ScalarMap,
    pub t_ulap: ScalarMap,
    pub t_cps: ScalarMap,
    /// Reversed saturation, before scaling by lambda.
    pub rsm: ScalarMap,
    pub arsm: ScalarMap,
}

struct Compensated {
    gray: ScalarMap,
    depth: ScalarMap,
    base_depth: f64,
    t_nudcp: ScalarMap,
    t_ulap: ScalarMap,
    t_cps: ScalarMap,
}

fn compensated_chain(
    img: &ImageBuf,
    bl: BackgroundLight,
    p: &TmParams,
    prof: &AttenuationProfile,
) -> Result<Compensated> {
    p.validate()?;
    prof.validate()?;
    let gray = to_grayscale(img);
    let t_nudcp = nudcp_red_tm(img, bl, p)?;
    let depth = refine(&gray, &ulap_depth_raw(img, p), p.guided, 0.0, 1.0)?;
    let d0 = base_depth(img, bl);
    let t_ulap = tm_from_depth(&depth, d0, prof.nrer_r, p)?;
    let t_cps = compensate_tm(&t_nudcp, &t_ulap)?;
    Ok(Compensated {
        gray,
        depth,
        base_depth: d0,
        t_nudcp,
        t_ulap,
        t_cps,
    })
}

/// Full red chain with every intermediate map, then the green and blue
/// maps derived from the refined red one.
pub fn build_transmission_detailed(
    img: &ImageBuf,
    bl: BackgroundLight,
    p: &TmParams,
    prof: &AttenuationProfile,
) -> Result<(TransmissionSet, TmStages)> {
    let c = compensated_chain(img, bl, p, prof)?;
    let rsm = reversed_saturation(img);
    let arsm_map = arsm(img, p.lambda_arsm)?;
    let fused = fuse_tm(&c.t_cps, &arsm_map)?;
    let t_r = refine(&c.gray, &fused, p.guided, MIN_TRANSMISSION, 1.0)?;
    let set = derive_gb_tms(&t_r, prof)?;
    let stages = TmStages {
        depth: c.depth,
        base_depth: c.base_depth,
        t_nudcp: c.t_nudcp,
        t_ulap: c.t_ulap,
        t_cps: c.t_cps,
        rsm,
        arsm: arsm_map,
    };
    Ok((set, stages))
}

pub fn build_transmission(
    img: &ImageBuf,
    bl: BackgroundLight,
    p: &TmParams,
    prof: &AttenuationProfile,
) -> Result<TransmissionSet> {
    build_transmission_detailed(img, bl, p, prof).map(|(set, _)| set)
}

/// Refined red transmission without the saturation step.
pub fn arsm_free_red_tm(
    img: &ImageBuf,
    bl: BackgroundLight,
    p: &TmParams,
    prof: &AttenuationProfile,
) -> Result<ScalarMap> {
    let c = compensated_chain(img, bl, p, prof)?;
    refine(&c.gray, &c.t_cps, p.guided, MIN_TRANSMISSION, 1.0)
}
