//! Restoration by inverting the image formation model, white-balance colour
//! correction, and the end-to-end pipeline.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::backlight::{self, BackgroundLight, BlMethod};
use crate::error::{check_dims, Error, Result};
use crate::imgcore::{ImageBuf, ScalarMap};
use crate::transmission::{self, AttenuationProfile, BaselineTm, TmParams, TmStages, TransmissionSet};

/// Restoration and colour-correction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnhanceParams {
    /// Lower clamp on the transmission divisor.
    pub t_floor: f64,
    /// Upper clamp on the transmission divisor.
    pub t_ceil: f64,
    /// Offset added to the white-balance gain denominator.
    pub lambda_v: f64,
    pub color_correction: bool,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        Self {
            t_floor: 0.2,
            t_ceil: 0.9,
            lambda_v: 0.25,
            color_correction: true,
        }
    }
}

impl EnhanceParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.t_floor && self.t_floor < self.t_ceil && self.t_ceil <= 1.0) {
            return Err(Error::param(
                "t-floor/t-ceil",
                format!("need 0 < {} < {} <= 1", self.t_floor, self.t_ceil),
            ));
        }
        if !(self.lambda_v > 0.0 && self.lambda_v < 0.5) {
            return Err(Error::param(
                "lambda-v",
                format!("{} must lie in (0, 0.5)", self.lambda_v),
            ));
        }
        Ok(())
    }
}

/// Inverts `I = J t + (1 - t) B` per channel with `t` clamped to
/// `[t_floor, t_ceil]`; the result is clamped to `[0, 1]`.
pub fn restore_ifm(img: &ImageBuf, bl: BackgroundLight, tms: &TransmissionSet, p: &EnhanceParams) -> Result<ImageBuf> {
    check_dims(img.dims(), tms.dims())?;
    let bl = bl.to_array();
    let maps = tms.maps();
    let planes: [Vec<f64>; 3] = std::array::from_fn(|c| {
        img.planes()[c]
            .iter()
            .zip(maps[c].values())
            .map(|(&i, &t)| (i - bl[c]) / t.clamp(p.t_floor, p.t_ceil) + bl[c])
            .collect()
    });
    ImageBuf::from_planes_clamped(img.width(), img.height(), planes)
}

/// What [`color_correct`] did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionStatus {
    Applied,
    /// The image was black, so it came back unchanged.
    SkippedBlack,
}

/// White balance with per-channel gain `1 / (lambda_max * mu_c / mu_ref + lambda_v)`.
pub fn color_correct(img: &ImageBuf, p: &EnhanceParams) -> (ImageBuf, CorrectionStatus) {
    let planes = img.planes();
    let n = img.len() as f64;
    let mu: [f64; 3] = std::array::from_fn(|c| planes[c].iter().sum::<f64>() / n);
    let mu_ref = mu.iter().map(|m| m * m).sum::<f64>().sqrt();
    if !(mu_ref > 0.0) {
        warn!("colour correction skipped: image is black");
        return (img.clone(), CorrectionStatus::SkippedBlack);
    }
    let lambda_max = planes.iter().flat_map(|p| p.iter()).copied().fold(0.0, f64::max);
    let corrected: [Vec<f64>; 3] = std::array::from_fn(|c| {
        let denom = lambda_max * (mu[c] / mu_ref) + p.lambda_v;
        planes[c].iter().map(|&v| v / denom).collect()
    });
    let out = ImageBuf::from_planes_clamped(img.width(), img.height(), corrected).expect("same dimensions");
    (out, CorrectionStatus::Applied)
}

/// Transmission estimator used by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TmMethod {
    /// Dark-channel estimate compensated by depth and saturation.
    Proposed,
    Dcp,
    Udcp,
    Mip,
}

impl TmMethod {
    pub const ALL: [TmMethod; 4] = [TmMethod::Proposed, TmMethod::Dcp, TmMethod::Udcp, TmMethod::Mip];

    pub fn name(self) -> &'static str {
        match self {
            TmMethod::Proposed => "proposed",
            TmMethod::Dcp => "dcp",
            TmMethod::Udcp => "udcp",
            TmMethod::Mip => "mip",
        }
    }

    fn baseline(self) -> Option<BaselineTm> {
        match self {
            TmMethod::Proposed => None,
            TmMethod::Dcp => Some(BaselineTm::Dcp),
            TmMethod::Udcp => Some(BaselineTm::Udcp),
            TmMethod::Mip => Some(BaselineTm::Mip),
        }
    }
}

impl fmt::Display for TmMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TmMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TmMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::param(
                    "tm-method",
                    format!("unknown method `{s}` (expected proposed, dcp, udcp or mip)"),
                )
            })
    }
}

/// Everything the pipeline needs besides the image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub bl_method: BlMethod,
    pub tm_method: TmMethod,
    pub tm: TmParams,
    pub profile: AttenuationProfile,
    pub enhance: EnhanceParams,
    /// Use this background light instead of estimating one.
    pub bl_override: Option<BackgroundLight>,
    /// Use these constant per-channel transmissions instead of estimating.
    pub t_override: Option<[f64; 3]>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            bl_method: BlMethod::Statistical,
            tm_method: TmMethod::Proposed,
            tm: TmParams::default(),
            profile: AttenuationProfile::default(),
            enhance: EnhanceParams::default(),
            bl_override: None,
            t_override: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.tm.validate()?;
        self.profile.validate()?;
        self.enhance.validate()?;
        if let Some(t) = self.t_override {
            if t.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
                return Err(Error::param("t", format!("{t:?} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub bl: f64,
    pub tm: f64,
    pub restore: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cc: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct PipelineResult {
    pub restored: ImageBuf,
    pub enhanced: ImageBuf,
    pub bl: BackgroundLight,
    pub tms: TransmissionSet,
    /// Intermediate maps; present only for the proposed transmission chain.
    pub stages: Option<TmStages>,
    pub correction: Option<CorrectionStatus>,
    pub timings: StageTimings,
}

impl PipelineResult {
    /// Refined relative depth, when the proposed chain produced one.
    pub fn depth(&self) -> Option<&ScalarMap> {
        self.stages.as_ref().map(|s| &s.depth)
    }
}

/// Background light, transmission, restoration, then optional colour
/// correction. Errors carry the name of the stage that failed.
pub fn enhance_pipeline(img: &ImageBuf, cfg: &PipelineConfig) -> Result<PipelineResult> {
    cfg.validate()?;
    let start = Instant::now();

    let t0 = Instant::now();
    let bl = match cfg.bl_override {
        Some(bl) => bl,
        None => {
            backlight::estimate_bl(img, cfg.bl_method)
                .map_err(|e| e.in_stage("bl"))?
                .0
        }
    };
    let bl_time = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let (tms, stages) = match (cfg.t_override, cfg.tm_method.baseline()) {
        (Some(t), _) => (TransmissionSet::constant(img.width(), img.height(), t), None),
        (None, None) => match transmission::build_transmission_detailed(img, bl, &cfg.tm, &cfg.profile) {
            Ok((set, stages)) => (Ok(set), Some(stages)),
            Err(e) => (Err(e), None),
        },
        (None, Some(base)) => (transmission::build_baseline_transmission(img, bl, base, &cfg.tm), None),
    };
    let tms = tms.map_err(|e| e.in_stage("tm"))?;
    let tm_time = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let restored = restore_ifm(img, bl, &tms, &cfg.enhance).map_err(|e| e.in_stage("restore"))?;
    let restore_time = t0.elapsed().as_secs_f64();

    let (enhanced, correction, cc_time) = if cfg.enhance.color_correction {
        let t0 = Instant::now();
        let (out, status) = color_correct(&restored, &cfg.enhance);
        (out, Some(status), Some(t0.elapsed().as_secs_f64()))
    } else {
        (restored.clone(), None, None)
    };

    Ok(PipelineResult {
        restored,
        enhanced,
        bl,
        tms,
        stages,
        correction,
        timings: StageTimings {
            bl: bl_time,
            tm: tm_time,
            restore: restore_time,
            cc: cc_time,
            total: start.elapsed().as_secs_f64(),
        },
    })
}
