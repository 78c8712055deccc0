//! Evaluation helpers: background-light annotations and accuracy scoring,
//! forward haze synthesis, the estimator benchmark, and corpus reports.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backlight::{self, BackgroundLight, BlMethod};
use crate::enhance::{enhance_pipeline, PipelineConfig, StageTimings};
use crate::error::{check_dims, Error, Result};
use crate::imgcore::{load_image, resize_to_standard, ImageBuf};
use crate::metrics::{self, QualityReport};
use crate::transmission::TransmissionSet;

/// Annotated background light of one image, 0-255 per channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_id: String,
    pub b_r: u8,
    pub b_g: u8,
    pub b_b: u8,
}

impl AnnotationRecord {
    pub fn bytes(&self) -> [u8; 3] {
        [self.b_r, self.b_g, self.b_b]
    }
}

const ANNOTATION_HEADER: [&str; 4] = ["image_id", "b_r", "b_g", "b_b"];

/// Reads an annotation CSV with header `image_id,b_r,b_g,b_b`.
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>> {
    let path = path.as_ref();
    let bad = |row: u64, message: String| Error::Annotation {
        path: path.into(),
        row,
        message,
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header = reader.headers().map_err(|e| bad(1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ANNOTATION_HEADER {
        return Err(bad(1, format!("expected header `{}`", ANNOTATION_HEADER.join(","))));
    }
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| {
            let row = e.position().map_or(0, |p| p.line());
            bad(row, e.to_string())
        })?;
        let row = record.position().map_or(0, |p| p.line());
        let image_id = record[0].to_string();
        if image_id.is_empty() {
            return Err(bad(row, "empty image_id".into()));
        }
        let mut values = [0u8; 3];
        for (k, slot) in values.iter_mut().enumerate() {
            let (field, raw) = (ANNOTATION_HEADER[k + 1], &record[k + 1]);
            let v: i64 = raw
                .parse()
                .map_err(|_| bad(row, format!("field {field}: `{raw}` is not an integer")))?;
            *slot = u8::try_from(v).map_err(|_| bad(row, format!("field {field}: {v} is outside 0..=255")))?;
        }
        if !seen.insert(image_id.clone()) {
            return Err(bad(row, format!("duplicate image_id `{image_id}`")));
        }
        records.push(AnnotationRecord {
            image_id,
            b_r: values[0],
            b_g: values[1],
            b_b: values[2],
        });
    }
    Ok(records)
}

/// Per-channel tolerances on the 0-255 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tolerance {
    pub r: u8,
    pub gb: u8,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { r: 30, gb: 40 }
    }
}

/// True when every channel of the estimate, rounded to 0-255, lies within
/// its tolerance of the annotation.
pub fn bl_accuracy(est: BackgroundLight, truth: &AnnotationRecord, tol: Tolerance) -> bool {
    let est = est.to_bytes();
    let truth = truth.bytes();
    let limits = [tol.r, tol.gb, tol.gb];
    (0..3).all(|c| est[c].abs_diff(truth[c]) <= limits[c])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub n_images: usize,
    pub n_accurate: usize,
    pub accuracy: f64,
    /// Mean absolute error per channel, 0-255 scale.
    pub mae: [f64; 3],
}

impl AccuracySummary {
    pub fn from_pairs<'a>(
        pairs: impl IntoIterator<Item = (BackgroundLight, &'a AnnotationRecord)>,
        tol: Tolerance,
    ) -> Self {
        let mut n = 0;
        let mut hits = 0;
        let mut err = [0.0; 3];
        for (est, truth) in pairs {
            n += 1;
            hits += usize::from(bl_accuracy(est, truth, tol));
            let (e, t) = (est.to_bytes(), truth.bytes());
            for c in 0..3 {
                err[c] += f64::from(e[c].abs_diff(t[c]));
            }
        }
        let denom = n.max(1) as f64;
        Self {
            n_images: n,
            n_accurate: hits,
            accuracy: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
            mae: err.map(|e| e / denom),
        }
    }
}

/// Forward image formation `I = J t + (1 - t) B`, clamped to `[0, 1]`.
pub fn synth_haze(clear: &ImageBuf, bl: BackgroundLight, tms: &TransmissionSet) -> Result<ImageBuf> {
    check_dims(clear.dims(), tms.dims())?;
    let bl = bl.to_array();
    let maps = tms.maps();
    let planes: [Vec<f64>; 3] = std::array::from_fn(|c| {
        clear.planes()[c]
            .iter()
            .zip(maps[c].values())
            .map(|(&j, &t)| j * t + (1.0 - t) * bl[c])
            .collect()
    });
    ImageBuf::from_planes_clamped(clear.width(), clear.height(), planes)
}

/// Uniformly random 8-bit image from a fixed seed.
pub fn seeded_image(width: usize, height: usize, seed: u64) -> ImageBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bytes: Vec<u8> = (0..width * height * 3).map(|_| rng.gen()).collect();
    ImageBuf::from_rgb8(width, height, &bytes).expect("buffer length matches")
}

/// Default seed of the benchmark images.
pub const BENCH_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub width: usize,
    pub height: usize,
    pub method: BlMethod,
    /// Median wall-clock seconds over the repetitions.
    pub median_s: f64,
    pub bl: [u8; 3],
}

/// Median estimation time of each method at each size, run serially on
/// seeded random images.
pub fn bench_bl(sizes: &[(usize, usize)], methods: &[BlMethod], reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if reps < 3 {
        return Err(Error::param("reps", format!("{reps} is below the minimum of 3")));
    }
    let mut rows = Vec::new();
    for &(width, height) in sizes {
        if width == 0 || height == 0 {
            return Err(Error::param("sizes", format!("{width}x{height} is empty")));
        }
        let img = seeded_image(width, height, seed);
        for &method in methods {
            let mut times = Vec::with_capacity(reps);
            let mut bl = None;
            for _ in 0..reps {
                let (est, elapsed) = backlight::estimate_bl(&img, method)?;
                times.push(elapsed.as_secs_f64());
                bl = Some(est);
            }
            times.sort_by(f64::total_cmp);
            rows.push(BenchRow {
                width,
                height,
                method,
                median_s: times[reps / 2],
                bl: bl.expect("reps >= 3").to_bytes(),
            });
        }
    }
    Ok(rows)
}

/// Options of [`evaluate_corpus`].
#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub config: PipelineConfig,
    pub annotations: Option<PathBuf>,
    pub tolerance: Tolerance,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    pub resize: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRow {
    pub image_id: String,
    pub file: String,
    pub rmse: f64,
    pub ssim: f64,
    pub entropy: f64,
    pub uciqe: f64,
    /// Normalized background light.
    pub bl: [f64; 3],
    pub bl_255: [u8; 3],
    pub timings: StageTimings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accurate: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub bl_method: BlMethod,
    pub tm_method: String,
    pub config: PipelineConfig,
    pub full_reference: String,
    pub ssim: SsimMeta,
    pub uciqe_weights: [f64; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<Tolerance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimMeta {
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub channel: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_images: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub uciqe: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<AccuracySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub meta: ReportMeta,
    pub per_image: Vec<ImageRow>,
    pub aggregate: Aggregate,
    pub skipped: Vec<Skipped>,
}

impl CorpusReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn mean_of(rows: &[ImageRow], f: impl Fn(&ImageRow) -> f64) -> Option<f64> {
    if rows.is_empty() {
        None
    } else {
        Some(rows.iter().map(f).sum::<f64>() / rows.len() as f64)
    }
}

fn process_image(path: &Path, opts: &EvalOptions) -> Result<(ImageRow, BackgroundLight)> {
    let mut img = load_image(path)?;
    if let Some((w, h)) = opts.resize {
        img = resize_to_standard(&img, w, h)?;
    }
    let res = enhance_pipeline(&img, &opts.config)?;
    let q = QualityReport::compute(&img, &res.enhanced)?;
    let row = ImageRow {
        image_id: image_id_of(path),
        file: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        rmse: q.rmse,
        ssim: q.ssim,
        entropy: q.entropy,
        uciqe: q.uciqe,
        bl: res.bl.to_array(),
        bl_255: res.bl.to_bytes(),
        timings: res.timings,
        accurate: None,
    };
    Ok((row, res.bl))
}

fn image_id_of(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Runs the pipeline on every file of `dir` (sorted by name), scoring each
/// output against its input. Files that fail are listed as skipped.
pub fn evaluate_corpus(dir: impl AsRef<Path>, opts: &EvalOptions) -> Result<CorpusReport> {
    let dir = dir.as_ref();
    opts.config.validate()?;
    let annotations = match &opts.annotations {
        Some(p) => Some(load_annotations(p)?),
        None => None,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| Error::param("jobs", e.to_string()))?;
    let outcomes: Vec<Result<(ImageRow, BackgroundLight)>> =
        pool.install(|| files.par_iter().map(|p| process_image(p, opts)).collect());

    let by_id: HashMap<&str, &AnnotationRecord> =
        annotations.iter().flatten().map(|r| (r.image_id.as_str(), r)).collect();
    let mut per_image = Vec::new();
    let mut skipped = Vec::new();
    let mut scored = Vec::new();
    for (path, outcome) in files.iter().zip(outcomes) {
        match outcome {
            Ok((mut row, bl)) => {
                if let Some(truth) = by_id.get(row.image_id.as_str()) {
                    row.accurate = Some(bl_accuracy(bl, truth, opts.tolerance));
                    scored.push((bl, *truth));
                } else if annotations.is_some() {
                    warn!("no annotation for {}", row.image_id);
                }
                info!("{}: uciqe {:.4}", row.file, row.uciqe);
                per_image.push(row);
            }
            Err(e) => {
                warn!("skipping {}: {e}", path.display());
                skipped.push(Skipped {
                    file: path
                        .file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default(),
                    reason: e.to_string(),
                });
            }
        }
    }

    let aggregate = Aggregate {
        n_images: per_image.len(),
        rmse: mean_of(&per_image, |r| r.rmse),
        ssim: mean_of(&per_image, |r| r.ssim),
        entropy: mean_of(&per_image, |r| r.entropy),
        uciqe: mean_of(&per_image, |r| r.uciqe),
        accuracy: annotations
            .as_ref()
            .map(|_| AccuracySummary::from_pairs(scored.iter().copied(), opts.tolerance)),
    };
    let meta = ReportMeta {
        bl_method: opts.config.bl_method,
        tm_method: opts.config.tm_method.to_string(),
        config: opts.config.clone(),
        full_reference: "enhanced output against its input image".into(),
        ssim: SsimMeta {
            window: metrics::SSIM_WINDOW,
            sigma: metrics::SSIM_SIGMA,
            c1: metrics::SSIM_C1,
            c2: metrics::SSIM_C2,
            channel: "grayscale".into(),
        },
        uciqe_weights: metrics::UCIQE_WEIGHTS,
        tolerance: annotations.as_ref().map(|_| opts.tolerance),
    };
    Ok(CorpusReport {
        meta,
        per_image,
        aggregate,
        skipped,
    })
}
