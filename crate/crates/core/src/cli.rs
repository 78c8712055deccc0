//! Command-line front end.
//!
//! Exit status is 0 on success, 1 for usage or parameter errors (detected
//! before any work starts) and 2 for failures while processing, with the
//! failing stage named in the message.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::{warn, LevelFilter};
use serde::Serialize;

use crate::backlight::{self, BackgroundLight, BlMethod};
use crate::enhance::{
    color_correct, enhance_pipeline, CorrectionStatus, EnhanceParams, PipelineConfig, StageTimings, TmMethod,
};
use crate::error::Error;
use crate::evalkit::{self, EvalOptions, BENCH_SEED};
use crate::imgcore::{load_image, load_map, resize_to_standard, save_image, save_map, ImageBuf, ScalarMap};
use crate::metrics::QualityReport;
use crate::transmission::{AttenuationProfile, TmParams, TransmissionSet};

#[derive(Debug, Parser)]
#[command(name = "uwrestore", version, about = "Underwater image restoration and evaluation")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Restore and colour-correct one image.
    Enhance(EnhanceArgs),
    /// Print the estimated background light of one image.
    EstimateBl(EstimateArgs),
    /// Run the pipeline over a directory and write a JSON report.
    Evaluate(EvaluateArgs),
    /// Time the background-light estimators on seeded random images.
    Bench(BenchArgs),
    /// Synthesize a hazed image from a clear one.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
struct PipelineArgs {
    /// Background-light estimator: statistical, dcp, udcp, mip, quadtree or blurriness.
    #[arg(long, default_value_t = BlMethod::Statistical)]
    bl_method: BlMethod,

    /// Transmission estimator: proposed, dcp, udcp or mip.
    #[arg(long, default_value_t = TmMethod::Proposed)]
    tm_method: TmMethod,

    /// Scale of the reversed-saturation map that corrects artificially lit regions.
    #[arg(long, default_value_t = TmParams::default().lambda_arsm)]
    lambda: f64,

    /// Offset in the white-balance gain denominator, in (0, 0.5).
    #[arg(long, default_value_t = EnhanceParams::default().lambda_v)]
    lambda_v: f64,

    /// Lower clamp on the transmission used for restoration.
    #[arg(long, default_value_t = EnhanceParams::default().t_floor)]
    t_floor: f64,

    /// Upper clamp on the transmission used for restoration.
    #[arg(long, default_value_t = EnhanceParams::default().t_ceil)]
    t_ceil: f64,

    /// Skip the white-balance colour correction.
    #[arg(long)]
    no_color_correction: bool,

    /// Resample the input to WxH before processing.
    #[arg(long, value_name = "WxH", value_parser = parse_size)]
    resize: Option<(usize, usize)>,
}

impl PipelineArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            bl_method: self.bl_method,
            tm_method: self.tm_method,
            tm: TmParams {
                lambda_arsm: self.lambda,
                ..TmParams::default()
            },
            profile: AttenuationProfile::default(),
            enhance: EnhanceParams {
                t_floor: self.t_floor,
                t_ceil: self.t_ceil,
                lambda_v: self.lambda_v,
                color_correction: !self.no_color_correction,
            },
            bl_override: None,
            t_override: None,
        }
    }
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    /// Input image (PNG or PPM).
    input: PathBuf,
    /// Where to write the enhanced image.
    output: PathBuf,

    #[command(flatten)]
    pipeline: PipelineArgs,

    /// Use this background light (normalized r,g,b) instead of estimating it.
    #[arg(long, value_name = "R,G,B", value_parser = parse_triple)]
    bl: Option<[f64; 3]>,

    /// Use a constant transmission (one value or r,g,b) instead of estimating it.
    #[arg(long, value_name = "T|R,G,B", value_parser = parse_one_or_three)]
    t: Option<[f64; 3]>,

    /// Write depth, transmission, RSM and restored images to this directory.
    #[arg(long, value_name = "DIR")]
    save_intermediates: Option<PathBuf>,

    /// Write a JSON report with the background light, timings and quality scores.
    #[arg(long, value_name = "JSON")]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    /// Input image.
    input: PathBuf,

    /// Background-light estimator.
    #[arg(long, default_value_t = BlMethod::Statistical)]
    method: BlMethod,

    /// Resample the input to WxH before estimating.
    #[arg(long, value_name = "WxH", value_parser = parse_size)]
    resize: Option<(usize, usize)>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Directory of PNG/PPM images.
    dir: PathBuf,

    /// CSV of annotated background lights (image_id,b_r,b_g,b_b).
    #[arg(long, value_name = "CSV")]
    annotations: Option<PathBuf>,

    /// Background-light estimator (overrides --bl-method).
    #[arg(long)]
    method: Option<BlMethod>,

    #[command(flatten)]
    pipeline: PipelineArgs,

    /// Where to write the JSON report; printed to stdout when absent.
    #[arg(long, value_name = "JSON")]
    report: Option<PathBuf>,

    /// Images processed concurrently (0 uses every core).
    #[arg(long, default_value_t = 0)]
    jobs: usize,

    /// Red-channel tolerance for background-light accuracy, 0-255 scale.
    #[arg(long, default_value_t = evalkit::Tolerance::default().r)]
    tol_r: u8,

    /// Green/blue tolerance for background-light accuracy, 0-255 scale.
    #[arg(long, default_value_t = evalkit::Tolerance::default().gb)]
    tol_gb: u8,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Comma-separated image sizes.
    #[arg(long, value_name = "WxH,...", default_value = "600x400,1200x800", value_delimiter = ',', value_parser = parse_size)]
    sizes: Vec<(usize, usize)>,

    /// Comma-separated estimators.
    #[arg(
        long,
        value_name = "M,...",
        default_value = "statistical,dcp,udcp,mip,quadtree,blurriness",
        value_delimiter = ','
    )]
    methods: Vec<BlMethod>,

    /// Repetitions per cell; the median is reported.
    #[arg(long, default_value_t = 5)]
    reps: usize,

    /// Seed of the random benchmark images.
    #[arg(long, default_value_t = BENCH_SEED)]
    seed: u64,

    /// Write the table as JSON.
    #[arg(long, value_name = "JSON")]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Haze-free source image.
    clear: PathBuf,
    /// Where to write the hazed image.
    output: PathBuf,

    /// Background light, normalized r,g,b.
    #[arg(long, value_name = "R,G,B", value_parser = parse_triple)]
    bl: [f64; 3],

    /// Constant transmission (one value or r,g,b), or a grayscale depth image
    /// in [0, 1] converted through the default attenuation profile.
    #[arg(long, value_name = "T|R,G,B|DEPTH", default_value = "0.5")]
    t: String,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("`{s}` is not of the form WxH"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in `{s}`"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in `{s}`"))?;
    if w == 0 || h == 0 {
        return Err(format!("`{s}` has a zero dimension"));
    }
    Ok((w, h))
}

fn parse_floats(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("`{v}` is not a number")))
        .collect()
}

fn parse_triple(s: &str) -> Result<[f64; 3], String> {
    parse_floats(s)?
        .try_into()
        .map_err(|_| format!("`{s}` needs exactly three comma-separated values"))
}

fn parse_one_or_three(s: &str) -> Result<[f64; 3], String> {
    match parse_floats(s)?.as_slice() {
        [v] => Ok([*v; 3]),
        [r, g, b] => Ok([*r, *g, *b]),
        _ => Err(format!("`{s}` needs one or three comma-separated values")),
    }
}

/// Why a command did not succeed.
enum Failure {
    /// Bad arguments; nothing was processed.
    Usage(String),
    /// Processing failed in the named stage.
    Runtime(&'static str, Error),
}

type Outcome = Result<(), Failure>;

fn usage(e: impl ToString) -> Failure {
    Failure::Usage(e.to_string())
}

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure>;
}

impl<T> StageExt<T> for crate::error::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, Failure> {
        self.map_err(|e| match e {
            Error::Stage { stage, source } => Failure::Runtime(stage, *source),
            other => Failure::Runtime(stage, other),
        })
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => LevelFilter::Warn,
        1 => LevelFilter::Info,
        _ => LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();

    let outcome = match cli.command {
        Command::Enhance(args) => cmd_enhance(args),
        Command::EstimateBl(args) => cmd_estimate(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Runtime(stage, e)) => {
            eprintln!("error: {stage} stage failed: {e}");
            2
        }
    }
}

fn load_input(path: &Path, resize: Option<(usize, usize)>) -> Result<ImageBuf, Failure> {
    let img = load_image(path).stage("load")?;
    match resize {
        Some((w, h)) => resize_to_standard(&img, w, h).stage("resize"),
        None => Ok(img),
    }
}

fn quantize(img: &ImageBuf) -> ImageBuf {
    ImageBuf::from_rgb8(img.width(), img.height(), &img.to_rgb8()).expect("dimensions unchanged")
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value)
        .map_err(Error::from)
        .stage("report")?;
    fs::write(path, text + "\n")
        .map_err(|e| Error::io(path, e))
        .stage("report")
}

#[derive(Serialize)]
struct EnhanceReport<'a> {
    input: String,
    output: String,
    config: &'a PipelineConfig,
    bl: [f64; 3],
    bl_255: [u8; 3],
    #[serde(skip_serializing_if = "Option::is_none")]
    correction: Option<CorrectionStatus>,
    timings: StageTimings,
    quality: QualityReport,
}

fn cmd_enhance(args: EnhanceArgs) -> Outcome {
    let mut cfg = args.pipeline.config();
    cfg.bl_override = args.bl.map(BackgroundLight::from_array).transpose().map_err(usage)?;
    cfg.t_override = args.t;
    cfg.validate().map_err(usage)?;

    let img = load_input(&args.input, args.pipeline.resize)?;
    // Colour correction runs on the 8-bit restored image, so that the
    // output equals correcting a `--no-color-correction` result file.
    let restore_only = PipelineConfig {
        enhance: EnhanceParams {
            color_correction: false,
            ..cfg.enhance
        },
        ..cfg.clone()
    };
    let mut res = enhance_pipeline(&img, &restore_only).stage("pipeline")?;
    res.restored = quantize(&res.restored);
    res.enhanced = res.restored.clone();
    if cfg.enhance.color_correction {
        let t0 = Instant::now();
        let (out, status) = color_correct(&res.restored, &cfg.enhance);
        let cc = t0.elapsed().as_secs_f64();
        res.enhanced = out;
        res.correction = Some(status);
        res.timings.cc = Some(cc);
        res.timings.total += cc;
    }
    save_image(&res.enhanced, &args.output).stage("save")?;

    if let Some(dir) = &args.save_intermediates {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)).stage("save")?;
        let [t_r, t_g, t_b] = res.tms.maps();
        let mut maps: Vec<(&str, &ScalarMap)> = vec![("t_r.png", t_r), ("t_g.png", t_g), ("t_b.png", t_b)];
        match &res.stages {
            Some(stages) => {
                maps.push(("depth.png", &stages.depth));
                maps.push(("rsm.png", &stages.rsm));
            }
            None => warn!("depth and rsm maps exist only for the proposed transmission chain"),
        }
        for (name, map) in maps {
            save_map(map, dir.join(name)).stage("save")?;
        }
        save_image(&res.restored, dir.join("restored.png")).stage("save")?;
    }

    if let Some(path) = &args.report {
        let quality = QualityReport::compute(&img, &res.enhanced).stage("metrics")?;
        let report = EnhanceReport {
            input: args.input.display().to_string(),
            output: args.output.display().to_string(),
            config: &cfg,
            bl: res.bl.to_array(),
            bl_255: res.bl.to_bytes(),
            correction: res.correction,
            timings: res.timings,
            quality,
        };
        write_json(path, &report)?;
    }
    Ok(())
}

fn cmd_estimate(args: EstimateArgs) -> Outcome {
    let img = load_input(&args.input, args.resize)?;
    let (bl, elapsed) = backlight::estimate_bl(&img, args.method).stage("bl")?;
    let [r, g, b] = bl.to_bytes();
    println!("{r} {g} {b}");
    println!("{:.6} {:.6} {:.6}", bl.r, bl.g, bl.b);
    println!("elapsed {:.6} s", elapsed.as_secs_f64());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Outcome {
    let mut config = args.pipeline.config();
    if let Some(m) = args.method {
        config.bl_method = m;
    }
    config.validate().map_err(usage)?;
    if !args.dir.is_dir() {
        return Err(usage(format!("{} is not a directory", args.dir.display())));
    }
    let opts = EvalOptions {
        config,
        annotations: args.annotations,
        tolerance: evalkit::Tolerance {
            r: args.tol_r,
            gb: args.tol_gb,
        },
        jobs: args.jobs,
        resize: args.pipeline.resize,
    };
    let report = evalkit::evaluate_corpus(&args.dir, &opts).stage("evaluate")?;
    match &args.report {
        Some(path) => write_json(path, &report)?,
        None => println!("{}", report.to_json().stage("report")?),
    }
    let agg = &report.aggregate;
    eprintln!("{} images, {} skipped", agg.n_images, report.skipped.len());
    if let Some(acc) = &agg.accuracy {
        eprintln!("accuracy {}/{} = {:.3}", acc.n_accurate, acc.n_images, acc.accuracy);
    }
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Outcome {
    if args.reps < 3 {
        return Err(usage(format!("--reps must be at least 3, got {}", args.reps)));
    }
    let rows = evalkit::bench_bl(&args.sizes, &args.methods, args.reps, args.seed).stage("bench")?;
    println!("{:>11} {:>12} {:>12}", "size", "method", "median_s");
    for row in &rows {
        println!(
            "{:>11} {:>12} {:>12.6}",
            format!("{}x{}", row.width, row.height),
            row.method.name(),
            row.median_s
        );
    }
    if let Some(path) = &args.report {
        write_json(path, &rows)?;
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Outcome {
    let bl = BackgroundLight::from_array(args.bl).map_err(usage)?;
    let constant = parse_one_or_three(&args.t).ok();
    if let Some(t) = constant {
        if t.iter().any(|v| !(*v > 0.0 && *v <= 1.0)) {
            return Err(usage(format!("--t {t:?} must lie in (0, 1]")));
        }
    }
    let clear = load_image(&args.clear).stage("load")?;
    let (w, h) = clear.dims();
    let tms = match constant {
        Some(t) => TransmissionSet::constant(w, h, t).stage("tm")?,
        None => {
            let depth = load_map(&args.t).stage("load")?;
            depth_transmission(&depth, (w, h)).stage("tm")?
        }
    };
    let hazed = evalkit::synth_haze(&clear, bl, &tms).stage("synth")?;
    save_image(&hazed, &args.output).stage("save")
}

/// `t_c = nrer_c ^ (d_inf * depth)` with the default profile.
fn depth_transmission(depth: &ScalarMap, dims: (usize, usize)) -> crate::error::Result<TransmissionSet> {
    crate::error::check_dims(dims, depth.dims())?;
    let prof = AttenuationProfile::default();
    let d_inf = TmParams::default().d_inf;
    let at = |nrer: f64| depth.map(|d| nrer.powf(d_inf * d.clamp(0.0, 1.0)));
    TransmissionSet::new(at(prof.nrer_r), at(prof.nrer_g), at(prof.nrer_b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("600x400"), Ok((600, 400)));
        assert_eq!(parse_size("12X7"), Ok((12, 7)));
        assert!(parse_size("600").is_err());
        assert!(parse_size("0x4").is_err());
    }

    #[test]
    fn value_lists() {
        assert_eq!(parse_triple("0.1,0.2,0.3"), Ok([0.1, 0.2, 0.3]));
        assert!(parse_triple("0.1,0.2").is_err());
        assert_eq!(parse_one_or_three("0.5"), Ok([0.5; 3]));
        assert!(parse_one_or_three("a").is_err());
    }

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["uwrestore"]), 1);
        assert_eq!(run(["uwrestore", "enhance", "a.png"]), 1);
        assert_eq!(run(["uwrestore", "enhance", "a.png", "b.png", "--lambda-v", "0.7"]), 1);
        assert_eq!(run(["uwrestore", "bench", "--reps", "2"]), 1);
        assert_eq!(run(["uwrestore", "estimate-bl", "x.png", "--method", "nope"]), 1);
    }

    #[test]
    fn help_exits_cleanly() {
        assert_eq!(run(["uwrestore", "--help"]), 0);
    }

    #[test]
    fn missing_input_is_a_runtime_failure() {
        assert_eq!(run(["uwrestore", "estimate-bl", "/nonexistent/in.png"]), 2);
    }

    #[test]
    fn depth_file_transmission() {
        let depth = ScalarMap::new(2, 1, vec![0.0, 0.1]).unwrap();
        let set = depth_transmission(&depth, (2, 1)).unwrap();
        assert_eq!(set.t_r().values()[0], 1.0);
        assert!((set.t_r().values()[1] - 0.83).abs() < 1e-12);
        assert!((set.t_b().values()[1] - 0.97).abs() < 1e-12);
        assert!(depth_transmission(&depth, (1, 2)).is_err());
    }
}
