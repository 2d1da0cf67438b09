use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crowdnms::geometry::{BBox, BoxSelector, PairedBox};
use crowdnms::ingest::{self, ImageRecord, IngestError};
use crowdnms::metrics::{self, EvalConfig, ImageSample, MetricsError};
use crowdnms::suppression::{suppress, Detection, NmsConfig, NmsMethod, TieBreak};
use crowdnms::synthcrowd::{
    generate_scenes, oracle_sweep, simulate_detector, CrowdSceneSpec, Layout, NoiseModel, SceneError,
};

const CONFIG_PREFIX: &str = "config: ";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SceneError> for CliError {
    fn from(e: SceneError) -> Self {
        match e {
            SceneError::Suppression(_) => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Debug, Parser)]
#[command(name = "crowdnms", version, about = "Paired-box NMS and pedestrian detection evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Suppress duplicate detections in a prediction file.
    Nms(NmsArgs),
    /// Evaluate predictions against ODGT ground truth.
    Eval(EvalArgs),
    /// Generate synthetic crowds, or run the perfect-detector survival sweep.
    Simulate(SimulateArgs),
    /// Time suppression on synthetic inputs.
    Bench(BenchArgs),
    /// Re-run the configuration echoed in an output file header.
    Replay(ReplayArgs),
}

fn parse_method(s: &str) -> Result<NmsMethod, String> {
    s.trim().parse::<NmsMethod>().map_err(|e| e.to_string())
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<T>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}

fn parse_selector(s: &str) -> Result<BoxSelector, String> {
    match s {
        "full" => Ok(BoxSelector::Full),
        "visible" => Ok(BoxSelector::Visible),
        other => Err(format!("expected full or visible, got {other:?}")),
    }
}

// Kept as text so the echoed config survives JSON (which has no infinity).
fn check_band(s: &str) -> Result<String, String> {
    parse_band(s).map(|_| s.to_string())
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    match s {
        "reasonable" => return Ok(EvalConfig::REASONABLE),
        "heavy" => return Ok(EvalConfig::HEAVY_OCCLUSION),
        _ => {}
    }
    let parts: Vec<f64> = parse_list(s)?;
    match parts[..] {
        [lo, hi] if lo < hi => Ok((lo, hi)),
        _ => Err(format!("expected lo,hi with lo < hi, reasonable or heavy; got {s:?}")),
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct NmsArgs {
    /// Prediction file to read.
    #[arg(long)]
    pub input: PathBuf,
    /// Prediction file to write.
    #[arg(long)]
    pub output: PathBuf,
    /// greedy-full, r2, soft-linear, soft-gaussian or adaptive.
    #[arg(long, default_value = "r2", value_parser = parse_method)]
    pub method: NmsMethod,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Gaussian soft-NMS sigma.
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// Soft-NMS pruning cutoff.
    #[arg(long, default_value_t = 0.001)]
    pub score_floor: f64,
    /// Per-box field holding the density for adaptive NMS.
    #[arg(long, default_value = "density")]
    pub density_field: String,
    /// Order tied scores randomly with this seed instead of by box index.
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    /// ODGT ground-truth file.
    #[arg(long)]
    pub gt: PathBuf,
    /// Prediction file.
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub match_iou: f64,
    /// Box evaluated for the main report: full or visible.
    #[arg(long = "box", default_value = "full", value_parser = parse_selector)]
    pub selector: BoxSelector,
    /// Ignore ground truths shorter than this many pixels.
    #[arg(long, default_value_t = 0.0)]
    pub min_height: f64,
    /// Visibility subset: reasonable, heavy, or lo,hi.
    #[arg(long, value_parser = check_band)]
    pub visibility: Option<String>,
    #[arg(long, default_value_t = 9)]
    pub fppi_points: usize,
    #[arg(long, default_value_t = 0.01)]
    pub fppi_min: f64,
    #[arg(long, default_value_t = 1.0)]
    pub fppi_max: f64,
    /// Directory for curve files (one "x y" pair per line).
    #[arg(long)]
    pub curves: Option<PathBuf>,
    /// Treat ground-truth images without a prediction line as having no detections.
    #[arg(long)]
    pub allow_missing: bool,
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Default,
    Crowded,
    Sparse,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "crowded")]
    pub preset: Preset,
    #[arg(long, default_value_t = 200)]
    pub scenes: usize,
    /// Override the preset's number of people per scene.
    #[arg(long)]
    pub people: Option<usize>,
    /// Base scene seed; scene k uses seed + k.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub center_jitter: f64,
    #[arg(long, default_value_t = 0.05)]
    pub size_jitter: f64,
    #[arg(long, default_value_t = 2.0)]
    pub duplicates: f64,
    #[arg(long, default_value_t = 2.0)]
    pub fp_per_image: f64,
    /// Base noise seed; scene k uses noise_seed + k.
    #[arg(long, default_value_t = 0)]
    pub noise_seed: u64,
    /// Ground-truth output (ODGT).
    #[arg(long)]
    pub gt_out: Option<PathBuf>,
    /// Simulated detections output.
    #[arg(long)]
    pub pred_out: Option<PathBuf>,
    /// Print the perfect-detector survival table instead of writing data.
    #[arg(long)]
    pub oracle: bool,
    /// Run the survival sweep on this ODGT file instead of synthetic scenes.
    #[arg(long)]
    pub from_odgt: Option<PathBuf>,
    #[arg(long, default_value = "greedy-full,r2", value_delimiter = ',', value_parser = parse_method)]
    pub methods: Vec<NmsMethod>,
    #[arg(long, default_value = "0.3,0.4,0.5,0.6,0.7,0.8", value_delimiter = ',')]
    pub thresholds: Vec<f64>,
    /// Number of shuffle seeds for the survival sweep, starting at --seed.
    #[arg(long, default_value_t = 1)]
    pub shuffle_seeds: u64,
    /// Also write the survival table here.
    #[arg(long)]
    pub table_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long, default_value = "0,10,100,1000", value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, default_value = "greedy-full,r2", value_delimiter = ',', value_parser = parse_method)]
    pub methods: Vec<NmsMethod>,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// A file written by crowdnms (its `# config:` header is used).
    pub file: PathBuf,
}

/// One JSON line describing the command.
pub fn config_echo(cmd: &Command) -> String {
    format!("{CONFIG_PREFIX}{}", serde_json::to_string(cmd).expect("command serializes"))
}

pub fn run(cmd: Command) -> Result<(), CliError> {
    match &cmd {
        Command::Nms(a) => with_workers(a.workers, || cmd_nms(&cmd, a)),
        Command::Eval(a) => with_workers(a.workers, || cmd_eval(&cmd, a)),
        Command::Simulate(a) => cmd_simulate(&cmd, a),
        Command::Bench(a) => cmd_bench(&cmd, a),
        Command::Replay(a) => cmd_replay(a),
    }
}

fn with_workers<F>(workers: usize, f: F) -> Result<(), CliError>
where
    F: FnOnce() -> Result<(), CliError> + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start {workers} workers: {e}")))?;
    pool.install(f)
}

fn cmd_replay(args: &ReplayArgs) -> Result<(), CliError> {
    let file = File::open(&args.file).map_err(|e| io_err(&args.file, e))?;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| io_err(&args.file, e))?;
        let Some(comment) = line.strip_prefix('#') else {
            break;
        };
        if let Some(json) = comment.trim_start().strip_prefix(CONFIG_PREFIX) {
            let cmd: Command = serde_json::from_str(json)
                .map_err(|e| CliError::Data(format!("{}: bad config header: {e}", args.file.display())))?;
            if matches!(cmd, Command::Replay(_)) {
                return Err(CliError::Usage("refusing to replay a replay".into()));
            }
            return run(cmd);
        }
    }
    Err(CliError::Data(format!("{}: no config header found", args.file.display())))
}

fn nms_config(args: &NmsArgs) -> Result<NmsConfig, CliError> {
    let cfg = NmsConfig {
        threshold: args.threshold,
        method: args.method,
        soft_sigma: args.sigma,
        score_floor: args.score_floor,
        tie_break: args.shuffle_seed.map_or(TieBreak::ById, TieBreak::Shuffle),
    };
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn densities_of(record: &ImageRecord, field: &str) -> Result<HashMap<u64, f64>, CliError> {
    record
        .dets
        .iter()
        .zip(&record.det_extra)
        .map(|(d, extra)| {
            extra
                .get(field)
                .and_then(|v| v.as_f64())
                .map(|v| (d.id, v))
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "image {}: box {} has no numeric {field:?} field",
                        record.image_id, d.id
                    ))
                })
        })
        .collect()
}

fn cmd_nms(cmd: &Command, args: &NmsArgs) -> Result<(), CliError> {
    let cfg = nms_config(args)?;
    let mut records = ingest::read_predictions(&args.input)?;
    records.sort_by(|a, b| a.image_id.cmp(&b.image_id));
    let results: Vec<(ImageRecord, usize, usize)> = records
        .into_par_iter()
        .map(|mut record| {
            let densities = match cfg.method {
                NmsMethod::Adaptive => Some(densities_of(&record, &args.density_field)?),
                _ => None,
            };
            let outcome = suppress(&record.dets, &cfg, densities.as_ref())
                .map_err(|e| CliError::Data(format!("image {}: {e}", record.image_id)))?;
            let before = record.dets.len();
            record.replace_dets(outcome.survivors());
            let kept = record.dets.len();
            Ok((record, kept, before - kept))
        })
        .collect::<Result<_, CliError>>()?;

    let echo = config_echo(cmd);
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "# {echo}");
    for (record, kept, removed) in &results {
        let _ = writeln!(out, "{} kept {kept} suppressed {removed}", record.image_id);
    }
    let records: Vec<ImageRecord> = results.into_iter().map(|(r, _, _)| r).collect();
    ingest::write_predictions(&args.output, &records, Some(&echo))?;
    Ok(())
}

fn eval_config(args: &EvalArgs, selector: BoxSelector) -> Result<EvalConfig, CliError> {
    let cfg = EvalConfig {
        match_iou: args.match_iou,
        box_selector: selector,
        fppi_points: args.fppi_points,
        fppi_range: (args.fppi_min, args.fppi_max),
        min_height: args.min_height,
        visibility_band: args.visibility.as_deref().map(parse_band).transpose().map_err(CliError::Usage)?,
        ..EvalConfig::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

fn align<'a>(
    gts: &'a [ImageRecord],
    preds: &'a [ImageRecord],
    allow_missing: bool,
) -> Result<Vec<ImageSample<'a>>, CliError> {
    let by_id: HashMap<&str, &ImageRecord> = preds.iter().map(|r| (r.image_id.as_str(), r)).collect();
    let gt_ids: BTreeSet<&str> = gts.iter().map(|r| r.image_id.as_str()).collect();
    let unknown: Vec<&str> = preds
        .iter()
        .map(|r| r.image_id.as_str())
        .filter(|id| !gt_ids.contains(id))
        .collect();
    if !unknown.is_empty() {
        return Err(CliError::Data(format!(
            "predictions for images missing from ground truth: {}",
            unknown.join(", ")
        )));
    }
    let missing: Vec<&str> = gts
        .iter()
        .map(|r| r.image_id.as_str())
        .filter(|id| !by_id.contains_key(id))
        .collect();
    if !missing.is_empty() && !allow_missing {
        return Err(CliError::Data(format!(
            "ground-truth images without predictions: {} (use --allow-missing to score them as empty)",
            missing.join(", ")
        )));
    }
    Ok(gts
        .iter()
        .map(|g| ImageSample {
            dets: by_id.get(g.image_id.as_str()).map_or(&[][..], |p| &p.dets[..]),
            gts: &g.gts,
        })
        .collect())
}

fn write_curve_file(dir: &Path, name: &str, echo: &str, curve: &[(f64, f64)]) -> Result<(), CliError> {
    let path = dir.join(name);
    let mut file = io::BufWriter::new(File::create(&path).map_err(|e| io_err(&path, e))?);
    writeln!(file, "# {echo}").map_err(|e| io_err(&path, e))?;
    metrics::write_curve(&mut file, curve).map_err(|e| io_err(&path, e))?;
    file.flush().map_err(|e| io_err(&path, e))
}

fn cmd_eval(cmd: &Command, args: &EvalArgs) -> Result<(), CliError> {
    let cfg = eval_config(args, args.selector)?;
    let gts = ingest::read_odgt(&args.gt)?;
    let preds = ingest::read_predictions(&args.pred)?;
    let images = align(&gts, &preds, args.allow_missing)?;
    let report = metrics::evaluate(&images, &cfg)?;

    let has_visible = gts.iter().flat_map(|r| &r.gts).any(|g| !g.visible_missing);
    let visible_report = if args.selector == BoxSelector::Full && has_visible {
        Some(metrics::evaluate(&images, &eval_config(args, BoxSelector::Visible)?)?)
    } else {
        None
    };

    let echo = config_echo(cmd);
    let c = report.counts;
    let mut text = String::new();
    text.push_str(&format!("# {echo}\n"));
    text.push_str(&format!("mr {}\n", report.mr));
    text.push_str(&format!("mr_clamped {}\n", report.mr_clamped));
    if let Some(v) = &visible_report {
        text.push_str(&format!("mr_v {}\n", v.mr));
    }
    text.push_str(&format!("ap {}\n", report.ap));
    text.push_str(&format!("recall {}\n", report.recall));
    text.push_str(&format!(
        "images {} gt {} det {} tp {} fp {}\n",
        c.num_images, c.num_gt, c.num_det, c.num_tp, c.num_fp
    ));
    print!("{text}");

    if let Some(dir) = &args.curves {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        write_curve_file(dir, "fppi_mr.txt", &echo, &report.fppi_curve)?;
        write_curve_file(dir, "recall_precision.txt", &echo, &report.pr_curve)?;
        if let Some(v) = &visible_report {
            write_curve_file(dir, "fppi_mr_visible.txt", &echo, &v.fppi_curve)?;
        }
    }
    Ok(())
}

fn scene_spec(args: &SimulateArgs) -> CrowdSceneSpec {
    let mut spec = match args.preset {
        Preset::Default => CrowdSceneSpec::default(),
        Preset::Crowded => CrowdSceneSpec::crowded(args.seed),
        Preset::Sparse => CrowdSceneSpec::sparse(args.seed),
    };
    spec.seed = args.seed;
    if let Some(n) = args.people {
        spec.num_people = n;
        if let Layout::Queue { rows, .. } = &mut spec.layout {
            *rows = (*rows).min(n.max(1));
        }
    }
    spec
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn cmd_simulate(cmd: &Command, args: &SimulateArgs) -> Result<(), CliError> {
    let echo = config_echo(cmd);
    if args.oracle {
        let images: Vec<Vec<_>> = match &args.from_odgt {
            Some(path) => ingest::read_odgt(path)?.iter().map(ImageRecord::person_gts).collect(),
            None => generate_scenes(&scene_spec(args), args.scenes)?
                .into_iter()
                .map(|s| s.gts)
                .collect(),
        };
        let mut table = format!("# {echo}\nmethod threshold seed total kept fraction\n");
        for seed in args.seed..args.seed + args.shuffle_seeds.max(1) {
            let rows = oracle_sweep(&images, &args.methods, &args.thresholds, &NmsConfig::default(), seed)?;
            for r in rows {
                table.push_str(&format!(
                    "{} {} {} {} {} {:.6}\n",
                    r.method,
                    r.threshold,
                    r.seed,
                    r.total,
                    r.kept,
                    r.fraction()
                ));
            }
        }
        print!("{table}");
        if let Some(path) = &args.table_out {
            write_text(path, &table)?;
        }
        return Ok(());
    }

    if args.gt_out.is_none() && args.pred_out.is_none() {
        return Err(CliError::Usage(
            "simulate needs --gt-out and/or --pred-out, or --oracle".into(),
        ));
    }
    let scenes = generate_scenes(&scene_spec(args), args.scenes)?;
    let noise = NoiseModel {
        center_jitter: args.center_jitter,
        size_jitter: args.size_jitter,
        duplicates_per_gt: args.duplicates,
        fp_per_image: args.fp_per_image,
        seed: args.noise_seed,
        ..NoiseModel::default()
    };
    let mut gt_records = Vec::with_capacity(scenes.len());
    let mut pred_records = Vec::with_capacity(scenes.len());
    for (k, scene) in scenes.iter().enumerate() {
        let id = format!("synth-{k:05}");
        let dets = simulate_detector(
            scene,
            &NoiseModel {
                seed: noise.seed.wrapping_add(k as u64),
                ..noise
            },
        )?;
        gt_records.push(ImageRecord::new(id.clone()).with_gts(scene.gts.clone()));
        pred_records.push(ImageRecord::new(id).with_dets(dets));
    }
    if let Some(path) = &args.gt_out {
        ingest::write_odgt(path, &gt_records, Some(&echo))?;
    }
    if let Some(path) = &args.pred_out {
        ingest::write_predictions(path, &pred_records, Some(&echo))?;
    }
    let people: usize = scenes.iter().map(|s| s.gts.len()).sum();
    let dets: usize = pred_records.iter().map(|r| r.dets.len()).sum();
    println!("# {echo}");
    println!("scenes {} people {people} detections {dets}", scenes.len());
    Ok(())
}

/// `n` random paired boxes in a 1000x1000 image.
pub fn bench_detections(n: usize, seed: u64) -> Vec<Detection> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n as u64)
        .map(|id| {
            let h: f64 = rng.random_range(40.0..200.0);
            let w = h * 0.41;
            let x: f64 = rng.random_range(0.0..1000.0 - w);
            let y: f64 = rng.random_range(0.0..1000.0 - h);
            let full = BBox::new(x, y, x + w, y + h).expect("bench box");
            let shown: f64 = rng.random_range(0.2..1.0);
            let visible = BBox::new(x, y, x + w, y + h * shown).expect("bench box");
            Detection::new(id, PairedBox::new(full, visible), rng.random_range(0.0..1.0))
        })
        .collect()
}

fn cmd_bench(cmd: &Command, args: &BenchArgs) -> Result<(), CliError> {
    println!("# {}", config_echo(cmd));
    println!("method n repeats median_us kept");
    for &n in &args.sizes {
        let dets = bench_detections(n, args.seed);
        for &method in &args.methods {
            let cfg = NmsConfig::new(method, 0.5);
            let densities: HashMap<u64, f64> = dets.iter().map(|d| (d.id, 0.5)).collect();
            let mut times = Vec::with_capacity(args.repeats.max(1));
            let mut kept = 0;
            for _ in 0..args.repeats.max(1) {
                let start = Instant::now();
                let outcome = suppress(&dets, &cfg, Some(&densities))
                    .map_err(|e| CliError::Data(e.to_string()))?;
                times.push(start.elapsed().as_secs_f64() * 1e6);
                kept = outcome.kept_count();
            }
            times.sort_by(f64::total_cmp);
            println!("{method} {n} {} {:.3} {kept}", times.len(), times[times.len() / 2]);
        }
    }
    Ok(())
}
