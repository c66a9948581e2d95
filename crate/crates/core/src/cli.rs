//! Command-line front end.
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::Error;
use crate::gradsuite;
use crate::metrics::{self, Scored};
use crate::model::{LocalizationMap, Model, ModelConfig};
use crate::pipeline::checkpoint::load_checkpoint_as;
use crate::pipeline::config::{parse_combined, parse_dims, TrainConfig};
use crate::pipeline::train::train;
use crate::synth::{self, generate_videos, write_dataset};
use crate::tensor::Real;
use crate::video::{self, Mask};

#[derive(Debug, Parser)]
#[command(name = "scfnet", version, about = "Video splicing localization")]
pub struct Cli {
    /// Seed for data generation, initialisation and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Floating point precision of the numeric core.
    #[arg(long, global = true, default_value = "32", value_parser = parse_precision)]
    pub precision: u8,
    /// Key-value file with model and/or training keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural spliced-video dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        videos: usize,
        #[arg(long, default_value_t = 10)]
        frames: usize,
        /// Frame size as HxW.
        #[arg(long, default_value = "64x64", value_parser = parse_size)]
        size: (usize, usize),
    },
    /// Train a model and write its final checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model_config: Option<PathBuf>,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Write per-frame probability maps for one video.
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        /// Directory of frame PNGs (or a dataset video directory holding
        /// `frames/`).
        #[arg(long)]
        video: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write exact little-endian f32 maps next to the PNGs.
        #[arg(long)]
        raw: bool,
    },
    /// Score predicted maps against ground-truth masks.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Also report the per-video best threshold.
        #[arg(long)]
        best_threshold: bool,
        /// Write the per-video CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint across degradation quality levels.
    Sweep {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,15,23,30")]
        qualities: Vec<u8>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the finite-difference gradient suite.
    Gradcheck,
}

fn parse_precision(s: &str) -> Result<u8, String> {
    match s {
        "32" => Ok(32),
        "64" => Ok(64),
        _ => Err(format!("precision must be 32 or 64, got `{s}`")),
    }
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    parse_dims(s).filter(|&(h, w)| h > 0 && w > 0).ok_or_else(|| format!("expected HxW such as 64x64, got `{s}`"))
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Invalid(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Invalid(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Parses `args` (including the program name) and runs the command.
/// Output goes to stdout/stderr; the return value is the exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            2
        }
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            1
        }
    }
}

fn require_dir(flag: &str, p: &Path) -> CliResult<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{flag}: `{}` is not a directory", p.display())))
    }
}

fn require_file(flag: &str, p: &Path) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{flag}: `{}` does not exist", p.display())))
    }
}

fn read_text(flag: &str, p: &Path) -> CliResult<String> {
    require_file(flag, p)?;
    fs::read_to_string(p).map_err(|e| Failure::Invalid(format!("{}: {e}", p.display())))
}

fn print_resolved(cli: &Cli, name: &str, body: &str) {
    let mut s = String::from("# resolved configuration\n");
    let _ = writeln!(s, "command = {name}");
    let _ = writeln!(s, "seed = {}", cli.seed.map_or("default".to_string(), |v| v.to_string()));
    let _ = writeln!(s, "precision = {}", cli.precision);
    if let Some(c) = &cli.config {
        let _ = writeln!(s, "config = {}", c.display());
    }
    s.push_str(body);
    println!("{}", s.trim_end());
}

/// Model and training configs from defaults, `--config`, then the
/// per-kind files, then `--seed`.
fn resolve_configs(
    cli: &Cli,
    model_file: Option<&Path>,
    train_file: Option<&Path>,
) -> CliResult<(ModelConfig, TrainConfig)> {
    let mut m = ModelConfig::desk();
    let mut t = TrainConfig::desk();
    if let Some(p) = &cli.config {
        parse_combined(&read_text("--config", p)?, &mut m, &mut t)?;
    }
    if let Some(p) = model_file {
        let text = read_text("--model-config", p)?;
        let mut base = m.clone();
        for (line, k, v) in crate::pipeline::config::pairs(&text)? {
            if !base.apply(k, v)? {
                return Err(Failure::Invalid(format!("{}:{line}: unknown model key `{k}`", p.display())));
            }
        }
        m = base;
    }
    if let Some(p) = train_file {
        let text = read_text("--train-config", p)?;
        for (line, k, v) in crate::pipeline::config::pairs(&text)? {
            if !t.apply(k, v)? {
                return Err(Failure::Invalid(format!("{}:{line}: unknown training key `{k}`", p.display())));
            }
        }
    }
    if let Some(s) = cli.seed {
        t.seed = s;
    }
    m.validate()?;
    t.validate()?;
    Ok((m, t))
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth { out, videos, frames, size } => {
            let seed = cli.seed.unwrap_or(0);
            print_resolved(
                cli,
                "synth",
                &format!(
                    "out = {}\nvideos = {videos}\nframes = {frames}\nsize = {}x{}\n",
                    out.display(),
                    size.0,
                    size.1
                ),
            );
            if *frames < 3 {
                return Err(Failure::Usage(format!("--frames: need at least 3, got {frames}")));
            }
            let vids = generate_videos::<f32>(*videos, *frames, size.0, size.1, seed)?;
            let manifest = write_dataset(&vids, out)?;
            println!("wrote {} videos to {}", manifest.entries.len(), out.display());
            Ok(())
        }
        Command::Train { data, model_config, train_config, out, resume } => {
            require_dir("--data", data)?;
            if let Some(r) = resume {
                require_file("--resume", r)?;
            }
            let (m, t) = resolve_configs(cli, model_config.as_deref(), train_config.as_deref())?;
            print_resolved(
                cli,
                "train",
                &format!("data = {}\nout = {}\n{}{}", data.display(), out.display(), m.to_text(), t.to_text()),
            );
            match cli.precision {
                64 => train_cmd::<f64>(&m, &t, data, out, resume.as_deref()),
                _ => train_cmd::<f32>(&m, &t, data, out, resume.as_deref()),
            }
        }
        Command::Infer { ckpt, video, out, raw } => {
            require_file("--ckpt", ckpt)?;
            require_dir("--video", video)?;
            print_resolved(
                cli,
                "infer",
                &format!(
                    "ckpt = {}\nvideo = {}\nout = {}\nraw = {raw}\n",
                    ckpt.display(),
                    video.display(),
                    out.display()
                ),
            );
            match cli.precision {
                64 => infer_cmd::<f64>(ckpt, video, out, *raw),
                _ => infer_cmd::<f32>(ckpt, video, out, *raw),
            }
        }
        Command::Eval { pred, gt, best_threshold, out } => {
            require_dir("--pred", pred)?;
            require_dir("--gt", gt)?;
            print_resolved(
                cli,
                "eval",
                &format!("pred = {}\ngt = {}\nbest_threshold = {best_threshold}\n", pred.display(), gt.display()),
            );
            eval_cmd(pred, gt, *best_threshold, out.as_deref())
        }
        Command::Sweep { ckpt, data, qualities, out } => {
            require_file("--ckpt", ckpt)?;
            require_dir("--data", data)?;
            let qs: Vec<String> = qualities.iter().map(|q| q.to_string()).collect();
            print_resolved(
                cli,
                "sweep",
                &format!("ckpt = {}\ndata = {}\nqualities = {}\n", ckpt.display(), data.display(), qs.join(",")),
            );
            match cli.precision {
                64 => sweep_cmd::<f64>(ckpt, data, qualities, out.as_deref()),
                _ => sweep_cmd::<f32>(ckpt, data, qualities, out.as_deref()),
            }
        }
        Command::Gradcheck => {
            let seed = cli.seed.unwrap_or(0);
            print_resolved(
                cli,
                "gradcheck",
                &format!("eps = {:e}\ntolerance = {:e}\n", gradsuite::EPS, gradsuite::TOLERANCE),
            );
            let mut worst: f64 = 0.0;
            let mut failed = Vec::new();
            for e in gradsuite::run_suite(seed)? {
                let ok = e.result.passes(gradsuite::TOLERANCE);
                println!(
                    "{:<26} max rel error {:.3e} ({} coords) {}",
                    e.name,
                    e.result.max_rel_error,
                    e.result.coordinates,
                    if ok { "ok" } else { "FAIL" }
                );
                worst = worst.max(e.result.max_rel_error);
                if !ok {
                    failed.push(e.name);
                }
            }
            println!("worst {worst:.3e}");
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Invalid(format!("gradient check failed: {}", failed.join(", "))))
            }
        }
    }
}

fn train_cmd<T: Real>(
    m: &ModelConfig,
    t: &TrainConfig,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> CliResult<()> {
    let resume = resume.map(load_checkpoint_as::<T>).transpose()?;
    let stem = out.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned());
    let run_dir = out.with_file_name(format!("{stem}_run"));
    let result = train::<T>(t, m, data, &run_dir, resume)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::Invalid(format!("{}: {e}", parent.display())))?;
    }
    fs::copy(&result.last_checkpoint, out).map_err(|e| Failure::Invalid(format!("{}: {e}", out.display())))?;
    let last = result.rows.last();
    println!(
        "trained {} epochs, {} steps; final loss {}; log {}; checkpoint {}",
        result.trainer.epoch,
        result.trainer.step,
        last.map_or("n/a".into(), |r| format!("{:.6}", r.loss)),
        result.log_path.display(),
        out.display()
    );
    Ok(())
}

fn sorted_pngs(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Failure::Invalid(format!("{}: {e}", dir.display())))?;
    let mut v: Vec<PathBuf> =
        rd.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.extension().is_some_and(|x| x == "png")).collect();
    v.sort();
    Ok(v)
}

fn infer_cmd<T: Real>(ckpt: &Path, video_dir: &Path, out: &Path, raw: bool) -> CliResult<()> {
    let model: Model<T> = load_checkpoint_as::<T>(ckpt)?.model();
    let frames_dir = if video_dir.join("frames").is_dir() { video_dir.join("frames") } else { video_dir.to_path_buf() };
    let paths = sorted_pngs(&frames_dir)?;
    if paths.is_empty() {
        return Err(Failure::Usage(format!("--video: no PNG frames in `{}`", frames_dir.display())));
    }
    let size = (model.cfg.input_h, model.cfg.input_w);
    let frames = paths.iter().map(|p| video::read_frame::<T>(p, Some(size))).collect::<crate::Result<Vec<_>>>()?;
    let maps = model.video_infer(&frames)?;
    fs::create_dir_all(out).map_err(|e| Failure::Invalid(format!("{}: {e}", out.display())))?;
    for (i, m) in maps.iter().enumerate() {
        video::write_prob_png(&out.join(format!("{i:05}.png")), m.h, m.w, &m.probs)?;
        if raw {
            video::write_prob_raw(&out.join(format!("{i:05}.f32")), &m.probs)?;
        }
    }
    println!("wrote {} maps to {}", maps.len(), out.display());
    Ok(())
}

/// Maps of one prediction directory; exact `.f32` sidecars win over PNGs.
fn read_pred_dir(dir: &Path) -> CliResult<Vec<LocalizationMap>> {
    sorted_pngs(dir)?
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (h, w, mut probs) = video::read_prob_png(p)?;
            let sidecar = p.with_extension("f32");
            if sidecar.is_file() {
                let exact = video::read_prob_raw(&sidecar)?;
                if exact.len() == probs.len() {
                    probs = exact;
                }
            }
            Ok(LocalizationMap { frame_index: i, h, w, probs })
        })
        .collect()
}

fn eval_cmd(pred: &Path, gt: &Path, best: bool, out: Option<&Path>) -> CliResult<()> {
    // Either a dataset root (manifest + <id>/masks, predictions in
    // <pred>/<id>) or a single video.
    let pairs: Vec<(String, PathBuf, PathBuf)> = if gt.join(synth::MANIFEST_FILE).is_file() {
        synth::DatasetManifest::read(gt)?
            .entries
            .into_iter()
            .map(|e| (e.id.clone(), pred.join(&e.id), gt.join(&e.id).join("masks")))
            .collect()
    } else {
        let masks = if gt.join("masks").is_dir() { gt.join("masks") } else { gt.to_path_buf() };
        let id = gt.file_name().map_or("video".into(), |s| s.to_string_lossy().into_owned());
        vec![(id, pred.to_path_buf(), masks)]
    };
    let mut loaded = Vec::with_capacity(pairs.len());
    for (id, pdir, gdir) in &pairs {
        if !pdir.is_dir() {
            return Err(Failure::Invalid(format!("no predictions for video `{id}` (expected {})", pdir.display())));
        }
        let maps = read_pred_dir(pdir)?;
        let gt_paths = sorted_pngs(gdir)?;
        if maps.len() != gt_paths.len() {
            return Err(Failure::Invalid(format!(
                "video `{id}`: {} predicted maps but {} ground-truth masks",
                maps.len(),
                gt_paths.len()
            )));
        }
        let gts = maps
            .iter()
            .zip(&gt_paths)
            .map(|(m, p)| video::read_mask(p, Some((m.h, m.w))))
            .collect::<crate::Result<Vec<Mask>>>()?;
        loaded.push((id.clone(), maps, gts));
    }
    let scored: Vec<Scored<'_>> = loaded.iter().map(|(id, maps, gts)| Scored { id, maps, gts }).collect();
    let report = metrics::evaluate(&scored, best)?;
    let mut csv = metrics::video_csv(&report.fixed);
    if let Some(b) = &report.best {
        csv.push_str(metrics::video_csv(b).split_once('\n').map_or("", |x| x.1));
    }
    print!("{csv}");
    let (iou, f1) = report.mean_fixed();
    println!("mean@{:.2}: iou {iou:.6} f1 {f1:.6}", metrics::FIXED_THRESHOLD);
    if let Some((iou, f1)) = report.mean_best() {
        println!("mean@best: iou {iou:.6} f1 {f1:.6}");
    }
    if let Some(o) = out {
        metrics::write_text(o, &csv)?;
    }
    Ok(())
}

fn sweep_cmd<T: Real>(ckpt: &Path, data: &Path, qualities: &[u8], out: Option<&Path>) -> CliResult<()> {
    let model: Model<T> = load_checkpoint_as::<T>(ckpt)?.model();
    let videos = synth::read_dataset::<T>(data, Some((model.cfg.input_h, model.cfg.input_w)))?;
    let rows = metrics::robustness_sweep(&model, &videos, qualities)?;
    let csv = metrics::quality_csv(&rows);
    print!("{csv}");
    if let Some(o) = out {
        metrics::write_text(o, &csv)?;
    }
    Ok(())
}
