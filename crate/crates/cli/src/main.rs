//! `startle`: command-line front end for the detection pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use startle_core::config::PipelineConfig;
use startle_core::eval::ApVariant;
use startle_core::{pipeline, synth, Error};

#[derive(Parser)]
#[command(name = "startle", version, about = "Startle behavior detection for tracked fish")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "STARTLE_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Seed for the synthetic scenario or for training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        n_clips: Option<usize>,
        /// Also render grayscale frames.
        #[arg(long)]
        frames: bool,
    },
    /// Cut a raw detection stream into clips and drop clips without motion.
    Gate {
        #[arg(long)]
        detections: PathBuf,
        /// Directory of frame_NNNNNN.pgm files. Gating is skipped without it.
        #[arg(long)]
        frames: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Link detections into tracks.
    Track(DataArgs),
    /// Compute per-frame features for every track.
    Featurize(DataArgs),
    /// Train the classifier on labelled tracks.
    Train {
        #[arg(long)]
        work: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score tracks and clips.
    Classify {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Decision threshold; defaults to the one stored in the model.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Average precision, BCE and recall at track and clip level.
    Eval {
        #[arg(long)]
        work: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        /// `step` or `interpolated`.
        #[arg(long)]
        ap_variant: Option<String>,
        /// Also write the precision-recall curve.
        #[arg(long)]
        pr_curve: bool,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    work: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io { .. } => 3,
        Error::MissingArtifact(_) => 4,
        Error::Parse { .. } | Error::Validation(_) | Error::Shape(_) | Error::ModelFormat(_) => 5,
    }
}

fn pick(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf, Error> {
    flag.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("no {name} path: pass --{name} or set paths.{name}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    let jobs = cli.jobs;
    let paths = cfg.paths.clone();
    let dataset = |d: &DataArgs| pick(d.dataset.clone(), &paths.dataset, "dataset");
    let work = |w: &Option<PathBuf>| pick(w.clone(), &paths.work, "work");
    match cli.command {
        Command::Synth { out, n_clips, frames } => {
            let out = pick(out, &paths.dataset, "out")?;
            if let Some(s) = cli.seed {
                cfg.synth.seed = s;
            }
            if let Some(n) = n_clips {
                cfg.synth.n_clips = n;
            }
            cfg.synth.validate()?;
            let data = synth::generate(&cfg.synth)?;
            pipeline::write_synthetic(&data, &out, frames, jobs)?;
            let positives = data.clips.iter().filter(|c| c.label()).count();
            println!("clips = {}\nstartle_clips = {positives}\nout = {}", data.clips.len(), out.display());
        }
        Command::Gate { detections, frames, out } => {
            let out = pick(out, &paths.dataset, "out")?;
            let s = pipeline::gate_stream(&detections, frames.as_deref(), &out, &cfg, jobs)?;
            if !s.gated {
                eprintln!("warning: no frames supplied, motion gating skipped");
            }
            println!("windows = {}\nkept = {}", s.windows, s.kept);
        }
        Command::Track(d) => {
            let s = pipeline::track_dataset(&dataset(&d)?, &work(&d.work)?, &cfg, jobs)?;
            println!("clips = {}\ntracks = {}\nlabelled = {}", s.clips, s.tracks, s.labelled);
        }
        Command::Featurize(d) => {
            let n = pipeline::featurize_dataset(&dataset(&d)?, &work(&d.work)?, &cfg, jobs)?;
            println!("tracks = {n}");
        }
        Command::Train { work: w, model, epochs } => {
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.classifier.epochs = e;
            }
            let model = pick(model, &paths.model, "model")?;
            let report = pipeline::train_model(&work(&w)?, &model, &cfg)?;
            let last = report.epoch_losses.last().copied().unwrap_or(f64::NAN);
            println!("epochs = {}\nfinal_loss = {last}\nmodel = {}", report.epoch_losses.len(), model.display());
        }
        Command::Classify { data, model, threshold } => {
            let model = pick(model, &paths.model, "model")?;
            let s = pipeline::classify_dataset(&dataset(&data)?, &work(&data.work)?, &model, threshold, jobs)?;
            println!(
                "threshold = {}\ntracks = {}\nstartle_tracks = {}\nclips = {}\nstartle_clips = {}",
                s.threshold, s.tracks, s.startle_tracks, s.clips, s.startle_clips
            );
        }
        Command::Eval { work: w, report, threshold, ap_variant, pr_curve } => {
            let report = pick(report, &paths.report, "report")?;
            let threshold = threshold.unwrap_or(cfg.threshold);
            if !(threshold > 0.0 && threshold < 1.0) {
                return Err(Error::Config(format!("threshold {threshold} outside (0, 1)")));
            }
            let variant = match ap_variant {
                Some(v) => ApVariant::parse(&v).map_err(|e| Error::Config(e.to_string()))?,
                None => cfg.ap_variant()?,
            };
            let r = pipeline::evaluate_work(&work(&w)?, &report, threshold, variant, pr_curve)?;
            print!("{}", r.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

