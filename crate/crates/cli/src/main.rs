use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};
use shiftwatch::pipeline::{self, check_model_fits, Stream};
use shiftwatch::RunConfig;
use shiftwatch_core::icad::{read_calibration, write_calibration, CalibrationTable};
use shiftwatch_core::lrp::relevance_map;
use shiftwatch_core::scenario::{read_episode, write_episode, SceneConfig, ShiftKind};
use shiftwatch_core::vae::{read_model, write_model, VaeRegressionModel};

/// Dataset-shift detection for a synthetic emergency-braking perception task.
#[derive(Parser)]
#[command(name = "shiftwatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DetectorFlags {
    /// Score with the plain reconstruction error instead of LRP weighting.
    #[arg(long)]
    no_lrp: bool,
    /// Reconstructions per frame.
    #[arg(long)]
    n: Option<usize>,
    /// CUSUM drift.
    #[arg(long)]
    delta: Option<f64>,
    /// Alarm threshold.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate data, train the VAE-for-regression model and write it.
    Train {
        #[command(flatten)]
        common: Common,
        /// Shift the model will be evaluated under; `target` drops the excluded band from training.
        #[arg(long, default_value = "nominal", value_parser = parse_shift)]
        shift: ShiftKind,
    },
    /// Score the calibration split and write the sorted table.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Must match the shift used for `train`.
        #[arg(long, default_value = "nominal", value_parser = parse_shift)]
        shift: ShiftKind,
        #[arg(long)]
        no_lrp: bool,
    },
    /// Run the detector over one episode and write a per-frame CSV trace.
    ///
    /// Exit status: 0 no alarm, 2 alarm, 1 error.
    Detect {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        /// Generate the episode with this shift.
        #[arg(long, value_parser = parse_shift, conflicts_with = "episode")]
        shift: Option<ShiftKind>,
        /// Read the episode from a JSON header (frames in the sibling CSV).
        #[arg(long)]
        episode: Option<PathBuf>,
        /// Episode index when generating.
        #[arg(long, default_value_t = 0)]
        index: u32,
        #[command(flatten)]
        detector: DetectorFlags,
    },
    /// Run nominal and shifted episodes and write a JSON report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        calibration: PathBuf,
        #[arg(long, default_value = "covariate", value_parser = parse_shift)]
        shift: ShiftKind,
        #[arg(long, default_value_t = 50)]
        episodes: u32,
        #[command(flatten)]
        detector: DetectorFlags,
    },
    /// Generate one episode and write it as JSON header plus CSV frames.
    Episode {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "nominal", value_parser = parse_shift)]
        shift: ShiftKind,
        #[arg(long, default_value_t = 0)]
        index: u32,
    },
    /// Write the relevance map of a rendered frame as a CSV grid.
    Relevance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        distance: f64,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
}

fn parse_shift(name: &str) -> Result<ShiftKind, String> {
    ShiftKind::from_name(name).ok_or_else(|| format!("unknown shift '{name}', expected nominal, covariate, target or concept"))
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let config = RunConfig::load_or_default(common.config.as_deref())?.with_seed(common.seed);
    config.validate()?;
    Ok(config)
}

fn apply_detector_flags(config: &mut RunConfig, flags: &DetectorFlags) {
    let d = &mut config.detector;
    if flags.no_lrp {
        d.use_lrp = false;
    }
    if let Some(n) = flags.n {
        d.samples = n;
    }
    if let Some(delta) = flags.delta {
        d.delta = delta;
    }
    if let Some(tau) = flags.tau {
        d.tau = tau;
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(file))
}

fn load_model(path: &Path) -> Result<VaeRegressionModel> {
    read_model(open(path)?).with_context(|| format!("loading model {}", path.display()))
}

fn load_table(path: &Path) -> Result<CalibrationTable> {
    read_calibration(open(path)?).with_context(|| format!("loading calibration {}", path.display()))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train { common, shift } => {
            let config = load_config(&common)?;
            let data = pipeline::dataset(&config, &shift)?;
            let trained = pipeline::train_model(&config, &data)?;
            write_model(&trained.model, create(&common.out)?)?;
            println!(
                "trained on {} frames, {} epochs; held-out MAE {:.3} m over {} frames",
                data.proper.len(),
                config.training.epochs,
                trained.held_out_mae,
                data.calibration.len()
            );
        }
        Command::Calibrate {
            common,
            model,
            shift,
            no_lrp,
        } => {
            let config = load_config(&common)?;
            let model = load_model(&model)?;
            let data = pipeline::dataset(&config, &shift)?;
            let table = pipeline::calibrate_model(&config, &model, &data, !no_lrp)?;
            write_calibration(&table, create(&common.out)?)?;
            println!("calibrated {} scores (use_lrp = {})", table.count(), table.use_lrp());
        }
        Command::Detect {
            common,
            model,
            calibration,
            shift,
            episode,
            index,
            detector,
        } => {
            let mut config = load_config(&common)?;
            apply_detector_flags(&mut config, &detector);
            config.detector.validate()?;
            let model = load_model(&model)?;
            let table = load_table(&calibration)?;
            let episode = match (episode, shift) {
                (Some(path), _) => read_episode(&path).with_context(|| format!("loading episode {}", path.display()))?,
                (None, Some(kind)) => pipeline::episode(&config, &kind, index)?,
                (None, None) => return Err(anyhow!("pass --shift or --episode")),
            };
            let scene = SceneConfig {
                height: episode.height,
                width: episode.width,
                channels: episode.channels,
                ..config.scene.clone()
            };
            check_model_fits(&model, &scene)?;
            let run = pipeline::detect_episode(&config, &model, &table, &episode, index)?;
            let mut out = create(&common.out)?;
            pipeline::write_trace(&mut out, &episode, &run)?;
            out.flush()?;
            match run.first_alarm {
                Some(t) => {
                    println!("alarm at frame {t} of {} (distance {:.2} m)", episode.frames.len(), episode.frames[t].distance);
                    return Ok(ExitCode::from(2));
                }
                None => println!("no alarm over {} frames", episode.frames.len()),
            }
        }
        Command::Eval {
            common,
            model,
            calibration,
            shift,
            episodes,
            detector,
        } => {
            let mut config = load_config(&common)?;
            apply_detector_flags(&mut config, &detector);
            config.detector.validate()?;
            let model = load_model(&model)?;
            let table = load_table(&calibration)?;
            let report = pipeline::evaluate(&config, &model, &table, &shift, episodes)?;
            let mut out = create(&common.out)?;
            serde_json::to_writer_pretty(&mut out, &report)?;
            writeln!(out)?;
            out.flush()?;
            let show = |v: Option<usize>| v.map_or_else(|| "n/a".to_string(), |v| format!("{v}/{episodes}"));
            println!(
                "{}: false positives {}, false negatives {}, median step {:.3} ms",
                report.shift,
                show(report.false_positives),
                show(report.false_negatives),
                report.timing_ms.median
            );
        }
        Command::Episode { common, shift, index } => {
            let config = load_config(&common)?;
            let episode = pipeline::episode(&config, &shift, index)?;
            write_episode(&common.out, &episode)?;
            println!("wrote {} frames (d0 {:.2} m, v0 {:.2} m/s)", episode.frames.len(), episode.d0, episode.v0);
        }
        Command::Relevance {
            common,
            model,
            distance,
            noise,
        } => {
            let config = load_config(&common)?;
            let model = load_model(&model)?;
            check_model_fits(&model, &config.scene)?;
            let mut rng = pipeline::stream_rng(config.seed, Stream::Dataset);
            let frame = config.scene.render_frame(distance, noise, config.scene.obstacle_scale, &mut rng)?;
            let map = relevance_map(&model, &frame.image)?;
            let mut out = create(&common.out)?;
            out.write_all(map.to_csv().as_bytes())?;
            out.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
