use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::info;

use dynvo::dataset::Sequence;
use dynvo::evaluation::{evaluate, Trajectory};
use dynvo::grid::Grid;
use dynvo::pipeline::{run_pipeline, write_mask_png, Pipeline, PipelineConfig, Strategy};
use dynvo::synth::{generate_to_dir, SceneSpec};
use dynvo::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PIPELINE: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "dynvo", version, about = "Dynamic-region removal front-end for RGB-D odometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Track a whole sequence and write trajectory, masks, timings and a report.
    Run {
        #[arg(long)]
        dataset: PathBuf,
        /// Directory of prior instance masks named `<timestamp>.png`.
        #[arg(long)]
        masks: Option<PathBuf>,
        /// Pipeline config; defaults to `<dataset>/pipeline.cfg` when present.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Segment only on keyframes.
        #[arg(long)]
        only_keyframes: bool,
    },
    /// Dump superpixel, cluster and fused-mask images for one frame.
    Segment {
        #[arg(long)]
        dataset: PathBuf,
        /// Frame index in the associated sequence.
        #[arg(long)]
        frame: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        masks: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Compare an estimated trajectory with ground truth (both TUM format).
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// RPE step in seconds.
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
    },
    /// Render a synthetic sequence from a TOML scene description.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::InvalidArgument(_)) {
                ExitCode::from(EXIT_USAGE)
            } else if e.is_data_error() {
                ExitCode::from(EXIT_DATA)
            } else {
                ExitCode::from(EXIT_PIPELINE)
            }
        }
    }
}

fn load_config(dataset: &Path, config: Option<&Path>) -> dynvo::Result<PipelineConfig> {
    match config {
        Some(p) => PipelineConfig::load(p),
        None => {
            let p = dataset.join("pipeline.cfg");
            if p.is_file() {
                PipelineConfig::load(&p)
            } else {
                Ok(PipelineConfig::default())
            }
        }
    }
}

fn dispatch(command: Command) -> dynvo::Result<()> {
    match command {
        Command::Run {
            dataset,
            masks,
            config,
            out,
            only_keyframes,
        } => {
            let mut cfg = load_config(&dataset, config.as_deref())?;
            if only_keyframes {
                cfg.strategy = Strategy::OnlyKeyframes;
            }
            std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
            let summary = run_pipeline(&dataset, masks.as_deref(), &cfg, &out)?;
            print!("{}", summary.report(&cfg));
            Ok(())
        }
        Command::Segment {
            dataset,
            frame,
            out,
            masks,
            config,
        } => segment(&dataset, frame, &out, masks.as_deref(), config.as_deref()),
        Command::Evaluate { est, gt, delta } => {
            let est = Trajectory::read_tum(&est)?;
            let gt = Trajectory::read_tum(&gt)?;
            print!("{}", evaluate(&est, &gt, delta)?.to_key_values());
            Ok(())
        }
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| Error::io(&spec, e))?;
            let spec = SceneSpec::from_toml(&text)?;
            let seq = generate_to_dir(&spec, &out)?;
            info!("wrote {} frames to {}", seq.frames.len(), out.display());
            Ok(())
        }
    }
}

/// Runs the pipeline on the frame before `index` and on `index` itself so the
/// geometric stage has a previous frame, then dumps the debug images.
fn segment(dataset: &Path, index: usize, out: &Path, masks: Option<&Path>, config: Option<&Path>) -> dynvo::Result<()> {
    let cfg = load_config(dataset, config)?;
    let seq = Sequence::open(dataset, cfg.intrinsics, masks, cfg.max_time_diff)?;
    if index >= seq.len() {
        return Err(Error::InvalidArgument(format!(
            "frame {index} out of range, sequence has {} frames",
            seq.len()
        )));
    }
    let mut pipeline = Pipeline::new(cfg)?.keep_debug(true);
    let mut result = None;
    for i in index.saturating_sub(1)..=index {
        result = Some(pipeline.process(&seq.load_frame(i)?)?);
    }
    let result = result.expect("at least one frame processed");
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let debug = result.debug.as_ref().expect("debug output requested");

    let labels = &debug.superpixels.labels;
    let (w, h) = labels.dims();
    let sp: Vec<u16> = labels.data().iter().map(|&l| l.min(u16::MAX as u32) as u16).collect();
    let path = out.join("superpixels.png");
    image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, sp)
        .expect("buffer size matches")
        .save(&path)
        .map_err(|e| Error::image(&path, e))?;

    let clusters: Grid<u8> = debug.cluster_map.map(|&c| c.min(255) as u8);
    let path = out.join("clusters.png");
    image::GrayImage::from_raw(w as u32, h as u32, clusters.data().to_vec())
        .expect("buffer size matches")
        .save(&path)
        .map_err(|e| Error::image(&path, e))?;

    write_mask_png(&result.mask, &out.join("mask.png"))?;
    println!("frame = {index}");
    println!("timestamp = {:.6}", result.timestamp);
    println!("superpixels = {}", debug.superpixels.superpixels.len());
    println!("clusters = {}", debug.assignment.m_clusters());
    println!("dynamic_clusters = {:?}", result.dynamic_clusters);
    Ok(())
}
