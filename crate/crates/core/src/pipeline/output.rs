use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};

use super::{FrameResult, Pipeline, PipelineConfig, StageTimings};
use crate::dataset::{mask_file_name, Frame, Sequence};
use crate::evaluation::{evaluate, MetricsReport, Trajectory};
use crate::segmentation::DynamicMask;
use crate::{Error, Result};

pub const TIMINGS_HEADER: &str = "timestamp,superpixels_ms,pose_init_ms,segmentation_ms,refinement_ms,total_ms";

#[derive(Clone, Debug)]
pub struct RunSummary {
    /// Camera-to-world poses, as written to `trajectory.txt`.
    pub trajectory: Trajectory,
    pub failed_frames: Vec<usize>,
    pub timings: Vec<(f64, StageTimings)>,
    pub model_counts: BTreeMap<&'static str, usize>,
    pub metrics: Option<MetricsReport>,
    /// Why metrics are missing although ground truth exists.
    pub metrics_error: Option<String>,
}

impl RunSummary {
    pub fn frame_count(&self) -> usize {
        self.trajectory.len()
    }

    pub fn median_total_ms(&self) -> f64 {
        let mut t: Vec<f64> = self.timings.iter().map(|(_, s)| s.total).collect();
        if t.is_empty() {
            return 0.0;
        }
        t.sort_by(f64::total_cmp);
        let n = t.len();
        if n % 2 == 1 {
            t[n / 2]
        } else {
            0.5 * (t[n / 2 - 1] + t[n / 2])
        }
    }

    pub fn timings_csv(&self) -> String {
        let mut s = format!("{TIMINGS_HEADER}\n");
        for (ts, t) in &self.timings {
            let _ = writeln!(
                s,
                "{ts:.6},{:.3},{:.3},{:.3},{:.3},{:.3}",
                t.superpixels, t.pose_init, t.segmentation, t.refinement, t.total
            );
        }
        s
    }

    pub fn report(&self, config: &PipelineConfig) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frames = {}", self.frame_count());
        let _ = writeln!(s, "strategy = {}", config.strategy.name());
        let failed: Vec<String> = self.failed_frames.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(s, "failed_frame_count = {}", self.failed_frames.len());
        let _ = writeln!(s, "failed_frames = {}", failed.join(","));
        for (name, n) in &self.model_counts {
            let _ = writeln!(s, "model_{name} = {n}");
        }
        let _ = writeln!(s, "median_frame_ms = {:.3}", self.median_total_ms());
        if let Some(m) = &self.metrics {
            s.push_str(&m.to_key_values());
        }
        if let Some(e) = &self.metrics_error {
            let _ = writeln!(s, "metrics_error = {e}");
        }
        s
    }
}

pub fn write_mask_png(mask: &DynamicMask, path: &Path) -> Result<()> {
    mask.to_gray().save(path).map_err(|e| Error::image(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs the pipeline over a dataset directory and writes `trajectory.txt`,
/// `masks/`, `timings.csv` and `report.txt` into `out_dir`.
pub fn run_pipeline(
    dataset_dir: &Path,
    mask_dir: Option<&Path>,
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<RunSummary> {
    let seq = Sequence::open(dataset_dir, config.intrinsics, mask_dir, config.max_time_diff)?;
    if seq.is_empty() {
        return Err(Error::NoEntries("associated rgb/depth"));
    }
    let masks_dir = out_dir.join("masks");
    std::fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;
    let mut pipeline = Pipeline::new(*config)?;
    let mut samples = Vec::with_capacity(seq.len());
    let mut summary = RunSummary {
        trajectory: Trajectory::default(),
        failed_frames: Vec::new(),
        timings: Vec::with_capacity(seq.len()),
        model_counts: BTreeMap::new(),
        metrics: None,
        metrics_error: None,
    };
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    let frames: Box<dyn Iterator<Item = Result<Frame>>> = if config.prefetch == 0 || cpus == 1 {
        Box::new((0..seq.len()).map(|i| seq.load_frame(i)))
    } else {
        Box::new(seq.prefetch(config.prefetch))
    };
    for frame in frames {
        let frame = frame?;
        let r: FrameResult = pipeline.process(&frame)?;
        for w in &r.warnings {
            warn!("frame {}: {w}", r.index);
        }
        if r.failed {
            summary.failed_frames.push(r.index);
        }
        *summary.model_counts.entry(r.model.name()).or_insert(0) += 1;
        write_mask_png(&r.mask, &masks_dir.join(mask_file_name(r.timestamp)))?;
        summary.timings.push((r.timestamp, r.timings));
        samples.push((r.timestamp, r.pose.inverse()));
    }
    summary.trajectory = Trajectory::new(samples)?;
    summary.trajectory.write_tum(&out_dir.join("trajectory.txt"))?;
    write(&out_dir.join("timings.csv"), &summary.timings_csv())?;
    if let Some(gt) = &seq.groundtruth {
        match evaluate(&summary.trajectory, gt, config.rpe_delta) {
            Ok(m) => summary.metrics = Some(m),
            Err(e) => summary.metrics_error = Some(e.to_string()),
        }
    }
    write(&out_dir.join("report.txt"), &summary.report(config))?;
    info!(
        "processed {} frames, {} failed, median {:.1} ms/frame",
        summary.frame_count(),
        summary.failed_frames.len(),
        summary.median_total_ms()
    );
    Ok(summary)
}
