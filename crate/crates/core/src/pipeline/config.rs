use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::DEFAULT_MAX_TIME_DIFF;
use crate::geometry::{CameraIntrinsics, RansacParams};
use crate::pose_init::PoseInitParams;
use crate::segmentation::SegmentationParams;
use crate::superpixel::{DepthTerm, KMeansParams, SlicParams};
use crate::tracking::TrackingParams;
use crate::{Error, Result};

/// Which frames run superpixel clustering and dynamic-region detection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Strategy {
    #[default]
    AllFrames,
    OnlyKeyframes,
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::AllFrames => "all_frames",
            Strategy::OnlyKeyframes => "only_keyframes",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all_frames" | "all" => Ok(Strategy::AllFrames),
            "only_keyframes" | "only_kf" => Ok(Strategy::OnlyKeyframes),
            _ => Err(Error::Config(format!("unknown strategy '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PipelineConfig {
    pub intrinsics: CameraIntrinsics,
    pub slic: SlicParams,
    pub kmeans: KMeansParams,
    pub tracking: TrackingParams,
    pub segmentation: SegmentationParams,
    pub fundamental: RansacParams,
    pub pose: PoseInitParams,
    pub strategy: Strategy,
    pub keyframe_interval: usize,
    /// Color/depth association tolerance in seconds.
    pub max_time_diff: f64,
    /// RPE window in seconds.
    pub rpe_delta: f64,
    /// Frames decoded on a background thread ahead of the one being
    /// processed. 0 loads each frame synchronously; so does a single-CPU
    /// machine, where the loader would only compete with the pipeline.
    pub prefetch: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            intrinsics: CameraIntrinsics::default(),
            slic: SlicParams::default(),
            kmeans: KMeansParams::default(),
            tracking: TrackingParams::default(),
            segmentation: SegmentationParams::default(),
            fundamental: RansacParams::default(),
            pose: PoseInitParams::default(),
            strategy: Strategy::AllFrames,
            keyframe_interval: 10,
            max_time_diff: DEFAULT_MAX_TIME_DIFF,
            rpe_delta: 1.0,
            prefetch: 2,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value '{value}' for '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("invalid value '{value}' for '{key}'"))),
    }
}

impl PipelineConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "fx" => self.intrinsics.fx = parse(key, v)?,
            "fy" => self.intrinsics.fy = parse(key, v)?,
            "cx" => self.intrinsics.cx = parse(key, v)?,
            "cy" => self.intrinsics.cy = parse(key, v)?,
            "depth_scale" => self.intrinsics.depth_scale = parse(key, v)?,
            "width" => self.intrinsics.width = parse(key, v)?,
            "height" => self.intrinsics.height = parse(key, v)?,

            "superpixel_size" => self.slic.grid_spacing = parse(key, v)?,
            "superpixel_iterations" => self.slic.iterations = parse(key, v)?,
            "color_norm" => self.slic.color_norm = parse(key, v)?,
            "depth_norm" => self.slic.depth_norm = parse(key, v)?,
            "literal_depth_term" => {
                self.slic.depth_term = if parse_bool(key, v)? { DepthTerm::Literal } else { DepthTerm::Difference }
            }
            "min_valid_depth_fraction" => self.slic.min_valid_depth_fraction = parse(key, v)?,

            "m_clusters" => self.kmeans.m_clusters = parse(key, v)?,
            "kmeans_iterations" => self.kmeans.max_iterations = parse(key, v)?,
            "cluster_depth_weight" => self.kmeans.depth_weight = parse(key, v)?,

            "max_corners" => self.tracking.max_corners = parse(key, v)?,
            "corner_quality" => self.tracking.quality_level = parse(key, v)?,
            "corner_min_distance" => self.tracking.min_distance = parse(key, v)?,
            "lk_levels" => self.tracking.lk.levels = parse(key, v)?,
            "lk_window" => self.tracking.lk.window = parse(key, v)?,
            "lk_iterations" => self.tracking.lk.max_iterations = parse(key, v)?,
            "lk_epsilon" => self.tracking.lk.epsilon = parse(key, v)?,
            "lk_min_eigenvalue" => self.tracking.lk.min_eigenvalue = parse(key, v)?,
            "fb_threshold" => self.tracking.fb_threshold = parse(key, v)?,

            "cluster_error_threshold" => self.segmentation.cluster_error_threshold = parse(key, v)?,
            "cauchy_c" => self.segmentation.cauchy_c = parse(key, v)?,
            "epipolar_threshold" => self.segmentation.epipolar_threshold = parse(key, v)?,
            "k_min" => self.segmentation.k_min = parse(key, v)?,
            "dilation_radius" => self.segmentation.dilation_radius = parse(key, v)?,
            "border_margin" => self.segmentation.border_margin = parse(key, v)?,
            "min_geometric_matches" => self.segmentation.min_geometric_matches = parse(key, v)?,
            "ring_samples" => self.segmentation.ring_samples = parse(key, v)?,
            "ring_radius" => self.segmentation.ring_radius = parse(key, v)?,
            "excluded_cluster_fraction" => self.segmentation.excluded_cluster_fraction = parse(key, v)?,

            "fundamental_iterations" => self.fundamental.iterations = parse(key, v)?,
            "fundamental_threshold" => self.fundamental.inlier_threshold = parse(key, v)?,
            "pnp_iterations" => self.pose.pnp.iterations = parse(key, v)?,
            "pnp_threshold" => self.pose.pnp.reprojection_threshold = parse(key, v)?,
            "pnp_sample_size" => self.pose.pnp.sample_size = parse(key, v)?,
            "seed" => {
                let s: u64 = parse(key, v)?;
                self.fundamental.seed = s;
                self.pose.pnp.seed = s;
                self.kmeans.seed = s;
            }
            "kmeans_seed" => self.kmeans.seed = parse(key, v)?,
            "fundamental_seed" => self.fundamental.seed = parse(key, v)?,
            "pnp_seed" => self.pose.pnp.seed = parse(key, v)?,
            "model_inlier_threshold" => self.pose.model_inlier_threshold = parse(key, v)?,
            "min_keyframe_matches" => self.pose.min_keyframe_matches = parse(key, v)?,

            "strategy" => self.strategy = v.parse()?,
            "keyframe_interval" => self.keyframe_interval = parse(key, v)?,
            "max_time_diff" => self.max_time_diff = parse(key, v)?,
            "rpe_delta" => self.rpe_delta = parse(key, v)?,
            "prefetch" => self.prefetch = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines over `self`; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        let positive = [
            ("color_norm", self.slic.color_norm),
            ("depth_norm", self.slic.depth_norm),
            ("cluster_depth_weight", self.kmeans.depth_weight),
            ("corner_quality", self.tracking.quality_level),
            ("lk_epsilon", self.tracking.lk.epsilon),
            ("fb_threshold", self.tracking.fb_threshold),
            ("cluster_error_threshold", self.segmentation.cluster_error_threshold),
            ("cauchy_c", self.segmentation.cauchy_c),
            ("epipolar_threshold", self.segmentation.epipolar_threshold),
            ("ring_radius", self.segmentation.ring_radius),
            ("fundamental_threshold", self.fundamental.inlier_threshold),
            ("pnp_threshold", self.pose.pnp.reprojection_threshold),
            ("model_inlier_threshold", self.pose.model_inlier_threshold),
            ("max_time_diff", self.max_time_diff),
            ("rpe_delta", self.rpe_delta),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        let counts = [
            ("superpixel_size", self.slic.grid_spacing),
            ("m_clusters", self.kmeans.m_clusters),
            ("max_corners", self.tracking.max_corners),
            ("lk_levels", self.tracking.lk.levels),
            ("k_min", self.segmentation.k_min),
            ("ring_samples", self.segmentation.ring_samples),
            ("fundamental_iterations", self.fundamental.iterations),
            ("pnp_iterations", self.pose.pnp.iterations),
            ("keyframe_interval", self.keyframe_interval),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.tracking.lk.window.is_multiple_of(2) {
            return Err(Error::Config("lk_window must be odd".into()));
        }
        if self.pose.pnp.sample_size < 4 {
            return Err(Error::Config("pnp_sample_size must be at least 4".into()));
        }
        if !(0.0..=1.0).contains(&self.segmentation.excluded_cluster_fraction) {
            return Err(Error::Config("excluded_cluster_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Every setting as `key = value` lines; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let k = &self.intrinsics;
        let lines: Vec<(&str, String)> = vec![
            ("fx", k.fx.to_string()),
            ("fy", k.fy.to_string()),
            ("cx", k.cx.to_string()),
            ("cy", k.cy.to_string()),
            ("depth_scale", k.depth_scale.to_string()),
            ("width", k.width.to_string()),
            ("height", k.height.to_string()),
            ("superpixel_size", self.slic.grid_spacing.to_string()),
            ("superpixel_iterations", self.slic.iterations.to_string()),
            ("color_norm", self.slic.color_norm.to_string()),
            ("depth_norm", self.slic.depth_norm.to_string()),
            ("literal_depth_term", (self.slic.depth_term == DepthTerm::Literal).to_string()),
            ("min_valid_depth_fraction", self.slic.min_valid_depth_fraction.to_string()),
            ("m_clusters", self.kmeans.m_clusters.to_string()),
            ("kmeans_iterations", self.kmeans.max_iterations.to_string()),
            ("cluster_depth_weight", self.kmeans.depth_weight.to_string()),
            ("max_corners", self.tracking.max_corners.to_string()),
            ("corner_quality", self.tracking.quality_level.to_string()),
            ("corner_min_distance", self.tracking.min_distance.to_string()),
            ("lk_levels", self.tracking.lk.levels.to_string()),
            ("lk_window", self.tracking.lk.window.to_string()),
            ("lk_iterations", self.tracking.lk.max_iterations.to_string()),
            ("lk_epsilon", self.tracking.lk.epsilon.to_string()),
            ("lk_min_eigenvalue", self.tracking.lk.min_eigenvalue.to_string()),
            ("fb_threshold", self.tracking.fb_threshold.to_string()),
            ("cluster_error_threshold", self.segmentation.cluster_error_threshold.to_string()),
            ("cauchy_c", self.segmentation.cauchy_c.to_string()),
            ("epipolar_threshold", self.segmentation.epipolar_threshold.to_string()),
            ("k_min", self.segmentation.k_min.to_string()),
            ("dilation_radius", self.segmentation.dilation_radius.to_string()),
            ("border_margin", self.segmentation.border_margin.to_string()),
            ("min_geometric_matches", self.segmentation.min_geometric_matches.to_string()),
            ("ring_samples", self.segmentation.ring_samples.to_string()),
            ("ring_radius", self.segmentation.ring_radius.to_string()),
            ("excluded_cluster_fraction", self.segmentation.excluded_cluster_fraction.to_string()),
            ("fundamental_iterations", self.fundamental.iterations.to_string()),
            ("fundamental_threshold", self.fundamental.inlier_threshold.to_string()),
            ("pnp_iterations", self.pose.pnp.iterations.to_string()),
            ("pnp_threshold", self.pose.pnp.reprojection_threshold.to_string()),
            ("pnp_sample_size", self.pose.pnp.sample_size.to_string()),
            ("kmeans_seed", self.kmeans.seed.to_string()),
            ("fundamental_seed", self.fundamental.seed.to_string()),
            ("pnp_seed", self.pose.pnp.seed.to_string()),
            ("model_inlier_threshold", self.pose.model_inlier_threshold.to_string()),
            ("min_keyframe_matches", self.pose.min_keyframe_matches.to_string()),
            ("strategy", self.strategy.name().to_string()),
            ("keyframe_interval", self.keyframe_interval.to_string()),
            ("max_time_diff", self.max_time_diff.to_string()),
            ("rpe_delta", self.rpe_delta.to_string()),
            ("prefetch", self.prefetch.to_string()),
        ];
        for (key, value) in lines {
            let _ = writeln!(s, "{key} = {value}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut c = PipelineConfig {
            strategy: Strategy::OnlyKeyframes,
            ..PipelineConfig::default()
        };
        c.segmentation.k_min = 5;
        c.slic.depth_term = DepthTerm::Literal;
        c.fundamental.seed = 9;
        let back = PipelineConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = PipelineConfig::parse("# header\n\nk_min = 4   # votes\nstrategy = only_keyframes\n").unwrap();
        assert_eq!(c.segmentation.k_min, 4);
        assert_eq!(c.strategy, Strategy::OnlyKeyframes);
    }

    #[test]
    fn seed_sets_every_generator() {
        let c = PipelineConfig::parse("seed = 7").unwrap();
        assert_eq!((c.fundamental.seed, c.pose.pnp.seed, c.kmeans.seed), (7, 7, 7));
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "bogus = 1",
            "k_min = x",
            "k_min",
            "epipolar_threshold = 0",
            "strategy = sometimes",
            "lk_window = 20",
            "fx = -1",
        ] {
            assert!(matches!(PipelineConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}
