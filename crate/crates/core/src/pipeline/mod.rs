//! Per-frame driver: superpixels, initial pose, dynamic-region detection,
//! mask fusion and static-feature pose refinement.

mod config;
mod output;

pub use config::{PipelineConfig, Strategy};
pub use output::{run_pipeline, write_mask_png, RunSummary, TIMINGS_HEADER};

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{Vector2, Vector3};

use crate::dataset::Frame;
use crate::geometry::{
    back_project, estimate_fundamental_ransac, pnp_ransac_with_hint, score_clusters, Correspondence, PoseSE3,
};
use crate::grid::{rgb_to_gray, DepthMap, Grid, LabelMap, Mask};
use crate::pose_init::{
    correspondences, generate_models, select_model, stable_depth, update_velocity, KeyframeRef, LastFrameRef, ModelCandidate,
    ModelKind,
};
use crate::segmentation::{
    excluded_clusters, extract_potential_regions, fuse_masks, is_masked, judge_dynamic, usable_for_epipolar,
    DynamicMask, Judgement, PotentialRegions, Provenance,
};
use crate::superpixel::{cluster_map, extract_superpixels, kmeans_clusters, ClusterAssignment, SuperPixelMap};
use crate::tracking::{detect_corners_from_gradients, MatchStatus, Pyramid, TrackedMatch};
use crate::{par, Error, Result};

/// Wall-clock milliseconds per stage. `total` excludes disk IO.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub superpixels: f64,
    pub pose_init: f64,
    pub segmentation: f64,
    pub refinement: f64,
    pub total: f64,
}

/// Intermediate segmentation products, kept on request.
#[derive(Clone, Debug)]
pub struct SegmentationDebug {
    pub superpixels: SuperPixelMap,
    pub assignment: ClusterAssignment,
    pub cluster_map: LabelMap,
    /// Adjacent-frame matches labelled with their superpixel and cluster.
    pub matches: Vec<TrackedMatch>,
    pub potential: Option<PotentialRegions>,
    pub judgement: Option<Judgement>,
}

#[derive(Clone, Debug)]
pub struct FrameResult {
    pub index: usize,
    pub timestamp: f64,
    /// World-to-camera pose.
    pub pose: PoseSE3,
    /// Model chosen as the initial pose.
    pub model: ModelKind,
    pub is_keyframe: bool,
    /// Superpixels and clustering ran on this frame.
    pub segmented: bool,
    /// The epipolar stage ran (enough matches and a candidate region).
    pub geometric: bool,
    /// The final pose is the constant-velocity fallback.
    pub failed: bool,
    /// Degraded stages, for the report.
    pub warnings: Vec<String>,
    pub mask: DynamicMask,
    /// Dilated prior mask applied to this frame.
    pub dilated_prior: Option<Mask>,
    pub dynamic_clusters: Vec<usize>,
    /// Current-frame pixels of the correspondences handed to refinement.
    pub refinement_pixels: Vec<Vector2<f64>>,
    pub refinement_inliers: usize,
    pub timings: StageTimings,
    pub debug: Option<SegmentationDebug>,
}

struct LastState {
    pyramid: Arc<Pyramid>,
    depth: DepthMap,
    pose: PoseSE3,
    corners: Vec<Vector2<f64>>,
    prior: Option<Mask>,
}

struct KeyframeState {
    pyramid: Arc<Pyramid>,
    pixels: Vec<Vector2<f64>>,
    world: Vec<Vector3<f64>>,
}

struct Segmented {
    superpixels: SuperPixelMap,
    assignment: ClusterAssignment,
    cluster_map: LabelMap,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Frame-by-frame state machine. Feed frames in timestamp order.
pub struct Pipeline {
    config: PipelineConfig,
    last: Option<LastState>,
    keyframe: Option<KeyframeState>,
    velocity: PoseSE3,
    processed: usize,
    keep_debug: bool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            last: None,
            keyframe: None,
            velocity: PoseSE3::identity(),
            processed: 0,
            keep_debug: false,
        })
    }

    /// Keep superpixel and cluster maps in each [`FrameResult`].
    pub fn keep_debug(mut self, keep: bool) -> Self {
        self.keep_debug = keep;
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn process(&mut self, frame: &Frame) -> Result<FrameResult> {
        let start = Instant::now();
        let cfg = self.config;
        let k = cfg.intrinsics;
        let (w, h) = (k.width, k.height);
        if frame.dims() != (w, h) {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                found: frame.dims(),
            });
        }
        let is_keyframe = self.processed.is_multiple_of(cfg.keyframe_interval);
        let active = cfg.strategy == Strategy::AllFrames || is_keyframe;
        let mut warnings = Vec::new();
        let mut timings = StageTimings::default();

        let gray = rgb_to_gray(&frame.color);
        let pyramid = Arc::new(Pyramid::build(&gray, cfg.tracking.lk.levels));

        // Superpixels do not depend on pose state and run beside tracking.
        let (segmented, models) = par::join(
            || {
                active.then(|| {
                    let t = Instant::now();
                    let seg = extract_superpixels(&frame.color, &frame.depth, &cfg.slic).and_then(|superpixels| {
                        let assignment = kmeans_clusters(&superpixels.superpixels, &cfg.kmeans)?;
                        let cluster_map = cluster_map(&superpixels, &assignment);
                        Ok(Segmented {
                            superpixels,
                            assignment,
                            cluster_map,
                        })
                    });
                    (seg, ms(t))
                })
            },
            || {
                let last = self.last.as_ref()?;
                let t = Instant::now();
                let kf = self.keyframe.as_ref().map(|kf| KeyframeRef {
                    pyramid: &kf.pyramid,
                    pixels: &kf.pixels,
                    world: &kf.world,
                });
                let last_ref = LastFrameRef {
                    pyramid: &last.pyramid,
                    depth: &last.depth,
                    pose: last.pose,
                    corners: &last.corners,
                    prior_mask: last.prior.as_ref(),
                };
                let set = generate_models(
                    kf.as_ref(),
                    &last_ref,
                    &pyramid,
                    &self.velocity,
                    &k,
                    &cfg.tracking,
                    &cfg.pose,
                );
                let mut corrs = correspondences(&set.adjacent_matches);
                corrs.extend(correspondences(&set.keyframe_matches));
                let chosen = select_model(&set.candidates, &corrs, &k, cfg.pose.model_inlier_threshold);
                Some((set, chosen, ms(t)))
            },
        );

        let segmented = match segmented {
            Some((Ok(s), t)) => {
                timings.superpixels = t;
                Some(s)
            }
            Some((Err(e), t)) => {
                timings.superpixels = t;
                warnings.push(format!("superpixels: {e}"));
                None
            }
            None => None,
        };
        let (initial, model_set) = match models {
            Some((set, chosen, t)) => {
                timings.pose_init = t;
                (chosen?, Some(set))
            }
            None => (ModelCandidate::unscored(ModelKind::Bootstrap, PoseSE3::identity()), None),
        };

        let t = Instant::now();
        let prior = if active { frame.prior_mask.as_ref() } else { None };
        let mut potential = None;
        let mut judgement = None;
        let mut labelled = Vec::new();
        if let (Some(seg), Some(set)) = (&segmented, &model_set) {
            labelled = set
                .adjacent_matches
                .iter()
                .map(|m| {
                    let mut m = m.clone();
                    let (x, y) = (m.cur_px.x.round() as i64, m.cur_px.y.round() as i64);
                    if seg.cluster_map.in_bounds(x, y) {
                        m.cluster_id = Some(*seg.cluster_map.get(x as usize, y as usize) as usize);
                        m.superpixel_id = Some(*seg.superpixels.labels.get(x as usize, y as usize));
                    }
                    m
                })
                .collect();
            let matches = &labelled;
            let usable: Vec<&TrackedMatch> = matches.iter().filter(|m| usable_for_epipolar(m)).collect();
            if usable.len() >= cfg.segmentation.min_geometric_matches {
                let scores = score_clusters(matches, &initial.pose, &k, cfg.segmentation.cauchy_c);
                let excluded = excluded_clusters(&seg.superpixels, &seg.assignment, &cfg.segmentation);
                let regions = extract_potential_regions(&scores, &excluded, cfg.segmentation.cluster_error_threshold);
                if !regions.flagged.is_empty() {
                    let p1: Vec<_> = usable.iter().map(|m| m.prev_px).collect();
                    let p2: Vec<_> = usable.iter().map(|m| m.cur_px).collect();
                    match estimate_fundamental_ransac(&p1, &p2, &cfg.fundamental) {
                        Ok(est) => {
                            judgement = Some(judge_dynamic(&regions, matches, &est.f, &seg.cluster_map, &cfg.segmentation))
                        }
                        Err(e) => warnings.push(format!("fundamental matrix: {e}")),
                    }
                }
                potential = Some(regions);
            } else {
                warnings.push(format!("geometric stage skipped: {} usable matches", usable.len()));
            }
        }
        let dynamic_clusters = judgement.as_ref().map(|j| j.dynamic_clusters.clone()).unwrap_or_default();
        let mask = match &segmented {
            Some(seg) => fuse_masks(prior, &dynamic_clusters, &seg.cluster_map, cfg.segmentation.dilation_radius)?,
            None if prior.is_some() => fuse_masks(prior, &[], &Grid::new(w, h, 0), cfg.segmentation.dilation_radius)?,
            None => DynamicMask::empty(w, h),
        };
        let dilated_prior = prior.map(|_| mask.provenance.map(|p| *p == Provenance::Prior));
        timings.segmentation = ms(t);

        let t = Instant::now();
        let mut refinement_pixels = Vec::new();
        let mut refinement_inliers = 0;
        let mut failed = false;
        let pose = match (&self.last, &model_set) {
            (Some(last), Some(set)) => {
                let corrs: Vec<Correspondence> = set
                    .adjacent_matches
                    .iter()
                    .chain(&set.keyframe_matches)
                    .filter(|m| m.status == MatchStatus::Tracked && !is_masked(&mask.mask, &m.cur_px))
                    .filter_map(|m| {
                        m.world_point.map(|world| Correspondence {
                            world,
                            pixel: m.cur_px,
                        })
                    })
                    .collect();
                refinement_pixels = corrs.iter().map(|c| c.pixel).collect();
                match pnp_ransac_with_hint(&corrs, &k, &cfg.pose.pnp, Some(&initial.pose)) {
                    Ok(est) => {
                        refinement_inliers = est.inliers.iter().filter(|&&b| b).count();
                        est.pose
                    }
                    Err(e) => {
                        warnings.push(format!("refinement: {e}"));
                        failed = true;
                        self.velocity * last.pose
                    }
                }
            }
            _ => initial.pose,
        };

        let base = &pyramid.levels()[0];
        let corners = detect_corners_from_gradients(
            &base.grad_x,
            &base.grad_y,
            cfg.tracking.max_corners,
            cfg.tracking.quality_level,
            cfg.tracking.min_distance,
        );
        if let Some(last) = &self.last {
            self.velocity = update_velocity(&pose, &last.pose);
        }
        if is_keyframe {
            let t_wc = pose.inverse();
            let (mut pixels, mut world) = (Vec::new(), Vec::new());
            for c in &corners {
                if is_masked(&mask.mask, c) {
                    continue;
                }
                if let Some(d) = stable_depth(&frame.depth, c) {
                    if let Ok(p) = back_project(c.x, c.y, d, &k, &t_wc) {
                        pixels.push(*c);
                        world.push(p);
                    }
                }
            }
            self.keyframe = Some(KeyframeState {
                pyramid: Arc::clone(&pyramid),
                pixels,
                world,
            });
        }
        self.last = Some(LastState {
            pyramid,
            depth: frame.depth.clone(),
            pose,
            corners,
            prior: dilated_prior.clone(),
        });
        self.processed += 1;
        timings.refinement = ms(t);
        timings.total = ms(start);

        let geometric = judgement.is_some();
        let debug = if self.keep_debug {
            segmented.map(|s| SegmentationDebug {
                superpixels: s.superpixels,
                assignment: s.assignment,
                cluster_map: s.cluster_map,
                matches: labelled,
                potential,
                judgement,
            })
        } else {
            None
        };
        Ok(FrameResult {
            index: frame.index,
            timestamp: frame.timestamp,
            pose,
            model: initial.kind,
            is_keyframe,
            segmented: active,
            geometric,
            failed,
            warnings,
            mask,
            dilated_prior,
            dynamic_clusters,
            refinement_pixels,
            refinement_inliers,
            timings,
            debug,
        })
    }
}
