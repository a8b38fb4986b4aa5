//! Initial pose from three competing motion models: PnP against keyframe
//! points, PnP against the last frame, and constant velocity.

use nalgebra::{Vector2, Vector3};

use crate::geometry::{back_project, pnp_ransac, CameraIntrinsics, Correspondence, PnpParams, PoseSE3};
use crate::grid::{DepthMap, Mask};
use crate::segmentation::is_masked;
use crate::tracking::{track_points, MatchStatus, Pyramid, TrackedMatch, TrackingParams};
use crate::{par, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelKind {
    KeyframePnp,
    AdjacentPnp,
    ConstantVelocity,
    /// Identity pose for the first frame.
    Bootstrap,
}

impl ModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::KeyframePnp => "keyframe_pnp",
            ModelKind::AdjacentPnp => "adjacent_pnp",
            ModelKind::ConstantVelocity => "constant_velocity",
            ModelKind::Bootstrap => "bootstrap",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelCandidate {
    pub kind: ModelKind,
    /// World-to-camera pose of the current frame.
    pub pose: PoseSE3,
    pub inlier_count: usize,
    /// Mean reprojection error of the inliers in pixels.
    pub mean_inlier_error: f64,
}

impl ModelCandidate {
    pub fn unscored(kind: ModelKind, pose: PoseSE3) -> Self {
        Self {
            kind,
            pose,
            inlier_count: 0,
            mean_inlier_error: f64::INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseInitParams {
    pub pnp: PnpParams,
    pub model_inlier_threshold: f64,
    /// Model 1 is skipped when fewer keyframe points are tracked.
    pub min_keyframe_matches: usize,
}

impl Default for PoseInitParams {
    fn default() -> Self {
        Self {
            pnp: PnpParams::default(),
            model_inlier_threshold: 3.0,
            min_keyframe_matches: 8,
        }
    }
}

/// Reference keyframe: its pyramid and features with world coordinates.
pub struct KeyframeRef<'a> {
    pub pyramid: &'a Pyramid,
    pub pixels: &'a [Vector2<f64>],
    pub world: &'a [Vector3<f64>],
}

/// Previous frame: image, depth, pose and the corners to track.
pub struct LastFrameRef<'a> {
    pub pyramid: &'a Pyramid,
    pub depth: &'a DepthMap,
    /// World-to-camera pose.
    pub pose: PoseSE3,
    pub corners: &'a [Vector2<f64>],
    /// Dilated prior mask of the last frame, if any.
    pub prior_mask: Option<&'a Mask>,
}

#[derive(Clone, Debug, Default)]
pub struct ModelSet {
    pub candidates: Vec<ModelCandidate>,
    /// Last-frame corners tracked into the current frame.
    pub adjacent_matches: Vec<TrackedMatch>,
    /// Keyframe features tracked into the current frame.
    pub keyframe_matches: Vec<TrackedMatch>,
}

/// Correspondences from matches that are tracked and carry a world point.
pub fn correspondences(matches: &[TrackedMatch]) -> Vec<Correspondence> {
    matches
        .iter()
        .filter(|m| m.status == MatchStatus::Tracked)
        .filter_map(|m| {
            m.world_point.map(|w| Correspondence {
                world: w,
                pixel: m.cur_px,
            })
        })
        .collect()
}

fn pnp_candidate(kind: ModelKind, matches: &[TrackedMatch], k: &CameraIntrinsics, params: &PoseInitParams) -> Option<ModelCandidate> {
    let corrs = correspondences(matches);
    let est = pnp_ransac(&corrs, k, &params.pnp).ok()?;
    Some(ModelCandidate::unscored(kind, est.pose))
}

/// Depth at `px` if it and its 3×3 neighbourhood are valid and agree
/// within 2%. Corners on occlusion edges get `None`: their depth belongs to
/// either side at random.
pub fn stable_depth(depth: &DepthMap, px: &Vector2<f64>) -> Option<f64> {
    let (x, y) = (px.x.round() as i64, px.y.round() as i64);
    let d = depth.get_clamped(x, y) as f64;
    if !(d.is_finite() && d > 0.0) {
        return None;
    }
    for dy in -1..=1 {
        for dx in -1..=1 {
            let n = depth.get_clamped(x + dx, y + dy) as f64;
            if !(n.is_finite() && n > 0.0) || (n - d).abs() > 0.02 * d {
                return None;
            }
        }
    }
    Some(d)
}

/// Tracks last-frame corners and back-projects them with the last pose.
pub fn adjacent_matches(
    last: &LastFrameRef,
    cur: &Pyramid,
    k: &CameraIntrinsics,
    tracking: &TrackingParams,
) -> Vec<TrackedMatch> {
    let t_wl = last.pose.inverse();
    let mut matches = track_points(last.pyramid, cur, last.corners, tracking);
    for m in &mut matches {
        let d = stable_depth(last.depth, &m.prev_px);
        let valid = d.is_some();
        m.depth_prev = d.unwrap_or(0.0);
        if let Some(d) = d {
            m.world_point = back_project(m.prev_px.x, m.prev_px.y, d, k, &t_wl).ok();
        }
        if let Some(mask) = last.prior_mask {
            if is_masked(mask, &m.prev_px) {
                m.status = MatchStatus::PriorMasked;
                continue;
            }
        }
        if m.status == MatchStatus::Tracked && !valid {
            m.status = MatchStatus::DepthInvalid;
        }
    }
    matches
}

fn keyframe_matches(kf: &KeyframeRef, cur: &Pyramid, tracking: &TrackingParams) -> Vec<TrackedMatch> {
    let mut matches = track_points(kf.pyramid, cur, kf.pixels, tracking);
    for (m, w) in matches.iter_mut().zip(kf.world) {
        m.world_point = Some(*w);
    }
    matches
}

/// Builds up to three pose hypotheses for the current frame.
pub fn generate_models(
    keyframe: Option<&KeyframeRef>,
    last: &LastFrameRef,
    cur: &Pyramid,
    velocity: &PoseSE3,
    k: &CameraIntrinsics,
    tracking: &TrackingParams,
    params: &PoseInitParams,
) -> ModelSet {
    let (kf_part, adj_part) = par::join(
        || {
            let kf = keyframe?;
            let matches = keyframe_matches(kf, cur, tracking);
            let usable = matches.iter().filter(|m| m.status == MatchStatus::Tracked).count();
            let cand = (usable >= params.min_keyframe_matches)
                .then(|| pnp_candidate(ModelKind::KeyframePnp, &matches, k, params))
                .flatten();
            Some((matches, cand))
        },
        || {
            let matches = adjacent_matches(last, cur, k, tracking);
            let cand = pnp_candidate(ModelKind::AdjacentPnp, &matches, k, params);
            (matches, cand)
        },
    );
    let mut set = ModelSet::default();
    if let Some((matches, cand)) = kf_part {
        set.keyframe_matches = matches;
        set.candidates.extend(cand);
    }
    set.adjacent_matches = adj_part.0;
    set.candidates.extend(adj_part.1);
    set.candidates.push(ModelCandidate::unscored(ModelKind::ConstantVelocity, *velocity * last.pose));
    set
}

/// Scores every candidate on the same correspondences and returns the one
/// with the most inliers; ties go to keyframe, then adjacent, then
/// constant velocity, then to the lower mean inlier error.
pub fn select_model(
    candidates: &[ModelCandidate],
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    inlier_threshold: f64,
) -> Result<ModelCandidate> {
    let scored: Vec<ModelCandidate> = candidates
        .iter()
        .map(|c| {
            let (mut n, mut sum) = (0usize, 0.0);
            for corr in corrs {
                let p = c.pose.transform_point(&corr.world);
                if p.z <= 0.0 {
                    continue;
                }
                let px = Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
                let e = (px - corr.pixel).norm();
                if e <= inlier_threshold {
                    n += 1;
                    sum += e;
                }
            }
            ModelCandidate {
                inlier_count: n,
                mean_inlier_error: if n > 0 { sum / n as f64 } else { f64::INFINITY },
                ..*c
            }
        })
        .collect();
    scored
        .into_iter()
        .min_by(|a, b| {
            b.inlier_count
                .cmp(&a.inlier_count)
                .then(a.kind.cmp(&b.kind))
                .then(a.mean_inlier_error.total_cmp(&b.mean_inlier_error))
        })
        .ok_or(Error::InvalidArgument("no pose candidates".into()))
}

/// Inter-frame motion `T_cur · T_last⁻¹` of world-to-camera poses.
pub fn update_velocity(t_cur: &PoseSE3, t_last: &PoseSE3) -> PoseSE3 {
    *t_cur * t_last.inverse()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::default()
    }

    #[test]
    fn velocity_examples() {
        let a = PoseSE3::from_axis_angle(Vector3::new(0.1, 0.2, -0.1), Vector3::new(1.0, 2.0, 3.0));
        let v = update_velocity(&a, &a);
        assert!(v.translation().norm() < 1e-12 && v.rotation_angle() < 1e-12);

        let last = PoseSE3::from_translation(Vector3::new(0.3, 0.0, 0.0));
        let cur = PoseSE3::from_translation(Vector3::new(0.31, 0.0, 0.0));
        let v = update_velocity(&cur, &last);
        assert!((v.translation() - Vector3::new(0.01, 0.0, 0.0)).norm() < 1e-12);

        let cur = PoseSE3::from_axis_angle(Vector3::new(0.0, 0.05, 0.0), Vector3::new(0.1, 0.0, 0.2)) * a;
        let v = update_velocity(&cur, &a);
        let back = v * a;
        assert!((back.translation() - cur.translation()).norm() < 1e-12);
        assert!((back.inverse() * cur).rotation_angle() < 1e-9);
    }

    fn corrs(truth: &PoseSE3, n: usize, seed: u64) -> Vec<Correspondence> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t_wc = truth.inverse();
        (0..n)
            .map(|_| {
                let c = Vector3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.0..1.0), rng.random_range(2.0..5.0));
                Correspondence {
                    world: t_wc.transform_point(&c),
                    pixel: k().project_camera(&c).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn single_candidate_is_returned() {
        let truth = PoseSE3::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let c = ModelCandidate::unscored(ModelKind::AdjacentPnp, truth);
        let s = select_model(&[c], &corrs(&truth, 30, 1), &k(), 3.0).unwrap();
        assert_eq!(s.kind, ModelKind::AdjacentPnp);
        assert_eq!(s.pose, truth);
        assert!(select_model(&[], &[], &k(), 3.0).is_err());
    }

    #[test]
    fn ground_truth_beats_rotated_pose() {
        let truth = PoseSE3::from_axis_angle(Vector3::new(0.02, -0.01, 0.0), Vector3::new(0.1, 0.05, 0.0));
        let bad = PoseSE3::from_axis_angle(Vector3::new(0.0, 5f64.to_radians(), 0.0), Vector3::zeros()) * truth;
        let cs = corrs(&truth, 200, 2);
        let cands = [
            ModelCandidate::unscored(ModelKind::KeyframePnp, bad),
            ModelCandidate::unscored(ModelKind::ConstantVelocity, truth),
        ];
        let s = select_model(&cands, &cs, &k(), 3.0).unwrap();
        assert_eq!(s.kind, ModelKind::ConstantVelocity);
        assert_eq!(s.inlier_count, 200);
    }

    #[test]
    fn ties_prefer_keyframe_model() {
        let truth = PoseSE3::identity();
        let cs = corrs(&truth, 50, 3);
        let cands = [
            ModelCandidate::unscored(ModelKind::ConstantVelocity, truth),
            ModelCandidate::unscored(ModelKind::AdjacentPnp, truth),
            ModelCandidate::unscored(ModelKind::KeyframePnp, truth),
        ];
        assert_eq!(select_model(&cands, &cs, &k(), 3.0).unwrap().kind, ModelKind::KeyframePnp);
    }
}
