//! Sparse corner tracking between consecutive frames.

mod corners;
mod lk;
mod pyramid;

pub use corners::{detect_corners, detect_corners_from_gradients, min_eigen_from_gradients, min_eigen_response};
pub use lk::{track_lk, LkParams, LkResult};
pub use pyramid::{downsample, sobel, Level, Pyramid};

use nalgebra::{Vector2, Vector3};

use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MatchStatus {
    Tracked,
    /// Forward-backward round trip exceeded the threshold.
    FbFailed,
    /// Tracked, but the previous frame has no valid depth at `prev_px`.
    DepthInvalid,
    /// Inside the dilated prior mask of the previous frame.
    PriorMasked,
    /// Flow did not converge or left the image.
    Lost,
}

/// A corner correspondence between the previous and the current frame.
#[derive(Clone, Debug, PartialEq)]
pub struct TrackedMatch {
    pub prev_px: Vector2<f64>,
    pub cur_px: Vector2<f64>,
    /// Depth at `prev_px` in meters, 0 when invalid.
    pub depth_prev: f64,
    /// Back-projected point in world coordinates.
    pub world_point: Option<Vector3<f64>>,
    pub superpixel_id: Option<u32>,
    pub cluster_id: Option<usize>,
    pub status: MatchStatus,
}

impl TrackedMatch {
    pub fn new(prev_px: Vector2<f64>, cur_px: Vector2<f64>, status: MatchStatus) -> Self {
        Self {
            prev_px,
            cur_px,
            depth_prev: 0.0,
            world_point: None,
            superpixel_id: None,
            cluster_id: None,
            status,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackingParams {
    pub max_corners: usize,
    pub quality_level: f64,
    pub min_distance: f64,
    pub lk: LkParams,
    pub fb_threshold: f64,
}

impl Default for TrackingParams {
    fn default() -> Self {
        Self {
            max_corners: 300,
            quality_level: 0.01,
            min_distance: 10.0,
            lk: LkParams::default(),
            fb_threshold: 1.0,
        }
    }
}

/// Re-tracks every `Tracked` match from `cur` back to `prev` and marks those
/// whose round trip misses `prev_px` by more than `threshold` as
/// [`MatchStatus::FbFailed`]. Other statuses pass through untouched, so the
/// set of `Tracked` matches can only shrink.
pub fn forward_backward_filter(
    prev: &Pyramid,
    cur: &Pyramid,
    mut matches: Vec<TrackedMatch>,
    params: &LkParams,
    threshold: f64,
) -> Vec<TrackedMatch> {
    let live: Vec<usize> = (0..matches.len()).filter(|&i| matches[i].status == MatchStatus::Tracked).collect();
    let starts: Vec<Vector2<f64>> = live.iter().map(|&i| matches[i].cur_px).collect();
    let back = track_lk(cur, prev, &starts, params);
    for (&i, r) in live.iter().zip(&back) {
        if !r.converged || (r.position - matches[i].prev_px).norm() > threshold {
            matches[i].status = MatchStatus::FbFailed;
        }
    }
    matches
}

/// LK from `prev` to `cur` followed by the forward-backward check.
pub fn track_points(prev: &Pyramid, cur: &Pyramid, points: &[Vector2<f64>], params: &TrackingParams) -> Vec<TrackedMatch> {
    let forward = track_lk(prev, cur, points, &params.lk);
    let matches = points
        .iter()
        .zip(&forward)
        .map(|(p, r)| {
            let status = if r.converged { MatchStatus::Tracked } else { MatchStatus::Lost };
            TrackedMatch::new(*p, r.position, status)
        })
        .collect();
    forward_backward_filter(prev, cur, matches, &params.lk, params.fb_threshold)
}

/// Builds pyramids for two images concurrently.
pub fn build_pyramids(a: &crate::GrayImage, b: &crate::GrayImage, levels: usize) -> (Pyramid, Pyramid) {
    par::join(|| Pyramid::build(a, levels), || Pyramid::build(b, levels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GrayImage, Grid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn texture(w: usize, h: usize, shift: f32, offset: f32) -> GrayImage {
        Grid::from_fn(w, h, |x, y| {
            let (x, y) = (x as f32 - shift, y as f32);
            let v = 110.0 + 50.0 * (0.21 * x + 0.05 * y).sin() + 40.0 * (0.13 * y - 0.07 * x).cos() + 25.0 * (0.19 * x + 0.29 * y).sin();
            (v + offset).clamp(0.0, 255.0)
        })
    }

    fn grid_points(w: usize, h: usize, margin: usize, step: usize) -> Vec<Vector2<f64>> {
        let mut pts = Vec::new();
        for y in (margin..h - margin).step_by(step) {
            for x in (margin..w - margin).step_by(step) {
                pts.push(Vector2::new(x as f64, y as f64));
            }
        }
        pts
    }

    #[test]
    fn identity_and_shift_keep_interior_points() {
        let a = texture(240, 180, 0.0, 0.0);
        let pa = Pyramid::build(&a, 3);
        let pts = grid_points(240, 180, 30, 15);
        let same = track_points(&pa, &pa, &pts, &TrackingParams::default());
        assert!(same.iter().all(|m| m.status == MatchStatus::Tracked));

        let pb = Pyramid::build(&texture(240, 180, 3.0, 0.0), 3);
        let shifted = track_points(&pa, &pb, &pts, &TrackingParams::default());
        assert!(shifted.iter().all(|m| m.status == MatchStatus::Tracked));
    }

    #[test]
    fn occluded_patch_is_dropped() {
        let (w, h) = (240, 180);
        let a = texture(w, h, 0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let patch = (100..160, 60..120);
        let b = Grid::from_fn(w, h, |x, y| {
            if patch.0.contains(&x) && patch.1.contains(&y) {
                rng.random_range(0.0..255.0)
            } else {
                *a.get(x, y)
            }
        });
        let (pa, pb) = build_pyramids(&a, &b, 3);
        let pts: Vec<_> = grid_points(w, h, 30, 10);
        let out = track_points(&pa, &pb, &pts, &TrackingParams::default());
        for m in &out {
            let inside = m.prev_px.x >= 110.0 && m.prev_px.x < 150.0 && m.prev_px.y >= 70.0 && m.prev_px.y < 110.0;
            if inside {
                assert_ne!(m.status, MatchStatus::Tracked, "kept {:?}", m.prev_px);
            }
        }
        let far = out
            .iter()
            .filter(|m| m.prev_px.x < 70.0 || m.prev_px.x > 190.0 || m.prev_px.y < 30.0 || m.prev_px.y > 150.0);
        assert!(far.clone().all(|m| m.status == MatchStatus::Tracked));
    }

    #[test]
    fn filter_output_is_subset() {
        let a = texture(200, 160, 0.0, 0.0);
        let b = texture(200, 160, 2.5, 0.0);
        let (pa, pb) = build_pyramids(&a, &b, 3);
        let pts = grid_points(200, 160, 5, 12);
        let params = TrackingParams::default();
        let fwd = track_lk(&pa, &pb, &pts, &params.lk);
        let before: Vec<TrackedMatch> = pts
            .iter()
            .zip(&fwd)
            .map(|(p, r)| TrackedMatch::new(*p, r.position, if r.converged { MatchStatus::Tracked } else { MatchStatus::Lost }))
            .collect();
        let after = forward_backward_filter(&pa, &pb, before.clone(), &params.lk, 1.0);
        for (x, y) in before.iter().zip(&after) {
            assert_eq!(x.prev_px, y.prev_px);
            if y.status == MatchStatus::Tracked {
                assert_eq!(x.status, MatchStatus::Tracked);
            }
        }
        // no tracked point is out of bounds
        for m in &after {
            if m.status == MatchStatus::Tracked {
                assert!(m.cur_px.x >= 0.0 && m.cur_px.x <= 199.0 && m.cur_px.y >= 0.0 && m.cur_px.y <= 159.0);
            }
        }
    }

    #[test]
    fn intensity_offset_degrades_monotonically() {
        let (w, h) = (240, 180);
        let a = texture(w, h, 0.0, 0.0);
        let pa = Pyramid::build(&a, 3);
        let pts = detect_corners(&a, 200, 0.01, 8.0);
        let mut counts = Vec::new();
        for beta in [0.0, 30.0, 60.0] {
            let pb = Pyramid::build(&texture(w, h, 2.0, beta), 3);
            let res = track_lk(&pa, &pb, &pts, &LkParams::default());
            let good = res
                .iter()
                .zip(&pts)
                .filter(|(r, p)| r.converged && (r.position - *p - Vector2::new(2.0, 0.0)).norm() <= 1.0)
                .count();
            counts.push(good);
        }
        assert!(counts[0] >= counts[1] && counts[1] >= counts[2], "{counts:?}");
        assert!(counts[0] > counts[2], "{counts:?}");
    }
}
