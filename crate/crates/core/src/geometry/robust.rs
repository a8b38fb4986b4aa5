use std::collections::BTreeMap;

use super::{project, CameraIntrinsics, PoseSE3};
use crate::tracking::{MatchStatus, TrackedMatch};

/// Cauchy robust kernel on a squared residual `s` with scale `c`:
/// `c² ln(1 + s / c²)`.
#[inline]
pub fn cauchy(s: f64, c: f64) -> f64 {
    let c2 = c * c;
    c2 * (s / c2).ln_1p()
}

/// Mean robustified reprojection error of one geometric cluster.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterScore {
    pub cluster_id: usize,
    /// Mean of `cauchy(‖u − π(T·P)‖²)` over the cluster's matches.
    pub mean_error: f64,
    pub match_count: usize,
}

/// Scores the given matches as a single cluster under camera pose `t_cw`.
///
/// Matches without a world point, or whose point falls behind the camera,
/// are ignored. Returns `None` when nothing is left to score.
pub fn cluster_reprojection_error<'a>(
    cluster_id: usize,
    matches: impl IntoIterator<Item = &'a TrackedMatch>,
    t_cw: &PoseSE3,
    k: &CameraIntrinsics,
    c: f64,
) -> Option<ClusterScore> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for m in matches {
        let Some(p) = m.world_point else { continue };
        let Ok(px) = project(&p, t_cw, k) else { continue };
        sum += cauchy((m.cur_px - px).norm_squared(), c);
        count += 1;
    }
    (count > 0).then(|| ClusterScore {
        cluster_id,
        mean_error: sum / count as f64,
        match_count: count,
    })
}

/// Groups fully tracked matches by `cluster_id` and scores every cluster
/// that has at least one usable match. Output is ordered by cluster id.
pub fn score_clusters(
    matches: &[TrackedMatch],
    t_cw: &PoseSE3,
    k: &CameraIntrinsics,
    c: f64,
) -> Vec<ClusterScore> {
    let mut groups: BTreeMap<usize, Vec<&TrackedMatch>> = BTreeMap::new();
    for m in matches {
        if m.status != MatchStatus::Tracked {
            continue;
        }
        if let Some(cid) = m.cluster_id {
            groups.entry(cid).or_default().push(m);
        }
    }
    groups
        .into_iter()
        .filter_map(|(cid, ms)| cluster_reprojection_error(cid, ms, t_cw, k, c))
        .collect()
}
