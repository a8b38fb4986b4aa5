//! Dynamic-region discovery: candidate clusters from reprojection error,
//! confirmation by the epipolar constraint, and fusion with prior masks.

use std::collections::BTreeMap;

use nalgebra::Vector2;

use crate::geometry::{epipolar_distance, ClusterScore, FundamentalMatrix};
use crate::grid::{Grid, LabelMap, Mask};
use crate::superpixel::{ClusterAssignment, SuperPixelMap};
use crate::tracking::{MatchStatus, TrackedMatch};
use crate::{par, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentationParams {
    /// Robustified reprojection error above which a cluster is a candidate.
    pub cluster_error_threshold: f64,
    /// Cauchy kernel scale in pixels.
    pub cauchy_c: f64,
    /// Epipolar distance (pixels) above which a match is dynamic.
    pub epipolar_threshold: f64,
    /// Votes needed to confirm a candidate cluster.
    pub k_min: usize,
    pub dilation_radius: usize,
    /// Superpixels whose centroid is this close to the image edge are
    /// ignored for geometric candidacy.
    pub border_margin: f64,
    /// Fewer usable matches than this skips the geometric stage.
    pub min_geometric_matches: usize,
    pub ring_samples: usize,
    pub ring_radius: f64,
    /// A cluster is excluded when at least this fraction of its pixels lies
    /// in excluded superpixels.
    pub excluded_cluster_fraction: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            cluster_error_threshold: 1.5,
            cauchy_c: 2.0,
            epipolar_threshold: 1.0,
            k_min: 3,
            dilation_radius: 10,
            border_margin: 10.0,
            min_geometric_matches: 20,
            ring_samples: 30,
            ring_radius: 5.0,
            excluded_cluster_fraction: 0.5,
        }
    }
}

/// Superpixels that cannot be geometric candidates: near the border or
/// without enough valid depth.
pub fn excluded_superpixels(map: &SuperPixelMap, border_margin: f64) -> Vec<bool> {
    let (w, h) = map.labels.dims();
    let (w, h) = (w as f64, h as f64);
    map.superpixels
        .iter()
        .map(|s| {
            let near_border =
                s.x < border_margin || s.y < border_margin || s.x > w - 1.0 - border_margin || s.y > h - 1.0 - border_margin;
            near_border || !s.depth_valid
        })
        .collect()
}

/// Clusters dominated (by pixel count) by excluded superpixels.
pub fn excluded_clusters(map: &SuperPixelMap, assignment: &ClusterAssignment, params: &SegmentationParams) -> Vec<bool> {
    let sp_excluded = excluded_superpixels(map, params.border_margin);
    assignment
        .members
        .iter()
        .map(|members| {
            let total: usize = members.iter().map(|&s| map.superpixels[s].pixel_count).sum();
            let bad: usize = members
                .iter()
                .filter(|&&s| sp_excluded[s])
                .map(|&s| map.superpixels[s].pixel_count)
                .sum();
            total == 0 || bad as f64 >= params.excluded_cluster_fraction * total as f64
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PotentialRegions {
    /// Candidate cluster ids, ascending.
    pub flagged: Vec<usize>,
    pub scores: Vec<ClusterScore>,
    pub threshold: f64,
}

impl PotentialRegions {
    pub fn contains(&self, cluster: usize) -> bool {
        self.flagged.binary_search(&cluster).is_ok()
    }
}

/// Flags scored clusters whose mean error exceeds `threshold`, skipping
/// clusters marked in `excluded`.
pub fn extract_potential_regions(scores: &[ClusterScore], excluded: &[bool], threshold: f64) -> PotentialRegions {
    let mut flagged: Vec<usize> = scores
        .iter()
        .filter(|s| s.mean_error > threshold && !excluded.get(s.cluster_id).copied().unwrap_or(false))
        .map(|s| s.cluster_id)
        .collect();
    flagged.sort_unstable();
    flagged.dedup();
    PotentialRegions {
        flagged,
        scores: scores.to_vec(),
        threshold,
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Judgement {
    /// Confirmed dynamic clusters, ascending.
    pub dynamic_clusters: Vec<usize>,
    /// Votes per cluster from epipolar-violating matches.
    pub votes: BTreeMap<usize, usize>,
    /// Indices of matches that violate the epipolar constraint.
    pub dynamic_points: Vec<usize>,
}

/// Whether a match may take part in the epipolar test.
pub fn usable_for_epipolar(m: &TrackedMatch) -> bool {
    matches!(m.status, MatchStatus::Tracked | MatchStatus::DepthInvalid)
}

/// Cluster receiving the vote of a dynamic point at `p`: among the clusters
/// under `ring_samples` points on a circle of `ring_radius` around `p` (and
/// `p` itself), the one with the largest mean reprojection error. Clusters
/// without a score rank below every scored cluster.
pub fn ring_vote(p: &Vector2<f64>, cluster_map: &LabelMap, scores: &BTreeMap<usize, f64>, samples: usize, radius: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    let mut consider = |x: f64, y: f64| {
        let (xi, yi) = (x.round() as i64, y.round() as i64);
        if !cluster_map.in_bounds(xi, yi) {
            return;
        }
        let c = *cluster_map.get(xi as usize, yi as usize) as usize;
        let e = scores.get(&c).copied().unwrap_or(f64::NEG_INFINITY);
        best = match best {
            Some((bc, be)) if be > e || (be == e && bc <= c) => Some((bc, be)),
            _ => Some((c, e)),
        };
    };
    consider(p.x, p.y);
    for i in 0..samples {
        let a = std::f64::consts::TAU * i as f64 / samples as f64;
        consider(p.x + radius * a.cos(), p.y + radius * a.sin());
    }
    best.map(|b| b.0)
}

/// Epipolar confirmation of candidate clusters.
pub fn judge_dynamic(
    potential: &PotentialRegions,
    matches: &[TrackedMatch],
    f: &FundamentalMatrix,
    cluster_map: &LabelMap,
    params: &SegmentationParams,
) -> Judgement {
    let score_of: BTreeMap<usize, f64> = potential.scores.iter().map(|s| (s.cluster_id, s.mean_error)).collect();
    let votes_per_match = par::map(matches, |m| {
        if !usable_for_epipolar(m) {
            return None;
        }
        let d = epipolar_distance(f.matrix(), &m.prev_px.push(1.0), &m.cur_px.push(1.0)).unwrap_or(f64::INFINITY);
        (d > params.epipolar_threshold).then(|| ring_vote(&m.cur_px, cluster_map, &score_of, params.ring_samples, params.ring_radius))
    });
    let mut j = Judgement::default();
    for (i, v) in votes_per_match.into_iter().enumerate() {
        let Some(target) = v else { continue };
        j.dynamic_points.push(i);
        if let Some(c) = target {
            *j.votes.entry(c).or_insert(0) += 1;
        }
    }
    j.dynamic_clusters = j
        .votes
        .iter()
        .filter(|(c, &n)| n >= params.k_min && potential.contains(**c))
        .map(|(c, _)| *c)
        .collect();
    j
}

/// Dilation by a disc of the given radius.
pub fn dilate_mask(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dims();
    // Row prefix sums turn each disc row into an O(1) span query.
    let mut prefix = vec![0u32; (w + 1) * h];
    for y in 0..h {
        for x in 0..w {
            prefix[y * (w + 1) + x + 1] = prefix[y * (w + 1) + x] + *mask.get(x, y) as u32;
        }
    }
    let r = radius as i64;
    let spans: Vec<(i64, i64)> = (-r..=r).map(|dy| (dy, ((r * r - dy * dy) as f64).sqrt().floor() as i64)).collect();
    let mut out = vec![false; w * h];
    par::for_each_row(&mut out, w, |y, row| {
        for (dy, hw) in &spans {
            let yy = y as i64 + dy;
            if yy < 0 || yy >= h as i64 {
                continue;
            }
            let base = yy as usize * (w + 1);
            for (x, v) in row.iter_mut().enumerate() {
                if *v {
                    continue;
                }
                let lo = (x as i64 - hw).max(0) as usize;
                let hi = (x as i64 + hw + 1).min(w as i64) as usize;
                if prefix[base + hi] > prefix[base + lo] {
                    *v = true;
                }
            }
        }
    });
    Grid::from_vec(w, h, out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Provenance {
    #[default]
    Static,
    Prior,
    Geometric,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DynamicMask {
    pub mask: Mask,
    pub provenance: Grid<Provenance>,
}

impl DynamicMask {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            mask: Grid::new(width, height, false),
            provenance: Grid::new(width, height, Provenance::Static),
        }
    }

    /// 0 static, 128 geometric, 255 prior.
    pub fn to_gray(&self) -> image::GrayImage {
        let (w, h) = self.mask.dims();
        let data = self
            .provenance
            .data()
            .iter()
            .map(|p| match p {
                Provenance::Static => 0u8,
                Provenance::Geometric => 128,
                Provenance::Prior => 255,
            })
            .collect();
        image::GrayImage::from_raw(w as u32, h as u32, data).expect("buffer size matches")
    }
}

/// Union of the dilated prior mask and the pixels of the dynamic clusters.
/// Prior provenance wins where both apply.
pub fn fuse_masks(
    prior: Option<&Mask>,
    dynamic_clusters: &[usize],
    cluster_map: &LabelMap,
    dilation_radius: usize,
) -> Result<DynamicMask> {
    let (w, h) = cluster_map.dims();
    let prior = match prior {
        Some(p) if p.dims() != (w, h) => {
            return Err(Error::DimensionMismatch {
                expected: (w, h),
                found: p.dims(),
            })
        }
        Some(p) => Some(dilate_mask(p, dilation_radius)),
        None => None,
    };
    let max_c = dynamic_clusters.iter().copied().max().map_or(0, |m| m + 1);
    let mut dynamic = vec![false; max_c];
    for &c in dynamic_clusters {
        dynamic[c] = true;
    }
    let provenance: Vec<Provenance> = cluster_map
        .data()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if prior.as_ref().is_some_and(|p| p.data()[i]) {
                Provenance::Prior
            } else if dynamic.get(c as usize).copied().unwrap_or(false) {
                Provenance::Geometric
            } else {
                Provenance::Static
            }
        })
        .collect();
    let mask = provenance.iter().map(|p| *p != Provenance::Static).collect();
    Ok(DynamicMask {
        mask: Grid::from_vec(w, h, mask),
        provenance: Grid::from_vec(w, h, provenance),
    })
}

/// Whether `p` (rounded to the nearest pixel) falls on a dynamic pixel.
/// Points outside the image count as dynamic.
#[inline]
pub fn is_masked(mask: &Mask, p: &Vector2<f64>) -> bool {
    let (x, y) = (p.x.round() as i64, p.y.round() as i64);
    !mask.in_bounds(x, y) || *mask.get(x as usize, y as usize)
}

/// Splits point indices into those on static pixels and those removed.
pub fn filter_features(points: &[Vector2<f64>], mask: &DynamicMask) -> (Vec<usize>, Vec<usize>) {
    (0..points.len()).partition(|&i| !is_masked(&mask.mask, &points[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fundamental_from_pose, CameraIntrinsics, PoseSE3};
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn score(id: usize, e: f64) -> ClusterScore {
        ClusterScore {
            cluster_id: id,
            mean_error: e,
            match_count: 5,
        }
    }

    #[test]
    fn potential_region_examples() {
        let zero: Vec<_> = (0..4).map(|i| score(i, 0.0)).collect();
        assert!(extract_potential_regions(&zero, &[false; 4], 1.5).flagged.is_empty());
        let one = vec![score(0, 0.2), score(1, 9.0), score(2, 1.4)];
        assert_eq!(extract_potential_regions(&one, &[false; 3], 1.5).flagged, vec![1]);
        assert!(extract_potential_regions(&one, &[false, true, false], 1.5).flagged.is_empty());
    }

    proptest! {
        #[test]
        fn lowering_threshold_never_shrinks(errs in proptest::collection::vec(0.0f64..10.0, 1..20), a in 0.0f64..10.0, b in 0.0f64..10.0) {
            let scores: Vec<_> = errs.iter().enumerate().map(|(i, &e)| score(i, e)).collect();
            let excluded = vec![false; scores.len()];
            let (lo, hi) = (a.min(b), a.max(b));
            let big = extract_potential_regions(&scores, &excluded, lo).flagged;
            let small = extract_potential_regions(&scores, &excluded, hi).flagged;
            prop_assert!(small.iter().all(|c| big.contains(c)));
        }

        #[test]
        fn dilation_contains_input(bits in proptest::collection::vec(any::<bool>(), 96), r in 0usize..4) {
            let m = Grid::from_vec(12, 8, bits);
            let d = dilate_mask(&m, r);
            for (a, b) in m.data().iter().zip(d.data()) {
                prop_assert!(!a || *b);
            }
        }
    }

    #[test]
    fn dilation_disc_sizes() {
        let mut m = Grid::new(21, 21, false);
        m.set(10, 10, true);
        assert_eq!(dilate_mask(&m, 0), m);
        let brute = (-3i32..=3)
            .flat_map(|y| (-3i32..=3).map(move |x| (x, y)))
            .filter(|(x, y)| x * x + y * y <= 9)
            .count();
        assert_eq!(brute, 29);
        assert_eq!(dilate_mask(&m, 3).count_true(), 29);
    }

    fn k500() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 500.0,
            fy: 500.0,
            cx: 320.0,
            cy: 240.0,
            depth_scale: 5000.0,
            width: 640,
            height: 480,
        }
    }

    fn halves() -> LabelMap {
        Grid::from_fn(640, 480, |x, _| if x < 320 { 0 } else { 1 })
    }

    fn static_matches(t_21: &PoseSE3) -> Vec<TrackedMatch> {
        let k = k500();
        let mut out = Vec::new();
        for i in 0..60 {
            let p = Vector3::new(-1.5 + 0.05 * i as f64, -1.0 + 0.033 * i as f64, 3.0 + (i % 7) as f64 * 0.3);
            let a = k.project_camera(&p).unwrap();
            let b = k.project_camera(&t_21.transform_point(&p)).unwrap();
            out.push(TrackedMatch::new(a, b, MatchStatus::Tracked));
        }
        out
    }

    #[test]
    fn static_scene_has_no_dynamic_clusters() {
        let t_21 = PoseSE3::from_axis_angle(Vector3::new(0.0, 0.02, 0.0), Vector3::new(0.05, 0.0, 0.01));
        let f = fundamental_from_pose(&k500(), &t_21).unwrap();
        let matches = static_matches(&t_21);
        let pot = extract_potential_regions(&[score(0, 5.0), score(1, 5.0)], &[false; 2], 1.5);
        let j = judge_dynamic(&pot, &matches, &f, &halves(), &SegmentationParams::default());
        assert!(j.dynamic_clusters.is_empty() && j.dynamic_points.is_empty());
    }

    #[test]
    fn single_violation_confirms_its_cluster() {
        let t_21 = PoseSE3::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let f = fundamental_from_pose(&k500(), &t_21).unwrap();
        // pure x translation: epipolar lines are horizontal, so a vertical
        // offset of 2 px is a distance of exactly 2 px
        let m = TrackedMatch::new(Vector2::new(100.0, 200.0), Vector2::new(120.0, 202.0), MatchStatus::Tracked);
        let pot = extract_potential_regions(&[score(0, 5.0), score(1, 0.1)], &[false; 2], 1.5);
        let params = SegmentationParams {
            k_min: 1,
            ..SegmentationParams::default()
        };
        let j = judge_dynamic(&pot, &[m], &f, &halves(), &params);
        assert_eq!(j.dynamic_clusters, vec![0]);
    }

    #[test]
    fn boundary_vote_goes_to_higher_error_cluster() {
        let map = halves();
        let scores: BTreeMap<usize, f64> = [(0, 0.3), (1, 7.0)].into_iter().collect();
        // point just on the static side of the boundary
        let v = ring_vote(&Vector2::new(318.0, 100.0), &map, &scores, 30, 5.0);
        assert_eq!(v, Some(1));
        let v = ring_vote(&Vector2::new(100.0, 100.0), &map, &scores, 30, 5.0);
        assert_eq!(v, Some(0));
    }

    #[test]
    fn fusion_examples() {
        let map = halves();
        let none = fuse_masks(None, &[], &map, 10).unwrap();
        assert_eq!(none.mask.count_true(), 0);

        let mut prior = Grid::new(640, 480, false);
        prior.set(50, 50, true);
        let fused = fuse_masks(Some(&prior), &[], &map, 3).unwrap();
        assert_eq!(fused.mask.count_true(), 29);
        assert!(fused
            .provenance
            .data()
            .iter()
            .zip(fused.mask.data())
            .all(|(p, &m)| m == (*p == Provenance::Prior)));

        prior.set(400, 50, true);
        let both = fuse_masks(Some(&prior), &[1], &map, 3).unwrap();
        assert_eq!(*both.provenance.get(400, 50), Provenance::Prior);
        assert_eq!(*both.provenance.get(500, 300), Provenance::Geometric);
        assert!(*both.mask.get(50, 50) && !*both.mask.get(100, 100));
        let png = both.to_gray();
        assert_eq!(png.get_pixel(400, 50)[0], 255);
        assert_eq!(png.get_pixel(500, 300)[0], 128);
        assert_eq!(png.get_pixel(100, 100)[0], 0);

        let small = Grid::new(320, 240, false);
        assert!(fuse_masks(Some(&small), &[], &map, 3).is_err());
    }

    #[test]
    fn feature_partition() {
        let map = halves();
        let fused = fuse_masks(None, &[1], &map, 0).unwrap();
        let pts = vec![Vector2::new(10.0, 10.0), Vector2::new(400.0, 10.0), Vector2::new(319.0, 5.0)];
        let (kept, removed) = filter_features(&pts, &fused);
        assert_eq!(kept, vec![0, 2]);
        assert_eq!(removed, vec![1]);
        let (kept, removed) = filter_features(&pts, &DynamicMask::empty(640, 480));
        assert_eq!((kept.len(), removed.len()), (3, 0));
    }
}
