use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::slic::SuperPixel;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansParams {
    pub m_clusters: usize,
    pub max_iterations: usize,
    /// Pixels per meter applied to depth in the `(x, y, w·d)` feature.
    pub depth_weight: f64,
    pub seed: u64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            m_clusters: 12,
            max_iterations: 50,
            depth_weight: 100.0,
            seed: 42,
        }
    }
}

/// Result of grouping superpixels; clusters are never empty.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterAssignment {
    /// Cluster of each superpixel.
    pub labels: Vec<usize>,
    pub centers: Vec<Vector3<f64>>,
    /// Superpixel ids per cluster, ascending.
    pub members: Vec<Vec<usize>>,
}

impl ClusterAssignment {
    pub fn m_clusters(&self) -> usize {
        self.centers.len()
    }

    pub fn cluster_of(&self, superpixel: usize) -> usize {
        self.labels[superpixel]
    }

    /// Sum of squared distances of every point to its centre.
    pub fn distortion(&self, points: &[Vector3<f64>]) -> f64 {
        points
            .iter()
            .zip(&self.labels)
            .map(|(p, &l)| (p - self.centers[l]).norm_squared())
            .sum()
    }
}

/// `(x, y, w·d)` per superpixel; missing depth uses the mean of the others.
pub fn superpixel_features(superpixels: &[SuperPixel], depth_weight: f64) -> Vec<Vector3<f64>> {
    let known: Vec<f64> = superpixels.iter().filter_map(|s| s.depth).collect();
    let fallback = if known.is_empty() {
        0.0
    } else {
        known.iter().sum::<f64>() / known.len() as f64
    };
    superpixels
        .iter()
        .map(|s| Vector3::new(s.x, s.y, depth_weight * s.depth.unwrap_or(fallback)))
        .collect()
}

pub fn kmeans_clusters(superpixels: &[SuperPixel], params: &KMeansParams) -> Result<ClusterAssignment> {
    let points = superpixel_features(superpixels, params.depth_weight);
    kmeans(&points, params.m_clusters, params.max_iterations, params.seed)
}

/// Nearest centre, lowest index on ties.
fn nearest(p: &Vector3<f64>, centers: &[Vector3<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = (p - c).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vector3<f64>], m: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|p| (p - centers[0]).norm_squared()).collect();
    while centers.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            // Guard against rounding landing on an already-chosen point.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&d| d > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick];
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min((p - c).norm_squared());
        }
        centers.push(c);
    }
    centers
}

/// Lloyd's k-means with k-means++ seeding. Clusters that lose all members
/// are re-seeded at the point farthest from its centre; clusters still
/// empty at the end are dropped.
pub fn kmeans(points: &[Vector3<f64>], m: usize, max_iterations: usize, seed: u64) -> Result<ClusterAssignment> {
    if m == 0 {
        return Err(Error::InvalidArgument("m_clusters must be positive".into()));
    }
    if m > points.len() {
        return Err(Error::InvalidArgument(format!(
            "m_clusters {m} exceeds the {} points to cluster",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(points, m, &mut rng);
    let mut labels = vec![usize::MAX; points.len()];

    for _ in 0..max_iterations.max(1) {
        let mut changed = false;
        let mut dist = vec![0f64; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (l, d) = nearest(p, &centers);
            if labels[i] != l {
                labels[i] = l;
                changed = true;
            }
            dist[i] = d;
        }
        if !changed {
            break;
        }
        let mut sums = vec![Vector3::zeros(); m];
        let mut counts = vec![0usize; m];
        for (p, &l) in points.iter().zip(&labels) {
            sums[l] += p;
            counts[l] += 1;
        }
        let mut taken = vec![false; points.len()];
        for c in 0..m {
            if counts[c] > 0 {
                centers[c] = sums[c] / counts[c] as f64;
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| !taken[i] && dist[i] > 0.0)
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if dist[b] >= dist[i] => Some(b),
                    _ => Some(i),
                });
            if let Some(i) = far {
                taken[i] = true;
                centers[c] = points[i];
            }
        }
    }

    // Drop empty clusters and renumber.
    let mut counts = vec![0usize; m];
    for &l in &labels {
        counts[l] += 1;
    }
    let mut remap = vec![usize::MAX; m];
    let mut kept = Vec::new();
    for c in 0..m {
        if counts[c] > 0 {
            remap[c] = kept.len();
            kept.push(centers[c]);
        }
    }
    let labels: Vec<usize> = labels.iter().map(|&l| remap[l]).collect();
    let mut members = vec![Vec::new(); kept.len()];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    Ok(ClusterAssignment {
        labels,
        centers: kept,
        members,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identical_points_collapse_to_one_cluster() {
        let pts = vec![Vector3::new(5.0, 5.0, 100.0); 10];
        let a = kmeans(&pts, 4, 50, 1).unwrap();
        assert_eq!(a.m_clusters(), 1);
        assert!(a.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn two_groups_are_separated() {
        let mut pts = Vec::new();
        for i in 0..10 {
            pts.push(Vector3::new(10.0 + (i % 3) as f64, 20.0 + (i / 3) as f64, 100.0));
            pts.push(Vector3::new(300.0 + (i % 3) as f64, 200.0 + (i / 3) as f64, 400.0));
        }
        let a = kmeans(&pts, 2, 50, 7).unwrap();
        // brute force over both labelings of the two groups
        let truth: Vec<usize> = (0..pts.len()).map(|i| i % 2).collect();
        let flipped: Vec<usize> = truth.iter().map(|l| 1 - l).collect();
        assert!(a.labels == truth || a.labels == flipped);
    }

    #[test]
    fn one_cluster_per_point() {
        let pts: Vec<_> = (0..8).map(|i| Vector3::new(i as f64 * 3.0, (i * i) as f64, 0.0)).collect();
        let a = kmeans(&pts, 8, 50, 3).unwrap();
        assert_eq!(a.m_clusters(), 8);
        assert_eq!(a.distortion(&pts), 0.0);
    }

    #[test]
    fn invalid_cluster_counts() {
        let pts = vec![Vector3::zeros(); 3];
        assert!(kmeans(&pts, 0, 50, 0).is_err());
        assert!(kmeans(&pts, 4, 50, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn converged_assignment_is_locally_optimal(
            raw in proptest::collection::vec((0.0f64..640.0, 0.0f64..480.0, 0.0f64..500.0), 12..80),
            m in 1usize..12,
            seed in 0u64..1000,
        ) {
            let pts: Vec<_> = raw.iter().map(|&(x, y, z)| Vector3::new(x, y, z)).collect();
            let m = m.min(pts.len());
            let a = kmeans(&pts, m, 1000, seed).unwrap();
            let b = kmeans(&pts, m, 1000, seed).unwrap();
            prop_assert_eq!(&a, &b);
            for (p, &l) in pts.iter().zip(&a.labels) {
                let own = (p - a.centers[l]).norm_squared();
                for c in &a.centers {
                    prop_assert!(own <= (p - c).norm_squared() + 1e-9);
                }
            }
            prop_assert!(a.members.iter().all(|m| !m.is_empty()));
            prop_assert_eq!(a.members.iter().map(|m| m.len()).sum::<usize>(), pts.len());
        }
    }
}
