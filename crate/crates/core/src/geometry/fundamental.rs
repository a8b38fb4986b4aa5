use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{skew, CameraIntrinsics, PoseSE3};
use crate::{par, Error, Result};

/// Rank-2 two-view matrix with `p2ᵀ F p1 = 0`, stored at unit Frobenius norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    /// Forces rank 2 and rescales to unit Frobenius norm.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let svd = m.svd(true, true);
        let (u, v_t) = match (svd.u, svd.v_t) {
            (Some(u), Some(v_t)) => (u, v_t),
            _ => return Err(Error::Degenerate("svd of fundamental matrix failed")),
        };
        let mut s = svd.singular_values;
        let min = s.imin();
        s[min] = 0.0;
        let f = u * Matrix3::from_diagonal(&s) * v_t;
        let norm = f.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Degenerate("zero fundamental matrix"));
        }
        Ok(Self(f / norm))
    }

    /// Rescales a matrix that is already rank 2. Avoids an SVD round trip,
    /// which loses precision on the tiny pixel-space entries.
    fn from_rank2(m: &Matrix3<f64>) -> Result<Self> {
        let norm = m.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Degenerate("zero fundamental matrix"));
        }
        Ok(Self(m / norm))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn scaled(&self, s: f64) -> Matrix3<f64> {
        self.0 * s
    }
}

/// Homogeneous image line `A·u + B·v + C = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpipolarLine {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Analytic `F = K⁻ᵀ [t]ₓ R K⁻¹` for the relative pose `t_21` mapping frame-1
/// coordinates into frame 2.
pub fn fundamental_from_pose(k: &CameraIntrinsics, t_21: &PoseSE3) -> Result<FundamentalMatrix> {
    fundamental_from_pose_k(&k.k_matrix(), t_21)
}

pub(crate) fn fundamental_from_pose_k(k: &Matrix3<f64>, t_21: &PoseSE3) -> Result<FundamentalMatrix> {
    let t = t_21.translation();
    if t.norm() == 0.0 {
        return Err(Error::Degenerate("zero translation leaves F undefined"));
    }
    let k_inv = k
        .try_inverse()
        .ok_or(Error::Degenerate("singular intrinsics"))?;
    let e = skew(&t) * t_21.rotation_matrix();
    FundamentalMatrix::from_rank2(&(k_inv.transpose() * e * k_inv))
}

/// Epipolar line in the second image for homogeneous point `p1` of the
/// first: `(A, B, C) = F·p1`.
pub fn epipolar_line(f: &Matrix3<f64>, p1: &Vector3<f64>) -> Result<EpipolarLine> {
    let l = f * p1;
    if l.x == 0.0 && l.y == 0.0 {
        return Err(Error::Degenerate("point is the epipole; line undefined"));
    }
    Ok(EpipolarLine {
        a: l.x,
        b: l.y,
        c: l.z,
    })
}

/// Pixel distance from `p2` to the epipolar line of `p1`:
/// `|p2ᵀ F p1| / √(A² + B²)`.
pub fn epipolar_distance(f: &Matrix3<f64>, p1: &Vector3<f64>, p2: &Vector3<f64>) -> Result<f64> {
    let l = epipolar_line(f, p1)?;
    Ok((p2.x * l.a + p2.y * l.b + p2.z * l.c).abs() / l.a.hypot(l.b))
}

#[inline]
fn distance_or_inf(f: &Matrix3<f64>, p1: &Vector2<f64>, p2: &Vector2<f64>) -> f64 {
    epipolar_distance(f, &p1.push(1.0), &p2.push(1.0)).unwrap_or(f64::INFINITY)
}

/// Similarity taking the points to zero mean and `√2` mean distance.
fn hartley_normalization(points: &[Vector2<f64>]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let mean_dist = points.iter().map(|p| (p - mean).norm()).sum::<f64>() / n;
    if !(mean_dist > 1e-12) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(
        s,
        0.0,
        -s * mean.x,
        0.0,
        s,
        -s * mean.y,
        0.0,
        0.0,
        1.0,
    ))
}

/// Normalized 8-point algorithm over `n ≥ 8` correspondences.
pub fn eight_point(p1: &[Vector2<f64>], p2: &[Vector2<f64>]) -> Result<FundamentalMatrix> {
    let n = p1.len();
    if n < 8 || p2.len() != n {
        return Err(Error::NotEnoughPoints { needed: 8, got: n.min(p2.len()) });
    }
    let t1 = hartley_normalization(p1).ok_or(Error::Degenerate("coincident points"))?;
    let t2 = hartley_normalization(p2).ok_or(Error::Degenerate("coincident points"))?;

    // Pad to at least 9 rows so the thin SVD yields the full right basis.
    let rows = n.max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (x1, x2)) in p1.iter().zip(p2).enumerate() {
        let q1 = t1 * x1.push(1.0);
        let q2 = t2 * x2.push(1.0);
        let (u1, v1, u2, v2) = (q1.x, q1.y, q2.x, q2.y);
        let row = [u2 * u1, u2 * v1, u2, v2 * u1, v2 * v1, v2, u1, v1, 1.0];
        for (j, val) in row.into_iter().enumerate() {
            a[(i, j)] = val;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or(Error::Degenerate("svd of design matrix failed"))?;
    let min = svd.singular_values.imin();
    let f_norm = Matrix3::from_row_slice(&v_t.row(min).iter().copied().collect::<Vec<_>>());
    let f_norm = FundamentalMatrix::from_matrix(&f_norm)?;
    FundamentalMatrix::from_rank2(&(t2.transpose() * f_norm.0 * t1))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    pub inlier_threshold: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 200,
            inlier_threshold: 1.0,
            seed: 42,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FundamentalEstimate {
    pub f: FundamentalMatrix,
    pub inliers: Vec<bool>,
}

impl FundamentalEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn nearly_collinear(points: &[Vector2<f64>]) -> bool {
    let n = points.len() as f64;
    let mean = points.iter().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in points {
        let d = p - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    // smallest eigenvalue of the scatter matrix relative to the largest
    let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
    let (lmax, lmin) = (tr / 2.0 + disc, tr / 2.0 - disc);
    !(lmax > 0.0) || lmin <= 1e-9 * lmax
}

fn count_inliers(f: &Matrix3<f64>, p1: &[Vector2<f64>], p2: &[Vector2<f64>], thr: f64) -> usize {
    p1.iter()
        .zip(p2)
        .filter(|(a, b)| distance_or_inf(f, a, b) <= thr)
        .count()
}

/// Two-pass robust fundamental matrix estimation.
///
/// Pass 1 runs seeded RANSAC over normalized 8-point minimal samples, scoring
/// each hypothesis by the number of matches within `inlier_threshold` of
/// their epipolar line (ties go to the earliest hypothesis). Pass 2 re-fits F
/// on all pass-1 inliers, so matches that violate the constraint no longer
/// influence the final matrix; inlier flags are recomputed against it.
pub fn estimate_fundamental_ransac(
    p1: &[Vector2<f64>],
    p2: &[Vector2<f64>],
    params: &RansacParams,
) -> Result<FundamentalEstimate> {
    let n = p1.len();
    if n < 8 || p2.len() != n {
        return Err(Error::NotEnoughPoints { needed: 8, got: n.min(p2.len()) });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let samples: Vec<Vec<usize>> = (0..params.iterations.max(1))
        .map(|_| rand::seq::index::sample(&mut rng, n, 8).into_vec())
        .collect();

    let thr = params.inlier_threshold;
    let scored = par::map(&samples, |idx| {
        let s1: Vec<_> = idx.iter().map(|&i| p1[i]).collect();
        let s2: Vec<_> = idx.iter().map(|&i| p2[i]).collect();
        if nearly_collinear(&s1) || nearly_collinear(&s2) {
            return None;
        }
        let f = eight_point(&s1, &s2).ok()?;
        Some((count_inliers(&f.0, p1, p2, thr), f))
    });

    let mut best: Option<(usize, FundamentalMatrix)> = None;
    for (count, f) in scored.into_iter().flatten() {
        if best.as_ref().is_none_or(|(c, _)| count > *c) {
            best = Some((count, f));
        }
    }
    let (_, mut f) = best.ok_or(Error::Degenerate("all RANSAC samples were collinear"))?;

    let first: Vec<bool> = p1.iter().zip(p2).map(|(a, b)| distance_or_inf(&f.0, a, b) <= thr).collect();
    let (q1, q2): (Vec<_>, Vec<_>) = first
        .iter()
        .enumerate()
        .filter(|(_, &ok)| ok)
        .map(|(i, _)| (p1[i], p2[i]))
        .unzip();
    if q1.len() >= 8 {
        if let Ok(refit) = eight_point(&q1, &q2) {
            f = refit;
        }
    }
    let inliers = p1.iter().zip(p2).map(|(a, b)| distance_or_inf(&f.0, a, b) <= thr).collect();
    Ok(FundamentalEstimate { f, inliers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::*;
    use nalgebra::Vector3;
    use rand::Rng;

    mod approx_eq {
        use nalgebra::Matrix3;

        /// Equality up to a non-zero scale (including sign).
        pub fn proportional(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) -> bool {
            let an = a / a.norm();
            let bn = b / b.norm();
            (an - bn).norm() < tol || (an + bn).norm() < tol
        }
    }

    fn identity_k() -> Matrix3<f64> {
        Matrix3::identity()
    }

    fn pure_x() -> FundamentalMatrix {
        fundamental_from_pose_k(&identity_k(), &PoseSE3::from_translation(Vector3::new(1.0, 0.0, 0.0))).unwrap()
    }

    #[test]
    fn pure_translation_is_skew() {
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
        let f = pure_x();
        assert!(proportional(f.matrix(), &expected, 1e-12));
        assert!(f.matrix().determinant().abs() < 1e-12);
        assert!((f.matrix().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_translation_is_rejected() {
        assert!(fundamental_from_pose_k(&identity_k(), &PoseSE3::identity()).is_err());
    }

    #[test]
    fn epipolar_line_examples() {
        let f = pure_x();
        let (u, v) = (12.0, 34.0);
        let l = epipolar_line(f.matrix(), &Vector3::new(u, v, 1.0)).unwrap();
        // (0, -1, v) up to scale
        let s = -l.b;
        assert!(l.a.abs() < 1e-12);
        assert!((l.c / s - v).abs() < 1e-12);

        let p = Vector3::new(3.0, -7.0, 1.0);
        let l1 = epipolar_line(f.matrix(), &p).unwrap();
        let l2 = epipolar_line(f.matrix(), &(p * 2.5)).unwrap();
        assert!((l2.a - 2.5 * l1.a).abs() < 1e-12);
        assert!((l2.b - 2.5 * l1.b).abs() < 1e-12);
        assert!((l2.c - 2.5 * l1.c).abs() < 1e-12);

        // epipole of a pure x translation is the point at infinity (1, 0, 0)
        assert!(epipolar_line(f.matrix(), &Vector3::new(1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn epipolar_distance_examples() {
        let f = pure_x();
        let (u, v) = (12.0, 34.0);
        let p1 = Vector3::new(u, v, 1.0);
        let on_line = Vector3::new(99.0, v, 1.0);
        assert!(epipolar_distance(f.matrix(), &p1, &on_line).unwrap() < 1e-12);
        let off = Vector3::new(-5.0, v + 2.0, 1.0);
        assert!((epipolar_distance(f.matrix(), &p1, &off).unwrap() - 2.0).abs() < 1e-12);
        let base = epipolar_distance(f.matrix(), &p1, &off).unwrap();
        // power-of-two scales are exact in floating point
        for s in [-4.0, 0.5, 8.0] {
            assert_eq!(epipolar_distance(&f.scaled(s), &p1, &off).unwrap(), base);
        }
        for s in [-3.0, 0.3, 7.0, 1e6] {
            let d = epipolar_distance(&f.scaled(s), &p1, &off).unwrap();
            assert!((d - base).abs() <= 1e-12 * base);
        }
    }

    fn two_view(rng: &mut impl Rng, n: usize) -> (CameraIntrinsics, PoseSE3, Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
        let k = CameraIntrinsics::default();
        let t_21 = PoseSE3::from_axis_angle(
            Vector3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1)),
            Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.1..0.1)),
        );
        let mut p1 = Vec::new();
        let mut p2 = Vec::new();
        while p1.len() < n {
            let x = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-1.5..1.5), rng.random_range(2.0..8.0));
            let (Ok(a), Ok(b)) = (k.project_camera(&x), k.project_camera(&t_21.transform_point(&x))) else {
                continue;
            };
            p1.push(a);
            p2.push(b);
        }
        (k, t_21, p1, p2)
    }

    #[test]
    fn analytic_f_satisfies_constraint() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (k, t, p1, p2) = two_view(&mut rng, 100);
        let f = fundamental_from_pose(&k, &t).unwrap();
        for (a, b) in p1.iter().zip(&p2) {
            let r = b.push(1.0).dot(&(f.matrix() * a.push(1.0)));
            assert!(r.abs() < 1e-12, "{r}");
            assert!(distance_or_inf(f.matrix(), a, b) < 1e-9);
        }
    }

    #[test]
    fn noise_free_estimate_has_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (k, t, p1, p2) = two_view(&mut rng, 60);
        let est = estimate_fundamental_ransac(&p1, &p2, &RansacParams::default()).unwrap();
        assert_eq!(est.inlier_count(), 60);
        for (a, b) in p1.iter().zip(&p2) {
            assert!(distance_or_inf(est.f.matrix(), a, b) < 1e-6);
        }
        let truth = fundamental_from_pose(&k, &t).unwrap();
        assert!(proportional(est.f.matrix(), truth.matrix(), 1e-5));
    }

    #[test]
    fn outliers_are_classified() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (_, _, p1, mut p2) = two_view(&mut rng, 100);
        let mut truth = vec![true; 100];
        for i in 0..30 {
            p2[i] = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            truth[i] = false;
        }
        let est = estimate_fundamental_ransac(&p1, &p2, &RansacParams::default()).unwrap();
        let correct = est.inliers.iter().zip(&truth).filter(|(a, b)| a == b).count();
        assert!(correct >= 95, "correct = {correct}");
    }

    #[test]
    fn ransac_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, _, p1, mut p2) = two_view(&mut rng, 50);
        for p in p2.iter_mut().take(10) {
            p.x += 13.0;
        }
        let a = estimate_fundamental_ransac(&p1, &p2, &RansacParams::default()).unwrap();
        let b = estimate_fundamental_ransac(&p1, &p2, &RansacParams::default()).unwrap();
        assert_eq!(a.f, b.f);
        assert_eq!(a.inliers, b.inliers);
    }

    #[test]
    fn too_few_or_collinear_matches() {
        let p: Vec<_> = (0..7).map(|i| Vector2::new(i as f64, (i * i) as f64)).collect();
        assert!(matches!(
            estimate_fundamental_ransac(&p, &p, &RansacParams::default()),
            Err(Error::NotEnoughPoints { needed: 8, got: 7 })
        ));
        let line: Vec<_> = (0..20).map(|i| Vector2::new(i as f64, 2.0 * i as f64)).collect();
        assert!(matches!(
            estimate_fundamental_ransac(&line, &line, &RansacParams::default()),
            Err(Error::Degenerate(_))
        ));
    }
}
