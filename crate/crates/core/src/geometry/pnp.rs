//! Perspective-n-point: EPnP minimal/overdetermined solver, seeded RANSAC
//! around it, and Gauss-Newton refinement of the reprojection error.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SymmetricEigen, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CameraIntrinsics, PoseSE3};
use crate::{par, Error, Result};

/// A 3D world point and its observed pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub world: Vector3<f64>,
    pub pixel: Vector2<f64>,
}

/// Points whose spread along the third principal axis is below this fraction
/// of the first are treated as planar (three control points).
const PLANAR_RATIO: f64 = 1e-5;
/// Residual assigned to points that land behind the camera.
const BEHIND_PENALTY: f64 = 1e6;

/// Kabsch/Procrustes: rigid `(R, t)` with `camera ≈ R·world + t`.
fn rigid_from_points(world: &[Vector3<f64>], camera: &[Vector3<f64>]) -> Option<PoseSE3> {
    let n = world.len() as f64;
    let cw = world.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let cc = camera.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut h = Matrix3::zeros();
    for (pw, pc) in world.iter().zip(camera) {
        h += (pc - cc) * (pw - cw).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u?;
    let v_t = svd.v_t?;
    let d = (u * v_t).determinant().signum();
    let r = u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t;
    let t = cc - r * cw;
    Some(PoseSE3::from_matrix(&r, t))
}

struct ControlFrame {
    /// Control points in world coordinates; index 0 is the centroid.
    points: Vec<Vector3<f64>>,
    /// Barycentric coordinates of every input point.
    alphas: Vec<Vec<f64>>,
}

fn control_frame(world: &[Vector3<f64>]) -> Result<ControlFrame> {
    let n = world.len() as f64;
    let c0 = world.iter().fold(Vector3::zeros(), |a, p| a + p) / n;
    let mut cov = Matrix3::zeros();
    for p in world {
        let d = p - c0;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let spread: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    if !(spread[0] > 0.0) || spread[1] <= PLANAR_RATIO * spread[0] {
        return Err(Error::Degenerate("world points are collinear"));
    }
    let axes = if spread[2] <= PLANAR_RATIO * spread[0] { 2 } else { 3 };
    let mut points = vec![c0];
    let mut dirs = Vec::with_capacity(axes);
    for a in 0..axes {
        let v: Vector3<f64> = eig.eigenvectors.column(order[a]).into_owned();
        points.push(c0 + v * spread[a]);
        dirs.push((v, spread[a]));
    }
    let alphas = world
        .iter()
        .map(|p| {
            let d = p - c0;
            let mut a = vec![0.0; axes + 1];
            for (j, (v, s)) in dirs.iter().enumerate() {
                a[j + 1] = d.dot(v) / s;
            }
            a[0] = 1.0 - a[1..].iter().sum::<f64>();
            a
        })
        .collect();
    Ok(ControlFrame { points, alphas })
}

/// Least squares `a x = b`. The systems here have at most six unknowns, so
/// the normal equations are tried first; SVD handles the rank-deficient case.
fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.tr_mul(a).cholesky() {
        let x = ch.solve(&a.tr_mul(b));
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    a.clone().svd(true, true).solve(b, 1e-12).ok()
}

/// Index of the product `β_i β_j` (`i ≤ j`) among the `N(N+1)/2` unknowns,
/// ordered `β11, β12, β22, β13, β23, β33, β14, ...`.
#[inline]
fn product_index(i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    j * (j + 1) / 2 + i
}

struct NullSpace {
    /// Null vectors of MᵀM, smallest eigenvalue first.
    vectors: Vec<DVector<f64>>,
    pairs: Vec<(usize, usize)>,
    /// Squared world distances between control-point pairs.
    rho: Vec<f64>,
    /// `dv[i][p]`: difference of the two control points of pair `p` in null
    /// vector `i`.
    dv: Vec<Vec<Vector3<f64>>>,
}

impl NullSpace {
    fn l_row(&self, p: usize, n: usize) -> Vec<f64> {
        let mut row = vec![0.0; n * (n + 1) / 2];
        for j in 0..n {
            for i in 0..=j {
                let d = self.dv[i][p].dot(&self.dv[j][p]);
                row[product_index(i, j)] = if i == j { d } else { 2.0 * d };
            }
        }
        row
    }

    /// Linearised initial betas for the given approximation.
    fn approximate(&self, kind: Approx) -> Option<Vec<f64>> {
        let np = self.pairs.len();
        let nv = self.vectors.len();
        let cols: Vec<usize> = match kind {
            Approx::One => vec![0],
            Approx::Two => vec![0, 1, 2],
            Approx::Three => vec![0, 1, 2, 3, 4],
            Approx::Four => vec![0, 1, 3, 6],
        };
        let n_full = match kind {
            Approx::One => 1,
            Approx::Two => 2,
            Approx::Three | Approx::Four => nv.min(if kind == Approx::Three { 3 } else { 4 }),
        };
        if cols.iter().any(|&c| c >= n_full * (n_full + 1) / 2) || cols.len() > np {
            return None;
        }
        let mut a = DMatrix::zeros(np, cols.len());
        for p in 0..np {
            let row = self.l_row(p, n_full);
            for (c, &col) in cols.iter().enumerate() {
                a[(p, c)] = row[col];
            }
        }
        let b = DVector::from_vec(self.rho.clone());
        let x = lstsq(&a, &b)?;
        let mut betas = vec![0.0; nv];
        let b11 = x[0];
        let beta1 = b11.abs().sqrt();
        if !(beta1 > 0.0) {
            return None;
        }
        betas[0] = beta1;
        match kind {
            Approx::One => {}
            Approx::Two | Approx::Three => {
                let b12 = x[1];
                let b22 = x[2];
                betas[1] = b22.abs().sqrt() * b12.signum() * b11.signum();
                if kind == Approx::Three {
                    betas[2] = x[3] / betas[0];
                }
            }
            Approx::Four => {
                for j in 1..4 {
                    betas[j] = x[j] / betas[0];
                }
            }
        }
        Some(betas)
    }

    /// Gauss-Newton on the control-point distance constraints.
    fn refine_betas(&self, betas: &mut [f64], n: usize) {
        let np = self.pairs.len();
        let rows: Vec<Vec<f64>> = (0..np).map(|p| self.l_row(p, n)).collect();
        for _ in 0..10 {
            let mut jac = DMatrix::zeros(np, n);
            let mut res = DVector::zeros(np);
            for (p, row) in rows.iter().enumerate() {
                let mut value = 0.0;
                for j in 0..n {
                    for i in 0..=j {
                        let l = row[product_index(i, j)];
                        value += l * betas[i] * betas[j];
                        jac[(p, i)] += l * betas[j];
                        jac[(p, j)] += l * betas[i];
                    }
                }
                res[p] = self.rho[p] - value;
            }
            let Some(step) = lstsq(&jac, &res) else { break };
            for i in 0..n {
                betas[i] += step[i];
            }
            if step.norm() < 1e-14 {
                break;
            }
        }
    }

    fn camera_control_points(&self, betas: &[f64], nc: usize) -> Vec<Vector3<f64>> {
        (0..nc)
            .map(|j| {
                let mut c = Vector3::zeros();
                for (b, v) in betas.iter().zip(&self.vectors) {
                    c += Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2]) * *b;
                }
                c
            })
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Approx {
    One,
    Two,
    Three,
    Four,
}

/// EPnP on normalized image coordinates.
fn epnp_normalized(world: &[Vector3<f64>], image: &[Vector2<f64>]) -> Result<PoseSE3> {
    let n = world.len();
    if n < 4 || image.len() != n {
        return Err(Error::NotEnoughPoints { needed: 4, got: n.min(image.len()) });
    }
    let frame = control_frame(world)?;
    let nc = frame.points.len();
    let dim = 3 * nc;

    let mut mtm = DMatrix::<f64>::zeros(dim, dim);
    let mut row_u = vec![0.0; dim];
    let mut row_v = vec![0.0; dim];
    for (alpha, uv) in frame.alphas.iter().zip(image) {
        for j in 0..nc {
            row_u[3 * j] = alpha[j];
            row_u[3 * j + 1] = 0.0;
            row_u[3 * j + 2] = -uv.x * alpha[j];
            row_v[3 * j] = 0.0;
            row_v[3 * j + 1] = alpha[j];
            row_v[3 * j + 2] = -uv.y * alpha[j];
        }
        for a in 0..dim {
            for b in a..dim {
                let v = row_u[a] * row_u[b] + row_v[a] * row_v[b];
                mtm[(a, b)] += v;
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            mtm[(a, b)] = mtm[(b, a)];
        }
    }
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let n_vectors = if nc == 4 { 4 } else { 2 };
    let vectors: Vec<DVector<f64>> = order[..n_vectors]
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    let mut pairs = Vec::new();
    for a in 0..nc {
        for b in a + 1..nc {
            pairs.push((a, b));
        }
    }
    let rho = pairs
        .iter()
        .map(|&(a, b)| (frame.points[a] - frame.points[b]).norm_squared())
        .collect();
    let dv = vectors
        .iter()
        .map(|v| {
            pairs
                .iter()
                .map(|&(a, b)| {
                    Vector3::new(
                        v[3 * a] - v[3 * b],
                        v[3 * a + 1] - v[3 * b + 1],
                        v[3 * a + 2] - v[3 * b + 2],
                    )
                })
                .collect()
        })
        .collect();
    let null = NullSpace {
        vectors,
        pairs,
        rho,
        dv,
    };

    let approximations: &[Approx] = if nc == 4 {
        &[Approx::One, Approx::Two, Approx::Three, Approx::Four]
    } else {
        &[Approx::One, Approx::Two]
    };
    let mut best: Option<(f64, PoseSE3)> = None;
    for &kind in approximations {
        let Some(mut betas) = null.approximate(kind) else { continue };
        null.refine_betas(&mut betas, n_vectors);
        let ccs = null.camera_control_points(&betas, nc);
        let mut pcs: Vec<Vector3<f64>> = frame
            .alphas
            .iter()
            .map(|a| a.iter().zip(&ccs).fold(Vector3::zeros(), |acc, (w, c)| acc + c * *w))
            .collect();
        let mean_z = pcs.iter().map(|p| p.z).sum::<f64>();
        if mean_z < 0.0 {
            pcs.iter_mut().for_each(|p| *p = -*p);
        }
        let Some(pose) = rigid_from_points(world, &pcs) else { continue };
        let err = world
            .iter()
            .zip(image)
            .map(|(w, uv)| {
                let c = pose.transform_point(w);
                if c.z <= 0.0 {
                    BEHIND_PENALTY
                } else {
                    (Vector2::new(c.x / c.z, c.y / c.z) - uv).norm()
                }
            })
            .sum::<f64>();
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    best.map(|(_, p)| p).ok_or(Error::Degenerate("EPnP found no valid solution"))
}

/// EPnP pose `T_cw` from at least four correspondences.
pub fn epnp(corrs: &[Correspondence], k: &CameraIntrinsics) -> Result<PoseSE3> {
    let world: Vec<_> = corrs.iter().map(|c| c.world).collect();
    let image: Vec<_> = corrs.iter().map(|c| k.normalize(&c.pixel)).collect();
    epnp_normalized(&world, &image)
}

#[inline]
fn residual(c: &Correspondence, pose: &PoseSE3, k: &CameraIntrinsics) -> Option<Vector2<f64>> {
    let p = pose.transform_point(&c.world);
    if p.z <= 0.0 {
        return None;
    }
    Some(Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy) - c.pixel)
}

/// Pixel reprojection error, infinite for points behind the camera.
#[inline]
fn reprojection_error(c: &Correspondence, pose: &PoseSE3, k: &CameraIntrinsics) -> f64 {
    residual(c, pose, k).map_or(f64::INFINITY, |r| r.norm())
}

/// Sum of squared pixel residuals.
pub fn reprojection_cost(corrs: &[Correspondence], k: &CameraIntrinsics, pose: &PoseSE3) -> f64 {
    corrs
        .iter()
        .map(|c| residual(c, pose, k).map_or(BEHIND_PENALTY * BEHIND_PENALTY, |r| r.norm_squared()))
        .sum()
}

/// Damped Gauss-Newton on the reprojection cost. A step is only taken when
/// it lowers the cost, so the result is never worse than `init`.
pub fn refine_pose(corrs: &[Correspondence], k: &CameraIntrinsics, init: &PoseSE3, max_iterations: usize) -> PoseSE3 {
    let mut pose = *init;
    let mut cost = reprojection_cost(corrs, k, &pose);
    let mut lambda = 1e-6;
    for _ in 0..max_iterations {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for c in corrs {
            let x = pose.transform_point(&c.world);
            if x.z <= 0.0 {
                continue;
            }
            let iz = 1.0 / x.z;
            let iz2 = iz * iz;
            let r = Vector2::new(k.fx * x.x * iz + k.cx, k.fy * x.y * iz + k.cy) - c.pixel;
            // d(pixel)/d(camera point)
            let du = [k.fx * iz, 0.0, -k.fx * x.x * iz2];
            let dv = [0.0, k.fy * iz, -k.fy * x.y * iz2];
            // camera point derivative w.r.t. [rho, phi] is [I, -[x]x]
            let row = |d: [f64; 3]| {
                Vector6::new(
                    d[0],
                    d[1],
                    d[2],
                    d[1] * -x.z + d[2] * x.y,
                    d[0] * x.z + d[2] * -x.x,
                    d[0] * -x.y + d[1] * x.x,
                )
            };
            let ju = row(du);
            let jv = row(dv);
            h += ju * ju.transpose() + jv * jv.transpose();
            g += ju * r.x + jv * r.y;
        }
        let mut improved = false;
        for _ in 0..8 {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += lambda * (1.0 + h[(i, i)]);
            }
            let Some(step) = damped.cholesky().map(|ch| ch.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = pose.retract(&step);
            let new_cost = reprojection_cost(corrs, k, &candidate);
            if new_cost < cost {
                let converged = step.norm() < 1e-12 || cost - new_cost < 1e-15 * cost.max(1.0);
                pose = candidate;
                cost = new_cost;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !converged;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    pose
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PnpParams {
    pub iterations: usize,
    pub reprojection_threshold: f64,
    pub seed: u64,
    pub sample_size: usize,
}

impl Default for PnpParams {
    fn default() -> Self {
        Self {
            iterations: 100,
            reprojection_threshold: 3.0,
            seed: 42,
            sample_size: 5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PnpEstimate {
    /// World-to-camera pose.
    pub pose: PoseSE3,
    pub inliers: Vec<bool>,
}

impl PnpEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inliers.iter().filter(|&&b| b).count()
    }
}

fn inlier_flags(corrs: &[Correspondence], k: &CameraIntrinsics, pose: &PoseSE3, thr: f64) -> Vec<bool> {
    corrs.iter().map(|c| reprojection_error(c, pose, k) <= thr).collect()
}

/// EPnP inside seeded RANSAC, then Gauss-Newton refinement on the inliers.
pub fn pnp_ransac(corrs: &[Correspondence], k: &CameraIntrinsics, params: &PnpParams) -> Result<PnpEstimate> {
    pnp_ransac_with_hint(corrs, k, params, None)
}

/// As [`pnp_ransac`], with an optional prior pose evaluated as hypothesis
/// zero (it wins ties against sampled hypotheses).
pub fn pnp_ransac_with_hint(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    params: &PnpParams,
    hint: Option<&PoseSE3>,
) -> Result<PnpEstimate> {
    let n = corrs.len();
    if n < 4 {
        return Err(Error::NotEnoughPoints { needed: 4, got: n });
    }
    let thr = params.reprojection_threshold;
    let sample_size = params.sample_size.clamp(4, n);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let samples: Vec<Vec<usize>> = (0..params.iterations.max(1))
        .map(|_| rand::seq::index::sample(&mut rng, n, sample_size).into_vec())
        .collect();

    let count = |pose: &PoseSE3| corrs.iter().filter(|c| reprojection_error(c, pose, k) <= thr).count();
    let scored = par::map(&samples, |idx| {
        let sample: Vec<_> = idx.iter().map(|&i| corrs[i]).collect();
        let pose = epnp(&sample, k).ok()?;
        Some((count(&pose), pose))
    });

    let mut best: Option<(usize, PoseSE3)> = hint.map(|p| (count(p), *p));
    for (c, pose) in scored.into_iter().flatten() {
        if best.as_ref().is_none_or(|(bc, _)| c > *bc) {
            best = Some((c, pose));
        }
    }
    let (best_count, mut pose) = best.ok_or(Error::NoConsensus)?;
    if best_count < 4 {
        return Err(Error::NoConsensus);
    }

    let mut inliers = inlier_flags(corrs, k, &pose, thr);
    for _ in 0..3 {
        let subset: Vec<_> = corrs.iter().zip(&inliers).filter(|(_, &ok)| ok).map(|(c, _)| *c).collect();
        if let Ok(all) = epnp(&subset, k) {
            if reprojection_cost(&subset, k, &all) < reprojection_cost(&subset, k, &pose) {
                pose = all;
            }
        }
        pose = refine_pose(&subset, k, &pose, 20);
        let next = inlier_flags(corrs, k, &pose, thr);
        let unchanged = next == inliers;
        if next.iter().filter(|&&b| b).count() >= 4 {
            inliers = next;
        }
        if unchanged {
            break;
        }
    }
    Ok(PnpEstimate { pose, inliers })
}
