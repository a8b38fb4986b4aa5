//! Trajectory I/O and ATE / RPE metrics.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use crate::dataset::associate;
use crate::geometry::PoseSE3;
use crate::{Error, Result};

/// Timestamp tolerance when pairing estimated and reference poses.
pub const DEFAULT_MAX_TIME_DIFF: f64 = 0.02;

/// Timestamped camera-to-world poses, strictly increasing in time.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    samples: Vec<(f64, PoseSE3)>,
}

impl Trajectory {
    pub fn new(samples: Vec<(f64, PoseSE3)>) -> Result<Self> {
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidArgument("trajectory timestamps must strictly increase".into()));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[(f64, PoseSE3)] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.0).collect()
    }

    /// Applies `t` on the left of every pose.
    pub fn transformed(&self, t: &PoseSE3) -> Self {
        Self {
            samples: self.samples.iter().map(|(ts, p)| (*ts, *t * *p)).collect(),
        }
    }

    /// Parses "timestamp tx ty tz qx qy qz qw" lines; '#' starts a comment.
    /// Samples are sorted by time on read.
    pub fn parse_tum(text: &str, source: &Path) -> Result<Self> {
        let mut samples = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let malformed = || Error::MalformedLine {
                path: source.to_path_buf(),
                line: i + 1,
                content: line.to_string(),
            };
            let v: Vec<f64> = body
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| malformed())?;
            if v.len() != 8 {
                return Err(malformed());
            }
            let pose = PoseSE3::from_tum([v[1], v[2], v[3]], [v[4], v[5], v[6], v[7]]).map_err(|_| malformed())?;
            samples.push((v[0], pose));
        }
        samples.sort_by(|a, b| a.0.total_cmp(&b.0));
        samples.dedup_by(|b, a| a.0 == b.0);
        Self::new(samples)
    }

    pub fn read_tum(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_tum(&text, path)
    }

    pub fn to_tum_string(&self) -> String {
        let mut out = String::new();
        for (ts, pose) in &self.samples {
            let (t, q) = pose.to_tum();
            let _ = writeln!(
                out,
                "{ts:.6} {:.10} {:.10} {:.10} {:.10} {:.10} {:.10} {:.10}",
                t[0], t[1], t[2], q[0], q[1], q[2], q[3]
            );
        }
        out
    }

    pub fn write_tum(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tum_string()).map_err(|e| Error::io(path, e))
    }
}

/// Index pairs `(est, gt)` whose timestamps differ by at most `max_diff`.
pub fn associate_trajectories(est: &Trajectory, gt: &Trajectory, max_diff: f64) -> Vec<(usize, usize)> {
    associate(&est.timestamps(), &gt.timestamps(), max_diff)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Alignment {
    /// Maps estimated positions onto the reference.
    pub transform: PoseSE3,
    /// The positions are (nearly) collinear, so rotation about their common
    /// line is not determined.
    pub degenerate: bool,
}

/// Least-squares rigid alignment (no scale) of `source` points onto
/// `target` points.
pub fn umeyama(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> Result<Alignment> {
    let n = source.len();
    if n < 3 || target.len() != n {
        return Err(Error::NotEnoughPoints { needed: 3, got: n.min(target.len()) });
    }
    let mu_s = source.iter().sum::<Vector3<f64>>() / n as f64;
    let mu_t = target.iter().sum::<Vector3<f64>>() / n as f64;
    let mut sigma = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        sigma += (t - mu_t) * (s - mu_s).transpose();
    }
    sigma /= n as f64;
    let svd = sigma.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let spread = |pts: &[Vector3<f64>], mu: &Vector3<f64>| {
        let mut c = Matrix3::zeros();
        for p in pts {
            c += (p - mu) * (p - mu).transpose();
        }
        let mut e: Vec<f64> = c.symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(|a, b| b.total_cmp(a));
        e[1] <= 1e-12 * e[0].max(f64::MIN_POSITIVE)
    };
    let degenerate = spread(source, &mu_s) || spread(target, &mu_t) || sv[1] <= 1e-12 * sv[0].max(f64::MIN_POSITIVE);
    let d = (u.determinant() * v_t.determinant()).signum();
    let s = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if d == 0.0 { 1.0 } else { d }));
    let r = u * s * v_t;
    let t = mu_t - r * mu_s;
    Ok(Alignment {
        transform: PoseSE3::from_matrix(&r, t),
        degenerate,
    })
}

/// Rigid transform taking the estimated positions onto the reference ones,
/// over timestamp-associated pairs.
pub fn align_umeyama(est: &Trajectory, gt: &Trajectory) -> Result<Alignment> {
    let pairs = associate_trajectories(est, gt, DEFAULT_MAX_TIME_DIFF);
    let (s, t) = positions(est, gt, &pairs);
    umeyama(&s, &t)
}

fn positions(est: &Trajectory, gt: &Trajectory, pairs: &[(usize, usize)]) -> (Vec<Vector3<f64>>, Vec<Vector3<f64>>) {
    pairs
        .iter()
        .map(|&(i, j)| (est.samples[i].1.translation(), gt.samples[j].1.translation()))
        .unzip()
}

/// RMSE of position residuals after rigid alignment, in meters.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    let pairs = associate_trajectories(est, gt, DEFAULT_MAX_TIME_DIFF);
    if pairs.is_empty() {
        return Err(Error::NoEntries("associated pose"));
    }
    let (s, t) = positions(est, gt, &pairs);
    let align = umeyama(&s, &t)?;
    let sum: f64 = s
        .iter()
        .zip(&t)
        .map(|(a, b)| (align.transform.transform_point(a) - b).norm_squared())
        .sum();
    Ok((sum / s.len() as f64).sqrt())
}

/// Translational (m/s) and rotational (°/s) RPE RMSE over pose pairs `delta`
/// seconds apart.
pub fn rpe_rmse(est: &Trajectory, gt: &Trajectory, delta: f64) -> Result<(f64, f64)> {
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument("RPE delta must be positive".into()));
    }
    let pairs = associate_trajectories(est, gt, DEFAULT_MAX_TIME_DIFF);
    // Tolerate timestamps printed to microseconds.
    let min_gap = delta - 1e-6;
    let (mut sum_t, mut sum_r, mut count) = (0.0, 0.0, 0usize);
    for a in 0..pairs.len() {
        let ta = gt.samples[pairs[a].1].0;
        let Some(b) = (a + 1..pairs.len()).find(|&b| gt.samples[pairs[b].1].0 - ta >= min_gap) else {
            break;
        };
        let (ei, gi) = (est.samples[pairs[a].0].1, gt.samples[pairs[a].1].1);
        let (ej, gj) = (est.samples[pairs[b].0].1, gt.samples[pairs[b].1].1);
        let rel_gt = gi.inverse() * gj;
        let rel_est = ei.inverse() * ej;
        let e = rel_gt.inverse() * rel_est;
        sum_t += (e.translation().norm() / delta).powi(2);
        sum_r += (e.rotation_angle().to_degrees() / delta).powi(2);
        count += 1;
    }
    if count == 0 {
        return Err(Error::NoEntries("RPE pose pair"));
    }
    Ok(((sum_t / count as f64).sqrt(), (sum_r / count as f64).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsReport {
    pub ate_rmse: f64,
    /// Absent when the trajectories do not span `delta`.
    pub rpe_trans_rmse: Option<f64>,
    pub rpe_rot_rmse: Option<f64>,
    pub matched_pair_count: usize,
    pub alignment_degenerate: bool,
}

impl MetricsReport {
    pub fn to_key_values(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("nan".to_string(), |v| format!("{v:.9}"));
        format!(
            "ate_rmse_m = {:.9}\nrpe_trans_rmse_m_per_s = {}\nrpe_rot_rmse_deg_per_s = {}\nmatched_pairs = {}\nalignment_degenerate = {}\n",
            self.ate_rmse,
            opt(self.rpe_trans_rmse),
            opt(self.rpe_rot_rmse),
            self.matched_pair_count,
            self.alignment_degenerate
        )
    }
}

pub fn evaluate(est: &Trajectory, gt: &Trajectory, delta: f64) -> Result<MetricsReport> {
    let pairs = associate_trajectories(est, gt, DEFAULT_MAX_TIME_DIFF);
    let ate = ate_rmse(est, gt)?;
    let alignment = align_umeyama(est, gt)?;
    let rpe = rpe_rmse(est, gt, delta).ok();
    Ok(MetricsReport {
        ate_rmse: ate,
        rpe_trans_rmse: rpe.map(|r| r.0),
        rpe_rot_rmse: rpe.map(|r| r.1),
        matched_pair_count: pairs.len(),
        alignment_degenerate: alignment.degenerate,
    })
}
