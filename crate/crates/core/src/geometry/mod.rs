//! Camera geometry: rigid poses, pinhole projection, robust reprojection
//! scoring, two-view epipolar geometry and perspective-n-point.

mod camera;
mod fundamental;
mod pnp;
mod pose;
mod robust;

pub use camera::{back_project, project, CameraIntrinsics};
pub use fundamental::{
    eight_point, epipolar_distance, epipolar_line, estimate_fundamental_ransac,
    fundamental_from_pose, EpipolarLine, FundamentalEstimate, FundamentalMatrix, RansacParams,
};
pub use pnp::{
    epnp, pnp_ransac, pnp_ransac_with_hint, refine_pose, reprojection_cost, Correspondence,
    PnpEstimate, PnpParams,
};
pub use pose::PoseSE3;
pub use robust::{cauchy, cluster_reprojection_error, score_clusters, ClusterScore};

/// Skew-symmetric matrix such that `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &nalgebra::Vector3<f64>) -> nalgebra::Matrix3<f64> {
    nalgebra::Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
