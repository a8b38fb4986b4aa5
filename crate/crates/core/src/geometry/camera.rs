use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::PoseSE3;
use crate::{Error, Result};

/// Pinhole intrinsics plus the depth encoding of the sensor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Depth ticks per meter in the 16-bit depth images.
    pub depth_scale: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraIntrinsics {
    /// TUM fr3 Kinect calibration.
    fn default() -> Self {
        Self {
            fx: 535.4,
            fy: 539.2,
            cx: 320.1,
            cy: 247.6,
            depth_scale: 5000.0,
            width: 640,
            height: 480,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64
            && self.depth_scale > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid camera intrinsics {self:?}")))
        }
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, 0.0, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    pub fn k_inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Projects a point already expressed in the camera frame.
    #[inline]
    pub fn project_camera(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if p.z <= 0.0 {
            return Err(Error::BehindCamera(p.z));
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Camera-frame point at depth `z` along the ray through pixel `(u, v)`.
    #[inline]
    pub fn back_project_camera(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        Vector3::new(z * (u - self.cx) / self.fx, z * (v - self.cy) / self.fy, z)
    }

    /// Pixel to normalized image-plane coordinates.
    #[inline]
    pub fn normalize(&self, px: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((px.x - self.cx) / self.fx, (px.y - self.cy) / self.fy)
    }

    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0
            && px.y >= 0.0
            && px.x <= (self.width - 1) as f64
            && px.y <= (self.height - 1) as f64
    }
}

/// Projects world point `p` through the camera whose world-to-camera pose is
/// `t_cw`.
pub fn project(p: &Vector3<f64>, t_cw: &PoseSE3, k: &CameraIntrinsics) -> Result<Vector2<f64>> {
    k.project_camera(&t_cw.transform_point(p))
}

/// Lifts pixel `(u, v)` with metric depth `z` into the world frame using the
/// camera-to-world pose `t_wl` of the frame the pixel was observed in.
pub fn back_project(
    u: f64,
    v: f64,
    z: f64,
    k: &CameraIntrinsics,
    t_wl: &PoseSE3,
) -> Result<Vector3<f64>> {
    if !(z > 0.0) {
        return Err(Error::NonPositiveDepth(z));
    }
    Ok(t_wl.transform_point(&k.back_project_camera(u, v, z)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

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

    #[test]
    fn projection_examples() {
        let k = k500();
        let id = PoseSE3::identity();
        assert_eq!(
            project(&Vector3::new(0.0, 0.0, 2.0), &id, &k).unwrap(),
            Vector2::new(320.0, 240.0)
        );
        assert_eq!(
            project(&Vector3::new(1.0, 0.0, 2.0), &id, &k).unwrap(),
            Vector2::new(570.0, 240.0)
        );
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, -1.0), &id, &k),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn back_projection_examples() {
        let k = k500();
        let id = PoseSE3::identity();
        assert_eq!(
            back_project(320.0, 240.0, 2.0, &k, &id).unwrap(),
            Vector3::new(0.0, 0.0, 2.0)
        );
        assert_eq!(
            back_project(570.0, 240.0, 2.0, &k, &id).unwrap(),
            Vector3::new(1.0, 0.0, 2.0)
        );
        assert!(back_project(1.0, 1.0, 0.0, &k, &id).is_err());
        assert!(back_project(1.0, 1.0, -1.0, &k, &id).is_err());
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        let mut k = k500();
        assert!(k.validate().is_ok());
        k.cx = 700.0;
        assert!(k.validate().is_err());
        k = k500();
        k.fx = 0.0;
        assert!(k.validate().is_err());
    }

    proptest! {
        #[test]
        fn project_back_project_round_trip(
            u in 0.0f64..640.0, v in 0.0f64..480.0, z in 0.1f64..10.0,
            aa in prop::array::uniform3(-1.0f64..1.0), t in prop::array::uniform3(-2.0f64..2.0),
        ) {
            let k = k500();
            let t_wl = PoseSE3::from_axis_angle(Vector3::from(aa), Vector3::from(t));
            let p = back_project(u, v, z, &k, &t_wl).unwrap();
            let px = project(&p, &t_wl.inverse(), &k).unwrap();
            prop_assert!((px - Vector2::new(u, v)).norm() < 1e-9);
        }
    }
}
