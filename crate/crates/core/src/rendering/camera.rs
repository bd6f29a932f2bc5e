use nalgebra::{Matrix3, Matrix4, Vector3};

use super::RenderError;

/// Pinhole camera. `pose` is camera-to-world with the camera looking down its
/// local -z axis, +x to the right and +y up.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub pose: Matrix4<f64>,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub near: f64,
    pub far: f64,
}

/// `r(t) = origin + t * direction` for `t` in `[near, far]`, `direction` unit length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub direction: Vector3<f64>,
    pub near: f64,
    pub far: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.direction * t
    }
}

/// `0.5 * width / tan(0.5 * fov_x)`.
pub fn focal_from_fov(width: u32, fov_x: f64) -> f64 {
    0.5 * width as f64 / (0.5 * fov_x).tan()
}

impl Camera {
    pub fn new(pose: Matrix4<f64>, width: u32, height: u32, focal: f64, near: f64, far: f64) -> Result<Self, RenderError> {
        let cam = Camera {
            pose,
            width,
            height,
            focal,
            near,
            far,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let rot = self.rotation();
        let err = (rot.transpose() * rot - Matrix3::identity()).abs().max();
        if !(err <= 1e-5) {
            return Err(RenderError::InvalidCamera(format!("rotation is not orthonormal (error {err:.2e})")));
        }
        if !(0.0 <= self.near && self.near < self.far) {
            return Err(RenderError::InvalidCamera(format!(
                "bounds must satisfy 0 <= near < far, got [{}, {}]",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 || !(self.focal > 0.0) {
            return Err(RenderError::InvalidCamera("empty image or non-positive focal length".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` resolving roll.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: u32,
        height: u32,
        focal: f64,
        near: f64,
        far: f64,
    ) -> Result<Self, RenderError> {
        let back = (eye - target).normalize();
        let right = up.cross(&back);
        if right.norm() < 1e-9 {
            return Err(RenderError::InvalidCamera("up vector is parallel to the view axis".into()));
        }
        let right = right.normalize();
        let cam_up = back.cross(&right);
        let mut pose = Matrix4::identity();
        pose.fixed_view_mut::<3, 1>(0, 0).copy_from(&right);
        pose.fixed_view_mut::<3, 1>(0, 1).copy_from(&cam_up);
        pose.fixed_view_mut::<3, 1>(0, 2).copy_from(&back);
        pose.fixed_view_mut::<3, 1>(0, 3).copy_from(&eye);
        Camera::new(pose, width, height, focal, near, far)
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        self.pose.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn origin(&self) -> Vector3<f64> {
        self.pose.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// World-space optical axis.
    pub fn forward(&self) -> Vector3<f64> {
        -self.pose.fixed_view::<3, 1>(0, 2).into_owned()
    }

    /// Ray through the center of pixel `(px, py)` (column, row from the top).
    pub fn ray(&self, px: u32, py: u32) -> Result<Ray, RenderError> {
        if px >= self.width || py >= self.height {
            return Err(RenderError::PixelOutOfBounds {
                x: px,
                y: py,
                width: self.width,
                height: self.height,
            });
        }
        Ok(self.ray_unchecked(px as f64 + 0.5, py as f64 + 0.5))
    }

    /// Ray through continuous image coordinates (pixel corners at integers).
    pub fn ray_unchecked(&self, u: f64, v: f64) -> Ray {
        let local = Vector3::new(
            (u - 0.5 * self.width as f64) / self.focal,
            -(v - 0.5 * self.height as f64) / self.focal,
            -1.0,
        );
        Ray {
            origin: self.origin(),
            direction: (self.rotation() * local).normalize(),
            near: self.near,
            far: self.far,
        }
    }

    /// Same pose and field of view at a scaled resolution.
    pub fn scaled(&self, factor: f64) -> Camera {
        Camera {
            width: ((self.width as f64) * factor).round().max(1.0) as u32,
            height: ((self.height as f64) * factor).round().max(1.0) as u32,
            focal: self.focal * factor,
            ..self.clone()
        }
    }
}

/// Rays through the centers of the listed pixels.
pub fn generate_rays(camera: &Camera, pixels: &[(u32, u32)]) -> Result<Vec<Ray>, RenderError> {
    pixels.iter().map(|&(x, y)| camera.ray(x, y)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_cam(w: u32, h: u32) -> Camera {
        Camera::new(Matrix4::identity(), w, h, 10.0, 0.5, 5.0).unwrap()
    }

    #[test]
    fn center_pixel_follows_optical_axis() {
        let cam = identity_cam(5, 5);
        let ray = cam.ray(2, 2).unwrap();
        assert!((ray.direction - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn adjacent_pixels_differ_horizontally() {
        let cam = identity_cam(8, 8);
        let scale = |r: Ray| r.direction / -r.direction.z;
        let a = scale(cam.ray(3, 4).unwrap());
        let b = scale(cam.ray(4, 4).unwrap());
        let d = b - a;
        assert!((d.x - 0.1).abs() < 1e-12);
        assert!(d.y.abs() < 1e-15 && d.z.abs() < 1e-15);
    }

    #[test]
    fn focal_from_standard_fov() {
        let f = focal_from_fov(800, 0.6911112);
        assert!((f - 1111.11).abs() < 0.01, "{f}");
    }

    #[test]
    fn out_of_bounds_pixel() {
        let cam = identity_cam(4, 3);
        assert!(cam.ray(4, 0).is_err());
        assert!(cam.ray(0, 3).is_err());
    }

    #[test]
    fn rejects_bad_pose_and_bounds() {
        let mut pose = Matrix4::identity();
        pose[(0, 0)] = 2.0;
        assert!(Camera::new(pose, 4, 4, 1.0, 0.0, 1.0).is_err());
        assert!(Camera::new(Matrix4::identity(), 4, 4, 1.0, 2.0, 1.0).is_err());
    }

    #[test]
    fn look_at_points_at_target() {
        let eye = Vector3::new(3.0, -2.0, 1.5);
        let cam = Camera::look_at(eye, Vector3::zeros(), Vector3::z(), 9, 9, 12.0, 0.1, 10.0).unwrap();
        let ray = cam.ray(4, 4).unwrap();
        assert!((ray.direction - (-eye).normalize()).norm() < 1e-12);
        // image up is world up-ish
        let up_ray = cam.ray(4, 0).unwrap();
        assert!(up_ray.direction.z > ray.direction.z);
    }
}
