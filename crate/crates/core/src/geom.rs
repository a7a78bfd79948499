//! Shared geometric primitives: planar/spatial vector aliases, angle helpers
//! and the pinhole camera model used by both perception pipelines.

use nalgebra::{Isometry3, Point3, Vector2, Vector3};
use num_traits::Float;

/// Planar vector/point in arena meters (or image pixels where stated).
pub type Vec2 = Vector2<f64>;
/// Spatial vector/point in arena meters.
pub type Vec3 = Vector3<f64>;
/// Rigid transform between frames.
pub type Iso3 = Isometry3<f64>;

/// Left-hand perpendicular of a planar vector.
#[inline]
pub fn perp(v: Vec2) -> Vec2 {
    Vec2::new(-v.y, v.x)
}

/// Rotate a planar vector counter-clockwise by `angle` radians.
#[inline]
pub fn rotate2(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = Float::sin_cos(angle);
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

/// Normalize an undirected line angle into `[0, pi)`.
pub fn line_angle(a: f64) -> f64 {
    let pi = core::f64::consts::PI;
    let mut a = a % pi;
    if a < 0.0 {
        a += pi;
    }
    if a >= pi {
        a -= pi;
    }
    a
}

/// Absolute difference between two undirected line angles, in `[0, pi/2]`.
pub fn line_angle_diff(a: f64, b: f64) -> f64 {
    let pi = core::f64::consts::PI;
    let d = Float::abs(line_angle(a) - line_angle(b));
    Float::min(d, pi - d)
}

/// Pinhole camera with a rigid pose, shared by the platform and object
/// detection pipelines.
#[derive(Debug, Clone)]
pub struct CameraView {
    /// Focal length, px.
    pub fx: f64,
    /// Focal length, px.
    pub fy: f64,
    /// Principal point, px.
    pub cx: f64,
    /// Principal point, px.
    pub cy: f64,
    /// Image width, px (used for visibility and boundary-error models).
    pub width: f64,
    /// Image height, px.
    pub height: f64,
    /// Rigid transform taking arena-frame points into the camera frame
    /// (z forward out of the lens, x right, y down).
    pub pose: Iso3,
}

impl CameraView {
    /// Camera optical center in the arena frame.
    pub fn center(&self) -> Vec3 {
        self.pose.inverse_transform_point(&Point3::origin()).coords
    }

    /// Normalized image vector `(u_x - c_x)/f_x, (u_y - c_y)/f_y, 1` for a pixel.
    pub fn normalized(&self, pixel: Vec2) -> Vec3 {
        Vec3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    /// Project an arena-frame point; `None` when it lies behind the camera.
    pub fn project(&self, point: Vec3) -> Option<Vec2> {
        let c = self.pose.transform_point(&Point3::from(point));
        if c.z <= 1e-9 {
            return None;
        }
        Some(Vec2::new(
            self.fx * c.x / c.z + self.cx,
            self.fy * c.y / c.z + self.cy,
        ))
    }

    /// Back-projected ray of a pixel: `(origin, direction)` in the arena frame.
    /// The direction is not normalized.
    pub fn ray(&self, pixel: Vec2) -> (Vec3, Vec3) {
        let origin = self.center();
        let dir = self.pose.inverse_transform_vector(&self.normalized(pixel));
        (origin, dir)
    }

    /// True when a pixel lies inside the image bounds.
    pub fn in_image(&self, pixel: Vec2) -> bool {
        pixel.x >= 0.0 && pixel.x < self.width && pixel.y >= 0.0 && pixel.y < self.height
    }

    /// Normalized distance of a pixel from the image center: 0 at the
    /// principal point, 1 at the image corner.
    pub fn boundary_fraction(&self, pixel: Vec2) -> f64 {
        let half = Vec2::new(self.width * 0.5, self.height * 0.5);
        let d = Vec2::new(pixel.x - half.x, pixel.y - half.y);
        let corner = Float::hypot(half.x, half.y);
        Float::min(d.norm() / corner, 1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn line_angles_fold_onto_half_circle() {
        assert!((line_angle(PI + 0.3) - 0.3).abs() < 1e-12);
        assert!((line_angle(-0.3) - (PI - 0.3)).abs() < 1e-12);
        assert!(line_angle_diff(0.05, PI - 0.05) - 0.1 < 1e-12);
        assert!((line_angle_diff(0.0, FRAC_PI_2) - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn rotate2_quarter_turn() {
        let v = rotate2(Vec2::new(1.0, 0.0), FRAC_PI_2);
        assert!((v - Vec2::new(0.0, 1.0)).norm() < 1e-12);
    }
}
