//! Projective geometry primitives: homogeneous points, image lines, planes,
//! pinhole cameras, dual quadrics and dual conics.
//!
//! Conventions used throughout the crate:
//!
//! * Image lines are stored normalized so that `sqrt(l1² + l2²) = 1`, with
//!   the sign chosen so that `l3 ≥ 0` (ties broken by `l1 > 0`, then `l2 > 0`).
//! * Extrinsics are world-to-camera: `X_cam = R · X_world + t`, so that the
//!   projection matrix is literally `P = K [R | t]`.
//! * Dual quadrics are kept on the slice where the (4,4) entry equals one.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, SVector, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

const ZERO_EPS: f64 = 1e-300;
/// Below this magnitude the (4,4) entry of a dual quadric is treated as zero.
pub const QUADRIC_SCALE_EPS: f64 = 1e-12;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// A homogeneous image point, usually in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HomPoint2(Vector3<f64>);

impl HomPoint2 {
    pub fn new(coords: Vector3<f64>) -> Result<Self> {
        if !coords.iter().all(|c| c.is_finite()) || coords.norm() <= ZERO_EPS {
            return Err(Error::DegenerateInput(format!(
                "homogeneous point {:?} is zero or non-finite",
                coords.as_slice()
            )));
        }
        Ok(Self(coords))
    }

    /// The point `(u, v, 1)`.
    pub fn from_pixel(u: f64, v: f64) -> Result<Self> {
        Self::new(Vector3::new(u, v, 1.0))
    }

    pub fn coords(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// A normalized homogeneous image line.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageLine(Vector3<f64>);

impl ImageLine {
    /// Normalizes an arbitrary nonzero 3-vector into the canonical line gauge.
    pub fn new(raw: Vector3<f64>) -> Result<Self> {
        if !raw.iter().all(|c| c.is_finite()) {
            return Err(Error::DegenerateInput("line has non-finite coefficients".into()));
        }
        let dir = raw.x.hypot(raw.y);
        let scale = if dir > ZERO_EPS { dir } else { raw.z.abs() };
        if scale <= ZERO_EPS {
            return Err(Error::DegenerateInput("line is the zero vector".into()));
        }
        let mut l = raw / scale;
        let flip = if l.z != 0.0 {
            l.z < 0.0
        } else if l.x != 0.0 {
            l.x < 0.0
        } else {
            l.y < 0.0
        };
        if flip {
            l = -l;
        }
        Ok(Self(l))
    }

    pub fn coords(&self) -> &Vector3<f64> {
        &self.0
    }

    pub fn is_at_infinity(&self) -> bool {
        self.0.x.hypot(self.0.y) <= ZERO_EPS
    }
}

/// Line through two image points, `a × b`, normalized.
pub fn line_from_points(a: &HomPoint2, b: &HomPoint2) -> Result<ImageLine> {
    let l = a.coords().cross(b.coords());
    // a ∝ b exactly when the cross product vanishes relative to the inputs.
    if l.norm() <= 1e-14 * a.coords().norm() * b.coords().norm() {
        return Err(Error::DegenerateInput(
            "cannot build a line from two coincident points".into(),
        ));
    }
    ImageLine::new(l)
}

/// The four box edges `x1×x2, x2×x3, x3×x4, x4×x1` for cyclically ordered corners.
pub fn bbox_to_lines(corners: &[HomPoint2; 4]) -> Result<[ImageLine; 4]> {
    Ok([
        line_from_points(&corners[0], &corners[1])?,
        line_from_points(&corners[1], &corners[2])?,
        line_from_points(&corners[2], &corners[3])?,
        line_from_points(&corners[3], &corners[0])?,
    ])
}

/// Corners of an axis-aligned box in cyclic order.
pub fn axis_aligned_corners(u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Result<[HomPoint2; 4]> {
    Ok([
        HomPoint2::from_pixel(u_min, v_min)?,
        HomPoint2::from_pixel(u_max, v_min)?,
        HomPoint2::from_pixel(u_max, v_max)?,
        HomPoint2::from_pixel(u_min, v_max)?,
    ])
}

/// A homogeneous plane `π` with `πᵀ X = 0` for points `X` on it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane(Vector4<f64>);

impl Plane {
    pub fn new(coords: Vector4<f64>) -> Result<Self> {
        if !coords.iter().all(|c| c.is_finite()) || coords.norm() <= ZERO_EPS {
            return Err(Error::DegenerateInput("plane is zero or non-finite".into()));
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &Vector4<f64> {
        &self.0
    }

    /// Copy scaled to unit Euclidean norm.
    pub fn normalized(&self) -> Plane {
        Plane(self.0 / self.0.norm())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, width, height };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0) {
            return Err(Error::invalid("fx", "focal length must be positive"));
        }
        if !(self.fy.is_finite() && self.fy > 0.0) {
            return Err(Error::invalid("fy", "focal length must be positive"));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("cx/cy", "principal point must be finite"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("width/height", "image size must be positive"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u <= self.width as f64 && v <= self.height as f64
    }
}

/// Planar robot pose, an element of SE(2).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl RobotPose {
    /// Builds a pose, wrapping the heading into `(-π, π]`.
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta: wrap_angle(theta) }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn rotation(&self) -> nalgebra::Matrix2<f64> {
        let (s, c) = self.theta.sin_cos();
        nalgebra::Matrix2::new(c, -s, s, c)
    }

    /// Maps a world point into this pose's robot frame (z passes through).
    pub fn world_to_robot(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let local = self.rotation().transpose() * (Vector2::new(p.x, p.y) - self.position());
        Vector3::new(local.x, local.y, p.z)
    }

    pub fn robot_to_world(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let w = self.rotation() * Vector2::new(p.x, p.y) + self.position();
        Vector3::new(w.x, w.y, p.z)
    }
}

/// Rigid transform in world-to-camera convention: `X_cam = R X + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraExtrinsics {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraExtrinsics {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if !(ortho <= 1e-12 && (det - 1.0).abs() <= 1e-12) {
            return Err(Error::invalid("rotation", "must be a proper rotation matrix"));
        }
        if !translation.iter().all(|t| t.is_finite()) {
            return Err(Error::invalid("translation", "must be finite"));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Robot-to-camera mount for a camera looking 90° to the left of the
    /// heading: optical axis along robot +y, image x along robot +x
    /// (forward), image y pointing down.
    pub fn left_facing_mount() -> Self {
        Self {
            rotation: Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn inverse_transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// The optical center in world coordinates, `-Rᵀ t`.
    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// The 3×4 matrix `[R | t]`.
    pub fn matrix3x4(&self) -> Matrix3x4<f64> {
        let mut m = Matrix3x4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.set_column(3, &self.translation);
        m
    }
}

/// World-to-camera extrinsics of a camera rigidly mounted on a planar robot.
///
/// The robot pose is lifted to SE(3) on the `z = 0` plane, and `mount` maps
/// robot-frame points into the camera frame.
pub fn pose_to_extrinsics(pose: &RobotPose, mount: &CameraExtrinsics) -> CameraExtrinsics {
    let (s, c) = pose.theta.sin_cos();
    let rz_t = Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0);
    let rotation = mount.rotation * rz_t;
    let translation = mount.translation - rotation * Vector3::new(pose.x, pose.y, 0.0);
    CameraExtrinsics { rotation, translation }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionMatrix(Matrix3x4<f64>);

impl ProjectionMatrix {
    pub fn from_matrix(m: Matrix3x4<f64>) -> Result<Self> {
        if !m.iter().all(|c| c.is_finite()) {
            return Err(Error::invalid("projection", "non-finite entries"));
        }
        let sv = m.singular_values();
        let max = sv.max();
        if !(max > 0.0) || sv.min() <= 1e-12 * max {
            return Err(Error::invalid("projection", "matrix must have rank 3"));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    /// Image of a world point in inhomogeneous pixel coordinates plus depth.
    pub fn project(&self, p: &Vector3<f64>) -> (Vector2<f64>, f64) {
        let h = self.0 * p.push(1.0);
        (Vector2::new(h.x / h.z, h.y / h.z), h.z)
    }
}

/// `P = K [R | t]`.
pub fn projection_matrix(k: &CameraIntrinsics, e: &CameraExtrinsics) -> ProjectionMatrix {
    ProjectionMatrix(k.matrix() * e.matrix3x4())
}

/// Back-projection of an image line to the plane through the camera center, `π = Pᵀ l`.
pub fn backproject_line(p: &ProjectionMatrix, l: &ImageLine) -> Plane {
    Plane(p.0.transpose() * l.coords())
}

/// A dual quadric in its 9-parameter form; the matrix has unit (4,4) entry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualQuadric {
    q: SVector<f64, 9>,
}

impl DualQuadric {
    pub fn from_vector(q: SVector<f64, 9>) -> Self {
        Self { q }
    }

    pub fn from_slice(q: &[f64; 9]) -> Self {
        Self { q: SVector::from_column_slice(q) }
    }

    /// The identity dual quadric, `q = (1,0,0,0,1,0,0,1,0)`.
    pub fn identity() -> Self {
        Self::from_slice(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0])
    }

    pub fn vector(&self) -> &SVector<f64, 9> {
        &self.q
    }

    /// Parameters after an additive update.
    pub fn plus(&self, delta: &SVector<f64, 9>) -> Self {
        Self { q: self.q + delta }
    }

    /// Update in centered coordinates: the shape block `Q_ul - c cᵀ` and the
    /// centroid `c` each move additively. `delta` uses the parameter slots,
    /// so entries 4, 7 and 9 shift the centroid and the rest the shape.
    pub fn plus_centered(&self, delta: &SVector<f64, 9>) -> Self {
        let c = self.centroid();
        let d = delta;
        let c2 = Vector3::new(c.x + d[3], c.y + d[6], c.z + d[8]);
        let shape = |a: usize, b: usize, slot: usize| self.q[slot] - c[a] * c[b] + d[slot] + c2[a] * c2[b];
        Self {
            q: SVector::<f64, 9>::from_column_slice(&[
                shape(0, 0, 0),
                shape(0, 1, 1),
                shape(0, 2, 2),
                c2.x,
                shape(1, 1, 4),
                shape(1, 2, 5),
                c2.y,
                shape(2, 2, 7),
                c2.z,
            ]),
        }
    }

    /// Reconstructs the symmetric 4×4 matrix:
    ///
    /// ```text
    /// | q1 q2 q3 q4 |
    /// | q2 q5 q6 q7 |
    /// | q3 q6 q8 q9 |
    /// | q4 q7 q9 1  |
    /// ```
    pub fn matrix(&self) -> Matrix4<f64> {
        let q = &self.q;
        Matrix4::new(
            q[0], q[1], q[2], q[3], //
            q[1], q[4], q[5], q[6], //
            q[2], q[5], q[7], q[8], //
            q[3], q[6], q[8], 1.0,
        )
    }

    /// Inverse of [`DualQuadric::matrix`]: symmetrizes, divides by the (4,4)
    /// entry and reads off the nine free parameters.
    pub fn from_matrix(m: &Matrix4<f64>) -> Result<Self> {
        let s = (m + m.transpose()) * 0.5;
        let scale = s[(3, 3)];
        if !scale.is_finite() || scale.abs() < QUADRIC_SCALE_EPS {
            return Err(Error::DegenerateQuadric(scale));
        }
        let s = s / scale;
        let q = SVector::<f64, 9>::from_column_slice(&[
            s[(0, 0)],
            s[(0, 1)],
            s[(0, 2)],
            s[(0, 3)],
            s[(1, 1)],
            s[(1, 2)],
            s[(1, 3)],
            s[(2, 2)],
            s[(2, 3)],
        ]);
        if !q.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateQuadric(scale));
        }
        Ok(Self { q })
    }

    /// Quadric centroid `(q4, q7, q9)`.
    pub fn centroid(&self) -> Vector3<f64> {
        Vector3::new(self.q[3], self.q[6], self.q[8])
    }

    /// Applies a point transform `T` to the quadric: `Q*' = T Q* Tᵀ`, renormalized.
    pub fn transformed(&self, t: &Matrix4<f64>) -> Result<Self> {
        Self::from_matrix(&(t * self.matrix() * t.transpose()))
    }

    /// `πᵀ Q* π`.
    pub fn plane_residual(&self, plane: &Plane) -> f64 {
        let p = plane.coords();
        (p.transpose() * self.matrix() * p)[(0, 0)]
    }
}

/// Dual quadric of an ellipsoid with the given center, semi-axes and
/// orientation: `T · diag(a², b², c², -1) · Tᵀ`, scaled so the (4,4) entry is one.
pub fn ellipsoid_to_dual_quadric(
    center: &Vector3<f64>,
    semi_axes: &Vector3<f64>,
    rotation: &Matrix3<f64>,
) -> Result<DualQuadric> {
    if !semi_axes.iter().all(|a| a.is_finite() && *a > 0.0) {
        return Err(Error::invalid("semi_axes", "all semi-axes must be positive"));
    }
    if !center.iter().all(|c| c.is_finite()) {
        return Err(Error::invalid("center", "must be finite"));
    }
    let mut t = Matrix4::identity();
    t.fixed_view_mut::<3, 3>(0, 0).copy_from(rotation);
    t.fixed_view_mut::<3, 1>(0, 3).copy_from(center);
    let shape = Matrix4::from_diagonal(&Vector4::new(
        semi_axes.x * semi_axes.x,
        semi_axes.y * semi_axes.y,
        semi_axes.z * semi_axes.z,
        -1.0,
    ));
    DualQuadric::from_matrix(&(t * shape * t.transpose()))
}

/// A dual conic `C*` with tangent lines satisfying `lᵀ C* l = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualConic(Matrix3<f64>);

impl DualConic {
    pub fn new(m: Matrix3<f64>) -> Self {
        Self((m + m.transpose()) * 0.5)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn line_residual(&self, l: &Vector3<f64>) -> f64 {
        (l.transpose() * self.0 * l)[(0, 0)]
    }

    /// Axis-aligned bounding box `(u_min, v_min, u_max, v_max)` of the conic
    /// outline, found from its vertical and horizontal tangent lines. `None`
    /// when the conic has no real tangents in one of the two directions.
    pub fn bounding_box(&self) -> Option<[f64; 4]> {
        let c = &self.0;
        // Vertical tangents (1, 0, -u): c11 - 2u c13 + u² c33 = 0.
        let (u0, u1) = solve_quadratic(c[(2, 2)], -2.0 * c[(0, 2)], c[(0, 0)])?;
        let (v0, v1) = solve_quadratic(c[(2, 2)], -2.0 * c[(1, 2)], c[(1, 1)])?;
        Some([u0.min(u1), v0.min(v1), u0.max(u1), v0.max(v1)])
    }
}

fn solve_quadratic(a: f64, b: f64, c: f64) -> Option<(f64, f64)> {
    if a.abs() < 1e-300 {
        return None;
    }
    let disc = b * b - 4.0 * a * c;
    if !(disc >= 0.0) {
        return None;
    }
    let sq = disc.sqrt();
    // Numerically stable pair of roots.
    let q = -0.5 * (b + b.signum() * sq);
    if q == 0.0 {
        return Some((0.0, 0.0));
    }
    Some((q / a, c / q))
}

/// `C* = P Q* Pᵀ`.
pub fn project_quadric(p: &ProjectionMatrix, q: &DualQuadric) -> DualConic {
    DualConic::new(p.0 * q.matrix() * p.0.transpose())
}

/// Tangency residual `lᵀ P Q* Pᵀ l` for a normalized line.
pub fn tangency_residual(l: &ImageLine, p: &ProjectionMatrix, q: &DualQuadric) -> f64 {
    tangency_residual_raw(l.coords(), p, q)
}

/// Same as [`tangency_residual`] but on an arbitrary, unnormalized 3-vector.
pub fn tangency_residual_raw(l: &Vector3<f64>, p: &ProjectionMatrix, q: &DualQuadric) -> f64 {
    let plane = p.0.transpose() * l;
    (plane.transpose() * q.matrix() * plane)[(0, 0)]
}
