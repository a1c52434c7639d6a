//! Initial values for the solver: poses by chaining odometry, quadrics by a
//! linear plane-tangency fit or the identity quadric.

use nalgebra::{DMatrix, SVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factors::{motion_model, plane_coefficients, pose_projection, BBoxDetection, OdometryMeasurement};
use crate::geometry::{CameraExtrinsics, CameraIntrinsics, DualQuadric, RobotPose, QUADRIC_SCALE_EPS};

/// Minimum number of detections for a well-posed linear fit.
pub const MIN_DETECTIONS: usize = 3;

/// Second-smallest singular value, relative to the largest, at or below
/// which the constraint matrix has a null space of dimension two or more.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    Identity,
    Svd,
    SvdWithFallback,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitStrategy {
    pub mode: InitMode,
    /// SVD fits are accepted only when `σ_min / σ_second < condition_threshold`.
    pub condition_threshold: f64,
}

impl Default for InitStrategy {
    fn default() -> Self {
        Self { mode: InitMode::Identity, condition_threshold: 0.1 }
    }
}

impl InitStrategy {
    pub fn validate(&self) -> Result<()> {
        if !(self.condition_threshold > 0.0 && self.condition_threshold <= 1.0) {
            return Err(Error::invalid("condition-threshold", "must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Dead-reckoned trajectory: `x_{i+1} = f(x_i, u_i)` starting at `x0`.
pub fn init_poses(odometry: &[OdometryMeasurement], x0: RobotPose) -> Vec<RobotPose> {
    let mut poses = Vec::with_capacity(odometry.len() + 1);
    poses.push(x0);
    for u in odometry {
        let next = motion_model(poses.last().expect("non-empty"), u);
        poses.push(next);
    }
    poses
}

/// The identity dual quadric used when no better guess is available.
pub fn init_quadric_fallback() -> DualQuadric {
    DualQuadric::identity()
}

/// Outcome of the linear tangency fit.
#[derive(Clone, Debug, PartialEq)]
pub struct SvdFit {
    pub quadric: DualQuadric,
    /// Singular values of the constraint matrix in ascending order.
    pub singular_values: Vec<f64>,
    /// `σ_min / σ_second`.
    pub condition_ratio: f64,
}

/// Back-projected planes of every bounding-box line, scaled to unit norm.
pub fn detection_planes(
    detections: &[BBoxDetection],
    poses: &[RobotPose],
    k: &CameraIntrinsics,
    mount: &CameraExtrinsics,
) -> Result<Vec<Vector4<f64>>> {
    let mut planes = Vec::with_capacity(4 * detections.len());
    for det in detections {
        let pose = poses
            .get(det.pose_index)
            .ok_or_else(|| Error::InvalidGraph(format!("pose index {} out of range", det.pose_index)))?;
        let p = pose_projection(pose, k, mount);
        for line in &det.lines {
            planes.push(p.transpose() * line.coords());
        }
    }
    Ok(planes)
}

/// Rows `(π1², 2π1π2, 2π1π3, 2π1π4, π2², 2π2π3, 2π2π4, π3², 2π3π4, π4²)` of
/// the homogeneous system `A q = 0`, one per plane, with every plane scaled
/// to unit norm.
pub fn plane_constraint_matrix(planes: &[Vector4<f64>]) -> Result<DMatrix<f64>> {
    let mut a = DMatrix::zeros(planes.len(), 10);
    for (row, pi) in planes.iter().enumerate() {
        let norm = pi.norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateInput("back-projected plane vanishes".into()));
        }
        let pi = pi / norm;
        let c = plane_coefficients(&pi);
        for m in 0..9 {
            a[(row, m)] = c[m];
        }
        a[(row, 9)] = pi[3] * pi[3];
    }
    Ok(a)
}

/// Least-squares dual quadric tangent to `planes`, taken from the right
/// singular vector of the smallest singular value and rescaled to unit
/// (4,4) entry.
pub fn fit_dual_quadric(planes: &[Vector4<f64>], condition_threshold: f64) -> Result<SvdFit> {
    if planes.len() < 9 {
        return Err(Error::DegenerateInput(format!("{} planes cannot fix 9 parameters", planes.len())));
    }
    let a = plane_constraint_matrix(planes)?;
    let svd = a.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let condition_ratio = if singular_values[1] > 0.0 {
        singular_values[0] / singular_values[1]
    } else {
        1.0
    };
    let null = v_t.row(order[0]);
    let scale = null[9];
    if !(scale.abs() > QUADRIC_SCALE_EPS) {
        return Err(Error::DegenerateSolution(format!(
            "(4,4) coefficient {scale:e} of the fitted quadric is too small"
        )));
    }
    let largest = singular_values[singular_values.len() - 1];
    if !(singular_values[1] > RANK_TOLERANCE * largest) {
        return Err(Error::DegenerateSolution(format!(
            "second-smallest singular value {:.3e} is at rounding level of {largest:.3e}",
            singular_values[1]
        )));
    }
    if !(condition_ratio < condition_threshold) {
        return Err(Error::DegenerateSolution(format!(
            "singular value ratio {condition_ratio:.3e} is not below {condition_threshold}"
        )));
    }
    let q = SVector::<f64, 9>::from_iterator((0..9).map(|m| null[m] / scale));
    if !q.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateSolution("non-finite quadric parameters".into()));
    }
    Ok(SvdFit { quadric: DualQuadric::from_vector(q), singular_values, condition_ratio })
}

/// [`fit_dual_quadric`] on the planes of one landmark's detections.
pub fn init_quadric_svd(
    detections: &[BBoxDetection],
    poses: &[RobotPose],
    k: &CameraIntrinsics,
    mount: &CameraExtrinsics,
    condition_threshold: f64,
) -> Result<SvdFit> {
    let landmark_id = detections.first().map(|d| d.landmark_id).unwrap_or(0);
    if detections.len() < MIN_DETECTIONS {
        return Err(Error::InsufficientObservations {
            landmark_id,
            found: detections.len(),
            required: MIN_DETECTIONS,
        });
    }
    fit_dual_quadric(&detection_planes(detections, poses, k, mount)?, condition_threshold)
}

/// Quadric initialization for one landmark under the chosen strategy.
/// Returns the quadric and whether the identity fallback was used.
pub fn init_quadric(
    strategy: &InitStrategy,
    detections: &[BBoxDetection],
    poses: &[RobotPose],
    k: &CameraIntrinsics,
    mount: &CameraExtrinsics,
) -> Result<(DualQuadric, bool)> {
    match strategy.mode {
        InitMode::Identity => Ok((init_quadric_fallback(), true)),
        InitMode::Svd => {
            init_quadric_svd(detections, poses, k, mount, strategy.condition_threshold).map(|f| (f.quadric, false))
        }
        InitMode::SvdWithFallback => {
            match init_quadric_svd(detections, poses, k, mount, strategy.condition_threshold) {
                Ok(fit) => Ok((fit.quadric, false)),
                Err(_) => Ok((init_quadric_fallback(), true)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Matrix4;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn straight_chain() {
        let u = vec![OdometryMeasurement { v: 1.0, omega: 0.0 }; 5];
        let poses = init_poses(&u, RobotPose::default());
        for (i, p) in poses.iter().enumerate() {
            assert_eq!(*p, RobotPose::new(i as f64, 0.0, 0.0));
        }
    }

    #[test]
    fn square_closes() {
        let mut u = Vec::new();
        for _ in 0..4 {
            u.extend(std::iter::repeat_n(OdometryMeasurement { v: 1.0, omega: 0.0 }, 3));
            u.push(OdometryMeasurement { v: 0.0, omega: FRAC_PI_2 });
        }
        let poses = init_poses(&u, RobotPose::default());
        let last = poses.last().unwrap();
        assert!(last.x.abs() < 1e-12 && last.y.abs() < 1e-12);
        assert!(crate::geometry::wrap_angle(last.theta).abs() < 1e-12);
    }

    #[test]
    fn fallback_is_identity() {
        let q = init_quadric_fallback();
        assert_eq!(q.matrix(), Matrix4::identity());
        assert_eq!(q.centroid(), nalgebra::Vector3::zeros());
        assert_eq!(q, init_quadric_fallback());
    }

    #[test]
    fn two_detections_are_not_enough() {
        let k = CameraIntrinsics::new(1500.0, 1500.0, 640.0, 512.0, 1280, 1024).unwrap();
        let lines = crate::geometry::bbox_to_lines(&crate::geometry::axis_aligned_corners(0.0, 0.0, 10.0, 10.0).unwrap())
            .unwrap();
        let det = BBoxDetection { pose_index: 0, landmark_id: 4, lines };
        let err = init_quadric_svd(&[det, det], &[RobotPose::default()], &k, &CameraExtrinsics::identity(), 0.1);
        assert!(matches!(err, Err(Error::InsufficientObservations { landmark_id: 4, found: 2, .. })));
    }

    #[test]
    fn strategy_threshold_range() {
        assert!(InitStrategy { mode: InitMode::Svd, condition_threshold: 0.0 }.validate().is_err());
        InitStrategy::default().validate().unwrap();
    }
}
