//! Trajectory, landmark-centroid and volume errors, and their aggregation
//! across trials.
//!
//! The position and centroid errors follow the reference definitions
//! literally: the mean Euclidean distance, not the root of the mean squared
//! distance. [`ErrorNorm::Rms`] gives the conventional RMSE for comparison.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DualQuadric, RobotPose};
use crate::simulator::CubeLandmark;

/// Which measurements enter the optimization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Odometry and bounding boxes.
    Monocular,
    /// Odometry, bounding boxes and relative landmark positions.
    WithRelpos,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Monocular, Mode::WithRelpos];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Monocular => "monocular",
            Mode::WithRelpos => "with-relpos",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorNorm {
    /// `(1/n) Σ ‖e_i‖`
    #[default]
    MeanDistance,
    /// `sqrt((1/n) Σ ‖e_i‖²)`
    Rms,
}

impl ErrorNorm {
    fn reduce(&self, distances: impl ExactSizeIterator<Item = f64>) -> f64 {
        let n = distances.len() as f64;
        match self {
            ErrorNorm::MeanDistance => distances.sum::<f64>() / n,
            ErrorNorm::Rms => (distances.map(|d| d * d).sum::<f64>() / n).sqrt(),
        }
    }
}

/// Mean planar position error.
pub fn rmse_pos(est: &[RobotPose], gt: &[RobotPose]) -> Result<f64> {
    rmse_pos_with(est, gt, ErrorNorm::MeanDistance)
}

pub fn rmse_pos_with(est: &[RobotPose], gt: &[RobotPose], norm: ErrorNorm) -> Result<f64> {
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch { left: est.len(), right: gt.len() });
    }
    if est.is_empty() {
        return Err(Error::DegenerateInput("no poses to compare".into()));
    }
    Ok(norm.reduce(est.iter().zip(gt).map(|(a, b)| (a.position() - b.position()).norm())))
}

fn check_ids(est: &[DualQuadric], gt: &[CubeLandmark]) -> Result<()> {
    if est.len() != gt.len() {
        return Err(Error::LengthMismatch { left: est.len(), right: gt.len() });
    }
    if est.is_empty() {
        return Err(Error::DegenerateInput("no landmarks to compare".into()));
    }
    if let Some((j, lm)) = gt.iter().enumerate().find(|(j, lm)| lm.id != *j) {
        return Err(Error::IdMismatch(format!("landmark at position {j} has id {}", lm.id)));
    }
    Ok(())
}

/// Mean distance between estimated quadric centroids and true cube centers,
/// matched by landmark id.
pub fn rmse_lm(est: &[DualQuadric], gt: &[CubeLandmark]) -> Result<f64> {
    rmse_lm_with(est, gt, ErrorNorm::MeanDistance)
}

pub fn rmse_lm_with(est: &[DualQuadric], gt: &[CubeLandmark], norm: ErrorNorm) -> Result<f64> {
    check_ids(est, gt)?;
    Ok(norm.reduce(est.iter().zip(gt).map(|(q, lm)| (q.centroid() - lm.center).norm())))
}

/// Squared semi-axes of an ellipsoidal dual quadric in ascending order, or
/// `None` when the quadric is not an ellipsoid.
///
/// Translating `Q*` to its centroid `c` leaves the (4,4) entry at one and
/// turns the upper-left block into `Q_ul - c cᵀ = -R diag(a², b², c²) Rᵀ`.
pub fn squared_semi_axes(q: &DualQuadric) -> Option<[f64; 3]> {
    let m = q.matrix();
    let c = q.centroid();
    let shape: Matrix3<f64> = c * c.transpose() - m.fixed_view::<3, 3>(0, 0);
    let shape = (shape + shape.transpose()) * 0.5;
    let mut ev: Vec<f64> = shape.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    if ev.iter().all(|e| e.is_finite() && *e > 0.0) {
        Some([ev[0], ev[1], ev[2]])
    } else {
        None
    }
}

/// Volume of the cube whose side is the smallest semi-axis, or `None` for a
/// non-ellipsoidal estimate.
pub fn quadric_volume_cube(q: &DualQuadric) -> Option<f64> {
    squared_semi_axes(q).map(|ax| ax[0].sqrt().powi(3))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeError {
    /// Mean absolute volume error over the valid landmarks.
    pub mean: f64,
    /// Per-landmark flag for non-ellipsoidal estimates.
    pub invalid: Vec<bool>,
}

impl VolumeError {
    pub fn invalid_count(&self) -> usize {
        self.invalid.iter().filter(|f| **f).count()
    }
}

/// Mean `|volume(q_j) - side_j³|` over landmarks with ellipsoidal estimates.
pub fn rmse_volume(est: &[DualQuadric], gt: &[CubeLandmark]) -> Result<VolumeError> {
    check_ids(est, gt)?;
    let vols: Vec<Option<f64>> = est.iter().map(quadric_volume_cube).collect();
    let errors: Vec<f64> = vols
        .iter()
        .zip(gt)
        .filter_map(|(v, lm)| v.map(|v| (v - lm.side.powi(3)).abs()))
        .collect();
    if errors.is_empty() {
        return Err(Error::NoValidVolumes);
    }
    Ok(VolumeError {
        mean: errors.iter().sum::<f64>() / errors.len() as f64,
        invalid: vols.iter().map(Option::is_none).collect(),
    })
}

/// Metrics of one solved trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub mode: Mode,
    pub rmse_pos_init: f64,
    pub rmse_pos_slam: f64,
    pub rmse_lm: f64,
    /// `None` when no estimate is ellipsoidal.
    pub rmse_volume: Option<f64>,
    pub volume_invalid: Vec<bool>,
    pub iterations: usize,
    pub final_cost: f64,
    pub converged: bool,
}

impl TrialResult {
    pub fn volume_invalid_count(&self) -> usize {
        self.volume_invalid.iter().filter(|f| **f).count()
    }
}

/// Average and median of a column.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub avg: f64,
    pub med: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let med = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        Some(Stat { avg: v.iter().sum::<f64>() / n as f64, med })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub trials: usize,
    pub rmse_pos_init: Stat,
    pub rmse_pos_slam: Stat,
    pub rmse_lm: Stat,
    /// `None` when no trial produced a valid volume.
    pub rmse_volume: Option<Stat>,
    /// Trials without any valid volume.
    pub volume_missing: usize,
    /// Non-ellipsoidal landmark estimates over all trials.
    pub volume_invalid_count: usize,
}

/// Average and median per metric, one summary per mode present, in
/// [`Mode::ALL`] order.
pub fn aggregate(results: &[TrialResult]) -> Result<Vec<ModeSummary>> {
    if results.is_empty() {
        return Err(Error::DegenerateInput("no trial results to aggregate".into()));
    }
    let mut out = Vec::new();
    for mode in Mode::ALL {
        let rs: Vec<&TrialResult> = results.iter().filter(|r| r.mode == mode).collect();
        if rs.is_empty() {
            continue;
        }
        let col = |f: fn(&TrialResult) -> f64| Stat::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("non-empty");
        let vols: Vec<f64> = rs.iter().filter_map(|r| r.rmse_volume).collect();
        out.push(ModeSummary {
            mode,
            trials: rs.len(),
            rmse_pos_init: col(|r| r.rmse_pos_init),
            rmse_pos_slam: col(|r| r.rmse_pos_slam),
            rmse_lm: col(|r| r.rmse_lm),
            rmse_volume: Stat::of(&vols),
            volume_missing: rs.len() - vols.len(),
            volume_invalid_count: rs.iter().map(|r| r.volume_invalid_count()).sum(),
        });
    }
    Ok(out)
}
