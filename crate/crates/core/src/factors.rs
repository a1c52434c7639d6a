//! Factor-graph data model with residuals and analytic Jacobians for the
//! odometry, bounding-box, relative-position and anchor-prior factors.
//!
//! Column layout of the stacked Jacobian: every pose owns three columns
//! `(x, y, θ)` in pose order, followed by nine columns per quadric. Rows are
//! stacked as priors, odometry (by pose index), bounding boxes (by pose,
//! landmark, then line), and relative positions (by pose, landmark).

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix3x4, SMatrix, SVector, Vector2, Vector3, Vector4};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    pose_to_extrinsics, projection_matrix, wrap_angle, CameraExtrinsics, CameraIntrinsics, DualQuadric,
    ImageLine, RobotPose,
};

pub const POSE_DIM: usize = 3;
pub const QUADRIC_DIM: usize = 9;

/// How a 9-vector step is applied to a quadric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadricUpdate {
    /// `q + δ`.
    Additive,
    /// Shape block `Q_ul - c cᵀ` and centroid `c` each move additively,
    /// so a translation of the landmark is a straight line in the step.
    #[default]
    Centered,
}

/// Per-step odometry: forward distance `v` and heading change `omega`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryMeasurement {
    pub v: f64,
    pub omega: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBoxDetection {
    pub pose_index: usize,
    pub landmark_id: usize,
    pub lines: [ImageLine; 4],
}

/// Landmark centroid observed in the robot frame of `pose_index`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativePositionMeasurement {
    pub pose_index: usize,
    pub landmark_id: usize,
    pub z: Vector3<f64>,
}

/// Gaussian noise with a full covariance. Residuals are whitened with the
/// inverse of the lower Cholesky factor.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel {
    covariance: DMatrix<f64>,
    sqrt_information: DMatrix<f64>,
}

impl NoiseModel {
    pub fn new(covariance: DMatrix<f64>) -> Result<Self> {
        if !covariance.is_square() || covariance.nrows() == 0 {
            return Err(Error::NotPositiveDefinite);
        }
        if !covariance.iter().all(|c| c.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let asym = (&covariance - covariance.transpose()).abs().max();
        if asym > 1e-12 * covariance.abs().max() {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = covariance.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let l = chol.l();
        let n = l.nrows();
        let sqrt_information = l
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(Error::NotPositiveDefinite)?;
        if !sqrt_information.iter().all(|c| c.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        Ok(Self { covariance, sqrt_information })
    }

    pub fn diagonal(sigmas: &[f64]) -> Result<Self> {
        if sigmas.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::NotPositiveDefinite);
        }
        let var = DVector::from_iterator(sigmas.len(), sigmas.iter().map(|s| s * s));
        Self::new(DMatrix::from_diagonal(&var))
    }

    pub fn isotropic(dim: usize, sigma: f64) -> Result<Self> {
        Self::diagonal(&vec![sigma; dim])
    }

    pub fn dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn sqrt_information(&self) -> &DMatrix<f64> {
        &self.sqrt_information
    }
}

/// Unicycle step: move `v` along the current heading, then turn by `omega`.
pub fn motion_model(x: &RobotPose, u: &OdometryMeasurement) -> RobotPose {
    let (s, c) = x.theta.sin_cos();
    RobotPose::new(x.x + u.v * c, x.y + u.v * s, x.theta + u.omega)
}

/// SE(2) difference `a ⊖ b`: the offset of `a` from `b` expressed in the
/// frame of `a`, with the heading difference wrapped to `(-π, π]`.
pub fn boxminus(a: &RobotPose, b: &RobotPose) -> Vector3<f64> {
    let d = a.rotation().transpose() * (a.position() - b.position());
    Vector3::new(d.x, d.y, wrap_angle(a.theta - b.theta))
}

/// Tangent-space update `x ⊞ δ = (x + δx, y + δy, wrap(θ + δθ))`.
pub fn boxplus(x: &RobotPose, delta: &Vector3<f64>) -> RobotPose {
    RobotPose::new(x.x + delta.x, x.y + delta.y, x.theta + delta.z)
}

/// d(Rᵀ(θ))/dθ for a planar rotation.
fn d_rotation_t(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(-s, c, -c, -s)
}

/// Jacobians of [`boxminus`] with respect to `a` and `b`.
fn boxminus_jacobians(a: &RobotPose, b: &RobotPose) -> (Matrix3<f64>, Matrix3<f64>) {
    let rt = a.rotation().transpose();
    let dp = a.position() - b.position();
    let dtheta = d_rotation_t(a.theta) * dp;
    let mut ja = Matrix3::zeros();
    ja.fixed_view_mut::<2, 2>(0, 0).copy_from(&rt);
    ja.fixed_view_mut::<2, 1>(0, 2).copy_from(&dtheta);
    ja[(2, 2)] = 1.0;
    let mut jb = Matrix3::zeros();
    jb.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-rt));
    jb[(2, 2)] = -1.0;
    (ja, jb)
}

/// `f(x_i, u) ⊖ x_next`.
pub fn odometry_residual(x_i: &RobotPose, x_next: &RobotPose, u: &OdometryMeasurement) -> Vector3<f64> {
    boxminus(&motion_model(x_i, u), x_next)
}

/// Jacobians of [`odometry_residual`] with respect to `x_i` and `x_next`.
pub fn odometry_jacobians(
    x_i: &RobotPose,
    x_next: &RobotPose,
    u: &OdometryMeasurement,
) -> (Matrix3<f64>, Matrix3<f64>) {
    let pred = motion_model(x_i, u);
    let (ja, jb) = boxminus_jacobians(&pred, x_next);
    let (s, c) = x_i.theta.sin_cos();
    let df = Matrix3::new(1.0, 0.0, -u.v * s, 0.0, 1.0, u.v * c, 0.0, 0.0, 1.0);
    (ja * df, jb)
}

/// Covariance of the odometry residual induced by independent noise on `v`
/// and `omega`, plus an isotropic planar floor that keeps it full rank.
pub fn odometry_covariance(u: &OdometryMeasurement, sigma_v: f64, sigma_omega: f64, sigma_floor: f64) -> DMatrix<f64> {
    // Noise on v displaces the prediction along the pre-turn heading, which
    // is rotated by -omega in the predicted frame.
    let (s, c) = u.omega.sin_cos();
    let dv = Vector3::new(c, -s, 0.0);
    let cov = dv * dv.transpose() * (sigma_v * sigma_v)
        + Matrix3::from_diagonal(&Vector3::new(
            sigma_floor * sigma_floor,
            sigma_floor * sigma_floor,
            sigma_omega * sigma_omega,
        ));
    DMatrix::from_column_slice(3, 3, cov.as_slice())
}

/// `x_0 ⊖ anchor`.
pub fn prior_residual(x: &RobotPose, anchor: &RobotPose) -> Vector3<f64> {
    boxminus(x, anchor)
}

pub fn prior_jacobian(x: &RobotPose, anchor: &RobotPose) -> Matrix3<f64> {
    boxminus_jacobians(x, anchor).0
}

/// `z - T_i(centroid(q))`, with the centroid mapped into the robot frame.
pub fn relpos_residual(x: &RobotPose, q: &DualQuadric, z: &RelativePositionMeasurement) -> Vector3<f64> {
    z.z - x.world_to_robot(&q.centroid())
}

/// Jacobians of [`relpos_residual`] with respect to the pose and the quadric.
pub fn relpos_jacobians(x: &RobotPose, q: &DualQuadric) -> (Matrix3<f64>, SMatrix<f64, 3, 9>) {
    let c = q.centroid();
    let rt = x.rotation().transpose();
    let dp = Vector2::new(c.x, c.y) - x.position();
    let mut jx = Matrix3::zeros();
    jx.fixed_view_mut::<2, 2>(0, 0).copy_from(&rt);
    jx.fixed_view_mut::<2, 1>(0, 2).copy_from(&(-(d_rotation_t(x.theta) * dp)));
    let mut jq = SMatrix::<f64, 3, 9>::zeros();
    let neg_rt = -rt;
    jq[(0, 3)] = neg_rt[(0, 0)];
    jq[(0, 6)] = neg_rt[(0, 1)];
    jq[(1, 3)] = neg_rt[(1, 0)];
    jq[(1, 6)] = neg_rt[(1, 1)];
    jq[(2, 8)] = -1.0;
    (jx, jq)
}

/// Camera matrix `P(x) = K [R | t]` for a robot pose and mount.
pub fn pose_projection(x: &RobotPose, k: &CameraIntrinsics, mount: &CameraExtrinsics) -> Matrix3x4<f64> {
    *projection_matrix(k, &pose_to_extrinsics(x, mount)).matrix()
}

/// Coefficients of `πᵀ Q*(q) π` with respect to `(q1..q9)`; the constant
/// part is `π4²`.
pub fn plane_coefficients(pi: &Vector4<f64>) -> SVector<f64, 9> {
    SVector::<f64, 9>::from_column_slice(&[
        pi[0] * pi[0],
        2.0 * pi[0] * pi[1],
        2.0 * pi[0] * pi[2],
        2.0 * pi[0] * pi[3],
        pi[1] * pi[1],
        2.0 * pi[1] * pi[2],
        2.0 * pi[1] * pi[3],
        pi[2] * pi[2],
        2.0 * pi[2] * pi[3],
    ])
}

/// Per-line tangency residuals `lᵀ P(x) Q* P(x)ᵀ l` for one detection.
pub fn bbox_factor_residual(
    x: &RobotPose,
    q: &DualQuadric,
    det: &BBoxDetection,
    k: &CameraIntrinsics,
    mount: &CameraExtrinsics,
) -> Vector4<f64> {
    let p = pose_projection(x, k, mount);
    let qm = q.matrix();
    Vector4::from_fn(|row, _| {
        let pi = p.transpose() * det.lines[row].coords();
        (pi.transpose() * qm * pi)[(0, 0)]
    })
}

/// Jacobians of [`bbox_factor_residual`] with respect to the pose and the
/// quadric step of `update`.
pub fn bbox_factor_jacobians(
    x: &RobotPose,
    q: &DualQuadric,
    det: &BBoxDetection,
    k: &CameraIntrinsics,
    mount: &CameraExtrinsics,
    update: QuadricUpdate,
) -> (SMatrix<f64, 4, 3>, SMatrix<f64, 4, 9>) {
    let p = pose_projection(x, k, mount);
    let qm = q.matrix();
    let mut jx = SMatrix::<f64, 4, 3>::zeros();
    let mut jq = SMatrix::<f64, 4, 9>::zeros();
    for (row, line) in det.lines.iter().enumerate() {
        let pi = p.transpose() * line.coords();
        let mut coeff = plane_coefficients(&pi);
        if update == QuadricUpdate::Centered {
            // d/dc_k of πᵀ(S + c cᵀ)π + 2π4 cᵀπ_xyz is 2 π_k (Q*π)_4
            let w = (qm * pi)[3];
            coeff[3] = 2.0 * pi[0] * w;
            coeff[6] = 2.0 * pi[1] * w;
            coeff[8] = 2.0 * pi[2] * w;
        }
        jq.set_row(row, &coeff.transpose());
        // π[0..3] rotates with the heading, π4 = tᵀ m - pᵀ π[0..3].
        let d_theta = Vector4::new(-pi[1], pi[0], 0.0, x.x * pi[1] - x.y * pi[0]);
        let d_x = Vector4::new(0.0, 0.0, 0.0, -pi[0]);
        let d_y = Vector4::new(0.0, 0.0, 0.0, -pi[1]);
        let g = 2.0 * (qm * pi);
        jx[(row, 0)] = g.dot(&d_x);
        jx[(row, 1)] = g.dot(&d_y);
        jx[(row, 2)] = g.dot(&d_theta);
    }
    (jx, jq)
}

/// Current estimate of every variable in the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Values {
    pub poses: Vec<RobotPose>,
    pub quadrics: Vec<DualQuadric>,
}

impl Values {
    pub fn dim(&self) -> usize {
        POSE_DIM * self.poses.len() + QUADRIC_DIM * self.quadrics.len()
    }

    pub fn pose_column(&self, i: usize) -> usize {
        POSE_DIM * i
    }

    pub fn quadric_column(&self, j: usize) -> usize {
        POSE_DIM * self.poses.len() + QUADRIC_DIM * j
    }

    /// Applies a stacked tangent update with the per-variable ⊞ rules.
    pub fn retract(&self, delta: &DVector<f64>, update: QuadricUpdate) -> Values {
        assert_eq!(delta.len(), self.dim(), "update dimension mismatch");
        let poses = self
            .poses
            .iter()
            .enumerate()
            .map(|(i, p)| boxplus(p, &delta.fixed_rows::<3>(self.pose_column(i)).into_owned()))
            .collect();
        let quadrics = self
            .quadrics
            .iter()
            .enumerate()
            .map(|(j, q)| {
                let d = delta.fixed_rows::<9>(self.quadric_column(j)).into_owned();
                match update {
                    QuadricUpdate::Additive => q.plus(&d),
                    QuadricUpdate::Centered => q.plus_centered(&d),
                }
            })
            .collect();
        Values { poses, quadrics }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PriorFactor {
    pub pose_index: usize,
    pub anchor: RobotPose,
    pub noise: NoiseModel,
}

/// Odometry between `pose_index` and `pose_index + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct OdometryFactor {
    pub pose_index: usize,
    pub measurement: OdometryMeasurement,
    pub noise: NoiseModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BBoxFactor {
    pub detection: BBoxDetection,
    pub noise: NoiseModel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelPosFactor {
    pub measurement: RelativePositionMeasurement,
    pub noise: NoiseModel,
}

/// Row block of the stacked Jacobian belonging to one factor.
#[derive(Clone, Debug, PartialEq)]
pub struct JacobianRow {
    pub row: usize,
    pub nrows: usize,
    /// `(first column, dense block)` for every variable the factor touches.
    pub blocks: Vec<(usize, DMatrix<f64>)>,
}

/// Block-sparse Jacobian of the stacked whitened residual.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseJacobian {
    pub nrows: usize,
    pub ncols: usize,
    pub rows: Vec<JacobianRow>,
}

impl SparseJacobian {
    /// The columns `first..` renumbered from zero. Blocks never straddle
    /// `first` when it is a variable boundary.
    pub fn columns_from(&self, first: usize) -> SparseJacobian {
        let rows = self
            .rows
            .iter()
            .map(|r| JacobianRow {
                row: r.row,
                nrows: r.nrows,
                blocks: r
                    .blocks
                    .iter()
                    .filter(|(col, _)| *col >= first)
                    .map(|(col, b)| (col - first, b.clone()))
                    .collect(),
            })
            .collect();
        SparseJacobian { nrows: self.nrows, ncols: self.ncols - first, rows }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for r in &self.rows {
            for (col, b) in &r.blocks {
                m.view_mut((r.row, *col), b.shape()).copy_from(b);
            }
        }
        m
    }

    /// `Jᵀ v`.
    pub fn transpose_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        assert_eq!(v.len(), self.nrows);
        let mut out = DVector::zeros(self.ncols);
        for r in &self.rows {
            let seg = v.rows(r.row, r.nrows);
            for (col, b) in &r.blocks {
                let mut dst = out.rows_mut(*col, b.ncols());
                dst += b.transpose() * seg;
            }
        }
        out
    }

    /// Upper-triangle-free list of `JᵀJ` contributions as `(row, col, value)`
    /// triplets, summed by the caller.
    pub fn normal_triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::new();
        for r in &self.rows {
            for (ca, a) in &r.blocks {
                for (cb, b) in &r.blocks {
                    let prod = a.transpose() * b;
                    for j in 0..prod.ncols() {
                        for i in 0..prod.nrows() {
                            out.push((ca + i, cb + j, prod[(i, j)]));
                        }
                    }
                }
            }
        }
        out
    }
}

/// Whitened residual vector and its cost `½‖r‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct Residuals {
    pub values: DVector<f64>,
    pub cost: f64,
}

/// Variables plus factors of a landmark SLAM problem.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorGraph {
    values: Values,
    camera: CameraIntrinsics,
    mount: CameraExtrinsics,
    quadric_update: QuadricUpdate,
    priors: Vec<PriorFactor>,
    odometry: Vec<OdometryFactor>,
    bbox: Vec<BBoxFactor>,
    relpos: Vec<RelPosFactor>,
}

fn insert_sorted<T, K: Ord>(list: &mut Vec<T>, item: T, key: impl Fn(&T) -> K) {
    let k = key(&item);
    let at = list.partition_point(|x| key(x) <= k);
    list.insert(at, item);
}

impl FactorGraph {
    pub fn new(values: Values, camera: CameraIntrinsics, mount: CameraExtrinsics) -> Self {
        Self {
            values,
            camera,
            mount,
            quadric_update: QuadricUpdate::default(),
            priors: Vec::new(),
            odometry: Vec::new(),
            bbox: Vec::new(),
            relpos: Vec::new(),
        }
    }

    pub fn values(&self) -> &Values {
        &self.values
    }

    pub fn quadric_update(&self) -> QuadricUpdate {
        self.quadric_update
    }

    pub fn set_quadric_update(&mut self, update: QuadricUpdate) {
        self.quadric_update = update;
    }

    /// `values ⊞ delta` under this graph's quadric update rule.
    pub fn retract(&self, values: &Values, delta: &DVector<f64>) -> Values {
        values.retract(delta, self.quadric_update)
    }

    pub fn set_values(&mut self, values: Values) -> Result<()> {
        if values.poses.len() != self.values.poses.len() || values.quadrics.len() != self.values.quadrics.len() {
            return Err(Error::InvalidGraph("replacement values have a different layout".into()));
        }
        self.values = values;
        Ok(())
    }

    pub fn camera(&self) -> &CameraIntrinsics {
        &self.camera
    }

    pub fn mount(&self) -> &CameraExtrinsics {
        &self.mount
    }

    pub fn priors(&self) -> &[PriorFactor] {
        &self.priors
    }

    pub fn odometry(&self) -> &[OdometryFactor] {
        &self.odometry
    }

    pub fn bbox(&self) -> &[BBoxFactor] {
        &self.bbox
    }

    pub fn relpos(&self) -> &[RelPosFactor] {
        &self.relpos
    }

    pub fn add_prior(&mut self, f: PriorFactor) -> Result<()> {
        self.check_pose(f.pose_index)?;
        check_dim(&f.noise, 3)?;
        insert_sorted(&mut self.priors, f, |f| f.pose_index);
        Ok(())
    }

    pub fn add_odometry(&mut self, f: OdometryFactor) -> Result<()> {
        self.check_pose(f.pose_index)?;
        self.check_pose(f.pose_index + 1)?;
        check_dim(&f.noise, 3)?;
        insert_sorted(&mut self.odometry, f, |f| f.pose_index);
        Ok(())
    }

    pub fn add_bbox(&mut self, f: BBoxFactor) -> Result<()> {
        self.check_pose(f.detection.pose_index)?;
        self.check_quadric(f.detection.landmark_id)?;
        check_dim(&f.noise, 4)?;
        insert_sorted(&mut self.bbox, f, |f| (f.detection.pose_index, f.detection.landmark_id));
        Ok(())
    }

    pub fn add_relpos(&mut self, f: RelPosFactor) -> Result<()> {
        self.check_pose(f.measurement.pose_index)?;
        self.check_quadric(f.measurement.landmark_id)?;
        check_dim(&f.noise, 3)?;
        insert_sorted(&mut self.relpos, f, |f| (f.measurement.pose_index, f.measurement.landmark_id));
        Ok(())
    }

    fn check_pose(&self, i: usize) -> Result<()> {
        if i >= self.values.poses.len() {
            return Err(Error::InvalidGraph(format!("pose index {i} out of range")));
        }
        Ok(())
    }

    fn check_quadric(&self, j: usize) -> Result<()> {
        if j >= self.values.quadrics.len() {
            return Err(Error::InvalidGraph(format!("landmark id {j} out of range")));
        }
        Ok(())
    }

    /// Checks the gauge anchor is present.
    pub fn validate(&self) -> Result<()> {
        if self.priors.is_empty() {
            return Err(Error::InvalidGraph("at least one prior factor is required".into()));
        }
        Ok(())
    }

    pub fn residual_dim(&self) -> usize {
        3 * (self.priors.len() + self.odometry.len() + self.relpos.len()) + 4 * self.bbox.len()
    }

    /// Whitened stacked residual at the given values.
    pub fn residual_at(&self, values: &Values) -> Result<Residuals> {
        self.validate()?;
        let mut r = DVector::zeros(self.residual_dim());
        let mut row = 0;
        let mut put = |raw: &[f64], noise: &NoiseModel| {
            let v = DVector::from_column_slice(raw);
            let w = noise.sqrt_information() * v;
            r.rows_mut(row, w.len()).copy_from(&w);
            row += w.len();
        };
        for f in &self.priors {
            put(prior_residual(&values.poses[f.pose_index], &f.anchor).as_slice(), &f.noise);
        }
        for f in &self.odometry {
            let i = f.pose_index;
            put(
                odometry_residual(&values.poses[i], &values.poses[i + 1], &f.measurement).as_slice(),
                &f.noise,
            );
        }
        for f in &self.bbox {
            let d = &f.detection;
            let res = bbox_factor_residual(
                &values.poses[d.pose_index],
                &values.quadrics[d.landmark_id],
                d,
                &self.camera,
                &self.mount,
            );
            put(res.as_slice(), &f.noise);
        }
        for f in &self.relpos {
            let m = &f.measurement;
            let res = relpos_residual(&values.poses[m.pose_index], &values.quadrics[m.landmark_id], m);
            put(res.as_slice(), &f.noise);
        }
        let cost = 0.5 * r.norm_squared();
        Ok(Residuals { values: r, cost })
    }

    /// Whitened Jacobian of [`FactorGraph::residual_at`].
    pub fn jacobian_at(&self, values: &Values) -> Result<SparseJacobian> {
        self.validate()?;
        let mut rows = Vec::with_capacity(self.priors.len() + self.odometry.len() + self.bbox.len() + self.relpos.len());
        let mut row = 0;
        let mut push = |noise: &NoiseModel, blocks: Vec<(usize, DMatrix<f64>)>| {
            let w = noise.sqrt_information();
            let nrows = w.nrows();
            let blocks = blocks.into_iter().map(|(c, b)| (c, w * b)).collect();
            rows.push(JacobianRow { row, nrows, blocks });
            row += nrows;
        };
        let dyn3 = |m: Matrix3<f64>| DMatrix::from_column_slice(3, 3, m.as_slice());
        for f in &self.priors {
            let j = prior_jacobian(&values.poses[f.pose_index], &f.anchor);
            push(&f.noise, vec![(values.pose_column(f.pose_index), dyn3(j))]);
        }
        for f in &self.odometry {
            let i = f.pose_index;
            let (ja, jb) = odometry_jacobians(&values.poses[i], &values.poses[i + 1], &f.measurement);
            push(
                &f.noise,
                vec![(values.pose_column(i), dyn3(ja)), (values.pose_column(i + 1), dyn3(jb))],
            );
        }
        for f in &self.bbox {
            let d = &f.detection;
            let (jx, jq) = bbox_factor_jacobians(
                &values.poses[d.pose_index],
                &values.quadrics[d.landmark_id],
                d,
                &self.camera,
                &self.mount,
                self.quadric_update,
            );
            push(
                &f.noise,
                vec![
                    (values.pose_column(d.pose_index), DMatrix::from_column_slice(4, 3, jx.as_slice())),
                    (values.quadric_column(d.landmark_id), DMatrix::from_column_slice(4, 9, jq.as_slice())),
                ],
            );
        }
        for f in &self.relpos {
            let m = &f.measurement;
            let (jx, jq) = relpos_jacobians(&values.poses[m.pose_index], &values.quadrics[m.landmark_id]);
            push(
                &f.noise,
                vec![
                    (values.pose_column(m.pose_index), dyn3(jx)),
                    (values.quadric_column(m.landmark_id), DMatrix::from_column_slice(3, 9, jq.as_slice())),
                ],
            );
        }
        Ok(SparseJacobian { nrows: row, ncols: values.dim(), rows })
    }
}

fn check_dim(noise: &NoiseModel, dim: usize) -> Result<()> {
    if noise.dim() != dim {
        return Err(Error::InvalidGraph(format!(
            "noise model has dimension {}, factor needs {dim}",
            noise.dim()
        )));
    }
    Ok(())
}

/// Whitened residual and cost at the graph's current values.
pub fn graph_residual(graph: &FactorGraph) -> Result<Residuals> {
    graph.residual_at(graph.values())
}

/// Whitened Jacobian at the graph's current values.
pub fn graph_jacobian(graph: &FactorGraph) -> Result<SparseJacobian> {
    graph.jacobian_at(graph.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{axis_aligned_corners, bbox_to_lines, ellipsoid_to_dual_quadric, project_quadric, ProjectionMatrix};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn close3(a: Vector3<f64>, b: [f64; 3], tol: f64) {
        assert!((a - Vector3::from(b)).amax() <= tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn unicycle_steps() {
        let straight = motion_model(&RobotPose::new(0.0, 0.0, 0.0), &OdometryMeasurement { v: 1.0, omega: 0.0 });
        assert_eq!(straight, RobotPose::new(1.0, 0.0, 0.0));
        let north = motion_model(&RobotPose::new(0.0, 0.0, FRAC_PI_2), &OdometryMeasurement { v: 2.0, omega: 0.0 });
        assert!((north.x).abs() < 1e-15 && (north.y - 2.0).abs() < 1e-15 && north.theta == FRAC_PI_2);
        let turn = motion_model(&RobotPose::new(1.0, 1.0, 0.0), &OdometryMeasurement { v: 0.0, omega: FRAC_PI_2 });
        assert_eq!(turn, RobotPose::new(1.0, 1.0, FRAC_PI_2));
    }

    #[test]
    fn odometry_residual_cases() {
        let u = OdometryMeasurement { v: 1.0, omega: 0.0 };
        let x0 = RobotPose::new(0.3, -0.2, 0.4);
        close3(odometry_residual(&x0, &motion_model(&x0, &u), &u), [0.0; 3], 1e-15);
        let r = odometry_residual(&RobotPose::default(), &RobotPose::new(2.0, 0.0, 0.0), &u);
        close3(r, [-1.0, 0.0, 0.0], 1e-15);

        let pred = RobotPose::new(0.0, 0.0, PI - 0.1);
        let actual = RobotPose::new(0.0, 0.0, -PI + 0.1);
        let r = odometry_residual(&pred, &actual, &OdometryMeasurement { v: 0.0, omega: 0.0 });
        assert!((r.z + 0.2).abs() < 1e-12);
    }

    #[test]
    fn prior_cases() {
        let a = RobotPose::new(1.0, 2.0, 0.3);
        close3(prior_residual(&a, &a), [0.0; 3], 0.0);
        let r = prior_residual(&RobotPose::new(0.1, 0.0, 0.0), &RobotPose::default());
        close3(r, [0.1, 0.0, 0.0], 1e-15);
    }

    #[test]
    fn relpos_cases() {
        let q = DualQuadric::from_slice(&[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 2.0, 1.0, 0.3]);
        let z = RelativePositionMeasurement { pose_index: 0, landmark_id: 0, z: Vector3::new(1.0, 2.0, 0.3) };
        close3(relpos_residual(&RobotPose::default(), &q, &z), [0.0; 3], 0.0);

        let q = DualQuadric::from_slice(&[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let z = RelativePositionMeasurement { pose_index: 0, landmark_id: 0, z: Vector3::new(1.0, 0.0, 0.0) };
        close3(relpos_residual(&RobotPose::new(1.0, 0.0, FRAC_PI_2), &q, &z), [0.0; 3], 1e-15);

        let q = DualQuadric::from_slice(&[1.0, 0.0, 0.0, 4.0, 1.0, 0.0, -3.0, 1.0, 0.77]);
        let z = RelativePositionMeasurement { pose_index: 0, landmark_id: 0, z: Vector3::zeros() };
        let r = relpos_residual(&RobotPose::new(-2.0, 5.0, 2.1), &q, &z);
        assert!((r.z + 0.77).abs() < 1e-15);
    }

    #[test]
    fn noise_model_rejects_indefinite() {
        assert!(NoiseModel::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(NoiseModel::diagonal(&[1.0, 0.0]).is_err());
        assert!(NoiseModel::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0])).is_err());
        let n = NoiseModel::new(DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 2.0])).unwrap();
        let w = n.sqrt_information();
        let info = w.transpose() * w;
        let expect = n.covariance().clone().try_inverse().unwrap();
        assert!((info - expect).amax() < 1e-14);
    }

    #[test]
    fn odometry_covariance_is_pd() {
        let c = odometry_covariance(&OdometryMeasurement { v: 0.5, omega: 0.4 }, 0.02, 0.1, 1e-3);
        NoiseModel::new(c).unwrap();
        assert!(NoiseModel::new(odometry_covariance(&OdometryMeasurement { v: 0.5, omega: 0.0 }, 0.02, 0.02, 0.0)).is_err());
    }

    fn sphere_detection(
        pose: &RobotPose,
        q: &DualQuadric,
        k: &CameraIntrinsics,
        mount: &CameraExtrinsics,
    ) -> BBoxDetection {
        let p = ProjectionMatrix::from_matrix(pose_projection(pose, k, mount)).unwrap();
        let bb = project_quadric(&p, q).bounding_box().unwrap();
        let corners = axis_aligned_corners(bb[0], bb[1], bb[2], bb[3]).unwrap();
        BBoxDetection { pose_index: 0, landmark_id: 0, lines: bbox_to_lines(&corners).unwrap() }
    }

    #[test]
    fn bbox_residual_vanishes_on_silhouette() {
        let k = CameraIntrinsics::new(1500.0, 1500.0, 640.0, 512.0, 1280, 1024).unwrap();
        let mount = CameraExtrinsics::left_facing_mount();
        let pose = RobotPose::new(2.0, -1.0, 0.3);
        let center = pose.robot_to_world(&Vector3::new(0.4, 4.0, 0.2));
        let q = ellipsoid_to_dual_quadric(&center, &Vector3::repeat(0.25), &Matrix3::identity()).unwrap();
        let det = sphere_detection(&pose, &q, &k, &mount);
        let r = bbox_factor_residual(&pose, &q, &det, &k, &mount);
        // relative to the size of the individual terms
        assert!(r.amax() < 1e-8, "{r:?}");

        let far = RobotPose::new(2.0, -1.0, 0.3);
        let tiny = BBoxDetection {
            lines: bbox_to_lines(&axis_aligned_corners(639.0, 511.0, 641.0, 513.0).unwrap()).unwrap(),
            ..det
        };
        let r = bbox_factor_residual(&far, &DualQuadric::identity(), &tiny, &k, &mount);
        assert!(r.iter().all(|v| *v > 1.0));

        let renorm = BBoxDetection {
            lines: det.lines.map(|l| ImageLine::new(*l.coords()).unwrap()),
            ..det
        };
        assert_eq!(bbox_factor_residual(&pose, &q, &renorm, &k, &mount), bbox_factor_residual(&pose, &q, &det, &k, &mount));
    }
}
