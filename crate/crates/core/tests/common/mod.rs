#![allow(dead_code)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Vector3, Vector4};
use quadslam::factors::{
    BBoxDetection, BBoxFactor, FactorGraph, NoiseModel, OdometryFactor, OdometryMeasurement, PriorFactor,
    QuadricUpdate, RelPosFactor, RelativePositionMeasurement, Values,
};
use quadslam::geometry::{
    axis_aligned_corners, bbox_to_lines, ellipsoid_to_dual_quadric, project_quadric, projection_matrix,
    CameraExtrinsics, CameraIntrinsics, DualQuadric, ImageLine, ProjectionMatrix, RobotPose,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

pub fn random_vec3(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Vector3<f64> {
    Vector3::new(uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi))
}

pub fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation3<f64> {
    Rotation3::from_scaled_axis(random_vec3(rng, -PI, PI))
}

pub fn random_ellipsoid(rng: &mut ChaCha8Rng, center_range: f64) -> (DualQuadric, Vector3<f64>, Vector3<f64>, Rotation3<f64>) {
    let c = random_vec3(rng, -center_range, center_range);
    let axes = random_vec3(rng, 0.3, 1.5);
    let r = random_rotation(rng);
    let q = ellipsoid_to_dual_quadric(&c, &axes, r.matrix()).expect("valid ellipsoid");
    (q, c, axes, r)
}

/// `A Aᵀ + dim·I`, scaled so its entries are about `scale²`.
pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(dim, dim, |_, _| uniform(rng, -1.0, 1.0));
    (&a * a.transpose() + DMatrix::identity(dim, dim) * dim as f64) * (scale * scale / dim as f64)
}

fn random_noise(rng: &mut ChaCha8Rng) -> NoiseModel {
    let scale = uniform(rng, 0.5, 2.0);
    NoiseModel::new(random_spd(rng, 3, scale)).unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng) -> RobotPose {
    RobotPose::new(uniform(rng, -2.0, 2.0), uniform(rng, -2.0, 2.0), uniform(rng, -3.0, 3.0))
}

/// A graph with at most 5 poses and 2 quadrics, random values, random
/// measurements and random full or diagonal covariances. The camera is
/// kept near unit focal length so that whitened residuals stay moderate.
pub fn random_small_graph(rng: &mut ChaCha8Rng, update: QuadricUpdate) -> FactorGraph {
    let n_poses = rng.random_range(1..=5);
    let n_quadrics = rng.random_range(0..=2);
    let poses: Vec<RobotPose> = (0..n_poses).map(|_| random_pose(rng)).collect();
    let quadrics: Vec<DualQuadric> = (0..n_quadrics).map(|_| random_ellipsoid(rng, 3.0).0).collect();
    let f = uniform(rng, 0.5, 2.0);
    let k = CameraIntrinsics::new(f, f * uniform(rng, 0.8, 1.2), uniform(rng, -0.5, 0.5), uniform(rng, -0.5, 0.5), 640, 480)
        .expect("valid intrinsics");
    let mount = if rng.random_bool(0.5) {
        CameraExtrinsics::left_facing_mount()
    } else {
        CameraExtrinsics::new(*random_rotation(rng).matrix(), random_vec3(rng, -0.3, 0.3)).expect("rigid")
    };
    let mut g = FactorGraph::new(Values { poses, quadrics }, k, mount);
    g.set_quadric_update(update);

    g.add_prior(PriorFactor {
        pose_index: 0,
        anchor: random_pose(rng),
        noise: random_noise(rng),
    })
    .unwrap();
    for i in 0..n_poses - 1 {
        let measurement = OdometryMeasurement { v: uniform(rng, 0.0, 1.0), omega: uniform(rng, -1.0, 1.0) };
        g.add_odometry(OdometryFactor {
            pose_index: i,
            measurement,
            noise: random_noise(rng),
        })
        .unwrap();
    }
    for j in 0..n_quadrics {
        for i in 0..n_poses {
            if rng.random_bool(0.7) {
                let lines = [(); 4].map(|_| ImageLine::new(random_vec3(rng, -1.0, 1.0)).unwrap());
                let sigmas: Vec<f64> = (0..4).map(|_| uniform(rng, 0.5, 3.0)).collect();
                g.add_bbox(BBoxFactor {
                    detection: BBoxDetection { pose_index: i, landmark_id: j, lines },
                    noise: NoiseModel::diagonal(&sigmas).unwrap(),
                })
                .unwrap();
            }
            if rng.random_bool(0.5) {
                g.add_relpos(RelPosFactor {
                    measurement: RelativePositionMeasurement {
                        pose_index: i,
                        landmark_id: j,
                        z: random_vec3(rng, -3.0, 3.0),
                    },
                    noise: random_noise(rng),
                })
                .unwrap();
            }
        }
    }
    g
}

/// Tangent plane of the ellipsoid at the surface point with local unit
/// direction `u`: `n·x = 1` in the frame where the ellipsoid is axis-aligned.
pub fn tangent_plane(c: &Vector3<f64>, axes: &Vector3<f64>, r: &Matrix3<f64>, u: &Vector3<f64>) -> Vector4<f64> {
    let n_local = u.component_div(axes);
    let n = r * n_local;
    let pi = Vector4::new(n.x, n.y, n.z, -n.dot(c) - 1.0);
    pi / n.norm()
}

pub fn unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = random_vec3(rng, -1.0, 1.0);
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// A camera at distance 4..8 from `target`, looking roughly at it.
pub fn camera_facing(rng: &mut ChaCha8Rng, target: &Vector3<f64>) -> ProjectionMatrix {
    let center = target + unit(rng) * uniform(rng, 4.0, 8.0);
    let z = (target - center).normalize();
    let x = z.cross(&unit(rng)).normalize();
    let y = z.cross(&x);
    let rot = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    let e = CameraExtrinsics::new(rot, -(rot * center)).unwrap();
    let f = uniform(rng, 0.5, 2.0);
    let k = CameraIntrinsics::new(f, f, uniform(rng, -0.2, 0.2), uniform(rng, -0.2, 0.2), 640, 480).unwrap();
    projection_matrix(&k, &e)
}

/// An image line whose back-projected plane touches the ellipsoid, built
/// from a tangent plane through the camera center in the unit-sphere frame.
pub fn silhouette_line(
    rng: &mut ChaCha8Rng,
    p: &ProjectionMatrix,
    c: &Vector3<f64>,
    axes: &Vector3<f64>,
    r: &Matrix3<f64>,
) -> ImageLine {
    let m = p.matrix();
    let kr = m.fixed_view::<3, 3>(0, 0).into_owned();
    let center = -(kr.try_inverse().unwrap() * m.column(3));
    let s = (r.transpose() * (center - c)).component_div(axes);
    let s2 = s.norm_squared();
    let e = s.cross(&unit(rng)).normalize();
    let mm = s / s2 + e * (1.0 - 1.0 / s2).sqrt();
    let n = r * mm.component_div(axes);
    let pi = Vector4::new(n.x, n.y, n.z, -n.dot(c) - 1.0);
    let l = (m * m.transpose()).try_inverse().unwrap() * (m * pi);
    ImageLine::new(l).unwrap()
}

pub fn look_at(center: Vector3<f64>, target: Vector3<f64>, up_hint: Vector3<f64>) -> CameraExtrinsics {
    let z = (target - center).normalize();
    let x = z.cross(&up_hint).normalize();
    let y = z.cross(&x);
    let rot = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    CameraExtrinsics::new(rot, -(rot * center)).unwrap()
}

/// Cameras on the six axis directions around `target` plus two oblique ones.
pub fn rig(rng: &mut ChaCha8Rng, target: Vector3<f64>) -> Vec<ProjectionMatrix> {
    let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap();
    let dirs = [
        Vector3::x(),
        -Vector3::x(),
        Vector3::y(),
        -Vector3::y(),
        Vector3::z(),
        -Vector3::z(),
        Vector3::new(1.0, 1.0, 1.0).normalize(),
        Vector3::new(-1.0, 0.5, -0.7).normalize(),
    ];
    dirs.iter()
        .map(|d| {
            let dist = uniform(rng, 5.0, 9.0);
            let jitter = random_vec3(rng, -0.3, 0.3);
            let up = (d.cross(&random_vec3(rng, -1.0, 1.0)) + Vector3::new(0.1, 0.2, 0.3)).normalize();
            projection_matrix(&k, &look_at(target + d * dist + jitter, target, up))
        })
        .collect()
}

/// Back-projected planes of the exact bounding box of `q` in every view.
pub fn rig_planes(views: &[ProjectionMatrix], q: &DualQuadric) -> Vec<Vector4<f64>> {
    let mut planes = Vec::new();
    for p in views {
        let bb = project_quadric(p, q).bounding_box().expect("visible");
        let lines = bbox_to_lines(&axis_aligned_corners(bb[0], bb[1], bb[2], bb[3]).unwrap()).unwrap();
        for l in &lines {
            planes.push(p.matrix().transpose() * l.coords());
        }
    }
    planes
}

/// Worst disagreement between the analytic Jacobian and central
/// differences of the whitened residual through the graph's own ⊞.
#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    /// Largest `|a - n| / max(|a|, |n|)` over entries with `|a - n| > abs_floor`.
    pub worst_relative: f64,
    pub entries: usize,
}

pub fn finite_difference_check(graph: &FactorGraph, h: f64, abs_floor: f64) -> FdReport {
    let values = graph.values();
    let analytic = graph.jacobian_at(values).unwrap().to_dense();
    let n = values.dim();
    let mut worst: f64 = 0.0;
    for k in 0..n {
        let mut d = DVector::zeros(n);
        d[k] = h;
        let plus = graph.residual_at(&graph.retract(values, &d)).unwrap().values;
        let minus = graph.residual_at(&graph.retract(values, &(-d))).unwrap().values;
        let numeric = (plus - minus) / (2.0 * h);
        for r in 0..numeric.len() {
            let a = analytic[(r, k)];
            let err = (a - numeric[r]).abs();
            if err > abs_floor {
                worst = worst.max(err / a.abs().max(numeric[r].abs()));
            }
        }
    }
    FdReport { worst_relative: worst, entries: analytic.len() }
}
