//! Synthetic world generation: a planar two-loop trajectory, cube landmarks
//! placed beside it, and noisy odometry, bounding-box and relative-position
//! measurements drawn from seeded random streams.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

use crate::error::{Error, Result};
use crate::factors::{BBoxDetection, OdometryMeasurement, RelativePositionMeasurement};
use crate::geometry::{
    bbox_to_lines, ellipsoid_to_dual_quadric, pose_to_extrinsics, project_quadric, projection_matrix, CameraExtrinsics,
    CameraIntrinsics, DualQuadric, HomPoint2, ImageLine, RobotPose,
};

mod schema;

pub use schema::DATASET_SCHEMA_VERSION;

/// Attempts per landmark before world generation gives up.
const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

// Independent random streams per noise source.
const STREAM_WORLD: u64 = 0;
const STREAM_ODOMETRY: u64 = 1;
const STREAM_BBOX: u64 = 2;
const STREAM_RELPOS: u64 = 3;

/// How detections of a landmark are rendered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandmarkShape {
    /// Axis-aligned bounding box of the eight cube vertices.
    Cube,
    /// Exact silhouette box of the sphere inscribed in the cube.
    Sphere,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub n_landmarks: usize,
    #[serde(rename = "landmark_z_sigma_m")]
    pub landmark_z_sigma: f64,
    #[serde(rename = "cube_side_mean_m")]
    pub cube_side_mean: f64,
    #[serde(rename = "cube_side_sigma_m")]
    pub cube_side_sigma: f64,
    #[serde(rename = "cube_side_floor_m")]
    pub cube_side_floor: f64,
    #[serde(rename = "trajectory_length_m")]
    pub trajectory_length: f64,
    pub n_loops: usize,
    #[serde(rename = "step_length_m")]
    pub step_length: f64,
    /// Steps spent in each of the four 90° corner turns of a loop.
    pub turn_steps: usize,
    #[serde(rename = "lateral_offset_min_m")]
    pub lateral_offset_min: f64,
    #[serde(rename = "lateral_offset_max_m")]
    pub lateral_offset_max: f64,
    pub min_observations: usize,
    pub landmark_shape: LandmarkShape,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_landmarks: 10,
            landmark_z_sigma: 0.3,
            cube_side_mean: 0.5,
            cube_side_sigma: 0.3,
            cube_side_floor: 0.2,
            trajectory_length: 130.0,
            n_loops: 2,
            step_length: 0.5,
            turn_steps: 4,
            lateral_offset_min: 1.0,
            lateral_offset_max: 6.0,
            min_observations: 3,
            landmark_shape: LandmarkShape::Cube,
            seed: 0,
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be positive, got {v}")))
    }
}

fn non_negative(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be non-negative, got {v}")))
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_landmarks == 0 {
            return Err(Error::invalid("n-landmarks", "must be positive"));
        }
        non_negative("landmark-z-sigma", self.landmark_z_sigma)?;
        positive("cube-side-mean", self.cube_side_mean)?;
        non_negative("cube-side-sigma", self.cube_side_sigma)?;
        positive("cube-side-floor", self.cube_side_floor)?;
        positive("trajectory-length", self.trajectory_length)?;
        positive("step-length", self.step_length)?;
        if self.n_loops == 0 {
            return Err(Error::invalid("n-loops", "must be positive"));
        }
        if self.turn_steps == 0 {
            return Err(Error::invalid("turn-steps", "must be positive"));
        }
        positive("lateral-offset-min", self.lateral_offset_min)?;
        if !(self.lateral_offset_max.is_finite() && self.lateral_offset_max >= self.lateral_offset_min) {
            return Err(Error::invalid("lateral-offset-max", "must be at least lateral-offset-min"));
        }
        if self.min_observations == 0 {
            return Err(Error::invalid("min-observations", "must be positive"));
        }
        self.loop_layout().map(|_| ())
    }

    /// Straight steps on the two side pairs of one loop.
    fn loop_layout(&self) -> Result<(usize, usize)> {
        let per_loop = self.trajectory_length / self.n_loops as f64 / self.step_length;
        let steps = per_loop.round();
        if (per_loop - steps).abs() > 1e-9 {
            return Err(Error::invalid(
                "step-length",
                "loop length must be a whole number of steps",
            ));
        }
        let steps = steps as usize;
        let turns = 4 * self.turn_steps;
        if steps < turns + 4 || (steps - turns) % 2 != 0 {
            return Err(Error::invalid(
                "turn-steps",
                format!("{steps} steps per loop cannot hold four turns of {} steps and closed sides", self.turn_steps),
            ));
        }
        let pair = (steps - turns) / 2;
        Ok((pair.div_ceil(2), pair / 2))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorConfig {
    pub focal_mm: f64,
    pub pixel_size_m: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub detection_min_px: f64,
    pub bbox_corner_sigma_px: f64,
    /// Noise on `v` and, on straight steps, on `omega`.
    pub odo_sigma: f64,
    pub odo_turn_omega_sigma: f64,
    pub relpos_sigma_m: f64,
}

impl Default for SensorConfig {
    fn default() -> Self {
        Self {
            focal_mm: 15.0,
            pixel_size_m: 10e-6,
            image_width: 1280,
            image_height: 1024,
            detection_min_px: 100.0,
            bbox_corner_sigma_px: 1.0,
            odo_sigma: 0.02,
            odo_turn_omega_sigma: 0.1,
            relpos_sigma_m: 0.1,
        }
    }
}

impl SensorConfig {
    pub fn validate(&self) -> Result<()> {
        positive("focal-mm", self.focal_mm)?;
        positive("pixel-size-m", self.pixel_size_m)?;
        if self.image_width == 0 {
            return Err(Error::invalid("image-width", "must be positive"));
        }
        if self.image_height == 0 {
            return Err(Error::invalid("image-height", "must be positive"));
        }
        positive("detection-min-px", self.detection_min_px)?;
        non_negative("bbox-sigma", self.bbox_corner_sigma_px)?;
        non_negative("odo-sigma", self.odo_sigma)?;
        non_negative("odo-turn-omega-sigma", self.odo_turn_omega_sigma)?;
        non_negative("relpos-sigma", self.relpos_sigma_m)?;
        Ok(())
    }

    /// Pinhole intrinsics with the principal point at the image center.
    pub fn intrinsics(&self) -> CameraIntrinsics {
        let f = self.focal_mm * 1e-3 / self.pixel_size_m;
        CameraIntrinsics {
            fx: f,
            fy: f,
            cx: self.image_width as f64 / 2.0,
            cy: self.image_height as f64 / 2.0,
            width: self.image_width,
            height: self.image_height,
        }
    }

    /// Zero-noise copy.
    pub fn noise_free(&self) -> Self {
        Self {
            bbox_corner_sigma_px: 0.0,
            odo_sigma: 0.0,
            odo_turn_omega_sigma: 0.0,
            relpos_sigma_m: 0.0,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubeLandmark {
    pub id: usize,
    pub center: Vector3<f64>,
    pub side: f64,
}

impl CubeLandmark {
    pub fn vertices(&self) -> [Vector3<f64>; 8] {
        let h = self.side / 2.0;
        let mut out = [Vector3::zeros(); 8];
        for (n, v) in out.iter_mut().enumerate() {
            let sx = if n & 1 == 0 { -h } else { h };
            let sy = if n & 2 == 0 { -h } else { h };
            let sz = if n & 4 == 0 { -h } else { h };
            *v = self.center + Vector3::new(sx, sy, sz);
        }
        out
    }

    /// Dual quadric of the inscribed sphere (semi-axes `side / 2`).
    pub fn inscribed_quadric(&self) -> DualQuadric {
        ellipsoid_to_dual_quadric(&self.center, &Vector3::repeat(self.side / 2.0), &Matrix3::identity())
            .expect("cube sides are positive")
    }
}

/// One odometry step of the nominal route.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OdometryStep {
    pub measurement: OdometryMeasurement,
    pub turn: bool,
}

/// Axis-aligned pixel box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PixelBox {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl PixelBox {
    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    /// Corners in cyclic order.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        [
            [self.u_min, self.v_min],
            [self.u_max, self.v_min],
            [self.u_max, self.v_max],
            [self.u_min, self.v_max],
        ]
    }
}

/// A bounding-box observation as recorded in a dataset: noisy pixel corners.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub pose_index: usize,
    pub landmark_id: usize,
    pub corners: [[f64; 2]; 4],
}

impl Detection {
    pub fn to_bbox(&self) -> Result<BBoxDetection> {
        Ok(BBoxDetection {
            pose_index: self.pose_index,
            landmark_id: self.landmark_id,
            lines: corners_to_lines(&self.corners)?,
        })
    }
}

pub fn corners_to_lines(corners: &[[f64; 2]; 4]) -> Result<[ImageLine; 4]> {
    let pts = [
        HomPoint2::from_pixel(corners[0][0], corners[0][1])?,
        HomPoint2::from_pixel(corners[1][0], corners[1][1])?,
        HomPoint2::from_pixel(corners[2][0], corners[2][1])?,
        HomPoint2::from_pixel(corners[3][0], corners[3][1])?,
    ];
    bbox_to_lines(&pts)
}

/// Ground truth route and landmarks.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub trajectory: Vec<RobotPose>,
    pub steps: Vec<OdometryStep>,
    pub landmarks: Vec<CubeLandmark>,
}

/// A complete simulated trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub seed: u64,
    pub world_config: WorldConfig,
    pub sensor_config: SensorConfig,
    pub ground_truth: Vec<RobotPose>,
    pub landmarks: Vec<CubeLandmark>,
    pub odometry: Vec<OdometryStep>,
    pub detections: Vec<Detection>,
    pub relpos: Vec<RelativePositionMeasurement>,
}

impl Dataset {
    pub fn intrinsics(&self) -> CameraIntrinsics {
        self.sensor_config.intrinsics()
    }

    pub fn mount(&self) -> CameraExtrinsics {
        CameraExtrinsics::left_facing_mount()
    }

    pub fn odometry_measurements(&self) -> Vec<OdometryMeasurement> {
        self.odometry.iter().map(|s| s.measurement).collect()
    }

    pub fn bbox_detections(&self) -> Result<Vec<BBoxDetection>> {
        self.detections.iter().map(Detection::to_bbox).collect()
    }

    pub fn detections_per_landmark(&self) -> Vec<usize> {
        let mut counts = vec![0; self.landmarks.len()];
        for d in &self.detections {
            counts[d.landmark_id] += 1;
        }
        counts
    }

    pub fn to_json(&self) -> Result<String> {
        schema::to_json(self)
    }

    /// Parses and validates a dataset document.
    pub fn from_json(text: &str) -> Result<Self> {
        schema::from_json(text)
    }

    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes).map_err(|e| Error::InvalidDataset(e.to_string()))?;
        Self::from_json(text)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gauss<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    let n: f64 = rng.sample(StandardNormal);
    sigma * n
}

/// Odometry of the nominal route: `n_loops` counter-clockwise rounded
/// rectangles, each made of two pairs of equal opposite sides joined by
/// four 90° turns of `turn_steps` steps.
pub fn nominal_route(cfg: &WorldConfig) -> Result<Vec<OdometryStep>> {
    let (long, short) = cfg.loop_layout()?;
    let omega = FRAC_PI_2 / cfg.turn_steps as f64;
    let mut steps = Vec::new();
    for _ in 0..cfg.n_loops {
        for side in 0..4 {
            let n = if side % 2 == 0 { long } else { short };
            steps.extend(std::iter::repeat_n(
                OdometryStep { measurement: OdometryMeasurement { v: cfg.step_length, omega: 0.0 }, turn: false },
                n,
            ));
            steps.extend(std::iter::repeat_n(
                OdometryStep { measurement: OdometryMeasurement { v: cfg.step_length, omega }, turn: true },
                cfg.turn_steps,
            ));
        }
    }
    Ok(steps)
}

/// Pixel box of a landmark seen from `pose`, if it passes the detection
/// test: in front of the camera, fully inside the image, and with its
/// larger side at least `min_px` long.
pub fn project_landmark_bbox(
    landmark: &CubeLandmark,
    shape: LandmarkShape,
    pose: &RobotPose,
    k: &CameraIntrinsics,
    mount: &CameraExtrinsics,
    min_px: f64,
) -> Option<PixelBox> {
    let bbox = match shape {
        LandmarkShape::Cube => cube_box(landmark, pose, k, mount)?,
        LandmarkShape::Sphere => sphere_box(landmark, pose, k, mount)?,
    };
    let inside = k.contains(bbox.u_min, bbox.v_min) && k.contains(bbox.u_max, bbox.v_max);
    if inside && bbox.width().max(bbox.height()) >= min_px {
        Some(bbox)
    } else {
        None
    }
}

/// [`project_landmark_bbox`] for cube landmarks.
pub fn project_cube_bbox(
    landmark: &CubeLandmark,
    pose: &RobotPose,
    k: &CameraIntrinsics,
    mount: &CameraExtrinsics,
    min_px: f64,
) -> Option<PixelBox> {
    project_landmark_bbox(landmark, LandmarkShape::Cube, pose, k, mount, min_px)
}

fn cube_box(landmark: &CubeLandmark, pose: &RobotPose, k: &CameraIntrinsics, mount: &CameraExtrinsics) -> Option<PixelBox> {
    let p = projection_matrix(k, &pose_to_extrinsics(pose, mount));
    let mut b = PixelBox { u_min: f64::INFINITY, v_min: f64::INFINITY, u_max: f64::NEG_INFINITY, v_max: f64::NEG_INFINITY };
    for v in landmark.vertices() {
        let (px, depth) = p.project(&v);
        if !(depth > 0.0) {
            return None;
        }
        b.u_min = b.u_min.min(px.x);
        b.v_min = b.v_min.min(px.y);
        b.u_max = b.u_max.max(px.x);
        b.v_max = b.v_max.max(px.y);
    }
    Some(b)
}

fn sphere_box(landmark: &CubeLandmark, pose: &RobotPose, k: &CameraIntrinsics, mount: &CameraExtrinsics) -> Option<PixelBox> {
    let e = pose_to_extrinsics(pose, mount);
    // the whole sphere must lie in front of the camera
    if !(e.transform_point(&landmark.center).z > landmark.side / 2.0) {
        return None;
    }
    let p = projection_matrix(k, &e);
    let [u_min, v_min, u_max, v_max] = project_quadric(&p, &landmark.inscribed_quadric()).bounding_box()?;
    Some(PixelBox { u_min, v_min, u_max, v_max })
}

fn count_detections(
    landmark: &CubeLandmark,
    trajectory: &[RobotPose],
    world: &WorldConfig,
    sensor: &SensorConfig,
) -> usize {
    let k = sensor.intrinsics();
    let mount = CameraExtrinsics::left_facing_mount();
    trajectory
        .iter()
        .filter(|x| project_landmark_bbox(landmark, world.landmark_shape, x, &k, &mount, sensor.detection_min_px).is_some())
        .count()
}

/// Ground truth route and landmarks for a seed.
///
/// Landmark centers are drawn at a uniformly random point of the first
/// loop, shifted 1–6 m (configurable) to the left of the route, with a
/// normally distributed height. Cube sides follow `max(floor, N(mean, σ))`.
/// A landmark is redrawn until it is detected from at least
/// `min_observations` poses and is clear of the route.
pub fn generate_world(cfg: &WorldConfig, sensor: &SensorConfig) -> Result<World> {
    cfg.validate()?;
    sensor.validate()?;
    let steps = nominal_route(cfg)?;
    let trajectory = crate::init::init_poses(
        &steps.iter().map(|s| s.measurement).collect::<Vec<_>>(),
        RobotPose::default(),
    );
    let loop_len = steps.len() / cfg.n_loops;
    let mut rng = stream(cfg.seed, STREAM_WORLD);
    let mut landmarks = Vec::with_capacity(cfg.n_landmarks);
    for id in 0..cfg.n_landmarks {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cand = sample_landmark(id, cfg, &trajectory[..loop_len], &mut rng);
            let clear = trajectory
                .iter()
                .all(|p| (p.position() - cand.center.xy()).norm() >= cfg.lateral_offset_min);
            if clear && count_detections(&cand, &trajectory, cfg, sensor) >= cfg.min_observations {
                placed = Some(cand);
                break;
            }
        }
        let lm = placed.ok_or_else(|| {
            Error::WorldGeneration(format!(
                "landmark {id} could not be placed with {} observations",
                cfg.min_observations
            ))
        })?;
        landmarks.push(lm);
    }
    Ok(World { trajectory, steps, landmarks })
}

fn sample_landmark<R: Rng>(id: usize, cfg: &WorldConfig, first_loop: &[RobotPose], rng: &mut R) -> CubeLandmark {
    let i = rng.random_range(0..first_loop.len());
    let along = rng.random_range(0.0..cfg.step_length);
    let lateral = rng.random_range(cfg.lateral_offset_min..=cfg.lateral_offset_max);
    let z = gauss(rng, cfg.landmark_z_sigma);
    let side = (cfg.cube_side_mean + gauss(rng, cfg.cube_side_sigma)).max(cfg.cube_side_floor);
    let base = first_loop[i];
    let center = base.robot_to_world(&Vector3::new(along, lateral, z));
    CubeLandmark { id, center, side }
}

/// Adds independent pixel noise to each corner coordinate and converts the
/// result to normalized lines.
pub fn corrupt_bbox<R: Rng>(bbox: &PixelBox, sigma_px: f64, rng: &mut R) -> Result<([[f64; 2]; 4], [ImageLine; 4])> {
    let mut corners = bbox.corners();
    for c in corners.iter_mut() {
        c[0] += gauss(rng, sigma_px);
        c[1] += gauss(rng, sigma_px);
    }
    let lines = corners_to_lines(&corners)?;
    Ok((corners, lines))
}

/// Noisy odometry: `v` gets `N(0, σ²)`, `omega` gets `N(0, σ²)` on straight
/// steps and `N(0, σ_turn²)` on turn steps.
pub fn corrupt_odometry<R: Rng>(steps: &[OdometryStep], sensor: &SensorConfig, rng: &mut R) -> Vec<OdometryStep> {
    steps
        .iter()
        .map(|s| {
            let omega_sigma = if s.turn { sensor.odo_turn_omega_sigma } else { sensor.odo_sigma };
            let dv = gauss(rng, sensor.odo_sigma);
            let dw = gauss(rng, omega_sigma);
            OdometryStep {
                measurement: OdometryMeasurement { v: s.measurement.v + dv, omega: s.measurement.omega + dw },
                turn: s.turn,
            }
        })
        .collect()
}

/// Cube center in the robot frame of `pose` plus per-axis `N(0, σ²)` noise.
pub fn measure_relative_position<R: Rng>(
    landmark: &CubeLandmark,
    pose: &RobotPose,
    pose_index: usize,
    sigma: f64,
    rng: &mut R,
) -> RelativePositionMeasurement {
    let mut z = pose.world_to_robot(&landmark.center);
    for c in z.iter_mut() {
        *c += gauss(rng, sigma);
    }
    RelativePositionMeasurement { pose_index, landmark_id: landmark.id, z }
}

/// Simulates one full trial.
pub fn generate_dataset(world_cfg: &WorldConfig, sensor: &SensorConfig) -> Result<Dataset> {
    let world = generate_world(world_cfg, sensor)?;
    let seed = world_cfg.seed;
    let k = sensor.intrinsics();
    let mount = CameraExtrinsics::left_facing_mount();

    let odometry = corrupt_odometry(&world.steps, sensor, &mut stream(seed, STREAM_ODOMETRY));
    let mut bbox_rng = stream(seed, STREAM_BBOX);
    let mut relpos_rng = stream(seed, STREAM_RELPOS);
    let mut detections = Vec::new();
    let mut relpos = Vec::new();
    for (i, pose) in world.trajectory.iter().enumerate() {
        for lm in &world.landmarks {
            let Some(bbox) =
                project_landmark_bbox(lm, world_cfg.landmark_shape, pose, &k, &mount, sensor.detection_min_px)
            else {
                continue;
            };
            let (corners, _) = corrupt_bbox(&bbox, sensor.bbox_corner_sigma_px, &mut bbox_rng)?;
            detections.push(Detection { pose_index: i, landmark_id: lm.id, corners });
            relpos.push(measure_relative_position(lm, pose, i, sensor.relpos_sigma_m, &mut relpos_rng));
        }
    }
    Ok(Dataset {
        seed,
        world_config: *world_cfg,
        sensor_config: *sensor,
        ground_truth: world.trajectory,
        landmarks: world.landmarks,
        odometry,
        detections,
        relpos,
    })
}
