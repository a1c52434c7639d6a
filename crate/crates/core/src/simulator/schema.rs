//! On-disk dataset document: one JSON object with flat, unit-suffixed
//! records. Floats are written in shortest round-trip form so that
//! write → read → write reproduces the same bytes.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::{CubeLandmark, Dataset, Detection, OdometryStep, SensorConfig, WorldConfig};
use crate::error::{Error, Result};
use crate::factors::{OdometryMeasurement, RelativePositionMeasurement};
use crate::geometry::RobotPose;

pub const DATASET_SCHEMA_VERSION: u32 = 1;
const SCHEMA_NAME: &str = "quadslam-dataset";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    schema: String,
    version: u32,
    seed: u64,
    world: WorldConfig,
    sensor: SensorConfig,
    poses: Vec<PoseRecord>,
    landmarks: Vec<LandmarkRecord>,
    odometry: Vec<OdometryRecord>,
    detections: Vec<DetectionRecord>,
    relative_positions: Vec<RelPosRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRecord {
    index: usize,
    x_m: f64,
    y_m: f64,
    theta_rad: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LandmarkRecord {
    id: usize,
    center_x_m: f64,
    center_y_m: f64,
    center_z_m: f64,
    side_m: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OdometryRecord {
    step: usize,
    v_m: f64,
    omega_rad: f64,
    turn: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectionRecord {
    pose_index: usize,
    landmark_id: usize,
    u1_px: f64,
    v1_px: f64,
    u2_px: f64,
    v2_px: f64,
    u3_px: f64,
    v3_px: f64,
    u4_px: f64,
    v4_px: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RelPosRecord {
    pose_index: usize,
    landmark_id: usize,
    x_m: f64,
    y_m: f64,
    z_m: f64,
}

pub(super) fn to_json(d: &Dataset) -> Result<String> {
    let doc = Document {
        schema: SCHEMA_NAME.to_string(),
        version: DATASET_SCHEMA_VERSION,
        seed: d.seed,
        world: d.world_config,
        sensor: d.sensor_config,
        poses: d
            .ground_truth
            .iter()
            .enumerate()
            .map(|(index, p)| PoseRecord { index, x_m: p.x, y_m: p.y, theta_rad: p.theta })
            .collect(),
        landmarks: d
            .landmarks
            .iter()
            .map(|l| LandmarkRecord {
                id: l.id,
                center_x_m: l.center.x,
                center_y_m: l.center.y,
                center_z_m: l.center.z,
                side_m: l.side,
            })
            .collect(),
        odometry: d
            .odometry
            .iter()
            .enumerate()
            .map(|(step, s)| OdometryRecord {
                step,
                v_m: s.measurement.v,
                omega_rad: s.measurement.omega,
                turn: s.turn,
            })
            .collect(),
        detections: d
            .detections
            .iter()
            .map(|det| {
                let c = det.corners;
                DetectionRecord {
                    pose_index: det.pose_index,
                    landmark_id: det.landmark_id,
                    u1_px: c[0][0],
                    v1_px: c[0][1],
                    u2_px: c[1][0],
                    v2_px: c[1][1],
                    u3_px: c[2][0],
                    v3_px: c[2][1],
                    u4_px: c[3][0],
                    v4_px: c[3][1],
                }
            })
            .collect(),
        relative_positions: d
            .relpos
            .iter()
            .map(|r| RelPosRecord {
                pose_index: r.pose_index,
                landmark_id: r.landmark_id,
                x_m: r.z.x,
                y_m: r.z.y,
                z_m: r.z.z,
            })
            .collect(),
    };
    check_finite(&doc)?;
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidDataset(msg.into())
}

fn finite(name: &str, vals: &[f64]) -> Result<()> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{name} contains a non-finite value")))
    }
}

fn check_finite(doc: &Document) -> Result<()> {
    for p in &doc.poses {
        finite("pose", &[p.x_m, p.y_m, p.theta_rad])?;
    }
    for l in &doc.landmarks {
        finite("landmark", &[l.center_x_m, l.center_y_m, l.center_z_m, l.side_m])?;
    }
    for o in &doc.odometry {
        finite("odometry", &[o.v_m, o.omega_rad])?;
    }
    for d in &doc.detections {
        finite("detection", &[d.u1_px, d.v1_px, d.u2_px, d.v2_px, d.u3_px, d.v3_px, d.u4_px, d.v4_px])?;
    }
    for r in &doc.relative_positions {
        finite("relative position", &[r.x_m, r.y_m, r.z_m])?;
    }
    Ok(())
}

pub(super) fn from_json(text: &str) -> Result<Dataset> {
    let doc: Document = serde_json::from_str(text)?;
    if doc.schema != SCHEMA_NAME {
        return Err(invalid(format!("unknown schema {:?}", doc.schema)));
    }
    if doc.version != DATASET_SCHEMA_VERSION {
        return Err(invalid(format!("unsupported schema version {}", doc.version)));
    }
    doc.world.validate()?;
    doc.sensor.validate()?;
    if doc.world.seed != doc.seed {
        return Err(invalid("seed does not match the world configuration"));
    }
    check_finite(&doc)?;

    let n_poses = doc.poses.len();
    if n_poses == 0 {
        return Err(invalid("no poses"));
    }
    let mut ground_truth = Vec::with_capacity(n_poses);
    for (i, p) in doc.poses.iter().enumerate() {
        if p.index != i {
            return Err(invalid(format!("pose record {i} has index {}", p.index)));
        }
        ground_truth.push(RobotPose::new(p.x_m, p.y_m, p.theta_rad));
    }

    let mut landmarks = Vec::with_capacity(doc.landmarks.len());
    for (j, l) in doc.landmarks.iter().enumerate() {
        if l.id != j {
            return Err(invalid(format!("landmark record {j} has id {}", l.id)));
        }
        if !(l.side_m > 0.0) {
            return Err(invalid(format!("landmark {j} has non-positive side")));
        }
        landmarks.push(CubeLandmark {
            id: l.id,
            center: Vector3::new(l.center_x_m, l.center_y_m, l.center_z_m),
            side: l.side_m,
        });
    }

    if doc.odometry.len() + 1 != n_poses {
        return Err(invalid(format!("{} odometry steps for {n_poses} poses", doc.odometry.len())));
    }
    let mut odometry = Vec::with_capacity(doc.odometry.len());
    for (i, o) in doc.odometry.iter().enumerate() {
        if o.step != i {
            return Err(invalid(format!("odometry record {i} has step {}", o.step)));
        }
        odometry.push(OdometryStep { measurement: OdometryMeasurement { v: o.v_m, omega: o.omega_rad }, turn: o.turn });
    }

    let check_ref = |what: &str, i: usize, j: usize| -> Result<()> {
        if i >= n_poses || j >= landmarks.len() {
            Err(invalid(format!("{what} references pose {i} / landmark {j} out of range")))
        } else {
            Ok(())
        }
    };

    let mut detections = Vec::with_capacity(doc.detections.len());
    for d in &doc.detections {
        check_ref("detection", d.pose_index, d.landmark_id)?;
        let det = Detection {
            pose_index: d.pose_index,
            landmark_id: d.landmark_id,
            corners: [[d.u1_px, d.v1_px], [d.u2_px, d.v2_px], [d.u3_px, d.v3_px], [d.u4_px, d.v4_px]],
        };
        det.to_bbox()
            .map_err(|e| invalid(format!("detection ({}, {}): {e}", d.pose_index, d.landmark_id)))?;
        detections.push(det);
    }

    let mut relpos = Vec::with_capacity(doc.relative_positions.len());
    for r in &doc.relative_positions {
        check_ref("relative position", r.pose_index, r.landmark_id)?;
        relpos.push(RelativePositionMeasurement {
            pose_index: r.pose_index,
            landmark_id: r.landmark_id,
            z: Vector3::new(r.x_m, r.y_m, r.z_m),
        });
    }

    Ok(Dataset {
        seed: doc.seed,
        world_config: doc.world,
        sensor_config: doc.sensor,
        ground_truth,
        landmarks,
        odometry,
        detections,
        relpos,
    })
}
