//! Per-sample annotation records.
//!
//! A record stores the pose as axis-angle triples plus a per-joint mask bit;
//! masked joints keep their original rotation so that pose supervision of
//! amputated joints remains available, and the zero matrix is restored when
//! the record is turned back into pose parameters.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::amputation::{apply_mask, mask_keypoints_2d, AmputationLabel};
use crate::body_model::{forward, BodyTemplate, PoseParams, ShapeParams};
use crate::rotations::{axis_angle_to_matrix, matrix_to_axis_angle, AxisAngle, RotationMatrix};
use crate::synth::{project_weak_perspective, WeakPerspectiveCamera};
use crate::{Error, Result, NUM_BETAS, NUM_JOINTS};

/// Allowed deviation between stored and recomputed 3D joints, meters.
pub const JOINT_CONSISTENCY_TOL: f64 = 1e-6;

pub const RECORD_FIELDS: [&str; 9] = [
    "image",
    "bbox",
    "pose_aa",
    "pose_mask",
    "betas",
    "joints3d",
    "kp2d",
    "camera",
    "amputation",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    #[serde(rename = "image")]
    pub image_ref: String,
    pub bbox: [f64; 4],
    pub pose_aa: [[f64; 3]; NUM_JOINTS],
    pub pose_mask: [bool; NUM_JOINTS],
    pub betas: [f64; NUM_BETAS],
    pub joints3d: [[f64; 3]; NUM_JOINTS],
    pub kp2d: [[f64; 3]; NUM_JOINTS],
    pub camera: WeakPerspectiveCamera,
    #[serde(with = "label_text")]
    pub amputation: AmputationLabel,
}

mod label_text {
    use super::AmputationLabel;
    use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(l: &AmputationLabel, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(l)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<AmputationLabel, D::Error> {
        let text = String::deserialize(d)?;
        text.parse().map_err(D::Error::custom)
    }
}

impl AnnotationRecord {
    /// Pose parameters with masked joints set to the zero matrix.
    pub fn pose(&self) -> Result<PoseParams> {
        let mut pose = PoseParams::identity();
        for j in 0..NUM_JOINTS {
            pose.rotations[j] = if self.pose_mask[j] {
                RotationMatrix::zero()
            } else {
                let [x, y, z] = self.pose_aa[j];
                axis_angle_to_matrix(&AxisAngle::new(x, y, z))?
            };
        }
        Ok(pose)
    }

    /// Pose parameters before masking.
    pub fn unmasked_pose(&self) -> Result<PoseParams> {
        let mut pose = PoseParams::identity();
        for j in 0..NUM_JOINTS {
            let [x, y, z] = self.pose_aa[j];
            pose.rotations[j] = axis_angle_to_matrix(&AxisAngle::new(x, y, z))?;
        }
        Ok(pose)
    }

    pub fn shape(&self) -> Result<ShapeParams> {
        ShapeParams::new(self.betas)
    }

    pub fn joints(&self) -> Vec<Vector3<f64>> {
        self.joints3d.iter().map(|p| Vector3::from(*p)).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("records always serialize")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("records always serialize")
    }

    /// Parses one record. In strict mode unknown top-level fields are
    /// rejected; missing fields are always rejected.
    pub fn from_json(text: &str, strict: bool) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| parse_error(text, &e))?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::schema("annotation record must be a JSON object"))?;
        if strict {
            if let Some(unknown) = obj.keys().find(|k| !RECORD_FIELDS.contains(&k.as_str())) {
                return Err(Error::schema(format!("unknown field {unknown:?}")));
            }
        }
        serde_json::from_value(value).map_err(|e| Error::schema(e.to_string()))
    }
}

fn parse_error(text: &str, e: &serde_json::Error) -> Error {
    if e.is_eof() {
        return Error::Parse {
            offset: text.len(),
            message: e.to_string(),
        };
    }
    // serde_json reports 1-based line and column of the offending byte
    let offset = text
        .split_inclusive('\n')
        .take(e.line().saturating_sub(1))
        .map(str::len)
        .sum::<usize>()
        + e.column().saturating_sub(1);
    Error::Parse {
        offset: offset.min(text.len()),
        message: e.to_string(),
    }
}

/// Builds a self-consistent record: masks the pose, poses the mesh, regresses
/// and projects the joints, then masks the amputated keypoints.
///
/// The bounding box spans the projected mesh.
pub fn emit_record(
    tmpl: &BodyTemplate,
    pose: &PoseParams,
    betas: &ShapeParams,
    label: &AmputationLabel,
    camera: &WeakPerspectiveCamera,
    image_ref: &str,
    image_size: (u32, u32),
) -> Result<AnnotationRecord> {
    camera.validate()?;
    let masked_joints = label.masked_joints();
    if let Some(j) = pose
        .zeroed_joints()
        .into_iter()
        .find(|j| !masked_joints.contains(j))
    {
        return Err(Error::invalid(format!(
            "joint {j} is zeroed but not covered by the amputation label"
        )));
    }
    let masked = apply_mask(pose, label);
    let mesh = forward(tmpl, &masked, betas);

    let mut pose_aa = [[0.0; 3]; NUM_JOINTS];
    for (j, r) in pose.rotations.iter().enumerate() {
        if !r.is_zero() {
            let aa = matrix_to_axis_angle(r)?.0;
            pose_aa[j] = [aa.x, aa.y, aa.z];
        }
    }

    let mut joints3d = [[0.0; 3]; NUM_JOINTS];
    for (dst, p) in joints3d.iter_mut().zip(&mesh.joints_posed) {
        *dst = [p.x, p.y, p.z];
    }
    let projected = project_weak_perspective(&mesh.joints_posed, camera, image_size);
    let visible: Vec<[f64; 3]> = projected.iter().map(|p| [p[0], p[1], 1.0]).collect();
    let kps = mask_keypoints_2d(&visible, label, &BTreeSet::new());
    let mut kp2d = [[0.0; 3]; NUM_JOINTS];
    kp2d.copy_from_slice(&kps);

    let verts_2d = project_weak_perspective(&mesh.vertices, camera, image_size);
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in &verts_2d {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }

    Ok(AnnotationRecord {
        image_ref: image_ref.to_string(),
        bbox: [x0, y0, x1 - x0, y1 - y0],
        pose_aa,
        pose_mask: label.joint_mask(),
        betas: betas.betas,
        joints3d,
        kp2d,
        camera: *camera,
        amputation: *label,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    NonFinite,
    Camera,
    KeypointMasking,
    MaskBits,
    JointConsistency,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub joints: Vec<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {} (joints {:?})", self.kind, self.message, self.joints)
    }
}

/// Lists every invariant the record breaks. The 3D consistency check runs
/// only when a template is supplied.
pub fn validate_record(rec: &AnnotationRecord, tmpl: Option<&BodyTemplate>) -> Vec<Violation> {
    let mut out = Vec::new();

    let bad_joints: Vec<usize> = (0..NUM_JOINTS)
        .filter(|&j| {
            rec.pose_aa[j]
                .iter()
                .chain(&rec.joints3d[j])
                .chain(&rec.kp2d[j])
                .any(|v| !v.is_finite())
        })
        .collect();
    let scalars_finite = rec.bbox.iter().chain(&rec.betas).all(|v| v.is_finite());
    if !bad_joints.is_empty() || !scalars_finite {
        out.push(Violation {
            kind: ViolationKind::NonFinite,
            joints: bad_joints,
            message: "record contains non-finite numbers".into(),
        });
        return out;
    }
    if let Err(e) = rec.camera.validate() {
        out.push(Violation {
            kind: ViolationKind::Camera,
            joints: vec![],
            message: e.to_string(),
        });
    }

    let expected_mask = rec.amputation.joint_mask();
    let unmasked_kps: Vec<usize> = (0..NUM_JOINTS)
        .filter(|&j| expected_mask[j] && rec.kp2d[j] != [0.0; 3])
        .collect();
    if !unmasked_kps.is_empty() {
        out.push(Violation {
            kind: ViolationKind::KeypointMasking,
            joints: unmasked_kps,
            message: "amputated keypoints must be (0, 0) with zero confidence".into(),
        });
    }

    let mask_mismatch: Vec<usize> = (0..NUM_JOINTS)
        .filter(|&j| expected_mask[j] != rec.pose_mask[j])
        .collect();
    if !mask_mismatch.is_empty() {
        out.push(Violation {
            kind: ViolationKind::MaskBits,
            joints: mask_mismatch,
            message: format!("pose mask disagrees with label {}", rec.amputation),
        });
    }

    if let Some(tmpl) = tmpl {
        // recompute from the label's mask so a wrong mask bit is not double counted
        let recomputed = rec.unmasked_pose().map(|p| {
            let masked = apply_mask(&p, &rec.amputation);
            forward(tmpl, &masked, &ShapeParams { betas: rec.betas }).joints_posed
        });
        match recomputed {
            Ok(joints) => {
                let off: Vec<usize> = (0..NUM_JOINTS)
                    .filter(|&j| {
                        (joints[j] - Vector3::from(rec.joints3d[j])).norm() > JOINT_CONSISTENCY_TOL
                    })
                    .collect();
                if !off.is_empty() {
                    out.push(Violation {
                        kind: ViolationKind::JointConsistency,
                        joints: off,
                        message: format!(
                            "3D joints deviate from the body model by more than {JOINT_CONSISTENCY_TOL} m"
                        ),
                    });
                }
            }
            Err(e) => out.push(Violation {
                kind: ViolationKind::NonFinite,
                joints: vec![],
                message: e.to_string(),
            }),
        }
    }
    out
}
