//! Kinematic-tree parametric body model.
//!
//! Shape blendshapes are added to the rest mesh, rest joints are regressed
//! from the shaped mesh, per-joint rigid transforms are composed from the root
//! outward and vertices are skinned by linear blend skinning. A joint whose
//! rotation is the zero matrix yields a transform with a zero linear block, so
//! every vertex driven only by that subtree lands on the transform's
//! translation column.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{self, Reader};
use crate::rotations::RotationMatrix;
use crate::{Error, Result, NUM_BETAS, NUM_JOINTS};

/// Parent of each joint in the 24-joint SMPL body tree; `-1` marks the root.
pub const SMPL_PARENTS: [i32; NUM_JOINTS] = [
    -1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21,
];

pub const SMPL_JOINT_NAMES: [&str; NUM_JOINTS] = [
    "Pelvis",
    "L_Hip",
    "R_Hip",
    "Spine1",
    "L_Knee",
    "R_Knee",
    "Spine2",
    "L_Ankle",
    "R_Ankle",
    "Spine3",
    "L_Foot",
    "R_Foot",
    "Neck",
    "L_Collar",
    "R_Collar",
    "Head",
    "L_Shoulder",
    "R_Shoulder",
    "L_Elbow",
    "R_Elbow",
    "L_Wrist",
    "R_Wrist",
    "L_Hand",
    "R_Hand",
];

const TEMPLATE_MAGIC: &[u8; 8] = b"AMPKIN01";
const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Parent index of `joint` in the SMPL tree.
pub fn smpl_parent(joint: usize) -> Option<usize> {
    usize::try_from(SMPL_PARENTS[joint]).ok()
}

/// `joint` and every joint below it in the SMPL tree, in ascending order.
pub fn smpl_subtree(joint: usize) -> Vec<usize> {
    let mut in_tree = [false; NUM_JOINTS];
    in_tree[joint] = true;
    // parents precede children, so one forward sweep closes the set
    for j in joint + 1..NUM_JOINTS {
        if let Some(p) = smpl_parent(j) {
            in_tree[j] = in_tree[p];
        }
    }
    (0..NUM_JOINTS).filter(|&j| in_tree[j]).collect()
}

/// Joint-local rotations; entry 0 is the global orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseParams {
    pub rotations: [RotationMatrix; NUM_JOINTS],
}

impl PoseParams {
    pub fn identity() -> Self {
        PoseParams {
            rotations: [RotationMatrix::identity(); NUM_JOINTS],
        }
    }

    pub fn zeroed_joints(&self) -> Vec<usize> {
        (0..NUM_JOINTS)
            .filter(|&j| self.rotations[j].is_zero())
            .collect()
    }
}

impl Default for PoseParams {
    fn default() -> Self {
        Self::identity()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ShapeParams {
    pub betas: [f64; NUM_BETAS],
}

impl ShapeParams {
    pub fn new(betas: [f64; NUM_BETAS]) -> Result<Self> {
        if betas.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("non-finite shape coefficient"));
        }
        Ok(ShapeParams { betas })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshResult {
    pub vertices: Vec<Vector3<f64>>,
    /// Joints regressed from the posed vertices.
    pub joints_posed: Vec<Vector3<f64>>,
    /// World transform of each joint frame; the linear block is zero below an
    /// amputated joint.
    pub joint_transforms: Vec<Matrix4<f64>>,
}

impl MeshResult {
    /// Kinematic joint locations (translation column of each world transform).
    pub fn joint_origins(&self) -> Vec<Vector3<f64>> {
        self.joint_transforms
            .iter()
            .map(|t| Vector3::new(t[(0, 3)], t[(1, 3)], t[(2, 3)]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BodyTemplate {
    rest_vertices: Vec<Vector3<f64>>,
    skin_weights: Vec<[f64; NUM_JOINTS]>,
    /// `shape_dirs[v][c][k]`: displacement of coordinate `c` of vertex `v` per unit beta `k`.
    shape_dirs: Vec<[[f64; NUM_BETAS]; 3]>,
    /// 24 rows of length N.
    joint_regressor: Vec<Vec<f64>>,
    parents: [i32; NUM_JOINTS],
    joint_names: Vec<String>,
    faces: Vec<[usize; 3]>,
}

impl BodyTemplate {
    /// Builds a template and checks every invariant. Faces are the ring
    /// triangulation implied by the vertex count.
    pub fn new(
        rest_vertices: Vec<Vector3<f64>>,
        skin_weights: Vec<[f64; NUM_JOINTS]>,
        shape_dirs: Vec<[[f64; NUM_BETAS]; 3]>,
        joint_regressor: Vec<Vec<f64>>,
        parents: [i32; NUM_JOINTS],
        joint_names: Vec<String>,
    ) -> Result<Self> {
        let faces = ring_faces(rest_vertices.len());
        let t = BodyTemplate {
            rest_vertices,
            skin_weights,
            shape_dirs,
            joint_regressor,
            parents,
            joint_names,
            faces,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn num_vertices(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn rest_vertices(&self) -> &[Vector3<f64>] {
        &self.rest_vertices
    }

    pub fn skin_weights(&self) -> &[[f64; NUM_JOINTS]] {
        &self.skin_weights
    }

    pub fn shape_dirs(&self) -> &[[[f64; NUM_BETAS]; 3]] {
        &self.shape_dirs
    }

    pub fn joint_regressor(&self) -> &[Vec<f64>] {
        &self.joint_regressor
    }

    pub fn parents(&self) -> &[i32; NUM_JOINTS] {
        &self.parents
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        usize::try_from(self.parents[joint]).ok()
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    /// Checks the template invariants; the error names the first one violated.
    pub fn validate(&self) -> Result<()> {
        let n = self.rest_vertices.len();
        if n == 0 {
            return Err(Error::schema("template has no vertices"));
        }
        if self.skin_weights.len() != n || self.shape_dirs.len() != n {
            return Err(Error::schema("per-vertex arrays disagree on vertex count"));
        }
        if self.joint_regressor.len() != NUM_JOINTS
            || self.joint_regressor.iter().any(|r| r.len() != n)
        {
            return Err(Error::schema("joint regressor must be 24 x N"));
        }
        if self.joint_names.len() != NUM_JOINTS {
            return Err(Error::schema("expected 24 joint names"));
        }
        let finite = self.rest_vertices.iter().all(|v| v.iter().all(|x| x.is_finite()))
            && self
                .shape_dirs
                .iter()
                .all(|d| d.iter().flatten().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::schema("non-finite vertex or blendshape value"));
        }
        for (v, row) in self.skin_weights.iter().enumerate() {
            check_weight_row(row, "skin weight", v)?;
        }
        for (j, row) in self.joint_regressor.iter().enumerate() {
            check_weight_row(row, "joint regressor", j)?;
        }
        if self.parents[0] != -1 {
            return Err(Error::schema("kinematic tree: joint 0 must be the root"));
        }
        for j in 1..NUM_JOINTS {
            let p = self.parents[j];
            if p < 0 || p as usize >= j {
                return Err(Error::schema(format!(
                    "kinematic tree: parents[{j}] = {p} is not an earlier joint"
                )));
            }
        }
        if self.parents != SMPL_PARENTS {
            return Err(Error::schema(
                "kinematic tree: parent table does not follow the SMPL joint layout",
            ));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = binio::read_all(File::open(path)?)?;
        Self::from_bytes(&bytes)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let n = self.num_vertices();
        w.write_all(TEMPLATE_MAGIC)?;
        binio::write_u32(w, n as u32)?;
        binio::write_u32(w, NUM_JOINTS as u32)?;
        binio::write_u32(w, NUM_BETAS as u32)?;
        for v in &self.rest_vertices {
            binio::write_f64s(w, v.as_slice())?;
        }
        for row in &self.skin_weights {
            binio::write_f64s(w, row)?;
        }
        for d in &self.shape_dirs {
            for c in d {
                binio::write_f64s(w, c)?;
            }
        }
        for row in &self.joint_regressor {
            binio::write_f64s(w, row)?;
        }
        for p in &self.parents {
            binio::write_i32(w, *p)?;
        }
        for name in &self.joint_names {
            binio::write_u32(w, name.len() as u32)?;
            w.write_all(name.as_bytes())?;
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(TEMPLATE_MAGIC)?;
        let n = r.u32()? as usize;
        let j = r.u32()? as usize;
        let k = r.u32()? as usize;
        if j != NUM_JOINTS || k != NUM_BETAS {
            return Err(Error::schema(format!(
                "header declares J={j}, K_beta={k}; expected 24 and 10"
            )));
        }
        let rest = r.f64s(n * 3)?;
        let weights = r.f64s(n * NUM_JOINTS)?;
        let dirs = r.f64s(n * 3 * NUM_BETAS)?;
        let regressor = r.f64s(NUM_JOINTS * n)?;
        let mut parents = [0i32; NUM_JOINTS];
        for p in parents.iter_mut() {
            *p = r.i32()?;
        }
        let mut names = Vec::with_capacity(NUM_JOINTS);
        for _ in 0..NUM_JOINTS {
            let len = r.u32()? as usize;
            let raw = r.take(len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| Error::schema("joint name is not valid UTF-8"))?;
            names.push(name.to_string());
        }
        r.finish()?;

        let rest_vertices = rest
            .chunks_exact(3)
            .map(|c| Vector3::new(c[0], c[1], c[2]))
            .collect();
        let skin_weights = weights
            .chunks_exact(NUM_JOINTS)
            .map(|c| c.try_into().unwrap())
            .collect();
        let shape_dirs = dirs
            .chunks_exact(3 * NUM_BETAS)
            .map(|c| {
                let mut d = [[0.0; NUM_BETAS]; 3];
                for (axis, row) in d.iter_mut().enumerate() {
                    row.copy_from_slice(&c[axis * NUM_BETAS..(axis + 1) * NUM_BETAS]);
                }
                d
            })
            .collect();
        let joint_regressor = if n == 0 {
            vec![Vec::new(); NUM_JOINTS]
        } else {
            regressor.chunks_exact(n).map(|c| c.to_vec()).collect()
        };
        BodyTemplate::new(
            rest_vertices,
            skin_weights,
            shape_dirs,
            joint_regressor,
            parents,
            names,
        )
    }
}

fn check_weight_row(row: &[f64], what: &str, index: usize) -> Result<()> {
    if row.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::schema(format!(
            "{what} row {index} has a negative or non-finite entry"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::schema(format!(
            "{what} row {index} sums to {sum} instead of 1"
        )));
    }
    Ok(())
}

/// Rest vertices plus the blendshape displacement for `beta`.
pub fn shape_vertices(tmpl: &BodyTemplate, beta: &ShapeParams) -> Vec<Vector3<f64>> {
    tmpl.rest_vertices
        .iter()
        .zip(&tmpl.shape_dirs)
        .map(|(v, dirs)| {
            let mut out = *v;
            for (c, dir) in dirs.iter().enumerate() {
                out[c] += dir.iter().zip(&beta.betas).map(|(d, b)| d * b).sum::<f64>();
            }
            out
        })
        .collect()
}

/// `joint_regressor × vertices`.
pub fn regress_joints(tmpl: &BodyTemplate, vertices: &[Vector3<f64>]) -> Result<Vec<Vector3<f64>>> {
    if vertices.len() != tmpl.num_vertices() {
        return Err(Error::dims(format!(
            "expected {} vertices, got {}",
            tmpl.num_vertices(),
            vertices.len()
        )));
    }
    Ok(regress_unchecked(tmpl, vertices))
}

fn regress_unchecked(tmpl: &BodyTemplate, vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    tmpl.joint_regressor
        .iter()
        .map(|row| {
            row.iter()
                .zip(vertices)
                .filter(|(w, _)| **w != 0.0)
                .fold(Vector3::zeros(), |acc, (w, v)| acc + v * *w)
        })
        .collect()
}

/// Poses and skins the template.
pub fn forward(tmpl: &BodyTemplate, pose: &PoseParams, beta: &ShapeParams) -> MeshResult {
    let shaped = shape_vertices(tmpl, beta);
    let j_rest = regress_unchecked(tmpl, &shaped);

    // world frames as (linear, translation)
    let mut world: Vec<(Matrix3<f64>, Vector3<f64>)> = Vec::with_capacity(NUM_JOINTS);
    for j in 0..NUM_JOINTS {
        let local = *pose.rotations[j].matrix();
        let frame = match tmpl.parent(j) {
            None => (local, j_rest[j]),
            Some(p) => {
                let (pr, pt) = world[p];
                (pr * local, pr * (j_rest[j] - j_rest[p]) + pt)
            }
        };
        world.push(frame);
    }

    // skinning transforms: world frame composed with the inverse rest offset
    let skin: Vec<(Matrix3<f64>, Vector3<f64>)> = world
        .iter()
        .zip(&j_rest)
        .map(|((r, t), jr)| (*r, t - r * jr))
        .collect();

    let vertices: Vec<Vector3<f64>> = shaped
        .iter()
        .zip(&tmpl.skin_weights)
        .map(|(v, weights)| {
            let mut out = Vector3::zeros();
            for (w, (r, t)) in weights.iter().zip(&skin) {
                if *w != 0.0 {
                    out += (r * v + t) * *w;
                }
            }
            out
        })
        .collect();

    let joints_posed = regress_unchecked(tmpl, &vertices);
    let joint_transforms = world
        .iter()
        .map(|(r, t)| {
            let mut m = Matrix4::identity();
            m.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
            m.fixed_view_mut::<3, 1>(0, 3).copy_from(t);
            m
        })
        .collect();
    MeshResult {
        vertices,
        joints_posed,
        joint_transforms,
    }
}

/// Wavefront OBJ: `v` lines followed by 1-based `f` lines.
pub fn write_obj<W: Write>(
    w: &mut W,
    vertices: &[Vector3<f64>],
    faces: &[[usize; 3]],
) -> std::io::Result<()> {
    for v in vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Procedural mannequin

/// Rest joint anchors of the toy mannequin, meters, y up, +x to the subject's left.
const TOY_JOINTS: [[f64; 3]; NUM_JOINTS] = [
    [0.0, 0.0, 0.0],
    [0.06, -0.09, 0.0],
    [-0.06, -0.09, 0.0],
    [0.0, 0.11, -0.02],
    [0.10, -0.46, 0.0],
    [-0.10, -0.46, 0.0],
    [0.0, 0.24, 0.0],
    [0.09, -0.86, -0.04],
    [-0.09, -0.86, -0.04],
    [0.0, 0.30, 0.02],
    [0.12, -0.92, 0.08],
    [-0.12, -0.92, 0.08],
    [0.0, 0.51, -0.01],
    [0.08, 0.42, 0.0],
    [-0.08, 0.42, 0.0],
    [0.0, 0.60, 0.04],
    [0.18, 0.45, -0.01],
    [-0.18, 0.45, -0.01],
    [0.44, 0.43, -0.03],
    [-0.44, 0.43, -0.03],
    [0.70, 0.44, -0.03],
    [-0.70, 0.44, -0.03],
    [0.78, 0.43, -0.04],
    [-0.78, 0.43, -0.04],
];

/// Capsule radius of the segments each joint drives.
const TOY_RADII: [f64; NUM_JOINTS] = [
    0.09, 0.065, 0.065, 0.09, 0.05, 0.05, 0.09, 0.04, 0.04, 0.09, 0.035, 0.035, 0.05, 0.045,
    0.045, 0.08, 0.045, 0.045, 0.04, 0.04, 0.035, 0.035, 0.03, 0.03,
];

/// Leaf joints and the extension of their end segment.
const TOY_LEAVES: [(usize, [f64; 3]); 5] = [
    (10, [0.0, -0.02, 0.08]),
    (11, [0.0, -0.02, 0.08]),
    (15, [0.0, 0.16, 0.0]),
    (22, [0.07, 0.0, 0.0]),
    (23, [-0.07, 0.0, 0.0]),
];

const RING: usize = 8;
const SKIN_BAND: f64 = 0.03;
const SHAPE_AMPLITUDE: f64 = 0.01;

struct Segment {
    owner: usize,
    start: Vector3<f64>,
    end: Vector3<f64>,
}

fn toy_segments() -> Vec<Segment> {
    let anchor = |j: usize| Vector3::from(TOY_JOINTS[j]);
    let mut segs: Vec<Segment> = (1..NUM_JOINTS)
        .map(|j| {
            let p = smpl_parent(j).unwrap();
            Segment {
                owner: p,
                start: anchor(p),
                end: anchor(j),
            }
        })
        .collect();
    segs.extend(TOY_LEAVES.iter().map(|&(j, ext)| Segment {
        owner: j,
        start: anchor(j),
        end: anchor(j) + Vector3::from(ext),
    }));
    segs
}

const NUM_SEGMENTS: usize = NUM_JOINTS - 1 + TOY_LEAVES.len();

/// `(first vertex, vertex count)` of each segment block for `n` vertices.
fn segment_blocks(n: usize) -> Vec<(usize, usize)> {
    let base = n / NUM_SEGMENTS;
    let extra = n % NUM_SEGMENTS;
    let mut start = 0;
    (0..NUM_SEGMENTS)
        .map(|s| {
            let count = base + usize::from(s < extra);
            let block = (start, count);
            start += count;
            block
        })
        .collect()
}

/// Triangulation between consecutive vertex rings of each segment block.
///
/// Depends only on the vertex count, so loaded templates recover it.
pub fn ring_faces(n: usize) -> Vec<[usize; 3]> {
    let mut faces = Vec::new();
    for (start, count) in segment_blocks(n) {
        let ring = count.min(RING);
        if ring < 3 {
            continue;
        }
        for k in 0..count {
            let slot = k % ring;
            let ring_start = k - slot;
            let a = k;
            let b = ring_start + (slot + 1) % ring;
            let c = a + ring;
            let d = b + ring;
            if c < count && d < count {
                faces.push([start + a, start + b, start + d]);
                faces.push([start + a, start + d, start + c]);
            }
        }
    }
    faces
}

fn point_segment_distance(p: &Vector3<f64>, s: &Segment) -> f64 {
    let d = s.end - s.start;
    let len2 = d.norm_squared();
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((p - s.start).dot(&d) / len2).clamp(0.0, 1.0)
    };
    (p - (s.start + d * t)).norm()
}

fn perpendicular_basis(dir: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if dir.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let u = dir.cross(&helper).normalize();
    let w = dir.cross(&u);
    (u, w)
}

/// Deterministic desk-scale mannequin with the SMPL joint layout.
pub fn make_toy_template(n_vertices: usize, seed: u64) -> Result<BodyTemplate> {
    if n_vertices < NUM_JOINTS {
        return Err(Error::invalid(format!(
            "toy template needs at least {NUM_JOINTS} vertices, got {n_vertices}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let segments = toy_segments();

    let mut rest_vertices = Vec::with_capacity(n_vertices);
    for (seg, (_, count)) in segments.iter().zip(segment_blocks(n_vertices)) {
        if count == 0 {
            continue;
        }
        let ring = count.min(RING);
        let rings = count.div_ceil(ring);
        let axis = seg.end - seg.start;
        let (u, w) = perpendicular_basis(&axis.normalize());
        let radius = TOY_RADII[seg.owner];
        for k in 0..count {
            let t = ((k / ring) as f64 + 0.5) / rings as f64;
            let phi = 2.0 * std::f64::consts::PI * (k % ring) as f64 / ring as f64;
            let r = radius * rng.random_range(0.95..1.05);
            let (s, c) = phi.sin_cos();
            rest_vertices.push(seg.start + axis * t + (u * c + w * s) * r);
        }
    }

    let skin_weights: Vec<[f64; NUM_JOINTS]> = rest_vertices
        .iter()
        .map(|v| {
            let mut dist = [f64::INFINITY; NUM_JOINTS];
            for seg in &segments {
                let d = point_segment_distance(v, seg);
                dist[seg.owner] = dist[seg.owner].min(d);
            }
            let nearest = dist.iter().cloned().fold(f64::INFINITY, f64::min);
            let mut w = [0.0; NUM_JOINTS];
            for j in 0..NUM_JOINTS {
                let x = (dist[j] - nearest) / SKIN_BAND;
                if x < 1.0 {
                    w[j] = (1.0 - x * x).powi(3);
                }
            }
            let total: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= total);
            w
        })
        .collect();

    let k = (n_vertices / NUM_JOINTS).clamp(1, 8);
    let joint_regressor: Vec<Vec<f64>> = (0..NUM_JOINTS)
        .map(|j| {
            let anchor = Vector3::from(TOY_JOINTS[j]);
            let mut order: Vec<(f64, usize)> = rest_vertices
                .iter()
                .enumerate()
                .map(|(i, v)| ((v - anchor).norm(), i))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut row = vec![0.0; n_vertices];
            for &(_, i) in order.iter().take(k) {
                row[i] = 1.0 / k as f64;
            }
            row
        })
        .collect();

    // smooth fields: amplitude * sin(freq . x + phase), one per beta
    let fields: Vec<([f64; 3], [f64; 3], f64)> = (0..NUM_BETAS)
        .map(|_| {
            let amp = [0; 3].map(|_| rng.random_range(-SHAPE_AMPLITUDE..SHAPE_AMPLITUDE));
            let freq = [0; 3].map(|_| rng.random_range(-3.0..3.0));
            (amp, freq, rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let shape_dirs = rest_vertices
        .iter()
        .map(|v| {
            let mut d = [[0.0; NUM_BETAS]; 3];
            for (kb, (amp, freq, phase)) in fields.iter().enumerate() {
                let arg = freq[0] * v.x + freq[1] * v.y + freq[2] * v.z + phase;
                for c in 0..3 {
                    d[c][kb] = amp[c] * (arg + c as f64).sin();
                }
            }
            d
        })
        .collect();

    BodyTemplate::new(
        rest_vertices,
        skin_weights,
        shape_dirs,
        joint_regressor,
        SMPL_PARENTS,
        SMPL_JOINT_NAMES.iter().map(|s| s.to_string()).collect(),
    )
}
