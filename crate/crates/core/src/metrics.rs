//! Evaluation metrics and supervised losses.
//!
//! Metrics are unit-agnostic: they report distances in the units of their
//! inputs. The evaluation report converts meters to millimeters.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::amputation::AmputationLabel;
use crate::body_model::BodyTemplate;
use crate::rotations::matrix_to_6d;
use crate::body_model::PoseParams;
use crate::{Error, Result, NUM_JOINTS};

pub const PELVIS: usize = 0;

/// A joint set with a per-joint inclusion mask.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet {
    pub points: Vec<Vector3<f64>>,
    pub valid: Vec<bool>,
}

impl JointSet {
    pub fn new(points: Vec<Vector3<f64>>, valid: Vec<bool>) -> Result<Self> {
        if points.len() != valid.len() {
            return Err(Error::dims("points and validity mask differ in length"));
        }
        Ok(JointSet { points, valid })
    }

    pub fn all_valid(points: Vec<Vector3<f64>>) -> Self {
        let valid = vec![true; points.len()];
        JointSet { points, valid }
    }

    fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

fn check_pair(pred: &JointSet, gt: &JointSet) -> Result<()> {
    if pred.points.len() != gt.points.len() {
        return Err(Error::dims(format!(
            "{} predicted joints vs {} ground-truth joints",
            pred.points.len(),
            gt.points.len()
        )));
    }
    if pred.valid != gt.valid {
        return Err(Error::invalid("prediction and ground truth use different joint masks"));
    }
    if gt.valid_count() == 0 {
        return Err(Error::invalid("no valid joints to evaluate"));
    }
    Ok(())
}

fn mean_distance(pred: &[Vector3<f64>], gt: &[Vector3<f64>], valid: &[bool]) -> f64 {
    let (sum, n) = pred
        .iter()
        .zip(gt)
        .zip(valid)
        .filter(|(_, &v)| v)
        .fold((0.0, 0usize), |(s, n), ((p, g), _)| (s + (p - g).norm(), n + 1));
    sum / n as f64
}

/// Mean per-joint position error after centering both sets at the pelvis.
pub fn mpjpe(pred: &JointSet, gt: &JointSet) -> Result<f64> {
    check_pair(pred, gt)?;
    let pr = pred.points[PELVIS];
    let gr = gt.points[PELVIS];
    let p: Vec<_> = pred.points.iter().map(|x| x - pr).collect();
    let g: Vec<_> = gt.points.iter().map(|x| x - gr).collect();
    Ok(mean_distance(&p, &g, &gt.valid))
}

/// Mean vertex error after centering both meshes at their regressed pelvis.
///
/// `include` restricts the average to a vertex subset (see
/// [`surviving_vertices`]); `None` uses every vertex.
pub fn mve(
    tmpl: &BodyTemplate,
    pred_vertices: &[Vector3<f64>],
    gt_vertices: &[Vector3<f64>],
    include: Option<&[bool]>,
) -> Result<f64> {
    let n = tmpl.num_vertices();
    if pred_vertices.len() != n || gt_vertices.len() != n {
        return Err(Error::dims(format!(
            "mesh sizes {} and {} do not match the template's {n}",
            pred_vertices.len(),
            gt_vertices.len()
        )));
    }
    let all = vec![true; n];
    let include = include.unwrap_or(&all);
    if include.len() != n {
        return Err(Error::dims("vertex mask length differs from vertex count"));
    }
    if !include.iter().any(|&v| v) {
        return Err(Error::invalid("no vertices selected"));
    }
    let pelvis = |verts: &[Vector3<f64>]| -> Vector3<f64> {
        tmpl.joint_regressor()[PELVIS]
            .iter()
            .zip(verts)
            .fold(Vector3::zeros(), |acc, (w, v)| acc + v * *w)
    };
    let pr = pelvis(pred_vertices);
    let gr = pelvis(gt_vertices);
    let p: Vec<_> = pred_vertices.iter().map(|x| x - pr).collect();
    let g: Vec<_> = gt_vertices.iter().map(|x| x - gr).collect();
    Ok(mean_distance(&p, &g, include))
}

/// Vertices whose dominant skinning joint lies outside the masked subtrees.
pub fn surviving_vertices(tmpl: &BodyTemplate, label: &AmputationLabel) -> Vec<bool> {
    let mask = label.joint_mask();
    tmpl.skin_weights()
        .iter()
        .map(|w| {
            let dominant = (0..NUM_JOINTS)
                .max_by(|&a, &b| w[a].total_cmp(&w[b]).then(b.cmp(&a)))
                .unwrap();
            !mask[dominant]
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Rotation, uniform scale and translation.
    #[default]
    Similarity,
    /// Rotation and translation only.
    Rigid,
}

/// Least-squares alignment of `source` onto `target`: `target ≈ s R source + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub rotation: Matrix3<f64>,
    pub scale: f64,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

/// Orthogonal Procrustes over the points where `valid` is set, reflections
/// excluded.
pub fn procrustes(
    source: &[Vector3<f64>],
    target: &[Vector3<f64>],
    valid: &[bool],
    alignment: Alignment,
) -> Result<SimilarityTransform> {
    let pairs: Vec<(Vector3<f64>, Vector3<f64>)> = source
        .iter()
        .zip(target)
        .zip(valid)
        .filter(|(_, &v)| v)
        .map(|((s, t), _)| (*s, *t))
        .collect();
    if pairs.len() < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "Procrustes needs at least 3 points, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let mu_s = pairs.iter().fold(Vector3::zeros(), |a, (s, _)| a + s) / n;
    let mu_t = pairs.iter().fold(Vector3::zeros(), |a, (_, t)| a + t) / n;

    let mut cov = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, t) in &pairs {
        let a = s - mu_s;
        let b = t - mu_t;
        cov += b * a.transpose();
        spread += a * a.transpose();
        var_s += a.norm_squared();
    }
    // rank of the centered source must be at least 2
    let sv = spread.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0] {
        return Err(Error::DegenerateGeometry(
            "points are coincident or collinear".into(),
        ));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = u * d * v_t;
    let scale = match alignment {
        Alignment::Rigid => 1.0,
        Alignment::Similarity => {
            let sigma = svd.singular_values;
            (sigma[0] * d[(0, 0)] + sigma[1] * d[(1, 1)] + sigma[2] * d[(2, 2)]) / var_s
        }
    };
    let translation = mu_t - rotation * mu_s * scale;
    Ok(SimilarityTransform {
        rotation,
        scale,
        translation,
    })
}

/// MPJPE after Procrustes-aligning the prediction to the ground truth.
pub fn pa_mpjpe(pred: &JointSet, gt: &JointSet, alignment: Alignment) -> Result<f64> {
    check_pair(pred, gt)?;
    let tf = procrustes(&pred.points, &gt.points, &gt.valid, alignment)?;
    let aligned: Vec<_> = pred.points.iter().map(|p| tf.apply(p)).collect();
    Ok(mean_distance(&aligned, &gt.points, &gt.valid))
}

fn log_sum_exp(h: &[f64; 4]) -> f64 {
    let max = h.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + h.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Sum over the four limb heads of the cross-entropy against the true level.
pub fn cross_entropy_cls(logits: &[[f64; 4]; 4], label: &AmputationLabel) -> Result<f64> {
    if logits.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite classifier logit"));
    }
    Ok(logits
        .iter()
        .zip(label.levels())
        .map(|(h, lb)| log_sum_exp(h) - h[lb as usize])
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub theta: f64,
    pub beta: f64,
    pub kp2d: f64,
    pub kp3d: f64,
    pub cls: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            theta: 1e-3,
            beta: 5e-4,
            kp2d: 1e-2,
            kp3d: 5e-2,
            cls: 1e-2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.theta, self.beta, self.kp2d, self.kp3d, self.cls];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossComponents {
    pub theta: f64,
    pub beta: f64,
    pub kp2d: f64,
    pub kp3d: f64,
    pub cls: f64,
}

pub fn overall_loss(c: &LossComponents, w: &LossWeights) -> Result<f64> {
    w.validate()?;
    let parts = [c.theta, c.beta, c.kp2d, c.kp3d, c.cls];
    if parts.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid("loss components must be finite and non-negative"));
    }
    Ok(w.theta * c.theta + w.beta * c.beta + w.kp2d * c.kp2d + w.kp3d * c.kp3d + w.cls * c.cls)
}

/// Mean squared difference of the 6D encodings of two poses.
pub fn pose_loss_6d(gt: &PoseParams, pred: &PoseParams) -> Result<f64> {
    let mut sum = 0.0;
    for (g, p) in gt.rotations.iter().zip(&pred.rotations) {
        let g = matrix_to_6d(g)?.to_array();
        let p = matrix_to_6d(p)?.to_array();
        sum += g.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    Ok(sum / (6 * NUM_JOINTS) as f64)
}

pub fn shape_loss(gt: &[f64], pred: &[f64]) -> Result<f64> {
    if gt.len() != pred.len() || gt.is_empty() {
        return Err(Error::dims("shape vectors differ in length"));
    }
    Ok(gt.iter().zip(pred).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / gt.len() as f64)
}

/// Mean squared coordinate error of 3D joints.
pub fn joint_loss_3d(gt: &[Vector3<f64>], pred: &[Vector3<f64>]) -> Result<f64> {
    if gt.len() != pred.len() || gt.is_empty() {
        return Err(Error::dims("joint sets differ in length"));
    }
    Ok(gt.iter().zip(pred).map(|(a, b)| (a - b).norm_squared()).sum::<f64>()
        / (3 * gt.len()) as f64)
}

/// Mean squared 2D error over keypoints whose ground-truth confidence is
/// positive, with coordinates divided by `normalizer` (bounding-box size by
/// default). Returns 0 when no keypoint is visible.
pub fn keypoint_loss_2d(gt: &[[f64; 3]], pred: &[[f64; 2]], normalizer: f64) -> Result<f64> {
    if gt.len() != pred.len() {
        return Err(Error::dims("keypoint sets differ in length"));
    }
    if !(normalizer > 0.0) {
        return Err(Error::invalid("2D normalizer must be positive"));
    }
    let (sum, n) = gt
        .iter()
        .zip(pred)
        .filter(|(g, _)| g[2] > 0.0)
        .fold((0.0, 0usize), |(s, n), (g, p)| {
            let dx = (g[0] - p[0]) / normalizer;
            let dy = (g[1] - p[1]) / normalizer;
            (s + dx * dx + dy * dy, n + 1)
        });
    Ok(if n == 0 { 0.0 } else { sum / (2 * n) as f64 })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    /// Rows are true classes, columns predicted classes.
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let c = counts.len();
        if c == 0 || counts.iter().any(|r| r.len() != c) {
            return Err(Error::dims("confusion matrix must be square and non-empty"));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn zeros(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a zero denominator forced one of the values to 0.
    pub undefined: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfusionStats {
    pub accuracy: f64,
    pub per_class: Vec<ClassStats>,
    pub macro_f1: f64,
    /// `percent[t][p]`: share of predicted column `p` with true class `t`, in %.
    pub column_percent: Vec<Vec<f64>>,
}

pub fn confusion_stats(cm: &ConfusionMatrix) -> Result<ConfusionStats> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("confusion matrix is empty"));
    }
    let c = cm.classes();
    let row_sum: Vec<u64> = cm.counts.iter().map(|r| r.iter().sum()).collect();
    let col_sum: Vec<u64> = (0..c).map(|j| cm.counts.iter().map(|r| r[j]).sum()).collect();
    let trace: u64 = (0..c).map(|i| cm.counts[i][i]).sum();

    let per_class: Vec<ClassStats> = (0..c)
        .map(|k| {
            let tp = cm.counts[k][k] as f64;
            let mut undefined = false;
            let mut ratio = |den: u64| {
                if den == 0 {
                    undefined = true;
                    0.0
                } else {
                    tp / den as f64
                }
            };
            let precision = ratio(col_sum[k]);
            let recall = ratio(row_sum[k]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                undefined = true;
                0.0
            };
            ClassStats {
                precision,
                recall,
                f1,
                undefined,
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|s| s.f1).sum::<f64>() / c as f64;
    let column_percent = cm
        .counts
        .iter()
        .map(|row| {
            row.iter()
                .zip(&col_sum)
                .map(|(&n, &col)| if col == 0 { 0.0 } else { 100.0 * n as f64 / col as f64 })
                .collect()
        })
        .collect();
    Ok(ConfusionStats {
        accuracy: trace as f64 / total as f64,
        per_class,
        macro_f1,
        column_percent,
    })
}
