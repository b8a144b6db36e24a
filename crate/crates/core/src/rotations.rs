//! Rotation representations: axis-angle, 3×3 matrices and the continuous 6D form.
//!
//! A [`RotationMatrix`] is either a proper rotation or the exact zero matrix.
//! The zero matrix is the in-band amputation sentinel consumed by the body
//! model; it has no axis-angle or 6D counterpart.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::{Error, Result};

/// Tolerance for accepting a matrix as orthonormal with unit determinant.
pub const ORTHONORMAL_TOL: f64 = 1e-6;

/// Degeneracy threshold for decoding 6D rotations.
pub const ROT6D_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Matrix3<f64>);

impl RotationMatrix {
    /// Validates `m` as a proper rotation or the exact zero matrix.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("rotation matrix has non-finite entries"));
        }
        if m.iter().all(|&v| v == 0.0) {
            return Ok(RotationMatrix(m));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        let det = m.determinant();
        if ortho > ORTHONORMAL_TOL || (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::invalid(format!(
                "matrix is neither a rotation nor zero (|RtR - I| = {ortho:.3e}, det = {det:.6})"
            )));
        }
        Ok(RotationMatrix(m))
    }

    pub fn identity() -> Self {
        RotationMatrix(Matrix3::identity())
    }

    /// The amputation sentinel.
    pub fn zero() -> Self {
        RotationMatrix(Matrix3::zeros())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Matrix3<f64> {
        self.0
    }
}

impl Default for RotationMatrix {
    fn default() -> Self {
        Self::identity()
    }
}

/// Rotation vector: direction is the axis, norm is the angle in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle(pub Vector3<f64>);

impl AxisAngle {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        AxisAngle(Vector3::new(x, y, z))
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }

    /// Folds the angle into `[0, π]`, flipping the axis when needed.
    pub fn canonical(&self) -> Result<AxisAngle> {
        check_finite(&self.0)?;
        let theta = self.0.norm();
        if theta == 0.0 {
            return Ok(AxisAngle(Vector3::zeros()));
        }
        let axis = self.0 / theta;
        let mut wrapped = theta.rem_euclid(2.0 * PI);
        let mut axis = axis;
        if wrapped > PI {
            wrapped = 2.0 * PI - wrapped;
            axis = -axis;
        }
        Ok(AxisAngle(axis * wrapped))
    }
}

/// First two columns of a rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl Rot6D {
    pub fn new(a: Vector3<f64>, b: Vector3<f64>) -> Self {
        Rot6D { a, b }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [self.a.x, self.a.y, self.a.z, self.b.x, self.b.y, self.b.z]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Rot6D {
            a: Vector3::new(s[0], s[1], s[2]),
            b: Vector3::new(s[3], s[4], s[5]),
        }
    }
}

fn check_finite(v: &Vector3<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::invalid("non-finite rotation vector"))
    }
}

/// Rodrigues' formula.
pub fn axis_angle_to_matrix(v: &AxisAngle) -> Result<RotationMatrix> {
    check_finite(&v.0)?;
    let theta = v.0.norm();
    if theta == 0.0 {
        return Ok(RotationMatrix::identity());
    }
    let k = v.0 / theta;
    let kx = Matrix3::new(0.0, -k.z, k.y, k.z, 0.0, -k.x, -k.y, k.x, 0.0);
    let (s, c) = theta.sin_cos();
    let r = Matrix3::identity() + kx * s + kx * kx * (1.0 - c);
    Ok(RotationMatrix(r))
}

/// Inverse of [`axis_angle_to_matrix`], returning the canonical form.
pub fn matrix_to_axis_angle(r: &RotationMatrix) -> Result<AxisAngle> {
    if r.is_zero() {
        return Err(Error::Degenerate(
            "the zero-matrix sentinel has no axis-angle form".into(),
        ));
    }
    let rot = Rotation3::from_matrix_unchecked(r.0);
    let q = UnitQuaternion::from_rotation_matrix(&rot);
    AxisAngle(q.scaled_axis()).canonical()
}

pub fn matrix_to_6d(r: &RotationMatrix) -> Result<Rot6D> {
    if r.is_zero() {
        return Err(Error::Degenerate(
            "the zero-matrix sentinel has no 6D form".into(),
        ));
    }
    Ok(Rot6D {
        a: r.0.column(0).into_owned(),
        b: r.0.column(1).into_owned(),
    })
}

/// Gram-Schmidt decode of a 6D rotation.
pub fn rot6d_to_matrix(x: &Rot6D) -> Result<RotationMatrix> {
    check_finite(&x.a)?;
    check_finite(&x.b)?;
    let a_norm = x.a.norm();
    if a_norm <= ROT6D_EPS {
        return Err(Error::Degenerate(format!(
            "first 6D column has norm {a_norm:.3e}"
        )));
    }
    let c1 = x.a / a_norm;
    let b_norm = x.b.norm();
    let b_perp = x.b - c1 * c1.dot(&x.b);
    let perp_norm = b_perp.norm();
    if b_norm <= ROT6D_EPS || perp_norm <= ROT6D_EPS * b_norm {
        return Err(Error::Degenerate(
            "6D columns are zero or parallel".into(),
        ));
    }
    let c2 = b_perp / perp_norm;
    let c3 = c1.cross(&c2);
    Ok(RotationMatrix(Matrix3::from_columns(&[c1, c2, c3])))
}
