//! Continuous 6D rotation representation.
//!
//! A rotation is encoded as the first two columns of its matrix; the full
//! matrix is recovered by Gram-Schmidt. Unlike Euler angles or quaternions
//! the map from 6 reals to SO(3) is continuous, which is what makes it a
//! good network input/output format.

use crate::error::{CoreError, Result};

/// Residual norms below this count as degenerate input.
const DEGENERACY_EPS: f64 = 1e-9;
/// Orthonormality tolerance for matrices claiming to be rotations.
const ORTHO_EPS: f64 = 1e-6;

/// First two columns of a rotation matrix, stored column-major:
/// `v = [a1_x, a1_y, a1_z, a2_x, a2_y, a2_z]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rot6D(pub [f64; 6]);

/// Row-major 3x3 rotation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(pub [[f64; 3]; 3]);

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

impl RotationMatrix {
    pub fn identity() -> Self {
        RotationMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn column(&self, c: usize) -> [f64; 3] {
        [self.0[0][c], self.0[1][c], self.0[2][c]]
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Max |R^T R - I| entry.
    pub fn orthonormality_error(&self) -> f64 {
        let mut max_err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = dot3(self.column(i), self.column(j));
                let target = if i == j { 1.0 } else { 0.0 };
                max_err = max_err.max((d - target).abs());
            }
        }
        max_err
    }
}

/// Gram-Schmidt recovery of the rotation matrix:
/// b1 = normalize(a1); b2 = normalize(a2 - (b1.a2) b1); b3 = b1 x b2.
pub fn rot6d_to_matrix(v: &Rot6D) -> Result<RotationMatrix> {
    let a1 = [v.0[0], v.0[1], v.0[2]];
    let a2 = [v.0[3], v.0[4], v.0[5]];

    let n1 = norm3(a1);
    if n1 < DEGENERACY_EPS {
        return Err(CoreError::validation(
            "rot6d: first column is degenerate (near zero)",
        ));
    }
    let b1 = [a1[0] / n1, a1[1] / n1, a1[2] / n1];

    let proj = dot3(b1, a2);
    let r = [
        a2[0] - proj * b1[0],
        a2[1] - proj * b1[1],
        a2[2] - proj * b1[2],
    ];
    let nr = norm3(r);
    if nr < DEGENERACY_EPS {
        return Err(CoreError::validation(
            "rot6d: second column is degenerate (parallel to first)",
        ));
    }
    let b2 = [r[0] / nr, r[1] / nr, r[2] / nr];
    let b3 = cross3(b1, b2);

    Ok(RotationMatrix([
        [b1[0], b2[0], b3[0]],
        [b1[1], b2[1], b3[1]],
        [b1[2], b2[2], b3[2]],
    ]))
}

/// Drop the third column of an orthonormal rotation matrix.
pub fn matrix_to_rot6d(m: &RotationMatrix) -> Result<Rot6D> {
    let err = m.orthonormality_error();
    if err > ORTHO_EPS {
        return Err(CoreError::contract(format!(
            "matrix_to_rot6d: matrix is not orthonormal (error {err:.3e})"
        )));
    }
    if m.determinant() < 0.0 {
        return Err(CoreError::contract(
            "matrix_to_rot6d: matrix is a reflection (det < 0)",
        ));
    }
    let c1 = m.column(0);
    let c2 = m.column(1);
    Ok(Rot6D([c1[0], c1[1], c1[2], c2[0], c2[1], c2[2]]))
}
