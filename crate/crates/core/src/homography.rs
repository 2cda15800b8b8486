//! Planar projective transforms in continuous pixel coordinates, where pixel
//! `(i, j)` covers `[i, i+1) x [j, j+1)` and has its center at `(i+0.5, j+0.5)`.

use nalgebra::{Matrix3, SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Determinant magnitude below which a transform counts as degenerate.
pub const MIN_DET: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Homography {
    /// Row-major 3x3 matrix acting on column vectors `(x, y, 1)`.
    pub m: [[f64; 3]; 3],
}

impl Default for Homography {
    fn default() -> Self {
        Self::identity()
    }
}

impl Homography {
    pub fn identity() -> Self {
        Self::from_rows([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn from_rows(m: [[f64; 3]; 3]) -> Self {
        Homography { m }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self::from_rows([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])
    }

    pub fn scale(sx: f64, sy: f64) -> Self {
        Self::from_rows([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rotation by `degrees` about `(cx, cy)`. With the y axis pointing down,
    /// positive angles turn the picture clockwise on screen.
    pub fn rotation_about(degrees: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = degrees.to_radians().sin_cos();
        let r = Self::from_rows([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]);
        Self::translation(cx, cy).then_after(&r).then_after(&Self::translation(-cx, -cy))
    }

    /// The transform taking each `src[i]` to `dst[i]`.
    pub fn from_points(src: [[f64; 2]; 4], dst: [[f64; 2]; 4]) -> Result<Self> {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for i in 0..4 {
            let ([x, y], [u, v]) = (src[i], dst[i]);
            let r = 2 * i;
            a.row_mut(r).copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
            a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
            b[r] = u;
            b[r + 1] = v;
        }
        let h = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Degenerate("four-point correspondence is singular".into()))?;
        let out = Self::from_rows([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]]);
        out.check()?;
        Ok(out)
    }

    fn matrix(&self) -> Matrix3<f64> {
        let m = &self.m;
        Matrix3::new(
            m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2],
        )
    }

    fn from_matrix(m: &Matrix3<f64>) -> Self {
        Self::from_rows([
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ])
    }

    pub fn det(&self) -> f64 {
        self.matrix().determinant()
    }

    fn check(&self) -> Result<()> {
        let d = self.det();
        if !d.is_finite() || d.abs() <= MIN_DET {
            return Err(Error::Degenerate(format!("homography determinant {d:e}")));
        }
        Ok(())
    }

    /// Matrix product `self * inner`: apply `inner` first, then `self`.
    pub fn then_after(&self, inner: &Homography) -> Homography {
        Self::from_matrix(&(self.matrix() * inner.matrix()))
    }

    /// Rescales so that `m[2][2] == 1` when that entry is not zero.
    pub fn normalized(&self) -> Homography {
        let w = self.m[2][2];
        if w.abs() < f64::EPSILON {
            return *self;
        }
        Self::from_matrix(&(self.matrix() / w))
    }

    pub fn inverse(&self) -> Result<Homography> {
        self.check()?;
        let inv = self
            .matrix()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("homography is not invertible".into()))?;
        Ok(Self::from_matrix(&inv).normalized())
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.m;
        let w = m[2][0] * x + m[2][1] * y + m[2][2];
        (
            (m[0][0] * x + m[0][1] * y + m[0][2]) / w,
            (m[1][0] * x + m[1][1] * y + m[1][2]) / w,
        )
    }

    pub fn max_abs_diff(&self, other: &Homography) -> f64 {
        (0..9).map(|i| (self.m[i / 3][i % 3] - other.m[i / 3][i % 3]).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_points_recover_affine() {
        let h = Homography::from_rows([[1.2, 0.1, 3.0], [-0.2, 0.9, 1.0], [0.0, 0.0, 1.0]]);
        let src = [[0.0, 0.0], [10.0, 0.0], [10.0, 7.0], [0.0, 7.0]];
        let dst = src.map(|[x, y]| {
            let (u, v) = h.apply(x, y);
            [u, v]
        });
        let fit = Homography::from_points(src, dst).unwrap();
        assert!(fit.max_abs_diff(&h) < 1e-12);
    }

    #[test]
    fn inverse_closes() {
        let h = Homography::from_rows([[0.8, 0.3, -4.0], [-0.1, 1.1, 2.5], [1e-3, -2e-3, 1.0]]);
        let back = h.then_after(&h.inverse().unwrap()).normalized();
        assert!(back.max_abs_diff(&Homography::identity()) < 1e-9);
    }

    #[test]
    fn singular_is_rejected() {
        let h = Homography::from_rows([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]);
        assert!(matches!(h.inverse(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn rotation_keeps_center() {
        let r = Homography::rotation_about(33.0, 5.0, 7.0);
        let (x, y) = r.apply(5.0, 7.0);
        assert!((x - 5.0).abs() < 1e-12 && (y - 7.0).abs() < 1e-12);
    }
}
