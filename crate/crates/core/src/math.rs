//! Small fixed-size vector, matrix and quaternion types.

use core::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
fn sq(x: f64) -> f64 {
    x * x
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    #[inline]
    pub fn from_slice(s: &[f64]) -> Self {
        Vec3([s[0], s[1], s[2]])
    }

    #[inline]
    pub fn x(self) -> f64 {
        self.0[0]
    }
    #[inline]
    pub fn y(self) -> f64 {
        self.0[1]
    }
    #[inline]
    pub fn z(self) -> f64 {
        self.0[2]
    }

    #[inline]
    pub fn dot(self, o: Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    #[inline]
    pub fn cross(self, o: Vec3) -> Vec3 {
        let [a, b, c] = self.0;
        let [d, e, f] = o.0;
        Vec3([b * f - c * e, c * d - a * f, a * e - b * d])
    }

    #[inline]
    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        sqrt(self.norm_sq())
    }

    #[inline]
    pub fn scale(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Skew-symmetric cross-product matrix `[self]ₓ`.
    pub fn skew(self) -> Mat3 {
        let [x, y, z] = self.0;
        Mat3([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    #[inline]
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    #[inline]
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl AddAssign for Vec3 {
    #[inline]
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl SubAssign for Vec3 {
    #[inline]
    fn sub_assign(&mut self, o: Vec3) {
        *self = *self - o;
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    #[inline]
    fn neg(self) -> Vec3 {
        Vec3([-self.0[0], -self.0[1], -self.0[2]])
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    #[inline]
    fn mul(self, s: f64) -> Vec3 {
        self.scale(s)
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;
    #[inline]
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vec3 {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Row-major 3×3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Mat3(pub [[f64; 3]; 3]);

impl Mat3 {
    pub const IDENTITY: Mat3 = Mat3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    pub fn from_rows(r0: Vec3, r1: Vec3, r2: Vec3) -> Self {
        Mat3([r0.0, r1.0, r2.0])
    }

    pub fn diag(d: [f64; 3]) -> Self {
        Mat3([[d[0], 0.0, 0.0], [0.0, d[1], 0.0], [0.0, 0.0, d[2]]])
    }

    #[inline]
    pub fn row(&self, i: usize) -> Vec3 {
        Vec3(self.0[i])
    }

    #[inline]
    pub fn mul_vec(&self, v: Vec3) -> Vec3 {
        Vec3([self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v)])
    }

    /// `selfᵀ · v`
    #[inline]
    pub fn tr_mul_vec(&self, v: Vec3) -> Vec3 {
        let m = &self.0;
        Vec3([
            m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
            m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
            m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
        ])
    }

    pub fn transpose(&self) -> Mat3 {
        let m = &self.0;
        Mat3([[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]])
    }

    pub fn mul_mat(&self, o: &Mat3) -> Mat3 {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| self.0[i][k] * o.0[k][j]).sum();
            }
        }
        Mat3(out)
    }

    pub fn scale(&self, s: f64) -> Mat3 {
        let mut out = self.0;
        out.iter_mut().flatten().for_each(|v| *v *= s);
        Mat3(out)
    }

    pub fn add(&self, o: &Mat3) -> Mat3 {
        let mut out = self.0;
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] += o.0[i][j];
            }
        }
        Mat3(out)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let m = &self.0;
        let scale = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
        (m[0][1] - m[1][0]).abs() <= tol * scale
            && (m[0][2] - m[2][0]).abs() <= tol * scale
            && (m[1][2] - m[2][1]).abs() <= tol * scale
    }

    /// Cholesky test: a symmetric matrix is positive definite iff all leading
    /// principal minors are positive.
    pub fn is_positive_definite(&self) -> bool {
        let m = &self.0;
        let d1 = m[0][0];
        let d2 = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        d1 > 0.0 && d2 > 0.0 && self.det() > 0.0
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Largest eigenvalue of a symmetric matrix (closed-form trigonometric method).
    pub fn sym_max_eigenvalue(&self) -> f64 {
        let m = &self.0;
        let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
        let tr = m[0][0] + m[1][1] + m[2][2];
        if p1 == 0.0 {
            return m[0][0].max(m[1][1]).max(m[2][2]);
        }
        let q = tr / 3.0;
        let p2 = sq(m[0][0] - q) + sq(m[1][1] - q) + sq(m[2][2] - q) + 2.0 * p1;
        let p = sqrt(p2 / 6.0);
        let b = self.add(&Mat3::IDENTITY.scale(-q)).scale(1.0 / p);
        let r = (b.det() / 2.0).clamp(-1.0, 1.0);
        let phi = libm::acos(r) / 3.0;
        q + 2.0 * p * libm::cos(phi)
    }
}

/// Unit quaternion `(w, x, y, z)` for rigid orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quat {
    pub w: f64,
    pub v: Vec3,
}

impl Default for Quat {
    fn default() -> Self {
        Quat::IDENTITY
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat { w: 1.0, v: Vec3::ZERO };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, v: Vec3::new(x, y, z) }
    }

    pub fn norm(&self) -> f64 {
        sqrt(self.w * self.w + self.v.norm_sq())
    }

    pub fn normalized(&self) -> Quat {
        let n = self.norm();
        Quat { w: self.w / n, v: self.v.scale(1.0 / n) }
    }

    /// Hamilton product `self ⊗ o`.
    pub fn mul(&self, o: &Quat) -> Quat {
        Quat { w: self.w * o.w - self.v.dot(o.v), v: o.v.scale(self.w) + self.v.scale(o.w) + self.v.cross(o.v) }
    }

    /// Exponential map of a rotation vector (axis × angle).
    pub fn from_rotation_vector(r: Vec3) -> Quat {
        let angle = r.norm();
        if angle < 1e-12 {
            // second-order series keeps the map smooth near zero
            return Quat { w: 1.0 - angle * angle / 8.0, v: r.scale(0.5) }.normalized();
        }
        let half = 0.5 * angle;
        Quat { w: libm::cos(half), v: r.scale(libm::sin(half) / angle) }
    }

    pub fn to_matrix(&self) -> Mat3 {
        let (w, x, y, z) = (self.w, self.v[0], self.v[1], self.v[2]);
        Mat3([
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ])
    }

    pub fn rotate(&self, p: Vec3) -> Vec3 {
        self.to_matrix().mul_vec(p)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

/// `‖a − b‖₂`
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}
