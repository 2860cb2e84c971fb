//! Quaternion algebra and hexagonal crystal orientation helpers.
//!
//! Orientations are unit quaternions mapping sample-frame vectors into the
//! crystal frame; crystal symmetry operators act by left multiplication.

mod ipf;
mod symmetry;

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};

use rand::Rng;
use thiserror::Error;

pub use ipf::{ipf_color, IpfColor};
pub use symmetry::{misorientation, symmetry_reduce, SymmetrySet};

/// Norm tolerance used to accept orientation inputs.
pub const UNIT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuatError {
    #[error("quaternion has zero norm")]
    ZeroNorm,
    #[error("expected a unit quaternion, norm is {norm}")]
    NotUnit { norm: f64 },
}

/// `q0 + i q1 + j q2 + k q3`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Quat {
    pub q0: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl Quat {
    pub const IDENTITY: Quat = Quat::new(1.0, 0.0, 0.0, 0.0);

    pub const fn new(q0: f64, q1: f64, q2: f64, q3: f64) -> Self {
        Quat { q0, q1, q2, q3 }
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quat::new(a[0], a[1], a[2], a[3])
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.q0, self.q1, self.q2, self.q3]
    }

    /// Rotation by `angle` radians about `axis` (normalised internally).
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (s, c) = (angle / 2.0).sin_cos();
        Quat::new(c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n)
    }

    /// Uniformly distributed unit quaternion (Shoemake's subgroup method).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let (t2, t3) = (2.0 * PI * u2, 2.0 * PI * u3);
        Quat::new(b * t3.cos(), a * t2.sin(), a * t2.cos(), b * t3.sin())
    }

    pub fn hamilton(self, r: Quat) -> Quat {
        let p = self;
        Quat::new(
            p.q0 * r.q0 - p.q1 * r.q1 - p.q2 * r.q2 - p.q3 * r.q3,
            p.q0 * r.q1 + p.q1 * r.q0 + p.q2 * r.q3 - p.q3 * r.q2,
            p.q0 * r.q2 - p.q1 * r.q3 + p.q2 * r.q0 + p.q3 * r.q1,
            p.q0 * r.q3 + p.q1 * r.q2 - p.q2 * r.q1 + p.q3 * r.q0,
        )
    }

    pub fn conjugate(self) -> Quat {
        Quat::new(self.q0, -self.q1, -self.q2, -self.q3)
    }

    pub fn dot(self, r: Quat) -> f64 {
        self.q0 * r.q0 + self.q1 * r.q1 + self.q2 * r.q2 + self.q3 * r.q3
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scale(self, s: f64) -> Quat {
        Quat::new(self.q0 * s, self.q1 * s, self.q2 * s, self.q3 * s)
    }

    pub fn normalize(self) -> Result<Quat, QuatError> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(QuatError::ZeroNorm);
        }
        Ok(self.scale(1.0 / n))
    }

    /// Unit quaternion with `q0 >= 0`; when `q0 == 0` the first nonzero
    /// vector component is made positive.
    pub fn normalize_hemisphere(self) -> Result<Quat, QuatError> {
        Ok(self.normalize()?.hemisphere())
    }

    /// Sign fix only, no rescaling.
    pub fn hemisphere(self) -> Quat {
        let lead = [self.q0, self.q1, self.q2, self.q3]
            .into_iter()
            .find(|&v| v != 0.0)
            .unwrap_or(0.0);
        if lead < 0.0 {
            -self
        } else {
            self
        }
    }

    pub fn check_unit(self) -> Result<Quat, QuatError> {
        let norm = self.norm();
        if (norm - 1.0).abs() > UNIT_TOLERANCE || !norm.is_finite() {
            return Err(QuatError::NotUnit { norm });
        }
        Ok(self)
    }

    /// Rotation angle in `[0, π]` of a unit quaternion.
    pub fn angle(self) -> f64 {
        2.0 * self.q0.abs().clamp(0.0, 1.0).acos()
    }

    /// Left-multiplication matrix `L(q)` with `L(q)·r = q ⊗ r`.
    pub fn to_matrix(self) -> [[f64; 4]; 4] {
        let Quat { q0: a, q1: b, q2: c, q3: d } = self;
        [
            [a, -b, -c, -d],
            [b, a, -d, c],
            [c, d, a, -b],
            [d, -c, b, a],
        ]
    }

    /// `q v q*` for a 3-vector `v`.
    pub fn rotate(self, v: [f64; 3]) -> [f64; 3] {
        let p = self
            .hamilton(Quat::new(0.0, v[0], v[1], v[2]))
            .hamilton(self.conjugate());
        [p.q1, p.q2, p.q3]
    }
}

impl Mul for Quat {
    type Output = Quat;
    fn mul(self, r: Quat) -> Quat {
        self.hamilton(r)
    }
}

impl Add for Quat {
    type Output = Quat;
    fn add(self, r: Quat) -> Quat {
        Quat::new(self.q0 + r.q0, self.q1 + r.q1, self.q2 + r.q2, self.q3 + r.q3)
    }
}

impl Sub for Quat {
    type Output = Quat;
    fn sub(self, r: Quat) -> Quat {
        Quat::new(self.q0 - r.q0, self.q1 - r.q1, self.q2 - r.q2, self.q3 - r.q3)
    }
}

impl Neg for Quat {
    type Output = Quat;
    fn neg(self) -> Quat {
        self.scale(-1.0)
    }
}

pub fn mat_vec(m: &[[f64; 4]; 4], v: [f64; 4]) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (o, row) in out.iter_mut().zip(m) {
        *o = row.iter().zip(&v).map(|(a, b)| a * b).sum();
    }
    out
}
