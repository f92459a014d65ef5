use std::ops::Mul;

use serde::{Deserialize, Serialize};

/// Quaternion `[q0, q1, q2, q3]` with scalar part first.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quaternion(pub [f64; 4]);

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion([1.0, 0.0, 0.0, 0.0]);

    pub fn pure(v: [f64; 3]) -> Self {
        Quaternion([0.0, v[0], v[1], v[2]])
    }

    pub fn scalar(&self) -> f64 {
        self.0[0]
    }

    pub fn conj(&self) -> Self {
        let [w, x, y, z] = self.0;
        Quaternion([w, -x, -y, -z])
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Quaternion(self.0.map(|v| v / n))
    }

    pub fn scale(&self, s: f64) -> Self {
        Quaternion(self.0.map(|v| v * s))
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.0;
        for (o, b) in out.iter_mut().zip(other.0) {
            *o += b;
        }
        Quaternion(out)
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let (s, c) = (0.5 * angle).sin_cos();
        Quaternion([c, axis[0] * s, axis[1] * s, axis[2] * s])
    }

    /// Intrinsic Z-Y-X (yaw, pitch, roll) sequence: `q = q_z(yaw) ⊗ q_y(pitch) ⊗ q_x(roll)`.
    pub fn from_euler_zyx(roll: f64, pitch: f64, yaw: f64) -> Self {
        quat_mul(
            quat_mul(
                Self::from_axis_angle([0.0, 0.0, 1.0], yaw),
                Self::from_axis_angle([0.0, 1.0, 0.0], pitch),
            ),
            Self::from_axis_angle([1.0, 0.0, 0.0], roll),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Hamilton product `a ⊗ b`.
pub fn quat_mul(a: Quaternion, b: Quaternion) -> Quaternion {
    let [a0, a1, a2, a3] = a.0;
    let [b0, b1, b2, b3] = b.0;
    Quaternion([
        a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
        a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
        a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
        a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
    ])
}

impl Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        quat_mul(self, rhs)
    }
}
