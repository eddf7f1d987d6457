//! Rigid-body poses and quaternion arithmetic.
//!
//! Quaternions are stored `(w, x, y, z)`. A [`Pose`] built through
//! [`Pose::new`] always carries a unit orientation; raw regression outputs
//! stay un-normalized until the caller normalizes them explicitly.
//! The orientation distance is the geodesic angle `2*acos(|<q1,q2>|)`,
//! which is insensitive to the q/-q double cover.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm below which a quaternion has no usable direction.
pub const NEAR_ZERO: f64 = 1e-12;
/// Allowed deviation from unit norm for inputs that claim to be normalized.
pub const UNIT_TOL: f64 = 1e-6;

pub type Vec3 = [f64; 3];
/// `(w, x, y, z)`.
pub type Quat = [f64; 4];

pub const QUAT_IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

#[inline]
pub fn quat_norm(q: &Quat) -> f64 {
    (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt()
}

#[inline]
pub fn quat_dot(a: &Quat, b: &Quat) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub fn quat_normalize(q: &Quat) -> Result<Quat> {
    let n = quat_norm(q);
    if n <= NEAR_ZERO {
        return Err(Error::NearZeroQuaternion { norm: n, limit: NEAR_ZERO });
    }
    Ok([q[0] / n, q[1] / n, q[2] / n, q[3] / n])
}

#[inline]
pub fn quat_conj(q: &Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

/// Hamilton product `a*b`.
#[inline]
pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

/// Rotate `v` by the unit quaternion `q` (i.e. `q v q*`).
pub fn rotate(q: &Quat, v: &Vec3) -> Vec3 {
    let p = [0.0, v[0], v[1], v[2]];
    let r = quat_mul(&quat_mul(q, &p), &quat_conj(q));
    [r[1], r[2], r[3]]
}

pub fn position_error(a: &Vec3, b: &Vec3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Geodesic angle between two unit quaternions, in degrees.
/// Errors with [`Error::NotUnitQuaternion`] if either norm is off by more
/// than [`UNIT_TOL`].
pub fn orientation_error_deg(a: &Quat, b: &Quat) -> Result<f64> {
    for q in [a, b] {
        let n = quat_norm(q);
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnitQuaternion { norm: n, tol: UNIT_TOL });
        }
    }
    let c = quat_dot(a, b).abs().min(1.0);
    Ok(2.0 * c.acos().to_degrees())
}

/// Quaternion for a rotation of `angle_rad` about the unit axis.
pub fn quat_from_axis_angle(axis: &Vec3, angle_rad: f64) -> Quat {
    let half = 0.5 * angle_rad;
    let s = half.sin();
    [half.cos(), axis[0] * s, axis[1] * s, axis[2] * s]
}

/// Shortest-arc spherical interpolation between unit quaternions.
pub fn slerp(a: &Quat, b: &Quat, t: f64) -> Quat {
    let mut bb = *b;
    let mut d = quat_dot(a, &bb);
    if d < 0.0 {
        for c in &mut bb {
            *c = -*c;
        }
        d = -d;
    }
    if d > 1.0 - 1e-10 {
        // Nearly parallel: nlerp is exact enough and avoids 0/0.
        let mut out = [0.0; 4];
        for i in 0..4 {
            out[i] = a[i] + t * (bb[i] - a[i]);
        }
        return quat_normalize(&out).expect("nlerp of near-parallel unit quaternions");
    }
    let theta = d.min(1.0).acos();
    let s = theta.sin();
    let wa = ((1.0 - t) * theta).sin() / s;
    let wb = (t * theta).sin() / s;
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = wa * a[i] + wb * bb[i];
    }
    quat_normalize(&out).expect("slerp output has unit-order norm")
}

/// Uniformly random unit quaternion (4D Gaussian, normalized).
pub fn random_unit_quat(rng: &mut impl Rng) -> Quat {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let q = [
            normal.sample(rng),
            normal.sample(rng),
            normal.sample(rng),
            normal.sample(rng),
        ];
        if let Ok(u) = quat_normalize(&q) {
            return u;
        }
    }
}

/// A rigid-body pose: position in meters plus unit orientation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub orientation: Quat,
}

impl Pose {
    /// Normalizes the orientation; the stored quaternion is always unit.
    pub fn new(position: Vec3, orientation: Quat) -> Result<Self> {
        Ok(Pose { position, orientation: quat_normalize(&orientation)? })
    }

    pub fn identity() -> Self {
        Pose { position: [0.0; 3], orientation: QUAT_IDENTITY }
    }
}

/// Apply `rel` in the frame of `a`: rotation composes, translation is
/// carried through `a`'s orientation. Re-normalizes to stop drift.
pub fn compose(a: &Pose, rel: &Pose) -> Pose {
    let r = rotate(&a.orientation, &rel.position);
    Pose {
        position: [
            a.position[0] + r[0],
            a.position[1] + r[1],
            a.position[2] + r[2],
        ],
        orientation: quat_normalize(&quat_mul(&a.orientation, &rel.orientation))
            .expect("product of unit quaternions"),
    }
}

/// The relative pose `rel` with `compose(a, rel) == b`.
pub fn relative(a: &Pose, b: &Pose) -> Pose {
    let inv = quat_conj(&a.orientation);
    let d = [
        b.position[0] - a.position[0],
        b.position[1] - a.position[1],
        b.position[2] - a.position[2],
    ];
    Pose {
        position: rotate(&inv, &d),
        orientation: quat_normalize(&quat_mul(&inv, &b.orientation))
            .expect("product of unit quaternions"),
    }
}

/// Gaussian pose perturbation: position gets `N(0, sigma_t^2)` per axis;
/// orientation is rotated about a uniformly random axis by an angle drawn
/// from `N(0, sigma_r_deg^2)`, clamped to [-180, 180] degrees.
pub fn perturb_pose(p: &Pose, sigma_t: f64, sigma_r_deg: f64, rng: &mut impl Rng) -> Pose {
    let nt = Normal::new(0.0, sigma_t).expect("finite sigma_t");
    let position = [
        p.position[0] + nt.sample(rng),
        p.position[1] + nt.sample(rng),
        p.position[2] + nt.sample(rng),
    ];
    let axis = random_unit_axis(rng);
    let nr = Normal::new(0.0, sigma_r_deg).expect("finite sigma_r");
    let angle_deg: f64 = nr.sample(rng);
    let angle = angle_deg.clamp(-180.0, 180.0).to_radians();
    let dq = quat_from_axis_angle(&axis, angle);
    Pose {
        position,
        orientation: quat_normalize(&quat_mul(&p.orientation, &dq))
            .expect("product of unit quaternions"),
    }
}

fn random_unit_axis(rng: &mut impl Rng) -> Vec3 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    loop {
        let v: Vec3 = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > NEAR_ZERO {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}
