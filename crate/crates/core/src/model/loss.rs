//! Homoscedastic pose loss with learned per-term log-variances.
//!
//! For a prediction `[t, r]` (quaternion left unnormalized) against a
//! target pose with unit orientation q:
//!
//!   L = |t - t*| * exp(-s_t) + s_t + |r - q/|q|| * exp(-s_r) + s_r
//!
//! Both residuals are plain Euclidean norms, so L >= s_t + s_r always.
//! Learning s_t and s_r balances the two terms without hand tuning.

use crate::geometry::Pose;
use crate::model::mlp::POSE_DIM;

/// Residual norms below this are treated as exact hits; the norm gradient
/// is undefined there and we take the zero subgradient.
const ZERO_RESIDUAL: f64 = 1e-12;

fn residuals(pred: &[f64; POSE_DIM], target: &Pose) -> (f64, [f64; 3], f64, [f64; 4]) {
    let mut dt = [0.0; 3];
    for a in 0..3 {
        dt[a] = pred[a] - target.position[a];
    }
    let t_err = (dt[0] * dt[0] + dt[1] * dt[1] + dt[2] * dt[2]).sqrt();

    // Targets are constructed unit-norm; normalize anyway so the loss is
    // well defined for any finite target.
    let qn: f64 = target.orientation.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut dr = [0.0; 4];
    for a in 0..4 {
        dr[a] = pred[3 + a] - target.orientation[a] / qn;
    }
    let r_err = dr.iter().map(|v| v * v).sum::<f64>().sqrt();
    (t_err, dt, r_err, dr)
}

pub fn pose_loss(pred: &[f64; POSE_DIM], target: &Pose, s_t: f64, s_r: f64) -> f64 {
    let (t_err, _, r_err, _) = residuals(pred, target);
    t_err * (-s_t).exp() + s_t + r_err * (-s_r).exp() + s_r
}

pub struct LossGrad {
    pub loss: f64,
    pub d_pred: [f64; POSE_DIM],
    pub d_s_t: f64,
    pub d_s_r: f64,
}

pub fn pose_loss_grad(pred: &[f64; POSE_DIM], target: &Pose, s_t: f64, s_r: f64) -> LossGrad {
    let (t_err, dt, r_err, dr) = residuals(pred, target);
    let wt = (-s_t).exp();
    let wr = (-s_r).exp();
    let mut d_pred = [0.0; POSE_DIM];
    if t_err > ZERO_RESIDUAL {
        for a in 0..3 {
            d_pred[a] = wt * dt[a] / t_err;
        }
    }
    if r_err > ZERO_RESIDUAL {
        for a in 0..4 {
            d_pred[3 + a] = wr * dr[a] / r_err;
        }
    }
    LossGrad {
        loss: t_err * wt + s_t + r_err * wr + s_r,
        d_pred,
        d_s_t: 1.0 - t_err * wt,
        d_s_r: 1.0 - r_err * wr,
    }
}
