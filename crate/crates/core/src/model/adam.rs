//! Adam optimizer state mirroring the model's parameter tensors.
//!
//! One global step counter drives bias correction for every tensor. Heads
//! that join the model mid-run get fresh zero moments the first time a
//! batch touches them; tensors absent from a batch keep their moments
//! untouched, so updates only ever move parameters that received gradient.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::mlp::{AprModel, Layer};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerMoments {
    pub m: Layer,
    pub v: Layer,
}

impl LayerMoments {
    fn zeros_like(layer: &Layer) -> LayerMoments {
        LayerMoments {
            m: Layer::zeros(layer.w.rows, layer.w.cols),
            v: Layer::zeros(layer.w.rows, layer.w.cols),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub hyper: AdamHyper,
    pub step: u64,
    pub backbone: Vec<LayerMoments>,
    pub heads: BTreeMap<String, LayerMoments>,
    /// (m, v) for the two scalar loss scales.
    pub s_t: (f64, f64),
    pub s_r: (f64, f64),
}

impl AdamState {
    pub fn new(model: &AprModel, hyper: AdamHyper) -> AdamState {
        AdamState {
            hyper,
            step: 0,
            backbone: model.backbone.iter().map(LayerMoments::zeros_like).collect(),
            heads: BTreeMap::new(),
            s_t: (0.0, 0.0),
            s_r: (0.0, 0.0),
        }
    }

    pub fn validate(&self, model: &AprModel) -> Result<()> {
        if self.backbone.len() != model.backbone.len() {
            return Err(Error::invalid("optimizer backbone moments do not match model"));
        }
        for (mom, layer) in self.backbone.iter().zip(&model.backbone) {
            if mom.m.w.rows != layer.w.rows
                || mom.m.w.cols != layer.w.cols
                || mom.m.b.len() != layer.b.len()
            {
                return Err(Error::invalid("optimizer backbone moment shape mismatch"));
            }
        }
        for (scene, mom) in &self.heads {
            let head = model.head(scene)?;
            if mom.m.w.rows != head.w.rows || mom.m.b.len() != head.b.len() {
                return Err(Error::invalid(format!("optimizer head {scene} shape mismatch")));
            }
        }
        Ok(())
    }
}

fn update_slice(
    params: &mut [f64],
    grads: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    h: &AdamHyper,
    bc1: f64,
    bc2: f64,
) {
    debug_assert!(params.len() == grads.len() && m.len() == grads.len() && v.len() == grads.len());
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * g;
        v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= h.lr * m_hat / (v_hat.sqrt() + h.eps);
    }
}

fn update_scalar(p: &mut f64, g: f64, mv: &mut (f64, f64), h: &AdamHyper, bc1: f64, bc2: f64) {
    mv.0 = h.beta1 * mv.0 + (1.0 - h.beta1) * g;
    mv.1 = h.beta2 * mv.1 + (1.0 - h.beta2) * g * g;
    *p -= h.lr * (mv.0 / bc1) / ((mv.1 / bc2).sqrt() + h.eps);
}

/// One optimizer step over the provided gradients. Head gradients are
/// keyed by scene; heads missing from the map are left alone entirely.
pub fn adam_step(
    model: &mut AprModel,
    state: &mut AdamState,
    backbone_grads: &[Layer],
    head_grads: &BTreeMap<String, Layer>,
    d_s_t: f64,
    d_s_r: f64,
) -> Result<()> {
    if backbone_grads.len() != model.backbone.len() {
        return Err(Error::invalid("backbone gradient count mismatch"));
    }
    state.step += 1;
    let h = state.hyper;
    let bc1 = 1.0 - h.beta1.powi(state.step as i32);
    let bc2 = 1.0 - h.beta2.powi(state.step as i32);

    for ((layer, grad), mom) in
        model.backbone.iter_mut().zip(backbone_grads).zip(&mut state.backbone)
    {
        update_slice(&mut layer.w.data, &grad.w.data, &mut mom.m.w.data, &mut mom.v.w.data, &h, bc1, bc2);
        update_slice(&mut layer.b, &grad.b, &mut mom.m.b, &mut mom.v.b, &h, bc1, bc2);
    }
    for (scene, grad) in head_grads {
        let head = model
            .heads
            .get_mut(scene)
            .ok_or_else(|| Error::UnknownScene(scene.clone()))?;
        let mom = state
            .heads
            .entry(scene.clone())
            .or_insert_with(|| LayerMoments::zeros_like(head));
        update_slice(&mut head.w.data, &grad.w.data, &mut mom.m.w.data, &mut mom.v.w.data, &h, bc1, bc2);
        update_slice(&mut head.b, &grad.b, &mut mom.m.b, &mut mom.v.b, &h, bc1, bc2);
    }
    update_scalar(&mut model.s_t, d_s_t, &mut state.s_t, &h, bc1, bc2);
    update_scalar(&mut model.s_r, d_s_r, &mut state.s_r, &h, bc1, bc2);
    Ok(())
}
