//! Batched loss gradients, the optimizer step, and a finite-difference
//! audit of the whole backward pass.
//!
//! A batch may mix items from different scenes; the backbone runs once
//! over the full batch and each head only over its own items. Gradients
//! are of the mean loss, so batch composition decides how much each scene
//! pulls on the shared trunk.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::linalg::{grad_input, grad_weights, Matrix};
use crate::model::adam::{adam_step, AdamState};
use crate::model::loss::{pose_loss, pose_loss_grad};
use crate::model::mlp::{backbone_forward, AprModel, Layer, POSE_DIM};
use crate::world::Observation;

/// Where a training target came from: real ground truth or a teacher's
/// pseudo label distilled from unlabeled inference data.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Supervised,
    Distilled,
}

/// Identity of the frame an item was built from, kept so audits can prove
/// held-out frames never enter training.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRef {
    pub scan_id: String,
    pub frame_index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainItem {
    pub scene_id: String,
    pub frame: FrameRef,
    pub obs: Observation,
    pub target: Pose,
    pub source: LabelSource,
}

/// Gradients of the mean batch loss, holding entries only for heads the
/// batch actually touched.
pub struct BatchGrads {
    pub backbone: Vec<Layer>,
    pub heads: BTreeMap<String, Layer>,
    pub d_s_t: f64,
    pub d_s_r: f64,
    pub mean_loss: f64,
}

fn check_batch(model: &AprModel, items: &[&TrainItem]) -> Result<()> {
    if items.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for it in items {
        if it.obs.features.len() != model.input_dim {
            return Err(Error::invalid(format!(
                "item from {} has {} features, model expects {}",
                it.frame.scan_id,
                it.obs.features.len(),
                model.input_dim
            )));
        }
        model.head(&it.scene_id)?;
    }
    Ok(())
}

/// Indices of each scene's items, in batch order within each group.
fn group_by_scene<'a>(items: &[&'a TrainItem]) -> BTreeMap<&'a str, Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        groups.entry(&it.scene_id).or_default().push(i);
    }
    groups
}

fn gather_rows(src: &[f64], width: usize, idx: &[usize]) -> Vec<f64> {
    let mut out = Vec::with_capacity(idx.len() * width);
    for &i in idx {
        out.extend_from_slice(&src[i * width..(i + 1) * width]);
    }
    out
}

pub fn compute_batch_loss(model: &AprModel, items: &[&TrainItem]) -> Result<f64> {
    check_batch(model, items)?;
    let batch = items.len();
    let feat = model.feature_dim();
    let xs = gather_features(model, items);
    let zs = backbone_forward(model, &xs, batch);
    let z_last = zs.last().unwrap();

    let mut total = 0.0;
    for (scene, idx) in group_by_scene(items) {
        let head = model.head(scene)?;
        let zg = gather_rows(z_last, feat, &idx);
        let mut yg = vec![0.0; idx.len() * POSE_DIM];
        crate::linalg::affine_forward(&zg, &head.w, &head.b, &mut yg, idx.len());
        for (row, &i) in idx.iter().enumerate() {
            let pred: [f64; POSE_DIM] =
                yg[row * POSE_DIM..(row + 1) * POSE_DIM].try_into().unwrap();
            total += pose_loss(&pred, &items[i].target, model.s_t, model.s_r);
        }
    }
    Ok(total / batch as f64)
}

fn gather_features(model: &AprModel, items: &[&TrainItem]) -> Vec<f64> {
    let mut xs = Vec::with_capacity(items.len() * model.input_dim);
    for it in items {
        xs.extend_from_slice(&it.obs.features);
    }
    xs
}

pub fn batch_gradients(model: &AprModel, items: &[&TrainItem]) -> Result<BatchGrads> {
    check_batch(model, items)?;
    let batch = items.len();
    let feat = model.feature_dim();
    let inv_b = 1.0 / batch as f64;

    let xs = gather_features(model, items);
    let zs = backbone_forward(model, &xs, batch);
    let z_last = zs.last().unwrap();

    let mut grads = BatchGrads {
        backbone: model
            .backbone
            .iter()
            .map(|l| Layer::zeros(l.w.rows, l.w.cols))
            .collect(),
        heads: BTreeMap::new(),
        d_s_t: 0.0,
        d_s_r: 0.0,
        mean_loss: 0.0,
    };
    // Gradient flowing back into the final backbone activation.
    let mut dz_last = vec![0.0; batch * feat];

    for (scene, idx) in group_by_scene(items) {
        let head = model.head(scene)?;
        let g = idx.len();
        let zg = gather_rows(z_last, feat, &idx);
        let mut yg = vec![0.0; g * POSE_DIM];
        crate::linalg::affine_forward(&zg, &head.w, &head.b, &mut yg, g);

        // Per-item loss gradients, pre-scaled by 1/batch so everything
        // downstream is already the mean-loss gradient.
        let mut dyg = vec![0.0; g * POSE_DIM];
        for (row, &i) in idx.iter().enumerate() {
            let pred: [f64; POSE_DIM] =
                yg[row * POSE_DIM..(row + 1) * POSE_DIM].try_into().unwrap();
            let lg = pose_loss_grad(&pred, &items[i].target, model.s_t, model.s_r);
            grads.mean_loss += lg.loss * inv_b;
            grads.d_s_t += lg.d_s_t * inv_b;
            grads.d_s_r += lg.d_s_r * inv_b;
            for (a, d) in lg.d_pred.iter().enumerate() {
                dyg[row * POSE_DIM + a] = d * inv_b;
            }
        }

        let mut hw = Matrix::zeros(feat, POSE_DIM);
        let mut hb = vec![0.0; POSE_DIM];
        grad_weights(&zg, &dyg, &mut hw, &mut hb, g);
        grads.heads.insert(scene.to_string(), Layer { w: hw, b: hb });

        let mut dzg = vec![0.0; g * feat];
        grad_input(&dyg, &head.w, &mut dzg, g);
        for (row, &i) in idx.iter().enumerate() {
            dz_last[i * feat..(i + 1) * feat]
                .copy_from_slice(&dzg[row * feat..(row + 1) * feat]);
        }
    }

    // Walk the backbone in reverse; zs[l+1] is the post-tanh output of
    // layer l, so d(pre-activation) = dz * (1 - z^2).
    let mut dz = dz_last;
    for l in (0..model.backbone.len()).rev() {
        let z_out = &zs[l + 1];
        let mut da = dz;
        for (d, &z) in da.iter_mut().zip(z_out) {
            *d *= 1.0 - z * z;
        }
        let gl = &mut grads.backbone[l];
        grad_weights(&zs[l], &da, &mut gl.w, &mut gl.b, batch);
        let in_dim = model.backbone[l].w.rows;
        let mut dprev = vec![0.0; batch * in_dim];
        if l > 0 {
            grad_input(&da, &model.backbone[l].w, &mut dprev, batch);
        }
        dz = dprev;
    }
    Ok(grads)
}

/// Forward, backward, and one Adam update. Returns the mean batch loss
/// measured before the update.
pub fn batch_step(model: &mut AprModel, state: &mut AdamState, items: &[&TrainItem]) -> Result<f64> {
    let grads = batch_gradients(model, items)?;
    adam_step(model, state, &grads.backbone, &grads.heads, grads.d_s_t, grads.d_s_r)?;
    Ok(grads.mean_loss)
}

#[derive(Clone, Copy, Debug)]
enum TensorId<'a> {
    BackboneW(usize),
    BackboneB(usize),
    HeadW(&'a str),
    HeadB(&'a str),
    ST,
    SR,
}

fn tensor_slice<'m>(model: &'m AprModel, id: TensorId) -> &'m [f64] {
    match id {
        TensorId::BackboneW(l) => &model.backbone[l].w.data,
        TensorId::BackboneB(l) => &model.backbone[l].b,
        TensorId::HeadW(s) => &model.heads[s].w.data,
        TensorId::HeadB(s) => &model.heads[s].b,
        TensorId::ST => std::slice::from_ref(&model.s_t),
        TensorId::SR => std::slice::from_ref(&model.s_r),
    }
}

fn tensor_slice_mut<'m>(model: &'m mut AprModel, id: TensorId) -> &'m mut [f64] {
    match id {
        TensorId::BackboneW(l) => &mut model.backbone[l].w.data,
        TensorId::BackboneB(l) => &mut model.backbone[l].b,
        TensorId::HeadW(s) => &mut model.heads.get_mut(s).unwrap().w.data,
        TensorId::HeadB(s) => &mut model.heads.get_mut(s).unwrap().b,
        TensorId::ST => std::slice::from_mut(&mut model.s_t),
        TensorId::SR => std::slice::from_mut(&mut model.s_r),
    }
}

fn grad_at(grads: &BatchGrads, id: TensorId, i: usize) -> f64 {
    match id {
        TensorId::BackboneW(l) => grads.backbone[l].w.data[i],
        TensorId::BackboneB(l) => grads.backbone[l].b[i],
        TensorId::HeadW(s) => grads.heads.get(s).map_or(0.0, |g| g.w.data[i]),
        TensorId::HeadB(s) => grads.heads.get(s).map_or(0.0, |g| g.b[i]),
        TensorId::ST => grads.d_s_t,
        TensorId::SR => grads.d_s_r,
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub n_checked: usize,
}

/// Gradient magnitudes below this are at the noise scale of the central
/// difference itself (loss roundoff / epsilon, ~1e-10 here), so they are
/// compared in absolute rather than relative terms.
const GRAD_DENOM_FLOOR: f64 = 1e-4;

/// Compare analytic gradients against central finite differences on a
/// deterministic, stratified subsample of at least `min_params`
/// parameters. Every tensor contributes proportionally to its size and
/// the two loss scales are always included. Relative error uses
/// max(|analytic|, |numeric|, GRAD_DENOM_FLOOR) as denominator.
pub fn gradient_check(
    model: &AprModel,
    items: &[&TrainItem],
    eps: f64,
    min_params: usize,
) -> Result<GradCheck> {
    let analytic = batch_gradients(model, items)?;
    let head_ids: Vec<&str> = model.heads.keys().map(String::as_str).collect();
    let mut tensors: Vec<TensorId> = vec![];
    for l in 0..model.backbone.len() {
        tensors.push(TensorId::BackboneW(l));
        tensors.push(TensorId::BackboneB(l));
    }
    for &s in &head_ids {
        tensors.push(TensorId::HeadW(s));
        tensors.push(TensorId::HeadB(s));
    }
    tensors.push(TensorId::ST);
    tensors.push(TensorId::SR);

    let total: usize = tensors.iter().map(|&id| tensor_slice(model, id).len()).sum();
    let mut scratch = model.clone();
    let mut max_rel_err: f64 = 0.0;
    let mut n_checked = 0;

    for &id in &tensors {
        let len = tensor_slice(model, id).len();
        // Proportional allocation, rounded up, evenly spread over the tensor.
        let take = ((min_params * len + total - 1) / total).clamp(1, len);
        for j in 0..take {
            let i = j * len / take;
            let orig = tensor_slice(model, id)[i];

            tensor_slice_mut(&mut scratch, id)[i] = orig + eps;
            let f_hi = compute_batch_loss(&scratch, items)?;
            tensor_slice_mut(&mut scratch, id)[i] = orig - eps;
            let f_lo = compute_batch_loss(&scratch, items)?;
            tensor_slice_mut(&mut scratch, id)[i] = orig;

            let numeric = (f_hi - f_lo) / (2.0 * eps);
            let a = grad_at(&analytic, id, i);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_DENOM_FLOOR);
            max_rel_err = max_rel_err.max(rel);
            n_checked += 1;
        }
    }
    Ok(GradCheck { max_rel_err, n_checked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{random_unit_quat, Pose};
    use crate::model::adam::AdamHyper;
    use crate::model::mlp::{init_model, ModelConfig};
    use crate::seed::stream;

    fn item(scene: &str, dim: usize, rng: &mut impl rand::Rng) -> TrainItem {
        TrainItem {
            scene_id: scene.to_string(),
            frame: FrameRef { scan_id: format!("{scene}-scan"), frame_index: 0 },
            obs: Observation {
                features: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            },
            target: Pose::new(
                [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), 0.3],
                random_unit_quat(rng),
            )
            .unwrap(),
            source: LabelSource::Supervised,
        }
    }

    fn setup(dim: usize, hidden: Vec<usize>) -> (AprModel, Vec<TrainItem>) {
        let cfg = ModelConfig { input_dim: dim, hidden };
        let model = init_model(&cfg, &["a", "b"], 13).unwrap();
        let mut rng = stream(14, "items");
        let mut items = vec![];
        for k in 0..6 {
            items.push(item(if k % 2 == 0 { "a" } else { "b" }, dim, &mut rng));
        }
        (model, items)
    }

    #[test]
    fn mixed_batch_gradients_pass_finite_difference_audit() {
        let (model, items) = setup(10, vec![8, 6]);
        let refs: Vec<&TrainItem> = items.iter().collect();
        let check = gradient_check(&model, &refs, 1e-5, 200).unwrap();
        assert!(check.n_checked >= 200, "only {} params checked", check.n_checked);
        assert!(
            check.max_rel_err < 1e-6,
            "gradient mismatch: {}",
            check.max_rel_err
        );
    }

    #[test]
    fn batch_gradient_is_mean_of_item_gradients() {
        let (model, items) = setup(6, vec![5]);
        let refs: Vec<&TrainItem> = items.iter().take(2).collect();
        let joint = batch_gradients(&model, &refs).unwrap();
        let g0 = batch_gradients(&model, &refs[..1]).unwrap();
        let g1 = batch_gradients(&model, &refs[1..]).unwrap();
        for l in 0..joint.backbone.len() {
            let jw = &joint.backbone[l].w.data;
            for j in 0..jw.len() {
                let mean = 0.5 * (g0.backbone[l].w.data[j] + g1.backbone[l].w.data[j]);
                assert!((jw[j] - mean).abs() < 1e-12, "layer {l} weight {j}");
            }
        }
        assert!((joint.d_s_t - 0.5 * (g0.d_s_t + g1.d_s_t)).abs() < 1e-12);
        assert!((joint.mean_loss - 0.5 * (g0.mean_loss + g1.mean_loss)).abs() < 1e-12);
    }

    #[test]
    fn untouched_head_gets_no_gradient_entry() {
        let (model, items) = setup(6, vec![5]);
        let only_a: Vec<&TrainItem> = items.iter().filter(|i| i.scene_id == "a").collect();
        let grads = batch_gradients(&model, &only_a).unwrap();
        assert!(grads.heads.contains_key("a"));
        assert!(!grads.heads.contains_key("b"));
    }

    #[test]
    fn training_reduces_loss_on_a_small_fit() {
        let (mut model, items) = setup(10, vec![16]);
        let refs: Vec<&TrainItem> = items.iter().collect();
        let mut state = AdamState::new(&model, AdamHyper { lr: 5e-3, ..AdamHyper::default() });
        let first = compute_batch_loss(&model, &refs).unwrap();
        let mut last = first;
        for _ in 0..300 {
            last = batch_step(&mut model, &mut state, &refs).unwrap();
        }
        let final_loss = compute_batch_loss(&model, &refs).unwrap();
        assert!(
            final_loss < 0.5 * first,
            "no progress: {first} -> {final_loss} (last step saw {last})"
        );
    }

    #[test]
    fn rejects_bad_batches() {
        let (model, items) = setup(6, vec![5]);
        assert!(matches!(batch_gradients(&model, &[]), Err(Error::EmptyDataset)));

        let mut wrong_dim = items[0].clone();
        wrong_dim.obs.features.pop();
        assert!(batch_gradients(&model, &[&wrong_dim]).is_err());

        let mut wrong_scene = items[0].clone();
        wrong_scene.scene_id = "nope".into();
        assert!(matches!(
            batch_gradients(&model, &[&wrong_scene]),
            Err(Error::UnknownScene(_))
        ));
    }

    #[test]
    fn step_is_deterministic() {
        let (model0, items) = setup(8, vec![6]);
        let refs: Vec<&TrainItem> = items.iter().collect();
        let run = |_: ()| {
            let mut m = model0.clone();
            let mut s = AdamState::new(&m, AdamHyper::default());
            for _ in 0..10 {
                batch_step(&mut m, &mut s, &refs).unwrap();
            }
            (m, s)
        };
        let (ma, sa) = run(());
        let (mb, sb) = run(());
        assert_eq!(ma, mb);
        assert_eq!(sa, sb);
    }
}
