//! Pose-regression MLP: a shared backbone with one linear head per scene.
//!
//! The backbone applies tanh after every affine layer; heads map the final
//! feature vector straight to a 7-vector (translation plus an unnormalized
//! quaternion). Heads can be added at any time without disturbing existing
//! parameters, so a deployed model can absorb new scenes mid-run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{affine_forward, Matrix};
use crate::seed;

/// Head output width: translation xyz plus quaternion wxyz.
pub const POSE_DIM: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major `in x out`; row i holds the fan-out of input i.
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Layer {
        Layer { w: Matrix::zeros(fan_in, fan_out), b: vec![0.0; fan_out] }
    }

    fn xavier(fan_in: usize, fan_out: usize, rng: &mut impl rand::Rng) -> Layer {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut w = Matrix::zeros(fan_in, fan_out);
        for v in &mut w.data {
            *v = rng.random_range(-bound..bound);
        }
        Layer { w, b: vec![0.0; fan_out] }
    }

    pub fn n_params(&self) -> usize {
        self.w.data.len() + self.b.len()
    }

    fn check_dims(&self, fan_in: usize, fan_out: usize, what: &str) -> Result<()> {
        if self.w.rows != fan_in
            || self.w.cols != fan_out
            || self.w.data.len() != fan_in * fan_out
            || self.b.len() != fan_out
        {
            return Err(Error::invalid(format!(
                "{what}: expected {fan_in}x{fan_out} weights with {fan_out} biases, \
                 got {}x{} ({} values) with {}",
                self.w.rows,
                self.w.cols,
                self.w.data.len(),
                self.b.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Backbone widths; the last entry is the feature dimension heads see.
    pub hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { input_dim: 128, hidden: vec![64, 64] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AprModel {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub backbone: Vec<Layer>,
    pub heads: BTreeMap<String, Layer>,
    /// Learned homoscedastic log-variances of the two loss terms.
    pub s_t: f64,
    pub s_r: f64,
    /// Seed the head init streams derive from; kept so heads added later
    /// come out identical to heads present from the start.
    pub init_seed: u64,
}

impl AprModel {
    pub fn feature_dim(&self) -> usize {
        *self.hidden.last().expect("backbone has at least one layer")
    }

    pub fn head(&self, scene_id: &str) -> Result<&Layer> {
        self.heads
            .get(scene_id)
            .ok_or_else(|| Error::UnknownScene(scene_id.to_string()))
    }

    pub fn n_params(&self) -> usize {
        let backbone: usize = self.backbone.iter().map(Layer::n_params).sum();
        let heads: usize = self.heads.values().map(Layer::n_params).sum();
        backbone + heads + 2
    }

    /// Structural consistency check for checkpoints loaded from disk.
    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() {
            return Err(Error::invalid("backbone needs at least one layer"));
        }
        if self.backbone.len() != self.hidden.len() {
            return Err(Error::invalid(format!(
                "backbone has {} layers but {} widths",
                self.backbone.len(),
                self.hidden.len()
            )));
        }
        let mut fan_in = self.input_dim;
        for (i, (layer, &width)) in self.backbone.iter().zip(&self.hidden).enumerate() {
            layer.check_dims(fan_in, width, &format!("backbone layer {i}"))?;
            fan_in = width;
        }
        for (scene, head) in &self.heads {
            head.check_dims(fan_in, POSE_DIM, &format!("head {scene}"))?;
        }
        if !self.s_t.is_finite() || !self.s_r.is_finite() {
            return Err(Error::invalid("loss scales must be finite"));
        }
        Ok(())
    }
}

fn head_layer(feature_dim: usize, scene_id: &str, init_seed: u64) -> Layer {
    let mut rng = seed::stream(init_seed, &format!("init/head/{scene_id}"));
    Layer::xavier(feature_dim, POSE_DIM, &mut rng)
}

/// Fresh model with Xavier-uniform weights, zero biases, and one head per
/// scene. `s_t` starts at 0 and `s_r` at -3: rotation residuals are far
/// smaller than position residuals at init, and a smaller log-variance
/// keeps the rotation term from being drowned out.
pub fn init_model(cfg: &ModelConfig, scene_ids: &[&str], init_seed: u64) -> Result<AprModel> {
    if cfg.input_dim == 0 {
        return Err(Error::invalid("input_dim must be positive"));
    }
    if cfg.hidden.is_empty() || cfg.hidden.contains(&0) {
        return Err(Error::invalid("hidden widths must be positive and non-empty"));
    }
    let mut rng = seed::stream(init_seed, "init/backbone");
    let mut backbone = vec![];
    let mut fan_in = cfg.input_dim;
    for &width in &cfg.hidden {
        backbone.push(Layer::xavier(fan_in, width, &mut rng));
        fan_in = width;
    }
    let mut model = AprModel {
        input_dim: cfg.input_dim,
        hidden: cfg.hidden.clone(),
        backbone,
        heads: BTreeMap::new(),
        s_t: 0.0,
        s_r: -3.0,
        init_seed,
    };
    for &id in scene_ids {
        add_head(&mut model, id)?;
    }
    Ok(model)
}

/// Attach a head for a new scene. Existing parameters are untouched, and
/// the new head's weights depend only on the model's init seed and the
/// scene id, never on when the head was added.
pub fn add_head(model: &mut AprModel, scene_id: &str) -> Result<()> {
    if model.heads.contains_key(scene_id) {
        return Err(Error::DuplicateScene(scene_id.to_string()));
    }
    let layer = head_layer(model.feature_dim(), scene_id, model.init_seed);
    model.heads.insert(scene_id.to_string(), layer);
    Ok(())
}

/// Backbone activations for a batch, including the input as `zs[0]`.
/// Each entry is batch-major flat storage.
pub(crate) fn backbone_forward(model: &AprModel, xs: &[f64], batch: usize) -> Vec<Vec<f64>> {
    debug_assert_eq!(xs.len(), batch * model.input_dim);
    let mut zs: Vec<Vec<f64>> = Vec::with_capacity(model.backbone.len() + 1);
    zs.push(xs.to_vec());
    for layer in &model.backbone {
        let out = layer.b.len();
        let mut a = vec![0.0; batch * out];
        affine_forward(zs.last().unwrap(), &layer.w, &layer.b, &mut a, batch);
        for v in &mut a {
            *v = v.tanh();
        }
        zs.push(a);
    }
    zs
}

/// Raw head output for one observation: `[t_xyz, r_wxyz]` with the
/// quaternion unnormalized.
pub fn forward(model: &AprModel, scene_id: &str, features: &[f64]) -> Result<[f64; POSE_DIM]> {
    if features.len() != model.input_dim {
        return Err(Error::invalid(format!(
            "expected {} features, got {}",
            model.input_dim,
            features.len()
        )));
    }
    let head = model.head(scene_id)?;
    let zs = backbone_forward(model, features, 1);
    let mut y = [0.0; POSE_DIM];
    affine_forward(zs.last().unwrap(), &head.w, &head.b, &mut y, 1);
    Ok(y)
}
