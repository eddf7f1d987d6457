//! Scene definition and the observation renderer.
//!
//! An observation is a bank of random sinusoidal features of the 8-vector
//! `[scaled position (3), orientation quaternion (4), condition c (1)]`.
//! Rows past `ceil(D * condition_sensitive_fraction)` carry exactly zero
//! weight on the condition coordinate, so that slice of the feature vector
//! is condition-invariant by construction; the leading rows shift when the
//! condition drifts.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::linalg::Matrix;
use crate::seed;

/// Renderer input layout: scaled position, quaternion, condition.
pub const INPUT_DIM: usize = 8;
/// Index of the condition coordinate in the renderer input.
pub const CONDITION_INDEX: usize = 7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub features: Vec<f64>,
}

/// Free parameters of [`make_scene`]; the projection itself is derived.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneParams {
    pub feature_dim: usize,
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    pub condition_sensitive_fraction: f64,
    pub obs_noise_sigma: f64,
    /// Std-dev of projection weights on the position coordinates.
    pub frequency_scale: f64,
    /// Std-dev of projection weights on the orientation coordinates.
    /// Kept below the position scale: appearance varies more with where
    /// the camera is than with which way it faces.
    pub orientation_frequency_scale: f64,
    /// Std-dev of projection weights on the condition coordinate.
    pub condition_frequency_scale: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            feature_dim: 128,
            workspace_min: [-4.0, -4.0, -1.0],
            workspace_max: [4.0, 4.0, 1.0],
            condition_sensitive_fraction: 0.5,
            obs_noise_sigma: 0.01,
            frequency_scale: 1.6,
            orientation_frequency_scale: 0.5,
            condition_frequency_scale: 2.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scene_id: String,
    pub seed: u64,
    pub feature_dim: usize,
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    pub condition_sensitive_fraction: f64,
    pub obs_noise_sigma: f64,
    /// `feature_dim x 8`, rows are per-feature projections.
    pub projection: Matrix,
    pub bias: Vec<f64>,
}

/// Number of leading projection rows that react to the condition.
pub fn sensitive_rows(feature_dim: usize, fraction: f64) -> usize {
    (feature_dim as f64 * fraction).ceil() as usize
}

pub fn make_scene(scene_id: &str, seed: u64, params: &SceneParams) -> Result<SceneSpec> {
    if params.feature_dim < INPUT_DIM {
        return Err(Error::invalid(format!(
            "feature_dim {} must be at least {INPUT_DIM}",
            params.feature_dim
        )));
    }
    for a in 0..3 {
        if !(params.workspace_max[a] > params.workspace_min[a]) {
            return Err(Error::invalid("workspace must have positive extent on every axis"));
        }
    }
    if !(0.0..=1.0).contains(&params.condition_sensitive_fraction) {
        return Err(Error::invalid("condition_sensitive_fraction must lie in [0, 1]"));
    }
    if !(params.obs_noise_sigma >= 0.0) || !params.obs_noise_sigma.is_finite() {
        return Err(Error::invalid("obs_noise_sigma must be finite and non-negative"));
    }
    if !(params.frequency_scale > 0.0)
        || !(params.orientation_frequency_scale > 0.0)
        || !(params.condition_frequency_scale > 0.0)
    {
        return Err(Error::invalid("frequency scales must be positive"));
    }

    let mut rng = seed::stream(seed, &format!("scene/{scene_id}/projection"));
    let pos_w = Normal::new(0.0, params.frequency_scale).unwrap();
    let ori_w = Normal::new(0.0, params.orientation_frequency_scale).unwrap();
    let cond_w = Normal::new(0.0, params.condition_frequency_scale).unwrap();
    let n_sensitive = sensitive_rows(params.feature_dim, params.condition_sensitive_fraction);

    let mut projection = Matrix::zeros(params.feature_dim, INPUT_DIM);
    for i in 0..params.feature_dim {
        let row = projection.row_mut(i);
        for (j, item) in row.iter_mut().take(CONDITION_INDEX).enumerate() {
            *item = if j < 3 { pos_w.sample(&mut rng) } else { ori_w.sample(&mut rng) };
        }
        // Exactly zero, not merely small: the invariant slice must be
        // bit-independent of the condition.
        row[CONDITION_INDEX] = if i < n_sensitive { cond_w.sample(&mut rng) } else { 0.0 };
    }
    let bias: Vec<f64> = (0..params.feature_dim)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();

    Ok(SceneSpec {
        scene_id: scene_id.to_string(),
        seed,
        feature_dim: params.feature_dim,
        workspace_min: params.workspace_min,
        workspace_max: params.workspace_max,
        condition_sensitive_fraction: params.condition_sensitive_fraction,
        obs_noise_sigma: params.obs_noise_sigma,
        projection,
        bias,
    })
}

impl SceneSpec {
    /// First feature index of the condition-invariant slice.
    pub fn invariant_start(&self) -> usize {
        sensitive_rows(self.feature_dim, self.condition_sensitive_fraction)
    }

    /// Map a workspace position to [-1, 1] per axis.
    pub fn scale_position(&self, p: &[f64; 3]) -> [f64; 3] {
        std::array::from_fn(|a| {
            let span = self.workspace_max[a] - self.workspace_min[a];
            2.0 * (p[a] - self.workspace_min[a]) / span - 1.0
        })
    }

    pub fn renderer_input(&self, pose: &Pose, condition: f64) -> [f64; INPUT_DIM] {
        let s = self.scale_position(&pose.position);
        [
            s[0],
            s[1],
            s[2],
            pose.orientation[0],
            pose.orientation[1],
            pose.orientation[2],
            pose.orientation[3],
            condition,
        ]
    }
}

/// Render one observation. Noise draws are clamped to +-5 sigma so feature
/// components always stay inside `[-1 - 5s, 1 + 5s]`.
pub fn render(
    scene: &SceneSpec,
    pose: &Pose,
    condition: f64,
    rng: &mut impl Rng,
) -> Result<Observation> {
    const SLACK: f64 = 1e-9;
    for a in 0..3 {
        if pose.position[a] < scene.workspace_min[a] - SLACK
            || pose.position[a] > scene.workspace_max[a] + SLACK
        {
            return Err(Error::invalid(format!(
                "pose position axis {a} = {} outside workspace [{}, {}]",
                pose.position[a], scene.workspace_min[a], scene.workspace_max[a]
            )));
        }
    }
    if !condition.is_finite() {
        return Err(Error::invalid("condition must be finite"));
    }

    let x = scene.renderer_input(pose, condition);
    let noise = Normal::new(0.0, scene.obs_noise_sigma)
        .map_err(|_| Error::invalid("obs_noise_sigma must be finite"))?;
    let clamp = 5.0 * scene.obs_noise_sigma;
    let mut features = Vec::with_capacity(scene.feature_dim);
    for i in 0..scene.feature_dim {
        let row = scene.projection.row(i);
        let mut arg = scene.bias[i];
        for (w, xi) in row.iter().zip(x.iter()) {
            arg += w * xi;
        }
        let n: f64 = noise.sample(rng);
        features.push(arg.sin() + n.clamp(-clamp, clamp));
    }
    Ok(Observation { features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_unit_quat;
    use crate::seed::stream;

    fn scene() -> SceneSpec {
        make_scene("s", 11, &SceneParams::default()).unwrap()
    }

    fn noiseless() -> SceneSpec {
        let params = SceneParams { obs_noise_sigma: 0.0, ..SceneParams::default() };
        make_scene("s", 11, &params).unwrap()
    }

    fn pose_at(rng: &mut impl Rng, s: &SceneSpec) -> Pose {
        Pose {
            position: std::array::from_fn(|a| {
                rng.random_range(s.workspace_min[a]..s.workspace_max[a])
            }),
            orientation: random_unit_quat(rng),
        }
    }

    #[test]
    fn scene_is_deterministic_and_validated() {
        let a = scene();
        let b = scene();
        assert_eq!(a, b);
        let c = make_scene("s", 12, &SceneParams::default()).unwrap();
        assert_ne!(a.projection, c.projection);

        let bad = SceneParams { feature_dim: 4, ..SceneParams::default() };
        assert!(make_scene("s", 1, &bad).is_err());
        let bad = SceneParams { workspace_min: [5.0, 0.0, 0.0], ..SceneParams::default() };
        assert!(make_scene("s", 1, &bad).is_err());
    }

    #[test]
    fn condition_column_is_exactly_zero_past_sensitive_rows() {
        let s = scene();
        let start = s.invariant_start();
        assert_eq!(start, 64); // ceil(128 * 0.5)
        for i in 0..s.feature_dim {
            let w = s.projection.row(i)[CONDITION_INDEX];
            if i >= start {
                assert_eq!(w, 0.0, "row {i} must ignore the condition");
            } else {
                assert_ne!(w, 0.0, "row {i} should react to the condition");
            }
        }
    }

    #[test]
    fn render_is_deterministic_given_rng_state() {
        let s = scene();
        let mut r1 = stream(3, "obs");
        let mut r2 = stream(3, "obs");
        let p = pose_at(&mut stream(4, "p"), &s);
        let a = render(&s, &p, 0.3, &mut r1).unwrap();
        let b = render(&s, &p, 0.3, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invariant_slice_ignores_condition_sensitive_slice_reacts() {
        let s = noiseless();
        let mut rng = stream(5, "p");
        let p = pose_at(&mut rng, &s);
        let mut dummy = stream(0, "n");
        let at0 = render(&s, &p, 0.0, &mut dummy).unwrap();
        let at1 = render(&s, &p, 1.0, &mut dummy).unwrap();
        let start = s.invariant_start();
        for i in start..s.feature_dim {
            assert_eq!(at0.features[i], at1.features[i], "invariant dim {i} moved");
        }
        let moved = (0..start)
            .filter(|&i| (at0.features[i] - at1.features[i]).abs() > 1e-6)
            .count();
        assert!(moved > start / 2, "only {moved} of {start} sensitive dims moved");
    }

    #[test]
    fn features_stay_inside_documented_bounds() {
        let s = scene();
        let mut rng = stream(6, "bounds");
        let lo = -1.0 - 5.0 * s.obs_noise_sigma;
        let hi = 1.0 + 5.0 * s.obs_noise_sigma;
        for _ in 0..50 {
            let p = pose_at(&mut rng, &s);
            let obs = render(&s, &p, 0.5, &mut rng).unwrap();
            for f in obs.features {
                assert!((lo..=hi).contains(&f));
            }
        }
    }

    #[test]
    fn render_is_lipschitz_in_the_input() {
        // |sin(w.x1) - sin(w.x2)| <= ||w|| ||x1 - x2|| per feature.
        let s = noiseless();
        let mut rng = stream(7, "lip");
        let mut dummy = stream(0, "n");
        for _ in 0..50 {
            let p1 = pose_at(&mut rng, &s);
            let p2 = pose_at(&mut rng, &s);
            let c1 = rng.random_range(0.0..1.0);
            let c2 = rng.random_range(0.0..1.0);
            let o1 = render(&s, &p1, c1, &mut dummy).unwrap();
            let o2 = render(&s, &p2, c2, &mut dummy).unwrap();
            let x1 = s.renderer_input(&p1, c1);
            let x2 = s.renderer_input(&p2, c2);
            let dx = (0..INPUT_DIM).map(|i| (x1[i] - x2[i]).powi(2)).sum::<f64>().sqrt();
            for i in 0..s.feature_dim {
                let wn = s.projection.row(i).iter().map(|w| w * w).sum::<f64>().sqrt();
                let df = (o1.features[i] - o2.features[i]).abs();
                assert!(df <= wn * dx + 1e-9, "dim {i}: {df} > {wn} * {dx}");
            }
        }
    }

    #[test]
    fn render_rejects_out_of_workspace_pose() {
        let s = scene();
        let p = Pose { position: [100.0, 0.0, 0.0], orientation: [1.0, 0.0, 0.0, 0.0] };
        assert!(render(&s, &p, 0.0, &mut stream(0, "n")).is_err());
    }
}
