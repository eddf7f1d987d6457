//! Benchmark assembly: scenes, initial training scans, and the stream of
//! arrival events a strategy consumes round by round.
//!
//! Three presets cover the interesting regimes: `condition_shift` revisits
//! known poses under a drifting condition, `novel_pose` explores unseen
//! regions of the workspace, and `multi_scene` adds whole new scenes while
//! old ones keep producing inference scans. Construction is a pure function
//! of the config; identical configs serialize to identical bytes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::world::scan::{generate_scan, split_holdout, Scan, ScanRole, TrajectoryParams};
use crate::world::scene::{make_scene, SceneParams, SceneSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RoundEvent {
    /// An unlabeled scan arrives from a deployed client.
    NewInferenceScan { scan: Scan },
    /// A new scene comes online with labeled training scans.
    NewSceneTraining { scene_id: String, scans: Vec<Scan> },
}

impl RoundEvent {
    pub fn kind_label(&self) -> &'static str {
        match self {
            RoundEvent::NewInferenceScan { .. } => "new_inference_scan",
            RoundEvent::NewSceneTraining { .. } => "new_scene_training",
        }
    }

    /// Scan id shown in reports: the arriving scan, or the scene id for a
    /// scene-training event carrying several scans.
    pub fn label_id(&self) -> String {
        match self {
            RoundEvent::NewInferenceScan { scan } => scan.scan_id.clone(),
            RoundEvent::NewSceneTraining { scene_id, .. } => scene_id.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub scenes: Vec<SceneSpec>,
    pub initial_training: Vec<Scan>,
    pub events: Vec<RoundEvent>,
}

impl Benchmark {
    pub fn scene(&self, scene_id: &str) -> Result<&SceneSpec> {
        self.scenes
            .iter()
            .find(|s| s.scene_id == scene_id)
            .ok_or_else(|| Error::UnknownScene(scene_id.to_string()))
    }

    /// Every scan in arrival order: initial training first, then event
    /// scans in schedule order.
    pub fn all_scans(&self) -> Vec<&Scan> {
        let mut out: Vec<&Scan> = self.initial_training.iter().collect();
        for e in &self.events {
            match e {
                RoundEvent::NewInferenceScan { scan } => out.push(scan),
                RoundEvent::NewSceneTraining { scans, .. } => out.extend(scans.iter()),
            }
        }
        out
    }

    /// Scene ids with scans in the initial training set, in first-seen order.
    pub fn initial_scene_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = vec![];
        for s in &self.initial_training {
            if !ids.contains(&s.scene_id) {
                ids.push(s.scene_id.clone());
            }
        }
        ids
    }

    /// Visible (trainable) frames in the initial labeled set.
    pub fn n_initial_visible(&self) -> usize {
        self.initial_training.iter().map(|s| s.n_visible()).sum()
    }

    /// Visible frames across all inference-scan events; the unlabeled
    /// stream a replay buffer sees.
    pub fn n_unlabeled_visible(&self) -> usize {
        self.events
            .iter()
            .filter_map(|e| match e {
                RoundEvent::NewInferenceScan { scan } => Some(scan.n_visible()),
                RoundEvent::NewSceneTraining { .. } => None,
            })
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("benchmark serializes")
    }

    pub fn from_json(s: &str) -> Result<Benchmark> {
        serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    ConditionShift,
    NovelPose,
    MultiScene,
}

fn d_feature_dim() -> usize { 128 }
fn d_frames() -> usize { 1024 }
fn d_train_scans() -> usize { 3 }
fn d_infer_scans() -> usize { 3 }
fn d_conditions() -> Vec<f64> { vec![0.4, 0.8, 1.0] }
fn d_initial_scenes() -> usize { 2 }
fn d_added_scenes() -> usize { 1 }
fn d_holdout_fraction() -> f64 { 0.125 }
fn d_segment_len() -> usize { 16 }
fn d_obs_noise() -> f64 { 0.03 }
fn d_sensitive_fraction() -> f64 { 0.5 }
fn d_freq() -> f64 { 1.6 }
fn d_ori_freq() -> f64 { 0.5 }
fn d_cond_freq() -> f64 { 1.2 }
fn d_waypoints() -> usize { 12 }
fn d_max_step() -> f64 { 0.25 }

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub preset: Preset,
    pub seed: u64,
    #[serde(default = "d_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "d_frames")]
    pub frames_per_scan: usize,
    #[serde(default = "d_train_scans")]
    pub train_scans_per_scene: usize,
    /// Inference scans per scene for the pose-novelty presets.
    #[serde(default = "d_infer_scans")]
    pub inference_scans_per_scene: usize,
    /// Condition values of the arriving scans in `condition_shift` order;
    /// one inference scan per value.
    #[serde(default = "d_conditions")]
    pub inference_conditions: Vec<f64>,
    /// Scenes present from the start (`multi_scene` only).
    #[serde(default = "d_initial_scenes")]
    pub initial_scenes: usize,
    /// Scenes arriving later via training events (`multi_scene` only).
    #[serde(default = "d_added_scenes")]
    pub added_scenes: usize,
    #[serde(default = "d_holdout_fraction")]
    pub holdout_fraction: f64,
    #[serde(default = "d_segment_len")]
    pub segment_len: usize,
    #[serde(default = "d_obs_noise")]
    pub obs_noise_sigma: f64,
    #[serde(default = "d_sensitive_fraction")]
    pub condition_sensitive_fraction: f64,
    #[serde(default = "d_freq")]
    pub frequency_scale: f64,
    #[serde(default = "d_ori_freq")]
    pub orientation_frequency_scale: f64,
    #[serde(default = "d_cond_freq")]
    pub condition_frequency_scale: f64,
    #[serde(default = "d_waypoints")]
    pub n_waypoints: usize,
    #[serde(default = "d_max_step")]
    pub max_step: f64,
}

impl BenchmarkConfig {
    pub fn preset_defaults(preset: Preset, seed: u64) -> Self {
        BenchmarkConfig {
            preset,
            seed,
            feature_dim: d_feature_dim(),
            frames_per_scan: d_frames(),
            train_scans_per_scene: d_train_scans(),
            inference_scans_per_scene: d_infer_scans(),
            inference_conditions: d_conditions(),
            initial_scenes: d_initial_scenes(),
            added_scenes: d_added_scenes(),
            holdout_fraction: d_holdout_fraction(),
            segment_len: d_segment_len(),
            obs_noise_sigma: d_obs_noise(),
            condition_sensitive_fraction: d_sensitive_fraction(),
            frequency_scale: d_freq(),
            orientation_frequency_scale: d_ori_freq(),
            condition_frequency_scale: d_cond_freq(),
            n_waypoints: d_waypoints(),
            max_step: d_max_step(),
        }
    }

    fn scene_params(&self) -> SceneParams {
        SceneParams {
            feature_dim: self.feature_dim,
            condition_sensitive_fraction: self.condition_sensitive_fraction,
            obs_noise_sigma: self.obs_noise_sigma,
            frequency_scale: self.frequency_scale,
            orientation_frequency_scale: self.orientation_frequency_scale,
            condition_frequency_scale: self.condition_frequency_scale,
            ..SceneParams::default()
        }
    }
}

/// Margin between the workspace boundary and any waypoint box.
const BOX_MARGIN: f64 = 0.4;
/// Half-gap between the train and inference regions of the novelty presets.
const REGION_GAP: f64 = 0.4;

struct Builder<'c> {
    cfg: &'c BenchmarkConfig,
    params: SceneParams,
}

impl<'c> Builder<'c> {
    fn full_box(&self) -> ([f64; 3], [f64; 3]) {
        let lo: [f64; 3] = std::array::from_fn(|a| self.params.workspace_min[a] + BOX_MARGIN);
        let hi: [f64; 3] = std::array::from_fn(|a| self.params.workspace_max[a] - BOX_MARGIN);
        (lo, hi)
    }

    /// Left/right halves of the workspace along x, separated by a gap.
    fn half_box(&self, right: bool) -> ([f64; 3], [f64; 3]) {
        let (lo, hi) = self.full_box();
        let mid = 0.5 * (lo[0] + hi[0]);
        if right {
            ([mid + REGION_GAP, lo[1], lo[2]], hi)
        } else {
            (lo, [mid - REGION_GAP, hi[1], hi[2]])
        }
    }

    fn scan(
        &self,
        scene: &SceneSpec,
        scan_id: &str,
        wp: ([f64; 3], [f64; 3]),
        condition: f64,
        role: ScanRole,
    ) -> Result<Scan> {
        let traj = TrajectoryParams {
            n_frames: self.cfg.frames_per_scan,
            n_waypoints: self.cfg.n_waypoints,
            waypoint_min: wp.0,
            waypoint_max: wp.1,
            max_step: self.cfg.max_step,
            seed: seed::derive(self.cfg.seed, &format!("scan/{scan_id}")),
        };
        let scan = generate_scan(scene, scan_id, &traj, condition, role)?;
        let mut rng = seed::stream(self.cfg.seed, &format!("split/{scan_id}"));
        split_holdout(&scan, self.cfg.holdout_fraction, self.cfg.segment_len, &mut rng)
    }
}

pub fn build_benchmark(cfg: &BenchmarkConfig) -> Result<Benchmark> {
    if cfg.frames_per_scan == 0 {
        return Err(Error::invalid("frames_per_scan must be positive"));
    }
    if cfg.train_scans_per_scene == 0 {
        return Err(Error::invalid("train_scans_per_scene must be positive"));
    }
    let b = Builder { cfg, params: cfg.scene_params() };
    match cfg.preset {
        Preset::ConditionShift => condition_shift(&b),
        Preset::NovelPose => novel_pose(&b),
        Preset::MultiScene => multi_scene(&b),
    }
}

/// One scene; training at condition 0, inference scans arriving at
/// progressively shifted conditions over the same region.
fn condition_shift(b: &Builder) -> Result<Benchmark> {
    let cfg = b.cfg;
    if cfg.inference_conditions.is_empty() {
        return Err(Error::invalid("condition_shift needs at least one inference condition"));
    }
    let scene = make_scene("scene0", seed::derive(cfg.seed, "scene/scene0"), &b.params)?;
    let full = b.full_box();

    let mut initial_training = vec![];
    for i in 0..cfg.train_scans_per_scene {
        let id = format!("scene0-train{i}");
        initial_training.push(b.scan(&scene, &id, full, 0.0, ScanRole::Train)?);
    }
    let mut events = vec![];
    for (i, &c) in cfg.inference_conditions.iter().enumerate() {
        let id = format!("scene0-infer{i}");
        let scan = b.scan(&scene, &id, full, c, ScanRole::Inference)?;
        events.push(RoundEvent::NewInferenceScan { scan });
    }
    Ok(Benchmark { scenes: vec![scene], initial_training, events })
}

/// One scene at a fixed condition; inference scans explore a region of the
/// workspace disjoint from the training region.
fn novel_pose(b: &Builder) -> Result<Benchmark> {
    let cfg = b.cfg;
    let scene = make_scene("scene0", seed::derive(cfg.seed, "scene/scene0"), &b.params)?;
    let train_box = b.half_box(false);
    let infer_box = b.half_box(true);

    let mut initial_training = vec![];
    for i in 0..cfg.train_scans_per_scene {
        let id = format!("scene0-train{i}");
        initial_training.push(b.scan(&scene, &id, train_box, 0.0, ScanRole::Train)?);
    }
    let mut events = vec![];
    for i in 0..cfg.inference_scans_per_scene {
        let id = format!("scene0-infer{i}");
        let scan = b.scan(&scene, &id, infer_box, 0.0, ScanRole::Inference)?;
        events.push(RoundEvent::NewInferenceScan { scan });
    }
    Ok(Benchmark { scenes: vec![scene], initial_training, events })
}

/// Several scenes with disjoint train/inference regions; later scenes come
/// online mid-run through training events, interleaved with inference
/// arrivals from every scene already deployed.
fn multi_scene(b: &Builder) -> Result<Benchmark> {
    let cfg = b.cfg;
    if cfg.initial_scenes == 0 {
        return Err(Error::invalid("multi_scene needs at least one initial scene"));
    }
    let n_scenes = cfg.initial_scenes + cfg.added_scenes;
    let mut scenes = vec![];
    for s in 0..n_scenes {
        let id = format!("scene{s}");
        scenes.push(make_scene(&id, seed::derive(cfg.seed, &format!("scene/{id}")), &b.params)?);
    }
    let train_box = b.half_box(false);
    let infer_box = b.half_box(true);

    let train_scans = |scene: &SceneSpec| -> Result<Vec<Scan>> {
        (0..cfg.train_scans_per_scene)
            .map(|i| {
                let id = format!("{}-train{i}", scene.scene_id);
                b.scan(scene, &id, train_box, 0.0, ScanRole::Train)
            })
            .collect()
    };

    let mut initial_training = vec![];
    for scene in &scenes[..cfg.initial_scenes] {
        initial_training.extend(train_scans(scene)?);
    }

    // One inference scan per scene per wave, round-robin, with the first
    // arrival up front and scene-training events right after it so new
    // scenes come online before their own inference traffic.
    let mut queue: Vec<Scan> = vec![];
    for wave in 0..cfg.inference_scans_per_scene {
        for scene in &scenes {
            let id = format!("{}-infer{wave}", scene.scene_id);
            queue.push(b.scan(scene, &id, infer_box, 0.0, ScanRole::Inference)?);
        }
    }

    let mut events = vec![];
    let mut queue = queue.into_iter();
    if let Some(first) = queue.next() {
        events.push(RoundEvent::NewInferenceScan { scan: first });
    }
    for scene in &scenes[cfg.initial_scenes..] {
        events.push(RoundEvent::NewSceneTraining {
            scene_id: scene.scene_id.clone(),
            scans: train_scans(scene)?,
        });
    }
    for scan in queue {
        events.push(RoundEvent::NewInferenceScan { scan });
    }
    Ok(Benchmark { scenes, initial_training, events })
}
