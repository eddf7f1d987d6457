//! The round loop: feed a benchmark's arrival stream through an update
//! strategy and account for every gradient step spent.
//!
//! All strategies share the same skeleton. Round 0 trains the initial
//! deployment on the labeled scans at full budget density. Every
//! subsequent round is one arrival event: the strategy labels it (if it
//! has a teacher), decides its training pool, receives an iteration grant,
//! and spends exactly that grant. The rng streams are derived per purpose
//! and per round, so two runs with one seed are bit-identical and
//! strategies sharing a teacher see identical pseudo labels.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::condo::budget::{round_iterations, BudgetLedger};
use crate::condo::replay::{Capacity, ReplayBuffer};
use crate::condo::strategy::Strategy;
use crate::error::{Error, Result};
use crate::geometry::{orientation_error_deg, position_error};
use crate::model::{
    add_head, batch_step, forward, init_model, AdamHyper, AdamState, AprModel, FrameRef,
    LabelSource, ModelConfig, TrainItem, POSE_DIM,
};
use crate::seed;
use crate::stats::median;
use crate::teachers::{make_teacher, TeacherConfig, TeacherLabel};
use crate::world::{Benchmark, RoundEvent, Scan};

fn d_seed() -> u64 { 0 }
fn d_batch() -> usize { 64 }
fn d_b() -> f64 { 96.0 }
fn d_capacity() -> Capacity { Capacity::Unlimited }
fn d_true() -> bool { true }

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunParams {
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub adam: AdamHyper,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    /// Budget density: gradient-sample visits granted per revealed frame.
    #[serde(default = "d_b")]
    pub b: f64,
    #[serde(default = "d_capacity")]
    pub replay_capacity: Capacity,
    /// Route labeled items through the reservoir too, instead of keeping
    /// them as a separate always-available pool.
    #[serde(default)]
    pub include_labeled_in_replay: bool,
    /// Snapshot the model after every round for per-round evaluation.
    #[serde(default = "d_true")]
    pub keep_round_models: bool,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            seed: 0,
            model: ModelConfig::default(),
            adam: AdamHyper::default(),
            batch_size: 64,
            b: 96.0,
            replay_capacity: Capacity::Unlimited,
            include_labeled_in_replay: false,
            keep_round_models: true,
        }
    }
}

impl RunParams {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !self.b.is_finite() || self.b <= 0.0 {
            return Err(Error::invalid("budget density b must be positive"));
        }
        if self.model.hidden.is_empty() || self.model.hidden.contains(&0) {
            return Err(Error::invalid("model hidden widths must be positive"));
        }
        Ok(())
    }
}

/// The deployed estimator a run produces: one shared multi-head model, or
/// one isolated model per scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrainedModel {
    Shared { model: Box<AprModel> },
    PerScene { models: BTreeMap<String, AprModel> },
}

impl TrainedModel {
    /// Raw 7-vector head output; the quaternion part is unnormalized.
    pub fn raw_output(&self, scene_id: &str, features: &[f64]) -> Result<[f64; POSE_DIM]> {
        match self {
            TrainedModel::Shared { model } => forward(model, scene_id, features),
            TrainedModel::PerScene { models } => {
                let m = models
                    .get(scene_id)
                    .ok_or_else(|| Error::UnknownScene(scene_id.to_string()))?;
                forward(m, scene_id, features)
            }
        }
    }

    pub fn scene_ids(&self) -> Vec<&str> {
        match self {
            TrainedModel::Shared { model } => model.heads.keys().map(String::as_str).collect(),
            TrainedModel::PerScene { models } => models.keys().map(String::as_str).collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round_id: usize,
    pub event_kind: String,
    pub scan_id: String,
    pub n_new_visible: usize,
    pub granted_iters: u64,
    pub used_iters: u64,
    pub teacher_median_pos_err_m: Option<f64>,
    pub teacher_median_rot_err_deg: Option<f64>,
    /// Wallclock is reporting-only; it never enters deterministic artifacts.
    pub wallclock_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RoundModel {
    pub round_id: usize,
    pub model: TrainedModel,
}

/// Which frames of which scans ever appeared in a training batch. The
/// holdout isolation proof reads this after a run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditLog {
    trained: BTreeMap<String, Vec<bool>>,
}

impl AuditLog {
    fn register_scan(&mut self, scan: &Scan) {
        self.trained
            .entry(scan.scan_id.clone())
            .or_insert_with(|| vec![false; scan.n_frames()]);
    }

    fn mark(&mut self, frame: &FrameRef) {
        let flags = self
            .trained
            .get_mut(&frame.scan_id)
            .unwrap_or_else(|| panic!("unregistered scan {} in training batch", frame.scan_id));
        flags[frame.frame_index] = true;
    }

    pub fn trained_frames(&self, scan_id: &str) -> Option<&[bool]> {
        self.trained.get(scan_id).map(Vec::as_slice)
    }

    /// Held-out frames that were trained on. Must always be empty.
    pub fn holdout_violations(&self, bench: &Benchmark) -> Vec<(String, usize)> {
        let mut bad = vec![];
        for scan in bench.all_scans() {
            if let Some(flags) = self.trained_frames(&scan.scan_id) {
                for i in scan.heldout_indices() {
                    if flags[i] {
                        bad.push((scan.scan_id.clone(), i));
                    }
                }
            }
        }
        bad
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub strategy_label: String,
    pub final_model: TrainedModel,
    pub rounds: Vec<RoundRecord>,
    pub round_models: Vec<RoundModel>,
    pub ledger: BudgetLedger,
    pub audit: AuditLog,
    /// Pseudo labels per scan id, exactly as used for training.
    pub teacher_labels: BTreeMap<String, Vec<TeacherLabel>>,
}

fn items_from_scan(scan: &Scan, source: LabelSource) -> Vec<TrainItem> {
    scan.visible_indices()
        .map(|i| TrainItem {
            scene_id: scan.scene_id.clone(),
            frame: FrameRef { scan_id: scan.scan_id.clone(), frame_index: i },
            obs: scan.frames[i].obs.clone(),
            target: scan.frames[i].pose.clone(),
            source,
        })
        .collect()
}

fn items_from_labels(scan: &Scan, labels: &[TeacherLabel]) -> Vec<TrainItem> {
    labels
        .iter()
        .map(|l| TrainItem {
            scene_id: scan.scene_id.clone(),
            frame: FrameRef { scan_id: scan.scan_id.clone(), frame_index: l.frame_index },
            obs: scan.frames[l.frame_index].obs.clone(),
            target: l.pose.clone(),
            source: LabelSource::Distilled,
        })
        .collect()
}

fn teacher_quality(scan: &Scan, labels: &[TeacherLabel]) -> (Option<f64>, Option<f64>) {
    let mut pos = vec![];
    let mut rot = vec![];
    for l in labels {
        let gt = &scan.frames[l.frame_index].pose;
        pos.push(position_error(&l.pose.position, &gt.position));
        rot.push(
            orientation_error_deg(&l.pose.orientation, &gt.orientation)
                .expect("teacher and ground-truth orientations are unit quaternions"),
        );
    }
    (median(&pos), median(&rot))
}

/// Draw a batch uniformly with replacement from the concatenation of two
/// pools.
fn sample_batch<'p>(
    pool_a: &'p [TrainItem],
    pool_b: &'p [TrainItem],
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<&'p TrainItem> {
    let total = pool_a.len() + pool_b.len();
    (0..batch)
        .map(|_| {
            let i = rng.random_range(0..total);
            if i < pool_a.len() { &pool_a[i] } else { &pool_b[i - pool_a.len()] }
        })
        .collect()
}

/// Spend exactly `grant` iterations of batched updates drawn from the two
/// pools, marking every sampled frame in the audit log.
#[allow(clippy::too_many_arguments)]
fn run_training(
    model: &mut AprModel,
    adam: &mut AdamState,
    ledger: &mut BudgetLedger,
    audit: &mut AuditLog,
    round_id: usize,
    grant: u64,
    pool_a: &[TrainItem],
    pool_b: &[TrainItem],
    batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<u64> {
    if grant == 0 {
        return Ok(0);
    }
    if pool_a.is_empty() && pool_b.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for _ in 0..grant {
        let refs = sample_batch(pool_a, pool_b, batch, rng);
        for r in &refs {
            audit.mark(&r.frame);
        }
        batch_step(model, adam, &refs)?;
        ledger.record_use(round_id, 1)?;
    }
    Ok(grant)
}

pub fn run_strategy(bench: &Benchmark, strategy: &Strategy, params: &RunParams) -> Result<RunOutput> {
    params.validate()?;
    strategy.validate()?;
    if bench.initial_training.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for scene in &bench.scenes {
        if scene.feature_dim != params.model.input_dim {
            return Err(Error::invalid(format!(
                "scene {} renders {} features but the model expects {}",
                scene.scene_id, scene.feature_dim, params.model.input_dim
            )));
        }
    }
    match strategy {
        Strategy::StandAlonePerScene { teacher, budget_rate } => {
            run_standalone(bench, strategy, params, teacher, *budget_rate)
        }
        _ => run_shared(bench, strategy, params),
    }
}

/// Driver for every strategy that maintains one shared model.
fn run_shared(bench: &Benchmark, strategy: &Strategy, params: &RunParams) -> Result<RunOutput> {
    let seed = params.seed;
    let mut audit = AuditLog::default();
    for scan in bench.all_scans() {
        audit.register_scan(scan);
    }

    // Ground-truth labeled pool S, and per-scene labeled scans for
    // teachers that need reference data.
    let mut labeled_items: Vec<TrainItem> = vec![];
    let mut labeled_scans: BTreeMap<String, Vec<&Scan>> = BTreeMap::new();
    for scan in &bench.initial_training {
        labeled_items.extend(items_from_scan(scan, LabelSource::Supervised));
        labeled_scans.entry(scan.scene_id.clone()).or_default().push(scan);
    }

    // Cumulative pools for the retrain strategies.
    let mut gt_items_all = labeled_items.clone();
    let mut distilled_items_all: Vec<TrainItem> = vec![];
    let mut total_visible = labeled_items.len();

    let mut revealed_scenes: Vec<String> = bench.initial_scene_ids();
    let head_scenes: Vec<&str> = match strategy {
        // A frozen model still gets evaluated on scenes that appear later;
        // give it untrained heads for them up front.
        Strategy::TrainOnly => bench.scenes.iter().map(|s| s.scene_id.as_str()).collect(),
        _ => revealed_scenes.iter().map(String::as_str).collect(),
    };
    let mut model = init_model(&params.model, &head_scenes, seed::derive(seed, "init"))?;
    let mut adam = AdamState::new(&model, params.adam);

    let mut replay = ReplayBuffer::new(params.replay_capacity);
    let mut replay_rng = seed::stream(seed, "replay");
    let mut ledger = BudgetLedger::new();
    let mut rounds: Vec<RoundRecord> = vec![];
    let mut round_models: Vec<RoundModel> = vec![];
    let mut teacher_labels: BTreeMap<String, Vec<TeacherLabel>> = BTreeMap::new();

    // Round 0: initial deployment at full density.
    {
        let t0 = Instant::now();
        if params.include_labeled_in_replay {
            for it in labeled_items.drain(..) {
                replay.insert(it, &mut replay_rng);
            }
        }
        let grant = round_iterations(total_visible, params.b, params.batch_size)?;
        ledger.open_round(0, grant)?;
        let mut rng = seed::stream(seed, "round/0/sample");
        let used = run_training(
            &mut model,
            &mut adam,
            &mut ledger,
            &mut audit,
            0,
            grant,
            &labeled_items,
            replay.items(),
            params.batch_size,
            &mut rng,
        )?;
        rounds.push(RoundRecord {
            round_id: 0,
            event_kind: "initial_training".into(),
            scan_id: "initial".into(),
            n_new_visible: total_visible,
            granted_iters: grant,
            used_iters: used,
            teacher_median_pos_err_m: None,
            teacher_median_rot_err_deg: None,
            wallclock_s: t0.elapsed().as_secs_f64(),
        });
        if params.keep_round_models {
            round_models.push(RoundModel {
                round_id: 0,
                model: TrainedModel::Shared { model: Box::new(model.clone()) },
            });
        }
    }

    for (k, event) in bench.events.iter().enumerate() {
        let round_id = k + 1;
        let t0 = Instant::now();
        let mut medians = (None, None);
        let n_new_visible;
        let grant;
        let used;

        match event {
            RoundEvent::NewInferenceScan { scan } => {
                n_new_visible = scan.n_visible();

                // Label once at arrival; the stream depends only on the
                // run seed and scan id, so every strategy with the same
                // teacher sees the same labels.
                if let Some(tc) = strategy.teacher() {
                    let scene = bench.scene(&scan.scene_id)?;
                    let refs: Vec<&Scan> =
                        labeled_scans.get(&scan.scene_id).cloned().unwrap_or_default();
                    let teacher = make_teacher(tc, scene, &refs)?;
                    let mut trng = seed::stream(seed, &format!("teacher/{}", scan.scan_id));
                    let labels = teacher.label_scan(scan, &mut trng)?;
                    medians = teacher_quality(scan, &labels);
                    teacher_labels.insert(scan.scan_id.clone(), labels);
                }

                match strategy {
                    Strategy::TrainOnly => {
                        grant = 0;
                        ledger.open_round(round_id, 0)?;
                        used = 0;
                    }
                    Strategy::Condo { budget_rate, .. } => {
                        let labels = &teacher_labels[&scan.scan_id];
                        for it in items_from_labels(scan, labels) {
                            replay.insert(it, &mut replay_rng);
                        }
                        grant = round_iterations(
                            n_new_visible,
                            params.b * budget_rate,
                            params.batch_size,
                        )?;
                        ledger.open_round(round_id, grant)?;
                        let mut rng = seed::stream(seed, &format!("round/{round_id}/sample"));
                        used = run_training(
                            &mut model,
                            &mut adam,
                            &mut ledger,
                            &mut audit,
                            round_id,
                            grant,
                            &labeled_items,
                            replay.items(),
                            params.batch_size,
                            &mut rng,
                        )?;
                    }
                    Strategy::RetrainGt { rate } => {
                        gt_items_all.extend(items_from_scan(scan, LabelSource::Supervised));
                        total_visible += n_new_visible;
                        grant = scaled_grant(total_visible, params, rate.multiplier())?;
                        ledger.open_round(round_id, grant)?;
                        let (m, a, u) = retrain(
                            bench,
                            params,
                            &revealed_scenes,
                            round_id,
                            grant,
                            &gt_items_all,
                            &mut ledger,
                            &mut audit,
                        )?;
                        model = m;
                        adam = a;
                        used = u;
                    }
                    Strategy::RetrainTeacher { rate, .. } => {
                        let labels = &teacher_labels[&scan.scan_id];
                        distilled_items_all.extend(items_from_labels(scan, labels));
                        total_visible += n_new_visible;
                        grant = scaled_grant(total_visible, params, rate.multiplier())?;
                        ledger.open_round(round_id, grant)?;
                        let pool: Vec<TrainItem> = labeled_items
                            .iter()
                            .chain(distilled_items_all.iter())
                            .cloned()
                            .collect();
                        let (m, a, u) = retrain(
                            bench,
                            params,
                            &revealed_scenes,
                            round_id,
                            grant,
                            &pool,
                            &mut ledger,
                            &mut audit,
                        )?;
                        model = m;
                        adam = a;
                        used = u;
                    }
                    Strategy::StandAlonePerScene { .. } => unreachable!("handled separately"),
                }
                if !matches!(strategy, Strategy::RetrainGt { .. } | Strategy::RetrainTeacher { .. })
                {
                    total_visible += n_new_visible;
                }
            }
            RoundEvent::NewSceneTraining { scene_id, scans } => {
                let new_items: Vec<TrainItem> = scans
                    .iter()
                    .flat_map(|s| items_from_scan(s, LabelSource::Supervised))
                    .collect();
                n_new_visible = new_items.len();
                for scan in scans {
                    labeled_scans.entry(scan.scene_id.clone()).or_default().push(scan);
                }
                revealed_scenes.push(scene_id.clone());
                gt_items_all.extend(new_items.iter().cloned());
                total_visible += n_new_visible;

                match strategy {
                    Strategy::TrainOnly => {
                        grant = 0;
                        ledger.open_round(round_id, 0)?;
                        used = 0;
                    }
                    Strategy::Condo { .. } => {
                        add_head(&mut model, scene_id)?;
                        if params.include_labeled_in_replay {
                            for it in new_items {
                                replay.insert(it, &mut replay_rng);
                            }
                        } else {
                            labeled_items.extend(new_items);
                        }
                        // Labeled scene deployment runs at full density,
                        // like round 0; the rate only throttles unlabeled
                        // update rounds.
                        grant = round_iterations(n_new_visible, params.b, params.batch_size)?;
                        ledger.open_round(round_id, grant)?;
                        let mut rng = seed::stream(seed, &format!("round/{round_id}/sample"));
                        used = run_training(
                            &mut model,
                            &mut adam,
                            &mut ledger,
                            &mut audit,
                            round_id,
                            grant,
                            &labeled_items,
                            replay.items(),
                            params.batch_size,
                            &mut rng,
                        )?;
                    }
                    Strategy::RetrainGt { rate } | Strategy::RetrainTeacher { rate, .. } => {
                        if !params.include_labeled_in_replay {
                            labeled_items.extend(new_items);
                        }
                        grant = scaled_grant(total_visible, params, rate.multiplier())?;
                        ledger.open_round(round_id, grant)?;
                        let pool: Vec<TrainItem> = if matches!(strategy, Strategy::RetrainGt { .. })
                        {
                            gt_items_all.clone()
                        } else {
                            labeled_items
                                .iter()
                                .chain(distilled_items_all.iter())
                                .cloned()
                                .collect()
                        };
                        let (m, a, u) = retrain(
                            bench,
                            params,
                            &revealed_scenes,
                            round_id,
                            grant,
                            &pool,
                            &mut ledger,
                            &mut audit,
                        )?;
                        model = m;
                        adam = a;
                        used = u;
                    }
                    Strategy::StandAlonePerScene { .. } => unreachable!("handled separately"),
                }
            }
        }

        rounds.push(RoundRecord {
            round_id,
            event_kind: event.kind_label().into(),
            scan_id: event.label_id(),
            n_new_visible,
            granted_iters: grant,
            used_iters: used,
            teacher_median_pos_err_m: medians.0,
            teacher_median_rot_err_deg: medians.1,
            wallclock_s: t0.elapsed().as_secs_f64(),
        });
        if params.keep_round_models {
            round_models.push(RoundModel {
                round_id,
                model: TrainedModel::Shared { model: Box::new(model.clone()) },
            });
        }
    }

    Ok(RunOutput {
        strategy_label: strategy.label(),
        final_model: TrainedModel::Shared { model: Box::new(model) },
        rounds,
        round_models,
        ledger,
        audit,
        teacher_labels,
    })
}

/// Grant for a from-scratch retrain covering `total_visible` frames.
fn scaled_grant(total_visible: usize, params: &RunParams, multiplier: f64) -> Result<u64> {
    let base = round_iterations(total_visible, params.b, params.batch_size)?;
    Ok((base as f64 * multiplier).ceil() as u64)
}

/// Fresh model trained from scratch on the given pool. Heads cover every
/// revealed scene; the init stream is salted by round so successive
/// retrains do not share weights.
#[allow(clippy::too_many_arguments)]
fn retrain(
    bench: &Benchmark,
    params: &RunParams,
    revealed_scenes: &[String],
    round_id: usize,
    grant: u64,
    pool: &[TrainItem],
    ledger: &mut BudgetLedger,
    audit: &mut AuditLog,
) -> Result<(AprModel, AdamState, u64)> {
    debug_assert!(revealed_scenes.iter().all(|s| bench.scene(s).is_ok()));
    let scene_refs: Vec<&str> = revealed_scenes.iter().map(String::as_str).collect();
    let mut model = init_model(
        &params.model,
        &scene_refs,
        seed::derive(params.seed, &format!("retrain/{round_id}/init")),
    )?;
    let mut adam = AdamState::new(&model, params.adam);
    let mut rng = seed::stream(params.seed, &format!("round/{round_id}/sample"));
    let used = run_training(
        &mut model,
        &mut adam,
        ledger,
        audit,
        round_id,
        grant,
        pool,
        &[],
        params.batch_size,
        &mut rng,
    )?;
    Ok((model, adam, used))
}

/// One isolated model per scene, each continually updated on its own
/// traffic only.
fn run_standalone(
    bench: &Benchmark,
    strategy: &Strategy,
    params: &RunParams,
    teacher_cfg: &TeacherConfig,
    budget_rate: f64,
) -> Result<RunOutput> {
    let seed = params.seed;
    let mut audit = AuditLog::default();
    for scan in bench.all_scans() {
        audit.register_scan(scan);
    }

    struct SceneState {
        model: AprModel,
        adam: AdamState,
        labeled: Vec<TrainItem>,
        replay: ReplayBuffer,
        replay_rng: ChaCha8Rng,
    }

    let mut scenes: BTreeMap<String, SceneState> = BTreeMap::new();
    let mut labeled_scans: BTreeMap<String, Vec<&Scan>> = BTreeMap::new();
    let mut ledger = BudgetLedger::new();
    let mut rounds: Vec<RoundRecord> = vec![];
    let mut round_models: Vec<RoundModel> = vec![];
    let mut teacher_labels: BTreeMap<String, Vec<TeacherLabel>> = BTreeMap::new();

    let new_scene_state = |scene_id: &str, params: &RunParams| -> Result<SceneState> {
        let model = init_model(
            &params.model,
            &[scene_id],
            seed::derive(seed, &format!("init/{scene_id}")),
        )?;
        let adam = AdamState::new(&model, params.adam);
        Ok(SceneState {
            model,
            adam,
            labeled: vec![],
            replay: ReplayBuffer::new(params.replay_capacity),
            replay_rng: seed::stream(seed, &format!("replay/{scene_id}")),
        })
    };

    let snapshot = |scenes: &BTreeMap<String, SceneState>| TrainedModel::PerScene {
        models: scenes.iter().map(|(k, v)| (k.clone(), v.model.clone())).collect(),
    };

    // Round 0: every initial scene trains its own model on its own scans.
    {
        let t0 = Instant::now();
        for scan in &bench.initial_training {
            labeled_scans.entry(scan.scene_id.clone()).or_default().push(scan);
        }
        let mut n_total = 0;
        let mut grant_total = 0;
        for scene_id in bench.initial_scene_ids() {
            let mut st = new_scene_state(&scene_id, params)?;
            for scan in &labeled_scans[&scene_id] {
                let items = items_from_scan(scan, LabelSource::Supervised);
                if params.include_labeled_in_replay {
                    for it in items {
                        st.replay.insert(it, &mut st.replay_rng);
                    }
                } else {
                    st.labeled.extend(items);
                }
            }
            let n = st.labeled.len() + st.replay.len();
            n_total += n;
            grant_total += round_iterations(n, params.b, params.batch_size)?;
            scenes.insert(scene_id, st);
        }
        ledger.open_round(0, grant_total)?;
        let mut used_total = 0;
        for (scene_id, st) in scenes.iter_mut() {
            let n = st.labeled.len() + st.replay.len();
            let grant = round_iterations(n, params.b, params.batch_size)?;
            let mut rng = seed::stream(seed, &format!("round/0/sample/{scene_id}"));
            used_total += run_training(
                &mut st.model,
                &mut st.adam,
                &mut ledger,
                &mut audit,
                0,
                grant,
                &st.labeled,
                st.replay.items(),
                params.batch_size,
                &mut rng,
            )?;
        }
        rounds.push(RoundRecord {
            round_id: 0,
            event_kind: "initial_training".into(),
            scan_id: "initial".into(),
            n_new_visible: n_total,
            granted_iters: grant_total,
            used_iters: used_total,
            teacher_median_pos_err_m: None,
            teacher_median_rot_err_deg: None,
            wallclock_s: t0.elapsed().as_secs_f64(),
        });
        if params.keep_round_models {
            round_models.push(RoundModel { round_id: 0, model: snapshot(&scenes) });
        }
    }

    for (k, event) in bench.events.iter().enumerate() {
        let round_id = k + 1;
        let t0 = Instant::now();
        let mut medians = (None, None);
        let n_new_visible;
        let grant;
        let used;

        match event {
            RoundEvent::NewInferenceScan { scan } => {
                n_new_visible = scan.n_visible();
                let scene = bench.scene(&scan.scene_id)?;
                let refs: Vec<&Scan> =
                    labeled_scans.get(&scan.scene_id).cloned().unwrap_or_default();
                let teacher = make_teacher(teacher_cfg, scene, &refs)?;
                let mut trng = seed::stream(seed, &format!("teacher/{}", scan.scan_id));
                let labels = teacher.label_scan(scan, &mut trng)?;
                medians = teacher_quality(scan, &labels);

                let st = scenes
                    .get_mut(&scan.scene_id)
                    .ok_or_else(|| Error::UnknownScene(scan.scene_id.clone()))?;
                for it in items_from_labels(scan, &labels) {
                    st.replay.insert(it, &mut st.replay_rng);
                }
                teacher_labels.insert(scan.scan_id.clone(), labels);

                grant =
                    round_iterations(n_new_visible, params.b * budget_rate, params.batch_size)?;
                ledger.open_round(round_id, grant)?;
                let mut rng = seed::stream(seed, &format!("round/{round_id}/sample"));
                used = run_training(
                    &mut st.model,
                    &mut st.adam,
                    &mut ledger,
                    &mut audit,
                    round_id,
                    grant,
                    &st.labeled,
                    st.replay.items(),
                    params.batch_size,
                    &mut rng,
                )?;
            }
            RoundEvent::NewSceneTraining { scene_id, scans } => {
                let mut st = new_scene_state(scene_id, params)?;
                let mut n = 0;
                for scan in scans {
                    labeled_scans.entry(scan.scene_id.clone()).or_default().push(scan);
                    let items = items_from_scan(scan, LabelSource::Supervised);
                    n += items.len();
                    if params.include_labeled_in_replay {
                        for it in items {
                            st.replay.insert(it, &mut st.replay_rng);
                        }
                    } else {
                        st.labeled.extend(items);
                    }
                }
                n_new_visible = n;
                grant = round_iterations(n_new_visible, params.b, params.batch_size)?;
                ledger.open_round(round_id, grant)?;
                let mut rng = seed::stream(seed, &format!("round/{round_id}/sample"));
                used = run_training(
                    &mut st.model,
                    &mut st.adam,
                    &mut ledger,
                    &mut audit,
                    round_id,
                    grant,
                    &st.labeled,
                    st.replay.items(),
                    params.batch_size,
                    &mut rng,
                )?;
                scenes.insert(scene_id.clone(), st);
            }
        }

        rounds.push(RoundRecord {
            round_id,
            event_kind: event.kind_label().into(),
            scan_id: event.label_id(),
            n_new_visible,
            granted_iters: grant,
            used_iters: used,
            teacher_median_pos_err_m: medians.0,
            teacher_median_rot_err_deg: medians.1,
            wallclock_s: t0.elapsed().as_secs_f64(),
        });
        if params.keep_round_models {
            round_models.push(RoundModel { round_id, model: snapshot(&scenes) });
        }
    }

    Ok(RunOutput {
        strategy_label: strategy.label(),
        final_model: snapshot(&scenes),
        rounds,
        round_models,
        ledger,
        audit,
        teacher_labels,
    })
}
