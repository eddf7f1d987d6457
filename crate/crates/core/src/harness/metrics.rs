//! Held-out evaluation: per-frame errors, per-scan medians, and pooled
//! group aggregates. Everything downstream (summary tables, sweeps) is
//! recomputable from the per-frame dump.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::condo::TrainedModel;
use crate::error::Result;
use crate::geometry::{
    orientation_error_deg, position_error, quat_normalize, Pose, QUAT_IDENTITY,
};
use crate::stats::median;
use crate::world::{Benchmark, ScanRole};

/// Which held-out pool a frame belongs to, following its scan's role.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    TrainHeldout,
    InferenceHeldout,
}

impl Group {
    pub fn label(&self) -> &'static str {
        match self {
            Group::TrainHeldout => "train_heldout",
            Group::InferenceHeldout => "inference_heldout",
        }
    }

    fn of_role(role: ScanRole) -> Group {
        match role {
            ScanRole::Train => Group::TrainHeldout,
            ScanRole::Inference => Group::InferenceHeldout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub scan_id: String,
    pub frame_index: usize,
    pub group: Group,
    pub pos_err_m: f64,
    pub rot_err_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanMetrics {
    pub scan_id: String,
    pub group: Group,
    pub n_frames: usize,
    pub median_pos_err_m: f64,
    pub mean_pos_err_m: f64,
    pub median_rot_err_deg: f64,
    pub mean_rot_err_deg: f64,
}

/// Pooled over every held-out frame of the group, not averaged per scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub group: Group,
    pub n_frames: usize,
    pub median_pos_err_m: f64,
    pub mean_pos_err_m: f64,
    pub median_rot_err_deg: f64,
    pub mean_rot_err_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_scan: Vec<ScanMetrics>,
    pub groups: Vec<GroupMetrics>,
}

impl MetricsReport {
    pub fn group(&self, g: Group) -> Option<&GroupMetrics> {
        self.groups.iter().find(|m| m.group == g)
    }
}

/// Anything that maps (scene, features) to a pose estimate. Closures work
/// directly, so oracle stubs in tests need no wrapper type.
pub trait PoseEstimator {
    fn estimate(&self, scene_id: &str, features: &[f64]) -> Result<Pose>;

    /// Whether the estimator can place frames of this scene at all. Scans
    /// of uncovered scenes are skipped, so a mid-run checkpoint taken
    /// before a scene existed still evaluates cleanly.
    fn covers(&self, _scene_id: &str) -> bool {
        true
    }
}

impl<F> PoseEstimator for F
where
    F: Fn(&str, &[f64]) -> Result<Pose>,
{
    fn estimate(&self, scene_id: &str, features: &[f64]) -> Result<Pose> {
        self(scene_id, features)
    }
}

impl PoseEstimator for TrainedModel {
    fn estimate(&self, scene_id: &str, features: &[f64]) -> Result<Pose> {
        let out = self.raw_output(scene_id, features)?;
        let position = [out[0], out[1], out[2]];
        // The head emits an unconstrained 4-vector; a degenerate one falls
        // back to the identity rotation rather than failing the whole
        // evaluation.
        let orientation =
            quat_normalize(&[out[3], out[4], out[5], out[6]]).unwrap_or(QUAT_IDENTITY);
        Ok(Pose { position, orientation })
    }

    fn covers(&self, scene_id: &str) -> bool {
        match self {
            TrainedModel::Shared { model } => model.heads.contains_key(scene_id),
            TrainedModel::PerScene { models } => models.contains_key(scene_id),
        }
    }
}

/// Errors on every held-out frame of every scan, in benchmark order.
pub fn evaluate_frames<E: PoseEstimator>(est: &E, bench: &Benchmark) -> Result<Vec<FrameError>> {
    let mut out = vec![];
    for scan in bench.all_scans() {
        if !est.covers(&scan.scene_id) {
            continue;
        }
        let group = Group::of_role(scan.role);
        for i in scan.heldout_indices() {
            let frame = &scan.frames[i];
            let pred = est.estimate(&scan.scene_id, &frame.obs.features)?;
            out.push(FrameError {
                scan_id: scan.scan_id.clone(),
                frame_index: i,
                group,
                pos_err_m: position_error(&pred.position, &frame.pose.position),
                rot_err_deg: orientation_error_deg(&pred.orientation, &frame.pose.orientation)?,
            });
        }
    }
    Ok(out)
}

fn summarize(pos: &[f64], rot: &[f64]) -> (f64, f64, f64, f64) {
    let n = pos.len() as f64;
    (
        median(pos).expect("non-empty held-out pool"),
        pos.iter().sum::<f64>() / n,
        median(rot).expect("non-empty held-out pool"),
        rot.iter().sum::<f64>() / n,
    )
}

/// Aggregate a frame dump into per-scan and pooled group metrics. Scans
/// appear in first-seen order; groups in enum order.
pub fn report_from_frames(frames: &[FrameError]) -> MetricsReport {
    let mut scan_order: Vec<&str> = vec![];
    let mut by_scan: BTreeMap<&str, (Group, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut by_group: BTreeMap<Group, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for f in frames {
        if !by_scan.contains_key(f.scan_id.as_str()) {
            scan_order.push(&f.scan_id);
        }
        let s = by_scan.entry(&f.scan_id).or_insert_with(|| (f.group, vec![], vec![]));
        s.1.push(f.pos_err_m);
        s.2.push(f.rot_err_deg);
        let g = by_group.entry(f.group).or_default();
        g.0.push(f.pos_err_m);
        g.1.push(f.rot_err_deg);
    }

    let per_scan = scan_order
        .iter()
        .map(|id| {
            let (group, pos, rot) = &by_scan[id];
            let (mp, ap, mr, ar) = summarize(pos, rot);
            ScanMetrics {
                scan_id: id.to_string(),
                group: *group,
                n_frames: pos.len(),
                median_pos_err_m: mp,
                mean_pos_err_m: ap,
                median_rot_err_deg: mr,
                mean_rot_err_deg: ar,
            }
        })
        .collect();
    let groups = by_group
        .iter()
        .map(|(group, (pos, rot))| {
            let (mp, ap, mr, ar) = summarize(pos, rot);
            GroupMetrics {
                group: *group,
                n_frames: pos.len(),
                median_pos_err_m: mp,
                mean_pos_err_m: ap,
                median_rot_err_deg: mr,
                mean_rot_err_deg: ar,
            }
        })
        .collect();
    MetricsReport { per_scan, groups }
}

/// Full held-out evaluation: the report plus the frame dump it came from.
pub fn evaluate<E: PoseEstimator>(
    est: &E,
    bench: &Benchmark,
) -> Result<(MetricsReport, Vec<FrameError>)> {
    let frames = evaluate_frames(est, bench)?;
    Ok((report_from_frames(&frames), frames))
}
