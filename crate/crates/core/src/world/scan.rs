//! Scans: smooth trajectories of rendered frames, plus the held-out split.
//!
//! A scan walks a piecewise-linear waypoint path at constant arc length
//! while the orientation slerps between per-waypoint quaternions, so both
//! position and orientation vary smoothly frame to frame. Held-out frames
//! are whole contiguous segments, never single frames: evaluation segments
//! must not leak into training through their immediate neighbors.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{random_unit_quat, slerp, Pose, Quat};
use crate::seed;
use crate::world::scene::{render, Observation, SceneSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanRole {
    Train,
    Inference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub pose: Pose,
    pub obs: Observation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scan {
    pub scan_id: String,
    pub scene_id: String,
    pub condition: f64,
    pub role: ScanRole,
    pub frames: Vec<Frame>,
    /// `true` marks a held-out frame; same length as `frames`.
    pub holdout_mask: Vec<bool>,
}

impl Scan {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    /// Indices of frames visible to training and teachers.
    pub fn visible_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.holdout_mask.iter().enumerate().filter(|(_, &h)| !h).map(|(i, _)| i)
    }

    pub fn heldout_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.holdout_mask.iter().enumerate().filter(|(_, &h)| h).map(|(i, _)| i)
    }

    pub fn n_visible(&self) -> usize {
        self.holdout_mask.iter().filter(|&&h| !h).count()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryParams {
    pub n_frames: usize,
    pub n_waypoints: usize,
    /// Waypoints are drawn uniformly inside this box (must sit inside the
    /// scene workspace).
    pub waypoint_min: [f64; 3],
    pub waypoint_max: [f64; 3],
    /// Upper bound on the distance between consecutive frames.
    pub max_step: f64,
    pub seed: u64,
}

pub fn generate_scan(
    scene: &SceneSpec,
    scan_id: &str,
    params: &TrajectoryParams,
    condition: f64,
    role: ScanRole,
) -> Result<Scan> {
    if params.n_frames < 2 {
        return Err(Error::invalid("a scan needs at least 2 frames"));
    }
    if params.n_waypoints < 2 {
        return Err(Error::invalid("a trajectory needs at least 2 waypoints"));
    }
    if !(params.max_step > 0.0) {
        return Err(Error::invalid("max_step must be positive"));
    }
    for a in 0..3 {
        if params.waypoint_min[a] < scene.workspace_min[a]
            || params.waypoint_max[a] > scene.workspace_max[a]
            || params.waypoint_min[a] > params.waypoint_max[a]
        {
            return Err(Error::invalid("waypoint box must sit inside the workspace"));
        }
    }

    let mut traj_rng = seed::stream(params.seed, &format!("traj/{scan_id}"));
    let positions: Vec<[f64; 3]> = (0..params.n_waypoints)
        .map(|_| {
            std::array::from_fn(|a| {
                if params.waypoint_max[a] > params.waypoint_min[a] {
                    traj_rng.random_range(params.waypoint_min[a]..params.waypoint_max[a])
                } else {
                    params.waypoint_min[a]
                }
            })
        })
        .collect();
    // Keep consecutive waypoint quaternions in the same hemisphere so the
    // rendered quaternion track is continuous (no double-cover jumps).
    let mut quats: Vec<Quat> = Vec::with_capacity(params.n_waypoints);
    for i in 0..params.n_waypoints {
        let mut q = random_unit_quat(&mut traj_rng);
        if i > 0 {
            let prev = &quats[i - 1];
            if (0..4).map(|k| prev[k] * q[k]).sum::<f64>() < 0.0 {
                for c in &mut q {
                    *c = -*c;
                }
            }
        }
        quats.push(q);
    }

    // Arc-length parameterization: frame k sits at k * L / (n - 1) along
    // the polyline, so consecutive deltas are exactly L / (n - 1).
    let seg_len: Vec<f64> = positions
        .windows(2)
        .map(|w| (0..3).map(|a| (w[1][a] - w[0][a]).powi(2)).sum::<f64>().sqrt())
        .collect();
    let total: f64 = seg_len.iter().sum();
    let step = total / (params.n_frames - 1) as f64;
    if step > params.max_step {
        return Err(Error::invalid(format!(
            "trajectory step {step:.4} exceeds max_step {}; raise n_frames or shrink the path",
            params.max_step
        )));
    }

    let mut obs_rng = seed::stream(params.seed, &format!("obs/{scan_id}"));
    let mut frames = Vec::with_capacity(params.n_frames);
    for k in 0..params.n_frames {
        let s = step * k as f64;
        let (seg, frac) = locate(&seg_len, total, s);
        let p0 = &positions[seg];
        let p1 = &positions[seg + 1];
        let position: [f64; 3] = std::array::from_fn(|a| p0[a] + frac * (p1[a] - p0[a]));
        let orientation = slerp(&quats[seg], &quats[seg + 1], frac);
        let pose = Pose { position, orientation };
        let obs = render(scene, &pose, condition, &mut obs_rng)?;
        frames.push(Frame { pose, obs });
    }

    let n = frames.len();
    Ok(Scan {
        scan_id: scan_id.to_string(),
        scene_id: scene.scene_id.clone(),
        condition,
        role,
        frames,
        holdout_mask: vec![false; n],
    })
}

/// Map arc length `s` to (segment index, fraction within segment).
fn locate(seg_len: &[f64], total: f64, s: f64) -> (usize, f64) {
    if total <= 0.0 {
        return (0, 0.0);
    }
    let mut acc = 0.0;
    for (i, &l) in seg_len.iter().enumerate() {
        if s <= acc + l || i == seg_len.len() - 1 {
            let frac = if l > 0.0 { ((s - acc) / l).clamp(0.0, 1.0) } else { 0.0 };
            return (i, frac);
        }
        acc += l;
    }
    (seg_len.len() - 1, 1.0)
}

/// Mark `k = round(n * fraction / segment_len)` disjoint contiguous
/// segments of exactly `segment_len` frames as held out. Segment starts are
/// drawn uniformly over all non-overlapping placements.
pub fn split_holdout(
    scan: &Scan,
    fraction: f64,
    segment_len: usize,
    rng: &mut impl Rng,
) -> Result<Scan> {
    let n = scan.n_frames();
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid("holdout fraction must lie in [0, 1)"));
    }
    if segment_len == 0 {
        return Err(Error::invalid("segment_len must be positive"));
    }
    let k = (n as f64 * fraction / segment_len as f64).round() as usize;
    if k == 0 {
        return Err(Error::InfeasibleSplit(format!(
            "{n} frames at fraction {fraction} round to zero segments of {segment_len}"
        )));
    }
    if k * segment_len > n {
        return Err(Error::InfeasibleSplit(format!(
            "{k} segments of {segment_len} do not fit in {n} frames"
        )));
    }

    // Gap construction: draw k values in the compressed space where each
    // segment is a point, sort, then re-expand. Every non-overlapping
    // placement is reachable and starts come out sorted.
    let free = n - k * segment_len;
    let mut compressed: Vec<usize> = (0..k).map(|_| rng.random_range(0..=free)).collect();
    compressed.sort_unstable();
    let mut mask = vec![false; n];
    for (i, c) in compressed.iter().enumerate() {
        let start = c + i * segment_len;
        for m in &mut mask[start..start + segment_len] {
            *m = true;
        }
    }

    let mut out = scan.clone();
    out.holdout_mask = mask;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::position_error;
    use crate::seed::stream;
    use crate::world::scene::{make_scene, SceneParams};

    fn scene() -> SceneSpec {
        make_scene("s", 11, &SceneParams::default()).unwrap()
    }

    fn params(seed: u64) -> TrajectoryParams {
        TrajectoryParams {
            n_frames: 256,
            n_waypoints: 8,
            waypoint_min: [-3.5, -3.5, -0.8],
            waypoint_max: [3.5, 3.5, 0.8],
            max_step: 0.25,
            seed,
        }
    }

    #[test]
    fn scan_is_smooth_and_deterministic() {
        let s = scene();
        let a = generate_scan(&s, "t0", &params(1), 0.0, ScanRole::Train).unwrap();
        let b = generate_scan(&s, "t0", &params(1), 0.0, ScanRole::Train).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.n_frames(), 256);
        for w in a.frames.windows(2) {
            let d = position_error(&w[0].pose.position, &w[1].pose.position);
            assert!(d <= 0.25 + 1e-12, "step {d} exceeds max_step");
        }
        // Orientation track is continuous (consecutive quats in the same
        // hemisphere and close).
        for w in a.frames.windows(2) {
            let dot: f64 = (0..4)
                .map(|i| w[0].pose.orientation[i] * w[1].pose.orientation[i])
                .sum();
            assert!(dot > 0.9, "orientation jumped: dot {dot}");
        }
    }

    #[test]
    fn different_seeds_give_different_trajectories() {
        let s = scene();
        let a = generate_scan(&s, "t0", &params(1), 0.0, ScanRole::Train).unwrap();
        let b = generate_scan(&s, "t1", &params(2), 0.0, ScanRole::Train).unwrap();
        assert!(position_error(&a.frames[0].pose.position, &b.frames[0].pose.position) > 1e-6);
    }

    #[test]
    fn disjoint_waypoint_boxes_give_disjoint_position_ranges() {
        let s = scene();
        let left = TrajectoryParams {
            waypoint_min: [-3.5, -3.5, -0.8],
            waypoint_max: [-0.5, 3.5, 0.8],
            ..params(3)
        };
        let right = TrajectoryParams {
            waypoint_min: [0.5, -3.5, -0.8],
            waypoint_max: [3.5, 3.5, 0.8],
            ..params(4)
        };
        let a = generate_scan(&s, "a", &left, 0.0, ScanRole::Train).unwrap();
        let b = generate_scan(&s, "b", &right, 0.0, ScanRole::Inference).unwrap();
        let a_max = a.frames.iter().map(|f| f.pose.position[0]).fold(f64::MIN, f64::max);
        let b_min = b.frames.iter().map(|f| f.pose.position[0]).fold(f64::MAX, f64::min);
        assert!(a_max < b_min, "boxes leak: {a_max} vs {b_min}");
    }

    #[test]
    fn rejects_bad_params() {
        let s = scene();
        assert!(generate_scan(&s, "x", &TrajectoryParams { n_frames: 1, ..params(0) }, 0.0, ScanRole::Train).is_err());
        assert!(generate_scan(&s, "x", &TrajectoryParams { n_waypoints: 1, ..params(0) }, 0.0, ScanRole::Train).is_err());
        // Box outside workspace.
        let bad = TrajectoryParams { waypoint_max: [10.0, 0.0, 0.0], ..params(0) };
        assert!(generate_scan(&s, "x", &bad, 0.0, ScanRole::Train).is_err());
        // Too few frames for the path length given max_step.
        let tight = TrajectoryParams { n_frames: 4, max_step: 0.01, ..params(0) };
        assert!(generate_scan(&s, "x", &tight, 0.0, ScanRole::Train).is_err());
    }

    fn segment_blocks(mask: &[bool]) -> Vec<(usize, usize)> {
        let mut blocks = vec![];
        let mut i = 0;
        while i < mask.len() {
            if mask[i] {
                let start = i;
                while i < mask.len() && mask[i] {
                    i += 1;
                }
                blocks.push((start, i - start));
            } else {
                i += 1;
            }
        }
        blocks
    }

    #[test]
    fn holdout_128_frames_is_one_16_block() {
        let s = scene();
        let p = TrajectoryParams { n_frames: 128, ..params(5) };
        let scan = generate_scan(&s, "t", &p, 0.0, ScanRole::Train).unwrap();
        let split = split_holdout(&scan, 1.0 / 8.0, 16, &mut stream(9, "split")).unwrap();
        let blocks = segment_blocks(&split.holdout_mask);
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].1, 16);
        assert_eq!(split.n_visible(), 112);
    }

    #[test]
    fn holdout_1024_frames_is_eight_disjoint_16_blocks() {
        let s = scene();
        let p = TrajectoryParams { n_frames: 1024, ..params(6) };
        let scan = generate_scan(&s, "t", &p, 0.0, ScanRole::Train).unwrap();
        let split = split_holdout(&scan, 1.0 / 8.0, 16, &mut stream(10, "split")).unwrap();
        let held: usize = split.holdout_mask.iter().filter(|&&h| h).count();
        assert_eq!(held, 128);
        // Merged adjacent blocks still cover a multiple of 16; check the
        // placement really used 8 disjoint segments by construction.
        let blocks = segment_blocks(&split.holdout_mask);
        assert!(blocks.iter().all(|&(_, len)| len % 16 == 0));
        assert_eq!(blocks.iter().map(|&(_, l)| l).sum::<usize>(), 128);
    }

    #[test]
    fn holdout_too_short_scan_is_infeasible() {
        let s = scene();
        let p = TrajectoryParams { n_frames: 32, n_waypoints: 2, max_step: 1.0, ..params(7) };
        let scan = generate_scan(&s, "t", &p, 0.0, ScanRole::Train).unwrap();
        assert!(matches!(
            split_holdout(&scan, 1.0 / 8.0, 16, &mut stream(0, "x")),
            Err(Error::InfeasibleSplit(_))
        ));
    }

    #[test]
    fn holdout_placement_varies_with_rng_but_not_frames() {
        let s = scene();
        let p = TrajectoryParams { n_frames: 512, ..params(8) };
        let scan = generate_scan(&s, "t", &p, 0.0, ScanRole::Train).unwrap();
        let a = split_holdout(&scan, 1.0 / 8.0, 16, &mut stream(1, "s")).unwrap();
        let b = split_holdout(&scan, 1.0 / 8.0, 16, &mut stream(2, "s")).unwrap();
        assert_eq!(a.frames, scan.frames);
        assert_ne!(a.holdout_mask, b.holdout_mask);
        let c = split_holdout(&scan, 1.0 / 8.0, 16, &mut stream(1, "s")).unwrap();
        assert_eq!(a.holdout_mask, c.holdout_mask);
    }
}
