//! Scene-agnostic labelers that turn unlabeled inference scans into
//! training targets.
//!
//! None of them know anything about the regression model; they only see
//! geometry and raw observations. Every teacher labels exclusively the
//! visible frames of a scan, so held-out evaluation segments can never
//! leak into training through a pseudo label.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{compose, perturb_pose, relative, Pose};
use crate::world::{Scan, SceneSpec};

/// Teacher selection as it appears in run configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TeacherConfig {
    /// Perfect labels; the ceiling any teacher can reach.
    GroundTruth,
    /// Ground truth corrupted by independent per-frame noise.
    Oracle { sigma_t: f64, sigma_r_deg: f64 },
    /// Nearest neighbor over labeled reference frames of the same scene.
    Retrieval {
        /// Match on the condition-invariant feature slice only.
        #[serde(default)]
        invariant_only: bool,
    },
    /// Relative-motion integration from the scan's first visible frame.
    Odometry { step_sigma_t: f64, step_sigma_r_deg: f64 },
}

impl TeacherConfig {
    pub fn kind_label(&self) -> &'static str {
        match self {
            TeacherConfig::GroundTruth => "ground_truth",
            TeacherConfig::Oracle { .. } => "oracle",
            TeacherConfig::Retrieval { .. } => "retrieval",
            TeacherConfig::Odometry { .. } => "odometry",
        }
    }
}

/// One pseudo label: the teacher's pose estimate for a visible frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherLabel {
    pub frame_index: usize,
    pub pose: Pose,
}

/// Reference set for retrieval: pre-sliced feature keys and their poses,
/// in scan-then-frame order so ties resolve to the earliest entry.
#[derive(Clone, Debug)]
pub struct RetrievalIndex {
    keys: Vec<Vec<f64>>,
    poses: Vec<Pose>,
    key_start: usize,
}

impl RetrievalIndex {
    pub fn build(labeled: &[&Scan], key_start: usize) -> Result<RetrievalIndex> {
        let mut keys = vec![];
        let mut poses = vec![];
        for scan in labeled {
            for i in scan.visible_indices() {
                let f = &scan.frames[i];
                if key_start >= f.obs.features.len() {
                    return Err(Error::invalid("retrieval key slice is empty"));
                }
                keys.push(f.obs.features[key_start..].to_vec());
                poses.push(f.pose.clone());
            }
        }
        if keys.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(RetrievalIndex { keys, poses, key_start })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn nearest(&self, features: &[f64]) -> Result<&Pose> {
        if self.key_start >= features.len() {
            return Err(Error::invalid("query has fewer features than the retrieval key"));
        }
        let query = &features[self.key_start..];
        let mut best = f64::INFINITY;
        let mut best_i = 0;
        for (i, key) in self.keys.iter().enumerate() {
            if key.len() != query.len() {
                return Err(Error::invalid("retrieval key width mismatch"));
            }
            let d2: f64 = key.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            // Strict less keeps the earliest entry on exact ties.
            if d2 < best {
                best = d2;
                best_i = i;
            }
        }
        Ok(&self.poses[best_i])
    }
}

/// A teacher instantiated for one scene, ready to label scans.
#[derive(Clone, Debug)]
pub enum Teacher {
    GroundTruth,
    Oracle { sigma_t: f64, sigma_r_deg: f64 },
    Retrieval { index: RetrievalIndex },
    Odometry { step_sigma_t: f64, step_sigma_r_deg: f64 },
}

/// Bind a teacher config to a scene. Retrieval builds its reference index
/// from the scene's labeled scans; the other kinds ignore them.
pub fn make_teacher(
    cfg: &TeacherConfig,
    scene: &SceneSpec,
    labeled: &[&Scan],
) -> Result<Teacher> {
    Ok(match cfg {
        TeacherConfig::GroundTruth => Teacher::GroundTruth,
        TeacherConfig::Oracle { sigma_t, sigma_r_deg } => {
            if *sigma_t < 0.0 || *sigma_r_deg < 0.0 {
                return Err(Error::invalid("oracle sigmas must be non-negative"));
            }
            Teacher::Oracle { sigma_t: *sigma_t, sigma_r_deg: *sigma_r_deg }
        }
        TeacherConfig::Retrieval { invariant_only } => {
            let key_start = if *invariant_only { scene.invariant_start() } else { 0 };
            Teacher::Retrieval { index: RetrievalIndex::build(labeled, key_start)? }
        }
        TeacherConfig::Odometry { step_sigma_t, step_sigma_r_deg } => {
            if *step_sigma_t < 0.0 || *step_sigma_r_deg < 0.0 {
                return Err(Error::invalid("odometry sigmas must be non-negative"));
            }
            Teacher::Odometry {
                step_sigma_t: *step_sigma_t,
                step_sigma_r_deg: *step_sigma_r_deg,
            }
        }
    })
}

impl Teacher {
    /// Pseudo labels for every visible frame of the scan, in frame order.
    /// Held-out frames are skipped entirely.
    pub fn label_scan(&self, scan: &Scan, rng: &mut ChaCha8Rng) -> Result<Vec<TeacherLabel>> {
        let visible: Vec<usize> = scan.visible_indices().collect();
        if visible.is_empty() {
            return Err(Error::EmptyDataset);
        }
        match self {
            Teacher::GroundTruth => Ok(visible
                .iter()
                .map(|&i| TeacherLabel { frame_index: i, pose: scan.frames[i].pose.clone() })
                .collect()),
            Teacher::Oracle { sigma_t, sigma_r_deg } => visible
                .iter()
                .map(|&i| {
                    let pose = perturb_pose(&scan.frames[i].pose, *sigma_t, *sigma_r_deg, rng);
                    Ok(TeacherLabel { frame_index: i, pose })
                })
                .collect(),
            Teacher::Retrieval { index } => visible
                .iter()
                .map(|&i| {
                    let pose = index.nearest(&scan.frames[i].obs.features)?.clone();
                    Ok(TeacherLabel { frame_index: i, pose })
                })
                .collect(),
            Teacher::Odometry { step_sigma_t, step_sigma_r_deg } => {
                // Integrate noisy relative motion along the visible
                // subsequence, anchored at the first visible frame's exact
                // pose. Drift grows with chain length.
                let mut labels = Vec::with_capacity(visible.len());
                let mut est = scan.frames[visible[0]].pose.clone();
                labels.push(TeacherLabel { frame_index: visible[0], pose: est.clone() });
                for w in visible.windows(2) {
                    let (prev, cur) = (w[0], w[1]);
                    let rel = relative(&scan.frames[prev].pose, &scan.frames[cur].pose);
                    let noisy = perturb_pose(&rel, *step_sigma_t, *step_sigma_r_deg, rng);
                    est = compose(&est, &noisy);
                    labels.push(TeacherLabel { frame_index: cur, pose: est.clone() });
                }
                Ok(labels)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{orientation_error_deg, position_error};
    use crate::seed::stream;
    use crate::world::{generate_scan, split_holdout, ScanRole, SceneParams, TrajectoryParams};
    use crate::world::{make_scene, Scan};

    fn scene() -> SceneSpec {
        make_scene("s", 5, &SceneParams::default()).unwrap()
    }

    fn scan_with_holdout(scene: &SceneSpec, seed: u64, condition: f64) -> Scan {
        let p = TrajectoryParams {
            n_frames: 128,
            n_waypoints: 6,
            waypoint_min: [-3.5, -3.5, -0.8],
            waypoint_max: [3.5, 3.5, 0.8],
            max_step: 0.4,
            seed,
        };
        let scan = generate_scan(scene, &format!("scan{seed}"), &p, condition, ScanRole::Inference)
            .unwrap();
        split_holdout(&scan, 1.0 / 8.0, 16, &mut stream(seed, "split")).unwrap()
    }

    #[test]
    fn ground_truth_teacher_labels_visible_frames_exactly() {
        let sc = scene();
        let scan = scan_with_holdout(&sc, 1, 0.0);
        let t = make_teacher(&TeacherConfig::GroundTruth, &sc, &[]).unwrap();
        let labels = t.label_scan(&scan, &mut stream(0, "t")).unwrap();
        let visible: Vec<usize> = scan.visible_indices().collect();
        assert_eq!(labels.iter().map(|l| l.frame_index).collect::<Vec<_>>(), visible);
        assert!(labels.len() < scan.n_frames(), "holdout must be excluded");
        for l in &labels {
            assert_eq!(l.pose, scan.frames[l.frame_index].pose);
        }
    }

    #[test]
    fn oracle_with_zero_noise_is_ground_truth() {
        let sc = scene();
        let scan = scan_with_holdout(&sc, 2, 0.0);
        let cfg = TeacherConfig::Oracle { sigma_t: 0.0, sigma_r_deg: 0.0 };
        let t = make_teacher(&cfg, &sc, &[]).unwrap();
        for l in t.label_scan(&scan, &mut stream(3, "t")).unwrap() {
            let gt = &scan.frames[l.frame_index].pose;
            assert!(position_error(&l.pose.position, &gt.position) < 1e-12);
            assert!(orientation_error_deg(&l.pose.orientation, &gt.orientation).unwrap() < 1e-6);
        }
    }

    #[test]
    fn oracle_position_error_median_matches_chi3() {
        // |N(0, sigma^2 I_3)| has a chi_3 distribution scaled by sigma;
        // statrs provides the reference median.
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let chi3_median = ChiSquared::new(3.0).unwrap().inverse_cdf(0.5).sqrt();
        assert!((chi3_median - 1.538).abs() < 2e-3);

        let sc = scene();
        let sigma = 0.05;
        let cfg = TeacherConfig::Oracle { sigma_t: sigma, sigma_r_deg: 0.0 };
        let t = make_teacher(&cfg, &sc, &[]).unwrap();
        let mut errors = vec![];
        for s in 0..20 {
            let scan = scan_with_holdout(&sc, 10 + s, 0.0);
            for l in t.label_scan(&scan, &mut stream(s, "oracle")).unwrap() {
                errors.push(position_error(&l.pose.position, &scan.frames[l.frame_index].pose.position));
            }
        }
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = errors[errors.len() / 2];
        let expected = sigma * chi3_median;
        assert!(
            (median - expected).abs() < 0.05 * expected,
            "median {median} vs expected {expected}"
        );
    }

    #[test]
    fn oracle_is_deterministic_per_stream() {
        let sc = scene();
        let scan = scan_with_holdout(&sc, 4, 0.0);
        let cfg = TeacherConfig::Oracle { sigma_t: 0.1, sigma_r_deg: 1.0 };
        let t = make_teacher(&cfg, &sc, &[]).unwrap();
        let a = t.label_scan(&scan, &mut stream(7, "t")).unwrap();
        let b = t.label_scan(&scan, &mut stream(7, "t")).unwrap();
        let c = t.label_scan(&scan, &mut stream(8, "t")).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn retrieval_returns_exact_pose_for_reference_query() {
        let sc = SceneSpec {
            obs_noise_sigma: 0.0,
            ..scene()
        };
        let reference = scan_with_holdout(&sc, 5, 0.0);
        let cfg = TeacherConfig::Retrieval { invariant_only: false };
        let t = make_teacher(&cfg, &sc, &[&reference]).unwrap();
        // Querying the reference scan itself: every visible frame finds its
        // own features at distance zero.
        let labels = t.label_scan(&reference, &mut stream(0, "t")).unwrap();
        for l in &labels {
            assert_eq!(l.pose, reference.frames[l.frame_index].pose);
        }
    }

    #[test]
    fn retrieval_tie_break_keeps_earliest_entry() {
        let index = RetrievalIndex {
            keys: vec![vec![1.0, 2.0], vec![1.0, 2.0]],
            poses: vec![
                Pose::new([1.0, 0.0, 0.0], crate::geometry::QUAT_IDENTITY).unwrap(),
                Pose::new([9.0, 0.0, 0.0], crate::geometry::QUAT_IDENTITY).unwrap(),
            ],
            key_start: 0,
        };
        let p = index.nearest(&[1.0, 2.0]).unwrap();
        assert_eq!(p.position[0], 1.0);
    }

    #[test]
    fn invariant_retrieval_survives_condition_shift() {
        let sc = scene();
        let reference = scan_with_holdout(&sc, 6, 0.0);
        let shifted = scan_with_holdout(&sc, 6, 0.9);
        // Same trajectory seed: identical poses, different condition.
        assert_eq!(reference.frames[0].pose, shifted.frames[0].pose);

        let inv = make_teacher(&TeacherConfig::Retrieval { invariant_only: true }, &sc, &[&reference]).unwrap();
        let full = make_teacher(&TeacherConfig::Retrieval { invariant_only: false }, &sc, &[&reference]).unwrap();
        let median_err = |t: &Teacher| {
            let labels = t.label_scan(&shifted, &mut stream(0, "t")).unwrap();
            let mut errs: Vec<f64> = labels
                .iter()
                .map(|l| position_error(&l.pose.position, &shifted.frames[l.frame_index].pose.position))
                .collect();
            errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            errs[errs.len() / 2]
        };
        let inv_err = median_err(&inv);
        let full_err = median_err(&full);
        // Invariant matching stays near the frame spacing; full features
        // get dragged off by the condition-sensitive half.
        assert!(inv_err < 0.2, "invariant retrieval err {inv_err}");
        assert!(full_err > 2.0 * inv_err.max(0.01), "full {full_err} vs invariant {inv_err}");
    }

    #[test]
    fn retrieval_never_uses_heldout_reference_frames() {
        let sc = scene();
        let reference = scan_with_holdout(&sc, 7, 0.0);
        let cfg = TeacherConfig::Retrieval { invariant_only: false };
        let t = make_teacher(&cfg, &sc, &[&reference]).unwrap();
        if let Teacher::Retrieval { index } = &t {
            assert_eq!(index.len(), reference.n_visible());
        } else {
            panic!("expected retrieval teacher");
        }
    }

    #[test]
    fn retrieval_without_reference_fails() {
        let sc = scene();
        let cfg = TeacherConfig::Retrieval { invariant_only: false };
        assert!(matches!(make_teacher(&cfg, &sc, &[]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn odometry_with_zero_noise_reproduces_ground_truth() {
        let sc = scene();
        let scan = scan_with_holdout(&sc, 8, 0.0);
        let cfg = TeacherConfig::Odometry { step_sigma_t: 0.0, step_sigma_r_deg: 0.0 };
        let t = make_teacher(&cfg, &sc, &[]).unwrap();
        for l in t.label_scan(&scan, &mut stream(0, "t")).unwrap() {
            let gt = &scan.frames[l.frame_index].pose;
            assert!(position_error(&l.pose.position, &gt.position) < 1e-9);
            // acos conditioning floors the resolvable angle near 1e-6 deg;
            // 1e-3 deg over a 112-step chain is still numerically exact.
            assert!(orientation_error_deg(&l.pose.orientation, &gt.orientation).unwrap() < 1e-3);
        }
    }

    #[test]
    fn odometry_anchor_is_exact_and_drift_grows() {
        let sc = scene();
        let scan = scan_with_holdout(&sc, 9, 0.0);
        let cfg = TeacherConfig::Odometry { step_sigma_t: 0.02, step_sigma_r_deg: 0.0 };
        let t = make_teacher(&cfg, &sc, &[]).unwrap();
        let labels = t.label_scan(&scan, &mut stream(11, "t")).unwrap();
        let first = &labels[0];
        assert_eq!(first.pose, scan.frames[first.frame_index].pose);

        // Mean error over the first fifth vs the last fifth of the chain.
        let err = |l: &TeacherLabel| {
            position_error(&l.pose.position, &scan.frames[l.frame_index].pose.position)
        };
        let n = labels.len();
        let early: f64 = labels[..n / 5].iter().map(err).sum::<f64>() / (n / 5) as f64;
        let late: f64 = labels[4 * n / 5..].iter().map(err).sum::<f64>() / (n - 4 * n / 5) as f64;
        assert!(late > early, "drift should accumulate: early {early} late {late}");
    }

    #[test]
    fn odometry_final_error_rms_scales_as_sigma_sqrt_3k() {
        // With zero rotation noise the position error after k steps is a
        // sum of k iid isotropic gaussians: E|err|^2 = 3 k sigma^2.
        let sc = scene();
        let p = TrajectoryParams {
            n_frames: 65,
            n_waypoints: 4,
            waypoint_min: [-3.0, -3.0, -0.5],
            waypoint_max: [3.0, 3.0, 0.5],
            max_step: 0.4,
            seed: 40,
        };
        let scan = generate_scan(&sc, "odo", &p, 0.0, ScanRole::Inference).unwrap();
        let sigma = 0.01;
        let k = (scan.n_frames() - 1) as f64;
        let cfg = TeacherConfig::Odometry { step_sigma_t: sigma, step_sigma_r_deg: 0.0 };
        let t = make_teacher(&cfg, &sc, &[]).unwrap();

        let trials = 300;
        let mut sq_sum = 0.0;
        for s in 0..trials {
            let labels = t.label_scan(&scan, &mut stream(s, "odo-trial")).unwrap();
            let last = labels.last().unwrap();
            sq_sum += position_error(&last.pose.position, &scan.frames[last.frame_index].pose.position)
                .powi(2);
        }
        let rms = (sq_sum / trials as f64).sqrt();
        let expected = sigma * (3.0 * k).sqrt();
        assert!(
            (rms - expected).abs() < 0.2 * expected,
            "rms {rms} vs expected {expected}"
        );
    }

    #[test]
    fn odometry_rotation_drift_rms_scales_as_sigma_sqrt_k() {
        let sc = scene();
        let p = TrajectoryParams {
            n_frames: 65,
            n_waypoints: 4,
            waypoint_min: [-3.0, -3.0, -0.5],
            waypoint_max: [3.0, 3.0, 0.5],
            max_step: 0.4,
            seed: 41,
        };
        let scan = generate_scan(&sc, "odo-r", &p, 0.0, ScanRole::Inference).unwrap();
        let sigma_deg = 0.2;
        let k = (scan.n_frames() - 1) as f64;
        let cfg = TeacherConfig::Odometry { step_sigma_t: 0.0, step_sigma_r_deg: sigma_deg };
        let t = make_teacher(&cfg, &sc, &[]).unwrap();

        let trials = 300;
        let mut sq_sum = 0.0;
        for s in 0..trials {
            let labels = t.label_scan(&scan, &mut stream(s, "odo-rot")).unwrap();
            let last = labels.last().unwrap();
            let e = orientation_error_deg(
                &last.pose.orientation,
                &scan.frames[last.frame_index].pose.orientation,
            )
            .unwrap();
            sq_sum += e * e;
        }
        let rms = (sq_sum / trials as f64).sqrt();
        let expected = sigma_deg * k.sqrt();
        assert!(
            (rms - expected).abs() < 0.25 * expected,
            "rms {rms} vs expected {expected}"
        );
    }

    #[test]
    fn teacher_config_kind_labels_and_serde() {
        let cfgs: Vec<TeacherConfig> = vec![
            TeacherConfig::GroundTruth,
            TeacherConfig::Oracle { sigma_t: 0.1, sigma_r_deg: 0.5 },
            TeacherConfig::Retrieval { invariant_only: true },
            TeacherConfig::Odometry { step_sigma_t: 0.01, step_sigma_r_deg: 0.1 },
        ];
        let labels: Vec<&str> = cfgs.iter().map(|c| c.kind_label()).collect();
        assert_eq!(labels, ["ground_truth", "oracle", "retrieval", "odometry"]);
        for c in &cfgs {
            let json = serde_json::to_string(c).unwrap();
            let back: TeacherConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(&back, c);
        }
        assert!(serde_json::from_str::<TeacherConfig>("{\"kind\":\"oracle\",\"sigma_t\":0.1}").is_err());
    }
}
