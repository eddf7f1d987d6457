//! Model plus optimizer snapshots. JSON round trips are bit-exact, so a
//! resumed run continues identically to one that never stopped.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::adam::AdamState;
use crate::model::mlp::AprModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub model: AprModel,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn new(model: AprModel, adam: AdamState) -> Checkpoint {
        Checkpoint { model, adam }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Checkpoint> {
        let ckpt: Checkpoint =
            serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))?;
        ckpt.model.validate()?;
        ckpt.adam.validate(&ckpt.model)?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::adam::{AdamHyper, AdamState};
    use crate::model::mlp::{init_model, ModelConfig};
    use crate::model::train::{batch_step, FrameRef, LabelSource, TrainItem};
    use crate::world::Observation;

    fn trained_checkpoint() -> Checkpoint {
        let cfg = ModelConfig { input_dim: 5, hidden: vec![4] };
        let mut model = init_model(&cfg, &["a"], 2).unwrap();
        let mut adam = AdamState::new(&model, AdamHyper::default());
        let it = TrainItem {
            scene_id: "a".into(),
            frame: FrameRef { scan_id: "s".into(), frame_index: 3 },
            obs: Observation { features: vec![0.1, -0.4, 0.9, 0.0, 0.3] },
            target: crate::geometry::Pose::identity(),
            source: LabelSource::Supervised,
        };
        for _ in 0..7 {
            batch_step(&mut model, &mut adam, &[&it]).unwrap();
        }
        Checkpoint::new(model, adam)
    }

    #[test]
    fn json_roundtrip_is_bit_exact() {
        let ckpt = trained_checkpoint();
        let json = ckpt.to_json();
        let back = Checkpoint::from_json(&json).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_json(), json);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let ckpt = trained_checkpoint();
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }

    #[test]
    fn corrupted_shapes_are_rejected() {
        let ckpt = trained_checkpoint();
        let json = ckpt.to_json();
        // Truncate one bias array: still valid JSON, invalid model.
        let broken = json.replacen("\"b\":[", "\"b\":[0.0,", 1);
        assert_ne!(broken, json);
        assert!(Checkpoint::from_json(&broken).is_err());

        assert!(Checkpoint::from_json("{\"model\":1}").is_err());
        assert!(Checkpoint::from_json("not json").is_err());
    }
}
