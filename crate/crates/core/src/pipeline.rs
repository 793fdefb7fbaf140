//! End-to-end comparison on a synthetic scene: RX on the raw cube versus RX
//! after background suppression.

use serde::{Deserialize, Serialize};

use crate::cube::{AnomalyMask, HsiCube};
use crate::detect::{normalize_map, rx_detect, DetectionMap};
use crate::metrics::{roc, separability, SeparabilityStats};
use crate::scene::{synth_scene, SceneConfig};
use crate::suppress::{suppress, SuppressOptions};
use crate::train::{train, Checkpoint, TrainConfig};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub scene: SceneConfig,
    pub train: TrainConfig,
    pub repeats: usize,
    pub t: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig::default(),
            train: TrainConfig::default(),
            repeats: 10,
            t: 30,
        }
    }
}

impl PipelineConfig {
    /// Uses `seed` for both the scene and the training run.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.scene.seed = seed;
        self.train.seed = seed;
        self
    }
}

/// Detection quality of one arm of the comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub auc_pd_pf: f64,
    pub auc_pf_tau: f64,
    pub separability: SeparabilityStats,
}

impl ArmReport {
    pub fn evaluate(map: &DetectionMap, mask: &AnomalyMask) -> Result<Self> {
        let map = if map.normalized { map.clone() } else { normalize_map(map) };
        let curve = roc(&map, mask)?;
        Ok(Self {
            auc_pd_pf: curve.auc_pd_pf,
            auc_pf_tau: curve.auc_pf_tau,
            separability: separability(&map, mask)?,
        })
    }

    /// Interquartile range of the normalized background scores.
    pub fn background_iqr(&self) -> f64 {
        self.separability.background.iqr()
    }
}

/// Every artifact of a pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub cube: HsiCube,
    pub mask: AnomalyMask,
    pub checkpoint: Checkpoint,
    pub suppressed: HsiCube,
    pub baseline_map: DetectionMap,
    pub suppressed_map: DetectionMap,
    pub baseline: ArmReport,
    pub after: ArmReport,
}

pub fn run_pipeline(config: &PipelineConfig) -> Result<PipelineRun> {
    let (cube, mask) = synth_scene(&config.scene)?;
    let checkpoint = train(&cube, &config.train)?;
    let suppressed = suppress(&cube, &checkpoint, SuppressOptions::new(config.repeats, config.t))?;
    let baseline_map = normalize_map(&rx_detect(&cube)?);
    let suppressed_map = normalize_map(&rx_detect(&suppressed)?);
    let baseline = ArmReport::evaluate(&baseline_map, &mask)?;
    let after = ArmReport::evaluate(&suppressed_map, &mask)?;
    Ok(PipelineRun {
        cube,
        mask,
        checkpoint,
        suppressed,
        baseline_map,
        suppressed_map,
        baseline,
        after,
    })
}
