//! Evaluation: mask AP, occlusion AP, completion quality, and ordering
//! baselines.

pub mod ap;
pub mod baselines;
pub mod completion;
pub mod oap;

pub use ap::{match_instances, average_precision, APReport, ApEvaluator, GtInstance, PredInstance, SizeBucket, IOU_THRESHOLDS};
pub use baselines::{order_by_area, order_by_iou_area, order_by_yaxis, AreaConvention, OrderingAlgorithm};
pub use completion::{completion_metrics, psnr, rmse, ssim, CompletionReport};
pub use oap::{oap_counts, OAPReport, OapCounts, OapEvaluator};

use crate::engine::DecompositionTrace;
use crate::scene::Scene;

/// Amodal masks and class scores recovered by a decomposition.
pub fn predictions_from_trace(trace: &DecompositionTrace) -> Vec<PredInstance> {
    trace
        .steps
        .iter()
        .flat_map(|s| &s.selected)
        .map(|(id, d)| PredInstance {
            id: *id,
            mask: d.mask.clone(),
            class_score: d.class_score,
        })
        .collect()
}

pub fn ground_truth_instances(scene: &Scene) -> Vec<GtInstance> {
    scene
        .instances()
        .iter()
        .map(|i| GtInstance {
            id: i.id,
            mask: i.amodal_mask.clone(),
        })
        .collect()
}
