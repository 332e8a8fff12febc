use std::collections::BTreeSet;

use crate::engine::{Completer, Detection, Segmenter, StepContext};
use crate::error::{Error, Result};
use crate::order::{binary_labels, peel, OcclusionMatrix};
use crate::raster::{Appearance, Mask};
use crate::scene::{composite, InstanceId, Scene};
use crate::synth::ground_truth_matrix;

/// Ground-truth segmenter. Emits one detection per remaining instance with a
/// nonempty visible mask; the non-occlusion score is the indegree label of
/// the peeled ground-truth graph.
#[derive(Debug, Clone)]
pub struct OracleSegmenter {
    scene: Scene,
    gt: OcclusionMatrix,
}

impl OracleSegmenter {
    pub fn new(scene: Scene, overlap_threshold: u64) -> Self {
        let gt = ground_truth_matrix(&scene, overlap_threshold);
        Self { scene, gt }
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    /// Detections for the scene with `removed` taken out.
    pub fn detections(&self, removed: &BTreeSet<InstanceId>) -> Result<Vec<Detection>> {
        let remaining = self.scene.without(removed)?;
        let labels = binary_labels(&peel(&self.gt, removed)?);
        remaining
            .instances()
            .iter()
            .filter(|i| !i.visible_mask.is_empty())
            .map(|i| {
                let nonocc = if labels[&i.id] == 0 { 1.0 } else { 0.0 };
                Detection::new(i.visible_mask.clone(), i.category, 1.0, nonocc, Some(i.id))
            })
            .collect()
    }
}

impl Segmenter for OracleSegmenter {
    fn segment(&mut self, _image: &Appearance, ctx: &StepContext<'_>) -> Result<Vec<Detection>> {
        self.detections(ctx.removed)
    }
}

/// Fills holes from the ground-truth composite of the instances not yet removed.
#[derive(Debug, Clone)]
pub struct OracleCompleter {
    scene: Scene,
}

impl OracleCompleter {
    pub fn new(scene: Scene) -> Self {
        Self { scene }
    }
}

impl Completer for OracleCompleter {
    fn complete(&mut self, image: &Appearance, hole: &Mask, ctx: &StepContext<'_>) -> Result<Appearance> {
        if image.dims() != self.scene.dims() {
            return Err(Error::Bookkeeping(format!(
                "image is {:?}, scene is {:?}",
                image.dims(),
                self.scene.dims()
            )));
        }
        let remaining = self.scene.without(ctx.removed).map_err(|e| match e {
            Error::UnknownId(id) => Error::Bookkeeping(format!("removed id {id} is not in the scene")),
            e => e,
        })?;
        let mut out = image.clone();
        out.paint(&composite(&remaining), hole)?;
        Ok(out)
    }
}
