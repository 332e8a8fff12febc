//! Object-level scene edits and recomposition.
//!
//! Edits act on completed (amodal) instances, so deleting or moving an
//! object reveals whatever the decomposition recovered behind it.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::order::OcclusionMatrix;
use crate::raster::Appearance;
use crate::scene::{composite, InstanceId, Scene};
use crate::synth::ground_truth_matrix;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Edit {
    Delete { target: InstanceId },
    Move { target: InstanceId, dx: i64, dy: i64 },
    /// Moves `target` to depth rank `new_z` (0 is front); the others keep
    /// their relative order.
    Reorder { target: InstanceId, new_z: u32 },
}

impl Edit {
    pub fn target(&self) -> InstanceId {
        match *self {
            Edit::Delete { target } | Edit::Move { target, .. } | Edit::Reorder { target, .. } => target,
        }
    }
}

/// Where an instance's hidden pixels came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Oracle,
    Inpainted,
}

pub fn recomposite(scene: &Scene) -> Appearance {
    composite(scene)
}

/// Applies one edit. Returns the new scene and human-readable warnings
/// (currently only for moves that push pixels off the canvas).
pub fn apply_edit(scene: &Scene, edit: &Edit) -> Result<(Scene, Vec<String>)> {
    let target = edit.target();
    if scene.instance(target).is_none() {
        return Err(Error::UnknownId(target));
    }
    let mut warnings = Vec::new();
    let (background, mut instances) = scene.clone().into_parts();
    match *edit {
        Edit::Delete { .. } => instances.retain(|i| i.id != target),
        Edit::Move { dx, dy, .. } => {
            let inst = instances.iter_mut().find(|i| i.id == target).expect("checked above");
            let moved = inst.amodal_mask.translate(dx, dy);
            if moved.is_empty() {
                return Err(Error::InvalidEdit(format!(
                    "moving instance {target} by ({dx}, {dy}) leaves it entirely off the canvas"
                )));
            }
            let lost = inst.amodal_mask.area() - moved.area();
            if lost > 0 {
                warnings.push(format!("instance {target} clipped at the canvas edge: {lost} pixels dropped"));
            }
            inst.appearance = inst.appearance.translate(dx, dy, [0, 0, 0]);
            inst.amodal_mask = moved;
        }
        Edit::Reorder { new_z, .. } => {
            let n = instances.len();
            if new_z as usize >= n {
                return Err(Error::InvalidEdit(format!(
                    "rank {new_z} out of range for {n} instances"
                )));
            }
            // instances arrive sorted front to back
            let pos = instances.iter().position(|i| i.id == target).expect("checked above");
            let inst = instances.remove(pos);
            instances.insert(new_z as usize, inst);
            for (rank, inst) in instances.iter_mut().enumerate() {
                inst.z = rank as u32;
            }
        }
    }
    Ok((Scene::new(background, instances)?, warnings))
}

#[derive(Debug, thiserror::Error)]
#[error("edit {index}: {source}")]
pub struct ReplayError {
    pub index: usize,
    #[source]
    pub source: Error,
}

/// Applies `edits` in order, stopping at the first failure.
pub fn replay(base: &Scene, edits: &[Edit]) -> Result<(Scene, Vec<String>), ReplayError> {
    let mut scene = base.clone();
    let mut warnings = Vec::new();
    for (index, e) in edits.iter().enumerate() {
        let (next, w) = apply_edit(&scene, e).map_err(|source| ReplayError { index, source })?;
        warnings.extend(w.into_iter().map(|w| format!("edit {index}: {w}")));
        scene = next;
    }
    Ok((scene, warnings))
}

/// A base scene plus an edit log; `current` always equals the replay.
#[derive(Debug, Clone, PartialEq)]
pub struct EditSession {
    base: Scene,
    log: Vec<Edit>,
    current: Scene,
    provenance: BTreeMap<InstanceId, Provenance>,
    overlap_threshold: u64,
}

impl EditSession {
    pub fn new(base: Scene, provenance: Provenance, overlap_threshold: u64) -> Self {
        let provenance = base.ids().into_iter().map(|id| (id, provenance)).collect();
        Self {
            current: base.clone(),
            base,
            log: Vec::new(),
            provenance,
            overlap_threshold,
        }
    }

    /// Rebuilds a session from its parts, replaying the log.
    pub fn restore(
        base: Scene,
        log: Vec<Edit>,
        provenance: BTreeMap<InstanceId, Provenance>,
        overlap_threshold: u64,
    ) -> Result<Self, ReplayError> {
        let (current, _) = replay(&base, &log)?;
        Ok(Self {
            base,
            log,
            current,
            provenance,
            overlap_threshold,
        })
    }

    pub fn base(&self) -> &Scene {
        &self.base
    }

    pub fn current(&self) -> &Scene {
        &self.current
    }

    pub fn log(&self) -> &[Edit] {
        &self.log
    }

    pub fn overlap_threshold(&self) -> u64 {
        self.overlap_threshold
    }

    pub fn provenance(&self, id: InstanceId) -> Option<Provenance> {
        self.provenance.get(&id).copied()
    }

    pub fn provenance_map(&self) -> &BTreeMap<InstanceId, Provenance> {
        &self.provenance
    }

    pub fn apply(&mut self, edit: Edit) -> Result<Vec<String>> {
        let (next, warnings) = apply_edit(&self.current, &edit)?;
        self.current = next;
        self.log.push(edit);
        Ok(warnings)
    }

    /// Drops the last edit and returns it.
    pub fn undo(&mut self) -> Result<Edit> {
        let last = self
            .log
            .pop()
            .ok_or_else(|| Error::InvalidEdit("nothing to undo".into()))?;
        self.current = replay(&self.base, &self.log)
            .map_err(|e| Error::Bookkeeping(format!("replay after undo failed: {e}")))?
            .0;
        Ok(last)
    }

    pub fn image(&self) -> Appearance {
        recomposite(&self.current)
    }

    pub fn matrix(&self) -> OcclusionMatrix {
        ground_truth_matrix(&self.current, self.overlap_threshold)
    }
}
