//! The decompose-and-complete loop.
//!
//! Each step segments the current image, selects the instances judged fully
//! visible, cuts them out, asks a completer to fill the holes they leave, and
//! continues on the completed image. Pairwise order is read off the removal
//! steps once the loop ends.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::order::{pairwise_from_trace, OcclusionMatrix};
use crate::raster::{bbox_from_mask, mask_iou, Appearance, BBox, Mask, Rgb};
use crate::scene::{Category, InstanceId, InstanceRecord, Scene};

/// Hole pixels handed to completers are set to this mid-gray.
pub const HOLE_FILL: Rgb = [128, 128, 128];
/// Detections of one step overlapping above this IoU are duplicates.
pub const DEDUP_IOU: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub category: Category,
    pub class_score: f64,
    pub mask: Mask,
    /// Confidence that the instance is not occluded.
    pub nonocc_score: f64,
    /// Identity claimed by the producer; oracles know ground-truth ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<InstanceId>,
}

impl Detection {
    pub fn new(
        mask: Mask,
        category: Category,
        class_score: f64,
        nonocc_score: f64,
        source_id: Option<InstanceId>,
    ) -> Result<Self> {
        let bbox = bbox_from_mask(&mask)?;
        for (name, s) in [("class_score", class_score), ("nonocc_score", nonocc_score)] {
            if !(0.0..=1.0).contains(&s) {
                return Err(Error::InvalidConfig(format!("{name} {s} outside [0, 1]")));
            }
        }
        Ok(Self {
            bbox,
            category,
            class_score,
            mask,
            nonocc_score,
            source_id,
        })
    }
}

/// What the engine tells components about its progress.
#[derive(Debug, Clone, Copy)]
pub struct StepContext<'a> {
    pub step: usize,
    /// Ids removed in earlier steps (and, for completers, this step).
    pub removed: &'a BTreeSet<InstanceId>,
    /// Ids selected in this step; empty while segmenting.
    pub selected: &'a [InstanceId],
}

pub trait Segmenter {
    fn segment(&mut self, image: &Appearance, ctx: &StepContext<'_>) -> Result<Vec<Detection>>;
}

/// Fills `hole` in `image`. Pixels outside the hole must come back unchanged.
pub trait Completer {
    fn complete(&mut self, image: &Appearance, hole: &Mask, ctx: &StepContext<'_>) -> Result<Appearance>;
}

impl<S: Segmenter + ?Sized> Segmenter for Box<S> {
    fn segment(&mut self, image: &Appearance, ctx: &StepContext<'_>) -> Result<Vec<Detection>> {
        (**self).segment(image, ctx)
    }
}

impl<C: Completer + ?Sized> Completer for Box<C> {
    fn complete(&mut self, image: &Appearance, hole: &Mask, ctx: &StepContext<'_>) -> Result<Appearance> {
        (**self).complete(image, hole, ctx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub class_score_threshold: f64,
    pub nonocc_threshold: f64,
    pub max_steps: usize,
    pub max_detections: usize,
    pub overlap_threshold: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            class_score_threshold: 0.5,
            nonocc_threshold: 0.5,
            max_steps: 10,
            max_detections: 100,
            overlap_threshold: 1,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_steps < 1 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        if self.max_detections < 1 {
            return Err(Error::InvalidConfig("max_detections must be at least 1".into()));
        }
        for (name, t) in [
            ("class_score_threshold", self.class_score_threshold),
            ("nonocc_threshold", self.nonocc_threshold),
        ] {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidConfig(format!("{name} {t} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Indices of the candidates judged fully visible: everything passing both
/// thresholds, or else the single best non-occlusion score so that every
/// step removes something.
pub fn select_fully_visible(dets: &[(InstanceId, Detection)], cfg: &EngineConfig) -> Result<Vec<usize>> {
    if dets.is_empty() {
        return Err(Error::NoDetections);
    }
    let passing: Vec<usize> = dets
        .iter()
        .enumerate()
        .filter(|(_, (_, d))| d.class_score >= cfg.class_score_threshold && d.nonocc_score >= cfg.nonocc_threshold)
        .map(|(i, _)| i)
        .collect();
    if !passing.is_empty() {
        return Ok(passing);
    }
    let key = |i: usize| {
        let (id, d) = &dets[i];
        let cy = d.mask.centroid().map_or(f64::INFINITY, |c| c.1);
        (d.nonocc_score, d.class_score, -cy, std::cmp::Reverse(*id))
    };
    let best = (0..dets.len())
        .max_by(|&a, &b| key(a).partial_cmp(&key(b)).expect("scores are finite"))
        .expect("nonempty");
    Ok(vec![best])
}

/// Union of the masks as the hole, and the image with hole pixels set to
/// [`HOLE_FILL`].
pub fn carve_holes(image: &Appearance, selected_masks: &[&Mask]) -> Result<(Appearance, Mask)> {
    let mut hole = Mask::new(image.width(), image.height());
    for m in selected_masks {
        image.check_mask(m)?;
        hole.union_in_place(m)?;
    }
    let mut out = image.clone();
    for (x, y) in hole.iter_set() {
        out.set(x, y, HOLE_FILL);
    }
    Ok((out, hole))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step_index: usize,
    /// Selected instances in within-step rank order.
    pub selected: Vec<(InstanceId, Detection)>,
    pub hole_mask: Mask,
    pub completed_image: Appearance,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecompositionTrace {
    pub steps: Vec<TraceStep>,
}

/// Removal rank: step index, then position within the step.
pub type RemovalRank = (usize, usize);

impl DecompositionTrace {
    pub fn instance_ids(&self) -> Vec<InstanceId> {
        self.steps
            .iter()
            .flat_map(|s| s.selected.iter().map(|(id, _)| *id))
            .collect()
    }

    pub fn amodal_masks(&self) -> BTreeMap<InstanceId, Mask> {
        self.steps
            .iter()
            .flat_map(|s| s.selected.iter().map(|(id, d)| (*id, d.mask.clone())))
            .collect()
    }

    pub fn step_of(&self) -> BTreeMap<InstanceId, usize> {
        self.steps
            .iter()
            .flat_map(|s| s.selected.iter().map(move |(id, _)| (*id, s.step_index)))
            .collect()
    }

    pub fn removal_ranks(&self) -> BTreeMap<InstanceId, RemovalRank> {
        self.steps
            .iter()
            .flat_map(|s| {
                s.selected
                    .iter()
                    .enumerate()
                    .map(move |(k, (id, _))| (*id, (s.step_index, k)))
            })
            .collect()
    }

    pub fn detection(&self, id: InstanceId) -> Option<&Detection> {
        self.steps
            .iter()
            .flat_map(|s| &s.selected)
            .find(|(i, _)| *i == id)
            .map(|(_, d)| d)
    }

    /// The image seen at the start of `step`.
    pub fn image_before<'a>(&'a self, input: &'a Appearance, step: usize) -> &'a Appearance {
        if step == 0 {
            input
        } else {
            &self.steps[step - 1].completed_image
        }
    }

    /// Last completed image, or the input when nothing was removed.
    pub fn final_image<'a>(&'a self, input: &'a Appearance) -> &'a Appearance {
        self.steps.last().map_or(input, |s| &s.completed_image)
    }

    /// Layered scene from the decomposition: each instance takes its
    /// appearance from the image in which it was selected, depth follows the
    /// removal rank, and the final completed image is the background.
    pub fn to_scene(&self, input: &Appearance) -> Result<Scene> {
        let mut instances = Vec::new();
        let mut z = 0u32;
        for step in &self.steps {
            let src = self.image_before(input, step.step_index);
            for (id, det) in &step.selected {
                instances.push(InstanceRecord::new(
                    *id,
                    det.category,
                    z,
                    det.mask.clone(),
                    crate::dataset::clean_appearance(src, &det.mask),
                ));
                z += 1;
            }
        }
        Scene::new(self.final_image(input).clone(), instances)
    }
}

fn violation(step: usize, component: &'static str, detail: impl Into<String>) -> Error {
    Error::ContractViolation {
        step,
        component,
        detail: detail.into(),
    }
}

fn check_detection(step: usize, image: &Appearance, d: &Detection) -> Result<()> {
    if d.mask.dims() != image.dims() {
        return Err(violation(step, "segmenter", format!("mask is {:?}, image is {:?}", d.mask.dims(), image.dims())));
    }
    if d.mask.is_empty() {
        return Err(violation(step, "segmenter", "empty detection mask"));
    }
    for s in [d.class_score, d.nonocc_score] {
        if !(0.0..=1.0).contains(&s) {
            return Err(violation(step, "segmenter", format!("score {s} outside [0, 1]")));
        }
    }
    Ok(())
}

/// Output pixels outside the hole must equal the input.
pub fn check_completion(step: usize, input: &Appearance, hole: &Mask, output: &Appearance) -> Result<()> {
    if output.dims() != input.dims() {
        return Err(violation(step, "completer", format!("output is {:?}, input is {:?}", output.dims(), input.dims())));
    }
    for (i, (&h, (a, b))) in hole
        .bits()
        .iter()
        .zip(input.pixels().iter().zip(output.pixels()))
        .enumerate()
    {
        if !h && a != b {
            let w = input.width() as usize;
            return Err(violation(
                step,
                "completer",
                format!("pixel ({}, {}) outside the hole changed", i % w, i / w),
            ));
        }
    }
    Ok(())
}

/// Runs the loop until nothing is detected or `max_steps` is reached.
pub fn decompose(
    image: &Appearance,
    segmenter: &mut dyn Segmenter,
    completer: &mut dyn Completer,
    cfg: &EngineConfig,
) -> Result<(DecompositionTrace, OcclusionMatrix)> {
    cfg.validate()?;
    let mut trace = DecompositionTrace::default();
    let mut removed = BTreeSet::new();
    let mut next_fresh: InstanceId = 0;
    let mut current = image.clone();

    for step in 0..cfg.max_steps {
        let ctx = StepContext {
            step,
            removed: &removed,
            selected: &[],
        };
        let mut dets = segmenter.segment(&current, &ctx)?;
        for d in &dets {
            check_detection(step, &current, d)?;
        }
        // stable sort keeps producer order among equal scores
        dets.sort_by(|a, b| b.class_score.total_cmp(&a.class_score));
        dets.truncate(cfg.max_detections);
        dets.retain(|d| d.class_score >= cfg.class_score_threshold);

        let mut kept: Vec<Detection> = Vec::with_capacity(dets.len());
        for d in dets {
            if !kept.iter().any(|k| mask_iou(&k.mask, &d.mask).expect("checked dims") > DEDUP_IOU) {
                kept.push(d);
            }
        }
        if kept.is_empty() {
            break;
        }

        let mut candidates = Vec::with_capacity(kept.len());
        let mut claimed = BTreeSet::new();
        for d in kept {
            let id = match d.source_id {
                Some(id) => {
                    if removed.contains(&id) || !claimed.insert(id) {
                        return Err(violation(step, "segmenter", format!("instance {id} reported twice")));
                    }
                    id
                }
                None => {
                    while removed.contains(&next_fresh) || claimed.contains(&next_fresh) {
                        next_fresh += 1;
                    }
                    claimed.insert(next_fresh);
                    next_fresh
                }
            };
            candidates.push((id, d));
        }
        // fresh ids must not collide with ids a later source claims
        next_fresh = next_fresh.max(claimed.iter().max().map_or(0, |m| m + 1));

        let picks = select_fully_visible(&candidates, cfg)?;
        let mut selected: Vec<(InstanceId, Detection)> = picks.into_iter().map(|i| candidates[i].clone()).collect();
        selected.sort_by(|(ia, a), (ib, b)| b.nonocc_score.total_cmp(&a.nonocc_score).then(ia.cmp(ib)));

        let masks: Vec<&Mask> = selected.iter().map(|(_, d)| &d.mask).collect();
        let (masked, hole) = carve_holes(&current, &masks)?;
        let ids: Vec<InstanceId> = selected.iter().map(|(id, _)| *id).collect();
        removed.extend(ids.iter().copied());
        let ctx = StepContext {
            step,
            removed: &removed,
            selected: &ids,
        };
        let completed = completer.complete(&masked, &hole, &ctx)?;
        check_completion(step, &masked, &hole, &completed)?;

        trace.steps.push(TraceStep {
            step_index: step,
            selected,
            hole_mask: hole,
            completed_image: completed.clone(),
        });
        current = completed;
    }

    let matrix = pairwise_from_trace(&trace.amodal_masks(), &trace.removal_ranks(), cfg.overlap_threshold)?;
    Ok((trace, matrix))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedEntry {
    pub id: InstanceId,
    #[serde(flatten)]
    pub detection: Detection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    pub step_index: usize,
    pub selected: Vec<SelectedEntry>,
    pub hole_mask: Mask,
    /// PNG file name, present when step images were dumped.
    pub completed_image: Option<String>,
}

/// JSON form of a trace plus its predicted matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceDocument {
    pub input_image: String,
    pub final_image: String,
    pub steps: Vec<StepEntry>,
    pub matrix: OcclusionMatrix,
}

pub const TRACE_FILE: &str = "trace.json";

impl TraceDocument {
    pub fn new(trace: &DecompositionTrace, matrix: &OcclusionMatrix, with_step_images: bool) -> Self {
        TraceDocument {
            input_image: "input.png".into(),
            final_image: "final.png".into(),
            steps: trace
                .steps
                .iter()
                .map(|s| StepEntry {
                    step_index: s.step_index,
                    selected: s
                        .selected
                        .iter()
                        .map(|(id, d)| SelectedEntry {
                            id: *id,
                            detection: d.clone(),
                        })
                        .collect(),
                    hole_mask: s.hole_mask.clone(),
                    completed_image: with_step_images.then(|| format!("step_{:03}.png", s.step_index)),
                })
                .collect(),
            matrix: matrix.clone(),
        }
    }

    /// Rebuilds the trace given a loader for referenced images.
    pub fn to_trace(&self, mut load: impl FnMut(&str) -> Result<Appearance>) -> Result<DecompositionTrace> {
        let n = self.steps.len();
        let mut steps = Vec::with_capacity(n);
        for (k, s) in self.steps.iter().enumerate() {
            let completed_image = match &s.completed_image {
                Some(name) => load(name)?,
                None if k + 1 == n => load(&self.final_image)?,
                None => {
                    return Err(Error::InvalidConfig(format!(
                        "step {} has no completed image; rerun with step images dumped",
                        s.step_index
                    )))
                }
            };
            steps.push(TraceStep {
                step_index: s.step_index,
                selected: s.selected.iter().map(|e| (e.id, e.detection.clone())).collect(),
                hole_mask: s.hole_mask.clone(),
                completed_image,
            });
        }
        Ok(DecompositionTrace { steps })
    }
}

/// Writes `trace.json`, `input.png`, `final.png`, and optionally one PNG per step.
pub fn write_trace(
    dir: impl AsRef<Path>,
    input: &Appearance,
    trace: &DecompositionTrace,
    matrix: &OcclusionMatrix,
    dump_steps: bool,
) -> Result<TraceDocument> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let doc = TraceDocument::new(trace, matrix, dump_steps);
    input.save_png(dir.join(&doc.input_image))?;
    trace.final_image(input).save_png(dir.join(&doc.final_image))?;
    if dump_steps {
        for (s, e) in trace.steps.iter().zip(&doc.steps) {
            s.completed_image
                .save_png(dir.join(e.completed_image.as_ref().expect("dumped")))?;
        }
    }
    std::fs::write(dir.join(TRACE_FILE), serde_json::to_string_pretty(&doc)?)?;
    Ok(doc)
}

/// Reads a trace directory written by [`write_trace`]; returns the input
/// image, the document, and the trace when its images are available.
pub fn read_trace(dir: impl AsRef<Path>) -> Result<(Appearance, TraceDocument, DecompositionTrace)> {
    let dir = dir.as_ref();
    let path = dir.join(TRACE_FILE);
    let doc: TraceDocument =
        serde_json::from_str(&std::fs::read_to_string(&path)?).map_err(|source| Error::Parse {
            path: path.display().to_string(),
            source,
        })?;
    let input = Appearance::load_png(dir.join(&doc.input_image))?;
    let trace = doc.to_trace(|name| Appearance::load_png(dir.join(name)))?;
    Ok((input, doc, trace))
}
