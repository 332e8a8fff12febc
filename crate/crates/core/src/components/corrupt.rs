use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{Detection, Segmenter, StepContext};
use crate::error::{Error, Result};
use crate::raster::{Appearance, Mask};
use crate::synth::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionConfig {
    pub mask_erode_px: u32,
    pub mask_dilate_px: u32,
    pub label_flip_prob: f64,
    pub drop_prob: f64,
    pub seed: u64,
}

impl Default for CorruptionConfig {
    fn default() -> Self {
        Self {
            mask_erode_px: 0,
            mask_dilate_px: 0,
            label_flip_prob: 0.0,
            drop_prob: 0.0,
            seed: 0,
        }
    }
}

impl CorruptionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("label_flip_prob", self.label_flip_prob), ("drop_prob", self.drop_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("{name} {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Keeps pixels whose whole `(2k+1)²` neighborhood is set. Off-canvas counts as unset.
pub fn erode(m: &Mask, k: u32) -> Mask {
    if k == 0 {
        return m.clone();
    }
    let rows = window_pass(m, k, true, true);
    window_pass(&rows, k, false, true)
}

/// Sets pixels with any set pixel in their `(2k+1)²` neighborhood.
pub fn dilate(m: &Mask, k: u32) -> Mask {
    if k == 0 {
        return m.clone();
    }
    let rows = window_pass(m, k, true, false);
    window_pass(&rows, k, false, false)
}

/// One separable pass of a square structuring element, via running counts
/// along rows (`horizontal`) or columns. `all` selects erosion semantics.
fn window_pass(m: &Mask, k: u32, horizontal: bool, all: bool) -> Mask {
    let (w, h) = m.dims();
    let (len, lines) = if horizontal { (w, h) } else { (h, w) };
    let at = |line: u32, i: u32| if horizontal { (i, line) } else { (line, i) };
    let mut out = Mask::new(w, h);
    let k = k as i64;
    let mut prefix = vec![0u32; len as usize + 1];
    for line in 0..lines {
        for i in 0..len {
            let (x, y) = at(line, i);
            prefix[i as usize + 1] = prefix[i as usize] + m.get(x, y) as u32;
        }
        for i in 0..len as i64 {
            let lo = i - k;
            let hi = i + k;
            let (clo, chi) = (lo.max(0) as usize, (hi.min(len as i64 - 1) + 1) as usize);
            let count = prefix[chi] - prefix[clo];
            let keep = if all {
                lo >= 0 && hi < len as i64 && count as i64 == 2 * k + 1
            } else {
                count > 0
            };
            if keep {
                let (x, y) = at(line, i as u32);
                out.set(x, y, true);
            }
        }
    }
    out
}

/// Degrades another segmenter's output: morphology on masks, non-occlusion
/// label flips, and random drops. Randomness is drawn per `(seed, step, id)`.
#[derive(Debug, Clone)]
pub struct CorruptedSegmenter<S> {
    inner: S,
    cfg: CorruptionConfig,
}

impl<S: Segmenter> CorruptedSegmenter<S> {
    pub fn new(inner: S, cfg: CorruptionConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { inner, cfg })
    }

    fn corrupt(&self, step: usize, index: usize, d: Detection) -> Result<Option<Detection>> {
        let key = d.source_id.map_or(u64::MAX - index as u64, u64::from);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, &[step as u64, key]));
        // draw both coins unconditionally so streams do not depend on config
        let drop = rng.random::<f64>() < self.cfg.drop_prob;
        let flip = rng.random::<f64>() < self.cfg.label_flip_prob;
        if drop {
            return Ok(None);
        }
        let mask = dilate(&erode(&d.mask, self.cfg.mask_erode_px), self.cfg.mask_dilate_px);
        if mask.is_empty() {
            return Ok(None);
        }
        let nonocc = if flip { 1.0 - d.nonocc_score } else { d.nonocc_score };
        Detection::new(mask, d.category, d.class_score, nonocc, d.source_id).map(Some)
    }
}

impl<S: Segmenter> Segmenter for CorruptedSegmenter<S> {
    fn segment(&mut self, image: &Appearance, ctx: &StepContext<'_>) -> Result<Vec<Detection>> {
        let dets = self.inner.segment(image, ctx)?;
        let mut out = Vec::with_capacity(dets.len());
        for (i, d) in dets.into_iter().enumerate() {
            if let Some(d) = self.corrupt(ctx.step, i, d)? {
                out.push(d);
            }
        }
        Ok(out)
    }
}
