//! Occlusion average precision: how often matched instances reproduce the
//! ground-truth pairwise relation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ap::{match_indices, mean_defined, GtInstance, PredInstance, SizeBucket, IOU_THRESHOLDS};
use crate::error::{Error, Result};
use crate::order::OcclusionMatrix;

/// Pair tallies for one IoU threshold.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OapCounts {
    /// Matched pairs with a nonzero GT relation, by bucket of the occluded
    /// (back) GT instance's amodal area.
    pub occluded_pairs: BTreeMap<SizeBucket, u64>,
    pub correct: BTreeMap<SizeBucket, u64>,
    /// Matched pairs whose GT relation is 0.
    pub unrelated_pairs: u64,
    /// Of those, pairs the prediction orders anyway.
    pub false_relations: u64,
}

impl OapCounts {
    pub fn merge(&mut self, other: &OapCounts) {
        for (b, n) in &other.occluded_pairs {
            *self.occluded_pairs.entry(*b).or_default() += n;
        }
        for (b, n) in &other.correct {
            *self.correct.entry(*b).or_default() += n;
        }
        self.unrelated_pairs += other.unrelated_pairs;
        self.false_relations += other.false_relations;
    }

    fn total(map: &BTreeMap<SizeBucket, u64>, bucket: SizeBucket) -> u64 {
        match bucket {
            SizeBucket::All => map.values().sum(),
            b => map.get(&b).copied().unwrap_or(0),
        }
    }

    pub fn pairs(&self, bucket: SizeBucket) -> u64 {
        Self::total(&self.occluded_pairs, bucket)
    }

    /// Fraction of occluded pairs ordered correctly; `None` without pairs.
    pub fn oap(&self, bucket: SizeBucket) -> Option<f64> {
        let n = self.pairs(bucket);
        (n > 0).then(|| Self::total(&self.correct, bucket) as f64 / n as f64)
    }

    pub fn false_relation_rate(&self) -> Option<f64> {
        (self.unrelated_pairs > 0).then(|| self.false_relations as f64 / self.unrelated_pairs as f64)
    }
}

fn relation(w: &OcclusionMatrix, a: u32, b: u32, what: &str) -> Result<i8> {
    w.get(a, b)
        .map_err(|_| Error::InvalidMatrix(format!("{what} matrix lacks instance pair ({a}, {b})")))
}

/// Tallies pairs among instances matched at `iou_t`.
pub fn oap_counts(
    preds: &[PredInstance],
    pred_w: &OcclusionMatrix,
    gts: &[GtInstance],
    gt_w: &OcclusionMatrix,
    iou_t: f64,
) -> Result<OapCounts> {
    let matched: Vec<(usize, usize)> = match_indices(preds, gts, iou_t)?
        .into_iter()
        .enumerate()
        .filter_map(|(p, g)| g.map(|g| (p, g)))
        .collect();
    let mut c = OapCounts::default();
    for (k, &(pa, ga)) in matched.iter().enumerate() {
        for &(pb, gb) in &matched[k + 1..] {
            let truth = relation(gt_w, gts[ga].id, gts[gb].id, "ground-truth")?;
            let guess = relation(pred_w, preds[pa].id, preds[pb].id, "predicted")?;
            if truth == 0 {
                c.unrelated_pairs += 1;
                c.false_relations += (guess != 0) as u64;
                continue;
            }
            let back = if truth == 1 { gb } else { ga };
            let bucket = SizeBucket::of_area(gts[back].mask.area());
            *c.occluded_pairs.entry(bucket).or_default() += 1;
            if guess == truth {
                *c.correct.entry(bucket).or_default() += 1;
            }
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OAPReport {
    /// Mean over [`IOU_THRESHOLDS`] of the thresholds that have pairs.
    pub oap: Option<f64>,
    pub oap50: Option<f64>,
    pub oap75: Option<f64>,
    pub oap85: Option<f64>,
    pub oap_s: Option<f64>,
    pub oap_m: Option<f64>,
    pub oap_l: Option<f64>,
    /// Matched occluded pairs per bucket at IoU 0.5.
    pub pairs_s: u64,
    pub pairs_m: u64,
    pub pairs_l: u64,
    /// At IoU 0.5: share of matched GT-unrelated pairs given a nonzero relation.
    pub false_relation_rate: Option<f64>,
    pub per_threshold: Vec<Option<f64>>,
}

/// Pools pair tallies across images for every threshold.
#[derive(Debug, Clone)]
pub struct OapEvaluator {
    counts: Vec<OapCounts>,
}

impl Default for OapEvaluator {
    fn default() -> Self {
        Self {
            counts: vec![OapCounts::default(); IOU_THRESHOLDS.len()],
        }
    }
}

impl OapEvaluator {
    pub fn add(
        &mut self,
        preds: &[PredInstance],
        pred_w: &OcclusionMatrix,
        gts: &[GtInstance],
        gt_w: &OcclusionMatrix,
    ) -> Result<()> {
        for (t, &iou_t) in IOU_THRESHOLDS.iter().enumerate() {
            let c = oap_counts(preds, pred_w, gts, gt_w, iou_t)?;
            self.counts[t].merge(&c);
        }
        Ok(())
    }

    pub fn counts(&self, threshold_index: usize) -> &OapCounts {
        &self.counts[threshold_index]
    }

    pub fn report(&self) -> OAPReport {
        let per_threshold: Vec<_> = self.counts.iter().map(|c| c.oap(SizeBucket::All)).collect();
        let bucket = |b| mean_defined(self.counts.iter().map(|c| c.oap(b)));
        OAPReport {
            oap: mean_defined(per_threshold.iter().copied()),
            oap50: per_threshold[0],
            oap75: per_threshold[5],
            oap85: per_threshold[7],
            oap_s: bucket(SizeBucket::Small),
            oap_m: bucket(SizeBucket::Medium),
            oap_l: bucket(SizeBucket::Large),
            pairs_s: self.counts[0].pairs(SizeBucket::Small),
            pairs_m: self.counts[0].pairs(SizeBucket::Medium),
            pairs_l: self.counts[0].pairs(SizeBucket::Large),
            false_relation_rate: self.counts[0].false_relation_rate(),
            per_threshold,
        }
    }
}
