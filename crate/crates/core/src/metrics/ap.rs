//! Class-agnostic mask average precision with greedy matching.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::raster::{mask_iou, Mask};
use crate::scene::InstanceId;

/// IoU thresholds 0.50:0.05:0.95.
pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

pub const SMALL_MAX_AREA: u64 = 32 * 32;
pub const MEDIUM_MAX_AREA: u64 = 96 * 96;

#[derive(Debug, Clone, PartialEq)]
pub struct PredInstance {
    pub id: InstanceId,
    pub mask: Mask,
    pub class_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub id: InstanceId,
    pub mask: Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeBucket {
    All,
    Small,
    Medium,
    Large,
}

impl SizeBucket {
    pub const SIZED: [SizeBucket; 3] = [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large];

    pub fn contains(self, area: u64) -> bool {
        match self {
            SizeBucket::All => true,
            SizeBucket::Small => area < SMALL_MAX_AREA,
            SizeBucket::Medium => (SMALL_MAX_AREA..MEDIUM_MAX_AREA).contains(&area),
            SizeBucket::Large => area >= MEDIUM_MAX_AREA,
        }
    }

    pub fn of_area(area: u64) -> SizeBucket {
        Self::SIZED.into_iter().find(|b| b.contains(area)).expect("buckets cover all areas")
    }
}

/// Pred indices sorted by descending class score; stable for ties.
fn score_order(preds: &[PredInstance]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].class_score.total_cmp(&preds[a].class_score));
    order
}

/// Greedy matching: preds in descending score order each take the unmatched
/// GT of highest IoU, provided that IoU is at least `iou_t`. Equal IoUs go to
/// the GT listed first.
pub fn match_instances(
    preds: &[PredInstance],
    gts: &[GtInstance],
    iou_t: f64,
) -> Result<BTreeMap<InstanceId, InstanceId>> {
    Ok(match_indices(preds, gts, iou_t)?
        .into_iter()
        .enumerate()
        .filter_map(|(p, g)| g.map(|g| (preds[p].id, gts[g].id)))
        .collect())
}

/// Per pred index, the matched GT index.
pub(crate) fn match_indices(preds: &[PredInstance], gts: &[GtInstance], iou_t: f64) -> Result<Vec<Option<usize>>> {
    let mut used = vec![false; gts.len()];
    let mut out = vec![None; preds.len()];
    for p in score_order(preds) {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if used[g] {
                continue;
            }
            let iou = mask_iou(&preds[p].mask, &gt.mask)?;
            if iou >= iou_t && best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, _)) = best {
            used[g] = true;
            out[p] = Some(g);
        }
    }
    Ok(out)
}

/// Ranked detections and the positive count for one (threshold, bucket),
/// pooled over any number of images.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PrAccumulator {
    /// `(score, is_true_positive)` for every counted detection.
    pub detections: Vec<(f64, bool)>,
    pub positives: u64,
}

impl PrAccumulator {
    /// Adds one image. Within a bucket, GTs outside it are ignored, as are
    /// preds matched to ignored GTs and unmatched preds whose own area lies
    /// outside the bucket.
    pub fn add(&mut self, preds: &[PredInstance], gts: &[GtInstance], iou_t: f64, bucket: SizeBucket) -> Result<()> {
        let matches = match_indices(preds, gts, iou_t)?;
        self.positives += gts.iter().filter(|g| bucket.contains(g.mask.area())).count() as u64;
        for (p, m) in matches.into_iter().enumerate() {
            let counted = match m {
                Some(g) => bucket.contains(gts[g].mask.area()),
                None => bucket.contains(preds[p].mask.area()),
            };
            if counted {
                self.detections.push((preds[p].class_score, m.is_some()));
            }
        }
        Ok(())
    }

    /// All-point interpolated area under the precision/recall curve, or
    /// `None` when there are no positives.
    pub fn average_precision(&self) -> Option<f64> {
        if self.positives == 0 {
            return None;
        }
        let mut ranked = self.detections.clone();
        // stable: insertion order breaks score ties
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut tp = 0u64;
        let mut points = Vec::with_capacity(ranked.len());
        for (k, (_, hit)) in ranked.iter().enumerate() {
            tp += *hit as u64;
            points.push((tp as f64 / self.positives as f64, tp as f64 / (k + 1) as f64));
        }
        // precision envelope from the right
        for k in (0..points.len().saturating_sub(1)).rev() {
            points[k].1 = points[k].1.max(points[k + 1].1);
        }
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for (recall, precision) in points {
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        Some(ap)
    }
}

/// AP for a single image at one threshold.
pub fn average_precision(preds: &[PredInstance], gts: &[GtInstance], iou_t: f64, bucket: SizeBucket) -> Result<Option<f64>> {
    let mut acc = PrAccumulator::default();
    acc.add(preds, gts, iou_t, bucket)?;
    Ok(acc.average_precision())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct APReport {
    /// Mean over [`IOU_THRESHOLDS`].
    pub ap: Option<f64>,
    pub ap50: Option<f64>,
    pub ap75: Option<f64>,
    pub ap_s: Option<f64>,
    pub ap_m: Option<f64>,
    pub ap_l: Option<f64>,
    /// AP at each entry of [`IOU_THRESHOLDS`].
    pub per_threshold: Vec<Option<f64>>,
}

/// Accumulates images for a full [`APReport`].
#[derive(Debug, Clone, Default)]
pub struct ApEvaluator {
    acc: BTreeMap<(usize, SizeBucket), PrAccumulator>,
}

pub(crate) fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl ApEvaluator {
    pub fn add(&mut self, preds: &[PredInstance], gts: &[GtInstance]) -> Result<()> {
        for (t, &iou_t) in IOU_THRESHOLDS.iter().enumerate() {
            for bucket in [SizeBucket::All, SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large] {
                self.acc.entry((t, bucket)).or_default().add(preds, gts, iou_t, bucket)?;
            }
        }
        Ok(())
    }

    fn at(&self, t: usize, bucket: SizeBucket) -> Option<f64> {
        self.acc.get(&(t, bucket)).and_then(PrAccumulator::average_precision)
    }

    fn over_thresholds(&self, bucket: SizeBucket) -> Option<f64> {
        mean_defined((0..IOU_THRESHOLDS.len()).map(|t| self.at(t, bucket)))
    }

    pub fn report(&self) -> APReport {
        let per_threshold: Vec<_> = (0..IOU_THRESHOLDS.len()).map(|t| self.at(t, SizeBucket::All)).collect();
        APReport {
            ap: mean_defined(per_threshold.iter().copied()),
            ap50: per_threshold[0],
            ap75: per_threshold[5],
            ap_s: self.over_thresholds(SizeBucket::Small),
            ap_m: self.over_thresholds(SizeBucket::Medium),
            ap_l: self.over_thresholds(SizeBucket::Large),
            per_threshold,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BBox;
    use proptest::prelude::*;

    fn rect(x: u32, y: u32, w: u32, h: u32) -> Mask {
        Mask::from_rect(64, 64, BBox::new(x, y, w, h))
    }

    fn gt(id: InstanceId, mask: Mask) -> GtInstance {
        GtInstance { id, mask }
    }

    fn pred(id: InstanceId, mask: Mask, class_score: f64) -> PredInstance {
        PredInstance { id, mask, class_score }
    }

    #[test]
    fn exact_predictions_match_one_to_one() {
        let gts = vec![gt(1, rect(0, 0, 10, 10)), gt(2, rect(20, 20, 5, 5))];
        let preds = vec![pred(7, rect(20, 20, 5, 5), 0.9), pred(8, rect(0, 0, 10, 10), 0.8)];
        let m = match_instances(&preds, &gts, 0.5).unwrap();
        assert_eq!(m, BTreeMap::from([(7, 2), (8, 1)]));
        for t in IOU_THRESHOLDS {
            assert_eq!(average_precision(&preds, &gts, t, SizeBucket::All).unwrap(), Some(1.0));
        }
    }

    #[test]
    fn low_iou_is_unmatched() {
        // 4x10 overlap of a 10x10 gt and a 10x10 pred shifted by 6: IoU 40/160
        let gts = vec![gt(1, rect(0, 0, 10, 10))];
        let preds = vec![pred(1, rect(6, 0, 10, 10), 1.0)];
        assert!(match_instances(&preds, &gts, 0.5).unwrap().is_empty());
        // IoU exactly 0.4
        let preds = vec![pred(1, rect(0, 0, 4, 10), 1.0)];
        assert!((mask_iou(&preds[0].mask, &gts[0].mask).unwrap() - 0.4).abs() < 1e-12);
        assert!(match_instances(&preds, &gts, 0.5).unwrap().is_empty());
        assert_eq!(match_instances(&preds, &gts, 0.4).unwrap().len(), 1);
    }

    #[test]
    fn higher_score_wins_shared_gt() {
        let gts = vec![gt(1, rect(0, 0, 10, 10))];
        let preds = vec![pred(1, rect(0, 0, 10, 9), 0.6), pred(2, rect(0, 0, 10, 8), 0.7)];
        assert_eq!(match_instances(&preds, &gts, 0.5).unwrap(), BTreeMap::from([(2, 1)]));
    }

    #[test]
    fn ap_edge_cases() {
        let gts = vec![gt(1, rect(0, 0, 10, 10)), gt(2, rect(30, 30, 10, 10))];
        assert_eq!(average_precision(&[], &gts, 0.5, SizeBucket::All).unwrap(), Some(0.0));
        assert_eq!(average_precision(&[], &[], 0.5, SizeBucket::All).unwrap(), None);
        // one TP ranked above one FP: recall 1/2 at precision 1
        let preds = vec![pred(1, rect(0, 0, 10, 10), 0.9), pred(2, rect(50, 0, 10, 10), 0.8)];
        assert_eq!(average_precision(&preds, &gts, 0.5, SizeBucket::All).unwrap(), Some(0.5));
        // bucket without GT is absent
        assert_eq!(average_precision(&preds, &gts, 0.5, SizeBucket::Large).unwrap(), None);
    }

    #[test]
    fn fp_before_tp_halves_precision() {
        let gts = vec![gt(1, rect(0, 0, 10, 10))];
        let preds = vec![pred(1, rect(0, 0, 10, 10), 0.5), pred(2, rect(40, 40, 10, 10), 0.9)];
        assert_eq!(average_precision(&preds, &gts, 0.5, SizeBucket::All).unwrap(), Some(0.5));
    }

    #[test]
    fn buckets_partition_areas() {
        assert_eq!(SizeBucket::of_area(1023), SizeBucket::Small);
        assert_eq!(SizeBucket::of_area(1024), SizeBucket::Medium);
        assert_eq!(SizeBucket::of_area(9215), SizeBucket::Medium);
        assert_eq!(SizeBucket::of_area(9216), SizeBucket::Large);
    }

    /// Maximum-cardinality-free oracle: greedy matching is unique, so just
    /// check the invariants it must satisfy.
    fn check_matching(preds: &[PredInstance], gts: &[GtInstance], t: f64) {
        let m = match_instances(preds, gts, t).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for (p, g) in &m {
            assert!(seen.insert(*g));
            let pm = &preds.iter().find(|x| x.id == *p).unwrap().mask;
            let gm = &gts.iter().find(|x| x.id == *g).unwrap().mask;
            assert!(mask_iou(pm, gm).unwrap() >= t);
        }
    }

    prop_compose! {
        fn arb_rect()(x in 0u32..50, y in 0u32..50, w in 1u32..14, h in 1u32..14) -> Mask {
            rect(x, y, w, h)
        }
    }

    proptest! {
        #[test]
        fn ap_non_increasing_in_threshold(
            g in prop::collection::vec(arb_rect(), 1..6),
            p in prop::collection::vec((arb_rect(), 0.0f64..1.0), 0..8),
        ) {
            let gts: Vec<_> = g.into_iter().enumerate().map(|(i, m)| gt(i as u32, m)).collect();
            let preds: Vec<_> = p.into_iter().enumerate().map(|(i, (m, s))| pred(i as u32, m, s)).collect();
            let mut last = f64::INFINITY;
            for t in IOU_THRESHOLDS {
                check_matching(&preds, &gts, t);
                let ap = average_precision(&preds, &gts, t, SizeBucket::All).unwrap().unwrap();
                prop_assert!((0.0..=1.0).contains(&ap));
                prop_assert!(ap <= last + 1e-12);
                last = ap;
            }
        }
    }

    #[test]
    fn evaluator_report_on_perfect_predictions() {
        let gts = vec![gt(1, rect(0, 0, 10, 10)), gt(2, rect(20, 20, 40, 40))];
        let preds: Vec<_> = gts.iter().map(|g| pred(g.id, g.mask.clone(), 1.0)).collect();
        let mut ev = ApEvaluator::default();
        ev.add(&preds, &gts).unwrap();
        let r = ev.report();
        assert_eq!((r.ap, r.ap50, r.ap75), (Some(1.0), Some(1.0), Some(1.0)));
        assert_eq!((r.ap_s, r.ap_m, r.ap_l), (Some(1.0), Some(1.0), None));
    }
}
