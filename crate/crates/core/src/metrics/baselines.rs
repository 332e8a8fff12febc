//! Heuristic depth orderings over instance masks. Each one decides every
//! overlapping pair independently; pairs the heuristic cannot separate get 0.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::order::OcclusionMatrix;
use crate::raster::{mask_iou, overlap_area, Mask};
use crate::scene::InstanceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaConvention {
    LargerFront,
    LargerBehind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderingAlgorithm {
    Area,
    YAxis,
    IouArea,
    LayerOrder,
}

impl OrderingAlgorithm {
    pub const ALL: [OrderingAlgorithm; 4] = [Self::Area, Self::YAxis, Self::IouArea, Self::LayerOrder];

    pub fn label(self) -> &'static str {
        match self {
            Self::Area => "Area",
            Self::YAxis => "Y-axis",
            Self::IouArea => "IoU Area",
            Self::LayerOrder => "layer order",
        }
    }
}

/// Orders each overlapping pair with `cmp(a, b)`: `Greater` puts `a` in front.
fn pairwise_by<K>(
    amodal: &BTreeMap<InstanceId, Mask>,
    overlap_threshold: u64,
    key: impl Fn(InstanceId, &Mask) -> Result<K>,
    cmp: impl Fn(&K, &K) -> Ordering,
) -> Result<OcclusionMatrix> {
    let keys: Vec<(InstanceId, K)> = amodal
        .iter()
        .map(|(&id, m)| key(id, m).map(|k| (id, k)))
        .collect::<Result<_>>()?;
    let mut w = OcclusionMatrix::zeros(amodal.keys().copied());
    let threshold = overlap_threshold.max(1);
    for (i, (a, ka)) in keys.iter().enumerate() {
        for (b, kb) in &keys[i + 1..] {
            if overlap_area(&amodal[a], &amodal[b])? < threshold {
                continue;
            }
            match cmp(ka, kb) {
                Ordering::Greater => w.set_front(*a, *b)?,
                Ordering::Less => w.set_front(*b, *a)?,
                Ordering::Equal => {}
            }
        }
    }
    Ok(w)
}

pub fn order_by_area(
    amodal: &BTreeMap<InstanceId, Mask>,
    convention: AreaConvention,
    overlap_threshold: u64,
) -> Result<OcclusionMatrix> {
    pairwise_by(
        amodal,
        overlap_threshold,
        |_, m| Ok(m.area()),
        |a, b| match convention {
            AreaConvention::LargerFront => a.cmp(b),
            AreaConvention::LargerBehind => b.cmp(a),
        },
    )
}

/// The instance reaching lower on the canvas (larger maximum y) is in front.
pub fn order_by_yaxis(amodal: &BTreeMap<InstanceId, Mask>, overlap_threshold: u64) -> Result<OcclusionMatrix> {
    pairwise_by(
        amodal,
        overlap_threshold,
        |_, m| m.max_y().ok_or(Error::EmptyMask),
        |a, b| a.cmp(b),
    )
}

/// The instance whose visible mask covers more of its amodal mask (higher
/// IoU between the two) is in front.
pub fn order_by_iou_area(
    visible: &BTreeMap<InstanceId, Mask>,
    amodal: &BTreeMap<InstanceId, Mask>,
    overlap_threshold: u64,
) -> Result<OcclusionMatrix> {
    pairwise_by(
        amodal,
        overlap_threshold,
        |id, m| match visible.get(&id) {
            Some(v) => mask_iou(v, m),
            None => Err(Error::UnknownId(id)),
        },
        |a, b| a.total_cmp(b),
    )
}
