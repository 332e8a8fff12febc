//! Occlusion graphs: the pairwise `{-1, 0, 1}` matrix, fully-visible labels by
//! indegree, graph peeling, absolute layer order, and order inference from the
//! removal steps of a decomposition.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{overlap_area, Mask};
use crate::scene::InstanceId;

/// `entries[i][j]` is the relation of instance `i` to instance `j`:
/// `1` when `i` is in front of `j`, `-1` when `i` is occluded by `j`,
/// `0` when they do not interact. Ids are kept sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MatrixRepr", into = "MatrixRepr")]
pub struct OcclusionMatrix {
    ids: Vec<InstanceId>,
    entries: Vec<i8>,
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    ids: Vec<InstanceId>,
    rows: Vec<Vec<i8>>,
}

impl TryFrom<MatrixRepr> for OcclusionMatrix {
    type Error = Error;
    fn try_from(r: MatrixRepr) -> Result<Self> {
        OcclusionMatrix::from_rows(r.ids, r.rows)
    }
}

impl From<OcclusionMatrix> for MatrixRepr {
    fn from(m: OcclusionMatrix) -> Self {
        MatrixRepr {
            rows: m.rows(),
            ids: m.ids,
        }
    }
}

impl OcclusionMatrix {
    pub fn zeros(ids: impl IntoIterator<Item = InstanceId>) -> Self {
        let ids: Vec<_> = ids.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
        let n = ids.len();
        Self {
            ids,
            entries: vec![0; n * n],
        }
    }

    /// Builds a matrix from rows aligned with `ids` (any id order).
    pub fn from_rows(ids: Vec<InstanceId>, rows: Vec<Vec<i8>>) -> Result<Self> {
        let n = ids.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidMatrix(format!("rows are not {n}x{n}")));
        }
        if let Some(v) = rows.iter().flatten().find(|v| !(-1..=1).contains(*v)) {
            return Err(Error::InvalidMatrix(format!("entry {v} is not in {{-1, 0, 1}}")));
        }
        let mut m = OcclusionMatrix::zeros(ids.iter().copied());
        if m.ids.len() != n {
            return Err(Error::InvalidMatrix("duplicate ids".into()));
        }
        for (a, row) in ids.iter().zip(&rows) {
            for (b, &v) in ids.iter().zip(row) {
                m.set(*a, *b, v)?;
            }
        }
        Ok(m)
    }

    pub fn ids(&self) -> &[InstanceId] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn index_of(&self, id: InstanceId) -> Option<usize> {
        self.ids.binary_search(&id).ok()
    }

    fn index(&self, id: InstanceId) -> Result<usize> {
        self.index_of(id).ok_or(Error::UnknownId(id))
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> i8 {
        self.entries[i * self.ids.len() + j]
    }

    pub fn get(&self, a: InstanceId, b: InstanceId) -> Result<i8> {
        Ok(self.at(self.index(a)?, self.index(b)?))
    }

    pub fn set(&mut self, a: InstanceId, b: InstanceId, value: i8) -> Result<()> {
        if !(-1..=1).contains(&value) {
            return Err(Error::InvalidMatrix(format!("entry {value} is not in {{-1, 0, 1}}")));
        }
        let (i, j) = (self.index(a)?, self.index(b)?);
        let n = self.ids.len();
        self.entries[i * n + j] = value;
        Ok(())
    }

    /// Sets `a` in front of `b` and mirrors the entry.
    pub fn set_front(&mut self, front: InstanceId, back: InstanceId) -> Result<()> {
        self.set(front, back, 1)?;
        self.set(back, front, -1)
    }

    pub fn row(&self, id: InstanceId) -> Result<Vec<i8>> {
        let i = self.index(id)?;
        let n = self.ids.len();
        Ok(self.entries[i * n..(i + 1) * n].to_vec())
    }

    pub fn rows(&self) -> Vec<Vec<i8>> {
        self.entries
            .chunks(self.ids.len().max(1))
            .take(self.ids.len())
            .map(<[i8]>::to_vec)
            .collect()
    }

    /// True when `j` is recorded as occluding `i`, by either entry of the pair.
    fn occludes(&self, j: usize, i: usize) -> bool {
        i != j && (self.at(j, i) == 1 || self.at(i, j) == -1)
    }

    /// `(front, back)` pairs for every `+1` entry.
    pub fn front_edges(&self) -> Vec<(InstanceId, InstanceId)> {
        let n = self.ids.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if self.at(i, j) == 1 {
                    out.push((self.ids[i], self.ids[j]));
                }
            }
        }
        out
    }

    /// Submatrix over `keep` (unknown ids are an error).
    pub fn restrict(&self, keep: &BTreeSet<InstanceId>) -> Result<OcclusionMatrix> {
        let idx: Vec<usize> = keep.iter().map(|&id| self.index(id)).collect::<Result<_>>()?;
        let mut out = OcclusionMatrix::zeros(keep.iter().copied());
        let n = idx.len();
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                out.entries[a * n + b] = self.at(i, j);
            }
        }
        Ok(out)
    }
}

/// Absolute layer order per instance: 0 for fully visible, otherwise one more
/// than the highest-order occluder.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerOrderAssignment(pub BTreeMap<InstanceId, u32>);

impl LayerOrderAssignment {
    pub fn get(&self, id: InstanceId) -> Option<u32> {
        self.0.get(&id).copied()
    }

    /// Number of layers (max order + 1), 0 when empty.
    pub fn depth(&self) -> u32 {
        self.0.values().max().map_or(0, |m| m + 1)
    }

    /// Ids grouped by layer, front layer first.
    pub fn layers(&self) -> Vec<BTreeSet<InstanceId>> {
        let mut layers = vec![BTreeSet::new(); self.depth() as usize];
        for (&id, &o) in &self.0 {
            layers[o as usize].insert(id);
        }
        layers
    }
}

/// Fully-visible label per instance: `0` when nothing occludes it, else `1`.
pub fn binary_labels(w: &OcclusionMatrix) -> BTreeMap<InstanceId, u8> {
    let n = w.len();
    (0..n)
        .map(|i| {
            let occluded = (0..n).any(|j| w.occludes(j, i));
            (w.ids[i], occluded as u8)
        })
        .collect()
}

/// Removes the given vertices, leaving the remaining entries unchanged.
pub fn peel(w: &OcclusionMatrix, removed: &BTreeSet<InstanceId>) -> Result<OcclusionMatrix> {
    if let Some(&id) = removed.iter().find(|&&id| w.index_of(id).is_none()) {
        return Err(Error::UnknownId(id));
    }
    let keep = w.ids.iter().copied().filter(|id| !removed.contains(id)).collect();
    w.restrict(&keep)
}

/// Layer order by repeatedly peeling the indegree-0 vertices.
pub fn absolute_order(w: &OcclusionMatrix) -> Result<LayerOrderAssignment> {
    let n = w.len();
    let mut order = vec![None::<u32>; n];
    let mut remaining: BTreeSet<usize> = (0..n).collect();
    let mut layer = 0u32;
    while !remaining.is_empty() {
        let front: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| !remaining.iter().any(|&j| w.occludes(j, i)))
            .collect();
        if front.is_empty() {
            let start = *remaining.first().expect("nonempty");
            return Err(Error::Cycle {
                witness: cycle_through_occluders(w, start, &remaining),
            });
        }
        for i in front {
            order[i] = Some(layer);
            remaining.remove(&i);
        }
        layer += 1;
    }
    Ok(LayerOrderAssignment(
        w.ids
            .iter()
            .zip(order)
            .map(|(&id, o)| (id, o.expect("every vertex peeled")))
            .collect(),
    ))
}

/// Every vertex in `alive` has an occluder in `alive`; walking occluders must
/// revisit a vertex. Returns the cycle in front-to-back order.
fn cycle_through_occluders(w: &OcclusionMatrix, start: usize, alive: &BTreeSet<usize>) -> Vec<InstanceId> {
    let mut path = vec![start];
    let mut seen = BTreeMap::from([(start, 0usize)]);
    let mut cur = start;
    loop {
        let next = *alive
            .iter()
            .find(|&&j| w.occludes(j, cur))
            .expect("every live vertex has a live occluder");
        if let Some(&pos) = seen.get(&next) {
            let mut cyc: Vec<InstanceId> = path[pos..].iter().map(|&i| w.ids[i]).collect();
            // path walks back-to-front; report occluder first
            cyc.reverse();
            return cyc;
        }
        seen.insert(next, path.len());
        path.push(next);
        cur = next;
    }
}

/// Infers pairwise order from removal ranks: an overlapping pair is ordered by
/// which instance was removed first. Equal ranks fall back to the lower id
/// being in front. Pairs sharing fewer than `overlap_threshold` pixels get 0.
pub fn pairwise_from_trace<K: Ord>(
    amodal_masks: &BTreeMap<InstanceId, Mask>,
    step_of: &BTreeMap<InstanceId, K>,
    overlap_threshold: u64,
) -> Result<OcclusionMatrix> {
    let ids: Vec<InstanceId> = amodal_masks.keys().copied().collect();
    if let Some(&id) = ids.iter().find(|id| !step_of.contains_key(id)) {
        return Err(Error::UnknownId(id));
    }
    let mut w = OcclusionMatrix::zeros(ids.iter().copied());
    let threshold = overlap_threshold.max(1);
    for (a, &ia) in ids.iter().enumerate() {
        for &ib in &ids[a + 1..] {
            if overlap_area(&amodal_masks[&ia], &amodal_masks[&ib])? < threshold {
                continue;
            }
            // ids ascend, so `ia` wins ties
            if step_of[&ia] <= step_of[&ib] {
                w.set_front(ia, ib)?;
            } else {
                w.set_front(ib, ia)?;
            }
        }
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    NonzeroDiagonal { id: InstanceId, value: i8 },
    Antisymmetry { a: InstanceId, b: InstanceId, ab: i8, ba: i8 },
    Cycle { witness: Vec<InstanceId> },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Lists diagonal, antisymmetry, and cycle violations without failing.
pub fn validate(w: &OcclusionMatrix) -> ValidationReport {
    let n = w.len();
    let mut violations = Vec::new();
    for i in 0..n {
        if w.at(i, i) != 0 {
            violations.push(Violation::NonzeroDiagonal {
                id: w.ids[i],
                value: w.at(i, i),
            });
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let (ab, ba) = (w.at(i, j), w.at(j, i));
            if ab != -ba {
                violations.push(Violation::Antisymmetry {
                    a: w.ids[i],
                    b: w.ids[j],
                    ab,
                    ba,
                });
            }
        }
    }
    violations.extend(
        find_cycles(w)
            .into_iter()
            .map(|witness| Violation::Cycle { witness }),
    );
    ValidationReport { violations }
}

/// One witness per DFS back edge over the "is in front of" relation.
fn find_cycles(w: &OcclusionMatrix) -> Vec<Vec<InstanceId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Color {
        White,
        Grey,
        Black,
    }
    let n = w.len();
    let mut color = vec![Color::White; n];
    let mut cycles = Vec::new();
    for root in 0..n {
        if color[root] != Color::White {
            continue;
        }
        // explicit stack of (vertex, next successor to try)
        let mut stack = vec![(root, 0usize)];
        color[root] = Color::Grey;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            if *next < n {
                let u = *next;
                *next += 1;
                if u == v || !w.occludes(v, u) {
                    continue;
                }
                match color[u] {
                    Color::White => {
                        color[u] = Color::Grey;
                        stack.push((u, 0));
                    }
                    Color::Grey => {
                        let pos = stack.iter().position(|&(s, _)| s == u).expect("grey is on stack");
                        cycles.push(stack[pos..].iter().map(|&(s, _)| w.ids[s]).collect());
                    }
                    Color::Black => {}
                }
            } else {
                color[v] = Color::Black;
                stack.pop();
            }
        }
    }
    cycles
}
