//! Instances, scenes, and painter's-algorithm compositing.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Appearance, Mask};

pub type InstanceId = u32;

/// The 40 NYUDv2 class names; category ids are 1-based indices into this list.
pub const CATEGORY_NAMES: [&str; 40] = [
    "wall",
    "floor",
    "cabinet",
    "bed",
    "chair",
    "sofa",
    "table",
    "door",
    "window",
    "bookshelf",
    "picture",
    "counter",
    "blinds",
    "desk",
    "shelves",
    "curtain",
    "dresser",
    "pillow",
    "mirror",
    "floor mat",
    "clothes",
    "ceiling",
    "books",
    "refrigerator",
    "television",
    "paper",
    "towel",
    "shower curtain",
    "box",
    "whiteboard",
    "person",
    "night stand",
    "toilet",
    "sink",
    "lamp",
    "bathtub",
    "bag",
    "otherstructure",
    "otherfurniture",
    "otherprop",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub struct Category(u16);

impl Category {
    /// Used for detections whose class is not known.
    pub const OTHER_PROP: Category = Category(40);

    pub fn new(id: u16) -> Result<Self> {
        if (1..=CATEGORY_NAMES.len() as u16).contains(&id) {
            Ok(Category(id))
        } else {
            Err(Error::InvalidScene(format!("category id {id} out of range 1..=40")))
        }
    }

    pub fn id(self) -> u16 {
        self.0
    }

    pub fn name(self) -> &'static str {
        CATEGORY_NAMES[self.0 as usize - 1]
    }

    pub fn all() -> impl Iterator<Item = Category> {
        (1..=CATEGORY_NAMES.len() as u16).map(Category)
    }
}

impl TryFrom<u16> for Category {
    type Error = Error;
    fn try_from(v: u16) -> Result<Self> {
        Category::new(v)
    }
}

impl From<Category> for u16 {
    fn from(c: Category) -> u16 {
        c.0
    }
}

/// One object with its full (amodal) extent and appearance.
///
/// `appearance` covers the whole canvas; only pixels under `amodal_mask` are
/// meaningful.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceRecord {
    pub id: InstanceId,
    pub category: Category,
    /// Depth rank, 0 is frontmost.
    pub z: u32,
    pub amodal_mask: Mask,
    pub visible_mask: Mask,
    pub appearance: Appearance,
}

impl InstanceRecord {
    /// Builds a record whose visible mask is provisionally the amodal mask;
    /// [`Scene::new`] recomputes it.
    pub fn new(
        id: InstanceId,
        category: Category,
        z: u32,
        amodal_mask: Mask,
        appearance: Appearance,
    ) -> Self {
        Self {
            id,
            category,
            z,
            visible_mask: amodal_mask.clone(),
            amodal_mask,
            appearance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scene {
    width: u32,
    height: u32,
    background: Appearance,
    instances: Vec<InstanceRecord>,
}

impl Scene {
    /// Validates the instance set, sorts it by `z`, and recomputes visible masks.
    pub fn new(background: Appearance, mut instances: Vec<InstanceRecord>) -> Result<Self> {
        let (width, height) = background.dims();
        let mut ids = BTreeSet::new();
        let mut zs = BTreeSet::new();
        for inst in &instances {
            if !ids.insert(inst.id) {
                return Err(Error::InvalidScene(format!("duplicate instance id {}", inst.id)));
            }
            if !zs.insert(inst.z) {
                return Err(Error::InvalidScene(format!(
                    "z rank {} used twice (instance {})",
                    inst.z, inst.id
                )));
            }
            if inst.amodal_mask.dims() != (width, height)
                || inst.appearance.dims() != (width, height)
            {
                return Err(Error::InvalidScene(format!(
                    "instance {} rasters do not match canvas {width}x{height}",
                    inst.id
                )));
            }
            if inst.amodal_mask.is_empty() {
                return Err(Error::InvalidScene(format!(
                    "instance {} has an empty amodal mask",
                    inst.id
                )));
            }
        }
        instances.sort_by_key(|i| i.z);
        let mut covered = Mask::new(width, height);
        for inst in &mut instances {
            inst.visible_mask = inst.amodal_mask.difference(&covered)?;
            covered.union_in_place(&inst.amodal_mask)?;
        }
        Ok(Self {
            width,
            height,
            background,
            instances,
        })
    }

    pub fn empty(background: Appearance) -> Self {
        Self::new(background, Vec::new()).expect("an empty scene is valid")
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn background(&self) -> &Appearance {
        &self.background
    }

    /// Instances ordered front to back.
    pub fn instances(&self) -> &[InstanceRecord] {
        &self.instances
    }

    pub fn into_parts(self) -> (Appearance, Vec<InstanceRecord>) {
        (self.background, self.instances)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn ids(&self) -> Vec<InstanceId> {
        self.instances.iter().map(|i| i.id).collect()
    }

    pub fn instance(&self, id: InstanceId) -> Option<&InstanceRecord> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// The scene without the given instances. Unknown ids are an error.
    pub fn without(&self, removed: &BTreeSet<InstanceId>) -> Result<Scene> {
        if let Some(&id) = removed.iter().find(|&&id| self.instance(id).is_none()) {
            return Err(Error::UnknownId(id));
        }
        Scene::new(
            self.background.clone(),
            self.instances
                .iter()
                .filter(|i| !removed.contains(&i.id))
                .cloned()
                .collect(),
        )
    }

    /// Same instances with `z` renumbered to `0..N` keeping relative order.
    pub fn normalized(&self) -> Scene {
        let mut s = self.clone();
        for (rank, inst) in s.instances.iter_mut().enumerate() {
            inst.z = rank as u32;
        }
        s
    }

    pub fn amodal_masks(&self) -> BTreeMap<InstanceId, Mask> {
        self.instances
            .iter()
            .map(|i| (i.id, i.amodal_mask.clone()))
            .collect()
    }
}

/// Painter's algorithm: background first, then instances back to front,
/// each writing its amodal pixels.
pub fn composite(scene: &Scene) -> Appearance {
    let mut out = scene.background.clone();
    for inst in scene.instances.iter().rev() {
        out.paint(&inst.appearance, &inst.amodal_mask)
            .expect("scene rasters share dimensions");
    }
    out
}

/// Amodal mask minus the union of all nearer amodal masks, per instance.
pub fn visible_masks(scene: &Scene) -> BTreeMap<InstanceId, Mask> {
    let mut covered = Mask::new(scene.width, scene.height);
    let mut out = BTreeMap::new();
    for inst in &scene.instances {
        out.insert(
            inst.id,
            inst.amodal_mask
                .difference(&covered)
                .expect("scene rasters share dimensions"),
        );
        covered
            .union_in_place(&inst.amodal_mask)
            .expect("scene rasters share dimensions");
    }
    out
}
