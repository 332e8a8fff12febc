//! Dataset directory layout:
//!
//! ```text
//! <dir>/annotations.json
//! <dir>/images/scene_000000.png          composite
//! <dir>/images/scene_000000_bg.png       background plate
//! <dir>/images/scene_000000_obj_0003.png amodal appearance, cropped to the amodal bbox
//! ```
//!
//! `annotations.json` follows COCO conventions (`categories`, `images`,
//! `annotations`) with uncompressed RLE masks. Annotations of one image are
//! listed front to back and each `pairwise_order` row is aligned with that
//! listing. The schema lives in `docs/annotations.schema.json`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::order::{absolute_order, validate, OcclusionMatrix};
use crate::raster::{bbox_from_mask, Appearance, BBox, Mask, Rle};
use crate::scene::{composite, Category, InstanceId, InstanceRecord, Scene, CATEGORY_NAMES};
use crate::synth::ground_truth_matrix;

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const IMAGES_DIR: &str = "images";
pub const FORMAT_NAME: &str = "stratum-layered";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRecord {
    /// Unique across the dataset.
    pub id: u64,
    /// Unique within the scene.
    pub instance_id: InstanceId,
    pub category: Category,
    pub z_rank: u32,
    pub layer_order: u32,
    pub amodal_bbox: BBox,
    /// `None` when the instance is fully hidden.
    pub visible_bbox: Option<BBox>,
    pub amodal_mask: Mask,
    pub visible_mask: Mask,
    /// Aligned with the record's instance listing.
    pub pairwise_order: Vec<i8>,
    pub appearance_file: String,
    /// Full-canvas appearance; black outside the amodal mask.
    pub appearance: Appearance,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetRecord {
    pub image_id: u64,
    pub file_name: String,
    pub background_file: String,
    pub composite: Appearance,
    pub background: Appearance,
    /// Front to back.
    pub instances: Vec<AnnotationRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub overlap_threshold: u64,
    pub records: Vec<DatasetRecord>,
}

/// Zeroes appearance pixels outside the mask.
pub fn clean_appearance(appearance: &Appearance, mask: &Mask) -> Appearance {
    Appearance::from_fn(appearance.width(), appearance.height(), |x, y| {
        if mask.get(x, y) {
            appearance.get(x, y)
        } else {
            [0, 0, 0]
        }
    })
}

impl DatasetRecord {
    pub fn from_scene(image_id: u64, scene: &Scene, overlap_threshold: u64) -> DatasetRecord {
        let w = ground_truth_matrix(scene, overlap_threshold);
        let order = absolute_order(&w).expect("ground-truth graphs are acyclic");
        let listing = scene.ids();
        let stem = format!("scene_{image_id:06}");
        let instances = scene
            .instances()
            .iter()
            .map(|inst| AnnotationRecord {
                id: image_id * 1000 + inst.id as u64,
                instance_id: inst.id,
                category: inst.category,
                z_rank: inst.z,
                layer_order: order.get(inst.id).expect("id in matrix"),
                amodal_bbox: bbox_from_mask(&inst.amodal_mask).expect("amodal masks are nonempty"),
                visible_bbox: bbox_from_mask(&inst.visible_mask).ok(),
                amodal_mask: inst.amodal_mask.clone(),
                visible_mask: inst.visible_mask.clone(),
                pairwise_order: listing
                    .iter()
                    .map(|&other| w.get(inst.id, other).expect("id in matrix"))
                    .collect(),
                appearance_file: format!("{stem}_obj_{:04}.png", inst.id),
                appearance: clean_appearance(&inst.appearance, &inst.amodal_mask),
            })
            .collect();
        DatasetRecord {
            image_id,
            file_name: format!("{stem}.png"),
            background_file: format!("{stem}_bg.png"),
            composite: composite(scene),
            background: scene.background().clone(),
            instances,
        }
    }

    pub fn to_scene(&self) -> Result<Scene> {
        Scene::new(
            self.background.clone(),
            self.instances
                .iter()
                .map(|a| InstanceRecord::new(a.instance_id, a.category, a.z_rank, a.amodal_mask.clone(), a.appearance.clone()))
                .collect(),
        )
    }

    /// Pairwise matrix assembled from the per-instance rows.
    pub fn matrix(&self) -> Result<OcclusionMatrix> {
        OcclusionMatrix::from_rows(
            self.instances.iter().map(|a| a.instance_id).collect(),
            self.instances.iter().map(|a| a.pairwise_order.clone()).collect(),
        )
    }

    /// Checks the annotation invariants: masks nest, rows form a valid
    /// acyclic matrix, and layer orders agree with it.
    pub fn validate(&self) -> Result<()> {
        for a in &self.instances {
            let err = |detail: String| Error::Annotation {
                annotation: a.id,
                detail,
            };
            if a.amodal_mask.is_empty() {
                return Err(err("amodal mask is empty".into()));
            }
            if !a.visible_mask.is_subset_of(&a.amodal_mask)? {
                return Err(err("visible mask is not contained in the amodal mask".into()));
            }
            if a.pairwise_order.len() != self.instances.len() {
                return Err(err(format!(
                    "pairwise_order has {} entries for {} instances",
                    a.pairwise_order.len(),
                    self.instances.len()
                )));
            }
        }
        let w = self.matrix()?;
        let report = validate(&w);
        if !report.is_valid() {
            return Err(Error::InvalidMatrix(format!(
                "image {}: {:?}",
                self.image_id, report.violations
            )));
        }
        let order = absolute_order(&w)?;
        for a in &self.instances {
            if order.get(a.instance_id) != Some(a.layer_order) {
                return Err(Error::Annotation {
                    annotation: a.id,
                    detail: format!(
                        "layer_order {} disagrees with the pairwise rows ({:?})",
                        a.layer_order,
                        order.get(a.instance_id)
                    ),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationsFile {
    info: InfoEntry,
    categories: Vec<CategoryEntry>,
    images: Vec<ImageEntry>,
    annotations: Vec<AnnotationEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InfoEntry {
    format: String,
    version: u32,
    overlap_threshold: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryEntry {
    id: u16,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageEntry {
    id: u64,
    file_name: String,
    background_file: String,
    width: u32,
    height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationEntry {
    id: u64,
    image_id: u64,
    instance_id: InstanceId,
    category_id: u16,
    /// Amodal bbox, `[x, y, w, h]`.
    bbox: [u32; 4],
    visible_bbox: Option<[u32; 4]>,
    area: u64,
    visible_area: u64,
    segmentation_visible: Rle,
    segmentation_amodal: Rle,
    layer_order: u32,
    z_rank: u32,
    pairwise_order: Vec<i8>,
    appearance_file: String,
}

fn bbox_of(a: [u32; 4]) -> BBox {
    BBox::new(a[0], a[1], a[2], a[3])
}

/// Writes `annotations.json` and all PNGs. The directory is created if needed.
pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    let images_dir = dir.join(IMAGES_DIR);
    std::fs::create_dir_all(&images_dir)?;
    let mut file = AnnotationsFile {
        info: InfoEntry {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            overlap_threshold: dataset.overlap_threshold,
        },
        categories: Category::all()
            .map(|c| CategoryEntry {
                id: c.id(),
                name: c.name().into(),
            })
            .collect(),
        images: Vec::new(),
        annotations: Vec::new(),
    };
    for rec in &dataset.records {
        rec.composite.save_png(images_dir.join(&rec.file_name))?;
        rec.background.save_png(images_dir.join(&rec.background_file))?;
        file.images.push(ImageEntry {
            id: rec.image_id,
            file_name: rec.file_name.clone(),
            background_file: rec.background_file.clone(),
            width: rec.composite.width(),
            height: rec.composite.height(),
        });
        for a in &rec.instances {
            a.appearance
                .crop(a.amodal_bbox)
                .save_png(images_dir.join(&a.appearance_file))?;
            file.annotations.push(AnnotationEntry {
                id: a.id,
                image_id: rec.image_id,
                instance_id: a.instance_id,
                category_id: a.category.id(),
                bbox: a.amodal_bbox.to_array(),
                visible_bbox: a.visible_bbox.map(|b| b.to_array()),
                area: a.amodal_mask.area(),
                visible_area: a.visible_mask.area(),
                segmentation_visible: a.visible_mask.to_rle(),
                segmentation_amodal: a.amodal_mask.to_rle(),
                layer_order: a.layer_order,
                z_rank: a.z_rank,
                pairwise_order: a.pairwise_order.clone(),
                appearance_file: a.appearance_file.clone(),
            });
        }
    }
    let json = serde_json::to_string_pretty(&file)?;
    std::fs::write(dir.join(ANNOTATIONS_FILE), json)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`], enforcing every annotation
/// invariant.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let path = dir.join(ANNOTATIONS_FILE);
    let text = std::fs::read_to_string(&path)?;
    let file: AnnotationsFile = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.display().to_string(),
        source,
    })?;
    if file.info.format != FORMAT_NAME || file.info.version != FORMAT_VERSION {
        return Err(Error::InvalidConfig(format!(
            "unsupported dataset format {} v{}",
            file.info.format, file.info.version
        )));
    }
    for c in &file.categories {
        let known = Category::new(c.id).map(|k| k.name() == c.name).unwrap_or(false);
        if !known {
            return Err(Error::InvalidConfig(format!(
                "category {} '{}' is not one of the {} known classes",
                c.id,
                c.name,
                CATEGORY_NAMES.len()
            )));
        }
    }
    let images_dir = dir.join(IMAGES_DIR);
    let mut by_image: BTreeMap<u64, Vec<&AnnotationEntry>> = BTreeMap::new();
    for a in &file.annotations {
        by_image.entry(a.image_id).or_default().push(a);
    }
    let mut records = Vec::with_capacity(file.images.len());
    for img in &file.images {
        let composite = Appearance::load_png(images_dir.join(&img.file_name))?;
        let background = Appearance::load_png(images_dir.join(&img.background_file))?;
        for (name, a) in [(&img.file_name, &composite), (&img.background_file, &background)] {
            if a.dims() != (img.width, img.height) {
                return Err(Error::InvalidConfig(format!(
                    "{name} is {:?}, expected {}x{}",
                    a.dims(),
                    img.width,
                    img.height
                )));
            }
        }
        let mut instances = Vec::new();
        for a in by_image.remove(&img.id).unwrap_or_default() {
            let err = |detail: String| Error::Annotation {
                annotation: a.id,
                detail,
            };
            let amodal_mask = a.segmentation_amodal.decode().map_err(|e| err(e.to_string()))?;
            let visible_mask = a.segmentation_visible.decode().map_err(|e| err(e.to_string()))?;
            if amodal_mask.dims() != (img.width, img.height) || visible_mask.dims() != (img.width, img.height) {
                return Err(err("mask size does not match the image".into()));
            }
            if !visible_mask.is_subset_of(&amodal_mask)? {
                return Err(err("visible mask is not contained in the amodal mask".into()));
            }
            let amodal_bbox = bbox_of(a.bbox);
            if bbox_from_mask(&amodal_mask).ok() != Some(amodal_bbox) {
                return Err(err("bbox does not bound the amodal mask".into()));
            }
            let visible_bbox = a.visible_bbox.map(bbox_of);
            if bbox_from_mask(&visible_mask).ok() != visible_bbox {
                return Err(err("visible_bbox does not bound the visible mask".into()));
            }
            let crop = Appearance::load_png(images_dir.join(&a.appearance_file))?;
            if crop.dims() != (amodal_bbox.w, amodal_bbox.h) {
                return Err(err("appearance crop does not match the bbox".into()));
            }
            let appearance = Appearance::from_fn(img.width, img.height, |x, y| {
                if amodal_mask.get(x, y) {
                    crop.get(x - amodal_bbox.x, y - amodal_bbox.y)
                } else {
                    [0, 0, 0]
                }
            });
            instances.push(AnnotationRecord {
                id: a.id,
                instance_id: a.instance_id,
                category: Category::new(a.category_id).map_err(|e| err(e.to_string()))?,
                z_rank: a.z_rank,
                layer_order: a.layer_order,
                amodal_bbox,
                visible_bbox,
                amodal_mask,
                visible_mask,
                pairwise_order: a.pairwise_order.clone(),
                appearance_file: a.appearance_file.clone(),
                appearance,
            });
        }
        let rec = DatasetRecord {
            image_id: img.id,
            file_name: img.file_name.clone(),
            background_file: img.background_file.clone(),
            composite,
            background,
            instances,
        };
        rec.validate()?;
        records.push(rec);
    }
    if let Some((image_id, anns)) = by_image.into_iter().next() {
        return Err(Error::Annotation {
            annotation: anns[0].id,
            detail: format!("refers to unknown image {image_id}"),
        });
    }
    Ok(Dataset {
        overlap_threshold: file.info.overlap_threshold,
        records,
    })
}
