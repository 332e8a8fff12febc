//! Seeded sprite-scene generator with exact occlusion ground truth.
//!
//! Every sprite is rendered in isolation over the full canvas, so amodal
//! masks and appearances are known independently of occlusion. Scenes are a
//! pure function of the config (including its seed).

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::order::{absolute_order, OcclusionMatrix};
use crate::raster::{mask_iou, overlap_area, Appearance, Mask, Rgb};
use crate::scene::{composite, Category, InstanceId, InstanceRecord, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
    ConvexPolygon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundStyle {
    Flat,
    /// Vertical linear ramp between two colors.
    Gradient,
}

/// How depth ranks are assigned to placed sprites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMode {
    Random,
    /// Sprites reaching lower on the canvas are nearer; lowest rows are distinct.
    BottomFront,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub width: u32,
    pub height: u32,
    pub min_objects: usize,
    pub max_objects: usize,
    pub shapes: Vec<ShapeKind>,
    /// Inclusive sprite extent range in pixels.
    pub size_range: (u32, u32),
    /// Sprite colors are drawn from here when nonempty, otherwise generated.
    pub palette: Vec<Rgb>,
    pub background: BackgroundStyle,
    /// Per-pixel uniform jitter of sprite colors, in 8-bit levels.
    pub texture_noise: u8,
    pub overlap_threshold: u64,
    pub depth_mode: DepthMode,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            min_objects: 5,
            max_objects: 12,
            shapes: vec![ShapeKind::Rectangle, ShapeKind::Ellipse, ShapeKind::ConvexPolygon],
            size_range: (32, 112),
            palette: Vec::new(),
            background: BackgroundStyle::Flat,
            texture_noise: 0,
            overlap_threshold: 1,
            depth_mode: DepthMode::Random,
            seed: 0,
        }
    }
}

/// Smallest amodal area accepted for a sprite.
const MIN_SPRITE_AREA: u64 = 16;
/// Minimum per-channel (Chebyshev) distance between any two scene colors.
const MIN_COLOR_DISTANCE: i32 = 40;
const ATTEMPTS_PER_SPRITE: usize = 200;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.width == 0 || self.height == 0 {
            return bad("canvas dimensions must be positive".into());
        }
        if self.min_objects < 1 || self.min_objects > self.max_objects {
            return bad(format!(
                "need 1 <= min_objects <= max_objects, got {}..={}",
                self.min_objects, self.max_objects
            ));
        }
        let (lo, hi) = self.size_range;
        if lo < 2 || lo > hi || hi > self.width.min(self.height) {
            return bad(format!(
                "size range {lo}..={hi} must satisfy 2 <= lo <= hi <= {}",
                self.width.min(self.height)
            ));
        }
        if self.shapes.is_empty() {
            return bad("at least one sprite shape is required".into());
        }
        if !self.palette.is_empty() && self.palette.len() < self.max_objects {
            return bad(format!(
                "palette has {} colors but up to {} sprites need distinct colors",
                self.palette.len(),
                self.max_objects
            ));
        }
        Ok(())
    }

    /// Config for the `index`-th scene of a dataset.
    pub fn for_scene(&self, index: u64) -> SynthConfig {
        SynthConfig {
            seed: derive_seed(self.seed, &[index]),
            ..self.clone()
        }
    }
}

/// Mixes a base seed with a path of integers (splitmix64 finalizer per step).
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    path.iter().fold(mix(base), |acc, &p| mix(acc ^ mix(p)))
}

fn color_distance(a: Rgb, b: Rgb) -> i32 {
    a.iter()
        .zip(&b)
        .map(|(&x, &y)| (x as i32 - y as i32).abs())
        .max()
        .unwrap_or(0)
}

fn random_color(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.random(), rng.random(), rng.random()]
}

fn rasterize(kind: ShapeKind, w: u32, h: u32, rng: &mut ChaCha8Rng, (lo, hi): (u32, u32)) -> Mask {
    let sw = rng.random_range(lo..=hi);
    let sh = rng.random_range(lo..=hi);
    let x0 = rng.random_range(0..=w - sw) as f64;
    let y0 = rng.random_range(0..=h - sh) as f64;
    let (cx, cy) = (x0 + sw as f64 / 2.0, y0 + sh as f64 / 2.0);
    let (rx, ry) = (sw as f64 / 2.0, sh as f64 / 2.0);
    match kind {
        ShapeKind::Rectangle => Mask::from_fn(w, h, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            px > x0 && px < x0 + sw as f64 && py > y0 && py < y0 + sh as f64
        }),
        ShapeKind::Ellipse => Mask::from_fn(w, h, |x, y| {
            let dx = (x as f64 + 0.5 - cx) / rx;
            let dy = (y as f64 + 0.5 - cy) / ry;
            dx * dx + dy * dy <= 1.0
        }),
        ShapeKind::ConvexPolygon => {
            let k = rng.random_range(3..=7usize);
            let mut angles: Vec<f64> = (0..k)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            angles.sort_by(f64::total_cmp);
            let verts: Vec<(f64, f64)> = angles
                .iter()
                .map(|a| (cx + rx * a.cos(), cy + ry * a.sin()))
                .collect();
            // points on an ellipse in angular order form a convex polygon
            Mask::from_fn(w, h, |x, y| {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                (0..k).all(|i| {
                    let (ax, ay) = verts[i];
                    let (bx, by) = verts[(i + 1) % k];
                    (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= 0.0
                })
            })
        }
    }
}

fn make_background(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Appearance, Vec<Rgb>) {
    match cfg.background {
        BackgroundStyle::Flat => {
            let c = random_color(rng);
            (Appearance::filled(cfg.width, cfg.height, c), vec![c])
        }
        BackgroundStyle::Gradient => {
            let top = random_color(rng);
            let bottom = random_color(rng);
            let denom = (cfg.height.max(2) - 1) as f64;
            let lerp = |t: f64| -> Rgb {
                std::array::from_fn(|c| {
                    (top[c] as f64 + (bottom[c] as f64 - top[c] as f64) * t).round() as u8
                })
            };
            let img = Appearance::from_fn(cfg.width, cfg.height, |_, y| lerp(y as f64 / denom));
            (img, vec![top, lerp(0.25), lerp(0.5), lerp(0.75), bottom])
        }
    }
}

fn pick_colors(cfg: &SynthConfig, n: usize, reserved: &[Rgb], rng: &mut ChaCha8Rng) -> Result<Vec<Rgb>> {
    if !cfg.palette.is_empty() {
        let mut p = cfg.palette.clone();
        p.shuffle(rng);
        p.truncate(n);
        return Ok(p);
    }
    let mut out: Vec<Rgb> = Vec::with_capacity(n);
    for _ in 0..n * 500 {
        if out.len() == n {
            break;
        }
        let c = random_color(rng);
        if reserved
            .iter()
            .chain(&out)
            .all(|&o| color_distance(o, c) >= MIN_COLOR_DISTANCE)
        {
            out.push(c);
        }
    }
    if out.len() < n {
        return Err(Error::InvalidConfig(format!("could not find {n} distinct sprite colors")));
    }
    Ok(out)
}

/// Generates one scene. Deterministic in `cfg`.
pub fn generate_scene(cfg: &SynthConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let (background, bg_colors) = make_background(cfg, &mut rng);
    let colors = pick_colors(cfg, n, &bg_colors, &mut rng)?;

    let mut masks: Vec<Mask> = Vec::with_capacity(n);
    let mut bottoms = BTreeSet::new();
    let mut attempts = 0;
    while masks.len() < n {
        if attempts >= ATTEMPTS_PER_SPRITE * n {
            return Err(Error::Placement { wanted: n, attempts });
        }
        attempts += 1;
        let kind = cfg.shapes[rng.random_range(0..cfg.shapes.len())];
        let m = rasterize(kind, cfg.width, cfg.height, &mut rng, cfg.size_range);
        if m.area() < MIN_SPRITE_AREA {
            continue;
        }
        if cfg.depth_mode == DepthMode::BottomFront {
            let bottom = m.max_y().expect("nonempty");
            if !bottoms.insert(bottom) {
                continue;
            }
        }
        masks.push(m);
    }

    let mut ranks: Vec<u32> = (0..n as u32).collect();
    match cfg.depth_mode {
        DepthMode::Random => ranks.shuffle(&mut rng),
        DepthMode::BottomFront => {
            let mut by_bottom: Vec<usize> = (0..n).collect();
            by_bottom.sort_by_key(|&i| std::cmp::Reverse(masks[i].max_y()));
            for (rank, &i) in by_bottom.iter().enumerate() {
                ranks[i] = rank as u32;
            }
        }
    }

    let mut instances = Vec::with_capacity(n);
    for (i, mask) in masks.into_iter().enumerate() {
        let base = colors[i];
        let eps = cfg.texture_noise as i32;
        let appearance = Appearance::from_fn(cfg.width, cfg.height, |x, y| {
            if !mask.get(x, y) {
                return [0, 0, 0];
            }
            if eps == 0 {
                return base;
            }
            std::array::from_fn(|c| {
                (base[c] as i32 + rng.random_range(-eps..=eps)).clamp(0, 255) as u8
            })
        });
        // wall, floor, and ceiling are merged into the background
        let category = loop {
            let c = Category::new(rng.random_range(1..=40u16))?;
            if !matches!(c.name(), "wall" | "floor" | "ceiling") {
                break c;
            }
        };
        instances.push(InstanceRecord::new(i as InstanceId, category, ranks[i], mask, appearance));
    }
    Scene::new(background, instances)
}

/// `W[i][j] = 1` iff the amodal masks share at least `overlap_threshold`
/// pixels and `i` is nearer than `j`.
pub fn ground_truth_matrix(scene: &Scene, overlap_threshold: u64) -> OcclusionMatrix {
    let threshold = overlap_threshold.max(1);
    let mut w = OcclusionMatrix::zeros(scene.ids());
    let inst = scene.instances();
    for (a, ia) in inst.iter().enumerate() {
        for ib in &inst[a + 1..] {
            let o = overlap_area(&ia.amodal_mask, &ib.amodal_mask).expect("scene dims agree");
            if o >= threshold {
                // instances are sorted front to back
                w.set_front(ia.id, ib.id).expect("ids are in the matrix");
            }
        }
    }
    w
}

/// Sets of ids removed per step when peeling fully visible instances.
pub fn peel_plan(scene: &Scene, overlap_threshold: u64) -> Vec<BTreeSet<InstanceId>> {
    absolute_order(&ground_truth_matrix(scene, overlap_threshold))
        .expect("ground-truth graphs are acyclic")
        .layers()
}

/// Image `k` composites the scene without everything removed in steps `< k`.
/// Returns `plan.len() + 1` images; the first is the original composite.
pub fn layered_images(scene: &Scene, removal_plan: &[BTreeSet<InstanceId>]) -> Result<Vec<Appearance>> {
    let mut removed = BTreeSet::new();
    for set in removal_plan {
        for &id in set {
            if scene.instance(id).is_none() {
                return Err(Error::UnknownId(id));
            }
            if !removed.insert(id) {
                return Err(Error::InvalidPlan(format!("instance {id} is removed twice")));
            }
        }
    }
    let mut out = vec![composite(scene)];
    let mut removed = BTreeSet::new();
    for set in removal_plan {
        removed.extend(set.iter().copied());
        out.push(composite(&scene.without(&removed)?));
    }
    Ok(out)
}

/// Two readings of "occlusion level", kept apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcclusionStats {
    /// Mean over instances of the hidden fraction `1 - |visible| / |amodal|`.
    pub mean_occluded_fraction: f64,
    /// Mean amodal IoU over overlapping pairs; `None` without overlaps.
    pub mean_pairwise_iou: Option<f64>,
    pub overlapping_pairs: usize,
}

pub fn occlusion_stats(scene: &Scene) -> OcclusionStats {
    let inst = scene.instances();
    let mean_occluded_fraction = if inst.is_empty() {
        0.0
    } else {
        inst.iter()
            .map(|i| 1.0 - i.visible_mask.area() as f64 / i.amodal_mask.area() as f64)
            .sum::<f64>()
            / inst.len() as f64
    };
    let mut ious = Vec::new();
    for (a, ia) in inst.iter().enumerate() {
        for ib in &inst[a + 1..] {
            let iou = mask_iou(&ia.amodal_mask, &ib.amodal_mask).expect("scene dims agree");
            if iou > 0.0 {
                ious.push(iou);
            }
        }
    }
    OcclusionStats {
        mean_occluded_fraction,
        mean_pairwise_iou: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
        overlapping_pairs: ious.len(),
    }
}

/// Histogram of per-instance hidden fractions over `bins` equal-width bins on `[0, 1]`.
pub fn occlusion_histogram<'a>(scenes: impl IntoIterator<Item = &'a Scene>, bins: usize) -> Vec<u64> {
    let mut hist = vec![0u64; bins.max(1)];
    for scene in scenes {
        for i in scene.instances() {
            let f = 1.0 - i.visible_mask.area() as f64 / i.amodal_mask.area() as f64;
            let b = ((f * hist.len() as f64) as usize).min(hist.len() - 1);
            hist[b] += 1;
        }
    }
    hist
}

/// Instance count per category.
pub fn category_counts<'a>(scenes: impl IntoIterator<Item = &'a Scene>) -> BTreeMap<Category, u64> {
    let mut out = BTreeMap::new();
    for s in scenes {
        for i in s.instances() {
            *out.entry(i.category).or_insert(0) += 1;
        }
    }
    out
}
