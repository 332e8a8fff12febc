use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::engine::{Detection, Segmenter, StepContext};
use crate::error::Result;
use crate::raster::{Appearance, Mask, Rgb};
use crate::scene::Category;

/// Segments flat-colored sprites without ground truth.
///
/// Regions grow over 4-connected neighbors whose colors differ by at most
/// `tolerance` in every channel. The region touching the canvas border the
/// most is taken as background. Each other region of at least `min_area`
/// pixels becomes a detection whose non-occlusion score is one minus the
/// fraction of its boundary that touches other regions and nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeuristicSegmenter {
    pub tolerance: u8,
    pub min_area: u64,
}

impl Default for HeuristicSegmenter {
    fn default() -> Self {
        Self {
            tolerance: 12,
            min_area: 16,
        }
    }
}

const NEIGHBORS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

fn close(a: Rgb, b: Rgb, tol: u8) -> bool {
    a.iter().zip(&b).all(|(&x, &y)| x.abs_diff(y) <= tol)
}

/// Region label per pixel plus region count.
pub fn label_regions(image: &Appearance, tolerance: u8) -> (Vec<u32>, usize) {
    let (w, h) = image.dims();
    let mut labels = vec![u32::MAX; w as usize * h as usize];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if labels[start] != u32::MAX {
            continue;
        }
        labels[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (x, y) = ((p % w as usize) as i64, (p / w as usize) as i64);
            let c = image.get(x as u32, y as u32);
            for (dx, dy) in NEIGHBORS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let q = ny as usize * w as usize + nx as usize;
                if labels[q] == u32::MAX && close(c, image.get(nx as u32, ny as u32), tolerance) {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    (labels, next as usize)
}

impl HeuristicSegmenter {
    pub fn detect(&self, image: &Appearance) -> Result<Vec<Detection>> {
        let (w, h) = image.dims();
        let (labels, n) = label_regions(image, self.tolerance);
        let mut area = vec![0u64; n];
        let mut border = vec![0u64; n];
        for (i, &l) in labels.iter().enumerate() {
            area[l as usize] += 1;
            let (x, y) = (i % w as usize, i / w as usize);
            if x == 0 || y == 0 || x + 1 == w as usize || y + 1 == h as usize {
                border[l as usize] += 1;
            }
        }
        let background = (0..n)
            .max_by_key(|&l| (border[l], area[l], std::cmp::Reverse(l)))
            .expect("at least one region");

        let mut boundary = vec![0u64; n];
        let mut shared = vec![0u64; n];
        for (i, &l) in labels.iter().enumerate() {
            let (x, y) = ((i % w as usize) as i64, (i / w as usize) as i64);
            let (mut on_edge, mut touches_bg, mut touches_other) = (false, false, false);
            for (dx, dy) in NEIGHBORS {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    on_edge = true;
                    continue;
                }
                let nl = labels[ny as usize * w as usize + nx as usize];
                if nl == background as u32 && nl != l {
                    touches_bg = true;
                } else if nl != l {
                    touches_other = true;
                }
            }
            if on_edge || touches_bg || touches_other {
                boundary[l as usize] += 1;
            }
            if touches_other && !touches_bg && !on_edge {
                shared[l as usize] += 1;
            }
        }

        let mut out = Vec::new();
        for l in 0..n {
            if l == background || area[l] < self.min_area {
                continue;
            }
            let mask = Mask::from_bits(w, h, labels.iter().map(|&x| x as usize == l).collect())?;
            let nonocc = if boundary[l] == 0 {
                1.0
            } else {
                1.0 - shared[l] as f64 / boundary[l] as f64
            };
            out.push(Detection::new(mask, Category::OTHER_PROP, 1.0, nonocc, None)?);
        }
        Ok(out)
    }
}

impl Segmenter for HeuristicSegmenter {
    fn segment(&mut self, image: &Appearance, _ctx: &StepContext<'_>) -> Result<Vec<Detection>> {
        self.detect(image)
    }
}
