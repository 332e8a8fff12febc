use serde::{Deserialize, Serialize};

use crate::engine::{Completer, StepContext};
use crate::error::{Error, Result};
use crate::raster::{Appearance, Mask};

/// Harmonic hole filling by Gauss-Seidel relaxation.
///
/// Hole pixels are repeatedly replaced by the mean of their in-canvas
/// 4-neighbors; pixels outside the hole are fixed boundary values. Iteration
/// stops once the largest per-pixel change (on the `[0, 1]` scale) drops
/// below `tolerance` or after `max_iterations` sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InpaintCompleter {
    pub max_iterations: usize,
    pub tolerance: f64,
}

impl Default for InpaintCompleter {
    fn default() -> Self {
        Self {
            max_iterations: 4000,
            tolerance: 1e-4,
        }
    }
}

impl InpaintCompleter {
    pub fn fill(&self, image: &Appearance, hole: &Mask) -> Result<Appearance> {
        image.check_mask(hole)?;
        if hole.is_empty() {
            return Ok(image.clone());
        }
        let (w, h) = image.dims();
        let n = w as usize * h as usize;
        if hole.area() as usize == n {
            return Err(Error::InvalidConfig("cannot inpaint a hole covering the whole canvas".into()));
        }
        let mut values: Vec<[f64; 3]> = image
            .pixels()
            .iter()
            .map(|p| p.map(|c| c as f64 / 255.0))
            .collect();

        // hole pixels with their in-canvas neighbor indices
        let cells: Vec<(usize, Vec<usize>)> = hole
            .iter_set()
            .map(|(x, y)| {
                let mut nb = Vec::with_capacity(4);
                if x > 0 {
                    nb.push(y as usize * w as usize + x as usize - 1);
                }
                if x + 1 < w {
                    nb.push(y as usize * w as usize + x as usize + 1);
                }
                if y > 0 {
                    nb.push((y as usize - 1) * w as usize + x as usize);
                }
                if y + 1 < h {
                    nb.push((y as usize + 1) * w as usize + x as usize);
                }
                (y as usize * w as usize + x as usize, nb)
            })
            .collect();

        // start from the mean of the pixels bordering the hole
        let (mut sum, mut count) = ([0.0; 3], 0usize);
        for (_, nb) in &cells {
            for &q in nb {
                if !hole.bits()[q] {
                    for c in 0..3 {
                        sum[c] += values[q][c];
                    }
                    count += 1;
                }
            }
        }
        let start = sum.map(|s| s / count.max(1) as f64);
        for (p, _) in &cells {
            values[*p] = start;
        }

        for _ in 0..self.max_iterations {
            let mut max_change = 0.0f64;
            for (p, nb) in &cells {
                let mut acc = [0.0; 3];
                for &q in nb {
                    for c in 0..3 {
                        acc[c] += values[q][c];
                    }
                }
                let k = nb.len() as f64;
                for c in 0..3 {
                    let v = acc[c] / k;
                    max_change = max_change.max((v - values[*p][c]).abs());
                    values[*p][c] = v;
                }
            }
            if max_change < self.tolerance {
                break;
            }
        }

        let mut out = image.clone();
        for (p, _) in &cells {
            let v = values[*p].map(|c| (c * 255.0).round().clamp(0.0, 255.0) as u8);
            out.set((*p % w as usize) as u32, (*p / w as usize) as u32, v);
        }
        Ok(out)
    }
}

impl Completer for InpaintCompleter {
    fn complete(&mut self, image: &Appearance, hole: &Mask, _ctx: &StepContext<'_>) -> Result<Appearance> {
        self.fill(image, hole)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::BBox;

    #[test]
    fn empty_hole_is_identity() {
        let img = Appearance::from_fn(8, 8, |x, y| [x as u8 * 9, y as u8 * 7, 1]);
        assert_eq!(InpaintCompleter::default().fill(&img, &Mask::new(8, 8)).unwrap(), img);
    }

    #[test]
    fn full_canvas_hole_rejected() {
        let img = Appearance::filled(4, 4, [1, 1, 1]);
        let hole = Mask::from_fn(4, 4, |_, _| true);
        assert!(InpaintCompleter::default().fill(&img, &hole).is_err());
    }

    #[test]
    fn constant_boundary_fills_constant() {
        let mut img = Appearance::filled(20, 20, [90, 140, 30]);
        let hole = Mask::from_rect(20, 20, BBox::new(4, 5, 9, 7));
        for (x, y) in hole.iter_set() {
            img.set(x, y, [128, 128, 128]);
        }
        let out = InpaintCompleter::default().fill(&img, &hole).unwrap();
        assert_eq!(out, Appearance::filled(20, 20, [90, 140, 30]));
    }

    /// Dense Gaussian elimination on the discrete Laplace system for one channel.
    fn laplace_oracle(boundary: &Appearance, hole: &Mask, channel: usize) -> Vec<f64> {
        let (w, h) = hole.dims();
        let cells: Vec<(u32, u32)> = hole.iter_set().collect();
        let index = |x: u32, y: u32| cells.iter().position(|&c| c == (x, y));
        let n = cells.len();
        let mut a = vec![vec![0.0f64; n + 1]; n];
        for (r, &(x, y)) in cells.iter().enumerate() {
            let nbs: Vec<(u32, u32)> = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
                .iter()
                .map(|(dx, dy)| (x as i64 + dx, y as i64 + dy))
                .filter(|&(nx, ny)| nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64)
                .map(|(nx, ny)| (nx as u32, ny as u32))
                .collect();
            a[r][r] = nbs.len() as f64;
            for (nx, ny) in nbs {
                match index(nx, ny) {
                    Some(c) => a[r][c] -= 1.0,
                    None => a[r][n] += boundary.get(nx, ny)[channel] as f64 / 255.0,
                }
            }
        }
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            for r in 0..n {
                if r != col {
                    let f = a[r][col] / a[col][col];
                    let pivot_row = a[col].clone();
                    for (x, p) in a[r][col..].iter_mut().zip(&pivot_row[col..]) {
                        *x -= f * p;
                    }
                }
            }
        }
        (0..n).map(|r| a[r][n] / a[r][r]).collect()
    }

    #[test]
    fn two_half_planes_match_laplace_solve() {
        let (w, h) = (14, 8);
        let img = Appearance::from_fn(w, h, |x, _| if x < 7 { [20, 20, 20] } else { [220, 120, 20] });
        let hole = Mask::from_rect(w, h, BBox::new(3, 1, 8, 6));
        let mut carved = img.clone();
        for (x, y) in hole.iter_set() {
            carved.set(x, y, [128, 128, 128]);
        }
        let out = InpaintCompleter { max_iterations: 20000, tolerance: 1e-9 }.fill(&carved, &hole).unwrap();
        for c in 0..3 {
            let exact = laplace_oracle(&carved, &hole, c);
            for (&(x, y), v) in hole.iter_set().collect::<Vec<_>>().iter().zip(exact) {
                let got = out.get(x, y)[c] as f64;
                assert!((got - v * 255.0).abs() <= 0.5 + 1e-6, "({x},{y}) c{c}: {got} vs {}", v * 255.0);
            }
        }
        // red channel increases left to right along every hole row
        for y in 1..7 {
            let row: Vec<u8> = (3..11).map(|x| out.get(x, y)[0]).collect();
            assert!(row.windows(2).all(|p| p[0] <= p[1]), "{row:?}");
        }
    }

    #[test]
    fn fill_obeys_maximum_principle() {
        let img = Appearance::from_fn(24, 24, |x, y| [(x * 10) as u8, (y * 9) as u8, ((x + y) * 5) as u8]);
        let hole = Mask::from_fn(24, 24, |x, y| (5..19).contains(&x) && (6..17).contains(&y) && (x + y) % 7 != 0);
        let out = InpaintCompleter::default().fill(&img, &hole).unwrap();
        let boundary: Vec<[u8; 3]> = (0..24u32)
            .flat_map(|y| (0..24u32).map(move |x| (x, y)))
            .filter(|&(x, y)| !hole.get(x, y))
            .filter(|&(x, y)| {
                [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)]
                    .iter()
                    .any(|(dx, dy)| hole.get_signed(x as i64 + dx, y as i64 + dy))
            })
            .map(|(x, y)| img.get(x, y))
            .collect();
        for c in 0..3 {
            let lo = boundary.iter().map(|p| p[c]).min().unwrap();
            let hi = boundary.iter().map(|p| p[c]).max().unwrap();
            for (x, y) in hole.iter_set() {
                let v = out.get(x, y)[c];
                assert!(lo <= v && v <= hi);
            }
        }
        for (i, (&hb, (a, b))) in hole.bits().iter().zip(img.pixels().iter().zip(out.pixels())).enumerate() {
            if !hb {
                assert_eq!(a, b, "pixel {i}");
            }
        }
    }
}
