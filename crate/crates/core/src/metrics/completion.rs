use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Appearance;

pub const SSIM_WINDOW: u32 = 8;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const PSNR_CAP_DB: f64 = 100.0;
/// Below this RMSE the PSNR is reported as [`PSNR_CAP_DB`].
pub const PSNR_RMSE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompletionReport {
    pub rmse: f64,
    pub ssim: f64,
    pub psnr: f64,
}

fn check(a: &Appearance, b: &Appearance) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            found: b.dims(),
        });
    }
    Ok(())
}

/// Root mean squared error over all channels, values scaled to `[0, 1]`.
pub fn rmse(pred: &Appearance, gt: &Appearance) -> Result<f64> {
    check(pred, gt)?;
    rmse_unit(&pred.to_unit(), &gt.to_unit())
}

/// RMSE of two equally long sample vectors already on the `[0, 1]` scale.
pub fn rmse_unit(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: (a.len() as u32, 1),
            found: (b.len() as u32, 1),
        });
    }
    let sse: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok((sse / a.len().max(1) as f64).sqrt())
}

pub fn psnr_from_rmse(rmse: f64) -> f64 {
    if rmse < PSNR_RMSE_FLOOR {
        PSNR_CAP_DB
    } else {
        (20.0 * (1.0 / rmse).log10()).min(PSNR_CAP_DB)
    }
}

pub fn psnr(pred: &Appearance, gt: &Appearance) -> Result<f64> {
    rmse(pred, gt).map(psnr_from_rmse)
}

/// Summed-area table with a zero border row and column.
fn integral(w: usize, h: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut s = vec![0.0; (w + 1) * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += f(x, y);
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

/// Mean local SSIM over every `8×8` window position (stride 1), computed per
/// channel and averaged. Window statistics use uniform weights and
/// population variance. Images smaller than the window use a window clipped
/// to the image size.
pub fn ssim(pred: &Appearance, gt: &Appearance) -> Result<f64> {
    check(pred, gt)?;
    let (w, h) = (pred.width() as usize, pred.height() as usize);
    if w == 0 || h == 0 {
        return Ok(1.0);
    }
    let (ww, wh) = (w.min(SSIM_WINDOW as usize), h.min(SSIM_WINDOW as usize));
    let n = (ww * wh) as f64;
    let (a, b) = (pred.to_unit(), gt.to_unit());
    let mut total = 0.0;
    for c in 0..3 {
        let px = |v: &[f64], x: usize, y: usize| v[(y * w + x) * 3 + c];
        let sa = integral(w, h, |x, y| px(&a, x, y));
        let sb = integral(w, h, |x, y| px(&b, x, y));
        let saa = integral(w, h, |x, y| px(&a, x, y).powi(2));
        let sbb = integral(w, h, |x, y| px(&b, x, y).powi(2));
        let sab = integral(w, h, |x, y| px(&a, x, y) * px(&b, x, y));
        let window = |s: &[f64], x: usize, y: usize| {
            let i = |xx: usize, yy: usize| s[yy * (w + 1) + xx];
            i(x + ww, y + wh) - i(x, y + wh) - i(x + ww, y) + i(x, y)
        };
        let mut sum = 0.0;
        for y in 0..=h - wh {
            for x in 0..=w - ww {
                let mu_a = window(&sa, x, y) / n;
                let mu_b = window(&sb, x, y) / n;
                let var_a = window(&saa, x, y) / n - mu_a * mu_a;
                let var_b = window(&sbb, x, y) / n - mu_b * mu_b;
                let cov = window(&sab, x, y) / n - mu_a * mu_b;
                sum += ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2));
            }
        }
        total += sum / ((w - ww + 1) * (h - wh + 1)) as f64;
    }
    Ok(total / 3.0)
}

pub fn completion_metrics(pred: &Appearance, gt: &Appearance) -> Result<CompletionReport> {
    let rmse = rmse(pred, gt)?;
    Ok(CompletionReport {
        rmse,
        ssim: ssim(pred, gt)?,
        psnr: psnr_from_rmse(rmse),
    })
}
