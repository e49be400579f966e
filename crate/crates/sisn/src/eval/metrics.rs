//! PSNR, SSIM, and MPS on 8-bit images.

use crate::data::ImageU8;
use crate::error::{Result, SisnError};

/// PSNR cap reported when the two images are identical.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 8;

/// 10·log10(255² / MSE) over all RGB pixels; identical images report the
/// 100 dB cap so aggregates stay finite.
pub fn psnr(a: &ImageU8, b: &ImageU8) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(SisnError::ShapeMismatch {
            context: "psnr".into(),
            expected: format!("{}x{}", a.width, a.height),
            got: format!("{}x{}", b.width, b.height),
        });
    }
    let mut se = 0.0f64;
    for (pa, pb) in a.pixels.iter().zip(&b.pixels) {
        let d = *pa as f64 - *pb as f64;
        se += d * d;
    }
    let mse = se / a.pixels.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// ITU-R BT.601 luma, kept in floating point.
pub fn luma(img: &ImageU8) -> Vec<f64> {
    img.pixels
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

/// Mean SSIM over all 8×8 uniform windows (stride 1) of the luma channel,
/// with the standard constants C1=(0.01·255)², C2=(0.03·255)². Window
/// statistics come from summed-area tables; the test suite cross-checks
/// against a direct per-window summation.
pub fn ssim(a: &ImageU8, b: &ImageU8) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(SisnError::ShapeMismatch {
            context: "ssim".into(),
            expected: format!("{}x{}", a.width, a.height),
            got: format!("{}x{}", b.width, b.height),
        });
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(SisnError::InvalidInput(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.width, a.height
        )));
    }
    let (w, h) = (a.width, a.height);
    let (la, lb) = (luma(a), luma(b));

    // summed-area tables for x, y, x², y², xy
    let mut tables = [(); 5].map(|_| vec![0.0f64; (w + 1) * (h + 1)]);
    for y in 0..h {
        for x in 0..w {
            let (va, vb) = (la[y * w + x], lb[y * w + x]);
            let vals = [va, vb, va * va, vb * vb, va * vb];
            for (t, v) in tables.iter_mut().zip(vals) {
                t[(y + 1) * (w + 1) + (x + 1)] = v + t[y * (w + 1) + (x + 1)]
                    + t[(y + 1) * (w + 1) + x]
                    - t[y * (w + 1) + x];
            }
        }
    }
    let window_sum = |t: &[f64], x0: usize, y0: usize| {
        let (x1, y1) = (x0 + SSIM_WINDOW, y0 + SSIM_WINDOW);
        t[y1 * (w + 1) + x1] - t[y0 * (w + 1) + x1] - t[y1 * (w + 1) + x0] + t[y0 * (w + 1) + x0]
    };

    const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
    const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
    let area = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let mu_a = window_sum(&tables[0], x0, y0) / area;
            let mu_b = window_sum(&tables[1], x0, y0) / area;
            let var_a = (window_sum(&tables[2], x0, y0) / area - mu_a * mu_a).max(0.0);
            let var_b = (window_sum(&tables[3], x0, y0) / area - mu_b * mu_b).max(0.0);
            let cov = window_sum(&tables[4], x0, y0) / area - mu_a * mu_b;
            total += (2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)
                / ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Mean perceptual score: 0.5 × (SSIM + (1 − LPIPS)).
pub fn mps(ssim_val: f64, lpips_val: f64) -> f64 {
    0.5 * (ssim_val + (1.0 - lpips_val))
}
