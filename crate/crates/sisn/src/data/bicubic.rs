//! Separable bicubic resampling with the a = −0.5 Keys kernel.

use crate::error::{Result, SisnError};

use super::ImageU8;

/// Keys cubic convolution kernel with a = −0.5. Weights at the four taps
/// around any sampling position sum to 1, so constants are reproduced
/// exactly.
pub fn bicubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * (t * t * t - 5.0 * t * t + 8.0 * t - 4.0)
    } else {
        0.0
    }
}

/// Four taps and weights for one output coordinate under the half-pixel
/// center convention: src = (dst + 0.5) · in/out − 0.5.
fn taps(dst: usize, in_len: usize, out_len: usize) -> ([usize; 4], [f64; 4]) {
    let scale = in_len as f64 / out_len as f64;
    let src = (dst as f64 + 0.5) * scale - 0.5;
    let base = src.floor() as isize;
    let mut idx = [0usize; 4];
    let mut wgt = [0f64; 4];
    for k in 0..4 {
        let i = base - 1 + k as isize;
        idx[k] = i.clamp(0, in_len as isize - 1) as usize; // edge clamp
        wgt[k] = bicubic_kernel(src - i as f64);
    }
    (idx, wgt)
}

/// Resizes to `out_w`×`out_h`. Both passes run in floating point; rounding
/// to u8 happens once at the end (round half up, clamp to [0, 255]).
pub fn bicubic_resize(img: &ImageU8, out_w: usize, out_h: usize) -> Result<ImageU8> {
    if out_w == 0 || out_h == 0 {
        return Err(SisnError::InvalidInput(
            "bicubic_resize: output dims must be >= 1".into(),
        ));
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    // horizontal pass: width → out_w
    let mut mid = vec![0.0f64; 3 * out_w * img.height];
    for x in 0..out_w {
        let (idx, wgt) = taps(x, img.width, out_w);
        for y in 0..img.height {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wgt[k] * img.pixels[3 * (y * img.width + idx[k]) + c] as f64;
                }
                mid[3 * (y * out_w + x) + c] = acc;
            }
        }
    }
    // vertical pass: height → out_h
    let mut out = ImageU8::filled(out_w, out_h, [0, 0, 0]);
    for y in 0..out_h {
        let (idx, wgt) = taps(y, img.height, out_h);
        for x in 0..out_w {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += wgt[k] * mid[3 * (idx[k] * out_w + x) + c];
                }
                out.pixels[3 * (y * out_w + x) + c] = (acc + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok(out)
}
