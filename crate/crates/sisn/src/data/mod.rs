//! Image I/O, bicubic degradation, augmentation, and tensor conversion.

mod bicubic;
mod manifest;

pub use bicubic::{bicubic_kernel, bicubic_resize};
pub use manifest::{build_manifest, Manifest, ManifestEntry, Split};

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SisnError};
use crate::tensor::Tensor;

/// 8-bit RGB image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageU8 {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>, // 3 * width * height
}

impl ImageU8 {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(SisnError::InvalidInput("image dims must be >= 1".into()));
        }
        if pixels.len() != 3 * width * height {
            return Err(SisnError::InvalidInput(format!(
                "pixel buffer length {} does not match 3*{width}*{height}",
                pixels.len()
            )));
        }
        Ok(ImageU8 { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        ImageU8 { width, height, pixels }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = 3 * (y * self.width + x);
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<ImageU8> {
        if x0 + w > self.width || y0 + h > self.height || w == 0 || h == 0 {
            return Err(SisnError::InvalidInput(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds image {}x{}",
                self.width, self.height
            )));
        }
        let mut out = ImageU8::filled(w, h, [0, 0, 0]);
        for y in 0..h {
            let src = 3 * ((y0 + y) * self.width + x0);
            let dst = 3 * (y * w);
            out.pixels[dst..dst + 3 * w].copy_from_slice(&self.pixels[src..src + 3 * w]);
        }
        Ok(out)
    }
}

/// Aligned LR/HR training pair. HR dims are exact multiples of the LR dims.
#[derive(Debug, Clone)]
pub struct SamplePair {
    pub hr: ImageU8,
    pub lr: ImageU8,
    pub scale: usize,
    pub source_id: String,
}

impl SamplePair {
    pub fn validate(&self) -> Result<()> {
        if self.lr.width * self.scale != self.hr.width
            || self.lr.height * self.scale != self.hr.height
        {
            return Err(SisnError::InvalidInput(format!(
                "pair {}: LR {}x{} is not HR {}x{} / {}",
                self.source_id, self.lr.width, self.lr.height, self.hr.width, self.hr.height,
                self.scale
            )));
        }
        Ok(())
    }
}

/// One of the eight dihedral symmetries of the square.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugmentSpec {
    /// Quarter turns counterclockwise: 0..=3.
    pub quarter_turns: u8,
    pub hflip: bool,
}

impl AugmentSpec {
    pub const IDENTITY: AugmentSpec = AugmentSpec { quarter_turns: 0, hflip: false };

    /// Uniform draw over the eight variants.
    pub fn sample(rng: &mut ChaCha8Rng) -> Self {
        AugmentSpec {
            quarter_turns: rng.gen_range(0..4u8),
            hflip: rng.gen_bool(0.5),
        }
    }
}

pub fn load_image(path: &Path) -> Result<ImageU8> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => SisnError::Io { path: path.to_path_buf(), source: io },
        other => SisnError::Image { path: path.to_path_buf(), message: other.to_string() },
    })?;
    // Grayscale and RGBA inputs are promoted/flattened to 8-bit RGB.
    let rgb = img.to_rgb8();
    ImageU8::new(rgb.width() as usize, rgb.height() as usize, rgb.into_raw())
}

pub fn save_image(img: &ImageU8, path: &Path) -> Result<()> {
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .expect("buffer length checked at construction");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| SisnError::Image { path: path.to_path_buf(), message: e.to_string() })
}

fn rotate_ccw(img: &ImageU8) -> ImageU8 {
    // (x, y) -> (y, w-1-x) in the rotated frame
    let mut out = ImageU8::filled(img.height, img.width, [0, 0, 0]);
    for y in 0..img.height {
        for x in 0..img.width {
            out.set(y, img.width - 1 - x, img.get(x, y));
        }
    }
    out
}

fn hflip(img: &ImageU8) -> ImageU8 {
    let mut out = img.clone();
    for y in 0..img.height {
        for x in 0..img.width {
            out.set(img.width - 1 - x, y, img.get(x, y));
        }
    }
    out
}

pub fn augment_image(img: &ImageU8, spec: AugmentSpec) -> ImageU8 {
    let mut out = img.clone();
    for _ in 0..spec.quarter_turns {
        out = rotate_ccw(&out);
    }
    if spec.hflip {
        out = hflip(&out);
    }
    out
}

/// Applies the same symmetry to both images of the pair.
pub fn augment(pair: &SamplePair, spec: AugmentSpec) -> SamplePair {
    SamplePair {
        hr: augment_image(&pair.hr, spec),
        lr: augment_image(&pair.lr, spec),
        scale: pair.scale,
        source_id: pair.source_id.clone(),
    }
}

/// Aligned random crop: LR patch of `lr_patch`², HR patch of
/// `(scale·lr_patch)²` at the scaled offset. Deterministic per seed.
pub fn random_crop_pair(pair: &SamplePair, lr_patch: usize, seed: u64) -> Result<SamplePair> {
    pair.validate()?;
    if lr_patch > pair.lr.width || lr_patch > pair.lr.height || lr_patch == 0 {
        return Err(SisnError::InvalidInput(format!(
            "lr_patch {lr_patch} exceeds LR image {}x{}",
            pair.lr.width, pair.lr.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = rng.gen_range(0..=pair.lr.width - lr_patch);
    let y0 = rng.gen_range(0..=pair.lr.height - lr_patch);
    let s = pair.scale;
    Ok(SamplePair {
        lr: pair.lr.crop(x0, y0, lr_patch, lr_patch)?,
        hr: pair.hr.crop(s * x0, s * y0, s * lr_patch, s * lr_patch)?,
        scale: s,
        source_id: pair.source_id.clone(),
    })
}

/// Image → 1×3×H×W tensor scaled into [0, 1].
pub fn to_tensor(img: &ImageU8) -> Tensor {
    let (w, h) = (img.width, img.height);
    let mut data = vec![0.0; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let p = img.get(x, y);
            for c in 0..3 {
                data[(c * h + y) * w + x] = p[c] as f64 / 255.0;
            }
        }
    }
    Tensor::new([1, 3, h, w], data).unwrap()
}

/// 1×3×H×W tensor → image; values ×255, rounded half up, clamped to [0, 255].
pub fn to_image(t: &Tensor) -> Result<ImageU8> {
    let [n, c, h, w] = t.shape;
    if n != 1 || c != 3 {
        return Err(SisnError::ShapeMismatch {
            context: "to_image".into(),
            expected: "1×3×H×W".into(),
            got: format!("{:?}", t.shape),
        });
    }
    let mut out = ImageU8::filled(w, h, [0, 0, 0]);
    for y in 0..h {
        for x in 0..w {
            let mut rgb = [0u8; 3];
            for (ci, chan) in rgb.iter_mut().enumerate() {
                let v = (t.data[(ci * h + y) * w + x] * 255.0 + 0.5).floor();
                *chan = v.clamp(0.0, 255.0) as u8;
            }
            out.set(x, y, rgb);
        }
    }
    Ok(out)
}

/// Per-sample RNG stream derived from (global seed, sample id, epoch) so data
/// preparation order cannot affect results.
pub fn sample_seed(global_seed: u64, sample_idx: u64, epoch: u64) -> u64 {
    // splitmix64-style mixing
    let mut z = global_seed
        .wrapping_add(sample_idx.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(epoch.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::RngCore;
    use tempfile::tempdir;

    fn noise_image(w: usize, h: usize, seed: u64) -> ImageU8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pixels = vec![0u8; 3 * w * h];
        rng.fill_bytes(&mut pixels);
        ImageU8::new(w, h, pixels).unwrap()
    }

    #[test]
    fn png_round_trip_is_lossless() {
        let dir = tempdir().unwrap();
        let img = noise_image(13, 9, 1);
        let path = dir.path().join("t.png");
        save_image(&img, &path).unwrap();
        assert_eq!(load_image(&path).unwrap(), img);

        let one = ImageU8::filled(1, 1, [255, 0, 0]);
        let p2 = dir.path().join("px.png");
        save_image(&one, &p2).unwrap();
        assert_eq!(load_image(&p2).unwrap(), one);
    }

    #[test]
    fn grayscale_promotes_to_three_channels() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("g.png");
        let gray = image::GrayImage::from_fn(4, 4, |x, y| image::Luma([(x * 16 + y) as u8]));
        gray.save(&path).unwrap();
        let img = load_image(&path).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let p = img.get(x, y);
                assert_eq!(p[0], p[1]);
                assert_eq!(p[1], p[2]);
                assert_eq!(p[0], (x * 16 + y) as u8);
            }
        }
    }

    #[test]
    fn load_missing_file_is_io_error() {
        let err = load_image(Path::new("/nonexistent/nope.png")).unwrap_err();
        assert_eq!(err.class(), "io");
    }

    #[test]
    fn augment_group_identities() {
        let img = noise_image(8, 6, 2);
        let pair = SamplePair {
            hr: img.clone(),
            lr: noise_image(4, 3, 3),
            scale: 2,
            source_id: "t".into(),
        };
        // identity element
        let same = augment(&pair, AugmentSpec::IDENTITY);
        assert_eq!(same.hr, pair.hr);
        assert_eq!(same.lr, pair.lr);
        // rotation has order 4
        let mut rot = pair.clone();
        for _ in 0..4 {
            rot = augment(&rot, AugmentSpec { quarter_turns: 1, hflip: false });
        }
        assert_eq!(rot.hr, pair.hr);
        // hflip is an involution
        let spec = AugmentSpec { quarter_turns: 0, hflip: true };
        let twice = augment(&augment(&pair, spec), spec);
        assert_eq!(twice.hr, pair.hr);
    }

    #[test]
    fn augment_preserves_pixel_multiset() {
        let img = noise_image(7, 5, 4);
        for q in 0..4 {
            for flip in [false, true] {
                let out = augment_image(&img, AugmentSpec { quarter_turns: q, hflip: flip });
                let mut a = img.pixels.clone();
                let mut b = out.pixels.clone();
                a.sort_unstable();
                b.sort_unstable();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn crop_degenerate_and_determinism() {
        let pair = SamplePair {
            hr: noise_image(16, 16, 5),
            lr: noise_image(8, 8, 6),
            scale: 2,
            source_id: "t".into(),
        };
        let whole = random_crop_pair(&pair, 8, 9).unwrap();
        assert_eq!(whole.lr, pair.lr);
        assert_eq!(whole.hr, pair.hr);

        let a = random_crop_pair(&pair, 4, 11).unwrap();
        let b = random_crop_pair(&pair, 4, 11).unwrap();
        assert_eq!(a.lr, b.lr);
        assert_eq!(a.hr, b.hr);

        assert!(random_crop_pair(&pair, 9, 0).is_err());
    }

    #[test]
    fn crop_offsets_are_scale_aligned() {
        // encode coordinates in pixel values so offsets are recoverable
        let s = 2usize;
        let mut hr = ImageU8::filled(32, 32, [0, 0, 0]);
        for y in 0..32 {
            for x in 0..32 {
                hr.set(x, y, [x as u8, y as u8, 0]);
            }
        }
        let mut lr = ImageU8::filled(16, 16, [0, 0, 0]);
        for y in 0..16 {
            for x in 0..16 {
                lr.set(x, y, [x as u8, y as u8, 0]);
            }
        }
        let pair = SamplePair { hr, lr, scale: s, source_id: "coords".into() };
        for seed in 0..20 {
            let c = random_crop_pair(&pair, 5, seed).unwrap();
            let lr_off = c.lr.get(0, 0);
            let hr_off = c.hr.get(0, 0);
            assert_eq!(hr_off[0] as usize, s * lr_off[0] as usize);
            assert_eq!(hr_off[1] as usize, s * lr_off[1] as usize);
        }
    }

    #[test]
    fn tensor_round_trip_exhaustive() {
        // all 256 pixel values survive to_tensor ∘ to_image
        let mut img = ImageU8::filled(16, 16, [0, 0, 0]);
        for v in 0..=255u8 {
            img.set((v % 16) as usize, (v / 16) as usize, [v, v, v]);
        }
        let rt = to_image(&to_tensor(&img)).unwrap();
        assert_eq!(rt, img);
    }

    #[test]
    fn to_image_clamps() {
        let t = Tensor::new([1, 3, 1, 1], vec![1.7, -0.3, 0.5]).unwrap();
        let img = to_image(&t).unwrap();
        assert_eq!(img.get(0, 0), [255, 0, 128]);
    }
}
