//! Dataset manifest: seeded train/val/test partition with generated LR images.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SisnError};

use super::{bicubic_resize, load_image, save_image, SamplePair};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// One record: split tag plus HR/LR paths relative to the manifest file.
#[derive(Debug, Clone)]
pub struct ManifestEntry {
    pub split: Split,
    pub hr: String,
    pub lr: String,
    pub scale: usize,
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub seed: u64,
    pub scale: usize,
    pub ratios: [usize; 3],
    pub entries: Vec<ManifestEntry>,
    /// Directory paths are resolved against; set on load/build.
    pub root: PathBuf,
}

impl Manifest {
    pub fn split(&self, s: Split) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.split == s).collect()
    }

    pub fn load_pair(&self, entry: &ManifestEntry) -> Result<SamplePair> {
        let pair = SamplePair {
            hr: load_image(&self.root.join(&entry.hr))?,
            lr: load_image(&self.root.join(&entry.lr))?,
            scale: entry.scale,
            source_id: entry.hr.clone(),
        };
        pair.validate()?;
        Ok(pair)
    }

    /// Line-oriented text: `#`-prefixed header, then one tab-separated
    /// record per sample.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("# sisn-manifest v1\n");
        out.push_str(&format!("# seed={}\n", self.seed));
        out.push_str(&format!("# scale={}\n", self.scale));
        out.push_str(&format!(
            "# ratios={}/{}/{}\n",
            self.ratios[0], self.ratios[1], self.ratios[2]
        ));
        for e in &self.entries {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", e.split, e.hr, e.lr, e.scale));
        }
        fs::write(path, out).map_err(|e| SisnError::Io { path: path.into(), source: e })
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        let file = path.display().to_string();
        let text =
            fs::read_to_string(path).map_err(|e| SisnError::Io { path: path.into(), source: e })?;
        let parse_err = |line: usize, message: String| SisnError::Parse {
            file: file.clone(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "# sisn-manifest v1")) => {}
            _ => return Err(parse_err(1, "missing 'sisn-manifest v1' header".into())),
        }
        let mut seed = None;
        let mut scale = None;
        let mut ratios = None;
        let mut entries = Vec::new();
        for (i, line) in lines {
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some(v) = rest.strip_prefix("seed=") {
                    seed = Some(v.parse::<u64>().map_err(|e| parse_err(lineno, e.to_string()))?);
                } else if let Some(v) = rest.strip_prefix("scale=") {
                    scale =
                        Some(v.parse::<usize>().map_err(|e| parse_err(lineno, e.to_string()))?);
                } else if let Some(v) = rest.strip_prefix("ratios=") {
                    let parts: Vec<usize> = v
                        .split('/')
                        .map(|p| p.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| parse_err(lineno, e.to_string()))?;
                    if parts.len() != 3 {
                        return Err(parse_err(lineno, "ratios needs 3 components".into()));
                    }
                    ratios = Some([parts[0], parts[1], parts[2]]);
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(parse_err(lineno, format!("expected 4 fields, got {}", fields.len())));
            }
            let split = Split::parse(fields[0])
                .ok_or_else(|| parse_err(lineno, format!("unknown split tag '{}'", fields[0])))?;
            let scale_f =
                fields[3].parse::<usize>().map_err(|e| parse_err(lineno, e.to_string()))?;
            entries.push(ManifestEntry {
                split,
                hr: fields[1].to_string(),
                lr: fields[2].to_string(),
                scale: scale_f,
            });
        }
        Ok(Manifest {
            seed: seed.ok_or_else(|| parse_err(0, "missing seed header".into()))?,
            scale: scale.ok_or_else(|| parse_err(0, "missing scale header".into()))?,
            ratios: ratios.ok_or_else(|| parse_err(0, "missing ratios header".into()))?,
            entries,
            root: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        })
    }
}

/// Proportional partition sizes with the remainder handed out in
/// train/val/test order.
fn partition_sizes(n: usize, ratios: [usize; 3]) -> [usize; 3] {
    let total: usize = ratios.iter().sum();
    let mut sizes = [0usize; 3];
    for i in 0..3 {
        sizes[i] = n * ratios[i] / total;
    }
    let mut rem = n - sizes.iter().sum::<usize>();
    let mut i = 0;
    while rem > 0 {
        sizes[i % 3] += 1;
        rem -= 1;
        i += 1;
    }
    sizes
}

/// Scans `hr_dir` for images, crops each to dimensions divisible by `scale`,
/// degrades with bicubic downsampling, writes processed images under
/// `out_dir` (`hr/` and `lr/`), and returns the seeded partition.
pub fn build_manifest(
    hr_dir: &Path,
    scale: usize,
    ratios: [usize; 3],
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    if ratios.iter().sum::<usize>() == 0 {
        return Err(SisnError::InvalidConfig("split ratios sum to zero".into()));
    }
    let mut names: Vec<String> = fs::read_dir(hr_dir)
        .map_err(|e| SisnError::Io { path: hr_dir.into(), source: e })?
        .filter_map(|ent| ent.ok())
        .filter_map(|ent| {
            let name = ent.file_name().to_string_lossy().into_owned();
            let lower = name.to_lowercase();
            (lower.ends_with(".png") || lower.ends_with(".jpg") || lower.ends_with(".jpeg"))
                .then_some(name)
        })
        .collect();
    if names.is_empty() {
        return Err(SisnError::InvalidInput(format!(
            "no readable images in {}",
            hr_dir.display()
        )));
    }
    names.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    names.shuffle(&mut rng);

    let sizes = partition_sizes(names.len(), ratios);
    for sub in ["hr", "lr"] {
        fs::create_dir_all(out_dir.join(sub))
            .map_err(|e| SisnError::Io { path: out_dir.join(sub), source: e })?;
    }

    let mut entries = Vec::with_capacity(names.len());
    for (i, name) in names.iter().enumerate() {
        let split = if i < sizes[0] {
            Split::Train
        } else if i < sizes[0] + sizes[1] {
            Split::Val
        } else {
            Split::Test
        };
        let img = load_image(&hr_dir.join(name))?;
        let (w, h) = (img.width / scale * scale, img.height / scale * scale);
        if w == 0 || h == 0 {
            return Err(SisnError::InvalidInput(format!(
                "{name}: image {}x{} smaller than scale {scale}",
                img.width, img.height
            )));
        }
        let hr = img.crop(0, 0, w, h)?;
        let lr = bicubic_resize(&hr, w / scale, h / scale)?;
        let stem = name.rsplit_once('.').map(|(s, _)| s).unwrap_or(name);
        let hr_rel = format!("hr/{stem}.png");
        let lr_rel = format!("lr/{stem}.png");
        save_image(&hr, &out_dir.join(&hr_rel))?;
        save_image(&lr, &out_dir.join(&lr_rel))?;
        entries.push(ManifestEntry { split, hr: hr_rel, lr: lr_rel, scale });
    }
    // stable record order regardless of the shuffle
    entries.sort_by(|a, b| a.hr.cmp(&b.hr));
    Ok(Manifest { seed, scale, ratios, entries, root: out_dir.to_path_buf() })
}
