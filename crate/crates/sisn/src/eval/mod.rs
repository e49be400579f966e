//! Metric computation, report generation, and the ESAG/ISAB ablation sweep.

mod ablation;
mod metrics;

pub use ablation::{ablation_configs, ablation_sweep, ablation_table, AblationAxis, AblationGrid, AblationRow};
pub use metrics::{luma, mps, psnr, ssim, PSNR_CAP_DB};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::{bicubic_resize, ImageU8, Manifest, Split};
use crate::error::{Result, SisnError};
use crate::model::{super_resolve, ModelParams, SisnConfig};

/// Per-image metric record. `mps` is present iff both SSIM and LPIPS are.
#[derive(Debug, Clone, Serialize)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Option<f64>,
    pub mps: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_lpips: Option<f64>,
    pub mean_mps: Option<f64>,
    pub skipped: usize,
}

impl MetricReport {
    pub fn from_records(mut per_image: Vec<ImageMetrics>, skipped: usize) -> MetricReport {
        per_image.sort_by(|a, b| a.id.cmp(&b.id));
        let n = per_image.len().max(1) as f64;
        let mean_psnr = per_image.iter().map(|r| r.psnr).sum::<f64>() / n;
        let mean_ssim = per_image.iter().map(|r| r.ssim).sum::<f64>() / n;
        let with_lpips: Vec<&ImageMetrics> =
            per_image.iter().filter(|r| r.lpips.is_some()).collect();
        let (mean_lpips, mean_mps) = if with_lpips.is_empty() {
            (None, None)
        } else {
            let m = with_lpips.len() as f64;
            (
                Some(with_lpips.iter().map(|r| r.lpips.unwrap()).sum::<f64>() / m),
                Some(with_lpips.iter().map(|r| r.mps.unwrap()).sum::<f64>() / m),
            )
        };
        MetricReport { per_image, mean_psnr, mean_ssim, mean_lpips, mean_mps, skipped }
    }

    /// Human-readable table; one row per image plus the aggregate row.
    pub fn text_table(&self) -> String {
        let fmt_opt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.4}"),
            None => "-".into(),
        };
        let mut out = String::new();
        let _ = writeln!(out, "{:<24} {:>9} {:>7} {:>7} {:>7}", "image", "psnr_db", "ssim", "lpips", "mps");
        for r in &self.per_image {
            let _ = writeln!(
                out,
                "{:<24} {:>9.4} {:>7.4} {:>7} {:>7}",
                r.id,
                r.psnr,
                r.ssim,
                fmt_opt(r.lpips),
                fmt_opt(r.mps)
            );
        }
        let _ = writeln!(
            out,
            "{:<24} {:>9.4} {:>7.4} {:>7} {:>7}",
            "mean",
            self.mean_psnr,
            self.mean_ssim,
            fmt_opt(self.mean_lpips),
            fmt_opt(self.mean_mps)
        );
        if self.skipped > 0 {
            let _ = writeln!(out, "skipped: {}", self.skipped);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Parses an LPIPS sidecar: one `id value` pair per line, `#` comments
/// allowed. Values must be nonnegative; duplicate ids are rejected.
pub fn lpips_ingest(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SisnError::Io { path: path.into(), source: e })?;
    let file = path.display().to_string();
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| SisnError::Parse { file: file.clone(), line: i + 1, message };
        let mut parts = line.split_whitespace();
        let (id, value) = match (parts.next(), parts.next(), parts.next()) {
            (Some(id), Some(v), None) => (id, v),
            _ => return Err(err("expected 'id value'".into())),
        };
        let value: f64 = value.parse().map_err(|e: std::num::ParseFloatError| err(e.to_string()))?;
        if !(value >= 0.0 && value.is_finite()) {
            return Err(err(format!("lpips value {value} out of [0, inf)")));
        }
        if map.insert(id.to_string(), value).is_some() {
            return Err(err(format!("duplicate id '{id}'")));
        }
    }
    Ok(map)
}

fn image_id(entry_hr: &str) -> String {
    let name = entry_hr.rsplit('/').next().unwrap_or(entry_hr);
    name.rsplit_once('.').map(|(s, _)| s).unwrap_or(name).to_string()
}

fn metric_record(
    id: String,
    sr: &ImageU8,
    hr: &ImageU8,
    lpips: Option<&BTreeMap<String, f64>>,
) -> Result<ImageMetrics> {
    let psnr_v = psnr(sr, hr)?;
    let ssim_v = ssim(sr, hr)?;
    let lpips_v = lpips.and_then(|m| m.get(&id)).copied();
    Ok(ImageMetrics {
        id,
        psnr: psnr_v,
        ssim: ssim_v,
        mps: lpips_v.map(|l| mps(ssim_v, l)),
        lpips: lpips_v,
    })
}

/// Runs the model over one manifest split and scores each SR output against
/// its HR ground truth.
pub fn evaluate(
    params: &ModelParams,
    cfg: &SisnConfig,
    manifest: &Manifest,
    split: Split,
    lpips: Option<&BTreeMap<String, f64>>,
) -> Result<MetricReport> {
    if cfg.scale != manifest.scale {
        return Err(SisnError::InvalidConfig(format!(
            "checkpoint scale {} does not match manifest scale {}",
            cfg.scale, manifest.scale
        )));
    }
    let mut records = Vec::new();
    for entry in manifest.split(split) {
        let pair = manifest.load_pair(entry)?;
        let sr = super_resolve(params, cfg, &pair.lr)?;
        records.push(metric_record(image_id(&entry.hr), &sr, &pair.hr, lpips)?);
    }
    Ok(MetricReport::from_records(records, 0))
}

/// Bicubic-upscale baseline over the same split, for comparisons.
pub fn evaluate_bicubic_baseline(
    manifest: &Manifest,
    split: Split,
    lpips: Option<&BTreeMap<String, f64>>,
) -> Result<MetricReport> {
    let mut records = Vec::new();
    for entry in manifest.split(split) {
        let pair = manifest.load_pair(entry)?;
        let up = bicubic_resize(&pair.lr, pair.hr.width, pair.hr.height)?;
        records.push(metric_record(image_id(&entry.hr), &up, &pair.hr, lpips)?);
    }
    Ok(MetricReport::from_records(records, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;
    use tempfile::tempdir;

    #[test]
    fn lpips_sidecar_parsing() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("l.txt");
        fs::write(&p, "").unwrap();
        assert!(lpips_ingest(&p).unwrap().is_empty());

        fs::write(&p, "img1 0.3104\n").unwrap();
        let m = lpips_ingest(&p).unwrap();
        assert_eq!(m.len(), 1);
        assert!((m["img1"] - 0.3104).abs() < 1e-12);

        fs::write(&p, "img1 0.3\nimg1 0.4\n").unwrap();
        let err = lpips_ingest(&p).unwrap_err();
        assert!(err.to_string().contains("img1"), "{err}");

        fs::write(&p, "img1 -0.1\n").unwrap();
        assert!(lpips_ingest(&p).is_err());

        fs::write(&p, "justanid\n").unwrap();
        let err = lpips_ingest(&p).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn report_aggregates_and_mps_presence() {
        let mut lp = BTreeMap::new();
        lp.insert("a".to_string(), 0.2);
        let a = ImageU8::filled(16, 16, [10, 10, 10]);
        let ra = metric_record("a".into(), &a, &a, Some(&lp)).unwrap();
        let rb = metric_record("b".into(), &a, &a, Some(&lp)).unwrap();
        assert!(ra.mps.is_some());
        assert!(rb.mps.is_none(), "no lpips entry -> mps omitted");
        let report = MetricReport::from_records(vec![ra, rb], 0);
        assert_eq!(report.mean_psnr, PSNR_CAP_DB);
        assert!((report.mean_ssim - 1.0).abs() < 1e-12);
        assert!((report.mean_mps.unwrap() - mps(1.0, 0.2)).abs() < 1e-12);
        let table = report.text_table();
        assert!(table.contains("mean"));
        assert!(serde_json::from_str::<serde_json::Value>(&report.to_json()).is_ok());
    }
}
