//! Depth ablation: sweep ESAG count and ISAB count on a shared budget and
//! tabulate validation metrics for each depth pair.

use std::fmt::Write as _;

use crate::data::{Manifest, Split};
use crate::error::Result;
use crate::train::{train, TrainConfig};

use super::evaluate;

/// Which depth axis a grid sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    /// Hold the ESAG count fixed, sweep the ISABs per group.
    FixEsagSweepIsab,
    /// Hold the ISAB count fixed, sweep the number of ESAGs.
    FixIsabSweepEsag,
}

/// One sweep: the free axis runs over `lo..=hi` while the other is `fixed`.
#[derive(Debug, Clone, Copy)]
pub struct AblationGrid {
    pub axis: AblationAxis,
    pub fixed: usize,
    pub lo: usize,
    pub hi: usize,
}

impl AblationGrid {
    /// The two sweeps reported in the depth study: G=10 with I in 5..=20,
    /// and I=10 with G in 5..=20.
    pub fn reference() -> Vec<AblationGrid> {
        vec![
            AblationGrid { axis: AblationAxis::FixEsagSweepIsab, fixed: 10, lo: 5, hi: 20 },
            AblationGrid { axis: AblationAxis::FixIsabSweepEsag, fixed: 10, lo: 5, hi: 20 },
        ]
    }

    fn configs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (axis, fixed) = (self.axis, self.fixed);
        (self.lo..=self.hi).map(move |v| match axis {
            AblationAxis::FixEsagSweepIsab => (fixed, v),
            AblationAxis::FixIsabSweepEsag => (v, fixed),
        })
    }
}

/// Deduplicated (num_esag, num_isab) pairs across all grids, in first-seen
/// order. Overlapping sweeps share the intersection point, so the reference
/// grids yield 31 configs rather than 32.
pub fn ablation_configs(grids: &[AblationGrid]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for grid in grids {
        for pair in grid.configs() {
            if !out.contains(&pair) {
                out.push(pair);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub num_esag: usize,
    pub num_isab: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Trains one model per depth pair (same data, seed, and budget from `base`)
/// and scores it on the validation split.
pub fn ablation_sweep(
    manifest: &Manifest,
    base: &TrainConfig,
    grids: &[AblationGrid],
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for (g, i) in ablation_configs(grids) {
        let mut cfg = base.clone();
        cfg.model.num_esag = g;
        cfg.model.num_isab = i;
        let (ck, _) = train(manifest, &cfg, None)?;
        let report = evaluate(&ck.params, &cfg.model, manifest, Split::Val, None)?;
        rows.push(AblationRow {
            num_esag: g,
            num_isab: i,
            psnr: report.mean_psnr,
            ssim: report.mean_ssim,
        });
    }
    Ok(rows)
}

/// Tab-separated table with a header row.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("esags\tisabs\tpsnr_db\tssim\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{:.4}\t{:.4}", r.num_esag, r.num_isab, r.psnr, r.ssim);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_grids_have_31_unique_configs() {
        let configs = ablation_configs(&AblationGrid::reference());
        assert_eq!(configs.len(), 31);
        let mut sorted = configs.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 31, "no duplicates survive");
        assert!(configs.contains(&(10, 10)), "shared point appears once");
        assert!(configs.contains(&(10, 5)));
        assert!(configs.contains(&(20, 10)));
        assert!(!configs.contains(&(20, 20)));
    }

    #[test]
    fn single_grid_is_inclusive_range() {
        let g = AblationGrid { axis: AblationAxis::FixIsabSweepEsag, fixed: 2, lo: 1, hi: 3 };
        assert_eq!(ablation_configs(&[g]), vec![(1, 2), (2, 2), (3, 2)]);
    }

    #[test]
    fn table_layout() {
        let rows = vec![AblationRow { num_esag: 1, num_isab: 2, psnr: 30.1234, ssim: 0.91 }];
        let t = ablation_table(&rows);
        assert!(t.starts_with("esags\tisabs\tpsnr_db\tssim\n"));
        assert!(t.contains("1\t2\t30.1234\t0.9100"));
    }
}
