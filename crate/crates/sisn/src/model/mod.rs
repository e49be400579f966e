//! SISN network: configuration, parameters, and block forward passes.

mod forward;
mod params;

pub use forward::{esag_forward, isa_forward, isab_forward, sisn_forward, super_resolve};
pub use params::{
    ConvParams, EsagParams, IsaParams, IsabParams, ModelParams, TapedConv, TapedEsag, TapedIsa,
    TapedIsab, TapedModel,
};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SisnError};

/// Architecture hyperparameters: G ESAGs of I ISABs each, C channels split
/// into r groups, upscaling by s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SisnConfig {
    pub num_esag: usize,
    pub num_isab: usize,
    pub channels: usize,
    pub splits: usize,
    pub scale: usize,
    pub reduction: usize,
}

impl SisnConfig {
    /// Paper-default architecture: G=10, I=10, C=64, r=2.
    pub fn paper_default(scale: usize) -> Self {
        SisnConfig {
            num_esag: 10,
            num_isab: 10,
            channels: 64,
            splits: 2,
            scale,
            reduction: 4,
        }
    }

    /// Small preset for tests and quick runs.
    pub fn toy(scale: usize) -> Self {
        SisnConfig {
            num_esag: 2,
            num_isab: 2,
            channels: 16,
            splits: 2,
            scale,
            reduction: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_esag == 0 || self.num_isab == 0 {
            return Err(SisnError::InvalidConfig(
                "num_esag and num_isab must be >= 1".into(),
            ));
        }
        if self.splits == 0 {
            return Err(SisnError::InvalidConfig("splits must be >= 1".into()));
        }
        if self.channels < self.splits || !self.channels.is_multiple_of(self.splits) {
            return Err(SisnError::InvalidConfig(format!(
                "channels ({}) must be a positive multiple of splits ({})",
                self.channels, self.splits
            )));
        }
        if self.reduction == 0 || !self.channels.is_multiple_of(self.reduction) {
            return Err(SisnError::InvalidConfig(format!(
                "channels ({}) must be divisible by reduction ({})",
                self.channels, self.reduction
            )));
        }
        if !matches!(self.scale, 2 | 4 | 8) {
            return Err(SisnError::InvalidConfig(format!(
                "scale must be one of 2, 4, 8; got {}",
                self.scale
            )));
        }
        Ok(())
    }

    /// Width of the ISA bottleneck between the two 1×1 convolutions.
    pub fn bottleneck(&self) -> usize {
        (self.channels / self.reduction).max(4)
    }

    /// Number of ×2 upscale stages.
    pub fn upscale_stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validate_rejects_bad_configs() {
        let mut c = SisnConfig::toy(2);
        c.channels = 15;
        assert!(c.validate().is_err());
        let mut c = SisnConfig::toy(2);
        c.scale = 3;
        assert!(c.validate().is_err());
        let mut c = SisnConfig::toy(2);
        c.splits = 0;
        assert!(c.validate().is_err());
        assert!(SisnConfig::toy(8).validate().is_ok());
        assert!(SisnConfig::paper_default(4).validate().is_ok());
    }

    #[test]
    fn upscale_stage_count() {
        assert_eq!(SisnConfig::toy(2).upscale_stages(), 1);
        assert_eq!(SisnConfig::toy(4).upscale_stages(), 2);
        assert_eq!(SisnConfig::toy(8).upscale_stages(), 3);
    }
}
