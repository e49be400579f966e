//! Parameter containers and their tape registration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Tape, Tensor, Var};

use super::SisnConfig;

/// Init gain for convs feeding a residual/fusion sum. Keeps per-block
/// variance growth near 1 so deep stacks neither explode nor vanish.
const RESIDUAL_GAIN: f64 = 0.1;

/// Weight + bias of one convolution.
#[derive(Debug, Clone)]
pub struct ConvParams {
    pub weight: Tensor, // C_out × C_in × k × k
    pub bias: Tensor,   // 1 × C_out × 1 × 1
}

impl ConvParams {
    fn init(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize, k: usize) -> Self {
        Self::init_scaled(rng, c_out, c_in, k, 1.0)
    }

    /// He init (zero-mean normal, variance 2/fan_in) times `gain`, zero bias.
    /// Residual-branch convs use gain < 1 so activation variance stays O(1)
    /// at any network depth.
    fn init_scaled(rng: &mut ChaCha8Rng, c_out: usize, c_in: usize, k: usize, gain: f64) -> Self {
        let fan_in = (c_in * k * k) as f64;
        let dist = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).unwrap();
        let data = (0..c_out * c_in * k * k).map(|_| dist.sample(rng)).collect();
        ConvParams {
            weight: Tensor::new([c_out, c_in, k, k], data).unwrap().with_grad(),
            bias: Tensor::zeros([1, c_out, 1, 1]).with_grad(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IsaParams {
    pub reduce: ConvParams, // 1×1, C/r → bottleneck
    pub expand: ConvParams, // 1×1, bottleneck → C
}

impl IsaParams {
    fn init(rng: &mut ChaCha8Rng, cfg: &SisnConfig) -> Self {
        let per = cfg.channels / cfg.splits;
        IsaParams {
            reduce: ConvParams::init(rng, cfg.bottleneck(), per, 1),
            expand: ConvParams::init(rng, cfg.channels, cfg.bottleneck(), 1),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IsabParams {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
    pub isa: IsaParams,
}

#[derive(Debug, Clone)]
pub struct EsagParams {
    pub isabs: Vec<IsabParams>,
    pub fuse_conv: ConvParams, // trailing 3×3 on the ISAB path
    pub isa: IsaParams,        // structure path on the group input
}

/// The full parameter set θ, organized by block.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub coarse: ConvParams,         // 3 → C
    pub esags: Vec<EsagParams>,
    pub upscale: Vec<ConvParams>,   // C → 4C per ×2 stage
    pub recon: ConvParams,          // C → 3
}

impl ModelParams {
    pub fn init(cfg: &SisnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = cfg.channels;
        let coarse = ConvParams::init(&mut rng, c, 3, 3);
        let esags = (0..cfg.num_esag)
            .map(|_| EsagParams {
                isabs: (0..cfg.num_isab)
                    .map(|_| IsabParams {
                        conv1: ConvParams::init(&mut rng, c, c, 3),
                        conv2: ConvParams::init_scaled(&mut rng, c, c, 3, RESIDUAL_GAIN),
                        isa: IsaParams::init(&mut rng, cfg),
                    })
                    .collect(),
                fuse_conv: ConvParams::init_scaled(&mut rng, c, c, 3, RESIDUAL_GAIN),
                isa: IsaParams::init(&mut rng, cfg),
            })
            .collect();
        let upscale = (0..cfg.upscale_stages())
            .map(|_| ConvParams::init(&mut rng, 4 * c, c, 3))
            .collect();
        let recon = ConvParams::init(&mut rng, 3, c, 3);
        ModelParams { coarse, esags, upscale, recon }
    }

    /// All parameter tensors with stable names, in a fixed traversal order.
    /// Checkpoints, Adam state, and tape registration all share this order.
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        fn conv<'a>(out: &mut Vec<(String, &'a Tensor)>, name: String, p: &'a ConvParams) {
            out.push((format!("{name}.w"), &p.weight));
            out.push((format!("{name}.b"), &p.bias));
        }
        let mut out = Vec::new();
        conv(&mut out, "coarse".into(), &self.coarse);
        for (g, esag) in self.esags.iter().enumerate() {
            for (i, isab) in esag.isabs.iter().enumerate() {
                conv(&mut out, format!("esag{g}.isab{i}.conv1"), &isab.conv1);
                conv(&mut out, format!("esag{g}.isab{i}.conv2"), &isab.conv2);
                conv(&mut out, format!("esag{g}.isab{i}.isa.reduce"), &isab.isa.reduce);
                conv(&mut out, format!("esag{g}.isab{i}.isa.expand"), &isab.isa.expand);
            }
            conv(&mut out, format!("esag{g}.fuse"), &esag.fuse_conv);
            conv(&mut out, format!("esag{g}.isa.reduce"), &esag.isa.reduce);
            conv(&mut out, format!("esag{g}.isa.expand"), &esag.isa.expand);
        }
        for (k, up) in self.upscale.iter().enumerate() {
            conv(&mut out, format!("up{k}"), up);
        }
        conv(&mut out, "recon".into(), &self.recon);
        out
    }

    /// Mutable view in the same order as [`ModelParams::named`].
    pub fn flat_mut(&mut self) -> Vec<&mut Tensor> {
        fn conv<'a>(out: &mut Vec<&'a mut Tensor>, p: &'a mut ConvParams) {
            out.push(&mut p.weight);
            out.push(&mut p.bias);
        }
        let mut out: Vec<&mut Tensor> = Vec::new();
        let ModelParams { coarse, esags, upscale, recon } = self;
        conv(&mut out, coarse);
        for esag in esags.iter_mut() {
            for isab in esag.isabs.iter_mut() {
                conv(&mut out, &mut isab.conv1);
                conv(&mut out, &mut isab.conv2);
                conv(&mut out, &mut isab.isa.reduce);
                conv(&mut out, &mut isab.isa.expand);
            }
            conv(&mut out, &mut esag.fuse_conv);
            conv(&mut out, &mut esag.isa.reduce);
            conv(&mut out, &mut esag.isa.expand);
        }
        for up in upscale.iter_mut() {
            conv(&mut out, up);
        }
        conv(&mut out, recon);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Records every parameter on `tape` (same order as [`ModelParams::named`])
    /// and returns the handle structure used by the forward pass.
    pub fn record(&self, tape: &mut Tape) -> TapedModel {
        let conv = |tape: &mut Tape, p: &ConvParams| TapedConv {
            w: tape.leaf(&p.weight),
            b: tape.leaf(&p.bias),
        };
        let isa = |tape: &mut Tape, p: &IsaParams| TapedIsa {
            reduce: conv(tape, &p.reduce),
            expand: conv(tape, &p.expand),
        };
        let coarse = conv(tape, &self.coarse);
        let esags = self
            .esags
            .iter()
            .map(|e| TapedEsag {
                isabs: e
                    .isabs
                    .iter()
                    .map(|b| TapedIsab {
                        conv1: conv(tape, &b.conv1),
                        conv2: conv(tape, &b.conv2),
                        isa: isa(tape, &b.isa),
                    })
                    .collect(),
                fuse_conv: conv(tape, &e.fuse_conv),
                isa: isa(tape, &e.isa),
            })
            .collect();
        let upscale = self.upscale.iter().map(|u| conv(tape, u)).collect();
        let recon = conv(tape, &self.recon);
        TapedModel { coarse, esags, upscale, recon }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TapedConv {
    pub w: Var,
    pub b: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct TapedIsa {
    pub reduce: TapedConv,
    pub expand: TapedConv,
}

#[derive(Debug, Clone)]
pub struct TapedIsab {
    pub conv1: TapedConv,
    pub conv2: TapedConv,
    pub isa: TapedIsa,
}

#[derive(Debug, Clone)]
pub struct TapedEsag {
    pub isabs: Vec<TapedIsab>,
    pub fuse_conv: TapedConv,
    pub isa: TapedIsa,
}

#[derive(Debug, Clone)]
pub struct TapedModel {
    pub coarse: TapedConv,
    pub esags: Vec<TapedEsag>,
    pub upscale: Vec<TapedConv>,
    pub recon: TapedConv,
}

impl TapedModel {
    /// Parameter vars in [`ModelParams::named`] order.
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        let conv = |out: &mut Vec<Var>, p: &TapedConv| {
            out.push(p.w);
            out.push(p.b);
        };
        conv(&mut out, &self.coarse);
        for esag in &self.esags {
            for isab in &esag.isabs {
                conv(&mut out, &isab.conv1);
                conv(&mut out, &isab.conv2);
                conv(&mut out, &isab.isa.reduce);
                conv(&mut out, &isab.isa.expand);
            }
            conv(&mut out, &esag.fuse_conv);
            conv(&mut out, &esag.isa.reduce);
            conv(&mut out, &esag.isa.expand);
        }
        for up in &self.upscale {
            conv(&mut out, up);
        }
        conv(&mut out, &self.recon);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_shapes_deterministic_for_equal_config() {
        let cfg = SisnConfig::toy(4);
        let a = ModelParams::init(&cfg, 1);
        let b = ModelParams::init(&cfg, 2);
        let (na, nb) = (a.named(), b.named());
        assert_eq!(na.len(), nb.len());
        for ((name_a, ta), (name_b, tb)) in na.iter().zip(&nb) {
            assert_eq!(name_a, name_b);
            assert_eq!(ta.shape, tb.shape);
        }
        assert_eq!(a.param_count(), b.param_count());
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = SisnConfig::toy(2);
        let a = ModelParams::init(&cfg, 7);
        let b = ModelParams::init(&cfg, 7);
        for ((_, ta), (_, tb)) in a.named().iter().zip(b.named().iter()) {
            assert_eq!(ta.data, tb.data);
        }
    }

    #[test]
    fn flat_mut_matches_named_order() {
        let cfg = SisnConfig::toy(2);
        let mut p = ModelParams::init(&cfg, 3);
        let shapes: Vec<_> = p.named().iter().map(|(_, t)| t.shape).collect();
        let flat_shapes: Vec<_> = p.flat_mut().iter().map(|t| t.shape).collect();
        assert_eq!(shapes, flat_shapes);
    }
}
