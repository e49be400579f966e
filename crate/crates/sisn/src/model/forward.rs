//! Forward passes for ISA, ISAB, ESAG, and the full network.

use crate::error::{Result, SisnError};
use crate::tensor::{Tape, Var};

use super::params::{TapedEsag, TapedIsa, TapedIsab, TapedModel};
use super::SisnConfig;

/// Internal-feature split attention.
///
/// Pipeline: split the C channels into r groups, fuse by element-wise sum,
/// pool globally, score through a 1×1 bottleneck (reduce → ReLU → expand),
/// normalize the r×(C/r) logits with a cross-split softmax, reweight each
/// split by its per-channel weight, and sum the splits back together. The
/// fused C/r-channel result is tiled r times along the channel axis so the
/// block preserves its input shape; with r = 1 the whole block is the
/// identity.
pub fn isa_forward(tape: &mut Tape, x: Var, params: &TapedIsa, r: usize) -> Result<Var> {
    let [_, c, _, _] = tape.value(x).shape;
    if r == 0 || c % r != 0 {
        return Err(SisnError::InvalidInput(format!(
            "isa_forward: {c} channels not divisible into {r} splits"
        )));
    }
    let per = c / r;
    let splits: Vec<Var> = (0..r)
        .map(|k| tape.narrow_channels(x, k * per, per))
        .collect::<Result<_>>()?;

    let mut fusion = splits[0];
    for s in &splits[1..] {
        fusion = tape.add(fusion, *s)?;
    }
    let pooled = tape.global_avg_pool(fusion);
    let z = tape.conv2d(pooled, params.reduce.w, params.reduce.b, 0)?;
    let z = tape.relu(z);
    let logits = tape.conv2d(z, params.expand.w, params.expand.b, 0)?;
    let weights = tape.r_softmax(logits, r)?;

    let mut out: Option<Var> = None;
    for (k, split) in splits.iter().enumerate() {
        let wk = tape.narrow_channels(weights, k * per, per)?;
        let weighted = tape.mul(*split, wk)?;
        out = Some(match out {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    tape.tile_channels(out.expect("r >= 1"), r)
}

/// Residual split-attention block: x + ISA(conv3×3(ReLU(conv3×3(x)))).
pub fn isab_forward(tape: &mut Tape, x: Var, params: &TapedIsab, r: usize) -> Result<Var> {
    let h = tape.conv2d(x, params.conv1.w, params.conv1.b, 1)?;
    let h = tape.relu(h);
    let h = tape.conv2d(h, params.conv2.w, params.conv2.b, 1)?;
    let h = isa_forward(tape, h, &params.isa, r)?;
    tape.add(x, h)
}

/// Two-path group: a chain of I ISABs plus a trailing 3×3 convolution
/// (detail path), fused by element-wise sum with ISA applied directly to
/// the group input (structure path).
pub fn esag_forward(tape: &mut Tape, x: Var, params: &TapedEsag, r: usize) -> Result<Var> {
    let mut detail = x;
    for isab in &params.isabs {
        detail = isab_forward(tape, detail, isab, r)?;
    }
    let detail = tape.conv2d(detail, params.fuse_conv.w, params.fuse_conv.b, 1)?;
    let structure = isa_forward(tape, x, &params.isa, r)?;
    tape.add(detail, structure)
}

/// Full network: coarse 3×3 conv, G ESAGs in sequence, log2(s) upscale
/// stages (conv C→4C + pixel shuffle ×2), and a 3×3 reconstruction conv.
pub fn sisn_forward(
    tape: &mut Tape,
    input: Var,
    model: &TapedModel,
    cfg: &SisnConfig,
) -> Result<Var> {
    cfg.validate()?;
    let [_, c, h, w] = tape.value(input).shape;
    if c != 3 {
        return Err(SisnError::ShapeMismatch {
            context: "sisn_forward".into(),
            expected: "3-channel input".into(),
            got: format!("{c} channels"),
        });
    }
    if h < 8 || w < 8 {
        return Err(SisnError::InvalidInput(format!(
            "sisn_forward: input {h}×{w} too small, minimum is 8×8"
        )));
    }
    let mut f = tape.conv2d(input, model.coarse.w, model.coarse.b, 1)?;
    for esag in &model.esags {
        f = esag_forward(tape, f, esag, cfg.splits)?;
    }
    for up in &model.upscale {
        f = tape.conv2d(f, up.w, up.b, 1)?;
        f = tape.pixel_shuffle(f, 2)?;
    }
    tape.conv2d(f, model.recon.w, model.recon.b, 1)
}

/// Inference convenience: LR image in, quantized SR image out.
pub fn super_resolve(
    params: &super::ModelParams,
    cfg: &SisnConfig,
    lr: &crate::data::ImageU8,
) -> Result<crate::data::ImageU8> {
    let mut tape = Tape::new();
    let input = tape.constant(crate::data::to_tensor(lr));
    let taped = params.record(&mut tape);
    let out = sisn_forward(&mut tape, input, &taped, cfg)?;
    crate::data::to_image(tape.value(out))
}
