//! Temporal convolutional network used as a mask estimator.
//!
//! Layout: optional input gLN, 1x1 bottleneck, then `repeats x blocks`
//! residual blocks (1x1 up-projection, PReLU, gLN, dilated depthwise conv,
//! PReLU, gLN, 1x1 down-projection), then PReLU and a 1x1 conv to the mask
//! channels. Block `x` within a repeat uses dilation `2^x`.

use super::config::{NormKind, TcnShape};
use super::params::ParamVars;
use crate::autodiff::{Tape, Var};
use crate::error::Result;

fn norm(tape: &mut Tape, params: &ParamVars, prefix: &str, kind: NormKind, x: Var) -> Result<Var> {
    match kind {
        NormKind::Global => {
            let gain = params.get(&format!("{prefix}.gain"))?;
            let bias = params.get(&format!("{prefix}.bias"))?;
            tape.global_layer_norm(x, gain, bias)
        }
        NormKind::None => Ok(x),
    }
}

fn pointwise(tape: &mut Tape, params: &ParamVars, prefix: &str, x: Var) -> Result<Var> {
    let w = params.get(&format!("{prefix}.weight"))?;
    let b = params.get(&format!("{prefix}.bias"))?;
    tape.conv1d(x, w, Some(b), 1, 1, 1)
}

/// `[in_channels, F] -> [out_channels, F]` mask logits.
pub(crate) fn forward(tape: &mut Tape, shape: &TcnShape, params: &ParamVars, prefix: &str, input: Var) -> Result<Var> {
    let x = norm(tape, params, &format!("{prefix}.input_norm"), shape.norm, input)?;
    let mut h = pointwise(tape, params, &format!("{prefix}.bottleneck"), x)?;
    for r in 0..shape.repeats {
        for b in 0..shape.blocks {
            let p = format!("{prefix}.blocks.{}", r * shape.blocks + b);
            let dilation = 1 << b;
            let u = pointwise(tape, params, &format!("{p}.conv_in"), h)?;
            let u = tape.prelu(u, params.get(&format!("{p}.prelu1.slope"))?)?;
            let u = norm(tape, params, &format!("{p}.norm1"), shape.norm, u)?;
            let pad = dilation * (shape.kernel - 1) / 2;
            let u = tape.pad(u, pad, pad)?;
            let w = params.get(&format!("{p}.depthwise.weight"))?;
            let bias = params.get(&format!("{p}.depthwise.bias"))?;
            let u = tape.conv1d(u, w, Some(bias), 1, dilation, shape.hidden)?;
            let u = tape.prelu(u, params.get(&format!("{p}.prelu2.slope"))?)?;
            let u = norm(tape, params, &format!("{p}.norm2"), shape.norm, u)?;
            let u = pointwise(tape, params, &format!("{p}.conv_out"), u)?;
            h = tape.add(h, u)?;
        }
    }
    let h = tape.prelu(h, params.get(&format!("{prefix}.output_prelu.slope"))?)?;
    pointwise(tape, params, &format!("{prefix}.mask"), h)
}
