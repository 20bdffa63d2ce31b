//! Bidirectional LSTM stack with a linear output layer.
//!
//! Gates are packed `i, f, g, o` along the last axis of `w_ih`, `w_hh` and
//! `bias`. Sequences are `[frames, features]`.

use super::config::FdBlstmConfig;
use super::params::ParamVars;
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::Result;

fn direction(tape: &mut Tape, params: &ParamVars, prefix: &str, hidden: usize, input: Var, reverse: bool) -> Result<Var> {
    let frames = tape.shape(input)[0];
    let proj = tape.matmul(input, params.get(&format!("{prefix}.w_ih"))?)?;
    let proj = tape.add(proj, params.get(&format!("{prefix}.bias"))?)?;
    let w_hh = params.get(&format!("{prefix}.w_hh"))?;
    let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut c = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut outputs = vec![h; frames];
    let order: Vec<usize> = if reverse {
        (0..frames).rev().collect()
    } else {
        (0..frames).collect()
    };
    for t in order {
        let xt = tape.slice(proj, 0, t, t + 1)?;
        let rec = tape.matmul(h, w_hh)?;
        let gates = tape.add(xt, rec)?;
        let i = tape.slice(gates, 1, 0, hidden)?;
        let f = tape.slice(gates, 1, hidden, 2 * hidden)?;
        let g = tape.slice(gates, 1, 2 * hidden, 3 * hidden)?;
        let o = tape.slice(gates, 1, 3 * hidden, 4 * hidden)?;
        let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        c = tape.add(keep, write)?;
        let squashed = tape.tanh(c);
        h = tape.mul(o, squashed)?;
        outputs[t] = h;
    }
    tape.concat(&outputs, 0)
}

/// `[frames, bins] -> [frames, num_outputs * bins]` pre-activation masks.
pub(crate) fn forward(tape: &mut Tape, cfg: &FdBlstmConfig, params: &ParamVars, input: Var) -> Result<Var> {
    let mut x = input;
    for layer in 0..cfg.num_layers {
        let fwd = direction(tape, params, &format!("blstm.{layer}.fwd"), cfg.hidden_units, x, false)?;
        let bwd = direction(tape, params, &format!("blstm.{layer}.bwd"), cfg.hidden_units, x, true)?;
        x = tape.concat(&[fwd, bwd], 1)?;
    }
    let out = tape.matmul(x, params.get("output.weight")?)?;
    tape.add(out, params.get("output.bias")?)
}
