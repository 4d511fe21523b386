//! Composite layers built from tape primitives.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// `x·W + b` for a batch `x` of shape `B×D`, `W` of shape `D×R`, `b` of length `R`.
///
/// A rank-1 `x` of length `D` is treated as a single row; the result is then `1×R`.
pub fn dense(tape: &mut Tape, x: Var, w: Var, b: Var) -> Result<Var> {
    let x = as_rows(tape, x)?;
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

fn as_rows(tape: &mut Tape, x: Var) -> Result<Var> {
    match tape.value(x).rank() {
        1 => {
            let d = tape.value(x).len();
            tape.reshape(x, &[1, d])
        }
        2 => Ok(x),
        r => Err(Error::dim("dense input rank", 2, r)),
    }
}

/// Tape handles for one LSTM layer.
///
/// `input` is `D×4Q`, `recurrent` is `Q×4Q` and `bias` is `4Q`; the gate blocks
/// along the `4Q` axis are ordered input, forget, candidate, output.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    pub input: Var,
    pub recurrent: Var,
    pub bias: Var,
}

/// One LSTM cell step over a batch.
///
/// `x` is `B×D`, `h_prev` and `c_prev` are `B×Q`. Returns `(h, c)` with
/// `c = f⊙c_prev + i⊙c̃` and `h = o⊙tanh(c)`.
pub fn lstm_step(
    tape: &mut Tape,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w: &LstmWeights,
) -> Result<(Var, Var)> {
    let x = as_rows(tape, x)?;
    let h_prev = as_rows(tape, h_prev)?;
    let c_prev = as_rows(tape, c_prev)?;
    let wshape = tape.value(w.recurrent).shape().to_vec();
    let q = wshape[0];
    if wshape.len() != 2 || wshape[1] != 4 * q {
        return Err(Error::dim(
            "lstm recurrent columns",
            4 * q,
            *wshape.get(1).unwrap_or(&0),
        ));
    }
    let in_cols = tape.value(w.input).shape().get(1).copied().unwrap_or(0);
    if in_cols != 4 * q {
        return Err(Error::dim("lstm input-kernel columns", 4 * q, in_cols));
    }
    for (name, v) in [("h_prev", h_prev), ("c_prev", c_prev)] {
        let cols = tape.value(v).shape()[1];
        if cols != q {
            return Err(Error::dim(format!("lstm {name} width"), q, cols));
        }
    }

    let zx = tape.matmul(x, w.input)?;
    let zh = tape.matmul(h_prev, w.recurrent)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_row(z, w.bias)?;

    let zi = tape.slice_cols(z, 0, q)?;
    let zf = tape.slice_cols(z, q, q)?;
    let zg = tape.slice_cols(z, 2 * q, q)?;
    let zo = tape.slice_cols(z, 3 * q, q)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let g = tape.tanh(zg);
    let o = tape.sigmoid(zo);

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}
