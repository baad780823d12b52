use crate::error::{Error, Result};
use crate::numerics::tape::{Tape, Var};
use crate::numerics::tensor::Real;

/// Tape handles of one LSTM cell's weights.
///
/// `input: in × 4H`, `recurrent: H × 4H`, `bias: 4H`, with gate blocks
/// ordered input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub input: Var,
    pub recurrent: Var,
    pub bias: Var,
}

/// One LSTM step over a batch of rows.
///
/// `x: B × in`, `h_prev, c_prev: B × H`. Returns `(h, c)`.
pub fn lstm_step<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w: &LstmWeights,
) -> Result<(Var, Var)> {
    let hidden = tape.value(w.recurrent).shape()[0];
    if tape.value(w.recurrent).shape() != [hidden, 4 * hidden] {
        return Err(Error::dim(format!(
            "lstm: recurrent weights {:?} are not H × 4H",
            tape.value(w.recurrent).shape()
        )));
    }
    if tape.value(h_prev).shape() != tape.value(c_prev).shape()
        || tape.value(h_prev).cols() != hidden
    {
        return Err(Error::dim(format!(
            "lstm: state shapes {:?}/{:?} for hidden size {hidden}",
            tape.value(h_prev).shape(),
            tape.value(c_prev).shape()
        )));
    }
    let zx = tape.matmul(x, w.input)?;
    let zh = tape.matmul(h_prev, w.recurrent)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_row(z, w.bias)?;

    let i = tape.slice_cols(z, 0, hidden)?;
    let f = tape.slice_cols(z, hidden, 2 * hidden)?;
    let g = tape.slice_cols(z, 2 * hidden, 3 * hidden)?;
    let o = tape.slice_cols(z, 3 * hidden, 4 * hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);

    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}
