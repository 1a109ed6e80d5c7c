use super::tape::sigmoid;
use super::{Array, NodeId, Real, Tape};
use crate::error::{Error, Result};

/// Four-gate LSTM cell weights. Gate order along the `4h` axis: input,
/// forget, candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCellParams {
    /// `[input, 4h]`
    pub wx: Array,
    /// `[h, 4h]`
    pub wh: Array,
    /// `[4h]`
    pub b: Array,
}

impl LstmCellParams {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        LstmCellParams {
            wx: Array::zeros(&[input, 4 * hidden]),
            wh: Array::zeros(&[hidden, 4 * hidden]),
            b: Array::zeros(&[4 * hidden]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.wh.shape()[0]
    }

    fn check(&self, x: &[Real], h: &[Real], c: &[Real]) -> Result<()> {
        let hid = self.hidden();
        let ok = self.wx.ndim() == 2
            && self.wx.shape()[0] == x.len()
            && self.wx.shape()[1] == 4 * hid
            && self.wh.shape() == [hid, 4 * hid]
            && self.b.shape() == [4 * hid]
            && h.len() == hid
            && c.len() == hid;
        if ok {
            Ok(())
        } else {
            Err(Error::shape("lstm_cell", self.wx.shape(), &[x.len(), h.len(), c.len()]))
        }
    }
}

/// One LSTM step on plain vectors. Returns `(h_t, c_t)`.
pub fn lstm_cell_forward(
    params: &LstmCellParams,
    x: &[Real],
    h_prev: &[Real],
    c_prev: &[Real],
) -> Result<(Vec<Real>, Vec<Real>)> {
    params.check(x, h_prev, c_prev)?;
    let hid = params.hidden();
    let width = 4 * hid;
    let mut z = params.b.data().to_vec();
    for (i, &xi) in x.iter().enumerate() {
        for (zv, &w) in z.iter_mut().zip(&params.wx.data()[i * width..(i + 1) * width]) {
            *zv += xi * w;
        }
    }
    for (i, &hi) in h_prev.iter().enumerate() {
        for (zv, &w) in z.iter_mut().zip(&params.wh.data()[i * width..(i + 1) * width]) {
            *zv += hi * w;
        }
    }
    let mut h = vec![0.0; hid];
    let mut c = vec![0.0; hid];
    for k in 0..hid {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[hid + k]);
        let g = z[2 * hid + k].tanh();
        let o = sigmoid(z[3 * hid + k]);
        c[k] = f * c_prev[k] + i * g;
        h[k] = o * c[k].tanh();
    }
    Ok((h, c))
}

/// Tape-recorded LSTM cell weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmNodes {
    pub wx: NodeId,
    pub wh: NodeId,
    pub b: NodeId,
    pub hidden: usize,
}

impl LstmNodes {
    /// Records one step; returns `(h_t, c_t)` nodes.
    pub fn step(&self, tape: &mut Tape, x: NodeId, h: NodeId, c: NodeId) -> Result<(NodeId, NodeId)> {
        let zx = tape.vecmat(x, self.wx)?;
        let zh = tape.vecmat(h, self.wh)?;
        let z = tape.add(zx, zh)?;
        let z = tape.add(z, self.b)?;
        let n = self.hidden;
        let i = tape.slice(z, 0, n)?;
        let f = tape.slice(z, n, n)?;
        let g = tape.slice(z, 2 * n, n)?;
        let o = tape.slice(z, 3 * n, n)?;
        let i = tape.sigmoid(i);
        let f = tape.sigmoid(f);
        let g = tape.tanh(g);
        let o = tape.sigmoid(o);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        let c_new = tape.add(fc, ig)?;
        let tc = tape.tanh(c_new);
        let h_new = tape.mul(o, tc)?;
        Ok((h_new, c_new))
    }
}
