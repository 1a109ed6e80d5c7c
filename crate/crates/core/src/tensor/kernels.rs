//! Forward and backward kernels for the searchable layer kinds.
//!
//! Batched activations are `[B, T, C]` (batch, time, channel). The public
//! forward functions also accept a single `[T, C]` sample.

use super::{Array, Real};
use crate::error::{Error, Result};

/// Time width of every convolution kernel.
pub const CONV_KERNEL: usize = 3;

fn as_batch(x: &Array) -> Result<(Array, bool)> {
    match x.ndim() {
        2 => Ok((x.clone().reshape(&[1, x.shape()[0], x.shape()[1]])?, true)),
        3 => Ok((x.clone(), false)),
        _ => Err(Error::shape("input (expected [T, C] or [B, T, C])", x.shape(), &[])),
    }
}

fn unbatch(y: Array, single: bool) -> Result<Array> {
    if single {
        let s = y.shape()[1..].to_vec();
        y.reshape(&s)
    } else {
        Ok(y)
    }
}

fn dims3(x: &Array) -> (usize, usize, usize) {
    (x.shape()[0], x.shape()[1], x.shape()[2])
}

/// Time-axis dense layer: `Y[u, c] = sum_t W[t, u] * X[t, c]`. No activation.
pub fn fcn_forward(w: &Array, x: &Array) -> Result<Array> {
    let (xb, single) = as_batch(x)?;
    unbatch(fcn_fwd(w, &xb)?, single)
}

/// Vanilla recurrent layer: `h_t = relu(W^T x_t + H^T h_{t-1})`, `h_0 = 0`.
pub fn rnn_forward(w: &Array, h: &Array, x: &Array) -> Result<Array> {
    let (xb, single) = as_batch(x)?;
    unbatch(rnn_fwd(w, h, &xb)?, single)
}

/// Kernel-3, stride-1, zero same-padded convolution over time. No activation.
pub fn conv1d_forward(kernel: &Array, x: &Array) -> Result<Array> {
    let (xb, single) = as_batch(x)?;
    unbatch(conv_fwd(kernel, &xb)?, single)
}

pub fn relu(x: &Array) -> Array {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}


/// Strided row-major view of a matrix inside a flat buffer.
#[derive(Clone, Copy)]
struct View {
    off: usize,
    rs: usize,
    cs: usize,
}

impl View {
    fn rows(off: usize, rs: usize) -> View {
        View { off, rs, cs: 1 }
    }

    fn t(self) -> View {
        View { off: self.off, rs: self.cs, cs: self.rs }
    }

    fn fits(&self, rows: usize, cols: usize, len: usize) -> bool {
        rows == 0 || cols == 0 || self.off + (rows - 1) * self.rs + (cols - 1) * self.cs < len
    }
}

/// `C = A·B + beta·C` for an `m×k` times `k×n` product.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[Real], av: View, b: &[Real], bv: View, beta: Real, c: &mut [Real], cv: View) {
    assert!(av.fits(m, k, a.len()) && bv.fits(k, n, b.len()) && cv.fits(m, n, c.len()), "gemm view out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    let (ap, bp, cp) = (a[av.off..].as_ptr(), b[bv.off..].as_ptr(), c[cv.off..].as_mut_ptr());
    // SAFETY: the views were checked to stay inside their buffers, and `c` is
    // borrowed mutably so it cannot alias `a` or `b`.
    unsafe {
        #[cfg(not(feature = "f32"))]
        matrixmultiply::dgemm(m, k, n, 1.0, ap, av.rs as isize, av.cs as isize, bp, bv.rs as isize, bv.cs as isize, beta, cp, cv.rs as isize, cv.cs as isize);
        #[cfg(feature = "f32")]
        matrixmultiply::sgemm(m, k, n, 1.0, ap, av.rs as isize, av.cs as isize, bp, bv.rs as isize, bv.cs as isize, beta, cp, cv.rs as isize, cv.cs as isize);
    }
}

/// `[B, T, C]` to `[B·C, T]` so each sample channel is one contiguous row.
fn channel_rows(d: &[Real], b: usize, t: usize, c: usize) -> Vec<Real> {
    let mut out = vec![0.0 as Real; d.len()];
    for bi in 0..b {
        let (src, dst) = (&d[bi * t * c..(bi + 1) * t * c], &mut out[bi * t * c..(bi + 1) * t * c]);
        for (ti, row) in src.chunks_exact(c).enumerate() {
            for (ch, &v) in row.iter().enumerate() {
                dst[ch * t + ti] = v;
            }
        }
    }
    out
}

fn from_channel_rows(src: &[Real], b: usize, t: usize, c: usize, shape: &[usize]) -> Array {
    let mut out = vec![0.0 as Real; src.len()];
    for bi in 0..b {
        let (s, dst) = (&src[bi * t * c..(bi + 1) * t * c], &mut out[bi * t * c..(bi + 1) * t * c]);
        for (ti, row) in dst.chunks_exact_mut(c).enumerate() {
            for (ch, v) in row.iter_mut().enumerate() {
                *v = s[ch * t + ti];
            }
        }
    }
    Array::from_vec(shape, out).expect("shape matches buffer")
}

pub(crate) fn fcn_fwd(w: &Array, x: &Array) -> Result<Array> {
    if w.ndim() != 2 || x.ndim() != 3 || w.shape()[0] != x.shape()[1] {
        return Err(Error::shape("fcn", w.shape(), x.shape()));
    }
    let (b, t_in, c) = dims3(x);
    let t_out = w.shape()[1];
    let xt = channel_rows(x.data(), b, t_in, c);
    let mut yt = vec![0.0 as Real; b * c * t_out];
    gemm(b * c, t_in, t_out, &xt, View::rows(0, t_in), w.data(), View::rows(0, t_out), 0.0, &mut yt, View::rows(0, t_out));
    Ok(from_channel_rows(&yt, b, t_out, c, &[b, t_out, c]))
}

pub(crate) fn fcn_bwd(w: &Array, x: &Array, gy: &Array, want_x: bool) -> (Array, Option<Array>) {
    let (b, t_in, c) = dims3(x);
    let t_out = w.shape()[1];
    let xt = channel_rows(x.data(), b, t_in, c);
    let gyt = channel_rows(gy.data(), b, t_out, c);
    let mut gw = Array::zeros(w.shape());
    gemm(t_in, b * c, t_out, &xt, View::rows(0, t_in).t(), &gyt, View::rows(0, t_out), 0.0, gw.data_mut(), View::rows(0, t_out));
    if !want_x {
        return (gw, None);
    }
    let mut gxt = vec![0.0 as Real; b * c * t_in];
    gemm(b * c, t_out, t_in, &gyt, View::rows(0, t_out), w.data(), View::rows(0, t_out).t(), 0.0, &mut gxt, View::rows(0, t_in));
    (gw, Some(from_channel_rows(&gxt, b, t_in, c, x.shape())))
}

/// Zero-padded patches `[B·T, 3·C]`, row `(b, t)` holding `x[b, t-1..=t+1, :]`.
fn patches(xd: &[Real], b: usize, t_len: usize, c: usize) -> Vec<Real> {
    let w = CONV_KERNEL * c;
    let mut p = vec![0.0 as Real; b * t_len * w];
    for bi in 0..b {
        let xs = &xd[bi * t_len * c..(bi + 1) * t_len * c];
        for t in 0..t_len {
            let row = &mut p[(bi * t_len + t) * w..(bi * t_len + t + 1) * w];
            let lo = t.saturating_sub(1);
            let hi = (t + 2).min(t_len);
            let dst = (lo + 1 - t) * c;
            row[dst..dst + (hi - lo) * c].copy_from_slice(&xs[lo * c..hi * c]);
        }
    }
    p
}

pub(crate) fn conv_fwd(k: &Array, x: &Array) -> Result<Array> {
    if k.ndim() != 3 || k.shape()[0] != CONV_KERNEL || x.ndim() != 3 || k.shape()[1] != x.shape()[2] {
        return Err(Error::shape("conv1d", k.shape(), x.shape()));
    }
    let (b, t_len, c_in) = dims3(x);
    let c_out = k.shape()[2];
    let p = patches(x.data(), b, t_len, c_in);
    let mut y = Array::zeros(&[b, t_len, c_out]);
    gemm(b * t_len, CONV_KERNEL * c_in, c_out, &p, View::rows(0, CONV_KERNEL * c_in), k.data(), View::rows(0, c_out), 0.0, y.data_mut(), View::rows(0, c_out));
    Ok(y)
}

pub(crate) fn conv_bwd(k: &Array, x: &Array, gy: &Array, want_x: bool) -> (Array, Option<Array>) {
    let (b, t_len, c_in) = dims3(x);
    let c_out = k.shape()[2];
    let w = CONV_KERNEL * c_in;
    let p = patches(x.data(), b, t_len, c_in);
    let mut gk = Array::zeros(k.shape());
    gemm(w, b * t_len, c_out, &p, View::rows(0, w).t(), gy.data(), View::rows(0, c_out), 0.0, gk.data_mut(), View::rows(0, c_out));
    if !want_x {
        return (gk, None);
    }
    let mut gp = vec![0.0 as Real; b * t_len * w];
    gemm(b * t_len, c_out, w, gy.data(), View::rows(0, c_out), k.data(), View::rows(0, c_out).t(), 0.0, &mut gp, View::rows(0, w));
    let mut gx = Array::zeros(x.shape());
    let gxd = gx.data_mut();
    for bi in 0..b {
        let gxs = &mut gxd[bi * t_len * c_in..(bi + 1) * t_len * c_in];
        for t in 0..t_len {
            let row = &gp[(bi * t_len + t) * w..(bi * t_len + t + 1) * w];
            for d in 0..CONV_KERNEL {
                let Some(src) = (t + d).checked_sub(1).filter(|&s| s < t_len) else { continue };
                for (g, &v) in gxs[src * c_in..(src + 1) * c_in].iter_mut().zip(&row[d * c_in..(d + 1) * c_in]) {
                    *g += v;
                }
            }
        }
    }
    (gk, Some(gx))
}

pub(crate) fn rnn_fwd(w: &Array, h: &Array, x: &Array) -> Result<Array> {
    if h.ndim() != 2 || h.shape()[0] != h.shape()[1] {
        return Err(Error::shape("rnn recurrent matrix (must be square)", h.shape(), h.shape()));
    }
    if w.ndim() != 2 || x.ndim() != 3 || w.shape()[0] != x.shape()[2] || w.shape()[1] != h.shape()[0] {
        return Err(Error::shape("rnn", w.shape(), x.shape()));
    }
    let (b, t_len, p) = dims3(x);
    let m = w.shape()[1];
    let mut y = Array::zeros(&[b, t_len, m]);
    let (wd, hd, xd) = (w.data(), h.data(), x.data());
    let yd = y.data_mut();
    let mut z = vec![0.0 as Real; b * m];
    let mut prev = vec![0.0 as Real; b * m];
    for t in 0..t_len {
        gemm(b, p, m, xd, View::rows(t * p, t_len * p), wd, View::rows(0, m), 0.0, &mut z, View::rows(0, m));
        if t > 0 {
            gemm(b, m, m, &prev, View::rows(0, m), hd, View::rows(0, m), 1.0, &mut z, View::rows(0, m));
        }
        for (bi, (zr, pr)) in z.chunks_exact(m).zip(prev.chunks_exact_mut(m)).enumerate() {
            let out = &mut yd[(bi * t_len + t) * m..(bi * t_len + t + 1) * m];
            for ((o, pv), &zv) in out.iter_mut().zip(pr.iter_mut()).zip(zr) {
                *o = if zv > 0.0 { zv } else { 0.0 };
                *pv = *o;
            }
        }
    }
    Ok(y)
}

/// Backpropagation through time. `y` is the forward output.
pub(crate) fn rnn_bwd(w: &Array, h: &Array, x: &Array, y: &Array, gy: &Array, want_x: bool) -> (Array, Array, Option<Array>) {
    let (b, t_len, p) = dims3(x);
    let m = w.shape()[1];
    let mut gw = Array::zeros(w.shape());
    let mut gh = Array::zeros(h.shape());
    let mut gx = Array::zeros(if want_x { x.shape() } else { &[0] });
    let (wd, hd, xd, yd, gyd) = (w.data(), h.data(), x.data(), y.data(), gy.data());
    let mut carry = vec![0.0 as Real; b * m];
    let mut dz = vec![0.0 as Real; b * m];
    for t in (0..t_len).rev() {
        for (bi, dr) in dz.chunks_exact_mut(m).enumerate() {
            let base = (bi * t_len + t) * m;
            for (k, d) in dr.iter_mut().enumerate() {
                *d = if yd[base + k] > 0.0 { gyd[base + k] + carry[bi * m + k] } else { 0.0 };
            }
        }
        gemm(p, b, m, xd, View::rows(t * p, t_len * p).t(), &dz, View::rows(0, m), 1.0, gw.data_mut(), View::rows(0, m));
        if t > 0 {
            gemm(m, b, m, yd, View::rows((t - 1) * m, t_len * m).t(), &dz, View::rows(0, m), 1.0, gh.data_mut(), View::rows(0, m));
        }
        if want_x {
            gemm(b, m, p, &dz, View::rows(0, m), wd, View::rows(0, m).t(), 0.0, gx.data_mut(), View::rows(t * p, t_len * p));
        }
        gemm(b, m, m, &dz, View::rows(0, m), hd, View::rows(0, m).t(), 0.0, &mut carry, View::rows(0, m));
    }
    (gw, gh, want_x.then_some(gx))
}

pub(crate) fn readout_fwd(w: &Array, x: &Array) -> Result<Array> {
    if x.ndim() != 3 || w.shape() != &x.shape()[1..] {
        return Err(Error::shape("readout", w.shape(), x.shape()));
    }
    let b = x.shape()[0];
    let n = w.len();
    let out = (0..b)
        .map(|bi| {
            x.data()[bi * n..(bi + 1) * n]
                .iter()
                .zip(w.data())
                .map(|(a, c)| a * c)
                .sum()
        })
        .collect();
    Ok(Array::vector(out))
}

pub(crate) fn readout_bwd(w: &Array, x: &Array, gy: &Array) -> (Array, Array) {
    let b = x.shape()[0];
    let n = w.len();
    let mut gw = Array::zeros(w.shape());
    let mut gx = Array::zeros(x.shape());
    for bi in 0..b {
        let g = gy.data()[bi];
        let xs = &x.data()[bi * n..(bi + 1) * n];
        for (gwv, &xv) in gw.data_mut().iter_mut().zip(xs) {
            *gwv += g * xv;
        }
        for (gxv, &wv) in gx.data_mut()[bi * n..(bi + 1) * n].iter_mut().zip(w.data()) {
            *gxv = g * wv;
        }
    }
    (gw, gx)
}
