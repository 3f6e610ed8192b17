//! Slice-level numeric kernels shared by the forward and backward passes.

use crate::par::{self, Execution};
use crate::scalar::Scalar;

/// Strided read-only matrix view.
#[derive(Clone, Copy)]
pub(crate) struct MatView<'a, S> {
    pub data: &'a [S],
    pub rows: usize,
    pub cols: usize,
    pub rs: isize,
    pub cs: isize,
}

impl<'a, S> MatView<'a, S> {
    pub fn row_major(data: &'a [S], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    pub fn t_if(self, flag: bool) -> Self {
        if flag {
            self.t()
        } else {
            self
        }
    }

    fn rows_from(self, r0: usize, r1: usize) -> Self {
        let start = r0 * self.rs as usize;
        Self {
            data: if r1 > r0 { &self.data[start..] } else { &self.data[..0] },
            rows: r1 - r0,
            ..self
        }
    }
}

const GEMM_ROW_CHUNK: usize = 64;
const GEMM_PAR_WORK: usize = 1 << 20;

/// `c = alpha * a * b + beta * c` with `c` row-major `a.rows x b.cols`.
///
/// Large products are split into fixed row blocks; the split does not depend
/// on the execution mode, so sequential and parallel runs agree bitwise.
pub(crate) fn gemm<S: Scalar>(
    exec: Execution,
    alpha: S,
    a: MatView<S>,
    b: MatView<S>,
    beta: S,
    c: &mut [S],
) {
    debug_assert_eq!(a.cols, b.rows);
    let (m, k, n) = (a.rows, a.cols, b.cols);
    debug_assert_eq!(c.len(), m * n);
    if m * k * n < GEMM_PAR_WORK || m <= GEMM_ROW_CHUNK {
        S::gemm(m, k, n, alpha, a.data, a.rs, a.cs, b.data, b.rs, b.cs, beta, c, n as isize, 1);
        return;
    }
    par::for_each_chunk_mut(exec, c, GEMM_ROW_CHUNK * n, |i, block| {
        let r0 = i * GEMM_ROW_CHUNK;
        let r1 = r0 + block.len() / n;
        let sub = a.rows_from(r0, r1);
        S::gemm(
            r1 - r0,
            k,
            n,
            alpha,
            sub.data,
            sub.rs,
            sub.cs,
            b.data,
            b.rs,
            b.cs,
            beta,
            block,
            n as isize,
            1,
        );
    });
}

pub(crate) fn conv_out_len(t: usize, k: usize, stride: usize) -> usize {
    (t - k) / stride + 1
}

const CONV_TIME_CHUNK: usize = 512;

/// Fills `patches` (row-major `[t1 - t0, c_in * k]`) with input windows.
fn im2row<S: Scalar>(x: &[S], t: usize, c_in: usize, k: usize, stride: usize, t0: usize, t1: usize, patches: &mut [S]) {
    let ck = c_in * k;
    for (row, tt) in (t0..t1).enumerate() {
        let dst = &mut patches[row * ck..(row + 1) * ck];
        let base = tt * stride;
        for c in 0..c_in {
            dst[c * k..(c + 1) * k].copy_from_slice(&x[c * t + base..c * t + base + k]);
        }
    }
}

/// Valid 1-d convolution. `x` is `[c_in, t]`, `w` is `[c_out, c_in, k]`;
/// returns `[c_out, t_out]`.
pub(crate) fn conv1d_forward<S: Scalar>(
    exec: Execution,
    x: &[S],
    c_in: usize,
    t: usize,
    w: &[S],
    c_out: usize,
    k: usize,
    stride: usize,
) -> Vec<S> {
    let t_out = conv_out_len(t, k, stride);
    let ck = c_in * k;
    // time-major result, transposed at the end
    let mut out_tm = vec![S::zero(); t_out * c_out];
    let w_t = MatView::row_major(w, c_out, ck).t();
    par::for_each_chunk_mut(exec, &mut out_tm, CONV_TIME_CHUNK * c_out, |i, block| {
        let t0 = i * CONV_TIME_CHUNK;
        let rows = block.len() / c_out;
        let mut patches = vec![S::zero(); rows * ck];
        im2row(x, t, c_in, k, stride, t0, t0 + rows, &mut patches);
        S::gemm(
            rows,
            ck,
            c_out,
            S::one(),
            &patches,
            ck as isize,
            1,
            w_t.data,
            w_t.rs,
            w_t.cs,
            S::zero(),
            block,
            c_out as isize,
            1,
        );
    });
    let mut out = vec![S::zero(); c_out * t_out];
    for tt in 0..t_out {
        for co in 0..c_out {
            out[co * t_out + tt] = out_tm[tt * c_out + co];
        }
    }
    out
}

/// Returns `(dx, dw)`; `dx` is skipped when `want_dx` is false.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward<S: Scalar>(
    x: &[S],
    c_in: usize,
    t: usize,
    w: &[S],
    c_out: usize,
    k: usize,
    stride: usize,
    dy: &[S],
    want_dx: bool,
) -> (Option<Vec<S>>, Vec<S>) {
    let t_out = conv_out_len(t, k, stride);
    let ck = c_in * k;
    let mut dw = vec![S::zero(); c_out * ck];
    let mut dx = want_dx.then(|| vec![S::zero(); c_in * t]);
    let dy_view = MatView::row_major(dy, c_out, t_out);
    let mut t0 = 0;
    while t0 < t_out {
        let t1 = (t0 + CONV_TIME_CHUNK).min(t_out);
        let rows = t1 - t0;
        let mut patches = vec![S::zero(); rows * ck];
        im2row(x, t, c_in, k, stride, t0, t1, &mut patches);
        // dW += dY[:, t0..t1] * patches
        let dy_blk = &dy_view.data[t0..];
        S::gemm(c_out, rows, ck, S::one(), dy_blk, t_out as isize, 1, &patches, ck as isize, 1, S::one(), &mut dw, ck as isize, 1);
        if let Some(dx) = dx.as_mut() {
            // dpatches = dY[:, t0..t1]^T * W
            let mut dpatch = vec![S::zero(); rows * ck];
            S::gemm(rows, c_out, ck, S::one(), dy_blk, 1, t_out as isize, w, ck as isize, 1, S::zero(), &mut dpatch, ck as isize, 1);
            for (row, tt) in (t0..t1).enumerate() {
                let base = tt * stride;
                for c in 0..c_in {
                    let src = &dpatch[row * ck + c * k..row * ck + (c + 1) * k];
                    let dst = &mut dx[c * t + base..c * t + base + k];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += *s;
                    }
                }
            }
        }
        t0 = t1;
    }
    (dx, dw)
}

pub(crate) fn softmax_rows<S: Scalar>(x: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); rows * cols];
    for r in 0..rows {
        let src = &x[r * cols..(r + 1) * cols];
        let dst = &mut out[r * cols..(r + 1) * cols];
        let max = src.iter().copied().fold(S::neg_infinity(), S::max);
        let mut sum = S::zero();
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = (s - max).exp();
            sum += *d;
        }
        let inv = S::one() / sum;
        for d in dst.iter_mut() {
            *d *= inv;
        }
    }
    out
}

pub(crate) fn softmax_rows_backward<S: Scalar>(y: &[S], dy: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut dx = vec![S::zero(); rows * cols];
    for r in 0..rows {
        let yr = &y[r * cols..(r + 1) * cols];
        let gr = &dy[r * cols..(r + 1) * cols];
        let dot: S = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &yv), &gv) in dx[r * cols..(r + 1) * cols].iter_mut().zip(yr).zip(gr) {
            *d = yv * (gv - dot);
        }
    }
    dx
}

/// Normalizes each length-`d` row; returns `(y, xhat, inv_std)`.
pub(crate) fn layer_norm<S: Scalar>(x: &[S], d: usize, gamma: &[S], beta: &[S], eps: S) -> (Vec<S>, Vec<S>, Vec<S>) {
    let rows = x.len() / d;
    let dn = S::from_f64(d as f64);
    let mut y = vec![S::zero(); x.len()];
    let mut xhat = vec![S::zero(); x.len()];
    let mut inv_std = vec![S::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let mean = xr.iter().copied().sum::<S>() / dn;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / dn;
        let is = S::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let h = (xr[j] - mean) * is;
            xhat[r * d + j] = h;
            y[r * d + j] = h * gamma[j] + beta[j];
        }
    }
    (y, xhat, inv_std)
}

/// Returns `(dx, dgamma, dbeta)`.
pub(crate) fn layer_norm_backward<S: Scalar>(
    dy: &[S],
    xhat: &[S],
    inv_std: &[S],
    gamma: &[S],
    d: usize,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let rows = dy.len() / d;
    let dn = S::from_f64(d as f64);
    let mut dx = vec![S::zero(); dy.len()];
    let mut dgamma = vec![S::zero(); d];
    let mut dbeta = vec![S::zero(); d];
    let mut dxhat = vec![S::zero(); d];
    for r in 0..rows {
        let g = &dy[r * d..(r + 1) * d];
        let h = &xhat[r * d..(r + 1) * d];
        let mut sum_dxhat = S::zero();
        let mut sum_dxhat_h = S::zero();
        for j in 0..d {
            dgamma[j] += g[j] * h[j];
            dbeta[j] += g[j];
            dxhat[j] = g[j] * gamma[j];
            sum_dxhat += dxhat[j];
            sum_dxhat_h += dxhat[j] * h[j];
        }
        let scale = inv_std[r] / dn;
        for j in 0..d {
            dx[r * d + j] = scale * (dn * dxhat[j] - sum_dxhat - h[j] * sum_dxhat_h);
        }
    }
    (dx, dgamma, dbeta)
}

pub(crate) fn gelu<S: Scalar>(x: S) -> S {
    let half = S::from_f64(0.5);
    half * x * (S::one() + (x * S::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad<S: Scalar>(x: S) -> S {
    let half = S::from_f64(0.5);
    let cdf = half * (S::one() + (x * S::from_f64(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * S::from_f64(0.398_942_280_401_432_7);
    cdf + x * pdf
}

/// Linear-interpolation taps mapping `n_in` frames onto `n_out` frames with
/// frame centres aligned: output `j` reads source position
/// `(j + 0.5) * n_in / n_out - 0.5`, clamped to the valid range.
pub fn resample_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|j| {
            let p = ((j as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = p.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, p - i0 as f64)
        })
        .collect()
}
