//! Differentiable operations. Every forward function has a matching
//! `*_backward` that returns exact gradients given the upstream gradient.

use std::sync::atomic::{AtomicBool, Ordering};

use super::tensor::Tensor;
use crate::error::{Error, Result};

static FINITE_CHECKS: AtomicBool = AtomicBool::new(true);

/// Toggle the NaN/Inf guard run after every forward op (on by default).
pub fn set_finite_checks(enabled: bool) {
    FINITE_CHECKS.store(enabled, Ordering::Relaxed);
}

pub(crate) fn guard(t: Tensor, op: &str) -> Result<Tensor> {
    if FINITE_CHECKS.load(Ordering::Relaxed) && !t.is_finite() {
        return Err(Error::NonFinite(op.to_string()));
    }
    Ok(t)
}

fn dims4(x: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *x.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::Shape(format!("{what}: expected rank 4, got {:?}", x.shape()))),
    }
}

fn dims2(x: &Tensor, what: &str) -> Result<[usize; 2]> {
    match *x.shape() {
        [a, b] => Ok([a, b]),
        _ => Err(Error::Shape(format!("{what}: expected rank 2, got {:?}", x.shape()))),
    }
}

// ---------------------------------------------------------------------------
// matrix products

/// `[m,k] x [k,n]` on raw slices with explicit (row, column) strides, so
/// transposed operands need no copy.
pub fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
) -> Vec<f64> {
    assert!(a.len() >= m * k && b.len() >= k * n, "gemm operand sizes");
    let mut c = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: every index reached through the strides lies within the
    // dense extents checked above, and `c` is a fresh m x n buffer.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    c
}

/// Row-major `[m,k] x [k,n]`.
pub fn gemm(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    gemm_strided(m, k, n, a, (k, 1), b, (n, 1))
}

/// Transpose of a row-major `[r, c]` slice.
pub fn transpose(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = x[i * c + j];
        }
    }
    out
}

/// `[m,k] x [k,n]`
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = dims2(a, "matmul lhs")?;
    let [k2, n] = dims2(b, "matmul rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul {:?} x {:?}", a.shape(), b.shape())));
    }
    Tensor::new(vec![m, n], gemm(m, k, n, a.data(), b.data()))
}

/// `a^T b` for `a: [k,m]`, `b: [k,n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [k, m] = dims2(a, "matmul_tn lhs")?;
    let [k2, n] = dims2(b, "matmul_tn rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul_tn {:?} x {:?}", a.shape(), b.shape())));
    }
    Tensor::new(vec![m, n], gemm_strided(m, k, n, a.data(), (1, m), b.data(), (n, 1)))
}

/// `a b^T` for `a: [m,k]`, `b: [n,k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = dims2(a, "matmul_nt lhs")?;
    let [n, k2] = dims2(b, "matmul_nt rhs")?;
    if k != k2 {
        return Err(Error::Shape(format!("matmul_nt {:?} x {:?}", a.shape(), b.shape())));
    }
    Tensor::new(vec![m, n], gemm_strided(m, k, n, a.data(), (k, 1), b.data(), (1, k)))
}

// ---------------------------------------------------------------------------
// linear

/// `x [r, in] . w [in, out] + b [out]`
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [_, out_dim] = dims2(w, "linear weight")?;
    b.expect_shape(&[out_dim], "linear bias")?;
    let mut y = matmul(x, w)?;
    for row in y.data_mut().chunks_exact_mut(out_dim) {
        for (v, bv) in row.iter_mut().zip(b.data()) {
            *v += bv;
        }
    }
    guard(y, "linear")
}

pub struct LinearGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> LinearGrads {
    let dx = matmul_nt(dy, w).expect("linear_backward dx");
    let dw = matmul_tn(x, dy).expect("linear_backward dw");
    let out_dim = w.shape()[1];
    let mut db = vec![0.0; out_dim];
    for row in dy.data().chunks_exact(out_dim) {
        for (d, v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }
    LinearGrads {
        dx,
        dw,
        db: Tensor::new(vec![out_dim], db).expect("bias grad"),
    }
}

// ---------------------------------------------------------------------------
// elementwise

pub fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Gradient passes where the forward input was positive.
pub fn relu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let mut dx = dy.clone();
    for (d, &v) in dx.data_mut().iter_mut().zip(x.data()) {
        if v <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// convolution

/// Output spatial size of a convolution along one axis.
pub fn conv_out_size(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1)
}

/// Output positions `o` for which `o * stride + k - pad` lands in `0..input`.
fn valid_range(input: usize, out: usize, k: usize, stride: usize, pad: usize) -> std::ops::Range<usize> {
    let lo = if k >= pad { 0 } else { (pad - k).div_ceil(stride) };
    // largest o with o*stride + k - pad <= input - 1
    let hi = if input + pad > k {
        ((input + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    lo..hi.max(lo)
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.n * self.oh * self.ow
    }

    /// Visit every (row of the patch matrix, input plane offset, output
    /// column offset) pairing along with the valid output ranges.
    fn for_each_tap(
        &self,
        mut f: impl FnMut(usize, usize, usize, std::ops::Range<usize>, std::ops::Range<usize>, usize, usize),
    ) {
        let p = self.oh * self.ow;
        for ni in 0..self.n {
            for ci in 0..self.c {
                let plane = (ni * self.c + ci) * self.h * self.w;
                for ki in 0..self.kh {
                    let rows = valid_range(self.h, self.oh, ki, self.stride, self.pad);
                    for kj in 0..self.kw {
                        let cols = valid_range(self.w, self.ow, kj, self.stride, self.pad);
                        let r = (ci * self.kh + ki) * self.kw + kj;
                        f(r, plane, ni * p, rows.clone(), cols, ki, kj);
                    }
                }
            }
        }
    }
}

/// Patch matrix `[C*kh*kw, N*OH*OW]` with zeros where the kernel overhangs.
fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ncols = g.cols();
    let mut col = vec![0.0; g.k() * ncols];
    g.for_each_tap(|r, plane, off, rows, cols, ki, kj| {
        for oy in rows {
            let iy = oy * g.stride + ki - g.pad;
            let dst = r * ncols + off + oy * g.ow;
            if g.stride == 1 && !cols.is_empty() {
                let src = plane + iy * g.w + cols.start + kj - g.pad;
                col[dst + cols.start..dst + cols.end].copy_from_slice(&x[src..src + cols.len()]);
            } else {
                for ox in cols.clone() {
                    col[dst + ox] = x[plane + iy * g.w + ox * g.stride + kj - g.pad];
                }
            }
        }
    });
    col
}

fn col2im(col: &[f64], g: &ConvGeom) -> Vec<f64> {
    let ncols = g.cols();
    let mut x = vec![0.0; g.n * g.c * g.h * g.w];
    g.for_each_tap(|r, plane, off, rows, cols, ki, kj| {
        for oy in rows {
            let iy = oy * g.stride + ki - g.pad;
            let src = r * ncols + off + oy * g.ow;
            if g.stride == 1 && !cols.is_empty() {
                let dst = plane + iy * g.w + cols.start + kj - g.pad;
                for (d, v) in x[dst..dst + cols.len()]
                    .iter_mut()
                    .zip(&col[src + cols.start..src + cols.end])
                {
                    *d += v;
                }
            } else {
                for ox in cols.clone() {
                    x[plane + iy * g.w + ox * g.stride + kj - g.pad] += col[src + ox];
                }
            }
        }
    });
    x
}

fn conv_geom(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<ConvGeom> {
    let [n, c, h, wd] = dims4(x, "conv2d input")?;
    let [o, c2, kh, kw] = dims4(w, "conv2d kernel")?;
    if c != c2 {
        return Err(Error::Shape(format!(
            "conv2d: input has {c} channels, kernel expects {c2}"
        )));
    }
    if stride == 0 {
        return Err(Error::Invalid("conv2d stride must be >= 1".into()));
    }
    match (conv_out_size(h, kh, stride, pad), conv_out_size(wd, kw, stride, pad)) {
        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => Ok(ConvGeom {
            n,
            c,
            h,
            w: wd,
            o,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad,
        }),
        _ => Err(Error::Shape(format!(
            "conv2d: {h}x{wd} input too small for {kh}x{kw} kernel with pad {pad}"
        ))),
    }
}

/// 2-D cross-correlation with zero padding.
///
/// `x: [N,C,H,W]`, `w: [O,C,kh,kw]`, optional bias `[O]`.
pub fn conv2d(x: &Tensor, w: &Tensor, bias: Option<&Tensor>, stride: usize, pad: usize) -> Result<Tensor> {
    let g = conv_geom(x, w, stride, pad)?;
    if let Some(b) = bias {
        b.expect_shape(&[g.o], "conv2d bias")?;
    }
    let col = im2col(x.data(), &g);
    let y2 = gemm(g.o, g.k(), g.cols(), w.data(), &col);
    let p = g.oh * g.ow;
    let mut out = vec![0.0; g.n * g.o * p];
    for oi in 0..g.o {
        let b = bias.map_or(0.0, |b| b.data()[oi]);
        for ni in 0..g.n {
            let src = &y2[oi * g.cols() + ni * p..oi * g.cols() + (ni + 1) * p];
            for (d, s) in out[(ni * g.o + oi) * p..(ni * g.o + oi + 1) * p].iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    guard(Tensor::new(vec![g.n, g.o, g.oh, g.ow], out)?, "conv2d")
}

pub struct ConvGrads {
    pub dx: Tensor,
    pub dw: Tensor,
    pub db: Tensor,
}

pub fn conv2d_backward(x: &Tensor, w: &Tensor, stride: usize, pad: usize, dy: &Tensor) -> ConvGrads {
    conv2d_backward_impl(x, w, stride, pad, dy, true)
}

/// Kernel and bias gradients only; `dx` comes back as zeros. For layers whose
/// input is data rather than an activation.
pub fn conv2d_backward_params(x: &Tensor, w: &Tensor, stride: usize, pad: usize, dy: &Tensor) -> ConvGrads {
    conv2d_backward_impl(x, w, stride, pad, dy, false)
}

fn conv2d_backward_impl(x: &Tensor, w: &Tensor, stride: usize, pad: usize, dy: &Tensor, want_dx: bool) -> ConvGrads {
    let g = conv_geom(x, w, stride, pad).expect("conv2d_backward shapes");
    let p = g.oh * g.ow;
    let ncols = g.cols();
    // dy [N,O,P] -> [O, N*P]
    let mut dy2 = vec![0.0; g.o * ncols];
    for ni in 0..g.n {
        for oi in 0..g.o {
            dy2[oi * ncols + ni * p..oi * ncols + (ni + 1) * p]
                .copy_from_slice(&dy.data()[(ni * g.o + oi) * p..(ni * g.o + oi + 1) * p]);
        }
    }
    let db = dy2.chunks_exact(ncols).map(|r| r.iter().sum()).collect();
    let col = im2col(x.data(), &g);
    let dw = gemm_strided(g.o, ncols, g.k(), &dy2, (ncols, 1), &col, (1, ncols));
    let dx = if want_dx {
        let dcol = gemm_strided(g.k(), g.o, ncols, w.data(), (1, g.k()), &dy2, (ncols, 1));
        col2im(&dcol, &g)
    } else {
        vec![0.0; x.len()]
    };
    ConvGrads {
        dx: Tensor::new(x.shape().to_vec(), dx).expect("dx"),
        dw: Tensor::new(w.shape().to_vec(), dw).expect("dw"),
        db: Tensor::new(vec![g.o], db).expect("db"),
    }
}

// ---------------------------------------------------------------------------
// pooling

/// 2x2, stride-2 max pooling. Returns the output and, per output cell, the
/// flat input index of the selected element (first maximum in raster order).
pub fn maxpool2(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let [n, c, h, w] = dims4(x, "maxpool2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("maxpool2 needs even dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let cands = [
                    base + 2 * oy * w + 2 * ox,
                    base + 2 * oy * w + 2 * ox + 1,
                    base + (2 * oy + 1) * w + 2 * ox,
                    base + (2 * oy + 1) * w + 2 * ox + 1,
                ];
                let mut best = cands[0];
                for &k in &cands[1..] {
                    if xd[k] > xd[best] {
                        best = k;
                    }
                }
                out.push(xd[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, idx))
}

pub fn maxpool2_backward(input_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&k, &g) in argmax.iter().zip(dy.data()) {
        d[k] += g;
    }
    dx
}

/// Mean over H and W: `[N,C,H,W] -> [N,C]`.
pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = dims4(x, "global_avg_pool")?;
    let hw = h * w;
    let data = x
        .data()
        .chunks_exact(hw)
        .map(|p| p.iter().sum::<f64>() / hw as f64)
        .collect();
    Tensor::new(vec![n, c], data)
}

pub fn global_avg_pool_backward(input_shape: &[usize], dy: &Tensor) -> Tensor {
    let hw: usize = input_shape[2] * input_shape[3];
    let mut dx = Vec::with_capacity(dy.len() * hw);
    for &g in dy.data() {
        dx.extend(std::iter::repeat_n(g / hw as f64, hw));
    }
    Tensor::new(input_shape.to_vec(), dx).expect("gap grad")
}

// ---------------------------------------------------------------------------
// normalization and softmax

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct LayerNormCache {
    pub xhat: Tensor,
    pub inv_std: Vec<f64>,
}

/// Normalize each row of `x [r, d]` to zero mean, unit variance, then apply
/// `gamma`, `beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, LayerNormCache)> {
    let [_, d] = dims2(x, "layer_norm")?;
    gamma.expect_shape(&[d], "layer_norm gamma")?;
    beta.expect_shape(&[d], "layer_norm beta")?;
    let mut xhat = x.clone();
    let mut inv_std = Vec::new();
    for row in xhat.data_mut().chunks_exact_mut(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * is;
        }
        inv_std.push(is);
    }
    let mut y = xhat.clone();
    for row in y.data_mut().chunks_exact_mut(d) {
        for ((v, g), b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = *v * g + b;
        }
    }
    Ok((guard(y, "layer_norm")?, LayerNormCache { xhat, inv_std }))
}

pub struct LayerNormGrads {
    pub dx: Tensor,
    pub dgamma: Tensor,
    pub dbeta: Tensor,
}

pub fn layer_norm_backward(cache: &LayerNormCache, gamma: &Tensor, dy: &Tensor) -> LayerNormGrads {
    let d = gamma.len();
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    let mut dx = Vec::with_capacity(dy.len());
    for ((dyr, xr), &is) in dy
        .data()
        .chunks_exact(d)
        .zip(cache.xhat.data().chunks_exact(d))
        .zip(&cache.inv_std)
    {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for k in 0..d {
            dgamma[k] += dyr[k] * xr[k];
            dbeta[k] += dyr[k];
            let g = dyr[k] * gamma.data()[k];
            sum_g += g;
            sum_gx += g * xr[k];
        }
        let (mg, mgx) = (sum_g / d as f64, sum_gx / d as f64);
        for k in 0..d {
            let g = dyr[k] * gamma.data()[k];
            dx.push(is * (g - mg - xr[k] * mgx));
        }
    }
    LayerNormGrads {
        dx: Tensor::new(dy.shape().to_vec(), dx).expect("ln dx"),
        dgamma: Tensor::new(vec![d], dgamma).expect("ln dgamma"),
        dbeta: Tensor::new(vec![d], dbeta).expect("ln dbeta"),
    }
}

/// Row-wise softmax of `x [r, d]`, shifted by the row max.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let [_, d] = dims2(x, "softmax")?;
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(d) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    guard(y, "softmax")
}

/// Gradient of the softmax input given its output `y` and upstream `dy`.
pub fn softmax_rows_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let d = y.shape()[1];
    let mut dx = Vec::with_capacity(y.len());
    for (yr, gr) in y.data().chunks_exact(d).zip(dy.data().chunks_exact(d)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        dx.extend(yr.iter().zip(gr).map(|(a, b)| a * (b - dot)));
    }
    Tensor::new(y.shape().to_vec(), dx).expect("softmax grad")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_kernel_is_identity() {
        let x = Tensor::new(vec![1, 1, 3, 4], (0..12).map(f64::from).collect()).unwrap();
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &k, None, 1, 0).unwrap(), x);
    }

    #[test]
    fn ones_kernel_on_constant() {
        let x = Tensor::full(&[1, 1, 5, 5], 0.7);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        for v in y.data() {
            assert_abs_diff_eq!(*v, 6.3, epsilon = 1e-12);
        }
    }

    #[test]
    fn padded_strided_output_size() {
        let x = Tensor::full(&[2, 3, 7, 6], 1.0);
        let k = Tensor::full(&[4, 3, 3, 3], 1.0);
        let y = conv2d(&x, &k, Some(&Tensor::full(&[4], 0.5)), 2, 1).unwrap();
        assert_eq!(y.shape(), &[2, 4, 4, 3]);
        // top-left output sees a 2x2 corner of ones in each channel
        assert_abs_diff_eq!(y.data()[0], 3.0 * 4.0 + 0.5, epsilon = 1e-12);
        assert!(conv2d(&x, &Tensor::full(&[4, 2, 3, 3], 1.0), None, 1, 0).is_err());
        assert!(conv2d(&Tensor::full(&[1, 3, 2, 2], 1.0), &k, None, 1, 0).is_err());
    }

    #[test]
    fn maxpool_cases() {
        let (y, _) = maxpool2(&Tensor::full(&[1, 1, 4, 4], 2.0)).unwrap();
        assert_eq!(y.data(), &[2.0; 4]);
        let x = Tensor::new(vec![1, 1, 4, 4], (0..16).map(f64::from).collect()).unwrap();
        let (y, idx) = maxpool2(&x).unwrap();
        assert_eq!(y.data(), &[5.0, 7.0, 13.0, 15.0]);
        assert_eq!(idx, vec![5, 7, 13, 15]);
        // ties route to the first index
        let (_, idx) = maxpool2(&Tensor::full(&[1, 1, 2, 2], 1.0)).unwrap();
        assert_eq!(idx, vec![0]);
        assert!(maxpool2(&Tensor::full(&[1, 1, 3, 4], 1.0)).is_err());
    }

    #[test]
    fn relu_softmax_layernorm_basics() {
        let y = relu(&Tensor::new(vec![2], vec![-1.0, 2.0]).unwrap());
        assert_eq!(y.data(), &[0.0, 2.0]);
        let s = softmax_rows(&Tensor::full(&[2, 4], 3.3)).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let x = Tensor::new(vec![2, 5], vec![1.0, 2.0, 3.0, 4.0, 10.0, -3.0, 0.5, 0.5, 8.0, 1.0]).unwrap();
        let (y, _) = layer_norm(&x, &Tensor::full(&[5], 1.0), &Tensor::zeros(&[5])).unwrap();
        for r in 0..2 {
            let row = y.row(r);
            let m = row.iter().sum::<f64>() / 5.0;
            let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 5.0;
            assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 1.7).sin() * 30.0).collect()).unwrap();
        let y = softmax_rows(&x).unwrap();
        for r in 0..3 {
            assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_guard_trips() {
        let x = Tensor::new(vec![1, 2], vec![f64::NAN, 1.0]).unwrap();
        let err = linear(&x, &Tensor::full(&[2, 1], 1.0), &Tensor::zeros(&[1])).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn matmul_variants_agree() {
        let a = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![0.5, -1.0, 2.0, 0.0, 1.0, 1.0]).unwrap();
        let ab = matmul(&a, &b).unwrap();
        assert_eq!(ab.data(), &[7.5, 2.0, 18.0, 2.0]);
        let bt = Tensor::new(vec![2, 3], vec![0.5, 2.0, 1.0, -1.0, 0.0, 1.0]).unwrap();
        assert_eq!(matmul_nt(&a, &bt).unwrap(), ab);
        let at = Tensor::new(vec![3, 2], vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]).unwrap();
        assert_eq!(matmul_tn(&at, &b).unwrap(), ab);
    }
}
