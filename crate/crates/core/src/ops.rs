//! Forward kernels for all differentiable primitives, plus the
//! vector-Jacobian products (backward rules) for the convolution family.
//!
//! Kernels are pure: they read their operands and allocate a fresh output.
//! Feature maps are C×H×W row-major. Convolution uses the cross-correlation
//! convention (no kernel flip) with zero padding; transposed convolution is
//! defined strictly as the adjoint of `conv2d`, so `<conv(x), g> == <x,
//! conv_t(g)>` holds exactly at padding 0.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pooling flavor shared by `global_pool` and `channel_pool`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

// ── Convolution ─────────────────────────────────────────────────────────

/// 2-D cross-correlation. `x`: C_in×H×W, `kernel`: C_out×C_in×kh×kw,
/// `bias`: length C_out. Output: C_out×H'×W' with
/// H' = floor((H + 2·padding − kh)/stride) + 1.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (ci_n, h, w) = x.dims3("conv2d")?;
    let (co_n, kh, kw) = check_conv_kernel("conv2d", kernel, ci_n, 1)?;
    check_bias("conv2d", bias, co_n)?;
    if stride == 0 {
        return Err(Error::Config("conv2d: stride must be >= 1".into()));
    }
    let (hp, wp) = (h + 2 * padding, w + 2 * padding);
    if kh > hp || kw > wp {
        return Err(Error::shape(
            "conv2d",
            format!("kernel {}x{} exceeds padded input {}x{}", kh, kw, hp, wp),
        ));
    }
    let oh = (hp - kh) / stride + 1;
    let ow = (wp - kw) / stride + 1;

    let xp_owned;
    let xp: &[T] = if padding == 0 {
        x.data()
    } else {
        xp_owned = pad_chw(x.data(), ci_n, h, w, padding);
        &xp_owned
    };

    let kd = kernel.data();
    let mut out = vec![T::ZERO; co_n * oh * ow];
    for co in 0..co_n {
        let oc = &mut out[co * oh * ow..(co + 1) * oh * ow];
        if let Some(b) = bias {
            let bv = b.data()[co];
            if bv != T::ZERO {
                oc.fill(bv);
            }
        }
        for ci in 0..ci_n {
            let xc = &xp[ci * hp * wp..(ci + 1) * hp * wp];
            let kc = &kd[(co * ci_n + ci) * kh * kw..(co * ci_n + ci + 1) * kh * kw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = kc[ky * kw + kx];
                    for oy in 0..oh {
                        let iy = oy * stride + ky;
                        let row = &xc[iy * wp + kx..];
                        let orow = &mut oc[oy * ow..oy * ow + ow];
                        if stride == 1 {
                            for (o, xv) in orow.iter_mut().zip(&row[..ow]) {
                                *o += wv * *xv;
                            }
                        } else {
                            for (ox, o) in orow.iter_mut().enumerate() {
                                *o += wv * row[ox * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![co_n, oh, ow], out)
}

/// Gradients of `conv2d` with respect to input, kernel, and bias.
pub(crate) fn conv2d_vjp<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: usize,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (ci_n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ks = kernel.shape();
    let (co_n, kh, kw) = (ks[0], ks[2], ks[3]);
    let (oh, ow) = (g.shape()[1], g.shape()[2]);
    let (hp, wp) = (h + 2 * padding, w + 2 * padding);

    let xp_owned;
    let xp: &[T] = if padding == 0 {
        x.data()
    } else {
        xp_owned = pad_chw(x.data(), ci_n, h, w, padding);
        &xp_owned
    };
    let gd = g.data();
    let kd = kernel.data();

    // Bias: per-channel sum of the output gradient.
    let mut db = vec![T::ZERO; co_n];
    for co in 0..co_n {
        let mut acc = T::ZERO;
        for gv in &gd[co * oh * ow..(co + 1) * oh * ow] {
            acc += *gv;
        }
        db[co] = acc;
    }

    // Kernel: correlate padded input with the output gradient.
    let mut dk = vec![T::ZERO; co_n * ci_n * kh * kw];
    for co in 0..co_n {
        let gc = &gd[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..ci_n {
            let xc = &xp[ci * hp * wp..(ci + 1) * hp * wp];
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = T::ZERO;
                    for oy in 0..oh {
                        let grow = &gc[oy * ow..oy * ow + ow];
                        let xrow = &xc[(oy * stride + ky) * wp + kx..];
                        if stride == 1 {
                            for (gv, xv) in grow.iter().zip(&xrow[..ow]) {
                                acc += *gv * *xv;
                            }
                        } else {
                            for (ox, gv) in grow.iter().enumerate() {
                                acc += *gv * xrow[ox * stride];
                            }
                        }
                    }
                    dk[((co * ci_n + ci) * kh + ky) * kw + kx] = acc;
                }
            }
        }
    }

    // Input: scatter the output gradient through the kernel into a padded
    // frame, then crop the interior.
    let mut dxp = vec![T::ZERO; ci_n * hp * wp];
    for ci in 0..ci_n {
        let dxc = &mut dxp[ci * hp * wp..(ci + 1) * hp * wp];
        for co in 0..co_n {
            let gc = &gd[co * oh * ow..(co + 1) * oh * ow];
            let kc = &kd[(co * ci_n + ci) * kh * kw..(co * ci_n + ci + 1) * kh * kw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = kc[ky * kw + kx];
                    for oy in 0..oh {
                        let iy = oy * stride + ky;
                        let drow = &mut dxc[iy * wp + kx..];
                        let grow = &gc[oy * ow..oy * ow + ow];
                        if stride == 1 {
                            for (d, gv) in drow[..ow].iter_mut().zip(grow) {
                                *d += wv * *gv;
                            }
                        } else {
                            for (ox, gv) in grow.iter().enumerate() {
                                drow[ox * stride] += wv * *gv;
                            }
                        }
                    }
                }
            }
        }
    }
    let dx = unpad_chw(&dxp, ci_n, h, w, padding);

    (
        Tensor::from_vec(vec![ci_n, h, w], dx).expect("conv2d_vjp dx shape"),
        Tensor::from_vec(vec![co_n, ci_n, kh, kw], dk).expect("conv2d_vjp dk shape"),
        Tensor::from_vec(vec![co_n], db).expect("conv2d_vjp db shape"),
    )
}

/// Transposed 2-D convolution (the adjoint of `conv2d` at padding 0).
/// `x`: C_in×H×W, `kernel`: C_in×C_out×kh×kw, `bias`: length C_out.
/// Output: C_out×((H−1)·stride+kh)×((W−1)·stride+kw).
pub fn transposed_conv2d<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let (ci_n, h, w) = x.dims3("transposed_conv2d")?;
    let (co_n, kh, kw) = check_conv_kernel("transposed_conv2d", kernel, ci_n, 0)?;
    check_bias("transposed_conv2d", bias, co_n)?;
    if stride == 0 {
        return Err(Error::Config("transposed_conv2d: stride must be >= 1".into()));
    }
    let oh = (h - 1) * stride + kh;
    let ow = (w - 1) * stride + kw;

    let kd = kernel.data();
    let xd = x.data();
    let mut out = vec![T::ZERO; co_n * oh * ow];
    if let Some(b) = bias {
        for co in 0..co_n {
            let bv = b.data()[co];
            if bv != T::ZERO {
                out[co * oh * ow..(co + 1) * oh * ow].fill(bv);
            }
        }
    }
    for co in 0..co_n {
        let oc = &mut out[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..ci_n {
            let xc = &xd[ci * h * w..(ci + 1) * h * w];
            let kc = &kd[(ci * co_n + co) * kh * kw..(ci * co_n + co + 1) * kh * kw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = kc[ky * kw + kx];
                    for iy in 0..h {
                        let orow = &mut oc[(iy * stride + ky) * ow + kx..];
                        let xrow = &xc[iy * w..iy * w + w];
                        if stride == 1 {
                            for (o, xv) in orow[..w].iter_mut().zip(xrow) {
                                *o += wv * *xv;
                            }
                        } else {
                            for (ix, xv) in xrow.iter().enumerate() {
                                orow[ix * stride] += wv * *xv;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![co_n, oh, ow], out)
}

/// Gradients of `transposed_conv2d` with respect to input, kernel, and bias.
pub(crate) fn transposed_conv2d_vjp<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (ci_n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let ks = kernel.shape();
    let (co_n, kh, kw) = (ks[1], ks[2], ks[3]);
    let (oh, ow) = (g.shape()[1], g.shape()[2]);
    let gd = g.data();
    let xd = x.data();
    let kd = kernel.data();

    let mut db = vec![T::ZERO; co_n];
    for co in 0..co_n {
        let mut acc = T::ZERO;
        for gv in &gd[co * oh * ow..(co + 1) * oh * ow] {
            acc += *gv;
        }
        db[co] = acc;
    }

    // Input gradient is a plain (strided) gather: the adjoint of scatter.
    let mut dx = vec![T::ZERO; ci_n * h * w];
    for ci in 0..ci_n {
        let dxc = &mut dx[ci * h * w..(ci + 1) * h * w];
        for co in 0..co_n {
            let gc = &gd[co * oh * ow..(co + 1) * oh * ow];
            let kc = &kd[(ci * co_n + co) * kh * kw..(ci * co_n + co + 1) * kh * kw];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = kc[ky * kw + kx];
                    for iy in 0..h {
                        let grow = &gc[(iy * stride + ky) * ow + kx..];
                        let drow = &mut dxc[iy * w..iy * w + w];
                        if stride == 1 {
                            for (d, gv) in drow.iter_mut().zip(&grow[..w]) {
                                *d += wv * *gv;
                            }
                        } else {
                            for (ix, d) in drow.iter_mut().enumerate() {
                                *d += wv * grow[ix * stride];
                            }
                        }
                    }
                }
            }
        }
    }

    let mut dk = vec![T::ZERO; ci_n * co_n * kh * kw];
    for ci in 0..ci_n {
        let xc = &xd[ci * h * w..(ci + 1) * h * w];
        for co in 0..co_n {
            let gc = &gd[co * oh * ow..(co + 1) * oh * ow];
            for ky in 0..kh {
                for kx in 0..kw {
                    let mut acc = T::ZERO;
                    for iy in 0..h {
                        let grow = &gc[(iy * stride + ky) * ow + kx..];
                        let xrow = &xc[iy * w..iy * w + w];
                        if stride == 1 {
                            for (xv, gv) in xrow.iter().zip(&grow[..w]) {
                                acc += *xv * *gv;
                            }
                        } else {
                            for (ix, xv) in xrow.iter().enumerate() {
                                acc += *xv * grow[ix * stride];
                            }
                        }
                    }
                    dk[((ci * co_n + co) * kh + ky) * kw + kx] = acc;
                }
            }
        }
    }

    (
        Tensor::from_vec(vec![ci_n, h, w], dx).expect("transposed_conv2d_vjp dx shape"),
        Tensor::from_vec(vec![ci_n, co_n, kh, kw], dk).expect("transposed_conv2d_vjp dk shape"),
        Tensor::from_vec(vec![co_n], db).expect("transposed_conv2d_vjp db shape"),
    )
}

// ── Dense layer ─────────────────────────────────────────────────────────

/// y = W·x + b. `x`: length n, `w`: m×n, `b`: length m.
pub fn fully_connected<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let n = match x.shape() {
        [n] => *n,
        s => return Err(Error::shape("fully_connected", format!("x must be a vector, got {:?}", s))),
    };
    let (m, wn) = match w.shape() {
        [m, wn] => (*m, *wn),
        s => return Err(Error::shape("fully_connected", format!("W must be m×n, got {:?}", s))),
    };
    if wn != n {
        return Err(Error::shape(
            "fully_connected",
            format!("x length {} vs W columns {}", n, wn),
        ));
    }
    check_bias("fully_connected", b, m)?;
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![T::ZERO; m];
    for i in 0..m {
        let mut acc = match b {
            Some(bias) => bias.data()[i],
            None => T::ZERO,
        };
        for (wv, xv) in wd[i * n..(i + 1) * n].iter().zip(xd) {
            acc += *wv * *xv;
        }
        out[i] = acc;
    }
    Tensor::from_vec(vec![m], out)
}

/// Gradients of `fully_connected` with respect to x, W, and b.
pub(crate) fn fully_connected_vjp<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let n = x.len();
    let m = g.len();
    let xd = x.data();
    let wd = w.data();
    let gd = g.data();
    let mut dx = vec![T::ZERO; n];
    let mut dw = vec![T::ZERO; m * n];
    for i in 0..m {
        let gv = gd[i];
        let wrow = &wd[i * n..(i + 1) * n];
        let drow = &mut dw[i * n..(i + 1) * n];
        for j in 0..n {
            dx[j] += wrow[j] * gv;
            drow[j] = xd[j] * gv;
        }
    }
    (
        Tensor::from_vec(vec![n], dx).expect("fully_connected_vjp dx shape"),
        Tensor::from_vec(vec![m, n], dw).expect("fully_connected_vjp dw shape"),
        g.clone(),
    )
}

// ── Activations ─────────────────────────────────────────────────────────

/// Elementwise max(0, x).
pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::ZERO))
}

/// Numerically stable logistic sigmoid, clamped to stay strictly inside
/// (0, 1) even where the exact value would round to 0 or 1.
pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    let y = if x >= T::ZERO {
        let e = (-x).exp();
        T::ONE / (T::ONE + e)
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    };
    y.max(T::MIN_POS).min(T::BELOW_ONE)
}

// ── Pooling ─────────────────────────────────────────────────────────────

/// Reduce each channel of a C×H×W map to one statistic; output length C.
/// Averages accumulate in f64 so a constant channel pools to exactly that
/// constant.
pub fn global_pool<T: Scalar>(f: &Tensor<T>, mode: PoolMode) -> Result<Tensor<T>> {
    Ok(global_pool_with_arg(f, mode)?.0)
}

pub(crate) fn global_pool_with_arg<T: Scalar>(
    f: &Tensor<T>,
    mode: PoolMode,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = f.dims3("global_pool")?;
    let hw = h * w;
    let fd = f.data();
    let mut out = vec![T::ZERO; c];
    let mut arg = vec![0usize; if mode == PoolMode::Max { c } else { 0 }];
    for ci in 0..c {
        let ch = &fd[ci * hw..(ci + 1) * hw];
        match mode {
            PoolMode::Avg => {
                let mut acc = 0.0f64;
                for v in ch {
                    acc += v.to_f64();
                }
                out[ci] = T::from_f64(acc / hw as f64);
            }
            PoolMode::Max => {
                let (mut best, mut best_i) = (ch[0], 0usize);
                for (i, v) in ch.iter().enumerate().skip(1) {
                    if *v > best {
                        best = *v;
                        best_i = i;
                    }
                }
                out[ci] = best;
                arg[ci] = best_i;
            }
        }
    }
    Ok((Tensor::from_vec(vec![c], out)?, arg))
}

/// Per-pixel mean or max across channels; output 1×H×W.
pub fn channel_pool<T: Scalar>(f: &Tensor<T>, mode: PoolMode) -> Result<Tensor<T>> {
    Ok(channel_pool_with_arg(f, mode)?.0)
}

pub(crate) fn channel_pool_with_arg<T: Scalar>(
    f: &Tensor<T>,
    mode: PoolMode,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = f.dims3("channel_pool")?;
    let hw = h * w;
    let fd = f.data();
    let mut out = vec![T::ZERO; hw];
    let mut arg = vec![0usize; if mode == PoolMode::Max { hw } else { 0 }];
    match mode {
        PoolMode::Avg => {
            for px in 0..hw {
                let mut acc = 0.0f64;
                for ci in 0..c {
                    acc += fd[ci * hw + px].to_f64();
                }
                out[px] = T::from_f64(acc / c as f64);
            }
        }
        PoolMode::Max => {
            for px in 0..hw {
                let (mut best, mut best_c) = (fd[px], 0usize);
                for ci in 1..c {
                    let v = fd[ci * hw + px];
                    if v > best {
                        best = v;
                        best_c = ci;
                    }
                }
                out[px] = best;
                arg[px] = best_c;
            }
        }
    }
    Ok((Tensor::from_vec(vec![1, h, w], out)?, arg))
}

// ── Broadcasting, concatenation, elementwise ────────────────────────────

/// Multiply a C×H×W map by a per-channel vector (length C) or a per-pixel
/// map (1×H×W).
pub fn broadcast_mul<T: Scalar>(f: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = f.dims3("broadcast_mul")?;
    let hw = h * w;
    let fd = f.data();
    let mut out = vec![T::ZERO; c * hw];
    if s.shape() == [c] {
        let sd = s.data();
        for ci in 0..c {
            let sv = sd[ci];
            for (o, v) in out[ci * hw..(ci + 1) * hw].iter_mut().zip(&fd[ci * hw..(ci + 1) * hw]) {
                *o = *v * sv;
            }
        }
    } else if s.shape() == [1, h, w] {
        let sd = s.data();
        for ci in 0..c {
            for ((o, v), sv) in out[ci * hw..(ci + 1) * hw]
                .iter_mut()
                .zip(&fd[ci * hw..(ci + 1) * hw])
                .zip(sd)
            {
                *o = *v * *sv;
            }
        }
    } else {
        return Err(Error::shape(
            "broadcast_mul",
            format!("scale shape {:?} matches neither [C]={:?} nor [1,H,W]=[1,{},{}]", s.shape(), [c], h, w),
        ));
    }
    Tensor::from_vec(vec![c, h, w], out)
}

/// Stack two maps along the channel axis: a's channels first, then b's.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ca, h, w) = a.dims3("concat_channels")?;
    let (cb, hb, wb) = b.dims3("concat_channels")?;
    if (h, w) != (hb, wb) {
        return Err(Error::shape(
            "concat_channels",
            format!("spatial mismatch: {}x{} vs {}x{}", h, w, hb, wb),
        ));
    }
    let mut out = Vec::with_capacity((ca + cb) * h * w);
    out.extend_from_slice(a.data());
    out.extend_from_slice(b.data());
    Tensor::from_vec(vec![ca + cb, h, w], out)
}

/// Elementwise sum of same-shape tensors.
pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_same("add", a, b, |x, y| x + y)
}

/// Elementwise product of same-shape tensors.
pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_same("mul", a, b, |x, y| x * y)
}

/// Elementwise quotient of same-shape tensors.
pub fn div<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip_same("div", a, b, |x, y| x / y)
}

/// Multiply every element by a constant.
pub fn scale<T: Scalar>(x: &Tensor<T>, c: T) -> Tensor<T> {
    x.map(|v| v * c)
}

/// Add a constant to every element.
pub fn add_scalar<T: Scalar>(x: &Tensor<T>, c: T) -> Tensor<T> {
    x.map(|v| v + c)
}

/// Clamp every element into [lo, hi].
pub fn clamp<T: Scalar>(x: &Tensor<T>, lo: T, hi: T) -> Tensor<T> {
    x.map(|v| v.max(lo).min(hi))
}

/// Elementwise natural logarithm.
pub fn ln<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.ln())
}

/// Sum all elements into a scalar tensor.
pub fn sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut acc = T::ZERO;
    for v in x.data() {
        acc += *v;
    }
    Tensor::scalar(acc)
}

fn zip_same<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(a.like(a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect()))
}

// ── Shared helpers ──────────────────────────────────────────────────────

/// Validate a 4-D conv kernel; `in_axis` is the axis holding C_in (1 for
/// conv2d's C_out×C_in×kh×kw, 0 for transposed conv's C_in×C_out×kh×kw).
/// Returns (C_out, kh, kw).
fn check_conv_kernel<T: Scalar>(
    op: &'static str,
    kernel: &Tensor<T>,
    ci_n: usize,
    in_axis: usize,
) -> Result<(usize, usize, usize)> {
    let ks = kernel.shape();
    if ks.len() != 4 {
        return Err(Error::shape(op, format!("kernel must be 4-D, got {:?}", ks)));
    }
    if ks[in_axis] != ci_n {
        return Err(Error::shape(
            op,
            format!("input has {} channels but kernel expects {}", ci_n, ks[in_axis]),
        ));
    }
    Ok((ks[1 - in_axis], ks[2], ks[3]))
}

fn check_bias<T: Scalar>(op: &'static str, bias: Option<&Tensor<T>>, c_out: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(Error::shape(
                op,
                format!("bias shape {:?}, expected [{}]", b.shape(), c_out),
            ));
        }
    }
    Ok(())
}

fn pad_chw<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, p: usize) -> Vec<T> {
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::ZERO; c * hp * wp];
    for ci in 0..c {
        for i in 0..h {
            let src = &x[(ci * h + i) * w..(ci * h + i + 1) * w];
            let dst = &mut out[(ci * hp + i + p) * wp + p..(ci * hp + i + p) * wp + p + w];
            dst.copy_from_slice(src);
        }
    }
    out
}

fn unpad_chw<T: Scalar>(xp: &[T], c: usize, h: usize, w: usize, p: usize) -> Vec<T> {
    if p == 0 {
        return xp.to_vec();
    }
    let (hp, wp) = (h + 2 * p, w + 2 * p);
    let mut out = vec![T::ZERO; c * h * w];
    for ci in 0..c {
        for i in 0..h {
            let src = &xp[(ci * hp + i + p) * wp + p..(ci * hp + i + p) * wp + p + w];
            out[(ci * h + i) * w..(ci * h + i + 1) * w].copy_from_slice(src);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t3(c: usize, h: usize, w: usize, data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(vec![c, h, w], data).unwrap()
    }

    /// Independent sliding-window convolution oracle: direct summation with
    /// explicit virtual zero padding, no buffer tricks.
    fn conv_oracle(
        x: &Tensor<f64>,
        k: &Tensor<f64>,
        b: &[f64],
        stride: usize,
        padding: usize,
    ) -> Tensor<f64> {
        let (ci_n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co_n, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
        let oh = (h + 2 * padding - kh) / stride + 1;
        let ow = (w + 2 * padding - kw) / stride + 1;
        let mut out = vec![0.0; co_n * oh * ow];
        for co in 0..co_n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..ci_n {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                    acc += x.data()[(ci * h + iy as usize) * w + ix as usize]
                                        * k.data()[((co * ci_n + ci) * kh + ky) * kw + kx];
                                }
                            }
                        }
                    }
                    out[(co * oh + oy) * ow + ox] = acc;
                }
            }
        }
        t3(co_n, oh, ow, out)
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    fn rand_t(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor<f64> {
        Tensor::rand_uniform(shape, -1.0, 1.0, rng)
    }

    #[test]
    fn conv2d_matches_hand_worked_window_sums() {
        let x = t3(1, 3, 3, vec![1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let k = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0; 4]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
        let y = conv2d(&x, &k, Some(&b), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[12., 16., 24., 28.]);
        assert!(y.bits_eq(&conv_oracle(&x, &k, &[0.0], 1, 0)));
    }

    #[test]
    fn conv2d_identity_kernel_is_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Tensor<f32> = Tensor::rand_uniform(vec![3, 5, 4], -2.0, 2.0, &mut rng);
        let mut kd = vec![0.0f32; 9];
        kd[0] = 1.0; // k[0][0]
        kd[4] = 1.0; // k[1][1]
        kd[8] = 1.0; // k[2][2]
        let k = Tensor::from_vec(vec![3, 3, 1, 1], kd).unwrap();
        let y = conv2d(&x, &k, None, 1, 0).unwrap();
        assert!(y.bits_eq(&x));
    }

    #[test]
    fn conv2d_zero_kernel_emits_bias_everywhere() {
        let x = t3(2, 3, 3, vec![0.5; 18]);
        let k = Tensor::zeros(vec![2, 2, 3, 3]);
        let b = Tensor::from_vec(vec![2], vec![1.5, -0.25]).unwrap();
        let y = conv2d(&x, &k, Some(&b), 1, 1).unwrap();
        assert_eq!(y.shape(), &[2, 3, 3]);
        assert!(y.data()[..9].iter().all(|&v| v == 1.5));
        assert!(y.data()[9..].iter().all(|&v| v == -0.25));
    }

    #[test]
    fn conv2d_output_shape_follows_floor_formula() {
        let x: Tensor<f64> = Tensor::zeros(vec![1, 5, 7]);
        let k = Tensor::zeros(vec![1, 1, 3, 3]);
        // H' = floor((5+2-3)/2)+1 = 3, W' = floor((7+2-3)/2)+1 = 4
        let y = conv2d(&x, &k, None, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 4]);
    }

    #[test]
    fn conv2d_rejects_channel_mismatch() {
        let x: Tensor<f64> = Tensor::zeros(vec![2, 4, 4]);
        let k = Tensor::zeros(vec![1, 3, 2, 2]);
        assert!(matches!(conv2d(&x, &k, None, 1, 0), Err(Error::Shape { .. })));
    }

    #[test]
    fn transposed_conv2d_matches_hand_worked_scatter() {
        let x = t3(1, 1, 1, vec![2.0]);
        let k = Tensor::from_vec(vec![1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec(vec![1], vec![0.0]).unwrap();
        let y = transposed_conv2d(&x, &k, Some(&b), 1).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[2., 4., 6., 8.]);
    }

    #[test]
    fn transposed_conv2d_identity_and_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = rand_t(vec![2, 3, 3], &mut rng);
        let mut kd = vec![0.0; 4];
        kd[0] = 1.0; // k[ci=0][co=0]
        kd[3] = 1.0; // k[ci=1][co=1]
        let k = Tensor::from_vec(vec![2, 2, 1, 1], kd).unwrap();
        let y = transposed_conv2d(&x, &k, None, 1).unwrap();
        assert!(y.bits_eq(&x));

        let zero = Tensor::zeros(vec![1, 2, 2]);
        let k2 = Tensor::from_vec(vec![1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b2 = Tensor::from_vec(vec![1], vec![0.75]).unwrap();
        let y2 = transposed_conv2d(&zero, &k2, Some(&b2), 2).unwrap();
        assert!(y2.data().iter().all(|&v| v == 0.75));
    }

    #[test]
    fn transposed_conv2d_is_the_adjoint_of_conv2d() {
        // <conv(x; K, s), g> == <x, conv_t(g; K, s)> at padding 0.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (stride, k_sz) in [(1usize, 3usize), (2, 2), (2, 3)] {
            let x = rand_t(vec![2, 6, 5], &mut rng);
            let k = rand_t(vec![3, 2, k_sz, k_sz], &mut rng);
            let y = conv2d(&x, &k, None, stride, 0).unwrap();
            let g = rand_t(y.shape().to_vec(), &mut rng);
            // The conv kernel buffer doubles as the conv_t kernel: its
            // C_out×C_in layout reads as C_in×C_out from the output side.
            let xt = transposed_conv2d(&g, &k, None, stride).unwrap();
            // With stride > 1 the floor in conv's output size leaves tail
            // rows/cols of x untouched by any window; their adjoint is zero,
            // so the inner product runs over conv_t's (possibly smaller)
            // extent.
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (th, tw) = (xt.shape()[1], xt.shape()[2]);
            assert!(th <= h && tw <= w);
            let mut rhs = 0.0;
            for cc in 0..c {
                for i in 0..th {
                    for j in 0..tw {
                        rhs += x.data()[(cc * h + i) * w + j] * xt.data()[(cc * th + i) * tw + j];
                    }
                }
            }
            let lhs = dot(&y, &g);
            assert!((lhs - rhs).abs() < 1e-10, "stride {} k {}: {} vs {}", stride, k_sz, lhs, rhs);
        }
    }

    #[test]
    fn fully_connected_matches_matrix_vector_oracle() {
        let x = Tensor::from_vec(vec![2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::from_vec(vec![2, 2], vec![1., 1., 1., -1.]).unwrap();
        let b = Tensor::zeros(vec![2]);
        let y = fully_connected(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);

        // identity W
        let id = Tensor::from_vec(vec![2, 2], vec![1., 0., 0., 1.]).unwrap();
        assert!(fully_connected(&x, &id, None).unwrap().bits_eq(&x));

        // zero W -> bias
        let z = Tensor::zeros(vec![2, 2]);
        let b2 = Tensor::from_vec(vec![2], vec![4.0, -7.0]).unwrap();
        assert_eq!(fully_connected(&x, &z, Some(&b2)).unwrap().data(), &[4.0, -7.0]);
    }

    #[test]
    fn activations_hit_their_closed_forms() {
        let x = Tensor::from_vec(vec![3], vec![-3.0f64, 0.0, 3.0f64.ln()]).unwrap();
        let r = relu(&x);
        assert_eq!(r.data(), &[0.0, 0.0, 3.0f64.ln()]);
        let s = sigmoid(&x);
        assert!((s.data()[1] - 0.5).abs() < 1e-15);
        assert!((s.data()[2] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn sigmoid_stays_strictly_inside_unit_interval() {
        let x = Tensor::from_vec(vec![4], vec![-1e4f32, -30.0, 30.0, 1e4]).unwrap();
        for &v in sigmoid(&x).data() {
            assert!(v > 0.0 && v < 1.0, "sigmoid output {} escaped (0,1)", v);
        }
    }

    #[test]
    fn global_pool_matches_direct_summation() {
        let f = t3(1, 2, 2, vec![1., 3., 5., 7.]);
        assert_eq!(global_pool(&f, PoolMode::Avg).unwrap().data(), &[4.0]);
        assert_eq!(global_pool(&f, PoolMode::Max).unwrap().data(), &[7.0]);
    }

    #[test]
    fn global_pool_constant_channel_returns_the_constant_exactly() {
        let c = 0.37f32;
        let f: Tensor<f32> = Tensor::full(vec![2, 5, 3], c);
        assert!(global_pool(&f, PoolMode::Avg).unwrap().data().iter().all(|&v| v == c));
        assert!(global_pool(&f, PoolMode::Max).unwrap().data().iter().all(|&v| v == c));
    }

    #[test]
    fn channel_pool_enumerates_per_pixel() {
        let f = t3(3, 1, 1, vec![1., 5., 3.]);
        assert_eq!(channel_pool(&f, PoolMode::Avg).unwrap().data(), &[3.0]);
        assert_eq!(channel_pool(&f, PoolMode::Max).unwrap().data(), &[5.0]);

        let single = t3(1, 2, 2, vec![1., 2., 3., 4.]);
        let avg = channel_pool(&single, PoolMode::Avg).unwrap();
        assert_eq!(avg.shape(), &[1, 2, 2]);
        assert_eq!(avg.data(), single.data());
    }

    #[test]
    fn channel_pool_is_permutation_invariant() {
        let f = t3(3, 2, 1, vec![1., 2., 5., 6., 3., 4.]);
        let p = t3(3, 2, 1, vec![3., 4., 1., 2., 5., 6.]);
        for mode in [PoolMode::Avg, PoolMode::Max] {
            assert!(channel_pool(&f, mode).unwrap().bits_eq(&channel_pool(&p, mode).unwrap()));
        }
    }

    #[test]
    fn broadcast_mul_covers_both_modes() {
        let f = t3(1, 1, 2, vec![2., 4.]);
        let s = Tensor::from_vec(vec![1], vec![0.5]).unwrap();
        assert_eq!(broadcast_mul(&f, &s).unwrap().data(), &[1.0, 2.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f2 = rand_t(vec![3, 2, 2], &mut rng);
        let ones_c = Tensor::full(vec![3], 1.0);
        assert!(broadcast_mul(&f2, &ones_c).unwrap().bits_eq(&f2));
        let zeros_px = Tensor::zeros(vec![1, 2, 2]);
        assert!(broadcast_mul(&f2, &zeros_px).unwrap().data().iter().all(|&v| v == 0.0));

        let bad = Tensor::zeros(vec![2, 2]);
        assert!(broadcast_mul(&f2, &bad).is_err());
    }

    #[test]
    fn concat_channels_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_t(vec![2, 4, 4], &mut rng);
        let b = rand_t(vec![3, 4, 4], &mut rng);
        let y = concat_channels(&a, &b).unwrap();
        assert_eq!(y.shape(), &[5, 4, 4]);
        // element (C1, i, j) of the result equals element (0, i, j) of b
        assert_eq!(y.data()[2 * 16], b.data()[0]);

        let empty: Tensor<f64> = Tensor::zeros(vec![0, 4, 4]);
        assert!(concat_channels(&a, &empty).unwrap().bits_eq(&a));

        let mis = rand_t(vec![1, 3, 4], &mut rng);
        assert!(concat_channels(&a, &mis).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn conv2d_agrees_with_oracle(
            seed in 0u64..500,
            ci in 1usize..3,
            co in 1usize..3,
            h in 3usize..8,
            w in 3usize..8,
            k in 1usize..4,
            stride in 1usize..3,
            padding in 0usize..2,
        ) {
            prop_assume!(k <= h + 2 * padding && k <= w + 2 * padding);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_t(vec![ci, h, w], &mut rng);
            let kt = rand_t(vec![co, ci, k, k], &mut rng);
            let b = rand_t(vec![co], &mut rng);
            let fast = conv2d(&x, &kt, Some(&b), stride, padding).unwrap();
            let slow = conv_oracle(&x, &kt, b.data(), stride, padding);
            prop_assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
        }

        #[test]
        fn pool_order_min_avg_max(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = rand_t(vec![3, 4, 5], &mut rng);
            let avg = global_pool(&f, PoolMode::Avg).unwrap();
            let max = global_pool(&f, PoolMode::Max).unwrap();
            for c in 0..3 {
                let ch = &f.data()[c * 20..(c + 1) * 20];
                let min = ch.iter().cloned().fold(f64::INFINITY, f64::min);
                prop_assert!(min <= avg.data()[c] && avg.data()[c] <= max.data()[c]);
            }
        }

        #[test]
        fn concat_preserves_every_element(seed in 0u64..500, ca in 1usize..3, cb in 1usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_t(vec![ca, 3, 2], &mut rng);
            let b = rand_t(vec![cb, 3, 2], &mut rng);
            let y = concat_channels(&a, &b).unwrap();
            for (i, v) in a.data().iter().enumerate() {
                prop_assert_eq!(y.data()[i], *v);
            }
            for (i, v) in b.data().iter().enumerate() {
                prop_assert_eq!(y.data()[ca * 6 + i], *v);
            }
        }
    }

    #[test]
    fn forward_kernels_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Tensor<f32> = Tensor::rand_uniform(vec![2, 6, 6], -1.0, 1.0, &mut rng);
        let k: Tensor<f32> = Tensor::rand_uniform(vec![3, 2, 3, 3], -1.0, 1.0, &mut rng);
        let a = conv2d(&x, &k, None, 1, 1).unwrap();
        let b = conv2d(&x, &k, None, 1, 1).unwrap();
        assert!(a.bits_eq(&b));
    }
}
