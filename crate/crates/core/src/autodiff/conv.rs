//! Convolution kernels used by the graph ops.
//!
//! `conv2d` is cross-correlation (no kernel flip) over `[C, F, T]` maps; the
//! transposed variant is its exact linear adjoint with the same kernel array
//! and geometry, which makes `<y, conv(x)> == <convT(y), x>` hold to
//! rounding. The time axis is innermost and contiguous; the hot loops run
//! over slices so the stride-1 case vectorizes.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Stride and zero padding in (frequency, time) order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl ConvGeom {
    pub fn new(stride: (usize, usize), pad: (usize, usize)) -> Self {
        ConvGeom { stride, pad }
    }
}

/// `floor((in + 2*pad - k)/stride) + 1`, or None when the padded extent is
/// shorter than the kernel.
pub fn conv2d_out_dim(in_dim: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = in_dim + 2 * pad;
    if padded < kernel || stride == 0 {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

fn check_conv_shapes(
    op: &'static str,
    x: &Tensor,
    k: &Tensor,
    in_axis: usize,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    if x.rank() != 3 {
        return Err(Error::shape(op, format!("input must be [C, F, T], got {:?}", x.shape())));
    }
    if k.rank() != 4 {
        return Err(Error::shape(op, format!("kernel must be rank 4, got {:?}", k.shape())));
    }
    if k.shape()[in_axis] != x.shape()[0] {
        return Err(Error::shape(
            op,
            format!("kernel {:?} does not accept {} input channels", k.shape(), x.shape()[0]),
        ));
    }
    Ok((
        x.shape()[0],
        x.shape()[1],
        x.shape()[2],
        k.shape()[1 - in_axis],
        k.shape()[2],
        k.shape()[3],
    ))
}

/// Forward convolution: `x[Ci,H,W] * k[Co,Ci,kh,kw] (+ b[Co]) -> y[Co,H',W']`.
pub fn conv2d_forward(x: &Tensor, k: &Tensor, b: Option<&Tensor>, geom: ConvGeom) -> Result<Tensor> {
    let (ci_n, h, w, co_n, kh, kw) = check_conv_shapes("conv2d", x, k, 1)?;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.pad;
    let oh = conv2d_out_dim(h, kh, sh, ph)
        .ok_or_else(|| Error::invalid("conv2d", format!("padded height {} < kernel {kh}", h + 2 * ph)))?;
    let ow = conv2d_out_dim(w, kw, sw, pw)
        .ok_or_else(|| Error::invalid("conv2d", format!("padded width {} < kernel {kw}", w + 2 * pw)))?;
    if let Some(b) = b {
        if b.shape() != [co_n] {
            return Err(Error::shape("conv2d", format!("bias {:?} for {co_n} channels", b.shape())));
        }
    }

    let mut y = vec![0.0; co_n * oh * ow];
    if let Some(b) = b {
        for co in 0..co_n {
            y[co * oh * ow..(co + 1) * oh * ow].fill(b.data()[co]);
        }
    }

    let xd = x.data();
    let kd = k.data();
    for co in 0..co_n {
        let y_slab = &mut y[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..ci_n {
            let x_slab = &xd[ci * h * w..(ci + 1) * h * w];
            let k_base = (co * ci_n + ci) * kh * kw;
            for u in 0..kh {
                for i in 0..oh {
                    let a = (i * sh + u) as isize - ph as isize;
                    if a < 0 || a >= h as isize {
                        continue;
                    }
                    let x_row = &x_slab[a as usize * w..a as usize * w + w];
                    let y_row = &mut y_slab[i * ow..i * ow + ow];
                    for v in 0..kw {
                        let kval = kd[k_base + u * kw + v];
                        if kval == 0.0 {
                            continue;
                        }
                        if sw == 1 {
                            let b0 = v as isize - pw as isize;
                            let j0 = (-b0).max(0) as usize;
                            let j1 = (w as isize - b0).clamp(j0 as isize, ow as isize) as usize;
                            let xs = &x_row[(j0 as isize + b0) as usize..(j1 as isize + b0) as usize];
                            for (yv, xv) in y_row[j0..j1].iter_mut().zip(xs) {
                                *yv += kval * xv;
                            }
                        } else {
                            for j in 0..ow {
                                let bcol = (j * sw + v) as isize - pw as isize;
                                if bcol >= 0 && bcol < w as isize {
                                    y_row[j] += kval * x_row[bcol as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[co_n, oh, ow], y)
}

/// Gradients of [`conv2d_forward`] with respect to input and kernel.
pub fn conv2d_backward(
    x: &Tensor,
    k: &Tensor,
    geom: ConvGeom,
    gy: &Tensor,
    want_x: bool,
    want_k: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (ci_n, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (co_n, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let (oh, ow) = (gy.shape()[1], gy.shape()[2]);
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.pad;

    let mut gx = if want_x { Some(vec![0.0; ci_n * h * w]) } else { None };
    let mut gk = if want_k { Some(vec![0.0; co_n * ci_n * kh * kw]) } else { None };

    let xd = x.data();
    let kd = k.data();
    let gd = gy.data();
    for co in 0..co_n {
        let g_slab = &gd[co * oh * ow..(co + 1) * oh * ow];
        for ci in 0..ci_n {
            let x_slab = &xd[ci * h * w..(ci + 1) * h * w];
            let k_base = (co * ci_n + ci) * kh * kw;
            for u in 0..kh {
                for i in 0..oh {
                    let a = (i * sh + u) as isize - ph as isize;
                    if a < 0 || a >= h as isize {
                        continue;
                    }
                    let row_off = a as usize * w;
                    let g_row = &g_slab[i * ow..i * ow + ow];
                    for v in 0..kw {
                        if sw == 1 {
                            let b0 = v as isize - pw as isize;
                            let j0 = (-b0).max(0) as usize;
                            let j1 = (w as isize - b0).clamp(j0 as isize, ow as isize) as usize;
                            if j0 >= j1 {
                                continue;
                            }
                            let xr = row_off + (j0 as isize + b0) as usize;
                            if let Some(gk) = gk.as_mut() {
                                let mut acc = 0.0;
                                for (gv, xv) in g_row[j0..j1].iter().zip(&x_slab[xr..xr + (j1 - j0)]) {
                                    acc += gv * xv;
                                }
                                gk[k_base + u * kw + v] += acc;
                            }
                            if let Some(gx) = gx.as_mut() {
                                let kval = kd[k_base + u * kw + v];
                                if kval != 0.0 {
                                    let base = ci * h * w + xr;
                                    for (jj, gv) in g_row[j0..j1].iter().enumerate() {
                                        gx[base + jj] += kval * gv;
                                    }
                                }
                            }
                        } else {
                            let kval = kd[k_base + u * kw + v];
                            for j in 0..ow {
                                let bcol = (j * sw + v) as isize - pw as isize;
                                if bcol < 0 || bcol >= w as isize {
                                    continue;
                                }
                                let g = g_row[j];
                                if let Some(gk) = gk.as_mut() {
                                    gk[k_base + u * kw + v] += g * x_slab[row_off + bcol as usize];
                                }
                                if let Some(gx) = gx.as_mut() {
                                    gx[ci * h * w + row_off + bcol as usize] += kval * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (
        gx.map(|d| Tensor::new(x.shape(), d).expect("gx shape")),
        gk.map(|d| Tensor::new(k.shape(), d).expect("gk shape")),
    )
}

/// Transposed convolution: the adjoint of [`conv2d_forward`] in its input,
/// mapping `x[Cin,Hs,Ws]` up to `y[Cout,H,W]` with kernel `[Cin,Cout,kh,kw]`.
/// `out_hw` must be a size whose forward convolution yields `(Hs, Ws)`.
pub fn convt2d_forward(
    x: &Tensor,
    k: &Tensor,
    b: Option<&Tensor>,
    geom: ConvGeom,
    out_hw: (usize, usize),
) -> Result<Tensor> {
    let (cin_n, hs, ws, cout_n, kh, kw) = check_conv_shapes("conv2d_transposed", x, k, 0)?;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.pad;
    let (h, w) = out_hw;
    if conv2d_out_dim(h, kh, sh, ph) != Some(hs) || conv2d_out_dim(w, kw, sw, pw) != Some(ws) {
        return Err(Error::invalid(
            "conv2d_transposed",
            format!(
                "out shape {:?} does not map back to input {:?} under stride {:?} pad {:?}",
                out_hw,
                (hs, ws),
                geom.stride,
                geom.pad
            ),
        ));
    }
    if let Some(b) = b {
        if b.shape() != [cout_n] {
            return Err(Error::shape(
                "conv2d_transposed",
                format!("bias {:?} for {cout_n} channels", b.shape()),
            ));
        }
    }

    let mut y = vec![0.0; cout_n * h * w];
    if let Some(b) = b {
        for co in 0..cout_n {
            y[co * h * w..(co + 1) * h * w].fill(b.data()[co]);
        }
    }

    let xd = x.data();
    let kd = k.data();
    for cin in 0..cin_n {
        let x_slab = &xd[cin * hs * ws..(cin + 1) * hs * ws];
        for cout in 0..cout_n {
            let y_slab = &mut y[cout * h * w..(cout + 1) * h * w];
            let k_base = (cin * cout_n + cout) * kh * kw;
            for u in 0..kh {
                for i in 0..hs {
                    let a = (i * sh + u) as isize - ph as isize;
                    if a < 0 || a >= h as isize {
                        continue;
                    }
                    let x_row = &x_slab[i * ws..i * ws + ws];
                    let y_row = &mut y_slab[a as usize * w..a as usize * w + w];
                    for v in 0..kw {
                        let kval = kd[k_base + u * kw + v];
                        if kval == 0.0 {
                            continue;
                        }
                        if sw == 1 {
                            let b0 = v as isize - pw as isize;
                            let j0 = (-b0).max(0) as usize;
                            let j1 = (w as isize - b0).clamp(j0 as isize, ws as isize) as usize;
                            let ys = &mut y_row[(j0 as isize + b0) as usize..(j1 as isize + b0) as usize];
                            for (yv, xv) in ys.iter_mut().zip(&x_row[j0..j1]) {
                                *yv += kval * xv;
                            }
                        } else {
                            for j in 0..ws {
                                let bcol = (j * sw + v) as isize - pw as isize;
                                if bcol >= 0 && bcol < w as isize {
                                    y_row[bcol as usize] += kval * x_row[j];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[cout_n, h, w], y)
}

/// Gradients of [`convt2d_forward`] with respect to input and kernel.
pub fn convt2d_backward(
    x: &Tensor,
    k: &Tensor,
    geom: ConvGeom,
    gy: &Tensor,
    want_x: bool,
    want_k: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (cin_n, hs, ws) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (cout_n, kh, kw) = (k.shape()[1], k.shape()[2], k.shape()[3]);
    let (h, w) = (gy.shape()[1], gy.shape()[2]);
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.pad;

    let mut gx = if want_x { Some(vec![0.0; cin_n * hs * ws]) } else { None };
    let mut gk = if want_k { Some(vec![0.0; cin_n * cout_n * kh * kw]) } else { None };

    let xd = x.data();
    let kd = k.data();
    let gd = gy.data();
    for cin in 0..cin_n {
        let x_slab = &xd[cin * hs * ws..(cin + 1) * hs * ws];
        for cout in 0..cout_n {
            let g_slab = &gd[cout * h * w..(cout + 1) * h * w];
            let k_base = (cin * cout_n + cout) * kh * kw;
            for u in 0..kh {
                for i in 0..hs {
                    let a = (i * sh + u) as isize - ph as isize;
                    if a < 0 || a >= h as isize {
                        continue;
                    }
                    let g_row = &g_slab[a as usize * w..a as usize * w + w];
                    for v in 0..kw {
                        if sw == 1 {
                            let b0 = v as isize - pw as isize;
                            let j0 = (-b0).max(0) as usize;
                            let j1 = (w as isize - b0).clamp(j0 as isize, ws as isize) as usize;
                            if j0 >= j1 {
                                continue;
                            }
                            let gr = (j0 as isize + b0) as usize;
                            if let Some(gk) = gk.as_mut() {
                                let mut acc = 0.0;
                                for (xv, gv) in x_slab[i * ws + j0..i * ws + j1].iter().zip(&g_row[gr..gr + (j1 - j0)]) {
                                    acc += xv * gv;
                                }
                                gk[k_base + u * kw + v] += acc;
                            }
                            if let Some(gx) = gx.as_mut() {
                                let kval = kd[k_base + u * kw + v];
                                if kval != 0.0 {
                                    let base = cin * hs * ws + i * ws;
                                    for (jj, gv) in g_row[gr..gr + (j1 - j0)].iter().enumerate() {
                                        gx[base + j0 + jj] += kval * gv;
                                    }
                                }
                            }
                        } else {
                            let kval = kd[k_base + u * kw + v];
                            for j in 0..ws {
                                let bcol = (j * sw + v) as isize - pw as isize;
                                if bcol < 0 || bcol >= w as isize {
                                    continue;
                                }
                                let g = g_row[bcol as usize];
                                if let Some(gk) = gk.as_mut() {
                                    gk[k_base + u * kw + v] += g * x_slab[i * ws + j];
                                }
                                if let Some(gx) = gx.as_mut() {
                                    gx[cin * hs * ws + i * ws + j] += kval * g;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (
        gx.map(|d| Tensor::new(x.shape(), d).expect("gx shape")),
        gk.map(|d| Tensor::new(k.shape(), d).expect("gk shape")),
    )
}

/// Channel bias gradient: sum of `gy[c, :, :]` per channel.
pub fn bias_grad(gy: &Tensor) -> Tensor {
    let c = gy.shape()[0];
    let inner: usize = gy.shape()[1..].iter().product();
    let mut out = Vec::with_capacity(c);
    for ci in 0..c {
        out.push(gy.data()[ci * inner..(ci + 1) * inner].iter().sum());
    }
    Tensor::new(&[c], out).expect("bias shape")
}
