//! Convolution kernels built on im2col/col2im and GEMM.

use std::ops::Add;

use num_traits::Zero;

use super::layer::ConvGeom;
use super::real::{matmul, Real};

#[inline]
fn source_index(o: usize, k: usize, stride: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + k) as isize - pad as isize;
    (i >= 0 && (i as usize) < len).then_some(i as usize)
}

/// Unfold one sample `[C, D, H, W]` into `[C·kd·kh·kw, od·oh·ow]` columns.
pub fn im2col<T: Copy + Zero>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let [d, h, w] = g.input;
    let [od, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let n_out = od * oh * ow;
    debug_assert_eq!(cols.len(), g.in_channels * g.kernel_volume() * n_out);
    let mut row = 0;
    for c in 0..g.in_channels {
        let xc = &x[c * d * h * w..(c + 1) * d * h * w];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut cols[row * n_out..(row + 1) * n_out];
                    let mut idx = 0;
                    for zo in 0..od {
                        let zi = source_index(zo, a, sd, pd, d);
                        for yo in 0..oh {
                            let yi = source_index(yo, b, sh, ph, h);
                            match (zi, yi) {
                                (Some(zi), Some(yi)) => {
                                    let base = (zi * h + yi) * w;
                                    for xo in 0..ow {
                                        dst[idx] = match source_index(xo, e, sw, pw, w) {
                                            Some(xi) => xc[base + xi],
                                            None => T::zero(),
                                        };
                                        idx += 1;
                                    }
                                }
                                _ => {
                                    dst[idx..idx + ow].iter_mut().for_each(|v| *v = T::zero());
                                    idx += ow;
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into a `[C, D, H, W]` sample.
pub fn col2im<T: Copy + Zero + Add<Output = T>>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let [d, h, w] = g.input;
    let [od, oh, ow] = g.output;
    let [kd, kh, kw] = g.kernel;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.padding;
    let n_out = od * oh * ow;
    x.iter_mut().for_each(|v| *v = T::zero());
    let mut row = 0;
    for c in 0..g.in_channels {
        let xc = &mut x[c * d * h * w..(c + 1) * d * h * w];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &cols[row * n_out..(row + 1) * n_out];
                    let mut idx = 0;
                    for zo in 0..od {
                        let zi = source_index(zo, a, sd, pd, d);
                        for yo in 0..oh {
                            let yi = source_index(yo, b, sh, ph, h);
                            if let (Some(zi), Some(yi)) = (zi, yi) {
                                let base = (zi * h + yi) * w;
                                for xo in 0..ow {
                                    if let Some(xi) = source_index(xo, e, sw, pw, w) {
                                        xc[base + xi] = xc[base + xi] + src[idx];
                                    }
                                    idx += 1;
                                }
                            } else {
                                idx += ow;
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Direct convolution of one sample. `weight` is `[Cout, Cin·K]`.
pub fn conv_forward<T: Real>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom, cols: &mut Vec<T>, y: &mut [T]) {
    let rows = g.in_channels * g.kernel_volume();
    let n_out = g.output_volume();
    cols.resize(rows * n_out, T::zero());
    im2col(x, g, cols);
    matmul(weight, false, cols, false, y, g.out_channels, rows, n_out, false);
    add_channel_bias(y, bias, n_out);
}

/// Backward of [`conv_forward`]; accumulates into `dw`/`db` and overwrites `dx`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward<T: Real>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    g: &ConvGeom,
    cols: &mut Vec<T>,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let rows = g.in_channels * g.kernel_volume();
    let n_out = g.output_volume();
    cols.resize(rows * n_out, T::zero());
    im2col(x, g, cols);
    matmul(dy, false, cols, true, dw, g.out_channels, n_out, rows, true);
    accumulate_channel_sums(dy, db, n_out);
    if let Some(dx) = dx {
        matmul(weight, true, dy, false, cols, rows, g.out_channels, n_out, false);
        col2im(cols, g, dx);
    }
}

/// Transposed convolution of one sample. `g` is the adjoint direct
/// convolution (its input is this layer's output); `weight` is `[Cin, Cout·K]`
/// where `Cin = g.out_channels`.
pub fn transposed_forward<T: Real>(x: &[T], weight: &[T], bias: &[T], g: &ConvGeom, cols: &mut Vec<T>, y: &mut [T]) {
    let rows = g.in_channels * g.kernel_volume();
    let n_in = g.output_volume();
    cols.resize(rows * n_in, T::zero());
    matmul(weight, true, x, false, cols, rows, g.out_channels, n_in, false);
    col2im(cols, g, y);
    add_channel_bias(y, bias, g.input_volume());
}

#[allow(clippy::too_many_arguments)]
pub fn transposed_backward<T: Real>(
    x: &[T],
    weight: &[T],
    dy: &[T],
    g: &ConvGeom,
    cols: &mut Vec<T>,
    dw: &mut [T],
    db: &mut [T],
    dx: Option<&mut [T]>,
) {
    let rows = g.in_channels * g.kernel_volume();
    let n_in = g.output_volume();
    cols.resize(rows * n_in, T::zero());
    im2col(dy, g, cols);
    matmul(x, false, cols, true, dw, g.out_channels, n_in, rows, true);
    accumulate_channel_sums(dy, db, g.input_volume());
    if let Some(dx) = dx {
        matmul(weight, false, cols, false, dx, g.out_channels, rows, n_in, false);
    }
}

fn add_channel_bias<T: Real>(y: &mut [T], bias: &[T], plane: usize) {
    for (chunk, &b) in y.chunks_mut(plane).zip(bias) {
        chunk.iter_mut().for_each(|v| *v = *v + b);
    }
}

fn accumulate_channel_sums<T: Real>(dy: &[T], db: &mut [T], plane: usize) {
    for (chunk, acc) in dy.chunks(plane).zip(db.iter_mut()) {
        *acc = *acc + chunk.iter().copied().sum::<T>();
    }
}
