//! Plain numeric kernels shared by the autograd tape and the
//! non-differentiable image utilities.

use crate::tensor::{Scalar, Tensor};

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

pub const SOBEL_X: [[f64; 3]; 3] = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
pub const SOBEL_Y: [[f64; 3]; 3] = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];

pub fn conv_out_size(size: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (size + 2 * pad - kernel) / stride + 1
}

/// Unfolds `x: [c, h, w]` into a `[c·k·k, ho·wo]` column matrix (zero padding).
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Scalar>(
    x: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<T>, usize, usize) {
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let p = ho * wo;
    let mut cols = vec![T::zero(); c * k * k * p];
    for ci in 0..c {
        let plane = &x[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let out_row = &mut dst[oy * wo..(oy + 1) * wo];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            *o = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    (cols, ho, wo)
}

/// Adjoint of [`im2col`]: scatters column gradients back into `dx`.
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<T: Scalar>(
    dcols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    dx: &mut [T],
) {
    let ho = conv_out_size(h, k, stride, pad);
    let wo = conv_out_size(w, k, stride, pad);
    let p = ho * wo;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &dcols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = ci * h * w + iy as usize * w;
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dx[base + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 3×3 Sobel responses of a single plane with replicated borders.
///
/// Written as sums of differences so flat regions give exactly zero.
pub fn sobel<T: Scalar>(plane: &[T], h: usize, w: usize) -> (Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); h * w];
    let mut gy = vec![T::zero(); h * w];
    let two = T::lit(2.0);
    for y in 0..h {
        let ym = clamp_index(y as isize - 1, h) * w;
        let y0 = y * w;
        let yp = clamp_index(y as isize + 1, h) * w;
        for x in 0..w {
            let xm = clamp_index(x as isize - 1, w);
            let xp = clamp_index(x as isize + 1, w);
            let p = |row: usize, col: usize| plane[row + col];
            gx[y0 + x] =
                (p(ym, xp) - p(ym, xm)) + two * (p(y0, xp) - p(y0, xm)) + (p(yp, xp) - p(yp, xm));
            gy[y0 + x] =
                (p(yp, xm) - p(ym, xm)) + two * (p(yp, x) - p(ym, x)) + (p(yp, xp) - p(ym, xp));
        }
    }
    (gx, gy)
}

/// Adjoint of [`sobel`].
pub fn sobel_backward<T: Scalar>(dgx: &[T], dgy: &[T], h: usize, w: usize, dplane: &mut [T]) {
    for y in 0..h {
        for x in 0..w {
            let gx = dgx[y * w + x];
            let gy = dgy[y * w + x];
            for (dy, (row_x, row_y)) in SOBEL_X.iter().zip(&SOBEL_Y).enumerate() {
                let yy = clamp_index(y as isize + dy as isize - 1, h);
                for dx in 0..3 {
                    let xx = clamp_index(x as isize + dx as isize - 1, w);
                    dplane[yy * w + xx] += T::lit(row_x[dx]) * gx + T::lit(row_y[dx]) * gy;
                }
            }
        }
    }
}

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Weighted channel sum down to one plane; single-channel input is copied.
pub fn luminance<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let (c, h, w) = (image.channels(), image.height(), image.width());
    if c == 1 {
        return image.clone();
    }
    debug_assert_eq!(c, 3);
    let hw = h * w;
    let data = image.data();
    let out = (0..hw)
        .map(|i| {
            T::lit(LUMA[0]) * data[i]
                + T::lit(LUMA[1]) * data[hw + i]
                + T::lit(LUMA[2]) * data[2 * hw + i]
        })
        .collect();
    Tensor::new(vec![1, h, w], out).expect("luminance shape")
}

/// 2×2 average pooling of a `[c, h, w]` buffer (h, w even).
pub fn avg_pool2<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let (h2, w2) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let mut out = vec![T::zero(); c * h2 * w2];
    for ci in 0..c {
        for y in 0..h2 {
            for xx in 0..w2 {
                let base = ci * h * w;
                let s = x[base + 2 * y * w + 2 * xx]
                    + x[base + 2 * y * w + 2 * xx + 1]
                    + x[base + (2 * y + 1) * w + 2 * xx]
                    + x[base + (2 * y + 1) * w + 2 * xx + 1];
                out[ci * h2 * w2 + y * w2 + xx] = s * quarter;
            }
        }
    }
    out
}
