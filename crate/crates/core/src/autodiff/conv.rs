//! 2-D cross-correlation kernels (im2col + sgemm), zero padding only.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        input: [usize; 4],
        weight: [usize; 4],
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Self> {
        let [batch, cin, h, w] = input;
        let [cout, wcin, kh, kw] = weight;
        if wcin != cin {
            return Err(Error::invalid(format!(
                "conv2d: input has {cin} channels, weight expects {wcin}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::invalid(format!(
                "conv2d: kernel {kh}x{kw} must have odd extents"
            )));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::invalid("conv2d: stride and dilation must be >= 1"));
        }
        let out_extent = |n: usize, k: usize| -> Option<usize> {
            let span = dilation * (k - 1) + 1;
            let padded = n + 2 * padding;
            (padded >= span).then(|| (padded - span) / stride + 1)
        };
        let (ho, wo) = match (out_extent(h, kh), out_extent(w, kw)) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => (ho, wo),
            _ => {
                return Err(Error::invalid(format!(
                    "conv2d: non-positive output extent for {h}x{w} input, {kh}x{kw} kernel, \
                     stride {stride}, dilation {dilation}, padding {padding}"
                )))
            }
        };
        Ok(Self {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            dilation,
            padding,
            ho,
            wo,
        })
    }

    fn patch_len(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    /// The input itself is the im2col matrix for 1x1, stride 1, unpadded kernels.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.batch, self.cout, self.ho, self.wo]
    }
}

/// Source index along one axis for output position `o` and kernel tap `k`.
#[inline]
fn src_index(o: usize, k: usize, stride: usize, dilation: usize, padding: usize, n: usize) -> Option<usize> {
    let pos = (o * stride + k * dilation) as isize - padding as isize;
    (pos >= 0 && (pos as usize) < n).then_some(pos as usize)
}

/// Output columns `[lo, hi)` whose tap `k` lands inside a row of length `n`,
/// and the source column of `lo`.
#[inline]
fn valid_cols(g: &ConvGeom, k: usize, n: usize) -> (usize, usize, usize) {
    let off = k * g.dilation;
    let lo = if g.padding > off {
        (g.padding - off).div_ceil(g.stride)
    } else {
        0
    };
    let hi = if n + g.padding > off {
        ((n + g.padding - off - 1) / g.stride + 1).min(g.wo)
    } else {
        0
    };
    if lo >= hi {
        return (0, 0, 0);
    }
    (lo, hi, lo * g.stride + off - g.padding)
}

fn im2col(g: &ConvGeom, input: &[f32], col: &mut [f32]) {
    let n = g.out_plane();
    for ci in 0..g.cin {
        let plane = &input[ci * g.in_plane()..(ci + 1) * g.in_plane()];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * n..(row + 1) * n];
                let (lo, hi, first) = valid_cols(g, kx, g.w);
                for oy in 0..g.ho {
                    let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    let Some(iy) = src_index(oy, ky, g.stride, g.dilation, g.padding, g.h) else {
                        out_row.fill(0.0);
                        continue;
                    };
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    if g.stride == 1 {
                        out_row[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                    } else {
                        for (j, v) in out_row[lo..hi].iter_mut().enumerate() {
                            *v = src[first + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

fn col2im_add(g: &ConvGeom, col: &[f32], grad_input: &mut [f32]) {
    let n = g.out_plane();
    for ci in 0..g.cin {
        let plane = &mut grad_input[ci * g.in_plane()..(ci + 1) * g.in_plane()];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &col[row * n..(row + 1) * n];
                let (lo, hi, first) = valid_cols(g, kx, g.w);
                for oy in 0..g.ho {
                    let Some(iy) = src_index(oy, ky, g.stride, g.dilation, g.padding, g.h) else {
                        continue;
                    };
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let s = &src[oy * g.wo + lo..oy * g.wo + hi];
                    if g.stride == 1 {
                        for (d, v) in dst[first..first + hi - lo].iter_mut().zip(s) {
                            *d += v;
                        }
                    } else {
                        for (j, v) in s.iter().enumerate() {
                            dst[first + j * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

/// `c[m,n] = alpha * a[m,k] * b[k,n] + beta * c[m,n]` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() >= m * n);
    // SAFETY: the debug assertions above document the extents; callers pass
    // slices sized from the same ConvGeom that produces m, k, n and strides.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn forward(g: &ConvGeom, input: &[f32], weight: &[f32], bias: Option<&[f32]>) -> Vec<f32> {
    let k = g.patch_len();
    let n = g.out_plane();
    let mut out = vec![0.0f32; g.batch * g.cout * n];
    let mut col = if g.is_pointwise() { Vec::new() } else { vec![0.0f32; k * n] };
    for b in 0..g.batch {
        let x = &input[b * g.cin * g.in_plane()..(b + 1) * g.cin * g.in_plane()];
        let cols: &[f32] = if g.is_pointwise() {
            x
        } else {
            im2col(g, x, &mut col);
            &col
        };
        let y = &mut out[b * g.cout * n..(b + 1) * g.cout * n];
        gemm(g.cout, k, n, weight, (k, 1), cols, (n, 1), 0.0, y);
        if let Some(bias) = bias {
            for (co, plane) in y.chunks_exact_mut(n).enumerate() {
                plane.iter_mut().for_each(|v| *v += bias[co]);
            }
        }
    }
    out
}

pub struct ConvGrads {
    pub input: Option<Vec<f32>>,
    pub weight: Option<Vec<f32>>,
    pub bias: Option<Vec<f32>>,
}

pub fn backward(
    g: &ConvGeom,
    input: &[f32],
    weight: &[f32],
    grad_out: &[f32],
    want: (bool, bool, bool),
) -> ConvGrads {
    let (want_input, want_weight, want_bias) = want;
    let k = g.patch_len();
    let n = g.out_plane();
    let mut grad_input = want_input.then(|| vec![0.0f32; input.len()]);
    let mut grad_weight = want_weight.then(|| vec![0.0f32; weight.len()]);
    let mut grad_bias = want_bias.then(|| vec![0.0f32; g.cout]);
    let pointwise = g.is_pointwise();
    let mut col = if pointwise || !want_weight { Vec::new() } else { vec![0.0f32; k * n] };
    let mut dcol = if pointwise || !want_input { Vec::new() } else { vec![0.0f32; k * n] };

    for b in 0..g.batch {
        let in_range = b * g.cin * g.in_plane()..(b + 1) * g.cin * g.in_plane();
        let dy = &grad_out[b * g.cout * n..(b + 1) * g.cout * n];

        if let Some(gb) = grad_bias.as_mut() {
            for (co, plane) in dy.chunks_exact(n).enumerate() {
                gb[co] += plane.iter().sum::<f32>();
            }
        }
        if let Some(gw) = grad_weight.as_mut() {
            let cols: &[f32] = if pointwise {
                &input[in_range.clone()]
            } else {
                im2col(g, &input[in_range.clone()], &mut col);
                &col
            };
            // dW[cout, k] += dY[cout, n] * cols^T[n, k]
            gemm(g.cout, n, k, dy, (n, 1), cols, (1, n), 1.0, gw);
        }
        if let Some(gi) = grad_input.as_mut() {
            let gi = &mut gi[in_range];
            if pointwise {
                // dX[cin, n] += W^T[cin, cout] * dY[cout, n]
                gemm(k, g.cout, n, weight, (1, k), dy, (n, 1), 1.0, gi);
            } else {
                gemm(k, g.cout, n, weight, (1, k), dy, (n, 1), 0.0, &mut dcol);
                col2im_add(g, &dcol, gi);
            }
        }
    }
    ConvGrads {
        input: grad_input,
        weight: grad_weight,
        bias: grad_bias,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_extent_formula() {
        let g = ConvGeom::new([1, 1, 5, 5], [1, 1, 3, 3], 2, 2, 2).unwrap();
        // floor((5 + 4 - 4 - 1) / 2) + 1 = 3
        assert_eq!((g.ho, g.wo), (3, 3));
        assert!(ConvGeom::new([1, 2, 5, 5], [1, 3, 3, 3], 1, 1, 1).is_err());
        assert!(ConvGeom::new([1, 1, 2, 2], [1, 1, 3, 3], 1, 2, 0).is_err());
        assert!(ConvGeom::new([1, 1, 5, 5], [1, 1, 2, 2], 1, 1, 0).is_err());
    }
}
