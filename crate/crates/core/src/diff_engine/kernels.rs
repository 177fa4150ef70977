//! Slice-level forward/backward kernels. Every output element is produced by
//! one fixed sequential summation, so splitting work across threads never
//! changes a result bit.

use rayon::prelude::*;

/// Probability clip applied inside the masked binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// `floor((len + 2·pad − k) / stride) + 1`, or `None` if the kernel does not fit.
pub fn conv_output_len(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    (stride >= 1 && k >= 1 && k <= padded).then(|| (padded - k) / stride + 1)
}

/// Output positions `o` in `[lo, hi)` whose input index `o·stride + off − pad`
/// falls inside `[0, in_len)`.
fn valid_span(off: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    let lo = if pad > off {
        (pad - off).div_ceil(stride)
    } else {
        0
    };
    let hi = if in_len + pad > off {
        ((in_len + pad - off - 1) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeometry {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub f: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeometry {
    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }
}

pub(crate) fn conv2d_forward(g: &ConvGeometry, input: &[f64], kernel: &[f64], bias: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.f * g.out_plane()];
    out.par_chunks_mut(g.out_plane())
        .enumerate()
        .for_each(|(plane, dst)| {
            let (n, f) = (plane / g.f, plane % g.f);
            dst.fill(bias[f]);
            for c in 0..g.c {
                let src = &input[(n * g.c + c) * g.in_plane()..][..g.in_plane()];
                for ky in 0..g.k {
                    let (oy_lo, oy_hi) = valid_span(ky, g.pad, g.stride, g.h, g.ho);
                    for kx in 0..g.k {
                        let wgt = kernel[((f * g.c + c) * g.k + ky) * g.k + kx];
                        let (ox_lo, ox_hi) = valid_span(kx, g.pad, g.stride, g.w, g.wo);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * g.stride + ky - g.pad;
                            let srow = &src[iy * g.w..][..g.w];
                            let drow = &mut dst[oy * g.wo..][..g.wo];
                            for ox in ox_lo..ox_hi {
                                drow[ox] += wgt * srow[ox * g.stride + kx - g.pad];
                            }
                        }
                    }
                }
            }
        });
    out
}

pub(crate) fn conv2d_backward_input(g: &ConvGeometry, kernel: &[f64], gout: &[f64]) -> Vec<f64> {
    let mut gin = vec![0.0; g.n * g.c * g.in_plane()];
    gin.par_chunks_mut(g.in_plane())
        .enumerate()
        .for_each(|(plane, dst)| {
            let (n, c) = (plane / g.c, plane % g.c);
            for f in 0..g.f {
                let src = &gout[(n * g.f + f) * g.out_plane()..][..g.out_plane()];
                for ky in 0..g.k {
                    let (oy_lo, oy_hi) = valid_span(ky, g.pad, g.stride, g.h, g.ho);
                    for kx in 0..g.k {
                        let wgt = kernel[((f * g.c + c) * g.k + ky) * g.k + kx];
                        let (ox_lo, ox_hi) = valid_span(kx, g.pad, g.stride, g.w, g.wo);
                        for oy in oy_lo..oy_hi {
                            let iy = oy * g.stride + ky - g.pad;
                            let srow = &src[oy * g.wo..][..g.wo];
                            let drow = &mut dst[iy * g.w..][..g.w];
                            for ox in ox_lo..ox_hi {
                                drow[ox * g.stride + kx - g.pad] += wgt * srow[ox];
                            }
                        }
                    }
                }
            }
        });
    gin
}

/// Gradients of the kernel `[F, C, k, k]` and bias `[F]`.
pub(crate) fn conv2d_backward_params(g: &ConvGeometry, input: &[f64], gout: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let per_filter = g.c * g.k * g.k;
    let mut gk = vec![0.0; g.f * per_filter];
    gk.par_chunks_mut(per_filter).enumerate().for_each(|(f, dst)| {
        for n in 0..g.n {
            let go = &gout[(n * g.f + f) * g.out_plane()..][..g.out_plane()];
            for c in 0..g.c {
                let src = &input[(n * g.c + c) * g.in_plane()..][..g.in_plane()];
                for ky in 0..g.k {
                    let (oy_lo, oy_hi) = valid_span(ky, g.pad, g.stride, g.h, g.ho);
                    for kx in 0..g.k {
                        let (ox_lo, ox_hi) = valid_span(kx, g.pad, g.stride, g.w, g.wo);
                        let mut acc = 0.0;
                        for oy in oy_lo..oy_hi {
                            let iy = oy * g.stride + ky - g.pad;
                            let srow = &src[iy * g.w..][..g.w];
                            let grow = &go[oy * g.wo..][..g.wo];
                            for ox in ox_lo..ox_hi {
                                acc += grow[ox] * srow[ox * g.stride + kx - g.pad];
                            }
                        }
                        dst[(c * g.k + ky) * g.k + kx] += acc;
                    }
                }
            }
        }
    });
    let gb = (0..g.f)
        .map(|f| {
            (0..g.n)
                .map(|n| gout[(n * g.f + f) * g.out_plane()..][..g.out_plane()].iter().sum::<f64>())
                .sum()
        })
        .collect();
    (gk, gb)
}

/// Half-pixel (align-corners = false) source taps for one axis:
/// `(i0, i1, frac)` with the output equal to `v[i0] + frac·(v[i1] − v[i0])`.
pub fn upsample_taps(in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..in_len * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            (i0, i1, frac)
        })
        .collect()
}

pub(crate) fn upsample_forward(input: &[f64], planes: usize, h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (ho, wo) = (h * factor, w * factor);
    let ty = upsample_taps(h, factor);
    let tx = upsample_taps(w, factor);
    let mut out = vec![0.0; planes * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(p, dst)| {
        let src = &input[p * h * w..][..h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let a = src[y0 * w + x0];
                let b = src[y0 * w + x1];
                let c = src[y1 * w + x0];
                let d = src[y1 * w + x1];
                let top = a + lx * (b - a);
                let bottom = c + lx * (d - c);
                dst[oy * wo + ox] = top + ly * (bottom - top);
            }
        }
    });
    out
}

pub(crate) fn upsample_backward(gout: &[f64], planes: usize, h: usize, w: usize, factor: usize) -> Vec<f64> {
    let (ho, wo) = (h * factor, w * factor);
    let ty = upsample_taps(h, factor);
    let tx = upsample_taps(w, factor);
    let mut gin = vec![0.0; planes * h * w];
    gin.par_chunks_mut(h * w).enumerate().for_each(|(p, dst)| {
        let src = &gout[p * ho * wo..][..ho * wo];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let g = src[oy * wo + ox];
                let gt = g * (1.0 - ly);
                let gb = g * ly;
                dst[y0 * w + x0] += gt * (1.0 - lx);
                dst[y0 * w + x1] += gt * lx;
                dst[y1 * w + x0] += gb * (1.0 - lx);
                dst[y1 * w + x1] += gb * lx;
            }
        }
    });
    gin
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Masked binary cross-entropy value (before normalization) and the
/// normalizer `max(Σw, 1)`.
pub(crate) fn bce_forward(prob: &[f64], target: &[f64], weight: &[f64]) -> (f64, f64) {
    let mut total = 0.0;
    let mut wsum = 0.0;
    for ((&p, &t), &w) in prob.iter().zip(target).zip(weight) {
        if w == 0.0 {
            continue;
        }
        wsum += w;
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        total += w * (-t * p.ln() - (1.0 - t) * (1.0 - p).ln());
    }
    (total, wsum.max(1.0))
}

pub(crate) fn bce_backward(prob: &[f64], target: &[f64], weight: &[f64], denom: f64, g: f64) -> Vec<f64> {
    prob.iter()
        .zip(target)
        .zip(weight)
        .map(|((&p, &t), &w)| {
            if w == 0.0 || !(BCE_EPS..=1.0 - BCE_EPS).contains(&p) {
                0.0
            } else {
                g * w * (-t / p + (1.0 - t) / (1.0 - p)) / denom
            }
        })
        .collect()
}
