//! Forward and backward loops for the spatial ops. All feature maps are NCHW.

use super::Real;

/// Output extent of a strided window sweep.
pub(crate) fn out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// Range of output positions `o` for which `o * stride + offset - padding`
/// lands inside `[0, input)`.
fn valid_outputs(
    offset: usize,
    padding: usize,
    stride: usize,
    input: usize,
    output: usize,
) -> std::ops::Range<usize> {
    // o*s + k >= p  <=>  o >= ceil((p - k) / s)
    let lo = if offset >= padding { 0 } else { (padding - offset).div_ceil(stride) };
    // o*s + k - p <= input - 1  <=>  o <= (input - 1 + p - k) / s
    let hi = if input + padding > offset {
        ((input - 1 + padding - offset) / stride + 1).min(output)
    } else {
        0
    };
    lo..hi.max(lo)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

pub(crate) fn conv2d_forward<T: Real>(g: &ConvGeom, x: &[T], wt: &[T], bias: Option<&[T]>) -> Vec<T> {
    let plane = g.oh * g.ow;
    let mut out = vec![T::zero(); g.n * g.cout * plane];
    for n in 0..g.n {
        for o in 0..g.cout {
            let dst = &mut out[(n * g.cout + o) * plane..][..plane];
            if let Some(b) = bias {
                dst.iter_mut().for_each(|v| *v = b[o]);
            }
            for c in 0..g.cin {
                let src = &x[(n * g.cin + c) * g.h * g.w..][..g.h * g.w];
                for i in 0..g.kh {
                    let rows = valid_outputs(i, g.padding, g.stride, g.h, g.oh);
                    for j in 0..g.kw {
                        let wv = wt[((o * g.cin + c) * g.kh + i) * g.kw + j];
                        let cols = valid_outputs(j, g.padding, g.stride, g.w, g.ow);
                        for r in rows.clone() {
                            let ih = r * g.stride + i - g.padding;
                            let src_row = &src[ih * g.w..][..g.w];
                            let dst_row = &mut dst[r * g.ow..][..g.ow];
                            for q in cols.clone() {
                                let iw = q * g.stride + j - g.padding;
                                dst_row[q] = dst_row[q] + wv * src_row[iw];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns (grad_input, grad_weight, grad_bias).
pub(crate) fn conv2d_backward<T: Real>(
    g: &ConvGeom,
    x: &[T],
    wt: &[T],
    gout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let plane = g.oh * g.ow;
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); g.cout];
    for n in 0..g.n {
        for o in 0..g.cout {
            let go = &gout[(n * g.cout + o) * plane..][..plane];
            gb[o] = gb[o] + go.iter().copied().sum::<T>();
            for c in 0..g.cin {
                let base = (n * g.cin + c) * g.h * g.w;
                for i in 0..g.kh {
                    let rows = valid_outputs(i, g.padding, g.stride, g.h, g.oh);
                    for j in 0..g.kw {
                        let widx = ((o * g.cin + c) * g.kh + i) * g.kw + j;
                        let wv = wt[widx];
                        let cols = valid_outputs(j, g.padding, g.stride, g.w, g.ow);
                        let mut acc = T::zero();
                        for r in rows.clone() {
                            let ih = r * g.stride + i - g.padding;
                            for q in cols.clone() {
                                let iw = q * g.stride + j - g.padding;
                                let gv = go[r * g.ow + q];
                                let xi = base + ih * g.w + iw;
                                acc = acc + x[xi] * gv;
                                gx[xi] = gx[xi] + wv * gv;
                            }
                        }
                        gw[widx] = gw[widx] + acc;
                    }
                }
            }
        }
    }
    (gx, gw, gb)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Window max; padded positions never win. Ties resolve to the first element
/// in row-major window order. Returns values and flat argmax indices.
pub(crate) fn max_pool_forward<T: Real>(g: &PoolGeom, x: &[T]) -> (Vec<T>, Vec<usize>) {
    let mut out = Vec::with_capacity(g.planes * g.oh * g.ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for p in 0..g.planes {
        let base = p * g.h * g.w;
        for r in 0..g.oh {
            for q in 0..g.ow {
                let mut best: Option<(T, usize)> = None;
                for i in 0..g.kernel {
                    let ih = (r * g.stride + i) as isize - g.padding as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for j in 0..g.kernel {
                        let iw = (q * g.stride + j) as isize - g.padding as isize;
                        if iw < 0 || iw >= g.w as isize {
                            continue;
                        }
                        let idx = base + ih as usize * g.w + iw as usize;
                        if best.is_none_or(|(b, _)| x[idx] > b) {
                            best = Some((x[idx], idx));
                        }
                    }
                }
                let (v, idx) = best.expect("every window overlaps the input");
                out.push(v);
                arg.push(idx);
            }
        }
    }
    (out, arg)
}

pub(crate) fn upsample_nearest_forward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
    x: &[T],
) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        for r in 0..oh {
            let row = &src[(r / factor) * w..][..w];
            out.extend((0..ow).map(|q| row[q / factor]));
        }
    }
    out
}

pub(crate) fn upsample_nearest_backward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
    gout: &[T],
) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let mut gx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for r in 0..oh {
            for q in 0..ow {
                let idx = p * h * w + (r / factor) * w + q / factor;
                gx[idx] = gx[idx] + gout[(p * oh + r) * ow + q];
            }
        }
    }
    gx
}

/// Source taps for one output coordinate under the half-pixel convention:
/// `src = (dst + 0.5) / factor - 0.5`, clamped at zero.
fn bilinear_taps(dst: usize, factor: usize, len: usize) -> (usize, usize, f64) {
    let src = ((dst as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    let frac = if i0 == len - 1 { 0.0 } else { src - i0 as f64 };
    (i0, i1, frac)
}

pub(crate) fn upsample_bilinear_forward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
    x: &[T],
) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let rows: Vec<_> = (0..oh).map(|r| bilinear_taps(r, factor, h)).collect();
    let cols: Vec<_> = (0..ow).map(|q| bilinear_taps(q, factor, w)).collect();
    let mut out = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        for &(r0, r1, fr) in &rows {
            let fr = T::of(fr);
            for &(c0, c1, fc) in &cols {
                let fc = T::of(fc);
                let top = src[r0 * w + c0] * (T::one() - fc) + src[r0 * w + c1] * fc;
                let bottom = src[r1 * w + c0] * (T::one() - fc) + src[r1 * w + c1] * fc;
                out.push(top * (T::one() - fr) + bottom * fr);
            }
        }
    }
    out
}

pub(crate) fn upsample_bilinear_backward<T: Real>(
    planes: usize,
    h: usize,
    w: usize,
    factor: usize,
    gout: &[T],
) -> Vec<T> {
    let (oh, ow) = (h * factor, w * factor);
    let rows: Vec<_> = (0..oh).map(|r| bilinear_taps(r, factor, h)).collect();
    let cols: Vec<_> = (0..ow).map(|q| bilinear_taps(q, factor, w)).collect();
    let mut gx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let dst = &mut gx[p * h * w..][..h * w];
        for (r, &(r0, r1, fr)) in rows.iter().enumerate() {
            let fr = T::of(fr);
            for (q, &(c0, c1, fc)) in cols.iter().enumerate() {
                let fc = T::of(fc);
                let g = gout[(p * oh + r) * ow + q];
                let gt = g * (T::one() - fr);
                let gb = g * fr;
                dst[r0 * w + c0] = dst[r0 * w + c0] + gt * (T::one() - fc);
                dst[r0 * w + c1] = dst[r0 * w + c1] + gt * fc;
                dst[r1 * w + c0] = dst[r1 * w + c0] + gb * (T::one() - fc);
                dst[r1 * w + c1] = dst[r1 * w + c1] + gb * fc;
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_output_range_matches_brute_force() {
        for input in 1..9 {
            for kernel in 1..=input.min(5) {
                for stride in 1..4 {
                    for padding in 0..kernel {
                        let output = out_extent(input, kernel, stride, padding);
                        for offset in 0..kernel {
                            let expect: Vec<usize> = (0..output)
                                .filter(|&o| {
                                    let pos = (o * stride + offset) as isize - padding as isize;
                                    pos >= 0 && pos < input as isize
                                })
                                .collect();
                            let got: Vec<usize> =
                                valid_outputs(offset, padding, stride, input, output).collect();
                            assert_eq!(got, expect, "in={input} k={kernel} s={stride} p={padding} off={offset}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn bilinear_taps_clamp_edges() {
        assert_eq!(bilinear_taps(0, 2, 3), (0, 1, 0.0));
        let (i0, i1, f) = bilinear_taps(5, 2, 3);
        assert_eq!((i0, i1, f), (2, 2, 0.0));
        let (i0, i1, f) = bilinear_taps(1, 2, 3);
        assert_eq!((i0, i1), (0, 1));
        assert!((f - 0.25).abs() < 1e-15);
    }
}
