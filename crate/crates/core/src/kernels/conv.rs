//! 2-D cross-correlation over NCHW buffers.
//!
//! Grouped convolutions go through im2col + GEMM per (batch, group). The
//! depthwise case (one input and one output channel per group) uses a direct
//! loop, which is much cheaper than building columns for a single channel.

use crate::error::{Error, Result};
use crate::tensor::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ConvParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvParams {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self { stride, padding, groups }
    }

    /// Stride 1, "same" padding for an odd kernel, no grouping.
    pub fn same(kernel: usize) -> Self {
        Self { stride: 1, padding: kernel / 2, groups: 1 }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub ho: usize,
    pub wo: usize,
    pub cg: usize,
    pub og: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn new(x: &[usize], w: &[usize], p: ConvParams) -> Result<Self> {
        let err = |msg: String| Error::shape("conv2d", msg);
        let [n, c, h, wd] = match *x {
            [a, b, c, d] => [a, b, c, d],
            _ => return Err(err(format!("input must be NCHW, got {x:?}"))),
        };
        let [o, ci, kh, kw] = match *w {
            [a, b, c, d] => [a, b, c, d],
            _ => return Err(err(format!("weight must be OIkk, got {w:?}"))),
        };
        if p.stride == 0 {
            return Err(err("stride must be >= 1".into()));
        }
        if p.groups == 0 || c % p.groups != 0 {
            return Err(err(format!("input channels {c} not divisible by groups {}", p.groups)));
        }
        if o % p.groups != 0 {
            return Err(err(format!("output channels {o} not divisible by groups {}", p.groups)));
        }
        if ci != c / p.groups {
            return Err(err(format!(
                "weight input-channel extent {ci} != input channels {c} / groups {}",
                p.groups
            )));
        }
        if kh != kw {
            return Err(err(format!("kernel must be square, got {kh}x{kw}")));
        }
        if h + 2 * p.padding < kh || wd + 2 * p.padding < kw {
            return Err(err(format!(
                "kernel {kh}x{kw} larger than padded input height/width {}x{}",
                h + 2 * p.padding,
                wd + 2 * p.padding
            )));
        }
        let ho = (h + 2 * p.padding - kh) / p.stride + 1;
        let wo = (wd + 2 * p.padding - kw) / p.stride + 1;
        Ok(Self {
            n,
            c,
            h,
            w: wd,
            o,
            k: kh,
            ho,
            wo,
            cg: ci,
            og: o / p.groups,
            stride: p.stride,
            pad: p.padding,
            groups: p.groups,
        })
    }

    pub fn out_shape(&self) -> Vec<usize> {
        vec![self.n, self.o, self.ho, self.wo]
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn is_depthwise(&self) -> bool {
        self.cg == 1 && self.og == 1
    }

    fn col_rows(&self) -> usize {
        self.cg * self.k * self.k
    }

    /// Output positions `[lo, hi)` along one axis whose input tap `lo*s + tap - pad`
    /// lands inside `[0, extent)`.
    fn valid(&self, out_len: usize, tap: usize, extent: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > tap { (self.pad - tap).div_ceil(s) } else { 0 };
        let hi = if extent + self.pad > tap {
            ((extent + self.pad - tap).div_ceil(s)).min(out_len)
        } else {
            0
        };
        (lo.min(out_len), hi.max(lo.min(out_len)))
    }
}

impl ConvGeom {
    /// Valid output ranges for every kernel row and every kernel column.
    fn tap_ranges(&self) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
        let rows = (0..self.k).map(|t| self.valid(self.ho, t, self.h)).collect();
        let cols = (0..self.k).map(|t| self.valid(self.wo, t, self.w)).collect();
        (rows, cols)
    }
}

fn im2col<E: Element>(x: &[E], g: &ConvGeom, cols: &mut [E]) {
    let (k, s, howo) = (g.k, g.stride, g.ho * g.wo);
    let (yr, xr) = g.tap_ranges();
    for (c, plane) in x.chunks_exact(g.h * g.w).take(g.cg).enumerate() {
        for (ki, &(oy_lo, oy_hi)) in yr.iter().enumerate() {
            for (kj, &(ox_lo, ox_hi)) in xr.iter().enumerate() {
                let row = &mut cols[((c * k + ki) * k + kj) * howo..][..howo];
                row[..oy_lo * g.wo].fill(E::zero());
                row[oy_hi * g.wo..].fill(E::zero());
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ki - g.pad;
                    let src = &plane[iy * g.w..(iy + 1) * g.w];
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    dst[..ox_lo].fill(E::zero());
                    dst[ox_hi..].fill(E::zero());
                    if s == 1 {
                        let ix0 = ox_lo + kj - g.pad;
                        dst[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox] = src[ox * s + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<E: Element>(cols: &[E], g: &ConvGeom, dx: &mut [E]) {
    let (k, s, howo) = (g.k, g.stride, g.ho * g.wo);
    let (yr, xr) = g.tap_ranges();
    for (c, plane) in dx.chunks_exact_mut(g.h * g.w).take(g.cg).enumerate() {
        for (ki, &(oy_lo, oy_hi)) in yr.iter().enumerate() {
            for (kj, &(ox_lo, ox_hi)) in xr.iter().enumerate() {
                let row = &cols[((c * k + ki) * k + kj) * howo..][..howo];
                for oy in oy_lo..oy_hi {
                    let iy = oy * s + ki - g.pad;
                    let dst = &mut plane[iy * g.w..(iy + 1) * g.w];
                    let src = &row[oy * g.wo..(oy + 1) * g.wo];
                    if s == 1 {
                        let ix0 = ox_lo + kj - g.pad;
                        for (d, &v) in dst[ix0..ix0 + (ox_hi - ox_lo)].iter_mut().zip(&src[ox_lo..ox_hi]) {
                            *d = *d + v;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            let ix = ox * s + kj - g.pad;
                            dst[ix] = dst[ix] + src[ox];
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_forward<E: Element>(x: &[E], w: &[E], g: &ConvGeom, out: &mut [E]) {
    let (k, s) = (g.k, g.stride);
    for b in 0..g.n {
        for ch in 0..g.c {
            let plane = &x[(b * g.c + ch) * g.h * g.w..][..g.h * g.w];
            let kern = &w[ch * k * k..(ch + 1) * k * k];
            let dst = &mut out[(b * g.o + ch) * g.ho * g.wo..][..g.ho * g.wo];
            for ki in 0..k {
                let (oy_lo, oy_hi) = g.valid(g.ho, ki, g.h);
                for kj in 0..k {
                    let wv = kern[ki * k + kj];
                    let (ox_lo, ox_hi) = g.valid(g.wo, kj, g.w);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ki - g.pad;
                        let src = &plane[iy * g.w..(iy + 1) * g.w];
                        let row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        if s == 1 {
                            let ix0 = ox_lo + kj - g.pad;
                            for (d, &v) in row[ox_lo..ox_hi].iter_mut().zip(&src[ix0..]) {
                                *d = *d + wv * v;
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                row[ox] = row[ox] + wv * src[ox * s + kj - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn depthwise_backward<E: Element>(
    x: &[E],
    w: &[E],
    dy: &[E],
    g: &ConvGeom,
    mut dx: Option<&mut [E]>,
    mut dw: Option<&mut [E]>,
) {
    let (k, s) = (g.k, g.stride);
    for b in 0..g.n {
        for ch in 0..g.c {
            let poff = (b * g.c + ch) * g.h * g.w;
            let plane = &x[poff..poff + g.h * g.w];
            let kern = &w[ch * k * k..(ch + 1) * k * k];
            let grad = &dy[(b * g.o + ch) * g.ho * g.wo..][..g.ho * g.wo];
            for ki in 0..k {
                let (oy_lo, oy_hi) = g.valid(g.ho, ki, g.h);
                for kj in 0..k {
                    let wv = kern[ki * k + kj];
                    let (ox_lo, ox_hi) = g.valid(g.wo, kj, g.w);
                    let mut acc = E::zero();
                    for oy in oy_lo..oy_hi {
                        let iy = oy * s + ki - g.pad;
                        let grow = &grad[oy * g.wo..(oy + 1) * g.wo];
                        if s == 1 {
                            let ix0 = ox_lo + kj - g.pad;
                            let n = ox_hi - ox_lo;
                            if dw.is_some() {
                                let src = &plane[iy * g.w + ix0..][..n];
                                acc = acc + src.iter().zip(&grow[ox_lo..ox_hi]).map(|(&a, &b)| a * b).sum::<E>();
                            }
                            if let Some(dx) = dx.as_deref_mut() {
                                let drow = &mut dx[poff + iy * g.w + ix0..][..n];
                                for (d, &gv) in drow.iter_mut().zip(&grow[ox_lo..ox_hi]) {
                                    *d = *d + wv * gv;
                                }
                            }
                        } else {
                            for ox in ox_lo..ox_hi {
                                let ix = ox * s + kj - g.pad;
                                acc = acc + plane[iy * g.w + ix] * grow[ox];
                                if let Some(dx) = dx.as_deref_mut() {
                                    let d = &mut dx[poff + iy * g.w + ix];
                                    *d = *d + wv * grow[ox];
                                }
                            }
                        }
                    }
                    if let Some(dw) = dw.as_deref_mut() {
                        let d = &mut dw[ch * k * k + ki * k + kj];
                        *d = *d + acc;
                    }
                }
            }
        }
    }
}

/// Copies one `h`×`w` plane into the interior of a zero-bordered buffer.
fn pad_plane<E: Element>(plane: &[E], g: &ConvGeom, buf: &mut [E]) {
    let wp = g.w + 2 * g.pad;
    for (y, row) in plane.chunks_exact(g.w).enumerate() {
        buf[(y + g.pad) * wp + g.pad..][..g.w].copy_from_slice(row);
    }
}

/// Dot product with independent partial sums so the loop vectorises.
fn dot<E: Element>(a: &[E], b: &[E]) -> E {
    let mut acc = [E::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut tail = E::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail = tail + x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Stride-1 depthwise convolution over a zero-padded plane. Outputs are
/// accumulated with the padded row pitch so every tap is one contiguous
/// multiply-add over `span` elements.
fn depthwise_forward_s1<E: Element>(x: &[E], w: &[E], g: &ConvGeom, out: &mut [E]) {
    let k = g.k;
    let wp = g.w + 2 * g.pad;
    let span = (g.ho - 1) * wp + g.wo;
    let mut padded = vec![E::zero(); (g.h + 2 * g.pad) * wp];
    let mut acc = vec![E::zero(); span];
    for b in 0..g.n {
        for ch in 0..g.c {
            let plane = &x[(b * g.c + ch) * g.h * g.w..][..g.h * g.w];
            pad_plane(plane, g, &mut padded);
            let kern = &w[ch * k * k..(ch + 1) * k * k];
            acc.fill(E::zero());
            for ki in 0..k {
                for kj in 0..k {
                    let wv = kern[ki * k + kj];
                    for (d, &v) in acc.iter_mut().zip(&padded[ki * wp + kj..][..span]) {
                        *d = *d + wv * v;
                    }
                }
            }
            let dst = &mut out[(b * g.o + ch) * g.ho * g.wo..][..g.ho * g.wo];
            for (oy, row) in dst.chunks_exact_mut(g.wo).enumerate() {
                row.copy_from_slice(&acc[oy * wp..][..g.wo]);
            }
        }
    }
}

fn depthwise_backward_s1<E: Element>(
    x: &[E],
    w: &[E],
    dy: &[E],
    g: &ConvGeom,
    mut dx: Option<&mut [E]>,
    mut dw: Option<&mut [E]>,
) {
    let k = g.k;
    let wp = g.w + 2 * g.pad;
    let span = (g.ho - 1) * wp + g.wo;
    let plen = (g.h + 2 * g.pad) * wp;
    let mut padded = vec![E::zero(); if dw.is_some() { plen } else { 0 }];
    let mut gpad = vec![E::zero(); if dx.is_some() { plen } else { 0 }];
    let mut grad = vec![E::zero(); span];
    for b in 0..g.n {
        for ch in 0..g.c {
            let poff = (b * g.c + ch) * g.h * g.w;
            let kern = &w[ch * k * k..(ch + 1) * k * k];
            let dyc = &dy[(b * g.o + ch) * g.ho * g.wo..][..g.ho * g.wo];
            for (oy, row) in dyc.chunks_exact(g.wo).enumerate() {
                grad[oy * wp..][..g.wo].copy_from_slice(row);
            }
            if let Some(dw) = dw.as_deref_mut() {
                pad_plane(&x[poff..poff + g.h * g.w], g, &mut padded);
                for ki in 0..k {
                    for kj in 0..k {
                        let d = &mut dw[ch * k * k + ki * k + kj];
                        *d = *d + dot(&padded[ki * wp + kj..][..span], &grad);
                    }
                }
            }
            if let Some(dx) = dx.as_deref_mut() {
                gpad.fill(E::zero());
                for ki in 0..k {
                    for kj in 0..k {
                        let wv = kern[ki * k + kj];
                        for (d, &gv) in gpad[ki * wp + kj..][..span].iter_mut().zip(&grad) {
                            *d = *d + wv * gv;
                        }
                    }
                }
                let dplane = &mut dx[poff..poff + g.h * g.w];
                for (y, drow) in dplane.chunks_exact_mut(g.w).enumerate() {
                    for (d, &v) in drow.iter_mut().zip(&gpad[(y + g.pad) * wp + g.pad..][..g.w]) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<E: Element>(x: &[E], w: &[E], bias: Option<&[E]>, g: &ConvGeom) -> Vec<E> {
    let howo = g.ho * g.wo;
    let mut out = vec![E::zero(); g.n * g.o * howo];
    if g.is_depthwise() && g.stride == 1 {
        depthwise_forward_s1(x, w, g, &mut out);
    } else if g.is_depthwise() {
        depthwise_forward(x, w, g, &mut out);
    } else {
        let kdim = g.col_rows();
        let mut cols = if g.is_pointwise() { Vec::new() } else { vec![E::zero(); kdim * howo] };
        for b in 0..g.n {
            for gi in 0..g.groups {
                let xg = &x[(b * g.c + gi * g.cg) * g.h * g.w..][..g.cg * g.h * g.w];
                let cols_ref: &[E] = if g.is_pointwise() {
                    xg
                } else {
                    im2col(xg, g, &mut cols);
                    &cols
                };
                let wg = &w[gi * g.og * kdim..][..g.og * kdim];
                let og = &mut out[(b * g.o + gi * g.og) * howo..][..g.og * howo];
                E::gemm(g.og, kdim, howo, wg, false, cols_ref, false, E::zero(), og);
            }
        }
    }
    if let Some(bias) = bias {
        for plane_idx in 0..g.n * g.o {
            let bv = bias[plane_idx % g.o];
            for v in &mut out[plane_idx * howo..(plane_idx + 1) * howo] {
                *v = *v + bv;
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<E> {
    pub dx: Option<Vec<E>>,
    pub dw: Option<Vec<E>>,
    pub db: Option<Vec<E>>,
}

pub(crate) fn conv2d_backward<E: Element>(
    x: &[E],
    w: &[E],
    dy: &[E],
    g: &ConvGeom,
    need: [bool; 3],
) -> ConvGrads<E> {
    let howo = g.ho * g.wo;
    let [need_x, need_w, need_b] = need;
    let mut dx = need_x.then(|| vec![E::zero(); x.len()]);
    let mut dw = need_w.then(|| vec![E::zero(); w.len()]);
    let db = need_b.then(|| {
        let mut db = vec![E::zero(); g.o];
        for plane_idx in 0..g.n * g.o {
            let s: E = dy[plane_idx * howo..(plane_idx + 1) * howo].iter().copied().sum();
            db[plane_idx % g.o] = db[plane_idx % g.o] + s;
        }
        db
    });
    if !need_x && !need_w {
        return ConvGrads { dx, dw, db };
    }
    if g.is_depthwise() && g.stride == 1 {
        depthwise_backward_s1(x, w, dy, g, dx.as_deref_mut(), dw.as_deref_mut());
        return ConvGrads { dx, dw, db };
    }
    if g.is_depthwise() {
        depthwise_backward(x, w, dy, g, dx.as_deref_mut(), dw.as_deref_mut());
        return ConvGrads { dx, dw, db };
    }
    let kdim = g.col_rows();
    let pointwise = g.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![E::zero(); kdim * howo] };
    for b in 0..g.n {
        for gi in 0..g.groups {
            let xoff = (b * g.c + gi * g.cg) * g.h * g.w;
            let xg = &x[xoff..xoff + g.cg * g.h * g.w];
            let dyg = &dy[(b * g.o + gi * g.og) * howo..][..g.og * howo];
            let wg = &w[gi * g.og * kdim..][..g.og * kdim];
            if let Some(dw) = dw.as_deref_mut() {
                let cols_ref: &[E] = if pointwise {
                    xg
                } else {
                    im2col(xg, g, &mut cols);
                    &cols
                };
                let dwg = &mut dw[gi * g.og * kdim..][..g.og * kdim];
                E::gemm(g.og, howo, kdim, dyg, false, cols_ref, true, E::one(), dwg);
            }
            if let Some(dx) = dx.as_deref_mut() {
                let dxg = &mut dx[xoff..xoff + g.cg * g.h * g.w];
                if pointwise {
                    E::gemm(kdim, g.og, howo, wg, true, dyg, false, E::one(), dxg);
                } else {
                    E::gemm(kdim, g.og, howo, wg, true, dyg, false, E::zero(), &mut cols);
                    col2im(&cols, g, dxg);
                }
            }
        }
    }
    ConvGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(x: &[f64], xs: [usize; 4], w: &[f64], ws: [usize; 4], p: ConvParams) -> Vec<f64> {
        let [n, c, h, wd] = xs;
        let [o, cg, k, _] = ws;
        let og = o / p.groups;
        let ho = (h + 2 * p.padding - k) / p.stride + 1;
        let wo = (wd + 2 * p.padding - k) / p.stride + 1;
        let mut out = vec![0.0; n * o * ho * wo];
        for b in 0..n {
            for oc in 0..o {
                let grp = oc / og;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..cg {
                            for ki in 0..k {
                                for kj in 0..k {
                                    let iy = (oy * p.stride + ki) as isize - p.padding as isize;
                                    let ix = (ox * p.stride + kj) as isize - p.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    let cin = grp * cg + ci;
                                    acc += x[((b * c + cin) * h + iy as usize) * wd + ix as usize]
                                        * w[((oc * cg + ci) * k + ki) * k + kj];
                                }
                            }
                        }
                        out[((b * o + oc) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn valid_ranges_cover_padding() {
        let g = ConvGeom::new(&[1, 1, 5, 5], &[1, 1, 3, 3], ConvParams::new(2, 1, 1)).unwrap();
        assert_eq!((g.ho, g.wo), (3, 3));
        // tap 0 reads ix = 2*ox - 1: valid for ox in 1..3
        assert_eq!(g.valid(g.wo, 0, g.w), (1, 3));
        assert_eq!(g.valid(g.wo, 2, g.w), (0, 2));
    }

    #[test]
    fn stride_padding_group_mix_matches_naive() {
        let cases = [
            ([2, 4, 7, 6], [6, 2, 3, 3], ConvParams::new(2, 1, 2)),
            ([1, 3, 5, 5], [2, 3, 5, 5], ConvParams::new(1, 2, 1)),
            ([1, 4, 6, 6], [4, 1, 3, 3], ConvParams::new(3, 2, 4)),
            ([1, 4, 6, 6], [8, 1, 3, 3], ConvParams::new(1, 1, 4)),
        ];
        for (xs, ws, p) in cases {
            let x: Vec<f64> = (0..xs.iter().product::<usize>()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
            let w: Vec<f64> = (0..ws.iter().product::<usize>()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
            let g = ConvGeom::new(&xs, &ws, p).unwrap();
            assert_eq!(conv2d_forward(&x, &w, None, &g), naive(&x, xs, &w, ws, p), "{xs:?} {ws:?} {p:?}");
        }
    }

    #[test]
    fn depthwise_fast_path_matches_general_loops() {
        for (xs, k, pad) in [([2, 3, 7, 5], 3, 1), ([1, 2, 12, 12], 11, 0), ([1, 2, 4, 4], 3, 3)] {
            let ws = [xs[1], 1, k, k];
            let x: Vec<f64> = (0..xs.iter().product::<usize>()).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
            let w: Vec<f64> = (0..ws.iter().product::<usize>()).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
            let p = ConvParams::new(1, pad, xs[1]);
            let g = ConvGeom::new(&xs, &ws, p).unwrap();
            let y = conv2d_forward(&x, &w, None, &g);
            assert_eq!(y, naive(&x, xs, &w, ws, p));
            let dy: Vec<f64> = (0..y.len()).map(|i| ((i * 5) % 9) as f64 - 4.0).collect();
            let fast = conv2d_backward(&x, &w, &dy, &g, [true, true, false]);
            let (mut dx, mut dw) = (vec![0.0; x.len()], vec![0.0; w.len()]);
            depthwise_backward(&x, &w, &dy, &g, Some(&mut dx), Some(&mut dw));
            assert_eq!(fast.dx.unwrap(), dx);
            assert_eq!(fast.dw.unwrap(), dw);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let e = ConvGeom::new(&[1, 3, 4, 4], &[3, 3, 3, 3], ConvParams::new(1, 1, 3)).unwrap_err();
        assert!(e.to_string().contains("weight input-channel"), "{e}");
        let e = ConvGeom::new(&[1, 3, 4, 4], &[2, 3, 3, 3], ConvParams::new(1, 1, 2)).unwrap_err();
        assert!(e.to_string().contains("not divisible by groups"), "{e}");
        assert!(ConvGeom::new(&[1, 1, 2, 2], &[1, 1, 5, 5], ConvParams::new(1, 0, 1)).is_err());
        assert!(ConvGeom::new(&[1, 1, 4, 4], &[1, 1, 3, 3], ConvParams::new(0, 0, 1)).is_err());
    }
}
