//! Raw forward/backward kernels over flat buffers. Shape validation lives in
//! the graph layer; these functions assume consistent extents.

pub mod conv;

use crate::tensor::Element;

pub(crate) const LAYER_NORM_EPS: f64 = 1e-6;
pub(crate) const L2_NORM_EPS: f64 = 1e-12;

// ── softmax ─────────────────────────────────────────────────────────

/// Splits `shape` around `axis` into (outer, len, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward<E: Element>(x: &[E], (outer, len, inner): (usize, usize, usize)) -> Vec<E> {
    let mut y = vec![E::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let mut max = E::neg_infinity();
            for j in 0..len {
                max = max.max(x[at(j)]);
            }
            let mut sum = E::zero();
            for j in 0..len {
                let e = (x[at(j)] - max).exp();
                y[at(j)] = e;
                sum = sum + e;
            }
            for j in 0..len {
                y[at(j)] = y[at(j)] / sum;
            }
        }
    }
    y
}

pub(crate) fn softmax_backward<E: Element>(y: &[E], g: &[E], (outer, len, inner): (usize, usize, usize)) -> Vec<E> {
    let mut dx = vec![E::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |j: usize| (o * len + j) * inner + i;
            let dot: E = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
            for j in 0..len {
                dx[at(j)] = y[at(j)] * (g[at(j)] - dot);
            }
        }
    }
    dx
}

// ── gelu ────────────────────────────────────────────────────────────

pub(crate) fn gelu<E: Element>(x: E) -> E {
    let half = E::lit(0.5);
    half * x * (E::one() + (x * E::lit(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

pub(crate) fn gelu_grad<E: Element>(x: E) -> E {
    let half = E::lit(0.5);
    let cdf = half * (E::one() + (x * E::lit(std::f64::consts::FRAC_1_SQRT_2)).erf());
    let pdf = (-half * x * x).exp() * E::lit(0.398_942_280_401_432_7);
    cdf + x * pdf
}

// ── channel layer norm ──────────────────────────────────────────────

/// Per (batch, position) normalization statistics over channels.
fn layer_norm_stats<E: Element>(x: &[E], [n, c, h, w]: [usize; 4]) -> (Vec<E>, Vec<E>) {
    let plane = h * w;
    let cn = E::from_usize(c).unwrap();
    let mut mean = vec![E::zero(); n * plane];
    let mut inv_std = vec![E::zero(); n * plane];
    for b in 0..n {
        let m = &mut mean[b * plane..(b + 1) * plane];
        for ch in 0..c {
            let src = &x[(b * c + ch) * plane..][..plane];
            for (acc, &v) in m.iter_mut().zip(src) {
                *acc = *acc + v;
            }
        }
        for v in m.iter_mut() {
            *v = *v / cn;
        }
        let var = &mut inv_std[b * plane..(b + 1) * plane];
        for ch in 0..c {
            let src = &x[(b * c + ch) * plane..][..plane];
            for ((acc, &v), &mu) in var.iter_mut().zip(src).zip(m.iter()) {
                let d = v - mu;
                *acc = *acc + d * d;
            }
        }
        let eps = E::lit(LAYER_NORM_EPS);
        for v in var.iter_mut() {
            *v = E::one() / (*v / cn + eps).sqrt();
        }
    }
    (mean, inv_std)
}

pub(crate) fn layer_norm_forward<E: Element>(x: &[E], gamma: &[E], dims: [usize; 4]) -> Vec<E> {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let (mean, inv_std) = layer_norm_stats(x, dims);
    let mut y = vec![E::zero(); x.len()];
    for b in 0..n {
        let m = &mean[b * plane..(b + 1) * plane];
        let s = &inv_std[b * plane..(b + 1) * plane];
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let gm = gamma[ch];
            for p in 0..plane {
                y[off + p] = (x[off + p] - m[p]) * s[p] * gm;
            }
        }
    }
    y
}

pub(crate) fn layer_norm_backward<E: Element>(
    x: &[E],
    gamma: &[E],
    g: &[E],
    dims: [usize; 4],
) -> (Vec<E>, Vec<E>) {
    let [n, c, h, w] = dims;
    let plane = h * w;
    let cn = E::from_usize(c).unwrap();
    let (mean, inv_std) = layer_norm_stats(x, dims);
    let mut dx = vec![E::zero(); x.len()];
    let mut dgamma = vec![E::zero(); c];
    let mut sum_gy = vec![E::zero(); plane];
    let mut sum_gy_xhat = vec![E::zero(); plane];
    for b in 0..n {
        let m = &mean[b * plane..(b + 1) * plane];
        let s = &inv_std[b * plane..(b + 1) * plane];
        sum_gy.fill(E::zero());
        sum_gy_xhat.fill(E::zero());
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            let mut dg = E::zero();
            for p in 0..plane {
                let xhat = (x[off + p] - m[p]) * s[p];
                let gy = g[off + p] * gamma[ch];
                dg = dg + g[off + p] * xhat;
                sum_gy[p] = sum_gy[p] + gy;
                sum_gy_xhat[p] = sum_gy_xhat[p] + gy * xhat;
            }
            dgamma[ch] = dgamma[ch] + dg;
        }
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for p in 0..plane {
                let xhat = (x[off + p] - m[p]) * s[p];
                let gy = g[off + p] * gamma[ch];
                dx[off + p] = s[p] * (gy - sum_gy[p] / cn - xhat * sum_gy_xhat[p] / cn);
            }
        }
    }
    (dx, dgamma)
}

// ── bilinear resize (align_corners = false) ─────────────────────────

#[derive(Clone, Copy, Debug)]
pub(crate) struct Tap<E> {
    pub i0: usize,
    pub i1: usize,
    pub frac: E,
}

pub(crate) fn resize_taps<E: Element>(in_len: usize, out_len: usize) -> Vec<Tap<E>> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            Tap { i0, i1, frac: E::lit(src - i0 as f64) }
        })
        .collect()
}

pub(crate) fn resize_forward<E: Element>(x: &[E], [n, c, h, w]: [usize; 4], oh: usize, ow: usize) -> Vec<E> {
    let ty = resize_taps::<E>(h, oh);
    let tx = resize_taps::<E>(w, ow);
    let mut out = vec![E::zero(); n * c * oh * ow];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
        for (oy, ry) in ty.iter().enumerate() {
            let r0 = &src[ry.i0 * w..(ry.i0 + 1) * w];
            let r1 = &src[ry.i1 * w..(ry.i1 + 1) * w];
            for (ox, rx) in tx.iter().enumerate() {
                let top = r0[rx.i0] + rx.frac * (r0[rx.i1] - r0[rx.i0]);
                let bot = r1[rx.i0] + rx.frac * (r1[rx.i1] - r1[rx.i0]);
                dst[oy * ow + ox] = top + ry.frac * (bot - top);
            }
        }
    }
    out
}

pub(crate) fn resize_backward<E: Element>(g: &[E], [n, c, h, w]: [usize; 4], oh: usize, ow: usize) -> Vec<E> {
    let ty = resize_taps::<E>(h, oh);
    let tx = resize_taps::<E>(w, ow);
    let one = E::one();
    let mut dx = vec![E::zero(); n * c * h * w];
    for plane in 0..n * c {
        let gsrc = &g[plane * oh * ow..(plane + 1) * oh * ow];
        let dst = &mut dx[plane * h * w..(plane + 1) * h * w];
        for (oy, ry) in ty.iter().enumerate() {
            for (ox, rx) in tx.iter().enumerate() {
                let gv = gsrc[oy * ow + ox];
                let top = gv * (one - ry.frac);
                let bot = gv * ry.frac;
                dst[ry.i0 * w + rx.i0] = dst[ry.i0 * w + rx.i0] + top * (one - rx.frac);
                dst[ry.i0 * w + rx.i1] = dst[ry.i0 * w + rx.i1] + top * rx.frac;
                dst[ry.i1 * w + rx.i0] = dst[ry.i1 * w + rx.i0] + bot * (one - rx.frac);
                dst[ry.i1 * w + rx.i1] = dst[ry.i1 * w + rx.i1] + bot * rx.frac;
            }
        }
    }
    dx
}

// ── pixel (un)shuffle ───────────────────────────────────────────────

/// Space-to-depth: `out[n, c·r² + i·r + j, y, x] = in[n, c, y·r + i, x·r + j]`.
pub(crate) fn pixel_unshuffle<E: Element>(x: &[E], [n, c, h, w]: [usize; 4], r: usize) -> Vec<E> {
    let (oh, ow) = (h / r, w / r);
    let mut out = vec![E::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let oc = ch * r * r + i * r + j;
                    let dst = &mut out[(b * c * r * r + oc) * oh * ow..][..oh * ow];
                    for y in 0..oh {
                        let src = &x[((b * c + ch) * h + y * r + i) * w..][..w];
                        for xo in 0..ow {
                            dst[y * ow + xo] = src[xo * r + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Depth-to-space, the exact inverse of [`pixel_unshuffle`]. `dims` are the
/// input (packed) extents.
pub(crate) fn pixel_shuffle<E: Element>(x: &[E], [n, c, h, w]: [usize; 4], r: usize) -> Vec<E> {
    let oc = c / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![E::zero(); x.len()];
    for b in 0..n {
        for ch in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let ic = ch * r * r + i * r + j;
                    let src = &x[(b * c + ic) * h * w..][..h * w];
                    for y in 0..h {
                        let dst = &mut out[((b * oc + ch) * oh + y * r + i) * ow..][..ow];
                        for xi in 0..w {
                            dst[xi * r + j] = src[y * w + xi];
                        }
                    }
                }
            }
        }
    }
    out
}

// ── row L2 normalization ────────────────────────────────────────────

pub(crate) fn l2_normalize_rows<E: Element>(x: &[E], row: usize) -> Vec<E> {
    let eps = E::lit(L2_NORM_EPS);
    let mut y = vec![E::zero(); x.len()];
    for (src, dst) in x.chunks_exact(row).zip(y.chunks_exact_mut(row)) {
        let norm = src.iter().map(|&v| v * v).sum::<E>().sqrt().max(eps);
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s / norm;
        }
    }
    y
}

pub(crate) fn l2_normalize_rows_backward<E: Element>(x: &[E], g: &[E], row: usize) -> Vec<E> {
    let eps = E::lit(L2_NORM_EPS);
    let mut dx = vec![E::zero(); x.len()];
    for ((src, gr), dst) in x.chunks_exact(row).zip(g.chunks_exact(row)).zip(dx.chunks_exact_mut(row)) {
        let raw = src.iter().map(|&v| v * v).sum::<E>().sqrt();
        if raw > eps {
            let dot = src.iter().zip(gr).map(|(&a, &b)| a * b).sum::<E>() / raw;
            for ((d, &s), &gv) in dst.iter_mut().zip(src).zip(gr) {
                *d = (gv - s / raw * dot) / raw;
            }
        } else {
            for (d, &gv) in dst.iter_mut().zip(gr) {
                *d = gv / eps;
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_taps_half_pixel() {
        let taps = resize_taps::<f64>(2, 4);
        let got: Vec<_> = taps.iter().map(|t| (t.i0, t.i1, t.frac)).collect();
        assert_eq!(got, vec![(0, 1, 0.0), (0, 1, 0.25), (0, 1, 0.75), (1, 1, 0.25)]);
    }

    #[test]
    fn unshuffle_ordering() {
        let x = [1.0f64, 2.0, 3.0, 4.0];
        assert_eq!(pixel_unshuffle(&x, [1, 1, 2, 2], 2), vec![1.0, 2.0, 3.0, 4.0]);
        let x: Vec<f64> = (0..16).map(f64::from).collect();
        let down = pixel_unshuffle(&x, [1, 1, 4, 4], 2);
        // channel 1 holds offset (0, 1) of each 2x2 block
        assert_eq!(&down[4..8], &[1.0, 3.0, 9.0, 11.0]);
        assert_eq!(pixel_shuffle(&down, [1, 4, 2, 2], 2), x);
    }

    #[test]
    fn gelu_reference_values() {
        assert_eq!(gelu(0.0f64), 0.0);
        // 0.5 * (1 + erf(1/sqrt 2)) = Φ(1)
        assert!((gelu(1.0f64) - 0.841_344_746_068_542_9).abs() < 1e-15);
        let h = 1e-6;
        for x in [-2.0f64, -0.3, 0.7, 2.5] {
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
