//! Raw slice kernels behind the tape operations. All arrays are row-major
//! N×C×H×W.

/// Output extent of a convolution along one axis, or `None` when it would be
/// non-positive.
pub fn conv_output_extent(input: usize, k: usize, stride: usize, pad: usize, dilation: usize) -> Option<usize> {
    let span = dilation * (k - 1) + 1;
    let padded = input + 2 * pad;
    if padded < span || stride == 0 {
        return None;
    }
    Some((padded - span) / stride + 1)
}

/// Output extent of a 2×2/stride-2 max-pool in ceiling mode.
pub fn pool_output_extent(input: usize) -> usize {
    input.div_ceil(2)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvShape {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub pad: usize,
    pub dilation: usize,
}

impl ConvShape {
    /// Range of output columns whose input column `ox*stride + off` is in bounds.
    fn col_range(&self, off: isize) -> (usize, usize) {
        let s = self.stride as isize;
        let lo = if off < 0 { ((-off) + s - 1) / s } else { 0 };
        let last = self.w as isize - 1 - off;
        if last < 0 {
            return (0, 0);
        }
        let hi = ((last / s) + 1).min(self.ow as isize);
        (lo as usize, hi.max(lo) as usize)
    }

    fn offset(&self, kk: usize) -> isize {
        (kk * self.dilation) as isize - self.pad as isize
    }
}

pub(crate) fn conv_forward(x: &[f64], wt: &[f64], bias: Option<&[f64]>, s: &ConvShape) -> Vec<f64> {
    let plane_in = s.h * s.w;
    let plane_out = s.oh * s.ow;
    let mut y = vec![0.0; s.n * s.c_out * plane_out];
    for b in 0..s.n {
        for o in 0..s.c_out {
            let out = &mut y[(b * s.c_out + o) * plane_out..][..plane_out];
            if let Some(bias) = bias {
                out.fill(bias[o]);
            }
            for c in 0..s.c_in {
                let xin = &x[(b * s.c_in + c) * plane_in..][..plane_in];
                for ky in 0..s.k {
                    let dy = s.offset(ky);
                    for kx in 0..s.k {
                        let wv = wt[((o * s.c_in + c) * s.k + ky) * s.k + kx];
                        let dx = s.offset(kx);
                        let (lo, hi) = s.col_range(dx);
                        for oy in 0..s.oh {
                            let iy = (oy * s.stride) as isize + dy;
                            if iy < 0 || iy >= s.h as isize {
                                continue;
                            }
                            let row_in = &xin[iy as usize * s.w..][..s.w];
                            let row_out = &mut out[oy * s.ow..][..s.ow];
                            for ox in lo..hi {
                                let ix = (ox * s.stride) as isize + dx;
                                row_out[ox] += wv * row_in[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Accumulates input, weight and bias gradients of a convolution.
pub(crate) fn conv_backward(
    x: &[f64],
    wt: &[f64],
    gy: &[f64],
    s: &ConvShape,
    mut gx: Option<&mut [f64]>,
    mut gw: Option<&mut [f64]>,
    gb: Option<&mut [f64]>,
) {
    let plane_in = s.h * s.w;
    let plane_out = s.oh * s.ow;
    if let Some(gb) = gb {
        for b in 0..s.n {
            for o in 0..s.c_out {
                gb[o] += gy[(b * s.c_out + o) * plane_out..][..plane_out].iter().sum::<f64>();
            }
        }
    }
    if gx.is_none() && gw.is_none() {
        return;
    }
    for b in 0..s.n {
        for o in 0..s.c_out {
            let gout = &gy[(b * s.c_out + o) * plane_out..][..plane_out];
            for c in 0..s.c_in {
                let in_base = (b * s.c_in + c) * plane_in;
                for ky in 0..s.k {
                    let dy = s.offset(ky);
                    for kx in 0..s.k {
                        let widx = ((o * s.c_in + c) * s.k + ky) * s.k + kx;
                        let wv = wt[widx];
                        let dx = s.offset(kx);
                        let (lo, hi) = s.col_range(dx);
                        let mut acc = 0.0;
                        for oy in 0..s.oh {
                            let iy = (oy * s.stride) as isize + dy;
                            if iy < 0 || iy >= s.h as isize {
                                continue;
                            }
                            let row_base = in_base + iy as usize * s.w;
                            let grow = &gout[oy * s.ow..][..s.ow];
                            if let Some(gx) = gx.as_deref_mut() {
                                let row = &mut gx[row_base..][..s.w];
                                for ox in lo..hi {
                                    let ix = (ox * s.stride) as isize + dx;
                                    row[ix as usize] += wv * grow[ox];
                                }
                            }
                            if gw.is_some() {
                                let row = &x[row_base..][..s.w];
                                for ox in lo..hi {
                                    let ix = (ox * s.stride) as isize + dx;
                                    acc += row[ix as usize] * grow[ox];
                                }
                            }
                        }
                        if let Some(gw) = gw.as_deref_mut() {
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 stride-2 max-pool in ceiling mode. Returns the pooled values and, for
/// every output element, the flat index of the input element it came from.
/// Ties keep the first element in row-major scan order.
pub(crate) fn maxpool_forward(x: &[f64], n: usize, c: usize, h: usize, w: usize) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (pool_output_extent(h), pool_output_extent(w));
    let mut y = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_idx = base + 2 * oy * w + 2 * ox;
                let mut best = x[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let (iy, ix) = (2 * oy + dy, 2 * ox + dx);
                    if iy < h && ix < w {
                        let idx = base + iy * w + ix;
                        if x[idx] > best {
                            best = x[idx];
                            best_idx = idx;
                        }
                    }
                }
                y.push(best);
                arg.push(best_idx);
            }
        }
    }
    (y, arg)
}

/// Interpolation tap along one axis: output sample reads `lo` and `hi` with
/// weight `frac` on `hi`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

/// Corner-aligned bilinear taps: output index `i` samples source coordinate
/// `i·(n_in−1)/(n_out−1)`; a single-sample source is replicated.
pub(crate) fn bilinear_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    (0..n_out)
        .map(|i| {
            if n_in == 1 || n_out == 1 {
                return Tap { lo: 0, hi: 0, frac: 0.0 };
            }
            let src = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            let frac = if hi == lo { 0.0 } else { src - lo as f64 };
            Tap { lo, hi, frac }
        })
        .collect()
}

/// Nearest-neighbour taps: output index `i` reads `floor(i·n_in/n_out)`.
pub(crate) fn nearest_taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    (0..n_out)
        .map(|i| {
            let lo = (i * n_in / n_out).min(n_in - 1);
            Tap { lo, hi: lo, frac: 0.0 }
        })
        .collect()
}

pub(crate) fn resize_forward(x: &[f64], planes: usize, h: usize, w: usize, rows: &[Tap], cols: &[Tap]) -> Vec<f64> {
    let (oh, ow) = (rows.len(), cols.len());
    let mut y = Vec::with_capacity(planes * oh * ow);
    for p in 0..planes {
        let src = &x[p * h * w..][..h * w];
        for r in rows {
            let top = &src[r.lo * w..][..w];
            let bot = &src[r.hi * w..][..w];
            for c in cols {
                // lerp form keeps constant inputs exactly constant
                let t = top[c.lo] + c.frac * (top[c.hi] - top[c.lo]);
                let b = bot[c.lo] + c.frac * (bot[c.hi] - bot[c.lo]);
                y.push(t + r.frac * (b - t));
            }
        }
    }
    y
}

pub(crate) fn resize_backward(gy: &[f64], gx: &mut [f64], planes: usize, h: usize, w: usize, rows: &[Tap], cols: &[Tap]) {
    let (oh, ow) = (rows.len(), cols.len());
    for p in 0..planes {
        let g_in = &mut gx[p * h * w..][..h * w];
        let g_out = &gy[p * oh * ow..][..oh * ow];
        for (i, r) in rows.iter().enumerate() {
            for (j, c) in cols.iter().enumerate() {
                let g = g_out[i * ow + j];
                let (wr0, wr1) = (1.0 - r.frac, r.frac);
                let (wc0, wc1) = (1.0 - c.frac, c.frac);
                g_in[r.lo * w + c.lo] += g * wr0 * wc0;
                g_in[r.lo * w + c.hi] += g * wr0 * wc1;
                g_in[r.hi * w + c.lo] += g * wr1 * wc0;
                g_in[r.hi * w + c.hi] += g * wr1 * wc1;
            }
        }
    }
}
