//! Raw numeric kernels on flat row-major buffers.
//!
//! Every linear kernel comes with its transpose so that gradients and
//! relevance rules share one code path.

use crate::layer::{conv_extent, same_pad_before, Padding};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeom {
    pub fn new(
        input: (usize, usize, usize),
        filters: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: Padding,
    ) -> Self {
        let (in_h, in_w, in_c) = input;
        let out_h = conv_extent(in_h, kernel[0], stride, padding).expect("validated geometry");
        let out_w = conv_extent(in_w, kernel[1], stride, padding).expect("validated geometry");
        let (pad_top, pad_left) = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => (
                same_pad_before(in_h, kernel[0], stride),
                same_pad_before(in_w, kernel[1], stride),
            ),
        };
        Self {
            in_h,
            in_w,
            in_c,
            out_h,
            out_w,
            out_c: filters,
            kh: kernel[0],
            kw: kernel[1],
            stride,
            pad_top,
            pad_left,
        }
    }

    pub fn input_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    pub fn output_len(&self) -> usize {
        self.out_h * self.out_w * self.out_c
    }

    /// Visits every (output position, kernel tap) pair that lands inside the
    /// input: `f(out_base, in_base, w_base)` where the bases index channel 0.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                let out_base = (oy * self.out_w + ox) * self.out_c;
                for ky in 0..self.kh {
                    let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                    if iy < 0 || iy >= self.in_h as isize {
                        continue;
                    }
                    for kx in 0..self.kw {
                        let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                        if ix < 0 || ix >= self.in_w as isize {
                            continue;
                        }
                        let in_base = (iy as usize * self.in_w + ix as usize) * self.in_c;
                        let w_base = (ky * self.kw + kx) * self.in_c * self.out_c;
                        f(out_base, in_base, w_base);
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_len()];
        let (cin, cout) = (self.in_c, self.out_c);
        self.for_each_tap(|ob, ib, wb| {
            let o = &mut out[ob..ob + cout];
            for ci in 0..cin {
                let v = x[ib + ci];
                if v == 0.0 {
                    continue;
                }
                let wr = &w[wb + ci * cout..wb + (ci + 1) * cout];
                for (acc, &wv) in o.iter_mut().zip(wr) {
                    *acc += v * wv;
                }
            }
        });
        out
    }

    /// Transpose of `forward` with respect to the input.
    pub fn backward_input(&self, g: &[f64], w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.input_len()];
        let (cin, cout) = (self.in_c, self.out_c);
        self.for_each_tap(|ob, ib, wb| {
            let go = &g[ob..ob + cout];
            for ci in 0..cin {
                let wr = &w[wb + ci * cout..wb + (ci + 1) * cout];
                let s: f64 = go.iter().zip(wr).map(|(a, b)| a * b).sum();
                out[ib + ci] += s;
            }
        });
        out
    }

    /// Transpose of `forward` with respect to the kernel.
    pub fn backward_weight(&self, x: &[f64], g: &[f64]) -> Vec<f64> {
        let mut dw = vec![0.0; self.kh * self.kw * self.in_c * self.out_c];
        let (cin, cout) = (self.in_c, self.out_c);
        self.for_each_tap(|ob, ib, wb| {
            let go = &g[ob..ob + cout];
            for ci in 0..cin {
                let v = x[ib + ci];
                if v == 0.0 {
                    continue;
                }
                let dr = &mut dw[wb + ci * cout..wb + (ci + 1) * cout];
                for (d, &gv) in dr.iter_mut().zip(go) {
                    *d += v * gv;
                }
            }
        });
        dw
    }
}

/// `y_k = sum_j x_j w[j, k]`
pub(crate) fn dense_forward(x: &[f64], w: &[f64], units: usize) -> Vec<f64> {
    let mut out = vec![0.0; units];
    for (j, &v) in x.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        for (acc, &wv) in out.iter_mut().zip(&w[j * units..(j + 1) * units]) {
            *acc += v * wv;
        }
    }
    out
}

/// `g_j = sum_k w[j, k] s_k`
pub(crate) fn dense_backward_input(s: &[f64], w: &[f64], n_in: usize) -> Vec<f64> {
    let units = s.len();
    (0..n_in)
        .map(|j| {
            w[j * units..(j + 1) * units]
                .iter()
                .zip(s)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

pub(crate) fn dense_backward_weight(x: &[f64], g: &[f64]) -> Vec<f64> {
    let units = g.len();
    let mut dw = vec![0.0; x.len() * units];
    for (j, &v) in x.iter().enumerate() {
        for (d, &gv) in dw[j * units..(j + 1) * units].iter_mut().zip(g) {
            *d = v * gv;
        }
    }
    dw
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    pub in_h: usize,
    pub in_w: usize,
    pub c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub window: [usize; 2],
    pub stride: [usize; 2],
}

impl PoolGeom {
    pub fn new(input: (usize, usize, usize), window: [usize; 2], stride: [usize; 2]) -> Self {
        let (in_h, in_w, c) = input;
        Self {
            in_h,
            in_w,
            c,
            out_h: (in_h - window[0]) / stride[0] + 1,
            out_w: (in_w - window[1]) / stride[1] + 1,
            window,
            stride,
        }
    }

    pub fn output_len(&self) -> usize {
        self.out_h * self.out_w * self.c
    }

    /// Input flat indices of one pooling window, in row-major order.
    #[inline]
    pub fn window_indices(&self, oy: usize, ox: usize, ch: usize) -> impl Iterator<Item = usize> + '_ {
        let (y0, x0) = (oy * self.stride[0], ox * self.stride[1]);
        (0..self.window[0]).flat_map(move |dy| {
            (0..self.window[1]).map(move |dx| ((y0 + dy) * self.in_w + x0 + dx) * self.c + ch)
        })
    }

    /// For every output cell, the input index of the window maximum; the
    /// first maximum in row-major window order wins ties.
    pub fn argmax(&self, x: &[f64]) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.output_len());
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                for ch in 0..self.c {
                    let mut best = usize::MAX;
                    for i in self.window_indices(oy, ox, ch) {
                        if best == usize::MAX || x[i] > x[best] {
                            best = i;
                        }
                    }
                    idx.push(best);
                }
            }
        }
        idx
    }

    pub fn average(&self, x: &[f64]) -> Vec<f64> {
        let n = (self.window[0] * self.window[1]) as f64;
        let mut out = Vec::with_capacity(self.output_len());
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                for ch in 0..self.c {
                    let s: f64 = self.window_indices(oy, ox, ch).map(|i| x[i]).sum();
                    out.push(s / n);
                }
            }
        }
        out
    }

    /// Spreads each output value evenly over its window.
    pub fn spread_evenly(&self, g: &[f64]) -> Vec<f64> {
        let n = (self.window[0] * self.window[1]) as f64;
        let mut out = vec![0.0; self.in_h * self.in_w * self.c];
        let mut k = 0;
        for oy in 0..self.out_h {
            for ox in 0..self.out_w {
                for ch in 0..self.c {
                    let share = g[k] / n;
                    for i in self.window_indices(oy, ox, ch) {
                        out[i] += share;
                    }
                    k += 1;
                }
            }
        }
        out
    }
}

/// Softmax along the last axis of a flat buffer, max-subtracted.
pub(crate) fn softmax_last_axis(x: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(classes) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / total));
    }
    out
}

/// Vector-Jacobian product of softmax along the last axis given its output.
pub(crate) fn softmax_backward(y: &[f64], g: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(y.len());
    for (yr, gr) in y.chunks(classes).zip(g.chunks(classes)) {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        out.extend(yr.iter().zip(gr).map(|(yv, gv)| yv * (gv - dot)));
    }
    out
}
