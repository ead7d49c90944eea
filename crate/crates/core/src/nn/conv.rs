use super::{gemm, Param, ParamSet};
use crate::seed::Rng;

/// 3×3 convolution, padding 1, configurable stride, with bias.
#[derive(Debug, Clone)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    weight: usize,
    bias: usize,
}

/// Saved im2col matrix and input geometry.
#[derive(Debug, Clone)]
pub struct ConvCache {
    col: Vec<f64>,
    n: usize,
    h: usize,
    w: usize,
}

impl Conv3x3 {
    pub fn new(params: &mut ParamSet, prefix: &str, in_ch: usize, out_ch: usize, stride: usize, rng: &mut Rng) -> Self {
        let fan_in = in_ch * 9;
        let weight = params.push(Param::normal(
            format!("{prefix}.weight"),
            &[out_ch, in_ch, 3, 3],
            fan_in,
            2f64.sqrt(),
            rng,
        ));
        let bias = params.push(Param::zeros(format!("{prefix}.bias"), &[out_ch]));
        Self {
            in_ch,
            out_ch,
            stride,
            weight,
            bias,
        }
    }

    pub fn weight_slot(&self) -> usize {
        self.weight
    }

    pub fn bias_slot(&self) -> usize {
        self.bias
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    fn im2col(&self, x: &[f64], n: usize, h: usize, w: usize) -> Vec<f64> {
        let (ho, wo) = self.out_size(h, w);
        let cols = n * ho * wo;
        let mut col = vec![0.0; self.in_ch * 9 * cols];
        let s = self.stride as isize;
        for c in 0..self.in_ch {
            for ky in 0..3isize {
                for kx in 0..3isize {
                    let row = (c * 9 + (ky * 3 + kx) as usize) * cols;
                    for b in 0..n {
                        let plane = (c * n + b) * h * w;
                        for oy in 0..ho {
                            let iy = oy as isize * s + ky - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst = row + (b * ho + oy) * wo;
                            let src = plane + iy as usize * w;
                            for ox in 0..wo {
                                let ix = ox as isize * s + kx - 1;
                                if ix >= 0 && ix < w as isize {
                                    col[dst + ox] = x[src + ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &[f64], n: usize, h: usize, w: usize) -> Vec<f64> {
        let (ho, wo) = self.out_size(h, w);
        let cols = n * ho * wo;
        let mut x = vec![0.0; self.in_ch * n * h * w];
        let s = self.stride as isize;
        for c in 0..self.in_ch {
            for ky in 0..3isize {
                for kx in 0..3isize {
                    let row = (c * 9 + (ky * 3 + kx) as usize) * cols;
                    for b in 0..n {
                        let plane = (c * n + b) * h * w;
                        for oy in 0..ho {
                            let iy = oy as isize * s + ky - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src = row + (b * ho + oy) * wo;
                            let dst = plane + iy as usize * w;
                            for ox in 0..wo {
                                let ix = ox as isize * s + kx - 1;
                                if ix >= 0 && ix < w as isize {
                                    x[dst + ix as usize] += col[src + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        x
    }

    /// Input `in_ch × n × h × w`, output `out_ch × n × ho × wo`.
    pub fn forward(&self, params: &ParamSet, x: &[f64], n: usize, h: usize, w: usize) -> (Vec<f64>, ConvCache) {
        debug_assert_eq!(x.len(), self.in_ch * n * h * w);
        let (ho, wo) = self.out_size(h, w);
        let cols = n * ho * wo;
        let col = self.im2col(x, n, h, w);
        let mut out = vec![0.0; self.out_ch * cols];
        let bias = params.data(self.bias);
        for (o, row) in out.chunks_exact_mut(cols).enumerate() {
            row.fill(bias[o]);
        }
        gemm(
            self.out_ch,
            self.in_ch * 9,
            cols,
            1.0,
            params.data(self.weight),
            false,
            &col,
            false,
            1.0,
            &mut out,
        );
        (out, ConvCache { col, n, h, w })
    }

    /// Accumulates weight and bias gradients into `grads`; returns the input
    /// gradient when `want_input_grad` is set.
    pub fn backward(
        &self,
        params: &ParamSet,
        cache: &ConvCache,
        dout: &[f64],
        grads: &mut [Vec<f64>],
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let (ho, wo) = self.out_size(cache.h, cache.w);
        let cols = cache.n * ho * wo;
        let k = self.in_ch * 9;
        gemm(self.out_ch, cols, k, 1.0, dout, false, &cache.col, true, 1.0, &mut grads[self.weight]);
        for (o, row) in dout.chunks_exact(cols).enumerate() {
            grads[self.bias][o] += row.iter().sum::<f64>();
        }
        if !want_input_grad {
            return None;
        }
        let mut dcol = vec![0.0; k * cols];
        gemm(k, self.out_ch, cols, 1.0, params.data(self.weight), true, dout, false, 0.0, &mut dcol);
        Some(self.col2im(&dcol, cache.n, cache.h, cache.w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn naive_conv(conv: &Conv3x3, params: &ParamSet, x: &[f64], n: usize, h: usize, w: usize) -> Vec<f64> {
        let (ho, wo) = conv.out_size(h, w);
        let wt = params.data(conv.weight_slot());
        let bias = params.data(conv.bias_slot());
        let mut out = vec![0.0; conv.out_ch * n * ho * wo];
        for o in 0..conv.out_ch {
            for b in 0..n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = bias[o];
                        for c in 0..conv.in_ch {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * conv.stride + ky) as isize - 1;
                                    let ix = (ox * conv.stride + kx) as isize - 1;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += wt[((o * conv.in_ch + c) * 3 + ky) * 3 + kx]
                                            * x[((c * n + b) * h + iy as usize) * w + ix as usize];
                                    }
                                }
                            }
                        }
                        out[((o * n + b) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = seed::rng(3);
        let mut params = ParamSet::new();
        let conv = Conv3x3::new(&mut params, "c", 3, 4, 2, &mut rng);
        params.data_mut(conv.bias_slot()).copy_from_slice(&[0.1, -0.2, 0.3, 0.0]);
        let (n, h, w) = (2, 7, 6);
        let x: Vec<f64> = (0..3 * n * h * w).map(|i| ((i * 37 % 11) as f64) / 11.0 - 0.5).collect();
        let (out, _) = conv.forward(&params, &x, n, h, w);
        let expected = naive_conv(&conv, &params, &x, n, h, w);
        assert_eq!(out.len(), expected.len());
        for (a, b) in out.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = seed::rng(5);
        let mut params = ParamSet::new();
        let conv = Conv3x3::new(&mut params, "c", 2, 3, 2, &mut rng);
        let (n, h, w) = (2, 5, 5);
        let x: Vec<f64> = (0..2 * n * h * w).map(|i| ((i * 13 % 7) as f64) / 7.0 - 0.4).collect();
        let (out, cache) = conv.forward(&params, &x, n, h, w);
        // loss = sum(out * r) for a fixed r
        let r: Vec<f64> = (0..out.len()).map(|i| ((i * 5 % 9) as f64) / 9.0 - 0.5).collect();
        let loss = |p: &ParamSet, x: &[f64]| -> f64 {
            conv.forward(p, x, n, h, w).0.iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let mut grads = params.zeros_like();
        let dx = conv.backward(&params, &cache, &r, &mut grads, true).unwrap();
        let eps = 1e-6;
        for slot in [conv.weight_slot(), conv.bias_slot()] {
            for j in 0..params.data(slot).len() {
                let mut p = params.clone();
                p.data_mut(slot)[j] += eps;
                let up = loss(&p, &x);
                p.data_mut(slot)[j] -= 2.0 * eps;
                let down = loss(&p, &x);
                let fd = (up - down) / (2.0 * eps);
                assert!((fd - grads[slot][j]).abs() < 1e-6, "slot {slot} idx {j}: {fd} vs {}", grads[slot][j]);
            }
        }
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp[j] += eps;
            let up = loss(&params, &xp);
            xp[j] -= 2.0 * eps;
            let down = loss(&params, &xp);
            assert!(((up - down) / (2.0 * eps) - dx[j]).abs() < 1e-6);
        }
    }
}
