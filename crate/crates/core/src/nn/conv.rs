use rand::Rng;

use super::gemm::{matmul, Transpose};
use super::{join, Param, ParamKind, Parameters, Tensor};
use crate::exec;

/// 2-D convolution over NCHW input, square kernel, symmetric zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// When false, `backward` skips the input gradient and returns zeros.
    pub input_grad: bool,
    cache: Option<ConvCache>,
}

#[derive(Clone, Debug)]
struct ConvCache {
    cols: Vec<f32>,
    n: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = Param::he_normal(&[out_channels, in_channels, kernel, kernel], fan_in, rng);
        let bias = bias.then(|| Param::filled(&[out_channels], 0.0, ParamKind::Weight));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            input_grad: true,
            cache: None,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn k_dim(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    fn im2col(&self, x: &Tensor, oh: usize, ow: usize) -> Vec<f32> {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels, "conv input channel mismatch");
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let np = n * oh * ow;
        let mut cols = vec![0.0f32; self.k_dim() * np];
        let src = x.data();
        exec::for_each_chunk_mut(&mut cols, np, |r, row| {
            let ci = r / (k * k);
            let ky = ((r / k) % k) as isize;
            let kx = (r % k) as isize;
            for b in 0..n {
                let plane = &src[(b * c + ci) * h * w..(b * c + ci + 1) * h * w];
                let dst = &mut row[b * oh * ow..(b + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = (oy * s) as isize + ky - p;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let in_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = (ox * s) as isize + kx - p;
                        if ix >= 0 && ix < w as isize {
                            *o = in_row[ix as usize];
                        }
                    }
                }
            }
        });
        cols
    }

    fn col2im(&self, dcols: &[f32], n: usize, h: usize, w: usize, oh: usize, ow: usize) -> Tensor {
        let c = self.in_channels;
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let np = n * oh * ow;
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        exec::for_each_chunk_mut(dx.data_mut(), h * w, |plane_idx, plane| {
            let b = plane_idx / c;
            let ci = plane_idx % c;
            for ky in 0..k {
                for kx in 0..k {
                    let r = (ci * k + ky) * k + kx;
                    let src = &dcols[r * np + b * oh * ow..r * np + (b + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * s) as isize + ky as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * s) as isize + kx as isize - p;
                            if ix >= 0 && ix < w as isize {
                                in_row[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        });
        dx
    }

    fn apply(&self, cols: &[f32], n: usize, oh: usize, ow: usize) -> Tensor {
        let co = self.out_channels;
        let ohw = oh * ow;
        let np = n * ohw;
        let mut mat = vec![0.0f32; co * np];
        matmul(
            co,
            self.k_dim(),
            np,
            1.0,
            &self.weight.value,
            Transpose::No,
            cols,
            Transpose::No,
            0.0,
            &mut mat,
        );
        let mut out = Tensor::zeros(&[n, co, oh, ow]);
        let bias = self.bias.as_ref().map(|b| b.value.as_slice());
        exec::for_each_chunk_mut(out.data_mut(), co * ohw, |b, sample| {
            for ch in 0..co {
                let src = &mat[ch * np + b * ohw..ch * np + (b + 1) * ohw];
                let dst = &mut sample[ch * ohw..(ch + 1) * ohw];
                dst.copy_from_slice(src);
                if let Some(bias) = bias {
                    dst.iter_mut().for_each(|v| *v += bias[ch]);
                }
            }
        });
        out
    }

    /// Inference forward pass; no state is recorded.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (n, _, h, w) = x.dims4();
        let (oh, ow) = self.output_size(h, w);
        let cols = self.im2col(x, oh, ow);
        self.apply(&cols, n, oh, ow)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let (n, _, h, w) = x.dims4();
        let (oh, ow) = self.output_size(h, w);
        let cols = self.im2col(x, oh, ow);
        let out = self.apply(&cols, n, oh, ow);
        self.cache = Some(ConvCache { cols, n, h, w, oh, ow });
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let cache = self
            .cache
            .take()
            .expect("Conv2d::backward called without forward_train");
        let ConvCache { cols, n, h, w, oh, ow } = cache;
        let co = self.out_channels;
        let ohw = oh * ow;
        let np = n * ohw;
        assert_eq!(grad_out.shape(), &[n, co, oh, ow]);

        let mut gmat = vec![0.0f32; co * np];
        let g = grad_out.data();
        exec::for_each_chunk_mut(&mut gmat, np, |ch, row| {
            for b in 0..n {
                row[b * ohw..(b + 1) * ohw].copy_from_slice(&g[(b * co + ch) * ohw..(b * co + ch + 1) * ohw]);
            }
        });

        if let Some(bias) = self.bias.as_mut() {
            if bias.trainable {
                for ch in 0..co {
                    bias.grad[ch] += gmat[ch * np..(ch + 1) * np].iter().sum::<f32>();
                }
            }
        }
        if self.weight.trainable {
            let kd = self.k_dim();
            matmul(
                co,
                np,
                kd,
                1.0,
                &gmat,
                Transpose::No,
                &cols,
                Transpose::Yes,
                1.0,
                &mut self.weight.grad,
            );
        }
        if !self.input_grad {
            return Tensor::zeros(&[n, self.in_channels, h, w]);
        }
        let kd = self.k_dim();
        let mut dcols = cols;
        matmul(
            kd,
            co,
            np,
            1.0,
            &self.weight.value,
            Transpose::Yes,
            &gmat,
            Transpose::No,
            0.0,
            &mut dcols,
        );
        self.col2im(&dcols, n, h, w, oh, ow)
    }
}

impl Parameters for Conv2d {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        if let Some(b) = self.bias.as_mut() {
            out.push((join(prefix, "bias"), b));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct nested-loop convolution used as the reference.
    fn naive(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = conv.output_size(h, w);
        let k = conv.kernel;
        let mut out = Tensor::zeros(&[n, conv.out_channels, oh, ow]);
        for b in 0..n {
            for co in 0..conv.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[co]);
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * conv.stride + ky) as isize - conv.padding as isize;
                                    let ix = (ox * conv.stride + kx) as isize - conv.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += conv.weight.value[((co * c + ci) * k + ky) * k + kx]
                                        * x.data()[((b * c + ci) * h + iy as usize) * w + ix as usize];
                                }
                            }
                        }
                        out.data_mut()[((b * conv.out_channels + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn forward_matches_naive_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &(k, s, p) in &[(3, 1, 1), (3, 2, 1), (1, 2, 0), (7, 2, 3)] {
            let conv = Conv2d::new(3, 4, k, s, p, true, &mut rng);
            let x = random_tensor(&[2, 3, 9, 9], &mut rng);
            let got = conv.forward(&x);
            let want = naive(&conv, &x);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-4, "k={k} s={s} p={p}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, true, &mut rng);
        let x = random_tensor(&[2, 2, 6, 6], &mut rng);
        let y = conv.forward_train(&x);
        // loss = sum(y * probe)
        let probe = random_tensor(y.shape(), &mut rng);
        let dx = conv.backward(&probe);
        let loss = |conv: &Conv2d, x: &Tensor| -> f64 {
            conv.forward(x)
                .data()
                .iter()
                .zip(probe.data())
                .map(|(a, b)| (*a as f64) * (*b as f64))
                .sum()
        };
        let eps = 1e-2f32;
        for idx in [0, 5, 17, 40, 53] {
            let mut plus = conv.clone();
            plus.weight.value[idx] += eps;
            let mut minus = conv.clone();
            minus.weight.value[idx] -= eps;
            let fd = (loss(&plus, &x) - loss(&minus, &x)) / (2.0 * eps as f64);
            let an = conv.weight.grad[idx] as f64;
            assert!((fd - an).abs() < 1e-2 * (1.0 + fd.abs()), "w[{idx}]: fd {fd} vs {an}");
        }
        for idx in [0, 7, 33, 71, 100, 143] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps as f64);
            let an = dx.data()[idx] as f64;
            assert!((fd - an).abs() < 1e-2 * (1.0 + fd.abs()), "x[{idx}]: fd {fd} vs {an}");
        }
        let bias_fd = probe
            .data()
            .chunks(9)
            .enumerate()
            .filter(|(i, _)| i % 3 == 1)
            .map(|(_, c)| c.iter().sum::<f32>())
            .sum::<f32>();
        assert!((conv.bias.as_ref().unwrap().grad[1] - bias_fd).abs() < 1e-4);
    }
}
