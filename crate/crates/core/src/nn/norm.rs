use super::{join, Param, ParamKind, Parameters, Tensor};
use crate::exec;

/// Batch normalisation over the channel axis of NCHW input.
///
/// A frozen layer always normalises with its running statistics, never
/// updates them, and excludes its affine parameters from optimisation.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub weight: Param,
    pub bias: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub eps: f32,
    pub momentum: f32,
    frozen: bool,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
enum BnCache {
    Frozen { scale: Vec<f32> },
    Batch { xhat: Vec<f32>, inv_std: Vec<f32> },
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            weight: Param::filled(&[channels], 1.0, ParamKind::NormAffine),
            bias: Param::filled(&[channels], 0.0, ParamKind::NormAffine),
            running_mean: Param::filled(&[channels], 0.0, ParamKind::NormStat),
            running_var: Param::filled(&[channels], 1.0, ParamKind::NormStat),
            eps: 1e-5,
            momentum: 0.1,
            frozen: false,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.len()
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
        self.weight.trainable = !frozen;
        self.bias.trainable = !frozen;
        if frozen {
            self.weight.zero_grad();
            self.bias.zero_grad();
        }
    }

    fn frozen_scale_shift(&self) -> (Vec<f32>, Vec<f32>) {
        let c = self.channels();
        let mut scale = vec![0.0; c];
        let mut shift = vec![0.0; c];
        for ch in 0..c {
            scale[ch] = self.weight.value[ch] / (self.running_var.value[ch] + self.eps).sqrt();
            shift[ch] = self.bias.value[ch] - self.running_mean.value[ch] * scale[ch];
        }
        (scale, shift)
    }

    fn affine(x: &Tensor, scale: &[f32], shift: &[f32]) -> Tensor {
        let (_, c, h, w) = x.dims4();
        let hw = h * w;
        let mut out = x.clone();
        exec::for_each_chunk_mut(out.data_mut(), hw, |i, plane| {
            let ch = i % c;
            plane.iter_mut().for_each(|v| *v = *v * scale[ch] + shift[ch]);
        });
        out
    }

    /// Inference: normalise with running statistics.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (scale, shift) = self.frozen_scale_shift();
        Self::affine(x, &scale, &shift)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        if self.frozen {
            let (scale, shift) = self.frozen_scale_shift();
            let out = Self::affine(x, &scale, &shift);
            self.cache = Some(BnCache::Frozen { scale });
            return out;
        }
        let (n, c, h, w) = x.dims4();
        let hw = h * w;
        let m = (n * hw) as f64;
        let data = x.data();
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for b in 0..n {
            for ch in 0..c {
                let plane = &data[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                mean[ch] += plane.iter().map(|&v| v as f64).sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for b in 0..n {
            for ch in 0..c {
                let plane = &data[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                var[ch] += plane.iter().map(|&v| (v as f64 - mean[ch]).powi(2)).sum::<f64>();
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f32> = var.iter().map(|&v| 1.0 / ((v as f32) + self.eps).sqrt()).collect();
        let mut xhat = data.to_vec();
        exec::for_each_chunk_mut(&mut xhat, hw, |i, plane| {
            let ch = i % c;
            let mu = mean[ch] as f32;
            plane.iter_mut().for_each(|v| *v = (*v - mu) * inv_std[ch]);
        });
        let mut out = Tensor::from_vec(&[n, c, h, w], xhat.clone());
        let (g, bta) = (&self.weight.value, &self.bias.value);
        exec::for_each_chunk_mut(out.data_mut(), hw, |i, plane| {
            let ch = i % c;
            plane.iter_mut().for_each(|v| *v = *v * g[ch] + bta[ch]);
        });
        let unbias = if m > 1.0 { m / (m - 1.0) } else { 1.0 };
        for ch in 0..c {
            let mo = self.momentum;
            self.running_mean.value[ch] = (1.0 - mo) * self.running_mean.value[ch] + mo * mean[ch] as f32;
            self.running_var.value[ch] = (1.0 - mo) * self.running_var.value[ch] + mo * (var[ch] * unbias) as f32;
        }
        self.cache = Some(BnCache::Batch { xhat, inv_std });
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let cache = self
            .cache
            .take()
            .expect("BatchNorm2d::backward called without forward_train");
        let (n, c, h, w) = grad_out.dims4();
        let hw = h * w;
        match cache {
            BnCache::Frozen { scale } => {
                let zero = vec![0.0; c];
                Self::affine(grad_out, &scale, &zero)
            }
            BnCache::Batch { xhat, inv_std } => {
                let dy = grad_out.data();
                let mut sum_dy = vec![0.0f32; c];
                let mut sum_dy_xhat = vec![0.0f32; c];
                for b in 0..n {
                    for ch in 0..c {
                        let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
                        for (g, xh) in dy[r.clone()].iter().zip(&xhat[r]) {
                            sum_dy[ch] += g;
                            sum_dy_xhat[ch] += g * xh;
                        }
                    }
                }
                for ch in 0..c {
                    self.weight.grad[ch] += sum_dy_xhat[ch];
                    self.bias.grad[ch] += sum_dy[ch];
                }
                let m = (n * hw) as f32;
                let gamma = &self.weight.value;
                let mut dx = grad_out.clone();
                exec::for_each_chunk_mut(dx.data_mut(), hw, |i, plane| {
                    let ch = i % c;
                    let k = gamma[ch] * inv_std[ch] / m;
                    let xh = &xhat[i * hw..(i + 1) * hw];
                    for (v, x) in plane.iter_mut().zip(xh) {
                        *v = k * (m * *v - sum_dy[ch] - x * sum_dy_xhat[ch]);
                    }
                });
                dx
            }
        }
    }
}

impl Parameters for BatchNorm2d {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
        out.push((join(prefix, "running_mean"), &mut self.running_mean));
        out.push((join(prefix, "running_var"), &mut self.running_var));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input() -> Tensor {
        let data: Vec<f32> = (0..2 * 3 * 4).map(|i| ((i * 7) % 11) as f32 * 0.3 - 1.0).collect();
        Tensor::from_vec(&[2, 3, 2, 2], data)
    }

    #[test]
    fn frozen_layer_keeps_statistics_and_has_no_affine_gradient() {
        let mut bn = BatchNorm2d::new(3);
        bn.running_mean.value = vec![0.5, -0.2, 0.1];
        bn.running_var.value = vec![2.0, 0.5, 1.0];
        bn.set_frozen(true);
        let before = bn.clone();
        let x = input();
        let y = bn.forward_train(&x);
        assert_eq!(y, bn.forward(&x));
        let _ = bn.backward(&Tensor::from_vec(&[2, 3, 2, 2], vec![1.0; 24]));
        assert_eq!(bn.running_mean.value, before.running_mean.value);
        assert_eq!(bn.running_var.value, before.running_var.value);
        assert!(bn.weight.grad.iter().all(|g| *g == 0.0));
        assert!(bn.bias.grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn batch_mode_gradient_matches_finite_differences() {
        let mut bn = BatchNorm2d::new(3);
        bn.weight.value = vec![1.5, 0.7, -0.4];
        bn.bias.value = vec![0.1, 0.2, 0.3];
        let x = input();
        let probe: Vec<f32> = (0..24).map(|i| ((i * 5) % 7) as f32 * 0.25 - 0.7).collect();
        let loss = |bn: &mut BatchNorm2d, x: &Tensor| -> f64 {
            let mut b = bn.clone();
            b.forward_train(x)
                .data()
                .iter()
                .zip(&probe)
                .map(|(a, p)| (*a as f64) * (*p as f64))
                .sum()
        };
        let mut trained = bn.clone();
        trained.forward_train(&x);
        let dx = trained.backward(&Tensor::from_vec(&[2, 3, 2, 2], probe.clone()));
        let eps = 1e-2;
        for idx in [0, 3, 9, 14, 23] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += eps;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= eps;
            let fd = (loss(&mut bn, &xp) - loss(&mut bn, &xm)) / (2.0 * eps as f64);
            assert!((fd - dx.data()[idx] as f64).abs() < 2e-2, "{fd} vs {}", dx.data()[idx]);
        }
        for ch in 0..3 {
            let mut p = bn.clone();
            p.weight.value[ch] += eps;
            let mut m = bn.clone();
            m.weight.value[ch] -= eps;
            let fd = (loss(&mut p, &x) - loss(&mut m, &x)) / (2.0 * eps as f64);
            assert!((fd - trained.weight.grad[ch] as f64).abs() < 1e-2);
        }
    }
}
