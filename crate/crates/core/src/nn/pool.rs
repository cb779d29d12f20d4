use super::Tensor;
use crate::exec;

/// Max pooling with a square window.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    cache: Option<(Vec<u32>, Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            kernel,
            stride,
            padding,
            cache: None,
        }
    }

    fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        )
    }

    fn run(&self, x: &Tensor) -> (Tensor, Vec<u32>) {
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = self.output_size(h, w);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut arg = vec![0u32; n * c * oh * ow];
        let src = x.data();
        let (k, s, p) = (self.kernel, self.stride, self.padding as isize);
        let planes: Vec<(Vec<f32>, Vec<u32>)> = exec::map_range(n * c, |i| {
            let plane = &src[i * h * w..(i + 1) * h * w];
            let mut vals = vec![f32::NEG_INFINITY; oh * ow];
            let mut idx = vec![0u32; oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = oy * ow + ox;
                    for ky in 0..k {
                        let iy = (oy * s + ky) as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * s + kx) as isize - p;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let j = iy as usize * w + ix as usize;
                            if plane[j] > vals[o] {
                                vals[o] = plane[j];
                                idx[o] = j as u32;
                            }
                        }
                    }
                }
            }
            (vals, idx)
        });
        for (i, (vals, idx)) in planes.into_iter().enumerate() {
            out.data_mut()[i * oh * ow..(i + 1) * oh * ow].copy_from_slice(&vals);
            arg[i * oh * ow..(i + 1) * oh * ow].copy_from_slice(&idx);
        }
        (out, arg)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.run(x).0
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let (out, arg) = self.run(x);
        self.cache = Some((arg, x.shape().to_vec()));
        out
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Tensor {
        let (arg, shape) = self
            .cache
            .take()
            .expect("MaxPool2d::backward called without forward_train");
        let (_, _, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let (_, _, oh, ow) = grad_out.dims4();
        let mut dx = Tensor::zeros(&shape);
        let g = grad_out.data();
        exec::for_each_chunk_mut(dx.data_mut(), h * w, |i, plane| {
            for o in 0..oh * ow {
                plane[arg[i * oh * ow + o] as usize] += g[i * oh * ow + o];
            }
        });
        dx
    }
}

/// `(n, c, h, w) -> (n, c)` spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let (n, c, h, w) = x.dims4();
    let hw = (h * w) as f32;
    let data = x
        .data()
        .chunks(h * w)
        .map(|plane| plane.iter().sum::<f32>() / hw)
        .collect();
    Tensor::from_vec(&[n, c], data)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, h: usize, w: usize) -> Tensor {
    let (n, c) = (grad_out.shape()[0], grad_out.shape()[1]);
    let hw = h * w;
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    for (i, plane) in dx.data_mut().chunks_mut(hw).enumerate() {
        let g = grad_out.data()[i] / hw as f32;
        plane.iter_mut().for_each(|v| *v = g);
    }
    dx
}
