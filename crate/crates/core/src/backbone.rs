//! Relation extractor: maps a channel-stacked row image to a relation vector.
//!
//! Two variants share one interface. `PaperResidual18` is the 18-layer
//! residual network with its classification layer removed (pooled 512-d
//! output). `Tiny` is a four-block strided CNN for desk-scale runs.
//!
//! Parameter names follow the torchvision layout (`conv1.weight`,
//! `layer2.0.downsample.1.running_var`, ...), so a torchvision state dict
//! exported to safetensors loads without a key remap.

use std::path::PathBuf;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::RowTensor;
use crate::error::{Error, Result};
use crate::nn::{
    global_avg_pool, global_avg_pool_backward, join, BatchNorm2d, Conv2d, MaxPool2d, Param, Parameters, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    PaperResidual18,
    Tiny,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub variant: Variant,
    pub relation_dim: usize,
    /// Side length of the row images the network expects.
    pub input_resolution: usize,
    #[serde(default)]
    pub pretrained_weights: Option<PathBuf>,
    pub freeze_norm_layers: bool,
}

impl BackboneConfig {
    pub fn paper() -> Self {
        Self {
            variant: Variant::PaperResidual18,
            relation_dim: 512,
            input_resolution: 224,
            pretrained_weights: None,
            freeze_norm_layers: true,
        }
    }

    pub fn tiny(relation_dim: usize, input_resolution: usize) -> Self {
        Self {
            variant: Variant::Tiny,
            relation_dim,
            input_resolution,
            pretrained_weights: None,
            freeze_norm_layers: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variant == Variant::PaperResidual18 && self.relation_dim != 512 {
            return Err(Error::invalid(format!(
                "the residual-18 variant emits 512-d relations, not {}",
                self.relation_dim
            )));
        }
        if self.relation_dim == 0 {
            return Err(Error::invalid("relation_dim must be positive"));
        }
        if self.input_resolution < 16 {
            return Err(Error::invalid("input_resolution must be at least 16"));
        }
        Ok(())
    }
}

/// Output of the relation extractor for one row.
#[derive(Clone, Debug, PartialEq)]
pub struct Relation(pub Vec<f32>);

impl Relation {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }
}

/// conv -> batch norm -> ReLU.
#[derive(Clone, Debug)]
struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm2d,
    relu_out: Option<Tensor>,
}

impl ConvBnRelu {
    fn new<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(cin, cout, 3, 2, 1, false, rng),
            bn: BatchNorm2d::new(cout),
            relu_out: None,
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let mut y = self.bn.forward(&self.conv.forward(x));
        y.relu_inplace();
        y
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut y = self.bn.forward_train(&self.conv.forward_train(x));
        y.relu_inplace();
        self.relu_out = Some(y.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let out = self.relu_out.take().expect("backward without forward_train");
        let g = relu_backward(grad, &out);
        self.conv.backward(&self.bn.backward(&g))
    }
}

fn relu_backward(grad: &Tensor, out: &Tensor) -> Tensor {
    let mut g = grad.clone();
    for (v, o) in g.data_mut().iter_mut().zip(out.data()) {
        if *o <= 0.0 {
            *v = 0.0;
        }
    }
    g
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    for (x, y) in out.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    out
}

#[derive(Clone, Debug)]
struct TinyNet {
    blocks: Vec<ConvBnRelu>,
    last_hw: (usize, usize),
}

impl TinyNet {
    const WIDTHS: [usize; 3] = [16, 32, 64];

    fn new<R: Rng + ?Sized>(relation_dim: usize, rng: &mut R) -> Self {
        let mut cin = 3;
        let mut blocks = Vec::new();
        for cout in Self::WIDTHS.into_iter().chain([relation_dim]) {
            blocks.push(ConvBnRelu::new(cin, cout, rng));
            cin = cout;
        }
        blocks[0].conv.input_grad = false;
        Self {
            blocks,
            last_hw: (0, 0),
        }
    }
}

#[derive(Clone, Debug)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
    mid: Option<Tensor>,
    out: Option<Tensor>,
}

impl BasicBlock {
    fn new<R: Rng + ?Sized>(cin: usize, cout: usize, stride: usize, rng: &mut R) -> Self {
        let downsample = (stride != 1 || cin != cout)
            .then(|| (Conv2d::new(cin, cout, 1, stride, 0, false, rng), BatchNorm2d::new(cout)));
        Self {
            conv1: Conv2d::new(cin, cout, 3, stride, 1, false, rng),
            bn1: BatchNorm2d::new(cout),
            conv2: Conv2d::new(cout, cout, 3, 1, 1, false, rng),
            bn2: BatchNorm2d::new(cout),
            downsample,
            mid: None,
            out: None,
        }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        let mut h = self.bn1.forward(&self.conv1.forward(x));
        h.relu_inplace();
        let h = self.bn2.forward(&self.conv2.forward(&h));
        let shortcut = match &self.downsample {
            Some((c, b)) => b.forward(&c.forward(x)),
            None => x.clone(),
        };
        let mut y = add(&h, &shortcut);
        y.relu_inplace();
        y
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut h = self.bn1.forward_train(&self.conv1.forward_train(x));
        h.relu_inplace();
        self.mid = Some(h.clone());
        let h = self.bn2.forward_train(&self.conv2.forward_train(&h));
        let shortcut = match &mut self.downsample {
            Some((c, b)) => b.forward_train(&c.forward_train(x)),
            None => x.clone(),
        };
        let mut y = add(&h, &shortcut);
        y.relu_inplace();
        self.out = Some(y.clone());
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let out = self.out.take().expect("backward without forward_train");
        let mid = self.mid.take().expect("backward without forward_train");
        let g = relu_backward(grad, &out);
        let gh = self.bn2.backward(&g);
        let gh = self.conv2.backward(&gh);
        let gh = relu_backward(&gh, &mid);
        let gx = self.conv1.backward(&self.bn1.backward(&gh));
        let gs = match &mut self.downsample {
            Some((c, b)) => c.backward(&b.backward(&g)),
            None => g,
        };
        add(&gx, &gs)
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.conv1.collect_params(&join(prefix, "conv1"), out);
        self.bn1.collect_params(&join(prefix, "bn1"), out);
        self.conv2.collect_params(&join(prefix, "conv2"), out);
        self.bn2.collect_params(&join(prefix, "bn2"), out);
        if let Some((c, b)) = self.downsample.as_mut() {
            c.collect_params(&join(prefix, "downsample.0"), out);
            b.collect_params(&join(prefix, "downsample.1"), out);
        }
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        let mut v = vec![&mut self.bn1, &mut self.bn2];
        if let Some((_, b)) = self.downsample.as_mut() {
            v.push(b);
        }
        v
    }
}

#[derive(Clone, Debug)]
struct ResNet18 {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    pool: MaxPool2d,
    layers: Vec<Vec<BasicBlock>>,
    stem_out: Option<Tensor>,
    last_hw: (usize, usize),
}

impl ResNet18 {
    fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut conv1 = Conv2d::new(3, 64, 7, 2, 3, false, rng);
        conv1.input_grad = false;
        let mut layers = Vec::new();
        let mut cin = 64;
        for (i, cout) in [64, 128, 256, 512].into_iter().enumerate() {
            let stride = if i == 0 { 1 } else { 2 };
            layers.push(vec![
                BasicBlock::new(cin, cout, stride, rng),
                BasicBlock::new(cout, cout, 1, rng),
            ]);
            cin = cout;
        }
        Self {
            conv1,
            bn1: BatchNorm2d::new(64),
            pool: MaxPool2d::new(3, 2, 1),
            layers,
            stem_out: None,
            last_hw: (0, 0),
        }
    }
}

#[derive(Clone, Debug)]
enum Net {
    Tiny(TinyNet),
    Residual(Box<ResNet18>),
}

/// Relation extractor with weights.
#[derive(Clone, Debug)]
pub struct Backbone {
    config: BackboneConfig,
    net: Net,
}

impl Backbone {
    /// Randomly initialised network; loads pretrained weights when configured.
    pub fn build<R: Rng + ?Sized>(config: &BackboneConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let net = match config.variant {
            Variant::Tiny => Net::Tiny(TinyNet::new(config.relation_dim, rng)),
            Variant::PaperResidual18 => Net::Residual(Box::new(ResNet18::new(rng))),
        };
        let mut backbone = Self {
            config: config.clone(),
            net,
        };
        if let Some(path) = &config.pretrained_weights {
            crate::checkpoint::load_pretrained(&mut backbone, path)?;
        }
        backbone.set_freeze_norm(config.freeze_norm_layers);
        Ok(backbone)
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn relation_dim(&self) -> usize {
        self.config.relation_dim
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        match &mut self.net {
            Net::Tiny(t) => t.blocks.iter_mut().map(|b| &mut b.bn).collect(),
            Net::Residual(r) => {
                let mut v = vec![&mut r.bn1];
                for layer in &mut r.layers {
                    for block in layer {
                        v.extend(block.norms_mut());
                    }
                }
                v
            }
        }
    }

    pub fn set_freeze_norm(&mut self, frozen: bool) {
        self.config.freeze_norm_layers = frozen;
        for bn in self.norms_mut() {
            bn.set_frozen(frozen);
        }
    }

    /// Trainable parameter count (weights plus normalisation affine terms).
    pub fn parameter_count(&mut self) -> usize {
        self.named_params()
            .iter()
            .filter(|(_, p)| p.kind != crate::nn::ParamKind::NormStat)
            .map(|(_, p)| p.len())
            .sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let shape = x.shape();
        let r = self.config.input_resolution;
        if shape.len() != 4 || shape[1] != 3 || shape[2] != r || shape[3] != r {
            return Err(Error::invalid(format!(
                "backbone expects N x 3 x {r} x {r} rows, got {shape:?}"
            )));
        }
        Ok(())
    }

    /// Evaluation-mode forward pass over a batch: `N x 3 x R x R -> N x dim`.
    pub fn extract(&self, rows: &Tensor) -> Result<Tensor> {
        self.check_input(rows)?;
        let features = match &self.net {
            Net::Tiny(t) => {
                let mut h = rows.clone();
                for b in &t.blocks {
                    h = b.forward(&h);
                }
                h
            }
            Net::Residual(r) => {
                let mut h = r.bn1.forward(&r.conv1.forward(rows));
                h.relu_inplace();
                let mut h = r.pool.forward(&h);
                for layer in &r.layers {
                    for block in layer {
                        h = block.forward(&h);
                    }
                }
                h
            }
        };
        Ok(global_avg_pool(&features))
    }

    /// Relation for a single row.
    pub fn extract_relation(&self, row: &RowTensor) -> Result<Relation> {
        let batch = RowTensor::batch(std::slice::from_ref(row))?;
        Ok(Relation(self.extract(&batch)?.into_data()))
    }

    /// Training forward pass; records what `backward` needs.
    pub fn forward_train(&mut self, rows: &Tensor) -> Result<Tensor> {
        self.check_input(rows)?;
        let features = match &mut self.net {
            Net::Tiny(t) => {
                let mut h = rows.clone();
                for b in &mut t.blocks {
                    h = b.forward_train(&h);
                }
                let (_, _, hh, ww) = h.dims4();
                t.last_hw = (hh, ww);
                h
            }
            Net::Residual(r) => {
                let mut h = r.bn1.forward_train(&r.conv1.forward_train(rows));
                h.relu_inplace();
                r.stem_out = Some(h.clone());
                let mut h = r.pool.forward_train(&h);
                for layer in &mut r.layers {
                    for block in layer {
                        h = block.forward_train(&h);
                    }
                }
                let (_, _, hh, ww) = h.dims4();
                r.last_hw = (hh, ww);
                h
            }
        };
        Ok(global_avg_pool(&features))
    }

    /// Backpropagate `N x dim` relation gradients into parameter gradients.
    pub fn backward(&mut self, grad: &Tensor) {
        match &mut self.net {
            Net::Tiny(t) => {
                let (h, w) = t.last_hw;
                let mut g = global_avg_pool_backward(grad, h, w);
                for b in t.blocks.iter_mut().rev() {
                    g = b.backward(&g);
                }
            }
            Net::Residual(r) => {
                let (h, w) = r.last_hw;
                let mut g = global_avg_pool_backward(grad, h, w);
                for layer in r.layers.iter_mut().rev() {
                    for block in layer.iter_mut().rev() {
                        g = block.backward(&g);
                    }
                }
                let g = r.pool.backward(&g);
                let stem = r.stem_out.take().expect("backward without forward_train");
                let g = relu_backward(&g, &stem);
                r.conv1.backward(&r.bn1.backward(&g));
            }
        }
    }
}

impl Parameters for Backbone {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        match &mut self.net {
            Net::Tiny(t) => {
                for (i, b) in t.blocks.iter_mut().enumerate() {
                    let p = join(prefix, &format!("blocks.{i}"));
                    b.conv.collect_params(&join(&p, "conv"), out);
                    b.bn.collect_params(&join(&p, "bn"), out);
                }
            }
            Net::Residual(r) => {
                r.conv1.collect_params(&join(prefix, "conv1"), out);
                r.bn1.collect_params(&join(prefix, "bn1"), out);
                for (li, layer) in r.layers.iter_mut().enumerate() {
                    for (bi, block) in layer.iter_mut().enumerate() {
                        block.collect(&join(prefix, &format!("layer{}.{bi}", li + 1)), out);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_rows(n: usize, r: usize, rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::from_vec(
            &[n, 3, r, r],
            (0..n * 3 * r * r).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
    }

    #[test]
    fn tiny_variant_shapes_and_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = Backbone::build(&BackboneConfig::tiny(64, 32), &mut rng).unwrap();
        let out = b.extract(&random_rows(3, 32, &mut rng)).unwrap();
        assert_eq!(out.shape(), &[3, 64]);
        assert!(b.parameter_count() < 200_000);
        assert!(b.extract(&random_rows(1, 40, &mut rng)).is_err());
    }

    #[test]
    fn residual_variant_is_headless_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = Backbone::build(&BackboneConfig::paper(), &mut rng).unwrap();
        let count = b.parameter_count();
        // torchvision resnet18 has 11,689,512 parameters including the 512x1000 head
        assert_eq!(count, 11_689_512 - 513_000);
        assert!(b.named_params().iter().all(|(n, _)| !n.starts_with("fc")));
        let bad = BackboneConfig {
            relation_dim: 256,
            ..BackboneConfig::paper()
        };
        assert!(Backbone::build(&bad, &mut rng).is_err());
    }

    #[test]
    fn batched_equals_single_extraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Backbone::build(&BackboneConfig::tiny(32, 32), &mut rng).unwrap();
        let rows = random_rows(5, 32, &mut rng);
        let batched = b.extract(&rows).unwrap();
        for i in 0..5 {
            let single = b.extract(&rows.slice_outer(i, i + 1)).unwrap();
            for (x, y) in single.data().iter().zip(&batched.data()[i * 32..(i + 1) * 32]) {
                assert!((x - y).abs() < 1e-5);
            }
        }
        assert_eq!(b.extract(&rows).unwrap(), batched);
    }

    fn finite_difference_check(config: BackboneConfig, n: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut b = Backbone::build(&config, &mut rng).unwrap();
        b.set_freeze_norm(false);
        let r = config.input_resolution;
        let x = random_rows(n, r, &mut rng);
        let dim = config.relation_dim;
        let probe: Vec<f32> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        // frozen statistics make the loss a pure function of the weights
        b.set_freeze_norm(true);
        b.forward_train(&x).unwrap();
        b.backward(&Tensor::from_vec(&[n, dim], probe.clone()));
        let loss = |b: &Backbone| -> f64 {
            b.extract(&x)
                .unwrap()
                .data()
                .iter()
                .zip(&probe)
                .map(|(a, p)| *a as f64 * *p as f64)
                .sum()
        };
        let mut checked = 0;
        let names: Vec<String> = b
            .named_params()
            .into_iter()
            .filter(|(_, p)| p.kind == ParamKind::Weight)
            .map(|(n, _)| n)
            .collect();
        for name in names.iter().step_by(3) {
            let (len, grad) = {
                let params = b.named_params();
                let p = params.into_iter().find(|(n, _)| n == name).unwrap().1;
                (p.len(), p.grad.clone())
            };
            let idx = (len * 7 / 13) % len;
            let eps = 2e-2f32;
            let mut plus = b.clone();
            plus.named_params()
                .into_iter()
                .find(|(n, _)| n == name)
                .unwrap()
                .1
                .value[idx] += eps;
            let mut minus = b.clone();
            minus
                .named_params()
                .into_iter()
                .find(|(n, _)| n == name)
                .unwrap()
                .1
                .value[idx] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps as f64);
            let an = grad[idx] as f64;
            assert!(
                (fd - an).abs() < 5e-2 * (1.0 + fd.abs().max(an.abs())),
                "{name}[{idx}]: fd {fd} vs analytic {an}"
            );
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn tiny_gradients_match_finite_differences() {
        finite_difference_check(BackboneConfig::tiny(16, 32), 2);
    }

    #[test]
    fn residual_gradients_match_finite_differences() {
        let config = BackboneConfig {
            input_resolution: 32,
            ..BackboneConfig::paper()
        };
        finite_difference_check(config, 1);
    }

    #[test]
    fn frozen_norm_layers_get_no_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut b = Backbone::build(&BackboneConfig::tiny(16, 32), &mut rng).unwrap();
        let x = random_rows(4, 32, &mut rng);
        let y = b.forward_train(&x).unwrap();
        b.backward(&Tensor::from_vec(y.shape(), vec![1.0; y.len()]));
        for (name, p) in b.named_params() {
            match p.kind {
                ParamKind::NormAffine | ParamKind::NormStat => {
                    assert!(p.grad.iter().all(|g| *g == 0.0), "{name}");
                    assert!(!p.trainable, "{name}");
                }
                ParamKind::Weight => {}
            }
        }
    }
}
