//! Pairwise relations discriminator: distance feature, dropout, a one-hidden
//! layer MLP and a sigmoid, mapping two relations to a similarity in (0, 1).

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::Relation;
use crate::error::{Error, Result};
use crate::nn::{join, Param, ParamKind, Parameters, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMeasure {
    Difference,
    L1,
    L2,
    Concat,
}

impl DistanceMeasure {
    pub const ALL: [DistanceMeasure; 4] = [
        DistanceMeasure::Difference,
        DistanceMeasure::L1,
        DistanceMeasure::L2,
        DistanceMeasure::Concat,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DistanceMeasure::Difference => "difference",
            DistanceMeasure::L1 => "l1",
            DistanceMeasure::L2 => "l2",
            DistanceMeasure::Concat => "concat",
        }
    }

    pub fn feature_dim(self, relation_dim: usize) -> usize {
        match self {
            DistanceMeasure::Concat => 2 * relation_dim,
            _ => relation_dim,
        }
    }

    pub fn is_symmetric(self) -> bool {
        matches!(self, DistanceMeasure::L1 | DistanceMeasure::L2)
    }
}

impl fmt::Display for DistanceMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DistanceMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "difference" | "diff" => Ok(DistanceMeasure::Difference),
            "l1" => Ok(DistanceMeasure::L1),
            "l2" => Ok(DistanceMeasure::L2),
            "concat" | "concatenation" => Ok(DistanceMeasure::Concat),
            _ => Err(Error::invalid(format!(
                "unknown distance measure `{s}` (expected difference, l1, l2 or concat)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub measure: DistanceMeasure,
    pub hidden: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            measure: DistanceMeasure::L1,
            hidden: 128,
            dropout_rate: 0.5,
            activation: Activation::Relu,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!(
                "dropout rate {} outside [0, 1)",
                self.dropout_rate
            )));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be positive"));
        }
        Ok(())
    }
}

/// Similarity in the open interval (0, 1).
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    const MARGIN: f64 = 1e-12;

    /// Sigmoid of a logit, kept off the endpoints so the interval stays open.
    pub fn from_logit(logit: f64) -> Self {
        let s = 1.0 / (1.0 + (-logit).exp());
        Self(s.clamp(Self::MARGIN, 1.0 - Self::MARGIN))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Distance feature between two equal-length relations.
pub fn distance<T: Scalar>(ri: &[T], rj: &[T], measure: DistanceMeasure) -> Result<Vec<T>> {
    if ri.len() != rj.len() {
        return Err(Error::invalid(format!(
            "relation lengths differ: {} vs {}",
            ri.len(),
            rj.len()
        )));
    }
    let mut out = Vec::with_capacity(measure.feature_dim(ri.len()));
    distance_into(ri, rj, measure, &mut out);
    Ok(out)
}

fn distance_into<T: Scalar>(ri: &[T], rj: &[T], measure: DistanceMeasure, out: &mut Vec<T>) {
    let pairs = ri.iter().zip(rj);
    match measure {
        DistanceMeasure::Difference => out.extend(pairs.map(|(a, b)| *a - *b)),
        DistanceMeasure::L1 => out.extend(pairs.map(|(a, b)| (*a - *b).abs())),
        DistanceMeasure::L2 => out.extend(pairs.map(|(a, b)| (*a - *b) * (*a - *b))),
        DistanceMeasure::Concat => {
            out.extend_from_slice(ri);
            out.extend_from_slice(rj);
        }
    }
}

/// Gradients of a distance feature back onto its two inputs.
fn distance_backward<T: Scalar>(ri: &[T], rj: &[T], measure: DistanceMeasure, grad: &[T], gi: &mut [T], gj: &mut [T]) {
    let two = T::from_f64(2.0).unwrap();
    let n = ri.len();
    for k in 0..n {
        let d = ri[k] - rj[k];
        let g = match measure {
            DistanceMeasure::Difference => grad[k],
            DistanceMeasure::L1 if d > T::zero() => grad[k],
            DistanceMeasure::L1 if d < T::zero() => -grad[k],
            DistanceMeasure::L1 => T::zero(),
            DistanceMeasure::L2 => grad[k] * two * d,
            DistanceMeasure::Concat => {
                gi[k] = gi[k] + grad[k];
                gj[k] = gj[k] + grad[n + k];
                continue;
            }
        };
        gi[k] = gi[k] + g;
        gj[k] = gj[k] - g;
    }
}

#[derive(Clone, Debug, Default)]
struct Cache<T> {
    ri: Vec<T>,
    rj: Vec<T>,
    features: Vec<T>,
    /// Per-feature dropout multiplier (0 or 1/(1-p)); empty when dropout is off.
    mask: Vec<T>,
    pre: Vec<T>,
    hidden: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct PrdHead<T = f32> {
    config: HeadConfig,
    relation_dim: usize,
    pub hidden_weight: Param<T>,
    pub hidden_bias: Param<T>,
    pub output_weight: Param<T>,
    pub output_bias: Param<T>,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> PrdHead<T> {
    pub fn new<R: Rng + ?Sized>(config: HeadConfig, relation_dim: usize, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let feat = config.measure.feature_dim(relation_dim);
        let h = config.hidden;
        let uniform = |fan_in: usize, n: usize, rng: &mut R| -> Vec<T> {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n)
                .map(|_| T::from_f64(rng.random_range(-bound..bound)).unwrap())
                .collect()
        };
        Ok(Self {
            hidden_weight: Param::new(&[h, feat], uniform(feat, h * feat, rng), ParamKind::Weight),
            hidden_bias: Param::new(&[h], uniform(feat, h, rng), ParamKind::Weight),
            output_weight: Param::new(&[1, h], uniform(h, h, rng), ParamKind::Weight),
            output_bias: Param::new(&[1], uniform(h, 1, rng), ParamKind::Weight),
            config,
            relation_dim,
            cache: None,
        })
    }

    /// Head with every weight and bias set to zero.
    pub fn zeroed(config: HeadConfig, relation_dim: usize) -> Result<Self> {
        config.validate()?;
        let feat = config.measure.feature_dim(relation_dim);
        let h = config.hidden;
        Ok(Self {
            hidden_weight: Param::filled(&[h, feat], T::zero(), ParamKind::Weight),
            hidden_bias: Param::filled(&[h], T::zero(), ParamKind::Weight),
            output_weight: Param::filled(&[1, h], T::zero(), ParamKind::Weight),
            output_bias: Param::filled(&[1], T::zero(), ParamKind::Weight),
            config,
            relation_dim,
            cache: None,
        })
    }

    pub fn config(&self) -> &HeadConfig {
        &self.config
    }

    pub fn relation_dim(&self) -> usize {
        self.relation_dim
    }

    fn activate(&self, x: T) -> T {
        match self.config.activation {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }

    fn activate_grad(&self, pre: T, post: T) -> T {
        match self.config.activation {
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Tanh => T::one() - post * post,
        }
    }

    fn check(&self, ri: &[T], rj: &[T]) -> Result<usize> {
        let d = self.relation_dim;
        if ri.len() != rj.len() || !ri.len().is_multiple_of(d) {
            return Err(Error::invalid(format!(
                "relation batches must be N x {d}; got {} and {} values",
                ri.len(),
                rj.len()
            )));
        }
        Ok(ri.len() / d)
    }

    /// Logits for a batch of `N` relation pairs laid out row-major (`N x dim`).
    ///
    /// In train mode dropout with inverted scaling is applied to the distance
    /// feature and everything needed by [`PrdHead::backward`] is cached.
    pub fn forward<R: Rng + ?Sized>(&mut self, ri: &[T], rj: &[T], mode: Mode, rng: Option<&mut R>) -> Result<Vec<T>> {
        let n = self.check(ri, rj)?;
        let d = self.relation_dim;
        let feat = self.config.measure.feature_dim(d);
        let mut features = Vec::with_capacity(n * feat);
        for k in 0..n {
            distance_into(
                &ri[k * d..(k + 1) * d],
                &rj[k * d..(k + 1) * d],
                self.config.measure,
                &mut features,
            );
        }
        let mut mask = Vec::new();
        if mode == Mode::Train && self.config.dropout_rate > 0.0 {
            let rng = rng.ok_or_else(|| Error::invalid("train mode needs a random source for dropout"))?;
            let p = self.config.dropout_rate;
            let scale = T::from_f64(1.0 / (1.0 - p)).unwrap();
            mask.reserve(features.len());
            for f in &mut features {
                let m = if rng.random::<f64>() < p { T::zero() } else { scale };
                mask.push(m);
                *f = *f * m;
            }
        }
        let h = self.config.hidden;
        let mut pre = vec![T::zero(); n * h];
        let mut hidden = vec![T::zero(); n * h];
        let mut logits = Vec::with_capacity(n);
        for k in 0..n {
            let x = &features[k * feat..(k + 1) * feat];
            let mut z = self.output_bias.value[0];
            for u in 0..h {
                let w = &self.hidden_weight.value[u * feat..(u + 1) * feat];
                let a = w
                    .iter()
                    .zip(x)
                    .fold(self.hidden_bias.value[u], |acc, (w, x)| acc + *w * *x);
                let act = self.activate(a);
                pre[k * h + u] = a;
                hidden[k * h + u] = act;
                z = z + self.output_weight.value[u] * act;
            }
            logits.push(z);
        }
        if mode == Mode::Train {
            self.cache = Some(Cache {
                ri: ri.to_vec(),
                rj: rj.to_vec(),
                features,
                mask,
                pre,
                hidden,
            });
        }
        Ok(logits)
    }

    /// Accumulate parameter gradients from `dL/dlogit` and return the
    /// gradients with respect to both relation batches.
    pub fn backward(&mut self, grad_logits: &[T]) -> (Vec<T>, Vec<T>) {
        let cache = self.cache.take().expect("backward without a train-mode forward");
        let d = self.relation_dim;
        let h = self.config.hidden;
        let feat = self.config.measure.feature_dim(d);
        let n = grad_logits.len();
        let mut gi = vec![T::zero(); n * d];
        let mut gj = vec![T::zero(); n * d];
        let mut gfeat = vec![T::zero(); feat];
        for k in 0..n {
            let g = grad_logits[k];
            self.output_bias.grad[0] = self.output_bias.grad[0] + g;
            let x = &cache.features[k * feat..(k + 1) * feat];
            gfeat.iter_mut().for_each(|v| *v = T::zero());
            for u in 0..h {
                let post = cache.hidden[k * h + u];
                self.output_weight.grad[u] = self.output_weight.grad[u] + g * post;
                let ga = g * self.output_weight.value[u] * self.activate_grad(cache.pre[k * h + u], post);
                if ga == T::zero() {
                    continue;
                }
                self.hidden_bias.grad[u] = self.hidden_bias.grad[u] + ga;
                let row = u * feat;
                for f in 0..feat {
                    self.hidden_weight.grad[row + f] = self.hidden_weight.grad[row + f] + ga * x[f];
                    gfeat[f] = gfeat[f] + ga * self.hidden_weight.value[row + f];
                }
            }
            if !cache.mask.is_empty() {
                for (g, m) in gfeat.iter_mut().zip(&cache.mask[k * feat..(k + 1) * feat]) {
                    *g = *g * *m;
                }
            }
            distance_backward(
                &cache.ri[k * d..(k + 1) * d],
                &cache.rj[k * d..(k + 1) * d],
                self.config.measure,
                &gfeat,
                &mut gi[k * d..(k + 1) * d],
                &mut gj[k * d..(k + 1) * d],
            );
        }
        (gi, gj)
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut Param<T>); 4] {
        [
            ("hidden.weight", &mut self.hidden_weight),
            ("hidden.bias", &mut self.hidden_bias),
            ("output.weight", &mut self.output_weight),
            ("output.bias", &mut self.output_bias),
        ]
    }
}

impl PrdHead<f32> {
    /// Evaluation-mode similarity of two relations.
    pub fn score(&self, ri: &Relation, rj: &Relation) -> Result<SimilarityScore> {
        Ok(self.score_batch(ri.as_slice(), rj.as_slice())?[0])
    }

    /// Evaluation-mode similarities for `N x dim` relation batches.
    pub fn score_batch(&self, ri: &[f32], rj: &[f32]) -> Result<Vec<SimilarityScore>> {
        let logits = self
            .clone_without_cache()
            .forward::<rand::rngs::ThreadRng>(ri, rj, Mode::Eval, None)?;
        Ok(logits
            .into_iter()
            .map(|z| SimilarityScore::from_logit(z as f64))
            .collect())
    }

    /// Train-mode similarity (dropout active); does not touch the backward cache.
    pub fn score_train<R: Rng + ?Sized>(&self, ri: &Relation, rj: &Relation, rng: &mut R) -> Result<SimilarityScore> {
        let mut head = self.clone_without_cache();
        let z = head.forward(ri.as_slice(), rj.as_slice(), Mode::Train, Some(rng))?[0];
        Ok(SimilarityScore::from_logit(z as f64))
    }

    fn clone_without_cache(&self) -> PrdHead<f32> {
        PrdHead {
            config: self.config.clone(),
            relation_dim: self.relation_dim,
            hidden_weight: self.hidden_weight.clone(),
            hidden_bias: self.hidden_bias.clone(),
            output_weight: self.output_weight.clone(),
            output_bias: self.output_bias.clone(),
            cache: None,
        }
    }
}

impl Parameters for PrdHead<f32> {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        for (name, p) in self.params_mut() {
            out.push((join(prefix, name), p));
        }
    }
}

/// Binary cross-entropy of a probability, clamped away from 0 and 1.
pub fn bce(score: f64, label: f64) -> f64 {
    let s = score.clamp(1e-12, 1.0 - 1e-12);
    -(label * s.ln() + (1.0 - label) * (1.0 - s).ln())
}

/// Numerically stable binary cross-entropy on a logit, with `dL/dlogit`.
pub fn bce_with_logit<T: Scalar>(logit: T, label: T) -> (T, T) {
    let zero = T::zero();
    let one = T::one();
    let loss = logit.max(zero) - logit * label + (one + (-logit.abs()).exp()).ln();
    let sigma = one / (one + (-logit).exp());
    (loss, sigma - label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn distance_fixtures() {
        let a = [1.0f64, 2.0];
        let b = [3.0f64, 0.0];
        assert_eq!(distance(&a, &b, DistanceMeasure::Difference).unwrap(), vec![-2.0, 2.0]);
        assert_eq!(distance(&a, &b, DistanceMeasure::L1).unwrap(), vec![2.0, 2.0]);
        assert_eq!(distance(&a, &b, DistanceMeasure::L2).unwrap(), vec![4.0, 4.0]);
        assert_eq!(
            distance(&a, &b, DistanceMeasure::Concat).unwrap(),
            vec![1.0, 2.0, 3.0, 0.0]
        );
        assert_eq!(distance(&a, &a, DistanceMeasure::L1).unwrap(), vec![0.0, 0.0]);
        assert!(distance(&a, &[1.0], DistanceMeasure::L1).is_err());
        let r = vec![0.5f32; 512];
        assert_eq!(distance(&r, &r, DistanceMeasure::Concat).unwrap().len(), 1024);
    }

    #[test]
    fn measure_parsing() {
        assert_eq!("L1".parse::<DistanceMeasure>().unwrap(), DistanceMeasure::L1);
        assert!("cosine".parse::<DistanceMeasure>().is_err());
    }

    #[test]
    fn zero_head_scores_one_half() {
        let head = PrdHead::<f32>::zeroed(HeadConfig::default(), 8).unwrap();
        let s = head.score(&Relation(vec![3.0; 8]), &Relation(vec![-1.0; 8])).unwrap();
        assert_eq!(s.value(), 0.5);
    }

    #[test]
    fn extreme_logits_stay_inside_the_open_interval() {
        assert!(SimilarityScore::from_logit(1e4).value() < 1.0);
        assert!(SimilarityScore::from_logit(-1e4).value() > 0.0);
    }

    #[test]
    fn train_mode_needs_rng_and_applies_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut head = PrdHead::<f32>::new(HeadConfig::default(), 16, &mut rng).unwrap();
        let ri = vec![1.0f32; 16];
        let rj = vec![0.0f32; 16];
        assert!(head.forward::<ChaCha8Rng>(&ri, &rj, Mode::Train, None).is_err());
        head.forward(&ri, &rj, Mode::Train, Some(&mut rng)).unwrap();
        let feats = &head.cache.as_ref().unwrap().features;
        assert!(feats.iter().all(|f| *f == 0.0 || *f == 2.0));
        assert!(feats.contains(&0.0));
        let e1 = head.score(&Relation(ri.clone()), &Relation(rj.clone())).unwrap();
        let e2 = head.score(&Relation(ri), &Relation(rj)).unwrap();
        assert_eq!(e1, e2);
    }

    #[test]
    fn bce_reference_values() {
        assert!((bce(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((bce(0.5, 0.0) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bce(1.0, 1.0) < 1e-11);
        let (l, g) = bce_with_logit(0.0f64, 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g, -0.5);
        let (l, _) = bce_with_logit(-800.0f64, 1.0);
        assert!((l - 800.0).abs() < 1e-9);
    }

    fn loss(head: &mut PrdHead<f64>, ri: &[f64], rj: &[f64], labels: &[f64]) -> f64 {
        let z = head.forward::<ChaCha8Rng>(ri, rj, Mode::Eval, None).unwrap();
        z.iter().zip(labels).map(|(z, y)| bce_with_logit(*z, *y).0).sum::<f64>() / z.len() as f64
    }

    fn gradient_check(measure: DistanceMeasure, activation: Activation) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dim = 6;
        let config = HeadConfig {
            measure,
            hidden: 12,
            dropout_rate: 0.0,
            activation,
        };
        let mut head = PrdHead::<f64>::new(config, dim, &mut rng).unwrap();
        let n = 4;
        let ri: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rj: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let labels = [1.0, 0.0, 1.0, 0.0];
        let z = head.forward(&ri, &rj, Mode::Train, Some(&mut rng)).unwrap();
        let grads: Vec<f64> = z
            .iter()
            .zip(&labels)
            .map(|(z, y)| bce_with_logit(*z, *y).1 / n as f64)
            .collect();
        let (gi, gj) = head.backward(&grads);
        let eps = 1e-6;
        let rel = |fd: f64, an: f64| (fd - an).abs() / (fd.abs() + an.abs()).max(1e-8);
        let analytic: Vec<Vec<f64>> = head.params_mut().iter().map(|(_, p)| p.grad.clone()).collect();
        for (pi, grads) in analytic.iter().enumerate() {
            for (idx, &an) in grads.iter().enumerate() {
                let mut plus = head.clone();
                plus.params_mut()[pi].1.value[idx] += eps;
                let mut minus = head.clone();
                minus.params_mut()[pi].1.value[idx] -= eps;
                let fd = (loss(&mut plus, &ri, &rj, &labels) - loss(&mut minus, &ri, &rj, &labels)) / (2.0 * eps);
                if fd.abs() + an.abs() > 1e-9 {
                    assert!(rel(fd, an) < 1e-4, "{measure:?} param {pi}[{idx}]: {fd} vs {an}");
                }
            }
        }
        for (which, g) in [(0, &gi), (1, &gj)] {
            for idx in 0..g.len() {
                let mut a = ri.clone();
                let mut b = rj.clone();
                let target = if which == 0 { &mut a } else { &mut b };
                target[idx] += eps;
                let lp = loss(&mut head.clone(), &a, &b, &labels);
                let target = if which == 0 { &mut a } else { &mut b };
                target[idx] -= 2.0 * eps;
                let lm = loss(&mut head.clone(), &a, &b, &labels);
                let fd = (lp - lm) / (2.0 * eps);
                if fd.abs() + g[idx].abs() > 1e-9 {
                    assert!(
                        rel(fd, g[idx]) < 1e-4,
                        "{measure:?} input {which}[{idx}]: {fd} vs {}",
                        g[idx]
                    );
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for m in DistanceMeasure::ALL {
            gradient_check(m, Activation::Relu);
            gradient_check(m, Activation::Tanh);
        }
    }

    #[test]
    fn dropout_gradient_respects_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut head = PrdHead::<f64>::new(
            HeadConfig {
                hidden: 8,
                ..HeadConfig::default()
            },
            10,
            &mut rng,
        )
        .unwrap();
        let ri: Vec<f64> = (0..10).map(|i| i as f64 + 1.0).collect();
        let rj = vec![0.0; 10];
        head.forward(&ri, &rj, Mode::Train, Some(&mut rng)).unwrap();
        let dropped: Vec<bool> = head.cache.as_ref().unwrap().mask.iter().map(|m| *m == 0.0).collect();
        assert!(dropped.iter().any(|d| *d));
        let (gi, _) = head.backward(&[1.0]);
        for (g, d) in gi.iter().zip(dropped) {
            if d {
                assert_eq!(*g, 0.0);
            }
        }
    }

    proptest! {
        #[test]
        fn symmetric_measures_are_exactly_symmetric(
            a in proptest::collection::vec(-5.0f32..5.0, 16),
            b in proptest::collection::vec(-5.0f32..5.0, 16),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for m in [DistanceMeasure::L1, DistanceMeasure::L2] {
                let head = PrdHead::<f32>::new(HeadConfig { measure: m, ..HeadConfig::default() }, 16, &mut rng).unwrap();
                let (ra, rb) = (Relation(a.clone()), Relation(b.clone()));
                prop_assert_eq!(head.score(&ra, &rb).unwrap(), head.score(&rb, &ra).unwrap());
            }
        }

        #[test]
        fn scores_lie_strictly_inside_unit_interval(
            a in proptest::collection::vec(-50.0f32..50.0, 8),
            b in proptest::collection::vec(-50.0f32..50.0, 8),
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for m in DistanceMeasure::ALL {
                let head = PrdHead::<f32>::new(HeadConfig { measure: m, ..HeadConfig::default() }, 8, &mut rng).unwrap();
                let s = head.score(&Relation(a.clone()), &Relation(b.clone())).unwrap().value();
                prop_assert!(s > 0.0 && s < 1.0);
            }
        }
    }
}
