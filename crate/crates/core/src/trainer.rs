//! Joint optimisation of backbone and head on generated pair batches.
//!
//! Every step draws one real and one fake batch, minimises the mean of their
//! binary cross-entropies and applies a single Adam update. Checkpoints hold
//! everything needed to continue the exact same trajectory.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::arg::{make_batch, PairBatch, PairKind, SmallPoolPolicy};
use crate::checkpoint::Container;
use crate::dataset::ResizeCache;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, PrdModel};
use crate::nn::{Adam, AdamConfig, Parameters, Tensor};
use crate::prd_head::{bce_with_logit, Mode};
use crate::problem::{Row, RpmProblem};

pub const LOSS_LOG: &str = "loss.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub max_steps: usize,
    pub checkpoint_every: usize,
    pub plateau_window: usize,
    pub plateau_threshold: f64,
    pub seed: u64,
    pub small_pool: SmallPoolPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            batch_size: 32,
            optimizer: AdamConfig::default(),
            max_steps: 5000,
            checkpoint_every: 500,
            plateau_window: 200,
            plateau_threshold: 1e-5,
            seed: 0,
            small_pool: SmallPoolPolicy::Resample,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let positive = [
            ("batch_size", self.batch_size),
            ("checkpoint_every", self.checkpoint_every),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        if self.plateau_window < 2 {
            return Err(Error::invalid("plateau_window must be at least 2"));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.eps > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2)) {
            return Err(Error::invalid("optimizer needs lr > 0, eps > 0 and betas in [0, 1)"));
        }
        if self.plateau_threshold.is_nan() || self.plateau_threshold <= 0.0 {
            return Err(Error::invalid("plateau_threshold must be positive"));
        }
        Ok(())
    }

    /// Digest of every setting that shapes the optimisation trajectory.
    /// Budget and bookkeeping fields are excluded so a run can be extended.
    pub fn fingerprint(&self) -> String {
        let mut c = self.clone();
        c.max_steps = 0;
        c.checkpoint_every = 0;
        c.plateau_window = 0;
        c.plateau_threshold = 0.0;
        c.model.backbone.pretrained_weights = None;
        let json = serde_json::to_string(&c).expect("config serialises");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub loss_real: f32,
    pub loss_fake: f32,
}

impl LossRecord {
    pub fn mean(&self) -> f64 {
        (self.loss_real as f64 + self.loss_fake as f64) / 2.0
    }
}

/// Digest of a training pool's problem ids, in order.
pub fn pool_fingerprint(pool: &[RpmProblem]) -> String {
    let mut h = Sha256::new();
    for p in pool {
        h.update(p.id().as_bytes());
        h.update([0]);
    }
    hex::encode(&h.finalize()[..8])
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: PrdModel,
    pub optimizer: Adam,
    pub rng: ChaCha8Rng,
    pub step: usize,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    /// Fresh state: weights from stream 0 of the seed, sampling from stream 1.
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(config.seed);
        let model = PrdModel::new(config.model.clone(), &mut init)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(1);
        Ok(Self {
            model,
            optimizer: Adam::new(config.optimizer),
            rng,
            step: 0,
            history: Vec::new(),
        })
    }

    pub fn to_container(&mut self, config: &TrainConfig, pool: &str) -> Result<Container> {
        let mut c = Container::default();
        self.model.store(&mut c)?;
        let meta = &mut c.metadata;
        meta.insert("format".into(), "prd-checkpoint/1".into());
        meta.insert("step".into(), self.step.to_string());
        meta.insert("train_config".into(), serde_json::to_string(config)?);
        meta.insert("config_fingerprint".into(), config.fingerprint());
        meta.insert("pool_fingerprint".into(), pool.to_string());
        meta.insert("rng_seed".into(), hex::encode(self.rng.get_seed()));
        meta.insert("rng_stream".into(), self.rng.get_stream().to_string());
        meta.insert("rng_word_pos".into(), self.rng.get_word_pos().to_string());
        meta.insert("adam_steps".into(), self.optimizer.steps.to_string());
        for (name, m) in &self.optimizer.first_moment {
            c.insert(format!("adam.m.{name}"), &[m.len()], m.clone());
        }
        for (name, v) in &self.optimizer.second_moment {
            c.insert(format!("adam.v.{name}"), &[v.len()], v.clone());
        }
        let n = self.history.len();
        c.insert(
            "history.step",
            &[n],
            self.history.iter().map(|r| r.step as f32).collect(),
        );
        c.insert(
            "history.loss_real",
            &[n],
            self.history.iter().map(|r| r.loss_real).collect(),
        );
        c.insert(
            "history.loss_fake",
            &[n],
            self.history.iter().map(|r| r.loss_fake).collect(),
        );
        Ok(c)
    }

    pub fn save(&mut self, config: &TrainConfig, pool: &str, path: &Path) -> Result<()> {
        self.to_container(config, pool)?.save(path)
    }

    /// Restore a state and the config it was trained with.
    pub fn from_container(c: &Container) -> Result<(TrainConfig, String, Self)> {
        let meta = |key: &str| {
            c.metadata
                .get(key)
                .ok_or_else(|| Error::format("checkpoint", format!("missing `{key}` metadata")))
        };
        let parse = |key: &str| -> Result<u128> {
            meta(key)?
                .parse()
                .map_err(|_| Error::format("checkpoint", format!("bad `{key}` metadata")))
        };
        let config: TrainConfig = serde_json::from_str(meta("train_config")?)?;
        if config.fingerprint() != *meta("config_fingerprint")? {
            return Err(Error::format(
                "checkpoint",
                "config fingerprint does not match its config",
            ));
        }
        let model = PrdModel::restore(c)?;
        let seed: [u8; 32] = hex::decode(meta("rng_seed")?)
            .ok()
            .and_then(|v| v.try_into().ok())
            .ok_or_else(|| Error::format("checkpoint", "bad `rng_seed` metadata"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(parse("rng_stream")? as u64);
        rng.set_word_pos(parse("rng_word_pos")?);
        let mut optimizer = Adam::new(config.optimizer);
        optimizer.steps = parse("adam_steps")? as u64;
        for (name, blob) in &c.tensors {
            if let Some(n) = name.strip_prefix("adam.m.") {
                optimizer.first_moment.insert(n.to_string(), blob.data.clone());
            } else if let Some(n) = name.strip_prefix("adam.v.") {
                optimizer.second_moment.insert(n.to_string(), blob.data.clone());
            }
        }
        let column = |name: &str| {
            c.tensors
                .get(name)
                .map(|b| b.data.clone())
                .ok_or_else(|| Error::format("checkpoint", format!("missing `{name}`")))
        };
        let steps = column("history.step")?;
        let real = column("history.loss_real")?;
        let fake = column("history.loss_fake")?;
        let history = steps
            .iter()
            .zip(real.iter().zip(&fake))
            .map(|(s, (r, f))| LossRecord {
                step: *s as usize,
                loss_real: *r,
                loss_fake: *f,
            })
            .collect();
        let pool = meta("pool_fingerprint")?.clone();
        let state = Self {
            model,
            optimizer,
            rng,
            step: parse("step")? as usize,
            history,
        };
        Ok((config, pool, state))
    }

    pub fn load(path: &Path) -> Result<(TrainConfig, String, Self)> {
        Self::from_container(&Container::load(path)?)
    }
}

/// One optimiser update from a real and a fake batch.
///
/// Returns the mean BCE of each batch; the update minimises their average.
pub fn train_step(
    state: &mut TrainState,
    real: &PairBatch<'_>,
    fake: &PairBatch<'_>,
    cache: Option<&ResizeCache<'_>>,
) -> Result<(f32, f32)> {
    if real.kind != PairKind::Real || fake.kind != PairKind::Fake {
        return Err(Error::Contract(
            "train_step takes a real batch then a fake batch".into(),
        ));
    }
    if !real.is_homogeneous() || !fake.is_homogeneous() {
        return Err(Error::Contract("pair batches must not mix labels".into()));
    }
    if real.is_empty() || real.len() != fake.len() {
        return Err(Error::Contract(
            "real and fake batches must be non-empty and equal in size".into(),
        ));
    }
    let b = real.len();
    // Row order: real row_1, fake row_1, real row_2, fake row_2.
    let mut rows: Vec<Row<'_>> = Vec::with_capacity(4 * b);
    rows.extend(real.samples.iter().chain(&fake.samples).map(|s| s.row_1));
    rows.extend(real.samples.iter().chain(&fake.samples).map(|s| s.row_2));
    let profile = state.model.profile();
    let input = match cache {
        Some(c) if c.profile() == &profile => c.rows(&rows)?,
        _ => crate::dataset::preprocess_rows(&rows, &profile)?,
    };

    let model = &mut state.model;
    let dim = model.relation_dim();
    for (_, p) in model.named_params() {
        p.zero_grad();
    }
    let relations = model.backbone.forward_train(&input)?;
    let (ri, rj) = relations.data().split_at(2 * b * dim);
    let logits = model.head.forward(ri, rj, Mode::Train, Some(&mut state.rng))?;

    let mut losses = [0.0f64; 2];
    let mut grads = Vec::with_capacity(2 * b);
    for (k, z) in logits.iter().enumerate() {
        let label = if k < b { 1.0 } else { 0.0 };
        let (l, g) = bce_with_logit(*z as f64, label);
        losses[k / b] += l / b as f64;
        grads.push((g / (2 * b) as f64) as f32);
    }
    let (gi, gj) = model.head.backward(&grads);
    let mut grad_rel = gi;
    grad_rel.extend(gj);
    model.backbone.backward(&Tensor::from_vec(&[4 * b, dim], grad_rel));

    let mut params = model.named_params();
    state.optimizer.step(&mut params);
    state.step += 1;
    let record = LossRecord {
        step: state.step,
        loss_real: losses[0] as f32,
        loss_fake: losses[1] as f32,
    };
    state.history.push(record);
    Ok((record.loss_real, record.loss_fake))
}

/// Least-squares slope of `ys` against `0..n`.
fn slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (num, den) = ys.iter().enumerate().fold((0.0, 0.0), |(a, b), (i, y)| {
        let dx = i as f64 - mx;
        (a + dx * (y - my), b + dx * dx)
    });
    num / den
}

/// Earliest plateau start in a loss history.
///
/// Losses are smoothed with a trailing mean over `window` steps. A line is
/// fitted to `window` consecutive smoothed values; the first time its slope
/// magnitude drops below `threshold`, the step of the first smoothed value in
/// that fit is returned. `None` when the history is shorter than
/// `2 * window - 1` or no such fit exists.
pub fn detect_plateau(losses: &[f64], window: usize, threshold: f64) -> Option<usize> {
    if window < 2 || losses.len() < 2 * window - 1 {
        return None;
    }
    let mut means = Vec::with_capacity(losses.len() + 1 - window);
    let mut sum: f64 = losses[..window].iter().sum();
    means.push(sum / window as f64);
    for t in window..losses.len() {
        sum += losses[t] - losses[t - window];
        means.push(sum / window as f64);
    }
    // means[i] averages losses[i..i + window] and is attributed to index i + window - 1.
    means
        .windows(window)
        .position(|w| slope(w).abs() < threshold)
        .map(|i| i + window - 1)
}

/// Plateau start as a step number, from a run's loss records.
pub fn plateau_step(history: &[LossRecord], window: usize, threshold: f64) -> Option<usize> {
    let losses: Vec<f64> = history.iter().map(LossRecord::mean).collect();
    detect_plateau(&losses, window, threshold).map(|i| history[i].step)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub step: usize,
    pub path: PathBuf,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainOutcome {
    pub checkpoints: Vec<CheckpointEntry>,
    pub loss_log: PathBuf,
    pub final_step: usize,
    pub plateau_step: Option<usize>,
}

pub fn checkpoint_path(out_dir: &Path, step: usize) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("step-{step:06}.safetensors"))
}

/// Checkpoints already present in a run directory, sorted by step.
pub fn list_checkpoints(out_dir: &Path) -> Result<Vec<CheckpointEntry>> {
    let dir = out_dir.join(CHECKPOINT_DIR);
    let mut out = Vec::new();
    let entries = match fs::read_dir(&dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
        Err(e) => return Err(Error::io(&dir, e)),
    };
    for entry in entries {
        let path = entry.map_err(|e| Error::io(&dir, e))?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step-"))
            .and_then(|n| n.strip_suffix(".safetensors"))
            .and_then(|n| n.parse().ok());
        if let Some(step) = step {
            out.push(CheckpointEntry { step, path });
        }
    }
    out.sort_by_key(|c| c.step);
    Ok(out)
}

fn write_loss_log(path: &Path, history: &[LossRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in history {
        w.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Read a loss log written during training.
pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| Error::format(path.display().to_string(), e.to_string())))
        .collect()
}

fn ensure_unlabeled(pool: &[RpmProblem]) -> Result<()> {
    if let Some(p) = pool.iter().find(|p| p.answer().is_some()) {
        return Err(Error::Contract(format!(
            "training pool must be unlabelled, but problem `{}` carries an answer",
            p.id()
        )));
    }
    if pool.is_empty() {
        return Err(Error::invalid("training pool is empty"));
    }
    Ok(())
}

/// Train from scratch into `out_dir` (loss log plus periodic checkpoints).
pub fn train(pool: &[RpmProblem], config: &TrainConfig, out_dir: &Path) -> Result<TrainOutcome> {
    ensure_unlabeled(pool)?;
    let state = TrainState::new(config)?;
    run(pool, config, state, out_dir, |_, _| {})
}

/// Continue from a checkpoint up to `max_steps`; the loss log is rewritten
/// from the checkpoint's history before new rows are appended.
pub fn resume(pool: &[RpmProblem], checkpoint: &Path, max_steps: usize, out_dir: &Path) -> Result<TrainOutcome> {
    ensure_unlabeled(pool)?;
    let (mut config, pool_digest, state) = TrainState::load(checkpoint)?;
    if pool_digest != pool_fingerprint(pool) {
        return Err(Error::Contract("checkpoint was trained on a different pool".into()));
    }
    config.max_steps = max_steps;
    run(pool, &config, state, out_dir, |_, _| {})
}

/// The training loop. `on_step` sees every loss record as it is produced.
pub fn run<F>(
    pool: &[RpmProblem],
    config: &TrainConfig,
    mut state: TrainState,
    out_dir: &Path,
    mut on_step: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&LossRecord, &TrainState),
{
    config.validate()?;
    ensure_unlabeled(pool)?;
    let ckpt_dir = out_dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let log_path = out_dir.join(LOSS_LOG);
    write_loss_log(&log_path, &state.history)?;
    let file = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let mut log = csv::WriterBuilder::new()
        .has_headers(state.history.is_empty())
        .from_writer(file);
    let digest = pool_fingerprint(pool);
    let cache = ResizeCache::build(pool, &state.model.profile())?;

    while state.step < config.max_steps {
        let (real, fake) = {
            let rng = &mut state.rng;
            let real = make_batch(pool, PairKind::Real, config.batch_size, config.small_pool, rng)?;
            let fake = make_batch(pool, PairKind::Fake, config.batch_size, config.small_pool, rng)?;
            (real, fake)
        };
        train_step(&mut state, &real, &fake, Some(&cache))?;
        let record = *state.history.last().expect("a record per step");
        log.serialize(record).map_err(|e| csv_error(&log_path, e))?;
        on_step(&record, &state);
        if state.step.is_multiple_of(config.checkpoint_every) || state.step == config.max_steps {
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            state.save(config, &digest, &checkpoint_path(out_dir, state.step))?;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    Ok(TrainOutcome {
        checkpoints: list_checkpoints(out_dir)?,
        loss_log: log_path,
        final_step: state.step,
        plateau_step: plateau_step(&state.history, config.plateau_window, config.plateau_threshold),
    })
}

/// How a checkpoint is chosen among the plateau candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Best validation accuracy; uses labels.
    Validated,
    /// Uniformly random; uses no labels.
    LabelFree,
}

impl SelectionMode {
    pub fn name(self) -> &'static str {
        match self {
            SelectionMode::Validated => "validated",
            SelectionMode::LabelFree => "label_free",
        }
    }
}

/// Checkpoints at or after the plateau start; all of them when no plateau was found.
pub fn plateau_candidates(checkpoints: &[CheckpointEntry], plateau: Option<usize>) -> Vec<CheckpointEntry> {
    let inside: Vec<_> = match plateau {
        Some(start) => checkpoints.iter().filter(|c| c.step >= start).cloned().collect(),
        None => Vec::new(),
    };
    if inside.is_empty() {
        checkpoints.to_vec()
    } else {
        inside
    }
}

/// Pick an index among `n` candidates. Validated mode needs one accuracy per
/// candidate and breaks ties towards the later one.
pub fn select_index<R: Rng + ?Sized>(
    n: usize,
    accuracies: Option<&[f64]>,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<usize> {
    if n == 0 {
        return Err(Error::invalid("no checkpoints to select from"));
    }
    match mode {
        SelectionMode::LabelFree => Ok(rng.random_range(0..n)),
        SelectionMode::Validated => {
            let acc =
                accuracies.ok_or_else(|| Error::invalid("validated selection needs a labelled validation set"))?;
            if acc.len() != n {
                return Err(Error::invalid("one validation accuracy per checkpoint required"));
            }
            let mut best = 0;
            for (i, a) in acc.iter().enumerate() {
                if *a >= acc[best] {
                    best = i;
                }
            }
            Ok(best)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mini_raven::{generate_dataset, GeneratorConfig};
    use crate::problem::Configuration;

    fn pool(n: usize) -> Vec<RpmProblem> {
        let config = GeneratorConfig {
            configurations: vec![Configuration::Center],
            resolution: 32,
            seed: 1,
            ..GeneratorConfig::default()
        };
        generate_dataset(&config, n)
            .unwrap()
            .iter()
            .map(RpmProblem::unlabeled)
            .collect()
    }

    fn small_config() -> TrainConfig {
        let mut c = TrainConfig {
            batch_size: 4,
            max_steps: 6,
            checkpoint_every: 3,
            ..TrainConfig::default()
        };
        c.model.backbone = crate::backbone::BackboneConfig::tiny(16, 32);
        c
    }

    #[test]
    fn slope_of_a_line() {
        let ys: Vec<f64> = (0..10).map(|i| 3.0 - 0.5 * i as f64).collect();
        assert!((slope(&ys) + 0.5).abs() < 1e-12);
    }

    #[test]
    fn plateau_cases() {
        let w = 20;
        let falling: Vec<f64> = (0..200).map(|i| 10.0 - 0.01 * i as f64).collect();
        assert_eq!(detect_plateau(&falling, w, 1e-5), None);
        assert_eq!(detect_plateau(&vec![0.7; 200], w, 1e-5), Some(w - 1));
        assert_eq!(detect_plateau(&vec![0.7; 2 * w - 2], w, 1e-5), None);
        let knee = 120;
        let trace: Vec<f64> = (0..400)
            .map(|i| 1.0 + 0.002 * (knee as f64 - i as f64).max(0.0))
            .collect();
        let found = detect_plateau(&trace, w, 1e-5).unwrap();
        assert!(found.abs_diff(knee) <= w, "{found}");
    }

    #[test]
    fn selection_rules() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_index(1, None, SelectionMode::LabelFree, &mut rng).unwrap(), 0);
        assert_eq!(
            select_index(1, Some(&[0.2]), SelectionMode::Validated, &mut rng).unwrap(),
            0
        );
        assert_eq!(
            select_index(3, Some(&[0.3, 0.5, 0.5]), SelectionMode::Validated, &mut rng).unwrap(),
            2
        );
        assert!(select_index(3, None, SelectionMode::Validated, &mut rng).is_err());
        let ck: Vec<_> = [100, 200, 300]
            .iter()
            .map(|s| CheckpointEntry {
                step: *s,
                path: PathBuf::new(),
            })
            .collect();
        assert_eq!(plateau_candidates(&ck, Some(150)).len(), 2);
        assert_eq!(plateau_candidates(&ck, Some(900)).len(), 3);
        assert_eq!(plateau_candidates(&ck, None).len(), 3);
    }

    #[test]
    fn step_rejects_mixed_or_swapped_batches() {
        let pool = pool(4);
        let config = small_config();
        let mut state = TrainState::new(&config).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let real = make_batch(&pool, PairKind::Real, 4, SmallPoolPolicy::Resample, &mut rng).unwrap();
        let fake = make_batch(&pool, PairKind::Fake, 4, SmallPoolPolicy::Resample, &mut rng).unwrap();
        assert!(matches!(
            train_step(&mut state, &fake, &real, None),
            Err(Error::Contract(_))
        ));
        let mut mixed = real.clone();
        mixed.samples[0] = fake.samples[0].clone();
        assert!(matches!(
            train_step(&mut state, &mixed, &fake, None),
            Err(Error::Contract(_))
        ));
        assert_eq!(state.step, 0);
        train_step(&mut state, &real, &fake, None).unwrap();
        assert_eq!(state.step, 1);
        assert_eq!(state.optimizer.steps, 1);
    }

    #[test]
    fn labelled_pool_is_refused() {
        let labelled = generate_dataset(
            &GeneratorConfig {
                resolution: 32,
                ..GeneratorConfig::default()
            },
            2,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            train(&labelled, &small_config(), dir.path()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn resume_reproduces_the_uninterrupted_run() {
        let pool = pool(6);
        let config = small_config();
        let full = tempfile::tempdir().unwrap();
        let outcome = train(&pool, &config, full.path()).unwrap();
        assert_eq!(outcome.checkpoints.len(), 2);
        let part = tempfile::tempdir().unwrap();
        train(
            &pool,
            &TrainConfig {
                max_steps: 3,
                ..config.clone()
            },
            part.path(),
        )
        .unwrap();
        resume(&pool, &checkpoint_path(part.path(), 3), 6, part.path()).unwrap();
        let a = fs::read(full.path().join(LOSS_LOG)).unwrap();
        let b = fs::read(part.path().join(LOSS_LOG)).unwrap();
        assert_eq!(a, b);
        let (_, _, mut s1) = TrainState::load(&checkpoint_path(full.path(), 6)).unwrap();
        let (_, _, mut s2) = TrainState::load(&checkpoint_path(part.path(), 6)).unwrap();
        assert_eq!(s1.model.fingerprint(), s2.model.fingerprint());
        assert_eq!(read_loss_log(&full.path().join(LOSS_LOG)).unwrap().len(), 6);
    }

    #[test]
    fn resume_rejects_another_pool() {
        let pool_a = pool(4);
        let pool_b = pool(5);
        let dir = tempfile::tempdir().unwrap();
        train(
            &pool_a,
            &TrainConfig {
                max_steps: 3,
                ..small_config()
            },
            dir.path(),
        )
        .unwrap();
        assert!(resume(&pool_b, &checkpoint_path(dir.path(), 3), 6, dir.path()).is_err());
    }
}
