//! Training-and-evaluation studies: the subset study and the distance
//! measure ablation. Each cell of a study trains a model per seed, picks a
//! checkpoint and evaluates it on a fixed labelled test set.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{evaluate, fmt_pct, reference, select_checkpoint, EvalReport};
use crate::prd_head::DistanceMeasure;
use crate::problem::{split_folds, Configuration, RpmProblem};
use crate::trainer::{
    checkpoint_path, list_checkpoints, plateau_candidates, plateau_step, pool_fingerprint, train, SelectionMode,
    TrainConfig, TrainState,
};

/// Which slice of a five-fold split a model is trained on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subset {
    /// The given fraction of the whole set, drawn from the training folds (at most 0.6).
    TrainFraction(f64),
    /// The held-out test fold itself.
    Test,
    /// Every problem.
    Full,
}

impl Subset {
    pub fn label(&self) -> String {
        match self {
            Subset::TrainFraction(f) => format!("train-{}%", (f * 100.0).round()),
            Subset::Test => "test-20%".into(),
            Subset::Full => "full".into(),
        }
    }

    pub fn paper_defaults() -> Vec<Subset> {
        vec![
            Subset::TrainFraction(0.2),
            Subset::Test,
            Subset::TrainFraction(0.6),
            Subset::Full,
        ]
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_end_matches('%').to_ascii_lowercase();
        if t == "full" {
            return Ok(Subset::Full);
        }
        if t == "test" || t == "test-20" {
            return Ok(Subset::Test);
        }
        let pct = t
            .strip_prefix("train-")
            .and_then(|p| p.parse::<f64>().ok())
            .filter(|p| *p > 0.0 && *p <= 60.0)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown subset `{s}` (expected train-<pct up to 60>, test or full)"
                ))
            })?;
        Ok(Subset::TrainFraction(pct / 100.0))
    }
}

/// Parse measure names, rejecting unknown ones.
pub fn parse_measures<S: AsRef<str>>(names: &[S]) -> Result<Vec<DistanceMeasure>> {
    names.iter().map(|n| n.as_ref().parse()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// `None` evaluates the final checkpoint.
    pub selection: Option<SelectionMode>,
    pub selection_seed: u64,
}

impl StudyConfig {
    fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("a study needs at least one seed"));
        }
        self.train.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetStudyConfig {
    pub study: StudyConfig,
    pub subsets: Vec<Subset>,
    pub split_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceStudyConfig {
    pub study: StudyConfig,
    pub measures: Vec<DistanceMeasure>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Subsets,
    Distance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub label: String,
    pub seed: u64,
    pub train_problems: usize,
    pub checkpoint_step: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub label: String,
    /// Mean over seeds, per configuration (percent).
    pub per_configuration: Vec<Option<f64>>,
    pub mean_accuracy: f64,
    pub reference: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub kind: StudyKind,
    pub config: serde_json::Value,
    pub rows: Vec<StudyRow>,
    pub summary: Vec<StudySummary>,
}

impl StudyReport {
    fn new(kind: StudyKind, config: serde_json::Value, rows: Vec<StudyRow>) -> Self {
        let refs: &[(&str, f64)] = match kind {
            StudyKind::Subsets => &reference::TABLE2,
            StudyKind::Distance => &reference::TABLE3,
        };
        let mut labels: Vec<String> = Vec::new();
        for r in &rows {
            if !labels.contains(&r.label) {
                labels.push(r.label.clone());
            }
        }
        let summary = labels
            .into_iter()
            .map(|label| {
                let group: Vec<&StudyRow> = rows.iter().filter(|r| r.label == label).collect();
                let n = group.len() as f64;
                let per_configuration = Configuration::ALL
                    .iter()
                    .map(|&c| {
                        let v: Vec<f64> = group.iter().filter_map(|r| r.report.accuracy_for(c)).collect();
                        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
                    })
                    .collect();
                StudySummary {
                    mean_accuracy: group.iter().map(|r| r.report.mean_accuracy).sum::<f64>() / n,
                    per_configuration,
                    reference: refs.iter().find(|(l, _)| *l == label).map(|(_, v)| *v),
                    label,
                }
            })
            .collect();
        Self {
            kind,
            config,
            rows,
            summary,
        }
    }

    pub fn mean_for(&self, label: &str) -> Option<f64> {
        self.summary.iter().find(|s| s.label == label).map(|s| s.mean_accuracy)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let title = match self.kind {
            StudyKind::Subsets => "training subset",
            StudyKind::Distance => "distance measure",
        };
        let mut header = format!("{title:<18}");
        for c in Configuration::ALL {
            let _ = write!(header, " {:>8}", c.short_name());
        }
        let _ = writeln!(out, "{header} {:>8} {:>8}", "Avg", "paper");
        for s in &self.summary {
            let mut line = format!("{:<18}", s.label);
            for v in &s.per_configuration {
                let _ = write!(line, " {:>8}", fmt_pct(*v));
            }
            let _ = writeln!(
                out,
                "{line} {:>8} {:>8}",
                fmt_pct(Some(s.mean_accuracy)),
                fmt_pct(s.reference)
            );
        }
        let _ = writeln!(out, "\nper seed:");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "  {:<16} seed {:<6} n_train {:<6} step {:<7} acc {:>6}  model {}",
                r.label,
                r.seed,
                r.train_problems,
                r.checkpoint_step,
                fmt_pct(Some(r.report.mean_accuracy)),
                r.report.model_fingerprint
            );
        }
        let _ = writeln!(
            out,
            "(paper column: published paper-scale averages, for side-by-side reading only)"
        );
        out
    }
}

/// Train into `dir`, or reuse a finished run there with the same trajectory
/// fingerprint, pool and step budget.
pub fn train_or_reuse(pool: &[RpmProblem], config: &TrainConfig, dir: &Path) -> Result<PathBuf> {
    let last = checkpoint_path(dir, config.max_steps);
    if last.exists() {
        if let Ok((c, digest, _)) = TrainState::load(&last) {
            if c.fingerprint() == config.fingerprint() && digest == pool_fingerprint(pool) {
                return Ok(last);
            }
        }
    }
    train(pool, config, dir)?;
    Ok(last)
}

/// Train one model, pick its checkpoint and evaluate it on `test`.
pub fn train_and_evaluate(
    pool: &[RpmProblem],
    test: &[RpmProblem],
    val: Option<&[RpmProblem]>,
    config: &TrainConfig,
    selection: Option<SelectionMode>,
    selection_seed: u64,
    dir: &Path,
) -> Result<(usize, EvalReport)> {
    let last = train_or_reuse(pool, config, dir)?;
    let chosen = match selection {
        None => last,
        Some(mode) => {
            let (_, _, state) = TrainState::load(&last)?;
            let plateau = plateau_step(&state.history, config.plateau_window, config.plateau_threshold);
            let candidates = plateau_candidates(&list_checkpoints(dir)?, plateau);
            let mut rng = ChaCha8Rng::seed_from_u64(selection_seed);
            select_checkpoint(&candidates, val, mode, &mut rng)?.0.path
        }
    };
    let (_, _, mut state) = TrainState::load(&chosen)?;
    let mut report = evaluate(test, &mut state.model)?;
    report.selection_mode = selection;
    report.seed = Some(config.seed);
    Ok((state.step, report))
}

fn unlabeled(problems: &[&RpmProblem]) -> Vec<RpmProblem> {
    problems.iter().map(|p| p.unlabeled()).collect()
}

/// Pick `fraction` of the whole set from the training indices, per configuration.
fn train_fraction(problems: &[RpmProblem], train_idx: &[usize], fraction: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for conf in Configuration::ALL {
        let total = problems.iter().filter(|p| p.configuration() == conf).count();
        let want = (fraction * total as f64).round() as usize;
        out.extend(
            train_idx
                .iter()
                .copied()
                .filter(|&i| problems[i].configuration() == conf)
                .take(want),
        );
    }
    out
}

/// Models trained on different slices of one labelled set, all evaluated on
/// the same held-out test fold.
pub fn run_subset_study(problems: &[RpmProblem], config: &SubsetStudyConfig, work_dir: &Path) -> Result<StudyReport> {
    config.study.validate()?;
    if config.subsets.is_empty() {
        return Err(Error::invalid("no subsets requested"));
    }
    let split = split_folds(problems, config.split_seed)?;
    let pick = |idx: &[usize]| idx.iter().map(|&i| &problems[i]).collect::<Vec<_>>();
    let test: Vec<RpmProblem> = pick(&split.test).into_iter().cloned().collect();
    let val: Vec<RpmProblem> = pick(&split.val).into_iter().cloned().collect();
    let mut rows = Vec::new();
    for subset in &config.subsets {
        let idx = match subset {
            Subset::TrainFraction(f) => train_fraction(problems, &split.train, *f),
            Subset::Test => split.test.clone(),
            Subset::Full => (0..problems.len()).collect(),
        };
        let pool = unlabeled(&pick(&idx));
        for &seed in &config.study.seeds {
            let train_config = TrainConfig {
                seed,
                ..config.study.train.clone()
            };
            let dir = work_dir
                .join(subset.label().replace('%', "pct"))
                .join(format!("seed-{seed}"));
            let (step, report) = train_and_evaluate(
                &pool,
                &test,
                Some(&val),
                &train_config,
                config.study.selection,
                config.study.selection_seed,
                &dir,
            )?;
            rows.push(StudyRow {
                label: subset.label(),
                seed,
                train_problems: pool.len(),
                checkpoint_step: step,
                report,
            });
        }
    }
    Ok(StudyReport::new(
        StudyKind::Subsets,
        serde_json::to_value(config)?,
        rows,
    ))
}

/// One model per distance measure and seed; everything else fixed.
pub fn run_distance_ablation(
    train_pool: &[RpmProblem],
    test: &[RpmProblem],
    val: Option<&[RpmProblem]>,
    config: &DistanceStudyConfig,
    work_dir: &Path,
) -> Result<StudyReport> {
    config.study.validate()?;
    if config.measures.is_empty() {
        return Err(Error::invalid("no distance measures requested"));
    }
    let pool: Vec<RpmProblem> = train_pool.iter().map(RpmProblem::unlabeled).collect();
    let mut rows = Vec::new();
    for &measure in &config.measures {
        for &seed in &config.study.seeds {
            let mut train_config = TrainConfig {
                seed,
                ..config.study.train.clone()
            };
            train_config.model.head.measure = measure;
            let dir = work_dir.join(measure.name()).join(format!("seed-{seed}"));
            let (step, report) = train_and_evaluate(
                &pool,
                test,
                val,
                &train_config,
                config.study.selection,
                config.study.selection_seed,
                &dir,
            )?;
            rows.push(StudyRow {
                label: measure.name().to_string(),
                seed,
                train_problems: pool.len(),
                checkpoint_step: step,
                report,
            });
        }
    }
    Ok(StudyReport::new(
        StudyKind::Distance,
        serde_json::to_value(config)?,
        rows,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::mini_raven::{generate_dataset, GeneratorConfig};

    fn tiny_study() -> StudyConfig {
        let mut train = TrainConfig {
            batch_size: 4,
            max_steps: 4,
            checkpoint_every: 2,
            plateau_window: 2,
            ..TrainConfig::default()
        };
        train.model.backbone = BackboneConfig::tiny(8, 32);
        StudyConfig {
            train,
            seeds: vec![1],
            selection: None,
            selection_seed: 0,
        }
    }

    fn problems(n: usize) -> Vec<RpmProblem> {
        generate_dataset(
            &GeneratorConfig {
                resolution: 32,
                ..GeneratorConfig::default()
            },
            n,
        )
        .unwrap()
    }

    #[test]
    fn subset_parsing_and_labels() {
        assert_eq!("train-20%".parse::<Subset>().unwrap(), Subset::TrainFraction(0.2));
        assert_eq!("test".parse::<Subset>().unwrap(), Subset::Test);
        assert_eq!("FULL".parse::<Subset>().unwrap(), Subset::Full);
        assert!("train-80".parse::<Subset>().is_err());
        assert_eq!(Subset::TrainFraction(0.6).label(), "train-60%");
        assert!(parse_measures(&["l1", "cosine"]).is_err());
        assert_eq!(
            parse_measures(&["l2", "concat"]).unwrap(),
            vec![DistanceMeasure::L2, DistanceMeasure::Concat]
        );
    }

    #[test]
    fn subset_study_is_deterministic_and_shaped() {
        let ps = problems(10);
        let config = SubsetStudyConfig {
            study: tiny_study(),
            subsets: vec![Subset::TrainFraction(0.2), Subset::Test, Subset::Full],
            split_seed: 3,
        };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let r1 = run_subset_study(&ps, &config, a.path()).unwrap();
        let r2 = run_subset_study(&ps, &config, b.path()).unwrap();
        assert_eq!(r1, r2);
        assert_eq!(r1.summary.len(), 3);
        assert_eq!(r1.rows[0].train_problems, 4);
        assert_eq!(r1.rows[1].train_problems, 4);
        assert_eq!(r1.rows[2].train_problems, 20);
        assert!(r1.rows.iter().all(|r| r.report.total == 4));
        assert_eq!(r1.summary[2].reference, Some(50.74));
        assert!(r1.to_text().contains("train-20%"));
    }

    #[test]
    fn ablation_reuses_finished_runs_and_selects() {
        let ps = problems(6);
        let (train_set, test) = ps.split_at(8);
        let mut study = tiny_study();
        study.selection = Some(SelectionMode::LabelFree);
        let config = DistanceStudyConfig {
            study,
            measures: vec![DistanceMeasure::L1, DistanceMeasure::Concat],
        };
        let dir = tempfile::tempdir().unwrap();
        let first = run_distance_ablation(train_set, test, None, &config, dir.path()).unwrap();
        let stamp = std::fs::metadata(checkpoint_path(&dir.path().join("l1/seed-1"), 4))
            .unwrap()
            .modified()
            .unwrap();
        let second = run_distance_ablation(train_set, test, None, &config, dir.path()).unwrap();
        let again = std::fs::metadata(checkpoint_path(&dir.path().join("l1/seed-1"), 4))
            .unwrap()
            .modified()
            .unwrap();
        assert_eq!(stamp, again);
        assert_eq!(first, second);
        assert_eq!(first.summary.len(), 2);
        let mut validated = config.clone();
        validated.study.selection = Some(SelectionMode::Validated);
        assert!(run_distance_ablation(train_set, test, None, &validated, dir.path()).is_err());
    }
}
