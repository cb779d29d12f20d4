//! Solving problems with a trained model, and accuracy reports.
//!
//! Each candidate completes the third row. Its row relation is compared with
//! the relations of the two context rows; the two similarities are averaged
//! and the best-scoring candidate is the prediction.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::Relation;
use crate::dataset::RowTensor;
use crate::error::{Error, Result};
use crate::exec;
use crate::model::PrdModel;
use crate::prd_head::SimilarityScore;
use crate::problem::{Configuration, Row, RpmProblem, CANDIDATES};
use crate::trainer::{select_index, CheckpointEntry, SelectionMode, TrainState};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub candidate_index: usize,
    pub s_ia: SimilarityScore,
    pub s_ib: SimilarityScore,
    /// `(s_ia + s_ib) / 2`.
    pub mean: f64,
}

impl CandidateScore {
    pub fn new(candidate_index: usize, s_ia: SimilarityScore, s_ib: SimilarityScore) -> Self {
        Self {
            candidate_index,
            s_ia,
            s_ib,
            mean: (s_ia.value() + s_ib.value()) / 2.0,
        }
    }
}

fn row_relation(model: &PrdModel, row: &Row<'_>) -> Result<Relation> {
    let tensor = crate::dataset::preprocess_row(row, &model.profile())?;
    let batch = RowTensor::batch(std::slice::from_ref(&tensor))?;
    Ok(Relation(model.backbone.extract(&batch)?.into_data()))
}

/// All eight candidate scores. Context-row relations are computed once.
pub fn score_candidates(problem: &RpmProblem, model: &PrdModel) -> Result<Vec<CandidateScore>> {
    let r_a = row_relation(model, &problem.row_a())?;
    let r_b = row_relation(model, &problem.row_b())?;
    (0..CANDIDATES)
        .map(|i| {
            let r_c = row_relation(model, &problem.complete_row(i)?)?;
            Ok(CandidateScore::new(
                i,
                model.similarity(&r_a, &r_c)?,
                model.similarity(&r_b, &r_c)?,
            ))
        })
        .collect()
}

/// Reference path that re-extracts the context rows for every candidate.
pub fn score_candidates_uncached(problem: &RpmProblem, model: &PrdModel) -> Result<Vec<CandidateScore>> {
    (0..CANDIDATES)
        .map(|i| {
            let r_c = row_relation(model, &problem.complete_row(i)?)?;
            let r_a = row_relation(model, &problem.row_a())?;
            let r_b = row_relation(model, &problem.row_b())?;
            Ok(CandidateScore::new(
                i,
                model.similarity(&r_a, &r_c)?,
                model.similarity(&r_b, &r_c)?,
            ))
        })
        .collect()
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub fn prediction_from_scores(scores: &[CandidateScore]) -> usize {
    argmax_lowest(&scores.iter().map(|s| s.mean).collect::<Vec<_>>())
}

pub fn solve(problem: &RpmProblem, model: &PrdModel) -> Result<usize> {
    Ok(prediction_from_scores(&score_candidates(problem, model)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub configuration: Configuration,
    pub predicted: usize,
    pub answer: Option<usize>,
    pub scores: Vec<CandidateScore>,
}

/// Predictions for every problem, in input order.
pub fn predict_all(problems: &[RpmProblem], model: &PrdModel) -> Result<Vec<Prediction>> {
    exec::map(problems, |p| {
        let scores = score_candidates(p, model)?;
        Ok(Prediction {
            id: p.id().to_string(),
            configuration: p.configuration(),
            predicted: prediction_from_scores(&scores),
            answer: p.answer(),
            scores,
        })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigAccuracy {
    pub configuration: Configuration,
    pub correct: usize,
    pub total: usize,
    /// Percent; `None` when the configuration has no problems.
    pub accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_configuration: Vec<ConfigAccuracy>,
    pub correct: usize,
    pub total: usize,
    /// Percent over all problems (problem-weighted).
    pub mean_accuracy: f64,
    pub model_fingerprint: String,
    pub selection_mode: Option<SelectionMode>,
    pub seed: Option<u64>,
}

impl EvalReport {
    /// Aggregate (predicted, answer) pairs.
    pub fn from_outcomes<I>(outcomes: I, model_fingerprint: String) -> Self
    where
        I: IntoIterator<Item = (Configuration, bool)>,
    {
        let mut counts = [(0usize, 0usize); 7];
        for (conf, hit) in outcomes {
            let c = &mut counts[conf.index()];
            c.1 += 1;
            c.0 += usize::from(hit);
        }
        let per_configuration: Vec<ConfigAccuracy> = Configuration::ALL
            .iter()
            .map(|&configuration| {
                let (correct, total) = counts[configuration.index()];
                ConfigAccuracy {
                    configuration,
                    correct,
                    total,
                    accuracy: (total > 0).then(|| 100.0 * correct as f64 / total as f64),
                }
            })
            .collect();
        let correct = counts.iter().map(|c| c.0).sum();
        let total = counts.iter().map(|c| c.1).sum();
        Self {
            per_configuration,
            correct,
            total,
            mean_accuracy: if total > 0 {
                100.0 * correct as f64 / total as f64
            } else {
                0.0
            },
            model_fingerprint,
            selection_mode: None,
            seed: None,
        }
    }

    pub fn accuracy_for(&self, configuration: Configuration) -> Option<f64> {
        self.per_configuration[configuration.index()].accuracy
    }

    /// Aligned text table with the published reference row beneath.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut header = format!("{:<14}", "model");
        for c in Configuration::ALL {
            let _ = write!(header, " {:>8}", c.short_name());
        }
        let _ = writeln!(out, "{header} {:>8}", "Avg");
        let mut row = format!("{:<14}", "this run");
        for c in &self.per_configuration {
            let _ = write!(row, " {:>8}", fmt_pct(c.accuracy));
        }
        let _ = writeln!(out, "{row} {:>8}", fmt_pct(Some(self.mean_accuracy)));
        let mut counts = format!("{:<14}", "  correct/n");
        for c in &self.per_configuration {
            let _ = write!(counts, " {:>8}", format!("{}/{}", c.correct, c.total));
        }
        let _ = writeln!(out, "{counts} {:>8}", format!("{}/{}", self.correct, self.total));
        for (name, values) in reference::TABLE1 {
            let mut r = format!("{:<14}", name);
            for v in &values[..7] {
                let _ = write!(r, " {:>8.2}", v);
            }
            let _ = writeln!(out, "{r} {:>8.2}", values[7]);
        }
        let _ = writeln!(
            out,
            "model {}  selection {}  seed {}  (reference rows are published figures, not this run)",
            self.model_fingerprint,
            self.selection_mode.map_or("final", SelectionMode::name),
            self.seed.map_or("-".to_string(), |s| s.to_string()),
        );
        out
    }
}

pub fn fmt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"))
}

/// Accuracy per configuration; every problem must carry an answer.
pub fn evaluate(problems: &[RpmProblem], model: &mut PrdModel) -> Result<EvalReport> {
    if let Some(p) = problems.iter().find(|p| p.answer().is_none()) {
        return Err(Error::invalid(format!(
            "evaluation needs labelled problems; `{}` has no answer",
            p.id()
        )));
    }
    let predictions = predict_all(problems, model)?;
    Ok(EvalReport::from_outcomes(
        predictions
            .iter()
            .map(|p| (p.configuration, Some(p.predicted) == p.answer)),
        model.fingerprint(),
    ))
}

/// Choose a checkpoint. Validated mode evaluates each candidate on `val_set`.
pub fn select_checkpoint<R: Rng + ?Sized>(
    candidates: &[CheckpointEntry],
    val_set: Option<&[RpmProblem]>,
    mode: SelectionMode,
    rng: &mut R,
) -> Result<(CheckpointEntry, Option<Vec<f64>>)> {
    let accuracies = match mode {
        SelectionMode::LabelFree => None,
        SelectionMode::Validated => {
            let val = val_set
                .filter(|v| !v.is_empty())
                .ok_or_else(|| Error::invalid("validated selection needs a labelled validation set"))?;
            let mut acc = Vec::with_capacity(candidates.len());
            for c in candidates {
                let (_, _, mut state) = TrainState::load(&c.path)?;
                acc.push(evaluate(val, &mut state.model)?.mean_accuracy);
            }
            Some(acc)
        }
    };
    let i = select_index(candidates.len(), accuracies.as_deref(), mode, rng)?;
    Ok((candidates[i].clone(), accuracies))
}

/// Published reference figures (percent), shown beside desk-scale results.
pub mod reference {
    /// Columns: Center, 2x2Grid, 3x3Grid, L-R, U-D, O-IC, O-IG, Avg.
    pub const TABLE1: [(&str, [f64; 8]); 2] = [
        ("paper PRD", [74.55, 38.70, 34.90, 60.80, 60.30, 62.50, 23.40, 50.74]),
        ("random", [12.50, 12.50, 12.50, 12.50, 12.50, 12.50, 12.50, 12.50]),
    ];
    /// Average accuracy by training subset.
    pub const TABLE2: [(&str, f64); 4] = [
        ("train-20%", 32.21),
        ("test-20%", 31.38),
        ("train-60%", 37.72),
        ("full", 50.74),
    ];
    /// Average accuracy by distance measure.
    pub const TABLE3: [(&str, f64); 4] = [("difference", 43.66), ("l1", 50.74), ("l2", 48.20), ("concat", 38.72)];
    pub const RANDOM: f64 = 12.5;
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::BackboneConfig;
    use crate::mini_raven::{generate_dataset, GeneratorConfig};
    use crate::model::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> PrdModel {
        let mut config = ModelConfig::desk();
        config.backbone = BackboneConfig::tiny(16, 32);
        PrdModel::new(config, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn problems(n: usize) -> Vec<RpmProblem> {
        generate_dataset(
            &GeneratorConfig {
                resolution: 32,
                seed: 8,
                ..GeneratorConfig::default()
            },
            n,
        )
        .unwrap()
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_lowest(&[0.1, 0.1, 0.1, 0.1, 0.1, 0.9, 0.1, 0.1]), 5);
        assert_eq!(argmax_lowest(&[0.4; 8]), 0);
        assert_eq!(argmax_lowest(&[0.1, 0.7, 0.7]), 1);
    }

    #[test]
    fn scores_are_consistent() {
        let m = model(0);
        for p in problems(3) {
            let s = score_candidates(&p, &m).unwrap();
            assert_eq!(s.len(), 8);
            for c in &s {
                assert_eq!(c.mean, (c.s_ia.value() + c.s_ib.value()) / 2.0);
                assert!(c.mean > 0.0 && c.mean < 1.0);
            }
            assert_eq!(s, score_candidates_uncached(&p, &m).unwrap());
        }
    }

    #[test]
    fn evaluation_counts_add_up() {
        let mut m = model(1);
        let ps = problems(4);
        let report = evaluate(&ps, &mut m).unwrap();
        assert_eq!(report.total, 8);
        let summed: usize = report.per_configuration.iter().map(|c| c.correct).sum();
        assert_eq!(summed, report.correct);
        assert!(report.to_text().contains("paper PRD"));
        let unlabeled: Vec<_> = ps.iter().map(RpmProblem::unlabeled).collect();
        assert!(evaluate(&unlabeled, &mut m).is_err());
    }

    #[test]
    fn perfect_outcomes_score_100() {
        let r = EvalReport::from_outcomes(Configuration::ALL.iter().map(|c| (*c, true)), "x".into());
        assert_eq!(r.mean_accuracy, 100.0);
        assert!(r.per_configuration.iter().all(|c| c.accuracy == Some(100.0)));
    }
}
