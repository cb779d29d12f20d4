use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use prd_core::dataset::{load_portable, load_raven_archive, save_portable};
use prd_core::inference::{evaluate, fmt_pct, predict_all, select_checkpoint, EvalReport, Prediction};
use prd_core::mini_raven::{generate_dataset, verify_rules};
use prd_core::problem::{RpmProblem, CANDIDATES};
use prd_core::study::{
    parse_measures, run_distance_ablation, run_subset_study, DistanceStudyConfig, StudyConfig, StudyReport, Subset,
    SubsetStudyConfig,
};
use prd_core::trainer::{
    list_checkpoints, plateau_candidates, plateau_step, pool_fingerprint, run, CheckpointEntry, LossRecord,
    SelectionMode, TrainConfig, TrainOutcome, TrainState,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use walkdir::WalkDir;

use crate::args::{
    ConvertArgs, EvalArgs, GenArgs, SelectionChoice, SolveArgs, StudyCommon, StudyDistanceArgs, StudySubsetsArgs,
    TrainArgs,
};
use crate::config::{generator_config, train_config, FileConfig};
use crate::error::{require_path, CliError, CliResult};
use crate::manifest::RunManifest;
use crate::plots;

/// Shared context for every subcommand.
pub struct Ctx {
    pub file: FileConfig,
    pub workers: Option<usize>,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<PathBuf> {
    let text = serde_json::to_string_pretty(value).expect("report serialises");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn write_text(path: &Path, text: &str) -> CliResult<PathBuf> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))?;
    Ok(path.to_path_buf())
}

fn load_dataset(dir: &Path) -> CliResult<Vec<RpmProblem>> {
    require_path(dir)?;
    Ok(load_portable(dir)?)
}

fn selection_mode(choice: SelectionChoice) -> Option<SelectionMode> {
    match choice {
        SelectionChoice::Final => None,
        SelectionChoice::Validated => Some(SelectionMode::Validated),
        SelectionChoice::LabelFree => Some(SelectionMode::LabelFree),
    }
}

/// Run `body`, recording its outputs and outcome in the manifest under `dir`.
fn with_manifest<F>(dir: &Path, mut manifest: RunManifest, body: F) -> CliResult<()>
where
    F: FnOnce() -> CliResult<Vec<PathBuf>>,
{
    manifest.write(dir)?;
    match body() {
        Ok(outputs) => manifest.finish(dir, outputs, "ok"),
        Err(e) => {
            let _ = manifest.finish(dir, Vec::new(), &format!("failed: {e}"));
            Err(e)
        }
    }
}

pub fn gen(ctx: &Ctx, args: &GenArgs) -> CliResult<()> {
    let config = generator_config(&ctx.file, args)?;
    let manifest = RunManifest::begin(
        "gen",
        json!({ "generator": config, "count": args.count }),
        Some(config.seed),
        ctx.workers,
    );
    with_manifest(&args.out, manifest, || {
        let problems = generate_dataset(&config, args.count)?;
        let unique = problems
            .iter()
            .map(|p| {
                let passing = (0..CANDIDATES)
                    .map(|i| verify_rules(p, i))
                    .collect::<Result<Vec<_>, _>>()?
                    .into_iter()
                    .filter(|&ok| ok)
                    .count();
                Ok(passing == 1 && p.answer().is_some_and(|a| verify_rules(p, a).unwrap_or(false)))
            })
            .collect::<Result<Vec<_>, prd_core::Error>>()?
            .into_iter()
            .filter(|&u| u)
            .count();
        let summary = save_portable(&problems, &args.out)?;
        println!(
            "generated {} problems ({} cells) in {}",
            summary.problems,
            summary.cells,
            args.out.display()
        );
        println!("oracle-verified unique answers: {unique}/{}", summary.problems);
        Ok(vec![args.out.join(prd_core::dataset::MANIFEST)])
    })
}

pub fn convert(ctx: &Ctx, args: &ConvertArgs) -> CliResult<()> {
    require_path(&args.input)?;
    if let Some(s) = &args.split {
        if !["train", "val", "test"].contains(&s.as_str()) {
            return Err(CliError::Usage(format!(
                "unknown split `{s}` (expected train, val or test)"
            )));
        }
    }
    let manifest = RunManifest::begin(
        "convert",
        json!({ "input": args.input, "split": args.split }),
        None,
        ctx.workers,
    );
    with_manifest(&args.out, manifest, || {
        let mut archives: Vec<PathBuf> = WalkDir::new(&args.input)
            .sort_by_file_name()
            .into_iter()
            .filter_map(|e| e.ok())
            .map(|e| e.into_path())
            .filter(|p| p.extension().is_some_and(|x| x == "npz"))
            .filter(|p| match &args.split {
                Some(s) => p
                    .file_stem()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(&format!("_{s}"))),
                None => true,
            })
            .collect();
        archives.sort();
        if archives.is_empty() {
            return Err(CliError::Usage(format!(
                "no .npz archives under {}",
                args.input.display()
            )));
        }
        let problems = prd_core::exec::map(&archives, |path| {
            let p = load_raven_archive(path)?;
            let renamed = RpmProblem::new(
                format!("{}-{}", p.configuration().slug(), p.id()),
                p.context().to_vec(),
                p.candidates().to_vec(),
                p.configuration(),
            )?;
            match p.answer() {
                Some(a) => renamed.with_answer(a),
                None => Ok(renamed),
            }
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        let summary = save_portable(&problems, &args.out)?;
        println!("converted {} archives into {}", summary.problems, args.out.display());
        Ok(vec![args.out.join(prd_core::dataset::MANIFEST)])
    })
}

fn progress(every: usize) -> impl FnMut(&LossRecord, &TrainState) {
    move |r: &LossRecord, _: &TrainState| {
        if r.step.is_multiple_of(every) || r.step == 1 {
            info!(
                "step {:>6}  loss {:.4}  (real {:.4}, fake {:.4})",
                r.step,
                r.mean(),
                r.loss_real,
                r.loss_fake
            );
        }
    }
}

fn report_training(config: &TrainConfig, outcome: &TrainOutcome) {
    println!(
        "trained to step {}; {} checkpoints",
        outcome.final_step,
        outcome.checkpoints.len()
    );
    match outcome.plateau_step {
        Some(step) => {
            println!("loss plateau begins at step {step}; checkpoints from there on are selection candidates")
        }
        None => println!(
            "no loss plateau detected (window {}, slope threshold {:e}); every checkpoint remains a candidate",
            config.plateau_window, config.plateau_threshold
        ),
    }
    println!("loss log: {}", outcome.loss_log.display());
}

pub fn train(ctx: &Ctx, args: &TrainArgs) -> CliResult<()> {
    require_path(&args.data)?;
    let (config, state) = match &args.resume {
        None => {
            let config = train_config(&ctx.file, &args.options, args.seed)?;
            let state = TrainState::new(&config)?;
            (config, state)
        }
        Some(ckpt) => {
            require_path(ckpt)?;
            let (mut config, _, state) = TrainState::load(ckpt)?;
            if let Some(steps) = args.options.steps {
                config.max_steps = steps;
            }
            (config, state)
        }
    };
    let manifest = RunManifest::begin(
        "train",
        json!({ "data": args.data, "resume": args.resume, "train": config }),
        Some(config.seed),
        ctx.workers,
    );
    with_manifest(&args.out, manifest, || {
        let pool: Vec<RpmProblem> = load_dataset(&args.data)?.iter().map(RpmProblem::unlabeled).collect();
        if let Some(ckpt) = &args.resume {
            let (_, digest, _) = TrainState::load(ckpt)?;
            if digest != pool_fingerprint(&pool) {
                return Err(prd_core::Error::Contract(format!(
                    "{} was trained on a different pool than {}",
                    ckpt.display(),
                    args.data.display()
                ))
                .into());
            }
        }
        info!("training on {} problems for {} steps", pool.len(), config.max_steps);
        let outcome = run(&pool, &config, state, &args.out, progress(100))?;
        report_training(&config, &outcome);
        let mut outputs = vec![outcome.loss_log.clone()];
        outputs.extend(outcome.checkpoints.iter().map(|c| c.path.clone()));
        if args.plots {
            let history = prd_core::trainer::read_loss_log(&outcome.loss_log)?;
            let path = args.out.join("loss.svg");
            plots::loss_curve(&history, &path)?;
            outputs.push(path);
        }
        outputs.push(write_json(&args.out.join("train_outcome.json"), &outcome)?);
        Ok(outputs)
    })
}

/// A checkpoint file, or the last checkpoint of a training directory.
fn last_checkpoint(model: &Path) -> CliResult<CheckpointEntry> {
    require_path(model)?;
    if model.is_file() {
        let (_, _, state) = TrainState::load(model)?;
        return Ok(CheckpointEntry {
            step: state.step,
            path: model.to_path_buf(),
        });
    }
    list_checkpoints(model)?
        .pop()
        .ok_or_else(|| CliError::Usage(format!("no checkpoints in {}", model.display())))
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    checkpoint: &'a Path,
    step: usize,
    model_fingerprint: String,
    predictions: &'a [Prediction],
}

/// One stdout line per prediction; the JSON holds the same values.
pub fn prediction_line(p: &Prediction) -> String {
    match p.answer {
        Some(a) => format!("{}\t{}\t(answer {a})", p.id, p.predicted),
        None => format!("{}\t{}", p.id, p.predicted),
    }
}

pub fn solve(ctx: &Ctx, args: &SolveArgs) -> CliResult<()> {
    let ckpt = last_checkpoint(&args.model)?;
    require_path(&args.data)?;
    let manifest = RunManifest::begin(
        "solve",
        json!({ "model": ckpt.path, "data": args.data }),
        None,
        ctx.workers,
    );
    with_manifest(&args.out, manifest, || {
        let problems = load_dataset(&args.data)?;
        let (_, _, mut state) = TrainState::load(&ckpt.path)?;
        let predictions = predict_all(&problems, &state.model)?;
        for p in &predictions {
            println!("{}", prediction_line(p));
        }
        let out = SolveOutput {
            checkpoint: &ckpt.path,
            step: ckpt.step,
            model_fingerprint: state.model.fingerprint(),
            predictions: &predictions,
        };
        Ok(vec![write_json(&args.out.join("predictions.json"), &out)?])
    })
}

#[derive(Serialize)]
struct EvalOutput<'a> {
    checkpoint: &'a Path,
    step: usize,
    selection: &'static str,
    plateau_step: Option<usize>,
    candidates: Vec<CheckpointEntry>,
    validation_accuracy: Option<Vec<f64>>,
    report: &'a EvalReport,
}

pub fn eval(ctx: &Ctx, args: &EvalArgs) -> CliResult<()> {
    require_path(&args.model)?;
    require_path(&args.data)?;
    let mode = selection_mode(args.selection);
    if mode.is_some() && args.model.is_file() {
        return Err(CliError::Usage(
            "--selection needs a training directory as --model".into(),
        ));
    }
    if mode == Some(SelectionMode::Validated) && args.val.is_none() {
        return Err(CliError::Usage("--selection validated needs --val".into()));
    }
    let seed = args.seed.unwrap_or(0);
    let manifest = RunManifest::begin(
        "eval",
        json!({
            "model": args.model,
            "data": args.data,
            "selection": mode.map_or("final", SelectionMode::name),
            "val": args.val,
        }),
        Some(seed),
        ctx.workers,
    );
    with_manifest(&args.out, manifest, || {
        let problems = load_dataset(&args.data)?;
        if let Some(p) = problems.iter().find(|p| p.answer().is_none()) {
            return Err(CliError::Usage(format!(
                "{} is unlabelled (problem `{}` has no answer); eval needs answers",
                args.data.display(),
                p.id()
            )));
        }
        let last = last_checkpoint(&args.model)?;
        let (mut chosen, mut plateau, mut candidates, mut accuracies) = (last.clone(), None, Vec::new(), None);
        if let Some(mode) = mode {
            let (config, _, state) = TrainState::load(&last.path)?;
            plateau = plateau_step(&state.history, config.plateau_window, config.plateau_threshold);
            candidates = plateau_candidates(&list_checkpoints(&args.model)?, plateau);
            let val = match &args.val {
                Some(v) => Some(load_dataset(v)?),
                None => None,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (entry, acc) = select_checkpoint(&candidates, val.as_deref(), mode, &mut rng)?;
            chosen = entry;
            accuracies = acc;
        }
        let (_, _, mut state) = TrainState::load(&chosen.path)?;
        let mut report = evaluate(&problems, &mut state.model)?;
        report.selection_mode = mode;
        report.seed = mode.map(|_| seed);
        print!("{}", report.to_text());
        println!("checkpoint {} (step {})", chosen.path.display(), chosen.step);
        if let Some(acc) = &accuracies {
            for (c, a) in candidates.iter().zip(acc) {
                println!("  validation step {:>6}: {}", c.step, fmt_pct(Some(*a)));
            }
        }
        let out = EvalOutput {
            checkpoint: &chosen.path,
            step: chosen.step,
            selection: mode.map_or("final", SelectionMode::name),
            plateau_step: plateau,
            candidates,
            validation_accuracy: accuracies,
            report: &report,
        };
        let mut outputs = vec![
            write_json(&args.out.join("eval.json"), &out)?,
            write_text(&args.out.join("eval.txt"), &report.to_text())?,
        ];
        if args.plots {
            let path = args.out.join("accuracy.svg");
            plots::accuracy_bars(&report, &path)?;
            outputs.push(path);
        }
        Ok(outputs)
    })
}

fn study_config(ctx: &Ctx, common: &StudyCommon) -> CliResult<StudyConfig> {
    let seeds = if common.seeds.is_empty() {
        vec![1, 2, 3]
    } else {
        common.seeds.clone()
    };
    Ok(StudyConfig {
        train: train_config(&ctx.file, &common.options, None)?,
        seeds,
        selection: selection_mode(common.selection),
        selection_seed: 0,
    })
}

fn finish_study(out: &Path, report: &StudyReport) -> CliResult<Vec<PathBuf>> {
    let text = report.to_text();
    print!("{text}");
    Ok(vec![
        write_json(&out.join("study.json"), report)?,
        write_text(&out.join("study.txt"), &text)?,
    ])
}

fn manifest_config<T: Serialize>(config: &T, extra: Value) -> Value {
    let mut v = serde_json::to_value(config).expect("config serialises");
    if let (Value::Object(m), Value::Object(e)) = (&mut v, extra) {
        m.extend(e);
    }
    v
}

pub fn study_subsets(ctx: &Ctx, args: &StudySubsetsArgs) -> CliResult<()> {
    require_path(&args.data)?;
    let subsets = if args.subsets.is_empty() {
        Subset::paper_defaults()
    } else {
        args.subsets.iter().map(|s| s.parse()).collect::<Result<_, _>>()?
    };
    let config = SubsetStudyConfig {
        study: study_config(ctx, &args.common)?,
        subsets,
        split_seed: args.split_seed,
    };
    let out = &args.common.out;
    let manifest = RunManifest::begin(
        "study-subsets",
        manifest_config(&config, json!({ "data": args.data })),
        Some(args.split_seed),
        ctx.workers,
    );
    with_manifest(out, manifest, || {
        let problems = load_dataset(&args.data)?;
        let report = run_subset_study(&problems, &config, &out.join("runs"))?;
        finish_study(out, &report)
    })
}

pub fn study_distance(ctx: &Ctx, args: &StudyDistanceArgs) -> CliResult<()> {
    require_path(&args.train)?;
    require_path(&args.test)?;
    let measures = if args.measures.is_empty() {
        prd_core::prd_head::DistanceMeasure::ALL.to_vec()
    } else {
        parse_measures(&args.measures)?
    };
    let config = DistanceStudyConfig {
        study: study_config(ctx, &args.common)?,
        measures,
    };
    if config.study.selection == Some(SelectionMode::Validated) && args.val.is_none() {
        return Err(CliError::Usage("--selection validated needs --val".into()));
    }
    let out = &args.common.out;
    let manifest = RunManifest::begin(
        "study-distance",
        manifest_config(
            &config,
            json!({ "train_data": args.train, "test_data": args.test, "val_data": args.val }),
        ),
        None,
        ctx.workers,
    );
    with_manifest(out, manifest, || {
        let train = load_dataset(&args.train)?;
        let test = load_dataset(&args.test)?;
        let val = match &args.val {
            Some(v) => Some(load_dataset(v)?),
            None => None,
        };
        let report = run_distance_ablation(&train, &test, val.as_deref(), &config, &out.join("runs"))?;
        finish_study(out, &report)
    })
}
