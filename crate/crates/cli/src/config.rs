//! Resolution of settings: flag or `PRD_*` variable, then the JSON config
//! file, then built-in defaults.

use std::fs;
use std::path::Path;

use prd_core::backbone::{BackboneConfig, Variant};
use prd_core::mini_raven::GeneratorConfig;
use prd_core::prd_head::DistanceMeasure;
use prd_core::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::args::{BackboneChoice, GenArgs, TrainOptions};
use crate::error::{CliError, CliResult};

/// Sections read from `--config-file`.
#[derive(Debug, Default)]
pub struct FileConfig {
    pub train: Option<Value>,
    pub generator: Option<Value>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let err = |message: String| CliError::ConfigFile {
            path: path.to_path_buf(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let Value::Object(mut map) = value else {
            return Err(err("expected a JSON object".into()));
        };
        let out = Self {
            train: map.remove("train"),
            generator: map.remove("generator"),
        };
        if let Some(key) = map.keys().next() {
            return Err(err(format!(
                "unknown section `{key}` (expected `train` or `generator`)"
            )));
        }
        Ok(out)
    }
}

/// Overlay `patch` onto `base`, recursing into objects.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Defaults with the file section laid over them. Unknown keys are rejected.
fn layered<T: Serialize + DeserializeOwned>(default: T, section: Option<&Value>, name: &str) -> CliResult<T> {
    let Some(section) = section else {
        return Ok(default);
    };
    let mut value = serde_json::to_value(&default).expect("config serialises");
    merge(&mut value, section.clone());
    let parsed: T =
        serde_json::from_value(value.clone()).map_err(|e| CliError::Usage(format!("config section `{name}`: {e}")))?;
    let roundtrip = serde_json::to_value(&parsed).expect("config serialises");
    if let Some(key) = first_unknown(&value, &roundtrip, "") {
        return Err(CliError::Usage(format!("config section `{name}`: unknown key `{key}`")));
    }
    Ok(parsed)
}

fn first_unknown(given: &Value, known: &Value, prefix: &str) -> Option<String> {
    let (Value::Object(g), Value::Object(k)) = (given, known) else {
        return None;
    };
    for (key, v) in g {
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        match k.get(key) {
            None => return Some(path),
            Some(kv) => {
                if let Some(p) = first_unknown(v, kv, &path) {
                    return Some(p);
                }
            }
        }
    }
    None
}

pub fn generator_config(file: &FileConfig, args: &GenArgs) -> CliResult<GeneratorConfig> {
    let mut c = layered(GeneratorConfig::default(), file.generator.as_ref(), "generator")?;
    if !args.configurations.is_empty() {
        c.configurations = args
            .configurations
            .iter()
            .map(|s| s.parse())
            .collect::<Result<_, _>>()?;
    }
    if let Some(v) = args.seed {
        c.seed = v;
    }
    if let Some(v) = args.resolution {
        c.resolution = v;
    }
    if let Some(v) = args.min_rules {
        c.min_non_constant = v;
    }
    if let Some(v) = args.max_rules {
        c.max_non_constant = v;
    }
    if let Some(v) = &args.distractors {
        c.distractor_policy = v.parse()?;
    }
    if let Some(v) = args.distractor_changes {
        c.distractor_changes = v;
    }
    c.validate()?;
    Ok(c)
}

pub fn train_config(file: &FileConfig, o: &TrainOptions, seed: Option<u64>) -> CliResult<TrainConfig> {
    let mut c = layered(TrainConfig::default(), file.train.as_ref(), "train")?;
    if let Some(choice) = o.backbone {
        let want = match choice {
            BackboneChoice::Tiny => Variant::Tiny,
            BackboneChoice::Resnet18 => Variant::PaperResidual18,
        };
        if c.model.backbone.variant != want {
            c.model.backbone = match choice {
                BackboneChoice::Tiny => BackboneConfig::tiny(64, 32),
                BackboneChoice::Resnet18 => BackboneConfig::paper(),
            };
        }
    }
    let b = &mut c.model.backbone;
    if let Some(v) = o.relation_dim {
        b.relation_dim = v;
    }
    if let Some(v) = o.input_resolution {
        b.input_resolution = v;
    }
    if let Some(p) = &o.pretrained {
        b.pretrained_weights = Some(p.clone());
    }
    if o.train_norm {
        b.freeze_norm_layers = false;
    }
    if let Some(m) = &o.measure {
        c.model.head.measure = m.parse::<DistanceMeasure>()?;
    }
    if let Some(v) = o.dropout {
        c.model.head.dropout_rate = v;
    }
    if let Some(v) = o.steps {
        c.max_steps = v;
    }
    if let Some(v) = o.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = o.lr {
        c.optimizer.learning_rate = v;
    }
    if let Some(v) = o.checkpoint_every {
        c.checkpoint_every = v;
    }
    if let Some(v) = o.plateau_window {
        c.plateau_window = v;
    }
    if let Some(v) = o.plateau_threshold {
        c.plateau_threshold = v;
    }
    if let Some(v) = seed {
        c.seed = v;
    }
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn file_values_fill_in_under_flags() {
        let file = FileConfig {
            train: Some(json!({"batch_size": 8, "max_steps": 40, "model": {"head": {"measure": "l2"}}})),
            generator: None,
        };
        let flags = TrainOptions {
            steps: Some(10),
            ..TrainOptions::default()
        };
        let c = train_config(&file, &flags, Some(3)).unwrap();
        assert_eq!(c.batch_size, 8);
        assert_eq!(c.max_steps, 10);
        assert_eq!(c.seed, 3);
        assert_eq!(c.model.head.measure, DistanceMeasure::L2);
        assert_eq!(c.checkpoint_every, TrainConfig::default().checkpoint_every);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let file = FileConfig {
            train: Some(json!({"batch": 8})),
            generator: None,
        };
        let e = train_config(&file, &TrainOptions::default(), None).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("batch"));
    }

    #[test]
    fn backbone_switch_resets_its_shape() {
        let flags = TrainOptions {
            backbone: Some(BackboneChoice::Resnet18),
            ..TrainOptions::default()
        };
        let c = train_config(&FileConfig::default(), &flags, None).unwrap();
        assert_eq!(c.model.backbone, BackboneConfig::paper());
    }
}
