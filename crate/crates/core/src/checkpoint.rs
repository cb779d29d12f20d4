//! Single-file tensor container used for checkpoints and pretrained imports.
//!
//! The file is a safetensors archive: a JSON header with free-form string
//! metadata followed by little-endian `f32` blobs keyed by parameter path.
//! Writes go to a temporary sibling and are renamed into place.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::nn::Parameters;

/// A named `f32` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Blob {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub metadata: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Blob>,
}

impl Container {
    pub fn insert(&mut self, name: impl Into<String>, shape: &[usize], data: Vec<f32>) {
        self.tensors.insert(
            name.into(),
            Blob {
                shape: shape.to_vec(),
                data,
            },
        );
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(k, b)| {
                let bytes = b.data.iter().flat_map(|v| v.to_le_bytes()).collect();
                (k.clone(), b.shape.clone(), bytes)
            })
            .collect();
        let views = raw
            .iter()
            .map(|(k, shape, bytes)| {
                TensorView::new(Dtype::F32, shape.clone(), bytes)
                    .map(|v| (k.clone(), v))
                    .map_err(|e| Error::Model(format!("tensor {k}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        safetensors::serialize(views, Some(meta)).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fail = |m: String| Error::format("container", m);
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| fail(e.to_string()))?;
        let st = SafeTensors::deserialize(bytes).map_err(|e| fail(e.to_string()))?;
        let mut out = Container {
            metadata: header.metadata().clone().unwrap_or_default().into_iter().collect(),
            ..Default::default()
        };
        for (name, view) in st.iter() {
            let data = decode(view.dtype(), view.data()).ok_or_else(|| Error::WeightLoad {
                layer: name.to_string(),
                message: format!("unsupported dtype {:?}", view.dtype()),
            })?;
            out.insert(name, view.shape(), data);
        }
        Ok(out)
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Copy every parameter of `model` under `prefix` into the container.
    pub fn store_params<P: Parameters>(&mut self, prefix: &str, model: &mut P) {
        for (name, p) in model.named_params_with_prefix(prefix) {
            self.insert(name, &p.shape, p.value.clone());
        }
    }

    /// Overwrite every parameter of `model` from the container; all must be present.
    pub fn restore_params<P: Parameters>(&self, prefix: &str, model: &mut P) -> Result<()> {
        for (name, p) in model.named_params_with_prefix(prefix) {
            let blob = self.tensors.get(&name).ok_or_else(|| Error::WeightLoad {
                layer: name.clone(),
                message: "missing from weights file".into(),
            })?;
            if blob.shape != p.shape {
                return Err(Error::WeightLoad {
                    layer: name,
                    message: format!("shape {:?} does not match expected {:?}", blob.shape, p.shape),
                });
            }
            p.value.copy_from_slice(&blob.data);
        }
        Ok(())
    }
}

fn decode(dtype: Dtype, bytes: &[u8]) -> Option<Vec<f32>> {
    match dtype {
        Dtype::F32 => Some(
            bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F64 => Some(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()) as f32)
                .collect(),
        ),
        Dtype::I64 => Some(
            bytes
                .chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()) as f32)
                .collect(),
        ),
        _ => None,
    }
}

/// Keys in a torchvision state dict that the headless backbone has no use for.
fn ignored_key(key: &str) -> bool {
    key.starts_with("fc.") || key.ends_with("num_batches_tracked")
}

/// Load a torchvision-layout state dict (exported as safetensors) into a backbone.
///
/// Keys map one to one (`layer1.0.conv1.weight` and so on). The classifier
/// (`fc.*`) and `num_batches_tracked` counters are skipped. Any other key the
/// model does not know is reported as an error so a wrong-architecture file
/// fails loudly.
pub fn load_pretrained<P: Parameters>(model: &mut P, path: &Path) -> Result<()> {
    let container = Container::load(path)?;
    let known: Vec<String> = model.named_params().into_iter().map(|(n, _)| n).collect();
    if let Some(extra) = container.tensors.keys().find(|k| !ignored_key(k) && !known.contains(k)) {
        return Err(Error::WeightLoad {
            layer: extra.clone(),
            message: "not a parameter of this backbone".into(),
        });
    }
    container.restore_params("", model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Conv2d, ParamKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_bits_and_metadata() {
        let mut c = Container::default();
        c.metadata.insert("step".into(), "12".into());
        c.insert("a.weight", &[2, 2], vec![1.0, -0.0, f32::MIN_POSITIVE, 3.5]);
        c.insert("b", &[0], vec![]);
        let back = Container::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn garbage_is_a_format_error() {
        assert!(Container::from_bytes(b"not a container").is_err());
    }

    #[test]
    fn restore_names_the_bad_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new(1, 2, 3, 1, 1, true, &mut rng);
        let mut c = Container::default();
        c.insert("weight", &[2, 1, 3, 3], vec![0.0; 18]);
        match c.restore_params("", &mut conv) {
            Err(Error::WeightLoad { layer, .. }) => assert_eq!(layer, "bias"),
            other => panic!("{other:?}"),
        }
        c.insert("bias", &[3], vec![0.0; 3]);
        match c.restore_params("", &mut conv) {
            Err(Error::WeightLoad { layer, message }) => {
                assert_eq!(layer, "bias");
                assert!(message.contains("shape"));
            }
            other => panic!("{other:?}"),
        }
        c.insert("bias", &[2], vec![0.5; 2]);
        c.restore_params("", &mut conv).unwrap();
        let params = conv.named_params();
        assert!(params.iter().all(|(_, p)| p.kind == ParamKind::Weight));
        assert_eq!(params[1].1.value, vec![0.5, 0.5]);
    }

    #[test]
    fn save_is_atomic_and_loadable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let mut c = Container::default();
        c.insert("x", &[3], vec![1.0, 2.0, 3.0]);
        c.save(&path).unwrap();
        assert!(!path.with_extension("tmp").exists());
        assert_eq!(Container::load(&path).unwrap(), c);
    }
}
