//! A relation extractor paired with a discriminator head.

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{Backbone, BackboneConfig, Relation};
use crate::checkpoint::Container;
use crate::dataset::{preprocess_rows, PreprocessProfile, ResizeCache};
use crate::error::{Error, Result};
use crate::nn::{Param, Parameters};
use crate::prd_head::{HeadConfig, PrdHead, SimilarityScore};
use crate::problem::Row;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    /// Desk-scale default: tiny backbone, L1 head.
    pub fn desk() -> Self {
        Self {
            backbone: BackboneConfig::tiny(64, 32),
            head: HeadConfig::default(),
        }
    }

    pub fn paper() -> Self {
        Self {
            backbone: BackboneConfig::paper(),
            head: HeadConfig::default(),
        }
    }

    pub fn profile(&self) -> PreprocessProfile {
        PreprocessProfile::with_resolution(self.backbone.input_resolution)
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.head.validate()
    }
}

#[derive(Clone, Debug)]
pub struct PrdModel {
    config: ModelConfig,
    pub backbone: Backbone,
    pub head: PrdHead<f32>,
}

impl PrdModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let backbone = Backbone::build(&config.backbone, rng)?;
        let head = PrdHead::new(config.head.clone(), config.backbone.relation_dim, rng)?;
        Ok(Self { config, backbone, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn profile(&self) -> PreprocessProfile {
        self.config.profile()
    }

    pub fn relation_dim(&self) -> usize {
        self.config.backbone.relation_dim
    }

    /// Evaluation-mode relations for a batch of rows, `N x dim` row-major.
    pub fn relations(&self, rows: &[Row<'_>]) -> Result<Vec<f32>> {
        let batch = preprocess_rows(rows, &self.profile())?;
        Ok(self.backbone.extract(&batch)?.into_data())
    }

    /// Same as [`PrdModel::relations`] with cached resizing.
    pub fn relations_cached(&self, rows: &[Row<'_>], cache: &ResizeCache<'_>) -> Result<Vec<f32>> {
        if cache.profile() != &self.profile() {
            return Err(Error::Model("resize cache built for a different input profile".into()));
        }
        Ok(self.backbone.extract(&cache.rows(rows)?)?.into_data())
    }

    pub fn relation(&self, row: &Row<'_>) -> Result<Relation> {
        Ok(Relation(self.relations(std::slice::from_ref(row))?))
    }

    pub fn similarity(&self, ri: &Relation, rj: &Relation) -> Result<SimilarityScore> {
        self.head.score(ri, rj)
    }

    /// Short hex digest of every parameter value, in name order.
    pub fn fingerprint(&mut self) -> String {
        let mut hasher = Sha256::new();
        for (name, p) in self.named_params() {
            hasher.update(name.as_bytes());
            for v in &p.value {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(&hasher.finalize()[..8])
    }

    pub fn store(&mut self, container: &mut Container) -> Result<()> {
        container
            .metadata
            .insert("model_config".into(), serde_json::to_string(&self.config)?);
        container.store_params("", self);
        Ok(())
    }

    /// Rebuild a model from a container written by [`PrdModel::store`].
    pub fn restore(container: &Container) -> Result<Self> {
        let raw = container
            .metadata
            .get("model_config")
            .ok_or_else(|| Error::format("checkpoint", "missing model_config metadata"))?;
        let mut config: ModelConfig = serde_json::from_str(raw)?;
        config.backbone.pretrained_weights = None;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Self::new(config, &mut rng)?;
        container.restore_params("", &mut model)?;
        Ok(model)
    }
}

impl Parameters for PrdModel {
    fn collect_params<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Param)>) {
        self.backbone.collect_params(&crate::nn::join(prefix, "backbone"), out);
        self.head.collect_params(&crate::nn::join(prefix, "head"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn store_restore_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = PrdModel::new(ModelConfig::desk(), &mut rng).unwrap();
        let mut c = Container::default();
        model.store(&mut c).unwrap();
        let mut back = PrdModel::restore(&c).unwrap();
        assert_eq!(back.fingerprint(), model.fingerprint());
        let mut other = PrdModel::new(ModelConfig::desk(), &mut rng).unwrap();
        assert_ne!(other.fingerprint(), model.fingerprint());
    }
}
