//! Backbone, fusion and a 1x1 conv heatmap head under one parameter store.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::fusion::{Fusion, FusionConfig, FusionMode};
use crate::layers::Conv2d;
use crate::tensor::{Bindings, Graph, NodeId, ParamStore, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub fusion: FusionConfig,
    pub n_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { backbone: BackboneConfig::toy(), fusion: FusionConfig::default(), n_classes: 3 }
    }
}

/// Heatmap resolution relative to the input image.
pub const HEATMAP_STRIDE: usize = BackboneConfig::STEM_STRIDE;

#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// `[N, K, H/4, W/4]`.
    pub heatmap: NodeId,
    /// `[3]` fusion weights.
    pub weights: NodeId,
}

#[derive(Clone, Debug)]
pub struct Model<T: Real = f64> {
    config: ModelConfig,
    pub backbone: Backbone,
    pub fusion: Fusion,
    pub head: Conv2d,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    /// All parameters derive from `seed`; `config.backbone.seed` is ignored.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        if config.n_classes == 0 {
            return Err(Error::Config("n_classes must be positive".into()));
        }
        let mut config = config.clone();
        config.backbone.seed = seed;
        let mut params = ParamStore::new();
        let backbone = Backbone::new(config.backbone.clone(), &mut params)?;
        let fusion = Fusion::new(&config.backbone, config.fusion, &mut params, seed.wrapping_add(1))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
        let head = Conv2d::new(&mut params, &mut rng, "head", fusion.out_channels(), config.n_classes, 1, 1, 0)?;
        Ok(Self { config, backbone, fusion, head, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    /// Image `[N, 3, H, W]` to class heatmaps.
    pub fn forward(&self, g: &mut Graph<T>, p: &Bindings, image: NodeId, mode: FusionMode) -> Result<ModelOutput> {
        let levels = self.backbone.forward(g, p, image)?;
        let (map, weights) = self.fusion.forward(g, p, &levels, mode)?;
        let heatmap = build_head(g, p, &self.head, map)?;
        Ok(ModelOutput { heatmap, weights })
    }
}

/// 1x1 conv from the attention map's channels to one channel per class.
pub fn build_head<T: Real>(g: &mut Graph<T>, p: &Bindings, head: &Conv2d, attention_map: NodeId) -> Result<NodeId> {
    Ok(head.forward(g, p, attention_map)?)
}
