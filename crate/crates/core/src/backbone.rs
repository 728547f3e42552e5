//! Toy three-level convolutional feature extractor.
//!
//! Layout follows the first stages of a ResNet: a 7x7 stride-2 stem conv and
//! a 3x3 stride-2 max pool (total stride 4), then three levels of 3x3
//! conv + relu blocks. Level 1 keeps the stem resolution; levels 2 and 3
//! each halve it with a stride-2 first conv.

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::layers::Conv2d;
use crate::tensor::{shape_err, Bindings, Graph, NodeId, ParamStore, Real};

/// One of the three fused feature levels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Level {
    One,
    Two,
    Three,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::One, Level::Two, Level::Three];

    /// Zero-based position (0, 1, 2).
    pub fn index(self) -> usize {
        self as usize
    }

    /// One-based number as used on the command line (1, 2, 3).
    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    /// Spatial downsampling of this level relative to level 1.
    pub fn upsample_factor(self) -> usize {
        1 << self.index()
    }
}

impl TryFrom<u8> for Level {
    type Error = Error;

    fn try_from(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Level::One),
            2 => Ok(Level::Two),
            3 => Ok(Level::Three),
            _ => Err(config(format!("level {n} out of range (expected 1, 2 or 3)"))),
        }
    }
}

impl From<Level> for u8 {
    fn from(level: Level) -> u8 {
        level.number()
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.number())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub channels: [usize; 3],
    pub blocks_per_level: [usize; 3],
    pub stem_channels: usize,
    pub seed: u64,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl BackboneConfig {
    pub const STEM_STRIDE: usize = 4;

    pub fn toy() -> Self {
        Self { channels: [16, 32, 64], blocks_per_level: [1, 1, 1], stem_channels: 8, seed: 0 }
    }

    /// Channel widths of ResNet conv2_x..conv4_x.
    pub fn full() -> Self {
        Self { channels: [256, 512, 1024], blocks_per_level: [1, 1, 1], stem_channels: 64, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let [c1, c2, c3] = self.channels;
        if c1 == 0 || !(c1 < c2 && c2 < c3) {
            return Err(config(format!("channels must be positive and strictly increasing, got {:?}", self.channels)));
        }
        if self.blocks_per_level.iter().any(|&b| b == 0 || b > 8) {
            return Err(config(format!("blocks_per_level must be in 1..=8, got {:?}", self.blocks_per_level)));
        }
        if self.stem_channels == 0 {
            return Err(config("stem_channels must be positive"));
        }
        Ok(())
    }

    /// Parses `key = value` lines. Keys: `channels`, `blocks_per_level`
    /// (comma-separated triples), `stem_channels`, `seed`, and `preset`
    /// (`toy` or `full`, applied before the other keys). `#` starts a
    /// comment.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1)))?;
            entries.push((lineno + 1, key.trim(), value.trim()));
        }
        let mut cfg = match entries.iter().find(|(_, k, _)| *k == "preset") {
            None => Self::toy(),
            Some((_, _, "toy")) => Self::toy(),
            Some((_, _, "full")) => Self::full(),
            Some((line, _, other)) => return Err(config(format!("line {line}: unknown preset {other:?}"))),
        };
        for (line, key, value) in entries {
            let bad = |what: &str| config(format!("line {line}: {key}: {what}"));
            match key {
                "preset" => {}
                "channels" => cfg.channels = parse_triple(value).ok_or_else(|| bad("expected three integers"))?,
                "blocks_per_level" => {
                    cfg.blocks_per_level = parse_triple(value).ok_or_else(|| bad("expected three integers"))?
                }
                "stem_channels" => cfg.stem_channels = value.parse().map_err(|_| bad("expected an integer"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("expected an integer"))?,
                _ => return Err(bad("unknown key")),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_owned(), source })?;
        Self::from_kv_str(&text)
    }
}

fn parse_triple(value: &str) -> Option<[usize; 3]> {
    let parts: Vec<usize> = value.split(',').map(|p| p.trim().parse().ok()).collect::<Option<_>>()?;
    parts.try_into().ok()
}

/// Level drawn uniformly from `seed`, for randomly assigned hard-attention
/// baselines.
pub fn random_level(seed: u64) -> Level {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Level::ALL[rng.random_range(0..3)]
}

/// The three level outputs of one forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLevels {
    pub f1: NodeId,
    pub f2: NodeId,
    pub f3: NodeId,
}

impl FeatureLevels {
    pub fn get(&self, level: Level) -> NodeId {
        match level {
            Level::One => self.f1,
            Level::Two => self.f2,
            Level::Three => self.f3,
        }
    }

    pub fn all(&self) -> [NodeId; 3] {
        [self.f1, self.f2, self.f3]
    }
}

/// Returns the requested level unchanged.
pub fn select_level(levels: &FeatureLevels, level: Level) -> NodeId {
    levels.get(level)
}

#[derive(Clone, Debug)]
pub struct Backbone {
    config: BackboneConfig,
    stem: Conv2d,
    levels: [Vec<Conv2d>; 3],
}

impl Backbone {
    /// Registers all backbone parameters under `backbone.*`, initialised
    /// from `config.seed`.
    pub fn new<T: Real>(config: BackboneConfig, store: &mut ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let stem = Conv2d::new(store, &mut rng, "backbone.stem", 3, config.stem_channels, 7, 2, 3)?;
        let mut cin = config.stem_channels;
        let mut levels: [Vec<Conv2d>; 3] = Default::default();
        for (l, blocks) in levels.iter_mut().enumerate() {
            let cout = config.channels[l];
            for b in 0..config.blocks_per_level[l] {
                let stride = if b == 0 && l > 0 { 2 } else { 1 };
                let name = format!("backbone.level{}.block{b}", l + 1);
                blocks.push(Conv2d::new(store, &mut rng, &name, cin, cout, 3, stride, 1)?);
                cin = cout;
            }
        }
        Ok(Self { config, stem, levels })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, params: &Bindings, image: NodeId) -> Result<FeatureLevels> {
        let shape = g.shape(image).to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(shape_err("backbone", format!("expected [N,3,H,W] image, got {shape:?}")).into());
        }
        if !shape[2].is_multiple_of(16) || !shape[3].is_multiple_of(16) {
            return Err(shape_err("backbone", format!("image extents {}x{} must be divisible by 16", shape[2], shape[3])).into());
        }
        let x = self.stem.forward(g, params, image)?;
        let x = g.relu(x)?;
        let mut x = g.max_pool2d(x, 3, 2, 1)?;
        let mut outs = [x; 3];
        for (l, blocks) in self.levels.iter().enumerate() {
            for conv in blocks {
                x = conv.forward(g, params, x)?;
                x = g.relu(x)?;
            }
            outs[l] = x;
        }
        Ok(FeatureLevels { f1: outs[0], f2: outs[1], f3: outs[2] })
    }
}
