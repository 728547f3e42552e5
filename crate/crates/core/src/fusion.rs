//! Attention-weighted fusion of the three backbone levels.
//!
//! Every strategy produces three per-level weights `a` (non-negative, summing
//! to one) and an attention map `A = a1*g(F1) + a2*g(F2) + a3*g(F3)`, where
//! `g` lifts each level to the channel width of level 3 with a 1x1 conv and
//! upsamples it to the resolution of level 1.
//!
//! - **Soft attention**: each level's logit is the global max of a 1x1 conv
//!   to a single channel; the weights are the softmax of the three logits.
//! - **Template attention (MRAE)**: each level is embedded by a 1x1 conv,
//!   global average pool and fc layer. The template level's logit is fixed
//!   at 1; every other level's logit is the cosine similarity between its
//!   embedding and the template embedding.
//! - **Hard attention**: a single level with one-hot weights.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, FeatureLevels, Level};
use crate::error::{config, Error, Result};
use crate::layers::{Conv2d, Linear};
use crate::tensor::{shape_err, Bindings, Graph, NodeId, ParamStore, Real, Tensor, UpsampleMode};

/// Per-level fusion weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights(pub [f64; 3]);

impl AttentionWeights {
    /// Accepted deviation of the weight sum from 1 (covers `f32` runs).
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(a: [f64; 3]) -> Result<Self> {
        if a.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(config(format!("attention weights {a:?} outside [0, 1]")));
        }
        let total: f64 = a.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(config(format!("attention weights {a:?} sum to {total}")));
        }
        Ok(Self(a))
    }

    pub fn uniform() -> Self {
        Self([1.0 / 3.0; 3])
    }

    pub fn one_hot(level: Level) -> Self {
        let mut a = [0.0; 3];
        a[level.index()] = 1.0;
        Self(a)
    }

    pub fn get(&self, level: Level) -> f64 {
        self.0[level.index()]
    }

    /// Reads a `[3]` weight node from a graph.
    pub fn from_node<T: Real>(g: &Graph<T>, node: NodeId) -> Result<Self> {
        let v = g.value(node);
        if v.shape() != [3] {
            return Err(shape_err("attention_weights", format!("expected [3], got {:?}", v.shape())).into());
        }
        let d = v.data();
        Self::new([d[0].as_f64(), d[1].as_f64(), d[2].as_f64()])
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_f64(&[3], &self.0).expect("three weights")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FusionMode {
    Soft,
    Mrae { template: Level },
    Hard { level: Level },
}

impl FusionMode {
    pub fn name(&self) -> &'static str {
        match self {
            FusionMode::Soft => "soft",
            FusionMode::Mrae { .. } => "mrae",
            FusionMode::Hard { .. } => "hard",
        }
    }

    pub fn template(&self) -> Option<Level> {
        match self {
            FusionMode::Mrae { template } => Some(*template),
            _ => None,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMode::Soft => write!(f, "soft"),
            FusionMode::Mrae { template } => write!(f, "mrae-t{}", template.number()),
            FusionMode::Hard { level } => write!(f, "hard-c{}", level.number()),
        }
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    /// Parses `soft`, `mrae-t<N>` or `hard-c<N>`.
    fn from_str(s: &str) -> Result<Self> {
        let level = |digits: &str| -> Result<Level> {
            Level::try_from(digits.parse::<u8>().map_err(|_| config(format!("bad level in {s:?}")))?)
        };
        match s {
            "soft" => Ok(FusionMode::Soft),
            _ if s.starts_with("mrae-t") => Ok(FusionMode::Mrae { template: level(&s[6..])? }),
            _ if s.starts_with("hard-c") => Ok(FusionMode::Hard { level: level(&s[6..])? }),
            _ => Err(config(format!("unknown fusion mode {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub d_embed: usize,
    pub upsample: UpsampleMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { d_embed: 32, upsample: UpsampleMode::Bilinear }
    }
}

/// Parameters of all three fusion strategies for one backbone geometry.
#[derive(Clone, Debug)]
pub struct Fusion {
    config: FusionConfig,
    channels: [usize; 3],
    /// 1x1 conv to one channel per level (soft attention logits).
    soft: [Conv2d; 3],
    /// 1x1 channel lift to `c3` for levels 1 and 2; level 3 passes through.
    align: [Conv2d; 2],
    embed_conv: [Conv2d; 3],
    embed_fc: [Linear; 3],
}

impl Fusion {
    /// Registers parameters under `fusion.*`.
    pub fn new<T: Real>(
        backbone: &BackboneConfig,
        config: FusionConfig,
        store: &mut ParamStore<T>,
        seed: u64,
    ) -> Result<Self> {
        if config.d_embed == 0 {
            return Err(Error::Config("d_embed must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = backbone.channels;
        let d = config.d_embed;
        let soft = [0, 1, 2].map(|l| Conv2d::new(store, &mut rng, &format!("fusion.soft{}", l + 1), c[l], 1, 1, 1, 0));
        let align = [0, 1].map(|l| Conv2d::new(store, &mut rng, &format!("fusion.align{}", l + 1), c[l], c[2], 1, 1, 0));
        let embed_conv = [0, 1, 2].map(|l| Conv2d::new(store, &mut rng, &format!("fusion.embed{}.conv", l + 1), c[l], d, 1, 1, 0));
        let embed_fc = [0, 1, 2].map(|l| Linear::new(store, &mut rng, &format!("fusion.embed{}.fc", l + 1), d, d));
        let [s1, s2, s3] = soft;
        let [a1, a2] = align;
        let [e1, e2, e3] = embed_conv;
        let [f1, f2, f3] = embed_fc;
        Ok(Self {
            config,
            channels: c,
            soft: [s1?, s2?, s3?],
            align: [a1?, a2?],
            embed_conv: [e1?, e2?, e3?],
            embed_fc: [f1?, f2?, f3?],
        })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    /// Channel count of the attention map.
    pub fn out_channels(&self) -> usize {
        self.channels[2]
    }

    fn check_levels<T: Real>(&self, g: &Graph<T>, levels: &FeatureLevels) -> Result<()> {
        let s1 = g.shape(levels.f1).to_vec();
        for level in Level::ALL {
            let s = g.shape(levels.get(level));
            let f = level.upsample_factor();
            let ok = s.len() == 4
                && s1.len() == 4
                && s[0] == s1[0]
                && s[1] == self.channels[level.index()]
                && s[2] * f == s1[2]
                && s[3] * f == s1[3];
            if !ok {
                return Err(shape_err(
                    "fusion",
                    format!("level {level} has shape {s:?}; level 1 is {s1:?}, channels {:?}", self.channels),
                )
                .into());
            }
        }
        Ok(())
    }

    /// Soft attention logits `[3]`: 1x1 conv to one channel, global max pool,
    /// mean over the batch.
    pub fn soft_attention_logits<T: Real>(&self, g: &mut Graph<T>, p: &Bindings, levels: &FeatureLevels) -> Result<NodeId> {
        self.check_levels(g, levels)?;
        let mut logits = [levels.f1; 3];
        for level in Level::ALL {
            let i = level.index();
            let y = self.soft[i].forward(g, p, levels.get(level))?;
            let m = g.global_max_pool(y)?;
            logits[i] = g.mean(m)?;
        }
        Ok(g.stack(&logits)?)
    }

    /// Softmax of the soft attention logits.
    pub fn soft_attention_weights<T: Real>(&self, g: &mut Graph<T>, p: &Bindings, levels: &FeatureLevels) -> Result<NodeId> {
        let logits = self.soft_attention_logits(g, p, levels)?;
        Ok(g.softmax(logits)?)
    }

    /// Per-level embeddings `[N, d_embed]`: 1x1 conv, global average pool, fc.
    pub fn embeddings<T: Real>(&self, g: &mut Graph<T>, p: &Bindings, levels: &FeatureLevels) -> Result<[NodeId; 3]> {
        self.check_levels(g, levels)?;
        let mut out = [levels.f1; 3];
        for level in Level::ALL {
            let i = level.index();
            let y = self.embed_conv[i].forward(g, p, levels.get(level))?;
            let v = g.global_avg_pool(y)?;
            out[i] = self.embed_fc[i].forward(g, p, v)?;
        }
        Ok(out)
    }

    /// Template attention weights.
    pub fn mrae_weights<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bindings,
        levels: &FeatureLevels,
        template: Level,
    ) -> Result<NodeId> {
        let emb = self.embeddings(g, p, levels)?;
        mrae_weights_from_embeddings(g, emb, template)
    }

    /// Channel-aligned, upsampled copy of one level, `[N, c3, H1, W1]`.
    pub fn align_level<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bindings,
        levels: &FeatureLevels,
        level: Level,
    ) -> Result<NodeId> {
        self.check_levels(g, levels)?;
        let x = levels.get(level);
        let lifted = match self.align.get(level.index()) {
            Some(conv) => conv.forward(g, p, x)?,
            None => x,
        };
        let out = match level.upsample_factor() {
            1 => lifted,
            f => g.upsample(lifted, f, self.config.upsample)?,
        };
        let (s1, so) = (g.shape(levels.f1), g.shape(out));
        if so[1] != self.channels[2] || so[2..] != s1[2..] {
            return Err(shape_err("align_and_upsample", format!("aligned {level} has shape {so:?}")).into());
        }
        Ok(out)
    }

    pub fn align_and_upsample<T: Real>(&self, g: &mut Graph<T>, p: &Bindings, levels: &FeatureLevels) -> Result<[NodeId; 3]> {
        Ok([
            self.align_level(g, p, levels, Level::One)?,
            self.align_level(g, p, levels, Level::Two)?,
            self.align_level(g, p, levels, Level::Three)?,
        ])
    }

    /// Weighted sum of the aligned levels; `weights` is a `[3]` node.
    pub fn fuse<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bindings,
        levels: &FeatureLevels,
        weights: NodeId,
    ) -> Result<NodeId> {
        let aligned = self.align_and_upsample(g, p, levels)?;
        fuse_aligned(g, aligned, weights)
    }

    /// Single-level attention map. Equal to [`Fusion::fuse`] with one-hot
    /// weights, without evaluating the other two levels.
    pub fn hard_attention<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bindings,
        levels: &FeatureLevels,
        level: Level,
    ) -> Result<NodeId> {
        self.align_level(g, p, levels, level)
    }

    /// Runs one strategy; returns `(attention map, weights [3])`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &Bindings,
        levels: &FeatureLevels,
        mode: FusionMode,
    ) -> Result<(NodeId, NodeId)> {
        match mode {
            FusionMode::Soft => {
                let w = self.soft_attention_weights(g, p, levels)?;
                Ok((self.fuse(g, p, levels, w)?, w))
            }
            FusionMode::Mrae { template } => {
                let w = self.mrae_weights(g, p, levels, template)?;
                Ok((self.fuse(g, p, levels, w)?, w))
            }
            FusionMode::Hard { level } => {
                let w = g.input(AttentionWeights::one_hot(level).to_tensor());
                Ok((self.hard_attention(g, p, levels, level)?, w))
            }
        }
    }
}

/// Softmax over `{D_1, D_2, D_3}` with the template logit fixed at 1 and
/// `D_i = cos(v_template, v_i)` (averaged over the batch) otherwise.
pub fn mrae_weights_from_embeddings<T: Real>(g: &mut Graph<T>, embeddings: [NodeId; 3], template: Level) -> Result<NodeId> {
    let logits = mrae_logits(g, embeddings, template)?;
    Ok(g.softmax(logits)?)
}

/// The `[3]` logit vector fed to the template-attention softmax.
pub fn mrae_logits<T: Real>(g: &mut Graph<T>, embeddings: [NodeId; 3], template: Level) -> Result<NodeId> {
    let vt = embeddings[template.index()];
    let mut logits = [vt; 3];
    for level in Level::ALL {
        let i = level.index();
        logits[i] = if level == template {
            g.input(Tensor::scalar(T::one()))
        } else {
            let d = g.cosine_similarity(vt, embeddings[i])?;
            g.mean(d)?
        };
    }
    Ok(g.stack(&logits)?)
}

/// `sum_i weights[i] * aligned[i]`.
pub fn fuse_aligned<T: Real>(g: &mut Graph<T>, aligned: [NodeId; 3], weights: NodeId) -> Result<NodeId> {
    if g.shape(weights) != [3] {
        return Err(shape_err("fuse", format!("weights must be [3], got {:?}", g.shape(weights))).into());
    }
    let mut acc: Option<NodeId> = None;
    for (i, &map) in aligned.iter().enumerate() {
        let a = g.index(weights, i)?;
        let term = g.scale(map, a)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => g.add(prev, term)?,
        });
    }
    Ok(acc.expect("three terms"))
}
