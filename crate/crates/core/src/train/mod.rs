//! Heatmap-localization training harness for comparing fusion strategies.
//!
//! One image per step, momentum SGD on a piecewise-constant schedule. Loss
//! and fusion weights are logged before each parameter update, so the first
//! logged loss is that of the initial weights.

mod heatmap;
mod model;
mod schedule;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use heatmap::{heatmap_loss, localization_hits, render_targets, target_cell, DEFAULT_SIGMA};
pub use model::{build_head, Model, ModelConfig, ModelOutput, HEATMAP_STRIDE};
pub use schedule::{LrSchedule, LrSegment, BASE_LR};

use crate::backbone::Level;
use crate::data::SyntheticSample;
use crate::error::{Error, Result};
use crate::fusion::{AttentionWeights, FusionMode};
use crate::tensor::{Graph, NodeId, ParamStore, Real, SgdMomentum, TensorError};

pub const DEFAULT_MOMENTUM: f64 = 0.9;

/// Replace the template with `template` from zero-based `step` on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSwitch {
    pub step: usize,
    pub template: Level,
}

impl std::str::FromStr for TemplateSwitch {
    type Err = Error;

    /// `N@STEP`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("template switch {s:?}: expected TEMPLATE@STEP"));
        let (t, step) = s.split_once('@').ok_or_else(bad)?;
        let template = Level::try_from(t.trim().parse::<u8>().map_err(|_| bad())?)?;
        Ok(Self { step: step.trim().parse().map_err(|_| bad())?, template })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub fusion: FusionMode,
    pub switch_template_at: Option<TemplateSwitch>,
    pub lr_schedule: LrSchedule,
    pub momentum: f64,
    pub steps: usize,
    pub seed: u64,
    /// Gaussian target width in heatmap cells.
    pub sigma: f64,
    pub model: ModelConfig,
}

impl TrainConfig {
    /// Default schedule scaled to `steps`, momentum 0.9, toy model.
    pub fn new(fusion: FusionMode, steps: usize, seed: u64) -> Self {
        Self {
            fusion,
            switch_template_at: None,
            lr_schedule: LrSchedule::scaled(steps),
            momentum: DEFAULT_MOMENTUM,
            steps,
            seed,
            sigma: DEFAULT_SIGMA,
            model: ModelConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lr_schedule.validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if self.switch_template_at.is_some() && self.fusion.template().is_none() {
            return Err(Error::Config(format!("a template switch needs mrae fusion, not {}", self.fusion)));
        }
        Ok(())
    }

    /// Fusion mode in effect at zero-based `step`.
    pub fn mode_at(&self, step: usize) -> FusionMode {
        match self.switch_template_at {
            Some(sw) if step >= sw.step && self.fusion.template().is_some() => FusionMode::Mrae { template: sw.template },
            _ => self.fusion,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Fraction of targets whose class channel peaks within one cell of
    /// the target cell.
    pub localization_score: f64,
    pub hits: usize,
    pub targets: usize,
    pub mean_weights: [f64; 3],
}

/// Deterministic record of a run. Wall-clock timings live in
/// [`TrainOutcome::ms_per_step`] so that reports of identical runs compare
/// equal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub fusion: String,
    pub losses: Vec<f64>,
    pub weights: Vec<AttentionWeights>,
    pub lrs: Vec<f64>,
    /// Mean loss over the last tenth of the run (at least one step).
    pub final_loss: Option<f64>,
    pub evaluation: Option<Evaluation>,
}

impl TrainReport {
    fn new(fusion: String) -> Self {
        Self { fusion, losses: Vec::new(), weights: Vec::new(), lrs: Vec::new(), final_loss: None, evaluation: None }
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    fn finish(&mut self) {
        let n = self.losses.len();
        if n > 0 {
            let tail = (n / 10).max(1);
            self.final_loss = Some(self.losses[n - tail..].iter().sum::<f64>() / tail as f64);
        }
    }
}

/// Step-by-step training state.
pub struct Trainer<'d, T: Real = f64> {
    config: TrainConfig,
    model: Model<T>,
    optimizer: SgdMomentum<T>,
    data: &'d [SyntheticSample],
    step: usize,
    report: TrainReport,
    ms_per_step: Vec<f64>,
}

fn image_node<T: Real>(g: &mut Graph<T>, sample: &SyntheticSample) -> Result<NodeId> {
    let mut shape = vec![1];
    shape.extend_from_slice(sample.image.shape());
    Ok(g.input(sample.image.clone().reshape(&shape)?.cast()))
}

impl<'d, T: Real> Trainer<'d, T> {
    pub fn new(config: TrainConfig, data: &'d [SyntheticSample]) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let model = Model::new(&config.model, config.seed)?;
        let optimizer = SgdMomentum::new(T::of(config.momentum))?;
        let report = TrainReport::new(config.fusion.to_string());
        Ok(Self { config, model, optimizer, data, step: 0, report, ms_per_step: Vec::new() })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.model.params
    }

    pub fn optimizer(&self) -> &SgdMomentum<T> {
        &self.optimizer
    }

    /// Steps taken so far.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Mode the next step will use.
    pub fn current_mode(&self) -> FusionMode {
        self.config.mode_at(self.step)
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    /// One forward/backward/update on the next sample; returns its loss.
    pub fn step(&mut self) -> Result<f64> {
        let started = Instant::now();
        let step = self.step;
        let mode = self.current_mode();
        let sample = &self.data[step % self.data.len()];

        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g);
        let image = image_node(&mut g, sample)?;
        let nonfinite = |e: Error, params: &ParamStore<T>| match e {
            Error::Tensor(TensorError::NonFinite { .. }) => Error::NonFiniteLoss { step, norms: format_norms(params) },
            other => other,
        };
        let out = self.model.forward(&mut g, &p, image, mode).map_err(|e| nonfinite(e, &self.model.params))?;
        let loss = heatmap_loss(&mut g, out.heatmap, &sample.targets, HEATMAP_STRIDE, self.config.sigma)
            .map_err(|e| nonfinite(e, &self.model.params))?;
        let loss_value = g.value(loss).item().as_f64();
        if !loss_value.is_finite() {
            return Err(Error::NonFiniteLoss { step, norms: format_norms(&self.model.params) });
        }
        let weights = AttentionWeights::from_node(&g, out.weights)?;
        g.backward(loss)?;
        let grads = self.model.params.gradients(&g, &p);
        let lr = self.config.lr_schedule.lr_at(step);
        self.optimizer.step(&mut self.model.params, &grads, T::of(lr))?;

        self.report.losses.push(loss_value);
        self.report.weights.push(weights);
        self.report.lrs.push(lr);
        self.ms_per_step.push(started.elapsed().as_secs_f64() * 1e3);
        self.step += 1;
        Ok(loss_value)
    }

    /// Runs the remaining configured steps.
    pub fn run(&mut self) -> Result<()> {
        while self.step < self.config.steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn finish(mut self, validation: Option<&[SyntheticSample]>) -> Result<TrainOutcome<T>> {
        self.report.finish();
        if let Some(val) = validation {
            let mode = self.config.mode_at(self.step.saturating_sub(1));
            self.report.evaluation = Some(evaluate(&self.model, val, mode)?);
        }
        Ok(TrainOutcome { report: self.report, model: self.model, ms_per_step: self.ms_per_step })
    }
}

fn format_norms<T: Real>(params: &ParamStore<T>) -> String {
    params.norms().iter().map(|(n, v)| format!("{n}={v:.4e}")).collect::<Vec<_>>().join(", ")
}

pub struct TrainOutcome<T: Real = f64> {
    pub report: TrainReport,
    pub model: Model<T>,
    pub ms_per_step: Vec<f64>,
}

impl<T: Real> TrainOutcome<T> {
    pub fn mean_ms_per_step(&self) -> f64 {
        if self.ms_per_step.is_empty() {
            0.0
        } else {
            self.ms_per_step.iter().sum::<f64>() / self.ms_per_step.len() as f64
        }
    }
}

/// Trains for `config.steps` and, if given, scores the result on
/// `validation` with the mode in effect at the end of the run.
pub fn train<T: Real>(
    config: &TrainConfig,
    data: &[SyntheticSample],
    validation: Option<&[SyntheticSample]>,
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::<T>::new(config.clone(), data)?;
    trainer.run()?;
    trainer.finish(validation)
}

/// Forward pass for one sample: `([K, H, W] heatmap, weights)`.
pub fn predict<T: Real>(model: &Model<T>, sample: &SyntheticSample, mode: FusionMode) -> Result<(crate::tensor::Tensor<T>, AttentionWeights)> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let image = image_node(&mut g, sample)?;
    let out = model.forward(&mut g, &p, image, mode)?;
    let heat = g.value(out.heatmap).clone();
    let s = heat.shape().to_vec();
    Ok((heat.reshape(&s[1..])?, AttentionWeights::from_node(&g, out.weights)?))
}

/// Localization score and mean fusion weights over `data`. Samples are
/// scored in parallel and merged in order.
pub fn evaluate<T: Real>(model: &Model<T>, data: &[SyntheticSample], mode: FusionMode) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let per_sample: Vec<(usize, usize, AttentionWeights)> = data
        .par_iter()
        .map(|sample| {
            let (heat, w) = predict(model, sample, mode)?;
            Ok((localization_hits(&heat, &sample.targets, HEATMAP_STRIDE)?, sample.targets.len(), w))
        })
        .collect::<Result<_>>()?;
    let (mut hits, mut targets, mut sum) = (0, 0, [0.0; 3]);
    for (h, t, w) in &per_sample {
        hits += h;
        targets += t;
        for (s, v) in sum.iter_mut().zip(w.0) {
            *s += v;
        }
    }
    if targets == 0 {
        return Err(Error::Data("evaluation set has no targets".into()));
    }
    Ok(Evaluation {
        localization_score: hits as f64 / targets as f64,
        hits,
        targets,
        mean_weights: sum.map(|s| s / data.len() as f64),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn switch_parses() {
        let sw: TemplateSwitch = "2@500".parse().unwrap();
        assert_eq!(sw, TemplateSwitch { step: 500, template: Level::Two });
        assert!("2".parse::<TemplateSwitch>().is_err());
        assert!("4@10".parse::<TemplateSwitch>().is_err());
    }

    #[test]
    fn switch_requires_mrae() {
        let mut cfg = TrainConfig::new(FusionMode::Soft, 10, 0);
        cfg.switch_template_at = Some(TemplateSwitch { step: 5, template: Level::Two });
        assert!(cfg.validate().is_err());
        cfg.fusion = FusionMode::Mrae { template: Level::One };
        cfg.validate().unwrap();
        assert_eq!(cfg.mode_at(4), FusionMode::Mrae { template: Level::One });
        assert_eq!(cfg.mode_at(5), FusionMode::Mrae { template: Level::Two });
    }

    #[test]
    fn final_loss_averages_last_tenth() {
        let mut r = TrainReport::new("soft".into());
        r.losses = (1..=20).map(f64::from).collect();
        r.finish();
        assert_eq!(r.final_loss, Some(19.5));
        let mut short = TrainReport::new("soft".into());
        short.losses = vec![3.0, 4.0];
        short.finish();
        assert_eq!(short.final_loss, Some(4.0));
    }
}
