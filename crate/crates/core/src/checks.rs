//! Seeded finite-difference suite over every differentiable op and the
//! complete fusion paths.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{BackboneConfig, Level};
use crate::data::Target;
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, FusionMode};
use crate::tensor::gradcheck::{check_gradients, GradCheckConfig, GradCheckReport};
use crate::tensor::{Bindings, Graph, NodeId, Tensor, TensorError, UpsampleMode};
use crate::train::{heatmap_loss, Model, ModelConfig, HEATMAP_STRIDE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub name: String,
    pub seed: u64,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Weighted sum of `y` against a fixed random direction.
fn project(g: &mut Graph<f64>, y: NodeId, seed: u64) -> crate::tensor::Result<NodeId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let dir = rand_tensor(&mut rng, g.shape(y));
    let d = g.input(dir);
    let p = g.mul(y, d)?;
    g.sum(p)
}

fn lower(e: Error) -> TensorError {
    match e {
        Error::Tensor(t) => t,
        other => TensorError::Backward(other.to_string()),
    }
}

fn entry(name: &str, seed: u64, report: GradCheckReport) -> SuiteEntry {
    SuiteEntry {
        name: name.to_string(),
        seed,
        coords_checked: report.inputs.iter().map(|c| c.coords_checked).sum(),
        max_rel_error: report.max_rel_error(),
        passed: report.passed(),
    }
}

/// Geometry small enough for exhaustive-ish checks of the full paths.
pub fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig { channels: [4, 6, 8], blocks_per_level: [1, 1, 1], stem_channels: 3, seed: 0 },
        fusion: FusionConfig { d_embed: 5, upsample: UpsampleMode::Bilinear },
        n_classes: 2,
    }
}

/// Per-coordinate sample size for the full model paths.
pub const PATH_COORDS: usize = 12;

/// Runs every check for one seed.
pub fn gradient_suite(seed: u64, eps: f64, tol: f64) -> Result<Vec<SuiteEntry>> {
    let cfg = GradCheckConfig { eps, tol, max_coords: None, seed };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut op = |name: &str, inputs: Vec<Tensor<f64>>, build: &dyn Fn(&mut Graph<f64>, &[NodeId]) -> crate::tensor::Result<NodeId>| -> Result<()> {
        let report = check_gradients(&inputs, build, &cfg)?;
        out.push(entry(name, seed, report));
        Ok(())
    };

    op(
        "conv2d",
        vec![rand_tensor(&mut rng, &[2, 3, 6, 6]), rand_tensor(&mut rng, &[4, 3, 3, 3]), rand_tensor(&mut rng, &[4])],
        &|g, x| {
            let y = g.conv2d(x[0], x[1], Some(x[2]), 2, 1)?;
            project(g, y, seed)
        },
    )?;
    let img = rand_tensor(&mut rng, &[1, 2, 6, 6]);
    op("max_pool2d", vec![img.clone()], &|g, x| {
        let y = g.max_pool2d(x[0], 3, 2, 1)?;
        project(g, y, seed)
    })?;
    op("global_max_pool", vec![img.clone()], &|g, x| {
        let y = g.global_max_pool(x[0])?;
        project(g, y, seed)
    })?;
    op("global_avg_pool", vec![img], &|g, x| {
        let y = g.global_avg_pool(x[0])?;
        project(g, y, seed)
    })?;
    op(
        "linear",
        vec![rand_tensor(&mut rng, &[3, 5]), rand_tensor(&mut rng, &[4, 5]), rand_tensor(&mut rng, &[4])],
        &|g, x| {
            let y = g.linear(x[0], x[1], Some(x[2]))?;
            project(g, y, seed)
        },
    )?;
    let small = rand_tensor(&mut rng, &[1, 2, 3, 3]);
    op("relu", vec![small.clone()], &|g, x| {
        let y = g.relu(x[0])?;
        project(g, y, seed)
    })?;
    for (mode, mode_name) in [(UpsampleMode::Nearest, "nearest"), (UpsampleMode::Bilinear, "bilinear")] {
        for factor in [2, 4] {
            op(&format!("upsample_{mode_name}_x{factor}"), vec![small.clone()], &|g, x| {
                let y = g.upsample(x[0], factor, mode)?;
                project(g, y, seed)
            })?;
        }
    }
    op("softmax", vec![rand_tensor(&mut rng, &[3])], &|g, x| {
        let y = g.softmax(x[0])?;
        project(g, y, seed)
    })?;
    op("cosine_similarity", vec![rand_tensor(&mut rng, &[2, 6]), rand_tensor(&mut rng, &[2, 6])], &|g, x| {
        let y = g.cosine_similarity(x[0], x[1])?;
        project(g, y, seed)
    })?;
    op(
        "add_mul_scale_reshape_index_mean_stack_sum",
        vec![rand_tensor(&mut rng, &[2, 3]), rand_tensor(&mut rng, &[2, 3]), rand_tensor(&mut rng, &[])],
        &|g, x| {
            let a = g.add(x[0], x[1])?;
            let m = g.mul(a, x[0])?;
            let s = g.scale(m, x[2])?;
            let r = g.reshape(s, &[6])?;
            let i0 = g.index(r, 1)?;
            let i1 = g.index(r, 4)?;
            let mean = g.mean(r)?;
            let st = g.stack(&[i0, i1, mean])?;
            project(g, st, seed)
        },
    )?;
    let target = rand_tensor(&mut rng, &[2, 3]);
    op("mse", vec![rand_tensor(&mut rng, &[2, 3])], &|g, x| g.mse(x[0], target.clone()))?;

    let modes = [
        FusionMode::Soft,
        FusionMode::Mrae { template: Level::One },
        FusionMode::Mrae { template: Level::Two },
        FusionMode::Mrae { template: Level::Three },
    ];
    for mode in modes {
        out.push(path_check(mode, seed, eps, tol)?);
    }
    Ok(out)
}

/// Backbone, fusion, head and heatmap loss on a 16x16 image.
fn path_check(mode: FusionMode, seed: u64, eps: f64, tol: f64) -> Result<SuiteEntry> {
    let model = Model::<f64>::new(&tiny_model_config(), seed)?;
    let inputs: Vec<Tensor<f64>> = model.params.iter().map(|p| p.tensor.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1a9e);
    let image = Tensor::from_fn(&[1, 3, 16, 16], |_| rng.random_range(0.0..1.0));
    let targets = [
        Target { cx: rng.random_range(0.0..16.0), cy: rng.random_range(0.0..16.0), size: 3, class: 0 },
        Target { cx: rng.random_range(0.0..16.0), cy: rng.random_range(0.0..16.0), size: 3, class: 1 },
    ];
    let cfg = GradCheckConfig { eps, tol, max_coords: Some(PATH_COORDS), seed };
    let report = check_gradients(
        &inputs,
        |g, ids| {
            let p = Bindings::from_nodes(ids.to_vec());
            let x = g.input(image.clone());
            let out = model.forward(g, &p, x, mode).map_err(lower)?;
            heatmap_loss(g, out.heatmap, &targets, HEATMAP_STRIDE, 1.5).map_err(lower)
        },
        &cfg,
    )?;
    Ok(entry(&format!("path_{mode}"), seed, report))
}
