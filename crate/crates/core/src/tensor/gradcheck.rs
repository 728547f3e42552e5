//! Central finite-difference gradient checking.
//!
//! The numeric side only ever evaluates the forward pass, so it is
//! independent of every backward rule it checks.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{invalid, Graph, NodeId, Result, Tensor};

/// Gradient norms below this are compared absolutely rather than relatively.
pub const NORM_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub eps: f64,
    /// Largest accepted relative error.
    pub tol: f64,
    /// Check at most this many coordinates per input, chosen by `seed`.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { eps: 1e-5, tol: 1e-4, max_coords: None, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct InputCheck {
    pub input: usize,
    pub coords_checked: usize,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub inputs: Vec<InputCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.inputs.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }
}

/// Relative error `|a - n| / max(|a|, |n|, NORM_FLOOR)` in the L2 norm.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
    diff / na.max(nn).max(NORM_FLOOR)
}

/// Compares reverse-mode gradients of `build` against central differences.
///
/// `build` receives a fresh graph and one differentiable node per entry of
/// `inputs`, and returns a scalar loss node.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], build: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    if !(cfg.eps > 0.0) || !cfg.eps.is_finite() {
        return Err(invalid("gradcheck", format!("step {} must be positive and finite", cfg.eps)));
    }
    let evaluate = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<_> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        Ok(g.value(loss).item())
    };

    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = ids
        .iter()
        .zip(inputs)
        .map(|(&id, t)| g.grad(id).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut values = inputs.to_vec();
    let mut report = GradCheckReport { inputs: Vec::new(), tol: cfg.tol };
    for (k, input) in inputs.iter().enumerate() {
        let numel = input.numel();
        let coords: Vec<usize> = match cfg.max_coords {
            Some(m) if m < numel => {
                let mut picked = sample(&mut rng, numel, m).into_vec();
                picked.sort_unstable();
                picked
            }
            _ => (0..numel).collect(),
        };
        let mut numeric = Vec::with_capacity(coords.len());
        for &c in &coords {
            let original = input.data()[c];
            values[k].data_mut()[c] = original + cfg.eps;
            let plus = evaluate(&values)?;
            values[k].data_mut()[c] = original - cfg.eps;
            let minus = evaluate(&values)?;
            values[k].data_mut()[c] = original;
            numeric.push((plus - minus) / (2.0 * cfg.eps));
        }
        let picked: Vec<f64> = coords.iter().map(|&c| analytic[k].data()[c]).collect();
        report.inputs.push(InputCheck {
            input: k,
            coords_checked: coords.len(),
            rel_error: relative_error(&picked, &numeric),
        });
    }
    Ok(report)
}
