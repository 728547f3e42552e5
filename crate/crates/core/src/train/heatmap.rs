//! Gaussian target heatmaps, the training loss and the localization hit test.

use crate::data::Target;
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Real, Tensor};

pub const DEFAULT_SIGMA: f64 = 1.5;

/// Target centre in grid units (pixels / stride).
fn grid_centre(t: &Target, stride: usize, grid: [usize; 2]) -> Result<(f64, f64)> {
    let (gx, gy) = (t.cx / stride as f64, t.cy / stride as f64);
    if !(gx >= 0.0 && gy >= 0.0 && gx < grid[1] as f64 && gy < grid[0] as f64) {
        return Err(Error::Data(format!("target at ({}, {}) px lies outside the {}x{} grid", t.cx, t.cy, grid[0], grid[1])));
    }
    Ok((gx, gy))
}

/// Cell `(row, col)` containing the target centre.
pub fn target_cell(t: &Target, stride: usize, grid: [usize; 2]) -> Result<(usize, usize)> {
    let (gx, gy) = grid_centre(t, stride, grid)?;
    Ok((gy.floor() as usize, gx.floor() as usize))
}

/// `[K, H, W]` field with a unit-peak Gaussian (in grid cells) at each target
/// on its class channel, evaluated at cell centres. Overlapping bumps of one
/// class combine by maximum.
pub fn render_targets(targets: &[Target], n_classes: usize, grid: [usize; 2], stride: usize, sigma: f64) -> Result<Tensor<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::Config(format!("sigma must be positive, got {sigma}")));
    }
    let [h, w] = grid;
    let mut data = vec![0.0f64; n_classes * h * w];
    for t in targets {
        if t.class >= n_classes {
            return Err(Error::Data(format!("target class {} with only {n_classes} classes", t.class)));
        }
        let (gx, gy) = grid_centre(t, stride, grid)?;
        for i in 0..h {
            for j in 0..w {
                let d2 = (j as f64 + 0.5 - gx).powi(2) + (i as f64 + 0.5 - gy).powi(2);
                let v = (-d2 / (2.0 * sigma * sigma)).exp();
                let cell = &mut data[(t.class * h + i) * w + j];
                *cell = f64::max(*cell, v);
            }
        }
    }
    Ok(Tensor::new(&[n_classes, h, w], data)?)
}

/// Mean squared error between `pred` (`[1, K, H, W]`) and the rendered
/// targets.
pub fn heatmap_loss<T: Real>(g: &mut Graph<T>, pred: NodeId, targets: &[Target], stride: usize, sigma: f64) -> Result<NodeId> {
    let shape = g.shape(pred).to_vec();
    if shape.len() != 4 || shape[0] != 1 {
        return Err(Error::Data(format!("heatmap loss expects a [1,K,H,W] prediction, got {shape:?}")));
    }
    let field = render_targets(targets, shape[1], [shape[2], shape[3]], stride, sigma)?;
    let target = field.reshape(&shape)?.cast::<T>();
    Ok(g.mse(pred, target)?)
}

/// Number of targets whose class channel peaks within one cell (Chebyshev
/// distance) of the target's cell. `heatmap` is `[K, H, W]`; ties in the
/// argmax go to the first cell in row-major order.
pub fn localization_hits<T: Real>(heatmap: &Tensor<T>, targets: &[Target], stride: usize) -> Result<usize> {
    let s = heatmap.shape();
    if s.len() != 3 {
        return Err(Error::Data(format!("expected a [K,H,W] heatmap, got {s:?}")));
    }
    let (k, h, w) = (s[0], s[1], s[2]);
    let mut hits = 0;
    for t in targets {
        if t.class >= k {
            return Err(Error::Data(format!("target class {} with only {k} heatmap channels", t.class)));
        }
        let (ti, tj) = target_cell(t, stride, [h, w])?;
        let plane = &heatmap.data()[t.class * h * w..(t.class + 1) * h * w];
        let mut best = 0;
        for (idx, v) in plane.iter().enumerate() {
            if *v > plane[best] {
                best = idx;
            }
        }
        let (bi, bj) = (best / w, best % w);
        if bi.abs_diff(ti) <= 1 && bj.abs_diff(tj) <= 1 {
            hits += 1;
        }
    }
    Ok(hits)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target(cx: f64, cy: f64, class: usize) -> Target {
        Target { cx, cy, size: 4, class }
    }

    #[test]
    fn bump_peaks_at_centre_cell() {
        let field = render_targets(&[target(26.0, 10.0, 1)], 2, [16, 16], 4, 1.5).unwrap();
        // centre in grid units (6.5, 2.5): exactly on the centre of cell (2, 6)
        assert_eq!(field.at(&[1, 2, 6]), 1.0);
        assert!(field.data()[..256].iter().all(|&v| v == 0.0));
        let expected = (-1.0f64 / (2.0 * 1.5 * 1.5)).exp();
        assert!((field.at(&[1, 2, 7]) - expected).abs() < 1e-15);
    }

    #[test]
    fn outside_grid_is_an_error() {
        assert!(render_targets(&[target(64.0, 3.0, 0)], 1, [16, 16], 4, 1.5).is_err());
        assert!(render_targets(&[target(-0.5, 3.0, 0)], 1, [16, 16], 4, 1.5).is_err());
        assert!(render_targets(&[target(3.0, 3.0, 2)], 2, [16, 16], 4, 1.5).is_err());
    }

    #[test]
    fn perfect_heatmap_scores_every_target() {
        let targets = [target(26.0, 10.0, 1), target(50.0, 50.0, 0), target(3.0, 60.0, 2)];
        let field = render_targets(&targets, 3, [16, 16], 4, 1.5).unwrap();
        assert_eq!(localization_hits(&field, &targets, 4).unwrap(), 3);
    }

    #[test]
    fn zero_heatmap_hits_only_near_origin() {
        let zeros = Tensor::<f64>::zeros(&[1, 16, 16]);
        assert_eq!(localization_hits(&zeros, &[target(30.0, 30.0, 0)], 4).unwrap(), 0);
        assert_eq!(localization_hits(&zeros, &[target(6.0, 6.0, 0)], 4).unwrap(), 1);
    }
}
