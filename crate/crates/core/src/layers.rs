//! Parameterised conv and fc layers shared by the backbone, fusion and head.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::{Bindings, Graph, NodeId, ParamId, ParamStore, Real, Result, Tensor};

/// Kaiming-normal weights (`std = sqrt(2 / fan_in)`).
pub(crate) fn kaiming<T: Real, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    Tensor::from_fn(shape, |_| T::of(normal.sample(rng)))
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            kaiming(rng, &[cout, cin, kernel, kernel], cin * kernel * kernel),
        )?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[cout]))?;
        Ok(Self { weight, bias, stride, padding })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bindings, x: NodeId) -> Result<NodeId> {
        g.conv2d(x, p.node(self.weight), Some(p.node(self.bias)), self.stride, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub(crate) fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        din: usize,
        dout: usize,
    ) -> Result<Self> {
        let weight = store.add(format!("{name}.weight"), kaiming(rng, &[dout, din], din))?;
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[dout]))?;
        Ok(Self { weight, bias })
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, p: &Bindings, x: NodeId) -> Result<NodeId> {
        g.linear(x, p.node(self.weight), Some(p.node(self.bias)))
    }
}
