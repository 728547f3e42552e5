use std::collections::HashMap;

use super::{invalid, Graph, NodeId, Real, Result, Tensor};

/// A named trainable tensor, e.g. `fusion.align1.weight`.
#[derive(Clone, Debug)]
pub struct Parameter<T: Real = f64> {
    pub name: String,
    pub tensor: Tensor<T>,
}

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T: Real = f64> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

/// Graph nodes holding one forward pass's copy of every parameter.
#[derive(Clone, Debug)]
pub struct Bindings(Vec<NodeId>);

impl Bindings {
    /// Wraps nodes already on a graph, one per parameter in store order.
    pub fn from_nodes(nodes: Vec<NodeId>) -> Self {
        Self(nodes)
    }

    pub fn node(&self, id: ParamId) -> NodeId {
        self.0[id.0]
    }
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(invalid("param_store", format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, tensor });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter<T>> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    /// Replaces a parameter's values; the shape must not change.
    pub fn set(&mut self, id: ParamId, tensor: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.tensor.shape() != tensor.shape() {
            return Err(invalid(
                "param_store",
                format!("{} has shape {:?}, got {:?}", p.name, p.tensor.shape(), tensor.shape()),
            ));
        }
        p.tensor = tensor;
        Ok(())
    }

    pub(crate) fn tensor_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.params[index].tensor
    }

    /// Copies every parameter into `graph` as a differentiable leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> Bindings {
        Bindings(self.params.iter().map(|p| graph.param(p.tensor.clone())).collect())
    }

    /// Gradients in store order after `graph.backward`; parameters the loss
    /// never reached get zeros.
    pub fn gradients(&self, graph: &Graph<T>, bindings: &Bindings) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .zip(&bindings.0)
            .map(|(p, &node)| graph.grad(node).cloned().unwrap_or_else(|| Tensor::zeros(p.tensor.shape())))
            .collect()
    }

    /// L2 norm of each parameter, keyed by name.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.params.iter().map(|p| (p.name.clone(), p.tensor.norm().as_f64())).collect()
    }
}
