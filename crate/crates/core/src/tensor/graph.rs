use super::kernels::{self, ConvGeom, PoolGeom};
use super::{invalid, shape_err, Real, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpsampleMode {
    Nearest,
    #[default]
    Bilinear,
}

enum Op<T> {
    Leaf,
    Conv2d { input: NodeId, weight: NodeId, bias: Option<NodeId>, geom: ConvGeom },
    MaxPool { input: NodeId, argmax: Vec<usize> },
    GlobalMax { input: NodeId, argmax: Vec<usize> },
    GlobalAvg { input: NodeId, area: usize },
    Linear { input: NodeId, weight: NodeId, bias: Option<NodeId> },
    Upsample { input: NodeId, factor: usize, mode: UpsampleMode },
    Relu { input: NodeId },
    Softmax { input: NodeId },
    Cosine { u: NodeId, v: NodeId, eps: T },
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { x: NodeId, s: NodeId },
    Sum { x: NodeId },
    Mean { x: NodeId },
    Stack { items: Vec<NodeId> },
    Index { x: NodeId, index: usize },
    Reshape { x: NodeId },
    Mse { pred: NodeId, target: Tensor<T> },
}

struct Node<T> {
    value: Tensor<T>,
    requires_grad: bool,
    op: Op<T>,
}

/// Records a computation so it can be differentiated in reverse.
///
/// Nodes are appended in evaluation order, so iterating them backwards is a
/// valid topological order for the backward pass. A graph is single-use for
/// differentiation: a second [`Graph::backward`] needs [`Graph::reset_grads`].
pub struct Graph<T: Real = f64> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Below this norm a vector counts as zero for cosine similarity.
pub const COSINE_EPS: f64 = 1e-12;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new(), backward_done: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, false)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.leaf(value, true)
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { value, requires_grad, op: Op::Leaf });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `id`, if it was
    /// reached.
    pub fn grad(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn push(&mut self, op_name: &'static str, value: Tensor<T>, inputs: &[NodeId], op: Op<T>) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: op_name });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node { value, requires_grad, op });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn expect_rank(&self, op: &'static str, id: NodeId, rank: usize) -> Result<&[usize]> {
        let shape = self.shape(id);
        if shape.len() != rank {
            return Err(shape_err(op, format!("expected rank {rank}, got shape {shape:?}")));
        }
        Ok(shape)
    }

    /// Cross-correlation over NCHW input with an OIHW kernel.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        stride: usize,
        padding: usize,
    ) -> Result<NodeId> {
        const OP: &str = "conv2d";
        if stride == 0 {
            return Err(invalid(OP, "stride must be >= 1"));
        }
        let x = self.expect_rank(OP, input, 4)?.to_vec();
        let w = self.expect_rank(OP, weight, 4)?.to_vec();
        if w[1] != x[1] {
            return Err(shape_err(
                OP,
                format!("weight expects {} input channels, input {:?} has {}", w[1], x, x[1]),
            ));
        }
        if w[2] > x[2] + 2 * padding || w[3] > x[3] + 2 * padding {
            return Err(shape_err(
                OP,
                format!("kernel {}x{} larger than padded input {:?} (padding {padding})", w[2], w[3], x),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [w[0]] {
                return Err(shape_err(OP, format!("bias {:?} vs {} output channels", self.shape(b), w[0])));
            }
        }
        let geom = ConvGeom {
            n: x[0],
            cin: x[1],
            h: x[2],
            w: x[3],
            cout: w[0],
            kh: w[2],
            kw: w[3],
            stride,
            padding,
            oh: kernels::out_extent(x[2], w[2], stride, padding),
            ow: kernels::out_extent(x[3], w[3], stride, padding),
        };
        let out = kernels::conv2d_forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(&[geom.n, geom.cout, geom.oh, geom.ow], out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        self.push(OP, value, &deps, Op::Conv2d { input, weight, bias, geom })
    }

    /// Window max with implicit `-inf` padding.
    pub fn max_pool2d(&mut self, input: NodeId, kernel: usize, stride: usize, padding: usize) -> Result<NodeId> {
        const OP: &str = "max_pool2d";
        if kernel == 0 || stride == 0 {
            return Err(invalid(OP, "kernel and stride must be >= 1"));
        }
        if padding >= kernel {
            return Err(invalid(OP, format!("padding {padding} must be smaller than kernel {kernel}")));
        }
        let x = self.expect_rank(OP, input, 4)?.to_vec();
        if kernel > x[2] + 2 * padding || kernel > x[3] + 2 * padding {
            return Err(shape_err(OP, format!("kernel {kernel} larger than padded input {x:?}")));
        }
        let geom = PoolGeom {
            planes: x[0] * x[1],
            h: x[2],
            w: x[3],
            kernel,
            stride,
            padding,
            oh: kernels::out_extent(x[2], kernel, stride, padding),
            ow: kernels::out_extent(x[3], kernel, stride, padding),
        };
        let (out, argmax) = kernels::max_pool_forward(&geom, self.value(input).data());
        let value = Tensor::new(&[x[0], x[1], geom.oh, geom.ow], out)?;
        self.push(OP, value, &[input], Op::MaxPool { input, argmax })
    }

    /// Per-channel spatial maximum, `[N,C,H,W] -> [N,C]`.
    pub fn global_max_pool(&mut self, input: NodeId) -> Result<NodeId> {
        const OP: &str = "global_max_pool";
        let x = self.expect_rank(OP, input, 4)?.to_vec();
        let area = x[2] * x[3];
        let data = self.value(input).data();
        let mut out = Vec::with_capacity(x[0] * x[1]);
        let mut argmax = Vec::with_capacity(x[0] * x[1]);
        for (p, plane) in data.chunks_exact(area).enumerate() {
            let mut best = 0;
            for (i, &v) in plane.iter().enumerate() {
                if v > plane[best] {
                    best = i;
                }
            }
            out.push(plane[best]);
            argmax.push(p * area + best);
        }
        let value = Tensor::new(&[x[0], x[1]], out)?;
        self.push(OP, value, &[input], Op::GlobalMax { input, argmax })
    }

    /// Per-channel spatial mean, `[N,C,H,W] -> [N,C]`.
    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        const OP: &str = "global_avg_pool";
        let x = self.expect_rank(OP, input, 4)?.to_vec();
        let area = x[2] * x[3];
        let scale = T::one() / T::of(area as f64);
        let out = self
            .value(input)
            .data()
            .chunks_exact(area)
            .map(|plane| plane.iter().copied().sum::<T>() * scale)
            .collect();
        let value = Tensor::new(&[x[0], x[1]], out)?;
        self.push(OP, value, &[input], Op::GlobalAvg { input, area })
    }

    /// Affine map `[N,Din] -> [N,Dout]` with weight `[Dout,Din]`.
    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        const OP: &str = "linear";
        let x = self.expect_rank(OP, input, 2)?.to_vec();
        let w = self.expect_rank(OP, weight, 2)?.to_vec();
        if w[1] != x[1] {
            return Err(shape_err(OP, format!("weight {w:?} does not accept input {x:?}")));
        }
        if let Some(b) = bias {
            if self.shape(b) != [w[0]] {
                return Err(shape_err(OP, format!("bias {:?} vs weight {w:?}", self.shape(b))));
            }
        }
        let (n, din, dout) = (x[0], x[1], w[0]);
        let xd = self.value(input).data();
        let wd = self.value(weight).data();
        let bd = bias.map(|b| self.value(b).data());
        let mut out = Vec::with_capacity(n * dout);
        for row in xd.chunks_exact(din) {
            for o in 0..dout {
                let dot: T = row.iter().zip(&wd[o * din..][..din]).map(|(&a, &b)| a * b).sum();
                out.push(dot + bd.map_or(T::zero(), |b| b[o]));
            }
        }
        let value = Tensor::new(&[n, dout], out)?;
        let mut deps = vec![input, weight];
        deps.extend(bias);
        self.push(OP, value, &deps, Op::Linear { input, weight, bias })
    }

    /// Integer-factor spatial upsampling; only factors 2 and 4 are supported.
    pub fn upsample(&mut self, input: NodeId, factor: usize, mode: UpsampleMode) -> Result<NodeId> {
        const OP: &str = "upsample";
        if factor != 2 && factor != 4 {
            return Err(invalid(OP, format!("unsupported factor {factor} (expected 2 or 4)")));
        }
        let x = self.expect_rank(OP, input, 4)?.to_vec();
        let data = self.value(input).data();
        let out = match mode {
            UpsampleMode::Nearest => kernels::upsample_nearest_forward(x[0] * x[1], x[2], x[3], factor, data),
            UpsampleMode::Bilinear => kernels::upsample_bilinear_forward(x[0] * x[1], x[2], x[3], factor, data),
        };
        let value = Tensor::new(&[x[0], x[1], x[2] * factor, x[3] * factor], out)?;
        self.push(OP, value, &[input], Op::Upsample { input, factor, mode })
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let value = self.value(input).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push("relu", value, &[input], Op::Relu { input })
    }

    /// Numerically stable softmax over a 1-D tensor.
    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId> {
        const OP: &str = "softmax";
        let x = self.expect_rank(OP, input, 1)?;
        if x[0] == 0 {
            return Err(shape_err(OP, "empty logits"));
        }
        let logits = self.value(input);
        if !logits.is_finite() {
            return Err(TensorError::NonFinite { op: OP });
        }
        let max = logits.data().iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.data().iter().map(|&v| (v - max).exp()).collect();
        let total: T = exps.iter().copied().sum();
        let value = Tensor::new(logits.shape(), exps.into_iter().map(|e| e / total).collect())?;
        self.push(OP, value, &[input], Op::Softmax { input })
    }

    /// Cosine similarity along the last axis: `[.., D] x [.., D] -> [..]`.
    /// A pair where either vector has norm below [`COSINE_EPS`] scores 0.
    pub fn cosine_similarity(&mut self, u: NodeId, v: NodeId) -> Result<NodeId> {
        const OP: &str = "cosine_similarity";
        let (us, vs) = (self.shape(u).to_vec(), self.shape(v).to_vec());
        if us != vs || us.is_empty() {
            return Err(shape_err(OP, format!("operands {us:?} and {vs:?}")));
        }
        let d = *us.last().unwrap();
        let eps = T::of(COSINE_EPS);
        let out = self
            .value(u)
            .data()
            .chunks_exact(d)
            .zip(self.value(v).data().chunks_exact(d))
            .map(|(a, b)| cosine_row(a, b, eps).0)
            .collect();
        let value = Tensor::new(&us[..us.len() - 1], out)?;
        self.push(OP, value, &[u, v], Op::Cosine { u, v, eps })
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
        let value = Tensor::new(av.shape(), data)?;
        self.push("add", value, &[a, b], Op::Add { a, b })
    }

    /// Element-wise product of equal-shaped tensors.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mul", a, b)?;
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(av.shape(), data)?;
        self.push("mul", value, &[a, b], Op::Mul { a, b })
    }

    /// Multiplies every element of `x` by the single-element tensor `s`.
    pub fn scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        if self.value(s).numel() != 1 {
            return Err(shape_err("scale", format!("scale factor must be a scalar, got {:?}", self.shape(s))));
        }
        let factor = self.value(s).item();
        let value = self.value(x).map(|v| v * factor);
        self.push("scale", value, &[x, s], Op::Scale { x, s })
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(total), &[x], Op::Sum { x })
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x);
        let mean = v.data().iter().copied().sum::<T>() / T::of(v.numel() as f64);
        self.push("mean", Tensor::scalar(mean), &[x], Op::Mean { x })
    }

    /// Packs single-element tensors into a 1-D tensor.
    pub fn stack(&mut self, items: &[NodeId]) -> Result<NodeId> {
        let mut data = Vec::with_capacity(items.len());
        for &i in items {
            let v = self.value(i);
            if v.numel() != 1 {
                return Err(shape_err("stack", format!("item with shape {:?} is not a scalar", v.shape())));
            }
            data.push(v.item());
        }
        let value = Tensor::new(&[items.len()], data)?;
        self.push("stack", value, items, Op::Stack { items: items.to_vec() })
    }

    /// Selects one element (flat index) as a scalar.
    pub fn index(&mut self, x: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(x);
        if index >= v.numel() {
            return Err(shape_err("index", format!("index {index} out of {:?}", v.shape())));
        }
        let value = Tensor::scalar(v.data()[index]);
        self.push("index", value, &[x], Op::Index { x, index })
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let value = self.value(x).clone().reshape(shape)?;
        self.push("reshape", value, &[x], Op::Reshape { x })
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: NodeId, target: Tensor<T>) -> Result<NodeId> {
        if self.shape(pred) != target.shape() {
            return Err(shape_err("mse", format!("prediction {:?} vs target {:?}", self.shape(pred), target.shape())));
        }
        let p = self.value(pred);
        let total: T = p.data().iter().zip(target.data()).map(|(&a, &b)| (a - b) * (a - b)).sum();
        let value = Tensor::scalar(total / T::of(p.numel() as f64));
        self.push("mse", value, &[pred], Op::Mse { pred, target })
    }

    /// Reverse-mode pass from a scalar loss. Populates [`Graph::grad`] for
    /// every node that depends on a differentiable leaf.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(TensorError::Backward("gradients already computed; call reset_grads first".into()));
        }
        let node = &self.nodes[loss.0];
        if node.value.numel() != 1 {
            return Err(TensorError::Backward(format!("loss must be a scalar, got shape {:?}", node.value.shape())));
        }
        if matches!(node.op, Op::Leaf) {
            return Err(TensorError::Backward("loss is a leaf; no recorded computation".into()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::full(node.value.shape(), T::one()));
        for id in (0..=loss.0).rev() {
            let Some(gout) = self.grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &gout);
            self.grads[id] = Some(gout);
        }
        self.backward_done = true;
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, grad: Vec<T>) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(existing) => {
                for (e, g) in existing.data_mut().iter_mut().zip(grad) {
                    *e = *e + g;
                }
            }
            slot @ None => {
                let shape = self.nodes[id.0].value.shape().to_vec();
                *slot = Some(Tensor::new(&shape, grad).expect("gradient matches value shape"));
            }
        }
    }

    fn propagate(&mut self, id: usize, gout: &Tensor<T>) {
        let g = gout.data();
        let contributions: Vec<(NodeId, Vec<T>)> = match &self.nodes[id].op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { input, weight, bias, geom } => {
                let (gx, gw, gb) = kernels::conv2d_backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g,
                );
                let mut out = vec![(*input, gx), (*weight, gw)];
                out.extend(bias.map(|b| (b, gb)));
                out
            }
            Op::MaxPool { input, argmax } | Op::GlobalMax { input, argmax } => {
                let mut gx = vec![T::zero(); self.value(*input).numel()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    gx[src] = gx[src] + gv;
                }
                vec![(*input, gx)]
            }
            Op::GlobalAvg { input, area } => {
                let scale = T::one() / T::of(*area as f64);
                let gx = g.iter().flat_map(|&gv| std::iter::repeat_n(gv * scale, *area)).collect();
                vec![(*input, gx)]
            }
            Op::Linear { input, weight, bias } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let (n, din) = (x.shape()[0], x.shape()[1]);
                let dout = w.shape()[0];
                let mut gx = vec![T::zero(); n * din];
                let mut gw = vec![T::zero(); dout * din];
                let mut gb = vec![T::zero(); dout];
                for r in 0..n {
                    for o in 0..dout {
                        let gv = g[r * dout + o];
                        gb[o] = gb[o] + gv;
                        for k in 0..din {
                            gx[r * din + k] = gx[r * din + k] + gv * w.data()[o * din + k];
                            gw[o * din + k] = gw[o * din + k] + gv * x.data()[r * din + k];
                        }
                    }
                }
                let mut out = vec![(*input, gx), (*weight, gw)];
                out.extend(bias.map(|b| (b, gb)));
                out
            }
            Op::Upsample { input, factor, mode } => {
                let s = self.shape(*input);
                let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
                let gx = match mode {
                    UpsampleMode::Nearest => kernels::upsample_nearest_backward(planes, h, w, *factor, g),
                    UpsampleMode::Bilinear => kernels::upsample_bilinear_backward(planes, h, w, *factor, g),
                };
                vec![(*input, gx)]
            }
            Op::Relu { input } => {
                let x = self.value(*input).data();
                let gx = x.iter().zip(g).map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() }).collect();
                vec![(*input, gx)]
            }
            Op::Softmax { input } => {
                let y = self.nodes[id].value.data();
                let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                let gx = y.iter().zip(g).map(|(&yi, &gi)| yi * (gi - dot)).collect();
                vec![(*input, gx)]
            }
            Op::Cosine { u, v, eps } => {
                let (ud, vd) = (self.value(*u).data(), self.value(*v).data());
                let d = *self.shape(*u).last().unwrap();
                let mut gu = Vec::with_capacity(ud.len());
                let mut gv = Vec::with_capacity(vd.len());
                for ((a, b), &go) in ud.chunks_exact(d).zip(vd.chunks_exact(d)).zip(g) {
                    let (c, norms) = cosine_row(a, b, *eps);
                    match norms {
                        None => {
                            gu.extend(std::iter::repeat_n(T::zero(), d));
                            gv.extend(std::iter::repeat_n(T::zero(), d));
                        }
                        Some((na, nb)) => {
                            let inv = T::one() / (na * nb);
                            gu.extend(a.iter().zip(b).map(|(&ai, &bi)| go * (bi * inv - c * ai / (na * na))));
                            gv.extend(a.iter().zip(b).map(|(&ai, &bi)| go * (ai * inv - c * bi / (nb * nb))));
                        }
                    }
                }
                vec![(*u, gu), (*v, gv)]
            }
            Op::Add { a, b } => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Mul { a, b } => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let ga = g.iter().zip(bd).map(|(&gi, &bi)| gi * bi).collect();
                let gb = g.iter().zip(ad).map(|(&gi, &ai)| gi * ai).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale { x, s } => {
                let factor = self.value(*s).item();
                let gx = g.iter().map(|&gi| gi * factor).collect();
                let gs: T = g.iter().zip(self.value(*x).data()).map(|(&gi, &xi)| gi * xi).sum();
                vec![(*x, gx), (*s, vec![gs])]
            }
            Op::Sum { x } => vec![(*x, vec![g[0]; self.value(*x).numel()])],
            Op::Mean { x } => {
                let n = self.value(*x).numel();
                vec![(*x, vec![g[0] / T::of(n as f64); n])]
            }
            Op::Stack { items } => items.iter().zip(g).map(|(&i, &gi)| (i, vec![gi])).collect(),
            Op::Index { x, index } => {
                let mut gx = vec![T::zero(); self.value(*x).numel()];
                gx[*index] = g[0];
                vec![(*x, gx)]
            }
            Op::Reshape { x } => vec![(*x, g.to_vec())],
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let scale = T::of(2.0) * g[0] / T::of(p.len() as f64);
                let gp = p.iter().zip(target.data()).map(|(&a, &b)| scale * (a - b)).collect();
                vec![(*pred, gp)]
            }
        };
        for (input, grad) in contributions {
            self.accumulate(input, grad);
        }
    }
}

/// Returns the similarity and, when both norms clear `eps`, the norms.
fn cosine_row<T: Real>(a: &[T], b: &[T], eps: T) -> (T, Option<(T, T)>) {
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    if na < eps || nb < eps {
        return (T::zero(), None);
    }
    let dot: T = a.iter().zip(b).map(|(&x, &y)| x * y).sum();
    let c = (dot / (na * nb)).max(-T::one()).min(T::one());
    (c, Some((na, nb)))
}
