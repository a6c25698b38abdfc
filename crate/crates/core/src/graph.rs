//! Recorded computation for reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and, when the
//! graph is recording, the operator tag and input indices. Inputs are always
//! earlier nodes, so a reverse sweep over the node list visits each node
//! after all of its consumers. A graph supports exactly one `backward`.

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::kernels::{self, conv};
use crate::param::{ParamId, ParamStore, Parameter};
use crate::tensor::{Element, Tensor};

pub use crate::kernels::conv::ConvParams;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShuffleDirection {
    /// N×C×H×W → N×(C·r²)×(H/r)×(W/r)
    Down,
    /// N×C×H×W → N×(C/r²)×(H·r)×(W·r)
    Up,
}

#[derive(Clone, Debug)]
enum Op {
    Constant,
    Param(ParamId),
    Conv2d { x: usize, w: usize, b: Option<usize>, p: ConvParams },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    ScalarMul(usize, f64),
    ScalarAdd(usize, f64),
    Gelu(usize),
    Softmax { x: usize, axis: usize },
    GlobalAvgPool(usize),
    LayerNorm { x: usize, gamma: usize },
    Resize(usize),
    Shuffle { x: usize, r: usize, dir: ShuffleDirection },
    Concat(Vec<usize>),
    SliceChannels { x: usize, start: usize },
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    L2Normalize(usize),
    ScaleBatches { x: usize, s: usize },
    Sum(usize),
    Mean(usize),
}

struct Node<E> {
    value: Tensor<E>,
    op: Op,
    requires_grad: bool,
}

pub struct Graph<E: Element> {
    nodes: RefCell<Vec<Node<E>>>,
    recording: bool,
    consumed: Cell<bool>,
}

impl<E: Element> Default for Graph<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Graph<E> {
    /// A graph that records operations for a later `backward`.
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), recording: true, consumed: Cell::new(false) }
    }

    /// A graph that only evaluates; nothing is recorded for differentiation.
    pub fn inference() -> Self {
        Self { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub fn value(&self, v: Var) -> Tensor<E> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    fn val(&self, v: Var) -> Tensor<E> {
        self.value(v)
    }

    fn needs(&self, vs: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vs.iter().any(|v| nodes[v.0].requires_grad)
    }

    fn push(&self, value: Tensor<E>, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let (op, requires_grad) =
            if self.recording && requires_grad { (op, true) } else { (Op::Constant, false) };
        nodes.push(Node { value, op, requires_grad });
        Var(nodes.len() - 1)
    }

    fn push_op(&self, value: Tensor<E>, op: Op, inputs: &[Var]) -> Var {
        let rg = self.needs(inputs);
        self.push(value, op, rg)
    }

    // ── leaves ──────────────────────────────────────────────────────

    pub fn constant(&self, t: Tensor<E>) -> Var {
        self.push(t, Op::Constant, false)
    }

    pub fn param(&self, p: &Parameter<E>) -> Var {
        self.push(p.value.clone(), Op::Param(p.id()), true)
    }

    // ── convolution ─────────────────────────────────────────────────

    pub fn conv2d(&self, x: Var, w: Var, b: Option<Var>, p: ConvParams) -> Result<Var> {
        let (xt, wt) = (self.val(x), self.val(w));
        let geom = conv::ConvGeom::new(xt.shape(), wt.shape(), p)?;
        let bt = b.map(|b| self.val(b));
        if let Some(bt) = &bt {
            if bt.shape() != [geom.o] {
                return Err(Error::shape(
                    "conv2d",
                    format!("bias shape {:?} does not match output channels {}", bt.shape(), geom.o),
                ));
            }
        }
        let out = conv::conv2d_forward(xt.data(), wt.data(), bt.as_ref().map(|t| t.data()), &geom);
        let value = Tensor::from_parts(geom.out_shape(), out);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push_op(value, Op::Conv2d { x: x.0, w: w.0, b: b.map(|b| b.0), p }, &inputs))
    }

    // ── elementwise ─────────────────────────────────────────────────

    fn binary(&self, name: &'static str, a: Var, b: Var, f: impl Fn(E, E) -> E) -> Result<Tensor<E>> {
        let (at, bt) = (self.val(a), self.val(b));
        if at.shape() != bt.shape() {
            return Err(Error::shape(
                name,
                format!("operand shapes differ: {:?} vs {:?}", at.shape(), bt.shape()),
            ));
        }
        at.zip_map(&bt, f)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push_op(v, Op::Add(a.0, b.0), &[a, b]))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push_op(v, Op::Sub(a.0, b.0), &[a, b]))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push_op(v, Op::Mul(a.0, b.0), &[a, b]))
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.push_op(v, Op::Div(a.0, b.0), &[a, b]))
    }

    pub fn scalar_mul(&self, a: Var, s: f64) -> Var {
        let k = E::lit(s);
        let v = self.val(a).map(|x| x * k);
        self.push_op(v, Op::ScalarMul(a.0, s), &[a])
    }

    pub fn scalar_add(&self, a: Var, s: f64) -> Var {
        let k = E::lit(s);
        let v = self.val(a).map(|x| x + k);
        self.push_op(v, Op::ScalarAdd(a.0, s), &[a])
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&self, a: Var) -> Var {
        let v = self.val(a).map(kernels::gelu);
        self.push_op(v, Op::Gelu(a.0), &[a])
    }

    /// Clamps to `[0, 1]`. Only allowed on non-recording graphs.
    pub fn clamp01(&self, a: Var) -> Result<Var> {
        if self.recording {
            return Err(Error::ClampInGraph);
        }
        Ok(self.constant(self.val(a).clamp01()))
    }

    // ── reductions and normalization ────────────────────────────────

    pub fn softmax(&self, x: Var, axis: usize) -> Result<Var> {
        let xt = self.val(x);
        if axis >= xt.rank() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} out of range for rank {}", xt.rank()),
            ));
        }
        let split = kernels::axis_split(xt.shape(), axis);
        let y = kernels::softmax_forward(xt.data(), split);
        Ok(self.push_op(Tensor::from_parts(xt.shape().to_vec(), y), Op::Softmax { x: x.0, axis }, &[x]))
    }

    pub fn global_avg_pool(&self, x: Var) -> Result<Var> {
        let xt = self.val(x);
        xt.dims4()?;
        Ok(self.push_op(avg_pool(&xt), Op::GlobalAvgPool(x.0), &[x]))
    }

    /// Bias-free layer norm across channels at each spatial position.
    pub fn layer_norm_channels(&self, x: Var, gamma: Var) -> Result<Var> {
        let (xt, gt) = (self.val(x), self.val(gamma));
        let dims = xt.dims4()?;
        if gt.shape() != [dims[1]] {
            return Err(Error::shape(
                "layer_norm_channels",
                format!("gamma shape {:?} does not match channels {}", gt.shape(), dims[1]),
            ));
        }
        let y = kernels::layer_norm_forward(xt.data(), gt.data(), dims);
        Ok(self.push_op(
            Tensor::from_parts(xt.shape().to_vec(), y),
            Op::LayerNorm { x: x.0, gamma: gamma.0 },
            &[x, gamma],
        ))
    }

    pub fn l2_normalize_last(&self, x: Var) -> Result<Var> {
        let xt = self.val(x);
        let row = *xt.shape().last().unwrap();
        let y = kernels::l2_normalize_rows(xt.data(), row);
        Ok(self.push_op(Tensor::from_parts(xt.shape().to_vec(), y), Op::L2Normalize(x.0), &[x]))
    }

    pub fn sum(&self, x: Var) -> Var {
        let v = Tensor::scalar(self.val(x).sum());
        self.push_op(v, Op::Sum(x.0), &[x])
    }

    pub fn mean(&self, x: Var) -> Var {
        let v = Tensor::scalar(self.val(x).mean());
        self.push_op(v, Op::Mean(x.0), &[x])
    }

    // ── resampling and layout ───────────────────────────────────────

    pub fn bilinear_resize(&self, x: Var, oh: usize, ow: usize) -> Result<Var> {
        let xt = self.val(x);
        let dims = xt.dims4()?;
        if oh == 0 || ow == 0 {
            return Err(Error::shape("bilinear_resize", format!("target size {oh}x{ow} must be positive")));
        }
        let y = kernels::resize_forward(xt.data(), dims, oh, ow);
        Ok(self.push_op(Tensor::from_parts(vec![dims[0], dims[1], oh, ow], y), Op::Resize(x.0), &[x]))
    }

    pub fn pixel_shuffle(&self, x: Var, r: usize, dir: ShuffleDirection) -> Result<Var> {
        let xt = self.val(x);
        let [n, c, h, w] = xt.dims4()?;
        if r == 0 {
            return Err(Error::shape("pixel_shuffle", "factor must be >= 1"));
        }
        let (shape, y) = match dir {
            ShuffleDirection::Down => {
                if h % r != 0 || w % r != 0 {
                    return Err(Error::shape(
                        "pixel_shuffle",
                        format!("height {h} / width {w} not divisible by factor {r}"),
                    ));
                }
                (vec![n, c * r * r, h / r, w / r], kernels::pixel_unshuffle(xt.data(), [n, c, h, w], r))
            }
            ShuffleDirection::Up => {
                if c % (r * r) != 0 {
                    return Err(Error::shape(
                        "pixel_shuffle",
                        format!("channels {c} not divisible by factor² {}", r * r),
                    ));
                }
                (vec![n, c / (r * r), h * r, w * r], kernels::pixel_shuffle(xt.data(), [n, c, h, w], r))
            }
        };
        Ok(self.push_op(Tensor::from_parts(shape, y), Op::Shuffle { x: x.0, r, dir }, &[x]))
    }

    pub fn concat_channels(&self, xs: &[Var]) -> Result<Var> {
        let ts: Vec<_> = xs.iter().map(|&v| self.val(v)).collect();
        let first = ts.first().ok_or_else(|| Error::shape("concat_channels", "no inputs"))?;
        let [n, _, h, w] = first.dims4()?;
        let mut c_total = 0;
        for t in &ts {
            let [tn, tc, th, tw] = t.dims4()?;
            if (tn, th, tw) != (n, h, w) {
                return Err(Error::shape(
                    "concat_channels",
                    format!("input {:?} does not share batch/height/width with {:?}", t.shape(), first.shape()),
                ));
            }
            c_total += tc;
        }
        Ok(self.push_op(
            concat(&ts.iter().collect::<Vec<_>>(), [n, c_total, h, w]),
            Op::Concat(xs.iter().map(|v| v.0).collect()),
            xs,
        ))
    }

    pub fn slice_channels(&self, x: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.val(x).slice_channels(start, len)?;
        Ok(self.push_op(v, Op::SliceChannels { x: x.0, start }, &[x]))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.val(x).reshape(shape)?;
        Ok(self.push_op(v, Op::Reshape(x.0), &[x]))
    }

    /// B×M×K · B×K×L → B×M×L.
    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (at, bt) = (self.val(a), self.val(b));
        let (&[ba, _, k], &[bb, k2, _]) = (at.shape(), bt.shape()) else {
            return Err(Error::shape(
                "matmul",
                format!("expected rank-3 operands, got {:?} and {:?}", at.shape(), bt.shape()),
            ));
        };
        if ba != bb {
            return Err(Error::shape("matmul", format!("batch extents differ: {ba} vs {bb}")));
        }
        if k != k2 {
            return Err(Error::shape("matmul", format!("inner extents differ: {k} vs {k2}")));
        }
        Ok(self.push_op(batched_matmul(&at, &bt), Op::MatMul(a.0, b.0), &[a, b]))
    }

    /// B×M×K → B×K×M.
    pub fn transpose_last2(&self, x: Var) -> Result<Var> {
        let xt = self.val(x);
        let &[b, m, k] = xt.shape() else {
            return Err(Error::shape("transpose", format!("expected rank 3, got {:?}", xt.shape())));
        };
        let out = transpose_batched(xt.data(), b, m, k);
        Ok(self.push_op(Tensor::from_parts(vec![b, k, m], out), Op::Transpose(x.0), &[x]))
    }

    /// Multiplies batch slice `i` of `x` by `s[i % s.len()]`.
    pub fn scale_batches(&self, x: Var, s: Var) -> Result<Var> {
        let (xt, st) = (self.val(x), self.val(s));
        let h = st.numel();
        if st.rank() != 1 || xt.shape()[0] % h != 0 {
            return Err(Error::shape(
                "scale_batches",
                format!("scale {:?} does not tile leading extent of {:?}", st.shape(), xt.shape()),
            ));
        }
        Ok(self.push_op(
            scale_batches(&xt, &st),
            Op::ScaleBatches { x: x.0, s: s.0 },
            &[x, s],
        ))
    }

    // ── backward ────────────────────────────────────────────────────

    /// Accumulates ∂loss/∂param into every reachable parameter's `grad`.
    /// Nodes whose value depends on parameter `id`, in evaluation order.
    pub fn dependents(&self, id: ParamId) -> Vec<usize> {
        let nodes = self.nodes.borrow();
        let mut hit = vec![false; nodes.len()];
        let mut out = Vec::new();
        for (i, node) in nodes.iter().enumerate() {
            hit[i] = match &node.op {
                Op::Param(p) => *p == id,
                op => op_inputs(op).iter().any(|&j| hit[j]),
            };
            if hit[i] {
                out.push(i);
            }
        }
        out
    }

    /// Recomputes `order` (from [`Graph::dependents`]) after parameter
    /// values in `store` changed.
    pub fn replay(&self, order: &[usize], store: &ParamStore<E>) -> Result<()> {
        if !self.recording {
            return Err(Error::InvalidArgument("replay on a non-recording graph".into()));
        }
        for &i in order {
            let value = {
                let nodes = self.nodes.borrow();
                match &nodes[i].op {
                    Op::Param(id) => store.value(*id).clone(),
                    op => eval_op(op, &nodes, nodes[i].value.shape())?,
                }
            };
            self.nodes.borrow_mut()[i].value = value;
        }
        Ok(())
    }

    pub fn backward(&self, loss: Var, store: &mut ParamStore<E>) -> Result<()> {
        if !self.recording {
            return Err(Error::InvalidArgument("backward on a non-recording graph".into()));
        }
        let nodes = self.nodes.borrow();
        let loss_shape = nodes[loss.0].value.shape();
        if nodes[loss.0].value.numel() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        if self.consumed.replace(true) {
            return Err(Error::GraphConsumed);
        }
        let mut grads: Vec<Option<Vec<E>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![E::one()]);
        let acc = |grads: &mut Vec<Option<Vec<E>>>, idx: usize, g: Vec<E>| match &mut grads[idx] {
            Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a = *a + b),
            slot @ None => *slot = Some(g),
        };
        let need = |idx: usize| nodes[idx].requires_grad;

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            let out = &node.value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    let pg = store.get_mut(*id).grad.data_mut();
                    if pg.len() != g.len() {
                        return Err(Error::shape("backward", "parameter changed shape during forward"));
                    }
                    pg.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b);
                }
                Op::Conv2d { x, w, b, p } => {
                    let (xt, wt) = (&nodes[*x].value, &nodes[*w].value);
                    let geom = conv::ConvGeom::new(xt.shape(), wt.shape(), *p)?;
                    let r = conv::conv2d_backward(
                        xt.data(),
                        wt.data(),
                        &g,
                        &geom,
                        [need(*x), need(*w), b.is_some_and(need)],
                    );
                    if let Some(dx) = r.dx {
                        acc(&mut grads, *x, dx);
                    }
                    if let Some(dw) = r.dw {
                        acc(&mut grads, *w, dw);
                    }
                    if let (Some(b), Some(db)) = (b, r.db) {
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if need(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if need(*b) {
                        acc(&mut grads, *b, g);
                    }
                }
                Op::Sub(a, b) => {
                    if need(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if need(*b) {
                        acc(&mut grads, *b, g.iter().map(|&v| -v).collect());
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                    if need(*a) {
                        acc(&mut grads, *a, g.iter().zip(bv).map(|(&g, &y)| g * y).collect());
                    }
                    if need(*b) {
                        acc(&mut grads, *b, g.iter().zip(av).map(|(&g, &x)| g * x).collect());
                    }
                }
                Op::Div(a, b) => {
                    let bv = nodes[*b].value.data();
                    if need(*a) {
                        acc(&mut grads, *a, g.iter().zip(bv).map(|(&g, &y)| g / y).collect());
                    }
                    if need(*b) {
                        let q = out.data();
                        acc(&mut grads, *b, g.iter().zip(q).zip(bv).map(|((&g, &q), &y)| -g * q / y).collect());
                    }
                }
                Op::ScalarMul(a, s) => {
                    let k = E::lit(*s);
                    acc(&mut grads, *a, g.iter().map(|&v| v * k).collect());
                }
                Op::ScalarAdd(a, _) => acc(&mut grads, *a, g),
                Op::Gelu(a) => {
                    let xv = nodes[*a].value.data();
                    acc(&mut grads, *a, g.iter().zip(xv).map(|(&g, &x)| g * kernels::gelu_grad(x)).collect());
                }
                Op::Softmax { x, axis } => {
                    let split = kernels::axis_split(out.shape(), *axis);
                    acc(&mut grads, *x, kernels::softmax_backward(out.data(), &g, split));
                }
                Op::GlobalAvgPool(x) => {
                    let [_, _, h, w] = nodes[*x].value.dims4()?;
                    let inv = E::one() / E::from_usize(h * w).unwrap();
                    let mut dx = Vec::with_capacity(nodes[*x].value.numel());
                    for &gv in &g {
                        dx.extend(std::iter::repeat_n(gv * inv, h * w));
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::LayerNorm { x, gamma } => {
                    let xt = &nodes[*x].value;
                    let (dx, dgamma) =
                        kernels::layer_norm_backward(xt.data(), nodes[*gamma].value.data(), &g, xt.dims4()?);
                    if need(*x) {
                        acc(&mut grads, *x, dx);
                    }
                    if need(*gamma) {
                        acc(&mut grads, *gamma, dgamma);
                    }
                }
                Op::Resize(x) => {
                    let dims = nodes[*x].value.dims4()?;
                    let [_, _, oh, ow] = out.dims4()?;
                    acc(&mut grads, *x, kernels::resize_backward(&g, dims, oh, ow));
                }
                Op::Shuffle { x, r, dir } => {
                    let dims = out.dims4()?;
                    let dx = match dir {
                        ShuffleDirection::Down => kernels::pixel_shuffle(&g, dims, *r),
                        ShuffleDirection::Up => kernels::pixel_unshuffle(&g, dims, *r),
                    };
                    acc(&mut grads, *x, dx);
                }
                Op::Concat(xs) => {
                    let n = out.shape()[0];
                    let chunk_out = out.numel() / n;
                    let mut offset = 0;
                    for &x in xs {
                        let chunk = nodes[x].value.numel() / n;
                        if need(x) {
                            let mut dx = Vec::with_capacity(chunk * n);
                            for b in 0..n {
                                dx.extend_from_slice(&g[b * chunk_out + offset..][..chunk]);
                            }
                            acc(&mut grads, x, dx);
                        }
                        offset += chunk;
                    }
                }
                Op::SliceChannels { x, start } => {
                    let [n, c, h, w] = nodes[*x].value.dims4()?;
                    let len = out.shape()[1];
                    let plane = h * w;
                    let mut dx = vec![E::zero(); n * c * plane];
                    for b in 0..n {
                        dx[(b * c + start) * plane..][..len * plane]
                            .copy_from_slice(&g[b * len * plane..(b + 1) * len * plane]);
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Reshape(x) => acc(&mut grads, *x, g),
                Op::MatMul(a, b) => {
                    let (at, bt) = (&nodes[*a].value, &nodes[*b].value);
                    let (&[bs, m, k], &[_, _, l]) = (at.shape(), bt.shape()) else { unreachable!() };
                    if need(*a) {
                        let mut da = vec![E::zero(); bs * m * k];
                        for i in 0..bs {
                            E::gemm(
                                m,
                                l,
                                k,
                                &g[i * m * l..(i + 1) * m * l],
                                false,
                                &bt.data()[i * k * l..(i + 1) * k * l],
                                true,
                                E::zero(),
                                &mut da[i * m * k..(i + 1) * m * k],
                            );
                        }
                        acc(&mut grads, *a, da);
                    }
                    if need(*b) {
                        let mut db = vec![E::zero(); bs * k * l];
                        for i in 0..bs {
                            E::gemm(
                                k,
                                m,
                                l,
                                &at.data()[i * m * k..(i + 1) * m * k],
                                true,
                                &g[i * m * l..(i + 1) * m * l],
                                false,
                                E::zero(),
                                &mut db[i * k * l..(i + 1) * k * l],
                            );
                        }
                        acc(&mut grads, *b, db);
                    }
                }
                Op::Transpose(x) => {
                    let &[b, k, m] = out.shape() else { unreachable!() };
                    acc(&mut grads, *x, transpose_batched(&g, b, k, m));
                }
                Op::L2Normalize(x) => {
                    let xt = &nodes[*x].value;
                    let row = *xt.shape().last().unwrap();
                    acc(&mut grads, *x, kernels::l2_normalize_rows_backward(xt.data(), &g, row));
                }
                Op::ScaleBatches { x, s } => {
                    let (xt, st) = (&nodes[*x].value, &nodes[*s].value);
                    let h = st.numel();
                    let chunk = xt.numel() / xt.shape()[0];
                    if need(*x) {
                        let mut dx = g.clone();
                        for (i, c) in dx.chunks_exact_mut(chunk).enumerate() {
                            let k = st.data()[i % h];
                            c.iter_mut().for_each(|v| *v = *v * k);
                        }
                        acc(&mut grads, *x, dx);
                    }
                    if need(*s) {
                        let mut ds = vec![E::zero(); h];
                        for (i, (gc, xc)) in g.chunks_exact(chunk).zip(xt.data().chunks_exact(chunk)).enumerate() {
                            ds[i % h] = ds[i % h] + gc.iter().zip(xc).map(|(&a, &b)| a * b).sum::<E>();
                        }
                        acc(&mut grads, *s, ds);
                    }
                }
                Op::Sum(x) => {
                    let n = nodes[*x].value.numel();
                    acc(&mut grads, *x, vec![g[0]; n]);
                }
                Op::Mean(x) => {
                    let n = nodes[*x].value.numel();
                    acc(&mut grads, *x, vec![g[0] / E::from_usize(n).unwrap(); n]);
                }
            }
        }
        Ok(())
    }
}

/// Value of a recorded node from the current values of its inputs.
fn eval_op<E: Element>(op: &Op, nodes: &[Node<E>], shape: &[usize]) -> Result<Tensor<E>> {
    let v = |i: &usize| &nodes[*i].value;
    let same = |data: Vec<E>| Tensor::from_parts(shape.to_vec(), data);
    Ok(match op {
        Op::Constant | Op::Param(_) => return Err(Error::InvalidArgument("leaf nodes are not evaluated".into())),
        Op::Conv2d { x, w, b, p } => {
            let geom = conv::ConvGeom::new(v(x).shape(), v(w).shape(), *p)?;
            same(conv::conv2d_forward(v(x).data(), v(w).data(), b.as_ref().map(|b| v(b).data()), &geom))
        }
        Op::Add(a, b) => v(a).zip_map(v(b), |x, y| x + y)?,
        Op::Sub(a, b) => v(a).zip_map(v(b), |x, y| x - y)?,
        Op::Mul(a, b) => v(a).zip_map(v(b), |x, y| x * y)?,
        Op::Div(a, b) => v(a).zip_map(v(b), |x, y| x / y)?,
        Op::ScalarMul(a, s) => {
            let k = E::lit(*s);
            v(a).map(|x| x * k)
        }
        Op::ScalarAdd(a, s) => {
            let k = E::lit(*s);
            v(a).map(|x| x + k)
        }
        Op::Gelu(a) => v(a).map(kernels::gelu),
        Op::Softmax { x, axis } => same(kernels::softmax_forward(v(x).data(), kernels::axis_split(shape, *axis))),
        Op::GlobalAvgPool(x) => avg_pool(v(x)),
        Op::LayerNorm { x, gamma } => same(kernels::layer_norm_forward(v(x).data(), v(gamma).data(), v(x).dims4()?)),
        Op::Resize(x) => same(kernels::resize_forward(v(x).data(), v(x).dims4()?, shape[2], shape[3])),
        Op::Shuffle { x, r, dir } => same(match dir {
            ShuffleDirection::Down => kernels::pixel_unshuffle(v(x).data(), v(x).dims4()?, *r),
            ShuffleDirection::Up => kernels::pixel_shuffle(v(x).data(), v(x).dims4()?, *r),
        }),
        Op::Concat(xs) => {
            let ts: Vec<_> = xs.iter().map(v).collect();
            concat(&ts, [shape[0], shape[1], shape[2], shape[3]])
        }
        Op::SliceChannels { x, start } => v(x).slice_channels(*start, shape[1])?,
        Op::MatMul(a, b) => batched_matmul(v(a), v(b)),
        Op::Transpose(x) => {
            let &[b, m, k] = v(x).shape() else { unreachable!() };
            same(transpose_batched(v(x).data(), b, m, k))
        }
        Op::Reshape(x) => v(x).reshape(shape)?,
        Op::L2Normalize(x) => same(kernels::l2_normalize_rows(v(x).data(), shape[shape.len() - 1])),
        Op::ScaleBatches { x, s } => scale_batches(v(x), v(s)),
        Op::Sum(x) => Tensor::scalar(v(x).sum()),
        Op::Mean(x) => Tensor::scalar(v(x).mean()),
    })
}

fn op_inputs(op: &Op) -> Vec<usize> {
    match op {
        Op::Constant | Op::Param(_) => vec![],
        Op::Conv2d { x, w, b, .. } => [*x, *w].into_iter().chain(*b).collect(),
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => vec![*a, *b],
        Op::LayerNorm { x, gamma: s } | Op::ScaleBatches { x, s } => vec![*x, *s],
        Op::Concat(xs) => xs.clone(),
        Op::ScalarMul(x, _)
        | Op::ScalarAdd(x, _)
        | Op::Gelu(x)
        | Op::Softmax { x, .. }
        | Op::GlobalAvgPool(x)
        | Op::Resize(x)
        | Op::Shuffle { x, .. }
        | Op::SliceChannels { x, .. }
        | Op::Transpose(x)
        | Op::Reshape(x)
        | Op::L2Normalize(x)
        | Op::Sum(x)
        | Op::Mean(x) => vec![*x],
    }
}

fn avg_pool<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    let (n, c, hw) = (x.shape()[0], x.shape()[1], x.shape()[2] * x.shape()[3]);
    let inv = E::one() / E::from_usize(hw).unwrap();
    let out = x.data().chunks_exact(hw).map(|p| p.iter().copied().sum::<E>() * inv).collect();
    Tensor::from_parts(vec![n, c, 1, 1], out)
}

fn concat<E: Element>(ts: &[&Tensor<E>], shape: [usize; 4]) -> Tensor<E> {
    let n = shape[0];
    let mut out = Vec::with_capacity(shape.iter().product());
    for b in 0..n {
        for t in ts {
            let chunk = t.numel() / n;
            out.extend_from_slice(&t.data()[b * chunk..(b + 1) * chunk]);
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}

fn batched_matmul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let (&[ba, m, k], &[_, _, l]) = (a.shape(), b.shape()) else { unreachable!() };
    let mut out = vec![E::zero(); ba * m * l];
    for i in 0..ba {
        E::gemm(
            m,
            k,
            l,
            &a.data()[i * m * k..(i + 1) * m * k],
            false,
            &b.data()[i * k * l..(i + 1) * k * l],
            false,
            E::zero(),
            &mut out[i * m * l..(i + 1) * m * l],
        );
    }
    Tensor::from_parts(vec![ba, m, l], out)
}

fn scale_batches<E: Element>(x: &Tensor<E>, s: &Tensor<E>) -> Tensor<E> {
    let h = s.numel();
    let chunk = x.numel() / x.shape()[0];
    let mut out = x.data().to_vec();
    for (i, c) in out.chunks_exact_mut(chunk).enumerate() {
        let k = s.data()[i % h];
        c.iter_mut().for_each(|v| *v = *v * k);
    }
    Tensor::from_parts(x.shape().to_vec(), out)
}

fn transpose_batched<E: Element>(x: &[E], b: usize, m: usize, k: usize) -> Vec<E> {
    let mut out = vec![E::zero(); x.len()];
    for i in 0..b {
        let src = &x[i * m * k..(i + 1) * m * k];
        let dst = &mut out[i * m * k..(i + 1) * m * k];
        for r in 0..m {
            for c in 0..k {
                dst[c * m + r] = src[r * k + c];
            }
        }
    }
    out
}
