use std::sync::Arc;

use super::conv::{self, ConvGeom};
use crate::error::{Error, Result};
use crate::loss::{self, LossBreakdown, LossConfig};
use crate::lpg::{self, PatchGrid};
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    Upsample {
        input: Var,
        factor: usize,
    },
    Downsample {
        input: Var,
        factor: usize,
    },
    Elu(Var),
    Sigmoid(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var),
    Sum(Var),
    Mean(Var),
    SelectChannel {
        input: Var,
        channel: usize,
    },
    LpgExpand {
        theta: Var,
        phi: Var,
        n4: Var,
        grid: Arc<PatchGrid>,
    },
    SiLog {
        pred: Var,
        /// dL/dpred, computed with the forward value.
        local_grad: Vec<f32>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Upsample { .. } => "nearest_upsample",
            Op::Downsample { .. } => "downsample_nearest",
            Op::Elu(_) => "elu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Concat { .. } => "concat",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::SelectChannel { .. } => "select_channel",
            Op::LpgExpand { .. } => "lpg_expand",
            Op::SiLog { .. } => "silog_loss",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d {
                input, weight, bias, ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::Upsample { input, .. }
            | Op::Downsample { input, .. }
            | Op::SelectChannel { input, .. }
            | Op::SiLog { pred: input, .. } => vec![*input],
            Op::Elu(x) | Op::Sigmoid(x) | Op::Scale(x, _) | Op::AddScalar(x) | Op::Sum(x) | Op::Mean(x) => {
                vec![*x]
            }
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::Add(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::LpgExpand { theta, phi, n4, .. } => vec![*theta, *phi, *n4],
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation record: an append-only list of executed ops.
///
/// Nodes only reference earlier nodes, so reverse index order is a valid
/// backward schedule. Leaves created from tensors with `requires_grad` are the
/// differentiable inputs; everything else is constant.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn wrt(&self, var: Var) -> Option<&[f32]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn op_name(&self, var: Var) -> &'static str {
        self.nodes[var.0].op.name()
    }

    fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    fn data(&self, var: Var) -> &[f32] {
        self.nodes[var.0].value.data()
    }

    fn dims4(&self, var: Var) -> Result<(usize, usize, usize, usize)> {
        self.nodes[var.0].value.dims4()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let inputs = op.inputs();
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        debug_assert!(
            !inputs.iter().all(|v| self.nodes[v.0].value.all_finite()) || value.all_finite(),
            "{} produced non-finite values from finite inputs",
            op.name()
        );
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t.detached(),
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf that is differentiated iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.nodes.push(Node {
            value: t.detached(),
            op: Op::Leaf,
            needs_grad: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        dilation: usize,
        padding: usize,
    ) -> Result<Var> {
        let (b, c, h, w) = self.dims4(input)?;
        let (co, ci, kh, kw) = self.dims4(weight)?;
        let geom = ConvGeom::new([b, c, h, w], [co, ci, kh, kw], stride, dilation, padding)?;
        if let Some(bias) = bias {
            if self.shape(bias) != [co] {
                return Err(Error::invalid(format!(
                    "conv2d: bias shape {:?} does not match {co} output channels",
                    self.shape(bias)
                )));
            }
        }
        let out = conv::forward(
            &geom,
            self.data(input),
            self.data(weight),
            bias.map(|v| self.data(v)),
        );
        let value = Tensor::new(geom.output_shape(), out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    pub fn upsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(Error::invalid("upsample factor must be >= 1"));
        }
        let (b, c, h, w) = self.dims4(input)?;
        let (oh, ow) = (h * factor, w * factor);
        let src = self.data(input);
        let mut out = vec![0.0f32; b * c * oh * ow];
        for plane in 0..b * c {
            let s = &src[plane * h * w..(plane + 1) * h * w];
            let d = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for i in 0..oh {
                let srow = &s[(i / factor) * w..(i / factor + 1) * w];
                for (j, v) in d[i * ow..(i + 1) * ow].iter_mut().enumerate() {
                    *v = srow[j / factor];
                }
            }
        }
        let value = Tensor::new(vec![b, c, oh, ow], out)?;
        Ok(self.push(value, Op::Upsample { input, factor }))
    }

    /// Keeps the top-left element of every `factor x factor` block.
    pub fn downsample(&mut self, input: Var, factor: usize) -> Result<Var> {
        let (b, c, h, w) = self.dims4(input)?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(Error::invalid(format!(
                "downsample factor {factor} does not divide {h}x{w}"
            )));
        }
        let (oh, ow) = (h / factor, w / factor);
        let src = self.data(input);
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            for i in 0..oh {
                for j in 0..ow {
                    out.push(src[plane * h * w + i * factor * w + j * factor]);
                }
            }
        }
        let value = Tensor::new(vec![b, c, oh, ow], out)?;
        Ok(self.push(value, Op::Downsample { input, factor }))
    }

    fn map(&mut self, input: Var, f: impl Fn(f32) -> f32, op: Op) -> Var {
        let src = &self.nodes[input.0].value;
        let data = src.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(src.shape().to_vec(), data).expect("same shape");
        self.push(value, op)
    }

    pub fn elu(&mut self, input: Var) -> Var {
        self.map(input, |x| if x > 0.0 { x } else { x.exp_m1() }, Op::Elu(input))
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        self.map(input, |x| 1.0 / (1.0 + (-x).exp()), Op::Sigmoid(input))
    }

    pub fn scale(&mut self, input: Var, s: f32) -> Var {
        self.map(input, |x| x * s, Op::Scale(input, s))
    }

    pub fn add_scalar(&mut self, input: Var, s: f32) -> Var {
        self.map(input, |x| x + s, Op::AddScalar(input))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::invalid(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s: f64 = self.data(input).iter().map(|&x| x as f64).sum();
        self.push(Tensor::scalar(s as f32), Op::Sum(input))
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let d = self.data(input);
        let s: f64 = d.iter().map(|&x| x as f64).sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(s as f32), Op::Mean(input))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::invalid("concat of an empty list"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid(format!(
                "concat axis {axis} out of range for rank {}",
                base.len()
            )));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let agrees = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !agrees {
                return Err(Error::invalid(format!(
                    "concat: shape {s:?} incompatible with {base:?} on axis {axis}"
                )));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.data(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Slices channel `channel` of a `[B, C, H, W]` tensor into `[B, 1, H, W]`.
    pub fn select_channel(&mut self, input: Var, channel: usize) -> Result<Var> {
        let (b, c, h, w) = self.dims4(input)?;
        if channel >= c {
            return Err(Error::invalid(format!("channel {channel} out of range {c}")));
        }
        let plane = h * w;
        let src = self.data(input);
        let mut out = Vec::with_capacity(b * plane);
        for bi in 0..b {
            out.extend_from_slice(&src[(bi * c + channel) * plane..][..plane]);
        }
        let value = Tensor::new(vec![b, 1, h, w], out)?;
        Ok(self.push(value, Op::SelectChannel { input, channel }))
    }

    /// Differentiable plane-coefficient expansion; inputs are `[B, 1, h, w]`.
    pub fn lpg_expand(&mut self, theta: Var, phi: Var, n4: Var, grid: Arc<PatchGrid>) -> Result<Var> {
        let (b, c, h, w) = self.dims4(theta)?;
        if c != 1 || self.shape(phi) != self.shape(theta) || self.shape(n4) != self.shape(theta) {
            return Err(Error::invalid("lpg_expand: theta, phi, n4 must share a [B,1,h,w] shape"));
        }
        let out = lpg::expand_forward(
            self.data(theta),
            self.data(phi),
            self.data(n4),
            (b, h, w),
            &grid,
            lpg::DENOM_EPS,
        );
        let k = grid.k();
        let value = Tensor::new(vec![b, 1, h * k, w * k], out)?;
        Ok(self.push(value, Op::LpgExpand { theta, phi, n4, grid }))
    }

    /// Scale-invariant log loss of `pred` against a constant target; returns the
    /// scalar node and the loss breakdown.
    pub fn silog(
        &mut self,
        pred: Var,
        target: &[f32],
        mask: &[bool],
        cfg: &LossConfig,
    ) -> Result<(Var, LossBreakdown)> {
        let p = self.data(pred);
        let breakdown = loss::silog_loss(p, target, mask, cfg)?;
        let local_grad = loss::silog_grad(p, mask, cfg, &breakdown);
        let var = self.push(Tensor::scalar(breakdown.l as f32), Op::SiLog { pred, local_grad });
        Ok((var, breakdown))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &gy, &mut grads);
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, gy: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let mut acc = |var: Var, f: &dyn Fn(&mut [f32])| {
            let target = &self.nodes[var.0];
            if !target.needs_grad {
                return;
            }
            let slot = grads[var.0].get_or_insert_with(|| vec![0.0; target.value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let want = (
                    self.nodes[input.0].needs_grad,
                    self.nodes[weight.0].needs_grad,
                    bias.is_some_and(|b| self.nodes[b.0].needs_grad),
                );
                let g = conv::backward(geom, self.data(*input), self.data(*weight), gy, want);
                if let Some(gi) = g.input {
                    acc(*input, &|s| add_into(s, &gi));
                }
                if let Some(gw) = g.weight {
                    acc(*weight, &|s| add_into(s, &gw));
                }
                if let (Some(b), Some(gb)) = (bias, g.bias) {
                    acc(*b, &|s| add_into(s, &gb));
                }
            }
            Op::Upsample { input, factor } => {
                let (b, c, h, w) = self.nodes[input.0].value.dims4().expect("4-D");
                let f = *factor;
                let ow = w * f;
                acc(*input, &|s| {
                    for plane in 0..b * c {
                        let gsrc = &gy[plane * h * f * ow..(plane + 1) * h * f * ow];
                        let dst = &mut s[plane * h * w..(plane + 1) * h * w];
                        for i in 0..h * f {
                            for j in 0..ow {
                                dst[(i / f) * w + j / f] += gsrc[i * ow + j];
                            }
                        }
                    }
                });
            }
            Op::Downsample { input, factor } => {
                let (b, c, h, w) = self.nodes[input.0].value.dims4().expect("4-D");
                let f = *factor;
                let (oh, ow) = (h / f, w / f);
                acc(*input, &|s| {
                    for plane in 0..b * c {
                        for i in 0..oh {
                            for j in 0..ow {
                                s[plane * h * w + i * f * w + j * f] += gy[(plane * oh + i) * ow + j];
                            }
                        }
                    }
                });
            }
            Op::Elu(x) => {
                let xs = self.data(*x);
                let ys = node.value.data();
                acc(*x, &|s| {
                    for i in 0..s.len() {
                        let d = if xs[i] > 0.0 { 1.0 } else { ys[i] + 1.0 };
                        s[i] += gy[i] * d;
                    }
                });
            }
            Op::Sigmoid(x) => {
                let ys = node.value.data();
                acc(*x, &|s| {
                    for i in 0..s.len() {
                        s[i] += gy[i] * ys[i] * (1.0 - ys[i]);
                    }
                });
            }
            Op::Scale(x, k) => acc(*x, &|s| s.iter_mut().zip(gy).for_each(|(a, g)| *a += g * k)),
            Op::AddScalar(x) => acc(*x, &|s| add_into(s, gy)),
            Op::Add(a, b) => {
                acc(*a, &|s| add_into(s, gy));
                acc(*b, &|s| add_into(s, gy));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.data(*a), self.data(*b));
                acc(*a, &|s| {
                    for i in 0..s.len() {
                        s[i] += gy[i] * bv[i];
                    }
                });
                acc(*b, &|s| {
                    for i in 0..s.len() {
                        s[i] += gy[i] * av[i];
                    }
                });
            }
            Op::Sum(x) => acc(*x, &|s| s.iter_mut().for_each(|a| *a += gy[0])),
            Op::Mean(x) => {
                let n = self.nodes[x.0].value.numel() as f32;
                acc(*x, &|s| s.iter_mut().for_each(|a| *a += gy[0] / n));
            }
            Op::Concat { inputs, axis } => {
                let base = node.value.shape();
                let outer: usize = base[..*axis].iter().product();
                let inner: usize = base[axis + 1..].iter().product();
                let total = base[*axis] * inner;
                let mut offset = 0;
                for &v in inputs {
                    let chunk = self.shape(v)[*axis] * inner;
                    let start = offset;
                    acc(v, &|s| {
                        for o in 0..outer {
                            let src = &gy[o * total + start..o * total + start + chunk];
                            add_into(&mut s[o * chunk..(o + 1) * chunk], src);
                        }
                    });
                    offset += chunk;
                }
            }
            Op::SelectChannel { input, channel } => {
                let (b, c, h, w) = self.nodes[input.0].value.dims4().expect("4-D");
                let plane = h * w;
                acc(*input, &|s| {
                    for bi in 0..b {
                        add_into(
                            &mut s[(bi * c + channel) * plane..][..plane],
                            &gy[bi * plane..(bi + 1) * plane],
                        );
                    }
                });
            }
            Op::LpgExpand { theta, phi, n4, grid } => {
                let (b, _, h, w) = self.nodes[theta.0].value.dims4().expect("4-D");
                let (gt, gp, gn) = lpg::expand_backward(
                    self.data(*theta),
                    self.data(*phi),
                    self.data(*n4),
                    (b, h, w),
                    grid,
                    lpg::DENOM_EPS,
                    gy,
                );
                acc(*theta, &|s| add_into(s, &gt));
                acc(*phi, &|s| add_into(s, &gp));
                acc(*n4, &|s| add_into(s, &gn));
            }
            Op::SiLog { pred, local_grad } => {
                acc(*pred, &|s| s.iter_mut().zip(local_grad).for_each(|(a, g)| *a += g * gy[0]));
            }
        }
    }
}

fn add_into(dst: &mut [f32], src: &[f32]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f32]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[3], &[1.0, -2.0, 5.0]).with_grad());
        let s = g.sum(x);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_uses_both_operands() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[3], &[1.0, 2.0, 3.0]).with_grad());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 2.0]).with_grad());
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2], &[1.0, 2.0]));
        let w = g.leaf(&t(&[2], &[3.0, 4.0]).with_grad());
        let y = g.mul(x, w).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.wrt(x).is_none());
        assert_eq!(grads.wrt(w).unwrap(), &[1.0, 2.0]);
    }

    #[test]
    fn conv_identity_and_counting() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[1, 2, 3, 3], |i| i as f32));
        let eye = g.constant(t(&[2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]));
        let y = g.conv2d(x, eye, None, 1, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));

        let ones = g.constant(Tensor::full(&[1, 1, 4, 4], 1.0));
        let k = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
        let y = g.conv2d(ones, k, None, 1, 1, 1).unwrap();
        #[rustfmt::skip]
        let expected = [
            4.0, 6.0, 6.0, 4.0,
            6.0, 9.0, 9.0, 6.0,
            6.0, 9.0, 9.0, 6.0,
            4.0, 6.0, 6.0, 4.0,
        ];
        assert_eq!(g.value(y).data(), &expected);
    }

    #[test]
    fn conv_shape_errors() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(g.conv2d(x, w, None, 1, 1, 1).is_err());
        let w = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
        assert!(g.conv2d(x, w, None, 1, 3, 0).is_err());
        let bias = g.constant(Tensor::zeros(&[2]));
        assert!(g.conv2d(x, w, Some(bias), 1, 1, 1).is_err());
    }

    #[test]
    fn upsample_cases() {
        let mut g = Graph::new();
        let x = g.leaf(&Tensor::from_fn(&[1, 1, 2, 2], |i| i as f32).with_grad());
        let same = g.upsample(x, 1).unwrap();
        assert_eq!(g.value(same), g.value(x));
        let five = g.constant(Tensor::full(&[1, 1, 1, 1], 5.0));
        let up = g.upsample(five, 3).unwrap();
        assert_eq!(g.value(up).shape(), &[1, 1, 3, 3]);
        assert!(g.value(up).data().iter().all(|&v| v == 5.0));

        let up = g.upsample(x, 2).unwrap();
        let s = g.sum(up);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.wrt(x).unwrap(), &[4.0; 4]);
        let down = g.downsample(up, 2).unwrap();
        assert_eq!(g.value(down).data(), g.value(x).data());
        assert!(g.downsample(x, 3).is_err());
    }

    #[test]
    fn activations() {
        let mut g = Graph::new();
        let x = g.constant(t(&[3], &[0.0, 2.0, -80.0]));
        let s = g.sigmoid(x);
        assert_eq!(g.value(s).data()[0], 0.5);
        let e = g.elu(x);
        assert_eq!(g.value(e).data()[1], 2.0);
        assert!((g.value(e).data()[2] + 1.0).abs() < 1e-7);
    }

    #[test]
    fn concat_cases() {
        let mut g = Graph::new();
        let a = g.constant(t(&[1, 2], &[1.0, 2.0]));
        let b = g.constant(t(&[1, 3], &[3.0, 4.0, 5.0]));
        let one = g.concat(&[a], 0).unwrap();
        assert_eq!(g.value(one), g.value(a));
        let ab = g.concat(&[a, b], 1).unwrap();
        assert_eq!(g.value(ab).shape(), &[1, 5]);
        assert_eq!(g.value(ab).data(), &[1.0, 2.0, 3.0, 4.0, 5.0]);
        assert!(g.concat(&[a, b], 0).is_err());
        assert!(g.concat(&[], 0).is_err());
    }
}
