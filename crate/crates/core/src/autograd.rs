//! Define-by-run reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] is a tape: every operation appends a node holding the forward
//! value plus enough structure to push gradients back to its parents. Tape
//! order is creation order, which is already topological, so the backward
//! sweep is a single reverse pass. Each operation carries its analytic
//! adjoint; [`grad_check`] compares those against central finite
//! differences.

use crate::error::{Error, Result};
use crate::params::ProjectionParams;
use crate::tensor::{self, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Minimum(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    ClampMin(Var, f64),
    Sigmoid(Var),
    Exp(Var),
    LnClamped(Var, f64),
    SqrtClamped(Var, f64),
    Matmul(Var, Var),
    Transpose2(Var),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    /// Sum over axes, keeping reduced axes as extent 1.
    SumAxes(Var),
    Softmax(Var, usize),
    L2NormalizeLast(Var, f64),
    /// Global minimum as a scalar; gradient routes to the first argmin.
    MinAll(Var),
    /// y = x W + b over the trailing channel axis.
    Linear { x: Var, w: Var, b: Var },
    /// Batch norm in train mode over (B, c) with batch statistics.
    BatchNormTrain { x: Var, gamma: Var, beta: Var, eps: f64 },
    /// 3x3 stride-2 pad-1 convolution per frame of (t, H, W, c_in);
    /// weight layout (3, 3, c_in, c_out).
    Conv3x3s2 { x: Var, w: Var, b: Var },
    /// Batch-hard triplet over (B, D) embeddings with Euclidean distances.
    BatchHardTriplet { e: Var, labels: Vec<usize>, margin: f64 },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of one backward sweep, indexed by [`Var`]. Vars the objective
/// does not depend on have no entry.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn accum(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

/// Broadcast `g` up to `dims` (used by reduction adjoints).
fn broadcast_to(g: &Tensor, dims: &[usize]) -> Result<Tensor> {
    tensor::zip_broadcast(g, &Tensor::zeros(dims), |a, _| a)
}

impl Graph {
    pub fn new() -> Graph {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Insert a tensor as a differentiable input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Insert a tensor whose gradient nobody will read. Same mechanics as
    /// [`Graph::leaf`]; the distinct name documents intent at call sites.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.leaf(t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::add(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::sub(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::mul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::div(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Div(a, b)))
    }

    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::minimum(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Minimum(a, b)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).scale(c);
        self.push(v, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).add_scalar(c);
        self.push(v, Op::AddScalar(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).relu();
        self.push(v, Op::Relu(x))
    }

    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let v = self.value(x).clamp_min(floor);
        self.push(v, Op::ClampMin(x, floor))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).sigmoid();
        self.push(v, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let v = self.value(x).exp();
        self.push(v, Op::Exp(x))
    }

    pub fn ln_clamped(&mut self, x: Var, floor: f64) -> Var {
        let v = self.value(x).ln_clamped(floor);
        self.push(v, Op::LnClamped(x, floor))
    }

    pub fn sqrt_clamped(&mut self, x: Var, floor: f64) -> Var {
        let v = self.value(x).sqrt_clamped(floor);
        self.push(v, Op::SqrtClamped(x, floor))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = tensor::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Matmul(a, b)))
    }

    pub fn transpose2(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).transpose2()?;
        Ok(self.push(v, Op::Transpose2(x)))
    }

    pub fn reshape(&mut self, x: Var, dims: &[usize]) -> Result<Var> {
        let v = self.value(x).reshape(dims)?;
        Ok(self.push(v, Op::Reshape(x)))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = tensor::concat(&tensors, axis)?;
        Ok(self.push(v, Op::Concat(parts.to_vec(), axis)))
    }

    /// Stack a list of equally shaped rows into a matrix (rank must be 1).
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let mut reshaped = Vec::with_capacity(rows.len());
        for &r in rows {
            let width = self.value(r).len();
            reshaped.push(self.reshape(r, &[1, width])?);
        }
        self.concat(&reshaped, 0)
    }

    /// Sum over `axes`; reduced axes stay as extent 1.
    pub fn sum_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = tensor::sum_axes(self.value(x), axes, true)?;
        Ok(self.push(v, Op::SumAxes(x)))
    }

    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let count: usize = {
            let dims = self.value(x).dims();
            axes.iter().map(|&ax| dims[ax]).product()
        };
        let s = self.sum_axes(x, axes)?;
        Ok(self.scale(s, 1.0 / count as f64))
    }

    /// Reduce everything to a rank-0 scalar.
    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let axes: Vec<usize> = (0..self.value(x).rank()).collect();
        let s = self.sum_axes(x, &axes)?;
        self.reshape(s, &[])
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        let s = self.sum_all(x)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = tensor::softmax_axis(self.value(x), axis)?;
        Ok(self.push(v, Op::Softmax(x, axis)))
    }

    pub fn l2_normalize(&mut self, x: Var, eps: f64) -> Result<Var> {
        let v = tensor::l2_normalize(self.value(x), eps)?;
        Ok(self.push(v, Op::L2NormalizeLast(x, eps)))
    }

    pub fn min_all(&mut self, x: Var) -> Var {
        let (m, _) = self.value(x).min_all();
        self.push(Tensor::scalar(m), Op::MinAll(x))
    }

    /// Project the trailing channel axis: `y = x W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let p = ProjectionParams::new(self.value(w).clone(), self.value(b).clone())?;
        let v = crate::params::channel_project(self.value(x), &p)?;
        Ok(self.push(v, Op::Linear { x, w, b }))
    }

    /// Train-mode batch norm over `(B, c)` using this batch's statistics.
    /// Running-statistic bookkeeping is the caller's business (see
    /// [`crate::params::BatchNormParams::fold_running_stats`]).
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(Error::shape(format!("batch_norm wants (B, c), got {:?}", xv.dims())));
        }
        let (b_sz, c) = (xv.dims()[0], xv.dims()[1]);
        if b_sz < 2 {
            return Err(Error::invalid(format!(
                "batch_norm train mode needs a batch of at least 2, got {b_sz}"
            )));
        }
        if self.value(gamma).dims() != [c] || self.value(beta).dims() != [c] {
            return Err(Error::shape("batch_norm gamma/beta must be (c,)".to_string()));
        }
        let (mean, var) = crate::params::BatchNormParams::batch_stats(xv)?;
        let inv_std = var.map(|v| 1.0 / (v + eps).sqrt());
        let centered = tensor::sub(xv, &mean.reshape(&[1, c])?)?;
        let xhat = tensor::mul(&centered, &inv_std.reshape(&[1, c])?)?;
        let v = tensor::add(
            &tensor::mul(&xhat, &self.value(gamma).reshape(&[1, c])?)?,
            &self.value(beta).reshape(&[1, c])?,
        )?;
        Ok(self.push(v, Op::BatchNormTrain { x, gamma, beta, eps }))
    }

    /// 3x3 stride-2 pad-1 convolution applied to each frame.
    pub fn conv3x3_s2(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let v = conv_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push(v, Op::Conv3x3s2 { x, w, b }))
    }

    /// Batch-hard triplet loss over `(B, D)` embeddings: for each anchor the
    /// farthest same-label and the nearest other-label embedding form the
    /// hinge `max(0, d_ap - d_an + margin)`, averaged over anchors.
    pub fn batch_hard_triplet(&mut self, e: Var, labels: &[usize], margin: f64) -> Result<Var> {
        let (loss, _) = triplet_forward(self.value(e), labels, margin)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BatchHardTriplet { e, labels: labels.to_vec(), margin },
        ))
    }

    /// Reverse sweep from a scalar objective. Returns one gradient slot per
    /// node; slots the objective does not reach stay empty.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar objective, got shape {:?}",
                root_val.dims()
            )));
        }
        root_val.ensure_finite("objective")?;
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::full(root_val.dims(), 1.0));

        for i in (0..=root.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.push_back(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn push_back(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accum(&mut grads[a.0], tensor::reduce_to_shape(g, val(*a).dims()));
                accum(&mut grads[b.0], tensor::reduce_to_shape(g, val(*b).dims()));
            }
            Op::Sub(a, b) => {
                accum(&mut grads[a.0], tensor::reduce_to_shape(g, val(*a).dims()));
                accum(&mut grads[b.0], tensor::reduce_to_shape(&g.scale(-1.0), val(*b).dims()));
            }
            Op::Mul(a, b) => {
                let ga = tensor::zip_broadcast(g, val(*b), |u, v| u * v)?;
                let gb = tensor::zip_broadcast(g, val(*a), |u, v| u * v)?;
                accum(&mut grads[a.0], tensor::reduce_to_shape(&ga, val(*a).dims()));
                accum(&mut grads[b.0], tensor::reduce_to_shape(&gb, val(*b).dims()));
            }
            Op::Div(a, b) => {
                let ga = tensor::zip_broadcast(g, val(*b), |u, v| u / v)?;
                // d/db (a/b) = -a / b^2 = -y / b
                let gy = tensor::zip_broadcast(g, &self.nodes[i].value, |u, y| u * y)?;
                let gb = tensor::zip_broadcast(&gy, val(*b), |u, v| -u / v)?;
                accum(&mut grads[a.0], tensor::reduce_to_shape(&ga, val(*a).dims()));
                accum(&mut grads[b.0], tensor::reduce_to_shape(&gb, val(*b).dims()));
            }
            Op::Minimum(a, b) => {
                // ties route to the first operand
                let mask = tensor::zip_broadcast(val(*a), val(*b), |u, v| {
                    if u <= v {
                        1.0
                    } else {
                        0.0
                    }
                })?;
                let ga = tensor::mul(g, &mask)?;
                let gb = tensor::mul(g, &mask.map(|m| 1.0 - m))?;
                accum(&mut grads[a.0], tensor::reduce_to_shape(&ga, val(*a).dims()));
                accum(&mut grads[b.0], tensor::reduce_to_shape(&gb, val(*b).dims()));
            }
            Op::Scale(x, c) => accum(&mut grads[x.0], g.scale(*c)),
            Op::AddScalar(x) => accum(&mut grads[x.0], g.clone()),
            Op::Relu(x) => {
                let masked = tensor::zip_broadcast(g, val(*x), |u, v| if v > 0.0 { u } else { 0.0 })?;
                accum(&mut grads[x.0], masked);
            }
            Op::ClampMin(x, floor) => {
                let floor = *floor;
                let masked =
                    tensor::zip_broadcast(g, val(*x), |u, v| if v > floor { u } else { 0.0 })?;
                accum(&mut grads[x.0], masked);
            }
            Op::Sigmoid(x) => {
                let y = &self.nodes[i].value;
                let gx = tensor::zip_broadcast(g, y, |u, s| u * s * (1.0 - s))?;
                accum(&mut grads[x.0], gx);
            }
            Op::Exp(x) => {
                let y = &self.nodes[i].value;
                accum(&mut grads[x.0], tensor::mul(g, y)?);
            }
            Op::LnClamped(x, floor) => {
                let floor = *floor;
                let gx =
                    tensor::zip_broadcast(g, val(*x), |u, v| if v > floor { u / v } else { 0.0 })?;
                accum(&mut grads[x.0], gx);
            }
            Op::SqrtClamped(x, floor) => {
                let floor = *floor;
                let y = &self.nodes[i].value;
                let gx = {
                    let mut out = g.clone();
                    for ((o, &xv), &yv) in
                        out.data_mut().iter_mut().zip(val(*x).data()).zip(y.data())
                    {
                        *o = if xv > floor { *o * 0.5 / yv } else { 0.0 };
                    }
                    out
                };
                accum(&mut grads[x.0], gx);
            }
            Op::Matmul(a, b) => {
                let bt = val(*b).transpose2()?;
                let at = val(*a).transpose2()?;
                accum(&mut grads[a.0], tensor::matmul(g, &bt)?);
                accum(&mut grads[b.0], tensor::matmul(&at, g)?);
            }
            Op::Transpose2(x) => accum(&mut grads[x.0], g.transpose2()?),
            Op::Reshape(x) => accum(&mut grads[x.0], g.reshape(val(*x).dims())?),
            Op::Concat(parts, axis) => {
                let axis = *axis;
                let first = val(parts[0]);
                let inner: usize = first.dims()[axis + 1..].iter().product();
                let outer: usize = first.dims()[..axis].iter().product();
                let mut offset = 0usize;
                let total_block = g.len() / outer;
                for &p in parts {
                    let extent = val(p).dims()[axis];
                    let block = extent * inner;
                    let mut gp = Tensor::zeros(val(p).dims());
                    for o in 0..outer {
                        let src = o * total_block + offset;
                        gp.data_mut()[o * block..(o + 1) * block]
                            .copy_from_slice(&g.data()[src..src + block]);
                    }
                    accum(&mut grads[p.0], gp);
                    offset += block;
                }
            }
            Op::SumAxes(x) => {
                accum(&mut grads[x.0], broadcast_to(g, val(*x).dims())?);
            }
            Op::Softmax(x, axis) => {
                let y = &self.nodes[i].value;
                let gy = tensor::mul(g, y)?;
                let s = tensor::sum_axes(&gy, &[*axis], true)?;
                let gx = tensor::mul(&tensor::sub(g, &s)?, y)?;
                accum(&mut grads[x.0], gx);
            }
            Op::L2NormalizeLast(x, eps) => {
                let xv = val(*x);
                let y = &self.nodes[i].value;
                let width = *xv.dims().last().unwrap();
                let mut gx = Tensor::zeros(xv.dims());
                for r in 0..xv.len() / width {
                    let xs = &xv.data()[r * width..(r + 1) * width];
                    let ys = &y.data()[r * width..(r + 1) * width];
                    let gs = &g.data()[r * width..(r + 1) * width];
                    let out = &mut gx.data_mut()[r * width..(r + 1) * width];
                    let norm = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
                    if norm > *eps {
                        let dot = gs.iter().zip(ys).map(|(u, v)| u * v).sum::<f64>();
                        for k in 0..width {
                            out[k] = (gs[k] - ys[k] * dot) / norm;
                        }
                    } else {
                        for k in 0..width {
                            out[k] = gs[k] / eps;
                        }
                    }
                }
                accum(&mut grads[x.0], gx);
            }
            Op::MinAll(x) => {
                let (_, at) = val(*x).min_all();
                let mut gx = Tensor::zeros(val(*x).dims());
                gx.data_mut()[at] = g.item();
                accum(&mut grads[x.0], gx);
            }
            Op::Linear { x, w, b } => {
                let xv = val(*x);
                let (c_in, c_out) = (val(*w).dims()[0], val(*w).dims()[1]);
                let rows = xv.len() / c_in;
                let xm = xv.reshape(&[rows, c_in])?;
                let gm = g.reshape(&[rows, c_out])?;
                let gx = tensor::matmul(&gm, &val(*w).transpose2()?)?.reshape(xv.dims())?;
                let gw = tensor::matmul(&xm.transpose2()?, &gm)?;
                let gb = tensor::sum_axes(&gm, &[0], false)?;
                accum(&mut grads[x.0], gx);
                accum(&mut grads[w.0], gw);
                accum(&mut grads[b.0], gb);
            }
            Op::BatchNormTrain { x, gamma, beta, eps } => {
                let xv = val(*x);
                let (b_sz, c) = (xv.dims()[0], xv.dims()[1]);
                let (mean, var) = crate::params::BatchNormParams::batch_stats(xv)?;
                let inv_std = var.map(|v| 1.0 / (v + eps).sqrt());
                let centered = tensor::sub(xv, &mean.reshape(&[1, c])?)?;
                let xhat = tensor::mul(&centered, &inv_std.reshape(&[1, c])?)?;
                let gxhat_sum = tensor::sum_axes(&tensor::mul(g, &xhat)?, &[0], false)?;
                let g_sum = tensor::sum_axes(g, &[0], false)?;
                accum(&mut grads[gamma.0], gxhat_sum.clone());
                accum(&mut grads[beta.0], g_sum.clone());
                // dx = gamma * inv_std / B * (B g - sum(g) - xhat * sum(g xhat))
                let bf = b_sz as f64;
                let coeff = tensor::mul(val(*gamma), &inv_std)?.scale(1.0 / bf);
                let term = tensor::sub(
                    &tensor::sub(&g.scale(bf), &g_sum.reshape(&[1, c])?)?,
                    &tensor::mul(&xhat, &gxhat_sum.reshape(&[1, c])?)?,
                )?;
                let gx = tensor::mul(&term, &coeff.reshape(&[1, c])?)?;
                accum(&mut grads[x.0], gx);
            }
            Op::Conv3x3s2 { x, w, b } => {
                let (gx, gw, gb) = conv_backward(val(*x), val(*w), g)?;
                accum(&mut grads[x.0], gx);
                accum(&mut grads[w.0], gw);
                accum(&mut grads[b.0], gb);
                let _ = b;
            }
            Op::BatchHardTriplet { e, labels, margin } => {
                let ge = triplet_backward(val(*e), labels, *margin, g.item())?;
                accum(&mut grads[e.0], ge);
            }
        }
        Ok(())
    }
}

fn conv_out_extent(n: usize) -> usize {
    (n - 1) / 2 + 1
}

fn check_conv_shapes(x: &Tensor, w: &Tensor) -> Result<(usize, usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::shape(format!("conv input must be (t,H,W,c), got {:?}", x.dims())));
    }
    if w.rank() != 4 || w.dims()[0] != 3 || w.dims()[1] != 3 {
        return Err(Error::shape(format!("conv weight must be (3,3,c_in,c_out), got {:?}", w.dims())));
    }
    let (t, h, wd, c_in) = (x.dims()[0], x.dims()[1], x.dims()[2], x.dims()[3]);
    if w.dims()[2] != c_in {
        return Err(Error::shape(format!(
            "conv weight expects {} input channels, feature map has {c_in}",
            w.dims()[2]
        )));
    }
    Ok((t, h, wd, c_in, w.dims()[3]))
}

/// Gather the 3x3 stride-2 pad-1 neighborhoods of one frame into a
/// (out_h*out_w, 9*c_in) matrix whose column order matches the weight
/// reshaped as (9*c_in, c_out).
fn im2col(frame: &[f64], h: usize, w: usize, c_in: usize) -> Tensor {
    let (oh, ow) = (conv_out_extent(h), conv_out_extent(w));
    let mut cols = Tensor::zeros(&[oh * ow, 9 * c_in]);
    let data = cols.data_mut();
    for oy in 0..oh {
        for ox in 0..ow {
            let row = (oy * ow + ox) * 9 * c_in;
            for ky in 0..3 {
                let iy = (oy * 2 + ky) as isize - 1;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let ix = (ox * 2 + kx) as isize - 1;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = ((iy as usize) * w + ix as usize) * c_in;
                    let dst = row + (ky * 3 + kx) * c_in;
                    data[dst..dst + c_in].copy_from_slice(&frame[src..src + c_in]);
                }
            }
        }
    }
    cols
}

fn conv_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (t, h, wd, c_in, c_out) = check_conv_shapes(x, w)?;
    if b.dims() != [c_out] {
        return Err(Error::shape("conv bias must be (c_out,)".to_string()));
    }
    let (oh, ow) = (conv_out_extent(h), conv_out_extent(wd));
    let wmat = w.reshape(&[9 * c_in, c_out])?;
    let frame_len = h * wd * c_in;
    let mut out = Tensor::zeros(&[t, oh, ow, c_out]);
    let out_frame = oh * ow * c_out;
    for f in 0..t {
        let cols = im2col(&x.data()[f * frame_len..(f + 1) * frame_len], h, wd, c_in);
        let y = tensor::add(&tensor::matmul(&cols, &wmat)?, &b.reshape(&[1, c_out])?)?;
        out.data_mut()[f * out_frame..(f + 1) * out_frame].copy_from_slice(y.data());
    }
    Ok(out)
}

fn conv_backward(x: &Tensor, w: &Tensor, g: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (t, h, wd, c_in, c_out) = check_conv_shapes(x, w)?;
    let (oh, ow) = (conv_out_extent(h), conv_out_extent(wd));
    let wmat = w.reshape(&[9 * c_in, c_out])?;
    let wmat_t = wmat.transpose2()?;
    let frame_len = h * wd * c_in;
    let out_frame = oh * ow * c_out;
    let mut gx = Tensor::zeros(x.dims());
    let mut gw = Tensor::zeros(&[9 * c_in, c_out]);
    let mut gb = Tensor::zeros(&[c_out]);
    for f in 0..t {
        let cols = im2col(&x.data()[f * frame_len..(f + 1) * frame_len], h, wd, c_in);
        let gf = Tensor::from_vec(
            &[oh * ow, c_out],
            g.data()[f * out_frame..(f + 1) * out_frame].to_vec(),
        )?;
        let gwf = tensor::matmul(&cols.transpose2()?, &gf)?;
        for (a, &d) in gw.data_mut().iter_mut().zip(gwf.data()) {
            *a += d;
        }
        for row in gf.data().chunks(c_out) {
            for (a, &d) in gb.data_mut().iter_mut().zip(row) {
                *a += d;
            }
        }
        // scatter cols-gradient back through the im2col gather
        let gcols = tensor::matmul(&gf, &wmat_t)?;
        let gxf = &mut gx.data_mut()[f * frame_len..(f + 1) * frame_len];
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (oy * ow + ox) * 9 * c_in;
                for ky in 0..3 {
                    let iy = (oy * 2 + ky) as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * 2 + kx) as isize - 1;
                        if ix < 0 || ix >= wd as isize {
                            continue;
                        }
                        let dst = ((iy as usize) * wd + ix as usize) * c_in;
                        let src = row + (ky * 3 + kx) * c_in;
                        for ci in 0..c_in {
                            gxf[dst + ci] += gcols.data()[src + ci];
                        }
                    }
                }
            }
        }
    }
    Ok((gx, gw.reshape(w.dims())?, gb))
}

fn pairwise_euclidean(e: &Tensor) -> (usize, Vec<f64>) {
    let (b, d) = (e.dims()[0], e.dims()[1]);
    let mut dist = vec![0.0f64; b * b];
    for i in 0..b {
        for j in (i + 1)..b {
            let (ri, rj) = (&e.data()[i * d..(i + 1) * d], &e.data()[j * d..(j + 1) * d]);
            let s: f64 = ri.iter().zip(rj).map(|(&u, &v)| (u - v) * (u - v)).sum();
            let dd = s.sqrt();
            dist[i * b + j] = dd;
            dist[j * b + i] = dd;
        }
    }
    (b, dist)
}

struct TripletPick {
    hardest_pos: usize,
    hardest_neg: usize,
    active: bool,
}

fn triplet_select(
    e: &Tensor,
    labels: &[usize],
    margin: f64,
) -> Result<(f64, Vec<TripletPick>, Vec<f64>)> {
    if e.rank() != 2 {
        return Err(Error::shape(format!("triplet wants (B, D) embeddings, got {:?}", e.dims())));
    }
    let (b, dist) = pairwise_euclidean(e);
    if labels.len() != b {
        return Err(Error::invalid(format!("{} labels for batch of {b}", labels.len())));
    }
    let mut picks = Vec::with_capacity(b);
    let mut total = 0.0f64;
    for i in 0..b {
        let mut d_ap = f64::NEG_INFINITY;
        let mut d_an = f64::INFINITY;
        let (mut jp, mut jn) = (usize::MAX, usize::MAX);
        for j in 0..b {
            if j == i {
                continue;
            }
            let d = dist[i * b + j];
            if labels[j] == labels[i] {
                if d > d_ap {
                    d_ap = d;
                    jp = j;
                }
            } else if d < d_an {
                d_an = d;
                jn = j;
            }
        }
        if jp == usize::MAX || jn == usize::MAX {
            return Err(Error::invalid(format!(
                "anchor {i} needs at least one positive and one negative in the batch"
            )));
        }
        let hinge = (d_ap - d_an + margin).max(0.0);
        total += hinge;
        picks.push(TripletPick { hardest_pos: jp, hardest_neg: jn, active: hinge > 0.0 });
    }
    Ok((total / b as f64, picks, dist))
}

fn triplet_forward(e: &Tensor, labels: &[usize], margin: f64) -> Result<(f64, ())> {
    let (loss, _, _) = triplet_select(e, labels, margin)?;
    Ok((loss, ()))
}

fn triplet_backward(e: &Tensor, labels: &[usize], margin: f64, g: f64) -> Result<Tensor> {
    let (_, picks, dist) = triplet_select(e, labels, margin)?;
    let (b, d) = (e.dims()[0], e.dims()[1]);
    let mut ge = Tensor::zeros(e.dims());
    let w = g / b as f64;
    // d(i,j)/de_i = (e_i - e_j) / d, zero at coincident points
    let push = |i: usize, j: usize, sign: f64, ge: &mut Tensor| {
        let dd = dist[i * b + j];
        if dd < 1e-12 {
            return;
        }
        for k in 0..d {
            let diff = (e.data()[i * d + k] - e.data()[j * d + k]) / dd;
            ge.data_mut()[i * d + k] += sign * w * diff;
            ge.data_mut()[j * d + k] -= sign * w * diff;
        }
    };
    for (i, pick) in picks.iter().enumerate() {
        if !pick.active {
            continue;
        }
        push(i, pick.hardest_pos, 1.0, &mut ge);
        push(i, pick.hardest_neg, -1.0, &mut ge);
    }
    Ok(ge)
}

/// Compare the tape's analytic gradient against central finite differences.
///
/// `build` must assemble a scalar objective from the single input leaf. The
/// returned figure is the worst elementwise relative error
/// `|a - n| / max(1, |a|, |n|)`; for well-behaved closures at generic
/// (locally differentiable) inputs it sits orders of magnitude below the
/// step size. Non-finite objectives or gradients are errors.
pub fn grad_check<F>(build: F, input: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::invalid("grad_check step must be positive".to_string()));
    }
    let mut g = Graph::new();
    let x = g.leaf(input.clone());
    let out = build(&mut g, x)?;
    if g.value(out).len() != 1 {
        return Err(Error::invalid(format!(
            "grad_check objective must be scalar, got {:?}",
            g.value(out).dims()
        )));
    }
    let grads = g.backward(out)?;
    let analytic = match grads.get(x) {
        Some(t) => t.clone(),
        None => Tensor::zeros(input.dims()),
    };
    analytic.ensure_finite("analytic gradient")?;

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.leaf(probe.clone());
        let out = build(&mut g, x)?;
        let v = g.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective".to_string()));
        }
        Ok(v)
    };

    let mut worst = 0.0f64;
    let mut probe = input.clone();
    for i in 0..input.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - step;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
