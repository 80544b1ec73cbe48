//! Dense row-major tensors and the elementwise / reduction kernels the rest
//! of the crate is built on.
//!
//! Feature maps follow the `(t, h, w, c)` layout with the channel axis
//! fastest in memory. In-memory arithmetic runs in f64 so reductions and
//! finite-difference checks are not limited by storage precision; the
//! on-disk formats store f32 (see [`crate::archive`]).

use crate::error::{Error, Result};

/// Axis indices for `(t, h, w, c)` feature maps.
pub const AXIS_T: usize = 0;
pub const AXIS_H: usize = 1;
pub const AXIS_W: usize = 2;
pub const AXIS_C: usize = 3;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let head: Vec<f64> = self.data.iter().copied().take(8).collect();
        let ellipsis = if self.data.len() > 8 { ", .." } else { "" };
        write!(f, "Tensor{:?} [{:?}{}]", self.dims, head, ellipsis)
    }
}

fn strides_of(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![0usize; dims.len()];
    let mut acc = 1usize;
    for i in (0..dims.len()).rev() {
        s[i] = acc;
        acc *= dims[i];
    }
    s
}

fn product(dims: &[usize]) -> usize {
    dims.iter().product()
}

impl Tensor {
    /// Zero-filled tensor. Every extent must be positive; rank 0 is the
    /// scalar tensor.
    pub fn zeros(dims: &[usize]) -> Tensor {
        assert!(dims.iter().all(|&d| d > 0), "zero extent in {dims:?}");
        Tensor { dims: dims.to_vec(), data: vec![0.0; product(dims)] }
    }

    pub fn full(dims: &[usize], value: f64) -> Tensor {
        let mut t = Tensor::zeros(dims);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor { dims: vec![], data: vec![value] }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Tensor> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!("zero extent in {dims:?}")));
        }
        if product(dims) != data.len() {
            return Err(Error::shape(format!(
                "{} values do not fill shape {dims:?}",
                data.len()
            )));
        }
        let t = Tensor { dims: dims.to_vec(), data };
        t.ensure_finite("tensor literal")?;
        Ok(t)
    }

    pub fn rand_uniform<R: rand::Rng>(dims: &[usize], lo: f64, hi: f64, rng: &mut R) -> Tensor {
        let mut t = Tensor::zeros(dims);
        for v in &mut t.data {
            *v = rng.gen_range(lo..hi);
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on shape {:?}", self.dims);
        self.data[0]
    }

    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        if product(dims) != self.data.len() || dims.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!(
                "cannot view {:?} as {dims:?}",
                self.dims
            )));
        }
        Ok(Tensor { dims: dims.to_vec(), data: self.data.clone() })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(|v| v + c)
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn clamp_min(&self, floor: f64) -> Tensor {
        self.map(|v| v.max(floor))
    }

    pub fn sigmoid(&self) -> Tensor {
        self.map(sigmoid)
    }

    pub fn exp(&self) -> Tensor {
        self.map(f64::exp)
    }

    /// Natural log with the argument clamped from below, so zero inputs stay
    /// finite.
    pub fn ln_clamped(&self, floor: f64) -> Tensor {
        self.map(|v| v.max(floor).ln())
    }

    pub fn sqrt_clamped(&self, floor: f64) -> Tensor {
        self.map(|v| v.max(floor).sqrt())
    }

    /// Global minimum and the flat index of its first occurrence.
    pub fn min_all(&self) -> (f64, usize) {
        let mut best = f64::INFINITY;
        let mut at = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v < best {
                best = v;
                at = i;
            }
        }
        (best, at)
    }

    /// 2-D transpose.
    pub fn transpose2(&self) -> Result<Tensor> {
        if self.rank() != 2 {
            return Err(Error::shape(format!("transpose2 on rank {}", self.rank())));
        }
        let (m, n) = (self.dims[0], self.dims[1]);
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..m {
            for j in 0..n {
                out.data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(out)
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Broadcast result shape under trailing-axis alignment: extents must match
/// or one of them must be 1.
pub fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for k in 0..rank {
        let da = if k < a.len() { a[a.len() - 1 - k] } else { 1 };
        let db = if k < b.len() { b[b.len() - 1 - k] } else { 1 };
        if da == db || da == 1 || db == 1 {
            out[rank - 1 - k] = da.max(db);
        } else {
            return Err(Error::shape(format!("cannot broadcast {a:?} with {b:?}")));
        }
    }
    Ok(out)
}

/// Strides of `dims` padded/aligned to `out_dims`, with stride 0 on
/// broadcast axes. Offsets computed with these strides walk the original
/// data while an odometer walks the output shape.
fn broadcast_strides(dims: &[usize], out_dims: &[usize]) -> Vec<usize> {
    let native = strides_of(dims);
    let rank = out_dims.len();
    let mut s = vec![0usize; rank];
    for k in 0..dims.len() {
        let ax_in = dims.len() - 1 - k;
        let ax_out = rank - 1 - k;
        s[ax_out] = if dims[ax_in] == 1 { 0 } else { native[ax_in] };
    }
    s
}

/// Elementwise combine with broadcasting.
pub fn zip_broadcast(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.dims == b.dims {
        let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
        return Ok(Tensor { dims: a.dims.clone(), data });
    }
    let out_dims = broadcast_shape(&a.dims, &b.dims)?;
    let sa = broadcast_strides(&a.dims, &out_dims);
    let sb = broadcast_strides(&b.dims, &out_dims);
    let total = product(&out_dims);
    let mut data = Vec::with_capacity(total);
    let rank = out_dims.len();
    let mut idx = vec![0usize; rank];
    let (mut oa, mut ob) = (0usize, 0usize);
    for _ in 0..total {
        data.push(f(a.data[oa], b.data[ob]));
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oa += sa[ax];
            ob += sb[ax];
            if idx[ax] < out_dims[ax] {
                break;
            }
            idx[ax] = 0;
            oa -= sa[ax] * out_dims[ax];
            ob -= sb[ax] * out_dims[ax];
        }
    }
    Ok(Tensor { dims: out_dims, data })
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast(a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast(a, b, |x, y| x - y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast(a, b, |x, y| x * y)
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast(a, b, |x, y| x / y)
}

pub fn minimum(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    zip_broadcast(a, b, f64::min)
}

/// Sum a broadcast-expanded tensor back down to `dims` (the adjoint of
/// broadcasting). Used by reverse-mode gradients.
pub fn reduce_to_shape(g: &Tensor, dims: &[usize]) -> Tensor {
    if g.dims == dims {
        return g.clone();
    }
    let mut out = Tensor::zeros(dims);
    let so = broadcast_strides(dims, &g.dims);
    let rank = g.dims.len();
    let mut idx = vec![0usize; rank];
    let mut oo = 0usize;
    for &v in &g.data {
        out.data[oo] += v;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oo += so[ax];
            if idx[ax] < g.dims[ax] {
                break;
            }
            idx[ax] = 0;
            oo -= so[ax] * g.dims[ax];
        }
    }
    out
}

/// `(m, k) x (k, n)` matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::shape(format!(
            "matmul needs two matrices, got ranks {} and {}",
            a.rank(),
            b.rank()
        )));
    }
    let (m, k) = (a.dims[0], a.dims[1]);
    let (kb, n) = (b.dims[0], b.dims[1]);
    if k != kb {
        return Err(Error::shape(format!(
            "matmul inner extents differ: {:?} x {:?}",
            a.dims, b.dims
        )));
    }
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (kk, &aik) in arow.iter().enumerate() {
            let brow = &b.data[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
    Ok(out)
}

/// Numerically stable softmax along one axis (max subtraction before exp).
pub fn softmax_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= x.rank() {
        return Err(Error::invalid(format!(
            "softmax axis {axis} out of range for shape {:?}",
            x.dims
        )));
    }
    let extent = x.dims[axis];
    if extent == 0 {
        return Err(Error::invalid("softmax over an empty axis".to_string()));
    }
    let stride: usize = x.dims[axis + 1..].iter().product();
    let outer: usize = x.dims[..axis].iter().product();
    let mut out = x.clone();
    for o in 0..outer {
        for i in 0..stride {
            let base = o * extent * stride + i;
            let mut max = f64::NEG_INFINITY;
            for j in 0..extent {
                max = max.max(out.data[base + j * stride]);
            }
            let mut sum = 0.0f64;
            for j in 0..extent {
                let e = (out.data[base + j * stride] - max).exp();
                out.data[base + j * stride] = e;
                sum += e;
            }
            for j in 0..extent {
                out.data[base + j * stride] /= sum;
            }
        }
    }
    Ok(out)
}

/// Normalize each slice along the last axis to unit Euclidean length. The
/// norm is clamped from below by `eps`, so zero vectors pass through as
/// zero instead of dividing by zero.
pub fn l2_normalize(x: &Tensor, eps: f64) -> Result<Tensor> {
    if x.rank() == 0 {
        return Err(Error::shape("l2_normalize on a scalar".to_string()));
    }
    if eps <= 0.0 {
        return Err(Error::invalid("l2_normalize eps must be positive".to_string()));
    }
    let width = *x.dims.last().unwrap();
    let mut out = x.clone();
    for row in out.data.chunks_mut(width) {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        let denom = norm.max(eps);
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    Ok(out)
}

fn check_axes(axes: &[usize], rank: usize) -> Result<()> {
    for (i, &ax) in axes.iter().enumerate() {
        if ax >= rank {
            return Err(Error::invalid(format!("axis {ax} out of range for rank {rank}")));
        }
        if axes[..i].contains(&ax) {
            return Err(Error::invalid(format!("axis {ax} repeated")));
        }
    }
    Ok(())
}

/// Sum over `axes`. With `keepdims` the reduced axes stay as extent 1.
pub fn sum_axes(x: &Tensor, axes: &[usize], keepdims: bool) -> Result<Tensor> {
    check_axes(axes, x.rank())?;
    let mut kept_dims: Vec<usize> = x.dims.clone();
    for &ax in axes {
        kept_dims[ax] = 1;
    }
    let mut out = Tensor::zeros(&kept_dims);
    let so = broadcast_strides(&kept_dims, &x.dims);
    let rank = x.dims.len();
    let mut idx = vec![0usize; rank];
    let mut oo = 0usize;
    for &v in &x.data {
        out.data[oo] += v;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            oo += so[ax];
            if idx[ax] < x.dims[ax] {
                break;
            }
            idx[ax] = 0;
            oo -= so[ax] * x.dims[ax];
        }
    }
    if keepdims {
        Ok(out)
    } else {
        let dims: Vec<usize> = x
            .dims
            .iter()
            .enumerate()
            .filter(|(i, _)| !axes.contains(i))
            .map(|(_, &d)| d)
            .collect();
        out.reshape(&dims)
    }
}

/// Arithmetic mean over `axes`.
pub fn mean_axes(x: &Tensor, axes: &[usize], keepdims: bool) -> Result<Tensor> {
    let count: usize = axes.iter().map(|&ax| x.dims[ax]).product();
    Ok(sum_axes(x, axes, keepdims)?.scale(1.0 / count as f64))
}

/// Concatenate along `axis`; all other extents must agree.
pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::invalid("concat of zero tensors".to_string()))?;
    if axis >= first.rank() {
        return Err(Error::invalid(format!(
            "concat axis {axis} out of range for rank {}",
            first.rank()
        )));
    }
    let mut axis_total = 0usize;
    for p in parts {
        if p.rank() != first.rank() {
            return Err(Error::shape("concat rank mismatch".to_string()));
        }
        for ax in 0..first.rank() {
            if ax != axis && p.dims[ax] != first.dims[ax] {
                return Err(Error::shape(format!(
                    "concat extent mismatch on axis {ax}: {:?} vs {:?}",
                    p.dims, first.dims
                )));
            }
        }
        axis_total += p.dims[axis];
    }
    let mut out_dims = first.dims.clone();
    out_dims[axis] = axis_total;
    let inner: usize = first.dims[axis + 1..].iter().product();
    let outer: usize = first.dims[..axis].iter().product();
    let mut data = Vec::with_capacity(product(&out_dims));
    for o in 0..outer {
        for p in parts {
            let block = p.dims[axis] * inner;
            data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
        }
    }
    Ok(Tensor { dims: out_dims, data })
}

/// Rank-4 `(t, h, w, c)` feature map carrier. Values are stored f32 to match
/// the archive payloads; computation converts to [`Tensor`].
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    t: usize,
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(t: usize, h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<FeatureMap> {
        if t == 0 || h == 0 || w == 0 || c == 0 {
            return Err(Error::shape(format!("feature map with zero extent ({t},{h},{w},{c})")));
        }
        if data.len() != t * h * w * c {
            return Err(Error::shape(format!(
                "{} values do not fill ({t},{h},{w},{c})",
                data.len()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature map".to_string()));
        }
        Ok(FeatureMap { t, h, w, c, data })
    }

    pub fn zeros(t: usize, h: usize, w: usize, c: usize) -> FeatureMap {
        FeatureMap { t, h, w, c, data: vec![0.0; t * h * w * c] }
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn c(&self) -> usize {
        self.c
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.t, self.h, self.w, self.c]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn get(&self, ti: usize, hi: usize, wi: usize, ci: usize) -> f32 {
        self.data[((ti * self.h + hi) * self.w + wi) * self.c + ci]
    }

    pub fn set(&mut self, ti: usize, hi: usize, wi: usize, ci: usize, v: f32) {
        self.data[((ti * self.h + hi) * self.w + wi) * self.c + ci] = v;
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor {
            dims: vec![self.t, self.h, self.w, self.c],
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn from_tensor(x: &Tensor) -> Result<FeatureMap> {
        if x.rank() != 4 {
            return Err(Error::shape(format!(
                "feature map needs rank 4, got {:?}",
                x.dims
            )));
        }
        x.ensure_finite("feature map")?;
        Ok(FeatureMap {
            t: x.dims[0],
            h: x.dims[1],
            w: x.dims[2],
            c: x.dims[3],
            data: x.data.iter().map(|&v| v as f32).collect(),
        })
    }

    /// Mean over a subset of the spatial/temporal axes (channels survive).
    pub fn mean_pool(&self, axes: &[usize]) -> Result<Tensor> {
        if axes.iter().any(|&ax| ax == AXIS_C) {
            return Err(Error::invalid("mean_pool cannot reduce the channel axis".to_string()));
        }
        mean_axes(&self.to_tensor(), axes, false)
    }
}
