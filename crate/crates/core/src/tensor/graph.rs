use std::collections::{HashMap, HashSet};

use super::kernels::{col2im, im2col, matmul, Patch};
use super::params::{ParamId, ParamStore};
use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, pad: usize) -> Self {
        Self { stride, pad }
    }

    /// Output extent of a cross-correlation over `extent` with a `kernel` window.
    pub fn conv_out(&self, extent: usize, kernel: usize) -> Option<usize> {
        let padded = extent + 2 * self.pad;
        (self.stride > 0 && padded >= kernel).then(|| (padded - kernel) / self.stride + 1)
    }

    /// Output extent of the transposed convolution.
    pub fn transpose_out(&self, extent: usize, kernel: usize) -> Option<usize> {
        let full = (extent.checked_sub(1)?) * self.stride + kernel;
        (self.stride > 0 && full > 2 * self.pad).then(|| full - 2 * self.pad)
    }
}

/// Batch-norm running statistics, updated in place by train-mode forwards.
pub struct RunningStats<'a, T> {
    pub mean: &'a mut [T],
    pub var: &'a mut [T],
    pub momentum: f64,
}

pub(crate) const BN_EPS: f64 = 1e-5;
const PROB_CLAMP: f64 = 1e-7;

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    Abs(Var),
    Log(Var),
    Exp(Var),
    Sigmoid(Var),
    LeakyRelu(Var, T),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        patch: Patch,
        cols: Vec<T>,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        patch: Patch,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    AvgPool(Var),
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    L1(Var, Var),
    L2(Var, Var),
    Bce(Var, Var),
    Softmax(Var),
    CrossEntropy(Var, Var),
    PadTime(Var),
    CropTime(Var),
    TimeDiff(Var),
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// A tape of tensor operations supporting one reverse-mode sweep.
///
/// Nodes are appended in evaluation order, so the index order is a
/// topological order and `backward` simply walks it in reverse.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    bindings: HashMap<ParamId, Var>,
    frozen: HashSet<u64>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            bindings: HashMap::new(),
            frozen: HashSet::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf input, optionally tracked for gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Parameters of `store` bind as constants from now on. Earlier bindings
    /// are forgotten, so later uses see the store's current values.
    pub fn freeze(&mut self, store: &ParamStore<T>) {
        self.frozen.insert(store.id());
        self.bindings.retain(|id, _| id.store_id() != store.id());
    }

    /// Clears every gradient so the graph supports another sweep.
    pub fn reset_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.backward_done = false;
    }

    /// Binds a stored parameter as a leaf. Repeated binds of the same
    /// parameter share one node, so gradients from every use accumulate.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.bindings.get(&id) {
            return v;
        }
        let trainable = !self.frozen.contains(&store.id()) && store.is_trainable(id);
        let v = self.leaf(store.value(id).clone(), trainable);
        if trainable {
            self.bindings.insert(id, v);
        }
        v
    }

    pub(crate) fn binding(&self, id: ParamId) -> Option<Var> {
        self.bindings.get(&id).copied()
    }

    /// A constant copy of `v`, cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(&[a]);
        self.push(value, op, rg)
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let value = if av.shape() == bv.shape() {
            Tensor::new(
                av.shape(),
                av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect(),
            )?
        } else if bv.len() == 1 {
            let y = bv.item();
            av.map(|x| f(x, y))
        } else if av.len() == 1 {
            let x = av.item();
            bv.map(|y| f(x, y))
        } else {
            return Err(Error::Shape(format!(
                "elementwise operands {:?} and {:?}",
                av.shape(),
                bv.shape()
            )));
        };
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Var {
        self.unary(a, Op::MulScalar(a, s), |x| x * s)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, Op::Abs(a), |x| x.abs())
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), |x| x.ln())
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), |x| x.exp())
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(
            a,
            Op::LeakyRelu(a, slope),
            move |x| if x > T::zero() { x } else { x * slope },
        )
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Cross-correlation of `[N, C, H, W]` input with `[K, C, kh, kw]` kernels.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geo: ConvGeometry) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).dims4()?;
        let [k, kc, kh, kw] = self.value(w).dims4()?;
        if kc != c {
            return Err(Error::Shape(format!(
                "conv2d input has {c} channels, kernels expect {kc}"
            )));
        }
        check_bias(self, b, k)?;
        let (Some(oh), Some(ow)) = (geo.conv_out(h, kh), geo.conv_out(wd, kw)) else {
            return Err(Error::Geometry(format!(
                "conv2d {h}x{wd} input, {kh}x{kw} kernel, stride {}, pad {}",
                geo.stride, geo.pad
            )));
        };
        let patch = Patch {
            c,
            h,
            w: wd,
            kh,
            kw,
            stride: geo.stride,
            pad: geo.pad,
            oh,
            ow,
        };
        let (rows, ncols) = (patch.rows(), patch.cols());
        let mut cols = vec![T::zero(); n * rows * ncols];
        let mut out = vec![T::zero(); n * k * ncols];
        {
            let (xv, wv) = (self.value(x).data(), self.value(w).data());
            for i in 0..n {
                let col = &mut cols[i * rows * ncols..(i + 1) * rows * ncols];
                im2col(&xv[i * patch.image_len()..(i + 1) * patch.image_len()], &patch, col);
                matmul(
                    k,
                    rows,
                    ncols,
                    wv,
                    false,
                    col,
                    false,
                    T::zero(),
                    &mut out[i * k * ncols..],
                );
            }
        }
        add_channel_bias(self, b, &mut out, n, k, ncols);
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        if !self.requires_grad(w) {
            cols = Vec::new();
        }
        let value = Tensor::new([n, k, oh, ow], out)?;
        Ok(self.push(value, Op::Conv2d { x, w, b, patch, cols }, rg))
    }

    /// Transposed convolution: the exact adjoint of [`Graph::conv2d`] with the
    /// same `[C_in, C_out, kh, kw]` kernel tensor.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, geo: ConvGeometry) -> Result<Var> {
        let [n, c, h, wd] = self.value(x).dims4()?;
        let [kc, k, kh, kw] = self.value(w).dims4()?;
        if kc != c {
            return Err(Error::Shape(format!(
                "conv_transpose2d input has {c} channels, kernels expect {kc}"
            )));
        }
        check_bias(self, b, k)?;
        let (Some(oh), Some(ow)) = (geo.transpose_out(h, kh), geo.transpose_out(wd, kw)) else {
            return Err(Error::Geometry(format!(
                "conv_transpose2d {h}x{wd} input, {kh}x{kw} kernel, stride {}, pad {}",
                geo.stride, geo.pad
            )));
        };
        // The matching forward convolution runs from the large (output) image
        // back to the input extent.
        let patch = Patch {
            c: k,
            h: oh,
            w: ow,
            kh,
            kw,
            stride: geo.stride,
            pad: geo.pad,
            oh: h,
            ow: wd,
        };
        let (rows, ncols) = (patch.rows(), patch.cols());
        let mut out = vec![T::zero(); n * patch.image_len()];
        let mut cols = vec![T::zero(); rows * ncols];
        {
            let (xv, wv) = (self.value(x).data(), self.value(w).data());
            for i in 0..n {
                let xi = &xv[i * c * ncols..(i + 1) * c * ncols];
                matmul(rows, c, ncols, wv, true, xi, false, T::zero(), &mut cols);
                let img = &mut out[i * patch.image_len()..(i + 1) * patch.image_len()];
                col2im(&cols, &patch, img);
            }
        }
        add_channel_bias(self, b, &mut out, n, k, oh * ow);
        let rg = self.rg(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        let value = Tensor::new([n, k, oh, ow], out)?;
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, patch }, rg))
    }

    /// Per-channel batch normalization of `[N, C, H, W]` (or `[N, C]`) input.
    ///
    /// Train mode standardizes with batch statistics and folds them into
    /// `stats` with the given momentum (unbiased variance, as is customary);
    /// eval mode uses `stats` as-is.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, stats: RunningStats<'_, T>, mode: Mode) -> Result<Var> {
        let shape = self.value(x).shape().to_vec();
        let (n, c, hw) = match shape[..] {
            [n, c, h, w] => (n, c, h * w),
            [n, c] => (n, c, 1),
            _ => return Err(Error::Shape(format!("batch_norm input {shape:?}"))),
        };
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::Shape(format!("batch_norm affine params for {c} channels")));
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::Shape(format!("running stats for {c} channels")));
        }
        let m = n * hw;
        let batch_stats = mode == Mode::Train;
        if batch_stats && m <= 1 {
            return Err(Error::InvalidArgument(
                "train-mode batch_norm needs more than one value per channel".into(),
            ));
        }
        let xv = self.value(x).data();
        let (gv, bv) = (self.value(gamma).data(), self.value(beta).data());
        let eps = T::c(BN_EPS);
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); c];
        let at = |i: usize, ch: usize, j: usize| (i * c + ch) * hw + j;
        for ch in 0..c {
            let (mean, var) = if batch_stats {
                let mut sum = 0.0;
                for i in 0..n {
                    for j in 0..hw {
                        sum += xv[at(i, ch, j)].f64();
                    }
                }
                let mean = sum / m as f64;
                let mut sq = 0.0;
                for i in 0..n {
                    for j in 0..hw {
                        let d = xv[at(i, ch, j)].f64() - mean;
                        sq += d * d;
                    }
                }
                let var = sq / m as f64;
                let mom = T::c(stats.momentum);
                let unbiased = T::c(sq / (m - 1) as f64);
                stats.mean[ch] = (T::one() - mom) * stats.mean[ch] + mom * T::c(mean);
                stats.var[ch] = (T::one() - mom) * stats.var[ch] + mom * unbiased;
                (T::c(mean), T::c(var))
            } else {
                (stats.mean[ch], stats.var[ch])
            };
            let is = T::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            for i in 0..n {
                for j in 0..hw {
                    let idx = at(i, ch, j);
                    let h = (xv[idx] - mean) * is;
                    xhat[idx] = h;
                    out[idx] = gv[ch] * h + bv[ch];
                }
            }
        }
        let rg = self.rg(&[x, gamma, beta]);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        ))
    }

    /// Global average over the spatial extent: `[N, C, H, W] -> [N, C]`.
    pub fn adaptive_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let hw = h * w;
        let scale = T::c(1.0 / hw as f64);
        let xv = self.value(x).data();
        let out = (0..n * c)
            .map(|i| xv[i * hw..(i + 1) * hw].iter().fold(T::zero(), |a, &v| a + v) * scale)
            .collect();
        let rg = self.rg(&[x]);
        let value = Tensor::new([n, c], out)?;
        Ok(self.push(value, Op::AvgPool(x), rg))
    }

    /// `x [N, D] · w [D, M] + b [M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let [n, d] = self.value(x).dims2()?;
        let [wd, m] = self.value(w).dims2()?;
        if wd != d || self.value(b).len() != m {
            return Err(Error::Shape(format!(
                "linear: input [{n}, {d}], weight {:?}, bias {:?}",
                self.value(w).shape(),
                self.value(b).shape()
            )));
        }
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.value(b).data());
        }
        matmul(
            n,
            d,
            m,
            self.value(x).data(),
            false,
            self.value(w).data(),
            false,
            T::one(),
            &mut out,
        );
        let rg = self.rg(&[x, w, b]);
        let value = Tensor::new([n, m], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    fn check_finite(&self, vars: &[Var], what: &str) -> Result<()> {
        if vars.iter().all(|&v| self.value(v).is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(format!("{what} input")))
        }
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape(format!("{what}: {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.check_finite(&[a], "sum")?;
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        self.check_finite(&[a], "mean")?;
        let av = self.value(a);
        let value = Tensor::scalar(av.sum() / T::c(av.len() as f64));
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Mean(a), rg))
    }

    /// Column means of a `[N, M]` matrix, giving `[M]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let [n, m] = self.value(a).dims2()?;
        let av = self.value(a).data();
        let scale = T::c(1.0 / n as f64);
        let out = (0..m)
            .map(|j| (0..n).fold(T::zero(), |s, i| s + av[i * m + j]) * scale)
            .collect();
        let rg = self.rg(&[a]);
        let value = Tensor::new([m], out)?;
        Ok(self.push(value, Op::MeanRows(a), rg))
    }

    /// Mean absolute difference.
    pub fn l1(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "l1")?;
        self.check_finite(&[a, b], "l1")?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let s: f64 = av.iter().zip(bv).map(|(&x, &y)| (x - y).abs().f64()).sum();
        let value = Tensor::scalar(T::c(s / av.len() as f64));
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::L1(a, b), rg))
    }

    /// Mean squared difference.
    pub fn l2(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "l2")?;
        self.check_finite(&[a, b], "l2")?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let s: f64 = av
            .iter()
            .zip(bv)
            .map(|(&x, &y)| {
                let d = (x - y).f64();
                d * d
            })
            .sum();
        let value = Tensor::scalar(T::c(s / av.len() as f64));
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::L2(a, b), rg))
    }

    /// Binary cross-entropy `−mean(t·ln p + (1−t)·ln(1−p))` with `p` clamped
    /// to `[1e-7, 1 − 1e-7]`. The target is not differentiated.
    pub fn bce(&mut self, p: Var, t: Var) -> Result<Var> {
        self.check_same(p, t, "bce")?;
        self.check_finite(&[p, t], "bce")?;
        let (pv, tv) = (self.value(p).data(), self.value(t).data());
        let s: f64 = pv
            .iter()
            .zip(tv)
            .map(|(&p, &t)| {
                let (p, t) = (clamp_prob(p.f64()), t.f64());
                t * p.ln() + (1.0 - t) * (1.0 - p).ln()
            })
            .sum();
        let value = Tensor::scalar(T::c(-s / pv.len() as f64));
        let rg = self.rg(&[p]);
        Ok(self.push(value, Op::Bce(p, t), rg))
    }

    /// Row-wise softmax of a `[N, M]` matrix.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let [n, m] = self.value(a).dims2()?;
        let av = self.value(a).data();
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            let row = &av[i * m..(i + 1) * m];
            let mx = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut z = T::zero();
            for j in 0..m {
                let e = (row[j] - mx).exp();
                out[i * m + j] = e;
                z = z + e;
            }
            out[i * m..(i + 1) * m].iter_mut().for_each(|v| *v = *v / z);
        }
        let rg = self.rg(&[a]);
        let value = Tensor::new([n, m], out)?;
        Ok(self.push(value, Op::Softmax(a), rg))
    }

    /// Categorical cross-entropy `−(1/N)·Σ t·ln p` between probability rows
    /// `p` and target rows `t`, both `[N, M]`. Rows of `p` must sum to one.
    pub fn cross_entropy(&mut self, p: Var, t: Var) -> Result<Var> {
        self.check_same(p, t, "cross_entropy")?;
        self.check_finite(&[p, t], "cross_entropy")?;
        let [n, m] = self.value(p).dims2()?;
        let (pv, tv) = (self.value(p).data(), self.value(t).data());
        let mut s = 0.0;
        for i in 0..n {
            let row_sum: f64 = pv[i * m..(i + 1) * m].iter().map(|v| v.f64()).sum();
            if (row_sum - 1.0).abs() > 1e-4 {
                return Err(Error::InvalidArgument(format!("probability row {i} sums to {row_sum}")));
            }
            for j in 0..m {
                s += tv[i * m + j].f64() * pv[i * m + j].f64().max(PROB_CLAMP).ln();
            }
        }
        let value = Tensor::scalar(T::c(-s / n as f64));
        let rg = self.rg(&[p]);
        Ok(self.push(value, Op::CrossEntropy(p, t), rg))
    }

    /// Extends the last axis to `len` by repeating its final element.
    pub fn pad_time_edge(&mut self, a: Var, len: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let t = *shape.last().expect("non-empty shape");
        if len < t {
            return Err(Error::Shape(format!("cannot edge-pad {t} frames to {len}")));
        }
        let av = self.value(a).data();
        let outer = av.len() / t;
        let mut out = Vec::with_capacity(outer * len);
        for o in 0..outer {
            let row = &av[o * t..(o + 1) * t];
            out.extend_from_slice(row);
            out.extend(std::iter::repeat_n(row[t - 1], len - t));
        }
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = len;
        let rg = self.rg(&[a]);
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, Op::PadTime(a), rg))
    }

    /// Keeps the first `len` entries of the last axis.
    pub fn crop_time(&mut self, a: Var, len: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let t = *shape.last().expect("non-empty shape");
        if len == 0 || len > t {
            return Err(Error::Shape(format!("cannot crop {t} frames to {len}")));
        }
        let av = self.value(a).data();
        let outer = av.len() / t;
        let mut out = Vec::with_capacity(outer * len);
        for o in 0..outer {
            out.extend_from_slice(&av[o * t..o * t + len]);
        }
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = len;
        let rg = self.rg(&[a]);
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, Op::CropTime(a), rg))
    }

    /// First difference along the last axis: `out[.., t] = a[.., t+1] − a[.., t]`.
    pub fn time_diff(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let t = *shape.last().expect("non-empty shape");
        if t < 2 {
            return Err(Error::Shape(format!("time_diff needs at least 2 frames, got {t}")));
        }
        let av = self.value(a).data();
        let outer = av.len() / t;
        let mut out = Vec::with_capacity(outer * (t - 1));
        for o in 0..outer {
            let row = &av[o * t..(o + 1) * t];
            out.extend(row.windows(2).map(|w| w[1] - w[0]));
        }
        let mut new_shape = shape;
        *new_shape.last_mut().unwrap() = t - 1;
        let rg = self.rg(&[a]);
        let value = Tensor::new(new_shape, out)?;
        Ok(self.push(value, Op::TimeDiff(a), rg))
    }

    /// Reverse sweep from a scalar `loss`, accumulating gradients into every
    /// node that requires them. A graph supports exactly one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        self.backward_done = true;
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::ones(self.value(loss).shape()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(grad) = self.nodes[i].grad.take() else {
                continue;
            };
            let contributions = self.local_grads(i, &grad)?;
            self.nodes[i].grad = Some(grad);
            for (v, g) in contributions {
                let node = &mut self.nodes[v.0];
                if !node.requires_grad {
                    continue;
                }
                match &mut node.grad {
                    Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a = *a + b),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let out = &node.value;
        let zip_map = |a: &Tensor<T>, f: &dyn Fn(T, T) -> T| -> Tensor<T> {
            Tensor::from_fn(a.shape(), |k| f(g.data()[k], a.data()[k]))
        };
        let res = match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![
                (*a, reduce_to(g.clone(), self.value(*a))),
                (*b, reduce_to(g.clone(), self.value(*b))),
            ],
            Op::Sub(a, b) => vec![
                (*a, reduce_to(g.clone(), self.value(*a))),
                (*b, reduce_to(g.map(|v| -v), self.value(*b))),
            ],
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = Tensor::from_fn(g.shape(), |k| g.data()[k] * bcast_at(bv, k));
                let gb = Tensor::from_fn(g.shape(), |k| g.data()[k] * bcast_at(av, k));
                vec![(*a, reduce_to(ga, av)), (*b, reduce_to(gb, bv))]
            }
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::MulScalar(a, s) => vec![(*a, g.map(|v| v * *s))],
            Op::Abs(a) => vec![(*a, zip_map(self.value(*a), &|g, x| g * sign(x)))],
            Op::Log(a) => vec![(*a, zip_map(self.value(*a), &|g, x| g / x))],
            Op::Exp(a) => vec![(*a, zip_map(out, &|g, y| g * y))],
            Op::Sigmoid(a) => vec![(*a, zip_map(out, &|g, y| g * y * (T::one() - y)))],
            Op::LeakyRelu(a, slope) => vec![(
                *a,
                zip_map(self.value(*a), &|g, x| if x > T::zero() { g } else { g * *slope }),
            )],
            Op::Reshape(a) => vec![(*a, g.clone().reshape(self.value(*a).shape())?)],
            Op::Conv2d { x, w, b, patch, cols } => self.conv2d_grads(*x, *w, *b, patch, cols, g)?,
            Op::ConvTranspose2d { x, w, b, patch } => self.conv_transpose2d_grads(*x, *w, *b, patch, g)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => self.batch_norm_grads(*x, *gamma, *beta, xhat, inv_std, *batch_stats, g)?,
            Op::AvgPool(x) => {
                let [n, c, h, w] = self.value(*x).dims4()?;
                let hw = h * w;
                let scale = T::c(1.0 / hw as f64);
                let gx = Tensor::from_fn([n, c, h, w], |k| g.data()[k / hw] * scale);
                vec![(*x, gx)]
            }
            Op::Linear { x, w, b } => {
                let [n, d] = self.value(*x).dims2()?;
                let [_, m] = self.value(*w).dims2()?;
                let mut res = Vec::with_capacity(3);
                if self.requires_grad(*x) {
                    let mut gx = vec![T::zero(); n * d];
                    matmul(
                        n,
                        m,
                        d,
                        g.data(),
                        false,
                        self.value(*w).data(),
                        true,
                        T::zero(),
                        &mut gx,
                    );
                    res.push((*x, Tensor::new([n, d], gx)?));
                }
                if self.requires_grad(*w) {
                    let mut gw = vec![T::zero(); d * m];
                    matmul(
                        d,
                        n,
                        m,
                        self.value(*x).data(),
                        true,
                        g.data(),
                        false,
                        T::zero(),
                        &mut gw,
                    );
                    res.push((*w, Tensor::new([d, m], gw)?));
                }
                if self.requires_grad(*b) {
                    let gb = (0..m)
                        .map(|j| (0..n).fold(T::zero(), |s, i| s + g.data()[i * m + j]))
                        .collect();
                    res.push((*b, Tensor::new(self.value(*b).shape(), gb)?));
                }
                res
            }
            Op::Sum(a) => vec![(*a, Tensor::full(self.value(*a).shape(), g.item()))],
            Op::Mean(a) => {
                let av = self.value(*a);
                vec![(*a, Tensor::full(av.shape(), g.item() / T::c(av.len() as f64)))]
            }
            Op::MeanRows(a) => {
                let [n, m] = self.value(*a).dims2()?;
                let scale = T::c(1.0 / n as f64);
                vec![(*a, Tensor::from_fn([n, m], |k| g.data()[k % m] * scale))]
            }
            Op::L1(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let s = g.item() / T::c(av.len() as f64);
                let ga = Tensor::from_fn(av.shape(), |k| s * sign(av.data()[k] - bv.data()[k]));
                let gb = ga.map(|v| -v);
                vec![(*a, ga), (*b, gb)]
            }
            Op::L2(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let s = T::c(2.0) * g.item() / T::c(av.len() as f64);
                let ga = Tensor::from_fn(av.shape(), |k| s * (av.data()[k] - bv.data()[k]));
                let gb = ga.map(|v| -v);
                vec![(*a, ga), (*b, gb)]
            }
            Op::Bce(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let s = g.item().f64() / pv.len() as f64;
                let gp = Tensor::from_fn(pv.shape(), |k| {
                    let (p, t) = (clamp_prob(pv.data()[k].f64()), tv.data()[k].f64());
                    T::c(-s * (t / p - (1.0 - t) / (1.0 - p)))
                });
                vec![(*p, gp)]
            }
            Op::Softmax(a) => {
                let [n, m] = out.dims2()?;
                let (y, gd) = (out.data(), g.data());
                let mut ga = vec![T::zero(); n * m];
                for i in 0..n {
                    let r = i * m..(i + 1) * m;
                    let dot = y[r.clone()]
                        .iter()
                        .zip(&gd[r.clone()])
                        .fold(T::zero(), |s, (&y, &g)| s + y * g);
                    for k in r {
                        ga[k] = y[k] * (gd[k] - dot);
                    }
                }
                vec![(*a, Tensor::new([n, m], ga)?)]
            }
            Op::CrossEntropy(p, t) => {
                let (pv, tv) = (self.value(*p), self.value(*t));
                let [n, _] = pv.dims2()?;
                let s = g.item().f64() / n as f64;
                let gp = Tensor::from_fn(pv.shape(), |k| {
                    T::c(-s * tv.data()[k].f64() / pv.data()[k].f64().max(PROB_CLAMP))
                });
                vec![(*p, gp)]
            }
            Op::PadTime(a) => {
                let av = self.value(*a);
                let t = *av.shape().last().unwrap();
                let len = *g.shape().last().unwrap();
                let mut ga = vec![T::zero(); av.len()];
                for (o, row) in g.data().chunks(len).enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        let k = o * t + j.min(t - 1);
                        ga[k] = ga[k] + v;
                    }
                }
                vec![(*a, Tensor::new(av.shape(), ga)?)]
            }
            Op::CropTime(a) => {
                let av = self.value(*a);
                let t = *av.shape().last().unwrap();
                let len = *g.shape().last().unwrap();
                let mut ga = vec![T::zero(); av.len()];
                for (o, row) in g.data().chunks(len).enumerate() {
                    ga[o * t..o * t + len].copy_from_slice(row);
                }
                vec![(*a, Tensor::new(av.shape(), ga)?)]
            }
            Op::TimeDiff(a) => {
                let av = self.value(*a);
                let t = *av.shape().last().unwrap();
                let mut ga = vec![T::zero(); av.len()];
                for (o, row) in g.data().chunks(t - 1).enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        ga[o * t + j + 1] = ga[o * t + j + 1] + v;
                        ga[o * t + j] = ga[o * t + j] - v;
                    }
                }
                vec![(*a, Tensor::new(av.shape(), ga)?)]
            }
        };
        Ok(res)
    }

    fn conv2d_grads(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        patch: &Patch,
        cols: &[T],
        g: &Tensor<T>,
    ) -> Result<Vec<(Var, Tensor<T>)>> {
        let [n, k, _, _] = g.dims4()?;
        let (rows, ncols) = (patch.rows(), patch.cols());
        let gd = g.data();
        let mut res = Vec::with_capacity(3);
        if self.requires_grad(w) {
            let mut gw = vec![T::zero(); k * rows];
            for i in 0..n {
                let gi = &gd[i * k * ncols..(i + 1) * k * ncols];
                let ci = &cols[i * rows * ncols..(i + 1) * rows * ncols];
                matmul(k, ncols, rows, gi, false, ci, true, T::one(), &mut gw);
            }
            res.push((w, Tensor::new(self.value(w).shape(), gw)?));
        }
        if let Some(b) = b.filter(|&b| self.requires_grad(b)) {
            res.push((b, channel_sums(gd, n, k, ncols)));
        }
        if self.requires_grad(x) {
            let wv = self.value(w).data();
            let mut gx = vec![T::zero(); n * patch.image_len()];
            let mut dcols = vec![T::zero(); rows * ncols];
            for i in 0..n {
                let gi = &gd[i * k * ncols..(i + 1) * k * ncols];
                matmul(rows, k, ncols, wv, true, gi, false, T::zero(), &mut dcols);
                let img = &mut gx[i * patch.image_len()..(i + 1) * patch.image_len()];
                col2im(&dcols, patch, img);
            }
            res.push((x, Tensor::new(self.value(x).shape(), gx)?));
        }
        Ok(res)
    }

    fn conv_transpose2d_grads(
        &self,
        x: Var,
        w: Var,
        b: Option<Var>,
        patch: &Patch,
        g: &Tensor<T>,
    ) -> Result<Vec<(Var, Tensor<T>)>> {
        let [n, c, _, _] = self.value(x).dims4()?;
        let (rows, ncols) = (patch.rows(), patch.cols());
        let (gd, xv, wv) = (g.data(), self.value(x).data(), self.value(w).data());
        let need_x = self.requires_grad(x);
        let need_w = self.requires_grad(w);
        let mut gx = if need_x {
            vec![T::zero(); n * c * ncols]
        } else {
            Vec::new()
        };
        let mut gw = if need_w { vec![T::zero(); c * rows] } else { Vec::new() };
        let mut gcols = vec![T::zero(); rows * ncols];
        if need_x || need_w {
            for i in 0..n {
                let gi = &gd[i * patch.image_len()..(i + 1) * patch.image_len()];
                im2col(gi, patch, &mut gcols);
                if need_x {
                    let dst = &mut gx[i * c * ncols..(i + 1) * c * ncols];
                    matmul(c, rows, ncols, wv, false, &gcols, false, T::zero(), dst);
                }
                if need_w {
                    let xi = &xv[i * c * ncols..(i + 1) * c * ncols];
                    matmul(c, ncols, rows, xi, false, &gcols, true, T::one(), &mut gw);
                }
            }
        }
        let mut res = Vec::with_capacity(3);
        if need_x {
            res.push((x, Tensor::new(self.value(x).shape(), gx)?));
        }
        if need_w {
            res.push((w, Tensor::new(self.value(w).shape(), gw)?));
        }
        if let Some(b) = b.filter(|&b| self.requires_grad(b)) {
            res.push((b, channel_sums(gd, n, patch.c, patch.h * patch.w)));
        }
        Ok(res)
    }

    #[allow(clippy::too_many_arguments)]
    fn batch_norm_grads(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: &[T],
        inv_std: &[T],
        batch_stats: bool,
        g: &Tensor<T>,
    ) -> Result<Vec<(Var, Tensor<T>)>> {
        let shape = g.shape();
        let (n, c) = (shape[0], shape[1]);
        let hw = g.len() / (n * c);
        let m = (n * hw) as f64;
        let gd = g.data();
        let gv = self.value(gamma).data();
        let at = |i: usize, ch: usize, j: usize| (i * c + ch) * hw + j;
        let mut ggamma = vec![T::zero(); c];
        let mut gbeta = vec![T::zero(); c];
        let mut gx = vec![T::zero(); gd.len()];
        for ch in 0..c {
            let (mut sg, mut sgx) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..hw {
                    let k = at(i, ch, j);
                    sg += gd[k].f64();
                    sgx += (gd[k] * xhat[k]).f64();
                }
            }
            gbeta[ch] = T::c(sg);
            ggamma[ch] = T::c(sgx);
            let scale = gv[ch] * inv_std[ch];
            for i in 0..n {
                for j in 0..hw {
                    let k = at(i, ch, j);
                    gx[k] = if batch_stats {
                        scale * (gd[k] - T::c(sg / m) - xhat[k] * T::c(sgx / m))
                    } else {
                        scale * gd[k]
                    };
                }
            }
        }
        Ok(vec![
            (x, Tensor::new(shape, gx)?),
            (gamma, Tensor::new(self.value(gamma).shape(), ggamma)?),
            (beta, Tensor::new(self.value(beta).shape(), gbeta)?),
        ])
    }
}

fn check_bias<T: Real>(g: &Graph<T>, b: Option<Var>, k: usize) -> Result<()> {
    match b {
        Some(b) if g.value(b).len() != k => Err(Error::Shape(format!(
            "bias of {} for {k} output channels",
            g.value(b).len()
        ))),
        _ => Ok(()),
    }
}

fn add_channel_bias<T: Real>(g: &Graph<T>, b: Option<Var>, out: &mut [T], n: usize, k: usize, hw: usize) {
    let Some(b) = b else { return };
    let bv = g.value(b).data();
    for i in 0..n {
        for (ch, &bias) in bv.iter().enumerate().take(k) {
            out[(i * k + ch) * hw..(i * k + ch + 1) * hw]
                .iter_mut()
                .for_each(|v| *v = *v + bias);
        }
    }
}

fn channel_sums<T: Real>(gd: &[T], n: usize, k: usize, hw: usize) -> Tensor<T> {
    let sums = (0..k)
        .map(|ch| {
            (0..n).fold(T::zero(), |s, i| {
                gd[(i * k + ch) * hw..(i * k + ch + 1) * hw]
                    .iter()
                    .fold(s, |s, &v| s + v)
            })
        })
        .collect();
    Tensor::new([k], sums).expect("k > 0")
}

fn bcast_at<T: Real>(t: &Tensor<T>, k: usize) -> T {
    if t.len() == 1 {
        t.item()
    } else {
        t.data()[k]
    }
}

/// Sums a gradient back down to a broadcast operand's shape.
fn reduce_to<T: Real>(g: Tensor<T>, operand: &Tensor<T>) -> Tensor<T> {
    if g.shape() == operand.shape() {
        g
    } else {
        Tensor::full(operand.shape(), g.sum())
    }
}

fn sign<T: Real>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

pub(crate) fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}
