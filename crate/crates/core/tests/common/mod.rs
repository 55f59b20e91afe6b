//! Test oracles shared by the integration suites. Nothing here calls into the
//! graph's backward rules; gradients are recovered by central differences and
//! convolutions by direct loops.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voicegan::tensor::{Graph, Tensor, Var};
use voicegan::Result;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values bounded away from zero, for ops with a kink at the origin.
pub fn random_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.5);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Builds a scalar loss from leaf variables.
pub type LossFn<'a> = &'a dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn eval_loss(inputs: &[Tensor<f64>], f: LossFn) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
    let loss = f(&mut g, &vars).expect("forward");
    g.value(loss).item()
}

/// Largest relative error between analytic gradients (from the graph) and
/// central finite differences, over every input in `check`.
///
/// Relative error per input is `‖a − n‖ / max(‖a‖, ‖n‖, 1e-8)`.
pub fn grad_check(inputs: &[Tensor<f64>], check: &[usize], f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| g.leaf(t.clone(), check.contains(&i)))
        .collect();
    let loss = f(&mut g, &vars).expect("forward");
    g.backward(loss).expect("backward");

    let mut worst = 0.0f64;
    for &i in check {
        let analytic = g
            .grad(vars[i])
            .map(|t| t.data().to_vec())
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        let mut numeric = vec![0.0; inputs[i].len()];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[k] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[k] -= FD_STEP;
            *slot = (eval_loss(&plus, &f) - eval_loss(&minus, &f)) / (2.0 * FD_STEP);
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        worst = worst.max(diff / na.max(nn).max(1e-8));
    }
    worst
}

/// Fixed random projection that turns any tensor into a scalar loss, so
/// every output element receives a distinct upstream gradient.
pub fn project(g: &mut Graph<f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = g.value(v).shape().to_vec();
    let mut r = rng(seed);
    let w = random_tensor(&mut r, &shape, -1.0, 1.0);
    let w = g.constant(w);
    let p = g.mul(v, w)?;
    g.sum(p)
}

/// Direct-loop cross-correlation, `x [N,C,H,W]`, `k [K,C,kh,kw]`.
pub fn naive_conv2d(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, c, h, w] = x.dims4().unwrap();
    let [kk, _, kh, kw] = k.dims4().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Tensor::zeros([n, kk, oh, ow]);
    for b in 0..n {
        for o in 0..kk {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xo * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                s += x.data()[((b * c + ci) * h + iy as usize) * w + ix as usize]
                                    * k.data()[((o * c + ci) * kh + i) * kw + j];
                            }
                        }
                    }
                    out.data_mut()[((b * kk + o) * oh + y) * ow + xo] = s;
                }
            }
        }
    }
    out
}

/// Direct-loop gradients of `sum(naive_conv2d(x, k) ⊙ up)` w.r.t. `x` and `k`.
pub fn naive_conv2d_grads(
    x: &Tensor<f64>,
    k: &Tensor<f64>,
    up: &Tensor<f64>,
    stride: usize,
    pad: usize,
) -> (Tensor<f64>, Tensor<f64>) {
    let [n, c, h, w] = x.dims4().unwrap();
    let [kk, _, kh, kw] = k.dims4().unwrap();
    let [_, _, oh, ow] = up.dims4().unwrap();
    let mut gx = Tensor::zeros(x.shape());
    let mut gk = Tensor::zeros(k.shape());
    for b in 0..n {
        for o in 0..kk {
            for y in 0..oh {
                for xo in 0..ow {
                    let u = up.data()[((b * kk + o) * oh + y) * ow + xo];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let iy = (y * stride + i) as isize - pad as isize;
                                let ix = (xo * stride + j) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((b * c + ci) * h + iy as usize) * w + ix as usize;
                                let ki = ((o * c + ci) * kh + i) * kw + j;
                                gx.data_mut()[xi] += k.data()[ki] * u;
                                gk.data_mut()[ki] += x.data()[xi] * u;
                            }
                        }
                    }
                }
            }
        }
    }
    (gx, gk)
}

pub fn max_rel_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

pub fn inner(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}
