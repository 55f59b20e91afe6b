use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

#[test]
fn activation_definitions() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[2], &[-1.0, 0.0]));
    let lr = g.leaky_relu(x, 0.2);
    assert_eq!(g.value(lr).data(), &[-0.2, 0.0]);
    let s = g.sigmoid(x);
    assert_eq!(g.value(s).data()[1], 0.5);
}

#[test]
fn unit_kernels_are_identity_maps() {
    let mut g = Graph::<f64>::new();
    let data: Vec<f64> = (0..2 * 3 * 4).map(|i| i as f64 * 0.5 - 3.0).collect();
    let x = g.constant(t(&[1, 2, 3, 4], &data));
    // Channel-identity 1×1 kernel, [2, 2, 1, 1].
    let k = g.constant(t(&[2, 2, 1, 1], &[1.0, 0.0, 0.0, 1.0]));
    let y = g.conv2d(x, k, None, ConvGeometry::new(1, 0)).unwrap();
    assert_eq!(g.value(y).data(), &data[..]);
    let z = g.conv_transpose2d(x, k, None, ConvGeometry::new(1, 0)).unwrap();
    assert_eq!(g.value(z).data(), &data[..]);
}

#[test]
fn box_filter_sums_to_nine_in_the_interior() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones([1, 1, 5, 6]));
    let k = g.constant(Tensor::ones([1, 1, 3, 3]));
    let y = g.conv2d(x, k, None, ConvGeometry::new(1, 1)).unwrap();
    let v = g.value(y);
    assert_eq!(v.shape(), &[1, 1, 5, 6]);
    for r in 1..4 {
        for c in 1..5 {
            assert_eq!(v.data()[r * 6 + c], 9.0);
        }
    }
    assert_eq!(v.data()[0], 4.0);
}

#[test]
fn conv_rejects_bad_geometry_and_channels() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones([1, 1, 2, 2]));
    let k = g.constant(Tensor::ones([1, 1, 5, 5]));
    assert!(matches!(
        g.conv2d(x, k, None, ConvGeometry::new(1, 0)),
        Err(crate::Error::Geometry(_))
    ));
    let k2 = g.constant(Tensor::ones([1, 2, 1, 1]));
    assert!(matches!(
        g.conv2d(x, k2, None, ConvGeometry::new(1, 0)),
        Err(crate::Error::Shape(_))
    ));
    assert!(g.conv2d(x, k, None, ConvGeometry::new(0, 2)).is_err());
}

#[test]
fn transposed_extent_formula() {
    let geo = ConvGeometry::new(2, 1);
    assert_eq!(geo.transpose_out(16, 4), Some(32));
    assert_eq!(geo.conv_out(32, 4), Some(16));
    assert_eq!(ConvGeometry::new(1, 1).transpose_out(7, 3), Some(7));
}

#[test]
fn batch_norm_train_mode_standardizes() {
    let mut g = Graph::<f64>::new();
    let data: Vec<f64> = (0..4 * 3 * 2 * 5)
        .map(|i| ((i * 37) % 11) as f64 * 0.3 + i as f64 * 0.01)
        .collect();
    let x = g.constant(t(&[4, 3, 2, 5], &data));
    let gamma = g.constant(Tensor::ones([3]));
    let beta = g.constant(Tensor::zeros([3]));
    let (mut m, mut v) = (vec![0.0; 3], vec![1.0; 3]);
    let stats = RunningStats {
        mean: &mut m,
        var: &mut v,
        momentum: 0.1,
    };
    let y = g.batch_norm(x, gamma, beta, stats, Mode::Train).unwrap();
    let yv = g.value(y).data();
    for ch in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|n| (0..10).map(move |j| (n * 3 + ch) * 10 + j))
            .map(|k| yv[k])
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
    assert!(m.iter().all(|&v| v != 0.0), "running mean updated");
}

#[test]
fn batch_norm_eval_with_unit_stats_is_identity() {
    let mut g = Graph::<f64>::new();
    let data = [0.3, -1.2, 2.0, 0.0];
    let x = g.constant(t(&[1, 2, 1, 2], &data));
    let gamma = g.constant(Tensor::ones([2]));
    let beta = g.constant(Tensor::zeros([2]));
    let (mut m, mut v) = (vec![0.0; 2], vec![1.0; 2]);
    let stats = RunningStats {
        mean: &mut m,
        var: &mut v,
        momentum: 0.1,
    };
    let y = g.batch_norm(x, gamma, beta, stats, Mode::Eval).unwrap();
    for (a, b) in g.value(y).data().iter().zip(data) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn batch_norm_train_rejects_single_value_channels() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones([1, 2, 1, 1]));
    let gamma = g.constant(Tensor::ones([2]));
    let beta = g.constant(Tensor::zeros([2]));
    let (mut m, mut v) = (vec![0.0; 2], vec![1.0; 2]);
    let stats = RunningStats {
        mean: &mut m,
        var: &mut v,
        momentum: 0.1,
    };
    assert!(g.batch_norm(x, gamma, beta, stats, Mode::Train).is_err());
}

#[test]
fn adaptive_pool_is_length_independent() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::full([2, 3, 4, 40], 2.5));
    let b = g.leaf(Tensor::full([2, 3, 4, 73], 1.0), true);
    let pa = g.adaptive_avg_pool(a).unwrap();
    let pb = g.adaptive_avg_pool(b).unwrap();
    assert_eq!(g.value(pa).shape(), g.value(pb).shape());
    assert!(g.value(pa).data().iter().all(|&v| (v - 2.5).abs() < 1e-12));
    let s = g.sum(pb).unwrap();
    g.backward(s).unwrap();
    let expect = 1.0 / (4.0 * 73.0);
    assert!(g.grad(b).unwrap().data().iter().all(|&v| (v - expect).abs() < 1e-15));
}

#[test]
fn linear_with_identity_and_zero_weights() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let zero = g.constant(Tensor::zeros([2, 2]));
    let b = g.constant(t(&[2], &[0.5, -0.5]));
    let y = g.linear(x, eye, b).unwrap();
    assert_eq!(g.value(y).data(), &[1.5, 1.5, 3.5, 3.5]);
    let z = g.linear(x, zero, b).unwrap();
    assert_eq!(g.value(z).data(), &[0.5, -0.5, 0.5, -0.5]);
    let bad = g.constant(Tensor::zeros([3, 2]));
    assert!(g.linear(x, bad, b).is_err());
}

#[test]
fn closed_form_losses() {
    let mut g = Graph::<f64>::new();
    let p = g.constant(t(&[1], &[0.5]));
    let one = g.constant(t(&[1], &[1.0]));
    let b = g.bce(p, one).unwrap();
    assert!((g.value(b).item() - std::f64::consts::LN_2).abs() < 1e-12);
    let x = g.constant(t(&[3], &[0.1, -2.0, 5.0]));
    let d = g.l1(x, x).unwrap();
    assert_eq!(g.value(d).item(), 0.0);
}

#[test]
fn nan_inputs_are_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[2], &[0.5, f64::NAN]));
    let y = g.constant(t(&[2], &[0.5, 0.5]));
    assert!(matches!(g.bce(x, y), Err(crate::Error::NonFinite(_))));
    assert!(matches!(g.l1(x, y), Err(crate::Error::NonFinite(_))));
    assert!(matches!(g.mean(x), Err(crate::Error::NonFinite(_))));
}

#[test]
fn cross_entropy_requires_normalized_rows() {
    let mut g = Graph::<f64>::new();
    let p = g.constant(t(&[1, 2], &[0.7, 0.7]));
    let l = g.constant(t(&[1, 2], &[1.0, 0.0]));
    assert!(g.cross_entropy(p, l).is_err());
}

#[test]
fn elementwise_shape_mismatch_errors() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::ones([2, 3]));
    let b = g.constant(Tensor::ones([3, 2]));
    assert!(matches!(g.add(a, b), Err(crate::Error::Shape(_))));
}

#[test]
fn backward_runs_once_on_scalars_only() {
    let mut g = Graph::<f64>::new();
    let p = g.leaf(Tensor::ones([3]), true);
    assert!(matches!(g.backward(p), Err(crate::Error::NonScalarLoss(_))));
    let s = g.sum(p).unwrap();
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(crate::Error::BackwardTwice)));
    g.reset_grads();
    let d = g.mul_scalar(s, 2.0);
    g.backward(d).unwrap();
    assert_eq!(g.grad(p).unwrap().data(), &[2.0, 2.0, 2.0]);
}

#[test]
fn freeze_rebinds_current_values_as_constants() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("w", Tensor::ones([2]), ParamKind::Weight);
    let mut g = Graph::new();
    let live = g.param(&store, id);
    assert!(g.requires_grad(live));
    store.value_mut(id).fill(3.0);
    g.freeze(&store);
    let frozen = g.param(&store, id);
    assert_ne!(live, frozen);
    assert!(!g.requires_grad(frozen));
    assert_eq!(g.value(frozen).data(), &[3.0, 3.0]);
}

#[test]
fn first_adam_step_moves_by_lr() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("p", Tensor::new([3], vec![1.0, -2.0, 0.5]).unwrap(), ParamKind::Weight);
    let mut adam = Adam::new(&store, AdamConfig::default());
    let mut g = Graph::new();
    let p = g.param(&store, id);
    let s = g.sum(p).unwrap();
    g.backward(s).unwrap();
    store.zero_grad();
    store.accumulate_grads(&g);
    adam.step(&mut store);
    let lr = AdamConfig::default().lr;
    for (after, before) in store.value(id).data().iter().zip([1.0, -2.0, 0.5]) {
        assert!(((before - after) - lr).abs() < 1e-9 * lr.max(1.0));
    }
}

#[test]
fn adam_converges_on_a_quadratic() {
    let c = [0.3, -0.7, 1.1, 0.05];
    let mut store = ParamStore::<f64>::new();
    let id = store.add("p", Tensor::zeros([4]), ParamKind::Weight);
    let cfg = AdamConfig {
        lr: 0.1,
        beta1: 0.5,
        beta2: 0.999,
        eps: 1e-8,
    };
    let mut adam = Adam::new(&store, cfg);
    let dist = |s: &ParamStore<f64>| {
        s.value(id)
            .data()
            .iter()
            .zip(c)
            .map(|(p, c)| (p - c).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let start = dist(&store);
    for _ in 0..50 {
        let mut g = Graph::new();
        let p = g.param(&store, id);
        let target = g.constant(Tensor::new([4], c.to_vec()).unwrap());
        let d = g.sub(p, target).unwrap();
        let sq = g.mul(d, d).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        store.zero_grad();
        store.accumulate_grads(&g);
        adam.step(&mut store);
    }
    assert!(dist(&store) * 10.0 <= start, "{} vs {}", dist(&store), start);
}

#[test]
fn zero_grad_clears_accumulators() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("p", Tensor::ones([2]), ParamKind::Weight);
    let mut g = Graph::new();
    let p = g.param(&store, id);
    let s = g.sum(p).unwrap();
    g.backward(s).unwrap();
    store.accumulate_grads(&g);
    assert_eq!(store.grad(id).data(), &[1.0, 1.0]);
    store.zero_grad();
    assert_eq!(store.grad(id).data(), &[0.0, 0.0]);
}

#[test]
fn frozen_and_buffer_params_get_no_gradient() {
    let mut store = ParamStore::<f64>::new();
    let w = store.add("w", Tensor::ones([2]), ParamKind::Weight);
    let buf = store.add("b", Tensor::ones([2]), ParamKind::Buffer);
    let mut g = Graph::new();
    let bv = g.param(&store, buf);
    assert!(!g.requires_grad(bv));
    g.freeze(&store);
    let wv = g.param(&store, w);
    assert!(!g.requires_grad(wv));
}

#[test]
fn checkpoint_round_trip_and_truncation() {
    let ck = Checkpoint {
        params: vec![
            NamedTensor::new("gab.enc1.w", Tensor::from_fn([2, 1, 2, 2], |i| i as f32 * 0.25)),
            NamedTensor::new("gab.enc1.b", Tensor::zeros([2])),
        ],
        optimizer: vec![NamedTensor::new("adam.gab.step", Tensor::scalar(3.0))],
    };
    let bytes = ck.to_bytes();
    assert_eq!(&bytes[..4], b"VGCK");
    assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    assert!(Checkpoint::from_bytes(b"VGSP\x01\0\0\0").is_err());
}
