use madnet::gradcheck::{check_gradients, probe_tensor, NetworkOutput, NetworkProbe};
use madnet::{ModuleId, Network, NetworkConfig, PyramidGrad, Shape4, Tensor4};

fn micro_config() -> NetworkConfig {
    NetworkConfig {
        levels: 2,
        feature_channels: vec![3, 4],
        decoder_channels: vec![4, 1],
        refinement_channels: vec![3, 1],
        refinement_dilations: vec![1, 2],
        correlation_radius: 1,
        leaky_slope: 0.2,
        lowest_decoder_level: 1,
    }
}

fn three_level_config() -> NetworkConfig {
    NetworkConfig {
        levels: 3,
        feature_channels: vec![3, 4, 5],
        decoder_channels: vec![5, 3, 1],
        refinement_channels: vec![4, 1],
        refinement_dilations: vec![1, 2],
        correlation_radius: 2,
        leaky_slope: 0.2,
        lowest_decoder_level: 2,
    }
}

fn pair(h: usize, w: usize, seed: u64) -> (Tensor4<f64>, Tensor4<f64>) {
    (
        probe_tensor(Shape4::new(1, 3, h, w), seed, 0.0, 1.0),
        probe_tensor(Shape4::new(1, 3, h, w), seed + 1, 0.0, 1.0),
    )
}

/// Perturbs biases so that coarse disparities are non-trivial.
fn jitter_biases(net: &mut Network<f64>, seed: u64) {
    for (i, p) in net.parameters_mut().enumerate() {
        if p.value.shape().h == 1 {
            p.value = probe_tensor(p.value.shape(), seed + i as u64, -0.3, 0.3);
        }
    }
}

#[test]
fn micro_network_full_backward_matches_finite_differences() {
    let mut net = Network::<f64>::build(micro_config(), 3).unwrap();
    jitter_biases(&mut net, 100);
    let (left, right) = pair(8, 16, 7);
    let probe_net = NetworkProbe {
        net,
        left,
        right,
        output: NetworkOutput::Full,
    };
    let params = probe_net.parameters();
    let probe = probe_tensor(Shape4::new(1, 1, 8, 16), 9, -1.0, 1.0);
    let report = check_gradients(&probe_net, &params, &probe, 1e-6).unwrap();
    assert!(report.max_relative_error < 1e-4, "{report:?}");
}

#[test]
fn level_forward_matches_finite_differences() {
    let mut net = Network::<f64>::build(three_level_config(), 4).unwrap();
    jitter_biases(&mut net, 200);
    let (left, right) = pair(16, 32, 11);
    let probe_net = NetworkProbe {
        net,
        left,
        right,
        output: NetworkOutput::Level(2),
    };
    let params = probe_net.parameters();
    let probe = probe_tensor(Shape4::new(1, 1, 4, 8), 13, -1.0, 1.0);
    let report = check_gradients(&probe_net, &params, &probe, 1e-6).unwrap();
    assert!(report.max_relative_error < 1e-5, "{report:?}");
}

#[test]
fn desk_pyramid_shapes() {
    let net = Network::<f32>::build(NetworkConfig::desk(), 1).unwrap();
    let l = Tensor4::full(Shape4::new(1, 3, 64, 192), 0.5);
    let pyr = net.forward(&l, &l).unwrap();
    for k in 2..=6 {
        let s = pyr.scaled[&k].shape();
        assert_eq!((s.c, s.h, s.w), (1, 64 >> k, 192 >> k), "level {k}");
    }
    assert_eq!(pyr.full.shape(), Shape4::new(1, 1, 64, 192));
    assert!(pyr.full.all_finite());
}

#[test]
fn non_divisible_input_rejected() {
    let net = Network::<f32>::build(NetworkConfig::desk(), 1).unwrap();
    let l = Tensor4::full(Shape4::new(1, 3, 96, 160), 0.5);
    let err = net.forward(&l, &l).unwrap_err();
    assert!(err.to_string().contains("divisible"), "{err}");
}

#[test]
fn forward_is_deterministic() {
    let net = Network::<f32>::build(NetworkConfig::desk(), 2).unwrap();
    let (l, r) = pair(64, 128, 3);
    let (l, r) = (l.cast::<f32>(), r.cast::<f32>());
    let a = net.forward(&l, &r).unwrap();
    let b = net.forward(&l, &r).unwrap();
    assert_eq!(a.full, b.full);
}

fn grads_snapshot(net: &Network<f64>) -> Vec<(ModuleId, Vec<f64>)> {
    net.parameters()
        .map(|p| (p.owner, p.grad.data().to_vec()))
        .collect()
}

#[test]
fn module_backward_touches_only_its_module() {
    let mut net = Network::<f64>::build(three_level_config(), 5).unwrap();
    jitter_biases(&mut net, 300);
    let (left, right) = pair(16, 32, 21);
    let (pyr, trace) = net.forward_traced(&left, &right).unwrap();
    let g = probe_tensor(pyr.scaled[&3].shape(), 22, -1.0, 1.0);
    net.backward_module(&trace, PyramidGrad::for_module(ModuleId(3), 2, g), ModuleId(3))
        .unwrap();
    let mut touched = false;
    for (owner, grad) in grads_snapshot(&net) {
        if owner == ModuleId(3) {
            touched |= grad.iter().any(|&v| v != 0.0);
        } else {
            assert!(grad.iter().all(|&v| v == 0.0), "{owner} was modified");
        }
    }
    assert!(touched);
}

#[test]
fn module_backward_differs_from_full_backward() {
    let mut net = Network::<f64>::build(three_level_config(), 6).unwrap();
    jitter_biases(&mut net, 400);
    let (left, right) = pair(16, 32, 31);
    let (pyr, trace) = net.forward_traced(&left, &right).unwrap();
    // lowest module's prediction is the refined map; module 2 here
    let (pred, level) = pyr.module_prediction(ModuleId(2)).unwrap();
    assert_eq!(level, 2);
    let g = probe_tensor(pred.shape(), 32, -1.0, 1.0);

    let mut scoped = net.clone();
    scoped
        .backward_module(&trace, PyramidGrad::for_module(ModuleId(2), 2, g.clone()), ModuleId(2))
        .unwrap();
    let mut full = net.clone();
    full.backward_full(&trace, PyramidGrad::for_module(ModuleId(2), 2, g))
        .unwrap();
    let differs = scoped
        .parameters()
        .zip(full.parameters())
        .filter(|(p, _)| p.owner == ModuleId(2))
        .any(|(a, b)| a.grad.data() != b.grad.data());
    assert!(differs);
    // coarser modules only receive gradient in the full pass
    assert!(full
        .parameters()
        .filter(|p| p.owner == ModuleId(3))
        .any(|p| p.grad.max_abs() > 0.0));
}

#[test]
fn single_module_network_scoped_equals_full() {
    let cfg = NetworkConfig {
        lowest_decoder_level: 2,
        ..micro_config()
    };
    let mut net = Network::<f64>::build(cfg, 7).unwrap();
    jitter_biases(&mut net, 500);
    assert_eq!(net.modules(), vec![ModuleId(2)]);
    let (left, right) = pair(8, 16, 41);
    let (pyr, trace) = net.forward_traced(&left, &right).unwrap();
    let g = probe_tensor(pyr.full.shape(), 42, -1.0, 1.0);
    let mut a = net.clone();
    a.backward_module(&trace, PyramidGrad::full(g.clone()), ModuleId(2))
        .unwrap();
    let mut b = net.clone();
    b.backward_full(&trace, PyramidGrad::full(g)).unwrap();
    for (x, y) in a.parameters().zip(b.parameters()) {
        assert_eq!(x.grad, y.grad);
    }
}

#[test]
fn zero_upstream_gives_zero_grads_and_random_gives_nonzero() {
    let mut net = Network::<f64>::build(three_level_config(), 8).unwrap();
    let (left, right) = pair(16, 32, 51);
    let (pyr, trace) = net.forward_traced(&left, &right).unwrap();
    net.backward_full(&trace, PyramidGrad::full(Tensor4::zeros(pyr.full.shape())))
        .unwrap();
    assert!(net.parameters().all(|p| p.grad.max_abs() == 0.0));
    let g = probe_tensor(pyr.full.shape(), 52, -1.0, 1.0);
    net.backward_full(&trace, PyramidGrad::full(g)).unwrap();
    let norm: f64 = net.parameters().map(|p| p.grad.dot(&p.grad).unwrap().sqrt()).sum();
    assert!(norm > 0.0);
}

#[test]
fn unknown_module_rejected() {
    let mut net = Network::<f64>::build(three_level_config(), 9).unwrap();
    let (left, right) = pair(16, 32, 61);
    let (pyr, trace) = net.forward_traced(&left, &right).unwrap();
    let g = Tensor4::zeros(pyr.full.shape());
    assert!(net
        .backward_module(&trace, PyramidGrad::full(g), ModuleId(6))
        .is_err());
}

#[test]
fn backward_is_linear_in_upstream_gradient() {
    let mut net = Network::<f64>::build(micro_config(), 10).unwrap();
    jitter_biases(&mut net, 600);
    let (left, right) = pair(8, 16, 71);
    let (pyr, trace) = net.forward_traced(&left, &right).unwrap();
    let g1 = probe_tensor(pyr.full.shape(), 72, -1.0, 1.0);
    let g2 = probe_tensor(pyr.full.shape(), 73, -1.0, 1.0);
    let mut g12 = g1.clone();
    g12.add_assign(&g2).unwrap();
    let run = |g: Tensor4<f64>| {
        let mut n = net.clone();
        n.backward_full(&trace, PyramidGrad::full(g)).unwrap();
        n.parameters().map(|p| p.grad.clone()).collect::<Vec<_>>()
    };
    let (a, b, c) = (run(g1), run(g2), run(g12));
    for ((x, y), z) in a.iter().zip(&b).zip(&c) {
        for ((u, v), w) in x.data().iter().zip(y.data()).zip(z.data()) {
            assert!((u + v - w).abs() <= 1e-12 * (1.0 + w.abs()));
        }
    }
}
