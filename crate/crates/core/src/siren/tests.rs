use super::*;
use crate::field::Position;

fn region_config(k: usize, width: usize) -> NetworkConfig {
    let region = TargetRegion::cube(Position::new(1.0, 2.0, 0.5), 1.0, 0.05).unwrap();
    NetworkConfig::new(k, width, 30.0, InputNormalization::from_region(&region))
}

fn random_coord(rng: &mut ChaCha8Rng, cfg: &NetworkConfig) -> Coord {
    let u = [(); AXES].map(|_| rng.random_range(-0.9..0.9));
    Coord::from_array(cfg.normalization.denormalize(u))
}

/// Central differences of `forward` along normalized axis `a`, converted to physical units.
fn fd_first(net: &Network, c: Coord, a: usize, step: f64) -> [f64; OUTPUTS] {
    let chain = net.config.normalization.chain_factors();
    let h = step / chain[a];
    let mut plus = c.to_array();
    let mut minus = c.to_array();
    plus[a] += h;
    minus[a] -= h;
    let yp = net.forward_batch(&[Coord::from_array(plus)]).unwrap();
    let ym = net.forward_batch(&[Coord::from_array(minus)]).unwrap();
    [(); OUTPUTS]
        .iter()
        .enumerate()
        .map(|(o, _)| (yp[[0, o]] - ym[[0, o]]) / (2.0 * h))
        .collect::<Vec<_>>()
        .try_into()
        .unwrap()
}

/// Second difference of `w`, Richardson-extrapolated to fourth order.
fn fd_second_w(net: &Network, c: Coord, a: usize, step: f64) -> f64 {
    let coarse = second_difference(net, c, a, step);
    let fine = second_difference(net, c, a, 0.5 * step);
    (4.0 * fine - coarse) / 3.0
}

fn second_difference(net: &Network, c: Coord, a: usize, step: f64) -> f64 {
    let chain = net.config.normalization.chain_factors();
    let h = step / chain[a];
    let mut plus = c.to_array();
    let mut minus = c.to_array();
    plus[a] += h;
    minus[a] -= h;
    let y = net
        .forward_batch(&[Coord::from_array(plus), c, Coord::from_array(minus)])
        .unwrap();
    (y[[0, 0]] - 2.0 * y[[1, 0]] + y[[2, 0]]) / (h * h)
}

#[test]
fn init_is_deterministic_with_paper_eps() {
    let cfg = region_config(3, 16);
    let a = Network::init(cfg, 5).unwrap();
    let b = Network::init(cfg, 5).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, Network::init(cfg, 6).unwrap());
    assert!((a.params.eps_data() - 1.0).abs() < 1e-15);
    assert!((a.params.eps_prior() - 0.1).abs() < 1e-15);
    let first = a
        .params
        .encoder_f
        .weight
        .iter()
        .fold(0f64, |m, v| m.max(v.abs()));
    assert!(first <= 0.25);
    let deep_bound = (6.0f64 / 16.0).sqrt() / 30.0;
    assert!(a.params.hidden[1]
        .weight
        .iter()
        .all(|v| v.abs() <= deep_bound));
    assert!(a
        .params
        .projection
        .weight
        .iter()
        .all(|v| v.abs() <= deep_bound));
}

#[test]
fn rejects_invalid_config() {
    let mut cfg = region_config(0, 8);
    assert!(Network::init(cfg, 0).is_err());
    cfg.hidden_layers = 1;
    cfg.omega0 = 0.0;
    assert!(Network::init(cfg, 0).is_err());
    assert!(InputNormalization::new([(0.0, 1.0), (1.0, 1.0), (0.0, 1.0), (0.0, 1.0)]).is_err());
}

#[test]
fn zero_network_is_constant() {
    let cfg = region_config(2, 8);
    let mut params = NetworkParams::zeros(&cfg);
    params.projection.bias = Array1::from(vec![0.5, -1.0, 2.0, 3.0]);
    let net = Network::new(cfg, params).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let e = net
            .forward_with_derivatives(random_coord(&mut rng, &cfg), true)
            .unwrap();
        assert_eq!(e.outputs(), [0.5, -1.0, 2.0, 3.0]);
        assert!(e.jac.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(e.second, Some([0.0; 4]));
    }
}

#[test]
fn identical_encoders_collapse_the_blend() {
    let cfg = region_config(3, 6);
    let mut net = Network::init(cfg, 3).unwrap();
    net.params.encoder_g = net.params.encoder_f.clone();
    let mut other = net.clone();
    for l in &mut other.params.hidden {
        l.weight.mapv_inplace(|v| -3.0 * v + 0.1);
        l.bias.mapv_inplace(|v| v + 1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let coords: Vec<Coord> = (0..10).map(|_| random_coord(&mut rng, &cfg)).collect();
    let a = net.forward_batch(&coords).unwrap();
    let b = other.forward_batch(&coords).unwrap();
    for (x, y) in a.iter().zip(b.iter()) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn single_unit_matches_hand_evaluation() {
    let cfg = region_config(1, 1);
    let mut p = NetworkParams::zeros(&cfg);
    p.encoder_f.weight = Array2::from_shape_vec((1, 4), vec![0.2, -0.1, 0.05, 0.3]).unwrap();
    p.encoder_f.bias[0] = 0.01;
    p.encoder_g.weight = Array2::from_shape_vec((1, 4), vec![-0.15, 0.07, 0.2, -0.25]).unwrap();
    p.encoder_g.bias[0] = -0.02;
    p.hidden[0].weight = Array2::from_shape_vec((1, 4), vec![0.1, 0.1, -0.2, 0.05]).unwrap();
    p.hidden[0].bias[0] = 0.03;
    p.projection.weight = Array2::from_shape_vec((4, 1), vec![1.5, -0.5, 0.25, 2.0]).unwrap();
    p.projection.bias = Array1::from(vec![0.1, 0.2, 0.3, 0.4]);
    let net = Network::new(cfg, p).unwrap();
    let c = Coord::new(Position::new(1.3, 2.8, 0.9), 0.02);
    let u = cfg.normalization.normalize(c.to_array());
    let lin =
        |w: [f64; 4], b: f64| 30.0 * (w[0] * u[0] + w[1] * u[1] + w[2] * u[2] + w[3] * u[3] + b);
    let f = lin([0.2, -0.1, 0.05, 0.3], 0.01).sin();
    let g = lin([-0.15, 0.07, 0.2, -0.25], -0.02).sin();
    let t = lin([0.1, 0.1, -0.2, 0.05], 0.03).sin();
    let h = (1.0 - t) * f + t * g;
    let expected = [1.5 * h + 0.1, -0.5 * h + 0.2, 0.25 * h + 0.3, 2.0 * h + 0.4];
    let (w, v) = net.forward(c).unwrap();
    let got = [w, v[0], v[1], v[2]];
    for (a, b) in got.iter().zip(expected) {
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn one_layer_derivative_closed_form() {
    // With g = 0 and ht = 0 the blend passes f straight through.
    let cfg = region_config(1, 1);
    let mut p = NetworkParams::zeros(&cfg);
    p.encoder_f.weight = Array2::from_shape_vec((1, 4), vec![0.2, -0.1, 0.05, 0.3]).unwrap();
    p.encoder_f.bias[0] = 0.4;
    p.projection.weight[[0, 0]] = 1.0;
    let net = Network::new(cfg, p).unwrap();
    let c = Coord::new(Position::new(1.25, 2.5, 0.75), 0.01);
    let u = cfg.normalization.normalize(c.to_array());
    let z = 0.2 * u[0] - 0.1 * u[1] + 0.05 * u[2] + 0.3 * u[3] + 0.4;
    let chain = cfg.normalization.chain_factors();
    let e = net.forward_with_derivatives(c, false).unwrap();
    let dx = 30.0 * 0.2 * chain[0] * (30.0 * z).cos();
    let dt = 30.0 * 0.3 * chain[3] * (30.0 * z).cos();
    assert!((e.jac[0][0] - dx).abs() < 1e-12 * dx.abs().max(1.0));
    assert!((e.jac[0][3] - dt).abs() < 1e-10 * dt.abs().max(1.0));
    assert!((chain[0] - 2.0).abs() < 1e-15 && (chain[3] - 40.0).abs() < 1e-12);
}

#[test]
fn jacobian_matches_finite_differences() {
    let cfg = region_config(3, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..5 {
        let net = Network::init(cfg, seed).unwrap();
        for _ in 0..10 {
            let c = random_coord(&mut rng, &cfg);
            let e = net.forward_with_derivatives(c, true).unwrap();
            let mut worst = 0f64;
            let mut scale = 0f64;
            for a in 0..AXES {
                let fd = fd_first(&net, c, a, 1e-4);
                for o in 0..OUTPUTS {
                    worst = worst.max((fd[o] - e.jac[o][a]).abs());
                    scale = scale.max(fd[o].abs());
                }
            }
            assert!(
                worst < 1e-5 * scale,
                "first-order error {worst} vs scale {scale}"
            );
            let second = e.second.unwrap();
            let (mut worst, mut scale) = (0f64, 0f64);
            for a in 0..AXES {
                let fd = fd_second_w(&net, c, a, 1e-3);
                worst = worst.max((fd - second[a]).abs());
                scale = scale.max(fd.abs());
            }
            assert!(
                worst < 1e-4 * scale,
                "second-order error {worst} vs scale {scale}"
            );
        }
    }
}

#[test]
fn batch_equals_pointwise() {
    let cfg = region_config(2, 12);
    let net = Network::init(cfg, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let coords: Vec<Coord> = (0..7).map(|_| random_coord(&mut rng, &cfg)).collect();
    let (batch, _) = net.eval_batch(&coords, DerivOrder::Second).unwrap();
    for (c, b) in coords.iter().zip(&batch) {
        let single = net.forward_with_derivatives(*c, true).unwrap();
        assert!((single.w - b.w).abs() < 1e-13);
        for o in 0..OUTPUTS {
            for a in 0..AXES {
                assert!((single.jac[o][a] - b.jac[o][a]).abs() < 1e-10 * (1.0 + b.jac[o][a].abs()));
            }
        }
    }
}

#[test]
fn projection_scaling_is_linear() {
    let cfg = region_config(2, 10);
    let net = Network::init(cfg, 8).unwrap();
    let mut scaled = net.clone();
    scaled.params.projection.weight *= 2.5;
    scaled.params.projection.bias *= 2.5;
    let c = Coord::new(Position::new(1.4, 2.6, 1.1), 0.03);
    let a = net.forward_with_derivatives(c, true).unwrap();
    let b = scaled.forward_with_derivatives(c, true).unwrap();
    assert!((b.w - 2.5 * a.w).abs() < 1e-12);
    for o in 0..OUTPUTS {
        for k in 0..AXES {
            assert!((b.jac[o][k] - 2.5 * a.jac[o][k]).abs() < 1e-9 * (1.0 + a.jac[o][k].abs()));
        }
    }
}

#[test]
fn translation_with_updated_normalization_is_invariant() {
    let cfg = region_config(2, 10);
    let net = Network::init(cfg, 9).unwrap();
    let shift = [0.7, -1.3, 2.0];
    let mut moved = net.clone();
    let mut bounds = cfg.normalization.bounds;
    for a in 0..3 {
        bounds[a] = (bounds[a].0 + shift[a], bounds[a].1 + shift[a]);
    }
    moved.config.normalization = InputNormalization::new(bounds).unwrap();
    let c = Coord::new(Position::new(1.4, 2.6, 1.1), 0.03);
    let c2 = Coord::new(Position::new(1.4 + 0.7, 2.6 - 1.3, 1.1 + 2.0), 0.03);
    let a = net.forward_with_derivatives(c, false).unwrap();
    let b = moved.forward_with_derivatives(c2, false).unwrap();
    assert!((a.w - b.w).abs() < 1e-12);
    for o in 0..OUTPUTS {
        for k in 0..AXES {
            assert!((b.jac[o][k] - a.jac[o][k]).abs() < 1e-8 * (1.0 + a.jac[o][k].abs()));
        }
    }
}

#[test]
fn non_finite_coord_is_rejected() {
    let net = Network::init(region_config(1, 4), 0).unwrap();
    let bad = Coord::new(Position::new(f64::NAN, 0.0, 0.0), 0.0);
    assert!(net.forward(bad).is_err());
    assert!(net.eval_batch(&[], DerivOrder::Value).is_err());
}

fn scalar_loss(net: &Network, coords: &[Coord], g: &[FieldEvalGrad]) -> f64 {
    let (evals, _) = net.eval_batch(coords, DerivOrder::Second).unwrap();
    evals
        .iter()
        .zip(g)
        .map(|(e, g)| {
            let s = e.second.unwrap();
            (0..OUTPUTS)
                .map(|o| g.value[o] * e.outputs()[o])
                .sum::<f64>()
                + (0..OUTPUTS)
                    .flat_map(|o| (0..AXES).map(move |a| (o, a)))
                    .map(|(o, a)| g.jac[o][a] * e.jac[o][a])
                    .sum::<f64>()
                + (0..AXES).map(|a| g.second[a] * s[a]).sum::<f64>()
        })
        .sum()
}

fn fd_param_grad(net: &Network, coords: &[Coord], g: &[FieldEvalGrad]) -> Vec<f64> {
    let mut out = Vec::new();
    let mut probe = net.clone();
    let counts: Vec<usize> = net.params.tensors().iter().map(|t| t.len()).collect();
    for (ti, &len) in counts.iter().enumerate() {
        for j in 0..len {
            let orig = probe.params.tensors()[ti][j];
            let h = 1e-6 * orig.abs().max(1e-2);
            probe.params.tensors_mut()[ti][j] = orig + h;
            let lp = scalar_loss(&probe, coords, g);
            probe.params.tensors_mut()[ti][j] = orig - h;
            let lm = scalar_loss(&probe, coords, g);
            probe.params.tensors_mut()[ti][j] = orig;
            out.push((lp - lm) / (2.0 * h));
        }
    }
    out
}

fn assert_grad_close(analytic: &NetworkParams, fd: &[f64], tol: f64) {
    let flat: Vec<f64> = analytic
        .tensors()
        .iter()
        .flat_map(|t| t.iter().copied())
        .collect();
    assert_eq!(flat.len(), fd.len());
    let scale = fd.iter().fold(0f64, |m, v| m.max(v.abs()));
    let err = flat
        .iter()
        .zip(fd)
        .fold(0f64, |m, (a, b)| m.max((a - b).abs()));
    assert!(err < tol * scale, "gradient error {err} vs scale {scale}");
}

#[test]
fn backward_value_only_matches_fd() {
    let cfg = region_config(2, 5);
    let net = Network::init(cfg, 21).unwrap();
    let c = Coord::new(Position::new(1.3, 2.2, 0.8), 0.012);
    let g = [FieldEvalGrad {
        value: [1.0, 0.0, 0.0, 0.0],
        ..Default::default()
    }];
    let (_, tape) = net.eval_batch(&[c], DerivOrder::Value).unwrap();
    let grad = tape.backward(&net.params, &g).unwrap();
    assert_grad_close(&grad, &fd_param_grad(&net, &[c], &g), 1e-4);
}

#[test]
fn backward_through_all_derivative_streams_matches_fd() {
    let cfg = region_config(3, 4);
    let net = Network::init(cfg, 22).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let coords: Vec<Coord> = (0..3).map(|_| random_coord(&mut rng, &cfg)).collect();
    let mut r = || rng.random_range(-1.0..1.0);
    let grads: Vec<FieldEvalGrad> = (0..3)
        .map(|_| FieldEvalGrad {
            value: [r(), r(), r(), r()],
            jac: [(); OUTPUTS].map(|_| [r(), r(), r(), r()].map(|v| v * 1e-2)),
            second: [r(), r(), r(), r()].map(|v| v * 1e-4),
        })
        .collect();
    let (_, tape) = net.eval_batch(&coords, DerivOrder::Second).unwrap();
    let grad = tape.backward(&net.params, &grads).unwrap();
    assert_grad_close(&grad, &fd_param_grad(&net, &coords, &grads), 1e-4);
}

#[test]
fn constant_loss_has_zero_gradient() {
    let cfg = region_config(2, 6);
    let net = Network::init(cfg, 1).unwrap();
    let c = Coord::new(Position::new(1.5, 2.5, 1.0), 0.02);
    let (_, tape) = net.eval_batch(&[c], DerivOrder::Second).unwrap();
    let grad = tape
        .backward(&net.params, &[FieldEvalGrad::default()])
        .unwrap();
    assert!(grad
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .all(|&v| v == 0.0));
}

#[test]
fn backward_rejects_missing_intermediates() {
    let cfg = region_config(1, 3);
    let net = Network::init(cfg, 1).unwrap();
    let c = Coord::new(Position::new(1.5, 2.5, 1.0), 0.02);
    let (_, tape) = net.eval_batch(&[c], DerivOrder::First).unwrap();
    let mut g = FieldEvalGrad::default();
    g.second[0] = 1.0;
    assert!(matches!(
        tape.backward(&net.params, &[g]),
        Err(Error::State(_))
    ));
    assert!(matches!(
        tape.backward(&net.params, &[]),
        Err(Error::State(_))
    ));
}

#[test]
fn layer_variance_is_stable_across_depth() {
    let cfg = region_config(4, 128);
    let net = Network::init(cfg, 17).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let coords: Vec<Coord> = (0..10_000).map(|_| random_coord(&mut rng, &cfg)).collect();
    let (_, tape) = net.eval_batch(&coords, DerivOrder::Value).unwrap();
    let var = |a: ArrayView2Helper| {
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        a.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
    };
    // Sine outputs (encoders and modulators) and blend outputs form two
    // series; each must stay flat with depth.
    let mut sine = vec![var(tape.f.0.block(0)), var(tape.g.0.block(0))];
    let mut blend = Vec::new();
    for (_, ht, h) in &tape.hidden {
        sine.push(var(ht.block(0)));
        blend.push(var(h.block(0)));
    }
    for series in [sine, blend] {
        let lo = series.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = series.iter().cloned().fold(0.0, f64::max);
        assert!(hi / lo < 2.0, "layer variances {series:?}");
    }
}

type ArrayView2Helper<'a> = ndarray::ArrayView2<'a, f64>;

#[test]
fn checkpoint_round_trip() {
    let cfg = region_config(2, 6);
    let net = Network::init(cfg, 2).unwrap();
    let ckpt = Checkpoint {
        network: net,
        step: 42,
        output_scale: 0.125,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.write(&path).unwrap();
    let back = Checkpoint::read(&path).unwrap();
    assert_eq!(back.step, 42);
    assert_eq!(back.output_scale, 0.125);
    assert_eq!(back.network.config, cfg);
    for (a, b) in back
        .network
        .params
        .tensors()
        .iter()
        .zip(ckpt.network.params.tensors())
    {
        for (x, y) in a.iter().zip(b) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
    let mut bytes = ckpt.to_bytes();
    bytes.truncate(bytes.len() - 3);
    assert!(Checkpoint::from_bytes(&bytes, &path).is_err());
    let mut bytes = ckpt.to_bytes();
    bytes[0] = b'X';
    assert!(Checkpoint::from_bytes(&bytes, &path).is_err());
}
