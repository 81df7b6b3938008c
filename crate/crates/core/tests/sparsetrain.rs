use std::f64::consts::PI;

use sparseflow::dfengine::{run_network, EngineConfig};
use sparseflow::netspec::{
    firenet, firenet_layout, random_network, FireNetShape, InitRanges, NetworkKind, NetworkSpec,
};
use sparseflow::sparsetrain::*;

fn two_layer(kind: NetworkKind, channels: usize, recurrent: bool, size: usize, seed: u64) -> NetworkSpec {
    let layout = firenet_layout(kind, channels);
    let mut hidden = layout[1];
    hidden.in_channels = 2;
    hidden.recurrent = recurrent;
    random_network(&[hidden, layout[7]], size, size, InitRanges::default(), seed).unwrap()
}

fn small_task(size: usize, frames: usize, seed: u64) -> Vec<Sample> {
    translating_task(&TaskConfig {
        height: size,
        width: size,
        frames,
        samples: 2,
        seed,
        ..TaskConfig::default()
    })
    .unwrap()
}

#[test]
fn surrogate_at_threshold_is_one_over_pi() {
    let (_, dt) = fatrelu_surrogate_backward(0.7, 0.7, 2.0, 1.0);
    assert!((dt + 2.0 * 0.7 / PI).abs() < 1e-15);
    let (dx, dt) = fatrelu_surrogate_backward(1.0, 1001.0, 1.0, 1.0);
    assert!(dt.abs() < 1e-6);
    assert!(dx.abs() < 1e-6);
}

#[test]
fn threshold_gradient_matches_finite_difference() {
    let sur = Surrogate { width: 1.0 };
    let f = |x: f64, t: f64| 1.7 * x * sur.relaxed_step(x - t);
    for (x, t) in [(0.3, 0.5), (1.2, 0.4), (-0.8, 0.1), (2.5, 2.4)] {
        let sg = sur.grad(x - t);
        let analytic = -1.7 * x * sg;
        let eps = 1e-6;
        let numeric = (f(x, t + eps) - f(x, t - eps)) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        assert!(rel < 1e-5, "x={x} t={t} rel={rel}");
    }
}

#[test]
fn sparsification_loss_examples() {
    let v = sparsification_loss(&[vec![1.0, -2.0, 3.0]], &[vec![2.0]], &[1.0]).unwrap();
    assert_eq!(v, 4.25);
    let d = sparsification_loss(&[vec![1.0, -2.0, 3.0]], &[vec![2.0]], &[2.0]).unwrap();
    assert_eq!(d, 8.5);
    let tiny = sparsification_loss(&[vec![-1.0, 0.0]], &[vec![1e8, 1e8]], &[1.0]).unwrap();
    assert!(tiny < 1e-15);
    assert!(sparsification_loss(&[vec![1.0]], &[vec![0.0]], &[1.0]).is_err());
}

#[test]
fn median_threshold_init() {
    let t = init_thresholds_from_activations(&[vec![
        vec![5.0, 1.0, 3.0, 2.0, 4.0],
        vec![4.0, 1.0, 3.0, 2.0],
        vec![],
    ]]);
    assert_eq!(t, vec![vec![3.0, 2.5, MIN_THRESHOLD]]);
}

#[test]
fn one_cycle_schedule_shape() {
    let cfg = TrainConfig {
        epochs: 21,
        lr_max: 0.1,
        ..TrainConfig::default()
    };
    let lrs: Vec<f64> = (0..21).map(|e| cfg.learning_rate(e)).collect();
    let peak = lrs.iter().cloned().fold(0.0, f64::max);
    assert!((peak - 0.1).abs() < 1e-12);
    assert!(lrs[0] < 0.01 && lrs[20] < 1e-4);
}

#[test]
fn gradient_check_on_two_layer_nets() {
    let data = small_task(8, 3, 1);
    for kind in [NetworkKind::Ann, NetworkKind::Snn] {
        for recurrent in [false, true] {
            for seed in 0..3 {
                let net = TrainNet::from_spec(&two_layer(kind, 4, recurrent, 8, seed)).unwrap();
                let cfg = TrainConfig {
                    lambda_s: 0.01,
                    ..TrainConfig::default()
                };
                let r = grad_check(&net, &data, &cfg, 25, 1e-5, seed).unwrap();
                assert!(r.worst() < 1e-4, "{kind:?} rec={recurrent} seed={seed}: {r:?}");
                assert!(r.max_rel_error.contains_key("threshold"));
            }
        }
    }
}

#[test]
fn gradient_check_through_truncated_time() {
    let data = small_task(8, 4, 2);
    let net = TrainNet::from_spec(&two_layer(NetworkKind::Snn, 3, true, 8, 4)).unwrap();
    let cfg = TrainConfig {
        lambda_s: 0.001,
        bptt: 2,
        ..TrainConfig::default()
    };
    // Truncation makes the analytic gradient differ from the full one.
    let r = grad_check(&net, &data, &cfg, 20, 1e-5, 3).unwrap();
    assert!(r.worst() > 1e-4, "{r:?}");
    let full = TrainConfig { bptt: 4, ..cfg };
    let r = grad_check(&net, &data, &full, 20, 1e-5, 3).unwrap();
    assert!(r.worst() < 1e-4, "{r:?}");
}

fn paired(kind: NetworkKind) -> (TrainOutcome, TrainOutcome) {
    let data = translating_task(&TaskConfig {
        seed: 5,
        ..TaskConfig::default()
    })
    .unwrap();
    let net = firenet(
        FireNetShape {
            kind,
            channels: 8,
            height: 16,
            width: 16,
        },
        11,
    )
    .unwrap();
    let run = |lambda_s| {
        let cfg = TrainConfig {
            lambda_s,
            epochs: 20,
            ..TrainConfig::default()
        };
        train(&net, &data, &cfg).unwrap()
    };
    (run(0.0), run(1e-3))
}

#[test]
fn sparsification_lowers_density() {
    for kind in [NetworkKind::Ann, NetworkKind::Snn] {
        let (dense, sparse) = paired(kind);
        assert!(
            sparse.final_eval.mean_neuron_density < dense.final_eval.mean_neuron_density,
            "{kind:?}: {:?} vs {:?}",
            sparse.final_eval,
            dense.final_eval
        );
        assert_eq!(dense.log.len(), 20);
    }
}

#[test]
fn training_is_deterministic_and_exports_run() {
    let data = small_task(8, 3, 7);
    let net = two_layer(NetworkKind::Ann, 4, true, 8, 1);
    let cfg = TrainConfig {
        lambda_s: 1e-3,
        epochs: 5,
        ..TrainConfig::default()
    };
    let a = train(&net, &data, &cfg).unwrap();
    let b = train(&net, &data, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(train_log_csv(&a.log, None), train_log_csv(&b.log, None));
    let inputs = data[0].input_tensors().unwrap();
    let out = run_network(&inputs, &a.net, &EngineConfig::default()).unwrap();
    assert_eq!(out.flow.len(), 3);
}

#[test]
fn without_sparsification_thresholds_stay_near_init() {
    let data = small_task(8, 3, 8);
    let net = two_layer(NetworkKind::Ann, 4, false, 8, 2);
    let cfg = TrainConfig {
        lambda_s: 0.0,
        epochs: 5,
        lr_max: 0.01,
        ..TrainConfig::default()
    };
    let init = {
        let zero = TrainConfig { epochs: 0, ..cfg.clone() };
        train(&net, &data, &zero).unwrap().params
    };
    let out = train(&net, &data, &cfg).unwrap();
    for (a, b) in init.layers[0].t.iter().zip(&out.params.layers[0].t) {
        assert!((a - b).abs() < 0.05, "{a} -> {b}");
    }
}

#[test]
fn log_csv_header() {
    let csv = train_log_csv(&[], Some("# h"));
    assert_eq!(csv, "# h\nepoch,loss,proxy,ls,mean_neuron_density,mean_pixel_density\n");
}

#[test]
fn rejects_bad_config() {
    let data = small_task(8, 2, 1);
    let net = two_layer(NetworkKind::Ann, 4, false, 8, 1);
    for cfg in [
        TrainConfig { lambda_s: -1.0, ..TrainConfig::default() },
        TrainConfig { lambda_i: vec![0.0], ..TrainConfig::default() },
        TrainConfig { lambda_i: vec![1.0, 1.0], ..TrainConfig::default() },
        TrainConfig { bptt: 0, ..TrainConfig::default() },
    ] {
        assert!(train(&net, &data, &cfg).is_err());
    }
    let big = firenet(FireNetShape::full(NetworkKind::Ann), 1).unwrap();
    let big_data = small_task(56, 1, 1);
    assert!(train(&big, &big_data, &TrainConfig::default()).is_err());
}

#[test]
fn task_spikes_rebuild_frames() {
    use sparseflow::evio::{build_frames, FrameMode};
    let s = &small_task(8, 3, 3)[0];
    let spikes = s.spikes(1000);
    let frames = build_frames(&spikes, 8, 8, FrameMode::Window(1000)).unwrap();
    let tensors = s.input_tensors().unwrap();
    assert_eq!(frames.len(), 3);
    for (f, t) in frames.iter().zip(&tensors) {
        assert!(f.to_tensor().bit_eq(t));
    }
    assert!(s.ground_truth().unwrap().valid.iter().all(|&v| v));
}
