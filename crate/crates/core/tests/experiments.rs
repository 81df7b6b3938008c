use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparseflow::costsim::CostParams;
use sparseflow::experiments::controlled::stratified_pixels;
use sparseflow::experiments::fixtures::{pixel_profile, sparse_tensor};
use sparseflow::experiments::*;
use sparseflow::metrics::{neuron_density, pixel_density};
use sparseflow::netspec::NetworkKind;

#[test]
fn stratified_pixels_are_unique_and_sorted() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for p in [0, 50, 102, 151, 204, 256] {
        let px = stratified_pixels(16, p, &mut rng);
        assert_eq!(px.len(), p);
        assert!(px.windows(2).all(|w| w[0] < w[1]));
    }
}

#[test]
fn sweep_is_affine_in_pixels_and_grouping_pays_off() {
    let p = CostParams::default_profile();
    for kind in [NetworkKind::Ann, NetworkKind::Snn] {
        let pts = controlled_sweep(kind, &p, 3).unwrap();
        let xy: Vec<(f64, f64)> = pts[..5].iter().map(|q| (q.pixels as f64, q.time_us)).collect();
        let (_, slope, resid) = affine_fit_residual(&xy);
        assert!(slope > 0.0 && resid < 0.01, "{kind:?}: residual {resid}");
        let at = |px, n| pts.iter().find(|q| q.pixels == px && q.per_pixel == n).unwrap();
        assert!(at(151, 4).time_us < at(204, 1).time_us);
        assert_eq!(at(151, 4).state_rounds, 151);
        assert_eq!(at(151, 6).state_rounds, 302);
        assert_eq!(at(151, 10).state_rounds, 453);
        assert_eq!(at(0, 1).state_rounds, 0);
    }
}

#[test]
fn sweep_is_deterministic() {
    let p = CostParams::default_profile();
    let a = controlled_sweep(NetworkKind::Snn, &p, 9).unwrap();
    let b = controlled_sweep(NetworkKind::Snn, &p, 9).unwrap();
    assert_eq!(sweep_csv(&a, None), sweep_csv(&b, None));
}

#[test]
fn affine_fit_exact_line() {
    let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 3.0 + 2.0 * i as f64)).collect();
    let (b, s, r) = affine_fit_residual(&pts);
    assert!((b - 3.0).abs() < 1e-12 && (s - 2.0).abs() < 1e-12 && r < 1e-12);
}

#[test]
fn sparse_tensor_hits_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = sparse_tensor(56, 56, 32, 0.453, 0.05, true, &mut rng);
    assert!((pixel_density(&t) - 0.453).abs() < 1.0 / 3136.0);
    assert!((neuron_density(&t) - 0.05).abs() < 1.0 / 100352.0);
    let dense = sparse_tensor(56, 56, 32, 0.996, 0.996 / 32.0, false, &mut rng);
    assert!((pixel_density(&dense) - 0.996).abs() < 1.0 / 3136.0);
}

#[test]
fn fixtures_follow_profiles_and_snn_is_cheaper() {
    let p = CostParams::default_profile();
    for kind in [NetworkKind::Ann, NetworkKind::Snn] {
        let fx = density_fixture(kind, 4).unwrap();
        let profile = pixel_profile(kind);
        assert!((pixel_density(&fx.inputs[0]) * 100.0 - profile[0]).abs() < 0.05);
        for (i, t) in fx.prescribed[0][..7].iter().enumerate() {
            let pd = pixel_density(t.as_ref().unwrap()) * 100.0;
            assert!((pd - profile[i + 1]).abs() < 0.05, "layer {i}: {pd}");
        }
    }
    let ann = fixture_cost(NetworkKind::Ann, &p, 4).unwrap();
    let snn = fixture_cost(NetworkKind::Snn, &p, 4).unwrap();
    assert!(snn.mean_latency_us < ann.mean_latency_us);
    assert!(snn.mean_energy_uj < ann.mean_energy_uj);
}
