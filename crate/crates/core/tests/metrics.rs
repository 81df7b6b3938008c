use sparseflow::evio::FlowGroundTruth;
use sparseflow::metrics::{
    aee, channel_histogram, density_level, density_map_pgm, flow_color_ppm, neuron_density, pixel_density,
    sequence_aee, DEFAULT_OUTLIER_PX,
};
use sparseflow::tensorcore::{Bf16, Tensor};
use sparseflow::Error;

#[test]
fn endpoint_error_by_hand() {
    // 2x2 prediction, all zero flow.
    let pred = Tensor::zeros(2, 2, 2);
    let flow = vec![3.0, 4.0, 1.0, 0.0, 0.0, 0.5, 9.0, 9.0];
    let gt = FlowGroundTruth::new(2, 2, flow, vec![true, true, true, false]).unwrap();
    let mask = vec![true, true, false, true];
    // Pixels 0 and 1 count: errors 5 and 1.
    let e = aee(&pred, &gt, &mask, DEFAULT_OUTLIER_PX).unwrap();
    assert_eq!(e.pixels, 2);
    assert!((e.aee - 3.0).abs() < 1e-12);
    assert!((e.outlier_pct - 50.0).abs() < 1e-12);
    let none = aee(&pred, &gt, &[false; 4], DEFAULT_OUTLIER_PX);
    assert!(matches!(none, Err(Error::NoValidPixels)));
    let seq = sequence_aee(&[Ok(e), none]).unwrap();
    assert!((seq.aee - 3.0).abs() < 1e-12);
    assert!(sequence_aee(&[Err(Error::NoValidPixels)]).is_none());
}

#[test]
fn densities_and_histogram() {
    let mut t = Tensor::zeros(3, 3, 4);
    t.set(0, 0, 0, Bf16::ONE);
    t.set(0, 0, 3, Bf16::from_f32(-1.0));
    t.set(2, 1, 2, Bf16::from_f32(0.5));
    assert!((neuron_density(&t) - 3.0 / 36.0).abs() < 1e-15);
    assert!((pixel_density(&t) - 2.0 / 9.0).abs() < 1e-15);
    assert_eq!(channel_histogram(&t), vec![7, 1, 1, 0, 0]);
}

#[test]
fn images_have_expected_headers_and_levels() {
    assert_eq!((density_level(0), density_level(4), density_level(8), density_level(30)), (0, 128, 255, 255));
    let mut t = Tensor::zeros(2, 3, 8);
    for c in 0..4 {
        t.set(1, 2, c, Bf16::ONE);
    }
    let img = density_map_pgm(&t);
    assert!(img.starts_with(b"P5\n3 2\n255\n"));
    assert_eq!(&img[img.len() - 6..], &[0, 0, 0, 0, 0, 128]);
    let flow = Tensor::from_f32(1, 2, 2, &[0.0, 0.0, 0.5, 0.0]).unwrap();
    let ppm = flow_color_ppm(&flow).unwrap();
    assert!(ppm.starts_with(b"P6\n2 1\n255\n"));
    assert_eq!(&ppm[ppm.len() - 6..ppm.len() - 3], &[0, 0, 0]);
    assert!(flow_color_ppm(&Tensor::zeros(2, 2, 3)).is_err());
}
