use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spectrum_market::rl::Mlp;
use spectrum_market::verify::gradient_check;

#[test]
fn backprop_matches_central_differences() {
    let worst = gradient_check(20, 2024, 1e-5).unwrap();
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn check_detects_a_wrong_gradient() {
    // Perturbing one weight after computing the analytic gradient must show
    // up as a finite-difference mismatch, otherwise the check proves nothing.
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = Mlp::new(&[3, 4, 2], &mut rng).unwrap();
    let states = Array2::from_shape_vec((2, 3), vec![0.5, -0.2, 0.1, 0.9, 0.3, -0.7]).unwrap();
    let (loss, grads) = net.loss_and_gradients(states.view(), &[0, 1], &[1.0, -1.0]).unwrap();
    let mut p = net.params();
    let g0 = grads.weights[0][[0, 0]];
    p[0] += 1e-3;
    net.set_params(&p).unwrap();
    let (moved, _) = net.loss_and_gradients(states.view(), &[0, 1], &[1.0, -1.0]).unwrap();
    let slope = (moved - loss) / 1e-3;
    assert!((slope - g0).abs() < 1e-2 * (1.0 + g0.abs()));
    assert!((slope - (g0 + 1.0)).abs() > 0.5);
}

#[test]
fn params_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut net = Mlp::new(&[6, 8, 8, 10], &mut rng).unwrap();
    let p: Vec<f64> = (0..net.params().len()).map(|i| i as f64 * 0.01).collect();
    net.set_params(&p).unwrap();
    assert_eq!(net.params(), p);
    assert!(net.set_params(&p[1..]).is_err());
}
