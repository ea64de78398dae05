use super::*;
use approx::assert_relative_eq;
use ndarray::{array, Array2};
use proptest::prelude::*;

fn random_input(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = RngStream::new(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.standard_normal())
}

fn linear(width_in: usize, width_out: usize, activation: Activation) -> LayerSpec {
    LayerSpec {
        width_in,
        width_out,
        activation,
        batch_norm: false,
    }
}

/// `Σ r_ij · out_ij` with fixed pseudo-random coefficients.
fn projection_loss(rows: usize, cols: usize, seed: u64) -> impl Fn(&Array2<f64>) -> (f64, Array2<f64>) {
    let coef = random_input(rows, cols, seed);
    move |out: &Array2<f64>| ((out * &coef).sum(), coef.clone())
}

/// Mean binary cross-entropy of a sigmoid head against fixed labels.
fn bce_loss(labels: Vec<f64>) -> impl Fn(&Array2<f64>) -> (f64, Array2<f64>) {
    move |out: &Array2<f64>| {
        let n = labels.len() as f64;
        let mut value = 0.0;
        let mut grad = Array2::zeros(out.raw_dim());
        for (i, &y) in labels.iter().enumerate() {
            let p = out[[i, 0]];
            value -= (y * p.ln() + (1.0 - y) * (1.0 - p).ln()) / n;
            grad[[i, 0]] = (-(y / p) + (1.0 - y) / (1.0 - p)) / n;
        }
        (value, grad)
    }
}

#[test]
fn identity_layer_passes_input_through() {
    let mut rng = RngStream::new(0);
    let mut net = Network::new(&[linear(3, 3, Activation::Identity)], &mut rng).unwrap();
    net.layers[0].weight = Array2::eye(3);
    let x = array![[1.0, -2.0, 0.5], [3.0, 0.0, -1.0]];
    assert_eq!(net.predict(&x).unwrap(), x);
}

#[test]
fn sigmoid_head_at_zero_is_half() {
    let mut rng = RngStream::new(0);
    let mut net = Network::new(&[linear(2, 1, Activation::Sigmoid)], &mut rng).unwrap();
    net.layers[0].weight.fill(0.0);
    let out = net.predict(&array![[0.3, -0.7]]).unwrap();
    assert_eq!(out[[0, 0]], 0.5);
}

#[test]
fn exp_head_values() {
    let mut rng = RngStream::new(0);
    let mut net = Network::new(&[linear(1, 2, Activation::Exp)], &mut rng).unwrap();
    net.layers[0].weight.fill(0.0);
    net.layers[0].bias = Some(array![0.0, 2f64.ln()]);
    let out = net.predict(&array![[5.0]]).unwrap();
    assert_relative_eq!(out[[0, 0]], 1.0);
    assert_relative_eq!(out[[0, 1]], 2.0, max_relative = 1e-15);
}

#[test]
fn exp_only_on_head() {
    let mut rng = RngStream::new(0);
    let specs = [linear(2, 3, Activation::Exp), linear(3, 1, Activation::Sigmoid)];
    assert!(matches!(Network::new(&specs, &mut rng), Err(Error::Config(_))));
}

#[test]
fn linear_layer_weight_gradient_is_input() {
    let mut rng = RngStream::new(1);
    let net = Network::new(&[linear(3, 2, Activation::Identity)], &mut rng).unwrap();
    let x = array![[0.5, -1.0, 2.0]];
    let pass = net.forward(&x, Mode::Train).unwrap();
    let (grads, _) = net.backward(&pass, &Array2::ones((1, 2))).unwrap();
    // weight is stored [in, out]: every output unit's column equals x
    for j in 0..2 {
        assert_eq!(grads.layers[0].weight.column(j).to_vec(), vec![0.5, -1.0, 2.0]);
    }
}

#[test]
fn sigmoid_local_gradient_quarter() {
    let mut rng = RngStream::new(2);
    let mut net = Network::new(&[linear(1, 1, Activation::Sigmoid)], &mut rng).unwrap();
    net.layers[0].weight.fill(0.0);
    let pass = net.forward(&array![[1.0]], Mode::Train).unwrap();
    let (grads, _) = net.backward(&pass, &array![[1.0]]).unwrap();
    assert_eq!(grads.layers[0].bias.as_ref().unwrap()[0], 0.25);
}

#[test]
fn backward_is_linear_in_upstream() {
    let mut rng = RngStream::new(3);
    let specs = NetSpec::new(&[5, 1], true, Activation::Sigmoid).layer_specs(4).unwrap();
    let net = Network::new(&specs, &mut rng).unwrap();
    let x = random_input(6, 4, 4);
    let pass = net.forward(&x, Mode::Train).unwrap();
    let up = random_input(6, 1, 5);
    let (g1, _) = net.backward(&pass, &up).unwrap();
    let (g3, _) = net.backward(&pass, &(&up * 3.0)).unwrap();
    for (a, b) in g1.flatten().iter().zip(g3.flatten()) {
        assert_relative_eq!(3.0 * a, b, epsilon = 1e-14, max_relative = 1e-12);
    }
}

#[test]
fn identity_sum_loss_grad_check_is_exact() {
    let mut rng = RngStream::new(4);
    let net = Network::new(&[linear(3, 2, Activation::Identity)], &mut rng).unwrap();
    let x = array![[1.0, 2.0, 3.0], [-1.5, 0.5, 0.25]];
    let report = grad_check(
        &net,
        &x,
        |out: &Array2<f64>| (out.sum(), Array2::ones(out.raw_dim())),
        GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-9, "{report:?}");
}

#[test]
fn relu_batchnorm_three_layer_grad_check() {
    let mut rng = RngStream::new(5);
    let specs = NetSpec::new(&[7, 5, 3], true, Activation::Identity).layer_specs(4).unwrap();
    let net = Network::new(&specs, &mut rng).unwrap();
    let x = random_input(8, 4, 6);
    let report = grad_check(&net, &x, projection_loss(8, 3, 7), GradCheckOptions::default()).unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
    assert!(report.checked > 50);
}

#[test]
fn sigmoid_mlp_bce_grad_check() {
    let mut rng = RngStream::new(8);
    let specs = NetSpec::new(&[6, 4, 1], false, Activation::Sigmoid).layer_specs(5).unwrap();
    let net = Network::new(&specs, &mut rng).unwrap();
    let x = random_input(10, 5, 9);
    let labels = (0..10).map(|i| (i % 2) as f64).collect();
    let report = grad_check(&net, &x, bce_loss(labels), GradCheckOptions::default()).unwrap();
    assert!(report.max_rel_error < 1e-5, "{report:?}");
}

#[test]
fn corrupted_gradient_is_detected() {
    let mut rng = RngStream::new(10);
    let specs = NetSpec::new(&[4, 1], false, Activation::Sigmoid).layer_specs(3).unwrap();
    let net = Network::new(&specs, &mut rng).unwrap();
    let x = random_input(6, 3, 11);
    let loss = bce_loss(vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    let pass = net.forward(&x, Mode::Train).unwrap();
    let (_, up) = loss(pass.output());
    let (mut grads, _) = net.backward(&pass, &up).unwrap();
    grads.layers[0].weight[[0, 0]] += 0.1;
    let report = grad_check_against(&net, &x, loss, &grads, GradCheckOptions::default()).unwrap();
    assert!(report.max_rel_error > 1e-2);
    assert_eq!(report.worst, Some((0, 0)));
}

#[test]
fn input_gradient_matches_finite_differences() {
    let mut rng = RngStream::new(12);
    let specs = NetSpec::new(&[6, 2], true, Activation::Tanh).layer_specs(3).unwrap();
    let net = Network::new(&specs, &mut rng).unwrap();
    let x = random_input(5, 3, 13);
    let loss = projection_loss(5, 2, 14);
    let pass = net.forward(&x, Mode::Train).unwrap();
    let (_, up) = loss(pass.output());
    let (_, dx) = net.backward(&pass, &up).unwrap();
    let h = 1e-6;
    for i in 0..5 {
        for j in 0..3 {
            let mut xp = x.clone();
            xp[[i, j]] += h;
            let mut xm = x.clone();
            xm[[i, j]] -= h;
            let fp = loss(net.forward(&xp, Mode::Train).unwrap().output()).0;
            let fm = loss(net.forward(&xm, Mode::Train).unwrap().output()).0;
            let numeric = (fp - fm) / (2.0 * h);
            assert!((numeric - dx[[i, j]]).abs() < 1e-6 * numeric.abs().max(1.0));
        }
    }
}

#[test]
fn adam_zero_gradient_is_noop() {
    let mut rng = RngStream::new(15);
    let specs = NetSpec::new(&[4, 1], true, Activation::Sigmoid).layer_specs(3).unwrap();
    let mut net = Network::new(&specs, &mut rng).unwrap();
    let before = net.parameters();
    let zero = net.zero_gradients();
    net.adam_step(&zero, 1e-3).unwrap();
    assert_eq!(net.parameters(), before);
    assert_eq!(net.step(), 1);
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    // step 1: m̂ = g, v̂ = g², update = lr · g / (|g| + ε)
    for g in [1e-3, 1.0, 1e3] {
        let mut rng = RngStream::new(16);
        let mut net = Network::new(&[linear(1, 1, Activation::Identity)], &mut rng).unwrap();
        let before = net.layers[0].weight[[0, 0]];
        let mut grads = net.zero_gradients();
        grads.layers[0].weight[[0, 0]] = g;
        net.adam_step(&grads, 1e-3).unwrap();
        let delta = before - net.layers[0].weight[[0, 0]];
        let expected = 1e-3 * g / (g + 1e-8);
        assert_relative_eq!(delta, expected, max_relative = 1e-9);
        assert!((delta - 1e-3).abs() < 1e-3 * 1e-5 / g.min(1.0) + 1e-12);
    }
}

#[test]
fn adam_counts_steps_and_rejects_bad_input() {
    let mut rng = RngStream::new(17);
    let mut net = Network::new(&[linear(2, 1, Activation::Sigmoid)], &mut rng).unwrap();
    let mut g = net.zero_gradients();
    for k in 1..=3 {
        net.adam_step(&g, 1e-2).unwrap();
        assert_eq!(net.step(), k);
    }
    assert!(matches!(net.adam_step(&g, 0.0), Err(Error::Config(_))));
    g.layers[0].weight[[0, 0]] = f64::NAN;
    assert!(matches!(net.adam_step(&g, 1e-3), Err(Error::Numeric { .. })));
    assert_eq!(net.step(), 3);
}

#[test]
fn eval_mode_has_no_cross_row_leakage() {
    let mut rng = RngStream::new(18);
    let specs = NetSpec::new(&[5, 3, 1], true, Activation::Sigmoid).layer_specs(4).unwrap();
    let mut net = Network::new(&specs, &mut rng).unwrap();
    // move running statistics away from their initial values
    for seed in 0..5 {
        let pass = net.forward(&random_input(16, 4, 100 + seed), Mode::Train).unwrap();
        net.update_running_stats(&pass).unwrap();
    }
    let x = random_input(7, 4, 19);
    let batch = net.predict(&x).unwrap();
    for i in 0..7 {
        let row = x.slice(ndarray::s![i..i + 1, ..]).to_owned();
        let single = net.predict(&row).unwrap();
        assert_eq!(single[[0, 0]], batch[[i, 0]]);
    }
}

#[test]
fn running_stats_stay_nonnegative_and_move() {
    let mut rng = RngStream::new(20);
    let specs = NetSpec::new(&[3, 1], true, Activation::Sigmoid).layer_specs(2).unwrap();
    let mut net = Network::new(&specs, &mut rng).unwrap();
    let pass = net.forward(&random_input(8, 2, 21), Mode::Train).unwrap();
    let before = net.clone();
    net.update_running_stats(&pass).unwrap();
    let bn = net.layers[0].bn.as_ref().unwrap();
    assert!(bn.running_var.iter().all(|&v| v >= 0.0));
    assert_ne!(net, before);
}

#[test]
fn train_mode_rejects_single_row_with_batch_norm() {
    let mut rng = RngStream::new(22);
    let specs = NetSpec::new(&[3, 1], true, Activation::Sigmoid).layer_specs(2).unwrap();
    let net = Network::new(&specs, &mut rng).unwrap();
    assert!(matches!(net.forward(&array![[1.0, 2.0]], Mode::Train), Err(Error::Config(_))));
    assert!(net.forward(&array![[1.0, 2.0]], Mode::Eval).is_ok());
}

#[test]
fn shape_and_state_errors() {
    let mut rng = RngStream::new(23);
    let net = Network::new(&[linear(3, 1, Activation::Sigmoid)], &mut rng).unwrap();
    assert!(matches!(net.forward(&Array2::zeros((2, 4)), Mode::Eval), Err(Error::Config(_))));
    let eval_pass = net.forward(&Array2::zeros((2, 3)), Mode::Eval).unwrap();
    assert!(matches!(net.backward(&eval_pass, &Array2::ones((2, 1))), Err(Error::State(_))));
    let other = Network::new(&[linear(3, 2, Activation::Sigmoid)], &mut rng).unwrap();
    let foreign = other.forward(&Array2::zeros((2, 3)), Mode::Train).unwrap();
    assert!(matches!(net.backward(&foreign, &Array2::ones((2, 2))), Err(Error::State(_))));
}

#[test]
fn non_finite_activation_reports_layer() {
    let mut rng = RngStream::new(24);
    let specs = [linear(1, 2, Activation::Relu), linear(2, 1, Activation::Exp)];
    let mut net = Network::new(&specs, &mut rng).unwrap();
    net.layers[1].weight.fill(1e3);
    net.layers[0].weight.fill(1.0);
    match net.predict(&array![[10.0]]) {
        Err(Error::Numeric { location, .. }) => assert_eq!(location, "layer 1"),
        other => panic!("expected numeric error, got {other:?}"),
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let mut rng = RngStream::new(25);
    let specs = NetSpec::new(&[4, 1], true, Activation::Sigmoid).layer_specs(3).unwrap();
    let net = Network::new(&specs, &mut rng).unwrap();
    let x = random_input(5, 3, 26);
    assert_eq!(net.predict(&x).unwrap(), net.predict(&x).unwrap());
}

#[test]
fn units_notation_parses() {
    assert_eq!(NetSpec::parse_units("37/24/1").unwrap(), vec![37, 24, 1]);
    assert!(NetSpec::parse_units("37/x").is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_architectures_have_exact_gradients(
        hidden in prop::collection::vec(1usize..9, 0..3),
        width_in in 1usize..7,
        batch_norm in any::<bool>(),
        head_sigmoid in any::<bool>(),
        seed in 0u64..10_000,
    ) {
        let mut units = hidden.clone();
        units.push(if head_sigmoid { 1 } else { 2 });
        let head = if head_sigmoid { Activation::Sigmoid } else { Activation::Exp };
        let specs = NetSpec::new(&units, batch_norm, head).layer_specs(width_in).unwrap();
        let mut rng = RngStream::new(seed);
        let net = Network::new(&specs, &mut rng).unwrap();
        let x = random_input(6, width_in, seed + 1);
        let report = grad_check(&net, &x, projection_loss(6, units[units.len() - 1], seed + 2), GradCheckOptions::default()).unwrap();
        prop_assert!(report.max_rel_error < 1e-5, "{:?}", report);
    }

    #[test]
    fn adam_preserves_shapes(seed in 0u64..1000, lr in 1e-5f64..1e-1) {
        let mut rng = RngStream::new(seed);
        let specs = NetSpec::new(&[3, 2], true, Activation::Exp).layer_specs(4).unwrap();
        let mut net = Network::new(&specs, &mut rng).unwrap();
        let pass = net.forward(&random_input(5, 4, seed), Mode::Train).unwrap();
        let (grads, _) = net.backward(&pass, &Array2::ones((5, 2))).unwrap();
        let shapes: Vec<usize> = net.parameters().slices().iter().map(|s| s.len()).collect();
        net.adam_step(&grads, lr).unwrap();
        let after: Vec<usize> = net.parameters().slices().iter().map(|s| s.len()).collect();
        prop_assert_eq!(shapes, after);
        prop_assert_eq!(net.step(), 1);
    }
}
