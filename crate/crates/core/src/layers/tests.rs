use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{Graph, Tensor};
use crate::optim::{Adam, AdamConfig};

fn range(lo: f64, hi: f64) -> InitRange {
    InitRange::new(lo, hi).unwrap()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn gaussian_kernel_values() {
    assert_eq!(gaussian_kernel(0.0, 1.0).unwrap(), 1.0);
    assert!(close(gaussian_kernel(1.0, 1.0).unwrap(), (-0.5f64).exp(), 1e-15));
    assert!(close(gaussian_kernel(1.0, 1.0).unwrap(), 0.6065, 1e-4));
    assert!(close(gaussian_kernel(2.0, 1.0).unwrap(), 0.1353, 1e-4));
    assert!(gaussian_kernel(1.0, SIGMA_MIN / 2.0).is_err());
}

#[test]
fn equidistant_centers() {
    assert_eq!(
        init_urbf_centers(range(-5.0, 5.0), 5).unwrap(),
        vec![-5.0, -2.5, 0.0, 2.5, 5.0]
    );
    assert_eq!(init_urbf_centers(range(0.0, 8.0), 2).unwrap(), vec![0.0, 8.0]);
    let want: Vec<f64> = (0..5).map(|k| 0.0 + k as f64 * (8.0 - 0.0) / 4.0).collect();
    assert_eq!(init_urbf_centers(range(0.0, 8.0), 5).unwrap(), want);
    assert!(init_urbf_centers(range(0.0, 8.0), 1).is_err());
    assert!(InitRange::new(1.0, 1.0).is_err());
}

#[test]
fn urbf_output_width_and_peak() {
    let layer = UrbfLayer::new(2, 20, range(-5.0, 5.0), true).unwrap();
    assert_eq!(layer.output_dim(), 40);
    let net = Network::from_layers(2, vec![
        Layer::Urbf(layer.clone()),
        Layer::Affine(AffineLayer::new(Tensor::zeros(&[1, 40]), Tensor::zeros(&[1]), Activation::None).unwrap()),
    ])
    .unwrap();
    let mut g = Graph::new();
    let c0 = layer.centers().at(0, 3);
    let c1 = layer.centers().at(1, 7);
    let x = g.constant(Tensor::from_rows(&[[c0, c1]]).unwrap());
    let mut leaves = Vec::new();
    let z = layer.forward(&mut g, x, &mut leaves).unwrap();
    let z = g.value(z);
    assert_eq!(z.shape(), &[1, 40]);
    assert_eq!(z.at(0, 3), 1.0);
    assert_eq!(z.at(0, 20 + 7), 1.0);
    assert_eq!(net.spec().output_dim(), 1);
}

#[test]
fn urbf_two_kernel_scalar_case() {
    let layer = UrbfLayer::from_parts(
        Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap(),
        Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap(),
        range(0.0, 1.0),
        true,
    )
    .unwrap();
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
    let z = layer.forward(&mut g, x, &mut Vec::new()).unwrap();
    assert_eq!(g.value(z).data(), &[1.0, (-0.5f64).exp()]);

    let bad = g.constant(Tensor::zeros(&[1, 2]));
    assert!(layer.forward(&mut g, bad, &mut Vec::new()).is_err());
}

#[test]
fn urbf_rejects_degenerate_centers_and_small_spreads() {
    let centers = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
    let spreads = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
    assert!(UrbfLayer::from_parts(centers, spreads, range(0.0, 1.0), true).is_err());
    let centers = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
    let spreads = Tensor::matrix(1, 2, vec![1.0, 1e-4]).unwrap();
    assert!(UrbfLayer::from_parts(centers, spreads, range(0.0, 1.0), true).is_err());
}

#[test]
fn urbf_initial_spread_is_one_gap() {
    let layer = UrbfLayer::new(3, 5, range(-5.0, 5.0), true).unwrap();
    assert!(layer.spreads().data().iter().all(|&s| s == 2.5));
}

fn mrbf(centers: &[[f64; 2]], spreads: &[f64], weights: &[&[f64]]) -> MrbfLayer {
    MrbfLayer::new(
        Tensor::from_rows(centers).unwrap(),
        Tensor::vector(spreads.to_vec()).unwrap(),
        Tensor::from_rows(weights).unwrap(),
    )
    .unwrap()
}

fn mrbf_eval(layer: &MrbfLayer, x: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let xv = g.constant(Tensor::from_rows(&[x]).unwrap());
    let y = layer.forward(&mut g, xv, &mut Vec::new()).unwrap();
    g.value(y).data().to_vec()
}

#[test]
fn mrbf_examples() {
    let one = mrbf(&[[0.5, -1.0]], &[1.0], &[&[2.0]]);
    assert!(close(mrbf_eval(&one, &[0.5, -1.0])[0], 2.0, 1e-12));

    let zero = mrbf(&[[0.0, 0.0], [1.0, 2.0]], &[1.0, 0.5], &[&[0.0, 0.0], &[0.0, 0.0]]);
    assert_eq!(mrbf_eval(&zero, &[0.3, 0.7]), vec![0.0, 0.0]);

    let two = mrbf(&[[0.0, 0.0], [3.0, 4.0]], &[1.0, 1.0], &[&[1.0, 1.0]]);
    let want = 1.0 + (-25.0f64 / 2.0).exp();
    assert!(close(mrbf_eval(&two, &[0.0, 0.0])[0], want, 1e-12));

    let mut g = Graph::new();
    let bad = g.constant(Tensor::zeros(&[1, 3]));
    assert!(two.forward(&mut g, bad, &mut Vec::new()).is_err());
}

#[test]
fn identity_network_passes_input_through() {
    let net = Network::from_layers(
        3,
        vec![Layer::Affine(
            AffineLayer::new(Tensor::identity(3), Tensor::zeros(&[3]), Activation::None).unwrap(),
        )],
    )
    .unwrap();
    let x = Tensor::from_rows(&[[1.0, -2.0, 3.5], [0.0, 4.0, -1.0]]).unwrap();
    assert_eq!(net.predict(&x).unwrap(), x);
}

#[test]
fn parameter_counts() {
    let mlp = NetworkSpec::mlp(2, &[16], 1).unwrap();
    assert_eq!(mlp.param_count(), 2 * 16 + 16 + 16 + 1);
    assert_eq!(mlp.param_count(), 65);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(Network::new(mlp, &mut rng).unwrap().param_count(), 65);

    let urbf = NetworkSpec::urbf(2, 5, range(-5.0, 5.0), true, &[16], 1).unwrap();
    let net = Network::new(urbf, &mut rng).unwrap();
    match &net.layers()[1] {
        Layer::Affine(a) => assert_eq!(a.inputs(), 10),
        other => panic!("expected affine, got {other:?}"),
    }
}

#[test]
fn spec_validation() {
    let r = range(0.0, 1.0);
    let urbf = LayerSpec::Urbf {
        nnpi: 4,
        range: r,
        learn_spreads: true,
    };
    assert!(NetworkSpec::new(2, vec![urbf.clone()]).is_err());
    assert!(NetworkSpec::new(2, vec![urbf.clone(), urbf.clone(), LayerSpec::linear(1)]).is_err());
    assert!(NetworkSpec::new(2, vec![urbf, LayerSpec::linear(1)]).is_ok());
    assert!(NetworkSpec::new(0, vec![LayerSpec::linear(1)]).is_err());
    assert!(NetworkSpec::new(2, vec![LayerSpec::hidden(0), LayerSpec::linear(1)]).is_err());
}

#[test]
fn descriptors_parse() {
    let spec = NetworkSpec::from_descriptors(
        2,
        &["urbf".into(), "affine:32".into(), "affine:64".into()],
        1,
        range(-5.0, 5.0),
        true,
        Some(20),
    )
    .unwrap();
    assert_eq!(spec.layers().len(), 4);
    assert_eq!(spec.param_count(), 2 * 20 * 2 + (40 * 32 + 32) + (32 * 64 + 64) + (64 + 1));
    let bad = NetworkSpec::from_descriptors(2, &["conv:3".into()], 1, range(0.0, 1.0), true, None);
    assert!(bad.is_err());
    let missing = NetworkSpec::from_descriptors(2, &["urbf".into()], 1, range(0.0, 1.0), true, None);
    assert!(missing.is_err());
}

#[test]
fn injectivity_examples() {
    let two = UrbfLayer::from_parts(
        Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap(),
        Tensor::matrix(1, 2, vec![0.7, 0.7]).unwrap(),
        range(-5.0, 5.0),
        true,
    )
    .unwrap();
    assert!(check_injectivity(&two, 1000, 3));
    // Equal centers: symmetric about the shared center.
    assert!(!kernel_maps_differ(&[0.0, 0.0], &[1.0, 1.0], 1.0, -1.0));
    assert!(kernel_maps_differ(&[0.0, 1.0], &[1.0, 1.0], 1.0, -1.0));

    let five = UrbfLayer::new(1, 5, range(-5.0, 5.0), true).unwrap();
    assert!(check_injectivity(&five, 1000, 11));
}

#[test]
fn interpolation_trivial_cases() {
    let single = InterpolationCheck {
        points: 1,
        epochs: 500,
        ..InterpolationCheck::default()
    };
    assert!(check_interpolation(&single, 5).unwrap() < 1e-6);

    let cfg = InterpolationCheck {
        points: 8,
        epochs: 300,
        ..InterpolationCheck::default()
    };
    let (x, _) = interpolation_problem(&cfg, 9);
    let y = Tensor::full(&[8, 1], 0.75);
    let achieved = fit_points(&cfg, &x, &y, 9).unwrap();
    assert!(achieved < 1e-9, "constant-target mse {achieved}");
}

#[test]
fn spreads_stay_above_floor_under_aggressive_updates() {
    let spec = NetworkSpec::urbf(1, 4, range(-1.0, 1.0), true, &[4], 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut net = Network::new(spec, &mut rng).unwrap();
    let mut adam = Adam::new(AdamConfig::with_learning_rate(5.0));
    let x = Tensor::from_rows(&[[0.1], [0.9], [-0.4]]).unwrap();
    for _ in 0..30 {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (y, leaves) = net.forward(&mut g, xv).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        net.apply_gradients(&mut adam, &g, &leaves).unwrap();
        for layer in net.layers() {
            if let Layer::Urbf(u) = layer {
                assert!(u.spreads().data().iter().all(|&s| s >= SIGMA_MIN));
            }
        }
    }
}

#[test]
fn frozen_spreads_are_not_trained() {
    let spec = NetworkSpec::urbf(2, 3, range(-1.0, 1.0), false, &[4], 1).unwrap();
    assert_eq!(spec.param_count(), 6 + (6 * 4 + 4) + 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = Network::new(spec, &mut rng).unwrap();
    assert_eq!(net.param_count(), 6 + 28 + 5);
    let before = match &net.layers()[0] {
        Layer::Urbf(u) => u.spreads().clone(),
        _ => unreachable!(),
    };
    let mut adam = Adam::new(AdamConfig::with_learning_rate(0.1));
    let mut g = Graph::new();
    let x = g.constant(Tensor::from_rows(&[[0.2, -0.3]]).unwrap());
    let (y, leaves) = net.forward(&mut g, x).unwrap();
    let s = g.sum(y).unwrap();
    g.backward(s).unwrap();
    net.apply_gradients(&mut adam, &g, &leaves).unwrap();
    match &net.layers()[0] {
        Layer::Urbf(u) => assert_eq!(u.spreads(), &before),
        _ => unreachable!(),
    }
}
