//! Property tests for the invariants each module promises.

use proptest::prelude::*;
use rand::Rng;
use urbf_core::autodiff::{finite_difference_gradient, relative_error};
use urbf_core::dqn::{EpsilonSchedule, ReplayBuffer, Transition};
use urbf_core::layers::{init_urbf_centers, AffineLayer, Activation, InitRange, Layer, UrbfLayer, SIGMA_MIN};
use urbf_core::maze::{generate_maze, step, Action, BfsPolicy, MAX_STEPS};
use urbf_core::optim::{Adam, AdamConfig};
use urbf_core::regression::{sample_target, RegressionDataset, TargetFunction, TargetKind};
use urbf_core::rng::{stream, Stream};
use urbf_core::runner::ExperimentConfig;
use urbf_core::verification::run_gradcheck;
use urbf_core::{Graph, Network, NetworkSpec, Tensor, Var};

fn tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = stream(seed, Stream::Verification);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

type Op = fn(&mut Graph, &[Var]) -> urbf_core::Result<Var>;

fn ops() -> Vec<(&'static str, usize, Op)> {
    vec![
        ("add", 2, |g, v| g.add(v[0], v[1])),
        ("sub", 2, |g, v| g.sub(v[0], v[1])),
        ("mul", 2, |g, v| g.mul(v[0], v[1])),
        ("div", 2, |g, v| g.div(v[0], v[1])),
        ("neg", 1, |g, v| g.neg(v[0])),
        ("exp", 1, |g, v| g.exp(v[0])),
        ("square", 1, |g, v| g.square(v[0])),
        ("relu", 1, |g, v| g.relu(v[0])),
        ("sum", 1, |g, v| g.sum(v[0])),
        ("mean", 1, |g, v| g.mean(v[0])),
        ("transpose", 1, |g, v| g.transpose(v[0])),
        ("concat", 2, |g, v| g.concat(&[v[0], v[1]])),
    ]
}

/// sum(op(inputs) ⊙ w) with `w` fixed by `seed`.
fn weighted(op: Op, inputs: &[Tensor], seed: u64, trainable: bool) -> (Graph, Var, Vec<Var>) {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect();
    let out = op(&mut g, &vars).unwrap();
    let w = g.constant(tensor(g.value(out).shape(), -1.0, 1.0, seed));
    let prod = g.mul(out, w).unwrap();
    let loss = g.sum(prod).unwrap();
    (g, loss, vars)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn op_gradients_match_finite_differences(rows in 1usize..5, cols in 1usize..5, seed in any::<u64>()) {
        for (i, (name, arity, op)) in ops().into_iter().enumerate() {
            let s = seed.wrapping_add(i as u64);
            let mut inputs: Vec<Tensor> = (0..arity).map(|k| tensor(&[rows, cols], -2.0, 2.0, s ^ (k as u64 + 1))).collect();
            // Keep FD away from the relu kink and small denominators.
            for v in inputs[0].data_mut() {
                if name == "relu" && v.abs() < 0.1 {
                    *v += 0.2;
                }
            }
            if name == "div" {
                for v in inputs[1].data_mut() {
                    *v = v.signum() * (0.5 + v.abs());
                }
            }
            let (mut g, loss, vars) = weighted(op, &inputs, s, true);
            g.backward(loss).unwrap();
            let fd = finite_difference_gradient(
                |p| {
                    let (g, loss, _) = weighted(op, p, s, false);
                    Ok(g.value(loss).item())
                },
                &inputs,
                1e-5,
            )
            .unwrap();
            for (v, f) in vars.iter().zip(&fd) {
                let err = relative_error(g.grad(*v).unwrap(), f);
                prop_assert!(err < 1e-4, "{name} {rows}x{cols}: {err}");
            }
        }
    }

    #[test]
    fn matmul_gradients_match_finite_differences(m in 1usize..5, k in 1usize..5, n in 1usize..5, seed in any::<u64>()) {
        let op: Op = |g, v| g.matmul(v[0], v[1]);
        let inputs = [tensor(&[m, k], -2.0, 2.0, seed), tensor(&[k, n], -2.0, 2.0, seed ^ 7)];
        let (mut g, loss, vars) = weighted(op, &inputs, seed, true);
        g.backward(loss).unwrap();
        let fd = finite_difference_gradient(
            |p| {
                let (g, loss, _) = weighted(op, p, seed, false);
                Ok(g.value(loss).item())
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        for (v, f) in vars.iter().zip(&fd) {
            prop_assert!(relative_error(g.grad(*v).unwrap(), f) < 1e-4);
        }
    }

    #[test]
    fn forward_is_bit_reproducible(seed in any::<u64>()) {
        let spec = NetworkSpec::from_descriptors(2, &["urbf:6".into(), "affine:8".into()], 1, InitRange::new(-2.0, 2.0).unwrap(), true, None).unwrap();
        let net = Network::new(spec, &mut stream(seed, Stream::Init)).unwrap();
        let x = tensor(&[7, 2], -3.0, 3.0, seed);
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn urbf_outputs_are_in_unit_interval(k in 2usize..21, xs in prop::collection::vec(-6.0f64..6.0, 1..8)) {
        let layer = UrbfLayer::new(1, k, InitRange::new(-5.0, 5.0).unwrap(), true).unwrap();
        for x in xs {
            for z in layer.kernel_map(0, x) {
                prop_assert!(z > 0.0 && z <= 1.0);
            }
        }
    }

    #[test]
    fn urbf_centers_are_equidistant(lo in -50.0f64..50.0, width in 0.01f64..100.0, k in 2usize..60) {
        let range = InitRange::new(lo, lo + width).unwrap();
        let c = init_urbf_centers(range, k).unwrap();
        prop_assert_eq!(c[0], range.lo);
        prop_assert_eq!(c[k - 1], range.hi);
        let gap = width / (k - 1) as f64;
        for w in c.windows(2) {
            prop_assert!(w[1] > w[0]);
            prop_assert!(((w[1] - w[0]) - gap).abs() <= 1e-12 * width.max(1.0));
        }
    }

    #[test]
    fn spreads_respect_the_floor_after_any_steps(seed in any::<u64>(), steps in 1usize..20, lr in 1e-3f64..10.0) {
        let spec = NetworkSpec::from_descriptors(2, &["urbf:4".into(), "affine:4".into()], 1, InitRange::new(-1.0, 1.0).unwrap(), true, None).unwrap();
        let mut net = Network::new(spec, &mut stream(seed, Stream::Init)).unwrap();
        let mut adam = Adam::new(AdamConfig::with_learning_rate(lr));
        let x = tensor(&[5, 2], -2.0, 2.0, seed);
        let y = tensor(&[5, 1], -10.0, 10.0, seed ^ 3);
        for _ in 0..steps {
            let mut g = Graph::new();
            let xv = g.constant(x.clone());
            let (out, leaves) = net.forward(&mut g, xv).unwrap();
            let yv = g.constant(y.clone());
            let d = g.sub(out, yv).unwrap();
            let sq = g.square(d).unwrap();
            let loss = g.mean(sq).unwrap();
            g.backward(loss).unwrap();
            net.apply_gradients(&mut adam, &g, &leaves).unwrap();
        }
        for layer in net.layers() {
            if let Layer::Urbf(u) = layer {
                prop_assert!(u.spreads().data().iter().all(|&s| s >= SIGMA_MIN));
            }
        }
    }

    #[test]
    fn kernel_permutation_leaves_output_unchanged(seed in any::<u64>(), k in 2usize..8) {
        let mut rng = stream(seed, Stream::Init);
        let centers = tensor(&[2, k], -3.0, 3.0, seed);
        let spreads = tensor(&[2, k], 0.3, 2.0, seed ^ 1);
        let range = InitRange::new(-3.0, 3.0).unwrap();
        let urbf = UrbfLayer::from_parts(centers.clone(), spreads.clone(), range, true).unwrap();
        let next = AffineLayer::init(2 * k, 5, Activation::Relu, &mut rng);
        let head = AffineLayer::init(5, 1, Activation::None, &mut rng);
        let net = Network::from_layers(2, vec![Layer::Urbf(urbf), Layer::Affine(next.clone()), Layer::Affine(head.clone())]).unwrap();

        // Reverse the kernels of unit 0 and the matching weight columns.
        let perm: Vec<usize> = (0..2 * k).map(|j| if j < k { k - 1 - j } else { j }).collect();
        let shuffle = |t: &Tensor| Tensor::new(t.shape().to_vec(), perm.iter().map(|&j| t.data()[j]).collect()).unwrap();
        let mut w = next.weights().clone();
        for r in 0..5 {
            for (j, &src) in perm.iter().enumerate() {
                w.data_mut()[r * 2 * k + j] = next.weights().at(r, src);
            }
        }
        let permuted = Network::from_layers(2, vec![
            Layer::Urbf(UrbfLayer::from_parts(shuffle(&centers), shuffle(&spreads), range, true).unwrap()),
            Layer::Affine(AffineLayer::new(w, next.bias().clone(), Activation::Relu).unwrap()),
            Layer::Affine(head),
        ]).unwrap();
        let x = tensor(&[9, 2], -4.0, 4.0, seed ^ 2);
        let (a, b) = (net.predict(&x).unwrap(), permuted.predict(&x).unwrap());
        // Reordering changes the summation order inside the dot products.
        for (p, q) in a.data().iter().zip(b.data()) {
            prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0));
        }
    }

    #[test]
    fn adam_is_deterministic_and_lr_zero_is_inert(seed in any::<u64>(), steps in 1usize..10) {
        let p0 = tensor(&[3, 4], -1.0, 1.0, seed);
        let names = vec!["p".to_string()];
        let run = |lr: f64| {
            let mut p = p0.clone();
            let mut adam = Adam::new(AdamConfig::with_learning_rate(lr));
            for i in 0..steps {
                let g = tensor(&[3, 4], -5.0, 5.0, seed ^ (i as u64 + 1));
                adam.step(&mut [&mut p], &[g], &names).unwrap();
            }
            p
        };
        prop_assert_eq!(run(1e-2), run(1e-2));
        prop_assert_eq!(run(0.0), p0);
    }

    #[test]
    fn targets_are_pure_and_continuous(seed in any::<u64>(), m in 1usize..10, x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let f = sample_target(TargetKind::Gaussian, m, seed).unwrap();
        prop_assert_eq!(f.eval(x, y).to_bits(), f.eval(x, y).to_bits());
        let mut last = f64::INFINITY;
        for e in [1e-2, 1e-4, 1e-6, 1e-8] {
            let d = (f.eval(x + e, y - e) - f.eval(x, y)).abs();
            prop_assert!(d <= last + 1e-12);
            last = d;
        }
        prop_assert!(last < 1e-5);
    }

    #[test]
    fn discontinuous_target_minus_plane_takes_plateau_heights(seed in any::<u64>(), m in 1usize..6, x in -5.0f64..5.0, y in -5.0f64..5.0) {
        let f = sample_target(TargetKind::Discontinuous, m, seed).unwrap();
        let TargetFunction::Discontinuous(d) = &f else { panic!("wrong kind") };
        let v = f.eval(x, y) - x - y;
        let ok = v.abs() < 1e-12 || d.components().iter().any(|p| (v - p.height).abs() < 1e-12);
        prop_assert!(ok, "{v}");
    }

    #[test]
    fn train_and_test_inputs_are_disjoint(seed in any::<u64>()) {
        let f = sample_target(TargetKind::Gaussian, 3, seed).unwrap();
        let data = RegressionDataset::generate(&f, 300, 100, &mut stream(seed, Stream::Data)).unwrap();
        let train: std::collections::HashSet<(u64, u64)> = (0..300)
            .map(|i| (data.train_inputs.at(i, 0).to_bits(), data.train_inputs.at(i, 1).to_bits()))
            .collect();
        for i in 0..100 {
            prop_assert!(!train.contains(&(data.test_inputs.at(i, 0).to_bits(), data.test_inputs.at(i, 1).to_bits())));
        }
    }

    #[test]
    fn random_walks_earn_only_terminal_rewards(seed in any::<u64>(), level in 1u8..4) {
        let maze = generate_maze(level, seed).unwrap();
        let snapshot = maze.clone();
        let mut rng = stream(seed, Stream::Policy);
        let mut state = maze.initial_state();
        let mut ret = 0.0;
        while !state.is_terminal() {
            let a = Action::ALL[rng.gen_range(0..4)];
            let (a1, r1) = step(&maze, &state, a).unwrap();
            let (a2, r2) = step(&maze, &state, a).unwrap();
            prop_assert_eq!(&a1, &a2);
            prop_assert_eq!(r1, r2);
            ret += r1;
            state = a1;
        }
        prop_assert!(state.steps <= MAX_STEPS);
        prop_assert!(ret == 100.0 || ret == -100.0 || ret == 0.0);
        prop_assert_eq!(maze, snapshot);
    }

    #[test]
    fn bfs_policy_solves_generated_mazes(seed in any::<u64>(), level in 1u8..4) {
        let maze = generate_maze(level, seed).unwrap();
        prop_assert!(maze.shortest_path_len().is_some());
        let bfs = BfsPolicy::new(&maze);
        let mut state = maze.initial_state();
        let mut ret = 0.0;
        while !state.is_terminal() {
            let (next, r) = step(&maze, &state, bfs.action(state.agent)).unwrap();
            ret += r;
            state = next;
        }
        prop_assert_eq!(ret, 100.0);
    }

    #[test]
    fn replay_buffer_keeps_the_newest(capacity in 1usize..40, extra in 0usize..40, seed in any::<u64>()) {
        let mut buffer = ReplayBuffer::new(capacity, 1).unwrap();
        let total = capacity + extra;
        for i in 0..total {
            buffer.push(Transition { state: vec![i as f64], action: Action::Up, reward: 0.0, next_state: vec![i as f64], terminal: false }).unwrap();
        }
        prop_assert_eq!(buffer.len(), capacity);
        let mut kept: Vec<usize> = buffer.iter().map(|t| t.state[0] as usize).collect();
        kept.sort_unstable();
        prop_assert_eq!(kept, (extra..total).collect::<Vec<_>>());
        let mut rng = stream(seed, Stream::Replay);
        for t in buffer.sample(64, &mut rng).unwrap() {
            prop_assert!(t.state[0] as usize >= extra && (t.state[0] as usize) < total);
        }
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), reps in 1usize..40, lr in 1e-6f64..1.0, nnpi in prop::collection::vec(2usize..50, 1..5)) {
        let text = format!(
            "name = \"p\"\ntask = \"regression\"\nbase_seed = {seed}\nrepetitions = {reps}\n\
             [regression]\nkind = \"gaussian\"\ncomplexity = [1, 5]\nepochs = 3\nbatch_size = 8\nlearning_rate = {lr:e}\ntrain_size = 16\ntest_size = 4\n\
             [architectures.u]\nlayers = [\"urbf\", \"affine:4\"]\nnnpi = {nnpi:?}\ninit_range = [-1.5, 2.25]\n"
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}

#[test]
fn gradcheck_covers_twenty_cases_per_kind() {
    let report = run_gradcheck(11, 20).unwrap();
    assert!(report.passed(), "worst {}", report.worst());
}

#[test]
fn epsilon_is_monotone_and_bounded() {
    let sched = EpsilonSchedule::new(50_000);
    let mut rng = stream(0, Stream::Verification);
    let mut ts: Vec<usize> = (0..1000).map(|_| rng.gen_range(0..200_000)).collect();
    ts.sort_unstable();
    let eps: Vec<f64> = ts.iter().map(|&t| sched.epsilon_at(t)).collect();
    assert!(eps.iter().all(|e| (0.02..=1.0).contains(e)));
    assert!(eps.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn batch_gradient_is_sum_of_sample_gradients() {
    let spec = NetworkSpec::from_descriptors(2, &["urbf:5".into(), "affine:6".into()], 1, InitRange::new(-2.0, 2.0).unwrap(), true, None).unwrap();
    for case in 0..5u64 {
        let net = Network::new(spec.clone(), &mut stream(case, Stream::Init)).unwrap();
        let x = tensor(&[6, 2], -2.0, 2.0, case);
        let grads = |rows: &[usize]| -> Vec<Tensor> {
            let data: Vec<f64> = rows.iter().flat_map(|&r| x.row(r).to_vec()).collect();
            let mut g = Graph::new();
            let xv = g.constant(Tensor::matrix(rows.len(), 2, data).unwrap());
            let (out, leaves) = net.forward(&mut g, xv).unwrap();
            let sq = g.square(out).unwrap();
            let loss = g.sum(sq).unwrap();
            g.backward(loss).unwrap();
            leaves.iter().map(|&v| g.grad(v).unwrap().clone()).collect()
        };
        let batch = grads(&[0, 1, 2, 3, 4, 5]);
        let mut summed: Vec<Tensor> = batch.iter().map(|t| Tensor::zeros(t.shape())).collect();
        for r in 0..6 {
            for (acc, g) in summed.iter_mut().zip(grads(&[r])) {
                for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += v;
                }
            }
        }
        for (b, s) in batch.iter().zip(&summed) {
            assert!(relative_error(b, s) < 1e-12, "case {case}");
        }
    }
}

#[test]
fn parameter_counts_match_hand_counts() {
    let range = InitRange::new(-5.0, 5.0).unwrap();
    let spec = |layers: &[&str], nnpi| {
        let layers: Vec<String> = layers.iter().map(|s| s.to_string()).collect();
        NetworkSpec::from_descriptors(2, &layers, 1, range, true, nnpi).unwrap().param_count()
    };
    // Regression rows: hidden widths for the MLP, 2·NNPI kernels in front for the U-RBF.
    assert_eq!(spec(&["affine:16"], None), 2 * 16 + 16 + 16 + 1);
    assert_eq!(spec(&["affine:32", "affine:64"], None), (2 * 32 + 32) + (32 * 64 + 64) + (64 + 1));
    assert_eq!(
        spec(&["affine:32", "affine:64", "affine:128"], None),
        (2 * 32 + 32) + (32 * 64 + 64) + (64 * 128 + 128) + (128 + 1)
    );
    assert_eq!(
        spec(&["affine:32", "affine:64", "affine:128", "affine:32"], None),
        (2 * 32 + 32) + (32 * 64 + 64) + (64 * 128 + 128) + (128 * 32 + 32) + (32 + 1)
    );
    // U-RBF: centers and spreads per kernel, then an affine layer over 2·NNPI features.
    assert_eq!(spec(&["urbf", "affine:16"], Some(10)), 2 * 10 * 2 + (20 * 16 + 16) + (16 + 1));
    assert_eq!(
        spec(&["urbf", "affine:32", "affine:64", "affine:128"], Some(20)),
        2 * 20 * 2 + (40 * 32 + 32) + (32 * 64 + 64) + (64 * 128 + 128) + (128 + 1)
    );
    // M-RBF with 32 kernels: centers [32, 2], spreads [32], output weights [32, 32].
    assert_eq!(
        spec(&["mrbf:32", "affine:64"], None),
        (32 * 2 + 32 + 32 * 32) + (32 * 64 + 64) + (64 + 1)
    );
}
