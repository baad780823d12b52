use illumrl_core::numerics::{
    check_gradients, lstm_step, softmax_rows, GradCheckConfig, LstmWeights, Real, Tape, Tensor, Var,
};
use illumrl_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor<T: Real>(rng: &mut ChaCha8Rng, shape: Vec<usize>, scale: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(-scale..scale)))
}

fn wide_cfg() -> GradCheckConfig {
    GradCheckConfig {
        perturbation: 1e-6,
        tolerance: 1e-3,
        floor: 1e-6,
        max_entries_per_param: None,
    }
}

fn narrow_cfg() -> GradCheckConfig {
    GradCheckConfig {
        perturbation: 1e-3,
        tolerance: 1e-2,
        floor: 1e-2,
        max_entries_per_param: None,
    }
}

/// Projects any output onto a fixed random direction so every component of
/// the gradient is exercised.
fn project<T: Real>(tape: &mut Tape<T>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(rand_tensor(&mut rng, shape, 1.0));
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a: Tensor<f32> = rand_tensor(&mut rng, vec![5, 7], 1.0);
    let b: Tensor<f32> = rand_tensor(&mut rng, vec![7, 3], 1.0);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.matmul(va, vb).unwrap();
    for i in 0..5 {
        for j in 0..3 {
            let mut s = 0.0f64;
            for k in 0..7 {
                s += a.data()[i * 7 + k] as f64 * b.data()[k * 3 + j] as f64;
            }
            assert!((tape.value(c).data()[i * 3 + j] as f64 - s).abs() < 1e-6);
        }
    }
}

fn single_unit_weights(tape: &mut Tape<f64>, wx: [f64; 4], wh: [f64; 4], b: [f64; 4]) -> LstmWeights {
    LstmWeights {
        input: tape.param(Tensor::matrix(1, 4, wx.to_vec()).unwrap()),
        recurrent: tape.param(Tensor::matrix(1, 4, wh.to_vec()).unwrap()),
        bias: tape.param(Tensor::row(b.to_vec())),
    }
}

#[test]
fn lstm_zero_weights_give_zero_h() {
    let mut tape = Tape::<f32>::new();
    let w = LstmWeights {
        input: tape.param(Tensor::zeros(vec![3, 16])),
        recurrent: tape.param(Tensor::zeros(vec![4, 16])),
        bias: tape.param(Tensor::zeros(vec![16])),
    };
    let x = tape.constant(Tensor::row(vec![0.3, -2.0, 5.0]));
    let h0 = tape.constant(Tensor::zeros(vec![1, 4]));
    let c0 = tape.constant(Tensor::zeros(vec![1, 4]));
    let (h, c) = lstm_step(&mut tape, x, h0, c0, &w).unwrap();
    assert!(tape.value(h).data().iter().all(|&v| v == 0.0));
    assert!(tape.value(c).data().iter().all(|&v| v == 0.0));
}

#[test]
fn lstm_single_unit_hand_calculation() {
    let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
    let (x, hp, cp) = (0.7, -0.4, 0.25);
    let wx = [0.5, -0.3, 0.8, 0.1];
    let wh = [0.2, 0.6, -0.5, 0.9];
    let b = [0.1, 1.0, -0.2, 0.05];
    let pre: Vec<f64> = (0..4).map(|g| wx[g] * x + wh[g] * hp + b[g]).collect();
    let (i, f, g, o) = (sig(pre[0]), sig(pre[1]), pre[2].tanh(), sig(pre[3]));
    let c_ref = f * cp + i * g;
    let h_ref = o * c_ref.tanh();

    let mut tape = Tape::<f64>::new();
    let w = single_unit_weights(&mut tape, wx, wh, b);
    let xv = tape.constant(Tensor::row(vec![x]));
    let hv = tape.constant(Tensor::row(vec![hp]));
    let cv = tape.constant(Tensor::row(vec![cp]));
    let (h, c) = lstm_step(&mut tape, xv, hv, cv, &w).unwrap();
    assert!((tape.value(h).item() - h_ref).abs() < 1e-6);
    assert!((tape.value(c).item() - c_ref).abs() < 1e-6);
}

#[test]
fn lstm_gradient_of_sum_h_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (input, hidden, batch) = (6, 5, 3);
    let params: Vec<Tensor<f64>> = vec![
        rand_tensor(&mut rng, vec![input, 4 * hidden], 0.5),
        rand_tensor(&mut rng, vec![hidden, 4 * hidden], 0.5),
        rand_tensor(&mut rng, vec![4 * hidden], 0.5),
        rand_tensor(&mut rng, vec![batch, input], 1.0),
        rand_tensor(&mut rng, vec![batch, hidden], 0.9),
        rand_tensor(&mut rng, vec![batch, hidden], 1.0),
    ];
    let report = check_gradients(
        |tape, v| {
            let w = LstmWeights {
                input: v[0],
                recurrent: v[1],
                bias: v[2],
            };
            let (h, _) = lstm_step(tape, v[3], v[4], v[5], &w)?;
            Ok(tape.sum(h))
        },
        &params,
        &wide_cfg(),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert_eq!(report.checked, params.iter().map(|p| p.len()).sum::<usize>());
}

#[test]
fn softmax_xent_matches_extended_precision_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let logits: Vec<f32> = (0..10).map(|_| rng.random_range(-8.0..8.0)).collect();
        let target = rng.random_range(0..10);
        // Direct (unshifted) log-sum-exp in f64 is exact enough at this range.
        let z: f64 = logits.iter().map(|&v| (v as f64).exp()).sum();
        let reference = z.ln() - logits[target] as f64;
        let mut tape = Tape::<f32>::new();
        let l = tape.param(Tensor::row(logits));
        let loss = tape.cross_entropy(l, &[target]).unwrap();
        assert!((tape.value(loss).item() as f64 - reference).abs() < 1e-5);
    }
}

#[test]
fn quadratic_and_linear_gradients() {
    let sq = check_gradients(
        |tape, v| tape.mul(v[0], v[0]),
        &[Tensor::<f32>::scalar(3.0)],
        &GradCheckConfig {
            tolerance: 1e-4,
            ..Default::default()
        },
    )
    .unwrap();
    let (_, _, analytic, numeric) = sq.worst.unwrap();
    assert_eq!(analytic, 6.0);
    assert!((numeric - 6.0).abs() < 1e-4 * 6.0, "{numeric}");

    let lin = check_gradients(
        |tape, v| {
            let s = tape.scale(v[0], 2.5);
            Ok(tape.sum(s))
        },
        &[Tensor::<f64>::row(vec![1.0, -4.0, 9.0])],
        &wide_cfg(),
    )
    .unwrap();
    assert!(lin.max_rel_error < 1e-9, "{lin:?}");
}

#[derive(Clone, Copy, Debug)]
enum OpCase {
    MatMul,
    Add,
    AddRow,
    Mul,
    Scale,
    Sigmoid,
    Tanh,
    Relu,
    Concat,
    Slice,
    Gather,
    Compose,
    Xent,
    Lstm,
}

const OPS: [OpCase; 14] = [
    OpCase::MatMul,
    OpCase::Add,
    OpCase::AddRow,
    OpCase::Mul,
    OpCase::Scale,
    OpCase::Sigmoid,
    OpCase::Tanh,
    OpCase::Relu,
    OpCase::Concat,
    OpCase::Slice,
    OpCase::Gather,
    OpCase::Compose,
    OpCase::Xent,
    OpCase::Lstm,
];

fn op_inputs<T: Real>(op: OpCase, rng: &mut ChaCha8Rng) -> Vec<Tensor<T>> {
    let (m, n) = (rng.random_range(1..4), rng.random_range(2..6));
    let mut t = |shape: Vec<usize>| rand_tensor::<T>(rng, shape, 1.0);
    match op {
        OpCase::MatMul => vec![t(vec![m, 4]), t(vec![4, n])],
        OpCase::Add | OpCase::Mul | OpCase::Concat => vec![t(vec![m, n]), t(vec![m, n])],
        OpCase::AddRow => vec![t(vec![m, n]), t(vec![n])],
        OpCase::Compose => vec![t(vec![m, 3]), t(vec![m, 3, n])],
        OpCase::Xent => vec![t(vec![m, n])],
        OpCase::Lstm => vec![
            t(vec![3, 4 * n]),
            t(vec![n, 4 * n]),
            t(vec![4 * n]),
            t(vec![m, 3]),
            t(vec![m, n]),
            t(vec![m, n]),
        ],
        OpCase::Relu => {
            // Keep inputs off the kink so the function is smooth locally.
            let x = t(vec![m, n]);
            vec![x.map(|v| if v.wide().abs() < 0.05 { T::of(0.3) } else { v })]
        }
        _ => vec![t(vec![m, n])],
    }
}

fn op_graph<T: Real>(op: OpCase, tape: &mut Tape<T>, v: &[Var], seed: u64) -> Result<Var> {
    let out = match op {
        OpCase::MatMul => tape.matmul(v[0], v[1])?,
        OpCase::Add => tape.add(v[0], v[1])?,
        OpCase::AddRow => tape.add_row(v[0], v[1])?,
        OpCase::Mul => tape.mul(v[0], v[1])?,
        OpCase::Scale => tape.scale(v[0], -1.7),
        OpCase::Sigmoid => tape.sigmoid(v[0]),
        OpCase::Tanh => tape.tanh(v[0]),
        OpCase::Relu => tape.relu(v[0]),
        OpCase::Concat => tape.concat_cols(&[v[0], v[1], v[0]])?,
        OpCase::Slice => {
            let w = tape.value(v[0]).cols();
            tape.slice_cols(v[0], 1, w)?
        }
        OpCase::Gather => {
            let r = tape.value(v[0]).rows();
            let idx: Vec<usize> = (0..2 * r).map(|i| (i * 7 + 1) % r).collect();
            tape.gather_rows(v[0], &idx)?
        }
        OpCase::Compose => tape.compose(v[0], v[1])?,
        OpCase::Xent => {
            let (r, c) = (tape.value(v[0]).rows(), tape.value(v[0]).cols());
            let q: Vec<f64> = (0..r * c).map(|i| ((i * 13) % 5) as f64 * 0.3).collect();
            return tape.softmax_xent(v[0], &q);
        }
        OpCase::Lstm => {
            let w = LstmWeights {
                input: v[0],
                recurrent: v[1],
                bias: v[2],
            };
            lstm_step(tape, v[3], v[4], v[5], &w)?.0
        }
    };
    project(tape, out, seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_op_passes_gradient_check_at_64_bit(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for op in OPS {
            let inputs = op_inputs::<f64>(op, &mut rng);
            let report = check_gradients(|t, v| op_graph(op, t, v, seed), &inputs, &wide_cfg()).unwrap();
            prop_assert!(report.passed, "{:?}: {:?}", op, report);
        }
    }

    #[test]
    fn every_op_passes_gradient_check_at_32_bit(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for op in OPS {
            let inputs = op_inputs::<f32>(op, &mut rng);
            let report = check_gradients(|t, v| op_graph(op, t, v, seed), &inputs, &narrow_cfg()).unwrap();
            prop_assert!(report.passed, "{:?}: {:?}", op, report);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(logits in prop::collection::vec(-80.0f32..80.0, 2..20)) {
        let p = softmax_rows(&Tensor::row(logits));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn backward_is_linear_in_the_root(seed in any::<u64>()) {
        // grad(f + g) == grad(f) + grad(g)
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Tensor<f64> = rand_tensor(&mut rng, vec![3, 4], 1.0);
        let w: Tensor<f64> = rand_tensor(&mut rng, vec![4, 2], 1.0);
        let mut tape = Tape::<f64>::new();
        let xv = tape.param(x);
        let wv = tape.constant(w);
        let a = tape.matmul(xv, wv).unwrap();
        let f = tape.tanh(a);
        let f = tape.sum(f);
        let g = tape.sigmoid(xv);
        let g = tape.sum(g);
        let fg = tape.add(f, g).unwrap();
        let gf = tape.backward(f).unwrap();
        let gg = tape.backward(g).unwrap();
        let gfg = tape.backward(fg).unwrap();
        for ((a, b), c) in gf.wide(xv).unwrap().iter().zip(gg.wide(xv).unwrap()).zip(gfg.wide(xv).unwrap()) {
            prop_assert!((a + b - c).abs() < 1e-12);
        }
    }
}

#[test]
fn seeded_computation_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let inputs = op_inputs::<f32>(OpCase::Lstm, &mut rng);
        let mut tape = Tape::<f32>::new();
        let v: Vec<Var> = inputs.into_iter().map(|t| tape.param(t)).collect();
        let out = op_graph(OpCase::Lstm, &mut tape, &v, 42).unwrap();
        let g = tape.backward(out).unwrap();
        (tape.value(out).item(), g.wide(v[1]).unwrap().to_vec())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(ga, gb);
}
