use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn eval(f: impl FnOnce(&mut Tape) -> Var) -> Tensor {
    let mut tape = Tape::new();
    let v = f(&mut tape);
    tape.value(v).clone()
}

#[test]
fn elementwise_examples() {
    let zero = t(&[1], &[0.0]);
    assert_eq!(eval(|tp| { let x = tp.constant(zero.clone()); tp.exp(x) }).data(), &[1.0]);
    assert_eq!(eval(|tp| { let x = tp.constant(zero.clone()); tp.silu(x) }).data(), &[0.0]);
    let sp = eval(|tp| { let x = tp.constant(zero.clone()); tp.softplus(x) }).data()[0];
    assert!((sp - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((sp - std::f64::consts::LN_2).abs() < 1e-6);
}

#[test]
fn log_of_non_positive_names_index() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[3], &[1.0, 2.0, 0.0]));
    match tape.log(x) {
        Err(Error::Domain(msg)) => assert!(msg.contains("index 2"), "{msg}"),
        other => panic!("expected domain error, got {other:?}"),
    }
}

#[test]
fn matmul_examples() {
    let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let out = eval(|tp| {
        let i = tp.constant(Tensor::eye(2));
        let mv = tp.constant(m.clone());
        tp.matmul(i, mv).unwrap()
    });
    assert_eq!(out, m);

    let out = eval(|tp| {
        let a = tp.constant(m.clone());
        let ones = tp.constant(t(&[2, 1], &[1.0, 1.0]));
        tp.matmul(a, ones).unwrap()
    });
    assert_eq!(out, t(&[2, 1], &[3.0, 7.0]));

    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match tape.matmul(a, b) {
        Err(Error::Shape(msg)) => assert!(msg.contains("[2, 3]"), "{msg}"),
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn cumsum_examples() {
    let out = eval(|tp| { let x = tp.constant(Tensor::zeros(&[3])); tp.cumsum(x, 0).unwrap() });
    assert_eq!(out.data(), &[0.0, 0.0, 0.0]);
    let out = eval(|tp| { let x = tp.constant(t(&[3], &[1.0, 2.0, 3.0])); tp.cumsum(x, 0).unwrap() });
    assert_eq!(out.data(), &[1.0, 3.0, 6.0]);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 2]));
    assert!(matches!(tape.cumsum(x, 5), Err(Error::Shape(_))));
}

#[test]
fn segsum_exp_examples() {
    let out = eval(|tp| { let a = tp.constant(t(&[2], &[0.0, 0.0])); tp.segsum_exp(a).unwrap() });
    assert_eq!(out, t(&[2, 2], &[1.0, 0.0, 1.0, 1.0]));

    let out = eval(|tp| { let a = tp.constant(t(&[2], &[-1.0, -2.0])); tp.segsum_exp(a).unwrap() });
    assert_eq!(out.data()[0], 1.0);
    assert_eq!(out.data()[1], 0.0);
    assert!((out.data()[2] - 0.135335).abs() < 1e-6);
    assert_eq!(out.data()[3], 1.0);

    let out = eval(|tp| { let a = tp.constant(t(&[1], &[-3.0])); tp.segsum_exp(a).unwrap() });
    assert_eq!(out, t(&[1, 1], &[1.0]));
}

#[test]
fn segsum_exp_clamps_large_exponents() {
    let out = eval(|tp| { let a = tp.constant(t(&[2], &[0.0, 500.0])); tp.segsum_exp(a).unwrap() });
    assert_eq!(out.data()[2], SEGSUM_EXP_CLAMP.exp());
    assert!(out.is_finite());
}

#[test]
fn softmax_examples() {
    let out = eval(|tp| { let x = tp.constant(t(&[4], &[0.3; 4])); tp.softmax_masked(x, None).unwrap() });
    assert!(out.data().iter().all(|&w| (w - 0.25).abs() < 1e-15));

    let out = eval(|tp| {
        let x = tp.constant(t(&[2], &[0.0, 0.0]));
        tp.softmax_masked(x, Some(&[true, false])).unwrap()
    });
    assert_eq!(out.data(), &[1.0, 0.0]);

    let out = eval(|tp| { let x = tp.constant(t(&[2], &[10.0, 0.0])); tp.softmax_masked(x, None).unwrap() });
    assert!((out.data()[0] - 0.9999546).abs() < 1e-7);
    assert!((out.data()[1] - 0.0000454).abs() < 1e-7);
}

#[test]
fn softmax_rejects_fully_masked_row() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 2]));
    let err = tape.softmax_masked(x, Some(&[true, true, false, false])).unwrap_err();
    assert!(matches!(err, Error::DegenerateRow { row: 1 }));
}

#[test]
fn backward_examples() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[2, 3]), true);
    let loss = tape.sum(x);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(x), Tensor::ones(&[2, 3]));

    let mut tape = Tape::new();
    let x = tape.leaf(t(&[1], &[0.0]), true);
    let e = tape.exp(x);
    let loss = tape.sum(e);
    assert_eq!(tape.backward(loss).unwrap().get(x).data(), &[1.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(&[2]), true);
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn grad_check_examples() {
    let x = t(&[2], &[1.0, 2.0]);
    let square_sum = |tp: &mut Tape, x: Var| {
        let sq = tp.mul(x, x)?;
        Ok(tp.sum(sq))
    };
    assert!(grad_check(square_sum, &x, DEFAULT_STEP).unwrap() < 1e-6);

    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone(), true);
    let loss = square_sum(&mut tape, xv).unwrap();
    assert_eq!(tape.backward(loss).unwrap().get(xv).data(), &[2.0, 4.0]);

    let a = t(&[4], &[-0.3, -1.2, 0.4, -0.7]);
    let err = grad_check(|tp, a| { let l = tp.segsum_exp(a)?; Ok(tp.sum(l)) }, &a, DEFAULT_STEP).unwrap();
    assert!(err < 1e-4, "{err}");

    let constant = |tp: &mut Tape, _x: Var| Ok(tp.constant(Tensor::scalar(3.0)));
    assert_eq!(grad_check(constant, &x, DEFAULT_STEP).unwrap(), 0.0);
}

/// A weighted sum turns any tensor output into a scalar with a non-trivial
/// upstream gradient.
fn weighted_sum(tp: &mut Tape, y: Var, seed: u64) -> Result<Var, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = Tensor::uniform(tp.shape(y), 1.0, &mut rng);
    let w = tp.constant(w);
    let p = tp.mul(y, w)?;
    Ok(tp.sum(p))
}

fn check_op<F>(name: &str, shape: &[usize], lo: f64, hi: f64, f: F)
where
    F: Fn(&mut Tape, Var) -> Result<Var, Error>,
{
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let x = Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap();
        let err = grad_check(
            |tp, x| {
                let y = f(tp, x)?;
                weighted_sum(tp, y, seed)
            },
            &x,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err <= 1e-4, "{name} seed {seed}: relative error {err}");
    }
}

#[test]
fn gradients_of_elementwise_ops() {
    for f in [Unary::Exp, Unary::Sigmoid, Unary::Softplus, Unary::Silu, Unary::Neg, Unary::Scale(-2.5), Unary::AddScalar(0.7)] {
        check_op(&format!("{f:?}"), &[3, 4], -3.0, 3.0, |tp, x| tp.unary(x, f));
    }
    check_op("log", &[3, 4], 0.2, 3.0, |tp, x| tp.log(x));
    check_op("sqrt", &[3, 4], 0.2, 3.0, |tp, x| tp.sqrt(x));
    check_op("relu", &[3, 4], 0.1, 3.0, |tp, x| Ok(tp.relu(x)));
    check_op("clamp", &[3, 4], 0.1, 0.9, |tp, x| Ok(tp.clamp(x, 0.0, 1.0)));
}

#[test]
fn gradients_of_broadcasting_binary_ops() {
    let other = |tp: &mut Tape, shape: &[usize]| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n: usize = shape.iter().product();
        tp.constant(Tensor::new(shape, (0..n).map(|_| rng.gen_range(0.5..2.0)).collect()).unwrap())
    };
    check_op("add", &[2, 3], -2.0, 2.0, |tp, x| { let b = other(tp, &[3]); tp.add(x, b) });
    check_op("sub", &[3], -2.0, 2.0, |tp, x| { let b = other(tp, &[2, 3]); tp.sub(b, x) });
    check_op("mul", &[2, 1, 3], -2.0, 2.0, |tp, x| { let b = other(tp, &[4, 1]); tp.mul(x, b) });
    check_op("div-num", &[2, 3], -2.0, 2.0, |tp, x| { let b = other(tp, &[2, 3]); tp.div(x, b) });
    check_op("div-den", &[2, 1], 0.5, 2.0, |tp, x| { let b = other(tp, &[2, 3]); tp.div(b, x) });
    check_op("mul-self", &[4], -2.0, 2.0, |tp, x| tp.mul(x, x));
}

#[test]
fn gradients_of_linear_algebra() {
    let fixed = |tp: &mut Tape, shape: &[usize]| {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        tp.constant(Tensor::uniform(shape, 1.0, &mut rng))
    };
    check_op("matmul-left", &[3, 4], -1.0, 1.0, |tp, x| { let b = fixed(tp, &[4, 2]); tp.matmul(x, b) });
    check_op("matmul-right", &[4, 2], -1.0, 1.0, |tp, x| { let a = fixed(tp, &[3, 4]); tp.matmul(a, x) });
    check_op("bmm-left", &[2, 3, 4], -1.0, 1.0, |tp, x| { let b = fixed(tp, &[2, 4, 2]); tp.bmm(x, b) });
    check_op("bmm-right", &[2, 4, 2], -1.0, 1.0, |tp, x| { let a = fixed(tp, &[2, 3, 4]); tp.bmm(a, x) });
}

#[test]
fn gradients_of_layout_ops() {
    check_op("reshape", &[2, 6], -1.0, 1.0, |tp, x| tp.reshape(x, &[3, 4]));
    check_op("permute", &[2, 3, 4], -1.0, 1.0, |tp, x| tp.permute(x, &[2, 0, 1]));
    check_op("slice", &[3, 5, 2], -1.0, 1.0, |tp, x| tp.slice(x, 1, 1, 3));
    check_op("concat", &[2, 3], -1.0, 1.0, |tp, x| {
        let y = tp.scale(x, 2.0);
        tp.concat(&[x, y, x], 1)
    });
    check_op("gather", &[4, 3], -1.0, 1.0, |tp, x| tp.gather_rows(x, &[3, 0, 0, 2]));
}

#[test]
fn gradients_of_reductions_and_scans() {
    check_op("sum_axis", &[2, 3, 4], -1.0, 1.0, |tp, x| tp.sum_axis(x, 1));
    check_op("mean_axis", &[2, 3, 4], -1.0, 1.0, |tp, x| tp.mean_axis(x, 2));
    check_op("cumsum", &[3, 5], -1.0, 1.0, |tp, x| tp.cumsum(x, 1));
    check_op("segsum_exp", &[2, 5], -1.5, 0.5, |tp, x| tp.segsum_exp(x));
    check_op("softmax", &[3, 5], -3.0, 3.0, |tp, x| tp.softmax_masked(x, None));
    let causal: Vec<bool> = (0..16).map(|k| k % 4 <= k / 4).collect();
    check_op("softmax-masked", &[2, 4, 4], -3.0, 3.0, move |tp, x| tp.softmax_masked(x, Some(&causal)));
}

#[test]
fn parameters_receive_gradients() {
    let mut store = ParamStore::new();
    let w = store.insert("w", t(&[2], &[1.0, -2.0]));
    let mut tape = Tape::new();
    let wv = tape.param(&store, w);
    assert_eq!(tape.param(&store, w), wv, "parameters are registered once");
    let sq = tape.mul(wv, wv).unwrap();
    let loss = tape.sum(sq);
    let grads = tape.backward(loss).unwrap();
    store.zero_grad();
    grads.accumulate_into(&mut store);
    assert_eq!(store.grad(w).unwrap().data(), &[2.0, -4.0]);
}

#[test]
fn dropout_is_inverted_and_seeded() {
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        eval(|tp| {
            let x = tp.constant(Tensor::ones(&[1000]));
            tp.dropout(x, 0.1, &mut rng).unwrap()
        })
    };
    let a = run(3);
    assert_eq!(a, run(3));
    assert!(a.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.9).abs() < 1e-15));
    let dropped = a.data().iter().filter(|&&v| v == 0.0).count();
    assert!((50..150).contains(&dropped), "{dropped}");
}

proptest! {
    #[test]
    fn segsum_exp_is_unit_lower_triangular(a in prop::collection::vec(-5.0f64..=0.0, 1..12)) {
        let n = a.len();
        let out = eval(|tp| { let v = tp.constant(Tensor::vector(a.clone())); tp.segsum_exp(v).unwrap() });
        for i in 0..n {
            for j in 0..n {
                let v = out.at(&[i, j]);
                if i == j {
                    prop_assert_eq!(v, 1.0);
                } else if i < j {
                    prop_assert_eq!(v, 0.0);
                } else {
                    prop_assert!(v > 0.0 && v <= 1.0);
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one(
        rows in prop::collection::vec(prop::collection::vec(-30.0f64..30.0, 5), 1..6),
        mask in prop::collection::vec(any::<bool>(), 5),
    ) {
        let mut mask = mask;
        mask[0] = true;
        let x = Tensor::from_rows(&rows).unwrap();
        let out = eval(|tp| { let v = tp.constant(x.clone()); tp.softmax_masked(v, Some(&mask)).unwrap() });
        for r in 0..rows.len() {
            let row = out.row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (c, &keep) in mask.iter().enumerate() {
                if !keep {
                    prop_assert_eq!(row[c], 0.0);
                }
            }
        }
    }

    #[test]
    fn cumsum_then_differences_recovers_input(x in prop::collection::vec(-100.0f64..100.0, 1..30)) {
        let out = eval(|tp| { let v = tp.constant(Tensor::vector(x.clone())); tp.cumsum(v, 0).unwrap() });
        let c = out.data();
        prop_assert!((c[0] - x[0]).abs() <= 1e-12);
        for i in 1..x.len() {
            prop_assert!((c[i] - c[i - 1] - x[i]).abs() <= 1e-12 * (1.0 + c[i].abs()));
        }
    }
}
