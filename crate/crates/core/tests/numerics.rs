use proptest::prelude::*;
use sarb::numerics::{grad_check, AdamConfig, AdamState, NumericsError, ParamStore, Tape, Tensor, Var};

const TOL: f64 = 1e-4;
const STEP: f64 = 1e-5;

fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data[..shape.iter().product()].to_vec()).unwrap()
}

/// `sum(w * out)` with fixed pseudo-random weights, so every output entry
/// contributes a distinct amount to the checked scalar.
fn weighted_sum(tape: &mut Tape, out: Var) -> Result<Var, NumericsError> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| 0.3 + ((i * 7919) % 13) as f64 / 10.0).collect();
    let w = tape.constant(Tensor::new(shape, w).unwrap());
    let prod = tape.mul(out, w)?;
    tape.sum(prod)
}

fn check<F>(inputs: &[Tensor], op: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumericsError>,
{
    let mut store = ParamStore::new();
    let ids: Vec<_> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("x{i}"), t.clone()))
        .collect();
    let report = grad_check(
        &mut store,
        |tape, store| {
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(store, id)).collect();
            let out = op(tape, &vars)?;
            weighted_sum(tape, out)
        },
        TOL,
        STEP,
    )
    .unwrap();
    assert!(report.passed(), "{:?}", report.failures);
    report.max_rel_error
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

fn positive(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.2..3.0f64, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn elementwise_binary_ops(a in values(6), b in values(6), d in positive(6)) {
        let (a, b, d) = (tensor(&[2, 3], &a), tensor(&[2, 3], &b), tensor(&[2, 3], &d));
        check(&[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]));
        check(&[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]));
        check(&[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]));
        check(&[a, d], |t, v| t.div(v[0], v[1]));
    }

    #[test]
    fn broadcasting_binary_ops(a in values(6), row in values(3)) {
        let (a, row) = (tensor(&[2, 3], &a), tensor(&[1, 3], &row));
        check(&[a.clone(), row.clone()], |t, v| t.add(v[0], v[1]));
        check(&[a, row], |t, v| t.mul(v[0], v[1]));
    }

    #[test]
    fn unary_ops(a in values(6), p in positive(6), s in -3.0..3.0f64) {
        let (a, p) = (tensor(&[6], &a), tensor(&[6], &p));
        check(std::slice::from_ref(&a), |t, v| t.sigmoid(v[0]));
        check(std::slice::from_ref(&a), |t, v| t.scale(v[0], s));
        check(std::slice::from_ref(&a), |t, v| t.add_scalar(v[0], s));
        check(std::slice::from_ref(&a), |t, v| t.one_minus(v[0]));
        check(std::slice::from_ref(&p), |t, v| t.log(v[0]));
        check(&[p], |t, v| t.sqrt(v[0]));
        check(std::slice::from_ref(&a), |t, v| t.mean(v[0]));
        check(&[a], |t, v| t.sum(v[0]));
    }

    #[test]
    fn clamp_away_from_the_bounds(a in prop::collection::vec(prop_oneof![-3.0..-1.1f64, -0.9..0.9f64, 1.1..3.0f64], 6)) {
        check(&[tensor(&[6], &a)], |t, v| t.clamp(v[0], -1.0, 1.0));
    }

    #[test]
    fn reductions_and_softmax(a in values(24)) {
        let a = tensor(&[2, 3, 4], &a);
        check(std::slice::from_ref(&a), |t, v| t.softmax(v[0]));
        check(&[a], |t, v| t.sum_last(v[0]));
    }

    #[test]
    fn products(a in values(12), b in values(12), c in values(24)) {
        check(&[tensor(&[3, 4], &a), tensor(&[4, 3], &b)], |t, v| t.matmul(v[0], v[1]));
        check(&[tensor(&[2, 2, 3], &a), tensor(&[2, 3, 4], &c)], |t, v| t.bmm(v[0], v[1]));
    }

    #[test]
    fn layout_ops(a in values(24), b in values(24), mask in prop::collection::vec(any::<bool>(), 24)) {
        let (a, b) = (tensor(&[2, 3, 4], &a), tensor(&[2, 3, 4], &b));
        check(std::slice::from_ref(&a), |t, v| t.permute(v[0], &[2, 0, 1]));
        check(std::slice::from_ref(&a), |t, v| t.reshape(v[0], &[6, 4]));
        check(std::slice::from_ref(&a), |t, v| t.gather_rows(v[0], &[1, 1, 0]));
        check(&[a.clone(), b.clone()], |t, v| t.select(&mask, v[0], v[1]));
        check(&[a.reshape(&[24]).unwrap(), b.reshape(&[24]).unwrap()], |t, v| t.cosine(v[0], v[1]));
    }

    #[test]
    fn softmax_rows_are_distributions(a in prop::collection::vec(-500.0..500.0f64, 15)) {
        let mut tape = Tape::no_grad();
        let x = tape.constant(tensor(&[3, 5], &a));
        let s = tape.softmax(x).unwrap();
        for row in tape.value(s).data().chunks(5) {
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn gradients_accumulate_over_reuse() {
    // x used twice: d(x*x + x)/dx = 2x + 1.
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::vector(vec![1.5, -2.0]).unwrap());
    let mut tape = Tape::new();
    let x = tape.param(&store, id);
    let sq = tape.mul(x, x).unwrap();
    let y = tape.add(sq, x).unwrap();
    let root = tape.sum(y).unwrap();
    tape.backward(root, &mut store).unwrap();
    assert_eq!(store.grad(id).data(), &[4.0, -3.0]);
}

#[test]
fn domain_errors_and_overflow_are_reported() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![-1.0]).unwrap());
    assert!(matches!(tape.log(x), Err(NumericsError::LogDomain { .. })));
    let big = tape.constant(Tensor::vector(vec![1e300]).unwrap());
    assert!(matches!(tape.mul(big, big), Err(NumericsError::NonFinite { .. })));
}

#[test]
fn first_adam_step_moves_by_the_learning_rate() {
    // With bias correction the first update is lr * g / (|g| + eps), plus
    // lr * wd * p on decayed variables.
    let config = AdamConfig {
        lr: 0.01,
        weight_decay: 0.1,
        ..AdamConfig::default()
    };
    let mut store = ParamStore::new();
    let a = store.add("a", Tensor::vector(vec![1.0, -2.0]).unwrap());
    let b = store.add("b", Tensor::vector(vec![3.0]).unwrap());
    store.get_mut(b).decay = false;
    let mut tape = Tape::new();
    let va = tape.param(&store, a);
    let vb = tape.param(&store, b);
    let sa = tape.sum(va).unwrap();
    let sb = tape.sum(vb).unwrap();
    let sb = tape.scale(sb, -4.0).unwrap();
    let root = tape.add(sa, sb).unwrap();
    tape.backward(root, &mut store).unwrap();
    let mut adam = AdamState::new(config, &store);
    adam.step(&mut store).unwrap();
    let g_step = |g: f64| 0.01 * g / (g.abs() + 1e-8);
    let expect_a = [
        1.0 - g_step(1.0) - 0.01 * 0.1 * 1.0,
        -2.0 - g_step(1.0) + 0.01 * 0.1 * 2.0,
    ];
    for (got, want) in store.value(a).data().iter().zip(expect_a) {
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
    }
    assert!((store.value(b).data()[0] - (3.0 - g_step(-4.0))).abs() < 1e-15);
}
