mod common;

use cgt::autograd::Tape;
use cgt::gradcheck::{check_params, Tolerance};
use cgt::optim::AdamState;
use cgt::params::ParamStore;
use cgt::tensor::{layer_norm, softmax_rows, Tensor};
use proptest::prelude::*;
use rand::Rng;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
    prop::collection::vec(-20.0f64..20.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn softmax_rows_are_distributions(m in (1usize..6, 1usize..9).prop_flat_map(|(r, c)| matrix(r, c))) {
        let p = softmax_rows(&m).unwrap();
        for i in 0..p.rows() {
            let s: f64 = p.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.row(i).iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn softmax_ignores_row_shifts(m in matrix(3, 5), shift in -50.0f64..50.0) {
        let shifted = Tensor::new(vec![3, 5], m.data().iter().map(|x| x + shift).collect()).unwrap();
        let (a, b) = (softmax_rows(&m).unwrap(), softmax_rows(&shifted).unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_softmax_is_lower_triangular(m in matrix(5, 5)) {
        let mut tape = Tape::<f64>::new();
        let x = tape.input(m);
        let p = tape.softmax_rows(x, true).unwrap();
        let v = tape.value(p);
        for i in 0..5 {
            for j in 0..5 {
                if j > i {
                    prop_assert_eq!(v.at(i, j), 0.0);
                }
            }
            prop_assert!((v.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        prop_assert_eq!(v.at(0, 0), 1.0);
    }

    #[test]
    fn layer_norm_standardizes(x in prop::collection::vec(-5.0f64..5.0, 2..32)) {
        prop_assume!(x.iter().any(|&v| (v - x[0]).abs() > 1e-3));
        let n = x.len();
        let y = layer_norm(&x, &vec![1.0; n], &vec![0.0; n], 1e-12).unwrap();
        let mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matmul_matches_naive_triple_loop(a in matrix(3, 4), b in matrix(4, 2)) {
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let want: f64 = (0..4).map(|k| a.at(i, k) * b.at(k, j)).sum();
                prop_assert!((c.at(i, j) - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn first_adam_step_moves_each_coordinate_by_about_lr(g in prop::collection::vec(-10.0f64..10.0, 1..16), lr in 1e-4f64..1e-1) {
        prop_assume!(g.iter().all(|v| v.abs() > 1e-3));
        let mut store = ParamStore::<f64>::new();
        let id = store.insert("w", Tensor::zeros(vec![g.len()]), true).unwrap();
        // Loss Σ w·g has gradient g.
        let linear = {
            let mut t = Tape::new();
            let w = t.param(&store, id);
            let gt = t.constant(Tensor::new(vec![g.len()], g.clone()).unwrap());
            let x = t.mul(w, gt).unwrap();
            let s = sum_all(&mut t, x);
            t.backward(s).unwrap().params
        };
        let mut adam = AdamState::new(&store);
        adam.step(&mut store, &linear, lr).unwrap();
        for (k, &gk) in g.iter().enumerate() {
            let moved = store.get(id).tensor.data()[k];
            // First bias-corrected step is lr · g / (|g| + eps).
            let want = -lr * gk / (gk.abs() + 1e-8);
            prop_assert!((moved - want).abs() <= 1e-12 * lr.max(1.0));
        }
    }
}

/// Sum of all entries as `((x + 1)^2 - x^2 - 1) / 2` summed, which is exactly Σx.
fn sum_all(t: &mut Tape<'_, f64>, x: cgt::autograd::Var) -> cgt::autograd::Var {
    let n = t.value(x).len();
    let one = t.constant(Tensor::filled(vec![n], 1.0));
    let xp = t.add(x, one).unwrap();
    let a = t.sum_squares(xp);
    let b = t.sum_squares(x);
    let d = t.sub(a, b).unwrap();
    let c = t.constant(Tensor::scalar(n as f64));
    let e = t.sub(d, c).unwrap();
    t.scale(e, 0.5)
}

#[test]
fn adam_first_step_example() {
    // One parameter, gradient 1, lr 1e-3: the update is lr / (1 + eps).
    let mut store = ParamStore::<f64>::new();
    let id = store.insert("w", Tensor::zeros(vec![1]), true).unwrap();
    let grads = {
        let mut t = Tape::new();
        let w = t.param(&store, id);
        let s = sum_all(&mut t, w);
        t.backward(s).unwrap().params
    };
    let mut adam = AdamState::new(&store);
    adam.step(&mut store, &grads, 1e-3).unwrap();
    let w = store.get(id).tensor.data()[0];
    assert!((w + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
    assert!((w + 9.9999999e-4).abs() < 1e-12);
}

/// Finite-difference check of a composite expression touching every
/// differentiable tape op used by the model.
#[test]
fn tape_ops_match_finite_differences() {
    let mut r = common::rng(17);
    for seed in 0..10 {
        let mut store = ParamStore::<f64>::new();
        let mut rand_t = |shape: Vec<usize>| {
            let n = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
        };
        let a = store.insert("a", rand_t(vec![4, 6]), true).unwrap();
        let b = store.insert("b", rand_t(vec![6, 6]), true).unwrap();
        let gain = store.insert("gain", rand_t(vec![6]), true).unwrap();
        let bias = store.insert("bias", rand_t(vec![6]), true).unwrap();
        let table = store.insert("table", rand_t(vec![5, 6]), true).unwrap();
        let targets = [Some(1), None, Some(4), Some(0)];
        let report = check_params(
            &store,
            |tape, ps| {
                let (a, b, g, bi, tb) = (tape.param(ps, a), tape.param(ps, b), tape.param(ps, gain), tape.param(ps, bias), tape.param(ps, table));
                let rows = tape.gather_rows(tb, &[0, 3, 3, 1])?;
                let h = tape.add(a, rows)?;
                let x = tape.matmul(h, b)?;
                let x = tape.leaky_relu(x, 0.2);
                let x = tape.add_row(x, bi)?;
                let ln = tape.layer_norm(x, g, bi, 1e-5)?;
                let left = tape.slice_cols(ln, 0, 3)?;
                let right = tape.slice_cols(ln, 3, 3)?;
                let scores = tape.matmul_bt(left, right)?;
                let p = tape.softmax_rows(scores, seed % 2 == 0)?;
                let ent = tape.row_entropy_mean(p)?;
                let mixed = tape.matmul(p, right)?;
                let cat = tape.concat_cols(&[mixed, left])?;
                let cat = tape.relu(cat);
                let logits = tape.matmul_bt(cat, tb)?;
                let ce = tape.cross_entropy(logits, &targets)?;
                let sq = tape.sum_squares(mixed);
                let sq = tape.scale(sq, 0.1);
                let l = tape.add(ce, sq)?;
                tape.sub(l, ent)
            },
            Tolerance::default(),
            &|_| true,
        )
        .unwrap();
        assert!(report.passed(), "seed {seed}: {:?}", &report.failures[..report.failures.len().min(3)]);
        assert!(report.checked > 100);
    }
}

#[test]
fn cross_entropy_gradient_example() {
    // softmax-CE on logits [0, 0] with target 0: gradient [-0.5, 0.5].
    let mut t = Tape::<f64>::new();
    let x = t.input(Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap());
    let l = t.cross_entropy(x, &[Some(0)]).unwrap();
    assert!((t.scalar(l) - 2f64.ln()).abs() < 1e-15);
    let g = t.backward(l).unwrap();
    assert_eq!(g.wrt(x).unwrap(), &[-0.5, 0.5]);
}
