//! Gradient fidelity of the tape: every operation is checked against
//! central finite differences, alongside the pinned forward examples.

use nps_core::array::Array;
use nps_core::fdcheck::{fd_grad_params, max_rel_err, DEFAULT_STEP};
use nps_core::optim::{GradStore, ParamId, ParamStore};
use nps_core::rng::Mix64;
use nps_core::tape::{Tape, Var};

/// Reverse-mode vs. finite-difference gradients for a scalar loss built by
/// `f`; returns the worst relative error over all listed parameters.
fn check_grads(
    store: &mut ParamStore,
    ids: &[ParamId],
    f: impl Fn(&mut Tape, &ParamStore) -> Var,
) -> f64 {
    let mut tape = Tape::new();
    let loss = f(&mut tape, store);
    tape.backward(loss).unwrap();
    assert_eq!(tape.max_visits(), 1, "backward must touch each node once");
    let mut grads = GradStore::zeros_like(store);
    tape.accumulate_param_grads(&mut grads);

    let fd = fd_grad_params(
        store,
        ids,
        |s| {
            let mut t = Tape::new();
            let loss = f(&mut t, s);
            t.value(loss).scalar_value()
        },
        DEFAULT_STEP,
    )
    .unwrap();

    let mut worst = 0.0f64;
    for (id, fd_g) in &fd {
        let ad_g = grads.get(*id).expect("gradient present");
        worst = worst.max(max_rel_err(ad_g.data(), fd_g));
    }
    worst
}

fn rand_param(store: &mut ParamStore, name: &str, rows: usize, cols: usize, seed: u64) -> ParamId {
    let mut rng = Mix64::new(seed);
    let data = (0..rows * cols).map(|_| rng.next_range(-1.0, 1.0)).collect();
    store.insert(name, Array::matrix(rows, cols, data))
}

// ── matmul ──────────────────────────────────────────────────────────

#[test]
fn matmul_identity_case() {
    let mut tape = Tape::new();
    let eye = tape.constant(Array::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]));
    let b = tape.constant(Array::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
    let c = tape.matmul(eye, b).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn matmul_unit_basis_selection() {
    let mut tape = Tape::new();
    let a = tape.constant(Array::matrix(1, 2, vec![1.0, 0.0]));
    let b = tape.constant(Array::matrix(2, 1, vec![2.0, 5.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[2.0]);
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Array::zeros(2, 3));
    let b = tape.constant(Array::zeros(2, 3));
    let err = tape.matmul(a, b).unwrap_err().to_string();
    assert!(err.contains("[2x3]") && err.contains("matmul"), "{err}");
}

#[test]
fn matmul_gradcheck_vs_finite_differences() {
    let mut store = ParamStore::new();
    let a = rand_param(&mut store, "a", 3, 4, 11);
    let b = rand_param(&mut store, "b", 4, 2, 12);
    let worst = check_grads(&mut store, &[a, b], |t, s| {
        let a = t.param(s, a);
        let b = t.param(s, b);
        let c = t.matmul(a, b).unwrap();
        t.sum(c)
    });
    assert!(worst < 1e-4, "max rel err {worst}");
}

// ── elementwise ─────────────────────────────────────────────────────

#[test]
fn relu_sign_cases() {
    let mut tape = Tape::new();
    let x = tape.constant(Array::vector(vec![-1.0, 0.0, 2.0]));
    let y = tape.relu(x);
    assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn sigmoid_symmetry() {
    let mut tape = Tape::new();
    let x = tape.constant(Array::scalar(0.0));
    let y = tape.sigmoid(x);
    assert_eq!(tape.value(y).data()[0], 0.5);
}

#[test]
fn elu_gradcheck_on_random_points() {
    let mut store = ParamStore::new();
    let x = rand_param(&mut store, "x", 1, 16, 21);
    let worst = check_grads(&mut store, &[x], |t, s| {
        let x = t.param(s, x);
        let y = t.elu(x);
        // Weighted sum so each point's gradient differs.
        let w = t.constant(Array::matrix(1, 16, (1..=16).map(|i| i as f64 / 7.0).collect()));
        let z = t.mul(y, w).unwrap();
        t.sum(z)
    });
    assert!(worst < 1e-4, "max rel err {worst}");
}

#[test]
fn elementwise_binary_gradchecks() {
    let mut store = ParamStore::new();
    let a = rand_param(&mut store, "a", 2, 5, 31);
    let b = rand_param(&mut store, "b", 2, 5, 32);
    for op in ["add", "sub", "mul"] {
        let worst = check_grads(&mut store, &[a, b], |t, s| {
            let av = t.param(s, a);
            let bv = t.param(s, b);
            let y = match op {
                "add" => t.add(av, bv).unwrap(),
                "sub" => t.sub(av, bv).unwrap(),
                _ => t.mul(av, bv).unwrap(),
            };
            let sq = t.mul(y, y).unwrap();
            t.mean(sq)
        });
        assert!(worst < 1e-4, "{op}: max rel err {worst}");
    }
}

#[test]
fn sigmoid_log_exp_gradchecks() {
    let mut store = ParamStore::new();
    let x = rand_param(&mut store, "x", 1, 10, 41);
    let worst = check_grads(&mut store, &[x], |t, s| {
        let x = t.param(s, x);
        let y = t.sigmoid(x);
        let y = t.log(y).unwrap(); // sigmoid output is strictly positive
        let y = t.exp(y).unwrap();
        let sq = t.mul(y, y).unwrap();
        t.sum(sq)
    });
    assert!(worst < 1e-4, "max rel err {worst}");
}

#[test]
fn log_domain_violation_errors() {
    let mut tape = Tape::new();
    let x = tape.constant(Array::vector(vec![1.0, 0.0]));
    assert!(tape.log(x).is_err());
    let y = tape.constant(Array::vector(vec![800.0]));
    assert!(tape.exp(y).is_err());
}

// ── softmax ─────────────────────────────────────────────────────────

#[test]
fn softmax_symmetry() {
    let mut tape = Tape::new();
    let x = tape.constant(Array::vector(vec![0.0, 0.0]));
    let y = tape.softmax(x, 1).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
}

#[test]
fn softmax_stabilized_against_overflow() {
    let mut tape = Tape::new();
    let x = tape.constant(Array::vector(vec![1000.0, 0.0]));
    let y = tape.softmax(x, 1).unwrap();
    let v = tape.value(y).data();
    assert!(v[0] > 1.0 - 1e-12 && v[0].is_finite());
    assert!(v[1] >= 0.0 && v[1] < 1e-12);
}

#[test]
fn softmax_rows_sum_to_one_and_positive() {
    let mut rng = Mix64::new(77);
    for _ in 0..50 {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..12).map(|_| rng.next_range(-30.0, 30.0)).collect();
        let x = tape.constant(Array::matrix(3, 4, data));
        let y = tape.softmax(x, 1).unwrap();
        for r in 0..3 {
            let row = tape.value(y).row(r);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12, "row sum {sum}");
            assert!(row.iter().all(|v| *v > 0.0));
        }
    }
}

#[test]
fn softmax_nan_input_is_domain_error() {
    let mut tape = Tape::new();
    let x = tape.constant(Array::vector(vec![f64::NAN, 0.0]));
    assert!(tape.softmax(x, 1).is_err());
}

#[test]
fn softmax_gradcheck() {
    let mut store = ParamStore::new();
    let x = rand_param(&mut store, "x", 1, 8, 51);
    let worst = check_grads(&mut store, &[x], |t, s| {
        let x = t.param(s, x);
        let y = t.softmax(x, 1).unwrap();
        let w = t.constant(Array::matrix(1, 8, (1..=8).map(|i| (i as f64).sqrt()).collect()));
        let z = t.mul(y, w).unwrap();
        t.sum(z)
    });
    assert!(worst < 1e-4, "max rel err {worst}");
}

#[test]
fn softmax_axis0_gradcheck() {
    let mut store = ParamStore::new();
    let x = rand_param(&mut store, "x", 3, 2, 52);
    let worst = check_grads(&mut store, &[x], |t, s| {
        let x = t.param(s, x);
        let y = t.softmax(x, 0).unwrap();
        let w = t.constant(Array::matrix(3, 2, vec![0.3, -1.0, 2.0, 0.7, -0.2, 1.1]));
        let z = t.mul(y, w).unwrap();
        t.sum(z)
    });
    assert!(worst < 1e-4, "max rel err {worst}");
}

// ── concat / slicing ────────────────────────────────────────────────

#[test]
fn concat_vectors() {
    let mut tape = Tape::new();
    let a = tape.constant(Array::vector(vec![1.0, 2.0]));
    let b = tape.constant(Array::vector(vec![3.0]));
    let c = tape.concat(a, b, 0).unwrap();
    assert_eq!(tape.value(c).data(), &[1.0, 2.0, 3.0]);
    assert_eq!(tape.value(c).rank(), 1);
}

#[test]
fn concat_gradient_is_ones_on_both_parts() {
    let mut tape = Tape::new();
    let a = tape.leaf(Array::vector(vec![1.0, 2.0]));
    let b = tape.leaf(Array::vector(vec![3.0]));
    let c = tape.concat(a, b, 0).unwrap();
    let s = tape.sum(c);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(a).data(), &[1.0, 1.0]);
    assert_eq!(tape.grad(b).data(), &[1.0]);
}

#[test]
fn concat_then_slice_recovers_bit_exactly() {
    let mut rng = Mix64::new(61);
    let mut tape = Tape::new();
    let left = Array::matrix(2, 3, (0..6).map(|_| rng.next_f64()).collect());
    let right = Array::matrix(2, 2, (0..4).map(|_| rng.next_f64()).collect());
    let a = tape.constant(left.clone());
    let b = tape.constant(right.clone());
    let c = tape.concat(a, b, 1).unwrap();
    let a2 = tape.slice_cols(c, 0, 3).unwrap();
    let b2 = tape.slice_cols(c, 3, 5).unwrap();
    assert_eq!(tape.value(a2).data(), left.data());
    assert_eq!(tape.value(b2).data(), right.data());
}

#[test]
fn concat_axis1_and_slice_gradchecks() {
    let mut store = ParamStore::new();
    let a = rand_param(&mut store, "a", 2, 3, 71);
    let b = rand_param(&mut store, "b", 2, 2, 72);
    let worst = check_grads(&mut store, &[a, b], |t, s| {
        let av = t.param(s, a);
        let bv = t.param(s, b);
        let c = t.concat(av, bv, 1).unwrap();
        let mid = t.slice_cols(c, 1, 4).unwrap();
        let top = t.slice_rows(mid, 0, 1).unwrap();
        let sq = t.mul(top, top).unwrap();
        t.sum(sq)
    });
    assert!(worst < 1e-4, "max rel err {worst}");
}

#[test]
fn gather_transpose_reshape_gradchecks() {
    let mut store = ParamStore::new();
    let a = rand_param(&mut store, "a", 4, 3, 81);
    let worst = check_grads(&mut store, &[a], |t, s| {
        let av = t.param(s, a);
        let g = t.gather_rows(av, &[2, 0, 2]).unwrap(); // repeated row: scatter-add
        let gt = t.transpose(g);
        let r = t.reshape(gt, 1, 9).unwrap();
        let sq = t.mul(r, r).unwrap();
        t.mean(sq)
    });
    assert!(worst < 1e-4, "max rel err {worst}");
}

// ── dropout ─────────────────────────────────────────────────────────

#[test]
fn dropout_p_zero_is_identity() {
    let mut tape = Tape::new();
    let x = tape.constant(Array::vector(vec![1.0, -2.0, 3.0]));
    let mut rng = Mix64::new(1);
    let y = tape.dropout(x, 0.0, true, &mut rng).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, -2.0, 3.0]);
}

#[test]
fn dropout_eval_mode_is_identity() {
    let mut tape = Tape::new();
    let x = tape.constant(Array::vector(vec![1.0, -2.0, 3.0]));
    let mut rng = Mix64::new(1);
    let y = tape.dropout(x, 0.9, false, &mut rng).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, -2.0, 3.0]);
}

#[test]
fn dropout_rejects_bad_probability() {
    let mut tape = Tape::new();
    let x = tape.constant(Array::vector(vec![1.0]));
    let mut rng = Mix64::new(1);
    assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
    assert!(tape.dropout(x, -0.1, true, &mut rng).is_err());
}

#[test]
fn dropout_zero_fraction_matches_p() {
    // Monte-Carlo oracle: zero fraction over 1e5 elements at p = 0.35.
    let mut tape = Tape::new();
    let n = 100_000;
    let x = tape.constant(Array::matrix(1, n, vec![1.0; n]));
    let mut rng = Mix64::new(2024);
    let y = tape.dropout(x, 0.35, true, &mut rng).unwrap();
    let zeros = tape.value(y).data().iter().filter(|v| **v == 0.0).count();
    let frac = zeros as f64 / n as f64;
    assert!((0.345..=0.355).contains(&frac), "zero fraction {frac}");
    // Survivors are scaled by 1/(1-p).
    let kept = tape.value(y).data().iter().find(|v| **v != 0.0).unwrap();
    assert!((kept - 1.0 / 0.65).abs() < 1e-12);
}

// ── backward contract ───────────────────────────────────────────────

#[test]
fn backward_sum_gives_ones() {
    let mut tape = Tape::new();
    let w = tape.leaf(Array::vector(vec![1.0, 2.0, 3.0]));
    let s = tape.sum(w);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(w).data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_quadratic_gives_two_w() {
    let mut tape = Tape::new();
    let w = tape.leaf(Array::vector(vec![1.0, -2.0, 0.5]));
    let sq = tape.mul(w, w).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(w).data(), &[2.0, -4.0, 1.0]);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut tape = Tape::new();
    let w = tape.leaf(Array::vector(vec![1.0, 2.0]));
    assert!(tape.backward(w).is_err());
}

#[test]
fn backward_accumulates_on_repeat() {
    let mut tape = Tape::new();
    let w = tape.leaf(Array::vector(vec![1.0, 2.0]));
    let s = tape.sum(w);
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(w).data(), &[2.0, 2.0]);
}

#[test]
fn non_participating_tensor_has_zero_grad() {
    let mut tape = Tape::new();
    let w = tape.leaf(Array::vector(vec![1.0, 2.0]));
    let unused = tape.leaf(Array::vector(vec![5.0]));
    let s = tape.sum(w);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(unused).data(), &[0.0]);
}

#[test]
fn straight_through_passes_gradient_to_soft_path() {
    let mut tape = Tape::new();
    let x = tape.leaf(Array::vector(vec![2.0, 1.0, 0.0]));
    let soft = tape.softmax(x, 1).unwrap();
    let hard = Array::matrix(1, 3, vec![1.0, 0.0, 0.0]);
    let st = tape.straight_through(soft, hard).unwrap();
    // Forward is exactly one-hot.
    assert_eq!(tape.value(st).data(), &[1.0, 0.0, 0.0]);
    let w = tape.constant(Array::matrix(1, 3, vec![3.0, -1.0, 2.0]));
    let y = tape.mul(st, w).unwrap();
    let loss = tape.sum(y);
    tape.backward(loss).unwrap();
    // Gradient w.r.t. x equals the gradient as if y used the soft weights.
    let mut ref_tape = Tape::new();
    let x2 = ref_tape.leaf(Array::vector(vec![2.0, 1.0, 0.0]));
    let soft2 = ref_tape.softmax(x2, 1).unwrap();
    let w2 = ref_tape.constant(Array::matrix(1, 3, vec![3.0, -1.0, 2.0]));
    let y2 = ref_tape.mul(soft2, w2).unwrap();
    let loss2 = ref_tape.sum(y2);
    ref_tape.backward(loss2).unwrap();
    assert_eq!(tape.grad(x).data(), ref_tape.grad(x2).data());
}

#[test]
fn affine_and_mse_gradcheck() {
    let mut store = ParamStore::new();
    let w = rand_param(&mut store, "w", 3, 2, 91);
    let b = rand_param(&mut store, "b", 1, 2, 92);
    let worst = check_grads(&mut store, &[w, b], |t, s| {
        let x = t.constant(Array::matrix(4, 3, (0..12).map(|i| (i as f64 * 0.7).sin()).collect()));
        let wv = t.param(s, w);
        let bv = t.param(s, b);
        let y = t.affine(x, wv, bv).unwrap();
        let target = t.constant(Array::matrix(4, 2, vec![0.5; 8]));
        t.mse(y, target).unwrap()
    });
    assert!(worst < 1e-4, "max rel err {worst}");
}

#[test]
fn forward_and_gradients_are_deterministic() {
    let run = || {
        let mut store = ParamStore::new();
        store.insert_uniform("w", 4, 4, 4, 99);
        let id = store.lookup("w").unwrap();
        let mut tape = Tape::new();
        let w = tape.param(&store, id);
        let x = tape.constant(Array::matrix(2, 4, (0..8).map(|i| i as f64 * 0.25).collect()));
        let y = tape.matmul(x, w).unwrap();
        let y = tape.elu(y);
        let mut rng = Mix64::new(5);
        let y = tape.dropout(y, 0.3, true, &mut rng).unwrap();
        let loss = tape.mean(y);
        tape.backward(loss).unwrap();
        (
            tape.value(loss).data()[0].to_bits(),
            tape.grad(w).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        )
    };
    assert_eq!(run(), run());
}
