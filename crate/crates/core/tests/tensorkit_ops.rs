//! Tensor kernel tests: frozen hand-computed fixtures for forward values,
//! central finite-difference oracles for every differentiable op, optimizer
//! fixtures unrolled by hand, and checkpoint round-trips.

use hesm_core::tensorkit::gradcheck::{self, GradCheckTolerance};
use hesm_core::tensorkit::{
    load_checkpoint, save_checkpoint, AdamW, AdamWConfig, Params, Rng, Tape, Tensor, TensorError,
    VarId,
};

fn tensor(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

fn random_tensor(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.uniform(-2.0, 2.0)).collect();
    Tensor::from_vec(shape, data).unwrap()
}

/// Collapse any node to a scalar through a fixed random weighting so each
/// output coordinate influences the loss.
fn reduce_to_scalar(tape: &mut Tape, id: VarId, weights: &Tensor) -> VarId {
    let len = tape.value(id).len();
    let flat = tape.reshape(id, &[1, len]).unwrap();
    let w = tape.constant(weights.clone());
    let prod = tape.matmul(flat, w).unwrap();
    tape.reshape(prod, &[1]).unwrap()
}

/// Run an op-specific graph builder under the finite-difference oracle.
fn assert_grads_match<F>(params: &mut Params, build: F)
where
    F: Fn(&mut Tape, &Params) -> VarId,
{
    params.reset_grads();
    let mut tape = Tape::new();
    let loss = build(&mut tape, params);
    assert_eq!(tape.value(loss).len(), 1, "loss must be scalar");
    tape.backward(loss, params).unwrap();

    let entries = gradcheck::all_entries(params);
    let tol = GradCheckTolerance::default();
    let report = gradcheck::check_entries(params, &entries, tol, |ps| {
        let mut t = Tape::new();
        let l = build(&mut t, ps);
        t.value(l).data()[0]
    });
    for e in &report {
        assert!(
            e.rel_err < tol.rel_tol,
            "{}[{}]: analytic {} vs numeric {} (rel err {})",
            e.name,
            e.index,
            e.analytic,
            e.numeric,
            e.rel_err
        );
    }
}

// ── Forward fixtures ─────────────────────────────────────────────────────

#[test]
fn matmul_known_product() {
    let mut tape = Tape::new();
    let a = tape.constant(tensor(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(tensor(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let c = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(c).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_mismatch_reports_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[4, 2]));
    match tape.matmul(a, b) {
        Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![4, 2]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn elementwise_add_mul_known() {
    let mut tape = Tape::new();
    let a = tape.constant(tensor(&[3], &[1.0, -2.0, 0.5]));
    let b = tape.constant(tensor(&[3], &[4.0, 3.0, -2.0]));
    let s = tape.add(a, b).unwrap();
    let p = tape.mul(a, b).unwrap();
    assert_eq!(tape.value(s).data(), &[5.0, 1.0, -1.5]);
    assert_eq!(tape.value(p).data(), &[4.0, -6.0, -1.0]);
}

#[test]
fn add_bias_broadcasts_over_rows() {
    let mut tape = Tape::new();
    let x = tape.constant(tensor(&[2, 3], &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]));
    let b = tape.constant(tensor(&[3], &[10.0, 20.0, 30.0]));
    let y = tape.add_bias(x, b).unwrap();
    assert_eq!(tape.value(y).data(), &[10.0, 20.0, 30.0, 11.0, 21.0, 31.0]);
}

#[test]
fn softmax_of_zero_and_ln2_is_one_third_two_thirds() {
    let mut tape = Tape::new();
    let x = tape.constant(tensor(&[1, 2], &[0.0, 2.0_f64.ln()]));
    let y = tape.softmax(x).unwrap();
    let out = tape.value(y).data();
    assert!((out[0] - 1.0 / 3.0).abs() < 1e-15, "got {}", out[0]);
    assert!((out[1] - 2.0 / 3.0).abs() < 1e-15, "got {}", out[1]);
}

#[test]
fn softmax_rows_sum_to_one_on_random_inputs() {
    let mut rng = Rng::seeded(41);
    for _ in 0..100 {
        let rows = 1 + rng.below(5);
        let cols = 1 + rng.below(9);
        let mut tape = Tape::new();
        let x = tape.constant(random_tensor(&mut rng, &[rows, cols]));
        let y = tape.softmax(x).unwrap();
        let data = tape.value(y).data();
        for r in 0..rows {
            let sum: f64 = data[r * cols..(r + 1) * cols].iter().sum();
            assert!((sum - 1.0).abs() < 1e-9, "row sum {sum}");
            assert!(data[r * cols..(r + 1) * cols].iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn softmax_is_stable_for_large_logits() {
    let mut tape = Tape::new();
    let x = tape.constant(tensor(&[1, 3], &[1000.0, 999.0, -1000.0]));
    let y = tape.softmax(x).unwrap();
    assert!(tape.value(y).all_finite());
    let sum: f64 = tape.value(y).data().iter().sum();
    assert!((sum - 1.0).abs() < 1e-9);
}

#[test]
fn layer_norm_rows_have_zero_mean_unit_variance() {
    let mut rng = Rng::seeded(13);
    for _ in 0..20 {
        let rows = 1 + rng.below(4);
        let cols = 2 + rng.below(12);
        let mut tape = Tape::new();
        let x = tape.constant(random_tensor(&mut rng, &[rows, cols]));
        let y = tape.layer_norm(x).unwrap();
        let data = tape.value(y).data();
        for r in 0..rows {
            let row = &data[r * cols..(r + 1) * cols];
            let mean: f64 = row.iter().sum::<f64>() / cols as f64;
            let var: f64 = row.iter().map(|&v| v * v).sum::<f64>() / cols as f64;
            assert!(mean.abs() < 1e-7, "row mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "row variance {var}");
        }
    }
}

#[test]
fn cross_entropy_matches_hand_computed_value() {
    // -log softmax([1,2,3])[1] = ln(e^1 + e^2 + e^3) - 2
    let expected = (1.0_f64.exp() + 2.0_f64.exp() + 3.0_f64.exp()).ln() - 2.0;
    let mut tape = Tape::new();
    let logits = tape.constant(tensor(&[3], &[1.0, 2.0, 3.0]));
    let loss = tape.cross_entropy(logits, 1).unwrap();
    assert!((tape.value(loss).data()[0] - expected).abs() < 1e-12);
}

#[test]
fn cross_entropy_uniform_logits_is_ln_class_count() {
    let mut tape = Tape::new();
    let logits = tape.constant(tensor(&[3], &[0.7, 0.7, 0.7]));
    let loss = tape.cross_entropy(logits, 2).unwrap();
    assert!((tape.value(loss).data()[0] - 3.0_f64.ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_rejects_out_of_range_gold() {
    let mut tape = Tape::new();
    let logits = tape.constant(tensor(&[3], &[0.0, 0.0, 0.0]));
    assert!(matches!(
        tape.cross_entropy(logits, 3),
        Err(TensorError::Index { .. })
    ));
}

#[test]
fn embed_gathers_rows_and_rejects_large_index() {
    let mut tape = Tape::new();
    let table = tape.constant(tensor(&[3, 2], &[0.0, 1.0, 10.0, 11.0, 20.0, 21.0]));
    let picked = tape.embed(table, &[2, 0, 2]).unwrap();
    assert_eq!(tape.value(picked).data(), &[20.0, 21.0, 0.0, 1.0, 20.0, 21.0]);
    assert!(matches!(
        tape.embed(table, &[3]),
        Err(TensorError::Index { .. })
    ));
}

#[test]
fn gelu_known_points() {
    let mut tape = Tape::new();
    let x = tape.constant(tensor(&[4], &[0.0, 1.0, 3.0, -3.0]));
    let y = tape.gelu(x).unwrap();
    let out = tape.value(y).data();
    assert_eq!(out[0], 0.0);
    // tanh-approximation value at 1.0
    assert!((out[1] - 0.8411919906082768).abs() < 1e-12, "got {}", out[1]);
    assert!((out[2] - 3.0).abs() < 0.004, "gelu(3) ≈ 3, got {}", out[2]);
    assert!(out[3] > -0.004 && out[3] < 0.0, "gelu(-3) ≈ 0-, got {}", out[3]);
}

#[test]
fn slice_concat_transpose_round_trip_values() {
    let mut tape = Tape::new();
    let x = tape.constant(tensor(&[2, 4], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]));
    let left = tape.slice_cols(x, 0, 2).unwrap();
    let right = tape.slice_cols(x, 2, 2).unwrap();
    let back = tape.concat_cols(&[left, right]).unwrap();
    assert_eq!(tape.value(back).data(), tape.value(x).data());

    let top = tape.slice_rows(x, 0, 1).unwrap();
    let bottom = tape.slice_rows(x, 1, 1).unwrap();
    let stacked = tape.concat_rows(&[top, bottom]).unwrap();
    assert_eq!(tape.value(stacked).data(), tape.value(x).data());

    let t = tape.transpose(x).unwrap();
    let tt = tape.transpose(t).unwrap();
    assert_eq!(tape.value(tt).data(), tape.value(x).data());
    assert_eq!(tape.value(t).shape(), &[4, 2]);
    assert_eq!(tape.value(t).at(0, 1), 5.0);
}

#[test]
fn mean_and_max_rows_known_values() {
    let mut tape = Tape::new();
    let x = tape.constant(tensor(&[3, 2], &[1.0, -1.0, 5.0, 0.0, 3.0, 4.0]));
    let mean = tape.mean_rows(x).unwrap();
    let max = tape.max_rows(x).unwrap();
    assert_eq!(tape.value(mean).data(), &[3.0, 1.0]);
    assert_eq!(tape.value(max).data(), &[5.0, 4.0]);
}

#[test]
fn chained_ops_stay_finite() {
    let mut rng = Rng::seeded(99);
    let mut tape = Tape::new();
    let x = tape.constant(random_tensor(&mut rng, &[4, 6]));
    let w = tape.constant(random_tensor(&mut rng, &[6, 6]));
    let h = tape.matmul(x, w).unwrap();
    let n = tape.layer_norm(h).unwrap();
    let g = tape.gelu(n).unwrap();
    let s = tape.softmax(g).unwrap();
    let t = tape.tanh(s).unwrap();
    assert!(tape.value(t).all_finite());
}

// ── Backward: finite-difference oracle per op ────────────────────────────

#[test]
fn grad_matmul() {
    let mut rng = Rng::seeded(1);
    let mut params = Params::new();
    params.insert("a", random_tensor(&mut rng, &[3, 4]));
    params.insert("b", random_tensor(&mut rng, &[4, 2]));
    let w = random_tensor(&mut rng, &[6, 1]);
    assert_grads_match(&mut params, move |tape, ps| {
        let a = tape.param(ps, "a").unwrap();
        let b = tape.param(ps, "b").unwrap();
        let c = tape.matmul(a, b).unwrap();
        reduce_to_scalar(tape, c, &w)
    });
}

#[test]
fn grad_add_mul() {
    let mut rng = Rng::seeded(2);
    let mut params = Params::new();
    params.insert("a", random_tensor(&mut rng, &[2, 5]));
    params.insert("b", random_tensor(&mut rng, &[2, 5]));
    let w = random_tensor(&mut rng, &[10, 1]);
    assert_grads_match(&mut params, move |tape, ps| {
        let a = tape.param(ps, "a").unwrap();
        let b = tape.param(ps, "b").unwrap();
        let s = tape.add(a, b).unwrap();
        let p = tape.mul(s, a).unwrap();
        reduce_to_scalar(tape, p, &w)
    });
}

#[test]
fn grad_bias_ops() {
    let mut rng = Rng::seeded(3);
    let mut params = Params::new();
    params.insert("x", random_tensor(&mut rng, &[3, 4]));
    params.insert("b", random_tensor(&mut rng, &[4]));
    params.insert("g", random_tensor(&mut rng, &[4]));
    let w = random_tensor(&mut rng, &[12, 1]);
    assert_grads_match(&mut params, move |tape, ps| {
        let x = tape.param(ps, "x").unwrap();
        let b = tape.param(ps, "b").unwrap();
        let g = tape.param(ps, "g").unwrap();
        let h = tape.add_bias(x, b).unwrap();
        let y = tape.mul_bias(h, g).unwrap();
        reduce_to_scalar(tape, y, &w)
    });
}

#[test]
fn grad_tanh_gelu() {
    let mut rng = Rng::seeded(4);
    let mut params = Params::new();
    params.insert("x", random_tensor(&mut rng, &[2, 6]));
    let w = random_tensor(&mut rng, &[12, 1]);
    assert_grads_match(&mut params, move |tape, ps| {
        let x = tape.param(ps, "x").unwrap();
        let t = tape.tanh(x).unwrap();
        let g = tape.gelu(t).unwrap();
        reduce_to_scalar(tape, g, &w)
    });
}

#[test]
fn grad_layer_norm() {
    let mut rng = Rng::seeded(5);
    let mut params = Params::new();
    params.insert("x", random_tensor(&mut rng, &[3, 8]));
    let w = random_tensor(&mut rng, &[24, 1]);
    assert_grads_match(&mut params, move |tape, ps| {
        let x = tape.param(ps, "x").unwrap();
        let n = tape.layer_norm(x).unwrap();
        reduce_to_scalar(tape, n, &w)
    });
}

#[test]
fn grad_softmax() {
    let mut rng = Rng::seeded(6);
    let mut params = Params::new();
    params.insert("x", random_tensor(&mut rng, &[2, 7]));
    let w = random_tensor(&mut rng, &[14, 1]);
    assert_grads_match(&mut params, move |tape, ps| {
        let x = tape.param(ps, "x").unwrap();
        let s = tape.softmax(x).unwrap();
        reduce_to_scalar(tape, s, &w)
    });
}

#[test]
fn grad_scale_ops() {
    let mut rng = Rng::seeded(7);
    let mut params = Params::new();
    params.insert("x", random_tensor(&mut rng, &[3, 4]));
    params.insert("s", random_tensor(&mut rng, &[1]));
    params.insert("a", random_tensor(&mut rng, &[3]));
    let w = random_tensor(&mut rng, &[12, 1]);
    assert_grads_match(&mut params, move |tape, ps| {
        let x = tape.param(ps, "x").unwrap();
        let s = tape.param(ps, "s").unwrap();
        let a = tape.param(ps, "a").unwrap();
        let h = tape.scale(x, -1.7).unwrap();
        let h = tape.scale_var(h, s).unwrap();
        let h = tape.scale_rows(h, a).unwrap();
        reduce_to_scalar(tape, h, &w)
    });
}

#[test]
fn grad_embed() {
    let mut rng = Rng::seeded(8);
    let mut params = Params::new();
    params.insert("table", random_tensor(&mut rng, &[5, 3]));
    let w = random_tensor(&mut rng, &[9, 1]);
    assert_grads_match(&mut params, move |tape, ps| {
        let table = tape.param(ps, "table").unwrap();
        // Repeated index exercises scatter-add accumulation.
        let rows = tape.embed(table, &[1, 4, 1]).unwrap();
        reduce_to_scalar(tape, rows, &w)
    });
}

#[test]
fn grad_slice_concat_transpose_reshape() {
    let mut rng = Rng::seeded(9);
    let mut params = Params::new();
    params.insert("x", random_tensor(&mut rng, &[4, 6]));
    let w = random_tensor(&mut rng, &[24, 1]);
    assert_grads_match(&mut params, move |tape, ps| {
        let x = tape.param(ps, "x").unwrap();
        let a = tape.slice_cols(x, 0, 3).unwrap();
        let b = tape.slice_cols(x, 3, 3).unwrap();
        let joined = tape.concat_cols(&[b, a]).unwrap();
        let top = tape.slice_rows(joined, 0, 2).unwrap();
        let bottom = tape.slice_rows(joined, 2, 2).unwrap();
        let stacked = tape.concat_rows(&[bottom, top]).unwrap();
        let t = tape.transpose(stacked).unwrap();
        let r = tape.reshape(t, &[4, 6]).unwrap();
        reduce_to_scalar(tape, r, &w)
    });
}

#[test]
fn grad_mean_max_rows() {
    let mut rng = Rng::seeded(10);
    let mut params = Params::new();
    params.insert("x", random_tensor(&mut rng, &[5, 3]));
    let w = random_tensor(&mut rng, &[6, 1]);
    assert_grads_match(&mut params, move |tape, ps| {
        let x = tape.param(ps, "x").unwrap();
        let mean = tape.mean_rows(x).unwrap();
        let max = tape.max_rows(x).unwrap();
        let both = tape.concat_cols(&[mean, max]).unwrap();
        reduce_to_scalar(tape, both, &w)
    });
}

#[test]
fn grad_cross_entropy() {
    let mut rng = Rng::seeded(11);
    let mut params = Params::new();
    params.insert("logits", random_tensor(&mut rng, &[3]));
    assert_grads_match(&mut params, move |tape, ps| {
        let logits = tape.param(ps, "logits").unwrap();
        tape.cross_entropy(logits, 2).unwrap()
    });
}

#[test]
fn grad_two_class_cross_entropy() {
    let mut rng = Rng::seeded(12);
    let mut params = Params::new();
    params.insert("logits", random_tensor(&mut rng, &[2]));
    assert_grads_match(&mut params, move |tape, ps| {
        let logits = tape.param(ps, "logits").unwrap();
        tape.cross_entropy(logits, 0).unwrap()
    });
}

// ── Tape semantics ───────────────────────────────────────────────────────

#[test]
fn backward_twice_is_rejected() {
    let mut params = Params::new();
    params.insert("x", Tensor::scalar(2.0));
    let mut tape = Tape::new();
    let x = tape.param(&params, "x").unwrap();
    let y = tape.scale(x, 3.0).unwrap();
    tape.backward(y, &mut params).unwrap();
    assert!(matches!(
        tape.backward(y, &mut params),
        Err(TensorError::TapeConsumed)
    ));
}

#[test]
fn disconnected_parameter_keeps_exactly_zero_grad() {
    let mut params = Params::new();
    params.insert("used", Tensor::scalar(1.5));
    params.insert("unused", Tensor::scalar(-4.0));
    let mut tape = Tape::new();
    let x = tape.param(&params, "used").unwrap();
    let _ = tape.param(&params, "unused").unwrap();
    let y = tape.scale(x, 2.0).unwrap();
    tape.backward(y, &mut params).unwrap();
    assert_eq!(params.get("used").unwrap().grad.data()[0], 2.0);
    assert_eq!(params.get("unused").unwrap().grad.data()[0], 0.0);
}

#[test]
fn gradients_accumulate_until_reset() {
    let mut params = Params::new();
    params.insert("x", Tensor::scalar(1.0));
    for _ in 0..2 {
        let mut tape = Tape::new();
        let x = tape.param(&params, "x").unwrap();
        let y = tape.scale(x, 5.0).unwrap();
        tape.backward(y, &mut params).unwrap();
    }
    assert_eq!(params.get("x").unwrap().grad.data()[0], 10.0);
    params.reset_grads();
    assert_eq!(params.get("x").unwrap().grad.data()[0], 0.0);
}

#[test]
fn shared_parameter_used_twice_accumulates_both_paths() {
    let mut params = Params::new();
    params.insert("x", Tensor::scalar(3.0));
    let mut tape = Tape::new();
    let x1 = tape.param(&params, "x").unwrap();
    let x2 = tape.param(&params, "x").unwrap();
    let prod = tape.mul(x1, x2).unwrap(); // x², d/dx = 2x = 6
    tape.backward(prod, &mut params).unwrap();
    assert_eq!(params.get("x").unwrap().grad.data()[0], 6.0);
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let run = || {
        let mut rng = Rng::seeded(77);
        let mut tape = Tape::new();
        let x = tape.constant(random_tensor(&mut rng, &[4, 4]));
        let w = tape.constant(random_tensor(&mut rng, &[4, 4]));
        let h = tape.matmul(x, w).unwrap();
        let n = tape.layer_norm(h).unwrap();
        let s = tape.softmax(n).unwrap();
        tape.value(s).data().to_vec()
    };
    let a = run();
    let b = run();
    let a_bits: Vec<u64> = a.iter().map(|v| v.to_bits()).collect();
    let b_bits: Vec<u64> = b.iter().map(|v| v.to_bits()).collect();
    assert_eq!(a_bits, b_bits);
}

// ── AdamW ────────────────────────────────────────────────────────────────

#[test]
fn adamw_single_step_matches_hand_unrolled_update() {
    let mut params = Params::new();
    params.insert("p", Tensor::scalar(1.0));
    params.get_mut("p").unwrap().grad.data_mut()[0] = 0.1;
    let mut opt = AdamW::new(AdamWConfig::with_lr(0.01)).unwrap();
    opt.step(&mut params);

    // Hand-unrolled first step: m = 0.1·0.1, v = 0.001·0.01, bias-corrected
    // back to m̂ = 0.1, v̂ = 0.01.
    let m_hat = (0.1 * 0.1) / (1.0 - 0.9_f64);
    let v_hat = (0.001 * 0.1 * 0.1) / (1.0 - 0.999_f64);
    let expected = 1.0 - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
    let got = params.get("p").unwrap().value.data()[0];
    assert!((got - expected).abs() < 1e-15, "got {got}, expected {expected}");
    assert!((got - 0.990000001).abs() < 1e-9);
    // The step must not consume the gradient.
    assert_eq!(params.get("p").unwrap().grad.data()[0], 0.1);
    assert_eq!(opt.step_count(), 1);
}

#[test]
fn adamw_zero_grad_decays_exactly() {
    let mut params = Params::new();
    params.insert("p", Tensor::scalar(2.0));
    let mut cfg = AdamWConfig::with_lr(0.01);
    cfg.weight_decay = 0.1;
    let mut opt = AdamW::new(cfg).unwrap();
    opt.step(&mut params);
    // p - lr·wd·p = 2 - 0.01·0.1·2 = 1.998 exactly.
    assert_eq!(params.get("p").unwrap().value.data()[0], 1.998);
}

#[test]
fn adamw_rejects_nonpositive_lr() {
    assert!(AdamW::new(AdamWConfig::with_lr(0.0)).is_err());
    assert!(AdamW::new(AdamWConfig::with_lr(-1e-3)).is_err());
}

#[test]
fn adamw_drives_a_quadratic_toward_its_minimum() {
    let mut params = Params::new();
    params.insert("x", Tensor::scalar(3.0));
    let mut opt = AdamW::new(AdamWConfig::with_lr(0.05)).unwrap();
    for _ in 0..500 {
        params.reset_grads();
        let mut tape = Tape::new();
        let x = tape.param(&params, "x").unwrap();
        let sq = tape.mul(x, x).unwrap();
        tape.backward(sq, &mut params).unwrap();
        opt.step(&mut params);
    }
    let x = params.get("x").unwrap().value.data()[0];
    assert!(x.abs() < 0.05, "x should approach 0, got {x}");
}

// ── Checkpoints ──────────────────────────────────────────────────────────

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt.json");

    let mut rng = Rng::seeded(55);
    let mut params = Params::new();
    params.insert("w", random_tensor(&mut rng, &[7, 3]));
    params.insert("b", random_tensor(&mut rng, &[3]));

    // Train a step so optimizer moments are non-trivial.
    params.get_mut("w").unwrap().grad.data_mut()[0] = 0.25;
    let mut opt = AdamW::new(AdamWConfig::with_lr(0.001)).unwrap();
    opt.step(&mut params);

    let extra = serde_json::json!({"kind": "test", "dims": [7, 3]});
    save_checkpoint(&path, &params, Some(opt.state()), extra.clone()).unwrap();
    let loaded = load_checkpoint(&path).unwrap();

    assert_eq!(loaded.extra, extra);
    for p in params.iter() {
        let lp = loaded.params.get(&p.name).unwrap();
        assert_eq!(lp.value.shape(), p.value.shape());
        let orig: Vec<u64> = p.value.data().iter().map(|v| v.to_bits()).collect();
        let back: Vec<u64> = lp.value.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(orig, back, "values for {} must round-trip bit-exactly", p.name);
    }
    let state = loaded.optimizer.unwrap();
    assert_eq!(state.step, 1);
    let orig_m = &opt.state().moments["w"].m;
    let back_m = &state.moments["w"].m;
    assert_eq!(
        orig_m.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        back_m.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn checkpoint_version_mismatch_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.ckpt.json");
    std::fs::write(&path, r#"{"version": 99, "params": {}}"#).unwrap();
    let err = load_checkpoint(&path).unwrap_err();
    assert!(err.to_string().contains("version 99"), "got: {err}");
}
