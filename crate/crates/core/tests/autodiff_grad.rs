//! Finite-difference verification of every tape primitive, plus the
//! worked softmax/activation examples and the error paths.

use hetsolver_core::autodiff::{AdError, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FD_H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::new(rows, cols, data).unwrap()
}

fn central_diff(
    f: &dyn Fn(&[Tensor<f64>]) -> f64,
    leaves: &[Tensor<f64>],
) -> Vec<Tensor<f64>> {
    leaves
        .iter()
        .enumerate()
        .map(|(li, t)| {
            let mut g = Tensor::zeros(t.rows(), t.cols());
            for j in 0..t.len() {
                let mut plus = leaves.to_vec();
                plus[li].data_mut()[j] += FD_H;
                let mut minus = leaves.to_vec();
                minus[li].data_mut()[j] -= FD_H;
                g.data_mut()[j] = (f(&plus) - f(&minus)) / (2.0 * FD_H);
            }
            g
        })
        .collect()
}

/// Record `build` on a fresh tape, then compare reverse-mode gradients of
/// every leaf against central finite differences.
fn check_grads(name: &str, leaves: &[Tensor<f64>], build: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.grad(loss).unwrap();
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.get(v, &tape)).collect();

    let eval = |ls: &[Tensor<f64>]| {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ls.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).item()
    };
    let numeric = central_diff(&eval, leaves);
    for (li, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for j in 0..a.len() {
            let (av, nv) = (a.data()[j], n.data()[j]);
            let scale = av.abs().max(nv.abs()).max(1e-6);
            assert!(
                (av - nv).abs() / scale < REL_TOL,
                "{name}: leaf {li} elem {j}: reverse {av} vs fd {nv}"
            );
        }
    }
}

#[test]
fn gradcheck_matmul_add_sub_mul() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random_tensor(&mut rng, 3, 4, -1.0, 1.0);
    let b = random_tensor(&mut rng, 4, 2, -1.0, 1.0);
    check_grads("matmul", &[a.clone(), b], |t, v| {
        let p = t.matmul(v[0], v[1]).unwrap();
        t.sum_all(p).unwrap()
    });
    let c = random_tensor(&mut rng, 3, 4, -1.0, 1.0);
    check_grads("add/sub/mul", &[a, c], |t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let d = t.sub(s, v[1]).unwrap();
        let m = t.mul(d, v[0]).unwrap();
        t.sum_all(m).unwrap()
    });
}

#[test]
fn gradcheck_scalar_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // Keep away from the relu/leaky kink at 0 so the FD stencil is valid.
    let pos = random_tensor(&mut rng, 2, 3, 0.2, 1.5);
    let neg = random_tensor(&mut rng, 2, 3, -1.5, -0.2);
    check_grads("exp/log", &[pos.clone()], |t, v| {
        let e = t.exp(v[0]).unwrap();
        let l = t.log(e).unwrap();
        let l2 = t.log(v[0]).unwrap();
        let s = t.add(l, l2).unwrap();
        t.sum_all(s).unwrap()
    });
    check_grads("sigmoid/tanh", &[pos.clone()], |t, v| {
        let s = t.sigmoid(v[0]).unwrap();
        let h = t.tanh(s).unwrap();
        t.sum_all(h).unwrap()
    });
    check_grads("relu+", &[pos.clone()], |t, v| {
        let r = t.relu(v[0]).unwrap();
        t.sum_all(r).unwrap()
    });
    check_grads("leaky-", &[neg], |t, v| {
        let r = t.leaky_relu(v[0], 0.2).unwrap();
        t.sum_all(r).unwrap()
    });
    check_grads("affine/scale", &[pos], |t, v| {
        let a = t.affine(v[0], -2.0, 0.7).unwrap();
        let s = t.scale(a, 3.0).unwrap();
        t.mean_all(s).unwrap()
    });
}

#[test]
fn gradcheck_layer_norm_and_broadcast() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random_tensor(&mut rng, 3, 5, -2.0, 2.0);
    let gain = random_tensor(&mut rng, 1, 5, 0.5, 1.5);
    let bias = random_tensor(&mut rng, 1, 5, -0.5, 0.5);
    check_grads("layer_norm", &[x, gain, bias], |t, v| {
        let ln = t.layer_norm(v[0], 1e-5).unwrap();
        let g = t.mul_bcast_row(ln, v[1]).unwrap();
        let b = t.add_bcast_row(g, v[2]).unwrap();
        let sq = t.mul(b, b).unwrap();
        t.sum_all(sq).unwrap()
    });
}

#[test]
fn gradcheck_gather_scatter_and_row_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random_tensor(&mut rng, 4, 3, -1.0, 1.0);
    let col = random_tensor(&mut rng, 6, 1, 0.1, 2.0);
    let s = random_tensor(&mut rng, 1, 1, 0.5, 1.5);
    let idx = [2usize, 0, 3, 3, 1, 2];
    check_grads("gather/scatter", &[x.clone()], |t, v| {
        let g = t.gather_rows(v[0], &idx).unwrap();
        let back = t.scatter_rows(g, &idx, 4).unwrap();
        let sq = t.mul(back, back).unwrap();
        t.sum_all(sq).unwrap()
    });
    check_grads("mul_row_scalar/scale_by_scalar", &[x, col, s], |t, v| {
        let g = t.gather_rows(v[0], &idx).unwrap();
        let w = t.mul_row_scalar(g, v[1]).unwrap();
        let z = t.scale_by_scalar(w, v[2]).unwrap();
        t.sum_all(z).unwrap()
    });
}

#[test]
fn gradcheck_segment_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let e = random_tensor(&mut rng, 6, 1, -1.5, 1.5);
    let vals = random_tensor(&mut rng, 6, 2, -1.0, 1.0);
    let seg = [0usize, 0, 0, 1, 1, 2];
    let dst = [0usize, 0, 0, 2, 2, 3];
    check_grads("segment_softmax+sum", &[e, vals], |t, v| {
        let alpha = t.segment_softmax(v[0], &seg).unwrap();
        let weighted = t.mul_row_scalar(v[1], alpha).unwrap();
        let agg = t.segment_sum(weighted, &dst, 4).unwrap();
        let sq = t.mul(agg, agg).unwrap();
        t.sum_all(sq).unwrap()
    });
}

#[test]
fn gradcheck_concat_and_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_tensor(&mut rng, 3, 2, -1.0, 1.0);
    let b = random_tensor(&mut rng, 3, 3, -1.0, 1.0);
    let c = random_tensor(&mut rng, 2, 2, -1.0, 1.0);
    let target = random_tensor(&mut rng, 3, 5, -1.0, 1.0);
    check_grads("concat_cols+mse", &[a.clone(), b, target], |t, v| {
        let cat = t.concat_cols(&[v[0], v[1]]).unwrap();
        t.mse_reduce(cat, v[2], Some(&[true, false, true])).unwrap()
    });
    let target_r = random_tensor(&mut rng, 5, 2, -1.0, 1.0);
    check_grads("concat_rows+mse", &[a, c, target_r], |t, v| {
        let cat = t.concat_rows(&[v[0], v[1]]).unwrap();
        t.mse_reduce(cat, v[2], None).unwrap()
    });
}

#[test]
fn segment_softmax_worked_examples() {
    let mut tape = Tape::<f64>::new();
    let e = tape.leaf(Tensor::new(2, 1, vec![2.0, -0.4]).unwrap());
    let alpha = tape.segment_softmax(e, &[0, 0]).unwrap();
    let out = tape.value(alpha);
    // e^2 / (e^2 + e^-0.4) and its complement.
    assert!((out.get(0, 0) - 0.9168).abs() < 1e-4);
    assert!((out.get(1, 0) - 0.0832).abs() < 1e-4);

    let single = tape.leaf(Tensor::scalar(-7.3));
    let alpha = tape.segment_softmax(single, &[0]).unwrap();
    assert_eq!(tape.value(alpha).item(), 1.0);
}

#[test]
fn segment_softmax_sums_to_one_per_segment() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let n = rng.gen_range(1..12);
        let mut seg = Vec::with_capacity(n);
        let mut cur = 0usize;
        for i in 0..n {
            if i > 0 && rng.gen_bool(0.4) {
                cur += 1;
            }
            seg.push(cur);
        }
        let e = random_tensor(&mut rng, n, 1, -30.0, 30.0);
        let mut tape = Tape::new();
        let v = tape.leaf(e);
        let alpha = tape.segment_softmax(v, &seg).unwrap();
        let out = tape.value(alpha);
        let mut sums = vec![0.0; cur + 1];
        for i in 0..n {
            let a = out.get(i, 0);
            assert!(a >= 0.0);
            sums[seg[i]] += a;
        }
        for s in sums {
            assert!((s - 1.0).abs() < 1e-12, "segment sum {s}");
        }
    }
}

#[test]
fn leaky_relu_example() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::scalar(-2.0));
    let y = tape.leaky_relu(x, 0.2).unwrap();
    assert_eq!(tape.value(y).item(), -0.4);
}

#[test]
fn square_derivative_example() {
    let mut tape = Tape::<f64>::new();
    let x = tape.leaf(Tensor::scalar(3.0));
    let y = tape.mul(x, x).unwrap();
    let grads = tape.grad(y).unwrap();
    assert_eq!(grads.get(x, &tape).item(), 6.0);
}

#[test]
fn mse_of_identical_tensors_has_zero_gradient() {
    let t = Tensor::new(2, 3, vec![0.5, -1.0, 2.0, 0.0, 3.0, -0.2]).unwrap();
    let mut tape = Tape::new();
    let pred = tape.leaf(t.clone());
    let target = tape.leaf(t);
    let loss = tape.mse_reduce(pred, target, None).unwrap();
    assert_eq!(tape.value(loss).item(), 0.0);
    let grads = tape.grad(loss).unwrap();
    assert!(grads.get(pred, &tape).data().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_norm_rows_are_standardized() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_tensor(&mut rng, 4, 9, -5.0, 5.0);
    let mut tape = Tape::new();
    let v = tape.leaf(x);
    let ln = tape.layer_norm(v, 1e-5).unwrap();
    let out = tape.value(ln);
    for r in 0..out.rows() {
        let row: Vec<f64> = (0..out.cols()).map(|c| out.get(r, c)).collect();
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / row.len() as f64;
        assert!(mean.abs() < 1e-10, "row mean {mean}");
        assert!((var - 1.0).abs() < 1e-4, "row var {var}");
    }
}

#[test]
fn error_paths() {
    let mut tape = Tape::<f64>::new();
    let a = tape.leaf(Tensor::zeros(2, 3));
    let b = tape.leaf(Tensor::zeros(3, 3));
    assert!(matches!(
        tape.add(a, b),
        Err(AdError::ShapeMismatch { .. })
    ));
    // log of a non-positive value is non-finite and must be rejected.
    let neg = tape.leaf(Tensor::scalar(-1.0));
    assert!(matches!(tape.log(neg), Err(AdError::NonFinite { .. })));
    // grad of a non-scalar is refused.
    assert!(matches!(tape.grad(a), Err(AdError::NotScalar { .. })));
    // segment ids must be contiguous from zero.
    let e = tape.leaf(Tensor::new(2, 1, vec![1.0, 2.0]).unwrap());
    assert!(matches!(
        tape.segment_softmax(e, &[1, 2]),
        Err(AdError::BadSegments)
    ));
}
