use geomeld_autograd::{finite_diff_check, Graph, Result, Tensor, TensorError, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn matmul_identity() {
    let a = random(&[2, 2], 1);
    let mut g = Graph::new();
    let i = g.constant(Tensor::eye(2));
    let av = g.constant(a.clone());
    let out = g.matmul(i, av).unwrap();
    assert_eq!(g.value(out), &a);
}

#[test]
fn matmul_hand_case() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
    let b = g.constant(Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap());
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).shape(), &[2, 1]);
    assert_eq!(g.value(c).data(), &[2.0, 4.0]);
}

#[test]
fn matmul_zero_annihilates() {
    let mut g = Graph::new();
    let z = g.constant(Tensor::zeros([3, 4]));
    let b = g.constant(random(&[4, 2], 2));
    let c = g.matmul(z, b).unwrap();
    assert_eq!(g.value(c), &Tensor::zeros([3, 2]));
}

#[test]
fn matmul_mismatch_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros([2, 3]));
    let b = g.constant(Tensor::zeros([4, 2]));
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(err, TensorError::Shape { op: "matmul", left: vec![2, 3], right: vec![4, 2] });
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
}

#[test]
fn cross_entropy_uniform_is_ln_c() {
    let mut g = Graph::new();
    let l = g.constant(Tensor::full([3, 4], 0.7));
    let ce = g.softmax_cross_entropy(l, &[0, 2, 3]).unwrap();
    assert!((g.scalar(ce) - 4f64.ln()).abs() < 1e-12);
}

#[test]
fn cross_entropy_saturated_is_zero() {
    let mut g = Graph::new();
    let l = g.constant(Tensor::new([1, 3], vec![0.0, 1e6, 0.0]).unwrap());
    let ce = g.softmax_cross_entropy(l, &[1]).unwrap();
    assert!(g.scalar(ce).abs() < 1e-12);
}

#[test]
fn cross_entropy_closed_form() {
    let mut g = Graph::new();
    let l = g.param(Tensor::new([1, 2], vec![1.0, 2.0]).unwrap());
    let ce = g.softmax_cross_entropy(l, &[1]).unwrap();
    let e1 = 1f64.exp();
    let e2 = 2f64.exp();
    let expected = -(e2 / (e1 + e2)).ln();
    assert!((g.scalar(ce) - expected).abs() < 1e-14);
    // gradient is softmax - onehot
    g.backward(ce).unwrap();
    let grad = g.grad(l).unwrap();
    assert!((grad.data()[0] - e1 / (e1 + e2)).abs() < 1e-14);
    assert!((grad.data()[1] - (e2 / (e1 + e2) - 1.0)).abs() < 1e-14);
}

#[test]
fn cross_entropy_target_out_of_range() {
    let mut g = Graph::new();
    let l = g.constant(Tensor::zeros([2, 3]));
    let err = g.softmax_cross_entropy(l, &[0, 3]).unwrap_err();
    assert!(matches!(err, TensorError::Index { index: 3, size: 3, .. }));
}

#[test]
fn stop_gradient_blocks_one_path() {
    let w = random(&[5], 3);
    let mut g = Graph::new();
    let wv = g.param(w.clone());
    let s = g.stop_gradient(wv);
    let p = g.mul(s, wv).unwrap();
    let loss = g.sum(p).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(wv).unwrap(), w);
    assert_eq!(g.value(s), &w);

    // the non-stopped path alone, by central differences
    let err = finite_diff_check(
        |g: &mut Graph, x: Var| {
            let fixed = g.constant(w.clone());
            let p = g.mul(fixed, x)?;
            g.sum(p)
        },
        &w,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-8);
}

#[test]
fn stop_gradient_only_graph_has_zero_grads() {
    let x = random(&[4, 3], 4);
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let s = g.stop_gradient(xv);
    let loss = g.sum(s).unwrap();
    assert!(!g.requires_grad(loss));
    let visited = g.backward(loss).unwrap();
    assert_eq!(visited, 0);
    let grad = g.grad(xv).unwrap_or_else(|| Tensor::zeros([4, 3]));
    assert!(grad.data().iter().all(|&v| v == 0.0));
}

#[test]
fn finite_diff_sum_of_squares() {
    let x = random(&[3, 4], 5);
    let err = finite_diff_check(
        |g: &mut Graph, x: Var| {
            let sq = g.mul(x, x)?;
            g.sum(sq)
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

#[test]
fn finite_diff_constant_function() {
    let x = random(&[6], 6);
    let err = finite_diff_check(|g: &mut Graph, _x: Var| Ok(g.constant(Tensor::scalar(3.5))), &x, 1e-4).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn finite_diff_l1_off_kinks() {
    let x = random(&[10], 7);
    // target kept at least 0.1 away from every coordinate
    let target = Tensor::new([10], x.data().iter().map(|v| v + if *v > 0.0 { -0.3 } else { 0.25 }).collect()).unwrap();
    let err = finite_diff_check(
        |g: &mut Graph, x: Var| {
            let t = g.constant(target.clone());
            g.l1(x, t)
        },
        &x,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn finite_diff_rejects_nondeterministic_function() {
    use std::cell::Cell;
    let calls = Cell::new(0.0);
    let x = random(&[2], 8);
    let err = finite_diff_check(
        |g: &mut Graph, x: Var| {
            calls.set(calls.get() + 1.0);
            let s = g.sum(x)?;
            g.scale(s, calls.get())
        },
        &x,
        1e-4,
    )
    .unwrap_err();
    assert!(matches!(err, TensorError::Oracle(_)));
}

#[test]
fn l1_subgradient_at_zero_is_zero() {
    let mut g = Graph::new();
    let a = g.param(Tensor::new([3], vec![1.0, 2.0, 3.0]).unwrap());
    let b = g.constant(Tensor::new([3], vec![1.0, 0.0, 5.0]).unwrap());
    let l = g.l1(a, b).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(a).unwrap().data(), &[0.0, 1.0 / 3.0, -1.0 / 3.0]);
}

fn check(f: impl Fn(&mut Graph, Var) -> Result<Var>, x: &Tensor) {
    let err = finite_diff_check(f, x, 1e-5).unwrap();
    assert!(err < 1e-5, "max relative error {err}");
}

#[test]
fn grad_linear_and_gelu() {
    let w = random(&[4, 3], 10);
    let b = random(&[3], 11);
    let x = random(&[5, 4], 12);
    check(
        |g, x| {
            let wv = g.constant(w.clone());
            let bv = g.constant(b.clone());
            let h = g.linear(x, wv, Some(bv))?;
            let a = g.gelu(h)?;
            let sq = g.mul(a, a)?;
            g.sum(sq)
        },
        &x,
    );
    check(
        |g, wv| {
            let xv = g.constant(x.clone());
            let bv = g.param(b.clone());
            let h = g.linear(xv, wv, Some(bv))?;
            let a = g.gelu(h)?;
            let sq = g.mul(a, a)?;
            g.sum(sq)
        },
        &w,
    );
    check(
        |g, bv| {
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            let h = g.linear(xv, wv, Some(bv))?;
            let sq = g.mul(h, h)?;
            g.mean(sq)
        },
        &b,
    );
}

#[test]
fn grad_matmul_and_transpose() {
    let a = random(&[3, 4], 13);
    let b = random(&[4, 2], 14);
    check(
        |g, av| {
            let bv = g.constant(b.clone());
            let c = g.matmul(av, bv)?;
            let t = g.transpose(c)?;
            let sq = g.mul(t, t)?;
            g.sum(sq)
        },
        &a,
    );
    check(
        |g, bv| {
            let av = g.constant(a.clone());
            let c = g.matmul(av, bv)?;
            let sq = g.mul(c, c)?;
            g.sum(sq)
        },
        &b,
    );
}

#[test]
fn grad_layer_norm_all_inputs() {
    let x = random(&[4, 6], 15);
    let gamma = random(&[6], 16);
    let beta = random(&[6], 17);
    let w = random(&[4, 6], 18);
    let body = |g: &mut Graph, x: Var, gm: Var, bt: Var| -> Result<Var> {
        let y = g.layer_norm(x, gm, bt)?;
        let wv = g.constant(w.clone());
        let p = g.mul(y, wv)?;
        let q = g.mul(p, y)?;
        g.sum(q)
    };
    check(
        |g, x| {
            let gm = g.constant(gamma.clone());
            let bt = g.constant(beta.clone());
            body(g, x, gm, bt)
        },
        &x,
    );
    check(
        |g, gm| {
            let xv = g.constant(x.clone());
            let bt = g.constant(beta.clone());
            body(g, xv, gm, bt)
        },
        &gamma,
    );
    check(
        |g, bt| {
            let xv = g.constant(x.clone());
            let gm = g.constant(gamma.clone());
            body(g, xv, gm, bt)
        },
        &beta,
    );
}

#[test]
fn grad_attention_with_key_mask() {
    let (batch, seq, width, heads) = (2, 5, 6, 2);
    let q = random(&[batch * seq, width], 19);
    let k = random(&[batch * seq, width], 20);
    let v = random(&[batch * seq, width], 21);
    let w = random(&[batch * seq, width], 22);
    let mask = vec![true, true, false, true, false, true, true, true, true, false];
    let body = |g: &mut Graph, q: Var, k: Var, v: Var| -> Result<Var> {
        let o = g.attention(q, k, v, batch, seq, heads, Some(&mask))?;
        let wv = g.constant(w.clone());
        let p = g.mul(o, wv)?;
        g.sum(p)
    };
    check(
        |g, x| {
            let kv = g.constant(k.clone());
            let vv = g.constant(v.clone());
            body(g, x, kv, vv)
        },
        &q,
    );
    check(
        |g, x| {
            let qv = g.constant(q.clone());
            let vv = g.constant(v.clone());
            body(g, qv, x, vv)
        },
        &k,
    );
    check(
        |g, x| {
            let qv = g.constant(q.clone());
            let kv = g.constant(k.clone());
            body(g, qv, kv, x)
        },
        &v,
    );
}

#[test]
fn masked_keys_get_zero_weight() {
    let (seq, width) = (4, 2);
    let q = random(&[seq, width], 23);
    let k = random(&[seq, width], 24);
    let mut v = random(&[seq, width], 25);
    let mask = [true, true, false, true];
    let mut g = Graph::new();
    let (qv, kv, vv) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let o1 = g.attention(qv, kv, vv, 1, seq, 1, Some(&mask)).unwrap();
    // changing a masked value row leaves the output untouched
    v.data_mut()[2 * width] = 99.0;
    let vv2 = g.constant(v);
    let o2 = g.attention(qv, kv, vv2, 1, seq, 1, Some(&mask)).unwrap();
    assert_eq!(g.value(o1), g.value(o2));
}

#[test]
fn grad_gather_concat_group_mean_normalize() {
    let x = random(&[4, 3], 26);
    let extra = random(&[1, 3], 27);
    let w = random(&[3, 3], 28);
    check(
        |g, x| {
            let e = g.param(extra.clone());
            let c = g.concat_rows(x, e)?;
            let s = g.gather_rows(c, &[0, 4, 4, 2, 1, 3])?;
            let m = g.group_mean(s, 2, Some(&[true, true, false, true, true, true]))?;
            let n = g.l2_normalize(m)?;
            let wv = g.constant(w.clone());
            let p = g.mul(n, wv)?;
            g.sum(p)
        },
        &x,
    );
}

#[test]
fn grad_softmax_and_cross_entropy() {
    let x = random(&[3, 5], 29);
    let w = random(&[3, 5], 30);
    check(
        |g, x| {
            let s = g.softmax(x)?;
            let wv = g.constant(w.clone());
            let p = g.mul(s, wv)?;
            g.sum(p)
        },
        &x,
    );
    check(|g, x| g.softmax_cross_entropy(x, &[4, 0, 2]), &x);
}

#[test]
fn grad_add_row_sub_scale() {
    let x = random(&[3, 4], 31);
    let r = random(&[4], 32);
    check(
        |g, rv| {
            let xv = g.constant(x.clone());
            let a = g.add_row(xv, rv)?;
            let b = g.sub(a, xv)?;
            let c = g.scale(b, -2.5)?;
            let d = g.mul(c, a)?;
            g.sum(d)
        },
        &r,
    );
}

#[test]
fn backward_visits_each_node_once() {
    let mut g = Graph::new();
    let x = g.param(random(&[2, 2], 33));
    let y = g.mul(x, x).unwrap();
    let z = g.add(y, x).unwrap();
    let s = g.sum(z).unwrap();
    let visited = g.backward(s).unwrap();
    assert_eq!(visited, 4);
    let rec = g.records();
    assert_eq!(rec.len(), 4);
    assert_eq!(rec[1].kind, "mul");
    assert_eq!(rec[2].inputs, vec![y, x]);
}

#[test]
fn non_finite_forward_is_reported() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::full([2], 1e308));
    let err = g.scale(x, 10.0).unwrap_err();
    assert_eq!(err, TensorError::NonFinite { op: "scale" });
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new([3, 4], vals).unwrap());
        let s = g.softmax(x).unwrap();
        for r in 0..3 {
            let total: f64 = g.value(s).row(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn forward_is_bit_reproducible(seed in 0u64..1000) {
        let run = || {
            let mut g = Graph::new();
            let x = g.constant(random(&[6, 8], seed));
            let w = g.constant(random(&[8, 8], seed + 1));
            let h = g.linear(x, w, None).unwrap();
            let a = g.attention(h, h, h, 2, 3, 2, None).unwrap();
            g.value(a).clone()
        };
        let (a, b) = (run(), run());
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
