use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn rand_t(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.5..1.5)).collect()).unwrap()
}

/// Grad-checks `build` w.r.t. each of `inputs`, reducing the output through a
/// fixed random projection so every output element matters.
fn check_op(inputs: Vec<Tensor>, build: impl Fn(&mut Graph, &[Var]) -> Result<Var, crate::Error>) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        let eval = |x: &Tensor| {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    if i == k {
                        g.input(x.clone())
                    } else {
                        g.constant(t.clone())
                    }
                })
                .collect::<Result<_, _>>()?;
            let out = build(&mut g, &vars)?;
            let n = g.value(out).len();
            let w = Tensor::new(
                g.shape(out).to_vec(),
                (0..n).map(|i| ((i * 7 + 3) as f64 * 0.61).sin()).collect(),
            )?;
            let wv = g.constant(w)?;
            let prod = g.mul(out, wv)?;
            let loss = g.sum_all(prod)?;
            let grads = g.backward(loss)?;
            Ok((g.value(loss).data()[0], grads.wrt(&g, vars[k]).unwrap()))
        };
        worst = worst.max(grad_check(eval, &inputs[k], 1e-5).unwrap());
    }
    worst
}

#[test]
fn every_op_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_t(&mut rng, 3, 4);
    let b = rand_t(&mut rng, 4, 2);
    let c = rand_t(&mut rng, 3, 4);
    let row = rand_t(&mut rng, 1, 4);
    let tol = 1e-4;

    let cases: Vec<(&str, f64)> = vec![
        ("matmul", check_op(vec![a.clone(), b.clone()], |g, v| g.matmul(v[0], v[1]))),
        ("matmul_t", check_op(vec![a.clone(), c.clone()], |g, v| g.matmul_t(v[0], v[1]))),
        ("add", check_op(vec![a.clone(), c.clone()], |g, v| g.add(v[0], v[1]))),
        ("sub", check_op(vec![a.clone(), c.clone()], |g, v| g.sub(v[0], v[1]))),
        ("add_row", check_op(vec![a.clone(), row.clone()], |g, v| g.add_row(v[0], v[1]))),
        ("mul", check_op(vec![a.clone(), c.clone()], |g, v| g.mul(v[0], v[1]))),
        ("scale", check_op(vec![a.clone()], |g, v| g.scale(v[0], -2.5))),
        ("tanh", check_op(vec![a.clone()], |g, v| g.tanh(v[0]))),
        ("relu", check_op(vec![a.clone()], |g, v| g.relu(v[0]))),
        ("sigmoid", check_op(vec![a.clone()], |g, v| g.sigmoid(v[0]))),
        ("softmax", check_op(vec![a.clone()], |g, v| g.softmax_rows(v[0], None))),
        (
            "softmax_masked",
            check_op(vec![a.clone()], |g, v| {
                let mask: Vec<bool> = (0..12).map(|i| i % 3 != 1).collect();
                g.softmax_rows(v[0], Some(&mask))
            }),
        ),
        ("log_softmax", check_op(vec![a.clone()], |g, v| g.log_softmax_rows(v[0]))),
        (
            "layer_norm",
            check_op(vec![a.clone(), row.clone(), rand_t(&mut rng, 1, 4)], |g, v| {
                g.layer_norm(v[0], v[1], v[2])
            }),
        ),
        ("concat_cols", check_op(vec![a.clone(), b.transpose()], |g, v| {
            let t = g.matmul_t(v[1], v[1])?; // 2×2 from the 2×4
            let s = g.slice_cols(v[0], 0, 2)?;
            let s2 = g.gather_rows(s, &[0, 1])?;
            g.concat_cols(&[s2, t])
        })),
        ("slice_cols", check_op(vec![a.clone()], |g, v| g.slice_cols(v[0], 1, 2))),
        ("concat_rows", check_op(vec![a.clone(), c.clone()], |g, v| g.concat_rows(&[v[0], v[1]]))),
        ("gather_rows", check_op(vec![a.clone()], |g, v| g.gather_rows(v[0], &[2, 0, 2, 1]))),
        ("outer_add", check_op(vec![a.clone(), rand_t(&mut rng, 2, 4)], |g, v| g.outer_add(v[0], v[1]))),
        ("sum_all", check_op(vec![a.clone()], |g, v| g.sum_all(v[0]))),
    ];
    for (name, err) in cases {
        assert!(err < tol, "{name}: rel err {err}");
    }
}

#[test]
fn shared_param_accumulates() {
    let mut ps = ParamStore::new();
    let id = ps.insert("w", Tensor::from_rows(&[vec![2.0]]));
    let mut g = Graph::new();
    let w = g.param(&ps, id).unwrap();
    let w2 = g.param(&ps, id).unwrap();
    assert_eq!(w, w2);
    let y = g.mul(w, w2).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.params().get(id).unwrap().data(), &[4.0]);
}

#[test]
fn frozen_param_gets_no_gradient() {
    let mut ps = ParamStore::new();
    let id = ps.insert("w", Tensor::from_rows(&[vec![2.0]]));
    ps.set_trainable(id, false);
    let mut g = Graph::new();
    let w = g.param(&ps, id).unwrap();
    let x = g.input(Tensor::scalar(3.0)).unwrap();
    let y = g.mul(w, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert!(grads.params().get(id).is_none());
    assert_eq!(grads.wrt(&g, x).unwrap().data(), &[2.0]);
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(1e200)).unwrap();
    assert!(matches!(g.mul(x, x), Err(crate::Error::NonFinite("mul"))));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        vals in prop::collection::vec(-30.0f64..30.0, 12),
        shift in prop::collection::vec(-50.0f64..50.0, 3),
    ) {
        let x = Tensor::matrix(3, 4, vals.clone()).unwrap();
        let shifted = Tensor::matrix(
            3, 4,
            vals.iter().enumerate().map(|(i, v)| v + shift[i / 4]).collect(),
        ).unwrap();
        let y = kernels::softmax_rows(&x, None).unwrap();
        let ys = kernels::softmax_rows(&shifted, None).unwrap();
        for r in 0..3 {
            let s: f64 = y.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        prop_assert!(y.max_abs_diff(&ys) < 1e-12);
    }

    #[test]
    fn optimizer_step_deterministic(g in prop::collection::vec(-5.0f64..5.0, 4), lr in 1e-4f64..1e-1) {
        let run = |cfg: OptimizerConfig| {
            let mut ps = ParamStore::new();
            let id = ps.insert("w", Tensor::matrix(1, 4, vec![0.5, -0.5, 1.0, 0.0]).unwrap());
            let mut gr = Grads::new();
            gr.insert(id, Tensor::matrix(1, 4, g.clone()).unwrap());
            let mut st = OptimizerState::new(cfg);
            st.step(&mut ps, &gr).unwrap();
            st.step(&mut ps, &gr).unwrap();
            ps.get(id).clone()
        };
        for cfg in [OptimizerConfig::adam(lr), OptimizerConfig::adafactor_lite(lr, 0.1)] {
            prop_assert_eq!(run(cfg), run(cfg));
        }
    }
}
