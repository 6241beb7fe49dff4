use cxr_core::nn::gradcheck::{finite_difference_error, op_cases};
use cxr_core::nn::{adam_step, AdamState, Graph, ParamGrads, ParamStore, Tensor};

#[test]
fn every_op_case_matches_finite_differences() {
    let cases = op_cases();
    assert!(cases.len() >= 10);
    for case in cases {
        let err = finite_difference_error(&case.store, &case.build).unwrap();
        assert!(err < 1e-4, "{}: relative error {err}", case.name);
    }
}

#[test]
fn chain_rule_by_hand() {
    // y = sum(tanh(w * x)), dy/dw = x (1 - tanh²(w x))
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::vector(vec![0.3, -1.2]));
    let mut g = Graph::new();
    let wv = g.param(&store, w);
    let x = g.constant(Tensor::vector(vec![2.0, 0.5]));
    let wx = g.mul(wv, x).unwrap();
    let t = g.tanh(wx);
    let y = g.sum(t);
    let grads = g.backward(y).unwrap();
    let mut acc = ParamGrads::zeros_like(&store);
    g.accumulate_param_grads(&grads, &mut acc);
    for (i, (wi, xi)) in [(0.3f64, 2.0f64), (-1.2, 0.5)].into_iter().enumerate() {
        let want = xi * (1.0 - (wi * xi).tanh().powi(2));
        assert!((acc.get(w)[i] - want).abs() < 1e-14);
    }
}

#[test]
fn conv_rejects_non_integral_output() {
    let mut g = Graph::new();
    let x = g.input(Tensor::zeros(&[1, 8, 8]));
    let k = g.input(Tensor::zeros(&[2, 1, 3, 3]));
    assert!(g.conv2d(x, k, None, 2, 0).is_err());
    let y = g.conv2d(x, k, None, 1, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[2, 8, 8]);
}

#[test]
fn adam_moves_against_the_gradient() {
    let mut store = ParamStore::new();
    let w = store.add("w", Tensor::vector(vec![1.0, -1.0]));
    let mut state = AdamState::new(&store);
    for _ in 0..200 {
        let mut g = Graph::new();
        let v = g.param(&store, w);
        let sq = g.mul(v, v).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        let mut acc = ParamGrads::zeros_like(&store);
        g.accumulate_param_grads(&grads, &mut acc);
        adam_step(&mut store, &acc, &mut state, 0.05).unwrap();
    }
    assert!(store.get(w).data().iter().all(|v| v.abs() < 0.05));
}
