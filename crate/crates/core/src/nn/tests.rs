use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{finite_difference_error, op_cases, OpCase};
use super::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    libm::fabs(a - b) <= tol
}

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}


#[test]
fn conv_identity_kernel_returns_input() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
    let k = g.constant(t(&[1, 1, 1, 1], &[1.0]));
    let y = g.conv2d(x, k, None, 1, 0).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn conv_zero_kernel_gives_zeros() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 3, 3], &[1.5; 18]));
    let k = g.constant(Tensor::zeros(&[3, 2, 3, 3]));
    let y = g.conv2d(x, k, None, 1, 1).unwrap();
    assert_eq!(g.value(y).shape(), &[3, 3, 3]);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv_matches_direct_sum() {
    let input = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
    // direct-sum oracle
    let mut expected = [0.0; 4];
    for oy in 0..2 {
        for ox in 0..2 {
            let mut s = 0.0;
            for ky in 0..2 {
                for kx in 0..2 {
                    s += 0.25 * input[(oy + ky) * 3 + ox + kx];
                }
            }
            expected[oy * 2 + ox] = s;
        }
    }
    assert_eq!(expected, [3.0, 4.0, 6.0, 7.0]);
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 3, 3], &input));
    let k = g.constant(t(&[1, 1, 2, 2], &[0.25; 4]));
    let y = g.conv2d(x, k, None, 1, 0).unwrap();
    assert_eq!(g.value(y).shape(), &[1, 2, 2]);
    for (a, b) in g.value(y).data().iter().zip(expected) {
        assert!(close(*a, b, 1e-12));
    }
}

#[test]
fn conv_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 4, 4]));
    let k = g.constant(Tensor::zeros(&[1, 1, 3, 3]));
    assert!(g.conv2d(x, k, None, 2, 1).is_err(), "non-integral extent");
    let k2 = g.constant(Tensor::zeros(&[1, 2, 3, 3]));
    assert!(g.conv2d(x, k2, None, 1, 1).is_err(), "channel mismatch");
}

#[test]
fn pooling_examples() {
    let mut g = Graph::new();
    let c = g.constant(Tensor::full(&[3, 4, 4], 0.7));
    let p = g.pool(c, Pool::GlobalAvg).unwrap();
    assert!(g.value(p).data().iter().all(|&v| close(v, 0.7, 1e-15)));

    let x = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let m = g.pool(x, Pool::Max { window: 2, stride: 2 }).unwrap();
    assert_eq!(g.value(m).data(), &[4.0]);

    let y = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 6.0]));
    let a = g.global_avg_pool(y).unwrap();
    assert_eq!(g.value(a).data(), &[(1.0 + 2.0 + 3.0 + 6.0) / 4.0]);
    assert_eq!(g.value(a).item(), 3.0);

    assert!(g.pool(x, Pool::Max { window: 3, stride: 1 }).is_err());
}

#[test]
fn dense_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2], &[1.0, 2.0]));
    let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let zero_b = g.constant(Tensor::zeros(&[2]));
    let y = g.dense(x, eye, zero_b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0]);

    let zero_w = g.constant(Tensor::zeros(&[2, 2]));
    let b = g.constant(t(&[2], &[0.3, -0.4]));
    let y = g.dense(x, zero_w, b).unwrap();
    assert_eq!(g.value(y).data(), &[0.3, -0.4]);

    let w = g.constant(t(&[2, 2], &[1.0, 1.0, 2.0, 0.0]));
    let b = g.constant(t(&[2], &[0.5, 0.0]));
    let y = g.dense(x, w, b).unwrap();
    // [1*1 + 1*2 + 0.5, 2*1 + 0*2 + 0]
    assert_eq!(g.value(y).data(), &[3.5, 2.0]);

    let bad = g.constant(Tensor::zeros(&[2, 3]));
    assert!(g.dense(x, bad, b).is_err());
}

fn lstm_store(input: usize, hidden: usize, seed: u64) -> (ParamStore, LstmParams) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = LstmParams::init(&mut store, "lstm", input, hidden, &mut rng);
    (store, p)
}

fn zero_all(store: &mut ParamStore) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
}

#[test]
fn lstm_zero_params_give_zero_state() {
    let (mut store, p) = lstm_store(3, 2, 1);
    zero_all(&mut store);
    let mut g = Graph::new();
    let x = g.constant(t(&[3], &[0.4, -1.0, 2.0]));
    let h = g.constant(Tensor::zeros(&[2]));
    let c = g.constant(Tensor::zeros(&[2]));
    let (h1, c1) = lstm_step(&mut g, &store, x, h, c, &p).unwrap();
    assert_eq!(g.value(h1).data(), &[0.0, 0.0]);
    assert_eq!(g.value(c1).data(), &[0.0, 0.0]);
}

#[test]
fn lstm_saturated_forget_gate_keeps_cell() {
    let (mut store, p) = lstm_store(2, 2, 2);
    zero_all(&mut store);
    // forget bias 50, input gate bias -50: c_t = c_prev
    let b = store.get_mut(p.biases).data_mut();
    b[0..2].iter_mut().for_each(|v| *v = -50.0);
    b[2..4].iter_mut().for_each(|v| *v = 50.0);
    let mut g = Graph::new();
    let x = g.constant(t(&[2], &[3.0, -3.0]));
    let h = g.constant(t(&[2], &[0.1, 0.2]));
    let c = g.constant(t(&[2], &[0.8, -1.3]));
    let (_, c1) = lstm_step(&mut g, &store, x, h, c, &p).unwrap();
    assert!(close(g.value(c1).data()[0], 0.8, 1e-12));
    assert!(close(g.value(c1).data()[1], -1.3, 1e-12));
}

#[test]
fn lstm_matches_scalar_gate_equations() {
    let (store, p) = lstm_store(1, 1, 9);
    let wx = store.get(p.input_weights).data().to_vec();
    let wh = store.get(p.recurrent_weights).data().to_vec();
    let b = store.get(p.biases).data().to_vec();
    let (x, h0, c0) = (0.7, -0.3, 0.45);
    // scalar oracle
    let sig = |z: f64| 1.0 / (1.0 + libm::exp(-z));
    let z: Vec<f64> = (0..4).map(|k| wx[k] * x + wh[k] * h0 + b[k]).collect();
    let (i, f, gc, o) = (sig(z[0]), sig(z[1]), libm::tanh(z[2]), sig(z[3]));
    let c1 = f * c0 + i * gc;
    let h1 = o * libm::tanh(c1);

    let mut g = Graph::new();
    let xv = g.constant(t(&[1], &[x]));
    let hv = g.constant(t(&[1], &[h0]));
    let cv = g.constant(t(&[1], &[c0]));
    let (hn, cn) = lstm_step(&mut g, &store, xv, hv, cv, &p).unwrap();
    assert!(close(g.value(hn).item(), h1, 1e-14));
    assert!(close(g.value(cn).item(), c1, 1e-14));
}

#[test]
fn bilstm_examples() {
    let (mut store, p) = lstm_store(2, 3, 4);
    let mut g = Graph::new();
    let seq: Vec<Var> = [[0.5, -0.2], [0.1, 0.9]]
        .iter()
        .map(|v| g.constant(t(&[2], v)))
        .collect();
    let off = DropoutSpec::disabled();

    // shared params, length-1 sequence: halves equal
    let one = bilstm_encode(&mut g, &store, &seq[..1], &p, &p, &off, 0).unwrap();
    let d = g.value(one).data().to_vec();
    assert_eq!(d.len(), 6);
    assert_eq!(d[..3], d[3..]);

    // length-2 vs manual unrolling
    let (store_b, pb) = {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pb = LstmParams::init(&mut store, "bwd", 2, 3, &mut rng);
        (store.clone(), pb)
    };
    let enc = bilstm_encode(&mut g, &store_b, &seq, &p, &pb, &off, 0).unwrap();
    let z = g.constant(Tensor::zeros(&[3]));
    let (h1, c1) = lstm_step(&mut g, &store_b, seq[0], z, z, &p).unwrap();
    let (h2, _) = lstm_step(&mut g, &store_b, seq[1], h1, c1, &p).unwrap();
    let (k1, d1) = lstm_step(&mut g, &store_b, seq[1], z, z, &pb).unwrap();
    let (k2, _) = lstm_step(&mut g, &store_b, seq[0], k1, d1, &pb).unwrap();
    let mut manual = g.value(h2).data().to_vec();
    manual.extend_from_slice(g.value(k2).data());
    assert_eq!(g.value(enc).data(), manual.as_slice());

    // reversed sequence changes the encoding
    let rev = [seq[1], seq[0]];
    let enc_rev = bilstm_encode(&mut g, &store_b, &rev, &p, &pb, &off, 0).unwrap();
    assert_ne!(g.value(enc_rev).data(), g.value(enc).data());

    // all-zero parameters
    zero_all(&mut store);
    // a graph keeps the parameter values it first saw, so start a new one
    let mut g = Graph::new();
    let seq: Vec<Var> = [[0.5, -0.2], [0.1, 0.9]]
        .iter()
        .map(|v| g.constant(t(&[2], v)))
        .collect();
    let zero = bilstm_encode(&mut g, &store, &seq, &p, &p, &off, 0).unwrap();
    assert!(g.value(zero).data().iter().all(|&v| v == 0.0));

    assert!(bilstm_encode(&mut g, &store, &[], &p, &p, &off, 0).is_err());
}

#[test]
fn bce_examples() {
    assert!(bce_value(&[1.0, 0.0], &[1.0, 0.0]).unwrap() <= 1e-6);
    assert!(close(bce_value(&[0.5], &[1.0]).unwrap(), core::f64::consts::LN_2, 1e-12));
    assert!(close(bce_value(&[0.5], &[0.0]).unwrap(), core::f64::consts::LN_2, 1e-12));
    let expected = (-libm::log(0.9) - libm::log(0.8)) / 2.0;
    let v = bce_value(&[0.9, 0.2], &[1.0, 0.0]).unwrap();
    assert!(close(v, expected, 1e-15));
    assert!(close(v, 0.164252, 1e-6));
    assert!(bce_value(&[0.3], &[0.5]).is_err());
    assert!(bce_value(&[0.3, 0.2], &[1.0]).is_err());
}

#[test]
fn backward_analytic_cases() {
    let mut g = Graph::new();
    let x = g.input(t(&[3], &[1.0, -2.0, 0.5]));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[1.0, 1.0, 1.0]);

    let sq = g.mul(x, x).unwrap();
    let s2 = g.sum(sq);
    let grads = g.backward(s2).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[2.0, -4.0, 1.0]);

    assert!(g.backward(sq).is_err(), "non-scalar loss");
}

#[test]
fn grad_of_intermediate_activation() {
    let mut g = Graph::new();
    let x = g.input(t(&[2], &[1.0, 2.0]));
    let a = g.scale(x, 3.0);
    let b = g.mul(a, a).unwrap();
    let s = g.sum(b);
    let ga = g.grad_of(s, a).unwrap();
    assert_eq!(ga.data(), &[6.0, 12.0]);
    assert!(g.grad_of(a, s).is_err());
}

#[test]
fn min_max_normalize_constant_is_zero() {
    let mut g = Graph::new();
    let x = g.input(Tensor::full(&[2, 2], 0.3));
    let y = g.min_max_normalize(x);
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).is_none_or(|gx| gx.iter().all(|&v| v == 0.0)));
}

#[test]
fn every_op_matches_finite_differences() {
    for OpCase { name, store, build } in op_cases() {
        let err = finite_difference_error(&store, &build).unwrap();
        assert!(err < 1e-4, "{name}: max relative error {err}");
    }
}

#[test]
fn forward_is_deterministic() {
    for OpCase { name, store, build } in op_cases() {
        let mut a = Graph::new();
        let mut b = Graph::new();
        let la = build(&mut a, &store).unwrap();
        let lb = build(&mut b, &store).unwrap();
        assert_eq!(a.value(la), b.value(lb), "{name}");
    }
}

#[test]
fn shared_param_node_accumulates_all_uses() {
    let mut store = ParamStore::new();
    let id = store.add("w", t(&[2], &[1.0, 3.0]));
    let mut g = Graph::new();
    let a = g.param(&store, id);
    let b = g.param(&store, id);
    assert_eq!(a, b);
    let y = g.mul(a, b).unwrap();
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    let mut acc = ParamGrads::zeros_like(&store);
    g.accumulate_param_grads(&grads, &mut acc);
    assert_eq!(acc.get(id), &[2.0, 6.0]);
}
