//! Finite-difference checks of tape gradients.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::math;
use crate::nn::{
    bilstm_encode, lstm_step, DropoutSpec, Graph, LstmParams, ParamGrads, ParamStore, Tensor, Var,
};

/// Central-difference step for single operations.
pub const FD_STEP: f64 = 1e-4;
/// Step for whole models. Larger steps move thousands of conv activations
/// across ReLU and max-pool kinks at once.
pub const FUSED_FD_STEP: f64 = 1e-6;

/// Uniform magnitudes in `[0.05, 1)` with random sign.
pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    // keep away from ReLU / max-pool kinks
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.05..1.0);
            if rng.gen::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Central finite differences over every coordinate of every stored
/// parameter; returns the largest relative error against the tape.
pub fn finite_difference_error(
    store: &ParamStore,
    build: &dyn Fn(&mut Graph, &ParamStore) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let loss = build(&mut g, store)?;
    let grads = g.backward(loss)?;
    let mut acc = ParamGrads::zeros_like(store);
    g.accumulate_param_grads(&grads, &mut acc);
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut g = Graph::new();
        let l = build(&mut g, s)?;
        Ok(g.value(l).item())
    };
    compare_with_finite_differences(store, &acc, &eval, FD_STEP, &Coordinates::All)
}

/// Which parameter coordinates to perturb.
#[derive(Clone, Debug)]
pub enum Coordinates {
    All,
    /// Up to `per_tensor` coordinates of every tensor, chosen with `seed`.
    Sample { per_tensor: usize, seed: u64 },
}

/// Largest relative error between `analytic` and central differences of
/// `eval` with step `h`. Relative error is
/// `|a − n| / max(|a|, |n|, 1e−6)`.
pub fn compare_with_finite_differences(
    store: &ParamStore,
    analytic: &ParamGrads,
    eval: &dyn Fn(&ParamStore) -> Result<f64>,
    h: f64,
    coords: &Coordinates,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(match coords {
        Coordinates::Sample { seed, .. } => *seed,
        Coordinates::All => 0,
    });
    let mut worst: f64 = 0.0;
    let mut probe = store.clone();
    for id in store.ids() {
        let n = store.get(id).len();
        let picks: Vec<usize> = match coords {
            Coordinates::All => (0..n).collect(),
            Coordinates::Sample { per_tensor, .. } if *per_tensor >= n => (0..n).collect(),
            Coordinates::Sample { per_tensor, .. } => {
                rand::seq::index::sample(&mut rng, n, *per_tensor).into_vec()
            }
        };
        for i in picks {
            let orig = store.get(id).data()[i];
            probe.get_mut(id).data_mut()[i] = orig + h;
            let up = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig - h;
            let down = eval(&probe)?;
            probe.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.get(id)[i];
            let denom = math::abs(numeric).max(math::abs(a)).max(1e-6);
            worst = worst.max(math::abs(numeric - a) / denom);
        }
    }
    Ok(worst)
}

/// Reduces an arbitrary output to a scalar with fixed random weights so
/// every output element contributes a distinct gradient.
pub fn project(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.value(y).len();
    let w = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let z = g.mul_const(y, w)?;
    Ok(g.sum(z))
}

pub type Builder = fn(&mut Graph, &ParamStore) -> Result<Var>;

/// A small scalar-valued computation exercising one group of operations.
pub struct OpCase {
    pub name: &'static str,
    pub store: ParamStore,
    pub build: Builder,
}

/// One case per differentiable operation (and the recurrent layers), with
/// random parameters kept away from ReLU and max-pool kinks.
pub fn op_cases() -> Vec<OpCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut cases: Vec<OpCase> = Vec::new();
    let single = |rng: &mut ChaCha8Rng, shapes: &[&[usize]]| {
        let mut s = ParamStore::new();
        for (i, sh) in shapes.iter().enumerate() {
            s.add(&alloc::format!("p{i}"), random_tensor(rng, sh));
        }
        s
    };
    fn p(g: &mut Graph, s: &ParamStore, i: usize) -> Var {
        g.param(s, s.ids().nth(i).unwrap())
    }
    cases.push(case("add", single(&mut rng, &[&[4], &[4]]), |g, s| {
        let (a, b) = (p(g, s, 0), p(g, s, 1));
        let y = g.add(a, b)?;
        project(g, y, 1)
    }));
    cases.push(case("sub", single(&mut rng, &[&[4], &[4]]), |g, s| {
        let (a, b) = (p(g, s, 0), p(g, s, 1));
        let y = g.sub(a, b)?;
        project(g, y, 2)
    }));
    cases.push(case("mul", single(&mut rng, &[&[5], &[5]]), |g, s| {
        let (a, b) = (p(g, s, 0), p(g, s, 1));
        let y = g.mul(a, b)?;
        project(g, y, 3)
    }));
    cases.push(case("scale_shift_mulconst", single(&mut rng, &[&[3]]), |g, s| {
        let a = p(g, s, 0);
        let y = g.scale(a, -1.7);
        let y = g.shift(y, 0.4);
        let y = g.mul_const(y, vec![0.5, 2.0, -1.0])?;
        project(g, y, 4)
    }));
    cases.push(case("relu", single(&mut rng, &[&[6]]), |g, s| {
        let a = p(g, s, 0);
        let y = g.relu(a);
        project(g, y, 5)
    }));
    cases.push(case("sigmoid", single(&mut rng, &[&[6]]), |g, s| {
        let a = p(g, s, 0);
        let y = g.sigmoid(a);
        project(g, y, 6)
    }));
    cases.push(case("tanh", single(&mut rng, &[&[6]]), |g, s| {
        let a = p(g, s, 0);
        let y = g.tanh(a);
        project(g, y, 7)
    }));
    cases.push(case("dense", single(&mut rng, &[&[3, 4], &[4], &[3]]), |g, s| {
        let (w, x, b) = (p(g, s, 0), p(g, s, 1), p(g, s, 2));
        let y = g.dense(x, w, b)?;
        project(g, y, 8)
    }));
    cases.push(case("conv2d_pad", single(&mut rng, &[&[2, 5, 5], &[3, 2, 3, 3], &[3]]), |g, s| {
        let (x, k, b) = (p(g, s, 0), p(g, s, 1), p(g, s, 2));
        let y = g.conv2d(x, k, Some(b), 1, 1)?;
        project(g, y, 9)
    }));
    cases.push(case("conv2d_stride", single(&mut rng, &[&[2, 5, 5], &[2, 2, 3, 3]]), |g, s| {
        let (x, k) = (p(g, s, 0), p(g, s, 1));
        let y = g.conv2d(x, k, None, 2, 0)?;
        project(g, y, 10)
    }));
    cases.push(case("max_pool", single(&mut rng, &[&[2, 4, 4]]), |g, s| {
        let x = p(g, s, 0);
        let y = g.max_pool(x, 2, 2)?;
        project(g, y, 11)
    }));
    cases.push(case("global_avg_pool", single(&mut rng, &[&[3, 2, 3]]), |g, s| {
        let x = p(g, s, 0);
        let y = g.global_avg_pool(x)?;
        project(g, y, 12)
    }));
    cases.push(case("concat_slice_row", single(&mut rng, &[&[3], &[4, 2]]), |g, s| {
        let (a, t) = (p(g, s, 0), p(g, s, 1));
        let r = g.row(t, 2)?;
        let c = g.concat(&[a, r])?;
        let y = g.slice(c, 1, 3)?;
        project(g, y, 13)
    }));
    cases.push(case("sum_mean_reshape", single(&mut rng, &[&[2, 3]]), |g, s| {
        let a = p(g, s, 0);
        let r = g.reshape(a, vec![6])?;
        let m = g.mean(r);
        let q = g.mul(r, r)?;
        let t = g.sum(q);
        let y = g.concat(&[m, t])?;
        project(g, y, 14)
    }));
    cases.push(case("bce", single(&mut rng, &[&[4]]), |g, s| {
        let a = p(g, s, 0);
        let sc = g.sigmoid(a);
        g.bce(sc, &[1.0, 0.0, 0.0, 1.0])
    }));
    cases.push(case("mse", single(&mut rng, &[&[4]]), |g, s| {
        let a = p(g, s, 0);
        g.mse(a, &[0.1, 0.2, -0.3, 0.9])
    }));
    cases.push(case("channel_weighted_sum", single(&mut rng, &[&[3, 2, 2]]), |g, s| {
        let a = p(g, s, 0);
        let y = g.channel_weighted_sum(a, &[0.3, -1.2, 0.7])?;
        project(g, y, 15)
    }));
    cases.push(case("min_max_normalize", single(&mut rng, &[&[3, 3]]), |g, s| {
        let a = p(g, s, 0);
        let y = g.min_max_normalize(a);
        project(g, y, 16)
    }));
    cases.push(case("lstm_step", {
        let mut st = single(&mut rng, &[&[3], &[2], &[2]]);
        let mut r = ChaCha8Rng::seed_from_u64(5);
        LstmParams::init(&mut st, "l", 3, 2, &mut r);
        st
    }, |g, s| {
        let ids: Vec<_> = s.ids().collect();
        let (x, h, c) = (g.param(s, ids[0]), g.param(s, ids[1]), g.param(s, ids[2]));
        let lp = LstmParams {
            input_weights: ids[3],
            recurrent_weights: ids[4],
            biases: ids[5],
            input_size: 3,
            hidden_size: 2,
        };
        let (h1, c1) = lstm_step(g, s, x, h, c, &lp)?;
        let y = g.concat(&[h1, c1])?;
        project(g, y, 17)
    }));
    cases.push(case("bilstm", {
        let mut st = single(&mut rng, &[&[2], &[2], &[2]]);
        let mut r = ChaCha8Rng::seed_from_u64(6);
        LstmParams::init(&mut st, "f", 2, 2, &mut r);
        LstmParams::init(&mut st, "b", 2, 2, &mut r);
        st
    }, |g, s| {
        let ids: Vec<_> = s.ids().collect();
        let seq: Vec<Var> = ids[..3].iter().map(|&i| g.param(s, i)).collect();
        let mk = |o: usize| LstmParams {
            input_weights: ids[o],
            recurrent_weights: ids[o + 1],
            biases: ids[o + 2],
            input_size: 2,
            hidden_size: 2,
        };
        let dropout = DropoutSpec::new(0.3, 0.2, true, 8)?;
        let y = bilstm_encode(g, s, &seq, &mk(3), &mk(6), &dropout, 42)?;
        project(g, y, 18)
    }));
    cases
}

fn case(name: &'static str, store: ParamStore, build: Builder) -> OpCase {
    OpCase { name, store, build }
}

