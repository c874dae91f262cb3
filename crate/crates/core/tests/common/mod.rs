#![allow(dead_code)]

use ctncf::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const KINK_STEP: f64 = 1e-7;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// |a − n| / max(|a|, |n|, 1e-6).
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Builds the scalar loss `f(inputs)` on a fresh tape, backpropagates, and
/// compares every leaf gradient against central differences. Returns the
/// worst relative error.
pub fn check_leaf_grads<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let store = ctncf::ParamStore::new();
    let mut tape = Tape::new(&store);
    let vars: Vec<Var> = inputs.iter().cloned().map(|t| tape.leaf(t)).collect();
    let loss = f(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(|g| g.to_vec()).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let eval = |ins: &[Tensor]| -> f64 {
        let mut tape = Tape::new(&store);
        let vars: Vec<Var> = ins.iter().cloned().map(|t| tape.leaf(t)).collect();
        let loss = f(&mut tape, &vars);
        tape.scalar(loss)
    };

    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        for j in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k][j], numeric));
        }
    }
    worst
}

/// Weighted sum `Σ out ⊙ w` so every output element carries a distinct
/// gradient.
pub fn weighted_sum(tape: &mut Tape, out: Var, weights: &Tensor) -> Var {
    let w = tape.leaf(weights.reshaped(tape.value(out).shape().to_vec()).unwrap());
    let prod = tape.mul(out, w).unwrap();
    tape.sum(prod)
}

/// Overwrites every parameter with `uniform(-scale, scale)` noise so that
/// zero biases and unit gains do not hide gradient paths.
pub fn randomize_params(store: &mut ctncf::ParamStore, seed: u64, scale: f64) {
    let mut r = rng(seed);
    for p in store.iter_mut() {
        for v in p.tensor.data_mut() {
            *v = r.random_range(-scale..scale);
        }
    }
}

/// Mean BCE of `sigmoid(logit)` over labelled pairs, recorded on `tape`.
pub fn pair_loss(model: &dyn ctncf::Trainable, tape: &mut Tape, pairs: &[(usize, usize, f64)]) -> Var {
    let losses: Vec<Var> = pairs
        .iter()
        .map(|&(u, i, y)| {
            let z = model.logit(tape, u, i).unwrap();
            let s = tape.sigmoid(z);
            tape.bce(s, y)
        })
        .collect();
    tape.mean_of(&losses).unwrap()
}

/// Compares every parameter gradient of the pair loss with central
/// differences at `FD_STEP`. When the two one-sided differences disagree a
/// ReLU kink lies within the step, and the scalar is rechecked with a central
/// difference at `KINK_STEP`. Returns the worst relative error, the number of
/// scalars checked and the number rechecked.
pub fn check_model_grads<M: ctncf::Trainable>(model: &mut M, pairs: &[(usize, usize, f64)]) -> (f64, usize, usize) {
    let analytic = {
        let mut tape = Tape::new(model.params());
        let loss = pair_loss(model, &mut tape, pairs);
        tape.backward(loss).unwrap();
        tape.take_param_grads()
    };
    let ids: Vec<ctncf::ParamId> = model.params().iter().map(|(id, _)| id).collect();
    let mut worst: f64 = 0.0;
    let (mut checked, mut rechecked) = (0, 0);
    for id in ids {
        let n = model.params().get(id).len();
        for j in 0..n {
            let orig = model.params().get(id).data()[j];
            let mut eval = |x: f64| -> f64 {
                model.params_mut().get_mut(id).data_mut()[j] = x;
                let mut tape = Tape::new(model.params());
                let loss = pair_loss(model, &mut tape, pairs);
                tape.scalar(loss)
            };
            let (plus, minus) = (eval(orig + FD_STEP), eval(orig - FD_STEP));
            let mut numeric = (plus - minus) / (2.0 * FD_STEP);
            let a = analytic[id.index()].as_ref().map_or(0.0, |g| g[j]);
            if rel_err(a, numeric) > FD_TOL {
                let centre = eval(orig);
                if rel_err((plus - centre) / FD_STEP, (centre - minus) / FD_STEP) > 1e-2 {
                    numeric = (eval(orig + KINK_STEP) - eval(orig - KINK_STEP)) / (2.0 * KINK_STEP);
                    rechecked += 1;
                }
            }
            model.params_mut().get_mut(id).data_mut()[j] = orig;
            worst = worst.max(rel_err(a, numeric));
            checked += 1;
        }
    }
    (worst, checked, rechecked)
}

/// Random labelled pairs over a `users × items` grid.
pub fn random_pairs(seed: u64, users: usize, items: usize, n: usize) -> Vec<(usize, usize, f64)> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            (
                r.random_range(0..users),
                r.random_range(0..items),
                if r.random_bool(0.5) { 1.0 } else { 0.0 },
            )
        })
        .collect()
}

/// 50 users in 10 taste groups of 5; group `g` likes items `10g..10g+10`.
/// The `k`-th user of a group holds out items `10g+2k` (validation) and
/// `10g+2k+1` (test) and trains on the other eight.
pub fn planted_split() -> ctncf::data::SplitDataset {
    use ctncf::data::{SplitDataset, UserSplit};
    let users = (0..50u32)
        .map(|u| {
            let (g, k) = (u % 10, u / 10);
            let (val, test) = (10 * g + 2 * k, 10 * g + 2 * k + 1);
            let train = (10 * g..10 * g + 10).filter(|&i| i != val && i != test).collect();
            UserSplit::new(train, vec![val], vec![test])
        })
        .collect();
    SplitDataset::from_users(users, 100, 0).unwrap()
}

/// A `::`-separated rating log with taste groups: `users` users, 10 items per
/// group, `per_user` ratings each, mostly from the user's own group.
pub fn movielens_fixture(users: usize, groups: usize, per_user: usize, seed: u64) -> String {
    let mut r = rng(seed);
    let items = 10 * groups;
    let mut out = String::new();
    for u in 0..users {
        let g = u % groups;
        let mut seen = std::collections::HashSet::new();
        let mut t = 0;
        while seen.len() < per_user {
            let i = if r.random_bool(0.8) { 10 * g + r.random_range(0..10) } else { r.random_range(0..items) };
            if seen.insert(i) {
                t += 1;
                out.push_str(&format!("{}::{}::{}::{}\n", u + 1, i + 1, r.random_range(1..=5), 1000 + t));
            }
        }
    }
    out
}
