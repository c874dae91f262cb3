mod common;

use common::*;
use ctncf::kernels;
use ctncf::{ParamStore, Tape, Tensor};
use rand::Rng;

const INSTANCES: u64 = 100;

fn naive_matmul(a: &Tensor, b: &Tensor) -> Vec<f64> {
    let (m, k) = a.dims2().unwrap();
    let n = b.dims2().unwrap().1;
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.at(i, p) * b.at(p, j);
            }
            out[i * n + j] = s;
        }
    }
    out
}

fn naive_conv(x: &[f64], filters: &Tensor, bias: &[f64]) -> Vec<Vec<f64>> {
    let (f, k) = filters.dims2().unwrap();
    (0..f)
        .map(|fi| {
            (0..=x.len() - k)
                .map(|t| bias[fi] + (0..k).map(|j| filters.at(fi, j) * x[t + j]).sum::<f64>())
                .collect()
        })
        .collect()
}

#[test]
fn matmul_matches_triple_loop() {
    let mut r = rng(1);
    for _ in 0..INSTANCES {
        let a = rand_tensor(&mut r, &[3, 4]);
        let b = rand_tensor(&mut r, &[4, 2]);
        let c = kernels::matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[3, 2]);
        for (x, y) in c.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((x - y).abs() <= 1e-12);
        }
    }
}

#[test]
fn outer_matches_double_loop() {
    let mut r = rng(2);
    for _ in 0..INSTANCES {
        let p = rand_tensor(&mut r, &[4]);
        let q = rand_tensor(&mut r, &[4]);
        let o = kernels::outer(&p, &q).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(o.at(i, j), p.data()[i] * q.data()[j]);
            }
        }
    }
}

#[test]
fn conv_matches_sliding_window_and_has_valid_length() {
    let mut r = rng(3);
    for _ in 0..INSTANCES {
        let x = rand_tensor(&mut r, &[16]);
        let filters = rand_tensor(&mut r, &[8, 3]);
        let bias = rand_tensor(&mut r, &[8]);
        let out = kernels::conv1d_valid(&x, &filters, &bias).unwrap();
        assert_eq!(out.shape(), &[8, 14]);
        let oracle = naive_conv(x.data(), &filters, bias.data());
        for f in 0..8 {
            for t in 0..14 {
                assert!((out.at(f, t) - oracle[f][t]).abs() <= 1e-12);
            }
        }
    }
    for l in 1..10 {
        for k in 1..=l {
            let out = kernels::conv1d_valid(&Tensor::zeros(&[l]), &Tensor::zeros(&[2, k]), &Tensor::zeros(&[2])).unwrap();
            assert_eq!(out.shape(), &[2, l - k + 1]);
        }
    }
}

#[test]
fn softmax_matches_direct_formula_and_normalizes() {
    let mut r = rng(4);
    for _ in 0..INSTANCES {
        let x = rand_tensor(&mut r, &[4, 4]);
        let y = kernels::softmax_rows(&x);
        for i in 0..4 {
            let row = x.row(i);
            let max = row.iter().cloned().fold(f64::MIN, f64::max);
            let denom: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let mut total = 0.0;
            for j in 0..4 {
                let expect = (row[j] - max).exp() / denom;
                let got = y.at(i, j);
                assert!((got - expect).abs() <= 1e-12);
                assert!((0.0..=1.0).contains(&got));
                total += got;
            }
            assert!((total - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn layer_norm_moments() {
    let mut r = rng(5);
    for _ in 0..INSTANCES {
        let x = rand_tensor(&mut r, &[8]);
        let gain = Tensor::vector(vec![1.0; 8]);
        let shift = rand_tensor(&mut r, &[8]);
        let out = kernels::layer_norm(&x, &gain, &shift).unwrap();
        let z: Vec<f64> = out.data().iter().zip(shift.data()).map(|(o, s)| o - s).collect();
        let mean = z.iter().sum::<f64>() / 8.0;
        let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-6);
        // ε inside the root shrinks the variance by var/(var+ε).
        assert!((var - 1.0).abs() < 1e-3, "var {var}");
        let xv = {
            let m = x.data().iter().sum::<f64>() / 8.0;
            x.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / 8.0
        };
        assert!((var - xv / (xv + kernels::LAYER_NORM_EPS)).abs() < 1e-6);
    }
}

#[test]
fn gradcheck_matmul() {
    let mut r = rng(10);
    for _ in 0..INSTANCES {
        let a = rand_tensor(&mut r, &[3, 4]);
        let b = rand_tensor(&mut r, &[4, 2]);
        let w = rand_tensor(&mut r, &[3, 2]);
        let err = check_leaf_grads(&[a, b], |t, v| {
            let c = t.matmul(v[0], v[1]).unwrap();
            weighted_sum(t, c, &w)
        });
        assert!(err <= FD_TOL, "rel err {err}");
    }
}

#[test]
fn gradcheck_outer_and_transpose() {
    let mut r = rng(11);
    for _ in 0..INSTANCES {
        let p = rand_tensor(&mut r, &[4]);
        let q = rand_tensor(&mut r, &[4]);
        let w = rand_tensor(&mut r, &[4, 4]);
        let err = check_leaf_grads(&[p, q], |t, v| {
            let o = t.outer(v[0], v[1]).unwrap();
            let ot = t.transpose(o).unwrap();
            weighted_sum(t, ot, &w)
        });
        assert!(err <= FD_TOL, "rel err {err}");
    }
}

#[test]
fn gradcheck_conv1d() {
    let mut r = rng(12);
    for _ in 0..INSTANCES {
        let x = rand_tensor(&mut r, &[10]);
        let f = rand_tensor(&mut r, &[4, 3]);
        let b = rand_tensor(&mut r, &[4]);
        let w = rand_tensor(&mut r, &[4, 8]);
        let err = check_leaf_grads(&[x, f, b], |t, v| {
            let c = t.conv1d_valid(v[0], v[1], v[2]).unwrap();
            weighted_sum(t, c, &w)
        });
        assert!(err <= FD_TOL, "rel err {err}");
    }
}

#[test]
fn gradcheck_max_pool() {
    let mut r = rng(13);
    for _ in 0..INSTANCES {
        let x = rand_tensor(&mut r, &[5, 6]);
        let w = rand_tensor(&mut r, &[5]);
        let err = check_leaf_grads(&[x], |t, v| {
            let m = t.global_max_pool(v[0]).unwrap();
            weighted_sum(t, m, &w)
        });
        assert!(err <= FD_TOL, "rel err {err}");
    }
}

#[test]
fn max_pool_gradient_is_one_hot_per_row() {
    let mut r = rng(14);
    for _ in 0..INSTANCES {
        let x = rand_tensor(&mut r, &[6, 7]);
        let store = ParamStore::new();
        let mut tape = Tape::new(&store);
        let xv = tape.leaf(x.clone());
        let m = tape.global_max_pool(xv).unwrap();
        let loss = tape.sum(m);
        tape.backward(loss).unwrap();
        let g = tape.grad(xv).unwrap();
        for f in 0..6 {
            let row = &g[f * 7..(f + 1) * 7];
            assert_eq!(row.iter().filter(|&&v| v != 0.0).count(), 1);
            let hot = row.iter().position(|&v| v != 0.0).unwrap();
            let xr = x.row(f);
            assert!(xr.iter().all(|&v| v <= xr[hot]));
        }
    }
}

#[test]
fn gradcheck_softmax_rows() {
    let mut r = rng(15);
    for _ in 0..INSTANCES {
        let x = rand_tensor(&mut r, &[3, 4]);
        let w = rand_tensor(&mut r, &[3, 4]);
        let err = check_leaf_grads(&[x], |t, v| {
            let s = t.softmax_rows(v[0]);
            weighted_sum(t, s, &w)
        });
        assert!(err <= FD_TOL, "rel err {err}");
    }
}

#[test]
fn gradcheck_layer_norm() {
    let mut r = rng(16);
    for _ in 0..INSTANCES {
        let x = rand_tensor(&mut r, &[2, 6]);
        let g = rand_tensor(&mut r, &[6]);
        let s = rand_tensor(&mut r, &[6]);
        let w = rand_tensor(&mut r, &[2, 6]);
        let err = check_leaf_grads(&[x, g, s], |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2]).unwrap();
            weighted_sum(t, y, &w)
        });
        assert!(err <= FD_TOL, "rel err {err}");
    }
}

#[test]
fn gradcheck_elementwise_and_structural_ops() {
    let mut r = rng(17);
    for _ in 0..INSTANCES {
        let a = rand_tensor(&mut r, &[3, 4]);
        let b = rand_tensor(&mut r, &[3, 4]);
        let bias = rand_tensor(&mut r, &[4]);
        let w = rand_tensor(&mut r, &[4]);
        let label = if r.random_bool(0.5) { 1.0 } else { 0.0 };
        let err = check_leaf_grads(&[a, b, bias], |t, v| {
            let prod = t.mul(v[0], v[1]).unwrap();
            let s = t.add(prod, v[0]).unwrap();
            let s = t.add_row_bias(s, v[2]).unwrap();
            let left = t.slice_cols(s, 0, 2).unwrap();
            let right = t.slice_cols(s, 2, 4).unwrap();
            let right = t.relu(right);
            let cat = t.concat_cols(&[right, left]).unwrap();
            let cat = t.scale(cat, 0.7);
            let flat = t.reshape(cat, &[12]).unwrap();
            let back = t.reshape(flat, &[3, 4]).unwrap();
            let m = t.mean_rows(back).unwrap();
            let rows = t.stack_rows(&[m, v[2]]).unwrap();
            let pooled = t.mean_rows(rows).unwrap();
            let z = weighted_sum(t, pooled, &w);
            let p = t.sigmoid(z);
            let l1 = t.bce(p, label);
            let l2 = t.bce(p, 1.0 - label);
            let l = t.mean_of(&[l1, l2, l1]).unwrap();
            t.scale(l, 1.0)
        });
        assert!(err <= FD_TOL, "rel err {err}");
    }
}

#[test]
fn ops_are_deterministic() {
    let mut r = rng(18);
    let x = rand_tensor(&mut r, &[16]);
    let f = rand_tensor(&mut r, &[8, 3]);
    let b = rand_tensor(&mut r, &[8]);
    let run = || {
        let c = kernels::conv1d_valid(&x, &f, &b).unwrap();
        let s = kernels::softmax_rows(&c);
        let m = kernels::matmul(&s, &kernels::transpose(&s).unwrap()).unwrap();
        m.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn finite_inputs_give_finite_gradients() {
    let mut r = rng(19);
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let x = tape.leaf(Tensor::new(vec![2, 3], (0..6).map(|i| 300.0 * i as f64 - 700.0).collect()).unwrap());
    let s = tape.softmax_rows(x);
    let g = tape.leaf(rand_tensor(&mut r, &[3]));
    let sh = tape.leaf(rand_tensor(&mut r, &[3]));
    let n = tape.layer_norm(s, g, sh).unwrap();
    let total = tape.sum(n);
    let p = tape.sigmoid(total);
    let loss = tape.bce(p, 1.0);
    tape.backward(loss).unwrap();
    assert!(tape.grad(x).unwrap().iter().all(|v| v.is_finite()));
}
