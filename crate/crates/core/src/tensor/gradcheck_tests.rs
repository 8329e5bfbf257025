//! Central finite-difference checks for every differentiable primitive,
//! each on three random shapes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Real, Tensor, Unary, Var};
use crate::testutil::check_gradients;
use crate::Result;

const TOL: Real = 1e-3;

/// Contracts `y` against a fixed pseudo-random tensor so every output entry matters.
fn probe(g: &mut Graph, y: Var) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let w = Tensor::from_fn(&shape, |i| ((i as Real) * 0.7 + 0.3).sin());
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn assert_ok(err: Real, what: &str) {
    assert!(err < TOL, "{what}: relative gradient error {err:e}");
}

#[test]
fn elementwise_binary_with_broadcast() {
    let cases: [(&[usize], &[usize]); 3] = [(&[3, 4], &[3, 4]), (&[2, 3, 4], &[4]), (&[4, 1, 3], &[5, 1])];
    for (i, (sa, sb)) in cases.iter().enumerate() {
        let mut r = rng(i as u64);
        let ins = [Tensor::randn(sa, 1.0, &mut r), Tensor::randn(sb, 1.0, &mut r)];
        for which in 0..3 {
            let err = check_gradients(&ins, |g, v| {
                let y = match which {
                    0 => g.add(v[0], v[1])?,
                    1 => g.sub(v[0], v[1])?,
                    _ => g.mul(v[0], v[1])?,
                };
                probe(g, y)
            });
            assert_ok(err, &format!("binary op {which} on {sa:?},{sb:?}"));
        }
    }
}

#[test]
fn shared_input_accumulates_both_paths() {
    // y = x⊙x + 3x feeds x into three consumers.
    for (i, shape) in [[3usize].as_slice(), &[2, 2], &[2, 3, 2]].iter().enumerate() {
        let ins = [Tensor::randn(shape, 1.0, &mut rng(10 + i as u64))];
        let err = check_gradients(&ins, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            let lin = g.scale(v[0], 3.0)?;
            let y = g.add(sq, lin)?;
            probe(g, y)
        });
        assert_ok(err, "fan-out");
    }
}

#[test]
fn scalar_ops_and_reductions() {
    for (i, shape) in [[5usize].as_slice(), &[3, 4], &[2, 3, 4]].iter().enumerate() {
        let ins = [Tensor::randn(shape, 1.0, &mut rng(20 + i as u64))];
        let err = check_gradients(&ins, |g, v| {
            let a = g.scale(v[0], -1.7)?;
            let b = g.add_scalar(a, 0.4)?;
            let sq = g.mul(b, b)?;
            g.mean(sq)
        });
        assert_ok(err, "scale/add_scalar/mean");
        for axis in 0..shape.len() {
            let err = check_gradients(&ins, |g, v| {
                let s = g.sum_axis(v[0], axis)?;
                let s2 = g.mul(s, s)?;
                g.sum(s2)
            });
            assert_ok(err, &format!("sum_axis {axis}"));
            let err = check_gradients(&ins, |g, v| {
                let s = g.mean_axis(v[0], axis)?;
                probe(g, s)
            });
            assert_ok(err, &format!("mean_axis {axis}"));
        }
    }
}

#[test]
fn unary_nonlinearities() {
    let fs = [
        Unary::Gelu,
        Unary::Sigmoid,
        Unary::Relu,
        Unary::SmoothL1 { beta: 1.0 },
        Unary::SmoothL1 { beta: 3.0 },
        Unary::SmoothL1Literal { beta: 1.0 },
    ];
    for (i, shape) in [[6usize].as_slice(), &[3, 5], &[2, 2, 3]].iter().enumerate() {
        let mut t = Tensor::randn(shape, 2.0, &mut rng(30 + i as u64));
        // keep clear of the kinks at 0 and ±beta
        for v in t.data_mut() {
            for kink in [0.0, 1.0, -1.0, 3.0, -3.0] {
                if (*v - kink as Real).abs() < 1e-2 {
                    *v += 0.05;
                }
            }
        }
        for f in fs {
            let err = check_gradients(&[t.clone()], |g, v| {
                let y = g.unary(v[0], f)?;
                probe(g, y)
            });
            assert_ok(err, &format!("{f:?}"));
        }
    }
}

#[test]
fn matmul_and_transpose() {
    for (i, (m, k, n)) in [(2, 3, 4), (5, 4, 3), (1, 6, 2)].into_iter().enumerate() {
        let mut r = rng(40 + i as u64);
        let ins = [Tensor::randn(&[m, k], 1.0, &mut r), Tensor::randn(&[k, n], 1.0, &mut r)];
        let err = check_gradients(&ins, |g, v| {
            let y = g.matmul(v[0], v[1])?;
            let yt = g.transpose(y)?;
            probe(g, yt)
        });
        assert_ok(err, "matmul/transpose");
    }
}

#[test]
fn reshape_concat_narrow() {
    for (i, shape) in [[4usize, 3].as_slice(), &[2, 6], &[2, 2, 3]].iter().enumerate() {
        let mut r = rng(50 + i as u64);
        let ins = [Tensor::randn(shape, 1.0, &mut r), Tensor::randn(shape, 1.0, &mut r)];
        let axis = shape.len() - 1;
        let err = check_gradients(&ins, |g, v| {
            let c = g.concat(&[v[0], v[1], v[0]], axis)?;
            let n = g.narrow(c, axis, 1, shape[axis])?;
            let flat = g.reshape(n, &[shape.iter().product()])?;
            let sq = g.mul(flat, flat)?;
            probe(g, sq)
        });
        assert_ok(err, "concat/narrow/reshape");
        let err = check_gradients(&ins, |g, v| {
            let c = g.concat(&[v[0], v[1]], 0)?;
            probe(g, c)
        });
        assert_ok(err, "concat axis 0");
    }
}

#[test]
fn softmax_along_each_axis() {
    for (i, shape) in [[5usize].as_slice(), &[3, 4], &[2, 3, 4]].iter().enumerate() {
        let ins = [Tensor::randn(shape, 1.5, &mut rng(60 + i as u64))];
        for axis in 0..shape.len() {
            let err = check_gradients(&ins, |g, v| {
                let s = g.softmax(v[0], axis)?;
                probe(g, s)
            });
            assert_ok(err, &format!("softmax axis {axis} on {shape:?}"));
        }
    }
}

#[test]
fn layer_norm_input_gain_bias() {
    let cases: [(&[usize], usize); 3] = [(&[4, 6], 1), (&[3, 5], 0), (&[2, 4, 3], 1)];
    for (i, (shape, axis)) in cases.iter().enumerate() {
        let mut r = rng(70 + i as u64);
        let n = shape[*axis];
        let ins = [
            Tensor::randn(shape, 1.0, &mut r),
            Tensor::randn(&[n], 1.0, &mut r),
            Tensor::randn(&[n], 1.0, &mut r),
        ];
        let err = check_gradients(&ins, |g, v| {
            let y = g.layer_norm(v[0], *axis, v[1], v[2], 1e-5)?;
            probe(g, y)
        });
        assert!(err < 1e-5, "layer_norm {shape:?}: {err:e}");
    }
}

#[test]
fn conv2d_input_kernel_bias() {
    let cases = [
        (&[1usize, 5, 5][..], &[2usize, 1, 3, 3][..], 1usize, 0usize),
        (&[2, 8, 8], &[4, 2, 3, 3], 2, 1),
        (&[3, 6, 7], &[2, 3, 1, 1], 1, 0),
    ];
    for (i, (xs, ws, stride, pad)) in cases.into_iter().enumerate() {
        let mut r = rng(80 + i as u64);
        let ins = [
            Tensor::randn(xs, 1.0, &mut r),
            Tensor::randn(ws, 1.0, &mut r),
            Tensor::randn(&[ws[0]], 1.0, &mut r),
        ];
        let err = check_gradients(&ins, |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            probe(g, y)
        });
        assert_ok(err, &format!("conv2d {xs:?} {ws:?}"));
    }
}

#[test]
fn conv_transpose2d_input_kernel_bias() {
    let cases = [
        (&[2usize, 2, 2][..], &[2usize, 3, 4, 4][..], 4usize),
        (&[1, 3, 2], &[1, 1, 2, 2], 2),
        (&[3, 2, 3], &[3, 2, 3, 3], 2),
    ];
    for (i, (xs, ws, stride)) in cases.into_iter().enumerate() {
        let mut r = rng(90 + i as u64);
        let ins = [
            Tensor::randn(xs, 1.0, &mut r),
            Tensor::randn(ws, 1.0, &mut r),
            Tensor::randn(&[ws[1]], 1.0, &mut r),
        ];
        let err = check_gradients(&ins, |g, v| {
            let y = g.conv_transpose2d(v[0], v[1], Some(v[2]), stride)?;
            probe(g, y)
        });
        assert_ok(err, &format!("conv_transpose2d {xs:?} {ws:?}"));
    }
}

#[test]
fn pooling() {
    for (i, shape) in [[1usize, 4, 4].as_slice(), &[2, 6, 6], &[3, 5, 7]].iter().enumerate() {
        let ins = [Tensor::randn(shape, 1.0, &mut rng(100 + i as u64))];
        let err = check_gradients(&ins, |g, v| {
            let y = g.max_pool2d(v[0], 3, 2, 1)?;
            probe(g, y)
        });
        assert_ok(err, "max_pool2d");
        let err = check_gradients(&ins, |g, v| {
            let y = g.avg_pool2d(v[0], 2, 2)?;
            probe(g, y)
        });
        assert_ok(err, "avg_pool2d");
        let err = check_gradients(&ins, |g, v| {
            let y = g.global_avg_pool(v[0])?;
            probe(g, y)
        });
        assert_ok(err, "global_avg_pool");
    }
}

#[test]
fn softmax_slices_sum_to_one_for_wide_inputs() {
    let mut r = rng(110);
    let t = Tensor::uniform(&[16, 32], -1e3, 1e3, &mut r);
    let mut g = Graph::new();
    let x = g.constant(t);
    let s = g.softmax(x, 1).unwrap();
    for row in g.value(s).data().chunks(32) {
        assert!((row.iter().sum::<Real>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut r = rng(120);
        let x = Tensor::randn(&[2, 8, 8], 1.0, &mut r);
        let w = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut r);
        let mut g = Graph::new();
        let (x, w) = (g.constant(x), g.constant(w));
        let y = g.conv2d(x, w, None, 1, 1).unwrap();
        let y = g.gelu(y).unwrap();
        let y = g.softmax(y, 0).unwrap();
        g.value(y).clone()
    };
    let (a, b) = (run(), run());
    assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}
