//! Differentiable tensor engine: values, a recording tape, and optimizers.

mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{
    adam_step, sgd_step, AdamState, Optimizer, OptimizerConfig, OptimizerKind, SgdState,
};
pub use params::Parameters;
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax_rows;
pub(crate) use tensor::argmax;

/// Row-wise softmax of a rank-2 tensor outside any tape.
pub fn softmax(logits: &Tensor) -> crate::Result<Tensor> {
    let mut tape = Tape::new();
    let x = tape.leaf(logits.clone());
    let p = tape.softmax(x)?;
    Ok(tape.value(p).clone())
}

/// Mean negative log-likelihood of `labels` under normalized `posteriors`.
pub fn cross_entropy(posteriors: &Tensor, labels: &[usize]) -> crate::Result<f64> {
    let mut tape = Tape::new();
    let p = tape.leaf(posteriors.clone());
    let l = tape.cross_entropy(p, labels)?;
    Ok(tape.value(l).data()[0])
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::Error;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(shape, data).unwrap()
    }

    /// Relative error between analytic and central-difference gradients of a
    /// scalar function of several inputs, measured as ‖a−n‖ / max(‖a‖, ‖n‖).
    fn grad_check<F>(inputs: &[Tensor], f: F) -> f64
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        tape.backward(out).unwrap();
        let analytic: Vec<f64> = vars
            .iter()
            .flat_map(|&v| tape.grad(v).unwrap().to_vec())
            .collect();

        let eval = |ins: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ins.iter().map(|x| t.leaf(x.clone())).collect();
            let o = f(&mut t, &vs);
            t.value(o).data()[0]
        };
        let h = 1e-5;
        let mut numeric = Vec::new();
        for i in 0..inputs.len() {
            for j in 0..inputs[i].len() {
                let mut plus = inputs.to_vec();
                plus[i].data_mut()[j] += h;
                let mut minus = inputs.to_vec();
                minus[i].data_mut()[j] -= h;
                numeric.push((eval(&plus) - eval(&minus)) / (2.0 * h));
            }
        }
        let diff: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        diff / na.max(nn).max(1e-12)
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut tape = Tape::new();
        let i2 = tape.leaf(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let m = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let out = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

        let a = tape.leaf(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let b = tape.leaf(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let out = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(out).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(vec![2, 3]));
        let b = tape.leaf(Tensor::zeros(vec![2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Dimension(_))));
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_tensor(&mut rng, vec![5, 7]);
        let b = random_tensor(&mut rng, vec![7, 3]);
        let w = random_tensor(&mut rng, vec![15]);
        let err = grad_check(&[a, b], |t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            t.weighted_sum(m, w.data()).unwrap()
        });
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn conv_identity_kernel_and_window_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&mut rng, vec![2, 1, 5, 5]);
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let k = tape.leaf(Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap());
        let y = tape.conv2d(xv, k, 1, 0).unwrap();
        assert_eq!(tape.value(y), &x);

        let ones = tape.leaf(Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap());
        let k3 = tape.leaf(Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]).unwrap());
        let y = tape.conv2d(ones, k3, 1, 0).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 1, 1]);
        assert_eq!(tape.value(y).data(), &[9.0]);
    }

    #[test]
    fn conv_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![1, 2, 4, 4]));
        let k = tape.leaf(Tensor::zeros(vec![1, 3, 3, 3]));
        assert!(matches!(tape.conv2d(x, k, 1, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, vec![2, 3, 8, 8]);
        let k = random_tensor(&mut rng, vec![4, 3, 3, 3]);
        for (stride, pad) in [(1, 0), (2, 1)] {
            let out_hw = (8 + 2 * pad - 3) / stride + 1;
            let w = random_tensor(&mut rng, vec![2 * 4 * out_hw * out_hw]);
            let err = grad_check(&[x.clone(), k.clone()], |t, v| {
                let y = t.conv2d(v[0], v[1], stride, pad).unwrap();
                t.weighted_sum(y, w.data()).unwrap()
            });
            assert!(err < 1e-5, "stride {stride} pad {pad}: rel err {err}");
        }
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap()).unwrap();
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let p = softmax(&Tensor::from_rows(&[vec![1000.0, 0.0]]).unwrap()).unwrap();
        assert!(p.is_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-12 && p.data()[1] < 1e-300);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = softmax(&random_tensor(&mut rng, vec![16, 10])).unwrap();
        for i in 0..16 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(p.row(i).iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn softmax_rejects_nan() {
        let t = Tensor::from_rows(&[vec![f64::NAN, 0.0]]).unwrap();
        assert!(matches!(softmax(&t), Err(Error::Numeric(_))));
    }

    #[test]
    fn cross_entropy_examples() {
        let u4 = Tensor::from_rows(&[vec![0.25; 4]]).unwrap();
        assert!((cross_entropy(&u4, &[3]).unwrap() - 4f64.ln()).abs() < 1e-12);
        let u10 = Tensor::from_rows(&[vec![0.1; 10]]).unwrap();
        assert!((cross_entropy(&u10, &[0]).unwrap() - 2.302585).abs() < 1e-5);
        let perfect = Tensor::from_rows(&[vec![0.0, 1.0, 0.0]]).unwrap();
        assert_eq!(cross_entropy(&perfect, &[1]).unwrap(), 0.0);
        assert!(matches!(cross_entropy(&u4, &[4]), Err(Error::Index(_))));
    }

    #[test]
    fn softmax_and_losses_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let z = random_tensor(&mut rng, vec![4, 5]);
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..5)).collect();
            let w = random_tensor(&mut rng, vec![20]);
            let e1 = grad_check(&[z.clone()], |t, v| {
                let p = t.softmax(v[0]).unwrap();
                t.weighted_sum(p, w.data()).unwrap()
            });
            let e2 = grad_check(&[z.clone()], |t, v| {
                let p = t.softmax(v[0]).unwrap();
                t.cross_entropy(p, &labels).unwrap()
            });
            let e3 = grad_check(&[z.clone()], |t, v| {
                t.softmax_cross_entropy(v[0], &labels).unwrap()
            });
            let target = softmax(&random_tensor(&mut rng, vec![4, 5])).unwrap();
            let e4 = grad_check(&[z.clone()], |t, v| {
                t.soft_cross_entropy(v[0], &target).unwrap()
            });
            for e in [e1, e2, e3, e4] {
                assert!(e < 1e-5, "rel err {e}");
            }
        }
    }

    #[test]
    fn fused_loss_matches_composed_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = random_tensor(&mut rng, vec![6, 4]);
        let labels = [0, 1, 2, 3, 0, 1];
        let mut tape = Tape::new();
        let zv = tape.leaf(z);
        let p = tape.softmax(zv).unwrap();
        let a = tape.cross_entropy(p, &labels).unwrap();
        let b = tape.softmax_cross_entropy(zv, &labels).unwrap();
        assert!((tape.value(a).data()[0] - tape.value(b).data()[0]).abs() < 1e-12);
    }

    #[test]
    fn structural_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_tensor(&mut rng, vec![3, 6]);
        let y = random_tensor(&mut rng, vec![3, 6]);
        let b = random_tensor(&mut rng, vec![6]);
        let w = random_tensor(&mut rng, vec![3 * 8]);
        let err = grad_check(&[x, y, b], |t, v| {
            let s = t.add(v[0], v[1]).unwrap();
            let s = t.add_row_bias(s, v[2]).unwrap();
            let r = t.relu(s);
            let left = t.columns(r, 0, 2).unwrap();
            let right = t.columns(v[0], 2, 6).unwrap();
            let both = t.concat_cols(&[left, right, left]).unwrap();
            let flat = t.reshape(both, vec![24]).unwrap();
            t.weighted_sum(flat, w.data()).unwrap()
        });
        assert!(err < 1e-5, "rel err {err}");

        let x = random_tensor(&mut rng, vec![2, 3, 4, 4]);
        let b = random_tensor(&mut rng, vec![3]);
        let w = random_tensor(&mut rng, vec![96]);
        let err = grad_check(&[x, b], |t, v| {
            let y = t.add_channel_bias(v[0], v[1]).unwrap();
            let f = t.flatten(y).unwrap();
            t.weighted_sum(f, w.data()).unwrap()
        });
        assert!(err < 1e-5, "rel err {err}");
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![1, 1], vec![3.0]).unwrap());
        let y = tape.matmul(x, x).unwrap();
        let s = tape.weighted_sum(y, &[1.0]).unwrap();
        tape.backward(s).unwrap();
        // d(x²)/dx = 2x
        assert_eq!(tape.grad(x).unwrap(), &[6.0]);
        assert_eq!(tape.tensor_with_grad(x).grad().unwrap(), &[6.0]);
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::zeros(vec![2, 2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn logistic_descent_is_monotone() {
        // Two Gaussian blobs; full-batch gradient descent with lr 1e-2.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let c = i % 2;
            let center = if c == 0 { -2.0 } else { 2.0 };
            rows.push(vec![
                center + rng.random_range(-0.5..0.5),
                center + rng.random_range(-0.5..0.5),
            ]);
            labels.push(c);
        }
        let x = Tensor::from_rows(&rows).unwrap();
        let mut params = Parameters::new();
        params.insert("w", Tensor::zeros(vec![2, 2])).unwrap();
        params.insert("b", Tensor::zeros(vec![2])).unwrap();
        let cfg = OptimizerConfig::sgd(1e-2, 0.0, 0.0);
        let mut state = SgdState::default();
        let mut prev = f64::INFINITY;
        for _ in 0..200 {
            let mut tape = Tape::new();
            let xv = tape.leaf(x.clone());
            let w = tape.param(params.get("w").unwrap().clone());
            let b = tape.param(params.get("b").unwrap().clone());
            let z = tape.matmul(xv, w).unwrap();
            let z = tape.add_row_bias(z, b).unwrap();
            let loss = tape.softmax_cross_entropy(z, &labels).unwrap();
            let l = tape.value(loss).data()[0];
            assert!(l <= prev + 1e-15, "loss rose from {prev} to {l}");
            prev = l;
            tape.backward(loss).unwrap();
            let grads = vec![
                tape.grad(w).map(<[f64]>::to_vec),
                tape.grad(b).map(<[f64]>::to_vec),
            ];
            sgd_step(&mut params, &grads, &cfg, &mut state).unwrap();
        }
        assert!(prev < 0.2);
    }
}
