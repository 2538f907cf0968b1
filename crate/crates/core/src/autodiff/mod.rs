//! Reverse-mode automatic differentiation over dense `f64` matrices.

mod adam;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{sigmoid, Axis, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Largest relative error between the tape gradient of `f` and central
/// differences, over every entry of every input.
///
/// `f` receives the inputs as trainable leaves and must return a scalar.
pub fn gradient_check<F>(inputs: &[Tensor], eps: f64, f: F) -> crate::Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> crate::Result<Var<'t>>,
{
    let analytic: Vec<Tensor> = {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        let g = tape.backward(loss)?;
        vars.iter().map(|&v| g.get_or_zeros(v)).collect()
    };
    let eval = |xs: &[Tensor]| -> crate::Result<f64> {
        let tape = Tape::new();
        let vars: Vec<Var<'_>> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = f(&tape, &vars)?;
        let v = loss.value().item();
        Ok(v)
    };
    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, ga) in analytic.iter().enumerate() {
        for j in 0..inputs[i].len() {
            let orig = inputs[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = ga.data()[j];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_t(shape: [usize; 2], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::uniform_fan_in(shape, 1, rng)
    }

    #[test]
    fn sigmoid_at_zero() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        assert_eq!(x.sigmoid().value().item(), 0.5);
    }

    #[test]
    fn softmax_uniform_and_sums() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::row(&[2.5, 2.5, 2.5]));
        let y = x.softmax(Axis::Cols);
        for v in y.value().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = tape.constant(rand_t([4, 6], &mut rng).map(|v| v * 30.0));
        let rows = z.softmax(Axis::Cols);
        for r in rows.value().data().chunks(6) {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let cols = z.softmax(Axis::Rows);
        let c = cols.value();
        for j in 0..6 {
            let s: f64 = (0..4).map(|i| c.get(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sum_squares_gradient() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(&[1.0, 2.0]));
        let g = tape.backward(x.sum_squares()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_branch_absent() {
        let tape = Tape::new();
        let w = tape.param(Tensor::row(&[1.0, 2.0]));
        let c = tape.constant(Tensor::row(&[3.0, 4.0]));
        let loss = w.mul(c).unwrap().sum_squares();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(w).is_some());
        assert!(g.get(c).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.param(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(crate::Error::ShapeError(_))));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let tape = Tape::new();
        let a = tape.param(Tensor::zeros([2, 3]));
        let b = tape.param(Tensor::zeros([3, 2]));
        assert!(a.add(b).is_err());
        assert!(a.mul(b).is_err());
        assert!(b.matmul(b).is_err());
        assert!(a.add_bias(b).is_err());
        assert!(a.slice(Axis::Cols, 2, 4).is_err());
        assert!(Var::concat(&[a, b], Axis::Cols).is_err());
    }

    #[test]
    fn identity_matmul_on_tape() {
        let tape = Tape::new();
        let x = Tensor::new([3, 2], vec![1.0, -2.0, 3.0, 0.5, 5.0, 6.0]).unwrap();
        let i = tape.constant(Tensor::identity(3));
        let xv = tape.constant(x.clone());
        assert_eq!(*i.matmul(xv).unwrap().value(), x);
    }

    #[test]
    fn mean_sigmoid_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = rand_t([3, 4], &mut rng);
        let x = rand_t([4, 2], &mut rng);
        let err = gradient_check(&[w, x], 1e-5, |_, v| Ok(v[0].matmul(v[1])?.sigmoid().mean())).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = rand_t([3, 4], &mut rng);
        let b = rand_t([3, 4], &mut rng);
        let bias = rand_t([1, 4], &mut rng);
        let col = rand_t([3, 1], &mut rng);
        let err = gradient_check(&[a, b, bias, col], 1e-5, |_, v| {
            let s = v[0].add(v[1])?.mul(v[0].sub(v[1])?)?;
            let t = s.add_bias(v[2])?.mul_col(v[3])?.tanh().scale(1.7);
            let sm_r = t.softmax(Axis::Cols);
            let sm_c = t.softmax(Axis::Rows);
            let cat = Var::concat(&[sm_r, sm_c, t], Axis::Cols)?;
            let rows = Var::concat(&[cat.slice(Axis::Rows, 0, 2)?, cat.slice(Axis::Rows, 1, 3)?], Axis::Rows)?;
            let piece = rows.slice(Axis::Cols, 2, 9)?;
            let target = piece.tape().constant(Tensor::filled(piece.shape(), 0.1));
            piece.mse(target)?.add(piece.sigmoid().mean())
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f(x) = sum((x*x) + (x*x)) recorded once vs duplicated.
        let x0 = Tensor::row(&[0.3, -1.2, 2.0]);
        let shared = {
            let tape = Tape::new();
            let x = tape.param(x0.clone());
            let y = x.mul(x).unwrap();
            let loss = y.add(y).unwrap().tanh().mean();
            tape.backward(loss).unwrap().get_or_zeros(x)
        };
        let duplicated = {
            let tape = Tape::new();
            let x = tape.param(x0.clone());
            let x2 = tape.param(x0.clone());
            let x3 = tape.param(x0.clone());
            let x4 = tape.param(x0);
            let y1 = x.mul(x2).unwrap();
            let y2 = x3.mul(x4).unwrap();
            let loss = y1.add(y2).unwrap().tanh().mean();
            let g = tape.backward(loss).unwrap();
            let mut total = g.get_or_zeros(x);
            for v in [x2, x3, x4] {
                total.add_assign(&g.get_or_zeros(v));
            }
            total
        };
        for (a, b) in shared.data().iter().zip(duplicated.data()) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
