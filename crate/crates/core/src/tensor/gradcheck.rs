//! Finite-difference validation of reverse-mode gradients.

use super::{Element, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Floor for the relative-error denominator so near-zero gradients
/// compare on an absolute scale.
const REL_FLOOR: f64 = 1e-6;

/// Compare the reverse-mode gradient of a scalar function against
/// central finite differences, elementwise. Returns the maximum
/// relative error over all elements of `x`.
pub fn gradient_check<T, F>(f: F, x: &Tensor<T>, eps: T) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    gradient_check_multi(|tape, vars| f(tape, vars[0]), std::slice::from_ref(x), eps)
}

/// `gradient_check` over several independent input tensors at once.
pub fn gradient_check_multi<T, F>(f: F, xs: &[Tensor<T>], eps: T) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
        let y = f(&mut tape, &vars)?;
        if tape.value(y).len() != 1 {
            return Err(Error::Argument(format!(
                "gradient_check requires a scalar function, got {:?}",
                tape.shape(y)
            )));
        }
        let grads = tape.backward(y)?;
        vars.iter()
            .map(|&v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(tape.shape(v))))
            .collect::<Vec<_>>()
    };

    let eval = |inputs: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        let y = f(&mut tape, &vars)?;
        Ok(tape.value(y).data()[0].as_f64())
    };

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor<T>> = xs.to_vec();
    for (ti, x) in xs.iter().enumerate() {
        for i in 0..x.len() {
            let orig = x.data()[i];
            work[ti].data_mut()[i] = orig + eps;
            let fp = eval(&work)?;
            work[ti].data_mut()[i] = orig - eps;
            let fm = eval(&work)?;
            work[ti].data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * eps.as_f64());
            let ad = analytic[ti].data()[i].as_f64();
            let denom = ad.abs().max(fd.abs()).max(REL_FLOOR);
            worst = worst.max((ad - fd).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_squares_gradient_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::<f64>::randn(&[4, 3], &mut rng);
        let err = gradient_check(
            |tape, v| {
                let sq = tape.mul(v, v)?;
                tape.sum(sq)
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(err < 1e-6, "rel err {err}");
    }

    #[test]
    fn rejects_non_scalar_function() {
        let x = Tensor::<f64>::zeros(&[2, 2]);
        let res = gradient_check(|_tape, v| Ok(v), &x, 1e-4);
        assert!(res.is_err());
    }

    #[test]
    fn primitive_ops_pass_fd_check() {
        // Random small shapes, 5 seeds, as the engine contract requires.
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let eps = 1e-4;

            // conv1d + mse
            let x = Tensor::<f64>::randn(&[2, 3, 8], &mut rng);
            let w = Tensor::<f64>::randn(&[4, 3, 3], &mut rng);
            let b = Tensor::<f64>::randn(&[4], &mut rng);
            let tgt = Tensor::<f64>::randn(&[2, 4, 8], &mut rng);
            let err = gradient_check_multi(
                |tape, vs| {
                    let t = tape.constant(tgt.clone());
                    let y = tape.conv1d(vs[0], vs[1], vs[2], 1, 1)?;
                    tape.mse(y, t)
                },
                &[x, w, b],
                eps,
            )
            .unwrap();
            assert!(err < 1e-4, "conv1d rel err {err} at seed {seed}");

            // attention then mean on a [2,3,4] input
            let q = Tensor::<f64>::randn(&[2, 3, 4], &mut rng);
            let k = Tensor::<f64>::randn(&[2, 3, 4], &mut rng);
            let v = Tensor::<f64>::randn(&[2, 3, 4], &mut rng);
            let err = gradient_check_multi(
                |tape, vs| {
                    let o = tape.attention(vs[0], vs[1], vs[2])?;
                    tape.mean(o)
                },
                &[q, k, v],
                eps,
            )
            .unwrap();
            assert!(err < 1e-4, "attention rel err {err} at seed {seed}");

            // layer_norm + gelu + softmax chain
            let x = Tensor::<f64>::randn(&[4, 6], &mut rng);
            let gm = Tensor::<f64>::rand_uniform(&[6], 0.5, 1.5, &mut rng);
            let bt = Tensor::<f64>::randn(&[6], &mut rng);
            let err = gradient_check_multi(
                |tape, vs| {
                    let h = tape.layer_norm(vs[0], vs[1], vs[2], 1e-5)?;
                    let h = tape.gelu(h);
                    let h = tape.softmax(h);
                    tape.mean(h)
                },
                &[x, gm, bt],
                eps,
            )
            .unwrap();
            assert!(err < 1e-4, "layer_norm chain rel err {err} at seed {seed}");

            // matmul/add_bias/silu/cross-entropy
            let x = Tensor::<f64>::randn(&[5, 4], &mut rng);
            let w = Tensor::<f64>::randn(&[4, 3], &mut rng);
            let b = Tensor::<f64>::randn(&[3], &mut rng);
            let err = gradient_check_multi(
                |tape, vs| {
                    let h = tape.matmul(vs[0], vs[1])?;
                    let h = tape.add_bias(h, vs[2])?;
                    let h = tape.silu(h);
                    tape.cross_entropy_rows(h, &[0, 2, 1, 0, 2])
                },
                &[x, w, b],
                eps,
            )
            .unwrap();
            assert!(err < 1e-4, "cross-entropy chain rel err {err} at seed {seed}");

            // reductions, reshape, slicing, upsample, l2 normalize
            let x = Tensor::<f64>::randn(&[3, 8], &mut rng);
            let err = gradient_check(
                |tape, v| {
                    let u = tape.reshape(v, &[3, 2, 4])?;
                    let u = tape.upsample2(u)?;
                    let u = tape.reshape(u, &[6, 8])?;
                    let u = tape.slice_last(u, 2, 5)?;
                    let u = tape.l2_normalize_rows(u, 1e-9)?;
                    let s = tape.sum_axis_last(u)?;
                    let s2 = tape_reshape2(tape, s)?;
                    let m = tape.mean_axis0(s2)?;
                    tape.sum(m)
                },
                &x,
                eps,
            )
            .unwrap();
            assert!(err < 1e-4, "shape-op chain rel err {err} at seed {seed}");

            // mul_bias and stack_rows
            let x = Tensor::<f64>::randn(&[3, 4], &mut rng);
            let b = Tensor::<f64>::randn(&[4], &mut rng);
            let y = Tensor::<f64>::randn(&[4], &mut rng);
            let err = gradient_check_multi(
                |tape, vs| {
                    let h = tape.mul_bias(vs[0], vs[1])?;
                    let s = tape.stack_rows(&[vs[1], vs[2]])?;
                    let st = tape.swap_last2(s)?;
                    let h2 = tape.matmul(h, st)?;
                    tape.mean(h2)
                },
                &[x, b, y],
                eps,
            )
            .unwrap();
            assert!(err < 1e-4, "mul_bias/stack rel err {err} at seed {seed}");

            // exp/ln/rsqrt/scalar-var ops
            let x = Tensor::<f64>::rand_uniform(&[6], 0.5, 2.0, &mut rng);
            let s = Tensor::<f64>::rand_uniform(&[1], 0.5, 2.0, &mut rng);
            let err = gradient_check_multi(
                |tape, vs| {
                    let e = tape.exp(vs[0]);
                    let l = tape.ln(e);
                    let r = tape.rsqrt(l);
                    let m = tape.mul_scalar_var(r, vs[1])?;
                    tape.mean(m)
                },
                &[x, s],
                eps,
            )
            .unwrap();
            assert!(err < 1e-4, "pointwise chain rel err {err} at seed {seed}");
        }
    }

    // reshape a rank-1 tensor to [n, 1] so mean_axis0 applies
    fn tape_reshape2(tape: &mut Tape<f64>, v: Var) -> crate::error::Result<Var> {
        let n = tape.value(v).len();
        tape.reshape(v, &[n, 1])
    }
}
