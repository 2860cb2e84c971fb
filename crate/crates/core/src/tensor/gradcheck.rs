//! Central finite-difference verification of tape gradients (64-bit only).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, TensorError, Var};

pub const DEFAULT_STEP: f64 = 1e-6;

/// Worst disagreement found by [`grad_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_input: usize,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheckReport {
    pub fn ensure(&self, threshold: f64) -> Result<(), TensorError> {
        if self.max_rel_error < threshold {
            Ok(())
        } else {
            Err(TensorError::GradCheck {
                input: self.worst_input,
                index: self.worst_index,
                analytic: self.analytic,
                numeric: self.numeric,
                rel_error: self.max_rel_error,
            })
        }
    }
}

/// Compares autodiff gradients of `f` with central differences.
///
/// Non-scalar outputs are contracted with fixed pseudo-random weights so the
/// upstream gradient is not uniform. Per-element error is
/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>]) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    grad_check_with_step(f, inputs, DEFAULT_STEP)
}

pub fn grad_check_with_step<F>(
    f: F,
    inputs: &[Tensor<f64>],
    step: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |values: &[Tensor<f64>], record: bool| -> Result<(Tape<f64>, Vec<Var>, Var), TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values
            .iter()
            .map(|t| if record { tape.param(t) } else { tape.constant(t.clone()) })
            .collect();
        let out = f(&mut tape, &vars)?;
        let n = tape.value(out).len();
        let loss = if n == 1 {
            out
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
            let w = Tensor::from_fn(tape.shape(out).to_vec(), |_| rng.random_range(0.5..1.5));
            let wv = tape.constant(w);
            let p = tape.mul(out, wv)?;
            tape.sum_all(p)?
        };
        Ok((tape, vars, loss))
    };

    let (tape, vars, loss) = eval(inputs, true)?;
    let grads = tape.backward(loss)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let zeros = vec![0.0; inputs[i].numel()];
        let analytic = grads.get(v).unwrap_or(&zeros).to_vec();
        for j in 0..inputs[i].numel() {
            let x0 = inputs[i].data()[j];
            let (xp, xm) = (x0 + step, x0 - step);
            work[i].data_mut()[j] = xp;
            let (t, _, l) = eval(&work, false)?;
            let fp = t.value(l)[0];
            work[i].data_mut()[j] = xm;
            let (t, _, l) = eval(&work, false)?;
            let fm = t.value(l)[0];
            work[i].data_mut()[j] = x0;
            // divide by the representable step actually taken
            let numeric = (fp - fm) / (xp - xm);
            let a = analytic[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            if rel > report.max_rel_error {
                report = GradCheckReport {
                    max_rel_error: rel,
                    worst_input: i,
                    worst_index: j,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Conv2dSpec;

    fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn linear_dot_is_exact() {
        let w = Tensor::new([3], vec![0.3, -0.2, 0.5]).unwrap();
        let x = Tensor::new([3], vec![0.4, 0.1, -0.6]).unwrap();
        let r = grad_check(
            |t, v| {
                let p = t.mul(v[0], v[1])?;
                t.sum_all(p)
            },
            &[w, x],
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-10, "{r:?}");
    }

    #[test]
    fn conv2d_passes() {
        let x = rand(&[1, 4, 6, 6], 1);
        let k = rand(&[4, 4, 3, 3], 2);
        let r = grad_check(|t, v| t.conv2d(v[0], v[1], Conv2dSpec::same(3)), &[x, k]).unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn grouped_conv2d_passes() {
        let x = rand(&[2, 8, 5, 6], 7);
        let k = rand(&[8, 4, 3, 3], 8);
        // bilinear, so a wider step only removes rounding noise
        let r = grad_check_with_step(|t, v| t.conv2d(v[0], v[1], Conv2dSpec::same(3).with_groups(2)), &[x, k], 1e-4)
            .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn elementwise_and_reductions_pass() {
        let a = rand(&[2, 3, 4], 3);
        let b = rand(&[3, 1], 4).map(|v| v.abs() + 0.5);
        let r = grad_check(
            |t, v| {
                let d = t.div(v[0], v[1])?;
                let g = t.gelu(d)?;
                let e = t.exp(g)?;
                let s = t.softmax(e, 1)?;
                let var = t.variance(s, &[2], true)?;
                let n = t.l2_normalize(var, 1, 1e-12)?;
                let p = t.permute(n, &[2, 0, 1])?;
                t.reshape(p, &[6])
            },
            &[a, b],
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{r:?}");
    }

    #[test]
    fn matmul_narrow_concat_pass() {
        let a = rand(&[2, 3, 4], 5);
        let b = rand(&[2, 4, 5], 6);
        let r = grad_check(
            |t, v| {
                let m = t.matmul(v[0], v[1])?;
                let l = t.narrow(m, 2, 1, 3)?;
                let c = t.concat(&[l, m], 2)?;
                let shifted = t.add_scalar(c, 6.0)?;
                let s = t.sqrt(shifted)?;
                t.sum(s, &[0, 2], false)
            },
            &[a, b],
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn report_names_offending_element() {
        let r = GradCheckReport {
            max_rel_error: 0.5,
            worst_input: 1,
            worst_index: 7,
            analytic: 1.0,
            numeric: 2.0,
        };
        match r.ensure(1e-4) {
            Err(TensorError::GradCheck { input: 1, index: 7, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }
}
