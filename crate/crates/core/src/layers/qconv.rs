//! Quaternion convolution.
//!
//! A quaternion kernel is stored as one tensor `[4, O, I, kh, kw]` holding
//! the a, b, c, d component arrays. Feature maps interleave components:
//! real channel `4·q + r` is component `r` of quaternion channel `q`.
//! The kernel is expanded into a real `[4O, 4I, kh, kw]` kernel whose
//! 4×4 blocks follow the left-multiplication matrix of the kernel
//! quaternion, so the convolution computes `w ⊗ x` per tap.

use rand::Rng;

use super::{init_kernel, Init};
use crate::tensor::{Conv2dSpec, CustomOp, ParamId, ParamStore, Real, Tape, Tensor, TensorError, Var};

/// `(component, sign)` feeding real block `(r, s)` of the expanded kernel.
pub const HAMILTON_BLOCKS: [[(usize, i8); 4]; 4] = [
    [(0, 1), (1, -1), (2, -1), (3, -1)],
    [(1, 1), (0, 1), (3, -1), (2, 1)],
    [(2, 1), (3, 1), (0, 1), (1, -1)],
    [(3, 1), (2, -1), (1, 1), (0, 1)],
];

/// Expands component arrays `[4, O, I, kh, kw]` into a real kernel
/// `[4O, 4I, kh, kw]`.
pub fn hamilton_expand<T: Real>(comp: &[T], o: usize, i: usize, taps: usize) -> Vec<T> {
    debug_assert_eq!(comp.len(), 4 * o * i * taps);
    let per = o * i * taps;
    let mut out = vec![T::zero(); 16 * per];
    for oq in 0..o {
        for r in 0..4 {
            let row = (4 * oq + r) * 4 * i * taps;
            for iq in 0..i {
                for (s, &(c, sign)) in HAMILTON_BLOCKS[r].iter().enumerate() {
                    let src = c * per + (oq * i + iq) * taps;
                    let dst = row + (4 * iq + s) * taps;
                    for t in 0..taps {
                        let v = comp[src + t];
                        out[dst + t] = if sign > 0 { v } else { -v };
                    }
                }
            }
        }
    }
    out
}

struct HamiltonExpand {
    o: usize,
    i: usize,
    taps: usize,
}

impl<T: Real> CustomOp<T> for HamiltonExpand {
    fn name(&self) -> &'static str {
        "hamilton_expand"
    }

    fn backward(&self, _inputs: &[&[T]], _output: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (o, i, taps) = (self.o, self.i, self.taps);
        let per = o * i * taps;
        let mut grad = vec![T::zero(); 4 * per];
        for oq in 0..o {
            for r in 0..4 {
                let row = (4 * oq + r) * 4 * i * taps;
                for iq in 0..i {
                    for (s, &(c, sign)) in HAMILTON_BLOCKS[r].iter().enumerate() {
                        let dst = c * per + (oq * i + iq) * taps;
                        let src = row + (4 * iq + s) * taps;
                        for t in 0..taps {
                            if sign > 0 {
                                grad[dst + t] += g[src + t];
                            } else {
                                grad[dst + t] -= g[src + t];
                            }
                        }
                    }
                }
            }
        }
        vec![Some(grad)]
    }
}

/// Records the differentiable kernel expansion of `w` (`[4, O, I, kh, kw]`).
pub fn expand_on_tape<T: Real>(tape: &mut Tape<T>, w: Var) -> Result<Var, TensorError> {
    let shape = tape.shape(w).to_vec();
    if shape.len() != 5 || shape[0] != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "hamilton_expand",
            expected: vec![4, 0, 0, 0, 0],
            got: shape,
        });
    }
    let (o, i, kh, kw) = (shape[1], shape[2], shape[3], shape[4]);
    let data = hamilton_expand(tape.value(w), o, i, kh * kw);
    tape.custom(
        &[w],
        vec![4 * o, 4 * i, kh, kw],
        data,
        Box::new(HamiltonExpand { o, i, taps: kh * kw }),
    )
}

/// Quaternion 2D convolution, full or depthwise.
#[derive(Clone, Debug, PartialEq)]
pub struct QConv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub depthwise: bool,
}

impl QConv {
    /// Full quaternion convolution between real channel counts `cin`, `cout`.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        check_channels("qconv2d", cin)?;
        check_channels("qconv2d", cout)?;
        let shape = [4, cout / 4, cin / 4, kernel, kernel];
        let weight = store.add(format!("{name}.weight"), init_kernel(&shape, cin * kernel * kernel, init, rng));
        let bias = bias.then(|| store.add(format!("{name}.bias"), Tensor::zeros([cout])));
        Ok(QConv {
            weight,
            bias,
            in_channels: cin,
            out_channels: cout,
            kernel,
            depthwise: false,
        })
    }

    /// One quaternion kernel per quaternion channel; no bias.
    pub fn depthwise<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kernel: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        check_channels("qconv2d_depthwise", channels)?;
        let shape = [4, channels / 4, 1, kernel, kernel];
        let weight = store.add(format!("{name}.weight"), init_kernel(&shape, 4 * kernel * kernel, init, rng));
        Ok(QConv {
            weight,
            bias: None,
            in_channels: channels,
            out_channels: channels,
            kernel,
            depthwise: true,
        })
    }

    pub fn spec(&self) -> Conv2dSpec {
        let spec = Conv2dSpec::same(self.kernel);
        if self.depthwise {
            spec.with_groups(self.in_channels / 4)
        } else {
            spec
        }
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, TensorError> {
        let c = tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.in_channels {
            return Err(TensorError::ShapeMismatch {
                op: "qconv2d",
                expected: vec![self.in_channels],
                got: vec![c],
            });
        }
        let k = expand_on_tape(tape, p[self.weight.0])?;
        let y = tape.conv2d(x, k, self.spec())?;
        match self.bias {
            Some(b) => {
                let b = tape.reshape(p[b.0], &[1, self.out_channels, 1, 1])?;
                tape.add(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn param_count(&self) -> usize {
        let w = if self.depthwise {
            self.in_channels * self.kernel * self.kernel
        } else {
            self.in_channels * self.out_channels * self.kernel * self.kernel / 4
        };
        w + self.bias.map_or(0, |_| self.out_channels)
    }
}

pub(crate) fn check_channels(op: &'static str, c: usize) -> Result<(), TensorError> {
    if c == 0 || c % 4 != 0 {
        return Err(TensorError::invalid(op, format!("channel count {c} is not a positive multiple of 4")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::Quat;

    #[test]
    fn block_table_is_left_multiplication() {
        let q = Quat::new(0.3, -1.2, 0.5, 2.0);
        let comps = q.to_array();
        let m = q.to_matrix();
        for r in 0..4 {
            for s in 0..4 {
                let (c, sign) = HAMILTON_BLOCKS[r][s];
                assert_eq!(m[r][s], sign as f64 * comps[c]);
            }
        }
    }

    #[test]
    fn expansion_of_single_tap() {
        let comp = [1.0, 2.0, 3.0, 4.0];
        let k = hamilton_expand(&comp, 1, 1, 1);
        let m = Quat::new(1.0, 2.0, 3.0, 4.0).to_matrix();
        for r in 0..4 {
            for s in 0..4 {
                assert_eq!(k[r * 4 + s], m[r][s]);
            }
        }
    }

    #[test]
    fn channel_checks() {
        assert!(check_channels("t", 8).is_ok());
        assert!(check_channels("t", 6).is_err());
        assert!(check_channels("t", 0).is_err());
    }
}
