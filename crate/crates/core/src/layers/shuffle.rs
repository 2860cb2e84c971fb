use crate::tensor::{Real, Tape, TensorError, Var};

/// `[N, C·r, H, W] → [N, C, H·r, W]` with
/// `out[n, c, h·r + s, w] = in[n, c·r + s, h, w]`.
pub fn pixelshuffle_1d<T: Real>(tape: &mut Tape<T>, x: Var, r: usize) -> Result<Var, TensorError> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 || r == 0 || s[1] % r != 0 {
        return Err(TensorError::invalid(
            "pixelshuffle_1d",
            format!("cannot shuffle shape {s:?} by factor {r}"),
        ));
    }
    if r == 1 {
        return Ok(x);
    }
    let (n, c, h, w) = (s[0], s[1] / r, s[2], s[3]);
    let y = tape.reshape(x, &[n, c, r, h, w])?;
    let y = tape.permute(y, &[0, 1, 3, 2, 4])?;
    tape.reshape(y, &[n, c, h * r, w])
}

/// Reorders the quaternion channels of `[N, C·r, H, W]` so that after
/// [`pixelshuffle_1d`] each output quaternion is one whole input
/// quaternion: input quaternion `q·r + s` lands in output quaternion `q`,
/// sub-row `s`.
pub fn quat_regroup<T: Real>(tape: &mut Tape<T>, x: Var, r: usize) -> Result<Var, TensorError> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 || r == 0 || s[1] % (4 * r) != 0 {
        return Err(TensorError::invalid(
            "quat_regroup",
            format!("cannot regroup shape {s:?} by factor {r}"),
        ));
    }
    if r == 1 {
        return Ok(x);
    }
    let (n, cq, h, w) = (s[0], s[1] / (4 * r), s[2], s[3]);
    let y = tape.reshape(x, &[n, cq, r, 4, h * w])?;
    let y = tape.permute(y, &[0, 1, 3, 2, 4])?;
    tape.reshape(y, &[n, s[1], h, w])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn shape_and_index_map() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::from_fn([1, 8, 2, 3], |i| i as f64));
        let y = pixelshuffle_1d(&mut t, x, 2).unwrap();
        assert_eq!(t.shape(y), &[1, 4, 4, 3]);
        let (xi, yo) = (t.tensor(x), t.tensor(y));
        for c in 0..4 {
            for h in 0..2 {
                for s in 0..2 {
                    for w in 0..3 {
                        assert_eq!(yo.at(&[0, c, h * 2 + s, w]), xi.at(&[0, c * 2 + s, h, w]));
                    }
                }
            }
        }
        assert!(pixelshuffle_1d(&mut t, x, 3).is_err());
    }

    #[test]
    fn regroup_keeps_quaternions_whole() {
        let mut t = Tape::<f64>::new();
        // 2 output quaternions × r = 2 → 4 input quaternions
        let x = t.constant(Tensor::from_fn([1, 16, 1, 1], |i| i as f64));
        let g = quat_regroup(&mut t, x, 2).unwrap();
        let y = pixelshuffle_1d(&mut t, g, 2).unwrap();
        let out = t.tensor(y);
        for q in 0..2 {
            for s in 0..2 {
                for comp in 0..4 {
                    let src = 4 * (q * 2 + s) + comp;
                    assert_eq!(out.at(&[0, 4 * q + comp, s, 0]), src as f64);
                }
            }
        }
    }
}
