use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor, TensorError, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Bias-free layer norm over all real channels at each location, with one
/// learnable scale per quaternion channel.
#[derive(Clone, Debug, PartialEq)]
pub struct QuatLayerNorm {
    pub scale: ParamId,
    pub channels: usize,
}

impl QuatLayerNorm {
    pub fn new<T: Real>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self, TensorError> {
        super::qconv::check_channels("quat_layer_norm", channels)?;
        let scale = store.add(format!("{name}.scale"), Tensor::ones([channels / 4]));
        Ok(QuatLayerNorm { scale, channels })
    }

    /// `x / sqrt(var_C(x) + eps)` without the learnable scale.
    pub fn normalize<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var, TensorError> {
        let var = tape.variance(x, &[1], true)?;
        let var = tape.add_scalar(var, T::of(LAYER_NORM_EPS))?;
        let sd = tape.sqrt(var)?;
        tape.div(x, sd)
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, TensorError> {
        let s = tape.shape(x).to_vec();
        if s.len() != 4 || s[1] != self.channels {
            return Err(TensorError::ShapeMismatch {
                op: "quat_layer_norm",
                expected: vec![0, self.channels, 0, 0],
                got: s,
            });
        }
        let y = Self::normalize(tape, x)?;
        let y = tape.reshape(y, &[s[0], s[1] / 4, 4, s[2], s[3]])?;
        let g = tape.reshape(p[self.scale.0], &[1, s[1] / 4, 1, 1, 1])?;
        let y = tape.mul(y, g)?;
        tape.reshape(y, &s)
    }

    pub fn param_count(&self) -> usize {
        self.channels / 4
    }
}
