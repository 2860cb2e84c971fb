use rand::Rng;

use super::{Init, QConv};
use crate::tensor::{ParamId, ParamStore, Real, Tape, Tensor, TensorError, Var};

/// Added under the square root when normalising query/key rows.
pub const ATTENTION_EPS: f64 = 1e-12;

/// Self-attention across quaternion feature channels.
///
/// Q, K and V are reshaped to `[N, heads, Cq/heads, 4·H·W]` (one row per
/// quaternion channel), so the attention map is `[heads, Cq/heads, Cq/heads]`
/// per sample whatever the spatial size.
#[derive(Clone, Debug, PartialEq)]
pub struct QuatSelfAttention {
    pub qkv: QConv,
    pub qkv_depthwise: QConv,
    pub temperature: ParamId,
    pub project: QConv,
    pub heads: usize,
    pub channels: usize,
}

impl QuatSelfAttention {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        heads: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        if heads == 0 || channels % (4 * heads) != 0 {
            return Err(TensorError::invalid(
                "quat_self_attention",
                format!("{channels} channels cannot be split into {heads} quaternion heads"),
            ));
        }
        let qkv = QConv::new(store, &format!("{name}.qkv"), channels, 3 * channels, 1, false, init, rng)?;
        let qkv_depthwise = QConv::depthwise(store, &format!("{name}.qkv_dw"), 3 * channels, 3, init, rng)?;
        let temperature = store.add(format!("{name}.temperature"), Tensor::ones([heads]));
        let project = QConv::new(store, &format!("{name}.project"), channels, channels, 1, false, init, rng)?;
        Ok(QuatSelfAttention {
            qkv,
            qkv_depthwise,
            temperature,
            project,
            heads,
            channels,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, TensorError> {
        Ok(self.forward_with_map(tape, p, x)?.0)
    }

    /// Returns the output and the softmax attention map `[N, heads, d, d]`.
    pub fn forward_with_map<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<(Var, Var), TensorError> {
        let s = tape.shape(x).to_vec();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let d = c / 4 / self.heads;
        let row = 4 * h * w;

        let qkv = self.qkv.forward(tape, p, x)?;
        let qkv = self.qkv_depthwise.forward(tape, p, qkv)?;
        let split = |tape: &mut Tape<T>, k: usize| -> Result<Var, TensorError> {
            let part = tape.narrow(qkv, 1, k * c, c)?;
            tape.reshape(part, &[n, self.heads, d, row])
        };
        let q = split(tape, 0)?;
        let k = split(tape, 1)?;
        let v = split(tape, 2)?;
        let eps = T::of(ATTENTION_EPS);
        let q = tape.l2_normalize(q, 3, eps)?;
        let k = tape.l2_normalize(k, 3, eps)?;

        let kt = tape.permute(k, &[0, 1, 3, 2])?;
        let logits = tape.matmul(q, kt)?;
        let alpha = tape.reshape(p[self.temperature.0], &[1, self.heads, 1, 1])?;
        let logits = tape.div(logits, alpha)?;
        let attn = tape.softmax(logits, 3)?;

        let out = tape.matmul(attn, v)?;
        let out = tape.reshape(out, &[n, c, h, w])?;
        Ok((self.project.forward(tape, p, out)?, attn))
    }

    pub fn param_count(&self) -> usize {
        self.qkv.param_count() + self.qkv_depthwise.param_count() + self.heads + self.project.param_count()
    }
}
