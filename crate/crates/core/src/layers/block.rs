use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{split_activation, Activation, GatedFfn, Init, QConv, QuatLayerNorm, QuatSelfAttention};
use crate::tensor::{ParamStore, Real, Tape, Tensor, TensorError, Var};

/// `X' = X + attn(LN(X))`, `X'' = X' + ffn(LN(X'))`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuatTransformerBlock {
    pub norm1: QuatLayerNorm,
    pub attention: QuatSelfAttention,
    pub norm2: QuatLayerNorm,
    pub ffn: GatedFfn,
}

impl QuatTransformerBlock {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        heads: usize,
        expansion: f64,
        init: Init,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Ok(QuatTransformerBlock {
            norm1: QuatLayerNorm::new(store, &format!("{name}.norm1"), channels)?,
            attention: QuatSelfAttention::new(store, &format!("{name}.attn"), channels, heads, init, rng)?,
            norm2: QuatLayerNorm::new(store, &format!("{name}.norm2"), channels)?,
            ffn: GatedFfn::new(store, &format!("{name}.ffn"), channels, expansion, init, rng)?,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, TensorError> {
        let n = self.norm1.forward(tape, p, x)?;
        let a = self.attention.forward(tape, p, n)?;
        let x = tape.add(x, a)?;
        let n = self.norm2.forward(tape, p, x)?;
        let f = self.ffn.forward(tape, p, n)?;
        tape.add(x, f)
    }

    /// Zeroes the attention and FFN output projections, making the block an
    /// exact identity.
    pub fn zero_output_projections<T: Real>(&self, store: &mut ParamStore<T>) {
        for id in [self.attention.project.weight, self.ffn.project.weight] {
            let t = store.get_mut(id);
            *t = Tensor::zeros(t.shape().to_vec()).with_grad();
        }
    }

    pub fn param_count(&self) -> usize {
        self.norm1.param_count() + self.attention.param_count() + self.norm2.param_count() + self.ffn.param_count()
    }
}

/// Where the short skip of a residual block attaches.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipMode {
    /// `x + T(conv(act(conv(x))))`
    #[default]
    WholeBlock,
    /// `T(x + conv(act(conv(x))))`
    ConvsOnly,
}

/// Quaternion residual block: conv, split activation, conv, optional
/// transformer, short skip.
#[derive(Clone, Debug, PartialEq)]
pub struct QrsaBlock {
    pub conv1: QConv,
    pub conv2: QConv,
    pub transformer: Option<QuatTransformerBlock>,
    pub activation: Activation,
    pub skip: SkipMode,
}

impl QrsaBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        heads: usize,
        expansion: f64,
        with_transformer: bool,
        skip: SkipMode,
        init: Init,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let conv1 = QConv::new(store, &format!("{name}.conv1"), channels, channels, 3, true, init, rng)?;
        let conv2 = QConv::new(store, &format!("{name}.conv2"), channels, channels, 3, true, init, rng)?;
        let transformer = if with_transformer {
            Some(QuatTransformerBlock::new(
                store,
                &format!("{name}.transformer"),
                channels,
                heads,
                expansion,
                init,
                rng,
            )?)
        } else {
            None
        };
        Ok(QrsaBlock {
            conv1,
            conv2,
            transformer,
            activation: Activation::Relu,
            skip,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, TensorError> {
        let y = self.conv1.forward(tape, p, x)?;
        let y = split_activation(tape, y, self.activation)?;
        let y = self.conv2.forward(tape, p, y)?;
        match (self.skip, &self.transformer) {
            (_, None) => tape.add(x, y),
            (SkipMode::WholeBlock, Some(t)) => {
                let y = t.forward(tape, p, y)?;
                tape.add(x, y)
            }
            (SkipMode::ConvsOnly, Some(t)) => {
                let y = tape.add(x, y)?;
                t.forward(tape, p, y)
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count() + self.conv2.param_count() + self.transformer.as_ref().map_or(0, |t| t.param_count())
    }
}
