use rand::Rng;

use super::{Init, QConv};
use crate::tensor::{ParamStore, Real, Tape, TensorError, Var};

/// `GeLU(a) ⊙ b`.
pub fn gate<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var, TensorError> {
    let g = tape.gelu(a)?;
    tape.mul(g, b)
}

/// Two pointwise+depthwise quaternion branches combined by [`gate`], then
/// projected back to the input width.
#[derive(Clone, Debug, PartialEq)]
pub struct GatedFfn {
    pub branch1: (QConv, QConv),
    pub branch2: (QConv, QConv),
    pub project: QConv,
    pub hidden: usize,
}

impl GatedFfn {
    pub fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        expansion: f64,
        init: Init,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        // hidden width rounded to whole quaternion channels
        let hidden = ((channels as f64 * expansion / 4.0).round() as usize).max(1) * 4;
        let mut branch = |tag: &str, rng: &mut R| -> Result<(QConv, QConv), TensorError> {
            let pw = QConv::new(store, &format!("{name}.{tag}.pw"), channels, hidden, 1, false, init, rng)?;
            let dw = QConv::depthwise(store, &format!("{name}.{tag}.dw"), hidden, 3, init, rng)?;
            Ok((pw, dw))
        };
        let branch1 = branch("w1", rng)?;
        let branch2 = branch("w2", rng)?;
        let project = QConv::new(store, &format!("{name}.project"), hidden, channels, 1, false, init, rng)?;
        Ok(GatedFfn {
            branch1,
            branch2,
            project,
            hidden,
        })
    }

    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, TensorError> {
        let a = self.branch1.0.forward(tape, p, x)?;
        let a = self.branch1.1.forward(tape, p, a)?;
        let b = self.branch2.0.forward(tape, p, x)?;
        let b = self.branch2.1.forward(tape, p, b)?;
        let g = gate(tape, a, b)?;
        self.project.forward(tape, p, g)
    }

    pub fn param_count(&self) -> usize {
        [&self.branch1.0, &self.branch1.1, &self.branch2.0, &self.branch2.1, &self.project]
            .iter()
            .map(|c| c.param_count())
            .sum()
    }
}
