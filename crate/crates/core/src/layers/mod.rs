//! Quaternion-valued network layers built on the tape.
//!
//! Every layer registers its parameters in a [`ParamStore`] at construction
//! and receives the bound parameter variables (indexed by [`ParamId`]) at
//! forward time.
//!
//! [`ParamStore`]: crate::tensor::ParamStore
//! [`ParamId`]: crate::tensor::ParamId

mod attention;
mod block;
mod ffn;
mod norm;
pub mod qconv;
mod shuffle;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::tensor::{Real, Tape, Tensor, TensorError, Var};

pub use attention::{QuatSelfAttention, ATTENTION_EPS};
pub use block::{QrsaBlock, QuatTransformerBlock, SkipMode};
pub use ffn::{gate, GatedFfn};
pub use norm::{QuatLayerNorm, LAYER_NORM_EPS};
pub use qconv::{hamilton_expand, QConv};
pub use shuffle::{pixelshuffle_1d, quat_regroup};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Gelu,
}

/// Quaternion kernel initialisation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Each component i.i.d. uniform with variance `1 / (2 · fan_in)`.
    #[default]
    Uniform,
    /// Magnitude/phase sampling: `w = φ (cos θ + u sin θ)` with `φ` from a
    /// 4-dof chi law, `θ ~ U(-π, π)` and `u` a random unit pure quaternion.
    Polar,
}

/// Component-array tensor for a quaternion kernel; `fan_in` is the real
/// input fan-in `Cin · kh · kw` of one output channel.
pub fn init_kernel<T: Real, R: Rng + ?Sized>(shape: &[usize; 5], fan_in: usize, init: Init, rng: &mut R) -> Tensor<T> {
    let var = 1.0 / (2.0 * fan_in as f64);
    let per: usize = shape[1..].iter().product();
    let mut data = vec![T::zero(); 4 * per];
    match init {
        Init::Uniform => {
            let bound = (3.0 * var).sqrt();
            for v in data.iter_mut() {
                *v = T::of(rng.random_range(-bound..bound));
            }
        }
        Init::Polar => {
            // E[φ²] = 4σ², spread over four components → σ² per component on average
            let sigma = var.sqrt();
            for j in 0..per {
                let mut n = || -> f64 { StandardNormal.sample(rng) };
                let phi = sigma * (n().powi(2) + n().powi(2) + n().powi(2) + n().powi(2)).sqrt();
                let u = [n(), n(), n()];
                let un = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt().max(1e-12);
                let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                let (s, c) = theta.sin_cos();
                data[j] = T::of(phi * c);
                for k in 0..3 {
                    data[(k + 1) * per + j] = T::of(phi * s * u[k] / un);
                }
            }
        }
    }
    Tensor::new(shape.to_vec(), data).expect("kernel shape")
}

/// Applies `act` independently to every real component.
pub fn split_activation<T: Real>(tape: &mut Tape<T>, x: Var, act: Activation) -> Result<Var, TensorError> {
    match act {
        Activation::Relu => tape.relu(x),
        Activation::Gelu => tape.gelu(x),
    }
}
