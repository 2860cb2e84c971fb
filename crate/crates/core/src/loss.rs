//! Rotational-distance loss with hexagonal symmetry.

use serde::{Deserialize, Serialize};

use crate::quat::{Quat, SymmetrySet};
use crate::tensor::{CustomOp, Real, Tape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub linearization_threshold: f64,
    pub reduction: Reduction,
    #[serde(skip)]
    pub symmetry: SymmetrySet,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            linearization_threshold: 1.9,
            reduction: Reduction::Mean,
            symmetry: SymmetrySet::hexagonal(),
        }
    }
}

/// `θ(d) = 4 asin(d/2)` up to `threshold`, then its tangent line.
pub fn rotational_distance(d: f64, threshold: f64) -> f64 {
    let d = d.clamp(0.0, 2.0);
    if d <= threshold {
        4.0 * (d / 2.0).asin()
    } else {
        4.0 * (threshold / 2.0).asin() + slope(threshold) * (d - threshold)
    }
}

/// `dθ/dd`.
pub fn rotational_distance_slope(d: f64, threshold: f64) -> f64 {
    slope(d.clamp(0.0, 2.0).min(threshold))
}

fn slope(d: f64) -> f64 {
    2.0 / (1.0 - d * d / 4.0).sqrt()
}

/// Per-pixel loss and the symmetric target it was measured against.
///
/// Returns `(θ, d, t')` where `t'` is the signed symmetry-equivalent target
/// closest to `p`.
pub fn pixel_loss(p: Quat, t: Quat, cfg: &LossConfig) -> (f64, f64, Quat) {
    let mut best = (f64::INFINITY, f64::INFINITY, t);
    for &s in cfg.symmetry.iter() {
        let ts = (s * t).hemisphere();
        for cand in [ts, -ts] {
            let d = (p - cand).norm();
            let theta = rotational_distance(d, cfg.linearization_threshold);
            if theta < best.0 {
                best = (theta, d, cand);
            }
        }
    }
    best
}

struct PhysicsLossOp<T> {
    /// dL/dp per element, already reduced.
    grad: Vec<T>,
}

impl<T: Real> CustomOp<T> for PhysicsLossOp<T> {
    fn name(&self) -> &'static str {
        "physics_loss"
    }

    fn backward(&self, _inputs: &[&[T]], _output: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let g0 = g[0];
        vec![Some(self.grad.iter().map(|&v| v * g0).collect())]
    }
}

/// Physics loss between `pred` (a `[N, 4, H, W]` variable of unit
/// quaternions) and a constant target of the same shape.
pub fn physics_loss<T: Real>(tape: &mut Tape<T>, pred: Var, target: &Tensor<T>, cfg: &LossConfig) -> Result<Var, TensorError> {
    let s = tape.shape(pred).to_vec();
    if s != target.shape() || s.len() != 4 || s[1] != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "physics_loss",
            expected: target.shape().to_vec(),
            got: s,
        });
    }
    if !target.is_finite() || tape.value(pred).iter().any(|v| !v.is_finite()) {
        return Err(TensorError::NonFinite { op: "physics_loss" });
    }
    let hw = s[2] * s[3];
    let pixels = s[0] * hw;
    let factor = match cfg.reduction {
        Reduction::Mean => 1.0 / pixels as f64,
        Reduction::Sum => 1.0,
    };
    let pv = tape.value(pred);
    let tv = target.data();
    let mut grad = vec![T::zero(); pv.len()];
    let mut total = 0.0;
    for n in 0..s[0] {
        for i in 0..hw {
            let idx = |c: usize| n * 4 * hw + c * hw + i;
            let q = |v: &[T]| Quat::new(v[idx(0)].f64(), v[idx(1)].f64(), v[idx(2)].f64(), v[idx(3)].f64());
            let (p, t) = (q(pv), q(tv));
            let (theta, d, tt) = pixel_loss(p, t, cfg);
            total += theta;
            if d > 0.0 {
                let k = factor * rotational_distance_slope(d, cfg.linearization_threshold) / d;
                let diff = (p - tt).to_array();
                for c in 0..4 {
                    grad[idx(c)] = T::of(k * diff[c]);
                }
            }
        }
    }
    tape.custom(&[pred], Vec::new(), vec![T::of(total * factor)], Box::new(PhysicsLossOp { grad }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn distance_examples() {
        assert_eq!(rotational_distance(0.0, 1.9), 0.0);
        assert!((rotational_distance(2f64.sqrt(), 1.9) - PI).abs() < 1e-12);
        // θ(1.9) + θ'(1.9)·0.1 with θ(1.9) = 4 asin(0.95), θ' = 2/sqrt(1 - 0.9025)
        let expect = 4.0 * 0.95f64.asin() + 0.1 * 2.0 / 0.0975f64.sqrt();
        assert!((rotational_distance(2.0, 1.9) - expect).abs() < 1e-12);
        assert!((expect - 5.6534).abs() < 1e-4);
    }

    #[test]
    fn identical_maps_give_zero() {
        let cfg = LossConfig::default();
        let mut t = Tape::<f64>::new();
        let target = Tensor::from_fn([1, 4, 2, 1], |i| if i < 2 { 1.0 } else { 0.0 });
        let p = t.param(&target);
        let l = physics_loss(&mut t, p, &target, &cfg).unwrap();
        assert_eq!(t.value(l), &[0.0]);
        let g = t.backward(l).unwrap();
        assert!(g.get(p).unwrap().iter().all(|&v| v == 0.0));
    }
}
