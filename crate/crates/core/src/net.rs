//! QRBSA / QEDSR network assembly.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{pixelshuffle_1d, quat_regroup, Init, QConv, QrsaBlock, SkipMode};
use crate::tensor::{Conv2dSpec, CustomOp, ParamStore, Real, Tape, Tensor, TensorError, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    #[default]
    Qrbsa,
    /// Residual blocks without transformer blocks.
    Qedsr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Real channel count of the feature maps.
    pub feature_channels: usize,
    pub n_qrsa_blocks: usize,
    pub scale: usize,
    pub heads: usize,
    pub ffn_expansion: f64,
    pub variant: Variant,
    pub skip: SkipMode,
    pub init: Init,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            feature_channels: 128,
            n_qrsa_blocks: 8,
            scale: 4,
            heads: 1,
            ffn_expansion: 2.0,
            variant: Variant::Qrbsa,
            skip: SkipMode::WholeBlock,
            init: Init::Uniform,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), TensorError> {
        let bad = |msg: String| Err(TensorError::invalid("network_config", msg));
        if self.feature_channels == 0 || self.heads == 0 || self.feature_channels % (4 * self.heads) != 0 {
            return bad(format!(
                "feature_channels {} must be a positive multiple of 4 x heads ({})",
                self.feature_channels, self.heads
            ));
        }
        if self.scale != 2 && self.scale != 4 {
            return bad(format!("scale must be 2 or 4, got {}", self.scale));
        }
        if !(self.ffn_expansion > 0.0 && self.ffn_expansion.is_finite()) {
            return bad(format!("ffn_expansion must be positive, got {}", self.ffn_expansion));
        }
        Ok(())
    }

    pub fn upsample_stages(&self) -> usize {
        self.scale.trailing_zeros() as usize
    }
}

/// Built network with its parameters.
#[derive(Clone, Debug)]
pub struct Network<T: Real> {
    pub config: NetworkConfig,
    pub params: ParamStore<T>,
    pub head: QConv,
    pub blocks: Vec<QrsaBlock>,
    pub body_conv: QConv,
    pub upsamplers: Vec<QConv>,
    pub tail: QConv,
}

impl<T: Real> Network<T> {
    pub fn build(config: &NetworkConfig, seed: u64) -> Result<Self, TensorError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = config.feature_channels;
        let init = config.init;
        let head = QConv::new(&mut params, "head", 4, c, 3, true, init, &mut rng)?;
        let mut blocks = Vec::with_capacity(config.n_qrsa_blocks);
        for i in 0..config.n_qrsa_blocks {
            blocks.push(QrsaBlock::new(
                &mut params,
                &format!("body.{i}"),
                c,
                config.heads,
                config.ffn_expansion,
                config.variant == Variant::Qrbsa,
                config.skip,
                init,
                &mut rng,
            )?);
        }
        let body_conv = QConv::new(&mut params, "body.conv", c, c, 3, true, init, &mut rng)?;
        let upsamplers = (0..config.upsample_stages())
            .map(|k| QConv::new(&mut params, &format!("up.{k}"), c, 2 * c, 3, true, init, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let tail = QConv::new(&mut params, "tail", c, 4, 3, true, init, &mut rng)?;
        Ok(Network {
            config: config.clone(),
            params,
            head,
            blocks,
            body_conv,
            upsamplers,
            tail,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Number of convolution weight scalars (biases and norm/attention
    /// scalars excluded).
    pub fn conv_weight_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.ends_with(".weight"))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.bind(tape)
    }

    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params.bind_frozen(tape)
    }

    /// Raw 4-channel output `[N, 4, Hz·scale, W]` before normalisation.
    pub fn forward_raw(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, TensorError> {
        let s = tape.shape(x).to_vec();
        if s.len() != 4 || s[1] != 4 {
            return Err(TensorError::ShapeMismatch {
                op: "network",
                expected: vec![0, 4, 0, 0],
                got: s,
            });
        }
        if s[2] < 4 || s[3] < 1 {
            return Err(TensorError::invalid("network", format!("input {s:?} is below the minimum 4 rows")));
        }
        let f0 = self.head.forward(tape, p, x)?;
        let mut f = f0;
        for b in &self.blocks {
            f = b.forward(tape, p, f)?;
        }
        let f = self.body_conv.forward(tape, p, f)?;
        let mut f = tape.add(f, f0)?;
        for up in &self.upsamplers {
            let y = up.forward(tape, p, f)?;
            let y = quat_regroup(tape, y, 2)?;
            f = pixelshuffle_1d(tape, y, 2)?;
        }
        self.tail.forward(tape, p, f)
    }

    /// Unit-norm, hemisphere-fixed prediction.
    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, TensorError> {
        let raw = self.forward_raw(tape, p, x)?;
        quat_normalize(tape, raw)
    }

    /// Inference on a detached input.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let mut tape = Tape::new();
        let p = self.bind_frozen(&mut tape);
        let x = tape.constant(x.clone());
        let y = self.forward(&mut tape, &p, x)?;
        Ok(tape.tensor(y))
    }

    /// Zeroes every transformer output projection.
    pub fn zero_transformer_projections(&mut self) {
        for b in &self.blocks {
            if let Some(t) = &b.transformer {
                t.zero_output_projections(&mut self.params);
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let mut params = ParamStore::new();
        for (name, t) in self.params.iter() {
            params.add(name, t.cast());
        }
        Network {
            config: self.config.clone(),
            params,
            head: self.head.clone(),
            blocks: self.blocks.clone(),
            body_conv: self.body_conv.clone(),
            upsamplers: self.upsamplers.clone(),
            tail: self.tail.clone(),
        }
    }
}

/// Norms below this map to the identity orientation.
pub const NORMALIZE_FLOOR: f64 = 1e-12;

struct QuatNormalize {
    planes: usize,
    hw: usize,
}

impl<T: Real> CustomOp<T> for QuatNormalize {
    fn name(&self) -> &'static str {
        "quat_normalize"
    }

    fn backward(&self, inputs: &[&[T]], output: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let x = inputs[0];
        let mut grad = vec![T::zero(); x.len()];
        for n in 0..self.planes {
            let base = n * 4 * self.hw;
            for i in 0..self.hw {
                let idx = |c: usize| base + c * self.hw + i;
                let norm = (0..4).map(|c| x[idx(c)] * x[idx(c)]).sum::<T>().sqrt();
                if norm.f64() < NORMALIZE_FLOOR {
                    continue;
                }
                // output = σ u, so (I - u uᵀ) σ g / |x| = (g - y (y·g)) σ / |x|
                let dot = (0..4).map(|c| output[idx(c)] * g[idx(c)]).sum::<T>();
                let sigma = hemisphere_sign((0..4).map(|c| x[idx(c)]));
                for c in 0..4 {
                    grad[idx(c)] = sigma * (g[idx(c)] - output[idx(c)] * dot) / norm;
                }
            }
        }
        vec![Some(grad)]
    }
}

fn hemisphere_sign<T: Real>(mut comps: impl Iterator<Item = T>) -> T {
    match comps.find(|v| *v != T::zero()) {
        Some(v) if v < T::zero() => -T::one(),
        _ => T::one(),
    }
}

/// Per-pixel unit normalisation with the `q0 >= 0` hemisphere rule on a
/// `[N, 4, H, W]` map.
pub fn quat_normalize<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var, TensorError> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 || s[1] != 4 {
        return Err(TensorError::ShapeMismatch {
            op: "quat_normalize",
            expected: vec![0, 4, 0, 0],
            got: s,
        });
    }
    let hw = s[2] * s[3];
    let v = tape.value(x);
    let mut out = vec![T::zero(); v.len()];
    for n in 0..s[0] {
        let base = n * 4 * hw;
        for i in 0..hw {
            let idx = |c: usize| base + c * hw + i;
            let norm = (0..4).map(|c| v[idx(c)] * v[idx(c)]).sum::<T>().sqrt();
            if norm.f64() < NORMALIZE_FLOOR {
                out[idx(0)] = T::one();
                continue;
            }
            let sigma = hemisphere_sign((0..4).map(|c| v[idx(c)]));
            for c in 0..4 {
                out[idx(c)] = sigma * v[idx(c)] / norm;
            }
        }
    }
    tape.custom(&[x], s.clone(), out, Box::new(QuatNormalize { planes: s[0], hw }))
}

/// Real-valued convolution used by [`EdsrTwin`].
#[derive(Clone, Debug, PartialEq)]
pub struct RealConv {
    pub weight: crate::tensor::ParamId,
    pub bias: crate::tensor::ParamId,
    pub out_channels: usize,
}

impl RealConv {
    fn new<T: Real>(store: &mut ParamStore<T>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        let weight = store.add(format!("{name}.weight"), Tensor::zeros([cout, cin, k, k]));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros([cout]));
        RealConv {
            weight,
            bias,
            out_channels: cout,
        }
    }

    fn forward<T: Real>(&self, tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<Var, TensorError> {
        let y = tape.conv2d(x, p[self.weight.0], Conv2dSpec::same(3))?;
        let b = tape.reshape(p[self.bias.0], &[1, self.out_channels, 1, 1])?;
        tape.add(y, b)
    }
}

/// Real-convolution network with the QEDSR topology, used for parameter
/// accounting.
#[derive(Clone, Debug)]
pub struct EdsrTwin<T: Real> {
    pub params: ParamStore<T>,
    pub convs: Vec<RealConv>,
}

impl<T: Real> EdsrTwin<T> {
    pub fn build(config: &NetworkConfig) -> Result<Self, TensorError> {
        config.validate()?;
        let c = config.feature_channels;
        let mut params = ParamStore::new();
        let mut convs = vec![RealConv::new(&mut params, "head", 4, c, 3)];
        for i in 0..config.n_qrsa_blocks {
            convs.push(RealConv::new(&mut params, &format!("body.{i}.conv1"), c, c, 3));
            convs.push(RealConv::new(&mut params, &format!("body.{i}.conv2"), c, c, 3));
        }
        convs.push(RealConv::new(&mut params, "body.conv", c, c, 3));
        for k in 0..config.upsample_stages() {
            convs.push(RealConv::new(&mut params, &format!("up.{k}"), c, 2 * c, 3));
        }
        convs.push(RealConv::new(&mut params, "tail", c, 4, 3));
        Ok(EdsrTwin { params, convs })
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn conv_weight_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.ends_with(".weight"))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn forward(&self, tape: &mut Tape<T>, p: &[Var], x: Var, blocks: usize, stages: usize) -> Result<Var, TensorError> {
        let f0 = self.convs[0].forward(tape, p, x)?;
        let mut f = f0;
        for i in 0..blocks {
            let y = self.convs[1 + 2 * i].forward(tape, p, f)?;
            let y = tape.relu(y)?;
            let y = self.convs[2 + 2 * i].forward(tape, p, y)?;
            f = tape.add(f, y)?;
        }
        let y = self.convs[1 + 2 * blocks].forward(tape, p, f)?;
        let mut f = tape.add(y, f0)?;
        for k in 0..stages {
            let y = self.convs[2 + 2 * blocks + k].forward(tape, p, f)?;
            f = pixelshuffle_1d(tape, y, 2)?;
        }
        self.convs[2 + 2 * blocks + stages].forward(tape, p, f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant, scale: usize) -> NetworkConfig {
        NetworkConfig {
            feature_channels: 8,
            n_qrsa_blocks: 1,
            scale,
            variant,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn output_shapes() {
        for (scale, hz) in [(4, 5), (2, 6)] {
            let net = Network::<f32>::build(&tiny(Variant::Qrbsa, scale), 1).unwrap();
            let x = Tensor::full([1, 4, hz, 7], 0.5);
            let y = net.predict(&x).unwrap();
            assert_eq!(y.shape(), &[1, 4, hz * scale, 7]);
        }
    }

    #[test]
    fn outputs_are_unit_and_upper_hemisphere() {
        let net = Network::<f64>::build(&tiny(Variant::Qrbsa, 2), 5).unwrap();
        let x = Tensor::from_fn([2, 4, 4, 5], |i| ((i * 37 % 11) as f64 - 5.0) / 5.0);
        let y = net.predict(&x).unwrap();
        let hw = 8 * 5;
        for n in 0..2 {
            for i in 0..hw {
                let q: Vec<f64> = (0..4).map(|c| y.data()[n * 4 * hw + c * hw + i]).collect();
                let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() < 1e-12);
                assert!(q[0] >= 0.0);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = Network::<f32>::build(&tiny(Variant::Qedsr, 2), 1).unwrap();
        assert!(net.predict(&Tensor::zeros([1, 3, 8, 8])).is_err());
        assert!(net.predict(&Tensor::zeros([1, 4, 3, 8])).is_err());
        let bad = NetworkConfig {
            scale: 3,
            ..NetworkConfig::default()
        };
        assert!(Network::<f32>::build(&bad, 0).is_err());
    }

    #[test]
    fn zero_norm_pixel_maps_to_identity() {
        let mut t = Tape::<f64>::new();
        let x = t.constant(Tensor::zeros([1, 4, 1, 1]));
        let y = quat_normalize(&mut t, x).unwrap();
        assert_eq!(t.value(y), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn build_is_seeded() {
        let a = Network::<f32>::build(&tiny(Variant::Qrbsa, 2), 11).unwrap();
        let b = Network::<f32>::build(&tiny(Variant::Qrbsa, 2), 11).unwrap();
        assert_eq!(a.params, b.params);
    }
}
