//! QCKPT checkpoint files.
//!
//! Layout (little-endian): magic `QCKP`, version u32, config JSON
//! (u64 length + UTF-8), completed epochs u64, dtype tag u32, best
//! validation value f64, parameter count u64, then per parameter: name
//! (u32 length + UTF-8), rank u32, dims u64 each, values f64. Then the
//! Adam step count u64 and, per parameter, first and second moments as
//! f64. Values are always stored as f64 so 32-bit runs round-trip exactly.

use std::path::Path;

use super::RunConfig;
use crate::net::Network;
use crate::tensor::{Adam, AdamState, DType, ParamStore, Real, Tensor};
use crate::{io_err, Error, Result};

pub const QCKPT_MAGIC: [u8; 4] = *b"QCKP";
pub const QCKPT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    /// Completed epochs.
    pub epoch: u64,
    pub dtype: DType,
    pub best_val: f64,
    pub params: Vec<NamedTensor>,
    pub adam_step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

fn to_f64<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.f64()).collect()
}

impl Checkpoint {
    pub fn capture<T: Real>(config: &RunConfig, epoch: u64, best_val: f64, params: &ParamStore<T>, adam: &Adam<T>) -> Self {
        Checkpoint {
            config: config.clone(),
            epoch,
            dtype: T::DTYPE,
            best_val,
            params: params
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: to_f64(t.data()),
                })
                .collect(),
            adam_step: adam.state.step_count,
            first_moment: adam.state.first_moment.iter().map(|t| to_f64(t.data())).collect(),
            second_moment: adam.state.second_moment.iter().map(|t| to_f64(t.data())).collect(),
        }
    }

    /// Builds the network from the echoed config and loads the weights.
    pub fn network<T: Real>(&self) -> Result<Network<T>> {
        let cfg = self.config.network_config();
        let mut net = Network::<T>::build(&cfg, 0)?;
        self.load_params(&mut net.params)?;
        Ok(net)
    }

    pub fn load_params<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let values: Vec<(String, Tensor<T>)> = self
            .params
            .iter()
            .map(|p| {
                let data = p.data.iter().map(|&v| T::of(v)).collect();
                Ok((p.name.clone(), Tensor::new(p.shape.clone(), data)?))
            })
            .collect::<Result<_>>()?;
        store.load_values(&values).map_err(|e| Error::ConfigMismatch {
            expected: format!("{} parameters of the configured network", store.len()),
            found: e.to_string(),
        })
    }

    pub fn adam_state<T: Real>(&self, store: &ParamStore<T>) -> Result<AdamState<T>> {
        let mut state = AdamState::zeros_like(store);
        if self.first_moment.len() != store.len() || self.second_moment.len() != store.len() {
            return Err(Error::ConfigMismatch {
                expected: format!("optimizer state for {} parameters", store.len()),
                found: format!("{}", self.first_moment.len()),
            });
        }
        for (i, t) in store.tensors().iter().enumerate() {
            let (m, v) = (&self.first_moment[i], &self.second_moment[i]);
            if m.len() != t.numel() || v.len() != t.numel() {
                return Err(Error::ConfigMismatch {
                    expected: format!("moment of length {} for {}", t.numel(), store.names()[i]),
                    found: format!("{}", m.len()),
                });
            }
            for (d, s) in state.first_moment[i].data_mut().iter_mut().zip(m) {
                *d = T::of(*s);
            }
            for (d, s) in state.second_moment[i].data_mut().iter_mut().zip(v) {
                *d = T::of(*s);
            }
        }
        state.step_count = self.adam_step;
        Ok(state)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&QCKPT_MAGIC);
        out.extend_from_slice(&QCKPT_VERSION.to_le_bytes());
        let json = serde_json::to_vec(&self.config).expect("config serialises");
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.dtype.tag().to_le_bytes());
        out.extend_from_slice(&self.best_val.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        let put_f64s = |out: &mut Vec<u8>, v: &[f64]| v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for p in &self.params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            put_f64s(&mut out, &p.data);
        }
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        for (m, v) in self.first_moment.iter().zip(&self.second_moment) {
            put_f64s(&mut out, m);
            put_f64s(&mut out, v);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != QCKPT_MAGIC {
            return Err(format!("bad magic {magic:?}"));
        }
        let version = r.u32()?;
        if version != QCKPT_VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let n = r.len()?;
        let config: RunConfig = serde_json::from_slice(r.take(n)?).map_err(|e| format!("config echo: {e}"))?;
        let epoch = r.u64()?;
        let tag = r.u32()?;
        let dtype = DType::from_tag(tag).ok_or_else(|| format!("unknown dtype tag {tag}"))?;
        let best_val = r.f64()?;
        let count = r.len()?;
        let mut params = Vec::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| e.to_string())?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<std::result::Result<Vec<_>, _>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or("parameter shape overflows")?;
            let data = r.f64s(numel)?;
            params.push(NamedTensor { name, shape, data });
        }
        let adam_step = r.u64()?;
        let mut first_moment = Vec::with_capacity(count);
        let mut second_moment = Vec::with_capacity(count);
        for p in &params {
            first_moment.push(r.f64s(p.data.len())?);
            second_moment.push(r.f64s(p.data.len())?);
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Checkpoint {
            config,
            epoch,
            dtype,
            best_val,
            params,
            adam_step,
            first_moment,
            second_moment,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        // write-then-rename keeps the previous checkpoint intact on failure
        let tmp = path.with_extension("qckpt.tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(io_err(&tmp))?;
        std::fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes).map_err(|msg| Error::Checkpoint {
            path: path.to_path_buf(),
            msg,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {} (needed {n} more)", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> std::result::Result<usize, String> {
        usize::try_from(self.u64()?).map_err(|e| e.to_string())
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, String> {
        let raw = self.take(n.checked_mul(8).ok_or("length overflows")?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::AdamConfig;

    fn sample() -> Checkpoint {
        let mut cfg = RunConfig::desk();
        cfg.network.feature_channels = 8;
        cfg.network.n_qrsa_blocks = 1;
        let net = Network::<f32>::build(&cfg.network_config(), 3).unwrap();
        let mut adam = Adam::new(AdamConfig::default(), &net.params);
        adam.state.step_count = 17;
        adam.state.first_moment[0].data_mut()[0] = 0.125;
        Checkpoint::capture(&cfg, 5, 1.5, &net.params, &adam)
    }

    #[test]
    fn bytes_round_trip_exactly() {
        let c = sample();
        let back = Checkpoint::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), c.to_bytes());
    }

    #[test]
    fn restores_f32_network_bit_exact() {
        let c = sample();
        let net: Network<f32> = c.network().unwrap();
        let again = Checkpoint::capture(&c.config, 5, 1.5, &net.params, &Adam::new(AdamConfig::default(), &net.params));
        assert_eq!(again.params, c.params);
    }

    #[test]
    fn truncation_and_magic_are_reported() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err().contains("truncated"));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).unwrap_err().contains("magic"));
    }

    #[test]
    fn mismatched_network_is_refused() {
        let mut c = sample();
        c.config.network.feature_channels = 16;
        assert!(matches!(c.network::<f32>(), Err(Error::ConfigMismatch { .. })));
    }
}
