//! Text header with a named tensor registry, then little-endian f64 values
//! in registry order.

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelError, TangoModel};
use crate::diffcore::{ParamSet, Tensor};

const MAGIC: &str = "REVERSYM-CHECKPOINT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn from_model(m: &TangoModel) -> Self {
        Self { config: m.config.clone(), params: m.params.clone() }
    }

    pub fn into_model(self) -> Result<TangoModel, ModelError> {
        TangoModel::from_params(self.config, self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut head = format!(
            "{}\nconfig {} {} {} {} {} {} {} {} {:.16e} {}\n",
            MAGIC,
            c.obs_dim,
            c.hidden_dim,
            c.encoder_layers,
            c.pool_hidden,
            c.encoder_out,
            c.augment_dim,
            c.ode_hidden,
            c.decoder_layers,
            c.frame_step,
            c.substeps
        );
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            head.push_str(&format!("tensor {} {}\n", name, dims.join("x")));
        }
        head.push_str("end\n");
        let mut out = head.into_bytes();
        for t in self.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self, ModelError> {
        let err = |msg: String| ModelError::Checkpoint { path: path.into(), msg };
        let mut pos = 0;
        let mut next_line = || -> Result<&str, ModelError> {
            let rest = &bytes[pos..];
            let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| err("truncated header".into()))?;
            pos += nl + 1;
            std::str::from_utf8(&rest[..nl]).map_err(|_| err("header is not UTF-8".into()))
        };
        if next_line()? != MAGIC {
            return Err(err("bad magic line".into()));
        }
        let cfg_line = next_line()?.to_string();
        let f: Vec<&str> = cfg_line.split_whitespace().collect();
        if f.len() != 11 || f[0] != "config" {
            return Err(err("bad config line".into()));
        }
        let u = |i: usize| f[i].parse::<usize>().map_err(|_| err(format!("bad config field '{}'", f[i])));
        let config = ModelConfig {
            obs_dim: u(1)?,
            hidden_dim: u(2)?,
            encoder_layers: u(3)?,
            pool_hidden: u(4)?,
            encoder_out: u(5)?,
            augment_dim: u(6)?,
            ode_hidden: u(7)?,
            decoder_layers: u(8)?,
            frame_step: f[9].parse().map_err(|_| err(format!("bad frame step '{}'", f[9])))?,
            substeps: u(10)?,
        };
        let mut registry = Vec::new();
        loop {
            let line = next_line()?;
            if line == "end" {
                break;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 3 || parts[0] != "tensor" {
                return Err(err(format!("bad registry line '{}'", line)));
            }
            let shape = parts[2]
                .split('x')
                .map(|d| d.parse::<usize>().map_err(|_| err(format!("bad shape '{}'", parts[2]))))
                .collect::<Result<Vec<_>, _>>()?;
            registry.push((parts[1].to_string(), shape));
        }
        let body = &bytes[pos..];
        let total: usize = registry.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
        if body.len() != total * 8 {
            return Err(err(format!("expected {} values, found {} bytes", total, body.len())));
        }
        let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut params = ParamSet::new();
        for (name, shape) in registry {
            let n = shape.iter().product();
            let data: Vec<f64> = values.by_ref().take(n).collect();
            params.push(name, Tensor::new(shape, data).map_err(|e| err(e.to_string()))?);
        }
        Ok(Self { config, params })
    }
}

pub fn write_checkpoint(model: &TangoModel, path: &Path) -> Result<(), ModelError> {
    fs::write(path, Checkpoint::from_model(model).to_bytes())
        .map_err(|e| ModelError::Checkpoint { path: path.display().to_string(), msg: e.to_string() })
}

pub fn read_checkpoint(path: &Path) -> Result<TangoModel, ModelError> {
    let name = path.display().to_string();
    let bytes = fs::read(path).map_err(|e| ModelError::Checkpoint { path: name.clone(), msg: e.to_string() })?;
    Checkpoint::from_bytes(&bytes, &name)?.into_model()
}
