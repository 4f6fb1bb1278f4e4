//! Binary checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! "LPGD" | version u32 | tensor count u32 | tensors
//! optimizer tensor count u32 | tensors
//! step u64
//! ```
//!
//! Each tensor is `name_len u16 | name | rank u8 | extents u32 * rank | f32 data`.
//! Model tensors include `config.*` entries describing the [`ModelConfig`];
//! optimizer tensors are `adam.m.<param>` and `adam.v.<param>`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Model, ModelConfig};
use crate::optim::{AdamState, Moments};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LPGD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub adam: AdamState,
    pub step: u64,
}

fn push_tensor(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
    let len = u16::try_from(name.len())
        .map_err(|_| Error::invalid(format!("tensor name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(
        u8::try_from(shape.len())
            .map_err(|_| Error::invalid(format!("tensor `{name}` has too many dimensions")))?,
    );
    for &e in shape {
        let e = u32::try_from(e).map_err(|_| Error::invalid(format!("extent {e} too large")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

fn u16_words(v: u64) -> Vec<f32> {
    (0..4).map(|i| ((v >> (16 * i)) & 0xffff) as f32).collect()
}

fn config_tensors(cfg: &ModelConfig) -> Vec<(&'static str, Vec<f32>)> {
    vec![
        ("config.aspp_rates", cfg.aspp_rates.iter().map(|&r| r as f32).collect()),
        ("config.base_width", vec![cfg.base_width as f32]),
        ("config.input_channels", vec![cfg.input_channels as f32]),
        (
            "config.input_size",
            vec![cfg.input_size.0 as f32, cfg.input_size.1 as f32],
        ),
        ("config.kappa", vec![cfg.kappa]),
        ("config.seed", u16_words(cfg.seed)),
        ("config.variant", cfg.variant.bytes().map(f32::from).collect()),
    ]
}

impl Checkpoint {
    pub fn new(config: ModelConfig, params: ParamSet, adam: AdamState, step: u64) -> Self {
        Self {
            config,
            params,
            adam,
            step,
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = config_tensors(&self.config);
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&((meta.len() + self.params.len()) as u32).to_le_bytes());
        for (name, data) in &meta {
            push_tensor(&mut out, name, &[data.len()], data)?;
        }
        for (name, t) in self.params.iter() {
            push_tensor(&mut out, name, t.shape(), t.data())?;
        }
        out.extend_from_slice(&((2 * self.adam.moments.len()) as u32).to_le_bytes());
        for (name, m) in &self.adam.moments {
            push_tensor(&mut out, &format!("adam.m.{name}"), &[m.m.len()], &m.m)?;
            push_tensor(&mut out, &format!("adam.v.{name}"), &[m.v.len()], &m.v)?;
        }
        out.extend_from_slice(&self.step.to_le_bytes());
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.bad("missing LPGD magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.bad(&format!("unsupported version {version}, expected {VERSION}")));
        }
        let mut meta = BTreeMap::new();
        let mut params = ParamSet::new();
        for _ in 0..r.u32()? {
            let (name, t) = r.tensor()?;
            if let Some(key) = name.strip_prefix("config.") {
                meta.insert(key.to_string(), t.into_data());
            } else {
                params.insert(name, t);
            }
        }
        let mut moments: BTreeMap<String, (Option<Vec<f32>>, Option<Vec<f32>>)> = BTreeMap::new();
        for _ in 0..r.u32()? {
            let (name, t) = r.tensor()?;
            let (slot, param) = if let Some(p) = name.strip_prefix("adam.m.") {
                (0, p)
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                (1, p)
            } else {
                return Err(r.bad(&format!("unexpected optimizer tensor `{name}`")));
            };
            let e = moments.entry(param.to_string()).or_default();
            if slot == 0 {
                e.0 = Some(t.into_data());
            } else {
                e.1 = Some(t.into_data());
            }
        }
        let step = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        if r.pos != bytes.len() {
            return Err(r.bad("trailing bytes after step counter"));
        }
        let mut adam = AdamState::new();
        adam.t = step;
        for (name, pair) in moments {
            match pair {
                (Some(m), Some(v)) => {
                    adam.moments.insert(name, Moments { m, v });
                }
                _ => return Err(r.bad(&format!("incomplete optimizer moments for `{name}`"))),
            }
        }
        let config = config_from_meta(&meta).map_err(|reason| r.bad(&reason))?;
        Model::new(config.clone())?.check_params(&params)?;
        Ok(Self {
            config,
            params,
            adam,
            step,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

fn config_from_meta(meta: &BTreeMap<String, Vec<f32>>) -> std::result::Result<ModelConfig, String> {
    let get = |k: &str| meta.get(k).ok_or_else(|| format!("missing config.{k}"));
    let int = |v: f32| -> std::result::Result<usize, String> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(format!("config value {v} is not a count"))
        }
    };
    let one = |k: &str| -> std::result::Result<f32, String> {
        match get(k)?.as_slice() {
            [v] => Ok(*v),
            _ => Err(format!("config.{k} must hold one value")),
        }
    };
    let size = get("input_size")?;
    let seed = get("seed")?;
    if size.len() != 2 || seed.len() != 4 {
        return Err("malformed config.input_size or config.seed".into());
    }
    let mut seed_value = 0u64;
    for (i, &w) in seed.iter().enumerate() {
        seed_value |= (int(w)? as u64) << (16 * i);
    }
    let variant: Vec<u8> = get("variant")?
        .iter()
        .map(|&b| int(b).map(|b| b as u8))
        .collect::<std::result::Result<_, _>>()?;
    Ok(ModelConfig {
        input_channels: int(one("input_channels")?)?,
        base_width: int(one("base_width")?)?,
        aspp_rates: get("aspp_rates")?.iter().map(|&r| int(r)).collect::<std::result::Result<_, _>>()?,
        kappa: one("kappa")?,
        input_size: (int(size[0])?, int(size[1])?),
        variant: String::from_utf8(variant).map_err(|_| "config.variant is not UTF-8".to_string())?,
        seed: seed_value,
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn bad(&self, reason: &str) -> Error {
        Error::format(self.path, format!("{reason} (byte {})", self.pos))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.bad("truncated checkpoint")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let len = u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| self.bad("tensor name is not UTF-8"))?
            .to_string();
        let rank = self.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
        let n = n.ok_or_else(|| self.bad("tensor extents overflow"))?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| self.bad("tensor too large"))?)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| self.bad(&e.to_string()))?;
        Ok((name, t))
    }
}
