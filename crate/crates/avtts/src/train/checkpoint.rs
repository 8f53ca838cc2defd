//! Binary checkpoint format. Layout (all integers little-endian):
//! magic `AVTTS1`, version u32, stage u32, step u64, then length-prefixed
//! JSON blobs for the model config, feature stats, and optimizer config,
//! followed by the named parameter tensors and Adam moment tensors.
//! Save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::dataset::cache::FeatureStats;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};
use crate::nn::adam::AdamConfig;
use crate::nn::{AdamState, Tensor};

const MAGIC: &[u8; 6] = b"AVTTS1";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub stage: u32,
    pub step: u64,
    pub config: ModelConfig,
    pub stats: FeatureStats,
    pub tensors: BTreeMap<String, Tensor<f32>>,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn params(&self) -> Result<ModelParams> {
        ModelParams::from_tensors(self.config.clone(), self.tensors.clone())
    }
}

fn write_json<W: Write>(w: &mut W, value: &impl serde::Serialize) -> Result<()> {
    let bytes = serde_json::to_vec(value)?;
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(&bytes)?;
    Ok(())
}

fn read_json<R: Read, T: serde::de::DeserializeOwned>(r: &mut R) -> Result<T> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut bytes = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut bytes)?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn write_tensor<W: Write>(w: &mut W, name: &str, t: &Tensor<f32>) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &x in t.data() {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<(String, Tensor<f32>)> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut name)?;
    let name = String::from_utf8(name)
        .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".to_string()))?;
    r.read_exact(&mut len)?;
    let ndim = u32::from_le_bytes(len) as usize;
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        let mut d = [0u8; 8];
        r.read_exact(&mut d)?;
        shape.push(u64::from_le_bytes(d) as usize);
    }
    let numel: usize = shape.iter().product();
    let mut data = Vec::with_capacity(numel);
    let mut buf = [0u8; 4];
    for _ in 0..numel {
        r.read_exact(&mut buf)?;
        data.push(f32::from_le_bytes(buf));
    }
    Ok((name, Tensor::new(shape, data)))
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&ckpt.stage.to_le_bytes())?;
    w.write_all(&ckpt.step.to_le_bytes())?;
    write_json(&mut w, &ckpt.config)?;
    write_json(&mut w, &ckpt.stats)?;
    write_json(&mut w, &ckpt.adam.config)?;
    w.write_all(&ckpt.adam.step.to_le_bytes())?;

    w.write_all(&(ckpt.tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &ckpt.tensors {
        write_tensor(&mut w, name, t)?;
    }
    w.write_all(&(ckpt.adam.moments.len() as u32).to_le_bytes())?;
    for (name, (m, v)) in &ckpt.adam.moments {
        write_tensor(&mut w, name, m)?;
        write_tensor(&mut w, name, v)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?;
    let mut r = std::io::BufReader::new(file);
    let fail = |what: &str| Error::Checkpoint(format!("{}: truncated {what}", path.display()));

    let mut magic = [0u8; 6];
    r.read_exact(&mut magic).map_err(|_| fail("header"))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint (bad magic)",
            path.display()
        )));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf).map_err(|_| fail("version"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    r.read_exact(&mut u32buf).map_err(|_| fail("stage"))?;
    let stage = u32::from_le_bytes(u32buf);
    r.read_exact(&mut u64buf).map_err(|_| fail("step"))?;
    let step = u64::from_le_bytes(u64buf);

    let config: ModelConfig = read_json(&mut r).map_err(|_| fail("model config"))?;
    let stats: FeatureStats = read_json(&mut r).map_err(|_| fail("feature stats"))?;
    let adam_config: AdamConfig = read_json(&mut r).map_err(|_| fail("optimizer config"))?;
    r.read_exact(&mut u64buf).map_err(|_| fail("optimizer step"))?;
    let adam_step = u64::from_le_bytes(u64buf);

    r.read_exact(&mut u32buf).map_err(|_| fail("tensor count"))?;
    let n_tensors = u32::from_le_bytes(u32buf);
    let mut tensors = BTreeMap::new();
    for _ in 0..n_tensors {
        let (name, t) = read_tensor(&mut r).map_err(|_| fail("parameter tensor"))?;
        tensors.insert(name, t);
    }
    r.read_exact(&mut u32buf).map_err(|_| fail("moment count"))?;
    let n_moments = u32::from_le_bytes(u32buf);
    let mut moments = BTreeMap::new();
    for _ in 0..n_moments {
        let (name, m) = read_tensor(&mut r).map_err(|_| fail("moment tensor"))?;
        let (name2, v) = read_tensor(&mut r).map_err(|_| fail("moment tensor"))?;
        if name != name2 {
            return Err(Error::Checkpoint(format!(
                "moment pair mismatch: '{name}' vs '{name2}'"
            )));
        }
        moments.insert(name, (m, v));
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint(format!(
            "{}: trailing bytes after checkpoint payload",
            path.display()
        )));
    }

    let mut adam = AdamState::new(adam_config);
    adam.step = adam_step;
    adam.moments = moments;
    Ok(Checkpoint {
        stage,
        step,
        config,
        stats,
        tensors,
        adam,
    })
}
