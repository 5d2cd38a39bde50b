use std::path::Path;

use super::{GinParams, MlpParams, Model, Readout};
use crate::autodiff::{ParamSet, Tensor};
use crate::cvae::CvaeParams;
use crate::envelope::{ByteReader, ByteWriter, Envelope};
use crate::{Error, Result};

pub const MODEL_MAGIC: &[u8; 8] = b"E2AMODEL";

/// Model snapshot as stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
    pub model: Model,
    pub cvae: Option<CvaeParams>,
}

pub(crate) fn write_tensors(tensors: &[&Tensor]) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.u64(tensors.len() as u64);
    for t in tensors {
        w.usizes(t.shape());
        w.f64s(t.values());
    }
    w.finish()
}

pub(crate) fn read_tensors(bytes: &[u8]) -> Result<Vec<Tensor>> {
    let mut r = ByteReader::new(bytes);
    let n = r.u64()? as usize;
    let out = (0..n)
        .map(|_| {
            let shape = r.usizes()?;
            let values = r.f64s()?;
            Tensor::new(shape, values).map_err(|e| Error::Format(format!("bad tensor: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes after tensors".into()));
    }
    Ok(out)
}

pub fn checkpoint_to_bytes(ck: &Checkpoint) -> Vec<u8> {
    let mut env = Envelope::new(*MODEL_MAGIC);
    let mut w = ByteWriter::default();
    w.u64(ck.epoch as u64);
    w.u64(ck.seed);
    w.str(&ck.config_hash);
    w.f64(ck.model.gin.eps);
    w.u32(ck.model.gin.readout.code());
    env.push("meta", w.finish());
    env.push("theta", write_tensors(&ck.model.gin.tensors()));
    env.push("phi", write_tensors(&ck.model.head.tensors()));
    if let Some(cvae) = &ck.cvae {
        env.push("cvae", write_tensors(&cvae.tensors()));
    }
    env.to_bytes()
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let env = Envelope::from_bytes(bytes, MODEL_MAGIC)?;
    let mut r = ByteReader::new(env.section("meta")?);
    let epoch = r.u64()? as usize;
    let seed = r.u64()?;
    let config_hash = r.str()?;
    let eps = r.f64()?;
    let readout = Readout::from_code(r.u32()?).ok_or_else(|| Error::Format("unknown readout code".into()))?;
    let gin = GinParams::from_tensors(read_tensors(env.section("theta")?)?, eps, readout)
        .ok_or_else(|| Error::Format("malformed encoder section".into()))?;
    let head = MlpParams::from_tensors(read_tensors(env.section("phi")?)?)
        .ok_or_else(|| Error::Format("malformed head section".into()))?;
    let cvae = if env.has_section("cvae") {
        Some(
            CvaeParams::from_tensors(read_tensors(env.section("cvae")?)?)
                .ok_or_else(|| Error::Format("malformed cvae section".into()))?,
        )
    } else {
        None
    };
    Ok(Checkpoint {
        epoch,
        seed,
        config_hash,
        model: Model { gin, head },
        cvae,
    })
}

pub fn checkpoint_save(ck: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_bytes(ck)).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
