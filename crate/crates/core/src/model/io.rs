//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "RESEGMDL"
//! version      u32
//! config       u32 length + UTF-8 JSON (ModelConfig)
//! meta         u32 length + UTF-8 JSON (free-form run metadata, `null` if absent)
//! n_params     u32
//! record*      id (u32 length + UTF-8), dtype u8 (0 = f32, 1 = f64),
//!              rank u32, rank × u64 extents, raw values
//! has_opt      u8 (0 or 1)
//! [rho f64, eps f64, n u32, record*]   optimizer accumulators when has_opt = 1
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::{DType, Scalar, Tensor};
use crate::training::AdadeltaState;

pub const MAGIC: &[u8; 8] = b"RESEGMDL";
pub const FORMAT_VERSION: u32 = 1;

/// A model with the optional optimizer state and run metadata stored next to it.
#[derive(Clone, Debug)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub optimizer: Option<AdadeltaState<T>>,
    pub meta: serde_json::Value,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_record<T: Scalar>(out: &mut Vec<u8>, id: &str, t: &Tensor<T>) {
    put_str(out, id);
    out.push(T::DTYPE.code());
    put_u32(out, t.rank() as u32);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

pub fn encode_checkpoint<T: Scalar>(
    model: &Model<T>,
    optimizer: Option<&AdadeltaState<T>>,
    meta: &serde_json::Value,
) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_str(&mut out, &serde_json::to_string(model.config()).expect("config serializes"));
    put_str(&mut out, &meta.to_string());
    let params = model.params();
    put_u32(&mut out, params.len() as u32);
    for (info, t) in &params {
        put_record(&mut out, &info.id, t);
    }
    match optimizer {
        Some(opt) => {
            out.push(1);
            out.extend_from_slice(&opt.rho.to_le_bytes());
            out.extend_from_slice(&opt.eps.to_le_bytes());
            put_u32(&mut out, 2 * params.len() as u32);
            for ((info, _), (sg, su)) in params.iter().zip(opt.sq_grad.iter().zip(&opt.sq_update)) {
                put_record(&mut out, &format!("{}#sq_grad", info.id), sg);
                put_record(&mut out, &format!("{}#sq_update", info.id), su);
            }
        }
        None => out.push(0),
    }
    out
}

pub fn save_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    model: &Model<T>,
    optimizer: Option<&AdadeltaState<T>>,
    meta: &serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(model, optimizer, meta);
    // write-then-rename so an interrupted save never leaves a torn file
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_model<T: Scalar>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    save_checkpoint(path, model, None, &serde_json::Value::Null)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated {
                path: self.path.clone(),
                reason: format!("needed {n} bytes for {what} at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.format(format!("{what} is not UTF-8")))
    }

    fn format(&self, reason: String) -> Error {
        Error::Format {
            path: self.path.clone(),
            reason,
        }
    }

    fn record<T: Scalar>(&mut self) -> Result<(String, Tensor<T>)> {
        let id = self.string("parameter id")?;
        let code = self.u8("dtype")?;
        let dtype = DType::from_code(code).ok_or_else(|| self.format(format!("{id}: unknown dtype {code}")))?;
        let rank = self.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(self.format(format!("{id}: invalid rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u64("extent")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n > 0)
            .ok_or_else(|| self.format(format!("{id}: invalid shape {shape:?}")))?;
        let width = dtype.size();
        let raw = self.take(n.saturating_mul(width), &format!("values of {id}"))?;
        let data: Vec<T> = match dtype {
            DType::F32 => raw.chunks_exact(4).map(|b| T::from_f64(f32::read_le(b) as f64)).collect(),
            DType::F64 => raw.chunks_exact(8).map(|b| T::from_f64(f64::read_le(b))).collect(),
        };
        Ok((id, Tensor::new(shape, data)?))
    }
}

/// Decodes a container; `path` is only used in error messages.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8], path: &str) -> Result<Checkpoint<T>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path: path.to_string(),
    };
    let magic = r.take(MAGIC.len(), "magic")?;
    if magic != MAGIC {
        return Err(r.format("bad magic bytes; not a model file".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let config: ModelConfig = serde_json::from_str(&r.string("config")?)
        .map_err(|e| r.format(format!("config block: {e}")))?;
    let meta: serde_json::Value =
        serde_json::from_str(&r.string("meta")?).map_err(|e| r.format(format!("meta block: {e}")))?;
    let n = r.u32("parameter count")? as usize;
    let mut records = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        records.push(r.record::<T>()?);
    }
    let mut model = Model::<T>::build(&config, config.seed)?;
    assign(&mut model, records)?;

    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let rho = r.f64("rho")?;
            let eps = r.f64("eps")?;
            let count = r.u32("optimizer record count")? as usize;
            let params = model.params();
            if count != 2 * params.len() {
                return Err(r.format(format!(
                    "optimizer holds {count} accumulators for {} parameters",
                    params.len()
                )));
            }
            let mut sq_grad = Vec::with_capacity(params.len());
            let mut sq_update = Vec::with_capacity(params.len());
            for (info, t) in &params {
                for (suffix, dst) in [("sq_grad", &mut sq_grad), ("sq_update", &mut sq_update)] {
                    let (id, acc) = r.record::<T>()?;
                    if id != format!("{}#{suffix}", info.id) {
                        return Err(r.format(format!("unexpected optimizer record {id}")));
                    }
                    if acc.shape() != t.shape() {
                        return Err(Error::ParamShape {
                            id,
                            stored: acc.shape().to_vec(),
                            expected: t.shape().to_vec(),
                        });
                    }
                    dst.push(acc);
                }
            }
            Some(AdadeltaState {
                rho,
                eps,
                sq_grad,
                sq_update,
            })
        }
        other => return Err(r.format(format!("invalid optimizer flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(r.format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        meta,
    })
}

fn assign<T: Scalar>(model: &mut Model<T>, records: Vec<(String, Tensor<T>)>) -> Result<()> {
    let mut records: Vec<Option<(String, Tensor<T>)>> = records.into_iter().map(Some).collect();
    let mut targets = model.params_mut();
    // validate everything before touching the model
    let mut plan = Vec::with_capacity(targets.len());
    for (ti, (info, t)) in targets.iter().enumerate() {
        let pos = records
            .iter()
            .position(|r| r.as_ref().is_some_and(|(id, _)| *id == info.id))
            .ok_or_else(|| Error::MissingParam(info.id.clone()))?;
        let stored = records[pos].as_ref().expect("present").1.shape();
        if stored != t.shape() {
            return Err(Error::ParamShape {
                id: info.id.clone(),
                stored: stored.to_vec(),
                expected: t.shape().to_vec(),
            });
        }
        plan.push((ti, pos));
    }
    if let Some(extra) = records
        .iter()
        .enumerate()
        .find(|(i, r)| r.is_some() && !plan.iter().any(|(_, p)| p == i))
    {
        return Err(Error::MissingParam(format!(
            "{} (stored but not part of the architecture)",
            extra.1.as_ref().expect("present").0
        )));
    }
    for (ti, pos) in plan {
        let (_, value) = records[pos].take().expect("each record used once");
        *targets[ti].1 = value;
    }
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Model<T>> {
    Ok(load_checkpoint(path)?.model)
}

/// Replaces the parameters of `model` with those stored at `path`, failing
/// without modification if any identifier or shape disagrees.
pub fn load_params_into<T: Scalar>(model: &mut Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(MAGIC.len(), "magic")? != MAGIC {
        return Err(r.format("bad magic bytes; not a model file".into()));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    r.string("config")?;
    r.string("meta")?;
    let n = r.u32("parameter count")? as usize;
    let mut records = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        records.push(r.record::<T>()?);
    }
    assign(model, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn tiny() -> Model<f32> {
        Model::build(&ModelConfig::tiny(), 3).unwrap()
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = tiny();
        let bytes = encode_checkpoint(&m, None, &serde_json::json!({"epoch": 4}));
        let back: Checkpoint<f32> = decode_checkpoint(&bytes, "mem").unwrap();
        assert_eq!(back.meta["epoch"], 4);
        assert!(back.optimizer.is_none());
        for ((a, x), (b, y)) in m.params().iter().zip(back.model.params()) {
            assert_eq!(a, &b);
            assert!(x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        assert_eq!(back.model.config(), m.config());
    }

    #[test]
    fn optimizer_state_round_trips() {
        let m = tiny();
        let mut opt = AdadeltaState::new(&m);
        for t in opt.sq_grad.iter_mut() {
            *t = t.map(|_| 0.25);
        }
        let bytes = encode_checkpoint(&m, Some(&opt), &serde_json::Value::Null);
        let back: Checkpoint<f32> = decode_checkpoint(&bytes, "mem").unwrap();
        assert_eq!(back.optimizer.unwrap(), opt);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode_checkpoint(&tiny(), None, &serde_json::Value::Null);
        bytes[0] = b'X';
        assert!(matches!(decode_checkpoint::<f32>(&bytes, "mem"), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_and_version() {
        let bytes = encode_checkpoint(&tiny(), None, &serde_json::Value::Null);
        for cut in [4, 12, 40, bytes.len() - 1] {
            assert!(
                matches!(decode_checkpoint::<f32>(&bytes[..cut], "mem"), Err(Error::Truncated { .. })),
                "cut {cut}"
            );
        }
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(decode_checkpoint::<f32>(&v, "mem"), Err(Error::Version { found: 9, .. })));
    }

    #[test]
    fn mismatched_architecture_names_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.model");
        save_model(&tiny(), &path).unwrap();
        let mut cfg = ModelConfig::tiny();
        cfg.renet[0].units = 5;
        let mut other: Model<f32> = Model::build(&cfg, 0).unwrap();
        let before = other.clone();
        match load_params_into(&mut other, &path).unwrap_err() {
            Error::ParamShape { id, .. } => assert_eq!(id, "renet.0.down.w_update"),
            e => panic!("unexpected {e}"),
        }
        assert_eq!(other, before);
    }
}
