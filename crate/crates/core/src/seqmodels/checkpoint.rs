//! Little-endian binary checkpoint. Layout:
//!
//! ```text
//! "DEKC" | version u8 | architecture u8
//! hidden u32 | p u32 | epochs u32 | batch u32
//! lr f64 | beta1 f64 | beta2 f64 | eps f64 | seed u64
//! scale.min f64 | scale.max f64
//! n_epochs u32 | loss f64 * n_epochs
//! n_params u32 | { name_len u16 | name utf8 | rows u32 | cols u32 | f64 * rows*cols } * n_params
//! ```

use std::io::{Read, Write};

use super::{Architecture, FittedModel, ModelSpec, Params};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::series::ScaleParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DEKC";
pub const CHECKPOINT_VERSION: u8 = 1;

fn u32_of(n: usize) -> Result<[u8; 4]> {
    u32::try_from(n)
        .map(u32::to_le_bytes)
        .map_err(|_| Error::MalformedInput(format!("{n} does not fit a checkpoint field")))
}

pub fn write_checkpoint<W: Write>(model: &FittedModel, mut w: W) -> Result<()> {
    let s = &model.spec;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&[CHECKPOINT_VERSION, s.architecture.code()])?;
    for n in [s.hidden_size, model.p, s.epochs, s.batch_size] {
        w.write_all(&u32_of(n)?)?;
    }
    for v in [s.learning_rate, s.beta1, s.beta2, s.eps] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&s.seed.to_le_bytes())?;
    w.write_all(&model.scale.min.to_le_bytes())?;
    w.write_all(&model.scale.max.to_le_bytes())?;
    w.write_all(&u32_of(model.loss_history.len())?)?;
    for v in &model.loss_history {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&u32_of(model.params.tensors.len())?)?;
    for (name, t) in model.params.names.iter().zip(&model.params.tensors) {
        let len = u16::try_from(name.len())
            .map_err(|_| Error::MalformedInput(format!("parameter name too long: {name}")))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&u32_of(t.rows())?)?;
        w.write_all(&u32_of(t.cols())?)?;
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|_| Error::MalformedInput("truncated checkpoint".into()))?;
        Ok(buf)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
}

pub fn read_checkpoint<R: Read>(r: R) -> Result<FittedModel> {
    let mut r = Reader { inner: r };
    if &r.bytes::<4>()? != CHECKPOINT_MAGIC {
        return Err(Error::MalformedInput("not a model checkpoint".into()));
    }
    let [version, code] = r.bytes::<2>()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::MalformedInput(format!("unsupported checkpoint version {version}")));
    }
    let architecture = Architecture::from_code(code)
        .ok_or_else(|| Error::MalformedInput(format!("unknown architecture code {code}")))?;
    let (hidden_size, p, epochs, batch_size) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
    let spec = ModelSpec {
        architecture,
        hidden_size,
        epochs,
        batch_size,
        learning_rate: r.f64()?,
        beta1: r.f64()?,
        beta2: r.f64()?,
        eps: r.f64()?,
        seed: u64::from_le_bytes(r.bytes()?),
    };
    let scale = ScaleParams {
        min: r.f64()?,
        max: r.f64()?,
    };
    let n_loss = r.u32()?;
    let loss_history = (0..n_loss).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    let n_params = r.u32()?;
    let mut params = Params {
        names: Vec::with_capacity(n_params),
        tensors: Vec::with_capacity(n_params),
    };
    for _ in 0..n_params {
        let len = u16::from_le_bytes(r.bytes()?) as usize;
        let mut name = vec![0u8; len];
        r.inner
            .read_exact(&mut name)
            .map_err(|_| Error::MalformedInput("truncated checkpoint".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::MalformedInput("parameter name is not UTF-8".into()))?;
        let shape = [r.u32()?, r.u32()?];
        let data = (0..shape[0] * shape[1]).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.names.push(name);
        params.tensors.push(Tensor::new(shape, data)?);
    }
    params.check_layout(architecture, hidden_size)?;
    Ok(FittedModel {
        spec,
        p,
        scale,
        params,
        loss_history,
    })
}
