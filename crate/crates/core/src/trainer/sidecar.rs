//! MIMX v1 model sidecar, little-endian:
//!
//! ```text
//! "MIMX" | u32 version | u32 num_models
//! num_models x (
//!     u16 len, utf-8 class name
//!     u8 variant (0 linear, 1 polyhedral, 2 hidden) | u32 M | u32 J or L (1 for linear)
//!     u32 num_params, f32 x num_params            (ModelVariant::parameters layout)
//!     u32 num_restarts, f32 x num_restarts        (final losses, NaN = failed restart)
//!     u32 selected_restart
//!     u32 len, utf-8 JSON TrainConfig )
//! ```

use std::fs;
use std::path::Path;

use super::{ModelSet, TrainConfig, TrainedClassModel};
use crate::binio::{count_u32, put_f32, put_str, put_u32, Reader};
use crate::error::{Error, Result};
use crate::milmodels::{ModelVariant, VariantSpec};
use crate::scalar::Scalar;

pub const MIMX_MAGIC: &[u8; 4] = b"MIMX";
pub const MIMX_VERSION: u32 = 1;

pub fn write_models<T: Scalar>(models: &ModelSet<T>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_models(models)?)?;
    Ok(())
}

pub fn read_models<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelSet<T>> {
    decode_models(&fs::read(path)?)
}

pub fn encode_models<T: Scalar>(models: &ModelSet<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MIMX_MAGIC);
    put_u32(&mut out, MIMX_VERSION);
    put_u32(&mut out, count_u32(models.len(), "model count")?);
    for m in models.values() {
        put_str(&mut out, &m.class_name)?;
        let (tag, size) = match m.model.spec() {
            VariantSpec::Linear => (0u8, 1),
            VariantSpec::Polyhedral { hyperplanes } => (1, hyperplanes),
            VariantSpec::Hidden { width } => (2, width),
        };
        out.push(tag);
        put_u32(&mut out, count_u32(m.model.dim(), "dimension")?);
        put_u32(&mut out, count_u32(size, "model size")?);
        let params = m.model.parameters();
        put_u32(&mut out, count_u32(params.len(), "parameter count")?);
        for p in params {
            put_f32(&mut out, p.as_f32());
        }
        put_u32(&mut out, count_u32(m.restart_losses.len(), "restart count")?);
        for loss in &m.restart_losses {
            put_f32(&mut out, loss.map_or(f32::NAN, |l| l as f32));
        }
        put_u32(&mut out, count_u32(m.selected_restart, "restart index")?);
        let json = serde_json::to_vec(&m.config)?;
        put_u32(&mut out, count_u32(json.len(), "config length")?);
        out.extend_from_slice(&json);
    }
    Ok(out)
}

pub fn decode_models<T: Scalar>(bytes: &[u8]) -> Result<ModelSet<T>> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MIMX_MAGIC {
        return Err(Error::Format("missing MIMX magic".into()));
    }
    let version = r.u32()?;
    if version != MIMX_VERSION {
        return Err(Error::Format(format!("unsupported MIMX version {version}")));
    }
    let count = r.u32()? as usize;
    let mut models = ModelSet::new();
    for _ in 0..count {
        let class_name = r.string()?;
        let tag = r.u8()?;
        let dim = r.u32()? as usize;
        let size = r.u32()? as usize;
        let spec = match tag {
            0 => VariantSpec::Linear,
            1 => VariantSpec::Polyhedral { hyperplanes: size },
            2 => VariantSpec::Hidden { width: size },
            t => return Err(Error::Format(format!("unknown model variant tag {t}"))),
        };
        if dim == 0 || size == 0 {
            return Err(Error::Format("model dimensions must be positive".into()));
        }
        let mut model = ModelVariant::<T>::zeros(spec, dim);
        let n = r.u32()? as usize;
        if n != model.param_count() {
            return Err(Error::Format(format!(
                "{class_name:?}: {n} parameters stored, variant needs {}",
                model.param_count()
            )));
        }
        let params = (0..n)
            .map(|_| r.f32().map(T::from_f32_bits))
            .collect::<Result<Vec<_>>>()?;
        model.set_parameters(&params)?;
        let restarts = r.u32()? as usize;
        let restart_losses = (0..restarts)
            .map(|_| r.f32().map(|l| (!l.is_nan()).then_some(l as f64)))
            .collect::<Result<Vec<_>>>()?;
        let selected_restart = r.u32()? as usize;
        if selected_restart >= restarts {
            return Err(Error::Format("selected restart out of range".into()));
        }
        let json_len = r.u32()? as usize;
        let config: TrainConfig = serde_json::from_slice(r.take(json_len)?)?;
        models.insert(
            class_name.clone(),
            TrainedClassModel {
                class_name,
                model,
                restart_losses,
                selected_restart,
                config,
            },
        );
    }
    if r.remaining() != 0 {
        return Err(Error::Format("trailing bytes after models".into()));
    }
    Ok(models)
}
