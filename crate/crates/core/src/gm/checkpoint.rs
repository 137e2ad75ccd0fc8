//! Model checkpoint container.
//!
//! Layout (little-endian): magic `NLGM`, version `u16`, `d` and `C` as `u32`,
//! head support `u8`; then for the clean classifier, noisy head and posterior
//! in turn: layer count `u32`, the `layers + 1` widths as `u32`, and per layer
//! a weight block and a bias block, each a `u32` element count followed by
//! `f64` values. The eps-logit comes last as a one-element block.

use std::path::Path;

use super::{GraphicalModel, HeadSupport, NoiseRate};
use crate::datagen::io::Reader;
use crate::error::{Error, Result};
use crate::numkit::MlpParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NLGM";
pub const CHECKPOINT_VERSION: u16 = 1;

fn put_block(out: &mut Vec<u8>, values: &[f64]) {
    out.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_net(out: &mut Vec<u8>, net: &MlpParams) {
    out.extend_from_slice(&(net.num_layers() as u32).to_le_bytes());
    for &w in net.widths() {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    for layer in net.layers() {
        put_block(out, layer.weights);
        put_block(out, layer.bias);
    }
}

pub fn write_checkpoint(model: &GraphicalModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(model.num_classes() as u32).to_le_bytes());
    out.push(model.noisy.support.code());
    put_net(&mut out, &model.clean.net);
    put_net(&mut out, &model.noisy.net);
    put_net(&mut out, &model.posterior.net);
    put_block(&mut out, &[model.rate.logit]);
    out
}

fn get_block(r: &mut Reader<'_>, expected: usize, what: &str) -> Result<Vec<f64>> {
    let at = r.pos();
    let len = r.u32(what)? as usize;
    if len != expected {
        return Err(Error::Parse {
            offset: at,
            reason: format!("{what}: block length {len}, expected {expected}"),
        });
    }
    r.f64s(len, what)
}

fn get_net(r: &mut Reader<'_>, what: &str) -> Result<MlpParams> {
    let at = r.pos();
    let layers = r.u32(what)? as usize;
    if layers == 0 || layers > 64 {
        return Err(Error::Parse {
            offset: at,
            reason: format!("{what}: implausible layer count {layers}"),
        });
    }
    let mut widths = Vec::with_capacity(layers + 1);
    for _ in 0..=layers {
        widths.push(r.u32(what)? as usize);
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::Parse {
            offset: at,
            reason: format!("{what}: zero layer width"),
        });
    }
    let mut flat = Vec::new();
    for k in 0..layers {
        flat.extend(get_block(r, widths[k] * widths[k + 1], what)?);
        flat.extend(get_block(r, widths[k + 1], what)?);
    }
    MlpParams::from_flat(&widths, flat).map_err(|e| r.err(format!("{what}: {e}")))
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<GraphicalModel> {
    let mut r = Reader::new(bytes);
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            reason: "bad magic, expected NLGM".into(),
        });
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let d = r.u32("d")? as usize;
    let c = r.u32("C")? as usize;
    let at = r.pos();
    let support = HeadSupport::from_code(r.u8("head support")?).ok_or(Error::Parse {
        offset: at,
        reason: "unknown head support".into(),
    })?;
    let clean = get_net(&mut r, "clean classifier")?;
    let noisy = get_net(&mut r, "noisy head")?;
    let posterior = get_net(&mut r, "posterior")?;
    let logit = get_block(&mut r, 1, "eps logit")?[0];
    r.finish()?;
    if clean.d_in() != d || clean.d_out() != c {
        return Err(Error::Parse {
            offset: 10,
            reason: format!("header dims ({d}, {c}) disagree with the clean classifier"),
        });
    }
    GraphicalModel::from_parts(clean, noisy, support, NoiseRate { logit }, posterior)
        .map_err(|e| r.err(e.to_string()))
}

pub fn save_checkpoint(model: &GraphicalModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GraphicalModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}
