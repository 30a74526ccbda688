//! Binary model checkpoints.
//!
//! Layout (all integers little-endian, all floats IEEE-754 f64 LE):
//!
//! ```text
//! magic       8 bytes  "LLECKPT1"
//! input_size  u32      in_channels u32      n_layers u32
//! leaky_slope f64      init_seed u64        step u64
//! per layer:  kernel u32, stride u32, out_channels u32,
//!             batch_norm u8, has_dropout u8, dropout_rate f64
//! tensors:    per layer in declared order — weight, bias,
//!             then (if batch_norm) bn scale, shift,
//!             running mean, running variance
//! ```
//!
//! The encoding is a plain field dump with no compression, so
//! `save(load(x))` is byte-identical to `x`. Loaded models come back in
//! eval mode, ready for inference.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use lle_core::predictor::{
    init_predictor, BatchNorm, ConvLayerSpec, Mode, PredictorArch, PredictorModel,
};

const MAGIC: &[u8; 8] = b"LLECKPT1";

pub fn save_model(model: &PredictorModel, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    write_u32(&mut buf, model.arch.input_size as u32);
    write_u32(&mut buf, model.arch.in_channels as u32);
    write_u32(&mut buf, model.arch.layers.len() as u32);
    write_f64(&mut buf, model.arch.leaky_slope);
    write_u64(&mut buf, model.init_seed);
    write_u64(&mut buf, model.step);
    for l in &model.arch.layers {
        write_u32(&mut buf, l.kernel as u32);
        write_u32(&mut buf, l.stride as u32);
        write_u32(&mut buf, l.out_channels as u32);
        buf.push(l.batch_norm as u8);
        buf.push(l.dropout.is_some() as u8);
        write_f64(&mut buf, l.dropout.unwrap_or(0.0));
    }
    for l in &model.layers {
        write_slice(&mut buf, &l.weight);
        write_slice(&mut buf, &l.bias);
        if let Some(bn) = &l.bn {
            write_slice(&mut buf, &bn.scale);
            write_slice(&mut buf, &bn.shift);
            write_slice(&mut buf, &bn.running_mean);
            write_slice(&mut buf, &bn.running_var);
        }
    }
    fs::write(path, &buf).with_context(|| format!("writing checkpoint {}", path.display()))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PredictorModel> {
    let raw = fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let mut cur = Cursor::new(raw.as_slice());
    let mut magic = [0u8; 8];
    cur.read_exact(&mut magic)
        .context("checkpoint too short for magic")?;
    if &magic != MAGIC {
        bail!(
            "bad checkpoint magic in {} (not an LLECKPT1 file)",
            path.display()
        );
    }
    let input_size = read_u32(&mut cur)? as usize;
    let in_channels = read_u32(&mut cur)? as usize;
    let n_layers = read_u32(&mut cur)? as usize;
    if n_layers == 0 || n_layers > 64 {
        bail!("implausible layer count {n_layers} in {}", path.display());
    }
    let leaky_slope = read_f64(&mut cur)?;
    let init_seed = read_u64(&mut cur)?;
    let step = read_u64(&mut cur)?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kernel = read_u32(&mut cur)? as usize;
        let stride = read_u32(&mut cur)? as usize;
        let out_channels = read_u32(&mut cur)? as usize;
        let batch_norm = read_u8(&mut cur)? != 0;
        let has_dropout = read_u8(&mut cur)? != 0;
        let rate = read_f64(&mut cur)?;
        layers.push(ConvLayerSpec {
            kernel,
            stride,
            out_channels,
            batch_norm,
            dropout: has_dropout.then_some(rate),
        });
    }
    let arch = PredictorArch {
        input_size,
        in_channels,
        layers,
        leaky_slope,
    };
    // allocate correctly-shaped tensors, then overwrite from the file
    let mut model = init_predictor(arch, init_seed)?;
    model.step = step;
    model.mode = Mode::Eval;
    for l in &mut model.layers {
        read_into(&mut cur, &mut l.weight)?;
        read_into(&mut cur, &mut l.bias)?;
        if let Some(BatchNorm {
            scale,
            shift,
            running_mean,
            running_var,
        }) = l.bn.as_mut()
        {
            read_into(&mut cur, scale)?;
            read_into(&mut cur, shift)?;
            read_into(&mut cur, running_mean)?;
            read_into(&mut cur, running_var)?;
        }
    }
    if cur.position() != raw.len() as u64 {
        bail!(
            "trailing bytes in checkpoint {} ({} of {})",
            path.display(),
            cur.position(),
            raw.len()
        );
    }
    Ok(model)
}

fn write_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn write_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn write_f64(buf: &mut Vec<u8>, v: f64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn write_slice(buf: &mut Vec<u8>, s: &[f64]) {
    for v in s {
        write_f64(buf, *v);
    }
}

fn read_u8(cur: &mut Cursor<&[u8]>) -> Result<u8> {
    let mut b = [0u8; 1];
    cur.read_exact(&mut b).context("truncated checkpoint")?;
    Ok(b[0])
}

fn read_u32(cur: &mut Cursor<&[u8]>) -> Result<u32> {
    let mut b = [0u8; 4];
    cur.read_exact(&mut b).context("truncated checkpoint")?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(cur: &mut Cursor<&[u8]>) -> Result<u64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b).context("truncated checkpoint")?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(cur: &mut Cursor<&[u8]>) -> Result<f64> {
    let mut b = [0u8; 8];
    cur.read_exact(&mut b).context("truncated checkpoint")?;
    Ok(f64::from_le_bytes(b))
}

fn read_into(cur: &mut Cursor<&[u8]>, dst: &mut [f64]) -> Result<()> {
    for v in dst.iter_mut() {
        *v = read_f64(cur)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_save_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = init_predictor(PredictorArch::canonical(32), 17).unwrap();
        // dirty some state so the file isn't all-default
        model.layers[0].bn.as_mut().unwrap().running_mean[0] = 0.25;
        model.step = 42;
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        save_model(&model, &p1).unwrap();
        let loaded = load_model(&p1).unwrap();
        assert_eq!(loaded.step, 42);
        assert_eq!(loaded.mode, Mode::Eval);
        assert_eq!(loaded.arch, model.arch);
        assert_eq!(loaded.layers, model.layers);
        save_model(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.ckpt");
        std::fs::write(&p, b"not a checkpoint").unwrap();
        assert!(load_model(&p).is_err());
        let model = init_predictor(PredictorArch::canonical(16), 1).unwrap();
        let p = dir.path().join("trunc.ckpt");
        save_model(&model, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 9]).unwrap();
        assert!(load_model(&p).is_err());
    }
}
