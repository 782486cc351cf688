//! NPIM model container: magic `NPIM`, version, a layer descriptor table,
//! then the f32 parameter payload in layer order.

use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

use super::{Activation, Attention, Conv2d, Dense, Layer, NetworkModel, PoolKind};

const MAGIC: &[u8; 4] = b"NPIM";
const FORMAT_VERSION: u32 = 1;

const KIND_DENSE: u32 = 0;
const KIND_CONV2D: u32 = 1;
const KIND_ATTENTION: u32 = 2;
const KIND_POOL: u32 = 3;

fn wu32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn save_model(model: &NetworkModel, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    wu32(&mut bytes, FORMAT_VERSION);
    wu32(&mut bytes, model.layers.len() as u32);
    for layer in &model.layers {
        match layer {
            Layer::Dense(d) => {
                wu32(&mut bytes, KIND_DENSE);
                wu32(&mut bytes, d.in_dim as u32);
                wu32(&mut bytes, d.out_dim as u32);
                wu32(&mut bytes, d.activation.tag());
            }
            Layer::Conv2d(c) => {
                wu32(&mut bytes, KIND_CONV2D);
                wu32(&mut bytes, c.in_ch as u32);
                wu32(&mut bytes, c.out_ch as u32);
                wu32(&mut bytes, c.kernel as u32);
                wu32(&mut bytes, c.stride as u32);
                wu32(&mut bytes, c.pad as u32);
                wu32(&mut bytes, c.activation.tag());
            }
            Layer::Attention(a) => {
                wu32(&mut bytes, KIND_ATTENTION);
                wu32(&mut bytes, a.d_model as u32);
                wu32(&mut bytes, a.d_ff as u32);
            }
            Layer::PoolRows(kind) => {
                wu32(&mut bytes, KIND_POOL);
                wu32(&mut bytes, matches!(kind, PoolKind::Sum) as u32);
            }
        }
    }
    for layer in &model.layers {
        for slice in layer.param_slices() {
            for &v in slice {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<NetworkModel> {
    let mut file = std::fs::File::open(path)?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Format("model file truncated".into()));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let ru32 = |pos: &mut usize| -> Result<u32> {
        let s = take(pos, 4)?;
        Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
    };

    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::Format("bad model magic".into()));
    }
    let version = ru32(&mut pos)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let n_layers = ru32(&mut pos)? as usize;
    if n_layers > 4096 {
        return Err(Error::Format(format!("implausible layer count {n_layers}")));
    }

    // Descriptor table first; the payload is validated against it before any
    // parameter is accepted.
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let kind = ru32(&mut pos)?;
        let layer = match kind {
            KIND_DENSE => {
                let in_dim = ru32(&mut pos)? as usize;
                let out_dim = ru32(&mut pos)? as usize;
                let activation = Activation::from_tag(ru32(&mut pos)?)?;
                Layer::Dense(Dense {
                    in_dim,
                    out_dim,
                    activation,
                    w: vec![0.0; in_dim * out_dim],
                    b: vec![0.0; out_dim],
                })
            }
            KIND_CONV2D => {
                let in_ch = ru32(&mut pos)? as usize;
                let out_ch = ru32(&mut pos)? as usize;
                let kernel = ru32(&mut pos)? as usize;
                let stride = ru32(&mut pos)? as usize;
                let pad = ru32(&mut pos)? as usize;
                let activation = Activation::from_tag(ru32(&mut pos)?)?;
                if kernel == 0 || stride == 0 {
                    return Err(Error::Format("conv2d descriptor with zero kernel/stride".into()));
                }
                Layer::Conv2d(Conv2d {
                    in_ch,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                    activation,
                    w: vec![0.0; out_ch * in_ch * kernel * kernel],
                    b: vec![0.0; out_ch],
                })
            }
            KIND_ATTENTION => {
                let d_model = ru32(&mut pos)? as usize;
                let d_ff = ru32(&mut pos)? as usize;
                let dd = d_model * d_model;
                Layer::Attention(Attention {
                    d_model,
                    d_ff,
                    wq: vec![0.0; dd],
                    bq: vec![0.0; d_model],
                    wk: vec![0.0; dd],
                    bk: vec![0.0; d_model],
                    wv: vec![0.0; dd],
                    bv: vec![0.0; d_model],
                    wo: vec![0.0; dd],
                    bo: vec![0.0; d_model],
                    w1: vec![0.0; d_ff * d_model],
                    b1: vec![0.0; d_ff],
                    w2: vec![0.0; d_model * d_ff],
                    b2: vec![0.0; d_model],
                })
            }
            KIND_POOL => {
                let sum = ru32(&mut pos)?;
                Layer::PoolRows(if sum == 1 { PoolKind::Sum } else { PoolKind::Max })
            }
            k => return Err(Error::Format(format!("unknown layer kind {k}"))),
        };
        layers.push(layer);
    }

    let mut model = NetworkModel::new(layers);
    let expected_payload = model.param_count() * 4;
    if bytes.len() - pos != expected_payload {
        return Err(Error::Format(format!(
            "payload size {} does not match descriptor table ({} expected)",
            bytes.len() - pos,
            expected_payload
        )));
    }
    for layer in &mut model.layers {
        for slice in layer.param_slices_mut() {
            for v in slice.iter_mut() {
                let s = take(&mut pos, 4)?;
                *v = f32::from_le_bytes([s[0], s[1], s[2], s[3]]) as f64;
            }
        }
    }
    Ok(model)
}
