//! `PMPW` parameter files.
//!
//! ```text
//! magic     b"PMPW"
//! version   u32 = 1
//! section   4 bytes: b"VAE_", b"FLOW" or b"DRCT"
//! M         u32            modality count (0 for a velocity field)
//! d         u32            latent dimension (0 for the direct regressor)
//! rank      u32, rank×u32  image shape
//! networks  u32
//! per network:
//!   activation u8 (0 tanh, 1 relu), layers u32, (layers+1)×u32 dims
//! values    f64 for every network in order, each layer as weight
//!           (row-major [out, in]) then bias
//! ```
//!
//! Everything is little-endian.

use std::io::{Read, Write};

use crate::baseline::DirectRegressor;
use crate::error::{Error, Result};
use crate::flow::VelocityField;
use crate::mmvae::MultimodalVae;
use crate::nn::{Activation, Layer, Mlp, Module};
use crate::synth::io::{read_f64, read_u32};
use crate::tensor::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"PMPW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Section {
    Vae,
    Flow,
    Direct,
}

impl Section {
    pub fn tag(self) -> &'static [u8; 4] {
        match self {
            Section::Vae => b"VAE_",
            Section::Flow => b"FLOW",
            Section::Direct => b"DRCT",
        }
    }

    fn from_tag(t: &[u8; 4]) -> Result<Self> {
        [Section::Vae, Section::Flow, Section::Direct]
            .into_iter()
            .find(|s| s.tag() == t)
            .ok_or_else(|| Error::Format(format!("unknown section tag {t:?}")))
    }
}

struct Header {
    modalities: usize,
    latent_dim: usize,
    image_shape: Vec<usize>,
}

fn put_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_section<W: Write>(w: &mut W, section: Section, h: &Header, nets: &[&Mlp]) -> Result<()> {
    w.write_all(WEIGHTS_MAGIC)?;
    w.write_all(&WEIGHTS_VERSION.to_le_bytes())?;
    w.write_all(section.tag())?;
    put_u32(w, h.modalities)?;
    put_u32(w, h.latent_dim)?;
    put_u32(w, h.image_shape.len())?;
    for &s in &h.image_shape {
        put_u32(w, s)?;
    }
    put_u32(w, nets.len())?;
    for n in nets {
        w.write_all(&[n.activation().code()])?;
        put_u32(w, n.layers().len())?;
        for d in n.dims() {
            put_u32(w, d)?;
        }
    }
    for n in nets {
        for p in n.parameters() {
            for v in p.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_section<R: Read>(r: &mut R, want: Section) -> Result<(Header, Vec<Mlp>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != WEIGHTS_MAGIC {
        return Err(Error::Format(format!("bad weights magic {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != WEIGHTS_VERSION {
        return Err(Error::Format(format!("unsupported weights version {version}")));
    }
    let mut tag = [0u8; 4];
    r.read_exact(&mut tag)?;
    let got = Section::from_tag(&tag)?;
    if got != want {
        return Err(Error::Format(format!("expected a {want:?} section, found {got:?}")));
    }
    let modalities = read_u32(r)? as usize;
    let latent_dim = read_u32(r)? as usize;
    let rank = read_u32(r)? as usize;
    if rank > 4 {
        return Err(Error::Format(format!("image rank {rank}")));
    }
    let image_shape = (0..rank).map(|_| read_u32(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
    let count = read_u32(r)? as usize;
    if count > 64 {
        return Err(Error::Format(format!("{count} networks in one file")));
    }
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let mut a = [0u8; 1];
        r.read_exact(&mut a)?;
        let act = Activation::from_code(a[0])?;
        let layers = read_u32(r)? as usize;
        if layers == 0 || layers > 64 {
            return Err(Error::Format(format!("{layers} layers")));
        }
        let dims = (0..=layers).map(|_| read_u32(r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        specs.push((act, dims));
    }
    let mut nets = Vec::with_capacity(count);
    for (act, dims) in specs {
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fin, fout) = (w[0], w[1]);
            let weight = (0..fin * fout).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
            let bias = (0..fout).map(|_| read_f64(r)).collect::<Result<Vec<_>>>()?;
            layers.push(Layer {
                weight: Tensor::new(vec![fout, fin], weight)?,
                bias: Tensor::new(vec![fout], bias)?,
            });
        }
        nets.push(Mlp::from_layers(layers, act)?);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after weights".into()));
    }
    Ok((
        Header {
            modalities,
            latent_dim,
            image_shape,
        },
        nets,
    ))
}

pub fn write_vae<W: Write>(w: &mut W, vae: &MultimodalVae) -> Result<()> {
    let mut nets: Vec<&Mlp> = vae.encoders().iter().collect();
    nets.push(vae.decoder());
    let h = Header {
        modalities: vae.modalities(),
        latent_dim: vae.latent_dim(),
        image_shape: vae.image_shape().to_vec(),
    };
    write_section(w, Section::Vae, &h, &nets)
}

pub fn read_vae<R: Read>(r: &mut R) -> Result<MultimodalVae> {
    let (h, mut nets) = read_section(r, Section::Vae)?;
    if nets.len() != h.modalities + 1 {
        return Err(Error::Format(format!("{} networks for {} modalities", nets.len(), h.modalities)));
    }
    let decoder = nets.pop().expect("checked length");
    let vae = MultimodalVae::from_parts(nets, decoder, h.image_shape)?;
    if vae.latent_dim() != h.latent_dim {
        return Err(Error::Format(format!("header d={} but decoder takes {}", h.latent_dim, vae.latent_dim())));
    }
    Ok(vae)
}

pub fn write_flow<W: Write>(w: &mut W, field: &VelocityField) -> Result<()> {
    let h = Header {
        modalities: 0,
        latent_dim: field.latent_dim(),
        image_shape: vec![],
    };
    write_section(w, Section::Flow, &h, &[field.net()])
}

pub fn read_flow<R: Read>(r: &mut R) -> Result<VelocityField> {
    let (h, mut nets) = read_section(r, Section::Flow)?;
    if nets.len() != 1 {
        return Err(Error::Format(format!("{} networks in a velocity file", nets.len())));
    }
    let field = VelocityField::from_mlp(nets.pop().expect("one"))?;
    if field.latent_dim() != h.latent_dim {
        return Err(Error::Format("velocity header disagrees with network".into()));
    }
    Ok(field)
}

pub fn write_direct<W: Write>(w: &mut W, model: &DirectRegressor) -> Result<()> {
    let h = Header {
        modalities: model.modalities(),
        latent_dim: 0,
        image_shape: model.image_shape().to_vec(),
    };
    write_section(w, Section::Direct, &h, &[model.net()])
}

pub fn read_direct<R: Read>(r: &mut R) -> Result<DirectRegressor> {
    let (h, mut nets) = read_section(r, Section::Direct)?;
    if nets.len() != 1 {
        return Err(Error::Format(format!("{} networks in a regressor file", nets.len())));
    }
    DirectRegressor::from_mlp(nets.pop().expect("one"), h.modalities, h.image_shape)
}

/// Serialized bytes of a VAE; handy for bit-exact comparisons.
pub fn vae_bytes(vae: &MultimodalVae) -> Vec<u8> {
    let mut buf = Vec::new();
    write_vae(&mut buf, vae).expect("writing to memory");
    buf
}
