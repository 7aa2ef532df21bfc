//! Binary checkpoints.
//!
//! Both formats share a layout: 4-byte magic, `u16` format version, a
//! format-specific header, a layer table of `(out: u32, in: u32,
//! activation: u8)` entries, then each layer's weights (row-major) followed
//! by its bias as little-endian `f64`, in declaration order.
//!
//! * `LLAE` (autoencoder): `mode: u8`, `beta: f64`, `encoder_layers: u32`,
//!   `decoder_layers: u32`, table, blobs (encoder then decoder).
//! * `LLGM` (global model): `encoder_depth: u32`, `layers: u32`, table, blobs.
//!
//! Plain matrices (saved batches and reconstructions) use `LLTN`: magic,
//! version, `rows: u32`, `cols: u32`, row-major `f64` values.

use std::fs;
use std::path::Path;

use crate::autoencoder::{AeMode, AutoencoderPair};
use crate::error::{Error, Result};
use crate::model::GlobalModel;
use crate::nn::{Activation, DenseLayer, Sequential, Tensor};

pub const AUTOENCODER_MAGIC: &[u8; 4] = b"LLAE";
pub const GLOBAL_MODEL_MAGIC: &[u8; 4] = b"LLGM";
pub const TENSOR_MAGIC: &[u8; 4] = b"LLTN";
pub const FORMAT_VERSION: u16 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let out = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != magic {
            return Err(Error::Format(format!(
                "bad checkpoint magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(magic)
            )));
        }
        let version = self.u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn write_table(out: &mut Vec<u8>, layers: &[DenseLayer]) {
    for l in layers {
        out.extend_from_slice(&(l.output_size() as u32).to_le_bytes());
        out.extend_from_slice(&(l.input_size() as u32).to_le_bytes());
        out.push(l.activation().code());
    }
}

fn write_blobs(out: &mut Vec<u8>, layers: &[DenseLayer]) {
    for l in layers {
        for v in l.weight().data().iter().chain(l.bias().data()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_table(r: &mut Reader, count: usize) -> Result<Vec<(usize, usize, Activation)>> {
    (0..count)
        .map(|_| Ok((r.u32()? as usize, r.u32()? as usize, Activation::from_code(r.u8()?)?)))
        .collect()
}

fn read_layers(r: &mut Reader, table: &[(usize, usize, Activation)]) -> Result<Vec<DenseLayer>> {
    table
        .iter()
        .map(|&(out, inp, act)| {
            let w = (0..out * inp).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let b = (0..out).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            DenseLayer::new(Tensor::matrix(out, inp, w)?, Tensor::vector(b), act)
        })
        .collect()
}

pub fn encode_autoencoder(pair: &AutoencoderPair) -> Vec<u8> {
    let mut out = AUTOENCODER_MAGIC.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(match pair.mode {
        AeMode::Plain => 0,
        AeMode::Vae => 1,
    });
    out.extend_from_slice(&pair.beta.to_le_bytes());
    out.extend_from_slice(&(pair.encoder.layers().len() as u32).to_le_bytes());
    out.extend_from_slice(&(pair.decoder.layers().len() as u32).to_le_bytes());
    write_table(&mut out, pair.encoder.layers());
    write_table(&mut out, pair.decoder.layers());
    write_blobs(&mut out, pair.encoder.layers());
    write_blobs(&mut out, pair.decoder.layers());
    out
}

pub fn decode_autoencoder(bytes: &[u8]) -> Result<AutoencoderPair> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(AUTOENCODER_MAGIC)?;
    let mode = match r.u8()? {
        0 => AeMode::Plain,
        1 => AeMode::Vae,
        m => return Err(Error::Format(format!("unknown autoencoder mode {m}"))),
    };
    let beta = r.f64()?;
    let (ne, nd) = (r.u32()? as usize, r.u32()? as usize);
    let enc_table = read_table(&mut r, ne)?;
    let dec_table = read_table(&mut r, nd)?;
    let encoder = Sequential::new(read_layers(&mut r, &enc_table)?)?;
    let decoder = Sequential::new(read_layers(&mut r, &dec_table)?)?;
    r.finish()?;
    AutoencoderPair::new(encoder, decoder, mode, beta)
}

pub fn encode_global_model(model: &GlobalModel) -> Vec<u8> {
    let layers = model.net().layers();
    let mut out = GLOBAL_MODEL_MAGIC.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.encoder_depth() as u32).to_le_bytes());
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    write_table(&mut out, layers);
    write_blobs(&mut out, layers);
    out
}

pub fn decode_global_model(bytes: &[u8]) -> Result<GlobalModel> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(GLOBAL_MODEL_MAGIC)?;
    let depth = r.u32()? as usize;
    let n = r.u32()? as usize;
    let table = read_table(&mut r, n)?;
    let net = Sequential::new(read_layers(&mut r, &table)?)?;
    r.finish()?;
    GlobalModel::new(net, depth)
}

/// Encode a 2-D tensor; zero-row matrices keep their column count.
pub fn encode_matrix(t: &Tensor) -> Vec<u8> {
    let (rows, cols) = (t.rows(), t.cols());
    let mut out = TENSOR_MAGIC.to_vec();
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(rows as u32).to_le_bytes());
    out.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_matrix(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader { bytes, pos: 0 };
    r.header(TENSOR_MAGIC)?;
    let (rows, cols) = (r.u32()? as usize, r.u32()? as usize);
    let data = (0..rows * cols).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Tensor::matrix(rows, cols, data)
}

pub fn save_matrix(path: &Path, t: &Tensor) -> Result<()> {
    Ok(fs::write(path, encode_matrix(t))?)
}

pub fn load_matrix(path: &Path) -> Result<Tensor> {
    decode_matrix(&fs::read(path)?)
}

pub fn save_autoencoder(path: &Path, pair: &AutoencoderPair) -> Result<()> {
    Ok(fs::write(path, encode_autoencoder(pair))?)
}

pub fn load_autoencoder(path: &Path) -> Result<AutoencoderPair> {
    decode_autoencoder(&fs::read(path)?)
}

pub fn save_global_model(path: &Path, model: &GlobalModel) -> Result<()> {
    Ok(fs::write(path, encode_global_model(model))?)
}

pub fn load_global_model(path: &Path) -> Result<GlobalModel> {
    decode_global_model(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autoencoder::AutoencoderArch;
    use crate::model::ModelArch;
    use crate::rng::SeededRng;

    #[test]
    fn autoencoder_roundtrip_bitwise() {
        let mut rng = SeededRng::new(2, 0);
        let arch = AutoencoderArch {
            input_dim: 7,
            hidden: vec![5, 4],
            latent_dim: 3,
        };
        for mode in [AeMode::Plain, AeMode::Vae] {
            let pair = AutoencoderPair::random(&arch, mode, 0.25, &mut rng).unwrap();
            let bytes = encode_autoencoder(&pair);
            assert_eq!(&bytes[..4], b"LLAE");
            assert_eq!(decode_autoencoder(&bytes).unwrap(), pair);
        }
    }

    #[test]
    fn global_model_roundtrip_and_errors() {
        let mut rng = SeededRng::new(2, 0);
        let arch = ModelArch {
            input_dim: 6,
            encoder_hidden: vec![4],
            latent_dim: 3,
            leak_width: 5,
            head_width: 2,
            classes: 2,
        };
        let model = GlobalModel::benign(&arch, &mut rng).unwrap();
        let bytes = encode_global_model(&model);
        assert_eq!(decode_global_model(&bytes).unwrap(), model);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_global_model(&bad).unwrap_err().to_string().contains("magic"));
        assert!(decode_global_model(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_global_model(&long).is_err());
        let mut ver = bytes;
        ver[4] = 9;
        assert!(decode_global_model(&ver).unwrap_err().to_string().contains("version"));
    }
}
