//! Binary model container shared by scorers and GAN snapshots.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic       "CRTM"
//! u32         format version (1)
//! u32         kind (0 scorer, 1 generator, 2 discriminator)
//! u32         feature extractor version (0 when unused)
//! u32         input image side in pixels
//! u32         input vector length N
//! u32         layer count L
//! L x layer   u32 tag + dims: 0 dense(in, out), 1 conv3x3(in_ch, out_ch, size, stride),
//!             2 tanh(len), 3 sigmoid(len)
//! N x f64     input shift
//! N x f64     input scale
//! u64         parameter count P
//! P x f64     parameters, layer by layer, weights row-major then biases
//! ```
//!
//! A JSON sidecar (`<file>.json`) carries free-form training metadata.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network};

pub const MAGIC: &[u8; 4] = b"CRTM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Scorer,
    Generator,
    Discriminator,
}

impl ModelKind {
    fn code(self) -> u32 {
        match self {
            ModelKind::Scorer => 0,
            ModelKind::Generator => 1,
            ModelKind::Discriminator => 2,
        }
    }

    fn from_code(c: u32) -> Result<Self> {
        match c {
            0 => Ok(ModelKind::Scorer),
            1 => Ok(ModelKind::Generator),
            2 => Ok(ModelKind::Discriminator),
            other => Err(Error::Format(format!("unknown model kind {other}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub kind: ModelKind,
    pub extractor_version: u32,
    pub input_size: u32,
    pub input_shift: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub network: Network,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

impl ModelFile {
    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let n = self.network.input_len();
        if self.input_shift.len() != n || self.input_scale.len() != n {
            return Err(Error::Internal("normalization length does not match network input".into()));
        }
        w.write_all(MAGIC)?;
        for v in [
            FORMAT_VERSION,
            self.kind.code(),
            self.extractor_version,
            self.input_size,
            n as u32,
            self.network.layers().len() as u32,
        ] {
            w.write_all(&v.to_le_bytes())?;
        }
        for layer in self.network.layers() {
            let words: Vec<u32> = match *layer {
                LayerSpec::Dense { inputs, outputs } => vec![0, inputs as u32, outputs as u32],
                LayerSpec::Conv3x3 { in_ch, out_ch, size, stride } => {
                    vec![1, in_ch as u32, out_ch as u32, size as u32, stride as u32]
                }
                LayerSpec::Tanh { len } => vec![2, len as u32],
                LayerSpec::Sigmoid { len } => vec![3, len as u32],
            };
            for v in words {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for v in self.input_shift.iter().chain(&self.input_scale) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.network.param_count() as u64).to_le_bytes())?;
        for v in self.network.params() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic, not a model file".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::IncompatibleModel(format!("model format version {version}, expected {FORMAT_VERSION}")));
        }
        let kind = ModelKind::from_code(read_u32(r)?)?;
        let extractor_version = read_u32(r)?;
        let input_size = read_u32(r)?;
        let n = read_u32(r)? as usize;
        let layer_count = read_u32(r)? as usize;
        if layer_count > 1024 {
            return Err(Error::Format(format!("implausible layer count {layer_count}")));
        }
        let mut layers = Vec::with_capacity(layer_count);
        for _ in 0..layer_count {
            let layer = match read_u32(r)? {
                0 => LayerSpec::Dense { inputs: read_usize(r)?, outputs: read_usize(r)? },
                1 => LayerSpec::Conv3x3 {
                    in_ch: read_usize(r)?,
                    out_ch: read_usize(r)?,
                    size: read_usize(r)?,
                    stride: read_usize(r)?,
                },
                2 => LayerSpec::Tanh { len: read_usize(r)? },
                3 => LayerSpec::Sigmoid { len: read_usize(r)? },
                tag => return Err(Error::Format(format!("unknown layer tag {tag}"))),
            };
            layers.push(layer);
        }
        let input_shift = read_f64s(r, n)?;
        let input_scale = read_f64s(r, n)?;
        let mut buf = [0u8; 8];
        r.read_exact(&mut buf)?;
        let count = u64::from_le_bytes(buf) as usize;
        let expected: usize = layers.iter().map(LayerSpec::param_count).sum();
        if count != expected {
            return Err(Error::Format(format!("parameter count {count} does not match layers ({expected})")));
        }
        let params = read_f64s(r, count)?;
        let network = Network::from_params(layers, params)?;
        if network.input_len() != n {
            return Err(Error::Format("input length does not match first layer".into()));
        }
        Ok(ModelFile { kind, extractor_version, input_size, input_shift, input_scale, network })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

pub fn write_sidecar(path: &Path, meta: &serde_json::Value) -> Result<()> {
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(meta)? + "\n")?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<Option<serde_json::Value>> {
    let p = sidecar_path(path);
    if !p.exists() {
        return Ok(None);
    }
    Ok(Some(serde_json::from_str(&std::fs::read_to_string(p)?)?))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_usize(r: &mut impl Read) -> Result<usize> {
    Ok(read_u32(r)? as usize)
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    if n > 1 << 28 {
        return Err(Error::Format(format!("implausible vector length {n}")));
    }
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}
