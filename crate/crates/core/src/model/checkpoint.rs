//! Binary checkpoints.
//!
//! ```text
//! "FCNTCKPT"  magic
//! u32         format version (1)
//! u32 x 11    classes, input channels, head channels,
//!             block channels[4], convs per block[4]
//! u64         initialization seed
//! u32         layer count
//! per layer:  u16 name length, name bytes, u8 kind (0 conv, 1 upsample),
//!             u32 stride, u32 padding, u32 x 4 weight extents,
//!             f64 weights, u32 bias length, f64 bias,
//!             f64 weight velocity, f64 bias velocity
//! [u8; 32]    SHA-256 of every preceding byte
//! ```
//!
//! All integers and doubles are little-endian; buffers follow the tensor
//! layout. A human-readable copy of the spec is written next to the file.

use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ops::{ConvGrads, ConvParams};
use crate::tensor::Tensor;

use super::{Layer, LayerDef, LayerKind, NetworkSpec, NetworkState, BLOCKS};

const MAGIC: &[u8; 8] = b"FCNTCKPT";
const VERSION: u32 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.err("truncated"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn err(&self, reason: &str) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.err("length overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Serializes a network to bytes.
pub fn encode(state: &NetworkState) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u32(VERSION as usize);
    let s = &state.spec;
    w.u32(s.num_classes);
    w.u32(s.input_channels);
    w.u32(s.head_channels);
    for v in s.block_channels {
        w.u32(v);
    }
    for v in s.convs_per_block {
        w.u32(v);
    }
    w.u64(state.seed);
    w.u32(state.layers.len());
    for l in &state.layers {
        w.u16(l.def.name.len() as u16);
        w.0.extend_from_slice(l.def.name.as_bytes());
        w.u8(match l.def.kind {
            LayerKind::Conv => 0,
            LayerKind::Upsample => 1,
        });
        w.u32(l.params.stride);
        w.u32(l.params.padding);
        for e in l.params.weight.shape().to_array() {
            w.u32(e);
        }
        w.f64s(l.params.weight.data());
        w.u32(l.params.bias.len());
        w.f64s(&l.params.bias);
        w.f64s(l.velocity.weight.data());
        w.f64s(&l.velocity.bias);
    }
    let digest = Sha256::digest(&w.0);
    w.0.extend_from_slice(&digest);
    w.0
}

/// Parses bytes produced by [`encode`]. `path` is only used in errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<NetworkState> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint {
            path: path.to_path_buf(),
            reason: "not a checkpoint (bad magic or too short)".into(),
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
        });
    }
    let mut r = Reader {
        buf: body,
        pos: MAGIC.len(),
        path,
    };
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(r.err(&format!("unsupported version {version}")));
    }
    let num_classes = r.u32()?;
    let input_channels = r.u32()?;
    let head_channels = r.u32()?;
    let mut block_channels = [0; BLOCKS];
    for v in &mut block_channels {
        *v = r.u32()?;
    }
    let mut convs_per_block = [0; BLOCKS];
    for v in &mut convs_per_block {
        *v = r.u32()?;
    }
    let spec = NetworkSpec {
        num_classes,
        block_channels,
        convs_per_block,
        head_channels,
        input_channels,
    };
    let seed = r.u64()?;
    let count = r.u32()?;
    let defs = spec.layers();
    if count != defs.len() {
        return Err(r.err("layer count does not match the stored spec"));
    }
    let mut layers = Vec::with_capacity(count);
    for def in defs {
        let layer = read_layer(&mut r, def)?;
        layers.push(layer);
    }
    if r.pos != body.len() {
        return Err(r.err("trailing bytes"));
    }
    NetworkState::from_parts(spec, seed, layers)
}

fn read_layer(r: &mut Reader<'_>, def: LayerDef) -> Result<Layer> {
    let name_len = r.u16()? as usize;
    let name =
        std::str::from_utf8(r.take(name_len)?).map_err(|_| r.err("layer name is not UTF-8"))?;
    if name != def.name {
        return Err(r.err(&format!("expected layer {}, found {name}", def.name)));
    }
    let kind = match r.u8()? {
        0 => LayerKind::Conv,
        1 => LayerKind::Upsample,
        k => return Err(r.err(&format!("unknown layer kind {k}"))),
    };
    let stride = r.u32()?;
    let padding = r.u32()?;
    let mut dims = [0usize; 4];
    for d in &mut dims {
        *d = r.u32()?;
    }
    if kind != def.kind
        || dims != def.weight_shape()
        || stride != def.stride
        || padding != def.padding
    {
        return Err(r.err(&format!("layer {name} does not match the stored spec")));
    }
    let len = dims.iter().product();
    let weight = Tensor::from_vec(dims, r.f64s(len)?)?;
    let bias_len = r.u32()?;
    if bias_len != def.out_channels {
        return Err(r.err(&format!("layer {name} has a bias of length {bias_len}")));
    }
    let bias = r.f64s(bias_len)?;
    let vw = Tensor::from_vec(dims, r.f64s(len)?)?;
    let vb = r.f64s(bias_len)?;
    let params = match kind {
        LayerKind::Conv => ConvParams::new(weight, bias, stride, padding)?,
        LayerKind::Upsample => ConvParams::transposed(weight, bias, stride, padding)?,
    };
    Ok(Layer {
        def,
        params,
        velocity: ConvGrads {
            weight: vw,
            bias: vb,
        },
    })
}

/// Path of the human-readable spec written beside a checkpoint.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".spec.txt");
    PathBuf::from(s)
}

fn sidecar_text(state: &NetworkState) -> String {
    let s = &state.spec;
    let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
    let mut out = String::new();
    out.push_str(&format!("format_version = {VERSION}\n"));
    out.push_str(&format!("num_classes = {}\n", s.num_classes));
    out.push_str(&format!("input_channels = {}\n", s.input_channels));
    out.push_str(&format!("block_channels = {}\n", join(&s.block_channels)));
    out.push_str(&format!("convs_per_block = {}\n", join(&s.convs_per_block)));
    out.push_str(&format!("head_channels = {}\n", s.head_channels));
    out.push_str(&format!("seed = {}\n", state.seed));
    out.push_str(&format!("parameters = {}\n", state.param_count()));
    for l in &state.layers {
        out.push_str(&format!(
            "layer.{} = {:?} {:?}\n",
            l.def.name,
            l.def.kind,
            l.def.weight_shape()
        ));
    }
    out
}

impl NetworkState {
    /// Writes the checkpoint and its `.spec.txt` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, encode(self)).map_err(|e| Error::io(path, e))?;
        let side = sidecar_path(path);
        fs::write(&side, sidecar_text(self)).map_err(|e| Error::io(side, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<NetworkState> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode(&bytes, path)
    }

    /// Loads a checkpoint that must score exactly `num_classes` classes.
    pub fn load_with_classes(path: impl AsRef<Path>, num_classes: usize) -> Result<NetworkState> {
        let state = Self::load(path)?;
        if state.num_classes() != num_classes {
            return Err(Error::ClassCountMismatch {
                expected: num_classes,
                found: state.num_classes(),
            });
        }
        Ok(state)
    }
}
