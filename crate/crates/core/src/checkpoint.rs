//! Binary checkpoints. Everything is little-endian:
//!
//! ```text
//! "FCHD" | version u32 | config | layer count u32 |
//!   per tensor: name len u32, name bytes, ndims u32, dims u32.., f32 data
//! ```
//!
//! The config block is: width count u32, widths u32.., conv6 channels u32,
//! anchors per cell u32, init sigma f64, backbone init u8, seed u64,
//! mean f32 x3, std f32 x3.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{BackboneInit, NetConfig, NetParams};

pub const MAGIC: &[u8; 4] = b"FCHD";
pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], data: &[f32]) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, dims.len());
    for &d in dims {
        put_u32(out, d);
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(cfg: &NetConfig, params: &NetParams<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, cfg.widths.len());
    for &w in &cfg.widths {
        put_u32(&mut out, w);
    }
    put_u32(&mut out, cfg.conv6_channels);
    put_u32(&mut out, cfg.n_anchors);
    out.extend_from_slice(&cfg.init_sigma.to_le_bytes());
    out.push(cfg.backbone_init.code());
    out.extend_from_slice(&cfg.rng_seed.to_le_bytes());
    for v in cfg.input_mean.iter().chain(&cfg.input_std) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_u32(&mut out, params.layers.len());
    for l in &params.layers {
        put_tensor(&mut out, &format!("{}.weight", l.name), &[l.kernel, l.kernel, l.cin, l.cout], &l.weight);
        put_tensor(&mut out, &format!("{}.bias", l.name), &[l.cout], &l.bias);
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(e) => {
                let s = &self.bytes[self.pos..e];
                self.pos = e;
                Ok(s)
            }
            None => Err(Error::Format(format!("truncated at byte {}", self.pos))),
        }
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.array()?) as usize)
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn tensor(&mut self, want_name: &str, want_dims: &[usize]) -> Result<Vec<f32>> {
        let n = self.u32()?;
        let name = String::from_utf8_lossy(self.take(n)?).into_owned();
        if name != want_name {
            return Err(Error::Shape(format!("expected tensor {want_name}, found {name}")));
        }
        let nd = self.u32()?;
        let dims = (0..nd).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
        if dims != want_dims {
            return Err(Error::Shape(format!("{name}: dims {dims:?}, expected {want_dims:?}")));
        }
        let len: usize = dims.iter().product();
        let raw = self.take(len * 4)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect())
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(NetConfig, NetParams<f32>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).ok() != Some(MAGIC.as_slice()) {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let n_widths = r.u32()?;
    if n_widths > 64 {
        return Err(Error::Format(format!("implausible width count {n_widths}")));
    }
    let widths = (0..n_widths).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
    let conv6_channels = r.u32()?;
    let n_anchors = r.u32()?;
    let init_sigma = f64::from_le_bytes(r.array()?);
    let code = r.array::<1>()?[0];
    let backbone_init = BackboneInit::from_code(code)
        .ok_or_else(|| Error::Format(format!("unknown init code {code}")))?;
    let rng_seed = u64::from_le_bytes(r.array()?);
    let mut input_mean = [0f32; 3];
    let mut input_std = [0f32; 3];
    for v in input_mean.iter_mut().chain(input_std.iter_mut()) {
        *v = r.f32()?;
    }
    let cfg = NetConfig {
        widths,
        conv6_channels,
        n_anchors,
        init_sigma,
        backbone_init,
        rng_seed,
        input_mean,
        input_std,
    };
    cfg.validate().map_err(|e| Error::Format(format!("stored config is invalid: {e}")))?;

    let mut params = NetParams::zeros(&cfg);
    let n_layers = r.u32()?;
    if n_layers != params.layers.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {n_layers} layers, config implies {}",
            params.layers.len()
        )));
    }
    for l in params.layers.iter_mut() {
        l.weight = r.tensor(&format!("{}.weight", l.name), &[l.kernel, l.kernel, l.cin, l.cout])?;
        l.bias = r.tensor(&format!("{}.bias", l.name), &[l.cout])?;
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((cfg, params))
}

pub fn save_checkpoint(path: &Path, cfg: &NetConfig, params: &NetParams<f32>) -> Result<()> {
    fs::write(path, encode_checkpoint(cfg, params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetConfig, NetParams<f32>)> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_params;

    fn sample() -> (NetConfig, NetParams<f32>) {
        let cfg = NetConfig { widths: vec![2, 3, 4, 5], conv6_channels: 6, n_anchors: 3, rng_seed: 4, ..Default::default() };
        let p = init_params(&cfg).unwrap();
        (cfg, p)
    }

    #[test]
    fn round_trip_is_exact() {
        let (cfg, p) = sample();
        let bytes = encode_checkpoint(&cfg, &p);
        let (cfg2, p2) = decode_checkpoint(&bytes).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(p2.layers, p.layers);
        assert_eq!(encode_checkpoint(&cfg2, &p2), bytes);
    }

    #[test]
    fn header_layout() {
        let (cfg, p) = sample();
        let bytes = encode_checkpoint(&cfg, &p);
        assert_eq!(&bytes[..4], b"FCHD");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &4u32.to_le_bytes());
    }

    #[test]
    fn corrupt_inputs() {
        let (cfg, p) = sample();
        let bytes = encode_checkpoint(&cfg, &p);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(_))));

        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Format(m)) if m.contains("version")));

        for cut in [3, 10, 40, bytes.len() - 1] {
            assert!(matches!(decode_checkpoint(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_checkpoint(&long), Err(Error::Format(_))));
    }

    #[test]
    fn mismatched_layer_shape() {
        let (cfg, p) = sample();
        let mut bytes = encode_checkpoint(&cfg, &p);
        // bump the stored anchors-per-cell; the head tensors no longer fit
        let at = 8 + 4 + 4 * 4 + 4;
        bytes[at] = 4;
        assert!(matches!(decode_checkpoint(&bytes), Err(Error::Shape(_))));
    }

    #[test]
    fn file_round_trip() {
        let (cfg, p) = sample();
        let dir = std::env::temp_dir().join(format!("ckpt-test-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.ckpt");
        save_checkpoint(&path, &cfg, &p).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap().1.layers, p.layers);
        fs::remove_dir_all(&dir).unwrap();
    }
}
