//! Binary PPM (P6) and PGM (P5) with 8-bit samples.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// Interleaved 8-bit RGB.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn to_tensor(&self) -> Tensor3<f32> {
        let data = self.data.iter().map(|&v| unit(v, 255)).collect();
        Tensor3 { height: self.height, width: self.width, channels: 3, data }
    }
}

fn unit(v: u8, maxval: u16) -> f32 {
    f32::from(v) / f32::from(maxval)
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

/// Decode a P6 or P5 image into `[0, 1]` floats; grey images are
/// replicated into three channels.
pub fn load_image(bytes: &[u8]) -> Result<Tensor3<f32>> {
    let mut h = Header { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::Image("unsupported magic (need P5 or P6)".into())),
    };
    h.pos = 2;
    let width = h.field("width")?;
    let height = h.field("height")?;
    let maxval = h.field("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Image(format!("degenerate size {width}x{height}")));
    }
    if !(1..=255).contains(&maxval) {
        return Err(Error::Image(format!("maxval {maxval} is not an 8-bit format")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(Error::Image("missing whitespace after maxval".into())),
    }
    let need = width * height * channels;
    let raster = &bytes[h.pos..];
    if raster.len() < need {
        return Err(Error::Image(format!(
            "truncated raster: {} of {need} bytes",
            raster.len()
        )));
    }
    let maxval = maxval as u16;
    let data = if channels == 3 {
        raster[..need].iter().map(|&v| unit(v, maxval)).collect()
    } else {
        raster[..need]
            .iter()
            .flat_map(|&v| {
                let f = unit(v, maxval);
                [f, f, f]
            })
            .collect()
    };
    Ok(Tensor3 { height, width, channels: 3, data })
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_ws_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn field(&mut self, what: &str) -> Result<usize> {
        let start = self.pos;
        self.skip_ws_and_comments();
        if self.pos == start {
            return Err(Error::Image(format!("expected whitespace before {what}")));
        }
        let digits = self.bytes[self.pos..].iter().take_while(|b| b.is_ascii_digit()).count();
        if digits == 0 || digits > 9 {
            return Err(Error::Image(format!("bad {what} in header")));
        }
        let s = std::str::from_utf8(&self.bytes[self.pos..self.pos + digits]).expect("ascii digits");
        self.pos += digits;
        Ok(s.parse().expect("at most 9 digits"))
    }
}
