//! Binary P6 PPM decoding and encoding (8-bit channels, the GTSDB image
//! format). Pixels load as `[3, H, W]` floats in [0, 1] with `value / 255`;
//! writing rounds back, so 8-bit content round-trips exactly.

use std::path::Path;

use evit_tensor::Tensor;

use crate::error::{DetectError, Result};

fn ppm_err(reason: impl Into<String>) -> DetectError {
    DetectError::Ppm {
        reason: reason.into(),
    }
}

/// Reads PPM header tokens, skipping whitespace and `#` comments.
struct TokenReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> TokenReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn next_token(&mut self) -> Result<&'a str> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos >= self.bytes.len() {
                return Err(ppm_err("truncated header"));
            }
            if self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            let start = self.pos;
            while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            return std::str::from_utf8(&self.bytes[start..self.pos])
                .map_err(|_| ppm_err("header is not ASCII"));
        }
    }

    /// Position after the single whitespace byte that terminates the header.
    fn data_offset(&self) -> usize {
        self.pos + 1
    }
}

/// Decodes binary P6 bytes into a `[3, H, W]` tensor scaled to [0, 1].
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let mut reader = TokenReader::new(bytes);
    let magic = reader.next_token()?;
    if magic != "P6" {
        return Err(ppm_err(format!(
            "unsupported magic '{magic}' (only binary P6 is supported)"
        )));
    }
    let width: usize = reader
        .next_token()?
        .parse()
        .map_err(|_| ppm_err("width is not an integer"))?;
    let height: usize = reader
        .next_token()?
        .parse()
        .map_err(|_| ppm_err("height is not an integer"))?;
    let maxval: usize = reader
        .next_token()?
        .parse()
        .map_err(|_| ppm_err("maxval is not an integer"))?;
    if maxval != 255 {
        return Err(ppm_err(format!("maxval {maxval} unsupported (8-bit only)")));
    }
    if width == 0 || height == 0 {
        return Err(ppm_err("zero-sized image"));
    }
    let data_start = reader.data_offset();
    let needed = width * height * 3;
    let available = bytes.len().saturating_sub(data_start);
    if available < needed {
        return Err(ppm_err(format!(
            "truncated file: need {needed} pixel bytes, found {available}"
        )));
    }
    let pixels = &bytes[data_start..data_start + needed];
    // Interleaved RGB to channel-major planes.
    let mut data = vec![0.0f32; needed];
    let plane = width * height;
    for (i, px) in pixels.chunks_exact(3).enumerate() {
        data[i] = px[0] as f32 / 255.0;
        data[plane + i] = px[1] as f32 / 255.0;
        data[2 * plane + i] = px[2] as f32 / 255.0;
    }
    Ok(Tensor::from_vec(&[3, height, width], data).expect("shape matches data"))
}

pub fn load_ppm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path)?;
    decode_ppm(&bytes)
}

/// Encodes a `[3, H, W]` tensor with values in [0, 1] as binary P6.
pub fn encode_ppm(image: &Tensor<f32>) -> Result<Vec<u8>> {
    if image.rank() != 3 || image.shape()[0] != 3 {
        return Err(ppm_err(format!(
            "expected [3, H, W] tensor, got {:?}",
            image.shape()
        )));
    }
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let plane = h * w;
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let data = image.data();
    for i in 0..plane {
        for c in 0..3 {
            let v = (data[c * plane + i] * 255.0).round().clamp(0.0, 255.0);
            out.push(v as u8);
        }
    }
    Ok(out)
}

pub fn save_ppm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    Ok(std::fs::write(path, encode_ppm(image)?)?)
}
