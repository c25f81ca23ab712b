//! Binary PPM (P6) read/write and 8-bit RGB PNG reading.

use std::cell::Cell;
use std::io::{self, Read};
use std::rc::Rc;

use fetr_core::data::from_rgb8;
use fetr_core::{Scalar, Tensor};

use crate::{Error, Result};

/// Interleaved 8-bit RGB pixels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    /// Channels-first tensor scaled by 1/255.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        Ok(from_rgb8(self.width, self.height, &self.data)?)
    }
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(match self.bytes.get(self.pos) {
                None => Error::decode(self.pos, format!("truncated header, expected {what}")),
                Some(_) => Error::decode(self.pos, format!("expected {what}")),
            });
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::decode(start, format!("{what} out of range")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(Error::decode(0, "missing P6 magic"));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval_at = h.pos;
    let maxval = h.number("maximum value")?;
    if maxval != 255 {
        return Err(Error::decode(
            maxval_at,
            format!("only 8-bit samples are supported, maximum value is {maxval}"),
        ));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        Some(_) => return Err(Error::decode(h.pos, "expected whitespace after header")),
        None => return Err(Error::decode(h.pos, "truncated header")),
    }
    if width == 0 || height == 0 {
        return Err(Error::decode(2, format!("empty image {width}x{height}")));
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| Error::decode(2, "image dimensions overflow"))?;
    let payload = &bytes[h.pos..];
    if payload.len() < need {
        return Err(Error::decode(
            bytes.len(),
            format!("truncated pixel data: {} of {need} bytes", payload.len()),
        ));
    }
    Ok(RgbImage {
        width,
        height,
        data: payload[..need].to_vec(),
    })
}

/// Reader that remembers how far the decoder got, for error offsets.
struct Tracked<'a> {
    bytes: &'a [u8],
    pos: Rc<Cell<usize>>,
}

impl Read for Tracked<'_> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let at = self.pos.get();
        let n = buf.len().min(self.bytes.len() - at);
        buf[..n].copy_from_slice(&self.bytes[at..at + n]);
        self.pos.set(at + n);
        Ok(n)
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<RgbImage> {
    let pos = Rc::new(Cell::new(0));
    let fail = |e: png::DecodingError| Error::decode(pos.get(), e.to_string());
    let decoder = png::Decoder::new(Tracked {
        bytes,
        pos: Rc::clone(&pos),
    });
    let mut reader = decoder.read_info().map_err(fail)?;
    let (color, depth) = reader.output_color_type();
    match (color, depth) {
        (png::ColorType::Rgb, png::BitDepth::Eight) => {}
        (png::ColorType::Grayscale | png::ColorType::GrayscaleAlpha, _) => {
            return Err(Error::decode(0, "grayscale PNG is not supported, expected 8-bit RGB"))
        }
        (c, d) => {
            return Err(Error::decode(
                0,
                format!("unsupported PNG format {c:?}/{d:?}, expected 8-bit RGB"),
            ))
        }
    }
    let mut data = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut data).map_err(fail)?;
    data.truncate(frame.buffer_size());
    Ok(RgbImage {
        width: frame.width as usize,
        height: frame.height as usize,
        data,
    })
}

/// Dispatches on the file signature.
pub fn decode_image(bytes: &[u8]) -> Result<RgbImage> {
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else {
        Err(Error::decode(0, "unrecognised image signature"))
    }
}
