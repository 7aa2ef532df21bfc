//! Binary PGM (P5) / PPM (P6) output and a row-major grid montage.

use std::fs;
use std::path::Path;

use crate::data::quantize;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("images need 1 or 3 channels, got {channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::InvalidArgument(format!(
                "{}x{}x{} image given {} values",
                height,
                width,
                channels,
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }
}

/// PNM bytes; values are clamped to `[0, 1]` and rounded to the nearest level.
pub fn encode_pnm(image: &Image) -> Vec<u8> {
    let tag = if image.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{tag}\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend(image.pixels.iter().map(|&v| quantize(v)));
    out
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    if image.pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("pixel values must lie in [0, 1]".into()));
    }
    fs::write(path, encode_pnm(image))?;
    Ok(())
}

/// Parse binary P5/P6 with maxval 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PNM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::Format(format!("unsupported PNM type {other:?}"))),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PNM header field {s:?}")));
    let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    let body = bytes
        .get(pos..pos + width * height * channels)
        .ok_or_else(|| Error::Format("truncated PNM payload".into()))?;
    Image::new(height, width, channels, body.iter().map(|&b| b as f64 / 255.0).collect())
}

pub fn read_image(path: &Path) -> Result<Image> {
    decode_pnm(&fs::read(path)?)
}

/// Tile images row-major on a grid of `ceil(sqrt(n))` columns with one-pixel
/// white separators.
pub fn montage(images: &[Image]) -> Result<Image> {
    let first = images.first().ok_or(Error::Empty("montage input"))?;
    let (h, w, c) = (first.height, first.width, first.channels);
    if images.iter().any(|im| (im.height, im.width, im.channels) != (h, w, c)) {
        return Err(Error::InvalidArgument("montage images must share dimensions".into()));
    }
    let n = images.len();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (gh, gw) = (rows * h + rows - 1, cols * w + cols - 1);
    let mut pixels = vec![1.0; gh * gw * c];
    for (idx, im) in images.iter().enumerate() {
        let (oy, ox) = ((idx / cols) * (h + 1), (idx % cols) * (w + 1));
        for y in 0..h {
            let src = &im.pixels[y * w * c..(y + 1) * w * c];
            let dst = ((oy + y) * gw + ox) * c;
            pixels[dst..dst + w * c].copy_from_slice(src);
        }
    }
    Image::new(gh, gw, c, pixels)
}
