//! JPEG source coding with a length + CRC-32 frame around the bitstream.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::image::ImageTensor;

/// Encodes image `i` of `batch` as baseline JPEG.
pub fn jpeg_encode(batch: &ImageTensor, i: usize, quality: u8) -> Result<Vec<u8>> {
    if !(1..=100).contains(&quality) {
        return Err(Error::Config(format!("jpeg quality {quality} outside 1..=100")));
    }
    let (h, w) = (batch.height(), batch.width());
    let data = batch.image(i)?.to_vec()?;
    let plane = h * w;
    let mut img = RgbImage::new(w as u32, h as u32);
    for (idx, px) in img.pixels_mut().enumerate() {
        for c in 0..3 {
            px[c] = (data[c * plane + idx] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
    }
    let mut out = Vec::new();
    JpegEncoder::new_with_quality(&mut out, quality)
        .encode_image(&img)
        .map_err(|e| Error::Jpeg(e.to_string()))?;
    Ok(out)
}

/// Decodes a JPEG bitstream into a single-image batch of size `h x w`.
pub fn jpeg_decode(bytes: &[u8], h: usize, w: usize) -> Result<ImageTensor> {
    let img = image::load(Cursor::new(bytes), ImageFormat::Jpeg)
        .map_err(|e| Error::Jpeg(e.to_string()))?
        .to_rgb8();
    if (img.height() as usize, img.width() as usize) != (h, w) {
        return Err(Error::Jpeg(format!(
            "decoded {}x{} image, expected {h}x{w}",
            img.height(),
            img.width()
        )));
    }
    let plane = h * w;
    let mut data = vec![0f32; 3 * plane];
    for (idx, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * plane + idx] = px[c] as f32 / 255.0;
        }
    }
    ImageTensor::from_vec(data, 1, h, w)
}

pub fn jpeg_roundtrip(batch: &ImageTensor, i: usize, quality: u8) -> Result<ImageTensor> {
    jpeg_decode(&jpeg_encode(batch, i, quality)?, batch.height(), batch.width())
}

/// `len (u32 LE) | payload | crc32(payload) (u32 LE)`.
pub fn frame(payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out
}

/// Checks a frame; trailing bytes (block padding) are ignored.
pub fn unframe(bytes: &[u8]) -> Option<&[u8]> {
    let len = u32::from_le_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
    let payload = bytes.get(4..4usize.checked_add(len)?)?;
    let crc = u32::from_le_bytes(bytes.get(4 + len..8 + len)?.try_into().ok()?);
    (crc32fast::hash(payload) == crc).then_some(payload)
}
