use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::DataError;
use crate::metrics::RgbImage;

/// Writes an 8-bit RGB PNG.
pub fn write_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<(), DataError> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| DataError::io(path, e))?;
    let mut enc = ::png::Encoder::new(BufWriter::new(file), img.width as u32, img.height as u32);
    enc.set_color(::png::ColorType::Rgb);
    enc.set_depth(::png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| DataError::Png(e.to_string()))?;
    w.write_image_data(&img.data).map_err(|e| DataError::Png(e.to_string()))?;
    w.finish().map_err(|e| DataError::Png(e.to_string()))
}

/// Reads an 8-bit RGB PNG.
pub fn read_png(path: impl AsRef<Path>) -> Result<RgbImage, DataError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| DataError::io(path, e))?;
    let dec = ::png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = dec.read_info().map_err(|e| DataError::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| DataError::Png(e.to_string()))?;
    if info.color_type != ::png::ColorType::Rgb || info.bit_depth != ::png::BitDepth::Eight {
        return Err(DataError::Png(format!("expected 8-bit RGB, got {:?} {:?}", info.color_type, info.bit_depth)));
    }
    buf.truncate(info.buffer_size());
    Ok(RgbImage {
        height: info.height as usize,
        width: info.width as usize,
        data: buf,
    })
}
