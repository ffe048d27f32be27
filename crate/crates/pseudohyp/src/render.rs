//! Minimal RGB raster with PNG output (PPM fallback via the .ppm extension).

use crate::error::{Error, Result};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>, // RGB8, row-major
}

impl Raster {
    pub fn new(width: usize, height: usize, fill: [u8; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            pixels.extend_from_slice(&fill);
        }
        Raster {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        debug_assert!(x < self.width && y < self.height);
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let buf = std::io::BufWriter::new(file);
        let mut enc = png::Encoder::new(buf, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::Png(e.to_string()))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::Png(e.to_string()))?;
        Ok(())
    }

    pub fn save_ppm(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut buf = std::io::BufWriter::new(file);
        write!(buf, "P6\n{} {}\n255\n", self.width, self.height)?;
        buf.write_all(&self.pixels)?;
        Ok(())
    }

    /// Saves by extension: `.ppm` writes PPM, anything else PNG.
    pub fn save(&self, path: &Path) -> Result<()> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => self.save_ppm(path),
            _ => self.save_png(path),
        }
    }

    /// As `save`, embedding a manifest reference: PPM as a `# manifest=…`
    /// header comment, PNG as a `manifest` tEXt chunk. Both are deterministic
    /// for fixed inputs.
    pub fn save_annotated(&self, path: &Path, manifest_digest: &str) -> Result<()> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ppm") => {
                let file = std::fs::File::create(path)?;
                let mut buf = std::io::BufWriter::new(file);
                write!(
                    buf,
                    "P6\n# manifest={}\n{} {}\n255\n",
                    manifest_digest, self.width, self.height
                )?;
                buf.write_all(&self.pixels)?;
                Ok(())
            }
            _ => {
                let file = std::fs::File::create(path)?;
                let buf = std::io::BufWriter::new(file);
                let mut enc = png::Encoder::new(buf, self.width as u32, self.height as u32);
                enc.set_color(png::ColorType::Rgb);
                enc.set_depth(png::BitDepth::Eight);
                enc.add_text_chunk("manifest".to_string(), manifest_digest.to_string())
                    .map_err(|e| Error::Png(e.to_string()))?;
                let mut writer = enc
                    .write_header()
                    .map_err(|e| Error::Png(e.to_string()))?;
                writer
                    .write_image_data(&self.pixels)
                    .map_err(|e| Error::Png(e.to_string()))?;
                Ok(())
            }
        }
    }
}

/// Loads a PNG back into a raster (used by determinism tests and the
/// `render` subcommand's re-encoding path).
pub fn load_png(path: &Path) -> Result<Raster> {
    let file = std::fs::File::open(path)?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let mut data = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut data)
        .map_err(|e| Error::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Png(format!(
            "unsupported PNG layout {:?}/{:?}",
            info.color_type, info.bit_depth
        )));
    }
    data.truncate(info.buffer_size());
    Ok(Raster {
        width: info.width as usize,
        height: info.height as usize,
        pixels: data,
    })
}
