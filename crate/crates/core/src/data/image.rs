use std::path::Path;

use image::{imageops, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::geometry::{ImageSize, Letterbox};

/// Dense single-channel intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<f32>,
}

impl GrayImage {
    pub fn filled(width: u32, height: u32, value: f32) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width as usize * height as usize],
        }
    }

    pub fn size(&self) -> ImageSize {
        ImageSize {
            width: self.width,
            height: self.height,
        }
    }

    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.pixels[(y * self.width + x) as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: f32) {
        self.pixels[(y * self.width + x) as usize] = v;
    }

    /// Decodes PNG/JPEG bytes (grayscale or colour) into intensities.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)?;
        Ok(Self::from_luma8(img.to_luma8()))
    }

    /// As [`decode`](Self::decode), refusing images with a side above
    /// `max_side` before decoding the pixels.
    pub fn decode_bounded(bytes: &[u8], max_side: u32) -> Result<Self> {
        let reader = || image::ImageReader::new(std::io::Cursor::new(bytes)).with_guessed_format();
        let (w, h) = reader()?.into_dimensions()?;
        if w > max_side || h > max_side {
            return Err(Error::InvalidInput(format!(
                "image is {w}x{h}, sides above {max_side} px are not accepted"
            )));
        }
        let img = reader()?.decode()?;
        Ok(Self::from_luma8(img.to_luma8()))
    }

    pub fn open(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        Ok(Self::from_luma8(img.to_luma8()))
    }

    fn from_luma8(img: image::GrayImage) -> Self {
        let (width, height) = img.dimensions();
        let pixels = img
            .into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn to_luma8(&self) -> image::GrayImage {
        let raw = self
            .pixels
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::GrayImage::from_raw(self.width, self.height, raw).expect("buffer matches size")
    }

    /// Writes an 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_luma8()
            .save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = std::io::Cursor::new(Vec::new());
        self.to_luma8()
            .write_to(&mut buf, image::ImageFormat::Png)?;
        Ok(buf.into_inner())
    }

    /// Resizes into the letterbox canvas; padding is zero.
    pub fn letterboxed(&self, lb: &Letterbox) -> Result<GrayImage> {
        if lb.source != self.size() {
            return Err(Error::InvalidInput(format!(
                "letterbox built for {:?}, image is {:?}",
                lb.source,
                self.size()
            )));
        }
        let content = lb.content_size();
        let src: ImageBuffer<Luma<f32>, Vec<f32>> =
            ImageBuffer::from_raw(self.width, self.height, self.pixels.clone())
                .expect("buffer matches size");
        let resized = if content == self.size() {
            src
        } else {
            imageops::resize(
                &src,
                content.width,
                content.height,
                imageops::FilterType::Triangle,
            )
        };
        let mut out = GrayImage::filled(lb.target, lb.target, 0.0);
        for y in 0..content.height {
            for x in 0..content.width {
                out.set(x, y, resized.get_pixel(x, y).0[0].clamp(0.0, 1.0));
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::letterbox;

    #[test]
    fn bounded_decode_checks_sides() {
        let png = GrayImage::filled(30, 12, 0.5).encode_png().unwrap();
        assert_eq!(
            GrayImage::decode_bounded(&png, 30).unwrap().size(),
            ImageSize {
                width: 30,
                height: 12
            }
        );
        assert!(matches!(
            GrayImage::decode_bounded(&png, 29),
            Err(Error::InvalidInput(_))
        ));
        assert!(GrayImage::decode_bounded(b"not an image", 100).is_err());
    }

    #[test]
    fn letterbox_pads_bottom_right() {
        let img = GrayImage::filled(40, 20, 1.0);
        let lb = letterbox(img.size(), 16).unwrap();
        let out = img.letterboxed(&lb).unwrap();
        assert_eq!((out.width, out.height), (16, 16));
        assert!(out.get(0, 0) > 0.999);
        assert!(out.get(15, 7) > 0.999);
        assert_eq!(out.get(0, 8), 0.0);
        assert_eq!(out.get(15, 15), 0.0);
    }

    #[test]
    fn png_round_trip_is_quantized() {
        let mut img = GrayImage::filled(3, 2, 0.5);
        img.set(2, 1, 1.0);
        let back = GrayImage::decode(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back.size(), img.size());
        assert_eq!(back.get(2, 1), 1.0);
        assert!((back.get(0, 0) - 0.5).abs() < 1.0 / 255.0);
    }
}
