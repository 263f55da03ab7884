//! Image loading and conversion to model input.

use std::path::Path;

use image::GrayImage;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Spatial multiple every model input is padded to.
pub const PAD_MULTIPLE: usize = 32;

/// Loads any supported image (PNG, PGM, …) as 8-bit grayscale.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(image::load_from_memory(&bytes)?.to_luma8())
}

pub fn save_png(img: &GrayImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// `[3, H', W']` in [0, 1], gray replicated to three channels, padded with
/// white on the bottom and right to multiples of 32.
pub fn to_model_input(img: &GrayImage) -> Result<Tensor> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Parameter("empty image".into()));
    }
    let ph = h.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE;
    let pw = w.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE;
    let mut plane = vec![1.0; ph * pw];
    for (x, y, p) in img.enumerate_pixels() {
        plane[y as usize * pw + x as usize] = p.0[0] as f64 / 255.0;
    }
    let mut data = Vec::with_capacity(3 * ph * pw);
    for _ in 0..3 {
        data.extend_from_slice(&plane);
    }
    Tensor::new(vec![3, ph, pw], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::Luma;

    #[test]
    fn pads_with_white_and_scales() {
        let mut img = GrayImage::from_pixel(40, 20, Luma([255]));
        img.put_pixel(3, 2, Luma([0]));
        let t = to_model_input(&img).unwrap();
        assert_eq!(t.shape(), &[3, 32, 64]);
        assert_eq!(t.data()[2 * 64 + 3], 0.0);
        assert_eq!(t.data()[32 * 64 + 2 * 64 + 3], 0.0);
        assert!(t.data().iter().filter(|&&v| v != 1.0).count() == 3);
    }

    #[test]
    fn png_and_pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = GrayImage::from_fn(9, 5, |x, y| Luma([(x * 20 + y) as u8]));
        let png = dir.path().join("a.png");
        save_png(&img, &png).unwrap();
        assert_eq!(load_gray(&png).unwrap(), img);
        let pgm = dir.path().join("a.pgm");
        img.save_with_format(&pgm, image::ImageFormat::Pnm).unwrap();
        assert_eq!(load_gray(&pgm).unwrap(), img);
    }
}
