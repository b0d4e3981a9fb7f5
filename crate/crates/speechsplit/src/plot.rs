//! Spectrogram and pitch-contour images.

use std::path::Path;

use image::{Rgb, RgbImage};
use speechsplit_core::featureio::{QuantizedPitch, UNVOICED_BIN};
use speechsplit_core::tensor::Matrix;

use crate::error::{AppError, AppResult};

const SCALE: u32 = 3;
const PITCH_PANEL: u32 = 128;
const GAP: u32 = 6;

const STOPS: [[f32; 3]; 5] = [
    [68.0, 1.0, 84.0],
    [59.0, 82.0, 139.0],
    [33.0, 145.0, 140.0],
    [94.0, 201.0, 98.0],
    [253.0, 231.0, 37.0],
];

/// Perceptually ordered colour for a value in `[0, 1]`.
pub fn colour(v: f32) -> Rgb<u8> {
    let x = v.clamp(0.0, 1.0) * (STOPS.len() - 1) as f32;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let w = x - i as f32;
    let c = |k: usize| ((1.0 - w) * STOPS[i][k] + w * STOPS[i + 1][k]).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Spectrogram (time left to right, low bins at the bottom) above an optional panel with
/// the quantized pitch contour (voiced frames only).
pub fn render(mel: &Matrix<f32>, pitch: Option<&QuantizedPitch>) -> RgbImage {
    let t = mel.rows().max(1) as u32;
    let bins = mel.cols() as u32;
    let spec_h = bins * SCALE;
    let height = spec_h + if pitch.is_some() { GAP + PITCH_PANEL } else { 0 };
    let mut img = RgbImage::from_pixel(t * SCALE, height, Rgb([255, 255, 255]));
    for r in 0..mel.rows() {
        for (b, &v) in mel.row(r).iter().enumerate() {
            let px = colour(v);
            for dx in 0..SCALE {
                for dy in 0..SCALE {
                    img.put_pixel(r as u32 * SCALE + dx, spec_h - 1 - (b as u32 * SCALE + dy), px);
                }
            }
        }
    }
    if let Some(p) = pitch {
        let top = spec_h + GAP;
        for x in 0..t * SCALE {
            img.put_pixel(x, top + PITCH_PANEL - 1, Rgb([160, 160, 160]));
        }
        for (r, &b) in p.bins().iter().enumerate().take(mel.rows()) {
            if b == UNVOICED_BIN {
                continue;
            }
            let y = top + PITCH_PANEL - 2 - (u32::from(b) * (PITCH_PANEL - 3)) / 255;
            for dx in 0..SCALE {
                for dy in 0..2 {
                    img.put_pixel(r as u32 * SCALE + dx, y - dy, Rgb([200, 30, 30]));
                }
            }
        }
    }
    img
}

pub fn save(img: &RgbImage, path: &Path) -> AppResult<()> {
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| AppError::data(format!("{}: {e}", path.display())))?;
    crate::persistence::atomic_write(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_colours() {
        let mel = Matrix::from_fn(10, 80, |_, b| b as f32 / 79.0);
        let p = QuantizedPitch::from_bins(vec![0, 255, UNVOICED_BIN, 128, 128, 1, 2, 3, 4, 5]).unwrap();
        let img = render(&mel, Some(&p));
        assert_eq!(img.dimensions(), (30, 240 + GAP + PITCH_PANEL));
        assert_eq!(*img.get_pixel(0, 239), colour(0.0));
        assert_eq!(*img.get_pixel(0, 0), colour(1.0));
        assert_eq!(render(&mel, None).height(), 240);
        assert_eq!(colour(0.0), Rgb([68, 1, 84]));
        assert_eq!(colour(1.0), Rgb([253, 231, 37]));
    }
}
