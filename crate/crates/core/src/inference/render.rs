use image::{Rgb, RgbImage};
use std::path::Path;

use super::InferenceError;
use crate::env::BoxF;
use crate::raster::Raster;

pub const STROKE_PX: usize = 2;
pub const STROKE_COLOR: [u8; 3] = [0, 0, 255];

/// The image with a blue outline drawn just inside each box's pixel span.
pub fn render_annotated(img: &Raster, boxes: &[BoxF]) -> RgbImage {
    let mut out = img.to_rgb8();
    let (w, h) = (img.width(), img.height());
    for b in boxes {
        let (x0, x1, y0, y1) = b.pixel_span(w, h);
        for y in y0..y1 {
            for x in x0..x1 {
                let edge = x < x0 + STROKE_PX || x + STROKE_PX >= x1 || y < y0 + STROKE_PX || y + STROKE_PX >= y1;
                if edge {
                    out.put_pixel(x as u32, y as u32, Rgb(STROKE_COLOR));
                }
            }
        }
    }
    out
}

/// Renders and writes a PNG.
pub fn save_annotated(img: &Raster, boxes: &[BoxF], path: &Path) -> Result<(), InferenceError> {
    render_annotated(img, boxes).save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
