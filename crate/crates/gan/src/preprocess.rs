use image::imageops::{self, FilterType};
use image::RgbImage;

use crate::tensor::Tensor;
use crate::GanError;

/// Decodes PNG or JPEG bytes to RGB.
pub fn decode(bytes: &[u8]) -> Result<RgbImage, GanError> {
    image::load_from_memory(bytes)
        .map(|img| img.to_rgb8())
        .map_err(|e| GanError::Decode(e.to_string()))
}

/// Resize the shorter side to `size`, center-crop to `size × size` and map
/// each channel to `[-1, 1]` via `v / 127.5 - 1`. Output is `[3, size, size]`.
pub fn preprocess_image(img: &RgbImage, size: usize) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    let s = size as u32;
    let resized;
    let src = if w == s && h == s {
        img
    } else {
        let short = w.min(h) as f64;
        let nw = ((w as f64 * s as f64 / short).round() as u32).max(s);
        let nh = ((h as f64 * s as f64 / short).round() as u32).max(s);
        resized = imageops::resize(img, nw, nh, FilterType::Triangle);
        &resized
    };
    let x0 = (src.width() - s) / 2;
    let y0 = (src.height() - s) / 2;
    let plane = size * size;
    let mut data = vec![0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let px = src.get_pixel(x0 + x as u32, y0 + y as u32);
            for c in 0..3 {
                data[c * plane + y * size + x] = px[c] as f32 / 127.5 - 1.0;
            }
        }
    }
    Tensor::from_vec(&[3, size, size], data).expect("sized buffer")
}

/// [`decode`] then [`preprocess_image`] at 64×64.
pub fn preprocess(bytes: &[u8]) -> Result<Tensor<f32>, GanError> {
    Ok(preprocess_image(&decode(bytes)?, 64))
}

/// Inverse mapping of a `[3, s, s]` tensor back to an 8-bit image.
pub fn tensor_to_image(t: &Tensor<f32>) -> RgbImage {
    let s = t.shape()[1];
    let plane = s * s;
    RgbImage::from_fn(s as u32, s as u32, |x, y| {
        let i = y as usize * s + x as usize;
        let px = |c: usize| ((t.data()[c * plane + i] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8;
        image::Rgb([px(0), px(1), px(2)])
    })
}

pub fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .expect("in-memory png encoding");
    out.into_inner()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solid(w: u32, h: u32, v: u8) -> Vec<u8> {
        encode_png(&RgbImage::from_pixel(w, h, image::Rgb([v, v, v])))
    }

    #[test]
    fn black_maps_to_minus_one() {
        let t = preprocess(&solid(64, 64, 0)).unwrap();
        assert!(t.data().iter().all(|v| *v == -1.0));
    }

    #[test]
    fn white_maps_to_plus_one() {
        let t = preprocess(&solid(80, 70, 255)).unwrap();
        assert!(t.data().iter().all(|v| *v == 1.0));
    }

    #[test]
    fn non_square_input_is_resized_and_cropped() {
        let t = preprocess(&solid(128, 96, 40)).unwrap();
        assert_eq!(t.shape(), &[3, 64, 64]);
    }

    #[test]
    fn garbage_bytes_fail_to_decode() {
        assert!(matches!(preprocess(b"not an image"), Err(GanError::Decode(_))));
    }

    #[test]
    fn center_crop_keeps_middle() {
        // 192x64: left third red, middle green, right blue.
        let img = RgbImage::from_fn(192, 64, |x, _| match x / 64 {
            0 => image::Rgb([255, 0, 0]),
            1 => image::Rgb([0, 255, 0]),
            _ => image::Rgb([0, 0, 255]),
        });
        let t = preprocess_image(&img, 64);
        // Already 64 tall, so no resampling of the middle column band.
        assert_eq!(t.data()[32 * 64 + 32], -1.0);
        assert_eq!(t.data()[4096 + 32 * 64 + 32], 1.0);
    }
}
