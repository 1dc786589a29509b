//! PNG rendering of top-down relevancy.

use std::io::Write;

use taskgrasp_core::field::TopDownRelevancy;

const RAMP: [[f64; 3]; 5] =
    [[0.0, 0.0, 4.0], [87.0, 16.0, 110.0], [188.0, 55.0, 84.0], [249.0, 142.0, 9.0], [252.0, 255.0, 164.0]];

fn color(t: f64) -> [u8; 3] {
    let x = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f64;
    let i = (x.floor() as usize).min(RAMP.len() - 2);
    let f = x - i as f64;
    std::array::from_fn(|k| (RAMP[i][k] + f * (RAMP[i + 1][k] - RAMP[i][k])).round() as u8)
}

/// RGBA pixels, row-major with +y up. Scores are stretched over their own
/// range; empty columns are transparent.
pub fn rgba(img: &TopDownRelevancy) -> Vec<u8> {
    let present = img.values.iter().flatten();
    let lo = present.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = present.copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = Vec::with_capacity(img.values.len() * 4);
    for row in img.values.chunks(img.width.max(1)).rev() {
        for v in row {
            match v {
                Some(s) => {
                    let t = if span > 0.0 { (s - lo) / span } else { 0.5 };
                    out.extend(color(t));
                    out.push(255);
                }
                None => out.extend([0, 0, 0, 0]),
            }
        }
    }
    out
}

pub fn write_png(img: &TopDownRelevancy, w: impl Write) -> Result<(), png::EncodingError> {
    let mut enc = png::Encoder::new(w, img.width as u32, img.height as u32);
    enc.set_color(png::ColorType::Rgba);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&rgba(img))?;
    writer.finish()
}
