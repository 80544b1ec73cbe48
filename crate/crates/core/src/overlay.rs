//! Attention overlays: upsample per-frame attention maps to the input
//! resolution and blend them over the frames as a red highlight, written as
//! binary PPM (P6) images.
//!
//! Blend rule, applied per pixel with `a` the upsampled attention value:
//! `out = pixel + 0.6 * a * (red - pixel)` where `red = (1, 0, 0)`. An
//! attention of zero leaves the pixel alone; full attention pulls it 60%
//! of the way to pure red.

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Fraction of the way to the highlight color at full attention.
pub const BLEND_STRENGTH: f64 = 0.6;
const HIGHLIGHT: [f64; 3] = [1.0, 0.0, 0.0];

/// Bilinear upsample of a single-channel map stack `(t, h, w, 1)` to
/// `(t, out_h, out_w, 1)`. Sample positions are center-aligned: destination
/// pixel centers map to `(i + 0.5) * h / out_h - 0.5` in source coordinates,
/// clamped at the borders.
pub fn upsample_bilinear(maps: &FeatureMap, out_h: usize, out_w: usize) -> Result<FeatureMap> {
    if maps.c() != 1 {
        return Err(Error::shape(format!(
            "upsample wants a single-channel map, got {} channels",
            maps.c()
        )));
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("upsample target extents must be positive".to_string()));
    }
    let (t, h, w) = (maps.t(), maps.h(), maps.w());
    let mut out = FeatureMap::zeros(t, out_h, out_w, 1);
    let scale_h = h as f64 / out_h as f64;
    let scale_w = w as f64 / out_w as f64;
    for ti in 0..t {
        for oy in 0..out_h {
            let sy = ((oy as f64 + 0.5) * scale_h - 0.5).clamp(0.0, (h - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f64;
            for ox in 0..out_w {
                let sx = ((ox as f64 + 0.5) * scale_w - 0.5).clamp(0.0, (w - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f64;
                let v00 = maps.get(ti, y0, x0, 0) as f64;
                let v01 = maps.get(ti, y0, x1, 0) as f64;
                let v10 = maps.get(ti, y1, x0, 0) as f64;
                let v11 = maps.get(ti, y1, x1, 0) as f64;
                let top = v00 + (v01 - v00) * fx;
                let bot = v10 + (v11 - v10) * fx;
                out.set(ti, oy, ox, 0, (top + (bot - top) * fy) as f32);
            }
        }
    }
    Ok(out)
}

/// Blend attention over frames. `frames` is `(t, h, w, 3)` with values in
/// `[0, 1]`; `maps` is `(t, mh, mw, 1)` at any resolution and is upsampled
/// to the frame size first. Returns one `(h, w, 3)` blended frame stack.
pub fn blend_attention(frames: &FeatureMap, maps: &FeatureMap) -> Result<FeatureMap> {
    if frames.c() != 3 {
        return Err(Error::shape(format!("frames must be rgb, got {} channels", frames.c())));
    }
    if frames.t() != maps.t() {
        return Err(Error::shape(format!(
            "frame count {} does not match map count {}",
            frames.t(),
            maps.t()
        )));
    }
    let up = upsample_bilinear(maps, frames.h(), frames.w())?;
    let mut out = FeatureMap::zeros(frames.t(), frames.h(), frames.w(), 3);
    for ti in 0..frames.t() {
        for y in 0..frames.h() {
            for x in 0..frames.w() {
                let a = up.get(ti, y, x, 0) as f64;
                for ch in 0..3 {
                    let px = frames.get(ti, y, x, ch) as f64;
                    let blended = px + BLEND_STRENGTH * a * (HIGHLIGHT[ch] - px);
                    out.set(ti, y, x, ch, blended.clamp(0.0, 1.0) as f32);
                }
            }
        }
    }
    Ok(out)
}

/// Encode one frame of an rgb stack as a binary PPM (P6) image.
/// Values are clamped to `[0, 1]` and quantized to 8 bits.
pub fn encode_ppm(frames: &FeatureMap, frame: usize) -> Result<Vec<u8>> {
    if frames.c() != 3 {
        return Err(Error::shape(format!("ppm wants rgb frames, got {} channels", frames.c())));
    }
    if frame >= frames.t() {
        return Err(Error::invalid(format!(
            "frame {frame} out of range, stack holds {}",
            frames.t()
        )));
    }
    let (h, w) = (frames.h(), frames.w());
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.reserve(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = (frames.get(frame, y, x, ch) as f64).clamp(0.0, 1.0);
                bytes.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(bytes)
}

/// Upsample, blend and encode every frame. Returns the P6 payloads in frame
/// order.
pub fn render_overlays(frames: &FeatureMap, maps: &FeatureMap) -> Result<Vec<Vec<u8>>> {
    let blended = blend_attention(frames, maps)?;
    (0..blended.t()).map(|i| encode_ppm(&blended, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_frames(t: usize, h: usize, w: usize, value: f32) -> FeatureMap {
        FeatureMap::new(t, h, w, 3, vec![value; t * h * w * 3]).unwrap()
    }

    #[test]
    fn upsample_of_constant_map_is_constant() {
        let maps = FeatureMap::new(1, 2, 2, 1, vec![0.4; 4]).unwrap();
        let up = upsample_bilinear(&maps, 8, 6).unwrap();
        assert_eq!(up.dims(), [1, 8, 6, 1]);
        for &v in up.data() {
            assert!((v - 0.4).abs() < 1e-6);
        }
    }

    #[test]
    fn upsample_same_size_is_identity() {
        let maps = FeatureMap::new(1, 2, 3, 1, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let up = upsample_bilinear(&maps, 2, 3).unwrap();
        assert_eq!(up.data(), maps.data());
    }

    #[test]
    fn upsample_interpolates_between_cells() {
        // 1x2 map (0, 1) doubled to 1x4: centers at src 0.25 (clamped
        // weights), midpoints give 0, 0.25, 0.75, 1
        let maps = FeatureMap::new(1, 1, 2, 1, vec![0.0, 1.0]).unwrap();
        let up = upsample_bilinear(&maps, 1, 4).unwrap();
        let expect = [0.0f32, 0.25, 0.75, 1.0];
        for (got, want) in up.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_half_attention_blends_everywhere_equally() {
        let frames = uniform_frames(1, 4, 4, 0.5);
        let maps = FeatureMap::new(1, 2, 2, 1, vec![0.5; 4]).unwrap();
        let out = blend_attention(&frames, &maps).unwrap();
        // red channel: 0.5 + 0.3 (1 - 0.5) = 0.65; green/blue: 0.5 - 0.15
        for y in 0..4 {
            for x in 0..4 {
                assert!((out.get(0, y, x, 0) - 0.65).abs() < 1e-6);
                assert!((out.get(0, y, x, 1) - 0.35).abs() < 1e-6);
                assert!((out.get(0, y, x, 2) - 0.35).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn hot_quadrant_reddens_its_corner_most() {
        let frames = uniform_frames(1, 8, 8, 0.5);
        let mut maps = FeatureMap::zeros(1, 2, 2, 1);
        maps.set(0, 0, 1, 0, 1.0); // top-right cell hot
        let out = blend_attention(&frames, &maps).unwrap();
        let redness = |y: usize, x: usize| out.get(0, y, x, 0) - out.get(0, y, x, 1);
        assert!(redness(0, 7) > redness(0, 0));
        assert!(redness(0, 7) > redness(7, 7));
        assert!(redness(0, 7) > redness(7, 0));
        // zero attention leaves the opposite corner untouched
        assert!((out.get(0, 7, 0, 0) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn ppm_header_and_payload_size() {
        let frames = uniform_frames(2, 3, 5, 1.0);
        let bytes = encode_ppm(&frames, 1).unwrap();
        let header = b"P6\n5 3\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 3 * 5 * 3);
        assert!(bytes[header.len()..].iter().all(|&b| b == 255));
    }

    #[test]
    fn render_produces_one_image_per_frame() {
        let frames = uniform_frames(3, 8, 8, 0.2);
        let maps = FeatureMap::new(3, 2, 2, 1, vec![0.5; 12]).unwrap();
        let images = render_overlays(&frames, &maps).unwrap();
        assert_eq!(images.len(), 3);
    }

    #[test]
    fn mismatched_frame_counts_are_rejected() {
        let frames = uniform_frames(2, 8, 8, 0.2);
        let maps = FeatureMap::new(1, 2, 2, 1, vec![0.5; 4]).unwrap();
        assert!(blend_attention(&frames, &maps).is_err());
    }
}
