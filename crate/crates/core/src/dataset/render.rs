use super::annotation::SceneAnnotation;
use super::DatasetError;
use crate::geometry::{rasterize, realize_all, Placement, RasterMask};

pub const BACKGROUND: u8 = 255;
pub const FOREGROUND: u8 = 0;

/// Overlay gray levels.
pub const OVERLAY_GT_ONLY: u8 = 192;
pub const OVERLAY_PRED_ONLY: u8 = 128;
pub const OVERLAY_BOTH: u8 = 0;

/// Encodes row-major 8-bit gray pixels as PNG.
pub fn encode_gray_png(width: u32, height: u32, pixels: &[u8]) -> Result<Vec<u8>, DatasetError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width, height);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| DatasetError::Png(e.to_string()))?;
        writer
            .write_image_data(pixels)
            .map_err(|e| DatasetError::Png(e.to_string()))?;
    }
    Ok(out)
}

fn mask_pixels(mask: &RasterMask) -> Vec<u8> {
    let (w, h) = (mask.width(), mask.height());
    let mut px = vec![BACKGROUND; (w * h) as usize];
    for (c, r) in mask.iter_ones() {
        px[(r * w + c) as usize] = FOREGROUND;
    }
    px
}

/// Black silhouette on white.
pub fn mask_to_png(mask: &RasterMask) -> Result<Vec<u8>, DatasetError> {
    encode_gray_png(mask.width(), mask.height(), &mask_pixels(mask))
}

pub fn render_placements(pieces: &[Placement], resolution: u32) -> Result<Vec<u8>, DatasetError> {
    let mask = rasterize(&realize_all(pieces)?, resolution)?;
    mask_to_png(&mask)
}

/// Renders the union silhouette of a scene.
pub fn render_scene(a: &SceneAnnotation, resolution: u32) -> Result<Vec<u8>, DatasetError> {
    render_placements(&a.pieces, resolution)
}

/// GT-only, prediction-only and shared pixels in distinct gray levels.
pub fn render_overlay(gt: &RasterMask, pred: &RasterMask) -> Result<Vec<u8>, DatasetError> {
    if gt.width() != pred.width() {
        return Err(crate::geometry::GeometryError::ResolutionMismatch(gt.width(), pred.width()).into());
    }
    let w = gt.width();
    let mut px = vec![BACKGROUND; (w * gt.height()) as usize];
    for (c, r) in gt.iter_ones() {
        px[(r * w + c) as usize] = OVERLAY_GT_ONLY;
    }
    for (c, r) in pred.iter_ones() {
        let v = &mut px[(r * w + c) as usize];
        *v = if *v == OVERLAY_GT_ONLY {
            OVERLAY_BOTH
        } else {
            OVERLAY_PRED_ONLY
        };
    }
    encode_gray_png(w, gt.height(), &px)
}

/// Decodes an 8-bit grayscale PNG into raw pixels.
pub fn decode_gray_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), DatasetError> {
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().map_err(|e| DatasetError::Png(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| DatasetError::Png(e.to_string()))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Eight {
        return Err(DatasetError::Png(format!(
            "expected 8-bit grayscale, got {:?}/{:?}",
            info.color_type, info.bit_depth
        )));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width, info.height, buf))
}

/// Dark pixels of a square grayscale PNG as a mask.
pub fn png_to_mask(bytes: &[u8]) -> Result<RasterMask, DatasetError> {
    let (w, h, px) = decode_gray_png(bytes)?;
    if w != h {
        return Err(DatasetError::Png(format!("non-square image {w}x{h}")));
    }
    let mut mask = RasterMask::empty(w);
    for r in 0..h {
        for c in 0..w {
            if px[(r * w + c) as usize] < 128 {
                mask.set(c, r, true);
            }
        }
    }
    Ok(mask)
}
