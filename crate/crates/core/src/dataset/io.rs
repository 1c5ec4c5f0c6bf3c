use std::io::{Read, Write};
use std::path::Path;

use image::RgbImage;

use super::{DepthMap, Image};
use crate::error::{Error, Result};

const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

/// Writes an `(H, W, 3)` image in `[0, 1]` as 8-bit PNG. Values are
/// rounded to the nearest of 256 levels, so images already on that grid
/// survive a round-trip bit-exactly.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let (h, w, _) = image.dim();
    let mut buf = RgbImage::new(w as u32, h as u32);
    for (x, y, px) in buf.enumerate_pixels_mut() {
        for c in 0..3 {
            let v = image[[y as usize, x as usize, c]].clamp(0.0, 1.0);
            px.0[c] = (v * 255.0).round() as u8;
        }
    }
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

pub fn read_image(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let mut out = Image::zeros((h as usize, w as usize, 3));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[y as usize, x as usize, c]] = f32::from(px.0[c]) / 255.0;
        }
    }
    Ok(out)
}

pub fn write_depth(path: &Path, depth: &DepthMap, cap: f32) -> Result<()> {
    let (h, w) = depth.dim();
    let mut bytes = Vec::with_capacity(16 + 4 * h * w);
    bytes.extend_from_slice(DEPTH_MAGIC);
    bytes.extend_from_slice(&(h as u32).to_le_bytes());
    bytes.extend_from_slice(&(w as u32).to_le_bytes());
    bytes.extend_from_slice(&cap.to_le_bytes());
    for v in depth.iter() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

/// Reads a depth container, returning the map and its declared cap.
pub fn read_depth(path: &Path) -> Result<(DepthMap, f32)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != DEPTH_MAGIC {
        return Err(Error::format(path, "missing DPTH header"));
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let h = u32::from_le_bytes(word(4)) as usize;
    let w = u32::from_le_bytes(word(8)) as usize;
    let cap = f32::from_le_bytes(word(12));
    if bytes.len() != 16 + 4 * h * w {
        return Err(Error::format(
            path,
            format!(
                "expected {} payload bytes for {h}x{w}, found {}",
                4 * h * w,
                bytes.len() - 16
            ),
        ));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let depth =
        DepthMap::from_shape_vec((h, w), values).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((depth, cap))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_file_layout_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.f32");
        let depth = DepthMap::from_shape_vec((2, 3), vec![0.0, 1.5, 2.0, 3.25, 80.0, 7.0]).unwrap();
        write_depth(&path, &depth, 80.0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"DPTH");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(bytes[12..16].try_into().unwrap()), 80.0);
        assert_eq!(f32::from_le_bytes(bytes[20..24].try_into().unwrap()), 1.5);
        assert_eq!(bytes.len(), 16 + 6 * 4);
        let (back, cap) = read_depth(&path).unwrap();
        assert_eq!(back, depth);
        assert_eq!(cap, 80.0);
    }

    #[test]
    fn truncated_depth_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("depth.f32");
        let depth = DepthMap::zeros((4, 4));
        write_depth(&path, &depth, 8.0).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 4]).unwrap();
        assert!(matches!(read_depth(&path), Err(Error::Format { .. })));
    }
}
