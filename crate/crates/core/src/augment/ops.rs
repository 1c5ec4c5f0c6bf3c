//! The individual perturbation operators. Photometric operators follow
//! the PIL `ImageEnhance`/`ImageOps` semantics used by common RandAugment
//! implementations, transcribed to images with values in `[0, 1]`.

use std::fmt;
use std::str::FromStr;

use super::affine::{bilinear_taps, Affine2};
use crate::dataset::Image;
use crate::error::{Error, Result};

/// Value written into pixels a geometric warp sampled from outside the image.
pub const WARP_FILL: f32 = 0.5;

/// Maximum severity level.
pub const MAX_LEVEL: f32 = 10.0;

const ENHANCE_RANGE: f32 = 0.9;
const MAX_ROTATE_DEG: f32 = 30.0;
const MAX_SHEAR: f32 = 0.3;
const MAX_TRANSLATE_FRAC: f32 = 0.3;
const MAX_POSTERIZE_DROP: f32 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    AutoContrast,
    Brightness,
    Color,
    Contrast,
    Equalize,
    Identity,
    Posterize,
    Rotate,
    Sharpness,
    ShearX,
    ShearY,
    Solarize,
    TranslateX,
    TranslateY,
}

impl OpKind {
    pub const ALL: [OpKind; 14] = [
        OpKind::AutoContrast,
        OpKind::Brightness,
        OpKind::Color,
        OpKind::Contrast,
        OpKind::Equalize,
        OpKind::Identity,
        OpKind::Posterize,
        OpKind::Rotate,
        OpKind::Sharpness,
        OpKind::ShearX,
        OpKind::ShearY,
        OpKind::Solarize,
        OpKind::TranslateX,
        OpKind::TranslateY,
    ];

    pub fn is_geometric(self) -> bool {
        matches!(
            self,
            OpKind::Rotate
                | OpKind::ShearX
                | OpKind::ShearY
                | OpKind::TranslateX
                | OpKind::TranslateY
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            OpKind::AutoContrast => "AutoContrast",
            OpKind::Brightness => "Brightness",
            OpKind::Color => "Color",
            OpKind::Contrast => "Contrast",
            OpKind::Equalize => "Equalize",
            OpKind::Identity => "Identity",
            OpKind::Posterize => "Posterize",
            OpKind::Rotate => "Rotate",
            OpKind::Sharpness => "Sharpness",
            OpKind::ShearX => "ShearX",
            OpKind::ShearY => "ShearY",
            OpKind::Solarize => "Solarize",
            OpKind::TranslateX => "TranslateX",
            OpKind::TranslateY => "TranslateY",
        }
    }

    /// Concrete operator at severity `level` (0..=10). `negate` flips the
    /// direction of signed operators.
    pub fn at_level(self, level: f32, negate: bool, h: usize, w: usize) -> Result<AugmentOp> {
        if !(0.0..=MAX_LEVEL).contains(&level) {
            return Err(Error::config(format!(
                "severity {level} outside [0, {MAX_LEVEL}]"
            )));
        }
        let frac = level / MAX_LEVEL;
        let sign = if negate { -1.0 } else { 1.0 };
        let enhance = 1.0 + sign * ENHANCE_RANGE * frac;
        Ok(match self {
            OpKind::AutoContrast => AugmentOp::AutoContrast,
            OpKind::Brightness => AugmentOp::Brightness(enhance),
            OpKind::Color => AugmentOp::Color(enhance),
            OpKind::Contrast => AugmentOp::Contrast(enhance),
            OpKind::Equalize => AugmentOp::Equalize,
            OpKind::Identity => AugmentOp::Identity,
            OpKind::Posterize => {
                AugmentOp::Posterize(8 - (MAX_POSTERIZE_DROP * frac).round() as u8)
            }
            OpKind::Rotate => AugmentOp::Rotate(sign * MAX_ROTATE_DEG * frac),
            OpKind::Sharpness => AugmentOp::Sharpness(enhance),
            OpKind::ShearX => AugmentOp::ShearX(sign * MAX_SHEAR * frac),
            OpKind::ShearY => AugmentOp::ShearY(sign * MAX_SHEAR * frac),
            OpKind::Solarize => AugmentOp::Solarize(256 - (256.0 * frac).round() as u16),
            OpKind::TranslateX => {
                AugmentOp::TranslateX((sign * MAX_TRANSLATE_FRAC * frac * w as f32).round() as i32)
            }
            OpKind::TranslateY => {
                AugmentOp::TranslateY((sign * MAX_TRANSLATE_FRAC * frac * h as f32).round() as i32)
            }
        })
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown augmentation op '{s}'")))
    }
}

/// A fully parameterised operator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugmentOp {
    AutoContrast,
    /// Enhancement factor (1 = identity).
    Brightness(f32),
    Color(f32),
    Contrast(f32),
    Equalize,
    Identity,
    /// Bits kept per channel.
    Posterize(u8),
    /// Degrees.
    Rotate(f32),
    Sharpness(f32),
    ShearX(f32),
    ShearY(f32),
    /// 8-bit threshold; values at or above are inverted (256 = never).
    Solarize(u16),
    /// Content shift in whole pixels (positive = right/down).
    TranslateX(i32),
    TranslateY(i32),
}

impl AugmentOp {
    pub fn kind(&self) -> OpKind {
        match self {
            AugmentOp::AutoContrast => OpKind::AutoContrast,
            AugmentOp::Brightness(_) => OpKind::Brightness,
            AugmentOp::Color(_) => OpKind::Color,
            AugmentOp::Contrast(_) => OpKind::Contrast,
            AugmentOp::Equalize => OpKind::Equalize,
            AugmentOp::Identity => OpKind::Identity,
            AugmentOp::Posterize(_) => OpKind::Posterize,
            AugmentOp::Rotate(_) => OpKind::Rotate,
            AugmentOp::Sharpness(_) => OpKind::Sharpness,
            AugmentOp::ShearX(_) => OpKind::ShearX,
            AugmentOp::ShearY(_) => OpKind::ShearY,
            AugmentOp::Solarize(_) => OpKind::Solarize,
            AugmentOp::TranslateX(_) => OpKind::TranslateX,
            AugmentOp::TranslateY(_) => OpKind::TranslateY,
        }
    }

    pub fn is_geometric(&self) -> bool {
        self.kind().is_geometric()
    }

    /// Map from the output view's pixel coordinates to the input view's,
    /// for geometric operators.
    pub fn warp(&self, h: usize, w: usize) -> Option<Affine2> {
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        match *self {
            AugmentOp::Rotate(deg) => {
                Some(Affine2::rotation_about(f64::from(deg).to_radians(), cx, cy))
            }
            AugmentOp::ShearX(k) => Some(Affine2::shear_x(f64::from(k), cy)),
            AugmentOp::ShearY(k) => Some(Affine2::shear_y(f64::from(k), cx)),
            AugmentOp::TranslateX(t) => Some(Affine2::translation(-f64::from(t), 0.0)),
            AugmentOp::TranslateY(t) => Some(Affine2::translation(0.0, -f64::from(t))),
            _ => None,
        }
    }

    /// Applies the operator; geometric operators also return their warp.
    pub fn apply(&self, image: &Image) -> (Image, Option<Affine2>) {
        let (h, w, _) = image.dim();
        if let Some(step) = self.warp(h, w) {
            return (warp_image(image, &step, WARP_FILL), Some(step));
        }
        let out = match *self {
            AugmentOp::AutoContrast => autocontrast(image),
            AugmentOp::Brightness(f) => brightness(image, f),
            AugmentOp::Color(f) => saturation(image, f),
            AugmentOp::Contrast(f) => contrast(image, f),
            AugmentOp::Equalize => equalize(image),
            AugmentOp::Identity => image.clone(),
            AugmentOp::Posterize(bits) => posterize(image, bits),
            AugmentOp::Sharpness(f) => sharpness(image, f),
            AugmentOp::Solarize(t) => solarize(image, t),
            _ => unreachable!("geometric operators handled above"),
        };
        (out, None)
    }
}

/// `degenerate + factor * (image - degenerate)`, clamped to `[0, 1]`.
fn blend(image: &Image, degenerate: &Image, factor: f32) -> Image {
    let mut out = image.clone();
    out.zip_mut_with(degenerate, |v, d| {
        *v = (d + factor * (*v - d)).clamp(0.0, 1.0)
    });
    out
}

fn luma(image: &Image, y: usize, x: usize) -> f32 {
    0.299 * image[[y, x, 0]] + 0.587 * image[[y, x, 1]] + 0.114 * image[[y, x, 2]]
}

pub(crate) fn brightness(image: &Image, factor: f32) -> Image {
    image.mapv(|v| (factor * v).clamp(0.0, 1.0))
}

pub(crate) fn saturation(image: &Image, factor: f32) -> Image {
    let (h, w, _) = image.dim();
    let gray = Image::from_shape_fn((h, w, 3), |(y, x, _)| luma(image, y, x));
    blend(image, &gray, factor)
}

pub(crate) fn contrast(image: &Image, factor: f32) -> Image {
    let (h, w, _) = image.dim();
    let mut mean = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            mean += f64::from(luma(image, y, x));
        }
    }
    let mean = (mean / (h * w) as f64) as f32;
    image.mapv(|v| (mean + factor * (v - mean)).clamp(0.0, 1.0))
}

fn sharpness(image: &Image, factor: f32) -> Image {
    let (h, w, _) = image.dim();
    let mut smooth = image.clone();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            for c in 0..3 {
                let mut acc = 4.0 * image[[y, x, c]];
                for dy in 0..3 {
                    for dx in 0..3 {
                        acc += image[[y + dy - 1, x + dx - 1, c]];
                    }
                }
                smooth[[y, x, c]] = acc / 13.0;
            }
        }
    }
    blend(image, &smooth, factor)
}

fn autocontrast(image: &Image) -> Image {
    let mut out = image.clone();
    for c in 0..3 {
        let channel = image.index_axis(ndarray::Axis(2), c);
        let lo = channel.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = channel.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        if hi > lo {
            out.index_axis_mut(ndarray::Axis(2), c)
                .mapv_inplace(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0));
        }
    }
    out
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn equalize(image: &Image) -> Image {
    let mut out = image.clone();
    for c in 0..3 {
        let mut hist = [0usize; 256];
        for v in image.index_axis(ndarray::Axis(2), c).iter() {
            hist[to_u8(*v) as usize] += 1;
        }
        let total: usize = hist.iter().sum();
        let last = hist.iter().rev().find(|n| **n > 0).copied().unwrap_or(0);
        let step = (total - last) / 255;
        if step == 0 {
            continue;
        }
        let mut lut = [0u8; 256];
        let mut n = step / 2;
        for (i, count) in hist.iter().enumerate() {
            lut[i] = (n / step).min(255) as u8;
            n += count;
        }
        out.index_axis_mut(ndarray::Axis(2), c)
            .mapv_inplace(|v| f32::from(lut[to_u8(v) as usize]) / 255.0);
    }
    out
}

fn posterize(image: &Image, bits: u8) -> Image {
    let bits = bits.clamp(1, 8);
    let mask = 0xFFu8 << (8 - bits);
    image.mapv(|v| f32::from(to_u8(v) & mask) / 255.0)
}

fn solarize(image: &Image, threshold: u16) -> Image {
    image.mapv(|v| {
        if u16::from(to_u8(v)) >= threshold {
            1.0 - v
        } else {
            v
        }
    })
}

/// Resamples `image` so that `out(p) = image(step(p))` (bilinear); points
/// that fall outside receive `fill`.
pub fn warp_image(image: &Image, step: &Affine2, fill: f32) -> Image {
    let (h, w, _) = image.dim();
    let planes: Vec<Vec<f32>> = (0..3)
        .map(|c| {
            image
                .index_axis(ndarray::Axis(2), c)
                .iter()
                .copied()
                .collect()
        })
        .collect();
    let mut out = Image::from_elem((h, w, 3), fill);
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = step.apply(x as f64, y as f64);
            if let Some(taps) = bilinear_taps(sx, sy, h, w) {
                for c in 0..3 {
                    out[[y, x, c]] = taps.sample(&planes[c]).clamp(0.0, 1.0);
                }
            }
        }
    }
    out
}
