//! Label-aware augmentations for labelled source samples (CutMix, colour
//! jitter with small rotations) and the static CutOut for target views.

use rand::Rng;

use super::affine::Affine2;
use super::ops::{brightness, contrast, saturation, warp_image, WARP_FILL};
use crate::dataset::{DepthMap, DepthSample, Image};
use crate::error::{Error, Result};

/// Axis-aligned rectangle in pixel units, `[top, top+height) x [left, left+width)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CutBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

const ASPECT_TRIES: usize = 64;

/// Samples a box of area `alpha * h * w` with aspect ratio (width/height)
/// uniform in `[0.5, 2]`, re-drawing the aspect until the box fits; falls
/// back to the image's own aspect ratio.
pub fn sample_box<R: Rng + ?Sized>(h: usize, w: usize, alpha: f64, rng: &mut R) -> Result<CutBox> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::arg(format!("cutmix alpha {alpha} outside [0, 1]")));
    }
    let area = alpha * (h * w) as f64;
    let (bh, bw) = if alpha == 0.0 {
        (0, 0)
    } else if alpha == 1.0 {
        (h, w)
    } else {
        (0..ASPECT_TRIES)
            .map(|_| {
                let aspect: f64 = rng.random_range(0.5..=2.0);
                (
                    (area / aspect).sqrt().round() as usize,
                    (area * aspect).sqrt().round() as usize,
                )
            })
            .find(|&(bh, bw)| bh >= 1 && bw >= 1 && bh <= h && bw <= w)
            .unwrap_or_else(|| {
                let s = alpha.sqrt();
                (
                    ((h as f64 * s).round() as usize).clamp(1, h),
                    ((w as f64 * s).round() as usize).clamp(1, w),
                )
            })
    };
    let top = rng.random_range(0..=h - bh);
    let left = rng.random_range(0..=w - bw);
    Ok(CutBox {
        top,
        left,
        height: bh,
        width: bw,
    })
}

/// Copies `patch` of `b` into `a`, image and depth alike.
pub fn paste(a: &DepthSample, b: &DepthSample, patch: CutBox) -> DepthSample {
    let mut out = a.clone();
    for y in patch.top..patch.top + patch.height {
        for x in patch.left..patch.left + patch.width {
            out.depth[[y, x]] = b.depth[[y, x]];
            for c in 0..3 {
                out.image[[y, x, c]] = b.image[[y, x, c]];
            }
        }
    }
    out
}

/// CutMix of two labelled samples: a rectangle covering `alpha` of the
/// image area is copied from `b` into `a`.
pub fn cutmix<R: Rng + ?Sized>(
    a: &DepthSample,
    b: &DepthSample,
    alpha: f64,
    rng: &mut R,
) -> Result<DepthSample> {
    cutmix_with_box(a, b, alpha, rng).map(|(s, _)| s)
}

/// [`cutmix`] that also reports the pasted rectangle.
pub fn cutmix_with_box<R: Rng + ?Sized>(
    a: &DepthSample,
    b: &DepthSample,
    alpha: f64,
    rng: &mut R,
) -> Result<(DepthSample, CutBox)> {
    if a.image.dim() != b.image.dim() {
        return Err(Error::arg(format!(
            "cutmix resolution mismatch: {:?} vs {:?}",
            a.image.dim(),
            b.image.dim()
        )));
    }
    if a.domain != b.domain {
        return Err(Error::arg("cutmix samples come from different domains"));
    }
    if !a.is_labelled() || !b.is_labelled() {
        return Err(Error::arg("cutmix requires labelled samples"));
    }
    let patch = sample_box(a.height(), a.width(), alpha, rng)?;
    Ok((paste(a, b, patch), patch))
}

/// Static CutOut: one rectangle of 10% of the image area set to mid-gray.
pub const CUTOUT_AREA: f64 = 0.1;

pub fn cutout_box<R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> CutBox {
    let s = CUTOUT_AREA.sqrt();
    let bh = ((h as f64 * s).round() as usize).clamp(1, h);
    let bw = ((w as f64 * s).round() as usize).clamp(1, w);
    CutBox {
        top: rng.random_range(0..=h - bh),
        left: rng.random_range(0..=w - bw),
        height: bh,
        width: bw,
    }
}

pub(crate) fn static_cutout<R: Rng + ?Sized>(image: &Image, rng: &mut R) -> Image {
    let (h, w, _) = image.dim();
    let patch = cutout_box(h, w, rng);
    let mut out = image.clone();
    for y in patch.top..patch.top + patch.height {
        for x in patch.left..patch.left + patch.width {
            for c in 0..3 {
                out[[y, x, c]] = WARP_FILL;
            }
        }
    }
    out
}

/// Parameters of one pretraining augmentation draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JitterParams {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub rotation_deg: f32,
}

impl JitterParams {
    pub const IDENTITY: JitterParams = JitterParams {
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        rotation_deg: 0.0,
    };

    /// Jitter factors uniform in `[0.8, 1.2]`, rotation uniform in `[-5°, 5°]`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            brightness: rng.random_range(0.8..=1.2),
            contrast: rng.random_range(0.8..=1.2),
            saturation: rng.random_range(0.8..=1.2),
            rotation_deg: rng.random_range(-5.0..=5.0),
        }
    }
}

/// Colour jitter on the image, then a joint rotation of image and depth
/// about the image centre. Depth uses nearest-neighbour lookup; pixels
/// rotated in from outside get depth 0.
pub fn pretrain_augment_with(sample: &DepthSample, params: JitterParams) -> DepthSample {
    let mut image = sample.image.clone();
    if params.brightness != 1.0 {
        image = brightness(&image, params.brightness);
    }
    if params.contrast != 1.0 {
        image = contrast(&image, params.contrast);
    }
    if params.saturation != 1.0 {
        image = saturation(&image, params.saturation);
    }
    let mut depth = sample.depth.clone();
    if params.rotation_deg != 0.0 {
        let (h, w) = depth.dim();
        let step = Affine2::rotation_about(
            f64::from(params.rotation_deg).to_radians(),
            (w as f64 - 1.0) / 2.0,
            (h as f64 - 1.0) / 2.0,
        );
        image = warp_image(&image, &step, WARP_FILL);
        depth = DepthMap::from_shape_fn((h, w), |(y, x)| {
            let (sx, sy) = step.apply(x as f64, y as f64);
            let (rx, ry) = (sx.round(), sy.round());
            if rx < 0.0 || ry < 0.0 || rx > (w - 1) as f64 || ry > (h - 1) as f64 {
                0.0
            } else {
                sample.depth[[ry as usize, rx as usize]]
            }
        });
    }
    DepthSample {
        image,
        depth,
        ..sample.clone()
    }
}

pub fn pretrain_augment<R: Rng + ?Sized>(sample: &DepthSample, rng: &mut R) -> DepthSample {
    pretrain_augment_with(sample, JitterParams::sample(rng))
}
