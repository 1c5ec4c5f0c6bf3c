//! Affine bookkeeping for geometric perturbations and the bilinear
//! resampling used to bring predictions back into the original frame.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// 2x3 affine map `(x, y) -> (a x + b y + c, d x + e y + f)` in pixel
/// coordinates (`x` = column, `y` = row).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine2(pub [[f64; 3]; 2]);

impl Affine2 {
    pub const IDENTITY: Affine2 = Affine2([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);

    pub fn translation(tx: f64, ty: f64) -> Self {
        Affine2([[1.0, 0.0, tx], [0.0, 1.0, ty]])
    }

    /// Rotation by `radians` about `(cx, cy)`.
    pub fn rotation_about(radians: f64, cx: f64, cy: f64) -> Self {
        let (s, c) = radians.sin_cos();
        Affine2([[c, -s, cx - c * cx + s * cy], [s, c, cy - s * cx - c * cy]])
    }

    /// `x' = x + k (y - cy)`.
    pub fn shear_x(k: f64, cy: f64) -> Self {
        Affine2([[1.0, k, -k * cy], [0.0, 1.0, 0.0]])
    }

    /// `y' = y + k (x - cx)`.
    pub fn shear_y(k: f64, cx: f64) -> Self {
        Affine2([[1.0, 0.0, 0.0], [k, 1.0, -k * cx]])
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (
            m[0][0] * x + m[0][1] * y + m[0][2],
            m[1][0] * x + m[1][1] * y + m[1][2],
        )
    }

    /// `self ∘ other`: apply `other` first.
    pub fn then_after(&self, other: &Affine2) -> Affine2 {
        let a = &self.0;
        let b = &other.0;
        let mut out = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..3 {
                out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
            out[r][2] += a[r][2];
        }
        Affine2(out)
    }

    pub fn determinant(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn inverse(&self) -> Result<Affine2> {
        let det = self.determinant();
        if det.abs() < 1e-9 || !det.is_finite() {
            return Err(Error::Internal(format!(
                "affine map is not invertible (det = {det})"
            )));
        }
        let [[a, b, c], [d, e, f]] = self.0;
        let ia = e / det;
        let ib = -b / det;
        let id = -d / det;
        let ie = a / det;
        Ok(Affine2([
            [ia, ib, -(ia * c + ib * f)],
            [id, ie, -(id * c + ie * f)],
        ]))
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

const BOUNDS_EPS: f64 = 1e-6;

/// Up to four `(flat index, weight)` taps for bilinear sampling at `(x, y)`
/// on an `h x w` grid; taps with zero weight are dropped. `None` when the
/// point lies outside `[0, w-1] x [0, h-1]`.
pub(crate) fn bilinear_taps(x: f64, y: f64, h: usize, w: usize) -> Option<Taps> {
    if !(x >= -BOUNDS_EPS && y >= -BOUNDS_EPS)
        || x > (w - 1) as f64 + BOUNDS_EPS
        || y > (h - 1) as f64 + BOUNDS_EPS
    {
        return None;
    }
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let mut taps = Taps::default();
    for (yy, wy) in [(y0, 1.0 - fy), (y0 + 1, fy)] {
        for (xx, wx) in [(x0, 1.0 - fx), (x0 + 1, fx)] {
            let weight = wy * wx;
            if weight > 0.0 {
                debug_assert!(yy < h && xx < w);
                taps.push(yy * w + xx, weight);
            }
        }
    }
    Some(taps)
}

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Taps {
    len: u8,
    items: [(u32, f64); 4],
}

impl Taps {
    fn push(&mut self, idx: usize, weight: f64) {
        self.items[self.len as usize] = (idx as u32, weight);
        self.len += 1;
    }

    pub(crate) fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.items[..self.len as usize]
            .iter()
            .map(|&(i, w)| (i as usize, w))
    }

    pub(crate) fn sample(&self, data: &[f32]) -> f32 {
        self.iter()
            .map(|(i, w)| f64::from(data[i]) * w)
            .sum::<f64>() as f32
    }
}

/// Composed geometric transform of an augmentation chain plus the pixels of
/// the augmented view that were sampled from inside the original image.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometricRecord {
    /// Maps augmented-frame coordinates to original-frame coordinates.
    pub to_original: Affine2,
    /// `(H, W)`, true where the augmented view saw original content.
    pub mask: Array2<bool>,
}

impl GeometricRecord {
    pub fn identity(h: usize, w: usize) -> Self {
        Self {
            to_original: Affine2::IDENTITY,
            mask: Array2::from_elem((h, w), true),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.mask.dim()
    }

    pub fn is_identity(&self) -> bool {
        self.to_original.is_identity() && self.mask.iter().all(|m| *m)
    }

    /// Appends a warp whose map `step` takes the new view's coordinates to
    /// the current view's coordinates.
    pub(crate) fn push(&mut self, step: &Affine2) {
        let (h, w) = self.dim();
        let prev = self.mask.as_slice().expect("standard layout").to_vec();
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = step.apply(x as f64, y as f64);
                self.mask[[y, x]] = bilinear_taps(sx, sy, h, w)
                    .map(|t| t.iter().all(|(i, _)| prev[i]))
                    .unwrap_or(false);
            }
        }
        self.to_original = self.to_original.then_after(step);
    }

    /// Precomputes the resampling that brings augmented-frame maps into the
    /// original frame.
    pub fn realignment(&self) -> Result<Realignment> {
        let (h, w) = self.dim();
        let inv = self.to_original.inverse()?;
        let mask = self.mask.as_slice().expect("standard layout");
        let mut taps = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                let (ax, ay) = inv.apply(x as f64, y as f64);
                taps.push(bilinear_taps(ax, ay, h, w).filter(|t| t.iter().all(|(i, _)| mask[i])));
            }
        }
        Ok(Realignment { h, w, taps })
    }
}

/// Linear resampling from the augmented frame to the original frame; its
/// transpose carries gradients back.
#[derive(Clone, Debug)]
pub struct Realignment {
    h: usize,
    w: usize,
    taps: Vec<Option<Taps>>,
}

impl Realignment {
    pub fn dim(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn mask(&self) -> Array2<bool> {
        Array2::from_shape_vec(
            (self.h, self.w),
            self.taps.iter().map(Option::is_some).collect(),
        )
        .expect("shape")
    }

    pub fn valid_count(&self) -> usize {
        self.taps.iter().filter(|t| t.is_some()).count()
    }

    /// Resamples an augmented-frame map; invalid pixels are set to 0.
    pub fn apply(&self, map: ArrayView2<'_, f64>) -> Array2<f64> {
        let data: Vec<f64> = map.iter().copied().collect();
        let out = self
            .taps
            .iter()
            .map(|t| {
                t.as_ref()
                    .map(|t| t.iter().map(|(i, w)| data[i] * w).sum())
                    .unwrap_or(0.0)
            })
            .collect();
        Array2::from_shape_vec((self.h, self.w), out).expect("shape")
    }

    /// Transpose of [`Realignment::apply`]: scatters original-frame
    /// gradients back onto the augmented frame.
    pub fn backward(&self, grad: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = vec![0.0; self.h * self.w];
        for (t, g) in self.taps.iter().zip(grad.iter()) {
            if let Some(t) = t {
                for (i, w) in t.iter() {
                    out[i] += g * w;
                }
            }
        }
        Array2::from_shape_vec((self.h, self.w), out).expect("shape")
    }
}

/// Inverse-warps a prediction made on an augmented view into the original
/// frame. Returns the resampled map and its validity mask.
pub fn realign_prediction(
    pred: &Array2<f32>,
    record: &GeometricRecord,
) -> Result<(Array2<f32>, Array2<bool>)> {
    if pred.dim() != record.dim() {
        return Err(Error::arg(format!(
            "prediction is {:?} but record covers {:?}",
            pred.dim(),
            record.dim()
        )));
    }
    if record.is_identity() {
        return Ok((pred.clone(), record.mask.clone()));
    }
    let realign = record.realignment()?;
    let data: Vec<f32> = pred.iter().copied().collect();
    let out = realign
        .taps
        .iter()
        .map(|t| t.as_ref().map(|t| t.sample(&data)).unwrap_or(0.0))
        .collect();
    Ok((
        Array2::from_shape_vec(pred.dim(), out).expect("shape"),
        realign.mask(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_composes_to_identity() {
        let a = Affine2::rotation_about(0.3, 10.0, 7.0)
            .then_after(&Affine2::shear_x(0.2, 5.0))
            .then_after(&Affine2::translation(3.0, -2.0));
        let id = a.then_after(&a.inverse().unwrap());
        for r in 0..2 {
            for c in 0..3 {
                assert!((id.0[r][c] - Affine2::IDENTITY.0[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn singular_map_is_an_internal_error() {
        let flat = Affine2([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]);
        assert!(matches!(flat.inverse(), Err(Error::Internal(_))));
    }

    #[test]
    fn integer_taps_are_single() {
        let t = bilinear_taps(3.0, 2.0, 5, 5).unwrap();
        let v: Vec<_> = t.iter().collect();
        assert_eq!(v, vec![(13, 1.0)]);
        assert!(bilinear_taps(4.0, 4.0, 5, 5).is_some());
        assert!(bilinear_taps(4.01, 0.0, 5, 5).is_none());
    }

    #[test]
    fn identity_record_realigns_to_itself() {
        let pred = Array2::from_shape_fn((6, 7), |(r, c)| (r * 7 + c) as f32);
        let rec = GeometricRecord::identity(6, 7);
        let (out, mask) = realign_prediction(&pred, &rec).unwrap();
        assert_eq!(out, pred);
        assert!(mask.iter().all(|m| *m));
    }

    #[test]
    fn realignment_backward_is_the_transpose() {
        let mut rec = GeometricRecord::identity(5, 6);
        rec.push(&Affine2::rotation_about(0.2, 2.5, 2.0));
        let r = rec.realignment().unwrap();
        let a = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 3 + j * 5) % 7) as f64 - 2.0);
        let b = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 2 + j) % 5) as f64 * 0.5);
        let lhs: f64 = (&r.apply(a.view()) * &b).sum();
        let rhs: f64 = (&a * &r.backward(b.view())).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let pred = Array2::<f32>::zeros((4, 4));
        let rec = GeometricRecord::identity(4, 5);
        assert!(matches!(
            realign_prediction(&pred, &rec),
            Err(Error::Argument(_))
        ));
    }
}
