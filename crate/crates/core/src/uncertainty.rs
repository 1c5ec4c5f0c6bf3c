//! Label-free model scoring from decoder gradient magnitudes under a
//! horizontal-flip self-consistency loss.

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Image;
use crate::error::{Error, Result};
use crate::model::{Net, Real};

/// Residuals at or below `DEAD_ZONE * eps * max_depth` are rounding noise
/// between a view and its mirrored twin and count as zero.
const DEAD_ZONE: f64 = 1e3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub value: f64,
    pub n_images: usize,
    /// Mean over images of each decoder block's mean |gradient|, in
    /// expansion order.
    pub per_block_means: Vec<f64>,
}

pub fn flip_image(image: &Image) -> Image {
    let mut f = image.clone();
    f.invert_axis(Axis(1));
    f.as_standard_layout().into_owned()
}

pub fn flip_map(map: &Array2<f64>) -> Array2<f64> {
    let mut f = map.clone();
    f.invert_axis(Axis(1));
    f.as_standard_layout().into_owned()
}

/// Per-block decoder gradient magnitudes for one image.
pub fn image_block_magnitudes<T: Real>(net: &Net<T>, image: &Image) -> Result<Vec<f64>> {
    let pass = net.forward(std::slice::from_ref(image))?;
    let flipped = net.forward(&[flip_image(image)])?;
    let reference = flip_map(&flipped.predictions[0]);
    let pred = &pass.predictions[0];
    let tol = DEAD_ZONE * T::epsilon().f64() * net.spec().max_depth;
    let inv = 1.0 / pred.len() as f64;
    let grad = ndarray::Zip::from(pred)
        .and(&reference)
        .map_collect(|p, r| {
            let d = p - r;
            if d.abs() <= tol {
                0.0
            } else {
                d.signum() * inv
            }
        });
    net.decoder_gradient_magnitudes(&pass, &[grad])
}

/// Mean over images of the summed per-block decoder gradient magnitudes.
/// The network is only read.
pub fn uncertainty_score<T: Real>(net: &Net<T>, images: &[Image]) -> Result<UncertaintyScore> {
    if images.is_empty() {
        return Err(Error::arg("uncertainty needs at least one image"));
    }
    let per_image: Vec<Vec<f64>> = images
        .par_iter()
        .map(|im| image_block_magnitudes(net, im))
        .collect::<Result<_>>()?;
    let n = images.len() as f64;
    let blocks = net.spec().depth;
    let mut per_block_means = vec![0.0; blocks];
    for mags in &per_image {
        for (acc, m) in per_block_means.iter_mut().zip(mags) {
            *acc += m / n;
        }
    }
    let value = per_image.iter().map(|m| m.iter().sum::<f64>()).sum::<f64>() / n;
    Ok(UncertaintyScore {
        value,
        n_images: images.len(),
        per_block_means,
    })
}

/// Index of the smallest score; the earliest wins ties.
pub fn argmin_score(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::arg("no candidates to select from"));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::arg(format!("candidate {i} has a NaN score")));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s < scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Picks the configuration with the smallest externally supplied score.
pub fn select_by_scores<C: Clone>(candidates: &[(C, f64)]) -> Result<C> {
    let scores: Vec<f64> = candidates.iter().map(|(_, s)| *s).collect();
    Ok(candidates[argmin_score(&scores)?].0.clone())
}

/// Picks the configuration whose network has the lowest uncertainty on
/// `images`.
pub fn select_hyperparameters<C: Clone, T: Real>(
    candidates: &[(C, &Net<T>)],
    images: &[Image],
) -> Result<C> {
    let scored = candidates
        .iter()
        .map(|(c, net)| Ok((c.clone(), uncertainty_score(*net, images)?.value)))
        .collect::<Result<Vec<_>>>()?;
    select_by_scores(&scored)
}
