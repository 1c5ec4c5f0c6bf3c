//! Source-set selection by resemblance of per-sample depth histograms to a
//! reference distribution (chi-square distance, 64 uniform bins over `(0, cap]`).

use std::cmp::Ordering;

use super::{DatasetManifest, DepthMap};
use crate::error::{Error, Result};

pub const HISTOGRAM_BINS: usize = 64;

/// Normalised histogram of the valid depths of one map.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthHistogram {
    pub cap: f32,
    pub freq: Vec<f64>,
}

impl DepthHistogram {
    /// Bins valid depths (`> 0`) into `HISTOGRAM_BINS` half-open bins
    /// `(k*cap/64, (k+1)*cap/64]`. Values above `cap` land in the last bin.
    /// A map with no valid pixels yields an all-zero histogram.
    pub fn from_depth(depth: &DepthMap, cap: f32) -> Result<Self> {
        if !(cap > 0.0) || !cap.is_finite() {
            return Err(Error::arg(format!("histogram cap must be > 0, got {cap}")));
        }
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        let scale = HISTOGRAM_BINS as f64 / f64::from(cap);
        for &d in depth.iter().filter(|d| **d > 0.0) {
            let bin = (f64::from(d) * scale).ceil() as usize;
            counts[bin.clamp(1, HISTOGRAM_BINS) - 1] += 1;
        }
        let total: u64 = counts.iter().sum();
        let freq = if total == 0 {
            vec![0.0; HISTOGRAM_BINS]
        } else {
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        };
        Ok(Self { cap, freq })
    }

    pub fn mass(&self) -> f64 {
        self.freq.iter().sum()
    }

    fn same_edges(&self, other: &Self) -> bool {
        self.cap == other.cap && self.freq.len() == other.freq.len()
    }

    /// Bin-wise mean of histograms that share bin edges.
    pub fn mean(hists: &[DepthHistogram]) -> Result<Self> {
        let first = hists
            .first()
            .ok_or_else(|| Error::arg("reference histogram set is empty"))?;
        if hists.iter().any(|h| !h.same_edges(first)) {
            return Err(Error::arg("reference histograms do not share bin edges"));
        }
        let mut freq = vec![0.0; first.freq.len()];
        for h in hists {
            for (acc, v) in freq.iter_mut().zip(&h.freq) {
                *acc += v;
            }
        }
        let n = hists.len() as f64;
        freq.iter_mut().for_each(|v| *v /= n);
        let mean = Self {
            cap: first.cap,
            freq,
        };
        if mean.mass() <= 0.0 {
            return Err(Error::arg("reference histogram is empty"));
        }
        Ok(mean)
    }
}

/// `0.5 * sum (p - q)^2 / (p + q)` over bins where `p + q > 0`.
pub fn chi_square_distance(p: &DepthHistogram, q: &DepthHistogram) -> f64 {
    p.freq
        .iter()
        .zip(&q.freq)
        .filter(|(a, b)| **a + **b > 0.0)
        .map(|(a, b)| (a - b).powi(2) / (a + b))
        .sum::<f64>()
        * 0.5
}

/// Ranks `(id, histogram)` candidates by chi-square distance to the mean of
/// `reference` and returns the `keep` closest ids, nearest first, ties
/// broken by id.
pub fn rank_by_depth_distribution(
    candidates: &[(String, DepthHistogram)],
    reference: &[DepthHistogram],
    keep: usize,
) -> Result<Vec<String>> {
    let target = DepthHistogram::mean(reference)?;
    if keep > candidates.len() {
        return Err(Error::arg(format!(
            "cannot keep {keep} of {} samples",
            candidates.len()
        )));
    }
    if let Some((id, _)) = candidates.iter().find(|(_, h)| !h.same_edges(&target)) {
        return Err(Error::arg(format!(
            "histogram of {id} does not share the reference bin edges"
        )));
    }
    let mut scored: Vec<(f64, &str)> = candidates
        .iter()
        .map(|(id, h)| (chi_square_distance(h, &target), id.as_str()))
        .collect();
    scored.sort_by(|a, b| {
        a.0.partial_cmp(&b.0)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.1.cmp(b.1))
    });
    Ok(scored
        .into_iter()
        .take(keep)
        .map(|(_, id)| id.to_string())
        .collect())
}

/// Keeps the `keep` source samples whose depth histograms best resemble
/// the mean reference histogram.
pub fn filter_by_depth_distribution(
    source: &DatasetManifest,
    reference: &[DepthHistogram],
    keep: usize,
) -> Result<DatasetManifest> {
    if keep > source.len() {
        return Err(Error::arg(format!(
            "cannot keep {keep} of {} samples",
            source.len()
        )));
    }
    let mut candidates = Vec::with_capacity(source.len());
    for id in &source.ids {
        let (depth, _) = super::read_depth(&source.sample_dir(id).join("depth.f32"))?;
        candidates.push((id.clone(), DepthHistogram::from_depth(&depth, source.cap)?));
    }
    let kept = rank_by_depth_distribution(&candidates, reference, keep)?;
    Ok(source.with_ids(kept))
}
