//! Training objectives and batch composition.
//!
//! Every loss reduces as mean over valid pixels, then mean over the batch,
//! and returns its gradient with respect to each prediction it consumed.

use std::fmt;
use std::str::FromStr;

use log::warn;
use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::augment::GeometricRecord;
use crate::dataset::DepthMap;
use crate::error::{Error, Result};

/// Weight of each term in the total loss.
pub const TOTAL_WEIGHT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceVariant {
    PairwiseSum,
    PerSample,
    PairwiseSeparate,
    None,
}

impl SourceVariant {
    pub const ALL: [SourceVariant; 4] = [
        SourceVariant::PairwiseSum,
        SourceVariant::PerSample,
        SourceVariant::PairwiseSeparate,
        SourceVariant::None,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SourceVariant::PairwiseSum => "pairwise_sum",
            SourceVariant::PerSample => "per_sample",
            SourceVariant::PairwiseSeparate => "pairwise_separate",
            SourceVariant::None => "none",
        }
    }
}

impl fmt::Display for SourceVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown source variant {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Compare in the original frame after inverse-warping each view.
    Realign,
    /// Compare views pixelwise as they are.
    Naive,
}

impl fmt::Display for Alignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Alignment::Realign => "realign",
            Alignment::Naive => "naive",
        })
    }
}

impl FromStr for Alignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "realign" => Ok(Alignment::Realign),
            "naive" => Ok(Alignment::Naive),
            _ => Err(Error::config(format!("unknown alignment {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub source_variant: SourceVariant,
    /// Perturbation streams per target image, the original included.
    pub streams: usize,
    pub stop_gradient_on_reference: bool,
    pub alignment: Alignment,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            source_variant: SourceVariant::PairwiseSum,
            streams: 3,
            stop_gradient_on_reference: true,
            alignment: Alignment::Realign,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        validate_streams(self.streams)
    }
}

fn validate_streams(streams: usize) -> Result<()> {
    if (2..=4).contains(&streams) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "streams must be 2, 3 or 4, got {streams}"
        )))
    }
}

/// A scalar loss and its gradient with respect to each input prediction.
#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    pub grads: Vec<Array2<f64>>,
}

/// A source loss over prediction pairs.
#[derive(Clone, Debug)]
pub struct PairLoss {
    pub value: f64,
    pub grads1: Vec<Array2<f64>>,
    pub grads2: Vec<Array2<f64>>,
}

/// A per-image consistency loss.
#[derive(Clone, Debug)]
pub struct ConsistencyLoss {
    pub value: f64,
    pub grad_ref: Array2<f64>,
    pub grad_aug: Vec<Array2<f64>>,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_shape(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::arg(format!(
            "{what}: shape {a:?} does not match {b:?}"
        )))
    }
}

/// Masked mean of `|pred - label|` over `label > 0`; `None` when no
/// pixel is valid.
fn masked_l1(pred: &Array2<f64>, label: &DepthMap) -> Option<(f64, Array2<f64>)> {
    let n = label.iter().filter(|v| **v > 0.0).count();
    if n == 0 {
        return None;
    }
    let inv = 1.0 / n as f64;
    let mut sum = 0.0;
    let mut grad = Array2::zeros(pred.dim());
    Zip::from(&mut grad)
        .and(pred)
        .and(label)
        .for_each(|g, p, l| {
            if *l > 0.0 {
                let r = p - *l as f64;
                sum += r.abs();
                *g = sign(r) * inv;
            }
        });
    Some((sum * inv, grad))
}

/// Supervised L1 on (CutMix-augmented) labelled samples. Samples without
/// valid pixels are skipped.
pub fn pretrain_loss(preds: &[Array2<f64>], labels: &[DepthMap]) -> Result<LossValue> {
    if preds.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut terms = Vec::with_capacity(preds.len());
    for (i, (p, l)) in preds.iter().zip(labels).enumerate() {
        check_shape(p.dim(), l.dim(), &format!("sample {i}"))?;
        terms.push(masked_l1(p, l));
    }
    let used = terms.iter().filter(|t| t.is_some()).count();
    if used == 0 {
        return Err(Error::arg("no valid depth pixels in any sample"));
    }
    let scale = 1.0 / used as f64;
    let mut value = 0.0;
    let grads = terms
        .into_iter()
        .zip(preds)
        .map(|(t, p)| match t {
            Some((v, g)) => {
                value += v * scale;
                g * scale
            }
            None => Array2::zeros(p.dim()),
        })
        .collect();
    Ok(LossValue { value, grads })
}

fn check_pairs(
    preds1: &[Array2<f64>],
    preds2: &[Array2<f64>],
    labels1: &[DepthMap],
    labels2: &[DepthMap],
) -> Result<()> {
    let b = preds1.len();
    if preds2.len() != b || labels1.len() != b || labels2.len() != b {
        return Err(Error::arg("pair lists differ in length"));
    }
    if b == 0 {
        return Err(Error::arg("empty source batch"));
    }
    for i in 0..b {
        let d = preds1[i].dim();
        check_shape(preds2[i].dim(), d, &format!("pair {i} second prediction"))?;
        check_shape(labels1[i].dim(), d, &format!("pair {i} first label"))?;
        check_shape(labels2[i].dim(), d, &format!("pair {i} second label"))?;
    }
    Ok(())
}

/// L1 between the summed predictions and the summed labels of each pair,
/// over pixels valid in both labels.
pub fn pairwise_source_loss(
    preds1: &[Array2<f64>],
    preds2: &[Array2<f64>],
    labels1: &[DepthMap],
    labels2: &[DepthMap],
) -> Result<PairLoss> {
    check_pairs(preds1, preds2, labels1, labels2)?;
    let scale = 1.0 / preds1.len() as f64;
    let mut value = 0.0;
    let mut grads = Vec::with_capacity(preds1.len());
    for i in 0..preds1.len() {
        let n = Zip::from(&labels1[i])
            .and(&labels2[i])
            .fold(0usize, |n, a, b| n + usize::from(*a > 0.0 && *b > 0.0));
        if n == 0 {
            return Err(Error::arg(format!(
                "pair {i} has an empty joint validity mask"
            )));
        }
        let inv = 1.0 / n as f64;
        let mut sum = 0.0;
        let mut g = Array2::zeros(preds1[i].dim());
        Zip::from(&mut g)
            .and(&preds1[i])
            .and(&preds2[i])
            .and(&labels1[i])
            .and(&labels2[i])
            .for_each(|g, p1, p2, l1, l2| {
                if *l1 > 0.0 && *l2 > 0.0 {
                    let r = (p1 + p2) - (*l1 as f64 + *l2 as f64);
                    sum += r.abs();
                    *g = sign(r) * inv * scale;
                }
            });
        value += sum * inv * scale;
        grads.push(g);
    }
    Ok(PairLoss {
        value,
        grads1: grads.clone(),
        grads2: grads,
    })
}

fn independent_terms(
    preds1: &[Array2<f64>],
    preds2: &[Array2<f64>],
    labels1: &[DepthMap],
    labels2: &[DepthMap],
    weight: f64,
) -> Result<PairLoss> {
    check_pairs(preds1, preds2, labels1, labels2)?;
    let scale = weight / preds1.len() as f64;
    let mut value = 0.0;
    let mut side = |preds: &[Array2<f64>], labels: &[DepthMap]| -> Result<Vec<Array2<f64>>> {
        preds
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (p, l))| {
                let (v, g) = masked_l1(p, l)
                    .ok_or_else(|| Error::arg(format!("pair {i} has an unlabelled member")))?;
                value += v * scale;
                Ok(g * scale)
            })
            .collect()
    };
    let grads1 = side(preds1, labels1)?;
    let grads2 = side(preds2, labels2)?;
    Ok(PairLoss {
        value,
        grads1,
        grads2,
    })
}

/// Source loss under the configured variant.
pub fn source_loss(
    cfg: &LossConfig,
    preds1: &[Array2<f64>],
    preds2: &[Array2<f64>],
    labels1: &[DepthMap],
    labels2: &[DepthMap],
) -> Result<PairLoss> {
    match cfg.source_variant {
        SourceVariant::PairwiseSum => pairwise_source_loss(preds1, preds2, labels1, labels2),
        SourceVariant::PerSample => independent_terms(preds1, preds2, labels1, labels2, 0.5),
        SourceVariant::PairwiseSeparate => independent_terms(preds1, preds2, labels1, labels2, 1.0),
        SourceVariant::None => Ok(PairLoss {
            value: 0.0,
            grads1: preds1.iter().map(|p| Array2::zeros(p.dim())).collect(),
            grads2: preds2.iter().map(|p| Array2::zeros(p.dim())).collect(),
        }),
    }
}

/// Consistency between the prediction on an original target image and the
/// predictions on its augmented views, summed over views.
pub fn consistency_loss(
    ref_pred: &Array2<f64>,
    aug_preds: &[Array2<f64>],
    records: &[GeometricRecord],
    cfg: &LossConfig,
) -> Result<ConsistencyLoss> {
    cfg.validate()?;
    if aug_preds.len() != cfg.streams - 1 || records.len() != aug_preds.len() {
        return Err(Error::arg(format!(
            "{} streams need {} augmented predictions and records, got {} and {}",
            cfg.streams,
            cfg.streams - 1,
            aug_preds.len(),
            records.len()
        )));
    }
    let dim = ref_pred.dim();
    let mut value = 0.0;
    let mut grad_ref = Array2::zeros(dim);
    let mut grad_aug = Vec::with_capacity(aug_preds.len());
    for (k, (aug, rec)) in aug_preds.iter().zip(records).enumerate() {
        check_shape(aug.dim(), dim, &format!("stream {k}"))?;
        check_shape(rec.dim(), dim, &format!("record {k}"))?;
        let realign = match cfg.alignment {
            Alignment::Realign if !rec.is_identity() => Some(rec.realignment()?),
            _ => None,
        };
        let (aligned, mask) = match &realign {
            Some(r) => (r.apply(aug.view()), r.mask()),
            None => (aug.clone(), Array2::from_elem(dim, true)),
        };
        let n = mask.iter().filter(|m| **m).count();
        if n == 0 {
            warn!("consistency stream {k} has an empty validity mask; contributing 0");
            grad_aug.push(Array2::zeros(dim));
            continue;
        }
        let inv = 1.0 / n as f64;
        let mut sum = 0.0;
        let mut g_aligned = Array2::zeros(dim);
        Zip::from(&mut g_aligned)
            .and(&mut grad_ref)
            .and(ref_pred)
            .and(&aligned)
            .and(&mask)
            .for_each(|ga, gr, r, a, m| {
                if *m {
                    let d = r - a;
                    sum += d.abs();
                    *ga = -sign(d) * inv;
                    if !cfg.stop_gradient_on_reference {
                        *gr += sign(d) * inv;
                    }
                }
            });
        value += sum * inv;
        grad_aug.push(match &realign {
            Some(r) => r.backward(g_aligned.view()),
            None => g_aligned,
        });
    }
    Ok(ConsistencyLoss {
        value,
        grad_ref,
        grad_aug,
    })
}

/// `0.5 * (source + consistency)`; non-finite inputs are rejected.
pub fn total_loss(source_term: f64, consistency_term: f64) -> Result<f64> {
    let total = TOTAL_WEIGHT * (source_term + consistency_term);
    if !(source_term.is_finite() && consistency_term.is_finite() && total.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            source_loss: source_term,
            consistency_loss: consistency_term,
            batch_ids: Vec::new(),
        });
    }
    Ok(total)
}

/// Supervised-to-unsupervised ratio as a positive fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u32,
    pub den: u32,
}

impl Ratio {
    pub fn new(num: u32, den: u32) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::config(format!("ratio {num}/{den} must be positive")));
        }
        Ok(Self { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Ratio {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("ratio {s:?} is not of the form a or a/b"));
        let (n, d) = s.split_once('/').unwrap_or((s, "1"));
        let num = n.trim().parse().map_err(|_| bad())?;
        let den = d.trim().parse().map_err(|_| bad())?;
        Ratio::new(num, den)
    }
}

/// Composition of one concatenated adaptation forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub n: usize,
    pub ratio: Ratio,
    pub streams: usize,
    pub sup_pairs: usize,
    pub sup_images: usize,
    pub unsup_originals: usize,
    pub concat_total: usize,
}

pub fn compose_batch(n: usize, ratio: Ratio, streams: usize) -> Result<BatchPlan> {
    validate_streams(streams)?;
    if n == 0 {
        return Err(Error::config("batch size N must be >= 1"));
    }
    let scaled = n * ratio.den as usize;
    if scaled % ratio.num as usize != 0 {
        return Err(Error::config(format!(
            "N={n} with r={ratio} gives a non-integral number of target images"
        )));
    }
    let unsup = scaled / ratio.num as usize;
    if unsup == 0 {
        return Err(Error::config(format!(
            "N={n} with r={ratio} leaves no target images"
        )));
    }
    Ok(BatchPlan {
        n,
        ratio,
        streams,
        sup_pairs: n,
        sup_images: 2 * n,
        unsup_originals: unsup,
        concat_total: streams * unsup + 2 * n,
    })
}
