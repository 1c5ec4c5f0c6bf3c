//! Depth evaluation: Garg crop, capping and the seven standard metrics.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::dataset::DepthMap;
use crate::error::{Error, Result};

pub const GARG_ROWS: (f64, f64) = (0.408_108_11, 0.991_891_89);
pub const GARG_COLS: (f64, f64) = (0.035_947_71, 0.964_052_29);
pub const DEFAULT_MIN_DEPTH: f64 = 1e-3;
pub const DELTA: f64 = 1.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crop {
    Garg,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// `max(p/g, g/p) < 1.25^k`
    Ratio,
    /// `|p - g| < g * 1.25^k`
    AbsMargin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SqRelMode {
    /// `(p - g)^2 / g`
    Linear,
    /// `(p - g)^2 / g^2`
    SquaredDenominator,
}

macro_rules! str_enum {
    ($t:ty, $what:literal, $($v:path => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    _ => Err(Error::config(format!(concat!("unknown ", $what, " {:?}"), s))),
                }
            }
        }
    };
}

str_enum!(Crop, "crop", Crop::Garg => "garg", Crop::None => "none");
str_enum!(AccuracyMode, "accuracy mode", AccuracyMode::Ratio => "ratio", AccuracyMode::AbsMargin => "abs_margin");
str_enum!(SqRelMode, "sqrel mode", SqRelMode::Linear => "linear", SqRelMode::SquaredDenominator => "squared_denominator");

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub cap: f64,
    pub crop: Crop,
    pub min_depth: f64,
    pub accuracy: AccuracyMode,
    pub sqrel: SqRelMode,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            cap: 80.0,
            crop: Crop::None,
            min_depth: DEFAULT_MIN_DEPTH,
            accuracy: AccuracyMode::Ratio,
            sqrel: SqRelMode::Linear,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_depth > 0.0 && self.cap > self.min_depth && self.cap.is_finite()) {
            return Err(Error::config(format!(
                "need cap > min_depth > 0, got cap={} min_depth={}",
                self.cap, self.min_depth
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub valid_pixel_count: usize,
}

impl MetricsReport {
    pub const COLUMNS: [&'static str; 7] =
        ["abs_rel", "sq_rel", "rmse", "rmse_log", "a1", "a2", "a3"];

    pub fn values(&self) -> [f64; 7] {
        [
            self.abs_rel,
            self.sq_rel,
            self.rmse,
            self.rmse_log,
            self.a1,
            self.a2,
            self.a3,
        ]
    }

    /// Tab-separated row in column order.
    pub fn tsv_row(&self) -> String {
        self.values()
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect::<Vec<_>>()
            .join("\t")
    }

    /// Per-image average over a set of reports; pixel counts add up.
    pub fn mean(reports: &[MetricsReport]) -> Result<MetricsReport> {
        if reports.is_empty() {
            return Err(Error::arg("cannot average zero metric reports"));
        }
        let n = reports.len() as f64;
        let mut acc = [0.0; 7];
        for r in reports {
            for (a, v) in acc.iter_mut().zip(r.values()) {
                *a += v / n;
            }
        }
        Ok(MetricsReport {
            abs_rel: acc[0],
            sq_rel: acc[1],
            rmse: acc[2],
            rmse_log: acc[3],
            a1: acc[4],
            a2: acc[5],
            a3: acc[6],
            valid_pixel_count: reports.iter().map(|r| r.valid_pixel_count).sum(),
        })
    }
}

/// Row and column ranges of the Garg crop for an `h x w` map.
pub fn garg_bounds(h: usize, w: usize) -> Result<((usize, usize), (usize, usize))> {
    if h < 10 || w < 10 {
        return Err(Error::arg(format!(
            "Garg crop needs H, W >= 10, got {h}x{w}"
        )));
    }
    let f = |v: f64, n: usize| (v * n as f64).floor() as usize;
    let rows = (f(GARG_ROWS.0, h), f(GARG_ROWS.1, h));
    let cols = (f(GARG_COLS.0, w), f(GARG_COLS.1, w));
    if rows.0 >= rows.1 || cols.0 >= cols.1 {
        return Err(Error::arg(format!("Garg crop of {h}x{w} is empty")));
    }
    Ok((rows, cols))
}

pub fn garg_crop<'a, T>(map: ArrayView2<'a, T>) -> Result<ArrayView2<'a, T>> {
    let (h, w) = map.dim();
    let ((r0, r1), (c0, c1)) = garg_bounds(h, w)?;
    Ok(map.slice_move(s![r0..r1, c0..c1]))
}

pub fn compute_metrics(pred: &DepthMap, gt: &DepthMap, cfg: &EvalConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    if pred.dim() != gt.dim() {
        return Err(Error::arg(format!(
            "prediction {:?} and ground truth {:?} differ in shape",
            pred.dim(),
            gt.dim()
        )));
    }
    let (pred, gt) = match cfg.crop {
        Crop::Garg => (garg_crop(pred.view())?, garg_crop(gt.view())?),
        Crop::None => (pred.view(), gt.view()),
    };
    let clampd = |v: f32| (v as f64).min(cfg.cap).max(cfg.min_depth);
    let thresholds = [DELTA, DELTA * DELTA, DELTA * DELTA * DELTA];
    let mut n = 0usize;
    let mut sums = [0.0f64; 7];
    Zip::from(pred).and(gt).for_each(|p, g| {
        if !(*g > 0.0) {
            return;
        }
        let (p, g) = (clampd(*p), clampd(*g));
        let e = p - g;
        n += 1;
        sums[0] += e.abs() / g;
        sums[1] += match cfg.sqrel {
            SqRelMode::Linear => e * e / g,
            SqRelMode::SquaredDenominator => e * e / (g * g),
        };
        sums[2] += e * e;
        let le = p.ln() - g.ln();
        sums[3] += le * le;
        for (k, t) in thresholds.iter().enumerate() {
            let hit = match cfg.accuracy {
                AccuracyMode::Ratio => (p / g).max(g / p) < *t,
                AccuracyMode::AbsMargin => e.abs() < g * t,
            };
            sums[4 + k] += f64::from(u8::from(hit));
        }
    });
    if n == 0 {
        return Err(Error::arg("no valid ground-truth pixels"));
    }
    let m = |i: usize| sums[i] / n as f64;
    Ok(MetricsReport {
        abs_rel: m(0),
        sq_rel: m(1),
        rmse: m(2).sqrt(),
        rmse_log: m(3).sqrt(),
        a1: m(4),
        a2: m(5),
        a3: m(6),
        valid_pixel_count: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn row(v: &[f32]) -> DepthMap {
        Array2::from_shape_vec((1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn hand_computed_example() {
        let r = compute_metrics(
            &row(&[2.0, 5.0, 6.0]),
            &row(&[2.0, 4.0, 8.0]),
            &EvalConfig::default(),
        )
        .unwrap();
        assert!((r.abs_rel - 1.0 / 6.0).abs() < 1e-12);
        assert!((r.sq_rel - 0.25).abs() < 1e-12);
        assert!((r.rmse - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert!((r.a1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!((r.a2, r.a3, r.valid_pixel_count), (1.0, 1.0, 3));
    }

    #[test]
    fn capping_precedes_comparison() {
        let r = compute_metrics(&row(&[85.0]), &row(&[90.0]), &EvalConfig::default()).unwrap();
        assert_eq!(r.values(), [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn garg_bounds_examples() {
        assert_eq!(garg_bounds(375, 1242).unwrap(), ((153, 371), (44, 1197)));
        assert_eq!(garg_bounds(100, 100).unwrap(), ((40, 99), (3, 96)));
        assert!(garg_bounds(9, 100).is_err());
    }

    #[test]
    fn no_valid_pixels_is_an_error() {
        assert!(compute_metrics(&row(&[1.0]), &row(&[0.0]), &EvalConfig::default()).is_err());
    }
}
