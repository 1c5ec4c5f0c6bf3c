//! Python bindings: toy data generation, the depth network, losses,
//! metrics, batch planning and uncertainty scoring.

use std::collections::HashMap;
use std::path::PathBuf;

use depthadapt_core::dataset::{generate_toy_domain_pair as gen_pair, DatasetManifest, Image};
use depthadapt_core::losses::{self, Ratio};
use depthadapt_core::metrics::{self, EvalConfig};
use depthadapt_core::model::{Checkpoint, DepthNet as CoreNet, ModelSpec};
use depthadapt_core::uncertainty;
use depthadapt_core::Error;
use ndarray::{Array2, Array3};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Argument(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        Error::Io { .. } | Error::Format { .. } | Error::Image { .. } => {
            PyIOError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn map2(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != w) {
        return Err(PyValueError::new_err("ragged map"));
    }
    Ok(
        Array2::from_shape_vec((h, w), rows.into_iter().flatten().collect())
            .expect("checked shape"),
    )
}

fn map2f(rows: Vec<Vec<f64>>) -> PyResult<Array2<f32>> {
    Ok(map2(rows)?.mapv(|v| v as f32))
}

fn image(rows: Vec<Vec<Vec<f32>>>) -> PyResult<Image> {
    let h = rows.len();
    let w = rows.first().map_or(0, Vec::len);
    let mut data = Vec::with_capacity(h * w * 3);
    for r in rows {
        if r.len() != w {
            return Err(PyValueError::new_err("ragged image"));
        }
        for px in r {
            if px.len() != 3 {
                return Err(PyValueError::new_err("pixels must have 3 channels"));
            }
            data.extend(px);
        }
    }
    Ok(Array3::from_shape_vec((h, w, 3), data).expect("checked shape"))
}

fn rows<T: Copy>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.outer_iter().map(|r| r.to_vec()).collect()
}

/// Depth network with sigmoid output scaled to `max_depth`.
#[pyclass(name = "DepthNet")]
struct PyDepthNet {
    net: CoreNet,
}

#[pymethods]
impl PyDepthNet {
    #[new]
    #[pyo3(signature = (height=64, width=96, depth=4, base_channels=16, max_depth=80.0, seed=0))]
    fn new(
        height: usize,
        width: usize,
        depth: usize,
        base_channels: usize,
        max_depth: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = ModelSpec {
            height,
            width,
            depth,
            base_channels,
            max_depth,
        };
        Ok(Self {
            net: CoreNet::init(spec, seed).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(to_py)?;
        Ok(Self {
            net: ck.to_net().map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        Checkpoint::from_net(&self.net, serde_json::Value::Null)
            .save(&path)
            .map_err(to_py)
    }

    fn checksum(&self) -> String {
        self.net.checksum()
    }

    fn param_count(&self) -> usize {
        self.net.param_count()
    }

    /// `(height, width, depth, base_channels, max_depth)`.
    fn spec(&self) -> (usize, usize, usize, usize, f64) {
        let s = self.net.spec();
        (s.height, s.width, s.depth, s.base_channels, s.max_depth)
    }

    /// Images are `H x W x 3` nested lists in `[0, 1]`.
    fn predict(&self, images: Vec<Vec<Vec<Vec<f32>>>>) -> PyResult<Vec<Vec<Vec<f32>>>> {
        let ims = images
            .into_iter()
            .map(image)
            .collect::<PyResult<Vec<_>>>()?;
        Ok(self
            .net
            .predict(&ims)
            .map_err(to_py)?
            .iter()
            .map(rows)
            .collect())
    }

    /// Flip-consistency uncertainty: `(score, per_block_means)`.
    fn uncertainty(&self, images: Vec<Vec<Vec<Vec<f32>>>>) -> PyResult<(f64, Vec<f64>)> {
        let ims = images
            .into_iter()
            .map(image)
            .collect::<PyResult<Vec<_>>>()?;
        let s = uncertainty::uncertainty_score(&self.net, &ims).map_err(to_py)?;
        Ok((s.value, s.per_block_means))
    }
}

/// Writes `<out>/source`, `<out>/target` and `<out>/target_gt`; returns
/// their directories.
#[pyfunction]
#[pyo3(signature = (out, seed=7, n_source=64, n_target=64, height=64, width=96))]
fn generate_toy_domain_pair(
    out: PathBuf,
    seed: u64,
    n_source: usize,
    n_target: usize,
    height: usize,
    width: usize,
) -> PyResult<HashMap<String, String>> {
    let p = gen_pair(&out, seed, n_source, n_target, (height, width)).map_err(to_py)?;
    Ok(HashMap::from([
        ("source".to_string(), p.source.root.display().to_string()),
        ("target".to_string(), p.target.root.display().to_string()),
        (
            "target_gt".to_string(),
            p.target_labels.root.display().to_string(),
        ),
    ]))
}

/// Loads a dataset as `(ids, images, depths)`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn load_dataset(
    path: PathBuf,
) -> PyResult<(Vec<String>, Vec<Vec<Vec<Vec<f32>>>>, Vec<Vec<Vec<f32>>>)> {
    let m = DatasetManifest::load(&path).map_err(to_py)?;
    let samples = m.load_all().map_err(to_py)?;
    let ids = samples.iter().map(|s| s.id.clone()).collect();
    let images = samples
        .iter()
        .map(|s| {
            s.image
                .outer_iter()
                .map(|r| r.outer_iter().map(|p| p.to_vec()).collect())
                .collect()
        })
        .collect();
    let depths = samples.iter().map(|s| rows(&s.depth)).collect();
    Ok((ids, images, depths))
}

/// Batch plan as a dict of counts; `r` is `"a"` or `"a/b"`.
#[pyfunction]
fn compose_batch(n: usize, r: &str, streams: usize) -> PyResult<HashMap<String, usize>> {
    let ratio: Ratio = r.parse().map_err(to_py)?;
    let p = losses::compose_batch(n, ratio, streams).map_err(to_py)?;
    Ok(HashMap::from([
        ("sup_pairs".to_string(), p.sup_pairs),
        ("sup_images".to_string(), p.sup_images),
        ("unsup_originals".to_string(), p.unsup_originals),
        ("concat_total".to_string(), p.concat_total),
    ]))
}

#[pyfunction]
fn pretrain_loss(preds: Vec<Vec<Vec<f64>>>, labels: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    let p = preds.into_iter().map(map2).collect::<PyResult<Vec<_>>>()?;
    let l = labels
        .into_iter()
        .map(map2f)
        .collect::<PyResult<Vec<_>>>()?;
    Ok(losses::pretrain_loss(&p, &l).map_err(to_py)?.value)
}

/// Source loss of a single pair under `variant`.
#[pyfunction]
#[pyo3(signature = (pred1, pred2, label1, label2, variant="pairwise_sum"))]
fn source_loss(
    pred1: Vec<Vec<f64>>,
    pred2: Vec<Vec<f64>>,
    label1: Vec<Vec<f64>>,
    label2: Vec<Vec<f64>>,
    variant: &str,
) -> PyResult<f64> {
    let cfg = losses::LossConfig {
        source_variant: variant.parse().map_err(to_py)?,
        ..Default::default()
    };
    losses::source_loss(
        &cfg,
        &[map2(pred1)?],
        &[map2(pred2)?],
        &[map2f(label1)?],
        &[map2f(label2)?],
    )
    .map(|l| l.value)
    .map_err(to_py)
}

#[pyfunction]
fn total_loss(source_term: f64, consistency_term: f64) -> PyResult<f64> {
    losses::total_loss(source_term, consistency_term).map_err(to_py)
}

/// The seven metrics plus `valid_pixel_count`.
#[pyfunction]
#[pyo3(signature = (pred, gt, cap=80.0, crop="none"))]
fn compute_metrics(
    pred: Vec<Vec<f64>>,
    gt: Vec<Vec<f64>>,
    cap: f64,
    crop: &str,
) -> PyResult<HashMap<String, f64>> {
    let cfg = EvalConfig {
        cap,
        crop: crop.parse().map_err(to_py)?,
        ..EvalConfig::default()
    };
    let r = metrics::compute_metrics(&map2f(pred)?, &map2f(gt)?, &cfg).map_err(to_py)?;
    let mut out: HashMap<String, f64> = metrics::MetricsReport::COLUMNS
        .iter()
        .map(|k| k.to_string())
        .zip(r.values())
        .collect();
    out.insert("valid_pixel_count".into(), r.valid_pixel_count as f64);
    Ok(out)
}

/// Name of the candidate with the smallest score; ties go to the first.
#[pyfunction]
fn select_by_scores(candidates: Vec<(String, f64)>) -> PyResult<String> {
    uncertainty::select_by_scores(&candidates).map_err(to_py)
}

#[pymodule]
fn depthadapt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDepthNet>()?;
    m.add_function(wrap_pyfunction!(generate_toy_domain_pair, m)?)?;
    m.add_function(wrap_pyfunction!(load_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(compose_batch, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain_loss, m)?)?;
    m.add_function(wrap_pyfunction!(source_loss, m)?)?;
    m.add_function(wrap_pyfunction!(total_loss, m)?)?;
    m.add_function(wrap_pyfunction!(compute_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(select_by_scores, m)?)?;
    Ok(())
}
