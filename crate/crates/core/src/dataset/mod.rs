//! Image/depth sample collections: in-memory types, the on-disk layout,
//! depth capping, distribution-based filtering and the procedural toy
//! domain pair.
//!
//! On-disk layout of a dataset root:
//!
//! ```text
//! <root>/manifest.txt        domain=<source|target> cap=<m> h=<H> w=<W> seed=<int>
//!                            followed by one sample id per line
//! <root>/<id>/image.png      8-bit RGB, lossless
//! <root>/<id>/depth.f32      "DPTH", u32 H, u32 W, f32 cap, H*W f32 (little-endian, row-major)
//! ```
//!
//! A depth value of `0` always means "missing".

mod filter;
mod io;
mod toy;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use filter::{
    chi_square_distance, filter_by_depth_distribution, rank_by_depth_distribution, DepthHistogram,
    HISTOGRAM_BINS,
};
pub use io::{read_depth, read_image, write_depth, write_image};
pub use toy::{generate_toy_domain_pair, render_toy_samples, ToyDomainPair, TOY_DEPTH_CAP};

/// RGB image, `(H, W, 3)`, values in `[0, 1]`.
pub type Image = Array3<f32>;

/// Metric depth map, `(H, W)`, `0` marks invalid pixels.
pub type DepthMap = Array2<f32>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source" => Ok(Domain::Source),
            "target" => Ok(Domain::Target),
            other => Err(Error::arg(format!("unknown domain '{other}'"))),
        }
    }
}

/// One image with its depth map.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthSample {
    pub id: String,
    pub domain: Domain,
    pub image: Image,
    pub depth: DepthMap,
}

impl DepthSample {
    /// Builds a sample, checking that image and depth agree in size and
    /// that depth values are non-negative.
    pub fn new(
        id: impl Into<String>,
        domain: Domain,
        image: Image,
        depth: DepthMap,
    ) -> Result<Self> {
        let (h, w, c) = image.dim();
        if c != 3 {
            return Err(Error::arg(format!("image must have 3 channels, got {c}")));
        }
        if depth.dim() != (h, w) {
            return Err(Error::arg(format!(
                "image is {h}x{w} but depth is {}x{}",
                depth.nrows(),
                depth.ncols()
            )));
        }
        if depth.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::arg("depth values must be finite and >= 0"));
        }
        Ok(Self {
            id: id.into(),
            domain,
            image,
            depth,
        })
    }

    pub fn height(&self) -> usize {
        self.depth.nrows()
    }

    pub fn width(&self) -> usize {
        self.depth.ncols()
    }

    pub fn valid_pixels(&self) -> usize {
        self.depth.iter().filter(|d| **d > 0.0).count()
    }

    pub fn is_labelled(&self) -> bool {
        self.valid_pixels() > 0
    }
}

/// Replaces every value above `cap` by `cap`; zeros stay zero.
pub fn cap_depth(depth: &DepthMap, cap: f32) -> Result<DepthMap> {
    if !(cap > 0.0) || !cap.is_finite() {
        return Err(Error::arg(format!(
            "depth cap must be finite and > 0, got {cap}"
        )));
    }
    Ok(depth.mapv(|d| if d > cap { cap } else { d }))
}

/// A single-domain listing of samples stored under one root directory.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub ids: Vec<String>,
    pub domain: Domain,
    pub cap: f32,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

pub const MANIFEST_FILE: &str = "manifest.txt";

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Loads a manifest from a `manifest.txt` path or from the directory
    /// holding it. The dataset root is the file's parent directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(|e| Error::io(&file, e))?;
        let root = file
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."));
        Self::parse(&text, root).map_err(|reason| Error::format(&file, reason))
    }

    fn parse(text: &str, root: PathBuf) -> std::result::Result<Self, String> {
        let mut lines = text.lines();
        let header = lines.next().ok_or("empty manifest")?;
        let (mut domain, mut cap, mut h, mut w, mut seed) = (None, None, None, None, None);
        for field in header.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| format!("bad header field '{field}'"))?;
            let bad = |_| format!("bad value for '{key}': '{value}'");
            match key {
                "domain" => domain = Some(value.parse::<Domain>().map_err(|e| e.to_string())?),
                "cap" => cap = Some(value.parse::<f32>().map_err(|e| bad(e.to_string()))?),
                "h" => h = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "w" => w = Some(value.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "seed" => seed = Some(value.parse::<u64>().map_err(|e| bad(e.to_string()))?),
                other => return Err(format!("unknown header key '{other}'")),
            }
        }
        let ids: Vec<String> = lines
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        Ok(Self {
            root,
            ids,
            domain: domain.ok_or("missing domain")?,
            cap: cap.ok_or("missing cap")?,
            height: h.ok_or("missing h")?,
            width: w.ok_or("missing w")?,
            seed: seed.ok_or("missing seed")?,
        })
    }

    pub fn header_line(&self) -> String {
        format!(
            "domain={} cap={} h={} w={} seed={}",
            self.domain, self.cap, self.height, self.width, self.seed
        )
    }

    /// Writes `<root>/manifest.txt`.
    pub fn save(&self) -> Result<PathBuf> {
        self.save_as(MANIFEST_FILE)
    }

    /// Writes the manifest under `<root>/<file_name>`; used for filtered
    /// subsets that share the sample directories of their parent.
    pub fn save_as(&self, file_name: &str) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let path = self.root.join(file_name);
        let mut text = self.header_line();
        text.push('\n');
        for id in &self.ids {
            text.push_str(id);
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn sample_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    /// Writes one sample below this manifest's root. Does not touch the
    /// listing itself.
    pub fn save_sample(&self, sample: &DepthSample) -> Result<()> {
        if sample.height() != self.height || sample.width() != self.width {
            return Err(Error::arg(format!(
                "sample {} is {}x{}, manifest expects {}x{}",
                sample.id,
                sample.height(),
                sample.width(),
                self.height,
                self.width
            )));
        }
        if sample.depth.iter().any(|d| *d > self.cap) {
            return Err(Error::arg(format!(
                "sample {} exceeds the dataset cap {}",
                sample.id, self.cap
            )));
        }
        let dir = self.sample_dir(&sample.id);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_image(&dir.join("image.png"), &sample.image)?;
        write_depth(&dir.join("depth.f32"), &sample.depth, self.cap)
    }

    pub fn load_sample(&self, id: &str) -> Result<DepthSample> {
        let dir = self.sample_dir(id);
        let image = read_image(&dir.join("image.png"))?;
        let (depth, _cap) = read_depth(&dir.join("depth.f32"))?;
        let sample = DepthSample::new(id, self.domain, image, depth)?;
        if sample.height() != self.height || sample.width() != self.width {
            return Err(Error::format(
                dir,
                format!(
                    "sample is {}x{}, manifest declares {}x{}",
                    sample.height(),
                    sample.width(),
                    self.height,
                    self.width
                ),
            ));
        }
        Ok(sample)
    }

    pub fn load_all(&self) -> Result<Vec<DepthSample>> {
        self.ids.iter().map(|id| self.load_sample(id)).collect()
    }

    /// Same manifest restricted to `ids` (order as given).
    pub fn with_ids(&self, ids: Vec<String>) -> Self {
        Self {
            ids,
            ..self.clone()
        }
    }
}
