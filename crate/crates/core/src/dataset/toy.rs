//! Procedural source/target scene pair with a controlled domain gap.
//!
//! Scenes are a ground plane seen from a fixed camera height, a distant
//! facade, open sky (invalid depth) and a handful of textured fronto-parallel
//! rectangles and ellipses standing on the ground. The source domain renders
//! crisp depth discontinuities with palette A. The target domain uses
//! palette B, additive Gaussian sensor noise and a Gaussian blur of the depth
//! map in a band around discontinuities.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DatasetManifest, DepthMap, DepthSample, Domain, Image};
use crate::error::{Error, Result};

pub const TOY_DEPTH_CAP: f32 = 80.0;

const CAMERA_HEIGHT: f32 = 1.6;
const TARGET_NOISE_SIGMA: f32 = 0.02;
const EDGE_BLUR_SIGMA: f32 = 1.5;
const EDGE_BLUR_RADIUS: isize = 4;
const EDGE_BAND_RADIUS: isize = 2;
const MIN_SIDE: usize = 32;

/// Manifests written by [`generate_toy_domain_pair`].
#[derive(Clone, Debug)]
pub struct ToyDomainPair {
    pub source: DatasetManifest,
    /// Unlabelled target images (all-zero depth maps).
    pub target: DatasetManifest,
    /// Same target ids with ground truth, kept in a separate root for evaluation.
    pub target_labels: DatasetManifest,
}

type Rgb = [f32; 3];

struct Style {
    palette: [Rgb; 6],
    ground: [Rgb; 2],
    facade: Rgb,
    window: Rgb,
    sky_top: Rgb,
    sky_horizon: Rgb,
    fog: Rgb,
    fog_distance: f32,
}

const STYLE_A: Style = Style {
    palette: [
        [0.80, 0.20, 0.18],
        [0.20, 0.32, 0.80],
        [0.86, 0.80, 0.22],
        [0.22, 0.66, 0.30],
        [0.88, 0.88, 0.86],
        [0.90, 0.52, 0.16],
    ],
    ground: [[0.42, 0.42, 0.44], [0.30, 0.30, 0.32]],
    facade: [0.62, 0.56, 0.50],
    window: [0.25, 0.28, 0.34],
    sky_top: [0.45, 0.62, 0.92],
    sky_horizon: [0.78, 0.86, 0.96],
    fog: [0.80, 0.85, 0.92],
    fog_distance: 110.0,
};

const STYLE_B: Style = Style {
    palette: [
        [0.62, 0.30, 0.42],
        [0.26, 0.50, 0.62],
        [0.70, 0.66, 0.40],
        [0.36, 0.52, 0.34],
        [0.74, 0.72, 0.64],
        [0.72, 0.46, 0.30],
    ],
    ground: [[0.46, 0.40, 0.34], [0.36, 0.31, 0.26]],
    facade: [0.55, 0.52, 0.48],
    window: [0.30, 0.28, 0.26],
    sky_top: [0.62, 0.66, 0.72],
    sky_horizon: [0.86, 0.84, 0.78],
    fog: [0.86, 0.82, 0.74],
    fog_distance: 80.0,
};

#[derive(Clone, Copy)]
enum Shape {
    Rect,
    Ellipse,
}

struct Object {
    shape: Shape,
    depth: f32,
    center_x: f32,
    base_row: f32,
    half_width: f32,
    height: f32,
    color: usize,
    stripe_period: f32,
    stripe_phase: f32,
}

struct Scene {
    horizon: f32,
    ground_k: f32,
    focal: f32,
    facade_depth: f32,
    facade_height: f32,
    ground_phase: (f32, f32),
    objects: Vec<Object>,
}

fn sample_scene(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Scene {
    let hf = h as f32;
    let wf = w as f32;
    let horizon = hf * rng.random_range(0.34..0.48);
    let bottom_depth = rng.random_range(3.0..6.0);
    let ground_k = bottom_depth * (hf - 1.0 - horizon + 0.5);
    let focal = ground_k / CAMERA_HEIGHT;
    let facade_depth = rng.random_range(45.0..75.0);
    let facade_height = rng.random_range(8.0..22.0);
    let ground_phase = (rng.random_range(0.0..3.0), rng.random_range(0.0..6.0));

    let n_objects = rng.random_range(3..=6);
    let mut objects: Vec<Object> = (0..n_objects)
        .map(|_| {
            let depth: f32 = rng.random_range(5.0..42.0);
            let base_row = horizon + ground_k / depth - 0.5;
            let height_m: f32 = rng.random_range(1.2..4.0);
            let width_m: f32 = rng.random_range(1.0..4.5);
            Object {
                shape: if rng.random_bool(0.5) {
                    Shape::Rect
                } else {
                    Shape::Ellipse
                },
                depth,
                center_x: rng.random_range(0.0..wf),
                base_row,
                half_width: 0.5 * focal * width_m / depth,
                height: focal * height_m / depth,
                color: rng.random_range(0..6),
                stripe_period: (focal * 0.6 / depth).max(2.0),
                stripe_phase: rng.random_range(0.0..1.0),
            }
        })
        .collect();
    // painter's order: far to near
    objects.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    Scene {
        horizon,
        ground_k,
        focal,
        facade_depth,
        facade_height,
        ground_phase,
        objects,
    }
}

fn fogged(c: Rgb, depth: f32, style: &Style) -> Rgb {
    let t = (-depth / style.fog_distance).exp();
    [
        c[0] * t + style.fog[0] * (1.0 - t),
        c[1] * t + style.fog[1] * (1.0 - t),
        c[2] * t + style.fog[2] * (1.0 - t),
    ]
}

fn scale(c: Rgb, s: f32) -> Rgb {
    [c[0] * s, c[1] * s, c[2] * s]
}

fn object_covers(o: &Object, x: f32, y: f32) -> Option<f32> {
    let top = o.base_row - o.height;
    if y < top || y > o.base_row || (x - o.center_x).abs() > o.half_width {
        return None;
    }
    let v = (y - top) / o.height.max(1e-3);
    match o.shape {
        Shape::Rect => Some(v),
        Shape::Ellipse => {
            let dx = (x - o.center_x) / o.half_width.max(1e-3);
            let dy = (y - (o.base_row - 0.5 * o.height)) / (0.5 * o.height).max(1e-3);
            (dx * dx + dy * dy <= 1.0).then_some(v)
        }
    }
}

/// Renders the crisp depth map and the noiseless image of one scene.
fn render(scene: &Scene, style: &Style, h: usize, w: usize) -> (Image, DepthMap) {
    let mut image = Image::zeros((h, w, 3));
    let mut depth = DepthMap::zeros((h, w));
    let cx = w as f32 / 2.0;
    let facade_row = scene.horizon + scene.ground_k / scene.facade_depth - 0.5;
    let skyline = facade_row - scene.focal * scene.facade_height / scene.facade_depth;

    for y in 0..h {
        let yf = y as f32;
        for x in 0..w {
            let xf = x as f32 + 0.5;
            let ground_depth = if yf > scene.horizon {
                scene.ground_k / (yf - scene.horizon + 0.5)
            } else {
                f32::INFINITY
            };
            let (mut color, mut d) = if ground_depth <= scene.facade_depth {
                let world_x = (xf - cx) * ground_depth / scene.focal;
                let cell = (world_x / 1.5 + scene.ground_phase.0).floor()
                    + (ground_depth / 3.0 + scene.ground_phase.1).floor();
                let c = style.ground[(cell as i64).rem_euclid(2) as usize];
                (fogged(c, ground_depth, style), ground_depth)
            } else if yf >= skyline {
                let world_x = (xf - cx) * scene.facade_depth / scene.focal;
                let world_y = (facade_row - yf) * scene.facade_depth / scene.focal;
                let in_window = (world_x / 3.0).fract().abs() > 0.45
                    && (world_y / 3.0).fract().abs() > 0.5
                    && world_y > 1.0;
                let c = if in_window {
                    style.window
                } else {
                    style.facade
                };
                (fogged(c, scene.facade_depth, style), scene.facade_depth)
            } else {
                let t = (yf / skyline.max(1.0)).clamp(0.0, 1.0);
                let c = [
                    style.sky_top[0] * (1.0 - t) + style.sky_horizon[0] * t,
                    style.sky_top[1] * (1.0 - t) + style.sky_horizon[1] * t,
                    style.sky_top[2] * (1.0 - t) + style.sky_horizon[2] * t,
                ];
                (c, 0.0)
            };
            for o in &scene.objects {
                if let Some(v) = object_covers(o, xf, yf) {
                    let stripe =
                        ((xf - o.center_x) / o.stripe_period + o.stripe_phase).floor() as i64 % 2
                            == 0;
                    let shade = (1.05 - 0.2 * v) * if stripe { 1.0 } else { 0.8 };
                    color = fogged(scale(style.palette[o.color], shade), o.depth, style);
                    d = o.depth;
                }
            }
            for c in 0..3 {
                image[[y, x, c]] = color[c].clamp(0.0, 1.0);
            }
            depth[[y, x]] = d.min(TOY_DEPTH_CAP);
        }
    }
    (image, depth)
}

/// Gaussian blur (normalised over valid neighbours) restricted to a band
/// around depth discontinuities.
fn blur_depth_edges(depth: &DepthMap) -> DepthMap {
    let (h, w) = depth.dim();
    let (hi, wi) = (h as isize, w as isize);
    let mut edge = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            let d = depth[[y, x]];
            let neighbours = [(y + 1, x), (y, x + 1)];
            for (ny, nx) in neighbours {
                if ny < h && nx < w {
                    let e = depth[[ny, nx]];
                    let jump = (d > 0.0) != (e > 0.0) || (d - e).abs() > 0.15 * d.min(e);
                    if jump {
                        edge[y * w + x] = true;
                        edge[ny * w + nx] = true;
                    }
                }
            }
        }
    }
    let mut band = vec![false; h * w];
    for y in 0..hi {
        for x in 0..wi {
            if !edge[(y * wi + x) as usize] {
                continue;
            }
            for dy in -EDGE_BAND_RADIUS..=EDGE_BAND_RADIUS {
                for dx in -EDGE_BAND_RADIUS..=EDGE_BAND_RADIUS {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny >= 0 && ny < hi && nx >= 0 && nx < wi {
                        band[(ny * wi + nx) as usize] = true;
                    }
                }
            }
        }
    }
    let mut out = depth.clone();
    let inv = 1.0 / (2.0 * EDGE_BLUR_SIGMA * EDGE_BLUR_SIGMA);
    for y in 0..hi {
        for x in 0..wi {
            if !band[(y * wi + x) as usize] || depth[[y as usize, x as usize]] <= 0.0 {
                continue;
            }
            let (mut acc, mut norm) = (0.0f32, 0.0f32);
            for dy in -EDGE_BLUR_RADIUS..=EDGE_BLUR_RADIUS {
                for dx in -EDGE_BLUR_RADIUS..=EDGE_BLUR_RADIUS {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || ny >= hi || nx < 0 || nx >= wi {
                        continue;
                    }
                    let v = depth[[ny as usize, nx as usize]];
                    if v > 0.0 {
                        let k = (-((dy * dy + dx * dx) as f32) * inv).exp();
                        acc += k * v;
                        norm += k;
                    }
                }
            }
            out[[y as usize, x as usize]] = (acc / norm).min(TOY_DEPTH_CAP);
        }
    }
    out
}

fn quantise(image: &mut Image) {
    image.mapv_inplace(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
}

fn stream_id(domain: Domain, index: usize) -> u64 {
    let tag: u64 = match domain {
        Domain::Source => 1,
        Domain::Target => 2,
    };
    (tag << 40) | index as u64
}

fn check_args(n: usize, resolution: (usize, usize)) -> Result<()> {
    if n == 0 {
        return Err(Error::arg("sample count must be >= 1"));
    }
    if resolution.0 < MIN_SIDE || resolution.1 < MIN_SIDE {
        return Err(Error::arg(format!(
            "resolution {}x{} below the {MIN_SIDE}x{MIN_SIDE} minimum",
            resolution.0, resolution.1
        )));
    }
    Ok(())
}

/// Renders `n` labelled samples of one domain. Target samples carry their
/// edge-blurred ground truth; callers decide whether to expose it.
pub fn render_toy_samples(
    seed: u64,
    domain: Domain,
    n: usize,
    resolution: (usize, usize),
) -> Result<Vec<DepthSample>> {
    check_args(n, resolution)?;
    let (h, w) = resolution;
    let noise = Normal::new(0.0f32, TARGET_NOISE_SIGMA).expect("valid sigma");
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream_id(domain, i));
            let scene = sample_scene(&mut rng, h, w);
            let (mut image, depth) = match domain {
                Domain::Source => render(&scene, &STYLE_A, h, w),
                Domain::Target => {
                    let (mut image, depth) = render(&scene, &STYLE_B, h, w);
                    image.mapv_inplace(|v| v + noise.sample(&mut rng));
                    (image, blur_depth_edges(&depth))
                }
            };
            quantise(&mut image);
            let prefix = match domain {
                Domain::Source => "src",
                Domain::Target => "tgt",
            };
            DepthSample::new(format!("{prefix}_{i:05}"), domain, image, depth)
        })
        .collect()
}

fn write_split(
    root: PathBuf,
    domain: Domain,
    seed: u64,
    resolution: (usize, usize),
    samples: &[DepthSample],
) -> Result<DatasetManifest> {
    let manifest = DatasetManifest {
        root,
        ids: samples.iter().map(|s| s.id.clone()).collect(),
        domain,
        cap: TOY_DEPTH_CAP,
        height: resolution.0,
        width: resolution.1,
        seed,
    };
    for s in samples {
        manifest.save_sample(s)?;
    }
    manifest.save()?;
    Ok(manifest)
}

/// Writes `<out>/source`, `<out>/target` (unlabelled) and `<out>/target_gt`.
pub fn generate_toy_domain_pair(
    out: &Path,
    seed: u64,
    n_source: usize,
    n_target: usize,
    resolution: (usize, usize),
) -> Result<ToyDomainPair> {
    check_args(n_source, resolution)?;
    check_args(n_target, resolution)?;
    let source = render_toy_samples(seed, Domain::Source, n_source, resolution)?;
    let labelled_target = render_toy_samples(seed, Domain::Target, n_target, resolution)?;
    let unlabelled: Vec<DepthSample> = labelled_target
        .iter()
        .map(|s| DepthSample {
            depth: DepthMap::zeros(s.depth.dim()),
            ..s.clone()
        })
        .collect();
    Ok(ToyDomainPair {
        source: write_split(
            out.join("source"),
            Domain::Source,
            seed,
            resolution,
            &source,
        )?,
        target: write_split(
            out.join("target"),
            Domain::Target,
            seed,
            resolution,
            &unlabelled,
        )?,
        target_labels: write_split(
            out.join("target_gt"),
            Domain::Target,
            seed,
            resolution,
            &labelled_target,
        )?,
    })
}
