//! Encoder/decoder depth regressor with instance normalisation, skip
//! connections at every scale and a sigmoid output head.
//!
//! Layer list for encoder depth `d` and base width `b` (`c_l = b * 2^l`):
//!
//! ```text
//! enc{l}      ConvBlock(c_{l-1} -> c_l), then 2x2 average pool   (c_{-1} = 3)
//! bottleneck  ConvBlock(c_{d-1} -> c_d)
//! dec{l}      nearest 2x upsample, concat skip enc{l}, ConvBlock(c_{l+1} + c_l -> c_l)
//! head        conv1x1(c_0 -> 1), sigmoid * max_depth
//! ```
//!
//! A ConvBlock is `conv3x3 -> InstanceNorm -> ReLU`, twice.

mod checkpoint;
mod layers;
mod real;

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{DepthMap, Image};
use crate::error::{Error, Result};

pub use checkpoint::{Checkpoint, TensorEntry, CHECKPOINT_MAGIC};
pub use layers::{Conv, ConvGrad};
pub use real::Real;

use layers::{
    avg_pool2, avg_pool2_backward, instance_norm, instance_norm_backward, relu, relu_backward,
    upsample2, upsample2_backward, Feat,
};

const OUTPUT_CLAMP: f64 = 1e-6;
const GRAD_CHUNK: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub height: usize,
    pub width: usize,
    /// Number of down-sampling stages.
    pub depth: usize,
    pub base_channels: usize,
    pub max_depth: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 96,
            depth: 4,
            base_channels: 16,
            max_depth: 80.0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 16 {
            return Err(Error::config(format!(
                "model depth {} outside 1..=16",
                self.depth
            )));
        }
        if self.base_channels == 0 {
            return Err(Error::config("model base_channels must be >= 1"));
        }
        let f = 1usize << self.depth;
        if self.height == 0 || self.width == 0 || self.height % f != 0 || self.width % f != 0 {
            return Err(Error::config(format!(
                "resolution {}x{} not divisible by 2^{} = {f}",
                self.height, self.width, self.depth
            )));
        }
        if !(self.max_depth.is_finite() && self.max_depth > 0.0) {
            return Err(Error::config(format!(
                "max_depth must be > 0, got {}",
                self.max_depth
            )));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    pub fn conv_count(&self) -> usize {
        4 * self.depth + 3
    }

    pub fn enc_conv(&self, level: usize) -> usize {
        2 * level
    }

    pub fn bottleneck_conv(&self) -> usize {
        2 * self.depth
    }

    pub fn dec_conv(&self, level: usize) -> usize {
        2 * self.depth + 2 + 2 * (self.depth - 1 - level)
    }

    pub fn head_conv(&self) -> usize {
        4 * self.depth + 2
    }

    /// `(in, out, kernel)` for every convolution in index order.
    pub fn conv_shapes(&self) -> Vec<(usize, usize, usize)> {
        let d = self.depth;
        let mut shapes = Vec::with_capacity(self.conv_count());
        for l in 0..d {
            let cin = if l == 0 { 3 } else { self.channels(l - 1) };
            shapes.push((cin, self.channels(l), 3));
            shapes.push((self.channels(l), self.channels(l), 3));
        }
        shapes.push((self.channels(d - 1), self.channels(d), 3));
        shapes.push((self.channels(d), self.channels(d), 3));
        for l in (0..d).rev() {
            shapes.push((self.channels(l + 1) + self.channels(l), self.channels(l), 3));
            shapes.push((self.channels(l), self.channels(l), 3));
        }
        shapes.push((self.channels(0), 1, 1));
        shapes
    }

    /// Parameter-name prefix of every convolution in index order.
    pub fn conv_names(&self) -> Vec<String> {
        let d = self.depth;
        let mut names = Vec::with_capacity(self.conv_count());
        for l in 0..d {
            names.push(format!("enc{l}.conv1"));
            names.push(format!("enc{l}.conv2"));
        }
        names.push("bottleneck.conv1".into());
        names.push("bottleneck.conv2".into());
        for l in (0..d).rev() {
            names.push(format!("dec{l}.conv1"));
            names.push(format!("dec{l}.conv2"));
        }
        names.push("head".into());
        names
    }

    /// Names of the decoder blocks in expansion order (deepest first).
    pub fn decoder_blocks(&self) -> Vec<String> {
        (0..self.depth).rev().map(|l| format!("dec{l}")).collect()
    }

    pub fn param_count(&self) -> usize {
        self.conv_shapes()
            .iter()
            .map(|&(i, o, k)| o * i * k * k + o)
            .sum()
    }
}

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

/// Network parameters in element type `T`.
#[derive(Debug)]
pub struct Net<T: Real> {
    spec: ModelSpec,
    convs: Vec<Conv<T>>,
    uid: u64,
}

/// The training-precision network.
pub type DepthNet = Net<f32>;

impl<T: Real> Clone for Net<T> {
    fn clone(&self) -> Self {
        Self {
            spec: self.spec,
            convs: self.convs.clone(),
            uid: fresh_uid(),
        }
    }
}

/// Everything backward needs from one sample's forward pass.
#[derive(Debug)]
struct BlockCache<T> {
    x_in: Feat<T>,
    xhat1: Feat<T>,
    inv1: Vec<T>,
    xhat2: Feat<T>,
    inv2: Vec<T>,
}

#[derive(Debug)]
struct SampleCache<T> {
    blocks: Vec<BlockCache<T>>,
    head_in: Feat<T>,
    /// Derivative of the output with respect to the head pre-activation.
    dout: Vec<T>,
}

/// Predictions of one batch together with the state needed to
/// backpropagate through them.
#[derive(Debug)]
pub struct ForwardPass<T: Real> {
    net_uid: u64,
    pub predictions: Vec<Array2<f64>>,
    caches: Vec<SampleCache<T>>,
}

impl<T: Real> ForwardPass<T> {
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }
}

/// Parameter gradients, one entry per convolution.
#[derive(Clone, Debug)]
pub struct Gradients<T: Real> {
    pub convs: Vec<ConvGrad<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros(net: &Net<T>) -> Self {
        Self {
            convs: net.convs.iter().map(ConvGrad::zeros_like).collect(),
        }
    }

    fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.convs.iter_mut().zip(&other.convs) {
            a.add_assign(b);
        }
    }

    /// Flat gradient slices in the same order as [`Net::param_slices`].
    pub fn slices(&self) -> Vec<&[T]> {
        self.convs
            .iter()
            .flat_map(|g| [g.weight.as_slice(), g.bias.as_slice()])
            .collect()
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        self.convs
            .iter_mut()
            .flat_map(|g| [g.weight.as_mut_slice(), g.bias.as_mut_slice()])
            .collect()
    }

    pub fn global_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v.f64() * v.f64())
            .sum::<f64>()
            .sqrt()
    }

    /// Mean absolute gradient of each decoder block (both convolutions,
    /// weights and biases), in expansion order.
    pub fn decoder_magnitudes(&self, spec: &ModelSpec) -> Vec<f64> {
        (0..spec.depth)
            .rev()
            .map(|l| {
                let i = spec.dec_conv(l);
                let (sum, n) = self.convs[i..i + 2]
                    .iter()
                    .flat_map(|g| g.weight.iter().chain(&g.bias))
                    .fold((0.0, 0usize), |(s, n), v| (s + v.f64().abs(), n + 1));
                sum / n as f64
            })
            .collect()
    }
}

fn image_to_feat<T: Real>(image: &Image) -> Feat<T> {
    let (h, w, _) = image.dim();
    let mut f = Feat::zeros(3, h, w);
    for ((y, x, c), v) in image.indexed_iter() {
        f.data[(c * h + y) * w + x] = T::of(*v as f64);
    }
    f
}

impl<T: Real> Net<T> {
    /// He-normal initialisation from `seed`; biases start at zero.
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let head = spec.head_conv();
        let convs = spec
            .conv_shapes()
            .into_iter()
            .enumerate()
            .map(|(i, (cin, cout, k))| {
                let mut conv = Conv::zeros(cin, cout, k);
                let fan_in = (cin * k * k) as f64;
                let std = if i == head {
                    (1.0 / fan_in).sqrt()
                } else {
                    (2.0 / fan_in).sqrt()
                };
                for w in conv.weight.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *w = T::of(z * std);
                }
                conv
            })
            .collect();
        Ok(Self {
            spec,
            convs,
            uid: fresh_uid(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn convs(&self) -> &[Conv<T>] {
        &self.convs
    }

    /// Mutable access to the convolutions; invalidates outstanding passes.
    pub fn convs_mut(&mut self) -> &mut [Conv<T>] {
        self.uid = fresh_uid();
        &mut self.convs
    }

    pub fn param_count(&self) -> usize {
        self.convs.iter().map(Conv::param_count).sum()
    }

    /// `(name, values)` for every parameter tensor.
    pub fn named_params(&self) -> Vec<(String, &[T])> {
        self.spec
            .conv_names()
            .into_iter()
            .zip(&self.convs)
            .flat_map(|(n, c)| {
                [
                    (format!("{n}.weight"), c.weight.as_slice()),
                    (format!("{n}.bias"), c.bias.as_slice()),
                ]
            })
            .collect()
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        self.convs
            .iter()
            .flat_map(|c| [c.weight.as_slice(), c.bias.as_slice()])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.uid = fresh_uid();
        self.convs
            .iter_mut()
            .flat_map(|c| [c.weight.as_mut_slice(), c.bias.as_mut_slice()])
            .collect()
    }

    /// Hex SHA-256 over the little-endian parameter bytes.
    pub fn checksum(&self) -> String {
        let mut bytes = Vec::with_capacity(self.param_count() * std::mem::size_of::<T>());
        for s in self.param_slices() {
            for v in s {
                v.write_le(&mut bytes);
            }
        }
        hex::encode(Sha256::digest(&bytes))
    }

    /// Same parameters in another element type.
    pub fn cast<U: Real>(&self) -> Net<U> {
        Net {
            spec: self.spec,
            convs: self
                .convs
                .iter()
                .map(|c| Conv {
                    in_c: c.in_c,
                    out_c: c.out_c,
                    k: c.k,
                    weight: c.weight.iter().map(|v| U::of(v.f64())).collect(),
                    bias: c.bias.iter().map(|v| U::of(v.f64())).collect(),
                })
                .collect(),
            uid: fresh_uid(),
        }
    }

    fn check_images(&self, images: &[Image]) -> Result<()> {
        for (i, im) in images.iter().enumerate() {
            let (h, w, c) = im.dim();
            if (h, w, c) != (self.spec.height, self.spec.width, 3) {
                return Err(Error::arg(format!(
                    "image {i} has shape {h}x{w}x{c}, model expects {}x{}x3",
                    self.spec.height, self.spec.width
                )));
            }
        }
        Ok(())
    }

    fn block_forward(
        &self,
        first: usize,
        x: Feat<T>,
        keep: bool,
    ) -> (Feat<T>, Option<BlockCache<T>>) {
        let (xhat1, inv1) = instance_norm(&self.convs[first].forward(&x));
        let a1 = relu(&xhat1);
        let (xhat2, inv2) = instance_norm(&self.convs[first + 1].forward(&a1));
        let out = relu(&xhat2);
        let cache = keep.then(|| BlockCache {
            x_in: x,
            xhat1,
            inv1,
            xhat2,
            inv2,
        });
        (out, cache)
    }

    fn block_backward(
        &self,
        first: usize,
        cache: &BlockCache<T>,
        mut dout: Feat<T>,
        grads: &mut Gradients<T>,
        need_input: bool,
    ) -> Option<Feat<T>> {
        relu_backward(&cache.xhat2, &mut dout);
        let d2 = instance_norm_backward(&cache.xhat2, &cache.inv2, &dout);
        let a1 = relu(&cache.xhat1);
        let (ga, gb) = grads.convs.split_at_mut(first + 1);
        let mut da1 = self.convs[first + 1]
            .backward(&a1, &d2, &mut gb[0], true)
            .expect("input gradient requested");
        relu_backward(&cache.xhat1, &mut da1);
        let d1 = instance_norm_backward(&cache.xhat1, &cache.inv1, &da1);
        self.convs[first].backward(&cache.x_in, &d1, &mut ga[first], need_input)
    }

    fn sample_forward(&self, image: &Image, keep: bool) -> (Array2<f64>, Option<SampleCache<T>>) {
        let s = &self.spec;
        let d = s.depth;
        let mut blocks = Vec::new();
        let mut skips = Vec::with_capacity(d);
        let mut h = image_to_feat::<T>(image);
        for l in 0..d {
            let (out, c) = self.block_forward(s.enc_conv(l), h, keep);
            blocks.extend(c);
            h = avg_pool2(&out);
            skips.push(out);
        }
        let (mut h, c) = self.block_forward(s.bottleneck_conv(), h, keep);
        blocks.extend(c);
        for l in (0..d).rev() {
            let cat = Feat::concat(&upsample2(&h), &skips[l]);
            let (out, c) = self.block_forward(s.dec_conv(l), cat, keep);
            blocks.extend(c);
            h = out;
        }
        let z = self.convs[s.head_conv()].forward(&h);
        let lo = T::of(OUTPUT_CLAMP);
        let hi = T::of(1.0 - OUTPUT_CLAMP);
        let md = T::of(s.max_depth);
        let mut pred = Array2::zeros((s.height, s.width));
        let mut dout = Vec::with_capacity(if keep { z.data.len() } else { 0 });
        for (p, zv) in pred.iter_mut().zip(&z.data) {
            let sig = T::one() / (T::one() + (-*zv).exp());
            let clamped = if sig.is_nan() {
                sig
            } else {
                sig.max(lo).min(hi)
            };
            *p = (clamped * md).f64();
            if keep {
                dout.push(if sig > lo && sig < hi {
                    md * sig * (T::one() - sig)
                } else {
                    T::zero()
                });
            }
        }
        let cache = keep.then(|| SampleCache {
            blocks,
            head_in: h,
            dout,
        });
        (pred, cache)
    }

    fn sample_backward(
        &self,
        cache: &SampleCache<T>,
        dpred: &Array2<f64>,
        grads: &mut Gradients<T>,
    ) {
        let s = &self.spec;
        let d = s.depth;
        let mut dz = Feat::zeros(1, s.height, s.width);
        for ((o, g), k) in dz.data.iter_mut().zip(dpred.iter()).zip(&cache.dout) {
            *o = T::of(*g) * *k;
        }
        let head = s.head_conv();
        let mut dh = self.convs[head]
            .backward(&cache.head_in, &dz, &mut grads.convs[head], true)
            .expect("input gradient requested");
        // block caches are stored in forward order: enc 0..d, bottleneck, dec d-1..0
        let mut dskips: Vec<Option<Feat<T>>> = (0..d).map(|_| None).collect();
        for l in 0..d {
            let cache_idx = d + 1 + (d - 1 - l);
            let dcat = self
                .block_backward(s.dec_conv(l), &cache.blocks[cache_idx], dh, grads, true)
                .expect("input gradient requested");
            let (du, dskip) = dcat.split(s.channels(l + 1));
            dskips[l] = Some(dskip);
            dh = upsample2_backward(&du);
        }
        dh = self
            .block_backward(s.bottleneck_conv(), &cache.blocks[d], dh, grads, true)
            .expect("input gradient requested");
        for l in (0..d).rev() {
            let mut dout = avg_pool2_backward(&dh);
            dout.add_assign(dskips[l].as_ref().expect("decoder visited every level"));
            match self.block_backward(s.enc_conv(l), &cache.blocks[l], dout, grads, l > 0) {
                Some(dx) => dh = dx,
                None => break,
            }
        }
    }

    /// Predicts a depth map per image, each strictly inside `(0, max_depth)`.
    pub fn predict(&self, images: &[Image]) -> Result<Vec<DepthMap>> {
        self.check_images(images)?;
        Ok(images
            .par_iter()
            .map(|im| self.sample_forward(im, false).0.mapv(|v| v as f32))
            .collect())
    }

    /// Differentiable forward pass.
    pub fn forward(&self, images: &[Image]) -> Result<ForwardPass<T>> {
        self.check_images(images)?;
        let (predictions, caches): (Vec<_>, Vec<_>) = images
            .par_iter()
            .map(|im| {
                let (p, c) = self.sample_forward(im, true);
                (p, c.expect("cache kept"))
            })
            .unzip();
        Ok(ForwardPass {
            net_uid: self.uid,
            predictions,
            caches,
        })
    }

    /// Parameter gradients of a scalar loss given its gradient with respect
    /// to every prediction of `pass`.
    pub fn backward(&self, pass: &ForwardPass<T>, dpreds: &[Array2<f64>]) -> Result<Gradients<T>> {
        if pass.net_uid != self.uid {
            return Err(Error::arg(
                "loss is not connected to this network's current parameters",
            ));
        }
        if dpreds.len() != pass.len() {
            return Err(Error::arg(format!(
                "{} prediction gradients for a pass of {}",
                dpreds.len(),
                pass.len()
            )));
        }
        let shape = (self.spec.height, self.spec.width);
        if let Some(i) = dpreds.iter().position(|g| g.dim() != shape) {
            return Err(Error::arg(format!(
                "prediction gradient {i} has the wrong shape"
            )));
        }
        let chunks: Vec<Gradients<T>> = pass
            .caches
            .par_chunks(GRAD_CHUNK)
            .zip(dpreds.par_chunks(GRAD_CHUNK))
            .map(|(caches, gs)| {
                let mut acc = Gradients::zeros(self);
                for (c, g) in caches.iter().zip(gs) {
                    if g.iter().any(|v| *v != 0.0) {
                        self.sample_backward(c, g, &mut acc);
                    }
                }
                acc
            })
            .collect();
        let mut total = Gradients::zeros(self);
        for c in &chunks {
            total.add_assign(c);
        }
        Ok(total)
    }

    /// Mean |gradient| of every decoder block for the loss whose
    /// prediction gradients are `dpreds`.
    pub fn decoder_gradient_magnitudes(
        &self,
        pass: &ForwardPass<T>,
        dpreds: &[Array2<f64>],
    ) -> Result<Vec<f64>> {
        Ok(self.backward(pass, dpreds)?.decoder_magnitudes(&self.spec))
    }
}

impl DepthNet {
    /// Deterministic `f32` initialisation.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        Net::new(spec, seed)
    }
}

/// Builds a freshly initialised training-precision network.
pub fn init_model(spec: ModelSpec, seed: u64) -> Result<DepthNet> {
    DepthNet::init(spec, seed)
}
