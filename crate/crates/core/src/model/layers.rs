//! Per-sample building blocks operating on channel-major feature maps.

use super::real::Real;

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Channel-major feature map `(c, h, w)`.
#[derive(Clone, Debug)]
pub(crate) struct Feat<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Feat<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    /// Channel-wise concatenation `[a; b]`.
    pub fn concat(a: &Feat<T>, b: &Feat<T>) -> Feat<T> {
        debug_assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Feat {
            c: a.c + b.c,
            h: a.h,
            w: a.w,
            data,
        }
    }

    /// Splits off the first `c` channels.
    pub fn split(mut self, c: usize) -> (Feat<T>, Feat<T>) {
        let tail = self.data.split_off(c * self.plane());
        let rest = Feat {
            c: self.c - c,
            h: self.h,
            w: self.w,
            data: tail,
        };
        self.c = c;
        (self, rest)
    }

    pub fn add_assign(&mut self, other: &Feat<T>) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// Square convolution, stride 1, zero padding `k / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv<T> {
    pub in_c: usize,
    pub out_c: usize,
    pub k: usize,
    /// `[out_c][in_c][k][k]`, row-major.
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug)]
pub struct ConvGrad<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvGrad<T> {
    pub fn zeros_like(conv: &Conv<T>) -> Self {
        Self {
            weight: vec![T::zero(); conv.weight.len()],
            bias: vec![T::zero(); conv.bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &ConvGrad<T>) {
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += *b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += *b;
        }
    }
}

fn im2col<T: Real>(x: &Feat<T>, k: usize) -> Vec<T> {
    let (h, w) = (x.h, x.w);
    let p = h * w;
    let pad = (k / 2) as isize;
    let mut cols = vec![T::zero(); x.c * k * k * p];
    for ci in 0..x.c {
        let plane = &x.data[ci * p..(ci + 1) * p];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * p..][..p];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = sy as usize * w;
                    let sx_lo = (x_lo as isize + dx) as usize;
                    row[y * w + x_lo..y * w + x_hi]
                        .copy_from_slice(&plane[src + sx_lo..src + sx_lo + (x_hi - x_lo)]);
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], c: usize, h: usize, w: usize, k: usize) -> Feat<T> {
    let p = h * w;
    let pad = (k / 2) as isize;
    let mut out = Feat::zeros(c, h, w);
    for ci in 0..c {
        let plane = &mut out.data[ci * p..(ci + 1) * p];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * p..][..p];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (w as isize - dx).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = sy as usize * w;
                    let sx_lo = (x_lo as isize + dx) as usize;
                    for (d, s) in plane[dst + sx_lo..dst + sx_lo + (x_hi - x_lo)]
                        .iter_mut()
                        .zip(&row[y * w + x_lo..y * w + x_hi])
                    {
                        *d += *s;
                    }
                }
            }
        }
    }
    out
}

impl<T: Real> Conv<T> {
    pub fn zeros(in_c: usize, out_c: usize, k: usize) -> Self {
        Self {
            in_c,
            out_c,
            k,
            weight: vec![T::zero(); out_c * in_c * k * k],
            bias: vec![T::zero(); out_c],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn patch(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub(crate) fn forward(&self, x: &Feat<T>) -> Feat<T> {
        debug_assert_eq!(x.c, self.in_c);
        let p = x.plane();
        let mut out = Feat::zeros(self.out_c, x.h, x.w);
        let cols;
        let b: &[T] = if self.k == 1 {
            &x.data
        } else {
            cols = im2col(x, self.k);
            &cols
        };
        T::gemm(
            self.out_c,
            self.patch(),
            p,
            T::one(),
            &self.weight,
            (self.patch() as isize, 1),
            b,
            (p as isize, 1),
            T::zero(),
            &mut out.data,
            (p as isize, 1),
        );
        for (o, bias) in self.bias.iter().enumerate() {
            out.data[o * p..(o + 1) * p]
                .iter_mut()
                .for_each(|v| *v += *bias);
        }
        out
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient when `need_input` is set.
    pub(crate) fn backward(
        &self,
        x: &Feat<T>,
        dy: &Feat<T>,
        grad: &mut ConvGrad<T>,
        need_input: bool,
    ) -> Option<Feat<T>> {
        let p = x.plane();
        for (o, gb) in grad.bias.iter_mut().enumerate() {
            *gb += dy.data[o * p..(o + 1) * p].iter().copied().sum::<T>();
        }
        let cols;
        let b: &[T] = if self.k == 1 {
            &x.data
        } else {
            cols = im2col(x, self.k);
            &cols
        };
        // dW += dY · colsᵀ
        T::gemm(
            self.out_c,
            p,
            self.patch(),
            T::one(),
            &dy.data,
            (p as isize, 1),
            b,
            (1, p as isize),
            T::one(),
            &mut grad.weight,
            (self.patch() as isize, 1),
        );
        if !need_input {
            return None;
        }
        // dcols = Wᵀ · dY
        let mut dcols = vec![T::zero(); self.patch() * p];
        T::gemm(
            self.patch(),
            self.out_c,
            p,
            T::one(),
            &self.weight,
            (1, self.patch() as isize),
            &dy.data,
            (p as isize, 1),
            T::zero(),
            &mut dcols,
            (p as isize, 1),
        );
        Some(if self.k == 1 {
            Feat {
                c: self.in_c,
                h: x.h,
                w: x.w,
                data: dcols,
            }
        } else {
            col2im(&dcols, self.in_c, x.h, x.w, self.k)
        })
    }
}

/// Instance normalisation without affine parameters. Returns the
/// normalised map and the per-channel inverse standard deviations.
pub(crate) fn instance_norm<T: Real>(x: &Feat<T>) -> (Feat<T>, Vec<T>) {
    let p = x.plane();
    let n = T::of(p as f64);
    let eps = T::of(NORM_EPS);
    let mut out = x.clone();
    let mut inv = Vec::with_capacity(x.c);
    for ch in out.data.chunks_exact_mut(p) {
        let mean = ch.iter().copied().sum::<T>() / n;
        let var = ch.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
        let is = T::one() / (var + eps).sqrt();
        ch.iter_mut().for_each(|v| *v = (*v - mean) * is);
        inv.push(is);
    }
    (out, inv)
}

pub(crate) fn instance_norm_backward<T: Real>(xhat: &Feat<T>, inv: &[T], dy: &Feat<T>) -> Feat<T> {
    let p = xhat.plane();
    let n = T::of(p as f64);
    let mut dx = Feat::zeros(xhat.c, xhat.h, xhat.w);
    for c in 0..xhat.c {
        let xs = &xhat.data[c * p..(c + 1) * p];
        let gs = &dy.data[c * p..(c + 1) * p];
        let mean_g = gs.iter().copied().sum::<T>() / n;
        let mean_gx = gs.iter().zip(xs).map(|(g, x)| *g * *x).sum::<T>() / n;
        for ((d, g), x) in dx.data[c * p..(c + 1) * p].iter_mut().zip(gs).zip(xs) {
            *d = inv[c] * (*g - mean_g - *x * mean_gx);
        }
    }
    dx
}

pub(crate) fn relu<T: Real>(x: &Feat<T>) -> Feat<T> {
    Feat {
        data: x.data.iter().map(|v| v.max(T::zero())).collect(),
        ..*x
    }
}

/// Gradient through `relu(pre)`, in place on `dy`.
pub(crate) fn relu_backward<T: Real>(pre: &Feat<T>, dy: &mut Feat<T>) {
    for (g, v) in dy.data.iter_mut().zip(&pre.data) {
        if *v <= T::zero() {
            *g = T::zero();
        }
    }
}

pub(crate) fn avg_pool2<T: Real>(x: &Feat<T>) -> Feat<T> {
    let (h, w) = (x.h / 2, x.w / 2);
    let quarter = T::of(0.25);
    let mut out = Feat::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = &x.data[c * x.plane()..(c + 1) * x.plane()];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let i = 2 * y * x.w + 2 * xx;
                dst[y * w + xx] = (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]) * quarter;
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<T: Real>(dy: &Feat<T>) -> Feat<T> {
    let (h, w) = (dy.h * 2, dy.w * 2);
    let quarter = T::of(0.25);
    let mut out = Feat::zeros(dy.c, h, w);
    for c in 0..dy.c {
        let src = &dy.data[c * dy.plane()..(c + 1) * dy.plane()];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / 2) * dy.w + x / 2] * quarter;
            }
        }
    }
    out
}

pub(crate) fn upsample2<T: Real>(x: &Feat<T>) -> Feat<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Feat::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = &x.data[c * x.plane()..(c + 1) * x.plane()];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                dst[y * w + xx] = src[(y / 2) * x.w + xx / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Real>(dy: &Feat<T>) -> Feat<T> {
    let (h, w) = (dy.h / 2, dy.w / 2);
    let mut out = Feat::zeros(dy.c, h, w);
    for c in 0..dy.c {
        let src = &dy.data[c * dy.plane()..(c + 1) * dy.plane()];
        let dst = &mut out.data[c * h * w..(c + 1) * h * w];
        for y in 0..dy.h {
            for x in 0..dy.w {
                dst[(y / 2) * w + x / 2] += src[y * dy.w + x];
            }
        }
    }
    out
}
