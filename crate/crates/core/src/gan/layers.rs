//! Layers with hand-written backward passes.
//!
//! Forward functions return whatever the matching backward needs; the
//! networks keep those caches on a per-sample tape.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::ParamSet;
use super::tensor::{Patches, Real, Tensor};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

fn gaussian_init<T: Real>(rng: &mut impl Rng, len: usize) -> Vec<T> {
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    (0..len).map(|_| T::lit(normal.sample(rng))).collect()
}

/// Strided convolution. Weight layout `[cout, cin·k·k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), vec![cout, cin, k, k], gaussian_init(rng, cout * cin * k * k));
        let bias = params.add(format!("{name}.bias"), vec![cout], vec![T::zero(); cout]);
        Self {
            weight,
            bias,
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    fn patches(&self, h: usize, w: usize) -> Patches {
        Patches {
            c: self.cin,
            h,
            w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        self.patches(h, w).out_dims()
    }

    /// Returns the output and the unfolded input columns.
    pub fn forward<T: Real>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> (Tensor<T>, Vec<T>) {
        debug_assert_eq!(x.c, self.cin);
        let patches = self.patches(x.h, x.w);
        let (oh, ow) = patches.out_dims();
        let cols = patches.im2col(&x.data);
        let mut y = Tensor::zeros(self.cout, oh, ow);
        let plane = oh * ow;
        let bias = params.value(self.bias);
        for (o, chunk) in y.data.chunks_exact_mut(plane).enumerate() {
            chunk.fill(bias[o]);
        }
        T::gemm(self.cout, patches.rows(), plane, params.value(self.weight), false, &cols, false, T::one(), &mut y.data);
        (y, cols)
    }

    /// Accumulates parameter gradients; returns the input gradient when asked.
    pub fn backward<T: Real>(
        &self,
        params: &ParamSet<T>,
        cols: &[T],
        in_dims: (usize, usize),
        dy: &Tensor<T>,
        grads: &mut [Vec<T>],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let patches = self.patches(in_dims.0, in_dims.1);
        let plane = dy.plane();
        let rows = patches.rows();
        T::gemm(self.cout, plane, rows, &dy.data, false, cols, true, T::one(), &mut grads[self.weight]);
        for (o, g) in grads[self.bias].iter_mut().enumerate() {
            *g += dy.channel(o).iter().copied().sum::<T>();
        }
        if !need_dx {
            return None;
        }
        let mut dcols = vec![T::zero(); rows * plane];
        T::gemm(rows, self.cout, plane, params.value(self.weight), true, &dy.data, false, T::zero(), &mut dcols);
        Some(Tensor::from_vec(self.cin, in_dims.0, in_dims.1, patches.col2im(&dcols)))
    }
}

/// Transposed convolution (the adjoint of a strided [`Conv`] from `cout` to `cin`).
/// Weight layout `[cin, cout·k·k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvTranspose {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Real>(
        params: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = params.add(format!("{name}.weight"), vec![cin, cout, k, k], gaussian_init(rng, cin * cout * k * k));
        let bias = params.add(format!("{name}.bias"), vec![cout], vec![T::zero(); cout]);
        Self {
            weight,
            bias,
            cin,
            cout,
            k,
            stride,
            pad,
        }
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h - 1) * self.stride + self.k - 2 * self.pad,
            (w - 1) * self.stride + self.k - 2 * self.pad,
        )
    }

    fn patches(&self, h: usize, w: usize) -> Patches {
        let (oh, ow) = self.out_dims(h, w);
        Patches {
            c: self.cout,
            h: oh,
            w: ow,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
        }
    }

    pub fn forward<T: Real>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(x.c, self.cin);
        let patches = self.patches(x.h, x.w);
        debug_assert_eq!(patches.out_dims(), (x.h, x.w));
        let plane = x.plane();
        let rows = patches.rows();
        let mut cols = vec![T::zero(); rows * plane];
        T::gemm(rows, self.cin, plane, params.value(self.weight), true, &x.data, false, T::zero(), &mut cols);
        let mut y = Tensor::from_vec(self.cout, patches.h, patches.w, patches.col2im(&cols));
        let out_plane = y.plane();
        let bias = params.value(self.bias);
        for (o, chunk) in y.data.chunks_exact_mut(out_plane).enumerate() {
            for v in chunk {
                *v += bias[o];
            }
        }
        y
    }

    pub fn backward<T: Real>(
        &self,
        params: &ParamSet<T>,
        x: &Tensor<T>,
        dy: &Tensor<T>,
        grads: &mut [Vec<T>],
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let patches = self.patches(x.h, x.w);
        let plane = x.plane();
        let rows = patches.rows();
        let dcols = patches.im2col(&dy.data);
        T::gemm(self.cin, plane, rows, &x.data, false, &dcols, true, T::one(), &mut grads[self.weight]);
        for (o, g) in grads[self.bias].iter_mut().enumerate() {
            *g += dy.channel(o).iter().copied().sum::<T>();
        }
        if !need_dx {
            return None;
        }
        let mut dx = Tensor::zeros(self.cin, x.h, x.w);
        T::gemm(self.cin, rows, plane, params.value(self.weight), false, &dcols, false, T::zero(), &mut dx.data);
        Some(dx)
    }
}

/// Per-sample, per-channel normalization without affine parameters.
pub fn instance_norm<T: Real>(x: &mut Tensor<T>) -> Vec<T> {
    let plane = x.plane();
    let n = T::lit(plane as f64);
    let eps = T::lit(NORM_EPS);
    x.data
        .chunks_exact_mut(plane)
        .map(|ch| {
            let mean = ch.iter().copied().sum::<T>() / n;
            let var = ch.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / n;
            let inv_std = (var + eps).sqrt().recip();
            for v in ch.iter_mut() {
                *v = (*v - mean) * inv_std;
            }
            inv_std
        })
        .collect()
}

/// `dx = inv_std · (dy − mean(dy) − x̂ · mean(dy · x̂))`, in place on `dy`.
pub fn instance_norm_backward<T: Real>(normalized: &Tensor<T>, inv_std: &[T], dy: &mut Tensor<T>) {
    let plane = dy.plane();
    let n = T::lit(plane as f64);
    for ((g, xh), s) in dy
        .data
        .chunks_exact_mut(plane)
        .zip(normalized.data.chunks_exact(plane))
        .zip(inv_std)
    {
        let mean_g = g.iter().copied().sum::<T>() / n;
        let mean_gx = g.iter().zip(xh).map(|(a, b)| *a * *b).sum::<T>() / n;
        for (gi, xi) in g.iter_mut().zip(xh) {
            *gi = *s * (*gi - mean_g - *xi * mean_gx);
        }
    }
}

pub fn leaky_relu<T: Real>(x: &mut Tensor<T>) {
    let slope = T::lit(LEAKY_SLOPE);
    for v in &mut x.data {
        if *v < T::zero() {
            *v = *v * slope;
        }
    }
}

/// Uses the activation output; its sign matches the input's.
pub fn leaky_relu_backward<T: Real>(out: &Tensor<T>, dy: &mut Tensor<T>) {
    let slope = T::lit(LEAKY_SLOPE);
    for (g, y) in dy.data.iter_mut().zip(&out.data) {
        if *y < T::zero() {
            *g = *g * slope;
        }
    }
}

pub fn relu<T: Real>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

pub fn relu_backward<T: Real>(out: &Tensor<T>, dy: &mut Tensor<T>) {
    for (g, y) in dy.data.iter_mut().zip(&out.data) {
        if *y <= T::zero() {
            *g = T::zero();
        }
    }
}

pub fn sigmoid<T: Real>(x: &mut Tensor<T>) {
    for v in &mut x.data {
        *v = (T::one() + (-*v).exp()).recip();
    }
}

pub fn sigmoid_backward<T: Real>(out: &Tensor<T>, dy: &mut Tensor<T>) {
    for (g, y) in dy.data.iter_mut().zip(&out.data) {
        *g = *g * *y * (T::one() - *y);
    }
}
