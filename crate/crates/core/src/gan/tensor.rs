//! Single-sample CHW feature maps and the im2col/GEMM kernels behind the
//! convolution layers.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::image::LinearImage;

/// Scalar type the networks are generic over. Training runs in `f32`;
/// gradient checks run the same code in `f64`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Sum + AddAssign + Send + Sync + 'static
{
    /// `c = op(a) · op(b) + beta · c` with `op(a)` m×k and `op(b)` k×n, all row-major.
    fn gemm(m: usize, k: usize, n: usize, a: &[Self], a_t: bool, b: &[Self], b_t: bool, beta: Self, c: &mut [Self]);

    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("literal fits the scalar type")
    }
}

fn strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    // The stored matrix is rows×cols when not transposed, cols×rows otherwise.
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            fn gemm(m: usize, k: usize, n: usize, a: &[$t], a_t: bool, b: &[$t], b_t: bool, beta: $t, c: &mut [$t]) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n, "gemm operand too short");
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = strides(m, k, a_t);
                let (rsb, csb) = strides(k, n, b_t);
                // SAFETY: operand lengths are checked above and strides stay within them.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![T::zero(); c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.c, self.h, self.w)
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let p = self.plane();
        &self.data[c * p..(c + 1) * p]
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    /// Channel concatenation `[self; other]`.
    pub fn concat(&self, other: &Self) -> Self {
        assert_eq!((self.h, self.w), (other.h, other.w), "concat spatial dims");
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Self::from_vec(self.c + other.c, self.h, self.w, data)
    }

    /// Splits channels at `at`, the inverse of [`Tensor::concat`].
    pub fn split(mut self, at: usize) -> (Self, Self) {
        let tail = self.data.split_off(at * self.plane());
        let rest = Self::from_vec(self.c - at, self.h, self.w, tail);
        let head = Self::from_vec(at, self.h, self.w, self.data);
        (head, rest)
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|v| U::lit(v.to_f64().unwrap_or(f64::NAN))).collect(),
        }
    }

    pub fn from_image(img: &LinearImage) -> Self {
        let (w, h) = img.dims();
        let plane = w * h;
        let mut data = vec![T::zero(); 3 * plane];
        for (i, px) in img.data().chunks_exact(3).enumerate() {
            for k in 0..3 {
                data[k * plane + i] = T::lit(px[k] as f64);
            }
        }
        Self::from_vec(3, h, w, data)
    }

    /// Interprets a 3-channel tensor as a linear image, clamping to [0,1].
    pub fn to_image(&self) -> LinearImage {
        assert_eq!(self.c, 3, "image tensors carry three channels");
        let plane = self.plane();
        let mut data = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for k in 0..3 {
                let v = self.data[k * plane + i].to_f32().unwrap_or(0.0);
                data.push(if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
            }
        }
        LinearImage::from_raw(self.w, self.h, data).expect("length matches")
    }
}

/// Geometry of a square-kernel convolution: maps a `c×h×w` image onto an
/// `oh×ow` grid of `c·k·k` patch columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Patches {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Patches {
    pub fn out_dims(&self) -> (usize, usize) {
        let oh = (self.h + 2 * self.pad - self.k) / self.stride + 1;
        let ow = (self.w + 2 * self.pad - self.k) / self.stride + 1;
        (oh, ow)
    }

    pub fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    /// Unfolds `x` into a `(c·k·k) × (oh·ow)` matrix; out-of-bounds taps are zero.
    pub fn im2col<T: Real>(&self, x: &[T]) -> Vec<T> {
        let (oh, ow) = self.out_dims();
        let cols = oh * ow;
        let mut out = vec![T::zero(); self.rows() * cols];
        for ch in 0..self.c {
            let src = &x[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ch * self.k + ky) * self.k + kx;
                    let dst = &mut out[row * cols..(row + 1) * cols];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, d) in dst_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                *d = src_row[ix as usize];
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Adjoint of [`Patches::im2col`]: scatters patch columns back, summing overlaps.
    pub fn col2im<T: Real>(&self, cols_mat: &[T]) -> Vec<T> {
        let (oh, ow) = self.out_dims();
        let cols = oh * ow;
        let mut out = vec![T::zero(); self.c * self.h * self.w];
        for ch in 0..self.c {
            let dst = &mut out[ch * self.h * self.w..(ch + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ch * self.k + ky) * self.k + kx;
                    let src = &cols_mat[row * cols..(row + 1) * cols];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let src_row = &src[oy * ow..(oy + 1) * ow];
                        for (ox, s) in src_row.iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst_row[ix as usize] += *s;
                            }
                        }
                    }
                }
            }
        }
        out
    }
}
