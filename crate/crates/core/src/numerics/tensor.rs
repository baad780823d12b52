use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Storage element of a [`Tensor`].
///
/// Every reduction widens to `f64`, so `f32` storage still gets 64-bit
/// accumulation. The `f64` instance exists mostly for gradient checking.
pub trait Real:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    const ZERO: Self;
    const ONE: Self;

    fn of(x: f64) -> Self;
    fn wide(self) -> f64;
    fn finite(self) -> bool;
}

impl Real for f32 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn of(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn wide(self) -> f64 {
        self as f64
    }
    #[inline]
    fn finite(self) -> bool {
        self.is_finite()
    }
}

impl Real for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;

    #[inline]
    fn of(x: f64) -> Self {
        x
    }
    #[inline]
    fn wide(self) -> f64 {
        self
    }
    #[inline]
    fn finite(self) -> bool {
        self.is_finite()
    }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::ZERO; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    /// A `1 × n` row.
    pub fn row(data: Vec<T>) -> Self {
        Self {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading dimension; 1 for rank-1 tensors.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Product of trailing dimensions.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row_slice(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.wide())).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.wide()).sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v.wide() * v.wide()).sum()
    }
}

/// Dot product with `f64` accumulation over eight independent lanes.
#[inline]
pub(crate) fn dot_wide<A: Real, B: Real>(a: &[A], b: &[B]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l].wide() * y[l].wide();
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x.wide() * y.wide();
    }
    acc.iter().sum::<f64>() + tail
}

const PANEL: usize = 16;
const BLOCK: usize = 4;

/// `out[m×n] = a[m×k] · b[k×n]`, accumulating in `f64`.
///
/// Each output sums its `k` products in order, so a row's result does not
/// depend on how many rows share the call.
pub(crate) fn matmul_into<T: Real>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::ZERO; m * n];
    gemm(a, b, m, k, n, |r, j0, acc| {
        for (o, &s) in out[r * n + j0..r * n + j0 + acc.len()].iter_mut().zip(acc) {
            *o = T::of(s);
        }
    });
    out
}

/// `c[m×k] += g[m×n] · b[k×n]ᵀ`, summing each entry's `n` products in order.
pub(crate) fn matmul_nt_acc<T: Real>(g: &[f64], b: &[T], m: usize, k: usize, n: usize, c: &mut [f64]) {
    let mut bt = vec![0f64; n * k];
    for kk in 0..k {
        for (j, v) in b[kk * n..(kk + 1) * n].iter().enumerate() {
            bt[j * k + kk] = v.wide();
        }
    }
    gemm(g, &bt, m, n, k, |r, j0, acc| {
        for (o, &s) in c[r * k + j0..r * k + j0 + acc.len()].iter_mut().zip(acc) {
            *o += s;
        }
    });
}

/// Blocked `a[m×k] · b[k×n]`, handing each finished row segment to `emit`
/// as `(row, first column, sums)`.
fn gemm<A: Real, B: Real>(
    a: &[A],
    b: &[B],
    m: usize,
    k: usize,
    n: usize,
    mut emit: impl FnMut(usize, usize, &[f64]),
) {
    let mut panel = vec![0f64; k * PANEL];
    for j0 in (0..n).step_by(PANEL) {
        let w = (n - j0).min(PANEL);
        for kk in 0..k {
            let src = &b[kk * n + j0..kk * n + j0 + w];
            let dst = &mut panel[kk * PANEL..(kk + 1) * PANEL];
            for (l, d) in dst.iter_mut().enumerate() {
                *d = if l < w { src[l].wide() } else { 0.0 };
            }
        }
        let mut i = 0;
        while i + BLOCK <= m {
            let acc = panel_rows::<A, BLOCK>(a, &panel, i, k);
            for (r, accr) in acc.iter().enumerate() {
                emit(i + r, j0, &accr[..w]);
            }
            i += BLOCK;
        }
        for r in i..m {
            let acc = panel_rows::<A, 1>(a, &panel, r, k);
            emit(r, j0, &acc[0][..w]);
        }
    }
}

/// `a·b + c`, fused where the target has hardware FMA.
#[inline(always)]
fn madd(a: f64, b: f64, c: f64) -> f64 {
    if cfg!(target_feature = "fma") {
        a.mul_add(b, c)
    } else {
        a * b + c
    }
}

/// Rows `i..i+R` of `a` times a `k×PANEL` panel.
#[inline(always)]
fn panel_rows<A: Real, const R: usize>(a: &[A], panel: &[f64], i: usize, k: usize) -> [[f64; PANEL]; R] {
    let ar: [&[A]; R] = std::array::from_fn(|r| &a[(i + r) * k..(i + r + 1) * k]);
    let panel = &panel[..k * PANEL];
    let mut acc = [[0f64; PANEL]; R];
    for kk in 0..k {
        let p: &[f64; PANEL] = panel[kk * PANEL..(kk + 1) * PANEL].try_into().expect("panel row");
        let av: [f64; R] = std::array::from_fn(|r| ar[r][kk].wide());
        for r in 0..R {
            for l in 0..PANEL {
                acc[r][l] = madd(av[r], p[l], acc[r][l]);
            }
        }
    }
    acc
}

/// `c[k×n] += a[m×k]ᵀ · g[m×n]`, adding the `m` products of each entry in
/// row order.
pub(crate) fn matmul_tn_acc<T: Real>(a: &[T], g: &[f64], m: usize, k: usize, n: usize, c: &mut [f64]) {
    let mut kk = 0;
    while kk + BLOCK <= k {
        outer_block::<T, BLOCK>(a, g, kk, m, k, n, c);
        kk += BLOCK;
    }
    for q in kk..k {
        outer_block::<T, 1>(a, g, q, m, k, n, c);
    }
}

/// Rows `kk..kk+Q` of `c` for the `k×n` product `aᵀ · g`.
#[inline(always)]
fn outer_block<T: Real, const Q: usize>(
    a: &[T],
    g: &[f64],
    kk: usize,
    m: usize,
    k: usize,
    n: usize,
    c: &mut [f64],
) {
    let full = n - n % PANEL;
    for j0 in (0..full).step_by(PANEL) {
        let mut acc: [[f64; PANEL]; Q] = std::array::from_fn(|q| {
            c[(kk + q) * n + j0..(kk + q) * n + j0 + PANEL].try_into().expect("panel")
        });
        for i in 0..m {
            let gv: &[f64; PANEL] = g[i * n + j0..i * n + j0 + PANEL].try_into().expect("panel");
            for q in 0..Q {
                let av = a[i * k + kk + q].wide();
                for l in 0..PANEL {
                    acc[q][l] = madd(av, gv[l], acc[q][l]);
                }
            }
        }
        for (q, accq) in acc.iter().enumerate() {
            c[(kk + q) * n + j0..(kk + q) * n + j0 + PANEL].copy_from_slice(accq);
        }
    }
    for q in 0..Q {
        for i in 0..m {
            let av = a[i * k + kk + q].wide();
            for j in full..n {
                c[(kk + q) * n + j] += av * g[i * n + j];
            }
        }
    }
}
