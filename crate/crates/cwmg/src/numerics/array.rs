//! Row-major dense arrays over `f32` or `f64`.

use crate::error::{Error, Result};

/// Scalar type the numerics run in. `f32` is the training/inference default;
/// `f64` backs the gradient-check oracle.
pub trait Real:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + 'static
{
    const ZERO: Self;
    const ONE: Self;

    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn abs(self) -> Self;
    fn is_finite(self) -> bool;
    fn maximum(self, other: Self) -> Self;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;

            fn from_f64(v: f64) -> Self {
                v as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn tanh(self) -> Self {
                self.tanh()
            }
            fn abs(self) -> Self {
                self.abs()
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            fn maximum(self, other: Self) -> Self {
                if self > other {
                    self
                } else {
                    other
                }
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

/// Dense row-major array. Shapes are `[n]` for vectors and `[rows, cols]`
/// for matrices; `product(shape) == data.len()` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Array<F: Real> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Array<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::dim(format!("shape {shape:?} has a zero dimension")));
        }
        Ok(Array { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Array { shape, data: vec![F::ZERO; numel] }
    }

    pub fn scalar(v: F) -> Self {
        Array { shape: vec![1], data: vec![v] }
    }

    pub fn vector(data: Vec<F>) -> Self {
        Array { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        Array::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of rows when viewed as a matrix; a vector is one row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Number of columns when viewed as a matrix.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => self.data.len(),
        }
    }

    pub fn row(&self, r: usize) -> &[F] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn at(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols() + c]
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Contract check: every entry must be finite.
    pub fn validate_finite(&self) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::contract(format!(
                    "non-finite value {v:?} at flat index {i} (shape {:?})",
                    self.shape
                )));
            }
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Array<F> {
        Array { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<G: Real>(&self) -> Array<G> {
        Array {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.to_f64())).collect(),
        }
    }
}

/// `a[m×k] · b[k×n]`, plain triple loop in ikj order.
pub fn matmul<F: Real>(a: &Array<F>, b: &Array<F>) -> Result<Array<F>> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul: inner dimensions differ, lhs {:?} vs rhs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![F::ZERO; m * n];
    for i in 0..m {
        let arow = a.row(i);
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate().take(k) {
            let brow = &b.data[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Array::new(vec![m, n], out)
}

/// `a[m×k] · b[n×k]ᵀ` — used by backward passes.
pub fn matmul_nt<F: Real>(a: &Array<F>, b: &Array<F>) -> Result<Array<F>> {
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_nt: inner dimensions differ, lhs {:?} vs rhs-transposed {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![F::ZERO; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            let brow = b.row(j);
            let mut acc = F::ZERO;
            for p in 0..k {
                acc += arow[p] * brow[p];
            }
            out[i * n + j] = acc;
        }
    }
    Array::new(vec![m, n], out)
}

/// `a[k×m]ᵀ · b[k×n]` — used by backward passes.
pub fn matmul_tn<F: Real>(a: &Array<F>, b: &Array<F>) -> Result<Array<F>> {
    let (k, m) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul_tn: outer dimensions differ, lhs-transposed {:?} vs rhs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = vec![F::ZERO; m * n];
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &av) in arow.iter().enumerate() {
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    Array::new(vec![m, n], out)
}

/// Numerically stable softmax of a slice (max-subtraction), in place.
pub fn softmax_slice<F: Real>(xs: &mut [F]) {
    let mut max = xs[0];
    for &v in xs.iter() {
        max = max.maximum(v);
    }
    let mut sum = F::ZERO;
    for v in xs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    if sum > F::ZERO {
        for v in xs.iter_mut() {
            *v = *v / sum;
        }
    }
}

/// Stable softmax of a vector array.
pub fn softmax<F: Real>(logits: &Array<F>) -> Result<Array<F>> {
    if logits.numel() == 0 {
        return Err(Error::dim("softmax: empty input".to_string()));
    }
    let mut out = logits.clone();
    softmax_slice(out.data_mut());
    Ok(out)
}

/// `log(sum(exp(xs)))` with max-subtraction.
pub fn log_sum_exp<F: Real>(xs: &[F]) -> F {
    let mut max = xs[0];
    for &v in xs.iter() {
        max = max.maximum(v);
    }
    let mut sum = F::ZERO;
    for &v in xs.iter() {
        sum += (v - max).exp();
    }
    max + sum.ln()
}

/// elu(x) + 1: the positive feature map used by linear attention.
pub fn elu_plus_one<F: Real>(x: F) -> F {
    if x > F::ZERO {
        x + F::ONE
    } else {
        x.exp()
    }
}

/// Derivative of `elu_plus_one`. For x ≤ 0 it equals the output itself.
pub fn elu_plus_one_grad<F: Real>(x: F) -> F {
    if x > F::ZERO {
        F::ONE
    } else {
        x.exp()
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Gaussian error linear unit, tanh approximation.
pub fn gelu<F: Real>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (F::ONE + inner.tanh())
}

/// Derivative of the tanh-approximated gelu.
pub fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::from_f64(GELU_C);
    let a = F::from_f64(GELU_A);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let dinner = c * (F::ONE + three * a * x * x);
    half * (F::ONE + t) + half * x * (F::ONE - t * t) * dinner
}
