use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Element type of the network: `f32` for training, `f64` for gradient checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + AddAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    const NAME: &'static str;

    /// `c = a · b + beta · c` for row-major `a: m×k`, `b: k×n`, `c: m×n`
    /// with arbitrary strides (given as `(row, col)`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_stride: (isize, isize),
        b: &[Self],
        b_stride: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_stride: (isize, isize),
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

fn check_extent(rows: usize, cols: usize, stride: (isize, isize), len: usize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows - 1) as isize * stride.0 + (cols - 1) as isize * stride.1;
    assert!(
        stride.0 >= 0 && stride.1 >= 0 && (last as usize) < len,
        "gemm operand out of bounds"
    );
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_stride: (isize, isize),
                b: &[Self],
                b_stride: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_stride: (isize, isize),
            ) {
                check_extent(m, k, a_stride, a.len());
                check_extent(k, n, b_stride, b.len());
                check_extent(m, n, c_stride, c.len());
                // SAFETY: every operand's addressed range was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        a_stride.0,
                        a_stride.1,
                        b.as_ptr(),
                        b_stride.0,
                        b_stride.1,
                        beta,
                        c.as_mut_ptr(),
                        c_stride.0,
                        c_stride.1,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

/// Dense row-major tensor, at most five axes `(batch, channel, z, y, x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.len() > 5 {
            return Err(Error::Shape(format!("{} axes", shape.len())));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {} values, got {}",
                shape.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
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

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::of(v.to_f64().expect("finite")))
                .collect(),
        }
    }

    /// `(n, c, d, h, w)` of a 5-axis tensor.
    pub fn dims5(&self) -> Result<[usize; 5]> {
        <[usize; 5]>::try_from(self.shape.as_slice())
            .map_err(|_| Error::Shape(format!("expected 5 axes, got {:?}", self.shape)))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Inner product of the flattened buffers, accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.to_f64().unwrap() * b.to_f64().unwrap())
            .sum()
    }

    /// Stack equally shaped `(1, C, D, H, W)` tensors along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?
            .dims5()?;
        let mut data = Vec::with_capacity(items.len() * items[0].len());
        for t in items {
            if t.dims5()? != first || first[0] != 1 {
                return Err(Error::Shape("batch members differ in shape".into()));
            }
            data.extend_from_slice(&t.data);
        }
        Tensor::from_vec(&[items.len(), first[1], first[2], first[3], first[4]], data)
    }
}

/// Concatenate two `(N, C, D, H, W)` tensors along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, ca, d, h, w] = a.dims5()?;
    let [nb, cb, db, hb, wb] = b.dims5()?;
    if (n, d, h, w) != (nb, db, hb, wb) {
        return Err(Error::Shape(format!(
            "cannot concatenate {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let sp = d * h * w;
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        out.extend_from_slice(&a.data[i * ca * sp..(i + 1) * ca * sp]);
        out.extend_from_slice(&b.data[i * cb * sp..(i + 1) * cb * sp]);
    }
    Tensor::from_vec(&[n, ca + cb, d, h, w], out)
}

/// Inverse of [`concat_channels`]: split at channel `ca`.
pub fn split_channels<T: Scalar>(t: &Tensor<T>, ca: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let [n, c, d, h, w] = t.dims5()?;
    if ca > c {
        return Err(Error::Shape(format!("split at {ca} of {c} channels")));
    }
    let sp = d * h * w;
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in 0..n {
        let base = i * c * sp;
        a.extend_from_slice(&t.data[base..base + ca * sp]);
        b.extend_from_slice(&t.data[base + ca * sp..base + c * sp]);
    }
    Ok((
        Tensor::from_vec(&[n, ca, d, h, w], a)?,
        Tensor::from_vec(&[n, c - ca, d, h, w], b)?,
    ))
}

impl Tensor<f32> {
    /// `(1, C, L, H, W)` view of a volume; the memory layout is identical.
    pub fn from_volume(v: &Volume) -> Self {
        let [w, h, l] = v.dims();
        Tensor {
            shape: vec![1, v.channels(), l, h, w],
            data: v.data().to_vec(),
        }
    }

    /// Batch item `i` as a volume.
    pub fn to_volume(&self, i: usize) -> Result<Volume> {
        let [n, c, d, h, w] = self.dims5()?;
        if i >= n {
            return Err(Error::Shape(format!("batch index {i} of {n}")));
        }
        let len = c * d * h * w;
        Volume::from_vec([w, h, d], c, self.data[i * len..(i + 1) * len].to_vec())
    }
}
