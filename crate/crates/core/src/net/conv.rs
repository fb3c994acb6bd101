//! 3D convolution and transposed convolution with analytic gradients.
//!
//! Both are lowered to GEMM through `im2col`/`col2im`. Conv weights are laid
//! out `[out, in, kz, ky, kx]`; transposed-conv weights `[in, out, kz, ky, kx]`,
//! so a transposed conv is exactly the adjoint of the conv sharing its weight
//! buffer and geometry.

use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `[kz, ky, kx]`
    pub kernel: [usize; 3],
    pub stride: usize,
    pub padding: usize,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn conv(in_channels: usize, out_channels: usize, k: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: [k; 3],
            stride,
            padding,
            transposed: false,
        }
    }

    pub fn deconv(in_channels: usize, out_channels: usize, k: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            transposed: true,
            ..ConvSpec::conv(in_channels, out_channels, k, stride, padding)
        }
    }

    pub fn kernel_volume(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn weight_len(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel_volume()
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let [kz, ky, kx] = self.kernel;
        if self.transposed {
            vec![self.in_channels, self.out_channels, kz, ky, kx]
        } else {
            vec![self.out_channels, self.in_channels, kz, ky, kx]
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0
            || self.out_channels == 0
            || self.stride == 0
            || self.kernel.iter().any(|&k| k == 0)
        {
            return Err(Error::Shape(format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }

    /// Output spatial extent for a given input extent.
    pub fn output_dims(&self, input: [usize; 3]) -> Result<[usize; 3]> {
        self.validate()?;
        let mut out = [0; 3];
        for a in 0..3 {
            let (i, k, s, p) = (input[a], self.kernel[a], self.stride, self.padding);
            out[a] = if self.transposed {
                if i == 0 || (i - 1) * s + k < 2 * p + 1 {
                    return Err(Error::Shape(format!("transposed conv on extent {i}")));
                }
                (i - 1) * s + k - 2 * p
            } else {
                if i + 2 * p < k {
                    return Err(Error::Shape(format!(
                        "extent {i} (padding {p}) smaller than kernel {k}"
                    )));
                }
                (i + 2 * p - k) / s + 1
            };
        }
        Ok(out)
    }
}

/// Geometry of a (non-transposed) convolution: `full` is the input side,
/// `reduced` the output side.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    full: [usize; 3],
    reduced: [usize; 3],
    kernel: [usize; 3],
    stride: usize,
    padding: usize,
}

impl Geometry {
    fn full_len(&self) -> usize {
        self.full.iter().product()
    }
    fn reduced_len(&self) -> usize {
        self.reduced.iter().product()
    }
    fn kernel_len(&self) -> usize {
        self.kernel.iter().product()
    }

    /// For each kernel tap along one axis, the `(reduced_index, full_index)`
    /// pairs that are in bounds.
    fn taps(&self, axis: usize) -> Vec<Vec<(usize, usize)>> {
        (0..self.kernel[axis])
            .map(|k| {
                (0..self.reduced[axis])
                    .filter_map(|o| {
                        let i = (o * self.stride + k) as isize - self.padding as isize;
                        (i >= 0 && (i as usize) < self.full[axis]).then_some((o, i as usize))
                    })
                    .collect()
            })
            .collect()
    }

    /// `col[(c*K + tap), p] = src[c, position(tap, p)]`, zero where padded.
    fn im2col<T: Scalar>(&self, src: &[T], channels: usize, col: &mut [T]) {
        let [_, fh, fw] = self.full;
        let [_, rh, rw] = self.reduced;
        let (kl, rl, fl) = (self.kernel_len(), self.reduced_len(), self.full_len());
        col.fill(T::zero());
        let (tz, ty, tx) = (self.taps(0), self.taps(1), self.taps(2));
        for c in 0..channels {
            let s = &src[c * fl..(c + 1) * fl];
            for (kz, zs) in tz.iter().enumerate() {
                for (ky, ys) in ty.iter().enumerate() {
                    for (kx, xs) in tx.iter().enumerate() {
                        let tap = (kz * self.kernel[1] + ky) * self.kernel[2] + kx;
                        let row = &mut col[(c * kl + tap) * rl..(c * kl + tap + 1) * rl];
                        for &(oz, iz) in zs {
                            for &(oy, iy) in ys {
                                let rbase = (oz * rh + oy) * rw;
                                let fbase = (iz * fh + iy) * fw;
                                for &(ox, ix) in xs {
                                    row[rbase + ox] = s[fbase + ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`]: accumulate columns back into `dst`.
    fn col2im<T: Scalar>(&self, col: &[T], channels: usize, dst: &mut [T]) {
        let [_, fh, fw] = self.full;
        let [_, rh, rw] = self.reduced;
        let (kl, rl, fl) = (self.kernel_len(), self.reduced_len(), self.full_len());
        let (tz, ty, tx) = (self.taps(0), self.taps(1), self.taps(2));
        for c in 0..channels {
            let d = &mut dst[c * fl..(c + 1) * fl];
            for (kz, zs) in tz.iter().enumerate() {
                for (ky, ys) in ty.iter().enumerate() {
                    for (kx, xs) in tx.iter().enumerate() {
                        let tap = (kz * self.kernel[1] + ky) * self.kernel[2] + kx;
                        let row = &col[(c * kl + tap) * rl..(c * kl + tap + 1) * rl];
                        for &(oz, iz) in zs {
                            for &(oy, iy) in ys {
                                let rbase = (oz * rh + oy) * rw;
                                let fbase = (iz * fh + iy) * fw;
                                for &(ox, ix) in xs {
                                    d[fbase + ix] += row[rbase + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geometry(spec: &ConvSpec, input: [usize; 3]) -> Result<Geometry> {
    let output = spec.output_dims(input)?;
    let (full, reduced) = if spec.transposed {
        (output, input)
    } else {
        (input, output)
    };
    Ok(Geometry {
        full,
        reduced,
        kernel: spec.kernel,
        stride: spec.stride,
        padding: spec.padding,
    })
}

fn check_input<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec, weight: &[T], bias: &[T]) -> Result<[usize; 5]> {
    spec.validate()?;
    let dims = input.dims5()?;
    if dims[1] != spec.in_channels {
        return Err(Error::Shape(format!(
            "input has {} channels, layer expects {}",
            dims[1], spec.in_channels
        )));
    }
    if weight.len() != spec.weight_len() || bias.len() != spec.out_channels {
        return Err(Error::Shape(format!(
            "parameters {}+{} do not fit {spec:?}",
            weight.len(),
            bias.len()
        )));
    }
    Ok(dims)
}

/// Forward pass of a conv or transposed conv (chosen by `spec.transposed`).
pub fn forward<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec, weight: &[T], bias: &[T]) -> Result<Tensor<T>> {
    let [n, _, d, h, w] = check_input(input, spec, weight, bias)?;
    let geo = geometry(spec, [d, h, w])?;
    let (cin, cout, kl) = (spec.in_channels, spec.out_channels, geo.kernel_len());
    let out_dims = spec.output_dims([d, h, w])?;
    let in_len = cin * d * h * w;
    let out_sp: usize = out_dims.iter().product();
    let mut out = Tensor::zeros(&[n, cout, out_dims[0], out_dims[1], out_dims[2]]);
    let (rl, fl) = (geo.reduced_len(), geo.full_len());

    if !spec.transposed {
        let mut col = vec![T::zero(); cin * kl * rl];
        for b in 0..n {
            geo.im2col(&input.data()[b * in_len..(b + 1) * in_len], cin, &mut col);
            let o = &mut out.data_mut()[b * cout * out_sp..(b + 1) * cout * out_sp];
            for (c, chunk) in o.chunks_mut(rl).enumerate() {
                chunk.fill(bias[c]);
            }
            // out[cout, P] += W[cout, cin*K] · col[cin*K, P]
            T::gemm(cout, cin * kl, rl, weight, ((cin * kl) as isize, 1), &col, (rl as isize, 1), T::one(), o, (rl as isize, 1));
        }
    } else {
        let mut col = vec![T::zero(); cout * kl * rl];
        for b in 0..n {
            let x = &input.data()[b * in_len..(b + 1) * in_len];
            // col[cout*K, P_in] = W^T · x, with W stored [cin, cout*K]
            T::gemm(cout * kl, cin, rl, weight, (1, (cout * kl) as isize), x, (rl as isize, 1), T::zero(), &mut col, (rl as isize, 1));
            let o = &mut out.data_mut()[b * cout * out_sp..(b + 1) * cout * out_sp];
            geo.col2im(&col, cout, o);
            for (c, chunk) in o.chunks_mut(fl).enumerate() {
                for v in chunk {
                    *v += bias[c];
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a conv layer.
#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

/// Backward pass: gradients with respect to input, weight and bias given the
/// gradient of the layer output.
pub fn backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &[T],
    bias: &[T],
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let [n, _, d, h, w] = check_input(input, spec, weight, bias)?;
    let geo = geometry(spec, [d, h, w])?;
    let out_dims = spec.output_dims([d, h, w])?;
    let (cin, cout, kl) = (spec.in_channels, spec.out_channels, geo.kernel_len());
    if upstream.shape() != [n, cout, out_dims[0], out_dims[1], out_dims[2]] {
        return Err(Error::Shape(format!(
            "upstream gradient {:?} vs output {:?}",
            upstream.shape(),
            [n, cout, out_dims[0], out_dims[1], out_dims[2]]
        )));
    }
    let in_len = cin * d * h * w;
    let out_sp: usize = out_dims.iter().product();
    let (rl, fl) = (geo.reduced_len(), geo.full_len());
    let mut g_in = Tensor::zeros(input.shape());
    let mut g_w = vec![T::zero(); weight.len()];
    let mut g_b = vec![T::zero(); cout];

    for b in 0..n {
        let up = &upstream.data()[b * cout * out_sp..(b + 1) * cout * out_sp];
        for (c, chunk) in up.chunks(out_sp).enumerate() {
            let mut s = T::zero();
            for &v in chunk {
                s += v;
            }
            g_b[c] += s;
        }
        let x = &input.data()[b * in_len..(b + 1) * in_len];
        let gx = &mut g_in.data_mut()[b * in_len..(b + 1) * in_len];
        if !spec.transposed {
            let ck = cin * kl;
            let mut col = vec![T::zero(); ck * rl];
            geo.im2col(x, cin, &mut col);
            // gW[cout, ck] += up[cout, P] · col^T
            T::gemm(cout, rl, ck, up, (rl as isize, 1), &col, (1, rl as isize), T::one(), &mut g_w, (ck as isize, 1));
            // gcol[ck, P] = W^T · up
            T::gemm(ck, cout, rl, weight, (1, ck as isize), up, (rl as isize, 1), T::zero(), &mut col, (rl as isize, 1));
            geo.col2im(&col, cin, gx);
        } else {
            let ck = cout * kl;
            let mut col = vec![T::zero(); ck * rl];
            debug_assert_eq!(up.len(), cout * fl);
            geo.im2col(up, cout, &mut col);
            // gx[cin, P_in] = W[cin, ck] · col
            T::gemm(cin, ck, rl, weight, (ck as isize, 1), &col, (rl as isize, 1), T::zero(), gx, (rl as isize, 1));
            // gW[cin, ck] += x[cin, P_in] · col^T
            T::gemm(cin, rl, ck, x, (rl as isize, 1), &col, (1, rl as isize), T::one(), &mut g_w, (ck as isize, 1));
        }
    }
    Ok(ConvGrads {
        input: g_in,
        weight: g_w,
        bias: g_b,
    })
}

/// Named entry points matching the operation names used in the docs.
pub fn conv3d_forward<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec, weight: &[T], bias: &[T]) -> Result<Tensor<T>> {
    if spec.transposed {
        return Err(Error::Shape("conv3d_forward given a transposed spec".into()));
    }
    forward(input, spec, weight, bias)
}

pub fn conv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &[T],
    bias: &[T],
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    if spec.transposed {
        return Err(Error::Shape("conv3d_backward given a transposed spec".into()));
    }
    backward(input, spec, weight, bias, upstream)
}

pub fn deconv3d_forward<T: Scalar>(input: &Tensor<T>, spec: &ConvSpec, weight: &[T], bias: &[T]) -> Result<Tensor<T>> {
    if !spec.transposed {
        return Err(Error::Shape("deconv3d_forward given a plain conv spec".into()));
    }
    forward(input, spec, weight, bias)
}

pub fn deconv3d_backward<T: Scalar>(
    input: &Tensor<T>,
    spec: &ConvSpec,
    weight: &[T],
    bias: &[T],
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    if !spec.transposed {
        return Err(Error::Shape("deconv3d_backward given a plain conv spec".into()));
    }
    backward(input, spec, weight, bias, upstream)
}
