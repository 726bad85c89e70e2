//! 1-D convolution and its transpose, both lowered to GEMM via im2col.

use super::{batch_view, init_uniform, Module, Param};
use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Geometry {
    kernel: usize,
    stride: usize,
    padding: usize,
}

impl Geometry {
    /// Input position read by output `o` at kernel tap `k`, if inside `[0, len)`.
    #[inline]
    fn tap(&self, o: usize, k: usize, len: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < len).then_some(pos as usize)
    }
}

/// `cols[(c * K + k) * out_len + o] = x[c, o*s - p + k]`, zero outside.
fn im2col<T: Real>(x: &[T], channels: usize, len: usize, out_len: usize, g: Geometry, cols: &mut [T]) {
    for c in 0..channels {
        let src = &x[c * len..(c + 1) * len];
        for k in 0..g.kernel {
            let dst = &mut cols[(c * g.kernel + k) * out_len..(c * g.kernel + k + 1) * out_len];
            for (o, d) in dst.iter_mut().enumerate() {
                *d = g.tap(o, k, len).map_or(T::zero(), |i| src[i]);
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back onto a `channels x len` signal.
fn col2im<T: Real>(cols: &[T], channels: usize, len: usize, out_len: usize, g: Geometry, x: &mut [T]) {
    for c in 0..channels {
        let dst = &mut x[c * len..(c + 1) * len];
        for k in 0..g.kernel {
            let src = &cols[(c * g.kernel + k) * out_len..(c * g.kernel + k + 1) * out_len];
            for (o, &v) in src.iter().enumerate() {
                if let Some(i) = g.tap(o, k, len) {
                    dst[i] += v;
                }
            }
        }
    }
}

fn check_geometry(kernel: usize, stride: usize) -> Result<()> {
    if kernel == 0 || stride == 0 {
        return Err(Error::param("kernel and stride must be positive"));
    }
    Ok(())
}

fn split_input<T: Real>(input: &Tensor<T>, channels: usize, what: &str) -> Result<(usize, usize)> {
    match batch_view(input.dims(), 2) {
        Some((b, [c, l])) if *c == channels && *l > 0 => Ok((b, *l)),
        _ => Err(Error::shape(format!(
            "{what} expects [.., {channels}, L], got {:?}",
            input.dims()
        ))),
    }
}

fn output_dims(input_dims: &[usize], batch: usize, channels: usize, len: usize) -> Vec<usize> {
    if input_dims.len() == 2 {
        vec![channels, len]
    } else {
        vec![batch, channels, len]
    }
}

/// Cross-correlation with weight `[C_out, C_in, K]`.
#[derive(Clone, Debug)]
pub struct Conv1d<T: Real = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    geometry: Geometry,
    cache: Option<Tensor<T>>,
}

impl<T: Real> Conv1d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let weight = init_uniform(&[out_channels, in_channels, kernel], in_channels * kernel, rng);
        Self::from_parts(weight, Tensor::zeros(&[out_channels]), stride, padding)
    }

    pub fn from_parts(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let [c_out, _, kernel] = *weight.dims() else {
            return Err(Error::shape(format!(
                "conv weight must be 3-D, got {:?}",
                weight.dims()
            )));
        };
        if bias.dims() != [c_out] {
            return Err(Error::shape(format!("conv bias {:?} for {c_out} outputs", bias.dims())));
        }
        check_geometry(kernel, stride)?;
        Ok(Conv1d {
            weight: Param::new(weight),
            bias: Param::new(bias),
            geometry: Geometry {
                kernel,
                stride,
                padding,
            },
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dims()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dims()[0]
    }

    pub fn output_len(&self, len: usize) -> Result<usize> {
        let g = self.geometry;
        let padded = len + 2 * g.padding;
        if padded < g.kernel {
            return Err(Error::shape(format!(
                "input length {len} too short for kernel {} with padding {}",
                g.kernel, g.padding
            )));
        }
        Ok((padded - g.kernel) / g.stride + 1)
    }

    /// Accepts `[C_in, L]` or `[B, C_in, L]`.
    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, len) = split_input(input, self.in_channels(), "conv1d")?;
        let out_len = self.output_len(len)?;
        let (c_in, c_out, g) = (self.in_channels(), self.out_channels(), self.geometry);
        let rows = c_in * g.kernel;
        let mut cols = vec![T::zero(); rows * out_len];
        let mut out = vec![T::zero(); batch * c_out * out_len];
        for (x, y) in input
            .data()
            .chunks_exact(c_in * len)
            .zip(out.chunks_exact_mut(c_out * out_len))
        {
            im2col(x, c_in, len, out_len, g, &mut cols);
            for (co, row) in y.chunks_exact_mut(out_len).enumerate() {
                row.fill(self.bias.value.data()[co]);
            }
            T::gemm(
                false,
                false,
                c_out,
                out_len,
                rows,
                T::one(),
                self.weight.value.data(),
                &cols,
                T::one(),
                y,
            );
        }
        Tensor::from_vec(&output_dims(input.dims(), batch, c_out, out_len), out)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.apply(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::state("conv1d backward called before forward"))?;
        let (batch, len) = split_input(input, self.in_channels(), "conv1d")?;
        let out_len = self.output_len(len)?;
        let (c_in, c_out, g) = (self.in_channels(), self.out_channels(), self.geometry);
        if grad_out.len() != batch * c_out * out_len {
            return Err(Error::shape(format!("conv1d grad {:?}", grad_out.dims())));
        }
        let rows = c_in * g.kernel;
        let mut cols = vec![T::zero(); rows * out_len];
        let mut grad_cols = vec![T::zero(); rows * out_len];
        let mut grad_in = vec![T::zero(); input.len()];
        for ((x, gy), gx) in input
            .data()
            .chunks_exact(c_in * len)
            .zip(grad_out.data().chunks_exact(c_out * out_len))
            .zip(grad_in.chunks_exact_mut(c_in * len))
        {
            im2col(x, c_in, len, out_len, g, &mut cols);
            // dW += gy cols^T
            T::gemm(
                false,
                true,
                c_out,
                rows,
                out_len,
                T::one(),
                gy,
                &cols,
                T::one(),
                self.weight.grad.data_mut(),
            );
            for (acc, row) in self.bias.grad.data_mut().iter_mut().zip(gy.chunks_exact(out_len)) {
                *acc += row.iter().fold(T::zero(), |a, &v| a + v);
            }
            // dcols = W^T gy
            T::gemm(
                true,
                false,
                rows,
                out_len,
                c_out,
                T::one(),
                self.weight.value.data(),
                gy,
                T::zero(),
                &mut grad_cols,
            );
            col2im(&grad_cols, c_in, len, out_len, g, gx);
        }
        Tensor::from_vec(input.dims(), grad_in)
    }
}

impl<T: Real> Module<T> for Conv1d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Transposed convolution with weight `[C_in, C_out, K]`; the adjoint of a
/// [`Conv1d`] holding the same weight tensor.
#[derive(Clone, Debug)]
pub struct ConvTranspose1d<T: Real = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    geometry: Geometry,
    output_padding: usize,
    cache: Option<Tensor<T>>,
}

impl<T: Real> ConvTranspose1d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let weight = init_uniform(&[in_channels, out_channels, kernel], in_channels * kernel, rng);
        Self::from_parts(weight, Tensor::zeros(&[out_channels]), stride, padding, output_padding)
    }

    pub fn from_parts(
        weight: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Result<Self> {
        let [_, c_out, kernel] = *weight.dims() else {
            return Err(Error::shape(format!(
                "conv-transpose weight must be 3-D, got {:?}",
                weight.dims()
            )));
        };
        if bias.dims() != [c_out] {
            return Err(Error::shape(format!(
                "conv-transpose bias {:?} for {c_out} outputs",
                bias.dims()
            )));
        }
        check_geometry(kernel, stride)?;
        if output_padding >= stride {
            return Err(Error::param(format!(
                "output_padding {output_padding} must be smaller than stride {stride}"
            )));
        }
        Ok(ConvTranspose1d {
            weight: Param::new(weight),
            bias: Param::new(bias),
            geometry: Geometry {
                kernel,
                stride,
                padding,
            },
            output_padding,
            cache: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dims()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dims()[1]
    }

    pub fn output_len(&self, len: usize) -> Result<usize> {
        let g = self.geometry;
        let full = (len - 1) * g.stride + g.kernel + self.output_padding;
        full.checked_sub(2 * g.padding)
            .filter(|&l| l > 0)
            .ok_or_else(|| Error::shape(format!("input length {len} yields an empty output")))
    }

    /// Accepts `[C_in, L]` or `[B, C_in, L]`.
    pub fn apply(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, len) = split_input(input, self.in_channels(), "conv_transpose1d")?;
        let out_len = self.output_len(len)?;
        let (c_in, c_out, g) = (self.in_channels(), self.out_channels(), self.geometry);
        let rows = c_out * g.kernel;
        let mut cols = vec![T::zero(); rows * len];
        let mut out = vec![T::zero(); batch * c_out * out_len];
        for (x, y) in input
            .data()
            .chunks_exact(c_in * len)
            .zip(out.chunks_exact_mut(c_out * out_len))
        {
            // cols = W^T x, then scatter as the adjoint of conv's gather
            T::gemm(
                true,
                false,
                rows,
                len,
                c_in,
                T::one(),
                self.weight.value.data(),
                x,
                T::zero(),
                &mut cols,
            );
            for (co, row) in y.chunks_exact_mut(out_len).enumerate() {
                row.fill(self.bias.value.data()[co]);
            }
            col2im(&cols, c_out, out_len, len, g, y);
        }
        Tensor::from_vec(&output_dims(input.dims(), batch, c_out, out_len), out)
    }

    pub fn forward(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.apply(input)?;
        self.cache = Some(input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::state("conv_transpose1d backward called before forward"))?;
        let (batch, len) = split_input(input, self.in_channels(), "conv_transpose1d")?;
        let out_len = self.output_len(len)?;
        let (c_in, c_out, g) = (self.in_channels(), self.out_channels(), self.geometry);
        if grad_out.len() != batch * c_out * out_len {
            return Err(Error::shape(format!("conv_transpose1d grad {:?}", grad_out.dims())));
        }
        let rows = c_out * g.kernel;
        let mut grad_cols = vec![T::zero(); rows * len];
        let mut grad_in = vec![T::zero(); input.len()];
        for ((x, gy), gx) in input
            .data()
            .chunks_exact(c_in * len)
            .zip(grad_out.data().chunks_exact(c_out * out_len))
            .zip(grad_in.chunks_exact_mut(c_in * len))
        {
            im2col(gy, c_out, out_len, len, g, &mut grad_cols);
            for (acc, row) in self.bias.grad.data_mut().iter_mut().zip(gy.chunks_exact(out_len)) {
                *acc += row.iter().fold(T::zero(), |a, &v| a + v);
            }
            // dW += x dcols^T, dx = W dcols
            T::gemm(
                false,
                true,
                c_in,
                rows,
                len,
                T::one(),
                x,
                &grad_cols,
                T::one(),
                self.weight.grad.data_mut(),
            );
            T::gemm(
                false,
                false,
                c_in,
                len,
                rows,
                T::one(),
                self.weight.value.data(),
                &grad_cols,
                T::zero(),
                gx,
            );
        }
        Tensor::from_vec(input.dims(), grad_in)
    }
}

impl<T: Real> Module<T> for ConvTranspose1d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
