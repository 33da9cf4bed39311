use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use crate::{Error, Real, Result};

/// Dense channel-major (CHW) tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {}x{}x{} tensor",
                data.len(),
                channels,
                height,
                width
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Builds a tensor by evaluating `f(channel, y, x)` at every position.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// Copies the `size_y x size_x` window starting at `(y0, x0)`.
    pub fn crop(&self, y0: usize, x0: usize, size_y: usize, size_x: usize) -> Result<Self> {
        if y0 + size_y > self.height || x0 + size_x > self.width {
            return Err(Error::Shape(format!(
                "crop {}x{} at ({}, {}) exceeds {}x{}",
                size_y, size_x, y0, x0, self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.channels * size_y * size_x);
        for c in 0..self.channels {
            for y in y0..y0 + size_y {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + x0..row + x0 + size_x]);
            }
        }
        Ok(Self {
            channels: self.channels,
            height: size_y,
            width: size_x,
            data,
        })
    }

    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::lit(v.to_f64_lossy())).collect(),
        }
    }
}

/// An image with every sample in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T>(Tensor<T>);

impl<T: Real> Frame<T> {
    pub fn new(tensor: Tensor<T>) -> Result<Self> {
        if tensor.height == 0 || tensor.width == 0 || tensor.channels == 0 {
            return Err(Error::Shape(format!(
                "frame must be non-empty, got {}x{}x{}",
                tensor.channels, tensor.height, tensor.width
            )));
        }
        if let Some(pos) = tensor
            .data
            .iter()
            .position(|v| !(*v >= T::zero() && *v <= T::one()))
        {
            return Err(Error::Validation(format!(
                "frame sample {} at index {} is outside [0, 1]",
                tensor.data[pos].to_f64_lossy(),
                pos
            )));
        }
        Ok(Self(tensor))
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Result<Self> {
        Self::new(Tensor::from_vec(
            channels,
            height,
            width,
            vec![value; channels * height * width],
        )?)
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        Self::new(Tensor::from_fn(channels, height, width, f))
    }

    /// Clamps every sample into `[0, 1]`; NaN becomes 0.
    pub fn clamped(mut tensor: Tensor<T>) -> Self {
        for v in tensor.data.iter_mut() {
            *v = if *v >= T::one() {
                T::one()
            } else if *v > T::zero() {
                *v
            } else {
                T::zero()
            };
        }
        Self(tensor)
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn crop(&self, y0: usize, x0: usize, size_y: usize, size_x: usize) -> Result<Self> {
        Ok(Self(self.0.crop(y0, x0, size_y, size_x)?))
    }

    pub fn cast<U: Real>(&self) -> Frame<U> {
        Frame::clamped(self.0.cast())
    }
}

impl<T> Deref for Frame<T> {
    type Target = Tensor<T>;

    fn deref(&self) -> &Tensor<T> {
        &self.0
    }
}
