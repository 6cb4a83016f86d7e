use std::fmt::Debug;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Floating-point element type of network tensors. Training runs in `f32`;
/// gradient audits run the same code in `f64`.
pub trait Real:
    Float + AddAssign + SubAssign + MulAssign + Default + Debug + Send + Sync + 'static
{
    fn cast(v: f64) -> Self;
    fn widen(self) -> f64;
}

impl Real for f32 {
    fn cast(v: f64) -> Self {
        v as f32
    }
    fn widen(self) -> f64 {
        f64::from(self)
    }
}

impl Real for f64 {
    fn cast(v: f64) -> Self {
        v
    }
    fn widen(self) -> f64 {
        self
    }
}

/// Height x width x channels, channel-last, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

impl<T: Real> Tensor3<T> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![T::zero(); height * width * channels] }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {height}x{width}x{channels} tensor",
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    #[inline]
    pub fn offset(&self, y: usize, x: usize, c: usize) -> usize {
        (y * self.width + x) * self.channels + c
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[self.offset(y, x, c)]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let o = self.offset(y, x, c);
        self.data[o] = v;
    }

    /// The channel vector at one spatial position.
    pub fn pixel(&self, y: usize, x: usize) -> &[T] {
        let o = self.offset(y, x, 0);
        &self.data[o..o + self.channels]
    }

    pub fn map<U: Real>(&self, f: impl Fn(T) -> U) -> Tensor3<U> {
        Tensor3 {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn convert<U: Real>(&self) -> Tensor3<U> {
        self.map(|v| U::cast(v.widen()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
