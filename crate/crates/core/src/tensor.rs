// SPDX-License-Identifier: Apache-2.0

//! Dense `C×H×W` tensors and their binary container format.
//!
//! Values are stored channel-major, then row-major, so element `(c, i, j)`
//! lives at `c·H·W + i·W + j`. The container is a 16-byte header (magic
//! `T3v1`, then `C`, `H`, `W` as little-endian `u32`) followed by the values
//! as little-endian `f64`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

pub const CONTAINER_MAGIC: &[u8; 4] = b"T3v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::config(format!(
                "tensor shape {self} must have positive dimensions"
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    shape: Shape,
    values: Vec<f64>,
}

impl Tensor3 {
    pub fn new(shape: Shape, values: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if values.len() != shape.len() {
            return Err(Error::contract(format!(
                "tensor of shape {shape} needs {} values, got {}",
                shape.len(),
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "tensor value at flat index {pos} is not finite"
            )));
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            values: vec![value; shape.len()],
        }
    }

    /// Builds a tensor by evaluating `f(c, i, j)` at every element.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for i in 0..shape.height {
                for j in 0..shape.width {
                    values.push(f(c, i, j));
                }
            }
        }
        Self { shape, values }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn index(&self, c: usize, i: usize, j: usize) -> usize {
        debug_assert!(c < self.shape.channels && i < self.shape.height && j < self.shape.width);
        (c * self.shape.height + i) * self.shape.width + j
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.values[self.index(c, i, j)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, value: f64) {
        let k = self.index(c, i, j);
        self.values[k] = value;
    }

    /// The channel vector `x[·, i, j]`.
    pub fn pixel(&self, i: usize, j: usize) -> Vec<f64> {
        (0..self.shape.channels).map(|c| self.get(c, i, j)).collect()
    }

    pub fn ensure_same_shape(&self, other: &Tensor3, what: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::contract(format!(
                "{what}: shape mismatch {} vs {}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor3 {
        Tensor3 {
            shape: self.shape,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `f(self, other)`; shapes must match.
    pub fn zip_map(&self, other: &Tensor3, f: impl Fn(f64, f64) -> f64) -> Result<Tensor3> {
        self.ensure_same_shape(other, "elementwise op")?;
        Ok(Tensor3 {
            shape: self.shape,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, k: f64) -> Tensor3 {
        self.map(|v| k * v)
    }

    pub fn abs(&self) -> Tensor3 {
        self.map(f64::abs)
    }

    pub fn sum(&self) -> f64 {
        pairwise_sum(&self.values)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn dot(&self, other: &Tensor3) -> Result<f64> {
        self.ensure_same_shape(other, "dot")?;
        Ok(crate::numeric::dot(&self.values, &other.values))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Mean over channels, giving an `H×W` map in row-major order.
    pub fn channel_mean(&self) -> Vec<f64> {
        let s = self.shape;
        let mut out = vec![0.0; s.pixels()];
        for c in 0..s.channels {
            let plane = &self.values[c * s.pixels()..(c + 1) * s.pixels()];
            for (o, v) in out.iter_mut().zip(plane) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= s.channels as f64;
        }
        out
    }

    pub fn write_container(&self, mut w: impl Write) -> std::io::Result<()> {
        let mut header = [0u8; 16];
        header[..4].copy_from_slice(CONTAINER_MAGIC);
        for (k, dim) in [self.shape.channels, self.shape.height, self.shape.width]
            .into_iter()
            .enumerate()
        {
            let dim = u32::try_from(dim).map_err(|_| {
                std::io::Error::new(std::io::ErrorKind::InvalidInput, "dimension exceeds u32")
            })?;
            header[4 + 4 * k..8 + 4 * k].copy_from_slice(&dim.to_le_bytes());
        }
        w.write_all(&header)?;
        let mut body = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            body.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&body)
    }

    pub fn to_container_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + self.len() * 8);
        self.write_container(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_container(mut r: impl Read) -> Result<Tensor3> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)
            .map_err(|e| Error::config(format!("tensor container header: {e}")))?;
        if &header[..4] != CONTAINER_MAGIC {
            return Err(Error::config("tensor container: bad magic (expected T3v1)"));
        }
        let dim = |k: usize| {
            u32::from_le_bytes(header[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize
        };
        let shape = Shape::new(dim(0), dim(1), dim(2));
        shape.validate()?;
        let mut body = vec![0u8; shape.len() * 8];
        r.read_exact(&mut body)
            .map_err(|e| Error::config(format!("tensor container body: {e}")))?;
        let values = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Tensor3::new(shape, values).map_err(|e| Error::config(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_container_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Tensor3> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Tensor3::read_container(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_channel_major() {
        let t = Tensor3::from_fn(Shape::new(2, 2, 3), |c, i, j| (100 * c + 10 * i + j) as f64);
        assert_eq!(t.as_slice()[0], 0.0);
        assert_eq!(t.as_slice()[3], 10.0);
        assert_eq!(t.as_slice()[6], 100.0);
        assert_eq!(t.pixel(1, 2), vec![12.0, 112.0]);
    }

    #[test]
    fn rejects_wrong_length_and_non_finite() {
        assert!(Tensor3::new(Shape::new(1, 2, 2), vec![0.0; 3]).is_err());
        assert!(Tensor3::new(Shape::new(1, 1, 2), vec![0.0, f64::NAN]).is_err());
        assert!(Tensor3::new(Shape::new(0, 1, 1), vec![]).is_err());
    }

    #[test]
    fn container_header_is_bit_exact() {
        let t = Tensor3::new(Shape::new(1, 1, 2), vec![1.0, -2.5]).unwrap();
        let bytes = t.to_container_bytes();
        assert_eq!(&bytes[..4], b"T3v1");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 32);
    }

    #[test]
    fn container_rejects_bad_magic_and_truncation() {
        let t = Tensor3::zeros(Shape::new(1, 2, 2));
        let mut bytes = t.to_container_bytes();
        assert!(Tensor3::read_container(&bytes[..20]).is_err());
        bytes[0] = b'X';
        assert!(Tensor3::read_container(&bytes[..]).is_err());
    }

    #[test]
    fn channel_mean_averages_planes() {
        let t = Tensor3::from_fn(Shape::new(2, 1, 2), |c, _, j| (c * 2 + j) as f64);
        assert_eq!(t.channel_mean(), vec![1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn container_round_trips(c in 1usize..4, h in 1usize..6, w in 1usize..6,
                                 seed in proptest::collection::vec(-1e6f64..1e6, 1..150)) {
            let shape = Shape::new(c, h, w);
            let t = Tensor3::from_fn(shape, |a, b, d| seed[(a * 31 + b * 7 + d) % seed.len()]);
            let back = Tensor3::read_container(&t.to_container_bytes()[..]).unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
