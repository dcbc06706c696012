//! Dense N×C×H×W tensors with an optional gradient buffer.
//!
//! Data is row-major within each channel plane; the element at
//! `(n, c, y, x)` lives at index `((n*C + c)*H + y)*W + x`. All values are
//! f64. The gradient buffer, when allocated, always matches the data shape.

use crate::error::{Error, Result};

/// A 4-dimensional tensor: batch, channels, height, width.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: [usize; 4],
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.iter().product()],
            grad: None,
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "Tensor::from_vec",
                expected: format!("{expected} elements for {shape:?}"),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Elements in one channel plane (H·W).
    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.index(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.index(n, c, y, x);
        self.data[i] = v;
    }

    /// One channel plane as a contiguous slice.
    pub fn plane(&self, n: usize, c: usize) -> &[f64] {
        let p = self.plane_len();
        let start = (n * self.shape[1] + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f64] {
        let p = self.plane_len();
        let start = (n * self.shape[1] + c) * p;
        &mut self.data[start..start + p]
    }

    /// All channel planes of one batch element as a contiguous slice.
    pub fn batch_slice(&self, n: usize) -> &[f64] {
        let stride = self.shape[1] * self.plane_len();
        &self.data[n * stride..(n + 1) * stride]
    }

    pub fn batch_slice_mut(&mut self, n: usize) -> &mut [f64] {
        let stride = self.shape[1] * self.plane_len();
        &mut self.data[n * stride..(n + 1) * stride]
    }

    // ---- gradient buffer ------------------------------------------------

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut [f64]> {
        self.grad.as_deref_mut()
    }

    /// Allocates the gradient buffer (zeroed) if absent and returns it.
    pub fn ensure_grad(&mut self) -> &mut [f64] {
        if self.grad.is_none() {
            self.grad = Some(vec![0.0; self.data.len()]);
        }
        self.grad.as_deref_mut().unwrap()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }

    /// Accumulates `other`'s data into this tensor's gradient buffer.
    pub fn accumulate_grad(&mut self, other: &Tensor) -> Result<()> {
        self.check_same_shape(other, "accumulate_grad")?;
        let g = self.ensure_grad();
        for (gi, oi) in g.iter_mut().zip(other.data.iter()) {
            *gi += *oi;
        }
        Ok(())
    }

    // ---- elementwise helpers ---------------------------------------------

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            grad: None,
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other, "zip_map")?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
            grad: None,
        })
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn clamped(&self, lo: f64, hi: f64) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            0.0
        } else {
            self.sum() / self.data.len() as f64
        }
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, other: &Tensor, context: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                context,
                expected: format!("{:?}", self.shape),
                got: format!("{:?}", other.shape),
            });
        }
        Ok(())
    }

    // ---- structural ops ---------------------------------------------------

    /// Stacks single-batch tensors along the batch dimension.
    pub fn stack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(Error::EmptyDataset("Tensor::stack"))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(parts.len() * c * h * w);
        let mut total_n = 0;
        for p in parts {
            if p.shape[1] != c || p.shape[2] != h || p.shape[3] != w {
                return Err(Error::ShapeMismatch {
                    context: "Tensor::stack",
                    expected: format!("[_, {c}, {h}, {w}]"),
                    got: format!("{:?}", p.shape),
                });
            }
            total_n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: [total_n, c, h, w],
            data,
            grad: None,
        })
    }

    /// One batch element as an (1, C, H, W) tensor.
    pub fn slice_batch(&self, n: usize) -> Tensor {
        Tensor {
            shape: [1, self.shape[1], self.shape[2], self.shape[3]],
            data: self.batch_slice(n).to_vec(),
            grad: None,
        }
    }

    /// Repeats a single-channel tensor across `c` channels.
    pub fn broadcast_channel(&self, c: usize) -> Result<Tensor> {
        if self.channels() != 1 {
            return Err(Error::ShapeMismatch {
                context: "broadcast_channel",
                expected: "1 channel".into(),
                got: format!("{} channels", self.channels()),
            });
        }
        let [n, _, h, w] = self.shape;
        let mut out = Tensor::zeros([n, c, h, w]);
        for ni in 0..n {
            let src = self.plane(ni, 0).to_vec();
            for ci in 0..c {
                out.plane_mut(ni, ci).copy_from_slice(&src);
            }
        }
        Ok(out)
    }
}

/// Concatenates `a` and `b` along the channel axis (`a`'s channels first).
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [an, ac, ah, aw] = a.shape();
    let [bn, bc, bh, bw] = b.shape();
    if an != bn || ah != bh || aw != bw {
        return Err(Error::ShapeMismatch {
            context: "concat_channels",
            expected: format!("[{an}, _, {ah}, {aw}]"),
            got: format!("[{bn}, _, {bh}, {bw}]"),
        });
    }
    let mut out = Tensor::zeros([an, ac + bc, ah, aw]);
    for n in 0..an {
        for c in 0..ac {
            out.plane_mut(n, c).copy_from_slice(a.plane(n, c));
        }
        for c in 0..bc {
            out.plane_mut(n, ac + c).copy_from_slice(b.plane(n, c));
        }
    }
    Ok(out)
}

/// Splits along the channel axis after `c_first` channels; the backward of
/// [`concat_channels`].
pub fn split_channels(t: &Tensor, c_first: usize) -> Result<(Tensor, Tensor)> {
    let [n, c, h, w] = t.shape();
    if c_first > c {
        return Err(Error::ShapeMismatch {
            context: "split_channels",
            expected: format!("at most {c} channels"),
            got: format!("split at {c_first}"),
        });
    }
    let mut a = Tensor::zeros([n, c_first, h, w]);
    let mut b = Tensor::zeros([n, c - c_first, h, w]);
    for ni in 0..n {
        for ci in 0..c_first {
            a.plane_mut(ni, ci).copy_from_slice(t.plane(ni, ci));
        }
        for ci in c_first..c {
            b.plane_mut(ni, ci - c_first).copy_from_slice(t.plane(ni, ci));
        }
    }
    Ok((a, b))
}

/// Rounds every element to the nearest f32-representable value.
///
/// Parameters are kept f32-representable at all times so checkpoint files
/// (raw 32-bit floats) round-trip without loss.
pub fn quantize_f32(t: &mut Tensor) {
    for v in t.data.iter_mut() {
        *v = *v as f32 as f64;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_length() {
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec([1, 1, 2, 2], vec![0.0; 4]).is_ok());
    }

    #[test]
    fn indexing_is_row_major() {
        let mut t = Tensor::zeros([2, 3, 4, 5]);
        t.set(1, 2, 3, 4, 7.0);
        assert_eq!(t.data()[((1 * 3 + 2) * 4 + 3) * 5 + 4], 7.0);
        assert_eq!(t.at(1, 2, 3, 4), 7.0);
    }

    #[test]
    fn concat_then_split_round_trips() {
        let a = Tensor::from_vec([1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::from_vec([1, 1, 1, 2], vec![5.0, 6.0]).unwrap();
        let cat = concat_channels(&a, &b).unwrap();
        assert_eq!(cat.shape(), [1, 3, 1, 2]);
        assert_eq!(cat.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let (a2, b2) = split_channels(&cat, 2).unwrap();
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn concat_with_empty_is_identity() {
        let a = Tensor::from_vec([1, 2, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let empty = Tensor::zeros([1, 0, 1, 2]);
        let cat = concat_channels(&a, &empty).unwrap();
        assert_eq!(cat, a);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::zeros([1, 1, 2, 2]);
        let b = Tensor::zeros([1, 1, 3, 2]);
        assert!(concat_channels(&a, &b).is_err());
    }

    #[test]
    fn stack_concatenates_batches() {
        let a = Tensor::filled([1, 2, 2, 2], 1.0);
        let b = Tensor::filled([1, 2, 2, 2], 2.0);
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), [2, 2, 2, 2]);
        assert_eq!(s.slice_batch(0), a);
        assert_eq!(s.slice_batch(1), b);
    }

    #[test]
    fn quantize_is_idempotent() {
        let mut t = Tensor::from_vec([1, 1, 1, 3], vec![0.1, 1.0 / 3.0, -2.7]).unwrap();
        quantize_f32(&mut t);
        let once = t.clone();
        quantize_f32(&mut t);
        assert_eq!(t, once);
    }
}
