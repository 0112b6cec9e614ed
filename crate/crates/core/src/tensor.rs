//! Dense row-major f64 tensors.
//!
//! Activations and signal planes use three extents `(channels, height,
//! width)`; convolution kernels use four `(out, in, kh, kw)`.  All transform
//! and training arithmetic stays in 64-bit floats; integer quantization
//! happens only in the coder.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::config(format!(
                "tensor data length {} does not match shape {:?} (= {})",
                data.len(),
                shape,
                expect
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// A zero plane, shape `[1, h, w]`.
    pub fn plane(h: usize, w: usize) -> Self {
        Tensor::zeros(&[1, h, w])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Channel count of a 3-d tensor.
    pub fn channels(&self) -> usize {
        debug_assert_eq!(self.ndim(), 3);
        self.shape[0]
    }

    pub fn height(&self) -> usize {
        debug_assert_eq!(self.ndim(), 3);
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        debug_assert_eq!(self.ndim(), 3);
        self.shape[2]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        let (h, w) = (self.shape[1], self.shape[2]);
        &mut self.data[(c * h + y) * w + x]
    }

    /// Borrow one row of one channel of a 3-d tensor.
    #[inline]
    pub fn row(&self, c: usize, y: usize) -> &[f64] {
        let (h, w) = (self.shape[1], self.shape[2]);
        let start = (c * h + y) * w;
        &self.data[start..start + w]
    }

    #[inline]
    pub fn row_mut(&mut self, c: usize, y: usize) -> &mut [f64] {
        let (h, w) = (self.shape[1], self.shape[2]);
        let start = (c * h + y) * w;
        &mut self.data[start..start + w]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Elementwise accumulate; shapes must match.
    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "tensor shape mismatch in add");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Stack single-spatial-shape tensors along the channel axis.
    pub fn stack_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let (h, w) = (parts[0].height(), parts[0].width());
        let mut channels = 0;
        for p in parts {
            if p.height() != h || p.width() != w {
                return Err(Error::config("stack_channels: spatial shape mismatch"));
            }
            channels += p.channels();
        }
        let mut data = Vec::with_capacity(channels * h * w);
        for p in parts {
            data.extend_from_slice(p.data());
        }
        Tensor::from_vec(&[channels, h, w], data)
    }

    /// Extract one channel as a `[1, h, w]` plane.
    pub fn channel(&self, c: usize) -> Tensor {
        let (h, w) = (self.height(), self.width());
        let start = c * h * w;
        Tensor {
            shape: vec![1, h, w],
            data: self.data[start..start + h * w].to_vec(),
        }
    }
}

/// Whole-sample symmetric index extension: the edge sample is not repeated,
/// so `-1 -> 1` and `n -> n-2`.
#[inline]
pub fn mirror_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    if i >= 0 && (i as usize) < n {
        return i as usize;
    }
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

/// Resize a `[c, sh, sw]` tensor onto a `(th, tw)` grid by whole-sample
/// symmetric extension (crop when the target is smaller).  Phase planes of a
/// polyphase split differ by at most one sample per axis, which is the case
/// this serves.
pub fn resample_to(src: &Tensor, th: usize, tw: usize) -> Tensor {
    let (c, sh, sw) = (src.channels(), src.height(), src.width());
    if sh == th && sw == tw {
        return src.clone();
    }
    let mut out = Tensor::zeros(&[c, th, tw]);
    for ch in 0..c {
        for y in 0..th {
            let sy = mirror_index(y as isize, sh);
            let src_row = src.row(ch, sy);
            let out_row = out.row_mut(ch, y);
            if sw == tw {
                out_row.copy_from_slice(src_row);
            } else {
                for (x, o) in out_row.iter_mut().enumerate() {
                    *o = src_row[mirror_index(x as isize, sw)];
                }
            }
        }
    }
    out
}

/// Adjoint of [`resample_to`]: scatter-add a `(th, tw)` gradient back onto
/// the `(sh, sw)` source grid.
pub fn resample_backward(grad: &Tensor, sh: usize, sw: usize) -> Tensor {
    let (c, th, tw) = (grad.channels(), grad.height(), grad.width());
    if sh == th && sw == tw {
        return grad.clone();
    }
    let mut out = Tensor::zeros(&[c, sh, sw]);
    for ch in 0..c {
        for y in 0..th {
            let sy = mirror_index(y as isize, sh);
            for x in 0..tw {
                let sx = mirror_index(x as isize, sw);
                *out.at_mut(ch, sy, sx) += grad.at(ch, y, x);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mirror_extension_folds_without_repeating_edges() {
        // n = 4: ... 2 1 | 0 1 2 3 | 2 1 0 1 ...
        assert_eq!(mirror_index(-1, 4), 1);
        assert_eq!(mirror_index(-2, 4), 2);
        assert_eq!(mirror_index(4, 4), 2);
        assert_eq!(mirror_index(5, 4), 1);
        assert_eq!(mirror_index(6, 4), 0);
        assert_eq!(mirror_index(0, 1), 0);
        assert_eq!(mirror_index(7, 1), 0);
        assert_eq!(mirror_index(-3, 1), 0);
        assert_eq!(mirror_index(2, 2), 0);
    }

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::from_vec(&[2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn resample_crop_and_extend_round() {
        let src = Tensor::from_vec(&[1, 3, 2], (0..6).map(|v| v as f64).collect()).unwrap();
        // Crop last row.
        let cropped = resample_to(&src, 2, 2);
        assert_eq!(cropped.data(), &[0.0, 1.0, 2.0, 3.0]);
        // Extend by one row: mirrored row is index 1.
        let ext = resample_to(&src, 4, 2);
        assert_eq!(ext.row(0, 3), &[2.0, 3.0]);
    }

    #[test]
    fn resample_backward_is_adjoint() {
        // <resample(x), g> == <x, resample_backward(g)> for random data.
        let src = Tensor::from_vec(&[1, 3, 3], (0..9).map(|v| (v * 7 % 5) as f64).collect()).unwrap();
        let g = Tensor::from_vec(&[1, 4, 2], (0..8).map(|v| (v * 3 % 7) as f64).collect()).unwrap();
        let fwd = resample_to(&src, 4, 2);
        let lhs: f64 = fwd.data().iter().zip(g.data()).map(|(a, b)| a * b).sum();
        let back = resample_backward(&g, 3, 3);
        let rhs: f64 = src.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
