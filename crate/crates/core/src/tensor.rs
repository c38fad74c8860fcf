//! Dense row-major tensors and the numeric kernels used by the capsule
//! network forward pass.
//!
//! All arithmetic is done in `f64`. Image-like tensors use `[H, W, C]`
//! layout and convolution kernels use `[k, k, Cin, Cout]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Splits the shape around `axis` into `(outer, dim, inner)` extents.
    fn axis_extents(&self, axis: usize) -> Result<(usize, usize, usize)> {
        if axis >= self.shape.len() {
            return Err(Error::InvalidArgument(format!(
                "axis {axis} out of range for rank {}",
                self.shape.len()
            )));
        }
        let outer = self.shape[..axis].iter().product();
        let inner = self.shape[axis + 1..].iter().product();
        Ok((outer, self.shape[axis], inner))
    }
}

/// Value range of a tensor; `span()` is the `R` used to scale noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(max >= min) {
            return Err(Error::InvalidArgument(format!(
                "range max {max} below min {min}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

pub fn range_of(x: &Tensor) -> Result<Range> {
    range_of_values(x.data())
}

pub fn range_of_values(values: &[f64]) -> Result<Range> {
    let mut iter = values.iter().copied();
    let first = iter.next().ok_or(Error::EmptyTensor)?;
    let (min, max) = iter.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
    Ok(Range { min, max })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

/// Output extent and leading pad for one spatial dimension.
///
/// `Same` pads symmetrically; an odd total pad puts the extra row/column
/// at the bottom/right.
pub fn conv_output_dim(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::InvalidArgument("stride must be >= 1".into()));
    }
    match padding {
        Padding::Valid => {
            if kernel > input {
                return Err(Error::Shape(format!(
                    "kernel {kernel} larger than input {input} with valid padding"
                )));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
    }
}

/// 2-D convolution (cross-correlation) of `[H, W, Cin]` with `[k, k, Cin, Cout]`.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, padding: Padding) -> Result<Tensor> {
    let geom = ConvGeometry::new(input.shape(), kernels.shape(), stride, padding)?;
    let mut out = vec![0.0; geom.out_h * geom.out_w * geom.cout];
    let x = input.data();
    let w = kernels.data();
    for oy in 0..geom.out_h {
        for ox in 0..geom.out_w {
            let dst = &mut out[(oy * geom.out_w + ox) * geom.cout..][..geom.cout];
            for ky in 0..geom.k {
                let Some(iy) = geom.input_row(oy, ky) else { continue };
                for kx in 0..geom.k {
                    let Some(ix) = geom.input_col(ox, kx) else { continue };
                    let src = &x[(iy * geom.in_w + ix) * geom.cin..][..geom.cin];
                    for (ci, &xv) in src.iter().enumerate() {
                        let wrow = &w[((ky * geom.k + kx) * geom.cin + ci) * geom.cout..][..geom.cout];
                        for (d, &wv) in dst.iter_mut().zip(wrow) {
                            *d += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![geom.out_h, geom.out_w, geom.cout], out)
}

/// Resolved geometry of a convolution, shared by forward, backward and
/// fixed-point kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernels: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let [in_h, in_w, cin] = *input else {
            return Err(Error::Shape(format!("conv input must be [H,W,C], got {input:?}")));
        };
        let [kh, kw, kcin, cout] = *kernels else {
            return Err(Error::Shape(format!(
                "conv kernels must be [k,k,Cin,Cout], got {kernels:?}"
            )));
        };
        if kh != kw {
            return Err(Error::Shape(format!("non-square kernel {kh}x{kw}")));
        }
        if kcin != cin {
            return Err(Error::Shape(format!(
                "kernel expects {kcin} input channels, input has {cin}"
            )));
        }
        let (out_h, pad_top) = conv_output_dim(in_h, kh, stride, padding)?;
        let (out_w, pad_left) = conv_output_dim(in_w, kw, stride, padding)?;
        Ok(Self {
            in_h,
            in_w,
            cin,
            k: kh,
            cout,
            stride,
            out_h,
            out_w,
            pad_top,
            pad_left,
        })
    }

    #[inline]
    pub fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.stride + ky)
            .checked_sub(self.pad_top)
            .filter(|&r| r < self.in_h)
    }

    #[inline]
    pub fn input_col(&self, ox: usize, kx: usize) -> Option<usize> {
        (ox * self.stride + kx)
            .checked_sub(self.pad_left)
            .filter(|&c| c < self.in_w)
    }

    pub fn output_len(&self) -> usize {
        self.out_h * self.out_w * self.cout
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, n] = *a.shape() else {
        return Err(Error::Shape(format!("matmul lhs must be 2-D, got {:?}", a.shape())));
    };
    let [n2, p] = *b.shape() else {
        return Err(Error::Shape(format!("matmul rhs must be 2-D, got {:?}", b.shape())));
    };
    if n != n2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions disagree: {n} vs {n2}"
        )));
    }
    let mut out = vec![0.0; m * p];
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for k in 0..n {
            let aik = a.data[i * n + k];
            for (c, &bkj) in row.iter_mut().zip(&b.data[k * p..(k + 1) * p]) {
                *c += aik * bkj;
            }
        }
    }
    Tensor::new(vec![m, p], out)
}

/// Softmax along `axis`, with max-subtraction.
pub fn softmax_axis(x: &Tensor, axis: usize) -> Result<Tensor> {
    let (outer, dim, inner) = x.axis_extents(axis)?;
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |d: usize| (o * dim + d) * inner + i;
            let max = (0..dim).map(|d| x.data[idx(d)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for d in 0..dim {
                let e = (x.data[idx(d)] - max).exp();
                out[idx(d)] = e;
                sum += e;
            }
            for d in 0..dim {
                out[idx(d)] /= sum;
            }
        }
    }
    Tensor::new(x.shape.clone(), out)
}

/// Squash each capsule vector along `capsule_axis`:
/// `v = |s|^2 / (1 + |s|^2) * s / |s|`, with `v = 0` for `s = 0`.
pub fn squash(s: &Tensor, capsule_axis: usize) -> Result<Tensor> {
    let (outer, dim, inner) = s.axis_extents(capsule_axis)?;
    let mut out = vec![0.0; s.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |d: usize| (o * dim + d) * inner + i;
            let norm = (0..dim).map(|d| s.data[idx(d)].powi(2)).sum::<f64>().sqrt();
            let scale = squash_scale(norm);
            for d in 0..dim {
                out[idx(d)] = s.data[idx(d)] * scale;
            }
        }
    }
    Tensor::new(s.shape.clone(), out)
}

/// Factor `|s| / (1 + |s|^2)` that maps `s` to its squashed vector.
#[inline]
pub fn squash_scale(norm: f64) -> f64 {
    if norm == 0.0 {
        0.0
    } else {
        norm / (1.0 + norm * norm)
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_rejects_mismatched_length() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn conv_scalar_product() {
        let x = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let y = conv2d(&x, &k, 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn conv_sum_of_nine_ones() {
        let x = Tensor::full(&[3, 3, 1], 1.0);
        let k = Tensor::full(&[3, 3, 1, 1], 1.0);
        let y = conv2d(&x, &k, 1, Padding::Valid).unwrap();
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn conv_same_padding_shapes() {
        let x = Tensor::full(&[8, 8, 1], 1.0);
        let k = Tensor::full(&[3, 3, 1, 2], 1.0);
        let y = conv2d(&x, &k, 1, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[8, 8, 2]);
        // corner sees a 2x2 window, center a full 3x3 one
        assert_eq!(y.data()[0], 4.0);
        assert_eq!(y.data()[(3 * 8 + 3) * 2], 9.0);

        // even kernel: total pad 1 goes to bottom/right
        let (out, pad) = conv_output_dim(4, 2, 1, Padding::Same).unwrap();
        assert_eq!((out, pad), (4, 0));
        let (out, pad) = conv_output_dim(8, 3, 2, Padding::Same).unwrap();
        assert_eq!((out, pad), (4, 0));
    }

    #[test]
    fn conv_shape_errors() {
        let x = Tensor::full(&[2, 2, 1], 1.0);
        let k = Tensor::full(&[3, 3, 1, 1], 1.0);
        assert!(conv2d(&x, &k, 1, Padding::Valid).is_err());
        let k2 = Tensor::full(&[1, 1, 2, 1], 1.0);
        assert!(conv2d(&x, &k2, 1, Padding::Valid).is_err());
        assert!(conv2d(&x, &k2, 0, Padding::Valid).is_err());
    }

    #[test]
    fn matmul_examples() {
        let eye = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(vec![2, 2], vec![1.5, -2.0, 3.0, 4.25]).unwrap();
        assert_eq!(matmul(&eye, &m).unwrap(), m);

        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let ones = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        let c = matmul(&a, &ones).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);

        assert!(matmul(&a, &Tensor::zeros(&[3, 1])).is_err());
    }

    #[test]
    fn softmax_examples() {
        let y = softmax_axis(&Tensor::from_vec(vec![0.0, 0.0, 0.0]), 0).unwrap();
        for v in y.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let y = softmax_axis(&Tensor::from_vec(vec![1000.0, 0.0]), 0).unwrap();
        assert!(y.all_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1] < 1e-300);
        assert!(softmax_axis(&Tensor::from_vec(vec![1.0]), 1).is_err());
    }

    #[test]
    fn softmax_inner_axis() {
        let x = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 0.0, 0.0, 0.0]).unwrap();
        let y = softmax_axis(&x, 0).unwrap();
        for col in 0..3 {
            let s = y.data()[col] + y.data()[3 + col];
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn squash_examples() {
        let z = squash(&Tensor::from_vec(vec![0.0; 4]), 0).unwrap();
        assert_eq!(z.data(), &[0.0; 4]);

        let v = squash(&Tensor::from_vec(vec![0.6, 0.8]), 0).unwrap();
        let n = v.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 0.5).abs() < 1e-15);

        let v = squash(&Tensor::from_vec(vec![100.0, 0.0]), 0).unwrap();
        assert!((v.data()[0] - 10000.0 / 10001.0).abs() < 1e-15);
        assert_eq!(v.data()[1], 0.0);
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&Tensor::from_vec(vec![-1.0])).data(), &[0.0]);
        assert_eq!(relu(&Tensor::from_vec(vec![2.5])).data(), &[2.5]);
    }

    #[test]
    fn range_examples() {
        let r = range_of(&Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        assert_eq!((r.min, r.max, r.span()), (1.0, 3.0, 2.0));
        let r = range_of(&Tensor::full(&[4], 7.0)).unwrap();
        assert_eq!(r.span(), 0.0);
        assert!(Range::new(2.0, 1.0).is_err());
        assert!(matches!(range_of_values(&[]), Err(Error::EmptyTensor)));
    }
}
